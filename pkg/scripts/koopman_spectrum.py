"""Eigenvalues of a trained Koopman operator K, plotted against the unit circle.

    python scripts/koopman_spectrum.py --policy runs/final --out spectrum.png
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from koopdiff.koopman import read_operator_csv
from koopdiff.pipeline import PolicyBundle


def main():
    p = argparse.ArgumentParser(description=__doc__)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--policy", help="policy bundle directory")
    src.add_argument("--operator-csv", help="CSV written by KoopmanOperator.to_csv")
    p.add_argument("--out", default="koopman_spectrum.png")
    args = p.parse_args()

    if args.policy:
        K = PolicyBundle.load(args.policy).model.koopman.K.data
    else:
        K = read_operator_csv(args.operator_csv)["K"]
    eig = np.linalg.eigvals(K)
    print(f"spectral radius {np.max(np.abs(eig)):.4f}; {np.sum(np.abs(eig) > 1)} of {len(eig)} eigenvalues outside the unit circle")

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    theta = np.linspace(0, 2 * np.pi, 400)
    ax.plot(np.cos(theta), np.sin(theta), color="0.6", lw=1)
    ax.scatter(eig.real, eig.imag, s=12)
    ax.set_aspect("equal")
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    ax.set_title("eigenvalues of K")
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)


if __name__ == "__main__":
    main()
