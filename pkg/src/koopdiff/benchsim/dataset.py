"""Demonstration episodes, training-tuple indexing, and the on-disk format.

Episode file: a little-endian uint32 header length, a UTF-8 JSON header, then
the arrays listed in the header as raw ``<f8`` blocks in order. ``index.json``
lists every episode file with its SHA-256.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..numgraph import ChecksumError, ContractError
from .env import TaskConfig, env_reset, env_step
from .expert import UnreachableTarget, scripted_expert

log = logging.getLogger(__name__)

BLOCKS = ("front", "wrist", "q", "actions")


@dataclass
class Episode:
    task: str
    seed: int
    front: np.ndarray  # (T, H, W), observation before each action
    wrist: np.ndarray
    q: np.ndarray  # (T, q_dim)
    actions: np.ndarray  # (T, d)
    success: bool = True

    def __len__(self):
        return len(self.actions)


class GenerationError(RuntimeError):
    pass


def run_expert_episode(cfg: TaskConfig, seed: int) -> Episode:
    state, obs = env_reset(cfg, seed)
    rng = np.random.default_rng([seed, 1])
    fronts, wrists, qs, acts = [], [], [], []
    done = False
    while not done:
        a = scripted_expert(state, cfg, rng)
        fronts.append(obs.front_image)
        wrists.append(obs.wrist_image)
        qs.append(obs.q)
        acts.append(a)
        state, obs, done, _ = env_step(state, a, cfg)
    return Episode(cfg.task, seed, np.stack(fronts), np.stack(wrists), np.stack(qs), np.stack(acts), state.success)


class DemoDataset:
    def __init__(self, episodes: list, cfg: TaskConfig):
        self.episodes = list(episodes)
        self.cfg = cfg

    def __len__(self):
        return len(self.episodes)

    def tuple_index(self) -> np.ndarray:
        """Every (episode, t) pair, one per recorded step."""
        return np.array([(e, t) for e, ep in enumerate(self.episodes) for t in range(len(ep))], dtype=np.int64)

    def gather(self, index: np.ndarray, h: int, l: int):
        """Training tuples (front_t, wrist_t, front_{t+h}, wrist_{t+h}, q_t, chunk_t).

        Indices past the episode end repeat the final observation or action.
        """
        ft, wt, fn, wn, qs, chunks = [], [], [], [], [], []
        for e, t in np.asarray(index):
            ep = self.episodes[int(e)]
            last = len(ep) - 1
            tn = min(int(t) + h, last)
            rows = np.minimum(np.arange(int(t), int(t) + l), last)
            ft.append(ep.front[t])
            wt.append(ep.wrist[t])
            fn.append(ep.front[tn])
            wn.append(ep.wrist[tn])
            qs.append(ep.q[t])
            chunks.append(ep.actions[rows])
        return tuple(np.stack(x) for x in (ft, wt, fn, wn, qs, chunks))

    # --- persistence ---------------------------------------------------------

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        entries = []
        for i, ep in enumerate(self.episodes):
            name = f"episode_{i:05d}.bin"
            write_episode(out / name, ep)
            digest = hashlib.sha256((out / name).read_bytes()).hexdigest()
            entries.append({"file": name, "seed": ep.seed, "length": len(ep), "sha256": digest})
        index = {"version": 1, "task_config": _cfg_json(self.cfg), "episodes": entries}
        (out / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))
        return out

    @classmethod
    def load(cls, in_dir) -> "DemoDataset":
        src = Path(in_dir)
        index = json.loads((src / "index.json").read_text())
        episodes = []
        for entry in index["episodes"]:
            blob = (src / entry["file"]).read_bytes()
            if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
                raise ChecksumError(f"checksum mismatch for {entry['file']}")
            episodes.append(decode_episode(blob))
        cfg_fields = index["task_config"]
        cfg = TaskConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg_fields.items()})
        return cls(episodes, cfg)


def _cfg_json(cfg: TaskConfig) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}


def write_episode(path, ep: Episode) -> None:
    arrays = {"front": ep.front, "wrist": ep.wrist, "q": ep.q, "actions": ep.actions}
    header = {
        "task": ep.task,
        "seed": ep.seed,
        "length": len(ep),
        "success": bool(ep.success),
        "blocks": [{"name": k, "shape": list(arrays[k].shape)} for k in BLOCKS],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        for k in BLOCKS:
            fh.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())


def decode_episode(blob: bytes) -> Episode:
    (n,) = struct.unpack_from("<I", blob, 0)
    header = json.loads(blob[4:4 + n].decode())
    pos = 4 + n
    arrays = {}
    for b in header["blocks"]:
        count = int(np.prod(b["shape"]))
        arrays[b["name"]] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(b["shape"]).astype(np.float64)
        pos += 8 * count
    if pos != len(blob):
        raise ChecksumError(f"episode payload has {len(blob) - pos} trailing bytes")
    return Episode(header["task"], header["seed"], arrays["front"], arrays["wrist"], arrays["q"], arrays["actions"],
                   header["success"])


def generate_demos(cfg: TaskConfig, n: int = 80, seed: int = 0, out_dir=None) -> DemoDataset:
    """Collect ``n`` successful expert episodes; failures are replaced with fresh seeds."""
    if n < 1:
        raise ContractError(f"generate_demos: n must be >= 1, got {n}")
    episodes, failures = [], []
    attempt = 0
    while len(episodes) < n:
        if attempt >= 10 * n:
            raise GenerationError(
                f"only {len(episodes)}/{n} successful demos after {attempt} attempts; failing seeds {failures[:10]}"
            )
        ep_seed = int(np.random.default_rng([seed, attempt]).integers(2**31))
        attempt += 1
        try:
            ep = run_expert_episode(cfg, ep_seed)
        except UnreachableTarget as exc:
            failures.append(ep_seed)
            log.info("demo seed %d invalid: %s", ep_seed, exc)
            continue
        if ep.success:
            episodes.append(ep)
        else:
            failures.append(ep_seed)
    if failures:
        log.info("generate_demos: regenerated %d failed episodes", len(failures))
    ds = DemoDataset(episodes, cfg)
    if out_dir is not None:
        ds.save(out_dir)
    return ds
