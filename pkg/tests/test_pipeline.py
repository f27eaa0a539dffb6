import copy
import json

import numpy as np
import pytest

from koopdiff import numgraph as ng
from koopdiff.aggregator import build_pool, smooth
from koopdiff.benchsim import generate_demos, task_defaults
from koopdiff.benchsim.env import JOINT_RATE, env_reset
from koopdiff.diffusion import ddpm_loss
from koopdiff.koopman import AugmentConfig, augment_pair_batch, combine_dko, dko_predict
from koopdiff.pipeline import (
    ConfigError,
    InferState,
    PolicyBundle,
    TrainConfig,
    evaluate,
    infer_round,
    load_config,
    loss_terms,
    rollout,
    saliency_maps,
    train,
)
from koopdiff.pipeline.cli import main
from koopdiff.pipeline.infer import _slew
from koopdiff.pipeline.train import fit_normalizers

TINY = dict(encoder_hidden=(24, 16), denoiser_hidden=32, denoiser_depth=2, diffusion_steps=6, chunk_len=8,
            horizon=4, batch_size=32, checkpoint_every=1)


def tiny_cfg(**kw):
    return TrainConfig(**{**TINY, "epochs": 1, **kw})


@pytest.fixture(scope="module")
def demos():
    return generate_demos(task_defaults("latch_pull"), 2, seed=3)


@pytest.fixture(scope="module")
def tiny_policy(demos):
    bundle, _ = train(demos, tiny_cfg(epochs=2, seed=4))
    return bundle


# --- config -------------------------------------------------------------------


def test_defaults():
    c = TrainConfig()
    assert (c.epochs, c.chunk_len, c.horizon, c.diffusion_steps) == (200, 16, 4, 30)
    assert (c.switch_p, c.mu, c.lam, c.eta) == (0.6, 0.3, 1e-4, 0.97)


@pytest.mark.parametrize("kw", [dict(horizon=0), dict(horizon=17), dict(switch_p=1.5), dict(mu=-0.1),
                                dict(lam=0.0), dict(eta=0.0), dict(sg_window=4)])
def test_invalid_config(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_toml_config(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[train]\nepochs = 3\nencoder_hidden = [8, 8]\n\n[task]\ntask = "press_button"\n'
                 'x_range = [-0.2, 0.3]\ny_range = [0.35, 0.55]\n')
    train_cfg, task_cfg = load_config(p)
    assert train_cfg.epochs == 3 and train_cfg.encoder_hidden == (8, 8)
    assert task_cfg.task == "press_button"
    p.write_text("[train]\nepoch = 3\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("[train]\nhorizon = 40\n")
    with pytest.raises(ConfigError):
        load_config(p)


# --- training -----------------------------------------------------------------


def test_one_epoch_smoke(demos):
    bundle, log = train(demos, tiny_cfg())
    assert len(log.epochs) == 1
    assert all(np.isfinite(v) for k, v in log.epochs[0].items() if k != "epoch")


def test_switch_frequency_over_training(demos):
    _, log = train(demos, tiny_cfg(epochs=30, seed=1, augment=False))
    assert log.switch_draws >= 2500
    assert abs(log.u_frequency - 0.6) <= 0.03


def test_total_loss_recomputed_independently(demos):
    cfg = tiny_cfg(lam=0.37)
    q_norm, a_norm = fit_normalizers(demos)
    bundle = PolicyBundle.create(cfg, (32, 32), q_norm, a_norm)
    batch = demos.gather(demos.tuple_index()[:16], cfg.horizon, cfg.chunk_len)
    rng = np.random.default_rng(9)
    replay = copy.deepcopy(rng)
    losses, mask = loss_terms(bundle, batch, rng, AugmentConfig())

    m = bundle.model
    ft, wt, fn, wn, q, chunk = batch
    f_v = m.encoder(ft, wt).data
    f_n = m.encoder(fn, wn).data
    f_u = m.policy(f_v).data
    f_f = m.fusion(f_v, q_norm.encode(q)).data
    aft, afn = augment_pair_batch(ft, fn, AugmentConfig(), replay)
    awt, awn = augment_pair_batch(wt, wn, AugmentConfig(), replay)
    K, V = m.koopman.K.data, m.koopman.V.data
    t1 = np.mean((f_v @ K.T + f_u @ V.T - f_n) ** 2)
    t2 = np.mean((m.encoder(aft, awt).data @ K.T + f_u @ V.T - m.encoder(afn, awn).data) ** 2)
    dko = 0.3 * t1 + 0.7 * t2
    reg = np.sum(K**2) + np.sum(V**2)
    draws = replay.random(len(mask)) < 0.6
    np.testing.assert_array_equal(draws, mask)
    f_star = np.where(draws[:, None], f_u, f_f)
    ddpm, _, _ = ddpm_loss(f_star, a_norm.encode(chunk), m.denoiser, bundle.sched, replay)

    assert losses["dko"].item() == pytest.approx(dko, abs=1e-12)
    assert losses["reg"].item() == pytest.approx(reg, abs=1e-12)
    assert losses["ddpm"].item() == pytest.approx(ddpm.item(), abs=1e-12)
    assert losses["total"].item() == pytest.approx(ddpm.item() + dko + 0.37 * reg, abs=1e-12)


def test_training_deterministic(demos):
    a, _ = train(demos, tiny_cfg(seed=2))
    b, _ = train(demos, tiny_cfg(seed=2))
    c, _ = train(demos, tiny_cfg(seed=3))
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


def test_checkpoints_and_roundtrip(demos, tmp_path):
    bundle, _ = train(demos, tiny_cfg(epochs=2), out_dir=tmp_path)
    assert (tmp_path / "epoch_0001").is_dir() and (tmp_path / "epoch_0002").is_dir()
    back = PolicyBundle.load(tmp_path / "final")
    assert back.fingerprint() == bundle.fingerprint()
    raw = bytearray((tmp_path / "final" / "params.bin").read_bytes())
    raw[100] ^= 1
    (tmp_path / "final" / "params.bin").write_bytes(bytes(raw))
    with pytest.raises(ng.ChecksumError):
        PolicyBundle.load(tmp_path / "final")


def test_koopman_prediction_uses_model_operator(tiny_policy):
    m = tiny_policy.model
    f = np.random.default_rng(0).normal(size=(2, 64))
    np.testing.assert_allclose(dko_predict(f, f, m.koopman.K, m.koopman.V).data,
                               f @ m.koopman.K.data.T + f @ m.koopman.V.data.T, atol=1e-12)


# --- inference ----------------------------------------------------------------


def first_obs(cfg_kw=None):
    return env_reset(task_defaults("latch_pull", **(cfg_kw or {})), 0)[1]


def test_first_round_pool_is_fresh_chunks(tiny_policy):
    mem = InferState()
    r = infer_round(tiny_policy, first_obs(), mem, 0, np.random.default_rng(0))
    assert len(r.records) == 2 and {x.branch for x in r.records} == {"visual", "fused"}
    assert r.actions.shape == (4, 3)
    assert len(mem.trace) == 8  # 2 candidates x h steps
    assert all(row["birth_step"] == 0 for row in mem.trace)


def test_trace_rows_match_pool_counts(tiny_policy):
    mem = InferState()
    rng = np.random.default_rng(1)
    obs = first_obs()
    for t in (0, 4, 8):
        before = len(mem.trace)
        infer_round(tiny_policy, obs, mem, t, rng)
        expected = sum(len(s) for s in build_pool(list(mem.history), t, 4).steps)
        assert len(mem.trace) - before == expected
    assert expected == 2 * 2 * 4  # rounds born at 4 and 8 cover steps 8..11; the first was evicted


def test_identical_conditioning_gives_identical_chunks(tiny_policy):
    mem = InferState()
    r = infer_round(tiny_policy, first_obs(), mem, 0, np.random.default_rng(5), force_equal=True)
    np.testing.assert_array_equal(r.records[0].chunk, r.records[1].chunk)
    np.testing.assert_array_equal(r.raw, r.records[0].chunk[:4])
    obs = first_obs()
    np.testing.assert_array_equal(r.actions, _slew(smooth(r.raw, 7, 3), obs.q))


def test_visual_only_executes_visual_chunk(tiny_policy):
    mem = InferState()
    r = infer_round(tiny_policy, first_obs(), mem, 0, np.random.default_rng(2), variant="visual-only")
    np.testing.assert_array_equal(r.raw, r.records[0].chunk[:4])
    assert all(row["branch"] == "visual" for row in mem.trace)
    assert mem.history == []


def test_rollout_deterministic_and_continuous(tiny_policy):
    cfg = task_defaults("latch_pull", step_limit=24, init_mode="perturbed")
    a = rollout(tiny_policy, cfg, 7)
    b = rollout(tiny_policy, cfg, 7)
    assert np.array_equal(np.stack(a.actions), np.stack(b.actions))
    acts = np.stack(a.actions)
    q0 = env_reset(cfg, 7)[0].q
    steps = np.abs(np.diff(np.vstack([q0, acts[:, :2]]), axis=0))
    assert steps.max() <= JOINT_RATE + 1e-12
    assert len(a) == 24


def test_evaluate_rates_and_order_isolation(tiny_policy):
    small = dict(tasks=("latch_pull",), conditions=("fixed", "perturbed"), variants=("dual", "fused-only"), n=2)
    rep = evaluate(tiny_policy, master_seed=3, **small)
    assert len(rep.cells) == 4
    for c in rep.cells:
        assert c.rate * c.n == c.successes and c.n == 2
    seeds = {tuple(c.seeds) for c in rep.cells}
    assert len(seeds) == 1  # every cell uses the same initializations
    shuffled = evaluate(tiny_policy, master_seed=3, order=[3, 1, 0, 2], **small)
    assert shuffled.to_json() == rep.to_json()
    assert "success" in rep.to_table().splitlines()[0]


# --- saliency -----------------------------------------------------------------


def test_saliency_range_and_shape(tiny_policy):
    obs = first_obs()
    front, wrist = saliency_maps(tiny_policy.model.encoder, obs)
    for m in (front, wrist):
        assert m.shape == (32, 32)
        assert m.min() >= 0 and m.max() == pytest.approx(1.0)


def test_saliency_zero_encoder(tiny_policy):
    enc = copy.deepcopy(tiny_policy.model.encoder)
    enc.proj.weight.data[:] = 0.0
    enc.proj.bias.data[:] = 0.0
    front, wrist = saliency_maps(enc, first_obs())
    assert not front.any() and not wrist.any()


# --- CLI ----------------------------------------------------------------------


def test_cli_end_to_end(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[train]\n" + "\n".join(
        f"{k} = {json.dumps(list(v) if isinstance(v, tuple) else v)}" for k, v in {**TINY, "epochs": 1}.items()))
    demos = tmp_path / "demos"
    assert main(["gen-demos", "--task", "latch_pull", "--n", "2", "--seed", "1", "--out", str(demos)]) == 0
    assert main(["train", "--demos", str(demos), "--config", str(cfg), "--out", str(tmp_path / "pol")]) == 0
    policy = str(tmp_path / "pol" / "final")
    report = tmp_path / "rep.json"
    assert main(["eval", "--policy", policy, "--n", "1", "--variants", "dual", "--conditions", "fixed",
                 "--report", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["cells"][0]["n"] == 1 and report.with_suffix(".txt").exists()
    trace = tmp_path / "trace.csv"
    assert main(["rollout", "--policy", policy, "--seed", "2", "--trace", str(trace),
                 "--pool-trace", str(tmp_path / "pool.csv")]) == 0
    assert trace.read_text().startswith("step,")
    assert (tmp_path / "pool.csv").read_text().startswith("t,branch")
    out = tmp_path / "sal.npz"
    assert main(["saliency", "--policy", policy, "--out", str(out)]) == 0
    assert np.load(out)["front"].shape == (32, 32)


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[train]\nswitch_p = 2.0\n")
    assert main(["train", "--demos", str(tmp_path), "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["eval", "--policy", str(tmp_path / "missing"), "--report", str(tmp_path / "r.json")]) == 2


def test_cli_numerical_failure_exit_code(tmp_path, monkeypatch, demos):
    from koopdiff.pipeline import cli
    from koopdiff.pipeline.train import TrainingDiverged

    demos.save(tmp_path / "d")

    def boom(*a, **k):
        raise TrainingDiverged("epoch 0 batch 0: non-finite loss nan")

    monkeypatch.setattr(cli, "train", boom)
    assert main(["train", "--demos", str(tmp_path / "d"), "--out", str(tmp_path / "p")]) == 3
