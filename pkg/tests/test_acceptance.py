"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line (printed in the terminal summary by
conftest) before asserting, so a failing criterion still reports its numbers.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from teleop_informer import channel as ch
from teleop_informer import experiment as ex
from teleop_informer.attention import (full_attention, position_weighted_metric, probsparse_attention,
                                       sparsity_metric, top_u)
from teleop_informer.checks import TINY_MODEL, check_model, check_primitives, tiny_batch
from teleop_informer.model import InformerModel, ModelConfig
from teleop_informer.objective import (ConstraintLimits, ObjectiveConfig, constraint_check, penalty_loss,
                                       position_loss, robustness_term, total_loss)
from teleop_informer.sweep import run_sweep
from teleop_informer.training import TrainConfig, train
from teleop_informer.trajectory import (N_COLUMNS, NetworkFeatures, SyntheticSpec, WindowSpec,
                                        generate_synthetic_trial, read_jigsaws_file)

JIGSAWS_ENV = "TELEOP_JIGSAWS_DIR"


def _verdict(record, number, ok, detail):
    record(number, bool(ok), detail)
    assert ok, detail


def test_criterion_01_channel_statistics(record):
    t0 = time.perf_counter()
    worst_rate, worst_burst = 0.0, 0.0
    for params in ch.severity_params(seed=2024):
        states, mask = ch.simulate_mask(params, 10 ** 6)
        stats = ch.channel_stats(states)
        worst_rate = max(worst_rate, abs(stats["loss_rate"] - params.expected_loss_rate()))
        worst_burst = max(worst_burst, abs(stats["mean_burst_period"] / params.mean_burst_length - 1))
    elapsed = time.perf_counter() - t0
    ok = worst_rate <= 0.005 and worst_burst <= 0.03 and elapsed < 10
    _verdict(record, 1, ok, f"max |rate err| {worst_rate:.4f} (<=0.005), max burst-length err "
                            f"{100 * worst_burst:.2f}% (<=3%), {elapsed:.1f} s (<10 s)")


def test_criterion_02_stationary_oracle(record):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        T = rng.uniform(0.01, 1.0, (4, 4))
        T /= T.sum(axis=1, keepdims=True)
        worst = max(worst, np.abs(ch.stationary_distribution(T) - ch.power_iteration_stationary(T)).max())
    elapsed = time.perf_counter() - t0
    _verdict(record, 2, worst <= 1e-8 and elapsed < 5,
             f"max |power - solve| {worst:.1e} (<=1e-8), {elapsed:.2f} s (<5 s)")


def _sampled_macs(L, d=8):
    from teleop_informer import autograd as ag
    rng = np.random.default_rng(L)
    Q, K, V = (rng.standard_normal((L, d)) for _ in range(3))
    with ag.count_macs() as counter:
        probsparse_attention(Q, K, V, c=5.0, mode="sampled", rng=rng)
    return counter.macs


def test_criterion_03_attention_oracle(record):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        L, d = int(rng.integers(2, 65)), int(rng.integers(1, 17))
        Q, K, V = (rng.standard_normal((L, d)) for _ in range(3))
        out, idx = probsparse_attention(Q, K, V, c=(1.0, 5.0)[seed % 2], return_index=True)
        worst = max(worst, np.abs(out.data[idx] - full_attention(Q, K, V).data[idx]).max())
    Ls = [128, 256, 512, 1024, 2048, 4096]
    slope = np.polyfit(np.log(Ls), np.log([_sampled_macs(L) for L in Ls]), 1)[0]
    elapsed = time.perf_counter() - t0
    _verdict(record, 3, worst <= 1e-12 and slope < 1.3 and elapsed < 60,
             f"max selected-row err {worst:.1e} (<=1e-12), MAC log-log slope {slope:.3f} (<1.3), "
             f"{elapsed:.1f} s (<60 s)")


def test_criterion_04_sparsity_bound_and_weighting(record):
    rng = np.random.default_rng(4)
    bound_ok, equality_ok = True, True
    for i in range(1000):
        L = int(rng.integers(1, 129))
        s = np.full(L, rng.normal()) if i % 10 == 0 else rng.standard_normal(L) * rng.uniform(0.1, 3)
        M = float(np.log(np.exp(s - s.max()).sum()) + s.max() - s.mean())
        bound_ok &= M >= math.log(L) - 1e-9
        constant = bool(np.all(s == s[0]))
        equality_ok &= (abs(M - math.log(L)) <= 1e-9) == constant
    # the library metric agrees with the closed form on a Q K^T instance
    Q, K = rng.standard_normal((6, 4)), rng.standard_normal((9, 4))
    scores = Q @ K.T / 2.0
    ref = np.log(np.exp(scores).sum(axis=1)) - scores.mean(axis=1)
    metric_ok = np.allclose(sparsity_metric(Q, K), ref, atol=1e-12)
    order_ok = True
    for _ in range(100):
        L = int(rng.integers(2, 65))
        M = rng.standard_normal(L)
        A = rng.standard_normal((3, 3))
        W, e, lam = A @ A.T, rng.standard_normal(3), float(rng.uniform(0, 10))
        out = position_weighted_metric(M, e, W, lam)
        u = max(1, L // 4)
        order_ok &= (np.array_equal(np.argsort(out, kind="stable"), np.argsort(M, kind="stable"))
                     and np.array_equal(top_u(out, u=u), top_u(M, u=u)))
    _verdict(record, 4, bound_ok and equality_ok and metric_ok and order_ok,
             f"bound {bound_ok}, equality iff constant {equality_ok}, metric {metric_ok}, "
             f"argsort invariance {order_ok} (1000 rows, 100 weightings)")


def test_criterion_05_gradient_verification(record):
    t0 = time.perf_counter()
    prim = check_primitives()
    worst_name = max(prim, key=prim.get)
    model_err = check_model(InformerModel(ModelConfig(**TINY_MODEL)))
    elapsed = time.perf_counter() - t0
    _verdict(record, 5, prim[worst_name] < 1e-4 and model_err < 1e-3 and elapsed < 120,
             f"{len(prim)} primitives max err {prim[worst_name]:.1e} ({worst_name}, <1e-4), "
             f"tiny Informer {model_err:.1e} (<1e-3), {elapsed:.1f} s (<120 s)")


def test_criterion_06_structure(record):
    schedule = ModelConfig().layer_lengths()
    cfg = ModelConfig(**TINY_MODEL)
    model = InformerModel(cfg)
    prng = np.random.default_rng(100)
    for p in model.params.values():
        p.data = p.data + 0.2 * prng.standard_normal(p.shape)
    enc, dec, _ = tiny_batch(cfg.L_x, cfg.L_token, cfg.L_y)
    base = model.forward(enc, dec).data
    leak = 0.0
    for j in range(cfg.L_y):
        moved = dec.copy()
        moved[:, cfg.L_token + j, :] += 3.0
        leak = max(leak, np.abs(model.forward(enc, moved).data[:, :j] - base[:, :j]).max(initial=0.0))

    ws = WindowSpec(L_x=16, L_token=8, L_y=4, stride=8)
    data_cfg = ex.DataConfig(n_trials=3, duration_s=20.0, n_val=1, n_test=1, window=ws)
    tr, va, _ = ex.build_splits(data_cfg, ch.severity_params(0)[0])

    def run():
        m = InformerModel(ModelConfig(**{**TINY_MODEL, "attention_mode": "sampled"}))
        return train(m, tr, va, ObjectiveConfig.plain(), TrainConfig(epochs=2, seed=7)).history

    h1, h2 = run(), run()
    _verdict(record, 6, schedule == [96, 48, 24] and leak <= 1e-12 and h1 == h2,
             f"distilling {schedule}, decoder causality leak {leak:.1e} (<=1e-12), "
             f"history bit-exact {h1 == h2} over {len(h1)} epochs")


def test_criterion_07_objective_reductions(record):
    rng = np.random.default_rng(7)
    pred, target = rng.standard_normal((3, 6, 3)), rng.standard_normal((3, 6, 3))
    out = total_loss(pred, target, ObjectiveConfig.plain(), 1 / 30, network=np.ones((3, 6, 3)),
                     reconstruction=pred, encoder_clean=target)
    reduces = out.total.data.tobytes() == position_loss(pred, target).data.tobytes()

    limits = ConstraintLimits()
    outcomes = []
    for seed in range(8):
        spec = SyntheticSpec(amplitude=0.03 * (1 + 3 * (seed % 4)), v_max=0.1 * (1 + seed % 4),
                             a_max=0.5 * (1 + seed % 4))
        trial = generate_synthetic_trial(2.0, spec=spec, seed=seed)
        g = trial.gripper if seed % 2 else None
        pen = float(penalty_loss(trial.positions, limits, gripper=g).data)
        passed = constraint_check(trial.positions, limits, gripper=g).all_pass
        outcomes.append(((pen == 0.0) == passed, passed))
    iff = all(a for a, _ in outcomes)
    phi = robustness_term(NetworkFeatures.constant(5, 0.1, 20.0, 5.0), 1.0, 0.01, 0.02)
    n_pass = sum(p for _, p in outcomes)
    _verdict(record, 7, reduces and iff and phi == 0.4,
             f"zero weights bit-exact {reduces}, penalty=0 <=> all-pass {iff} "
             f"({n_pass} feasible / {len(outcomes) - n_pass} infeasible fixtures), Phi = {phi!r}")


@pytest.mark.slow
def test_criterion_08_desk_experiment(record):
    t0 = time.perf_counter()
    results = ex.compare_models(ch.severity_params(0)[0])
    elapsed = time.perf_counter() - t0
    inf = results["informer"].report
    others = {k: e.report.meters.mse for k, e in results.items() if k != "informer"}
    beats = all(inf.meters.mse < v for v in others.values())
    hold_acc = results["zero-order-hold"].report.accuracy
    acc_ok = all(a > b for a, b in zip(inf.accuracy, hold_acc))
    table = ", ".join(f"{k} {v:.3e}" for k, v in others.items())
    _verdict(record, 8, beats and acc_ok and elapsed < 900,
             f"Informer MSE {inf.meters.mse:.3e} vs {table}; accuracy "
             f"{[round(a, 2) for a in inf.accuracy]} vs hold {[round(a, 2) for a in hold_acc]}; "
             f"{elapsed:.0f} s (<900 s)")


@pytest.mark.slow
def test_criterion_09_degradation_trend(record):
    grid = ch.severity_params(seed=0)
    rows = run_sweep(grid, ex.DESK_DATA, ModelConfig(**ex.DESK_MODEL), TrainConfig(**ex.DESK_TRAIN))
    mild, harsh = rows[0].mse, rows[-1].mse
    # direction-only: harsh may fall at most 10% below mild before the trend counts as reversed
    ok = all(r.ok for r in rows) and harsh >= 0.9 * mild
    _verdict(record, 9, ok, f"harsh MSE {harsh:.3e} vs mild {mild:.3e} (ratio {harsh / mild:.2f}, >=0.90); "
                            f"all rows {[f'{r.mse:.2e}' for r in rows]}")


def test_criterion_10_jigsaws_ingest(record):
    root = os.environ.get(JIGSAWS_ENV)
    if not root:
        record(10, None, f"skipped: set {JIGSAWS_ENV} to a JIGSAWS directory to run")
        pytest.skip(f"{JIGSAWS_ENV} not set")
    files = sorted(p for p in Path(root).rglob("Knot_Tying*.txt") if "kinematics" in str(p).lower())
    trials = [read_jigsaws_file(p) for p in files]
    widths = {len(line.split()) for p in files for line in p.read_text().splitlines() if line.strip()}
    ws = WindowSpec(L_x=16, L_token=8, L_y=4, stride=16)
    data_cfg = ex.DataConfig(n_trials=len(trials), n_val=1, n_test=1, window=ws)
    tr, va, te = ex.build_splits(data_cfg, ch.severity_params(0)[0], trials)
    model = InformerModel(ModelConfig(**TINY_MODEL))
    train(model, tr, va, config=TrainConfig(epochs=1))
    report, _ = ex.evaluate(model, te)
    ok = len(files) > 0 and widths == {N_COLUMNS} and np.isfinite(report.meters.mse)
    _verdict(record, 10, ok, f"{len(files)} knot-tying files, column widths {sorted(widths)}, "
                             f"pipeline test MSE {report.meters.mse:.3e}")
