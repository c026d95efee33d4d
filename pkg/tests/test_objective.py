import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from teleop_informer.autograd import grad_check
from teleop_informer.errors import NonFiniteError, ParameterError, ShapeError
from teleop_informer.objective import (CONSTRAINTS, ConstraintLimits, ObjectiveConfig, ObjectiveWeights,
                                       constraint_check, encoder_aux_loss, energy_term, penalty_loss,
                                       position_loss, robustness_term, smoothness_term, total_loss)
from teleop_informer.trajectory import NetworkFeatures, SyntheticSpec, generate_synthetic_trial

DT = 1.0 / 30.0


def test_position_loss_examples(rng):
    p = rng.standard_normal((5, 3))
    assert float(position_loss(p, p).data) == 0.0
    assert float(position_loss(p + [1.0, 0, 0], p).data) == pytest.approx(1.0, abs=1e-12)
    q = rng.standard_normal((5, 3))
    brute = sum(sum((p[t, i] - q[t, i]) ** 2 for i in range(3)) for t in range(5)) / 5
    assert float(position_loss(p, q).data) == pytest.approx(brute, abs=1e-12)
    with pytest.raises(ShapeError):
        position_loss(p, q[:4])


def test_energy_examples():
    assert float(energy_term(np.ones((6, 3)), DT, 1.0).data) == 0.0
    p = np.zeros((6, 3))
    p[:, 0] = 0.1 * np.arange(6)
    assert float(energy_term(p, DT, 1.0).data) == pytest.approx(9.0, rel=1e-12)
    with pytest.raises(ShapeError):
        energy_term(np.zeros((1, 3)), DT, 1.0)


def test_energy_angular_part_needs_data(rng):
    p = rng.standard_normal((6, 3))
    omega = np.ones((6, 3))
    base = float(energy_term(p, DT, 1.0, lambda_omega=2.0).data)
    assert base == float(energy_term(p, DT, 1.0).data)
    assert float(energy_term(p, DT, 1.0, 2.0, omega).data) == pytest.approx(base + 6.0, rel=1e-12)


def test_smoothness_examples():
    t = np.arange(8) * DT
    linear = np.outer(t, [0.1, -0.2, 0.3])
    assert float(smoothness_term(linear, DT).data) == pytest.approx(0.0, abs=1e-18)
    k = 0.7
    quad = np.tile(0.5 * k * t[:, None] ** 2, (1, 3))
    assert float(smoothness_term(quad, DT).data) == pytest.approx(3 * k * k, rel=1e-8)
    with pytest.raises(ShapeError):
        smoothness_term(np.zeros((2, 3)), DT)


def test_term_gradients():
    assert grad_check(lambda p: energy_term(p, DT, 1.0), [(6, 3)]) < 1e-6
    assert grad_check(lambda p: smoothness_term(p, DT), [(6, 3)]) < 1e-6
    assert grad_check(lambda p, q: position_loss(p, q), [(5, 3), (5, 3)]) < 1e-6


def test_robustness_examples():
    net = NetworkFeatures.constant(20, 0.1, 20.0, 5.0)
    assert robustness_term(net, 0.0, 0.0, 0.0) == 0.0
    assert robustness_term(net, 1.0, 0.01, 0.02) == 0.4
    assert robustness_term(NetworkFeatures.constant(7, 0.1, 20.0, 5.0), 1.0, 0.01, 0.02) == 0.4


@given(arrays(float, (6, 3), elements=st.floats(0, 1)), st.floats(0, 5), st.floats(0, 1), st.floats(0, 1))
def test_robustness_linear_in_each_weight(feats, e1, e2, e3):
    phi = lambda a: robustness_term(feats, a, e2, e3)
    assert phi(2 * e1) - phi(0) == pytest.approx(2 * (phi(e1) - phi(0)), abs=1e-12)


def test_encoder_aux_examples(rng):
    clean = rng.standard_normal((2, 8, 3))
    assert float(encoder_aux_loss(clean, clean).data) == 0.0
    assert float(encoder_aux_loss(clean, clean, gamma_2=1.0, latency=np.full(8, 10.0)).data) == 10.0
    with pytest.raises(ShapeError):
        encoder_aux_loss(clean[:, :4], clean)


def test_encoder_aux_gradient_through_encoder():
    from teleop_informer.checks import TINY_MODEL, tiny_batch
    from teleop_informer.model import InformerModel, ModelConfig
    model = InformerModel(ModelConfig(**TINY_MODEL))
    enc, _, _ = tiny_batch(16, 8, 4)
    clean = np.random.default_rng(0).standard_normal((2, 16, 3))
    names = ["embed.weight", "enc0.attn.q.weight", "aux.weight"]

    def fn(*leaves):
        for k, t in zip(names, leaves):
            model.params[k] = t
        latent = model.encoder_forward(model.embed(enc))
        return encoder_aux_loss(model.reconstruct_encoder_span(latent), clean, gamma_1=0.1)

    originals = {k: model.params[k] for k in names}
    rng = np.random.default_rng(1)
    try:
        err = grad_check(fn, inputs=[originals[k].data + 0.1 * rng.standard_normal(originals[k].shape)
                                     for k in names])
    finally:
        model.params.update(originals)
    assert err < 1e-3


def test_total_reduces_to_position_loss(rng):
    pred, target = rng.standard_normal((3, 6, 3)), rng.standard_normal((3, 6, 3))
    out = total_loss(pred, target, ObjectiveConfig.plain(), DT,
                     network=np.ones((3, 6, 3)), reconstruction=pred, encoder_clean=target)
    assert out.total.data.tobytes() == position_loss(pred, target).data.tobytes()
    assert all(out.terms[k] == 0.0 for k in out.terms if k != "position")


def test_total_breakdown_sums_and_scales(rng):
    pred, target = rng.standard_normal((2, 6, 3)) * 0.01, rng.standard_normal((2, 6, 3)) * 0.01
    net = np.tile([0.1, 20.0, 5.0], (2, 6, 1))

    def run(alpha):
        w = ObjectiveWeights(alpha=alpha, beta=0.5, gamma_1=1e-3, delta_1=0.02, encoder=0.3, gamma_2=0.01)
        cfg = ObjectiveConfig(weights=w, penalty_weights={"velocity": 1.0, "sync": 2.0})
        return total_loss(pred, target, cfg, DT, network=net, reconstruction=pred, encoder_clean=target,
                          encoder_latency=np.full((2, 6), 20.0))

    a, b = run(0.1), run(0.2)
    assert math.fsum(a.terms.values()) == pytest.approx(float(a.total.data), abs=1e-12)
    assert b.terms["energy"] == pytest.approx(2 * a.terms["energy"], rel=1e-12)
    assert a.terms["robustness"] == pytest.approx(0.5 * 0.4, abs=1e-15)


def test_total_rejects_non_finite():
    pred = np.zeros((4, 3))
    pred[1, 0] = np.inf
    with pytest.raises(NonFiniteError, match="position"):
        total_loss(pred, np.zeros((4, 3)), ObjectiveConfig.plain(), DT)


def test_weights_and_limits_validated():
    with pytest.raises(ParameterError):
        ObjectiveWeights(alpha=-1.0)
    with pytest.raises(ParameterError):
        ConstraintLimits(p_min=(0, 0, 1), p_max=(0, 0, 0))
    with pytest.raises(ParameterError):
        ConstraintLimits(v_max=0.0)


def test_penalty_zero_inside_bounds():
    p = np.tile([0.01, 0.0, -0.01], (6, 1))
    assert float(penalty_loss(p, ConstraintLimits()).data) == 0.0


def test_penalty_single_sync_step():
    limits = ConstraintLimits(eps_sync=0.01, v_max=100.0, a_max=1e6, E_max=1e9)
    p = np.zeros((3, 3))
    p[2, 0] = 0.11
    weights = {name: 0.0 for name in CONSTRAINTS}
    weights["sync"] = 1.0
    # two sync entries, one of them violated by 0.1
    assert float(penalty_loss(p, limits, weights).data) == pytest.approx(0.1 ** 2 / 2, rel=1e-12)


def test_penalty_gradient_away_from_kink(rng):
    limits = ConstraintLimits(eps_sync=0.01, v_max=0.5, a_max=5.0, E_max=0.5, p_min=(-0.1,) * 3,
                              p_max=(0.1,) * 3)
    p0 = rng.uniform(-0.2, 0.2, (5, 3))
    assert grad_check(lambda p: penalty_loss(p, limits), inputs=[p0], step=1e-7) < 1e-6


def test_constraint_check_feasible_synthetic():
    spec = SyntheticSpec()
    trial = generate_synthetic_trial(20.0, spec=spec, seed=3)
    limits = ConstraintLimits(eps_sync=spec.v_max * DT, v_max=spec.v_max, a_max=spec.a_max,
                              p_min=(-0.1,) * 3, p_max=(0.1,) * 3, E_max=1e6)
    report = constraint_check(trial.positions, limits, gripper=trial.gripper)
    assert report.all_pass, report.to_dict()
    assert report["angular_velocity"].status == "skipped"


def test_constraint_check_velocity_spike():
    limits = ConstraintLimits()
    p = np.zeros((8, 3))
    p[5:, 0] = 2 * limits.v_max * DT
    report = constraint_check(p, limits)
    assert report["velocity"].status == "fail"
    assert report["velocity"].time_index == 5
    assert report["velocity"].worst_violation == pytest.approx(limits.v_max, rel=1e-12)


def test_constraint_check_boundary_inclusive():
    limits = ConstraintLimits()
    p = np.tile(limits.p_max, (4, 1)).astype(float)
    report = constraint_check(p, limits)
    assert report["workspace"].status == "pass"
    assert report["gripper"].status == "skipped"


@pytest.mark.parametrize("seed", range(8))
def test_penalty_zero_iff_all_pass(seed):
    limits = ConstraintLimits()
    spec = SyntheticSpec(amplitude=0.03 * (1 + 3 * (seed % 4)), v_max=0.1 * (1 + seed % 4),
                         a_max=0.5 * (1 + seed % 4))
    trial = generate_synthetic_trial(2.0, spec=spec, seed=seed)
    g = trial.gripper if seed % 2 else None
    pen = float(penalty_loss(trial.positions, limits, gripper=g).data)
    assert (pen == 0.0) == constraint_check(trial.positions, limits, gripper=g).all_pass
