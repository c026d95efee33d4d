"""Training objective and hard feasibility checks for predicted trajectories.

Trajectories are ``(..., T, 3)`` meter-space positions sampled every ``dt``
seconds.  Velocities and accelerations are first and second finite
differences of the positions.  Differentiable terms accept autograd
Tensors; ``constraint_check`` works on plain arrays.

Total loss::

    L = L_pos + alpha*E + gamma_1*S + beta*Phi + delta_1*E + nu*L_enc + penalties

with ``L_enc = ||X_rec - X_clean||^2 + gamma_1*S(X_rec) + gamma_2*latency``.
Phi (ms and loss fractions) and the latency penalty do not depend on the
prediction; during training they are input-dependent offsets.  Their units
are not commensurate with squared meters, so the eta/gamma_2 weights have to
absorb the scale.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor, as_tensor
from .errors import NonFiniteError, ParameterError, ShapeError

CONSTRAINTS = ("sync", "workspace", "velocity", "angular_velocity", "acceleration", "gripper", "energy")


@dataclass(frozen=True)
class ObjectiveWeights:
    alpha: float = 0.0        # energy
    beta: float = 0.0         # robustness
    gamma_1: float = 0.0      # smoothness
    delta_1: float = 0.0      # decoder energy penalty
    lambda_v: float = 1.0
    lambda_omega: float = 0.0
    eta_1: float = 1.0
    eta_2: float = 0.01
    eta_3: float = 0.02
    gamma_2: float = 0.0      # latency penalty
    encoder: float = 0.0      # weight of the encoder auxiliary loss

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise ParameterError(f"weight {k} must be finite and nonnegative, got {v}")


@dataclass(frozen=True)
class ConstraintLimits:
    eps_sync: float = 0.01
    p_min: tuple = (-0.25, -0.25, -0.25)
    p_max: tuple = (0.25, 0.25, 0.25)
    v_max: float = 0.2
    omega_max: float = 3.0
    a_max: float = 1.0
    gamma_min: float = -0.2
    gamma_max: float = 1.6
    E_max: float = 1.0
    dt: float = 1.0 / 30.0

    def __post_init__(self):
        if len(self.p_min) != 3 or len(self.p_max) != 3:
            raise ParameterError("p_min and p_max must be 3-vectors")
        if any(lo > hi for lo, hi in zip(self.p_min, self.p_max)):
            raise ParameterError("p_min must not exceed p_max componentwise")
        for name in ("eps_sync", "v_max", "omega_max", "a_max", "E_max", "dt"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.gamma_min > self.gamma_max:
            raise ParameterError("gamma_min must not exceed gamma_max")


@dataclass(frozen=True)
class ObjectiveConfig:
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    limits: ConstraintLimits = field(default_factory=ConstraintLimits)
    penalty_weights: dict = field(default_factory=dict)   # constraint name -> weight

    @classmethod
    def plain(cls) -> "ObjectiveConfig":
        """Position loss only."""
        return cls()

    def to_dict(self) -> dict:
        return {"weights": asdict(self.weights), "limits": asdict(self.limits),
                "penalty_weights": dict(self.penalty_weights)}

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectiveConfig":
        lim = dict(d.get("limits", {}))
        for k in ("p_min", "p_max"):
            if k in lim:
                lim[k] = tuple(lim[k])
        return cls(ObjectiveWeights(**d.get("weights", {})), ConstraintLimits(**lim),
                   dict(d.get("penalty_weights", {})))


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------

def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def position_loss(pred, target) -> Tensor:
    """Mean over steps (and batch) of the squared Euclidean error."""
    pred, target = as_tensor(pred), as_tensor(target)
    _check_same(pred, target, "position_loss")
    diff = pred - target
    steps = diff.data.size // diff.shape[-1]
    return ag.sum_of_squares(diff) * (1.0 / steps)


def velocities(p, dt: float) -> Tensor:
    p = as_tensor(p)
    return (p[..., 1:, :] - p[..., :-1, :]) * (1.0 / dt)


def accelerations(p, dt: float) -> Tensor:
    p = as_tensor(p)
    return (p[..., 2:, :] - p[..., 1:-1, :] * 2.0 + p[..., :-2, :]) * (1.0 / (dt * dt))


def _mean_sq_norm(x: Tensor) -> Tensor:
    steps = x.data.size // x.shape[-1]
    return ag.sum_of_squares(x) * (1.0 / steps)


def energy_term(pred, dt: float, lambda_v: float, lambda_omega: float = 0.0, omega=None) -> Tensor:
    """E = lambda_v * mean ||v||^2 + lambda_omega * mean ||omega||^2.

    The angular part needs supplied angular velocities; without them
    lambda_omega is treated as 0.
    """
    pred = as_tensor(pred)
    if pred.shape[-2] < 2:
        raise ShapeError(f"energy_term needs at least 2 steps, got {pred.shape[-2]}")
    E = _mean_sq_norm(velocities(pred, dt)) * lambda_v
    if omega is not None and lambda_omega:
        E = E + _mean_sq_norm(as_tensor(omega)) * lambda_omega
    return E


def smoothness_term(pred, dt: float) -> Tensor:
    """Mean squared acceleration norm from second differences."""
    pred = as_tensor(pred)
    if pred.shape[-2] < 3:
        raise ShapeError(f"smoothness_term needs at least 3 steps, got {pred.shape[-2]}")
    return _mean_sq_norm(accelerations(pred, dt))


def robustness_term(net, eta_1: float, eta_2: float, eta_3: float) -> float:
    """Phi = mean_t (eta_1*loss_rate + eta_2*latency + eta_3*jitter).

    ``net`` is a NetworkFeatures or an array whose last axis is
    (loss rate, latency ms, jitter ms).  Each weighted sum is accumulated with
    ``math.fsum`` so constant features give an exactly length-independent value.
    """
    arr = net.as_array() if hasattr(net, "as_array") else np.asarray(net, dtype=float)
    arr = arr.reshape(-1, 3)
    if arr.shape[0] == 0:
        return 0.0
    per_step = [math.fsum((eta_1 * a, eta_2 * b, eta_3 * c)) for a, b, c in arr.tolist()]
    if len(set(per_step)) == 1:
        return per_step[0]
    return math.fsum(per_step) / len(per_step)


def latency_penalty(latency) -> float:
    lat = np.asarray(latency, dtype=float)
    return float(math.fsum(lat.ravel().tolist()) / lat.size) if lat.size else 0.0


def encoder_aux_loss(reconstruction, clean, gamma_1: float = 0.0, gamma_2: float = 0.0,
                     latency=None, dt: float = 1.0 / 30.0, to_meters=None) -> Tensor:
    """Reconstruction MSE + gamma_1 * smoothness + gamma_2 * mean latency.

    ``to_meters`` maps the reconstruction into meter space before the
    smoothness term (identity by default).
    """
    reconstruction, clean = as_tensor(reconstruction), as_tensor(clean)
    _check_same(reconstruction, clean, "encoder_aux_loss")
    loss = position_loss(reconstruction, clean)
    if gamma_1:
        rec_m = to_meters(reconstruction) if to_meters else reconstruction
        loss = loss + smoothness_term(rec_m, dt) * gamma_1
    if gamma_2 and latency is not None:
        loss = loss + gamma_2 * latency_penalty(latency)
    return loss


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------

def _violations(pred, limits: ConstraintLimits, gripper=None, omega=None, lambda_v: float = 1.0,
                lambda_omega: float = 0.0) -> dict:
    """Signed violation tensors per constraint (<= 0 means satisfied).

    Each entry is (violation tensor, time-index array aligned with its last axis
    or None for the scalar energy budget).
    """
    p = as_tensor(pred)
    dt = limits.dt
    T = p.shape[-2]
    out = {}
    if T >= 2:
        step = ag.norm(p[..., 1:, :] - p[..., :-1, :], axis=-1)
        out["sync"] = (step - limits.eps_sync, np.arange(1, T))
        out["velocity"] = (ag.norm(velocities(p, dt), axis=-1) - limits.v_max, np.arange(1, T))
    lo = np.asarray(limits.p_min, dtype=float)
    hi = np.asarray(limits.p_max, dtype=float)
    below = lo - p
    above = p - hi
    # one entry per (t, axis); flattened so index // 3 gives t
    out["workspace"] = (ag.concat([below, above], axis=-1).reshape(p.shape[:-2] + (T * 6,)),
                        np.repeat(np.arange(T), 6))
    if omega is not None:
        om = as_tensor(omega)
        out["angular_velocity"] = (ag.norm(om, axis=-1) - limits.omega_max, np.arange(om.shape[-2]))
    if T >= 3:
        out["acceleration"] = (ag.norm(accelerations(p, dt), axis=-1) - limits.a_max, np.arange(2, T))
    if gripper is not None:
        g = as_tensor(gripper)
        both = ag.concat([limits.gamma_min - g, g - limits.gamma_max], axis=-1)
        out["gripper"] = (both, np.tile(np.arange(g.shape[-1]), 2))
    if T >= 2:
        v = velocities(p, dt)
        e = ag.sum_of_squares(v, axis=-1) * lambda_v
        if omega is not None and lambda_omega:
            e = e + ag.sum_of_squares(as_tensor(omega)[..., 1:, :], axis=-1) * lambda_omega
        out["energy"] = (ag.tsum(e, axis=-1, keepdims=True) - limits.E_max, None, e)
    return out


def penalty_loss(pred, limits: ConstraintLimits, penalty_weights: dict | None = None,
                 gripper=None, omega=None, lambda_v: float = 1.0, lambda_omega: float = 0.0,
                 breakdown: bool = False):
    """Sum over constraints of weight * mean(max(0, violation)^2)."""
    penalty_weights = penalty_weights or {}
    viol = _violations(pred, limits, gripper, omega, lambda_v, lambda_omega)
    total = None
    parts = {}
    for name in CONSTRAINTS:
        if name not in viol:
            continue
        w = float(penalty_weights.get(name, 1.0))
        if w == 0:
            continue
        v = viol[name][0]
        hinge = ag.relu(v)
        term = ag.sum_of_squares(hinge) * (w / hinge.data.size)
        parts[name] = term
        total = term if total is None else total + term
    if total is None:
        total = Tensor(0.0)
    return (total, parts) if breakdown else total


@dataclass
class ConstraintResult:
    status: str               # pass | fail | skipped
    worst_violation: float
    time_index: int | None


@dataclass
class FeasibilityReport:
    results: dict

    @property
    def all_pass(self) -> bool:
        return all(r.status != "fail" for r in self.results.values())

    def __getitem__(self, name: str) -> ConstraintResult:
        return self.results[name]

    def to_dict(self) -> dict:
        return {k: asdict(v) for k, v in self.results.items()}


def constraint_check(pred, limits: ConstraintLimits, gripper=None, omega=None,
                     lambda_v: float = 1.0, lambda_omega: float = 0.0) -> FeasibilityReport:
    """Hard evaluation of every constraint on one trajectory (T, 3).

    A constraint passes iff its worst violation is <= 0 (bounds are inclusive).
    """
    p = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=float)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ShapeError(f"constraint_check expects a (T, 3) trajectory, got {p.shape}")
    with ag.no_grad():
        viol = _violations(p, limits, gripper, omega, lambda_v, lambda_omega)
    results = {}
    for name in CONSTRAINTS:
        if name not in viol:
            results[name] = ConstraintResult("skipped", 0.0, None)
            continue
        entry = viol[name]
        v = entry[0].data.reshape(-1)
        if name == "energy":
            per_step = entry[2].data.reshape(-1)
            worst = float(v[0])
            crossing = np.flatnonzero(np.cumsum(per_step) > limits.E_max)
            idx = int(crossing[0]) + 1 if crossing.size else None
        else:
            k = int(np.argmax(v))
            worst = float(v[k])
            idx = int(entry[1][k])
        status = "pass" if worst <= 0 else "fail"
        results[name] = ConstraintResult(status, worst, idx if status == "fail" else None)
    return FeasibilityReport(results)


# ---------------------------------------------------------------------------
# total
# ---------------------------------------------------------------------------

@dataclass
class LossBreakdown:
    total: Tensor
    terms: dict               # name -> float weighted contribution

    def as_row(self) -> dict:
        return {"total": float(self.total.data), **self.terms}


TERM_NAMES = ("position", "energy", "smoothness", "robustness", "decoder_energy", "encoder_aux", "penalty")


def total_loss(pred, target, objective: ObjectiveConfig, dt: float, to_meters=None,
               network=None, reconstruction=None, encoder_clean=None, encoder_latency=None,
               omega=None, gripper=None) -> LossBreakdown:
    """Weighted sum of every objective term; zero-weight terms are skipped.

    ``pred``/``target`` live in the model's (normalized) space; ``to_meters``
    maps predictions into meters for the physical terms.  ``network`` holds
    raw (loss rate, latency ms, jitter ms) features of the prediction span.
    """
    w = objective.weights
    pred = as_tensor(pred)
    L_pos = position_loss(pred, target)
    total = L_pos
    terms = {"position": float(L_pos.data)}
    p_m = None

    def meters():
        nonlocal p_m
        if p_m is None:
            p_m = to_meters(pred) if to_meters else pred
        return p_m

    if w.alpha or w.delta_1:
        E = energy_term(meters(), dt, w.lambda_v, w.lambda_omega, omega)
        if w.alpha:
            total = total + E * w.alpha
            terms["energy"] = float(E.data) * w.alpha
        if w.delta_1:
            total = total + E * w.delta_1
            terms["decoder_energy"] = float(E.data) * w.delta_1
    if w.gamma_1:
        S = smoothness_term(meters(), dt)
        total = total + S * w.gamma_1
        terms["smoothness"] = float(S.data) * w.gamma_1
    if w.beta and network is not None:
        phi = robustness_term(network, w.eta_1, w.eta_2, w.eta_3)
        total = total + w.beta * phi
        terms["robustness"] = w.beta * phi
    if w.encoder and reconstruction is not None:
        aux = encoder_aux_loss(reconstruction, encoder_clean, w.gamma_1, w.gamma_2, encoder_latency,
                               dt, to_meters)
        total = total + aux * w.encoder
        terms["encoder_aux"] = float(aux.data) * w.encoder
    active = {k: v for k, v in objective.penalty_weights.items() if v}
    if active:
        only = {name: float(objective.penalty_weights.get(name, 0.0)) for name in CONSTRAINTS}
        pen = penalty_loss(meters(), objective.limits, only, gripper=gripper, omega=omega,
                           lambda_v=w.lambda_v, lambda_omega=w.lambda_omega)
        total = total + pen
        terms["penalty"] = float(pen.data)
    for name in TERM_NAMES:
        terms.setdefault(name, 0.0)
        if not math.isfinite(terms[name]):
            raise NonFiniteError(f"loss term {name!r} is not finite")
    if not np.isfinite(total.data):
        raise NonFiniteError("total loss is not finite")
    return LossBreakdown(total, terms)
