"""Four-state hidden-Markov packet-loss channel.

States (0-based codes in arrays, 1-based names):

    S1  gap-received      0
    S2  burst-received    1
    S3  burst-lost        2
    S4  gap-lost          3

S3 and S4 drop the packet, S1 and S2 deliver it.

Two constructors are provided.

``build_transition_matrix_basic(P_B, P_G)`` returns the two-parameter matrix::

    [[1-P_B, P_B,   0,     0    ],
     [0,     1-P_G, P_G,   0    ],
     [0,     0,     1-P_G, P_G  ],
     [P_B,   0,     0,     1-P_B]]

taken verbatim, without reinterpreting its row semantics.

``build_transition_matrix_extended(params)`` accepts the four-parameter grid
(burst density, gap density, mean burst length, mean gap length) using a
two-level convention.  An outer period chain alternates between *burst* and
*gap* periods with geometric dwell: a burst period continues with probability
``1 - 1/L_B`` per packet, a gap period with ``1 - 1/L_G``.  Inside a burst
period each packet is lost with probability ``burst_density``; inside a gap
period each packet is received with probability ``gap_density``.  The
mapping onto S1..S4 is:

    burst period + lost      -> S3     burst period + received -> S2
    gap period   + received  -> S1     gap period   + lost     -> S4

so the row for any state depends only on the period it belongs to:
``T[s, s'] = P(period(s) -> period(s')) * P(outcome(s') | period(s'))``.
The stationary loss rate is ``(L_B*d_B + L_G*(1-d_G)) / (L_B + L_G)``.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ChainError, ParameterError

RNG_ALGORITHM = "numpy.random.Generator(PCG64)"


class ChannelState(enum.IntEnum):
    S1 = 0  # gap-received
    S2 = 1  # burst-received
    S3 = 2  # burst-lost
    S4 = 3  # gap-lost

    @property
    def lost(self) -> bool:
        return self in (ChannelState.S3, ChannelState.S4)

    @property
    def in_burst(self) -> bool:
        return self in (ChannelState.S2, ChannelState.S3)


LOST_STATES = (ChannelState.S3, ChannelState.S4)
BURST_STATES = (ChannelState.S2, ChannelState.S3)


def _check_probability(name: str, value: float) -> float:
    value = float(value)
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise ParameterError(f"{name} must be a probability in [0, 1], got {value}")
    return value


def _check_length(name: str, value: float) -> float:
    value = float(value)
    if not value >= 1.0 or not math.isfinite(value):
        raise ParameterError(f"{name} must be >= 1 packet, got {value}")
    return value


@dataclass(frozen=True)
class ChannelParams:
    burst_density: float
    gap_density: float
    mean_burst_length: float | None = None
    mean_gap_length: float | None = None
    seed: int = 0

    def __post_init__(self):
        _check_probability("burst_density", self.burst_density)
        _check_probability("gap_density", self.gap_density)
        if self.mean_burst_length is not None:
            _check_length("mean_burst_length", self.mean_burst_length)
        if self.mean_gap_length is not None:
            _check_length("mean_gap_length", self.mean_gap_length)
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def extended(self) -> bool:
        return self.mean_burst_length is not None and self.mean_gap_length is not None

    def transition_matrix(self) -> np.ndarray:
        if self.extended:
            return build_transition_matrix_extended(self)
        return build_transition_matrix_basic(self.burst_density, self.gap_density)

    def expected_loss_rate(self) -> float:
        """Closed-form stationary loss rate (extended mode only)."""
        if not self.extended:
            return loss_rate(stationary_distribution(self.transition_matrix()))
        lb, lg = self.mean_burst_length, self.mean_gap_length
        return (lb * self.burst_density + lg * (1.0 - self.gap_density)) / (lb + lg)


# channel severity grid, mildest to harshest: (burst density, gap density, burst length, gap length)
SEVERITY_GRID = (
    (0.3, 0.95, 4, 8),
    (0.4, 0.90, 5, 7),
    (0.5, 0.85, 6, 6),
    (0.6, 0.80, 8, 5),
    (0.7, 0.75, 10, 4),
    (0.8, 0.70, 12, 3),
)


def severity_params(seed: int = 0) -> list[ChannelParams]:
    return [ChannelParams(b, g, lb, lg, seed=seed) for b, g, lb, lg in SEVERITY_GRID]


def build_transition_matrix_basic(p_b: float, p_g: float) -> np.ndarray:
    p_b = _check_probability("P_B", p_b)
    p_g = _check_probability("P_G", p_g)
    return np.array([
        [1.0 - p_b, p_b, 0.0, 0.0],
        [0.0, 1.0 - p_g, p_g, 0.0],
        [0.0, 0.0, 1.0 - p_g, p_g],
        [p_b, 0.0, 0.0, 1.0 - p_b],
    ])


def build_transition_matrix_extended(params: ChannelParams) -> np.ndarray:
    if not params.extended:
        raise ParameterError("extended mode needs mean_burst_length and mean_gap_length")
    stay_burst = 1.0 - 1.0 / params.mean_burst_length
    stay_gap = 1.0 - 1.0 / params.mean_gap_length
    d_b, d_g = params.burst_density, params.gap_density
    # outcome distribution over (S1, S2, S3, S4) given the next period
    in_burst = np.array([0.0, 1.0 - d_b, d_b, 0.0])
    in_gap = np.array([d_g, 0.0, 0.0, 1.0 - d_g])
    from_burst = stay_burst * in_burst + (1.0 - stay_burst) * in_gap
    from_gap = (1.0 - stay_gap) * in_burst + stay_gap * in_gap
    return np.vstack([from_gap, from_burst, from_burst, from_gap])


def validate_transition_matrix(T: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4):
        raise ParameterError(f"transition matrix must be 4x4, got {T.shape}")
    if np.any(T < 0) or np.any(T > 1):
        raise ParameterError("transition matrix entries must lie in [0, 1]")
    if np.max(np.abs(T.sum(axis=1) - 1.0)) > tol:
        raise ParameterError("transition matrix rows must sum to 1")
    return T


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Independent child seeds for parallel runs."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def sample_states(T: np.ndarray, n: int, seed: int = 0,
                  initial: ChannelState | int = ChannelState.S1) -> np.ndarray:
    """Markov-chain realization of length ``n`` as an int8 array of state codes.

    The first element is drawn by one transition from ``initial``.
    """
    T = validate_transition_matrix(T)
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    initial = int(ChannelState(initial))
    cum = [list(np.minimum(np.cumsum(row), 1.0)) for row in T]
    for row in cum:
        row[-1] = 1.0
    u = make_rng(seed).random(n).tolist()
    out = bytearray(n)
    s = initial
    right = bisect.bisect_right
    for t in range(n):
        s = right(cum[s], u[t])
        # guard against floating round-off at exactly 1.0
        if s > 3:
            s = 3
        out[t] = s
    return np.frombuffer(bytes(out), dtype=np.int8).copy()


def stationary_distribution(T: np.ndarray) -> np.ndarray:
    """Unique stationary distribution by a bordered linear solve."""
    T = validate_transition_matrix(T)
    if closed_class_count(T) != 1:
        raise ChainError("no unique stationary distribution: chain has several closed classes")
    n = T.shape[0]
    A = np.vstack([T.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    if np.max(np.abs(pi @ T - pi)) >= 1e-10:
        raise ChainError("stationary solve did not converge")
    return pi


def power_iteration_stationary(T: np.ndarray, tol: float = 1e-14, max_iter: int = 1_000_000) -> np.ndarray:
    """Brute-force oracle: iterate pi <- pi T on the lazy chain (I + T)/2."""
    T = validate_transition_matrix(T)
    lazy = 0.5 * (np.eye(4) + T)
    pi = np.full(4, 0.25)
    for _ in range(max_iter):
        nxt = pi @ lazy
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt / nxt.sum()
        pi = nxt
    raise ChainError("power iteration did not converge")


def is_irreducible(T: np.ndarray) -> bool:
    reach = (np.asarray(T) > 0).astype(int) + np.eye(4, dtype=int)
    closure = np.linalg.matrix_power(reach, 4) > 0
    return bool(closure.all())


def closed_class_count(T: np.ndarray) -> int:
    """Number of closed communicating classes; one means a unique stationary law."""
    reach = (np.asarray(T) > 0).astype(int) + np.eye(4, dtype=int)
    R = np.linalg.matrix_power(reach, 4) > 0
    mutual = R & R.T
    classes = {tuple(np.flatnonzero(mutual[i])) for i in range(4)}
    # a class is closed when everything it reaches is inside it
    return sum(1 for c in classes if set(np.flatnonzero(R[list(c)].any(axis=0))) <= set(c))


def loss_rate(pi: np.ndarray) -> float:
    return float(pi[ChannelState.S3] + pi[ChannelState.S4])


def states_to_mask(states) -> np.ndarray:
    states = np.asarray(states, dtype=np.int8)
    if states.size == 0:
        raise ParameterError("state sequence is empty")
    return (states == ChannelState.S3) | (states == ChannelState.S4)


def corrupt(positions, mask) -> np.ndarray:
    """Zero the positions of lost packets; returns a new array."""
    positions = np.asarray(positions, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if positions.shape[0] != mask.shape[0]:
        raise ParameterError(f"positions ({positions.shape[0]}) and mask ({mask.shape[0]}) lengths differ")
    out = positions.copy()
    out[mask] = 0.0
    return out


def run_lengths(flags) -> np.ndarray:
    """Lengths of maximal runs of True values."""
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return np.zeros(0, dtype=int)
    padded = np.concatenate([[False], flags, [False]]).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return ends - starts


def simulate_mask(params: ChannelParams, n: int, initial: ChannelState | int = ChannelState.S1):
    """(states, mask) for ``n`` packets using the params' own seed."""
    states = sample_states(params.transition_matrix(), n, params.seed, initial)
    return states, states_to_mask(states)


def channel_stats(states: np.ndarray) -> dict:
    mask = states_to_mask(states)
    burst = np.isin(states, BURST_STATES)
    loss_runs = run_lengths(mask)
    burst_runs = run_lengths(burst)
    gap_runs = run_lengths(~burst)
    counts = np.bincount(states.astype(int), minlength=4)
    return {
        "packets": int(states.size),
        "loss_rate": float(mask.mean()),
        "state_frequencies": (counts / states.size).tolist(),
        "mean_loss_run": float(loss_runs.mean()) if loss_runs.size else 0.0,
        "mean_burst_period": float(burst_runs.mean()) if burst_runs.size else 0.0,
        "mean_gap_period": float(gap_runs.mean()) if gap_runs.size else 0.0,
    }


# -- mask trace files: one character per packet, '1' = lost -----------------

def format_mask(mask) -> str:
    mask = np.asarray(mask, dtype=bool)
    return "".join("1" if m else "0" for m in mask.tolist()) + "\n"


def parse_mask(text: str) -> np.ndarray:
    body = text.rstrip("\n")
    bad = set(body) - {"0", "1"}
    if bad:
        raise ParameterError(f"mask trace contains invalid characters {sorted(bad)!r}")
    return np.frombuffer(body.encode("ascii"), dtype=np.uint8) == ord("1")


def write_mask(path, mask) -> None:
    Path(path).write_text(format_mask(mask), encoding="ascii")


def read_mask(path) -> np.ndarray:
    return parse_mask(Path(path).read_text(encoding="ascii"))
