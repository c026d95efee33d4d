"""Kinematic trials, synthetic trajectories and encoder/decoder windows.

JIGSAWS kinematics files hold 76 whitespace-separated floats per 30 Hz frame,
four manipulator blocks of 19 columns each:

    columns  0-18   master left   (MTML)
    columns 19-37   master right  (MTMR)
    columns 38-56   slave left    (PSM1)
    columns 57-75   slave right   (PSM2)

and inside each block: position (3), rotation matrix row-major (9), linear
velocity (3), angular velocity (3), gripper angle (1).

Window channel layout (``C = 7``)::

    0-2  position x, y, z (zeroed where the packet was lost)
    3    unavailable flag: 1 where the position channels carry no data
         (lost packet in the encoder/token span, placeholder rows in X0)
    4    trailing packet-loss rate
    5    latency (ms)
    6    jitter (ms)
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .channel import corrupt, make_rng
from .errors import ConfigError, ParseError, ShapeError
from .serialization import TRIAL_MAGIC, WINDOWS_MAGIC, read_arrays, write_arrays

N_COLUMNS = 76
BLOCK_WIDTH = 19
ARM_OFFSETS = {
    "master-left": 0,
    "master-right": 19,
    "slave-left": 38,
    "slave-right": 57,
}
POS_CHANNELS = slice(0, 3)
FLAG_CHANNEL = 3
NET_CHANNELS = slice(4, 7)
N_CHANNELS = 7
CHANNEL_NAMES = ("x", "y", "z", "unavailable", "loss_rate", "latency_ms", "jitter_ms")


@dataclass(frozen=True)
class KinematicFrame:
    index: int
    position: np.ndarray
    rotation: np.ndarray
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray
    gripper_angle: float


@dataclass
class Trial:
    """A recording stored column-wise; ``frames`` gives the per-sample view."""

    positions: np.ndarray           # (N, 3) m
    rotations: np.ndarray           # (N, 3, 3)
    linear_velocity: np.ndarray     # (N, 3) m/s
    angular_velocity: np.ndarray    # (N, 3) rad/s
    gripper: np.ndarray             # (N,) rad
    sample_rate: float = 30.0
    source: str = "synthetic"
    arm: str = "slave-left"
    start_index: int = 0

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.start_index, self.start_index + len(self))

    def frame(self, i: int) -> KinematicFrame:
        return KinematicFrame(int(self.start_index + i), self.positions[i], self.rotations[i],
                              self.linear_velocity[i], self.angular_velocity[i], float(self.gripper[i]))

    @property
    def frames(self) -> list[KinematicFrame]:
        return [self.frame(i) for i in range(len(self))]


# ---------------------------------------------------------------------------
# JIGSAWS text format
# ---------------------------------------------------------------------------

def parse_jigsaws_kinematics(text, arm: str = "slave-left", check_rotation: bool = True) -> Trial:
    """Parse a JIGSAWS kinematics file (string or file-like) into a Trial."""
    if arm not in ARM_OFFSETS:
        raise ValueError(f"unknown arm {arm!r}; choose from {sorted(ARM_OFFSETS)}")
    if not isinstance(text, str):
        text = text.read()
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != N_COLUMNS:
            raise ParseError(f"expected {N_COLUMNS} columns, found {len(tokens)}", line=lineno)
        try:
            rows.append([float(t) for t in tokens])
        except ValueError as exc:
            raise ParseError(f"non-numeric token ({exc})", line=lineno) from None
    data = np.array(rows, dtype=float).reshape(-1, N_COLUMNS)
    trial = trial_from_block(data[:, ARM_OFFSETS[arm]:ARM_OFFSETS[arm] + BLOCK_WIDTH],
                             source="jigsaws-file", arm=arm)
    if check_rotation and len(trial):
        check_rotations(trial.rotations)
    return trial


def read_jigsaws_file(path, arm: str = "slave-left") -> Trial:
    return parse_jigsaws_kinematics(Path(path).read_text(), arm=arm)


def trial_from_block(block: np.ndarray, source: str, arm: str, sample_rate: float = 30.0) -> Trial:
    n = block.shape[0]
    return Trial(
        positions=block[:, 0:3].copy(),
        rotations=block[:, 3:12].reshape(n, 3, 3).copy(),
        linear_velocity=block[:, 12:15].copy(),
        angular_velocity=block[:, 15:18].copy(),
        gripper=block[:, 18].copy(),
        sample_rate=sample_rate, source=source, arm=arm,
    )


def trial_block(trial: Trial) -> np.ndarray:
    n = len(trial)
    return np.hstack([trial.positions, trial.rotations.reshape(n, 9), trial.linear_velocity,
                      trial.angular_velocity, trial.gripper[:, None]])


def save_trial(trial: Trial, path) -> None:
    """Internal binary form of one arm's recording."""
    meta = {"sample_rate": trial.sample_rate, "source": trial.source, "arm": trial.arm,
            "start_index": trial.start_index}
    write_arrays(path, TRIAL_MAGIC, meta, {"block": trial_block(trial)})


def load_trial(path) -> Trial:
    meta, arrays = read_arrays(path, TRIAL_MAGIC)
    trial = trial_from_block(arrays["block"], meta["source"], meta["arm"], meta["sample_rate"])
    trial.start_index = int(meta["start_index"])
    return trial


def read_trial(path, arm: str = "slave-left") -> Trial:
    """Load either a JIGSAWS text file or an internal trial container."""
    with open(path, "rb") as fh:
        head = fh.read(len(TRIAL_MAGIC))
    return load_trial(path) if head == TRIAL_MAGIC else read_jigsaws_file(path, arm)


def check_rotations(R: np.ndarray, tol: float = 1e-3) -> int:
    """Warn (never reject) when rotation blocks are not proper orthonormal matrices."""
    eye = np.eye(3)
    orth_err = np.abs(np.einsum("nji,njk->nik", R, R) - eye).max(axis=(1, 2))
    det_err = np.abs(np.linalg.det(R) - 1.0)
    bad = int(np.count_nonzero((orth_err > tol) | (det_err > tol)))
    if bad:
        first = int(np.flatnonzero((orth_err > tol) | (det_err > tol))[0])
        warnings.warn(f"{bad} frame(s) have non-orthonormal rotation blocks (first at frame {first})",
                      RuntimeWarning, stacklevel=3)
    return bad


def format_jigsaws_kinematics(trials: dict[str, Trial]) -> str:
    """Serialize one trial per arm into 76-column text; missing blocks are zero.

    Floats are written with ``repr`` so parsing reproduces them bit-exactly.
    """
    lengths = {len(t) for t in trials.values()}
    if len(lengths) != 1:
        raise ShapeError(f"trials have different lengths {sorted(lengths)}")
    n = lengths.pop()
    full = np.zeros((n, N_COLUMNS))
    for arm, trial in trials.items():
        off = ARM_OFFSETS[arm]
        full[:, off:off + BLOCK_WIDTH] = trial_block(trial)
    return "".join("    ".join(repr(float(v)) for v in row) + "\n" for row in full)


# ---------------------------------------------------------------------------
# synthetic trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    amplitude: float = 0.03          # per-axis bound on |p - center|, m
    v_max: float = 0.1               # m/s
    a_max: float = 0.5               # m/s^2
    freq_range: tuple = (0.05, 0.8)  # Hz
    center_range: float = 0.05       # m
    rotation_amplitude: float = 0.6  # rad
    gripper_range: tuple = (0.0, 1.2)


def _rodrigues(axis: np.ndarray, theta: np.ndarray) -> np.ndarray:
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    s, c = np.sin(theta)[:, None, None], np.cos(theta)[:, None, None]
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def generate_synthetic_trial(duration_s: float, sample_rate: float = 30.0,
                             spec: SyntheticSpec | None = None, seed: int = 0) -> Trial:
    """Surgical-like tool-tip motion: 3-5 seeded sinusoids per axis.

    Amplitudes are scaled so that ``|p - center| <= amplitude`` per axis,
    ``||v|| <= v_max`` and ``||a|| <= a_max`` hold for every t.  Velocities
    come from the analytic derivative, not from differencing.
    """
    spec = spec or SyntheticSpec()
    if duration_s <= 0:
        raise ConfigError(f"duration_s must be positive, got {duration_s}")
    rng = make_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    center = rng.uniform(-spec.center_range, spec.center_range, size=3)
    pos = np.tile(center, (n, 1))
    vel = np.zeros((n, 3))
    per_axis = 1.0 / math.sqrt(3.0)
    for axis in range(3):
        k = int(rng.integers(3, 6))
        freqs = rng.uniform(*spec.freq_range, size=k)
        phases = rng.uniform(0, 2 * np.pi, size=k)
        raw = rng.uniform(0.2, 1.0, size=k)
        w = 2 * np.pi * freqs
        scale = min(spec.amplitude / raw.sum(),
                    spec.v_max * per_axis / (raw * w).sum(),
                    spec.a_max * per_axis / (raw * w * w).sum())
        amps = raw * scale
        arg = np.outer(t, w) + phases
        pos[:, axis] += np.sin(arg) @ amps
        vel[:, axis] = np.cos(arg) @ (amps * w)

    rot_axis = rng.standard_normal(3)
    rot_axis /= np.linalg.norm(rot_axis)
    f_r = rng.uniform(0.02, 0.1)
    phase_r = rng.uniform(0, 2 * np.pi)
    theta0 = rng.uniform(-np.pi, np.pi)
    amp_r = spec.rotation_amplitude if spec.amplitude > 0 else 0.0
    theta = theta0 + amp_r * np.sin(2 * np.pi * f_r * t + phase_r)
    dtheta = amp_r * 2 * np.pi * f_r * np.cos(2 * np.pi * f_r * t + phase_r)
    rotations = _rodrigues(rot_axis, theta)
    omega = np.outer(dtheta, rot_axis)

    g_lo, g_hi = spec.gripper_range
    f_g = rng.uniform(0.1, 0.4)
    phase_g = rng.uniform(0, 2 * np.pi)
    g_amp = 0.5 * (g_hi - g_lo) if spec.amplitude > 0 else 0.0
    gripper = 0.5 * (g_lo + g_hi) + g_amp * np.sin(2 * np.pi * f_g * t + phase_g)

    return Trial(pos, rotations, vel, omega, gripper, sample_rate=sample_rate, source="synthetic", arm="slave-left")


# ---------------------------------------------------------------------------
# network features
# ---------------------------------------------------------------------------

@dataclass
class NetworkFeatures:
    loss_rate: np.ndarray   # (N,) fraction over a trailing window
    latency: np.ndarray     # (N,) ms
    jitter: np.ndarray      # (N,) ms

    def __post_init__(self):
        self.loss_rate = np.asarray(self.loss_rate, dtype=float)
        self.latency = np.asarray(self.latency, dtype=float)
        self.jitter = np.asarray(self.jitter, dtype=float)
        if not (self.loss_rate.shape == self.latency.shape == self.jitter.shape):
            raise ShapeError("network feature arrays must share one length")
        stacked = self.as_array()
        if not np.all(np.isfinite(stacked)) or np.any(stacked < 0) or np.any(self.loss_rate > 1):
            raise ValueError("network features must be finite, nonnegative, loss rate <= 1")

    def __len__(self) -> int:
        return self.loss_rate.shape[0]

    def as_array(self) -> np.ndarray:
        return np.stack([self.loss_rate, self.latency, self.jitter], axis=1)

    @classmethod
    def constant(cls, n: int, loss_rate: float = 0.0, latency: float = 0.0, jitter: float = 0.0):
        return cls(np.full(n, loss_rate), np.full(n, latency), np.full(n, jitter))


def trailing_loss_rate(mask, window: int = 30) -> np.ndarray:
    m = np.asarray(mask, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(m)])
    idx = np.arange(1, m.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def simulate_network_features(mask, latency_ms: float = 20.0, jitter_ms: float = 5.0,
                              noise: float = 0.1, window: int = 30, seed: int = 0) -> NetworkFeatures:
    """Loss rate measured from the mask; latency/jitter = configured level plus seeded noise."""
    mask = np.asarray(mask, dtype=bool)
    rng = make_rng(seed)
    n = mask.size
    latency = np.clip(latency_ms * (1.0 + noise * rng.standard_normal(n)), 0.0, None)
    jitter = np.clip(jitter_ms * (1.0 + noise * rng.standard_normal(n)), 0.0, None)
    return NetworkFeatures(trailing_loss_rate(mask, window), latency, jitter)


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowSpec:
    L_x: int = 96
    L_token: int = 48
    L_y: int = 24
    stride: int = 24

    def __post_init__(self):
        for name in ("L_x", "L_token", "L_y", "stride"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.L_token > self.L_x:
            raise ConfigError(f"L_token ({self.L_token}) must not exceed L_x ({self.L_x})")

    @property
    def span(self) -> int:
        return self.L_x + self.L_y

    def count(self, n: int) -> int:
        if n < self.span:
            return 0
        return (n - self.span) // self.stride + 1


@dataclass
class SequenceWindow:
    encoder_input: np.ndarray   # (L_x, C)
    decoder_input: np.ndarray   # (L_token + L_y, C)
    target: np.ndarray          # (L_y, 3)
    dt: float


@dataclass
class WindowDataset:
    """Stacked windows.  ``encoder_clean`` holds the uncorrupted encoder-span
    positions (auxiliary reconstruction target); the ``target_*`` arrays hold
    ground-truth channels over the prediction span for constraint checks."""

    encoder_input: np.ndarray      # (B, L_x, C)
    decoder_input: np.ndarray      # (B, L_token + L_y, C)
    target: np.ndarray             # (B, L_y, 3)
    encoder_clean: np.ndarray      # (B, L_x, 3)
    target_angular: np.ndarray     # (B, L_y, 3)
    target_gripper: np.ndarray     # (B, L_y)
    start: np.ndarray              # (B,) first frame index of the window
    trial_id: np.ndarray           # (B,)
    dt: float
    spec: WindowSpec
    normalized: bool = False

    def __len__(self) -> int:
        return self.encoder_input.shape[0]

    def window(self, i: int) -> SequenceWindow:
        return SequenceWindow(self.encoder_input[i], self.decoder_input[i], self.target[i], self.dt)

    def subset(self, idx) -> "WindowDataset":
        idx = np.asarray(idx)
        return replace(self, **{k: getattr(self, k)[idx] for k in _ARRAY_FIELDS})

    @property
    def mask(self) -> np.ndarray:
        return self.encoder_input[..., FLAG_CHANNEL] > 0.5

    # -- serialization --------------------------------------------------
    def save(self, path) -> None:
        meta = {"dt": self.dt, "normalized": self.normalized, "spec": self.spec.__dict__,
                "channels": list(CHANNEL_NAMES)}
        write_arrays(path, WINDOWS_MAGIC, meta, {k: getattr(self, k) for k in _ARRAY_FIELDS})

    @classmethod
    def load(cls, path) -> "WindowDataset":
        meta, arrays = read_arrays(path, WINDOWS_MAGIC)
        arrays["start"] = arrays["start"].astype(np.int64)
        arrays["trial_id"] = arrays["trial_id"].astype(np.int64)
        return cls(**arrays, dt=meta["dt"], spec=WindowSpec(**meta["spec"]),
                   normalized=meta["normalized"])

    def to_csv(self, fh) -> None:
        """One row per (window, part, step) with every channel, for inspection."""
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "part", "step"] + list(CHANNEL_NAMES))
        for b in range(len(self)):
            for part, arr in (("encoder", self.encoder_input[b]), ("decoder", self.decoder_input[b])):
                for s, row in enumerate(arr):
                    w.writerow([b, part, s] + [repr(float(v)) for v in row])
            for s, row in enumerate(self.target[b]):
                w.writerow([b, "target", s] + [repr(float(v)) for v in row] + ["", "", "", ""])


_ARRAY_FIELDS = ("encoder_input", "decoder_input", "target", "encoder_clean", "target_angular",
                 "target_gripper", "start", "trial_id")


def empty_dataset(spec: WindowSpec, dt: float) -> WindowDataset:
    return WindowDataset(
        np.zeros((0, spec.L_x, N_CHANNELS)), np.zeros((0, spec.L_token + spec.L_y, N_CHANNELS)),
        np.zeros((0, spec.L_y, 3)), np.zeros((0, spec.L_x, 3)), np.zeros((0, spec.L_y, 3)),
        np.zeros((0, spec.L_y)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), dt, spec)


def make_windows(trial: Trial, spec: WindowSpec, mask, net: NetworkFeatures,
                 trial_id: int = 0) -> WindowDataset:
    """Slice a trial into corrupted encoder inputs, decoder inputs and clean targets."""
    mask = np.asarray(mask, dtype=bool)
    n = len(trial)
    if mask.shape != (n,) or len(net) != n:
        raise ShapeError(f"trial length {n}, mask {mask.shape}, network features {len(net)}")
    count = spec.count(n)
    if count == 0:
        warnings.warn(f"trial of {n} frames is shorter than L_x + L_y = {spec.span}; no windows",
                      RuntimeWarning, stacklevel=2)
        return empty_dataset(spec, trial.dt)

    stream = np.empty((n, N_CHANNELS))
    stream[:, POS_CHANNELS] = corrupt(trial.positions, mask)
    stream[:, FLAG_CHANNEL] = mask
    stream[:, NET_CHANNELS] = net.as_array()

    starts = np.arange(count) * spec.stride
    enc_idx = starts[:, None] + np.arange(spec.L_x)
    fut_idx = starts[:, None] + spec.L_x + np.arange(spec.L_y)
    enc = stream[enc_idx]
    token = enc[:, spec.L_x - spec.L_token:]
    placeholder = np.zeros((count, spec.L_y, N_CHANNELS))
    placeholder[..., FLAG_CHANNEL] = 1.0
    placeholder[..., NET_CHANNELS] = stream[fut_idx][..., NET_CHANNELS]
    dec = np.concatenate([token, placeholder], axis=1)
    return WindowDataset(
        encoder_input=enc,
        decoder_input=dec,
        target=trial.positions[fut_idx],
        encoder_clean=trial.positions[enc_idx],
        target_angular=trial.angular_velocity[fut_idx],
        target_gripper=trial.gripper[fut_idx],
        start=starts.astype(np.int64),
        trial_id=np.full(count, trial_id, dtype=np.int64),
        dt=trial.dt, spec=spec,
    )


def concat_datasets(parts: list[WindowDataset]) -> WindowDataset:
    if not parts:
        raise ValueError("no datasets to concatenate")
    first = parts[0]
    arrays = {k: np.concatenate([getattr(p, k) for p in parts], axis=0) for k in _ARRAY_FIELDS}
    return replace(first, **arrays)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass
class NormStats:
    """Per-channel z-score parameters.  Position stats also apply to targets;
    the flag channel is stored as mean 0 / std 1 and never touched."""

    mean: np.ndarray   # (C,)
    std: np.ndarray    # (C,)

    @property
    def pos_mean(self) -> np.ndarray:
        return self.mean[POS_CHANNELS]

    @property
    def pos_std(self) -> np.ndarray:
        return self.std[POS_CHANNELS]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


STD_FLOOR = 1e-8


def compute_stats(ds: WindowDataset) -> NormStats:
    """Position stats from available (unflagged) encoder samples plus targets;
    network stats from every encoder row."""
    mean = np.zeros(N_CHANNELS)
    std = np.ones(N_CHANNELS)
    avail = ~ds.mask.reshape(-1)
    pos = np.concatenate([ds.encoder_input[..., POS_CHANNELS].reshape(-1, 3)[avail],
                          ds.target.reshape(-1, 3)], axis=0)
    mean[POS_CHANNELS] = pos.mean(axis=0)
    std[POS_CHANNELS] = np.maximum(pos.std(axis=0), STD_FLOOR)
    net = ds.encoder_input[..., NET_CHANNELS].reshape(-1, 3)
    mean[NET_CHANNELS] = net.mean(axis=0)
    std[NET_CHANNELS] = np.maximum(net.std(axis=0), STD_FLOOR)
    return NormStats(mean, std)


def scale_inputs(x: np.ndarray, stats: NormStats, forward: bool) -> np.ndarray:
    out = x.copy()
    avail = out[..., FLAG_CHANNEL:FLAG_CHANNEL + 1] < 0.5
    if forward:
        pos = (out[..., POS_CHANNELS] - stats.pos_mean) / stats.pos_std
        out[..., NET_CHANNELS] = (out[..., NET_CHANNELS] - stats.mean[NET_CHANNELS]) / stats.std[NET_CHANNELS]
    else:
        pos = out[..., POS_CHANNELS] * stats.pos_std + stats.pos_mean
        out[..., NET_CHANNELS] = out[..., NET_CHANNELS] * stats.std[NET_CHANNELS] + stats.mean[NET_CHANNELS]
    # unavailable positions stay exactly zero in both spaces
    out[..., POS_CHANNELS] = np.where(avail, pos, 0.0)
    return out


def normalize(ds: WindowDataset, stats: NormStats | None = None) -> tuple[WindowDataset, NormStats]:
    if ds.normalized:
        raise ValueError("dataset is already normalized")
    stats = stats or compute_stats(ds)
    out = replace(
        ds,
        encoder_input=scale_inputs(ds.encoder_input, stats, True),
        decoder_input=scale_inputs(ds.decoder_input, stats, True),
        target=(ds.target - stats.pos_mean) / stats.pos_std,
        encoder_clean=(ds.encoder_clean - stats.pos_mean) / stats.pos_std,
        normalized=True,
    )
    return out, stats


def denormalize(ds: WindowDataset, stats: NormStats) -> WindowDataset:
    if not ds.normalized:
        raise ValueError("dataset is not normalized")
    return replace(
        ds,
        encoder_input=scale_inputs(ds.encoder_input, stats, False),
        decoder_input=scale_inputs(ds.decoder_input, stats, False),
        target=ds.target * stats.pos_std + stats.pos_mean,
        encoder_clean=ds.encoder_clean * stats.pos_std + stats.pos_mean,
        normalized=False,
    )


def denormalize_positions(p: np.ndarray, stats: NormStats) -> np.ndarray:
    return p * stats.pos_std + stats.pos_mean


def split_by_trial(ds: WindowDataset, train: list[int], val: list[int], test: list[int]):
    pick = lambda ids: ds.subset(np.flatnonzero(np.isin(ds.trial_id, ids)))
    return pick(train), pick(val), pick(test)
