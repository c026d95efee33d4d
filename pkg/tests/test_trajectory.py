import io
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from teleop_informer.errors import ParseError
from teleop_informer.trajectory import (ARM_OFFSETS, FLAG_CHANNEL, NET_CHANNELS, N_COLUMNS, NetworkFeatures,
                                        SyntheticSpec, WindowDataset, WindowSpec, compute_stats, denormalize,
                                        format_jigsaws_kinematics, generate_synthetic_trial, load_trial,
                                        make_windows, normalize, parse_jigsaws_kinematics, read_trial,
                                        save_trial, simulate_network_features, trailing_loss_rate)


def _windows(n=200, spec=WindowSpec(L_x=32, L_token=16, L_y=8, stride=8), mask=None, seed=0):
    trial = generate_synthetic_trial(n / 30.0, seed=seed)
    mask = np.zeros(len(trial), bool) if mask is None else mask
    return trial, make_windows(trial, spec, mask, simulate_network_features(mask, seed=seed))


def test_parse_zero_line_warns_on_rotation():
    with pytest.warns(RuntimeWarning, match="rotation"):
        trial = parse_jigsaws_kinematics(" ".join(["0"] * 76) + "\n")
    assert len(trial) == 1
    np.testing.assert_array_equal(trial.positions[0], 0)
    np.testing.assert_array_equal(trial.rotations[0], np.zeros((3, 3)))
    assert trial.gripper[0] == 0.0


def test_parse_selects_arm_block():
    row = np.arange(76.0)
    for arm, off in ARM_OFFSETS.items():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            trial = parse_jigsaws_kinematics(" ".join(map(str, row)), arm=arm)
        np.testing.assert_array_equal(trial.positions[0], row[off:off + 3])
        assert trial.gripper[0] == row[off + 18]


def test_parse_wrong_column_count_names_line():
    good = " ".join(["0"] * 76)
    with pytest.raises(ParseError, match="line 2"):
        parse_jigsaws_kinematics(good + "\n" + " ".join(["0"] * 75) + "\n")
    with pytest.raises(ParseError):
        parse_jigsaws_kinematics(" ".join(["0"] * 77))


def test_parse_non_numeric_token():
    with pytest.raises(ParseError, match="line 1"):
        parse_jigsaws_kinematics(" ".join(["0"] * 75 + ["abc"]))


def test_parse_skips_blank_lines_and_reads_file_objects():
    text = "\n" + " ".join(["1.0"] * N_COLUMNS) + "\n\n"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        trial = parse_jigsaws_kinematics(io.StringIO(text))
    assert len(trial) == 1


def test_format_parse_round_trip_bit_exact():
    trial = generate_synthetic_trial(3.0, seed=4)
    other = generate_synthetic_trial(3.0, seed=5)
    text = format_jigsaws_kinematics({"slave-left": trial, "master-right": other})
    back = parse_jigsaws_kinematics(text, arm="slave-left")
    for name in ("positions", "rotations", "linear_velocity", "angular_velocity", "gripper"):
        np.testing.assert_array_equal(getattr(back, name), getattr(trial, name))
    back2 = parse_jigsaws_kinematics(text, arm="master-right")
    np.testing.assert_array_equal(back2.positions, other.positions)


def test_trial_container_round_trip(tmp_path):
    trial = generate_synthetic_trial(2.0, seed=1)
    save_trial(trial, tmp_path / "t.bin")
    for back in (load_trial(tmp_path / "t.bin"), read_trial(tmp_path / "t.bin")):
        np.testing.assert_array_equal(back.positions, trial.positions)
        np.testing.assert_array_equal(back.rotations, trial.rotations)
        assert back.sample_rate == trial.sample_rate


def test_synthetic_zero_amplitude_is_constant():
    trial = generate_synthetic_trial(5.0, spec=SyntheticSpec(amplitude=0.0), seed=2)
    np.testing.assert_array_equal(trial.positions, np.tile(trial.positions[0], (len(trial), 1)))
    np.testing.assert_array_equal(trial.linear_velocity, 0)


def test_synthetic_deterministic():
    a, b = generate_synthetic_trial(4.0, seed=9), generate_synthetic_trial(4.0, seed=9)
    assert a.positions.tobytes() == b.positions.tobytes()
    assert a.rotations.tobytes() == b.rotations.tobytes()
    assert not np.array_equal(a.positions, generate_synthetic_trial(4.0, seed=10).positions)


@pytest.mark.parametrize("rate", [30.0, 120.0])
def test_synthetic_velocity_matches_finite_difference(rate):
    trial = generate_synthetic_trial(20.0, sample_rate=rate, seed=3)
    p, v, dt = trial.positions, trial.linear_velocity, 1.0 / rate
    fd = (p[2:] - p[:-2]) / (2 * dt)
    err = np.abs(fd - v[1:-1]).max()
    # central differences carry an O(dt^2) error bounded by |p'''| dt^2 / 6
    spec = SyntheticSpec()
    jerk = spec.a_max * 2 * np.pi * spec.freq_range[1]
    assert err <= jerk * dt ** 2 / 6 + 1e-12


@given(st.integers(0, 10_000))
def test_synthetic_respects_bounds(seed):
    spec = SyntheticSpec()
    trial = generate_synthetic_trial(10.0, spec=spec, seed=seed)
    speed = np.linalg.norm(trial.linear_velocity, axis=1)
    assert speed.max() <= spec.v_max + 1e-12
    rot = trial.rotations
    np.testing.assert_allclose(np.einsum("nji,njk->nik", rot, rot), np.broadcast_to(np.eye(3), rot.shape),
                               atol=1e-10)


def test_window_count_example():
    spec = WindowSpec(L_x=48, L_token=24, L_y=16, stride=16)
    assert spec.count(100) == 3
    trial = generate_synthetic_trial(100 / 30.0, seed=0)
    mask = np.zeros(100, bool)
    ds = make_windows(trial, spec, mask, NetworkFeatures.constant(100))
    assert len(ds) == 3


@given(st.integers(1, 300), st.integers(1, 60), st.integers(1, 30), st.integers(1, 40))
def test_window_count_formula(n, L_x, L_y, stride):
    spec = WindowSpec(L_x=L_x, L_token=max(1, L_x // 2), L_y=L_y, stride=stride)
    expected = (n - (L_x + L_y)) // stride + 1 if n >= L_x + L_y else 0
    assert spec.count(n) == expected


def test_short_trial_gives_empty_dataset_with_warning():
    trial = generate_synthetic_trial(1.0, seed=0)
    with pytest.warns(RuntimeWarning, match="shorter"):
        ds = make_windows(trial, WindowSpec(), np.zeros(len(trial), bool), NetworkFeatures.constant(len(trial)))
    assert len(ds) == 0


def test_all_received_windows_are_clean():
    trial, ds = _windows()
    np.testing.assert_array_equal(ds.encoder_input[..., :3], ds.encoder_clean)
    np.testing.assert_array_equal(ds.encoder_input[..., FLAG_CHANNEL], 0)


def test_all_lost_windows_are_zero():
    mask = np.ones(200, bool)
    _, ds = _windows(mask=mask)
    np.testing.assert_array_equal(ds.encoder_input[..., :3], 0)
    np.testing.assert_array_equal(ds.encoder_input[..., FLAG_CHANNEL], 1)


@given(st.integers(0, 1000))
def test_window_layout_invariants(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random(200) < 0.3
    trial, ds = _windows(mask=mask, seed=seed % 7)
    spec = ds.spec
    for b in range(len(ds)):
        s = ds.start[b]
        np.testing.assert_array_equal(ds.encoder_input[b, :, FLAG_CHANNEL], mask[s:s + spec.L_x])
        np.testing.assert_array_equal(ds.target[b], trial.positions[s + spec.L_x:s + spec.span])
    np.testing.assert_array_equal(ds.decoder_input[:, spec.L_token:, :3], 0)
    np.testing.assert_array_equal(ds.decoder_input[:, :spec.L_token], ds.encoder_input[:, -spec.L_token:])
    lost = ds.encoder_input[..., FLAG_CHANNEL] > 0.5
    np.testing.assert_array_equal(ds.encoder_input[..., :3][lost], 0)


def test_network_features_validation():
    with pytest.raises(ValueError):
        NetworkFeatures([0.5, 1.5], [1, 1], [1, 1])
    with pytest.raises(ValueError):
        NetworkFeatures([0.5], [-1.0], [1.0])
    np.testing.assert_allclose(trailing_loss_rate([1, 0, 1, 1], window=2), [1, 0.5, 0.5, 1])


def test_normalize_round_trip():
    _, ds = _windows(mask=np.random.default_rng(0).random(200) < 0.2)
    norm, stats = normalize(ds)
    back = denormalize(norm, stats)
    for name in ("encoder_input", "decoder_input", "target", "encoder_clean"):
        np.testing.assert_allclose(getattr(back, name), getattr(ds, name), atol=1e-12, rtol=0)
    np.testing.assert_array_equal(norm.encoder_input[..., FLAG_CHANNEL], ds.encoder_input[..., FLAG_CHANNEL])


def test_normalize_constant_channel_floors_std():
    trial = generate_synthetic_trial(200 / 30.0, seed=0)
    mask = np.zeros(200, bool)
    ds = make_windows(trial, WindowSpec(L_x=32, L_token=16, L_y=8, stride=8), mask,
                      NetworkFeatures.constant(200, latency=20.0))
    norm, stats = normalize(ds)
    assert stats.std[5] == 1e-8
    np.testing.assert_array_equal(norm.encoder_input[..., 5], 0)


def test_stats_from_other_split_shift_mean():
    _, a = _windows(seed=0)
    _, b = _windows(seed=1)
    stats = compute_stats(a)
    norm_b, _ = normalize(b, stats)
    assert np.abs(norm_b.target.reshape(-1, 3).mean(axis=0)).max() > 0.1
    norm_a, _ = normalize(a, stats)
    assert np.abs(norm_a.encoder_input[..., NET_CHANNELS].reshape(-1, 3).mean(axis=0)).max() < 1e-10


def test_dataset_save_load_round_trip(tmp_path):
    _, ds = _windows(mask=np.random.default_rng(5).random(200) < 0.2)
    ds.save(tmp_path / "w.bin")
    back = WindowDataset.load(tmp_path / "w.bin")
    assert back.spec == ds.spec and back.dt == ds.dt
    for name in ("encoder_input", "decoder_input", "target", "start", "trial_id"):
        assert getattr(back, name).tobytes() == getattr(ds, name).tobytes()
