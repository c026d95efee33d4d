"""Command-line entry point: ``teleop-informer <subcommand> ...``.

Every subcommand that writes files also writes ``manifest.json`` into its
output directory, last.  Failures print one ``error: <Type>: <message>`` line
to stderr and exit with status 1; usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import KINDS, TRAINABLE, BaselineConfig, build_baseline, matched_hidden
from .channel import (ChannelParams, SEVERITY_GRID, channel_stats, sample_states, stationary_distribution,
                      states_to_mask, write_mask, read_mask)
from .checks import TINY_MODEL, check_model, check_primitives, tiny_models
from .experiment import (DESK_DATA, DESK_MODEL, DESK_TRAIN, DataConfig, build_splits, compare_models,
                         corrupt_trials, evaluate, synthetic_trials)
from .manifest import write_manifest
from .metrics import ACCURACY_FORMULA
from .model import InformerModel, ModelConfig, load_checkpoint
from .objective import ObjectiveConfig
from .sweep import run_sweep, series_csv, sweep_csv
from .trajectory import (WindowDataset, WindowSpec, format_jigsaws_kinematics, make_windows,
                         read_trial, save_trial, simulate_network_features)
from .training import TrainConfig, train

log = logging.getLogger("teleop_informer")


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    """JSON config with optional sections: data, model, baseline, train, objective, channel."""
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - {"data", "model", "baseline", "train", "objective", "channel"}
    if unknown:
        raise CliError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _override(section: dict, **flags) -> dict:
    out = dict(section)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _data_config(cfg: dict, args) -> DataConfig:
    d = _override(cfg.get("data", {}), n_trials=getattr(args, "trials", None),
                  duration_s=getattr(args, "duration", None), seed=getattr(args, "seed", None))
    return DataConfig.from_dict(d)


def _train_config(cfg: dict, args) -> TrainConfig:
    d = _override(cfg.get("train", {}), epochs=getattr(args, "epochs", None),
                  seed=getattr(args, "seed", None))
    return TrainConfig(**d)


def _channel_params(cfg: dict, args) -> ChannelParams | None:
    if getattr(args, "no_loss", False):
        return None
    seed = args.seed if args.seed is not None else 0
    if getattr(args, "row", None) is not None:
        if not 0 <= args.row < len(SEVERITY_GRID):
            raise CliError(f"--row must be in 0..{len(SEVERITY_GRID) - 1}")
        return ChannelParams(*SEVERITY_GRID[args.row], seed=seed)
    d = dict(cfg.get("channel", {}))
    for key, flag in (("burst_density", "pb"), ("gap_density", "pg"),
                      ("mean_burst_length", "burst_length"), ("mean_gap_length", "gap_length")):
        if getattr(args, flag, None) is not None:
            d[key] = getattr(args, flag)
    if getattr(args, "basic", False):
        d["mean_burst_length"] = d["mean_gap_length"] = None
    d.setdefault("seed", seed)
    if args.seed is not None:
        d["seed"] = args.seed
    if "burst_density" not in d or "gap_density" not in d:
        return ChannelParams(*SEVERITY_GRID[0], seed=d["seed"])
    return ChannelParams(**d)


def _model_for(kind: str, cfg: dict, budget_hint: int | None = None):
    if kind == "informer":
        return InformerModel(ModelConfig.from_dict(cfg.get("model", {})))
    if kind not in TRAINABLE:
        raise CliError(f"unknown trainable model {kind!r}; choose informer or one of {TRAINABLE}")
    b = dict(cfg.get("baseline", {}))
    b["kind"] = kind
    if "hidden" not in b:
        budget = budget_hint or InformerModel(ModelConfig.from_dict(cfg.get("model", {}))).parameter_count()
        keys = {k: b[k] for k in ("L_x", "L_token", "L_y") if k in b}
        b["hidden"] = matched_hidden(kind, budget, **keys)
    return build_baseline(BaselineConfig.from_dict(b))


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    data = _data_config(cfg, args)
    out = _out_dir(args.out)
    trials = synthetic_trials(data)
    files = []
    for i, t in enumerate(trials):
        path = out / f"synthetic_{i:03d}.txt"
        path.write_text(format_jigsaws_kinematics({t.arm: t}))
        files.append(path.name)
    write_manifest(out, "gen-data", {"data": data.to_dict()}, data.seed,
                   {"trials": len(trials), "frames_per_trial": len(trials[0]) if trials else 0}, files)
    print(f"wrote {len(files)} trials to {out}")
    return 0


def cmd_parse(args) -> int:
    out = _out_dir(args.out)
    files, summary = [], {}
    for src in args.files:
        trial = read_trial(src, arm=args.arm)
        name = Path(src).stem + ".trial"
        save_trial(trial, out / name)
        files.append(name)
        summary[Path(src).name] = len(trial)
        print(f"{src}: {len(trial)} frames, arm {args.arm}")
    write_manifest(out, "parse", {"arm": args.arm, "inputs": [str(f) for f in args.files]}, None,
                   {"frames": summary}, files)
    return 0


def cmd_channel(args) -> int:
    cfg = load_config(args.config)
    params = _channel_params(cfg, args)
    T = params.transition_matrix()
    states = sample_states(T, args.steps, params.seed)
    stats = channel_stats(states)
    pi = stationary_distribution(T)
    report = {
        "mode": "extended" if params.extended else "basic",
        "params": dataclasses.asdict(params),
        "steps": args.steps,
        "empirical_loss_rate": stats["loss_rate"],
        "stationary_loss_rate": float(pi[2] + pi[3]),
        "empirical_state_frequencies": [float(x) for x in stats["state_frequencies"]],
        "stationary_distribution": [float(x) for x in pi],
        "mean_loss_run": stats["mean_loss_run"],
        "mean_burst_period": stats["mean_burst_period"],
        "mean_gap_period": stats["mean_gap_period"],
    }
    print(json.dumps(report, indent=2))
    if args.out:
        out = _out_dir(args.out)
        write_mask(out / "mask.txt", states_to_mask(states))
        write_manifest(out, "channel", {"channel": dataclasses.asdict(params), "steps": args.steps},
                       params.seed, report, ["mask.txt"])
    return 0


def cmd_corrupt(args) -> int:
    cfg = load_config(args.config)
    data = _data_config(cfg, args)
    params = _channel_params(cfg, args)
    out = _out_dir(args.out)
    if args.trials_from:
        trials = [read_trial(p, arm=args.arm) for p in args.trials_from]
    else:
        trials = synthetic_trials(data)
    if args.mask:
        if len(trials) != 1:
            raise CliError("--mask replays a single trace and needs exactly one trial")
        mask = read_mask(args.mask)
        if len(mask) != len(trials[0]):
            raise CliError(f"mask length {len(mask)} != trial length {len(trials[0])}")
        net = simulate_network_features(mask, data.latency_ms, data.jitter_ms, seed=data.seed)
        ds = make_windows(trials[0], data.window, mask, net, trial_id=0)
    else:
        ds = corrupt_trials(trials, params, data)
    ds.save(out / "windows.bin")
    loss = float(ds.mask.mean()) if len(ds) else 0.0
    write_manifest(out, "corrupt", {"data": data.to_dict(),
                                    "channel": None if params is None else dataclasses.asdict(params)},
                   data.seed, {"windows": len(ds), "encoder_loss_fraction": loss}, ["windows.bin"])
    print(f"wrote {len(ds)} windows (encoder loss fraction {loss:.4f}) to {out / 'windows.bin'}")
    return 0


def _datasets(args, cfg, data):
    """(train, val, test) from --data windows file(s) or freshly generated synthetic data."""
    if args.data:
        ds = WindowDataset.load(args.data)
        ids = np.unique(ds.trial_id)
        if len(ids) < 3:
            raise CliError("windows file needs at least 3 trials for a train/val/test split")
        n_test = max(1, round(len(ids) * data.n_test / data.n_trials))
        n_val = max(1, round(len(ids) * data.n_val / data.n_trials))
        tr_ids, va_ids, te_ids = ids[:-(n_val + n_test)], ids[-(n_val + n_test):-n_test], ids[-n_test:]
        pick = lambda sel: ds.subset(np.flatnonzero(np.isin(ds.trial_id, sel)))
        return pick(tr_ids), pick(va_ids), pick(te_ids)
    return build_splits(data, _channel_params(cfg, args))


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    data = _data_config(cfg, args)
    tcfg = _train_config(cfg, args)
    objective = ObjectiveConfig.from_dict(cfg["objective"]) if "objective" in cfg else ObjectiveConfig.plain()
    if args.model in TRAINABLE:
        objective = ObjectiveConfig.plain()
    model = _model_for(args.model, cfg)
    tr, va, te = _datasets(args, cfg, data)
    out = _out_dir(args.out)
    result = train(model, tr, va, objective, tcfg,
                   progress=(lambda r: print(f"epoch {r['epoch']}: train {r['train_total']:.6g} "
                                             f"val_mse {r['val_mse']:.6g}")) if args.verbose else None)
    model.save(out / "checkpoint.bin", extra={"best_epoch": result.best_epoch})
    result.write_csv(out / "history.csv")
    report, _ = evaluate(model, te)
    (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    write_manifest(out, "train", {"model_kind": args.model, "model": model.config.to_dict(),
                                  "data": data.to_dict(), "train": tcfg.to_dict(),
                                  "objective": objective.to_dict(),
                                  "parameter_count": model.parameter_count()},
                   tcfg.seed, {"best_epoch": result.best_epoch, "test": report.to_dict(),
                               "history_last": result.history[-1] if result.history else None},
                   ["checkpoint.bin", "history.csv", "metrics.json"])
    print(f"{args.model}: best epoch {result.best_epoch}, test MSE {report.meters.mse:.6g} m^2")
    return 0


def _expected_config(cfg: dict, kind: str):
    if kind == "informer":
        return ModelConfig.from_dict(cfg["model"]) if "model" in cfg else None
    return BaselineConfig.from_dict({**cfg["baseline"], "kind": kind}) if "baseline" in cfg else None


def _load(args, cfg):
    model = load_checkpoint(args.checkpoint)
    expected = _expected_config(cfg, model.kind)
    if expected is not None:
        model = load_checkpoint(args.checkpoint, expected)
    return model


def cmd_predict(args) -> int:
    cfg = load_config(args.config)
    model = _load(args, cfg)
    ds = WindowDataset.load(args.data)
    out = _out_dir(args.out)
    from .experiment import predict_dataset
    pred = predict_dataset(model, ds)
    (out / "predictions.csv").write_text(series_csv(ds, pred))
    write_manifest(out, "predict", {"checkpoint": str(args.checkpoint), "model": model.config.to_dict()},
                   None, {"windows": len(ds)}, ["predictions.csv"])
    print(f"wrote {len(ds)} window predictions to {out / 'predictions.csv'}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    ds = WindowDataset.load(args.data)
    if args.baseline:
        model, config = args.baseline, {"baseline": args.baseline}
    else:
        model = _load(args, cfg)
        config = {"checkpoint": str(args.checkpoint), "model": model.config.to_dict()}
    report, _ = evaluate(model, ds)
    text = json.dumps(report.to_dict(), indent=2)
    print(f"# {ACCURACY_FORMULA}")
    print(text)
    if args.out:
        out = _out_dir(args.out)
        (out / "metrics.json").write_text(text + "\n")
        write_manifest(out, "evaluate", config, None, report.to_dict(), ["metrics.json"])
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    data = _data_config(cfg, args)
    tcfg = _train_config(cfg, args)
    mcfg = ModelConfig.from_dict(cfg.get("model", {}))
    objective = ObjectiveConfig.from_dict(cfg["objective"]) if "objective" in cfg else ObjectiveConfig.plain()
    seed = data.seed
    rows_sel = args.rows if args.rows is not None else list(range(len(SEVERITY_GRID)))
    grid = [ChannelParams(*SEVERITY_GRID[i], seed=seed) for i in rows_sel]
    out = _out_dir(args.out)
    rows = run_sweep(grid, data, mcfg, tcfg, objective, out_dir=out, retrain=args.retrain)
    print(f"# {ACCURACY_FORMULA}")
    print(sweep_csv(rows), end="")
    write_manifest(out, "sweep", {"data": data.to_dict(), "model": mcfg.to_dict(), "train": tcfg.to_dict(),
                                  "objective": objective.to_dict(), "retrain": args.retrain,
                                  "rows": rows_sel, "pooling": "all windows, steps and axes"},
                   seed, {"rows": [dataclasses.asdict(r) for r in rows]}, ["sweep.csv"])
    return 0 if all(r.ok for r in rows) else 1


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    if not cfg:
        cfg = {"data": DESK_DATA.to_dict(), "model": dict(DESK_MODEL), "train": dict(DESK_TRAIN)}
    data = _data_config(cfg, args)
    tcfg = _train_config(cfg, args)
    mcfg = ModelConfig.from_dict(cfg.get("model", {}))
    params = _channel_params(cfg, args)
    out = _out_dir(args.out)
    print(f"# {ACCURACY_FORMULA}")
    print("model,parameters,MSE,MAE,RMSE,accuracy_x,accuracy_y,accuracy_z,seconds")

    def show(e):
        m = e.report.meters
        print(",".join([e.kind, str(e.parameters), repr(m.mse), repr(m.mae), repr(m.rmse),
                        *(f"{a:.4f}" for a in e.report.accuracy), f"{e.seconds:.1f}"]), flush=True)

    entries = compare_models(params, data, mcfg, tcfg, progress=show)
    rows = ["model,parameters,MSE,MAE,RMSE,accuracy_x,accuracy_y,accuracy_z"]
    for e in entries.values():
        m = e.report.meters
        rows.append(",".join([e.kind, str(e.parameters), repr(m.mse), repr(m.mae), repr(m.rmse),
                              *(repr(a) for a in e.report.accuracy)]))
    (out / "comparison.csv").write_text("\n".join(rows) + "\n")
    write_manifest(out, "compare", {"data": data.to_dict(), "model": mcfg.to_dict(), "train": tcfg.to_dict(),
                                    "channel": None if params is None else dataclasses.asdict(params)},
                   tcfg.seed, {k: {"test": e.report.to_dict(), "parameters": e.parameters,
                                   "best_epoch": e.best_epoch, "seconds": e.seconds}
                               for k, e in entries.items()}, ["comparison.csv"])
    return 0


def cmd_grad_check(args) -> int:
    prim = check_primitives(args.seed or 0)
    worst = 0.0
    for name, err in prim.items():
        print(f"{name:24s} {err:.3e}")
        worst = max(worst, err)
    models = tiny_models() if args.tiny else {}
    if not args.tiny:
        models = {"informer": InformerModel(ModelConfig(**TINY_MODEL))}
    for name, model in models.items():
        err = check_model(model)
        print(f"{'model:' + name:24s} {err:.3e}")
        worst = max(worst, err)
    tol = 1e-4
    print(f"max relative error {worst:.3e} (tolerance {tol:g})")
    if worst >= tol:
        raise CliError(f"gradient check failed: max relative error {worst:.3e} >= {tol:g}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _channel_flags(p):
    g = p.add_argument_group("channel")
    g.add_argument("--row", type=int, help="use parameter row 0-5 of the severity table")
    g.add_argument("--pb", type=float, help="burst density P_B")
    g.add_argument("--pg", type=float, help="gap density P_G")
    g.add_argument("--burst-length", type=float, help="mean burst period (extended mode)")
    g.add_argument("--gap-length", type=float, help="mean gap period (extended mode)")
    g.add_argument("--basic", action="store_true", help="basic 4-state matrix (no period lengths)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="teleop-informer", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="write synthetic trials in the 76-column kinematics format")
    s.add_argument("--out", required=True)
    s.add_argument("--trials", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("parse", help="convert kinematics text files to the internal trial format")
    s.add_argument("files", nargs="+")
    s.add_argument("--arm", default="slave-left")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_parse)

    s = sub.add_parser("channel", help="simulate the loss channel and compare with the stationary oracle")
    _channel_flags(s)
    s.add_argument("--steps", type=int, default=1_000_000)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--config")
    s.set_defaults(fn=cmd_channel)

    s = sub.add_parser("corrupt", help="apply channel loss to trials and build windows")
    _channel_flags(s)
    s.add_argument("--trials-from", nargs="*", help="trial files (kinematics text or .trial); default synthetic")
    s.add_argument("--arm", default="slave-left")
    s.add_argument("--mask", help="replay a recorded mask trace instead of simulating")
    s.add_argument("--no-loss", action="store_true")
    s.add_argument("--trials", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(fn=cmd_corrupt)

    s = sub.add_parser("train", help="train the Informer or a baseline")
    s.add_argument("--model", default="informer", help="informer, elman-rnn, lstm or tcn")
    s.add_argument("--data", help="windows file; default: synthetic data from the config")
    _channel_flags(s)
    s.add_argument("--no-loss", action="store_true")
    s.add_argument("--trials", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("predict", help="write per-step predictions for a windows file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(fn=cmd_predict)

    s = sub.add_parser("evaluate", help="metrics for a checkpoint or closed-form baseline")
    who = s.add_mutually_exclusive_group(required=True)
    who.add_argument("--checkpoint")
    who.add_argument("--baseline", choices=[k for k in KINDS if k not in TRAINABLE])
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.add_argument("--config", help="expected configuration; a mismatch is an error")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("sweep", help="evaluate across the channel severity table")
    s.add_argument("--retrain", action="store_true", help="train one model per row")
    s.add_argument("--rows", type=int, nargs="*")
    s.add_argument("--trials", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(fn=cmd_sweep)

    s = sub.add_parser("compare", help="train and evaluate the Informer and every baseline on one dataset")
    _channel_flags(s)
    s.add_argument("--no-loss", action="store_true")
    s.add_argument("--trials", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="default: the desk-scale preset")
    s.set_defaults(fn=cmd_compare)

    s = sub.add_parser("grad-check", help="finite-difference gradient verification")
    s.add_argument("--tiny", action="store_true", help="also check every tiny trainable model")
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_grad_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (CliError, ValueError, FloatingPointError, OSError, KeyError, TypeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
