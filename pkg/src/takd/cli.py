"""Command-line driver: generate data, train teachers, distill students, evaluate, compare.

Configuration is layered: built-in defaults, then a flat ``key = value``
config file, then command-line ``key=value`` overrides (flags map onto the
same keys). Unknown keys are rejected. Every run writes its fully resolved
configuration into ``run.json`` under the output directory.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 acceptance
check failure (``eval --check``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from . import losses as ls
from . import metrics as mt
from . import pipeline as pl
from . import synth
from .models import EncoderDecoder
from .train import TrainConfig, distill_student, predict, run_strategy, train_teacher

CONFIG_KEYS = {
    "data.subjects": int,
    "data.speeds": str,
    "data.window": int,
    "data.windows_per_trial": int,
    "data.seed": int,
    "data.noise_sigma": float,
    "data.drift_rate": float,
    "train.epochs": int,
    "train.batch": int,
    "train.lr": float,
    "train.seed": int,
    "train.encoder": str,
    "train.objective": str,
    "train.strategy": int,
    "train.holdout": str,
    "train.lambda1": float,
    "train.lambda2": float,
    "train.kappa": float,
    "train.contrastive": float,
    "train.alpha": float,
    "train.wae_adv": float,
    "train.disc_hidden": int,
    "train.validate": bool,
    "train.renormalize": bool,
    "train.scale_lr": bool,
    "eval.batch": int,
    "eval.bins": int,
    "eval.method": str,
    "eval.units": str,
}

DEFAULTS = {
    "data.subjects": 6,
    "data.speeds": "SW,RW,BW,FW",
    "data.window": 200,
    "data.windows_per_trial": 8,
    "data.seed": 0,
    "data.noise_sigma": 0.25,
    "data.drift_rate": 0.01,
    "train.epochs": 40,
    "train.batch": 16,
    "train.lr": None,
    "train.seed": 0,
    "train.encoder": "c3d",
    "train.objective": "ae",
    "train.strategy": 1,
    "train.holdout": "",
    "train.lambda1": 0.01,
    "train.lambda2": 0.1,
    "train.kappa": 0.1,
    "train.contrastive": 0.1,
    "train.alpha": 1.0,
    "train.wae_adv": 0.1,
    "train.disc_hidden": 16,
    "train.validate": True,
    "train.renormalize": True,
    "train.scale_lr": True,
    "eval.batch": 16,
    "eval.bins": 15,
    "eval.method": "",
    "eval.units": "normalized",
}

PRESET_CHOICES = ("takd", "takd-dagger", "takd-ddagger", "sp", "kd", "at")


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw: str):
    kind = CONFIG_KEYS[key]
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {raw!r}") from err


def load_config(path=None, overrides=()) -> dict:
    cfg = dict(DEFAULTS)
    if path is not None:
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            cfg[key] = _parse_value(key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        cfg[key] = _parse_value(key, raw)
    return cfg


def _train_config(cfg: dict) -> TrainConfig:
    weights = ls.LossWeights(lambda1=cfg["train.lambda1"], lambda2=cfg["train.lambda2"],
                             kappa=cfg["train.kappa"], contrastive=cfg["train.contrastive"],
                             alpha=cfg["train.alpha"])
    return TrainConfig(
        epochs=cfg["train.epochs"], batch=cfg["train.batch"], lr=cfg["train.lr"],
        seed=cfg["train.seed"], weights=weights, window=cfg["data.window"],
        strategy=cfg["train.strategy"], objective=cfg["train.objective"],
        encoder=cfg["train.encoder"], wae_adversarial_weight=cfg["train.wae_adv"],
        disc_hidden=cfg["train.disc_hidden"], validate=cfg["train.validate"],
        renormalize=cfg["train.renormalize"], scale_lr_to_batch=cfg["train.scale_lr"],
    )


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("TAKD_THREADS", "1")))
    except ValueError:
        return 1


def _write_provenance(out_dir: Path, subcommand: str, cfg: dict, artifacts: list):
    out_dir.mkdir(parents=True, exist_ok=True)
    run_path = out_dir / "run.json"
    existing = {}
    if run_path.exists():
        existing = json.loads(run_path.read_text())
    existing.update({
        "tool": "takd",
        "version": __version__,
        "subcommand": subcommand,
        "resolved_config": {k: cfg[k] for k in sorted(cfg)},
        "artifacts": artifacts,
    })
    run_path.write_text(json.dumps(existing, indent=1, sort_keys=True))


def cmd_gen_data(args, cfg) -> int:
    speeds = tuple(s.strip() for s in cfg["data.speeds"].split(",") if s.strip())
    ds = synth.generate_dataset(
        n_subjects=cfg["data.subjects"], speeds=speeds,
        windows_per_trial=cfg["data.windows_per_trial"], window=cfg["data.window"],
        seed=cfg["data.seed"], noise_sigma=cfg["data.noise_sigma"],
        drift_rate=cfg["data.drift_rate"])
    out = Path(args.out)
    pl.save_dataset(ds, out)
    _write_provenance(out, "gen-data", cfg, ["manifest.json"])
    counts = ds.counts()
    per_speed = {s: sum(v for k, v in counts.items() if k.endswith("_" + s)) for s in speeds}
    print(f"dataset: {ds.n_windows()} windows -> {out}")
    print("per-speed totals: " + ", ".join(f"{s}={n}" for s, n in per_speed.items()))
    return 0


def _load_training_data(cfg, data_dir):
    ds = pl.load_dataset(data_dir)
    if ds.window != cfg["data.window"]:
        cfg["data.window"] = ds.window
    holdout = cfg["train.holdout"]
    if holdout:
        train_ds, _ = pl.loso_split(ds, holdout)
        if cfg["train.renormalize"]:
            train_ds, _ = pl.renormalize_split(train_ds, ds.subset([holdout]))
        return train_ds
    return ds


def cmd_train_teacher(args, cfg) -> int:
    cfg["train.encoder"] = args.encoder or cfg["train.encoder"]
    cfg["train.objective"] = args.objective or cfg["train.objective"]
    if args.strategy:
        cfg["train.strategy"] = int(args.strategy)
    train_ds = _load_training_data(cfg, args.data)
    config = _train_config(cfg)
    out = Path(args.out)
    if config.strategy == 1:
        model, record = train_teacher(config.encoder, train_ds, config)
    else:
        result, record = run_strategy(config.strategy, config.encoder, train_ds, config)
        model = result["model"]
    record.save(out)
    ckpt = out / "teacher.takd"
    model.save(ckpt)
    _write_provenance(out, "train-teacher", cfg, ["teacher.takd", "losses.csv"])
    print(f"teacher ({config.encoder}, {config.objective}, strategy {config.strategy}) "
          f"-> {ckpt}; final train loss {record.train_loss[-1]:.5g}")
    return 0


def cmd_distill(args, cfg) -> int:
    train_ds = _load_training_data(cfg, args.data)
    config = _train_config(cfg)
    teacher = EncoderDecoder.load(args.teacher)
    preset = args.preset
    plan = preset if preset in ("kd", "at") else ls.tap_plan_preset(preset)
    out = Path(args.out)
    student, record = distill_student(teacher, train_ds, plan, config, log_dir=out)
    record.notes["preset"] = preset
    record.save(out)
    ckpt = out / "student.takd"
    student.save(ckpt)
    _write_provenance(out, "distill", cfg, ["student.takd", "losses.csv", "loss_terms.csv"])
    print(f"student ({preset}) -> {ckpt}; final train loss {record.train_loss[-1]:.5g}")
    return 0


def _metric_norm(cfg, ds):
    units = cfg["eval.units"]
    if units == "normalized":
        return None
    if units == "bodyweight":
        if ds.norm is None:
            raise ConfigError("bodyweight units need normalization constants in the manifest")
        return ds.norm
    raise ConfigError(f"eval.units must be normalized or bodyweight, got {units!r}")


def _eval_subject(model, ds, subject, cfg, method):
    rows, curves = [], {}
    norm = _metric_norm(cfg, ds)
    for speed in ds.speeds:
        key = (subject, speed)
        if key not in ds.insole:
            continue
        x, y = ds.insole[key], ds.grf[key]
        pred = predict(model, x, batch=cfg["eval.batch"])
        rows.append(mt.metric_row(pred, y, method=method, subject=subject, speed=speed,
                                  seed=cfg["train.seed"], bins=cfg["eval.bins"], norm=norm))
        curves[f"sbj{subject}_{speed}"] = (y[0], pred[0])
    return rows, curves


def cmd_eval(args, cfg) -> int:
    if args.check:
        from . import acceptance
        ok = acceptance.run(level=args.level)
        return 0 if ok else 3

    if not args.model or not args.data:
        raise ConfigError("eval needs --model and --data (or --check)")
    ds = pl.load_dataset(args.data)
    model = EncoderDecoder.load(args.model)
    method = cfg["eval.method"] or f"{model.kind}"
    out = Path(args.out)

    all_rows, all_curves = [], {}
    if args.loso:
        subjects = ds.subjects
        workers = _worker_count()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda s: _eval_subject(model, ds, s, cfg, method),
                                        subjects))
        else:
            results = [_eval_subject(model, ds, s, cfg, method) for s in subjects]
        for rows, curves in results:
            all_rows.extend(rows)
            all_curves.update(curves)
    else:
        x, y = ds.stack()
        pred = predict(model, x, batch=cfg["eval.batch"])
        all_rows.append(mt.metric_row(pred, y, method=method, subject="all", speed="all",
                                      seed=cfg["train.seed"], bins=cfg["eval.bins"],
                                      norm=_metric_norm(cfg, ds)))
        all_curves["sample0"] = (y[0], pred[0])

    mt.export_report(all_rows, all_curves, out)
    _write_provenance(out, "eval", cfg, ["metrics.csv", "curves/"])
    for row in all_rows:
        print(f"{row['method']} sbj={row['subject']} speed={row['speed']}: "
              f"rmse={row['rmse']:.5f} mae={row['mae']:.5f} r={row['r']:.5f}")
    return 0


def cmd_compare(args, cfg) -> int:
    runs_dir = Path(args.runs)
    metric_files = sorted(runs_dir.glob("*/metrics.csv")) + \
        ([runs_dir / "metrics.csv"] if (runs_dir / "metrics.csv").exists() else [])
    if not metric_files:
        raise ConfigError(f"no metrics.csv files under {runs_dir}")
    rows = []
    for path in metric_files:
        rows.extend(mt.load_metric_rows(path))
    agg = mt.aggregate_rows(rows, ("method",))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    lines = ["method,n,rmse_mean,rmse_std,mae_mean,mae_std,r_mean,r_std"]
    for entry in agg:
        lines.append(f"{entry['method']},{entry['n']},{entry['rmse_mean']:.10g},"
                     f"{entry['rmse_std']:.10g},{entry['mae_mean']:.10g},{entry['mae_std']:.10g},"
                     f"{entry['r_mean']:.10g},{entry['r_std']:.10g}")
    (out / "aggregate.csv").write_text("\n".join(lines) + "\n")

    methods = [e["method"] for e in agg]
    by_method = {m: [r["rmse"] for r in rows if r["method"] == m] for m in methods}
    t_lines = ["method_a,method_b,t,p"]
    for i, a in enumerate(methods):
        for b in methods[i + 1:]:
            if len(by_method[a]) >= 2 and len(by_method[b]) >= 2:
                try:
                    t_stat, p = mt.welch_ttest(by_method[a], by_method[b])
                    t_lines.append(f"{a},{b},{t_stat:.10g},{p:.10g}")
                except ValueError:
                    t_lines.append(f"{a},{b},,")
    (out / "ttests.csv").write_text("\n".join(t_lines) + "\n")
    _write_provenance(out, "compare", cfg, ["aggregate.csv", "ttests.csv"])

    print(f"{'method':<20} {'n':>3} {'rmse':>18} {'mae':>18} {'r':>18}")
    for e in agg:
        print(f"{e['method']:<20} {e['n']:>3} "
              f"{e['rmse_mean']:.5f} ± {e['rmse_std']:.5f} "
              f"{e['mae_mean']:.5f} ± {e['mae_std']:.5f} "
              f"{e['r_mean']:.5f} ± {e['r_std']:.5f}")
    if len(t_lines) > 1:
        print("\nWelch t-tests (rmse):")
        for line in t_lines[1:]:
            a, b, t_stat, p = line.split(",")
            if t_stat:
                print(f"  {a} vs {b}: t={float(t_stat):.4f} p={float(p):.4g}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="takd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"takd {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--seed", type=int, help="seed for this run")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("overrides", nargs="*", metavar="key=value",
                       help="configuration overrides")

    p = sub.add_parser("gen-data", help="generate a synthetic gait dataset")
    p.add_argument("--subjects", type=int)
    p.add_argument("--speeds")
    p.add_argument("--window", type=int)
    p.add_argument("--windows-per-trial", type=int)
    common(p)

    p = sub.add_parser("train-teacher", help="train an estimation model")
    p.add_argument("--data", required=True)
    p.add_argument("--encoder", choices=("c3d", "i3d", "r2p1d"))
    p.add_argument("--objective", choices=("ae", "wae", "vae"))
    p.add_argument("--strategy", choices=("1", "2", "3"))
    p.add_argument("--holdout", help="subject excluded from training")
    common(p)

    p = sub.add_parser("distill", help="distill the student from a trained teacher")
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--preset", required=True, choices=PRESET_CHOICES)
    p.add_argument("--holdout")
    common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or run acceptance checks)")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--loso", action="store_true", help="report metrics per subject")
    p.add_argument("--check", action="store_true", help="run the acceptance suite")
    p.add_argument("--level", choices=("fast", "full"), default="fast")
    p.add_argument("--method", help="method label for metric rows")
    common(p)

    p = sub.add_parser("compare", help="aggregate metric files and test differences")
    p.add_argument("--runs", required=True)
    common(p)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config, args.overrides)
        if args.seed is not None:
            cfg["data.seed"] = args.seed
            cfg["train.seed"] = args.seed
        if args.subcommand == "gen-data":
            for flag, key in (("subjects", "data.subjects"), ("speeds", "data.speeds"),
                              ("window", "data.window"),
                              ("windows_per_trial", "data.windows_per_trial")):
                value = getattr(args, flag)
                if value is not None:
                    cfg[key] = value
        if getattr(args, "holdout", None):
            cfg["train.holdout"] = args.holdout
        if getattr(args, "method", None):
            cfg["eval.method"] = args.method
        handler = {
            "gen-data": cmd_gen_data,
            "train-teacher": cmd_train_teacher,
            "distill": cmd_distill,
            "eval": cmd_eval,
            "compare": cmd_compare,
        }[args.subcommand]
        return handler(args, cfg)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
