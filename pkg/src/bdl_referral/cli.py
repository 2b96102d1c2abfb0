"""Command-line interface: generate-data, train, evaluate, benchmark, report.

Settings resolve as defaults < ``--config`` file < explicit flags.
"""

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checkpoint
from .bench import BenchmarkConfig, BenchmarkReport, run_benchmark, write_timings
from .data import GeneratorSpec, NormalizationStats, apply_normalization, export_csv, fit_normalization, generate_synthetic, load_csv
from .methods import METHOD_TAGS, make_estimator
from .metrics import DEFAULT_FRACTIONS, oracle_referral_curve, referral_sweep
from .report import FORMATS, emit_plot_data, emit_report

logger = logging.getLogger("bdl_referral")

# BenchmarkConfig fields exposed as flags: name -> (type, is_list)
_CONFIG_FLAGS = {
    "methods": (str, True),
    "n_seeds": (int, False),
    "n_samples": (int, False),
    "learning_rate": (float, False),
    "batch_size": (int, False),
    "dropout_rate": (float, False),
    "l2_coefficient": (float, False),
    "max_epochs": (int, False),
    "patience": (int, False),
    "hidden_layer_sizes": (int, True),
    "alpha": (float, False),
    "deep_ensemble_members": (int, False),
    "ensemble_mc_dropout_members": (int, False),
    "prior_sigma": (float, False),
    "mfvi_estimator": (str, False),
    "kl_mode": (str, False),
    "fractions": (float, True),
    "table_fractions": (float, True),
    "roc_fractions": (float, True),
    "output_dir": (str, False),
    "base_seed": (int, False),
    "n_workers": (int, False),
}


def _add_config_flags(p, names=None):
    p.add_argument("--config", type=Path, help="BenchmarkConfig JSON file")
    for name, (typ, is_list) in _CONFIG_FLAGS.items():
        if names is not None and name not in names:
            continue
        flag = "--" + name.replace("_", "-")
        kwargs = {"type": typ, "default": None, "dest": name}
        if is_list:
            kwargs["nargs"] = "+"
        if name == "methods":
            kwargs["choices"] = METHOD_TAGS
        p.add_argument(flag, **kwargs)


def resolve_config(args):
    """Defaults, overlaid by the config file, overlaid by explicit flags."""
    d = BenchmarkConfig().to_dict()
    if getattr(args, "config", None):
        d.update(json.loads(Path(args.config).read_text()))
    for name in _CONFIG_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            d[name] = v
    if getattr(args, "generator_config", None):
        d["data"] = {"generator": json.loads(Path(args.generator_config).read_text()),
                     "seed": d["data"].get("seed", 0)}
    if getattr(args, "data_seed", None) is not None:
        d["data"] = dict(d["data"], seed=args.data_seed)
    csv_paths = {k: getattr(args, k, None) for k in ("train", "val", "test", "shifted_test")}
    if csv_paths.get("train") and csv_paths.get("test"):
        d["data"] = {"csv": {k: str(v) for k, v in csv_paths.items() if v}}
    known = {f.name for f in fields(BenchmarkConfig)}
    return BenchmarkConfig.from_dict({k: v for k, v in d.items() if k in known})


def cmd_generate_data(args):
    spec = GeneratorSpec.from_json(args.generator_config) if args.generator_config else GeneratorSpec()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = generate_synthetic(spec, args.seed)
    for name, ds in splits.items():
        export_csv(ds, out / f"{name}.csv")
    spec.to_json(out / "generator.json")
    print(f"wrote {', '.join(f'{k}={len(v)}' for k, v in splits.items())} to {out}")
    return 0


def _read_split(path, split):
    ds = load_csv(path, split=None)
    return ds if ds.split == split else ds.__class__(ds.X, ds.y, split, ds.regions, meta=ds.meta)


def cmd_train(args):
    cfg = resolve_config(args)
    data_dir = Path(args.data_dir) if args.data_dir else None
    train_path = args.train or (data_dir / "train.csv")
    val_path = args.val or (data_dir / "val.csv" if data_dir and (data_dir / "val.csv").exists() else None)
    train = _read_split(train_path, "train")
    stats = fit_normalization(train)
    train = apply_normalization(stats, train)
    val = apply_normalization(stats, _read_split(val_path, "val")) if val_path else None
    est = make_estimator(args.method, **cfg.estimator_params(args.method, args.seed))
    est.fit(train.X, train.y, None if val is None else val.X, None if val is None else val.y)
    d = checkpoint.to_dict(est)
    d["normalization"] = {"mean": stats.mean.tolist(), "std": stats.std.tolist()}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(d, sort_keys=True, allow_nan=False) + "\n")
    print(f"trained {args.method} (seed {args.seed}) -> {out}")
    return 0


def cmd_evaluate(args):
    raw = json.loads(Path(args.checkpoint).read_text())
    est = checkpoint.from_dict(raw)
    ds = load_csv(args.data, split=None)
    if "normalization" in raw:
        stats = NormalizationStats(np.asarray(raw["normalization"]["mean"]),
                                   np.asarray(raw["normalization"]["std"]))
        ds = apply_normalization(stats, ds)
    fractions = tuple(args.fractions or DEFAULT_FRACTIONS)
    scored = est.score_predictions(ds.X, ds.y, args.n_samples, args.sampling_seed)
    curve = referral_sweep(scored, fractions)
    oracle = oracle_referral_curve(scored.correctness(), fractions, scored.mean, scored.labels)
    result = {"method_tag": est.method_tag, "data": str(args.data), "curve": curve.to_dict(),
              "oracle": oracle.to_dict()}
    text = json.dumps(result, indent=1, sort_keys=True, allow_nan=False)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print("fraction  accuracy  auc")
    for f, a, u in zip(curve.fractions, curve.accuracy, curve.auc):
        print(f"{f:8.2f}  {a:8.4f}  {'n/a' if u is None else f'{u:.4f}'}")
    return 0


def _write_outputs(report, out_dir, formats, fractions=None):
    emit_report(report, out_dir, formats, fractions)
    emit_plot_data(report, Path(out_dir) / "plots")


def cmd_benchmark(args):
    cfg = resolve_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.to_json(out / "config.json")
    report = run_benchmark(cfg)
    _write_outputs(report, out, FORMATS)
    write_timings(report, out / "timings.json")
    failed = report.failed
    print(f"benchmark written to {out} ({len(report.cells) - len(failed)}/{len(report.cells)} cells ok)")
    for c in failed:
        print(f"  FAILED {c['method']} seed {c['seed_index']}: {c['error']}", file=sys.stderr)
    return 2 if failed else 0


def cmd_report(args):
    report = BenchmarkReport.from_json(args.report)
    _write_outputs(report, args.out_dir, tuple(args.formats), args.fractions)
    print(f"report written to {args.out_dir}")
    return 2 if report.failed else 0


def build_parser():
    parser = argparse.ArgumentParser(prog="bdl-referral", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write the synthetic benchmark splits as CSV")
    p.add_argument("--generator-config", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train one method and write a checkpoint")
    p.add_argument("--method", choices=METHOD_TAGS, required=True)
    p.add_argument("--data-dir", type=Path)
    p.add_argument("--train", type=Path)
    p.add_argument("--val", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p, set(_CONFIG_FLAGS) - {"methods", "n_seeds", "fractions", "table_fractions",
                                               "roc_fractions", "output_dir", "base_seed", "n_workers"})
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="referral curve of a checkpoint on a CSV split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--fractions", type=float, nargs="+")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--sampling-seed", type=int)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="run the multi-seed benchmark and write all reports")
    _add_config_flags(p)
    p.add_argument("--generator-config", type=Path)
    p.add_argument("--data-seed", type=int)
    for name in ("train", "val", "test", "shifted_test"):
        p.add_argument("--" + name.replace("_", "-"), type=Path, dest=name)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("report", help="re-emit tables and plot data from report.json")
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--formats", nargs="+", choices=FORMATS, default=list(FORMATS))
    p.add_argument("--fractions", type=float, nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
