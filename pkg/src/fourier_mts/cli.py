"""Command line entry point: ``fourier-mts <command> [options]``.

Settings resolve as command-line flags > ``--config`` file > built-in
defaults. The config file is flat ``key = value`` text, ``#`` for comments,
with keys spelled like the long flags (``embed_dim``, ``lr``, ...).

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 training failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import experiments as ex
from .data import DIFFICULTY, load_manifest, load_ts, serialize_ts, synth_dataset, validate_against_manifest
from .exceptions import ConfigurationError, DataError, FourierMTSError, TrainingError
from .model import SEARCH_SPACE, ModelConfig, ModuleKind, build_model, save_checkpoint
from .pareto import emit_front_plot, pareto_front, points_from_records, query_front
from .training import TrainConfig, evaluate, split_train_val, train

logger = logging.getLogger("fourier_mts")

OUTPUT_ROOT_ENV = "FOURIER_MTS_OUTPUT_ROOT"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bounds(key):
    return "{" + ",".join(str(v) for v in SEARCH_SPACE[key]) + "}"


# (flag dest, type, default, help)
MODEL_OPTS = [
    ("embed_dim", int, 16, "embedding width d_model"),
    ("heads", int, 4, f"attention heads; {_bounds('num_heads')} under --paper-protocol"),
    ("layers_fft", int, 1, f"FFT layers {_bounds('layers_fft')}; 0 removes the module"),
    ("layers_ifft", int, 1, f"IFFT layers {_bounds('layers_ifft')}; 0 removes the module"),
    ("layers_mha", int, 1, f"MHA layers {_bounds('layers_mha')}; 0 removes the module"),
    ("layers_ffn", int, 1, f"feed-forward layers {_bounds('layers_ffn')}; 0 removes the module"),
    ("dropout", float, 0.1, f"dropout rate; {_bounds('dropout')} under --paper-protocol"),
    ("ffn_hidden", int, 32, "feed-forward hidden width"),
    ("embed_kernel", int, 3, "embedding convolution kernel size"),
    ("spectral_norm", str, "ortho", "FFT/IFFT layer scaling: ortho or backward"),
    ("remove", str, "", "comma-separated modules to drop (EMBED,FFT,IFFT,MHA,FFN,GAP,BN,ACT)"),
]
TRAIN_OPTS = [
    ("lr", float, 1e-3, f"learning rate; {_bounds('learning_rate')} under --paper-protocol"),
    ("batch_size", int, 8, f"batch size; {_bounds('batch_size')} under --paper-protocol"),
    ("epochs", int, 50, "maximum epochs"),
    ("patience", int, None, "early-stopping patience in epochs (off by default)"),
    ("val_fraction", float, 0.2, "fraction of the training set held out for validation"),
    ("timing_epochs", int, 3, "epochs in the timing pass (first one is warm-up)"),
]
DATA_OPTS = [
    ("train", str, None, "training split .ts file"),
    ("test", str, None, "test split .ts file"),
    ("synth", str, None, "synthetic data instead of files, e.g. classes=3,dims=2,length=32,n=30,difficulty=mid,seed=0"),
]
RUN_OPTS = [
    ("seeds", str, "0,1,2,3,4", "comma-separated training seeds"),
    ("jobs", int, 1, "parallel accuracy runs per config (timing always serial)"),
]


def _add_opts(p, opts):
    for dest, typ, default, help_ in opts:
        shown = "" if default in (None, "") else f" (default: {default})"
        p.add_argument("--" + dest.replace("_", "-"), dest=dest, type=typ, default=None,
                       help=help_ + shown)


def _defaults():
    return {dest: default for dest, _, default, _ in MODEL_OPTS + TRAIN_OPTS + DATA_OPTS + RUN_OPTS}


def _types():
    return {dest: typ for dest, typ, _, _ in MODEL_OPTS + TRAIN_OPTS + DATA_OPTS + RUN_OPTS}


def read_config_file(path):
    """Parse a flat ``key = value`` file into a dict of typed values."""
    types = _types()
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key in ("paper_protocol",):
                out[key] = value.lower() in ("1", "true", "yes")
                continue
            if key not in types:
                raise UsageError(f"{path}:{n}: unknown key {key!r}")
            try:
                out[key] = types[key](value)
            except ValueError:
                raise UsageError(f"{path}:{n}: bad value for {key}: {value!r}") from None
    return out


def resolve_settings(args):
    settings = _defaults()
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for key in settings:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    settings["paper_protocol"] = bool(getattr(args, "paper_protocol", False)) or bool(
        settings.get("paper_protocol", False)
    )
    return settings


def _out_dir(args):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    out = Path(args.out) if args.out else Path(root or "runs")
    if root and args.out and not Path(args.out).is_absolute():
        out = Path(root) / args.out
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _parse_synth(text):
    spec = {"classes": 3, "dims": 2, "length": 32, "n": 30, "difficulty": "mid", "seed": 0}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise UsageError(f"bad --synth item {part!r}")
        k, v = part.split("=", 1)
        if k not in spec:
            raise UsageError(f"unknown --synth key {k!r}")
        spec[k] = v if k == "difficulty" and v in DIFFICULTY else (float(v) if k == "difficulty" else int(v))
    return spec


def load_data(settings):
    if settings["synth"]:
        s = _parse_synth(settings["synth"])
        return synth_dataset(s["seed"], s["classes"], s["dims"], s["length"], s["n"], s["difficulty"])
    if not settings["train"] or not settings["test"]:
        raise UsageError("give --train and --test .ts files, or --synth")
    train_ds = load_ts(settings["train"], partition="train")
    test_ds = load_ts(settings["test"], partition="test")
    if (train_ds.dims, train_ds.length) != (test_ds.dims, test_ds.length):
        raise DataError("train and test splits differ in dims/length")
    if train_ds.class_names != test_ds.class_names:
        raise DataError("train and test splits declare different class labels")
    return train_ds, test_ds


def build_configs(settings, train_ds):
    try:
        remove = [ModuleKind(m.strip().upper()) for m in settings["remove"].split(",") if m.strip()]
    except ValueError:
        raise UsageError(f"unknown module in --remove {settings['remove']!r}; "
                         f"choose from {','.join(str(k) for k in ModuleKind)}") from None
    mcfg = ModelConfig(
        input_dims=train_ds.dims,
        seq_len=train_ds.length,
        num_classes=train_ds.num_classes,
        embed_dim=settings["embed_dim"],
        num_heads=settings["heads"],
        layers_fft=settings["layers_fft"],
        layers_ifft=settings["layers_ifft"],
        layers_mha=settings["layers_mha"],
        layers_ffn=settings["layers_ffn"],
        dropout=settings["dropout"],
        ffn_hidden_dim=settings["ffn_hidden"],
        embed_kernel=settings["embed_kernel"],
        spectral_norm=settings["spectral_norm"],
    ).without(*remove)
    tcfg = TrainConfig(
        learning_rate=settings["lr"],
        batch_size=settings["batch_size"],
        max_epochs=settings["epochs"],
        seed=_seeds(settings)[0],
        val_fraction=settings["val_fraction"],
        early_stop_patience=settings["patience"],
    )
    pp = settings["paper_protocol"]
    mcfg.validate(paper_protocol=pp)
    tcfg.validate(paper_protocol=pp)
    return mcfg, tcfg


def _seeds(settings):
    try:
        seeds = [int(s) for s in str(settings["seeds"]).split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad --seeds {settings['seeds']!r}") from None
    if not seeds:
        raise UsageError("seed list is empty")
    return seeds


# commands ---------------------------------------------------------------------------


def cmd_gen_synth(args):
    out = _out_dir(args)
    tr, te = synth_dataset(args.seed, args.classes, args.dims, args.length, args.n_per_class,
                           float(args.difficulty) if args.difficulty not in DIFFICULTY else args.difficulty,
                           name=args.name)
    for ds, tag in ((tr, "TRAIN"), (te, "TEST")):
        path = out / f"{args.name}_{tag}.ts"
        path.write_text(serialize_ts(ds), encoding="utf-8")
        print(path)
    return EXIT_OK


def cmd_inspect_data(args):
    ds = load_ts(args.path)
    counts = {name: int((ds.y == i).sum()) for i, name in enumerate(ds.class_names)}
    print(f"name={ds.name} partition={ds.partition} samples={len(ds)} dims={ds.dims} "
          f"length={ds.length} classes={ds.num_classes}")
    print("class counts: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    if args.code:
        report = validate_against_manifest(ds, args.code)
        if report.ok:
            print(f"matches manifest row {args.code}")
        else:
            for key, exp, got in report.mismatches:
                print(f"mismatch {key}: expected {exp}, got {got}")
    return EXIT_OK


def cmd_train(args):
    settings = resolve_settings(args)
    train_ds, test_ds = load_data(settings)
    mcfg, tcfg = build_configs(settings, train_ds)
    out = _out_dir(args)
    fit_ds, val_ds = (split_train_val(train_ds, tcfg.seed, tcfg.val_fraction)
                      if tcfg.val_fraction > 0 else (train_ds, None))
    model = build_model(mcfg, tcfg.seed)
    model, history = train(model, fit_ds, tcfg, val=val_ds)
    acc = evaluate(model, test_ds)
    save_checkpoint(model, out / "model.ckpt")
    history.to_csv(out / "history.csv")
    times = [e.wall_time_s for e in history.epochs[1:]] or [e.wall_time_s for e in history.epochs]
    epoch_time = sorted(times)[len(times) // 2] if times else float("nan")
    summary = {"accuracy": acc, "param_count": model.n_params(), "epoch_time_s": epoch_time,
               "best_epoch": history.best_epoch, "epochs": len(history)}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True) + "\n")
    print(f"accuracy={acc:.4f} params={model.n_params()} epoch_time_s={epoch_time:.4f}")
    return EXIT_OK


def _finish_records(records, out, title, extra_table=None):
    ex.write_records_csv(records, out / "records.csv")
    ex.write_records_jsonl(records, out / "records.jsonl")
    table = ex.format_table(records, title)
    if extra_table:
        table += "\n\n" + extra_table
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    failed = [r for r in records if r.failed]
    if failed:
        print(f"{len(failed)} of {len(records)} runs failed: " + ", ".join(r.record_id for r in failed))
    return EXIT_TRAIN if len(failed) == len(records) else EXIT_OK


def _sweep_setup(args):
    settings = resolve_settings(args)
    train_ds, test_ds = load_data(settings)
    mcfg, tcfg = build_configs(settings, train_ds)
    kw = {"seeds": _seeds(settings), "timing_epochs": settings["timing_epochs"],
          "n_jobs": settings["jobs"]}
    return settings, train_ds, test_ds, mcfg, tcfg, kw, _out_dir(args)


def cmd_ablate(args):
    _, tr, te, mcfg, tcfg, kw, out = _sweep_setup(args)
    records = ex.run_ablation(mcfg, tr, te, tcfg, **kw)
    return _finish_records(records, out, f"Ablation on {tr.name}")


def cmd_prune(args):
    _, tr, te, mcfg, tcfg, kw, out = _sweep_setup(args)
    order = ex.PRUNING_ORDER
    if args.order == "derived":
        if args.ablation_records:
            ablation = ex.read_records_jsonl(args.ablation_records)
        else:
            ablation = ex.run_ablation(mcfg, tr, te, tcfg, **kw)
            ex.write_records_jsonl(ablation, out / "ablation_records.jsonl")
        order = tuple(ex.rank_contributions(ablation))
    print("pruning order: " + ", ".join(str(m) for m in order))
    records = ex.run_pruning(mcfg, tr, te, tcfg, order=order, **kw)
    return _finish_records(records, out, f"Module-by-module pruning on {tr.name}")


def cmd_stack(args):
    _, tr, te, mcfg, tcfg, kw, out = _sweep_setup(args)
    records = ex.run_stacking(mcfg, tr, te, tcfg, **kw)
    ok = [r for r in records if not r.failed]
    norm = dict(zip((r.record_id for r in ok), map(float, ex.normalized_efficiency(ok))))
    lines = ["record_id,eff_cost,eff_score,normalized_eff_cost"]
    rows = ["record_id | eff_cost | normalized"]
    for r in records:
        n = norm.get(r.record_id, float("nan"))
        lines.append(f"{r.record_id},{r.efficiency_cost!r},{r.efficiency_score!r},{n!r}")
        rows.append(f"{r.record_id} | {r.efficiency_cost:.4g} | {n:.3f}")
    (out / "efficiency.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return _finish_records(records, out, f"Stacking on {tr.name}", "\n".join(rows))


def cmd_sweep(args):
    _, tr, te, mcfg, tcfg, kw, out = _sweep_setup(args)
    records = ex.run_random_sample(mcfg, tr, te, tcfg, args.n, seed=args.sample_seed, **kw)
    return _finish_records(records, out, f"Random sweep on {tr.name}")


def cmd_pareto(args):
    out = _out_dir(args)
    records = []
    for path in args.records:
        try:
            records.extend(ex.read_records_csv(path))
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"cannot read records from {path}: {exc}") from None
    points = points_from_records(records)
    if not points:
        raise DataError("no valid records to analyse")
    front = pareto_front(points)
    # points_from_records keeps record order, so zip back by position
    usable = [r for r in records if points_from_records([r])]
    owner = {id(p): r for p, r in zip(points, usable)}
    front_records = [owner[id(p)] for p in front]
    with open(out / "frontier.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=ex.CSV_FIELDS)
        w.writeheader()
        for r in front_records:
            w.writerow(r.row)
    emit_front_plot(points, front, out / "front.svg")
    print(f"{len(points)} points, {len(front)} on the front")
    for p in front:
        print(f"  {p.record_id}: efficiency={p.efficiency_score:.6g} accuracy={p.accuracy:.4f}")
    if args.min_accuracy is not None or args.min_efficiency is not None:
        if args.min_accuracy is not None:
            hit = query_front(front, min_accuracy=args.min_accuracy)
            bound = f"accuracy >= {args.min_accuracy}"
        else:
            hit = query_front(front, min_efficiency=args.min_efficiency)
            bound = f"efficiency >= {args.min_efficiency}"
        if hit is None:
            print(f"{bound}: unattainable on this front")
        else:
            print(f"{bound}: {hit.record_id} (efficiency={hit.efficiency_score:.6g}, "
                  f"accuracy={hit.accuracy:.4f})")
    return EXIT_OK


# parser -----------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="fourier-mts", description="Fourier-Transformer time-series classification and module sweeps.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True):
        p.add_argument("--out", help=f"output directory (under ${OUTPUT_ROOT_ENV} when set)")
        if data:
            p.add_argument("--config", help="key = value settings file")
            p.add_argument("--paper-protocol", action="store_true",
                           help="restrict settings to the published hyperparameter grid")
            _add_opts(p, DATA_OPTS)
            _add_opts(p, MODEL_OPTS)
            _add_opts(p, TRAIN_OPTS)
            _add_opts(p, RUN_OPTS)

    p = sub.add_parser("train", help="train one config and evaluate it")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="remove each module in turn (9 records)")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("prune", help="remove modules cumulatively (9 records)")
    common(p)
    p.add_argument("--order", choices=("default", "derived"), default="default",
                   help="fixed order MHA,FFT,IFFT,FFN,GAP,BN,EMBED,ACT or one ranked from an ablation")
    p.add_argument("--ablation-records", help="records.jsonl of an earlier ablation for --order derived")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("stack", help="add modules from least to most important (9 records)")
    common(p)
    p.set_defaults(func=cmd_stack)

    p = sub.add_parser("sweep", help="train configs drawn at random from the hyperparameter grid")
    common(p)
    p.add_argument("--n", type=int, default=25, help="number of configs (default: 25)")
    p.add_argument("--sample-seed", type=int, default=0, help="seed for drawing configs")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pareto", help="efficiency/accuracy Pareto front from records CSVs")
    common(p, data=False)
    p.add_argument("records", nargs="+", help="records.csv files")
    p.add_argument("--min-accuracy", type=float, help="report the most efficient point reaching this accuracy")
    p.add_argument("--min-efficiency", type=float, help="report the most accurate point reaching this efficiency")
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("gen-synth", help="write a synthetic dataset as .ts files")
    common(p, data=False)
    p.add_argument("--name", default="Synthetic")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dims", type=int, default=2)
    p.add_argument("--length", type=int, default=32)
    p.add_argument("--n-per-class", type=int, default=30)
    p.add_argument("--difficulty", default="mid",
                   help=f"noise std or one of {sorted(DIFFICULTY)} (default: mid)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("inspect-data", help="summarize a .ts file, optionally against a manifest row")
    p.add_argument("path")
    p.add_argument("--code", choices=sorted(load_manifest()), help="dataset code to check against")
    p.set_defaults(func=cmd_inspect_data)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FourierMTSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
