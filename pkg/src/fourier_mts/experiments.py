"""Ablation, cumulative pruning, stacking and random-sweep protocols.

Each protocol trains a family of configs over several seeds and returns one
:class:`ExperimentRecord` per config. Accuracy runs for a config may execute
in parallel; the epoch-timing pass always runs serially under a lock so
measurements are not polluted by concurrent work.
"""

from __future__ import annotations

import csv
import json
import logging
import threading
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import TimeSeriesDataset
from .exceptions import ContractError, FourierMTSError
from .model import SEARCH_SPACE, ModelConfig, ModuleKind, build_model, param_count
from .training import TrainConfig, evaluate, split_train_val, train, epoch_times

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentRecord",
    "PAPER_SEEDS",
    "PRUNING_ORDER",
    "STACKING_ORDER",
    "run_config",
    "run_ablation",
    "run_pruning",
    "run_stacking",
    "run_random_sample",
    "rank_contributions",
    "normalized_efficiency",
    "efficiency_deltas",
    "sample_configs",
    "format_table",
    "write_records_csv",
    "read_records_csv",
    "write_records_jsonl",
    "read_records_jsonl",
    "CSV_FIELDS",
]

PAPER_SEEDS = (0, 1, 2, 3, 4)

PRUNING_ORDER = (
    ModuleKind.MHA,
    ModuleKind.FFT,
    ModuleKind.IFFT,
    ModuleKind.FFN,
    ModuleKind.GAP,
    ModuleKind.BN,
    ModuleKind.EMBED,
    ModuleKind.ACT,
)
STACKING_ORDER = tuple(reversed(PRUNING_ORDER))

ALL_MODULES = frozenset(ModuleKind)
_ENUM_ORDER = {k: i for i, k in enumerate(ModuleKind)}

_TIMING_LOCK = threading.Lock()


@dataclass
class ExperimentRecord:
    """Outcome of training one config over several seeds."""

    record_id: str
    protocol: str
    dataset: str
    model_config: dict
    train_config: dict
    modules_present: tuple
    seeds_used: tuple
    accuracies: tuple
    accuracy_mean: float
    accuracy_std: float
    epoch_time_s: float
    epoch_time_mean_s: float
    param_count: int
    efficiency_cost: float
    efficiency_score: float
    status: str = "ok"
    error: str = ""

    @property
    def failed(self):
        return self.status != "ok"

    @property
    def modules(self):
        return frozenset(ModuleKind(m) for m in self.modules_present)

    @classmethod
    def build(cls, record_id, protocol, dataset, mcfg, tcfg, seeds, accuracies,
              epoch_time_s, epoch_time_mean_s, status="ok", error=""):
        accs = tuple(float(a) for a in accuracies)
        n_params = param_count(mcfg)
        cost = float(epoch_time_s) * n_params
        return cls(
            record_id=record_id,
            protocol=protocol,
            dataset=dataset,
            model_config=mcfg.to_dict(),
            train_config=asdict(tcfg),
            modules_present=tuple(sorted((str(m) for m in mcfg.modules_present()),
                                         key=lambda m: _ENUM_ORDER[ModuleKind(m)])),
            seeds_used=tuple(int(s) for s in seeds),
            accuracies=accs,
            accuracy_mean=float(np.mean(accs)) if accs else float("nan"),
            accuracy_std=float(np.std(accs)) if accs else float("nan"),
            epoch_time_s=float(epoch_time_s),
            epoch_time_mean_s=float(epoch_time_mean_s),
            param_count=n_params,
            efficiency_cost=cost,
            efficiency_score=1.0 / cost if cost > 0 else float("nan"),
            status=status,
            error=error,
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("modules_present", "seeds_used", "accuracies"):
            d[key] = tuple(d[key])
        return cls(**d)


# running ------------------------------------------------------------------------


def _seed_accuracy(mcfg, train_ds, test_ds, tcfg, seed):
    # the seed drives the validation split too, exactly as a standalone train() would
    model = build_model(mcfg, seed)
    model, _ = train(model, train_ds, replace(tcfg, seed=seed))
    return evaluate(model, test_ds)


def run_config(mcfg: ModelConfig, train_ds: TimeSeriesDataset, test_ds: TimeSeriesDataset,
               tcfg: TrainConfig, seeds=PAPER_SEEDS, protocol="single", record_id="r0",
               timing_epochs=3, n_jobs=1):
    """Train ``mcfg`` once per seed, then time it in a separate serial pass.

    Training failures do not raise; they produce a record with
    ``status="failed"``.
    """
    seeds = tuple(seeds)
    try:
        mcfg.validate()
        if n_jobs == 1:
            accs = [_seed_accuracy(mcfg, train_ds, test_ds, tcfg, s) for s in seeds]
        else:
            from joblib import Parallel, delayed

            accs = Parallel(n_jobs=n_jobs)(
                delayed(_seed_accuracy)(mcfg, train_ds, test_ds, tcfg, s) for s in seeds
            )
        with _TIMING_LOCK:
            fit_ds = train_ds
            if tcfg.val_fraction > 0:
                fit_ds, _ = split_train_val(train_ds, seeds[0], tcfg.val_fraction)
            times = epoch_times(build_model(mcfg, seeds[0]), fit_ds, tcfg, timing_epochs)
        steady = times[1:] if len(times) > 1 else times
        return ExperimentRecord.build(
            record_id, protocol, train_ds.name, mcfg, tcfg, seeds, accs,
            float(np.median(steady)), float(np.mean(steady)),
        )
    except (FourierMTSError, FloatingPointError, ValueError) as exc:
        logger.warning("record %s failed: %s", record_id, exc)
        return ExperimentRecord.build(
            record_id, protocol, train_ds.name, mcfg, tcfg, seeds, [],
            float("nan"), float("nan"), status="failed", error=str(exc),
        )


def run_ablation(base_cfg: ModelConfig, train_ds, test_ds, tcfg, seeds=PAPER_SEEDS, **kw):
    """Unpruned model plus one record per single-module removal (9 records)."""
    if base_cfg.modules_present() != ALL_MODULES:
        raise ContractError("ablation needs a base config containing all eight modules")
    records = [run_config(base_cfg, train_ds, test_ds, tcfg, seeds, "ablation", "unpruned", **kw)]
    for kind in ModuleKind:
        records.append(run_config(base_cfg.without(kind), train_ds, test_ds, tcfg, seeds,
                                  "ablation", f"-{kind}", **kw))
    return records


def _check_order(order):
    order = tuple(ModuleKind(k) for k in order)
    if sorted(order, key=_ENUM_ORDER.get) != list(ModuleKind):
        raise ContractError(f"order must be a permutation of all eight modules, got {order}")
    return order


def run_pruning(base_cfg: ModelConfig, train_ds, test_ds, tcfg, order=PRUNING_ORDER,
                seeds=PAPER_SEEDS, **kw):
    """Record ``k`` has the first ``k`` modules of ``order`` removed cumulatively."""
    order = _check_order(order)
    records = []
    for k in range(len(order) + 1):
        cfg = base_cfg.without(*order[:k])
        rid = "unpruned" if k == 0 else "-" + "-".join(str(m) for m in order[:k])
        records.append(run_config(cfg, train_ds, test_ds, tcfg, seeds, "pruning", rid, **kw))
    return records


def run_stacking(base_cfg: ModelConfig, train_ds, test_ds, tcfg, order=STACKING_ORDER,
                 seeds=PAPER_SEEDS, **kw):
    """Record ``k`` keeps only the first ``k`` modules of ``order``.

    Record 0 is the bare classifier head, which every config carries so it
    can emit class logits. Layered modules keep the depth of ``base_cfg``.
    """
    order = _check_order(order)
    records = []
    for k in range(len(order) + 1):
        keep = set(order[:k])
        cfg = base_cfg.without(*(m for m in ModuleKind if m not in keep))
        for kind, name in ((ModuleKind.FFT, "layers_fft"), (ModuleKind.IFFT, "layers_ifft"),
                           (ModuleKind.MHA, "layers_mha"), (ModuleKind.FFN, "layers_ffn")):
            if kind in keep and getattr(cfg, name) == 0:
                cfg = replace(cfg, **{name: 1})
        rid = "head" if k == 0 else "+" + "+".join(str(m) for m in order[:k])
        records.append(run_config(cfg, train_ds, test_ds, tcfg, seeds, "stacking", rid, **kw))
    return records


def sample_configs(base_cfg: ModelConfig, base_tcfg: TrainConfig, n, seed=0):
    """Draw ``n`` (model, train) config pairs uniformly from the search grid."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        pick = {k: v[int(rng.integers(len(v)))] for k, v in SEARCH_SPACE.items()}
        mcfg = replace(
            base_cfg,
            num_heads=pick["num_heads"],
            dropout=pick["dropout"],
            layers_fft=pick["layers_fft"],
            layers_ifft=pick["layers_ifft"],
            layers_mha=pick["layers_mha"],
            layers_ffn=pick["layers_ffn"],
        )
        tcfg = replace(base_tcfg, learning_rate=pick["learning_rate"],
                       batch_size=pick["batch_size"])
        out.append((mcfg, tcfg))
    return out


def run_random_sample(base_cfg: ModelConfig, train_ds, test_ds, tcfg, n, seed=0,
                      seeds=PAPER_SEEDS, **kw):
    """Train ``n`` configs drawn from the hyperparameter grid.

    ``base_cfg.embed_dim`` must be divisible by every head count in the grid
    (a multiple of 16).
    """
    if n < 1:
        raise ContractError("n must be >= 1")
    records = []
    for i, (mcfg, t) in enumerate(sample_configs(base_cfg, tcfg, n, seed)):
        records.append(run_config(mcfg, train_ds, test_ds, t, seeds, "random", f"rand{i:03d}", **kw))
    return records


# analysis -------------------------------------------------------------------------


def _unpruned(records):
    for r in records:
        if r.modules == ALL_MODULES and not r.failed:
            return r
    raise ContractError("no successful unpruned record (all eight modules present)")


def rank_contributions(records):
    """Modules sorted by mean accuracy loss when removed, largest first.

    ``records`` is one ablation sweep or a list of sweeps (one per dataset);
    losses are averaged across sweeps. Ties keep ``ModuleKind`` order.
    """
    sweeps = records if records and isinstance(records[0], (list, tuple)) else [records]
    losses = {k: [] for k in ModuleKind}
    for sweep in sweeps:
        base = _unpruned(sweep)
        for r in sweep:
            missing = ALL_MODULES - r.modules
            if len(missing) == 1 and not r.failed:
                (kind,) = missing
                losses[kind].append(base.accuracy_mean - r.accuracy_mean)
    mean_loss = {k: float(np.mean(v)) for k, v in losses.items() if v}
    return sorted(mean_loss, key=lambda k: (-mean_loss[k], _ENUM_ORDER[k]))


def normalized_efficiency(records):
    """Min-max normalized efficiency cost of each record, in ``[0, 1]``."""
    costs = np.array([r.efficiency_cost for r in records], dtype=float)
    lo, hi = np.nanmin(costs), np.nanmax(costs)
    if hi == lo:
        return np.zeros_like(costs)
    return (costs - lo) / (hi - lo)


def efficiency_deltas(records):
    """Relative change of cost and score versus the unpruned record.

    Returns ``{record_id: (delta_cost, delta_score)}`` as fractions.
    """
    base = _unpruned(records)
    out = {}
    for r in records:
        if r.failed:
            continue
        out[r.record_id] = (
            (r.efficiency_cost - base.efficiency_cost) / base.efficiency_cost,
            (r.efficiency_score - base.efficiency_score) / base.efficiency_score,
        )
    return out


def format_table(records, title=None):
    """Two-row mean/std text table.

    Among the reduced configs, ``*`` marks the lowest mean accuracy (largest
    loss) and ``_`` the highest (smallest loss).
    """
    ok = [r for r in records if not r.failed]
    reduced = [r for r in ok if r.modules != ALL_MODULES]
    worst = min((r.accuracy_mean for r in reduced), default=None)
    best = max((r.accuracy_mean for r in reduced), default=None)
    heads, means, stds = ["Acc."], ["Mean"], ["Std."]
    for r in records:
        heads.append(r.record_id)
        if r.failed:
            means.append("failed")
            stds.append("-")
            continue
        mark = ""
        if r in reduced and r.accuracy_mean == worst:
            mark = "*"
        elif r in reduced and r.accuracy_mean == best:
            mark = "_"
        means.append(f"{mark}{r.accuracy_mean:.3f}")
        stds.append(f"{r.accuracy_std:.3f}")
    widths = [max(len(a), len(b), len(c)) for a, b, c in zip(heads, means, stds)]
    lines = []
    if title:
        lines.append(title)
    for row in (heads, means, stds):
        lines.append(" | ".join(cell.rjust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines)


# persistence --------------------------------------------------------------------

CSV_FIELDS = (
    "record_id", "protocol", "dataset", "status",
    *[str(k) for k in ModuleKind],
    "layers_fft", "layers_ifft", "layers_mha", "layers_ffn",
    "embed_dim", "num_heads", "dropout", "lr", "batch", "seeds", "accuracies",
    "acc_mean", "acc_std", "epoch_time_s", "param_count", "eff_cost", "eff_score",
)


def _fmt(x):
    return repr(float(x))


def write_records_csv(records, path):
    """CSV with one row per record; floats are written with ``repr``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in records:
            mc, tc = r.model_config, r.train_config
            present = set(r.modules_present)
            w.writerow([
                r.record_id, r.protocol, r.dataset, r.status,
                *[int(str(k) in present) for k in ModuleKind],
                mc["layers_fft"], mc["layers_ifft"], mc["layers_mha"], mc["layers_ffn"],
                mc["embed_dim"], mc["num_heads"], _fmt(mc["dropout"]),
                _fmt(tc["learning_rate"]), tc["batch_size"],
                ";".join(str(s) for s in r.seeds_used),
                ";".join(_fmt(a) for a in r.accuracies),
                _fmt(r.accuracy_mean), _fmt(r.accuracy_std), _fmt(r.epoch_time_s),
                r.param_count, _fmt(r.efficiency_cost), _fmt(r.efficiency_score),
            ])


@dataclass
class CsvRecord:
    """Flat view of one CSV row; enough for Pareto analysis and tables."""

    record_id: str
    protocol: str
    dataset: str
    status: str
    modules_present: tuple
    accuracies: tuple
    accuracy_mean: float
    accuracy_std: float
    epoch_time_s: float
    param_count: int
    efficiency_cost: float
    efficiency_score: float
    row: dict = field(default_factory=dict, repr=False)

    @property
    def failed(self):
        return self.status != "ok"

    @property
    def modules(self):
        return frozenset(ModuleKind(m) for m in self.modules_present)


def read_records_csv(path):
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            accs = tuple(float(a) for a in row["accuracies"].split(";") if a)
            out.append(CsvRecord(
                record_id=row["record_id"],
                protocol=row["protocol"],
                dataset=row["dataset"],
                status=row["status"],
                modules_present=tuple(str(k) for k in ModuleKind if row[str(k)] == "1"),
                accuracies=accs,
                accuracy_mean=float(row["acc_mean"]),
                accuracy_std=float(row["acc_std"]),
                epoch_time_s=float(row["epoch_time_s"]),
                param_count=int(row["param_count"]),
                efficiency_cost=float(row["eff_cost"]),
                efficiency_score=float(row["eff_score"]),
                row=row,
            ))
    return out


def write_records_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True, allow_nan=True) + "\n")


def read_records_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [ExperimentRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
