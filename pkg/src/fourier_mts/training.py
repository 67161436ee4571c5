"""Cross-entropy training with Adam, validation split and epoch timing."""

from __future__ import annotations

import copy
import csv
import logging
import statistics
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.model_selection import train_test_split

from . import autodiff as ad
from .data import TimeSeriesDataset
from .exceptions import ConfigurationError, ContractError, DataError, TrainingError
from .model import SEARCH_SPACE, Model

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "EpochStats",
    "AdamState",
    "Adam",
    "adam_step",
    "cross_entropy",
    "split_train_val",
    "train",
    "evaluate",
    "epoch_times",
    "measure_epoch_time",
]


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, c = logits.shape
    if labels.shape[0] != b:
        raise DataError(f"{b} logits rows but {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"labels must lie in [0, {c})")
    logp = ad.log_softmax(logits, axis=-1)
    return -ad.mean(logp[np.arange(b), labels])


# Adam -------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, t=None):
    """One bias-corrected Adam update on lists of arrays (in place).

    ``t`` defaults to ``state.t + 1``; ``state.t`` is set to the step used.
    """
    if t is None:
        t = state.t + 1
    if t < 1:
        raise ContractError(f"Adam step index must be >= 1, got {t}")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ContractError("params, grads and Adam state differ in length")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractError(f"shape mismatch in Adam: param {p.shape}, grad {g.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    state.t = t
    return params, state


class Adam:
    """Adam over a list of tensors, reading ``.grad`` from each."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState.zeros_like([p.data for p in self.params])

    def step(self):
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state,
                  self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# configuration and history ----------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    max_epochs: int = 50
    seed: int = 0
    val_fraction: float = 0.2
    early_stop_patience: int | None = None

    def validate(self, paper_protocol=False):
        problems = []
        if self.learning_rate <= 0:
            problems.append("learning_rate must be positive")
        if self.batch_size < 1:
            problems.append("batch_size must be positive")
        if self.max_epochs < 0:
            problems.append("max_epochs must be >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            problems.append("val_fraction must be in [0, 1)")
        if paper_protocol:
            if self.learning_rate not in SEARCH_SPACE["learning_rate"]:
                problems.append(f"learning_rate must be one of {list(SEARCH_SPACE['learning_rate'])}")
            if self.batch_size not in SEARCH_SPACE["batch_size"]:
                problems.append(f"batch_size must be one of {list(SEARCH_SPACE['batch_size'])}")
            if self.val_fraction != 0.2:
                problems.append("val_fraction must be 0.2")
        if problems:
            raise ConfigurationError("invalid TrainConfig: " + "; ".join(problems))
        return self


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    wall_time_s: float


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int | None = None
    train_sample_ids: set = field(default_factory=set)

    CSV_HEADER = ("epoch", "train_loss", "val_loss", "val_acc", "wall_time_s")

    def __len__(self):
        return len(self.epochs)

    @property
    def train_losses(self):
        return [e.train_loss for e in self.epochs]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_HEADER)
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss),
                            repr(e.val_accuracy), repr(e.wall_time_s)])


# splitting ---------------------------------------------------------------------


def split_train_val(dataset: TimeSeriesDataset, seed=0, val_fraction=0.2):
    """Stratified, seeded split of a training partition into train/val."""
    n = len(dataset)
    if n < 5:
        raise DataError(f"need at least 5 training samples to split, got {n}")
    idx = np.arange(n)
    counts = np.bincount(dataset.y, minlength=dataset.num_classes)
    stratify = dataset.y
    if np.any(counts[counts > 0] < 2):
        warnings.warn("a class has fewer than 2 samples; falling back to an unstratified split",
                      stacklevel=2)
        stratify = None
    tr, va = train_test_split(idx, test_size=val_fraction, random_state=seed,
                              shuffle=True, stratify=stratify)
    return dataset.subset(np.sort(tr), "train"), dataset.subset(np.sort(va), "val")


# training ------------------------------------------------------------------------


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    out = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    # batch norm cannot train on a single sample
    if len(out) > 1 and len(out[-1]) == 1:
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def _run_epoch(model, optimizer, X, y, ids, batch_size, rng, seen=None):
    model.train()
    total = 0.0
    for b in _batches(len(y), batch_size, rng):
        if len(b) < 2 and any(k == "bn" for k, _ in model.steps):
            continue
        if seen is not None:
            seen.update(ids[b].tolist())
        optimizer.zero_grad()
        with ad.GradTape() as tape:
            loss = cross_entropy(model.forward(X[b], training=True), y[b])
        tape.backward(loss)
        optimizer.step()
        total += loss.item() * len(b)
    return total / len(y)


def _eval_loss_acc(model, ds):
    logits = model.forward(ds.model_input(), training=False)
    loss = cross_entropy(logits, ds.y).item()
    acc = float(np.mean(np.argmax(logits.data, axis=1) == ds.y))
    return loss, acc


def train(model: Model, dataset: TimeSeriesDataset, tcfg: TrainConfig, val=None):
    """Fit ``model`` on ``dataset`` and return ``(model, history)``.

    Unless ``val`` is given, ``tcfg.val_fraction`` of ``dataset`` is held out.
    The parameters of the epoch with the best validation accuracy (ties broken
    by validation loss) are restored at the end.
    """
    tcfg.validate()
    history = TrainHistory()
    if tcfg.max_epochs == 0:
        return model, history
    if val is None and tcfg.val_fraction > 0:
        dataset, val = split_train_val(dataset, tcfg.seed, tcfg.val_fraction)
    X, y, ids = dataset.model_input(), dataset.y, dataset.ids
    if len(y) < 2:
        raise DataError("need at least 2 training samples")

    rng = np.random.default_rng([tcfg.seed, 7])
    model.reseed(tcfg.seed)
    optimizer = Adam(model.parameters(), lr=tcfg.learning_rate)
    best_acc, best_state, since_best = None, None, 0

    for epoch in range(1, tcfg.max_epochs + 1):
        start = time.perf_counter()
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                train_loss = _run_epoch(model, optimizer, X, y, ids, tcfg.batch_size, rng,
                                        history.train_sample_ids)
        except FloatingPointError as exc:
            raise TrainingError(f"numerical failure: {exc}", epoch) from exc
        elapsed = time.perf_counter() - start
        if not np.isfinite(train_loss):
            raise TrainingError("loss diverged to a non-finite value", epoch)
        if val is not None and len(val):
            val_loss, val_acc = _eval_loss_acc(model, val)
        else:
            val_loss, val_acc = float("nan"), float("nan")
        history.epochs.append(EpochStats(epoch, train_loss, val_loss, val_acc, max(elapsed, 1e-12)))
        logger.debug("epoch %d loss %.4f val_acc %.3f", epoch, train_loss, val_acc)

        # accuracy first; ties go to the lower validation loss
        if np.isfinite(val_acc):
            score = (val_acc, -val_loss)
        else:
            score = (0.0, -train_loss)
        if best_state is None or score > best_acc:
            best_acc, best_state, since_best = score, model.state_dict(), 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if tcfg.early_stop_patience is not None and since_best >= tcfg.early_stop_patience:
                break

    model.load_state_dict(best_state)
    model.eval()
    return model, history


def evaluate(model: Model, partition: TimeSeriesDataset) -> float:
    """Argmax accuracy in eval mode."""
    if len(partition) == 0:
        raise DataError("cannot evaluate on an empty partition")
    pred = model.predict(partition.model_input())
    return float(np.mean(pred == partition.y))


def epoch_times(model: Model, dataset: TimeSeriesDataset, tcfg: TrainConfig, n_epochs=3):
    """Wall-clock seconds of ``n_epochs`` training epochs on a copy of ``model``."""
    work = copy.deepcopy(model)
    rng = np.random.default_rng([tcfg.seed, 11])
    optimizer = Adam(work.parameters(), lr=tcfg.learning_rate)
    X, y = dataset.model_input(), dataset.y
    times = []
    for _ in range(n_epochs):
        start = time.perf_counter()
        _run_epoch(work, optimizer, X, y, dataset.ids, tcfg.batch_size, rng)
        times.append(time.perf_counter() - start)
    return times


def measure_epoch_time(model: Model, dataset: TimeSeriesDataset, tcfg: TrainConfig, n_epochs=3):
    """Median epoch time with the first (warm-up) epoch discarded."""
    if n_epochs < 3:
        raise ConfigurationError(f"n_epochs must be >= 3, got {n_epochs}")
    times = epoch_times(model, dataset, tcfg, n_epochs)
    return statistics.median(times[1:])
