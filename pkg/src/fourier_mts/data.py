"""Equal-length multivariate series datasets: `.ts` I/O, manifest, synthetic data.

`.ts` grammar accepted by :func:`parse_ts` (``#`` starts a comment line)::

    file     ::= header* "@data" NL record+
    header   ::= "@" tag (WS value)* NL
    tag      ::= problemName | timeStamps | missing | univariate | dimension(s)
               | equalLength | seriesLength | classLabel | ...
    record   ::= channel (":" channel)* ":" label NL
    channel  ::= number ("," number)*
    label    ::= token declared by "@classLabel true <label>+"

Tags are case-insensitive. Unknown tags are ignored. ``?`` (missing value)
is rejected, as are ragged series and ``@timeStamps true``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .exceptions import ConfigurationError, DataError, ParseError

__all__ = [
    "TimeSeriesDataset",
    "DatasetManifest",
    "ManifestReport",
    "parse_ts",
    "load_ts",
    "serialize_ts",
    "load_manifest",
    "validate_against_manifest",
    "synth_dataset",
    "zscore",
    "DIFFICULTY",
]


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Labeled equal-length multivariate series.

    ``X`` has shape ``[n_samples, dims, length]`` and ``y`` holds class
    indices into ``class_names``. ``ids`` identifies samples across splits.
    """

    name: str
    X: np.ndarray
    y: np.ndarray
    class_names: tuple
    partition: str = "train"
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if X.ndim != 3:
            raise DataError(f"X must be [n, dims, length], got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise DataError(f"{X.shape[0]} samples but {y.shape[0]} labels")
        if X.shape[1] < 1 or X.shape[2] < 2:
            raise DataError(f"need dims >= 1 and length >= 2, got {X.shape[1:]}")
        names = tuple(str(c) for c in self.class_names)
        if len(set(names)) != len(names):
            raise DataError(f"duplicate class names in {names}")
        if y.size and (y.min() < 0 or y.max() >= len(names)):
            raise DataError(f"labels outside [0, {len(names)})")
        if self.partition not in ("train", "test", "val"):
            raise DataError(f"unknown partition {self.partition!r}")
        ids = np.arange(len(y)) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        if ids.shape != y.shape:
            raise DataError("ids must align with labels")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.X.shape[0]

    @property
    def samples(self):
        return list(self.X)

    @property
    def labels(self):
        return self.y

    @property
    def dims(self):
        return self.X.shape[1]

    @property
    def length(self):
        return self.X.shape[2]

    @property
    def num_classes(self):
        return len(self.class_names)

    def subset(self, idx, partition=None):
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            X=self.X[idx],
            y=self.y[idx],
            ids=self.ids[idx],
            partition=partition or self.partition,
        )

    def model_input(self):
        """Samples as ``[n, length, dims]``, the layout the model consumes."""
        return np.ascontiguousarray(self.X.transpose(0, 2, 1))


# .ts parsing ------------------------------------------------------------------


def _parse_bool(value, tag, lineno):
    v = value.lower()
    if v not in ("true", "false"):
        raise ParseError(f"@{tag} expects true/false, got {value!r}", lineno)
    return v == "true"


def _parse_int(value, tag, lineno):
    try:
        out = int(value)
    except ValueError:
        raise ParseError(f"@{tag} expects an integer, got {value!r}", lineno) from None
    if out < 1:
        raise ParseError(f"@{tag} must be positive", lineno)
    return out


def parse_ts(text, name=None, partition="train"):
    """Parse `.ts` file contents into a :class:`TimeSeriesDataset`.

    Raises
    ------
    ParseError
        For any malformed input; ``err.line`` points at the offending line.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not UTF-8 text: {exc}") from None
    problem = name
    declared_dims = None
    declared_len = None
    labels_decl = None
    in_data = False
    records = []
    rec_labels = []
    n_dims = None
    n_len = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not in_data:
            if not line.startswith("@"):
                raise ParseError("data before @data header", lineno)
            parts = line.split()
            tag = parts[0][1:].lower()
            args = parts[1:]
            if tag == "data":
                if args:
                    raise ParseError("@data takes no arguments", lineno)
                if labels_decl is None:
                    raise ParseError("@classLabel true <labels> required before @data", lineno)
                in_data = True
            elif tag == "problemname":
                if problem is None and args:
                    problem = " ".join(args)
            elif tag == "timestamps":
                if args and _parse_bool(args[0], tag, lineno):
                    raise ParseError("timestamped series are not supported", lineno)
            elif tag == "univariate":
                if not args:
                    raise ParseError("@univariate needs a value", lineno)
                if _parse_bool(args[0], tag, lineno):
                    declared_dims = 1
            elif tag in ("dimension", "dimensions"):
                if not args:
                    raise ParseError(f"@{tag} needs a value", lineno)
                declared_dims = _parse_int(args[0], tag, lineno)
            elif tag == "equallength":
                if args and not _parse_bool(args[0], tag, lineno):
                    raise ParseError("unequal-length series are not supported", lineno)
            elif tag == "serieslength":
                if not args:
                    raise ParseError("@seriesLength needs a value", lineno)
                declared_len = _parse_int(args[0], tag, lineno)
            elif tag in ("classlabel", "class_label"):
                if not args or not _parse_bool(args[0], tag, lineno):
                    raise ParseError("unlabeled data is not supported", lineno)
                if len(args) < 3:
                    raise ParseError("@classLabel true needs at least two labels", lineno)
                labels_decl = args[1:]
                if len(set(labels_decl)) != len(labels_decl):
                    raise ParseError("duplicate class labels", lineno)
            continue

        if line.startswith("@"):
            raise ParseError("header tag after @data", lineno)
        parts = line.split(":")
        if len(parts) < 2:
            raise ParseError("record needs at least one channel and a class label", lineno)
        label = parts[-1].strip()
        if label not in labels_decl:
            raise ParseError(f"unknown class label {label!r}", lineno)
        channels = []
        for ch in parts[:-1]:
            tokens = [t.strip() for t in ch.split(",")]
            if any(t == "?" for t in tokens):
                raise ParseError("missing values ('?') are not supported", lineno)
            try:
                vals = [float(t) for t in tokens]
            except ValueError:
                raise ParseError(f"non-numeric value in channel {ch!r}", lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite value", lineno)
            channels.append(vals)
        if n_dims is None:
            n_dims = len(channels)
        elif len(channels) != n_dims:
            raise ParseError(f"expected {n_dims} channels, found {len(channels)}", lineno)
        for vals in channels:
            if n_len is None:
                n_len = len(vals)
            elif len(vals) != n_len:
                raise ParseError(f"ragged series: expected length {n_len}, found {len(vals)}", lineno)
        records.append(channels)
        rec_labels.append(labels_decl.index(label))
        last_line = lineno

    if not in_data:
        raise ParseError("missing @data section")
    if not records:
        raise ParseError("no data records after @data")
    if declared_dims is not None and declared_dims != n_dims:
        raise ParseError(f"header declares {declared_dims} dimensions, records have {n_dims}", last_line)
    if declared_len is not None and declared_len != n_len:
        raise ParseError(f"header declares length {declared_len}, records have {n_len}", last_line)
    if n_len < 2:
        raise ParseError("series must have length >= 2", last_line)

    return TimeSeriesDataset(
        name=problem or "unnamed",
        X=np.array(records, dtype=np.float64),
        y=np.array(rec_labels, dtype=np.int64),
        class_names=tuple(labels_decl),
        partition=partition,
    )


def load_ts(path, partition=None):
    with open(path, "rb") as fh:
        content = fh.read()
    if partition is None:
        partition = "test" if str(path).upper().endswith("_TEST.TS") else "train"
    return parse_ts(content, partition=partition)


def serialize_ts(ds: TimeSeriesDataset) -> str:
    """Write ``ds`` as `.ts` text; floats use ``repr`` so values round-trip exactly."""
    lines = [
        f"@problemName {ds.name}",
        "@timeStamps false",
        "@missing false",
        f"@univariate {'true' if ds.dims == 1 else 'false'}",
        f"@dimensions {ds.dims}",
        "@equalLength true",
        f"@seriesLength {ds.length}",
        "@classLabel true " + " ".join(ds.class_names),
        "@data",
    ]
    for x, label in zip(ds.X, ds.y):
        chans = [",".join(repr(float(v)) for v in row) for row in x]
        lines.append(":".join(chans) + ":" + ds.class_names[label])
    return "\n".join(lines) + "\n"


# manifest --------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetManifest:
    code: str
    name: str
    train_size: int
    test_size: int
    dims: int
    length: int
    classes: int


@dataclass
class ManifestReport:
    code: str
    mismatches: list

    @property
    def ok(self):
        return not self.mismatches

    def __bool__(self):
        return self.ok


def load_manifest():
    """The 18-dataset summary table, keyed by dataset code."""
    text = resources.files("fourier_mts.resources").joinpath("uea_manifest.csv").read_text()
    out = {}
    for row in csv.DictReader(text.splitlines()):
        out[row["code"]] = DatasetManifest(
            code=row["code"],
            name=row["name"],
            **{k: int(row[k]) for k in ("train_size", "test_size", "dims", "length", "classes")},
        )
    return out


def validate_against_manifest(ds, code, test=None):
    """Field-by-field comparison of ``ds`` (train partition) with a manifest row.

    Returns a :class:`ManifestReport` whose ``mismatches`` are
    ``(field, expected, actual)`` tuples.
    """
    manifest = load_manifest()
    if code not in manifest:
        raise ConfigurationError(f"unknown dataset code {code!r}; known: {sorted(manifest)}")
    row = manifest[code]
    actual = {
        "train_size": len(ds),
        "dims": ds.dims,
        "length": ds.length,
        "classes": ds.num_classes,
    }
    if test is not None:
        actual["test_size"] = len(test)
    mismatches = [
        (key, getattr(row, key), value)
        for key, value in actual.items()
        if getattr(row, key) != value
    ]
    return ManifestReport(code, mismatches)


# synthetic data ----------------------------------------------------------------

DIFFICULTY = {"easy": 0.25, "mid": 0.75, "hard": 1.5}


def synth_dataset(seed, n_classes=3, dims=2, length=32, n_per_class=30, difficulty=1.0,
                  name="synthetic"):
    """Frequency-coded sinusoid classification problem.

    Channel ``d`` of a class-``c`` sample is ``sin(2*pi*(c+1)*t/length + d*pi/3)``
    plus Gaussian noise with standard deviation ``difficulty``. Returns a
    ``(train, test)`` pair with ``n_per_class`` samples per class in each.
    ``difficulty`` may also be one of the names in ``DIFFICULTY``.
    """
    if isinstance(difficulty, str):
        if difficulty not in DIFFICULTY:
            raise ConfigurationError(f"difficulty must be a number or one of {sorted(DIFFICULTY)}")
        difficulty = DIFFICULTY[difficulty]
    if n_classes < 2 or dims < 1 or length < 4:
        raise ConfigurationError("synth_dataset needs n_classes >= 2, dims >= 1, length >= 4")
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    phase = np.arange(dims)[:, None] * np.pi / 3
    names = tuple(f"c{c}" for c in range(n_classes))

    def draw(partition):
        y = np.repeat(np.arange(n_classes), n_per_class)
        y = y[rng.permutation(len(y))]
        clean = np.sin(2 * np.pi * (y[:, None, None] + 1) * t / length + phase)
        X = clean + difficulty * rng.standard_normal(clean.shape)
        return TimeSeriesDataset(name, X, y, names, partition)

    return draw("train"), draw("test")


def zscore(ds: TimeSeriesDataset) -> TimeSeriesDataset:
    """Per-sample, per-channel standardization (off for paper-protocol runs)."""
    mu = ds.X.mean(axis=2, keepdims=True)
    sd = ds.X.std(axis=2, keepdims=True)
    return replace(ds, X=(ds.X - mu) / np.where(sd > 0, sd, 1.0))
