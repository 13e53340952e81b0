"""Dataset loading, normalization, splitting, and synthetic generation.

The on-disk layout is two CSV files: a feature table whose header row names
the samples and whose first column names the features, and a label table
with one ``sample_id,label`` row per sample.  Saving is canonical (floats at
17 significant digits, newline-terminated rows), so a load/save cycle of a
canonical file is byte-identical.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .docio import format_float
from .errors import DegenerateInputError, ValidationError
from .linalg import FeatureMatrix
from .seeding import STREAM_SPLIT, STREAM_SYNTH, generator

logger = logging.getLogger(__name__)

MODE_PER_FEATURE_MAX = "per_feature_max"
MODE_NONE = "none"

_FEATURE_CORNER = "feature"
_LABEL_HEADER = ("sample_id", "label")


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix plus one class label per sample."""

    features: FeatureMatrix
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(v) for v in self.labels)
        if len(labels) != self.features.n_samples:
            raise ValidationError(
                f"got {len(labels)} labels for {self.features.n_samples} samples")
        if any(not v for v in labels):
            raise ValidationError("labels must be nonempty strings")
        object.__setattr__(self, "labels", labels)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return self.features == other.features and self.labels == other.labels

    @property
    def label_set(self) -> tuple[str, ...]:
        """Distinct labels in sorted order."""
        return tuple(sorted(set(self.labels)))

    def select(self, indices: Sequence[int]) -> "LabeledDataset":
        idx = list(indices)
        return LabeledDataset(self.features.select_samples(idx),
                              tuple(self.labels[i] for i in idx))


def _read_rows(path) -> list[list[str]]:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"file not found: {p}")
    with open(p, newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh)]


def load_features_csv(path) -> FeatureMatrix:
    """Read a feature table: header row of sample ids, feature rows below."""
    rows = _read_rows(path)
    if not rows or len(rows[0]) < 2:
        raise ValidationError(f"{path}: expected a header row with at least one sample id")
    sample_ids = tuple(rows[0][1:])
    width = len(rows[0])
    if len(rows) < 2:
        raise ValidationError(f"{path}: no feature rows found")
    feature_names = []
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ValidationError(
                f"{path}: row {lineno} has {len(row)} cells, expected {width}")
        feature_names.append(row[0])
        parsed = []
        for sid, cell in zip(sample_ids, row[1:]):
            try:
                value = float(cell)
            except ValueError:
                raise ValidationError(
                    f"{path}: cell (feature {row[0]!r}, sample {sid!r}) "
                    f"is not a number: {cell!r}") from None
            if not math.isfinite(value) or value < 0:
                raise ValidationError(
                    f"{path}: cell (feature {row[0]!r}, sample {sid!r}) "
                    f"must be finite and >= 0, got {cell!r}")
            parsed.append(value)
        data.append(parsed)
    return FeatureMatrix(np.array(data), sample_ids, tuple(feature_names))


def load_labels_csv(path) -> dict[str, str]:
    """Read a ``sample_id,label`` table into an ordered mapping."""
    rows = _read_rows(path)
    if not rows or tuple(rows[0]) != _LABEL_HEADER:
        raise ValidationError(
            f"{path}: expected header {','.join(_LABEL_HEADER)!r}")
    mapping: dict[str, str] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise ValidationError(f"{path}: row {lineno} must have exactly 2 cells")
        sid, label = row
        if sid in mapping:
            raise ValidationError(f"{path}: duplicate sample id {sid!r} at row {lineno}")
        mapping[sid] = label
    return mapping


def load_csv(features_path, labels_path) -> LabeledDataset:
    """Load a dataset, requiring the two files to cover identical sample ids."""
    features = load_features_csv(features_path)
    labels = load_labels_csv(labels_path)
    missing = [s for s in features.sample_ids if s not in labels]
    extra = [s for s in labels if s not in set(features.sample_ids)]
    if missing or extra:
        raise ValidationError(
            f"sample ids disagree between {features_path} and {labels_path}: "
            f"{len(missing)} unlabeled, {len(extra)} without features "
            f"(first offenders: {(missing + extra)[:3]})")
    return LabeledDataset(features, tuple(labels[s] for s in features.sample_ids))


def _write_rows(path, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def save_features_csv(features: FeatureMatrix, path) -> None:
    names = features.feature_names or tuple(f"f{i}" for i in range(features.n_features))
    rows = [[_FEATURE_CORNER, *features.sample_ids]]
    for i, name in enumerate(names):
        rows.append([name, *(format_float(v) for v in features.values[i])])
    _write_rows(path, rows)


def save_csv(dataset: LabeledDataset, features_path, labels_path) -> None:
    save_features_csv(dataset.features, features_path)
    rows = [list(_LABEL_HEADER)]
    rows += [[sid, lbl] for sid, lbl in zip(dataset.features.sample_ids, dataset.labels)]
    _write_rows(labels_path, rows)


@dataclass(frozen=True)
class NormalizationParams:
    """Feature scaling fitted on training data, reusable on test data."""

    mode: str
    feature_names: tuple[str, ...]
    maxima: tuple[float, ...] | None
    dropped_features: tuple[str, ...]

    def to_snapshot(self) -> dict:
        return {
            "mode": self.mode,
            "feature_names": list(self.feature_names),
            "maxima": None if self.maxima is None else [float(v) for v in self.maxima],
            "dropped_features": list(self.dropped_features),
        }

    @classmethod
    def from_snapshot(cls, snapshot: dict) -> "NormalizationParams":
        maxima = snapshot["maxima"]
        return cls(
            mode=str(snapshot["mode"]),
            feature_names=tuple(str(f) for f in snapshot["feature_names"]),
            maxima=None if maxima is None else tuple(float(v) for v in maxima),
            dropped_features=tuple(str(f) for f in snapshot["dropped_features"]),
        )


def normalize(dataset: LabeledDataset, mode: str = MODE_PER_FEATURE_MAX,
              ) -> tuple[LabeledDataset, NormalizationParams]:
    """Scale features and return the parameters needed to repeat the scaling.

    ``per_feature_max`` divides each feature row by its training maximum;
    rows whose maximum is zero are dropped and recorded.  ``none`` is the
    identity.
    """
    features = dataset.features
    names = features.feature_names or tuple(f"f{i}" for i in range(features.n_features))
    if mode == MODE_NONE:
        params = NormalizationParams(MODE_NONE, names, None, ())
        return dataset, params
    if mode != MODE_PER_FEATURE_MAX:
        raise ValidationError(f"unknown normalization mode {mode!r}")

    maxima = features.values.max(axis=1)
    keep = maxima > 0
    dropped = tuple(n for n, k in zip(names, keep) if not k)
    if not keep.any():
        raise DegenerateInputError("every feature is zero; nothing to normalize")
    if dropped:
        logger.warning("dropping %d all-zero feature(s): %s", len(dropped),
                       ", ".join(dropped[:5]) + ("..." if len(dropped) > 5 else ""))
    params = NormalizationParams(
        MODE_PER_FEATURE_MAX,
        names,
        tuple(float(v) for v in maxima[keep]),
        dropped,
    )
    return LabeledDataset(apply_normalization(features, params), dataset.labels), params


def apply_normalization(features: FeatureMatrix, params: NormalizationParams) -> FeatureMatrix:
    """Apply training-time scaling to new data with the same feature layout."""
    if features.feature_names is not None and features.feature_names != params.feature_names:
        raise ValidationError(
            "feature names do not match the normalization parameters")
    if features.n_features != len(params.feature_names):
        raise ValidationError(
            f"data has {features.n_features} features, parameters describe "
            f"{len(params.feature_names)}")
    if params.mode == MODE_NONE:
        return features
    dropped = set(params.dropped_features)
    keep = [i for i, n in enumerate(params.feature_names) if n not in dropped]
    kept_names = tuple(params.feature_names[i] for i in keep)
    values = features.values[keep, :] / np.array(params.maxima)[:, None]
    return FeatureMatrix(values, features.sample_ids, kept_names)


@dataclass(frozen=True)
class SplitResult:
    """Holdout split: the train side never contains the holdout class."""

    train: LabeledDataset
    test: LabeledDataset
    novel_flags: tuple[bool, ...]


def split_holdout(dataset: LabeledDataset, holdout_class: str,
                  test_fraction: float, seed: int) -> SplitResult:
    """Remove one class entirely and carve a stratified test set.

    Every holdout-class sample goes to the test side (flagged novel), along
    with ``floor(test_fraction * class size)`` samples of each remaining
    class.  Sample order within each side follows the input dataset.
    """
    if holdout_class not in dataset.label_set:
        raise ValidationError(f"holdout class {holdout_class!r} not present in dataset")
    if not (0.0 < test_fraction < 1.0):
        raise ValidationError("test_fraction must lie strictly between 0 and 1")

    rng = generator(seed, STREAM_SPLIT)
    labels = dataset.labels
    test_idx = set()
    for cls in dataset.label_set:
        members = [i for i, lbl in enumerate(labels) if lbl == cls]
        if cls == holdout_class:
            test_idx.update(members)
            continue
        n_test = int(test_fraction * len(members))
        order = rng.permutation(len(members))
        test_idx.update(members[j] for j in order[:n_test])

    train_indices = [i for i, lbl in enumerate(labels)
                     if lbl != holdout_class and i not in test_idx]
    test_indices = sorted(test_idx)
    if not train_indices:
        raise DegenerateInputError("split left the training side empty")
    emptied = [cls for cls in dataset.label_set
               if cls != holdout_class
               and not any(labels[i] == cls for i in train_indices)]
    if emptied:
        raise DegenerateInputError(f"split emptied training class(es): {emptied}")

    return SplitResult(
        train=dataset.select(train_indices),
        test=dataset.select(test_indices),
        novel_flags=tuple(labels[i] == holdout_class for i in test_indices),
    )


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic dataset with known latent signatures."""

    n_features: int
    n_classes: int
    samples_per_class: int
    signature_overlap: float = 0.0
    noise_sigma: float = 0.0
    holdout_class: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_features < 1 or self.n_classes < 1 or self.samples_per_class < 1:
            raise ValidationError("n_features, n_classes, samples_per_class must be >= 1")
        if not (0.0 <= self.signature_overlap < 1.0):
            raise ValidationError("signature_overlap must lie in [0, 1)")
        if not (self.noise_sigma >= 0.0 and math.isfinite(self.noise_sigma)):
            raise ValidationError("noise_sigma must be finite and >= 0")
        if (self.holdout_class is not None
                and self.holdout_class not in self.class_labels):
            raise ValidationError(
                f"holdout_class {self.holdout_class!r} is not one of the "
                f"generated labels {self.class_labels}")

    @property
    def class_labels(self) -> tuple[str, ...]:
        return tuple(f"class{c}" for c in range(self.n_classes))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Generating signatures and per-sample mixing weights of a synthetic set."""

    signatures: np.ndarray
    mixing: np.ndarray
    class_labels: tuple[str, ...]
    holdout_class: str | None

    def to_document(self) -> dict:
        return {
            "schema_version": 1,
            "class_labels": list(self.class_labels),
            "holdout_class": self.holdout_class,
            "signatures": {
                label: [float(v) for v in self.signatures[:, c]]
                for c, label in enumerate(self.class_labels)
            },
            "mixing": [[float(v) for v in row] for row in self.mixing],
        }


_MAX_BLEED_HALVINGS = 200


def generate_synthetic(spec: SynthSpec) -> tuple[LabeledDataset, GroundTruth]:
    """Draw a dataset of noisy positive multiples of per-class signatures.

    Signatures are unit vectors on disjoint feature blocks; with a positive
    ``signature_overlap`` a shared bleed component is added and scaled down
    until every pairwise cosine is at or below the requested overlap.  Each
    sample is its class signature times an amplitude drawn from U[0.75, 1.5),
    plus Gaussian noise truncated at zero.  Bit-for-bit deterministic for a
    given spec.
    """
    n, c_count = spec.n_features, spec.n_classes
    if n < c_count:
        raise DegenerateInputError(
            f"cannot give {c_count} classes disjoint support on {n} features")
    if n < 2 * c_count:
        logger.warning("only %d features for %d classes; signatures will be thin",
                       n, c_count)

    rng = generator(spec.seed, STREAM_SYNTH)
    block_sizes = [n // c_count + (1 if c < n % c_count else 0) for c in range(c_count)]
    bounds = np.concatenate([[0], np.cumsum(block_sizes)])
    block_values = rng.uniform(0.5, 1.0, size=n)

    base = np.zeros((n, c_count))
    for c in range(c_count):
        lo, hi = bounds[c], bounds[c + 1]
        base[lo:hi, c] = block_values[lo:hi]

    if spec.signature_overlap > 0:
        bleed = rng.uniform(0.25, 0.75, size=(n, c_count))
        beta = spec.signature_overlap
        for _ in range(_MAX_BLEED_HALVINGS):
            sigs = base + beta * bleed
            sigs = sigs / np.linalg.norm(sigs, axis=0)
            gram = sigs.T @ sigs
            off_diag = gram[~np.eye(c_count, dtype=bool)]
            if c_count == 1 or off_diag.max() <= spec.signature_overlap:
                break
            beta *= 0.5
        else:
            raise DegenerateInputError("could not satisfy the overlap bound")
    else:
        sigs = base / np.linalg.norm(base, axis=0)

    m = c_count * spec.samples_per_class
    amplitudes = rng.uniform(0.75, 1.5, size=m)
    values = np.empty((n, m))
    classes = np.repeat(np.arange(c_count), spec.samples_per_class)
    for j in range(m):
        values[:, j] = amplitudes[j] * sigs[:, classes[j]]
    if spec.noise_sigma > 0:
        values += rng.normal(0.0, spec.noise_sigma, size=(n, m))
        np.maximum(values, 0.0, out=values)

    labels = tuple(spec.class_labels[c] for c in classes)
    sample_ids = tuple(f"s{j:04d}" for j in range(m))
    feature_names = tuple(f"f{i}" for i in range(n))
    mixing = np.zeros((c_count, m))
    mixing[classes, np.arange(m)] = amplitudes

    dataset = LabeledDataset(FeatureMatrix(values, sample_ids, feature_names), labels)
    truth = GroundTruth(sigs, mixing, spec.class_labels, spec.holdout_class)
    return dataset, truth
