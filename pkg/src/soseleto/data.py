"""Dataset containers, synthetic generators, and CSV ingestion.

CSV format: comma-separated with a mandatory header row.  Feature cells are
decimal floats, the label cell is a nonnegative integer.  ``save_csv`` writes
features as ``repr(float)`` so a save/load round trip is lossless at double
precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CsvFormatError, LabelRangeError


@dataclass
class LabeledDataset:
    """Feature matrix plus integer labels.

    ``corruption_mask`` is ground truth about which labels were flipped by a
    noise injector; it exists for evaluation only and is never read by
    training code.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    corruption_mask: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ConfigError(f"features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[0] < 1:
            raise ConfigError("dataset must contain at least one example")
        if self.labels.shape != (self.features.shape[0],):
            raise ConfigError(
                f"labels shape {self.labels.shape} does not match {self.features.shape[0]} rows"
            )
        if not np.isfinite(self.features).all():
            raise ConfigError("features contain NaN/Inf")
        if self.n_classes < 1:
            raise ConfigError(f"n_classes must be >= 1, got {self.n_classes}")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ConfigError(
                f"labels must lie in [0, {self.n_classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )
        if self.corruption_mask is not None:
            self.corruption_mask = np.asarray(self.corruption_mask, dtype=bool)
            if self.corruption_mask.shape != (self.features.shape[0],):
                raise ConfigError("corruption mask length does not match dataset size")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _flip_count(noise_frac: float, n: int) -> int:
    if not 0.0 <= noise_frac < 1.0:
        raise ConfigError(f"noise_frac must lie in [0, 1), got {noise_frac}")
    return int(round(noise_frac * n))


def make_synthetic_2d(
    n_source: int = 500,
    n_target: int = 50,
    noise_frac: float = 0.2,
    seed: int = 0,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Two-cluster 2-D problem with label noise on the source side.

    Points are drawn from two unit-variance Gaussian blobs centered at
    (-2, 0) and (+2, 0); the true label is the sign of the x coordinate
    (points landing exactly on x = 0 are redrawn).  Exactly
    round(noise_frac * n_source) source labels are flipped and recorded in
    the corruption mask.  Target points come from the same mixture and are
    always labeled correctly.
    """
    if n_source < 1 or n_target < 1:
        raise ConfigError("n_source and n_target must be >= 1")
    rng = np.random.default_rng(seed)

    def draw(n: int) -> tuple[np.ndarray, np.ndarray]:
        centers = np.array([[-2.0, 0.0], [2.0, 0.0]])
        pts = centers[rng.integers(0, 2, size=n)] + rng.standard_normal((n, 2))
        on_axis = pts[:, 0] == 0.0
        while on_axis.any():
            k = int(on_axis.sum())
            pts[on_axis] = centers[rng.integers(0, 2, size=k)] + rng.standard_normal((k, 2))
            on_axis = pts[:, 0] == 0.0
        return pts, (pts[:, 0] > 0.0).astype(np.int64)

    src_x, src_y = draw(n_source)
    k = _flip_count(noise_frac, n_source)
    mask = np.zeros(n_source, dtype=bool)
    if k > 0:
        flip = rng.choice(n_source, size=k, replace=False)
        src_y[flip] = 1 - src_y[flip]
        mask[flip] = True
    tgt_x, tgt_y = draw(n_target)
    source = LabeledDataset(src_x, src_y, n_classes=2, corruption_mask=mask)
    target = LabeledDataset(tgt_x, tgt_y, n_classes=2)
    return source, target


def inject_label_noise(dataset: LabeledDataset, noise_frac: float, seed: int = 0) -> LabeledDataset:
    """Replace exactly round(noise_frac * n) labels with a different class.

    Replacement classes are uniform over the other n_classes - 1 labels.
    The returned dataset's corruption mask marks exactly the changed rows.
    """
    if dataset.n_classes < 2:
        raise ConfigError("label noise needs at least 2 classes")
    k = _flip_count(noise_frac, dataset.n)
    labels = dataset.labels.copy()
    mask = np.zeros(dataset.n, dtype=bool)
    if k > 0:
        rng = np.random.default_rng(seed)
        idx = rng.choice(dataset.n, size=k, replace=False)
        offsets = rng.integers(1, dataset.n_classes, size=k)
        labels[idx] = (labels[idx] + offsets) % dataset.n_classes
        mask[idx] = True
    return LabeledDataset(dataset.features.copy(), labels, dataset.n_classes, corruption_mask=mask)


def save_csv(dataset: LabeledDataset, path: str | Path, label_column: str = "label") -> None:
    """Write a dataset (and its corruption mask, if any) as CSV."""
    path = Path(path)
    feature_cols = [f"x{i}" for i in range(dataset.dim)]
    header = feature_cols + [label_column]
    if dataset.corruption_mask is not None:
        header.append("corrupted")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(str(int(dataset.labels[i])))
            if dataset.corruption_mask is not None:
                row.append(str(int(dataset.corruption_mask[i])))
            writer.writerow(row)


def load_csv(
    path: str | Path,
    n_classes: int,
    label_column: str = "label",
    feature_columns: list[str] | None = None,
) -> LabeledDataset:
    """Read a dataset from CSV, preserving row order.

    ``feature_columns`` defaults to every column except the label column and
    the optional ``corrupted`` column.  Raises FileNotFoundError for a
    missing file, CsvFormatError (with the 1-based line number) for a
    malformed row, and LabelRangeError for labels outside [0, n_classes).
    Corruption masks are never loaded; they are evaluation-side state.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty file, expected a header row", line=1) from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise CsvFormatError(f"label column {label_column!r} not in header {header}", line=1)
        if feature_columns is None:
            feature_columns = [c for c in header if c not in (label_column, "corrupted")]
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise CsvFormatError(f"feature columns {missing} not in header {header}", line=1)
        feat_idx = [header.index(c) for c in feature_columns]
        label_idx = header.index(label_column)

        features: list[list[float]] = []
        labels: list[int] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvFormatError(
                    f"expected {len(header)} cells, got {len(row)}", line=line_no
                )
            try:
                features.append([float(row[i]) for i in feat_idx])
            except ValueError as e:
                raise CsvFormatError(f"bad feature cell: {e}", line=line_no) from None
            try:
                y = int(row[label_idx])
            except ValueError:
                raise CsvFormatError(
                    f"label {row[label_idx]!r} is not an integer", line=line_no
                ) from None
            if not 0 <= y < n_classes:
                raise LabelRangeError(f"label {y} outside [0, {n_classes})", line=line_no)
            labels.append(y)
    if not features:
        raise CsvFormatError("no data rows", line=2)
    return LabeledDataset(np.array(features), np.array(labels), n_classes=n_classes)
