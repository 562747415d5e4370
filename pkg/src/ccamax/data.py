"""Paired data: ingestion, validation, labeling, and row re-ordering.

A :class:`PairedDataset` holds two blocks of observations measured on the same
rows. Both blocks are stored column-major (Fortran order) because every
downstream computation streams down columns (means, covariances, residuals).
Datasets are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.asfortranarray(a, dtype=np.float64)
    if out is a:
        out = out.copy(order="F")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PairedDataset:
    """n paired observations of two real-valued blocks with column labels.

    Invariants enforced at construction: both blocks share the row count
    (n >= 3), every entry is finite, and labels are unique within a block.
    """

    x: np.ndarray
    y: np.ndarray
    x_names: tuple[str, ...]
    y_names: tuple[str, ...]

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        if x.ndim != 2 or y.ndim != 2:
            raise ValidationError("data blocks must be 2-dimensional")
        if x.shape[0] != y.shape[0]:
            raise ValidationError(
                f"row-count mismatch: X has {x.shape[0]} rows, Y has {y.shape[0]}"
            )
        if x.shape[0] < 3:
            raise ValidationError(f"need at least 3 paired rows, got {x.shape[0]}")
        if x.shape[1] < 1 or y.shape[1] < 1:
            raise ValidationError("each block needs at least one column")
        for label, block in (("X", x), ("Y", y)):
            if not np.isfinite(block).all():
                r, c = np.argwhere(~np.isfinite(block))[0]
                raise ValidationError(
                    f"non-finite value in {label} at row {r + 1}, column {c + 1}"
                )
        names_x = tuple(str(s) for s in self.x_names)
        names_y = tuple(str(s) for s in self.y_names)
        if len(names_x) != x.shape[1] or len(names_y) != y.shape[1]:
            raise ValidationError("label count does not match column count")
        for label, names in (("X", names_x), ("Y", names_y)):
            if len(set(names)) != len(names):
                raise ValidationError(f"duplicate column labels in {label} block")
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "x_names", names_x)
        object.__setattr__(self, "y_names", names_y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.y.shape[1]


def as_paired(X, Y, x_names=None, y_names=None) -> PairedDataset:
    """Validate two array-likes into a PairedDataset, synthesizing labels."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if x_names is None:
        x_names = tuple(f"X{i + 1}" for i in range(X.shape[1]))
    if y_names is None:
        y_names = tuple(f"Y{i + 1}" for i in range(Y.shape[1]))
    return PairedDataset(X, Y, tuple(x_names), tuple(y_names))


@dataclass(frozen=True)
class Ordering:
    """A bijection on row indices, reproducible from an integer seed."""

    permutation: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        perm = np.asarray(self.permutation, dtype=np.int64)
        n = perm.shape[0]
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(n)):
            raise ValidationError("permutation is not a bijection on 0..n-1")
        perm = perm.copy()
        perm.flags.writeable = False
        object.__setattr__(self, "permutation", perm)

    def __len__(self) -> int:
        return self.permutation.shape[0]

    @classmethod
    def from_seed(cls, n: int, seed: int) -> "Ordering":
        perm = np.random.default_rng(seed).permutation(n)
        return cls(perm, seed=int(seed))

    @classmethod
    def identity(cls, n: int) -> "Ordering":
        return cls(np.arange(n), seed=None)


def reorder(data: PairedDataset, ordering: Ordering) -> PairedDataset:
    """Permute rows of both blocks identically, preserving the pairing."""
    if len(ordering) != data.n:
        raise ValidationError(
            f"ordering length {len(ordering)} does not match n={data.n}"
        )
    perm = ordering.permutation
    return PairedDataset(data.x[perm], data.y[perm], data.x_names, data.y_names)


def bound_check(data: PairedDataset) -> list[str]:
    """Warn (never reject) about columns whose range leaves [-1, 1]."""
    warnings = []
    for label, block, names in (
        ("X", data.x, data.x_names),
        ("Y", data.y, data.y_names),
    ):
        lo = block.min(axis=0)
        hi = block.max(axis=0)
        for c in np.flatnonzero((lo < -1.0) | (hi > 1.0)):
            warnings.append(
                f"{label} column {names[c]!r} outside [-1, 1]: "
                f"min={lo[c]:.6g}, max={hi[c]:.6g}"
            )
    return warnings


def _parse_csv(path, header: bool, block_label: str):
    rows = []
    names = None
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, cells in enumerate(reader, start=1):
            if not cells or (len(cells) == 1 and cells[0].strip() == ""):
                continue
            if header and names is None:
                names = [c.strip() for c in cells]
                continue
            parsed = []
            for col, cell in enumerate(cells, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ValidationError(
                        f"{path}: non-numeric cell {cell.strip()!r} at "
                        f"row {lineno}, column {col}"
                    ) from None
                if not np.isfinite(v):
                    raise ValidationError(
                        f"{path}: non-finite value {cell.strip()!r} at "
                        f"row {lineno}, column {col}"
                    )
                parsed.append(v)
            rows.append(parsed)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ValidationError(
                f"{path}: row {i + 1} has {len(r)} cells, expected {width}"
            )
    if names is None:
        names = [f"{block_label}{i + 1}" for i in range(width)]
    elif len(names) != width:
        raise ValidationError(
            f"{path}: header has {len(names)} labels for {width} columns"
        )
    return np.array(rows, dtype=np.float64), tuple(names)


def load_csv(path_x, path_y, header: bool = True) -> PairedDataset:
    """Load paired CSV files (one observation per row) into a dataset.

    Cells must parse as decimal or scientific-notation floats; the first line
    is treated as a header when ``header`` is true, otherwise labels are
    synthesized as X1..Xp and Y1..Yq.
    """
    x, x_names = _parse_csv(path_x, header, "X")
    y, y_names = _parse_csv(path_y, header, "Y")
    if x.shape[0] != y.shape[0]:
        raise ValidationError(
            f"row-count mismatch: {path_x} has {x.shape[0]} rows, "
            f"{path_y} has {y.shape[0]}"
        )
    return PairedDataset(x, y, x_names, y_names)


def save_csv(data: PairedDataset, path_x, path_y, header: bool = True) -> None:
    """Write both blocks to CSV with full round-trip float precision."""
    for path, block, names in (
        (path_x, data.x, data.x_names),
        (path_y, data.y, data.y_names),
    ):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if header:
                writer.writerow(names)
            for row in block:
                writer.writerow([repr(float(v)) for v in row])
