"""Multi-label datasets in the extreme-classification sparse text format.

A file starts with a header line ``n q c`` followed by one line per instance::

    l1,l2,... i1:v1 i2:v2 ...

The label list may be empty, in which case the line starts directly with the
first ``index:value`` pair (or is blank).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class DatasetFormatError(ValueError):
    """Raised when dataset text does not follow the sparse format."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature/label pair of sparse matrices.

    ``features`` is an ``n x q`` float64 CSR matrix, ``labels`` an ``n x c``
    int8 CSR matrix holding ones for relevant labels.
    """

    features: sp.csr_matrix
    labels: sp.csr_matrix

    def __post_init__(self):
        n_f, _ = self.features.shape
        n_l, _ = self.labels.shape
        if n_f != n_l:
            raise ValueError(f"features have {n_f} rows but labels have {n_l}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def q(self) -> int:
        return self.features.shape[1]

    @property
    def c(self) -> int:
        return self.labels.shape[1]

    def label_sets(self) -> list[np.ndarray]:
        """Return the sorted label indices of every instance."""
        Y = self.labels
        return [Y.indices[Y.indptr[i]:Y.indptr[i + 1]].copy() for i in range(self.n)]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(self.features[rows], self.labels[rows])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.features.shape == other.features.shape
            and self.labels.shape == other.labels.shape
            and (self.features != other.features).nnz == 0
            and (self.labels != other.labels).nnz == 0
        )

    __hash__ = None


def _csr(rows, cols, vals, shape, dtype) -> sp.csr_matrix:
    m = sp.csr_matrix(
        (np.asarray(vals, dtype=dtype), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=shape,
    )
    m.sort_indices()
    return m


def _parse_index(token: str, line_no: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise DatasetFormatError(f"line {line_no}: non-integer {what} index {token!r}") from None


def parse_sparse_dataset(text: str, one_based: bool = False) -> Dataset:
    """Parse a dataset from its sparse text representation.

    Parameters
    ----------
    text : str
        Full file contents. LF or CRLF line endings are accepted.
    one_based : bool
        Treat feature and label indices in the file as starting from 1.

    Raises
    ------
    DatasetFormatError
        On a malformed header, out-of-range or duplicate indices,
        non-numeric or non-finite values, or a line count that differs
        from the declared ``n``.
    """
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError("missing header line 'n q c'")
    header = lines[0].split()
    if len(header) != 3:
        raise DatasetFormatError(f"header must be 'n q c', got {lines[0]!r}")
    try:
        n, q, c = (int(t) for t in header)
    except ValueError:
        raise DatasetFormatError(f"header must hold three integers, got {lines[0]!r}") from None
    if n < 0 or q < 0 or c < 0:
        raise DatasetFormatError(f"negative dimension in header {lines[0]!r}")

    body = lines[1:]
    # a trailing blank line is not an instance
    while len(body) > n and not body[-1].strip():
        body.pop()
    if len(body) != n:
        raise DatasetFormatError(f"header declares {n} instances but found {len(body)} data lines")

    offset = 1 if one_based else 0
    f_rows, f_cols, f_vals = [], [], []
    l_rows, l_cols = [], []
    for i, line in enumerate(body):
        line_no = i + 2
        tokens = line.split()
        if tokens and ":" not in tokens[0]:
            seen = set()
            for tok in tokens[0].split(","):
                if not tok:
                    continue
                lab = _parse_index(tok, line_no, "label") - offset
                if not 0 <= lab < c:
                    raise DatasetFormatError(f"line {line_no}: label index {lab + offset} out of range for c={c}")
                if lab in seen:
                    raise DatasetFormatError(f"line {line_no}: duplicate label {lab + offset}")
                seen.add(lab)
                l_rows.append(i)
                l_cols.append(lab)
            tokens = tokens[1:]
        seen = set()
        for tok in tokens:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise DatasetFormatError(f"line {line_no}: expected 'index:value', got {tok!r}")
            idx = _parse_index(idx_s, line_no, "feature") - offset
            if not 0 <= idx < q:
                raise DatasetFormatError(f"line {line_no}: feature index {idx + offset} out of range for q={q}")
            if idx in seen:
                raise DatasetFormatError(f"line {line_no}: duplicate feature index {idx + offset}")
            seen.add(idx)
            try:
                val = float(val_s)
            except ValueError:
                raise DatasetFormatError(f"line {line_no}: non-numeric value {val_s!r}") from None
            if not math.isfinite(val):
                raise DatasetFormatError(f"line {line_no}: non-finite value {val_s!r}")
            f_rows.append(i)
            f_cols.append(idx)
            f_vals.append(val)

    features = _csr(f_rows, f_cols, f_vals, (n, q), np.float64)
    labels = _csr(l_rows, l_cols, np.ones(len(l_rows)), (n, c), np.int8)
    return Dataset(features, labels)


def load_dataset(path, one_based: bool = False) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_sparse_dataset(fh.read(), one_based=one_based)


def serialize_dataset(d: Dataset) -> str:
    """Inverse of :func:`parse_sparse_dataset` (zero-based, ``repr`` floats)."""
    out = [f"{d.n} {d.q} {d.c}"]
    X, Y = d.features, d.labels
    for i in range(d.n):
        labs = ",".join(str(j) for j in Y.indices[Y.indptr[i]:Y.indptr[i + 1]])
        lo, hi = X.indptr[i], X.indptr[i + 1]
        feats = " ".join(f"{j}:{v!r}" for j, v in zip(X.indices[lo:hi].tolist(), X.data[lo:hi].tolist()))
        out.append(f"{labs} {feats}".rstrip() if labs else f" {feats}".rstrip())
    return "\n".join(out) + "\n"


def l2_normalize(d: Dataset) -> Dataset:
    """Scale every nonzero feature row to unit Euclidean norm.

    All-zero rows are left untouched.
    """
    X = d.features.tocsr(copy=True)
    norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
    scale = np.ones_like(norms)
    nz = norms > 0
    scale[nz] = 1.0 / norms[nz]
    X = sp.csr_matrix(sp.diags(scale) @ X)
    X.sort_indices()
    return Dataset(X, d.labels)


def add_bias(d: Dataset) -> Dataset:
    """Append a constant-1 feature column (apply after normalization)."""
    ones = sp.csr_matrix(np.ones((d.n, 1)))
    X = sp.hstack([d.features, ones], format="csr")
    return Dataset(X, d.labels)


def drop_unlabeled(d: Dataset) -> Dataset:
    """Remove instances whose label set is empty."""
    keep = np.flatnonzero(np.diff(d.labels.indptr) > 0)
    return d.subset(keep)


@dataclass(frozen=True)
class FoldPlan:
    fold_count: int
    assignments: np.ndarray
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.fold_count)


def make_folds(d: Dataset | int, fold_count: int, seed: int) -> FoldPlan:
    """Shuffle instances into ``fold_count`` folds whose sizes differ by at most one."""
    n = d if isinstance(d, int) else d.n
    if not 2 <= fold_count <= n:
        raise ValueError(f"fold_count must lie in [2, {n}], got {fold_count}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) % fold_count
    return FoldPlan(fold_count, assignments, seed)


def label_frequencies(d: Dataset) -> np.ndarray:
    """Number of instances carrying each label."""
    return np.bincount(d.labels.indices, minlength=d.c).astype(np.int64)
