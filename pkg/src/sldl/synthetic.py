"""Small generated datasets with known structure, for demos and tests."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .dataset import Dataset


def clustered_dataset(n: int = 500, clusters: int = 5, q: int = 20, noise: float = 1.0,
                      separation: float = 4.0, seed: int = 0) -> Dataset:
    """Gaussian feature clusters, each tagged with a fixed 3-label set.

    Cluster ``k`` carries a specific label ``s_k``, a cluster-only label
    ``t_k`` and one of two general labels ``g``. General labels are shared by
    several clusters, so ``s_k`` implies ``g`` while ``g`` does not imply
    ``s_k``. Labels are numbered ``g0, g1, s_0..s_{K-1}, t_0..t_{K-1}``.
    Features are shifted to be nonnegative-mean so rows keep distinct
    directions after L2 normalization.
    """
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, separation, size=(clusters, q))
    assign = np.arange(n) % clusters
    rng.shuffle(assign)
    X = centers[assign] + rng.normal(0.0, noise, size=(n, q))
    rows, cols = [], []
    for i, k in enumerate(assign):
        for lab in (int(k % 2), 2 + int(k), 2 + clusters + int(k)):
            rows.append(i)
            cols.append(lab)
    c = 2 + 2 * clusters
    Y = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, c))
    Y.sort_indices()
    return Dataset(sp.csr_matrix(X), Y)


def planted_transfer(c: int = 20, dim: int = 2, seed: int = 1) -> np.ndarray:
    """Row-stochastic ``c x c`` matrix with a planted geometric ranking.

    Labels get hidden positions ``x_l ~ N(0, I_dim)`` and transfer mass
    proportional to ``exp(-||x_i - x_j||^2)``, so each row ranks the other
    labels by hidden distance.
    """
    rng = np.random.default_rng(seed)
    pos = rng.normal(size=(c, dim))
    sq = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=-1)
    P = np.exp(-sq)
    return P / P.sum(axis=1, keepdims=True)
