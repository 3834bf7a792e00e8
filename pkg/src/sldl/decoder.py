"""Nearest-neighbor decoding of predicted embeddings into label scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .regressor import RegressionModel

NORM_FLOOR = 1e-15
DEFAULT_EPSILON = 1e-6


class BoundPreconditionError(ValueError):
    """The nearest-neighbor condition of the decoding bound does not hold."""


@dataclass(frozen=True)
class DecoderState:
    """Transformed training embeddings plus the labels they vote with."""

    Z_hat: np.ndarray
    train_labels: sp.csr_matrix
    k_neighbors: int
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        n = self.Z_hat.shape[0]
        if self.train_labels.shape[0] != n:
            raise ValueError(f"Z_hat has {n} rows but train_labels has {self.train_labels.shape[0]}")
        if not 1 <= self.k_neighbors <= n:
            raise ValueError(f"k_neighbors must lie in [1, {n}], got {self.k_neighbors}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")

    @property
    def c(self) -> int:
        return self.train_labels.shape[1]

    def with_k(self, k: int) -> "DecoderState":
        return DecoderState(self.Z_hat, self.train_labels, k, self.epsilon)


def build_decoder(X, model: RegressionModel, labels, k: int, epsilon: float = DEFAULT_EPSILON) -> DecoderState:
    Z_hat = np.asarray(X @ model.W, dtype=np.float64)
    Y = sp.csr_matrix(labels, dtype=np.float64)
    return DecoderState(Z_hat, Y, k, epsilon)


def cosine_distance(a, b) -> float:
    """``1 - cos(a, b)``; 1 when either vector has (near) zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        return 1.0
    return float(np.clip(1.0 - (a @ b) / (na * nb), 0.0, 2.0))


def cosine_distances(Q, Z) -> np.ndarray:
    """Pairwise cosine distances between rows of ``Q`` (m x d) and ``Z`` (n x d)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    Z = np.asarray(Z, dtype=np.float64)
    nq = np.linalg.norm(Q, axis=1)
    nz = np.linalg.norm(Z, axis=1)
    ok_q = nq >= NORM_FLOOR
    ok_z = nz >= NORM_FLOOR
    Qn = np.where(ok_q[:, None], Q / np.where(ok_q, nq, 1.0)[:, None], 0.0)
    Zn = np.where(ok_z[:, None], Z / np.where(ok_z, nz, 1.0)[:, None], 0.0)
    D = np.clip(1.0 - Qn @ Zn.T, 0.0, 2.0)
    D[~ok_q, :] = 1.0
    D[:, ~ok_z] = 1.0
    return D


def k_smallest(d: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest entries, ties broken by ascending index.

    Returned in ascending (distance, index) order.
    """
    d = np.asarray(d)
    n = d.shape[0]
    if k >= n:
        return np.argsort(d, kind="stable")
    kth = np.partition(d, k - 1)[k - 1]
    below = np.flatnonzero(d < kth)
    ties = np.flatnonzero(d == kth)[: k - below.size]
    idx = np.concatenate([below, ties])
    return idx[np.argsort(d[idx], kind="stable")] if below.size else idx


def _scores(dist_row: np.ndarray, state: DecoderState) -> tuple[np.ndarray, np.ndarray]:
    nbrs = k_smallest(dist_row, state.k_neighbors)
    w = 1.0 / np.maximum(dist_row[nbrs], state.epsilon)
    scores = np.asarray(state.train_labels[nbrs].T @ w).ravel()
    return scores, nbrs


def neighbors(z_query, state: DecoderState) -> np.ndarray:
    d = cosine_distances(z_query, state.Z_hat)[0]
    return k_smallest(d, state.k_neighbors)


def decode(z_query, state: DecoderState) -> np.ndarray:
    """Label scores ``sum_i y_i / max(d_i, epsilon)`` over the k nearest rows of ``Z_hat``."""
    z_query = np.asarray(z_query, dtype=np.float64).ravel()
    if z_query.shape[0] != state.Z_hat.shape[1]:
        raise ValueError(f"query has dimension {z_query.shape[0]}, expected {state.Z_hat.shape[1]}")
    return _scores(cosine_distances(z_query, state.Z_hat)[0], state)[0]


def decode_batch(Zq, state: DecoderState, chunk: int = 1024) -> np.ndarray:
    """Row-wise :func:`decode` for a matrix of queries; returns ``m x c`` scores."""
    Zq = np.atleast_2d(np.asarray(Zq, dtype=np.float64))
    out = np.zeros((Zq.shape[0], state.c))
    for lo in range(0, Zq.shape[0], chunk):
        D = cosine_distances(Zq[lo:lo + chunk], state.Z_hat)
        for r, row in enumerate(D):
            out[lo + r] = _scores(row, state)[0]
    return out


def top_k_labels(scores, k_out: int) -> np.ndarray:
    """``k_out`` labels by descending score, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    c = scores.shape[0]
    if not 1 <= k_out <= c:
        raise ValueError(f"k_out must lie in [1, {c}], got {k_out}")
    return np.argsort(-scores, kind="stable")[:k_out]


def check_bound(z, z_hat, z_tilde, cost: float, b: float) -> bool:
    """Check ``cost <= b (E(z, z~) - sqrt(cost))^2 + b E(z, z^)^2``.

    ``E`` is the Euclidean distance. Requires ``b > 1``, ``cost >= 0`` and
    the neighbor condition ``E(z, z~) <= (b - 1) E(z, z^)``; a violated
    precondition raises BoundPreconditionError rather than returning False.
    """
    z, z_hat, z_tilde = (np.asarray(v, dtype=np.float64) for v in (z, z_hat, z_tilde))
    if not b > 1:
        raise BoundPreconditionError(f"b must exceed 1, got {b}")
    if cost < 0:
        raise BoundPreconditionError(f"cost must be non-negative, got {cost}")
    e_tilde = float(np.linalg.norm(z - z_tilde))
    e_hat = float(np.linalg.norm(z - z_hat))
    if e_tilde > (b - 1) * e_hat:
        raise BoundPreconditionError(
            f"E(z, z_tilde) = {e_tilde:.6g} exceeds (b - 1) E(z, z_hat) = {(b - 1) * e_hat:.6g}")
    return bool(cost <= b * (e_tilde - np.sqrt(cost)) ** 2 + b * e_hat ** 2)


def format_prediction(scores, k_out: int) -> str:
    """``label:score`` pairs in rank order, scores to 6 significant digits."""
    scores = np.asarray(scores).ravel()
    return " ".join(f"{l}:{scores[l]:.6g}" for l in top_k_labels(scores, k_out))


def decode_multi_k(Zq, state: DecoderState, ks, chunk: int = 1024) -> dict[int, np.ndarray]:
    """Scores for several neighbor counts from a single distance pass.

    The neighbor list for a smaller ``k`` is a prefix of the list for the
    largest one, since both are ordered by (distance, index).
    """
    ks = sorted(set(int(k) for k in ks))
    n = state.Z_hat.shape[0]
    if not ks or ks[0] < 1 or ks[-1] > n:
        raise ValueError(f"neighbor counts must lie in [1, {n}], got {ks}")
    Zq = np.atleast_2d(np.asarray(Zq, dtype=np.float64))
    out = {k: np.zeros((Zq.shape[0], state.c)) for k in ks}
    Y = state.train_labels
    for lo in range(0, Zq.shape[0], chunk):
        D = cosine_distances(Zq[lo:lo + chunk], state.Z_hat)
        for r, row in enumerate(D):
            nbrs = k_smallest(row, ks[-1])
            w = 1.0 / np.maximum(row[nbrs], state.epsilon)
            for k in ks:
                out[k][lo + r] = np.asarray(Y[nbrs[:k]].T @ w[:k]).ravel()
    return out
