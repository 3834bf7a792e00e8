"""Label co-occurrence graph and discounted random-walk transfer matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

DEFAULT_WALK_STEPS = 4


@dataclass(frozen=True)
class TransferMatrices:
    A: np.ndarray
    A_hat: np.ndarray
    P_total: np.ndarray
    P_hat: np.ndarray
    step_count: int
    gamma_schedule: tuple[float, ...]


def build_cooccurrence(labels) -> np.ndarray:
    """Binary ``c x c`` matrix with ones where two labels share an instance.

    The diagonal is one for every label that occurs at least once.
    """
    Y = sp.csr_matrix(labels, dtype=np.float64)
    Y.data[:] = 1.0
    counts = (Y.T @ Y).toarray()
    return (counts > 0).astype(np.float64)


def row_normalize(A: np.ndarray) -> np.ndarray:
    """Divide each row by its sum; all-zero rows become identity rows."""
    A = np.asarray(A, dtype=np.float64)
    sums = A.sum(axis=1)
    out = np.zeros_like(A)
    pos = sums > 0
    out[pos] = A[pos] / sums[pos, None]
    empty = np.flatnonzero(~pos)
    out[empty, empty] = 1.0
    return out


def _check_stochastic(M: np.ndarray, tol: float = 1e-6) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if np.any(M < 0):
        raise ValueError("transition matrix has negative entries")
    dev = np.abs(M.sum(axis=1) - 1.0)
    if dev.size and dev.max() > tol:
        row = int(dev.argmax())
        raise ValueError(f"row {row} of transition matrix sums to {M[row].sum():.9g}, not 1")


def accumulate_walk(A_hat: np.ndarray, steps: int) -> tuple[np.ndarray, tuple[float, ...]]:
    """Discounted sum ``sum_i 2**-i * A_hat**(i+1)`` for ``i = 0..steps``.

    Returns the accumulated matrix and the discount schedule used.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    A_hat = np.asarray(A_hat, dtype=np.float64)
    _check_stochastic(A_hat)
    P = A_hat.copy()
    gamma = 1.0
    total = gamma * P
    schedule = [gamma]
    for _ in range(steps):
        P = P @ A_hat
        gamma = gamma / 2
        total = total + gamma * P
        schedule.append(gamma)
    return total, tuple(schedule)


def transfer_matrix(A_hat: np.ndarray, steps: int = DEFAULT_WALK_STEPS) -> np.ndarray:
    """Row-standardized accumulated random-walk transfer matrix."""
    total, _ = accumulate_walk(A_hat, steps)
    return total / total.sum(axis=1, keepdims=True)


def build_transfer(labels, steps: int = DEFAULT_WALK_STEPS) -> TransferMatrices:
    """Run the full co-occurrence -> transfer pipeline on a label matrix."""
    A = build_cooccurrence(labels)
    A_hat = row_normalize(A)
    total, schedule = accumulate_walk(A_hat, steps)
    P_hat = total / total.sum(axis=1, keepdims=True)
    return TransferMatrices(A, A_hat, total, P_hat, steps, schedule)


def dump_matrix(path, M: np.ndarray) -> None:
    np.savetxt(path, M, fmt="%.17g", delimiter=" ")
