"""Dense float64 primitives and numerical rank via one-sided Jacobi SVD.

Shapes are checked strictly (no broadcasting) so that a mismatch surfaces
as ValueError at the call site instead of a silently broadcast result.
"""

from __future__ import annotations

import numpy as np

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def transpose(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).T.copy()


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    return a - b


def scale(a: np.ndarray, c: float) -> np.ndarray:
    return np.asarray(a, dtype=np.float64) * float(c)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of relu; 0 at x == 0."""
    return (np.asarray(x, dtype=np.float64) > 0.0).astype(np.float64)


def _round_robin_pairs(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: n-1 rounds of disjoint index pairs covering all.

    Disjoint pairs within a round can be rotated simultaneously, which lets
    a sweep run on whole column blocks instead of one pair at a time.
    """
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    arr = players[:]
    for _ in range(size - 1):
        pairs = [(arr[k], arr[size - 1 - k]) for k in range(size // 2)]
        pairs = [(min(p), max(p)) for p in pairs if p[0] != -1 and p[1] != -1]
        rounds.append((np.array([p[0] for p in pairs], dtype=np.intp),
                       np.array([p[1] for p in pairs], dtype=np.intp)))
        arr = [arr[0], arr[-1]] + arr[1:-1]
    return rounds


def jacobi_singular_values(a: np.ndarray, tol: float = JACOBI_TOL,
                           max_sweeps: int = JACOBI_MAX_SWEEPS) -> np.ndarray:
    """Singular values by one-sided Jacobi, descending order.

    Column pairs are rotated (in a round-robin parallel ordering) until
    every pair satisfies |a_i . a_j| <= tol * ||a_i|| * ||a_j|| or the
    sweep cap is hit. Works on the transpose when that gives fewer
    columns. Intended for desk-scale matrices.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    total = min(a.shape)
    # exactly-zero rows/columns carry zero singular values; dropping them is
    # exact and pays off on sparsity-masked inputs
    a = a[np.any(a != 0.0, axis=1)][:, np.any(a != 0.0, axis=0)]
    if a.shape[0] < a.shape[1]:
        a = a.T
    if min(a.shape) == 0:
        return np.zeros(total, dtype=np.float64)
    # power-of-two scaling (exact) keeps squared norms inside float range
    escale = 2.0 ** np.ceil(np.log2(np.max(np.abs(a))))
    # rows of w are the columns being orthogonalized (contiguous per column)
    w = np.ascontiguousarray(a.T) / escale
    n_cols = w.shape[0]
    if n_cols > 1:
        rounds = _round_robin_pairs(n_cols)
        for _ in range(max_sweeps):
            rotated = False
            for left, right in rounds:
                ci = w[left]
                cj = w[right]
                alpha = np.einsum("ij,ij->i", ci, ci)
                beta = np.einsum("ij,ij->i", cj, cj)
                gamma = np.einsum("ij,ij->i", ci, cj)
                active = np.abs(gamma) > tol * (np.sqrt(alpha) * np.sqrt(beta))
                if not np.any(active):
                    continue
                rotated = True
                li, ri = left[active], right[active]
                al, be, ga = alpha[active], beta[active], gamma[active]
                with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                    zeta = (be - al) / (2.0 * ga)
                    t = np.where(
                        zeta == 0.0, 1.0,
                        np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta)),
                    )
                    # |zeta| beyond float range: fall back to t ~ 1/(2 zeta)
                    huge = ~np.isfinite(zeta * zeta)
                    if np.any(huge):
                        t = np.where(huge, ga / (be - al), t)
                c = 1.0 / np.hypot(1.0, t)
                s = c * t
                wi = w[li].copy()
                wj = w[ri]
                w[li] = c[:, None] * wi - s[:, None] * wj
                w[ri] = s[:, None] * wi + c[:, None] * wj
            if not rotated:
                break

    sv = np.sqrt(np.einsum("ij,ij->i", w, w)) * escale
    sv[::-1].sort()
    out = np.zeros(total, dtype=np.float64)
    out[:sv.size] = sv
    return out


def numerical_rank(a: np.ndarray, rtol: float | None = None) -> int:
    """Count of singular values above rtol * sigma_max.

    Default rtol is max(rows, cols) * machine epsilon, the usual
    numerical-rank tolerance. Rank of an all-zero matrix is 0.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    sv = jacobi_singular_values(a)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    if rtol is None:
        rtol = max(a.shape) * np.finfo(np.float64).eps
    return int(np.count_nonzero(sv > rtol * sv[0]))
