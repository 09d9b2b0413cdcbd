"""Reference approximators for an attention matrix: truncated SVD, top-k
entries, block-sparse plus residual split, coarse block matrix, 2D Haar
thresholding, and magnitude truncation over the block frame."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .plan import (
    ComponentId,
    block_means,
    expand_blocks,
    full_frame,
    reference_decompose,
)
from .pyramid import build_pyramid, is_power_of_two


def _rel(approx: np.ndarray, A: np.ndarray) -> float:
    denom = np.linalg.norm(A)
    if denom == 0:
        raise ZeroDivisionError("reference matrix has zero norm")
    return float(np.linalg.norm(approx - A) / denom)


def _square(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got {A.shape}")
    return A


def _top_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest values; ties go to the lower index."""
    return np.argsort(-values, kind="stable")[:k]


# ---------------------------------------------------------------------------
# Low rank and sparse
# ---------------------------------------------------------------------------


def lowrank_svd(A: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    """Best rank-``k`` Frobenius approximation (truncated SVD)."""
    A = np.asarray(A, dtype=np.float64)
    if not 1 <= k <= min(A.shape):
        raise ValueError(f"rank must be in [1, {min(A.shape)}], got {k}")
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    approx = (U[:, :k] * S[:k]) @ Vt[:k]
    return approx, _rel(approx, A)


def topk_sparse(A: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    """Keep the ``k`` largest-magnitude entries (row-major tie order)."""
    A = np.asarray(A, dtype=np.float64)
    if not 0 <= k <= A.size:
        raise ValueError(f"k must be in [0, {A.size}], got {k}")
    flat = A.ravel()
    keep = _top_indices(np.abs(flat), k)
    out = np.zeros_like(flat)
    out[keep] = flat[keep]
    approx = out.reshape(A.shape)
    return approx, _rel(approx, A)


# ---------------------------------------------------------------------------
# Block sparse + residual
# ---------------------------------------------------------------------------


@dataclass
class RpcaBlockSolution:
    S_support: list[ComponentId]
    L_norm: float
    coarse_scores: np.ndarray  # mean of exp(2P) per block, (n/b) x (n/b)
    proxy_scores: np.ndarray  # squared exp-of-mean score per block
    proxy_support: list[ComponentId]
    ranking_agreement: int  # blocks in both the exact and the proxy support
    S_dense: Optional[np.ndarray] = None


def rpca_block_solution(
    P: np.ndarray, b: int, m: int, keep_dense: bool = True
) -> RpcaBlockSolution:
    """Block-supported minimizer of ``||S||_0 + lambda ||A - S||_F``.

    For a fixed number ``m`` of ``b x b`` blocks the residual norm is
    smallest when ``S`` copies ``A = exp(P)`` on the blocks with the largest
    mean of ``exp(2P)``.  The cheap pooled proxy (squared exp of the block
    mean) is ranked alongside for comparison.
    """
    P = _square(P)
    n = P.shape[0]
    if b < 1 or n % b:
        raise ValueError(f"block size {b} must divide n={n}")
    g = n // b
    m = max(0, min(m, g * g))
    A = np.exp(P)
    exact = block_means(np.exp(2 * P), b)
    proxy = np.exp(2 * block_means(P, b))

    def support(scores):
        idx = _top_indices(scores.ravel(), m)
        return [ComponentId(b, int(i) // g + 1, int(i) % g + 1) for i in idx]

    S_support = support(exact)
    proxy_support = support(proxy)
    mask = np.zeros((g, g), dtype=bool)
    for c in S_support:
        mask[c.x - 1, c.y - 1] = True
    S = np.where(expand_blocks(mask, b), A, 0.0)
    return RpcaBlockSolution(
        S_support=S_support,
        L_norm=float(np.linalg.norm(A - S)),
        coarse_scores=exact,
        proxy_scores=proxy,
        proxy_support=proxy_support,
        ranking_agreement=len(set(S_support) & set(proxy_support)),
        S_dense=S if keep_dense else None,
    )


def coarse_lowrank(
    Q: np.ndarray, K: np.ndarray, b: int, logit_scale: float = 1.0, tol: float = 1e-10
) -> tuple[np.ndarray, bool]:
    """All-coarse block matrix from pooled scores and its rank check.

    Returns the ``n x n`` matrix and whether its numerical rank (singular
    values above ``tol * sigma_1``) is at most ``n / b``.
    """
    Q = np.asarray(Q, dtype=np.float64)
    n = Q.shape[0]
    pq, pk = build_pyramid(Q, b), build_pyramid(K, b)
    M = np.exp(logit_scale * pq.level(b) @ pk.level(b).T)
    Ab = expand_blocks(M, b)
    sv = np.linalg.svd(Ab, compute_uv=False)
    rank = int(np.count_nonzero(sv > tol * sv[0])) if sv[0] > 0 else 0
    return Ab, rank <= n // b


# ---------------------------------------------------------------------------
# 2D Haar
# ---------------------------------------------------------------------------

_R2 = 1.0 / math.sqrt(2.0)


@dataclass
class HaarCoefficients:
    """Full-depth orthonormal 2D Haar coefficients.

    ``details[0]`` is the finest level.  Each level is a
    ``(horizontal, vertical, diagonal)`` triple of equal-size arrays:

    * horizontal: low-pass along rows of the matrix, high-pass across rows
      (responds to differences between consecutive rows);
    * vertical: high-pass along each row (differences between columns);
    * diagonal: high-pass in both directions.

    The high-pass filter is ``(first - second) / sqrt(2)``.
    """

    n: int
    scaling: float
    details: list[tuple[np.ndarray, np.ndarray, np.ndarray]]

    def flat(self) -> np.ndarray:
        """All coefficients in canonical order: scaling, then levels from
        coarsest to finest, each as horizontal, vertical, diagonal (row-major)."""
        parts = [np.array([self.scaling])]
        for h, v, dg in reversed(self.details):
            parts.extend([h.ravel(), v.ravel(), dg.ravel()])
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, n: int, values: np.ndarray) -> "HaarCoefficients":
        values = np.asarray(values, dtype=np.float64)
        pos = 1
        levels = []
        side = 1
        while side < n:
            size = side * side
            trip = tuple(
                values[pos + t * size : pos + (t + 1) * size].reshape(side, side)
                for t in range(3)
            )
            levels.append(trip)
            pos += 3 * size
            side *= 2
        return cls(n=n, scaling=float(values[0]), details=list(reversed(levels)))


def haar2d_decompose(A: np.ndarray) -> HaarCoefficients:
    A = _square(A)
    n = A.shape[0]
    if not is_power_of_two(n):
        raise ValueError(f"Haar transform needs a power-of-two side, got {n}")
    cur = A
    details = []
    while cur.shape[0] > 1:
        lo = (cur[:, 0::2] + cur[:, 1::2]) * _R2  # along each row
        hi = (cur[:, 0::2] - cur[:, 1::2]) * _R2
        ll = (lo[0::2] + lo[1::2]) * _R2
        horizontal = (lo[0::2] - lo[1::2]) * _R2
        vertical = (hi[0::2] + hi[1::2]) * _R2
        diagonal = (hi[0::2] - hi[1::2]) * _R2
        details.append((horizontal, vertical, diagonal))
        cur = ll
    return HaarCoefficients(n=n, scaling=float(cur[0, 0]), details=details)


def haar2d_inverse(coeffs: HaarCoefficients) -> np.ndarray:
    cur = np.array([[coeffs.scaling]])
    for horizontal, vertical, diagonal in reversed(coeffs.details):
        side = cur.shape[0]
        lo = np.empty((2 * side, side))
        hi = np.empty((2 * side, side))
        lo[0::2] = (cur + horizontal) * _R2
        lo[1::2] = (cur - horizontal) * _R2
        hi[0::2] = (vertical + diagonal) * _R2
        hi[1::2] = (vertical - diagonal) * _R2
        nxt = np.empty((2 * side, 2 * side))
        nxt[:, 0::2] = (lo + hi) * _R2
        nxt[:, 1::2] = (lo - hi) * _R2
        cur = nxt
    return cur


def keep_count(keep_fraction: float, n: int) -> int:
    if not 0.0 <= keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in [0, 1], got {keep_fraction}")
    # Guard against 0.1 * 100 style rounding pushing ceil up by one.
    return min(n * n, math.ceil(round(keep_fraction * n * n, 9)))


def haar2d_reconstruct(
    coeffs: HaarCoefficients, keep_fraction: float, reference: Optional[np.ndarray] = None
) -> tuple[np.ndarray, float]:
    """Keep the ``ceil(keep_fraction * n^2)`` largest-magnitude coefficients.

    The error is relative to ``reference`` if given, otherwise to the exact
    inverse of ``coeffs``.
    """
    n = coeffs.n
    k = keep_count(keep_fraction, n)
    flat = coeffs.flat()
    kept = np.zeros_like(flat)
    idx = _top_indices(np.abs(flat), k)
    kept[idx] = flat[idx]
    approx = haar2d_inverse(HaarCoefficients.from_flat(n, kept))
    ref = haar2d_inverse(coeffs) if reference is None else reference
    return approx, _rel(approx, ref)


def frame_truncate(A: np.ndarray, keep_fraction: float) -> tuple[np.ndarray, float]:
    """Keep the largest-magnitude block-frame coefficients.

    Coefficients come from residual peeling over the full frame; the budget
    is ``ceil(keep_fraction * n^2)`` coefficients, as for the Haar basis.
    """
    A = _square(A)
    n = A.shape[0]
    dec = reference_decompose(A, full_frame(n))
    comps = list(dec.coefficients)
    vals = np.array([dec.coefficients[c] for c in comps])
    k = keep_count(keep_fraction, n)
    out = np.zeros_like(A)
    for i in _top_indices(np.abs(vals), k):
        c = comps[i]
        out[c.rows, c.cols] += vals[i]
    return out, _rel(out, A)


def coefficient_histogram(
    values: np.ndarray, bins: int = 40, floor: float = 1e-12
) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of ``log10 |value|``; magnitudes below ``floor`` are clipped."""
    mags = np.log10(np.maximum(np.abs(np.asarray(values).ravel()), floor))
    counts, edges = np.histogram(mags, bins=bins)
    return edges, counts


def histogram_csv(edges: np.ndarray, counts: np.ndarray) -> str:
    lines = ["log10_lo,log10_hi,count"]
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        lines.append(f"{lo:.17g},{hi:.17g},{int(c)}")
    return "\n".join(lines) + "\n"
