"""Numerical checks of the error bounds for exp-of-average block scores.

Every check returns a :class:`BoundReport` holding the two sides of one
inequality.  A check passes when ``lhs <= rhs + tol`` (and, for two-sided
checks, ``lhs >= lower - tol``) with ``tol = SLACK * max(1, rhs, scale)``.
``scale`` is the magnitude of the terms whose difference forms ``lhs``, so
the slack only absorbs floating point rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .plan import ComponentId, ResolutionSchedule, construct_plan, expand_blocks
from .pyramid import build_pyramid

SLACK = 1e-12

CSV_FIELDS = ("name", "r", "a", "C_r", "C_2r", "delta", "lower", "lhs", "rhs", "holds")


def jensen_gap_constant(r: float) -> float:
    """``1 + e^r - 2 e^(r/2)``, evaluated as ``expm1(r/2)**2`` for accuracy."""
    if not math.isfinite(r):
        raise ValueError("r must be finite")
    if r < 0:
        raise ValueError(f"range must be >= 0, got {r}")
    return math.expm1(r / 2) ** 2


@dataclass
class BoundReport:
    name: str
    lhs: float
    rhs: float
    lower: Optional[float] = None
    r: float = float("nan")
    a: float = float("nan")
    C_r: float = float("nan")
    C_2r: float = float("nan")
    delta: float = float("nan")
    scale: float = 0.0

    @property
    def holds(self) -> bool:
        tol = SLACK * max(1.0, self.rhs, self.scale)
        ok = self.lhs <= self.rhs + tol
        if self.lower is not None:
            ok = ok and self.lhs >= self.lower - tol
        return bool(ok)

    def csv_row(self) -> str:
        vals = []
        for name in CSV_FIELDS:
            v = getattr(self, name)
            if v is None:
                vals.append("")
            elif isinstance(v, bool):
                vals.append(str(int(v)))
            elif isinstance(v, float):
                vals.append(f"{v:.17g}")
            else:
                vals.append(str(v))
        return ",".join(vals)


def _block(P: np.ndarray, c: ComponentId) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"expected a square matrix, got {P.shape}")
    c.validate(P.shape[0])
    return P[c.rows, c.cols]


def block_scores(P: np.ndarray, c: ComponentId) -> tuple[float, float]:
    """``(mu_star, mu)``: mean of exp and exp of mean over block ``c``."""
    blk = _block(P, c)
    return float(np.exp(blk).mean()), float(np.exp(blk.mean()))


def check_lemma1(P: np.ndarray, c: ComponentId, muStar: float, mu: float) -> BoundReport:
    """``0 <= mu* - mu <= C_r mu`` with ``r`` the measured logit range of ``c``."""
    blk = _block(P, c)
    a = float(blk.min())
    r = float(blk.max()) - a
    cr = jensen_gap_constant(r)
    return BoundReport(
        name="lemma1",
        lhs=muStar - mu,
        rhs=cr * mu,
        lower=0.0,
        r=r,
        a=a,
        C_r=cr,
        C_2r=jensen_gap_constant(2 * r),
        scale=max(abs(muStar), abs(mu)),
    )


def _dual_order(p: float) -> float:
    if p < 1:
        raise ValueError(f"norm order must be >= 1, got {p}")
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1)


def _max_pairwise(rows: np.ndarray, order: float) -> float:
    diff = rows[:, None, :] - rows[None, :, :]
    return float(np.linalg.norm(diff, ord=order, axis=2).max())


def range_bound(
    Q: np.ndarray, K: np.ndarray, c: ComponentId, p: float = 2.0, logit_scale: float = 1.0
) -> float:
    """Hoelder upper bound ``2 * beta1 * beta2`` on the logit range of block ``c``.

    ``beta1`` is the largest p-norm of the block's query and key rows,
    ``beta2`` the largest q-norm difference between two query rows or two
    key rows (exhaustive over pairs).
    """
    q = _dual_order(p)
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    c.validate(Q.shape[0])
    qr, kr = Q[c.rows], K[c.cols]
    beta1 = max(
        np.linalg.norm(qr, ord=p, axis=1).max(), np.linalg.norm(kr, ord=p, axis=1).max()
    )
    beta2 = max(_max_pairwise(qr, q), _max_pairwise(kr, q))
    return float(2.0 * beta1 * beta2 * abs(logit_scale))


def prop1_delta(coarse_mu: np.ndarray, m1: int) -> float:
    """Largest score any unrefined coarse block can have.

    That is the ``m1``-th largest score, or the overall largest when nothing
    is refined.
    """
    ranked = np.sort(np.asarray(coarse_mu).ravel())[::-1]
    if len(ranked) == 0:
        return 0.0
    idx = min(max(m1, 1), len(ranked)) - 1
    return float(ranked[idx])


def check_prop1(
    Q: np.ndarray,
    K: np.ndarray,
    b: int,
    m1: int,
    logit_scale: float = 1.0,
    logit_bias: float = 0.0,
) -> BoundReport:
    """Relative Frobenius error of the two-scale ``{b, 1}`` plan against its bound.

    ``r`` is the largest logit range over all coarse blocks, so the uniform
    range hypothesis holds for every block.
    """
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    n = Q.shape[0]
    if b < 2 or n % b:
        raise ValueError(f"coarse scale {b} must be >= 2 and divide n={n}")
    g = n // b
    if m1 < 0:
        raise ValueError("m1 must be >= 0")
    m1 = min(m1, g * g)
    P = logit_scale * (Q @ K.T) + logit_bias
    A = np.exp(P)
    plan = construct_plan(
        build_pyramid(Q, b),
        build_pyramid(K, b),
        ResolutionSchedule((b, 1), (m1,)),
        logit_scale,
        logit_bias=logit_bias,
    )
    # Scale-1 entries equal exp(P) by construction; only the surviving coarse
    # blocks contribute, which keeps the full-refinement error exactly 0.
    coarse = np.zeros((g, g))
    kept = np.zeros((g, g), dtype=bool)
    sel = plan.scale == b
    coarse[plan.x[sel] - 1, plan.y[sel] - 1] = plan.mu[sel]
    kept[plan.x[sel] - 1, plan.y[sel] - 1] = True
    diff = np.where(expand_blocks(kept, b), expand_blocks(coarse, b) - A, 0.0)
    lhs = float(np.linalg.norm(diff) / np.linalg.norm(A))
    blocks = P.reshape(g, b, g, b)
    r = float((blocks.max(axis=(1, 3)) - blocks.min(axis=(1, 3))).max())
    c2r = jensen_gap_constant(2 * r)
    delta = prop1_delta(np.exp(plan.coarse_logits), m1)
    rhs = math.sqrt((n * n - m1 * b * b) * c2r * delta**2 / float(np.exp(2 * P).sum()))
    return BoundReport(
        name="prop1",
        lhs=lhs,
        rhs=rhs,
        r=r,
        a=float(P.min()),
        C_r=jensen_gap_constant(r),
        C_2r=c2r,
        delta=delta,
    )


def jensen_gap_check(values: Sequence[float]) -> BoundReport:
    """``mean(exp(v)) - exp(mean(v)) <= e^a + e^b - 2 e^((a+b)/2)`` on ``[a, b]``."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("need at least one value")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    lo, hi = float(v.min()), float(v.max())
    lhs = float(np.exp(v).mean() - math.exp(v.mean()))
    rhs = math.exp(lo) * jensen_gap_constant(hi - lo)
    return BoundReport(
        name="jensen_gap", lhs=lhs, rhs=rhs, lower=0.0, r=hi - lo, a=lo,
        C_r=jensen_gap_constant(hi - lo), scale=math.exp(hi),
    )


def check_mu_squared(P: np.ndarray, c: ComponentId) -> BoundReport:
    """Squared exp-of-mean score never exceeds the mean of ``exp(2P)``."""
    blk = _block(P, c)
    mu = math.exp(float(blk.mean()))
    mu_prime = float(np.exp(2 * blk).mean())
    r = float(blk.max() - blk.min())
    return BoundReport(
        name="mu_sq_le_mu_prime", lhs=mu * mu, rhs=mu_prime, r=r, a=float(blk.min()),
        C_2r=jensen_gap_constant(2 * r),
    )


def haar_column_bound(Q: np.ndarray, K: np.ndarray, j: int, p: float = 2.0) -> BoundReport:
    """Level-1 Haar detail l1-norm of column ``j`` (0-based) of ``Q K^T``
    against ``(sum_i ||HQ_i||_p) * ||K_j||_q``."""
    q = _dual_order(p)
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    n = Q.shape[0]
    if n % 2:
        raise ValueError("level-1 Haar details need an even number of rows")
    col = Q @ K[j]
    lhs = float(np.abs(col[0::2] - col[1::2]).sum() / math.sqrt(2))
    hq = (Q[0::2] - Q[1::2]) / math.sqrt(2)
    rhs = float(np.linalg.norm(hq, ord=p, axis=1).sum() * np.linalg.norm(K[j], ord=q))
    return BoundReport(name="haar_column", lhs=lhs, rhs=rhs)


def csv_header() -> str:
    return ",".join(CSV_FIELDS)


__all__ = [
    "BoundReport",
    "SLACK",
    "block_scores",
    "check_lemma1",
    "check_mu_squared",
    "check_prop1",
    "csv_header",
    "haar_column_bound",
    "jensen_gap_check",
    "jensen_gap_constant",
    "prop1_delta",
    "range_bound",
]
