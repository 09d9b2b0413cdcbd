"""Multiply a block plan by V through the value pyramid, and the end-to-end
approximate attention built on it."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attention import AttentionInputs
from .plan import FULL, Plan, ResolutionSchedule, construct_plan
from .pyramid import Pyramid, build_pyramid

ROW_SUM_GUARD = 1e-300


def _accumulate(plan: Plan, n: int, d: int, weight_rows, shift: Optional[float]):
    """Shared coarse-to-fine accumulator.

    ``weight_rows(s, y0)`` returns the per-entry payload rows (shape
    ``len(y0) x d``) that get scaled by ``mu * s`` and added to block row
    ``x`` at scale ``s``.  Coarser accumulators are duplicated down to the
    next scale before finer entries are added.
    """
    mu = plan.shifted_mu(shift)
    Y = np.zeros((1, d))
    for s in plan.scales:
        sel = plan.scale == s
        Y = np.repeat(Y, (n // s) // Y.shape[0], axis=0)
        contrib = (mu[sel] * s)[:, None] * weight_rows(s, plan.y[sel] - 1)
        np.add.at(Y, plan.x[sel] - 1, contrib)
    return np.repeat(Y, n // Y.shape[0], axis=0)


def matvec(
    plan: Plan, pyrV: Pyramid, n: Optional[int] = None, shift: Optional[float] = None
) -> np.ndarray:
    """``exp(-shift) * (sum mu B) V`` without forming the ``n x n`` matrix.

    A block of side ``s`` multiplies ``s`` value rows, which equals ``s``
    times their pooled mean, hence the ``mu * s * V_s[y]`` update.
    ``shift`` defaults to the plan's global shift.
    """
    n = plan.n if n is None else n
    if pyrV.base_n != n:
        raise ValueError(f"value pyramid has n={pyrV.base_n}, plan has n={n}")
    return _accumulate(plan, n, pyrV.d, lambda s, y0: pyrV.level(s)[y0], shift)


def row_sums(plan: Plan, n: Optional[int] = None, shift: Optional[float] = None) -> np.ndarray:
    """``exp(-shift) * (sum mu B) 1``."""
    n = plan.n if n is None else n
    ones = lambda s, y0: np.ones((len(y0), 1))  # noqa: E731
    return _accumulate(plan, n, 1, ones, shift)[:, 0]


@dataclass
class ApproxDiagnostics:
    uncovered_row_count: int
    global_shift: float
    mu_evals: dict[int, int] = field(default_factory=dict)
    plan_size: int = 0


@dataclass
class ApproxOutput:
    Z_hat: np.ndarray
    raw_AV: np.ndarray
    row_sums: np.ndarray
    diagnostics: ApproxDiagnostics
    plan: Plan = field(repr=False)


def normalize(raw_AV: np.ndarray, sums: np.ndarray) -> tuple[np.ndarray, int]:
    """Divide rows by their sums; rows under the guard become zero."""
    ok = sums >= ROW_SUM_GUARD
    Z = np.zeros_like(raw_AV)
    Z[ok] = raw_AV[ok] / sums[ok, None]
    return Z, int(np.count_nonzero(~ok))


def approx_attention(
    inputs: AttentionInputs, schedule: ResolutionSchedule, variant: str = FULL
) -> ApproxOutput:
    """Multiscale block approximation of ``softmax(P) V``.

    All block scores are shifted by the largest evaluated logit before
    exponentiation; the shift cancels in the row normalization.
    """
    n = inputs.n
    schedule.validate_for(n)
    s0 = schedule.coarsest
    pyrQ = build_pyramid(inputs.Q, s0)
    pyrK = build_pyramid(inputs.K, s0)
    pyrV = build_pyramid(inputs.V, s0)
    plan = construct_plan(
        pyrQ, pyrK, schedule, inputs.logit_scale, variant, inputs.logit_bias
    )
    raw = matvec(plan, pyrV, n)
    sums = row_sums(plan, n)
    Z, uncovered = normalize(raw, sums)
    diag = ApproxDiagnostics(
        uncovered_row_count=uncovered,
        global_shift=plan.global_shift,
        mu_evals=dict(plan.mu_evals),
        plan_size=len(plan),
    )
    return ApproxOutput(Z_hat=Z, raw_AV=raw, row_sums=sums, diagnostics=diag, plan=plan)
