"""Dyadic block components, greedy multiscale plan construction and the
dense reference decomposition over the overcomplete block frame.

Block coordinates follow the 1-based convention of the block frame: the
component ``(s, x, y)`` covers rows ``s*x - s + 1 .. s*x`` and columns
``s*y - s + 1 .. s*y`` (1-based, inclusive).  In 0-based numpy slicing that
is ``[s*(x-1) : s*x, s*(y-1) : s*y]``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np

from .pyramid import Pyramid, is_power_of_two

FULL = "full"
SPARSE_ONLY = "sparse_only"
VARIANTS = (FULL, SPARSE_ONLY)


class ComponentId(NamedTuple):
    s: int
    x: int
    y: int

    @property
    def rows(self) -> slice:
        return slice(self.s * (self.x - 1), self.s * self.x)

    @property
    def cols(self) -> slice:
        return slice(self.s * (self.y - 1), self.s * self.y)

    def validate(self, n: int) -> None:
        if not is_power_of_two(self.s) or n % self.s:
            raise ValueError(f"scale {self.s} is not a power of two dividing n={n}")
        g = n // self.s
        if not (1 <= self.x <= g and 1 <= self.y <= g):
            raise IndexError(f"{self} out of range for n={n}")

    def contains(self, other: "ComponentId") -> bool:
        """True if ``other``'s support lies inside this component's support."""
        if other.s > self.s:
            return False
        r = self.s // other.s
        return (other.x - 1) // r == self.x - 1 and (other.y - 1) // r == self.y - 1


def full_frame(n: int) -> list[ComponentId]:
    """Every component at every dyadic scale 1, 2, ..., n (n a power of two)."""
    if not is_power_of_two(n):
        raise ValueError("the full frame needs n to be a power of two")
    out = []
    s = n
    while s >= 1:
        g = n // s
        out.extend(ComponentId(s, x, y) for x in range(1, g + 1) for y in range(1, g + 1))
        s //= 2
    return out


@dataclass(frozen=True)
class ResolutionSchedule:
    """Descending scales with one refinement budget per finer scale.

    ``budgets[i - 1]`` is the number of scale ``scales[i - 1]`` blocks to
    refine into scale ``scales[i]``.  ``forced`` blocks (coarsest scale)
    are refined before budgeted selection and do not consume budget.
    """

    scales: tuple[int, ...]
    budgets: tuple[int, ...] = ()
    forced: tuple[ComponentId, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        object.__setattr__(self, "budgets", tuple(int(m) for m in self.budgets))
        object.__setattr__(
            self, "forced", tuple(ComponentId(*map(int, c)) for c in self.forced)
        )
        scales = self.scales
        if not scales:
            raise ValueError("schedule needs at least one scale")
        if any(not is_power_of_two(s) for s in scales):
            raise ValueError(f"scales must be powers of two, got {scales}")
        if any(a <= b for a, b in zip(scales, scales[1:])):
            raise ValueError(f"scales must be strictly descending, got {scales}")
        if len(self.budgets) != len(scales) - 1:
            raise ValueError(
                f"{len(scales)} scales need {len(scales) - 1} budgets, "
                f"got {len(self.budgets)}"
            )
        if any(m < 0 for m in self.budgets):
            raise ValueError("budgets must be >= 0")
        if any(c.s != scales[0] for c in self.forced):
            raise ValueError("forced components must be at the coarsest scale")
        if self.forced and len(scales) < 2:
            raise ValueError("forced refinement needs a finer scale")

    @property
    def coarsest(self) -> int:
        return self.scales[0]

    @property
    def finest(self) -> int:
        return self.scales[-1]

    def validate_for(self, n: int) -> None:
        if n % self.coarsest:
            raise ValueError(f"coarsest scale {self.coarsest} does not divide n={n}")
        for c in self.forced:
            c.validate(n)

    def predicted_mu_evals(self, n: int) -> dict[int, int]:
        """Exact number of block scores the greedy construction evaluates."""
        self.validate_for(n)
        s0 = self.coarsest
        counts = {s0: (n // s0) ** 2}
        available = (n // s0) ** 2
        forced = len(set(self.forced))
        for i, m in enumerate(self.budgets, start=1):
            extra = forced if i == 1 else 0
            popped = extra + min(m, available - extra)
            per = (self.scales[i - 1] // self.scales[i]) ** 2
            counts[self.scales[i]] = popped * per
            available = popped * per
        return counts


@dataclass(frozen=True)
class Plan:
    """Selected disjoint components with their logits.

    Arrays are aligned per entry; ``x`` and ``y`` are 1-based block indices.
    Entries are ordered by scale, coarsest first.
    """

    n: int
    scale: np.ndarray
    x: np.ndarray
    y: np.ndarray
    logit: np.ndarray
    global_shift: float
    mu_evals: dict[int, int]
    variant: str = FULL
    coarse_logits: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.logit)

    @property
    def mu(self) -> np.ndarray:
        """Unshifted block scores ``exp(logit)``."""
        return np.exp(self.logit)

    def shifted_mu(self, shift: Optional[float] = None) -> np.ndarray:
        c = self.global_shift if shift is None else shift
        return np.exp(self.logit - c)

    @property
    def scales(self) -> list[int]:
        return sorted({int(s) for s in self.scale}, reverse=True)

    def entries(self) -> Iterator[tuple[ComponentId, float, float]]:
        for s, x, y, lg in zip(self.scale, self.x, self.y, self.logit):
            yield ComponentId(int(s), int(x), int(y)), float(lg), float(np.exp(lg))

    def components(self) -> list[ComponentId]:
        return [c for c, _, _ in self.entries()]

    @property
    def total_mu_evals(self) -> int:
        return sum(self.mu_evals.values())

    def covered_area(self) -> int:
        return int(np.sum(self.scale.astype(np.int64) ** 2))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("s,x,y,logit,mu\n")
        for c, lg, mu in self.entries():
            buf.write(f"{c.s},{c.x},{c.y},{lg:.17g},{mu:.17g}\n")
        return buf.getvalue()


def make_plan(
    n: int,
    entries: Iterable[tuple[ComponentId, float]],
    global_shift: Optional[float] = None,
    variant: str = FULL,
) -> Plan:
    """Build a plan from explicit ``(component, logit)`` pairs (no selection)."""
    entries = list(entries)
    for c, _ in entries:
        c.validate(n)
    scale = np.array([c.s for c, _ in entries], dtype=np.int64)
    order = np.argsort(-scale, kind="stable")
    logit = np.array([lg for _, lg in entries], dtype=np.float64)[order]
    counts: dict[int, int] = {}
    for s in scale:
        counts[int(s)] = counts.get(int(s), 0) + 1
    if global_shift is None:
        global_shift = float(logit.max()) if len(logit) else 0.0
    return Plan(
        n=n,
        scale=scale[order],
        x=np.array([c.x for c, _ in entries], dtype=np.int64)[order],
        y=np.array([c.y for c, _ in entries], dtype=np.int64)[order],
        logit=logit,
        global_shift=global_shift,
        mu_evals=counts,
        variant=variant,
    )


# ---------------------------------------------------------------------------
# Block scores
# ---------------------------------------------------------------------------


def block_logit(
    pyrQ: Pyramid, pyrK: Pyramid, c: ComponentId, logit_scale: float = 1.0
) -> float:
    """Scaled inner product of the pooled query and key rows of block ``c``.

    Its exponential is the exp-of-average score, a lower bound on the
    block's mean attention value.
    """
    c.validate(pyrQ.base_n)
    q = pyrQ.level(c.s)[c.x - 1]
    k = pyrK.level(c.s)[c.y - 1]
    return float(logit_scale * np.dot(q, k))


def mu_star(A: np.ndarray, c: ComponentId) -> float:
    """Mean of ``A`` over the support of ``c``."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got {A.shape}")
    c.validate(A.shape[0])
    return float(A[c.rows, c.cols].sum() / c.s**2)


def block_means(A: np.ndarray, s: int) -> np.ndarray:
    """``(n/s) x (n/s)`` matrix of ``s x s`` block means."""
    n = A.shape[0]
    g = n // s
    return A.reshape(g, s, g, s).sum(axis=(1, 3)) / (s * s)


def expand_blocks(M: np.ndarray, s: int) -> np.ndarray:
    """Inverse layout of :func:`block_means`: repeat every entry into ``s x s``."""
    return np.repeat(np.repeat(M, s, axis=0), s, axis=1)


# ---------------------------------------------------------------------------
# Greedy plan construction
# ---------------------------------------------------------------------------


def _pair_logits(Qs, Ks, xi, yi, logit_scale, logit_bias):
    return logit_scale * np.einsum("ij,ij->i", Qs[xi], Ks[yi]) + logit_bias


def construct_plan(
    pyrQ: Pyramid,
    pyrK: Pyramid,
    schedule: ResolutionSchedule,
    logit_scale: float = 1.0,
    variant: str = FULL,
    logit_bias: float = 0.0,
) -> Plan:
    """Coarse-to-fine greedy selection of disjoint blocks.

    All coarsest-scale blocks are scored.  At stage ``i`` the forced blocks
    (stage 1 only) and then the ``budgets[i-1]`` highest-logit blocks at
    ``scales[i-1]`` are replaced by all of their ``scales[i]`` children.
    Ties go to the smaller ``(x, y)``.  ``sparse_only`` keeps just the
    finest-scale entries.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    n = pyrQ.base_n
    if pyrK.base_n != n or pyrK.d != pyrQ.d:
        raise ValueError("query and key pyramids disagree in shape")
    schedule.validate_for(n)
    scales = schedule.scales
    s0 = scales[0]
    g = n // s0

    Qs, Ks = pyrQ.level(s0), pyrK.level(s0)
    coarse = logit_scale * (Qs @ Ks.T) + logit_bias
    cx = np.repeat(np.arange(g), g)
    cy = np.tile(np.arange(g), g)
    cl = coarse.ravel()
    mu_evals = {s0: g * g}
    shift = float(cl.max())

    kept_s, kept_x, kept_y, kept_l = [], [], [], []

    def keep(s, xs, ys, ls):
        kept_s.append(np.full(len(xs), s, dtype=np.int64))
        kept_x.append(xs)
        kept_y.append(ys)
        kept_l.append(ls)

    for i in range(1, len(scales)):
        sp, sc = scales[i - 1], scales[i]
        r = sp // sc
        popped = np.zeros(len(cl), dtype=bool)
        picks = []
        if i == 1 and schedule.forced:
            gp = n // sp
            flat = sorted({(c.x - 1) * gp + (c.y - 1) for c in schedule.forced})
            # Candidates at stage 1 are in row-major order, so flat index == position.
            forced_idx = np.array(flat, dtype=np.int64)
            popped[forced_idx] = True
            picks.append(forced_idx)
        avail = np.flatnonzero(~popped)
        m = min(schedule.budgets[i - 1], len(avail))
        if m:
            order = np.lexsort((cy[avail], cx[avail], -cl[avail]))
            chosen = avail[order[:m]]
            popped[chosen] = True
            picks.append(chosen)

        survivors = np.flatnonzero(~popped)
        survivors = survivors[np.lexsort((cy[survivors], cx[survivors]))]
        keep(sp, cx[survivors], cy[survivors], cl[survivors])

        parents = np.concatenate(picks) if picks else np.zeros(0, dtype=np.int64)
        off_x = np.repeat(np.arange(r), r)
        off_y = np.tile(np.arange(r), r)
        nx = (cx[parents][:, None] * r + off_x[None, :]).ravel()
        ny = (cy[parents][:, None] * r + off_y[None, :]).ravel()
        nl = _pair_logits(pyrQ.level(sc), pyrK.level(sc), nx, ny, logit_scale, logit_bias)
        mu_evals[sc] = len(nl)
        if len(nl):
            shift = max(shift, float(nl.max()))
        cx, cy, cl = nx, ny, nl

    keep(scales[-1], cx, cy, cl)

    if variant == SPARSE_ONLY:
        fin = scales[-1]
        sel = [j for j, s in enumerate(kept_s) if len(s) and s[0] == fin]
        kept_s = [kept_s[j] for j in sel]
        kept_x = [kept_x[j] for j in sel]
        kept_y = [kept_y[j] for j in sel]
        kept_l = [kept_l[j] for j in sel]

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    return Plan(
        n=n,
        scale=cat(kept_s, np.int64),
        x=cat(kept_x, np.int64) + 1,
        y=cat(kept_y, np.int64) + 1,
        logit=cat(kept_l, np.float64),
        global_shift=shift,
        mu_evals=mu_evals,
        variant=variant,
        coarse_logits=coarse,
    )


def assemble_dense(plan: Plan, n: Optional[int] = None) -> np.ndarray:
    """Materialize ``sum(mu * B)`` with unshifted scores.

    Raises ``ValueError`` if two entries overlap.
    """
    n = plan.n if n is None else n
    out = np.zeros((n, n))
    cover = np.zeros((n, n), dtype=np.int32)
    for s, x, y, lg in zip(plan.scale, plan.x, plan.y, plan.logit):
        rs = slice(s * (x - 1), s * x)
        cs = slice(s * (y - 1), s * y)
        cover[rs, cs] += 1
        out[rs, cs] = np.exp(lg)
    if cover.max(initial=0) > 1:
        raise ValueError("plan entries have overlapping supports")
    return out


# ---------------------------------------------------------------------------
# Dense reference decomposition
# ---------------------------------------------------------------------------


@dataclass
class ReferenceDecomposition:
    coefficients: dict[ComponentId, float]
    residuals: dict[int, np.ndarray]  # residuals[s] is the residual entering scale s
    final_residual: np.ndarray

    def reconstruct(self, n: int) -> np.ndarray:
        out = np.zeros((n, n))
        for c, a in self.coefficients.items():
            out[c.rows, c.cols] += a
        return out


def _dyadic_scales_desc(n: int) -> list[int]:
    s = 1
    while n % (2 * s) == 0:
        s *= 2
    out = []
    while s >= 1:
        out.append(s)
        s //= 2
    return out


def reference_decompose(
    A: np.ndarray, components: Iterable[ComponentId]
) -> ReferenceDecomposition:
    """Residual-peeling coefficients over a set of frame components.

    Starting from ``E = A`` at the coarsest scale, each scale's selected
    components take the block mean of the current residual as coefficient,
    which is then subtracted before moving one scale finer.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got {A.shape}")
    n = A.shape[0]
    by_scale: dict[int, set[ComponentId]] = {}
    for c in components:
        c = ComponentId(*c)
        c.validate(n)
        by_scale.setdefault(c.s, set()).add(c)

    E = A.copy()
    coeffs: dict[ComponentId, float] = {}
    residuals: dict[int, np.ndarray] = {}
    for s in _dyadic_scales_desc(n):
        residuals[s] = E.copy()
        comps = by_scale.get(s)
        if not comps:
            continue
        means = block_means(E, s)
        sub = np.zeros_like(means)
        for c in sorted(comps):
            a = means[c.x - 1, c.y - 1]
            coeffs[c] = float(a)
            sub[c.x - 1, c.y - 1] = a
        E = E - expand_blocks(sub, s)
    return ReferenceDecomposition(coeffs, residuals, E)


def finest_cover_average(A: np.ndarray, J: Iterable[ComponentId]) -> np.ndarray:
    """Entry ``(i, j)`` is the mean of ``A`` over the smallest ``J`` block
    containing it, or 0 when no block does."""
    A = np.asarray(A, dtype=np.float64)
    out = np.zeros_like(A)
    for c in sorted({ComponentId(*c) for c in J}, key=lambda c: -c.s):
        out[c.rows, c.cols] = mu_star(A, c)
    return out


def check_observation(A: np.ndarray, J: Iterable[ComponentId]) -> float:
    """Max-abs gap between the peeled-coefficient sum over ``J`` and the
    finest-covering-block average; zero in exact arithmetic."""
    A = np.asarray(A, dtype=np.float64)
    J = list(J)
    dec = reference_decompose(A, J)
    via_coeffs = dec.reconstruct(A.shape[0])
    via_means = finest_cover_average(A, J)
    return float(np.max(np.abs(via_coeffs - via_means)))
