import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mra_attention.plan import (
    ComponentId,
    ResolutionSchedule,
    SPARSE_ONLY,
    assemble_dense,
    block_logit,
    check_observation,
    construct_plan,
    full_frame,
    make_plan,
    mu_star,
    reference_decompose,
)
from mra_attention.pyramid import build_pyramid

E = math.e


def pyramids(Q, K, s0):
    return build_pyramid(Q, s0), build_pyramid(K, s0)


def greedy_oracle(P, scales, budgets):
    """Loop-level greedy refinement scored by dense block means of P."""
    n = P.shape[0]

    def logit(s, x, y):
        return P[s * (x - 1) : s * x, s * (y - 1) : s * y].mean()

    s0 = scales[0]
    cand = [(s0, x, y) for x in range(1, n // s0 + 1) for y in range(1, n // s0 + 1)]
    final = []
    for i in range(1, len(scales)):
        ranked = sorted(cand, key=lambda c: (-round(logit(*c), 9), c[1], c[2]))
        popped = ranked[: budgets[i - 1]]
        final += [c for c in cand if c not in popped]
        r = scales[i - 1] // scales[i]
        cand = [
            (scales[i], (x - 1) * r + a + 1, (y - 1) * r + b + 1)
            for (_, x, y) in popped
            for a in range(r)
            for b in range(r)
        ]
    return set(final + cand)


def test_worked_block_logit(worked):
    Q, K, _ = worked
    pq, pk = pyramids(Q, K, 2)
    lg = block_logit(pq, pk, ComponentId(2, 2, 1))
    assert lg == 0.5
    assert math.exp(lg) == pytest.approx(1.64872127070012814685, rel=1e-15)


def test_zero_queries_give_unit_scores():
    Q = np.zeros((8, 2))
    K = np.random.default_rng(0).normal(size=(8, 2))
    pq, pk = pyramids(Q, K, 4)
    for c in full_frame(8):
        if c.s <= 4:
            assert block_logit(pq, pk, c) == 0.0


def test_scale_one_logit_is_entry(rng):
    Q, K = rng.normal(size=(2, 8, 3))
    pq, pk = pyramids(Q, K, 2)
    P = Q @ K.T
    for i, j in product(range(8), range(8)):
        assert block_logit(pq, pk, ComponentId(1, i + 1, j + 1), 1.0) == pytest.approx(P[i, j], abs=1e-14)


def test_block_logit_errors(worked):
    Q, K, _ = worked
    pq, pk = pyramids(Q, K, 2)
    with pytest.raises(KeyError):
        block_logit(pq, pk, ComponentId(4, 1, 1))
    with pytest.raises(IndexError):
        block_logit(pq, pk, ComponentId(2, 3, 1))


def test_mu_star_worked(worked):
    Q, K, _ = worked
    A = np.exp(Q @ K.T)
    # (1 + e) / 2 via mpmath.
    assert mu_star(A, ComponentId(2, 2, 1)) == pytest.approx(1.85914091422952261768, rel=1e-15)
    assert mu_star(np.ones((4, 4)), ComponentId(4, 1, 1)) == 1.0
    assert mu_star(A, ComponentId(1, 3, 2)) == A[2, 1]
    with pytest.raises(ValueError):
        mu_star(np.ones((4, 3)), ComponentId(1, 1, 1))


def test_worked_plan(worked):
    Q, K, _ = worked
    pq, pk = pyramids(Q, K, 2)
    plan = construct_plan(pq, pk, ResolutionSchedule((2, 1), (2,)))
    np.testing.assert_array_equal(plan.coarse_logits, [[0, 0], [0.5, 0.5]])
    comps = plan.components()
    assert comps[:2] == [ComponentId(2, 1, 1), ComponentId(2, 1, 2)]
    fine = comps[2:]
    assert len(fine) == 8 and {c.x for c in fine} == {3, 4} and all(c.s == 1 for c in fine)
    np.testing.assert_array_equal(plan.mu[:2], 1.0)
    assert set(np.round(plan.mu[2:], 12)) == {1.0, round(E, 12)}
    assert plan.mu_evals == {2: 4, 1: 8}
    np.testing.assert_array_equal(assemble_dense(plan), np.exp(Q @ K.T))


def test_full_refinement_gives_exp_p(rng):
    Q, K = rng.normal(size=(2, 16, 3))
    pq, pk = pyramids(Q, K, 4)
    plan = construct_plan(pq, pk, ResolutionSchedule((4, 1), (16,)))
    assert len(plan) == 256 and set(plan.scale) == {1}
    np.testing.assert_allclose(assemble_dense(plan), np.exp(Q @ K.T), rtol=1e-13)


def test_no_refinement_is_coarse_grid(rng):
    Q, K = rng.normal(size=(2, 16, 3))
    plan = construct_plan(*pyramids(Q, K, 4), ResolutionSchedule((4, 1), (0,)))
    assert len(plan) == 16 and set(plan.scale) == {4}
    assert plan.mu_evals == {4: 16, 1: 0}


def test_tie_break_prefers_small_xy():
    Q = np.zeros((8, 2))
    plan = construct_plan(*pyramids(Q, Q, 4), ResolutionSchedule((4, 1), (1,)))
    fine = [c for c in plan.components() if c.s == 1]
    assert {(c.x, c.y) for c in fine} == {(x, y) for x in range(1, 5) for y in range(1, 5)}


def test_budget_clamped(rng):
    Q, K = rng.normal(size=(2, 8, 2))
    plan = construct_plan(*pyramids(Q, K, 4), ResolutionSchedule((4, 1), (100,)))
    assert plan.mu_evals[1] == 64
    assert ResolutionSchedule((4, 1), (100,)).predicted_mu_evals(8) == {4: 4, 1: 64}


def test_forced_refinement_free_of_budget():
    Q = np.zeros((8, 1))
    sched = ResolutionSchedule((4, 1), (1,), forced=(ComponentId(4, 2, 2),))
    plan = construct_plan(*pyramids(Q, Q, 4), sched)
    fine = {(c.x, c.y) for c in plan.components() if c.s == 1}
    refined_blocks = {((x - 1) // 4 + 1, (y - 1) // 4 + 1) for x, y in fine}
    assert refined_blocks == {(2, 2), (1, 1)}
    assert plan.mu_evals == sched.predicted_mu_evals(8) == {4: 4, 1: 32}


@settings(max_examples=40, deadline=None)
@given(
    st.integers(0, 2**31),
    st.sampled_from([((8, 1), 16), ((8, 2, 1), 16), ((4, 2, 1), 16), ((16, 4, 1), 32), ((8, 4), 32)]),
    st.data(),
)
def test_matches_greedy_oracle(seed, case, data):
    scales, n = case
    budgets = tuple(
        data.draw(st.integers(0, 12), label=f"m{i}") for i in range(1, len(scales))
    )
    rng = np.random.default_rng(seed)
    Q, K = rng.normal(size=(2, n, 3))
    plan = construct_plan(*pyramids(Q, K, scales[0]), ResolutionSchedule(scales, budgets))
    got = {tuple(c) for c in plan.components()}
    assert got == greedy_oracle(Q @ K.T, scales, budgets)
    # Full variant partitions the matrix.
    assert plan.covered_area() == n * n
    assemble_dense(plan)
    assert plan.mu_evals == ResolutionSchedule(scales, budgets).predicted_mu_evals(n)


def test_sparse_only_variant(rng):
    Q, K = rng.normal(size=(2, 16, 3))
    pq, pk = pyramids(Q, K, 4)
    full = construct_plan(pq, pk, ResolutionSchedule((4, 1), (3,)))
    sp = construct_plan(pq, pk, ResolutionSchedule((4, 1), (3,)), variant=SPARSE_ONLY)
    assert set(sp.scale) == {1} and len(sp) == 48
    assert {tuple(c) for c in sp.components()} == {tuple(c) for c in full.components() if c.s == 1}
    assert sp.mu_evals == full.mu_evals


def test_plan_is_deterministic(rng):
    Q, K = rng.normal(size=(2, 32, 4))
    a = construct_plan(*pyramids(Q, K, 8), ResolutionSchedule((8, 2, 1), (5, 7)))
    b = construct_plan(*pyramids(Q, K, 8), ResolutionSchedule((8, 2, 1), (5, 7)))
    assert a.to_csv() == b.to_csv()


def test_mu_is_lower_bound_of_mu_star(rng):
    Q, K = rng.normal(size=(2, 32, 4))
    pq, pk = pyramids(Q, K, 32)
    A = np.exp(Q @ K.T)
    for c in full_frame(32):
        assert math.exp(block_logit(pq, pk, c)) <= mu_star(A, c) * (1 + 1e-12)


def test_assemble_overlap_rejected():
    plan = make_plan(4, [(ComponentId(2, 1, 1), 0.0), (ComponentId(1, 1, 1), 0.0)])
    with pytest.raises(ValueError):
        assemble_dense(plan)


def test_assemble_empty_and_constant():
    assert not assemble_dense(make_plan(4, [])).any()
    Q = np.zeros((8, 1))
    plan = construct_plan(*pyramids(Q, Q, 4), ResolutionSchedule((4,), ()))
    np.testing.assert_array_equal(assemble_dense(plan), np.ones((8, 8)))


def test_csv_dump(worked):
    Q, K, _ = worked
    plan = construct_plan(*pyramids(Q, K, 2), ResolutionSchedule((2, 1), (2,)))
    lines = plan.to_csv().strip().splitlines()
    assert lines[0] == "s,x,y,logit,mu"
    assert lines[1] == "2,1,1,0,1"
    assert len(lines) == 11


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(scales=(3, 1), budgets=(1,)),
        dict(scales=(1, 2), budgets=(1,)),
        dict(scales=(4, 1), budgets=()),
        dict(scales=(4, 1), budgets=(-1,)),
        dict(scales=(4, 1), budgets=(1,), forced=((1, 1, 1),)),
        dict(scales=(4,), budgets=(), forced=((4, 1, 1),)),
    ],
)
def test_invalid_schedules(kwargs):
    with pytest.raises(ValueError):
        ResolutionSchedule(**kwargs)


def test_schedule_must_divide_n():
    with pytest.raises(ValueError):
        ResolutionSchedule((32, 1), (1,)).validate_for(100)


# -- reference decomposition -------------------------------------------------


def test_full_frame_count():
    assert len(full_frame(8)) == 85  # 64 + 16 + 4 + 1


def test_full_frame_decomposition_exact(rng):
    A = rng.random((16, 16))
    dec = reference_decompose(A, full_frame(16))
    assert not dec.final_residual.any()
    np.testing.assert_allclose(dec.reconstruct(16), A, atol=1e-12)


def test_single_coarsest_component(rng):
    A = rng.random((8, 8))
    dec = reference_decompose(A, [ComponentId(8, 1, 1)])
    assert dec.coefficients[ComponentId(8, 1, 1)] == pytest.approx(A.mean(), rel=1e-14)
    np.testing.assert_allclose(dec.final_residual, A - A.mean(), atol=1e-14)


def test_constant_only_coarsest_coefficient():
    dec = reference_decompose(np.full((8, 8), 2.5), full_frame(8))
    nonzero = {c for c, a in dec.coefficients.items() if abs(a) > 0}
    assert nonzero == {ComponentId(8, 1, 1)}


def test_residuals_recorded(rng):
    A = rng.random((8, 8))
    dec = reference_decompose(A, full_frame(8))
    assert sorted(dec.residuals) == [1, 2, 4, 8]
    np.testing.assert_array_equal(dec.residuals[8], A)


def random_subset(rng, frame, p):
    return [c for c in frame if rng.random() < p]


def test_observation_random_subsets():
    rng = np.random.default_rng(7)
    frame = full_frame(16)
    for _ in range(100):
        A = np.exp(rng.normal(size=(16, 16)))
        J = random_subset(rng, frame, rng.uniform(0.02, 0.5))
        assert check_observation(A, J) <= 1e-10


def test_observation_edge_cases(rng):
    A = rng.random((16, 16))
    assert check_observation(A, full_frame(16)) <= 1e-10
    dec = reference_decompose(A, full_frame(16))
    np.testing.assert_allclose(dec.reconstruct(16), A, atol=1e-10)
    assert check_observation(A, []) == 0.0
    assert not reference_decompose(A, []).reconstruct(16).any()
