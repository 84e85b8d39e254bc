import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from projectnet import autodiff as ad
from projectnet import kernels
from projectnet.projection import (ConvexSet, ProjectionPlan, dykstra, dykstra_composed, project_affine, project_box,
                                   project_halfspace, project_nonneg, project_simplex)

try:
    from projectnet import _ckernels  # noqa: F401

    HAVE_C = True
except ImportError:
    HAVE_C = False


def test_affine_fixed_point_and_symmetry():
    A = np.array([[1.0, 1.0]])
    assert np.allclose(project_affine(A, [1.0], np.zeros(2)), [0.5, 0.5])
    w = np.array([0.3, 0.7])
    assert np.allclose(project_affine(A, [1.0], w), w, atol=1e-15)


def test_affine_matches_min_norm_least_squares(rng):
    A, b, w = rng.standard_normal((5, 12)), rng.standard_normal(5), rng.standard_normal(12)
    oracle = w + np.linalg.lstsq(A, b - A @ w, rcond=None)[0]
    x = project_affine(A, b, w)
    assert np.allclose(x, oracle, atol=1e-8)
    assert np.allclose(A @ x, b, atol=1e-8)
    assert np.allclose(project_affine(A, b, x), x, atol=1e-12)


def test_nonneg(rng):
    assert np.array_equal(project_nonneg(np.array([-1.0, 2.0])), [0.0, 2.0])
    w = rng.standard_normal(10)
    x = project_nonneg(w)
    for wi, xi in zip(w, x):
        # argmin_{y >= 0} (y - wi)^2 coordinatewise
        assert xi == (wi if wi > 0 else 0.0)


def test_halfspace_examples_and_line_search(rng):
    assert np.allclose(project_halfspace([1.0, 0.0], 0.0, np.array([2.0, 3.0])), [0.0, 3.0])
    assert np.array_equal(project_halfspace([1.0, 1.0], 5.0, np.array([1.0, 1.0])), [1.0, 1.0])
    a, b, w = rng.standard_normal(4), -1.0, rng.standard_normal(4) + 3
    x = project_halfspace(a, b, w)
    # the projection is w - t a with t the smallest step reaching the boundary
    t = minimize_scalar(lambda t: np.sum((t * a) ** 2) + 1e6 * max(a @ (w - t * a) - b, 0) ** 2,
                        bounds=(0, 100), method="bounded", options={"xatol": 1e-12}).x
    if a @ w > b:
        assert np.isclose(a @ x, b)
        assert np.allclose(x, w - (a @ w - b) / (a @ a) * a)
        assert np.allclose(x, w - t * a, atol=1e-5)
    with pytest.raises(ValueError):
        project_halfspace([0.0, 0.0], 1.0, np.ones(2))


def test_box(rng):
    assert np.array_equal(project_box(0.0, 1.0, np.array([-1.0, 2.0])), [0.0, 1.0])
    assert np.array_equal(project_box(0.0, 1.0, np.array([0.2, 0.4])), [0.2, 0.4])
    lo, hi = -rng.random(6), rng.random(6)
    w = 2 * rng.standard_normal(6)
    assert np.array_equal(project_box(lo, hi, w), [min(max(wi, l), h) for wi, l, h in zip(w, lo, hi)])
    with pytest.raises(ValueError):
        project_box(1.0, 0.0, np.zeros(2))


def test_elementary_projections_are_nonexpansive(rng):
    A = rng.standard_normal((2, 5))
    ops = [lambda w: project_affine(A, np.ones(2), w), project_nonneg, lambda w: project_box(-0.5, 0.5, w),
           lambda w: project_halfspace(np.ones(5), 0.3, w), project_simplex]
    for op in ops:
        for _ in range(50):
            w1, w2 = rng.standard_normal(5), rng.standard_normal(5)
            assert np.linalg.norm(op(w1) - op(w2)) <= np.linalg.norm(w1 - w2) + 1e-12


def simplex_plan(k=50):
    return ProjectionPlan([ConvexSet.affine(np.ones((1, 2)), [1.0]), ConvexSet.nonneg(2)], 2, k=k)


def test_dykstra_simplex_example():
    assert np.allclose(dykstra(simplex_plan(), np.array([2.0, -1.0])), [1.0, 0.0], atol=1e-4)


def test_single_set_plan_is_exact_after_one_cycle(rng):
    A, b = rng.standard_normal((2, 4)), rng.standard_normal(2)
    plan = ProjectionPlan([ConvexSet.affine(A, b)], 4, k=1)
    w = rng.standard_normal(4)
    assert np.allclose(dykstra(plan, w), project_affine(A, b, w), atol=1e-12)


def test_feasible_point_unchanged():
    w = np.array([0.25, 0.75])
    for k in (1, 5, 50):
        assert np.allclose(dykstra(simplex_plan(k), w), w, atol=1e-14)


def test_dykstra_error_decays(rng):
    plan = ProjectionPlan([ConvexSet.affine(np.ones((1, 5)), [1.0]), ConvexSet.nonneg(5)], 5)
    w = 2 * rng.standard_normal(5)
    exact = project_simplex(w)
    errs = [np.linalg.norm(dykstra(plan, w, k=k) - exact) for k in (2, 4, 8)]
    assert errs[2] <= errs[1] <= errs[0]


def test_invalid_plans():
    with pytest.raises(ValueError):
        ProjectionPlan([], 2)
    with pytest.raises(ValueError):
        ProjectionPlan([ConvexSet.nonneg(3)], 2)
    with pytest.raises(ValueError):
        ProjectionPlan([ConvexSet.nonneg(2)], 2, k=0)
    with pytest.raises(ad.NonFiniteError):
        simplex_plan().run(np.array([np.nan, 0.0]))


def test_set_json_round_trip(rng):
    sets = [ConvexSet.affine(rng.standard_normal((2, 4)), [1.0, 2.0]), ConvexSet.halfspace(np.ones(4), 1.0),
            ConvexSet.box(np.zeros(4), np.full(4, np.inf)), ConvexSet.simplex(2.0), ConvexSet.nonneg(4)]
    w = rng.standard_normal(4)
    for s in sets:
        assert np.allclose(ConvexSet.from_dict(s.to_dict()).project(w), s.project(w))


MIXED = [ConvexSet.affine(np.array([[1.0, 1.0, 1.0, 0.0]]), [2.0]), ConvexSet.halfspace([1.0, -1.0, 0.0, 1.0], 0.5),
         ConvexSet.box(np.zeros(4), np.array([1.5, 1.0, np.inf, 2.0])), ConvexSet.nonneg(4)]


def test_fused_primitive_matches_composed_gradient(rng):
    plan = ProjectionPlan(MIXED, 4, k=7)
    c = rng.standard_normal(4)
    w = rng.standard_normal(4)
    g1 = ad.grad_eval(lambda x: ad.dot(dykstra(plan, x), c), w)[1]
    g2 = ad.grad_eval(lambda x: ad.dot(dykstra_composed(MIXED, x, 7), c), w)[1]
    assert np.allclose(g1, g2, atol=1e-12)
    assert ad.finite_diff_check(lambda x: ad.dot(dykstra(plan, x), c), w) <= 1e-4


def test_rhs_gradient(rng):
    A = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
    plan = ProjectionPlan([ConvexSet.affine(A, np.zeros(2)), ConvexSet.nonneg(3)], 3, k=5, rhs_set=0)
    w, c = rng.standard_normal(3), rng.standard_normal(3)
    f = lambda r: ad.dot(dykstra(plan, w, rhs=r), c)
    assert ad.finite_diff_check(f, np.array([1.0, 2.0])) <= 1e-4


@pytest.mark.skipif(not HAVE_C, reason="compiled kernels not built")
@pytest.mark.parametrize("sets", [MIXED, [ConvexSet.simplex(1.0), ConvexSet.halfspace(np.ones(4), 0.8)]])
def test_backends_agree(sets, rng):
    plan = ProjectionPlan(sets, 4, k=6)
    W, G = rng.standard_normal((9, 4)), rng.standard_normal((9, 4))
    xs, grads = [], []
    for name in ("python", "cython"):
        x, masks, _ = kernels.forward(plan.packed, W, None, 6, True, 0.0, 1, name)
        gx, _ = kernels.backward(plan.packed, masks, G, 6, False, 1, name)
        xs.append(x)
        grads.append(gx)
    assert np.allclose(xs[0], xs[1], atol=1e-12)
    assert np.allclose(grads[0], grads[1], atol=1e-12)


def test_threads_do_not_change_results(rng):
    W = rng.standard_normal((10, 4))
    one = ProjectionPlan(MIXED, 4, k=5).run(W)[0]
    two = ProjectionPlan(MIXED, 4, k=5, threads=2).run(W)[0]
    assert np.array_equal(one, two)
