import numpy as np
import pytest

from projectnet import autodiff as ad
from projectnet.problems import (ConvexSet, EmptyFeasibleRegionError, Problem, QuadraticObjective, build_problem,
                                 eval_gradient, eval_objective)

ALL_KINDS = ["matching", "shortest-path", "capacitated-newsvendor", "quadratic-newsvendor", "electricity",
             "crossfulfill-second-stage", "crossfulfill-first-stage", "toy-polytope", "simplex"]


def test_matching_size():
    p = build_problem("matching", n=50)
    assert p.u_dim == 2500
    assert p.dim == 2500 + 100
    assert p.sense == "max"


def test_uncapacitated_newsvendor_is_a_single_nonneg_set():
    p = build_problem("capacitated-newsvendor", K=1, C=np.inf)
    assert [s.kind for s in p.sets] == ["nonneg"]


def test_electricity_ramp_sets():
    p = build_problem("electricity", horizon=24, r=0.4)
    kinds = [s.kind for s in p.sets]
    assert kinds.count("halfspace") == 46 and kinds[-1] == "nonneg"
    w = np.zeros(24)
    w[5] = 0.5  # jump of 0.5 > 0.4
    assert p.violation(w) == pytest.approx(0.1)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_every_benchmark_stores_a_feasible_witness(kind):
    p = build_problem(kind)
    assert p.violation(p.witness) <= 1e-8
    assert not p.witness.flags.writeable


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        build_problem("shortest-path", side=1)
    with pytest.raises(ValueError):
        build_problem("capacitated-newsvendor", K=2, C=0.0)
    with pytest.raises(ValueError):
        build_problem("no-such-kind")


def test_empty_region_detected():
    sets = [ConvexSet.halfspace([1.0], -1.0), ConvexSet.nonneg(1)]
    with pytest.raises(EmptyFeasibleRegionError):
        Problem(1, sets, QuadraticObjective(np.eye(1)))


def test_newsvendor_values():
    p = build_problem("capacitated-newsvendor", K=1, h=1.0, b=2.0)
    assert eval_objective(p, [1.5], [1.5]) == 0.0
    assert eval_objective(p, [1.0], [0.0]) == 2.0


def test_electricity_hand_value():
    p = build_problem("electricity", horizon=24, gamma_s=50.0, gamma_e=0.5)
    u = np.linspace(1, 3, 24)
    assert eval_objective(p, u, u + 1) == pytest.approx(24.0)


def test_dimension_mismatch():
    p = build_problem("simplex", d=3)
    with pytest.raises(ValueError):
        eval_objective(p, np.ones(2), np.ones(3))
    with pytest.raises(ValueError):
        eval_gradient(p, np.ones(3), np.ones(4))


def test_linear_gradient_is_cost(rng):
    p = build_problem("simplex", d=4)
    u = rng.standard_normal(4)
    assert np.array_equal(eval_gradient(p, u, rng.random(4)), u)


def test_newsvendor_holding_region_gradient():
    p = build_problem("capacitated-newsvendor", K=3, h=[1.0, 2.0, 3.0], b=5.0)
    assert np.array_equal(eval_gradient(p, np.zeros(3), np.ones(3)), [1.0, 2.0, 3.0])


@pytest.mark.parametrize("kind", ["quadratic-newsvendor", "electricity", "crossfulfill-second-stage", "matching",
                                  "shortest-path"])
def test_hand_gradient_matches_tape(kind, rng):
    p = build_problem(kind)
    u = rng.uniform(0.5, 4.0, p.u_dim)
    w = rng.uniform(0.1, 2.0, p.dim)
    tape_g = ad.grad_eval(lambda x: p.objective.value(u, x), w)[1]
    assert np.allclose(eval_gradient(p, u, w), tape_g, atol=1e-10)
    assert ad.finite_diff_check(lambda x: p.objective.value(u, x), w) <= 1e-4


def test_batched_evaluation(rng):
    p = build_problem("capacitated-newsvendor", K=3)
    U, W = rng.random((5, 3)), rng.random((5, 3))
    v = eval_objective(p, U, W)
    assert v.shape == (5,)
    assert np.allclose(v, [eval_objective(p, U[i], W[i]) for i in range(5)])


def test_smoothed_gradient_tends_to_subgradient():
    p = build_problem("capacitated-newsvendor", K=1)
    g = eval_gradient(p, [1.0], [1.5], smoothing=1e-3)
    assert g == pytest.approx([1.0])


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_json_round_trip(kind, rng):
    p = build_problem(kind)
    q = Problem.from_json(p.to_json())
    u = rng.uniform(0.5, 2.0, p.u_dim)
    assert q.dim == p.dim and q.kind == p.kind
    assert eval_objective(q, u, p.witness) == pytest.approx(eval_objective(p, u, p.witness))
