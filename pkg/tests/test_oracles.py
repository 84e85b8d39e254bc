import itertools

import numpy as np
import pytest
from scipy.optimize import linprog, minimize

from projectnet.oracles import (assignment_max, count_calls, dijkstra_grid, exact_optimum, knn_saa, lp_optimum,
                                newsvendor_saa, polytope_projection, polytope_sets, predict_then_optimize,
                                qp_optimum, reference_optimum, second_stage_value, two_stage_lp)
from projectnet.problems import Problem, QuadraticObjective, build_problem, eval_objective
from projectnet.projection import ConvexSet, ProjectionPlan


def grid_paths(side):
    """Every simple 4-neighbour path from the top-left to the bottom-right cell."""
    V = side * side
    nbrs = lambda v: [v + dv for dv, ok in ((1, v % side < side - 1), (-1, v % side > 0), (side, v + side < V),
                                            (-side, v >= side)) if ok]
    out = []

    def walk(path):
        if path[-1] == V - 1:
            out.append(list(path))
            return
        for n in nbrs(path[-1]):
            if n not in path:
                walk(path + [n])

    walk([0])
    return out


def test_dijkstra_single_cell():
    r = dijkstra_grid(np.array([[4.0]]))
    assert r.w.size == 0 and r.objective == 4.0


def test_dijkstra_unit_costs_tie_break():
    r = dijkstra_grid(np.ones((2, 2)))
    assert r.objective == 3.0
    assert r.certificate["path"] == [0, 1, 3]  # lexicographically smallest of [0,1,3], [0,2,3]


def test_dijkstra_matches_path_enumeration(rng):
    paths = grid_paths(4)
    for _ in range(5):
        C = rng.random((4, 4))
        best = min(sum(C.flat[v] for v in path) for path in paths)
        assert dijkstra_grid(C).objective == pytest.approx(best, abs=1e-12)


def test_dijkstra_rejects_negative_costs():
    with pytest.raises(ValueError):
        dijkstra_grid(-np.ones((3, 3)))


def test_shortest_path_oracle_value_is_objective(rng):
    p = build_problem("shortest-path", side=4)
    u = rng.random(16)
    r = exact_optimum(p, u)
    assert eval_objective(p, u, r.w) == pytest.approx(r.objective)
    assert p.violation(r.w) <= 1e-12


def test_negative_forecast_is_clipped_but_valued_honestly(rng):
    p = build_problem("shortest-path", side=3)
    u = rng.random(9)
    u[4] = -0.5
    r = exact_optimum(p, u)
    assert r.objective == pytest.approx(eval_objective(p, u, r.w))


def test_assignment_examples(rng):
    assert assignment_max(np.eye(3)).certificate["value"] == 3.0
    r = assignment_max(np.array([[3.0, 1.0], [1.0, 3.0]]))
    assert r.certificate["value"] == 6.0 and r.certificate["perm"] == [0, 1]
    V = rng.random((6, 6))
    best = max(sum(V[i, s[i]] for i in range(6)) for s in itertools.permutations(range(6)))
    assert assignment_max(V).certificate["value"] == pytest.approx(best)


def test_assignment_layout_is_feasible(rng):
    p = build_problem("matching", n=4)
    u = rng.random(16)
    r = exact_optimum(p, u)
    assert p.violation(r.w) <= 1e-12
    assert eval_objective(p, u, r.w) == pytest.approx(r.objective)


def test_newsvendor_saa_examples():
    r = newsvendor_saa([1.0, 2.0, 3.0], h=1.0, b=2.0)
    assert r.w == pytest.approx([2.5]) and r.objective == pytest.approx(1.0)
    assert newsvendor_saa([4.2]).w == pytest.approx([4.2])
    assert newsvendor_saa([4.2]).objective == 0.0
    assert newsvendor_saa([1.0, 2.0, 3.0], C=0.0).w == pytest.approx([0.0])


def test_newsvendor_saa_matches_grid_search(rng):
    D = rng.integers(0, 10, (30, 1)).astype(float)
    grid = np.linspace(0, 10, 2001)
    costs = [np.mean(np.maximum(g - D, 0) + 2 * np.maximum(D - g, 0)) for g in grid]
    assert newsvendor_saa(D).objective == pytest.approx(min(costs), abs=1e-9)


def test_capacitated_saa_against_lp(rng):
    D = rng.uniform(0, 5, (20, 3))
    C = 6.0
    r = newsvendor_saa(D, C=C)
    N, K = D.shape
    # LP in (w, over, under): min mean(over + 2 under)
    nv = K + 2 * N * K
    c = np.r_[np.zeros(K), np.full(N * K, 1.0 / N), np.full(N * K, 2.0 / N)]
    A, b = [], []
    for n in range(N):
        for j in range(K):
            row = np.zeros(nv)
            row[j], row[K + n * K + j] = 1.0, -1.0  # w - d <= over
            A.append(row)
            b.append(D[n, j])
            row = np.zeros(nv)
            row[j], row[K + N * K + n * K + j] = -1.0, -1.0  # d - w <= under
            A.append(row)
            b.append(-D[n, j])
    cap = np.zeros(nv)
    cap[:K] = 1.0
    A.append(cap)
    b.append(C)
    lp = linprog(c, A_ub=np.array(A), b_ub=b, bounds=[(0, None)] * nv, method="highs")
    assert r.objective == pytest.approx(lp.fun, abs=1e-9)
    assert r.w.sum() <= C + 1e-12


def test_knn_saa_extremes(rng):
    X, U = rng.standard_normal((15, 2)), rng.uniform(0, 5, (15, 1))
    x = rng.standard_normal(2)
    assert knn_saa(X, U, x, 15).w == pytest.approx(newsvendor_saa(U).w)
    nearest = np.argmin(np.linalg.norm(X - x, axis=1))
    assert knn_saa(X, U, x, 1).w == pytest.approx(U[nearest])
    with pytest.raises(ValueError):
        knn_saa(X, U, x, 16)


def test_reference_optimum_cross_checks(rng):
    p = build_problem("matching", n=4)
    u = rng.random(16)
    ref = reference_optimum(p, u, T=3000)
    assert -ref.objective >= assignment_max(u.reshape(4, 4)).certificate["value"] * (1 - 1e-3)
    q = build_problem("shortest-path", side=3)
    c = rng.uniform(0.5, 1.5, 9)
    assert reference_optimum(q, c, T=3000).objective <= dijkstra_grid(c.reshape(3, 3)).objective * (1 + 1e-3)


def test_reference_optimum_interior_quadratic(rng):
    B = rng.standard_normal((3, 3))
    Q = B @ B.T + np.eye(3)
    u = rng.standard_normal(3)
    p = Problem(3, [ConvexSet.box(np.full(3, -100.0), np.full(3, 100.0))], QuadraticObjective(Q))
    assert np.allclose(reference_optimum(p, u).w, np.linalg.solve(Q, -u), atol=1e-6)


def test_qp_oracle_matches_slsqp(rng):
    H, r = 6, 0.4
    p = build_problem("electricity", horizon=H, r=r)
    u = rng.uniform(1, 3, H)
    o = p.objective
    # split form over z = (w, s, e): gs.s + ge.e + 1/2|w - u|^2, s >= u - w, e >= w - u
    f = lambda z: o.gamma_s * z[H:2 * H].sum() + o.gamma_e * z[2 * H:].sum() + 0.5 * np.sum((z[:H] - u) ** 2)
    D = np.diff(np.eye(H), axis=0)
    cons = [{"type": "ineq", "fun": lambda z: z[H:2 * H] - (u - z[:H])},
            {"type": "ineq", "fun": lambda z: z[2 * H:] - (z[:H] - u)},
            {"type": "ineq", "fun": lambda z: r - D @ z[:H]}, {"type": "ineq", "fun": lambda z: r + D @ z[:H]}]
    z0 = np.r_[np.full(H, u.mean()), np.abs(u - u.mean()), np.abs(u - u.mean())]
    ref = minimize(f, z0, constraints=cons, bounds=[(0, None)] * (3 * H), method="SLSQP",
                   options={"ftol": 1e-12, "maxiter": 1000})
    assert ref.success
    assert qp_optimum(p, u).objective == pytest.approx(ref.fun, rel=1e-6)


def test_lp_oracle_on_simplex(rng):
    p = build_problem("simplex", d=4)
    u = rng.standard_normal(4)
    assert lp_optimum(p, u).objective == pytest.approx(u.min())


def test_two_stage_oracles():
    second = build_problem("crossfulfill-second-stage", n=2, m=2, c=[[0.0, 0.5], [0.5, 0.0]], b=3.0, h=0.5)
    # one unit at warehouse 0, demand one unit at client 1: ship at 0.5
    assert second_stage_value(second, [1.0, 0.0], [0.0, 1.0]).objective == pytest.approx(0.5)
    # knowing the demand, stock it where it is needed
    r = two_stage_lp([0.2, 0.2], second, [0.0, 1.0])
    assert r.w == pytest.approx([0.0, 1.0]) and r.objective == pytest.approx(0.2)


def test_polytope_projection_against_simplex():
    G, h = -np.eye(3), np.zeros(3)
    x = polytope_projection(G, h, np.array([2.0, -1.0, 0.5]), E=np.ones((1, 3)), f=[1.0])
    assert np.allclose(x, [1.0, 0.0, 0.0])


def test_polytope_sets_feed_dykstra(rng):
    G, h = rng.standard_normal((4, 3)), rng.uniform(0.5, 1.5, 4)
    w = 3 * rng.standard_normal(3)
    plan = ProjectionPlan(polytope_sets(G, h), 3, k=500)
    assert np.allclose(plan.run(w)[0], polytope_projection(G, h, w), atol=1e-5)


def test_count_calls():
    with count_calls() as c:
        newsvendor_saa([1.0])
        dijkstra_grid(np.ones((2, 2)))
    assert c["n"] == 2


def test_lower_mse_can_mean_worse_decisions():
    p = build_problem("simplex", d=2)
    u = np.array([1.0, 1.2])
    close, far = np.array([1.15, 1.1]), np.array([0.5, 2.0])
    assert np.sum((close - u) ** 2) < np.sum((far - u) ** 2)
    cost = lambda f: eval_objective(p, u, exact_optimum(p, f).w)
    assert cost(close) > cost(far)


def test_predict_then_optimize_realizable(rng):
    p = build_problem("simplex", d=3)
    X = rng.standard_normal((200, 2))
    B = rng.standard_normal((3, 2))
    f, decide_fn = predict_then_optimize(X, X @ B.T, p, {"epochs": 300, "lr": 0.05, "patience": 300})
    for x in X[:20]:
        w = decide_fn(x)
        assert eval_objective(p, B @ x, w) == pytest.approx(np.min(B @ x), abs=1e-2)
