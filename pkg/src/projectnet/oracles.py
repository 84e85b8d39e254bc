"""Exact solvers and baselines: ground truth for regrets and comparisons.

Every public oracle bumps a module-level call counter, so training loops can
assert that they never touch an exact solver (see :func:`count_calls`).
Tie-breaking is lexicographic wherever a choice exists.
"""

from __future__ import annotations

import functools
import heapq
import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .problems import Problem, build_problem, eval_objective, grid_edges
from .projection import ConvexSet, ProjectionPlan

_lock = threading.Lock()
_calls = {"n": 0}


def oracle_calls() -> int:
    return _calls["n"]


def _counted(fn):
    @functools.wraps(fn)
    def wrapper(*a, **kw):
        with _lock:
            _calls["n"] += 1
        return fn(*a, **kw)

    return wrapper


@contextmanager
def count_calls():
    """``with count_calls() as c: ...`` then ``c["n"]`` is the number of
    oracle invocations made inside the block."""
    box = {"n": 0}
    start = oracle_calls()
    try:
        yield box
    finally:
        box["n"] = oracle_calls() - start


@dataclass
class OracleResult:
    w: np.ndarray
    objective: float
    method: str
    certificate: dict = field(default_factory=dict)
    converged: bool = True

    def to_dict(self):
        cert = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.certificate.items()}
        return {"w": np.asarray(self.w).tolist(), "objective": self.objective, "method": self.method,
                "certificate": cert, "converged": self.converged}


# ---------------------------------------------------------- shortest path


def _dijkstra(costs, source, sink):
    side_r, side_c = costs.shape
    V = costs.size
    flat = costs.ravel()
    best = {}
    heap = [(flat[source], (source,))]
    while heap:
        dist, path = heapq.heappop(heap)
        v = path[-1]
        if v in best:
            continue
        best[v] = (dist, path)
        if v == sink:
            return dist, list(path)
        r, c = divmod(v, side_c)
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < side_r and 0 <= cc < side_c:
                nb = rr * side_c + cc
                if nb not in best:
                    heapq.heappush(heap, (dist + flat[nb], path + (nb,)))
    raise ValueError("sink unreachable")  # cannot happen on a grid


@_counted
def dijkstra_grid(costs, source=None, sink=None) -> OracleResult:
    """Cheapest 4-neighbour path; its cost is the sum of the vertex costs it
    visits, source and sink included.  Ties go to the lexicographically
    smallest vertex sequence.  A 1x1 grid gives the empty path with cost equal
    to the single vertex cost."""
    costs = np.asarray(costs, dtype=float)
    if costs.ndim == 1:
        side = int(round(np.sqrt(costs.size)))
        costs = costs.reshape(side, side)
    if np.any(costs < 0):
        raise ValueError("dijkstra_grid needs nonnegative costs")
    side = costs.shape[0]
    V = costs.size
    source = 0 if source is None else source
    sink = V - 1 if sink is None else sink
    edges = grid_edges(side) if side >= 2 else np.zeros((0, 2), dtype=int)
    if V == 1:
        return OracleResult(np.zeros(0), float(costs.ravel()[0]), "dijkstra", {"path": [0]})
    dist, path = _dijkstra(costs, source, sink)
    pos = {tuple(e): i for i, e in enumerate(edges.tolist())}
    w = np.zeros(len(edges))
    for a, b in zip(path[:-1], path[1:]):
        w[pos[(a, b)]] = 1.0
    return OracleResult(w, float(dist), "dijkstra", {"path": path})


# --------------------------------------------------------------- matching


@_counted
def assignment_max(values) -> OracleResult:
    """Maximum-weight bipartite matching (not necessarily perfect).

    ``w`` follows the matching problem layout (n^2 edge variables, then 2n
    slacks) and ``objective`` is in minimization form (minus the value); the
    matched value itself is ``certificate["value"]``.
    """
    V = np.asarray(values, dtype=float)
    n = V.shape[0]
    rows, cols = linear_sum_assignment(np.maximum(V, 0.0), maximize=True)
    keep = V[rows, cols] > 0
    X = np.zeros((n, n))
    X[rows[keep], cols[keep]] = 1.0
    w = np.r_[X.ravel(), 1.0 - X.sum(axis=1), 1.0 - X.sum(axis=0)]
    val = float((V * X).sum())
    perm = np.full(n, -1)
    perm[rows[keep]] = cols[keep]
    return OracleResult(w, -val, "assignment", {"perm": perm.tolist(), "value": val})


# -------------------------------------------------------------- newsvendor


def _saa_segments(D, h, b):
    """Per product, breakpoints and slopes of the mean newsvendor cost."""
    N, K = D.shape
    segs = []
    for j in range(K):
        s = np.sort(D[:, j])
        starts = np.r_[0.0, s]
        ends = np.r_[s, np.inf]
        i = np.arange(N + 1)
        slopes = (h[j] * i - b[j] * (N - i)) / N
        for a, e, sl, ii in zip(starts, ends, slopes, i):
            if e > a:
                segs.append((sl, j, ii, a, e))
    return segs


@_counted
def newsvendor_saa(demands, C=np.inf, h=1.0, b=2.0) -> OracleResult:
    """Minimize the empirical mean newsvendor cost s.t. sum w <= C, w >= 0.

    Exact greedy: the cost is separable, convex and piecewise linear, so
    filling the most negative slope segments first is optimal.  Leftover
    capacity goes to the midpoint of each zero-slope interval (the empirical
    b/(h+b) quantile interval), products in index order.
    """
    D = np.asarray(demands, dtype=float)
    if D.ndim == 1:
        D = D[:, None]
    if D.shape[0] < 1:
        raise ValueError("need at least one demand sample")
    N, K = D.shape
    h = np.broadcast_to(np.asarray(h, dtype=float), (K,))
    b = np.broadcast_to(np.asarray(b, dtype=float), (K,))
    if np.any(D < 0):
        raise ValueError("demands must be nonnegative")
    w = np.zeros(K)
    cap = float(C)
    segs = sorted(_saa_segments(D, h, b), key=lambda s: (s[0], s[1], s[2]))
    mult = 0.0
    for sl, j, _, a, e in segs:
        if sl >= 0 or cap <= 0:
            break
        take = min(e - a, cap)
        w[j] += take
        cap -= take
        mult = -sl
    for sl, j, _, a, e in sorted(segs, key=lambda s: (s[1], s[2])):
        if sl == 0 and cap > 0 and np.isclose(w[j], a):
            take = min(0.5 * (e - a), cap)
            w[j] += take
            cap -= take
    obj = float(np.mean(np.sum(h * np.maximum(w - D, 0) + b * np.maximum(D - w, 0), axis=1)))
    return OracleResult(w, obj, "newsvendor-saa", {"multiplier": mult, "quantile": float(b[0] / (h[0] + b[0]))})


@_counted
def knn_saa(X, U, x, K, C=np.inf, h=1.0, b=2.0) -> OracleResult:
    """SAA over the K nearest training points to ``x`` (Euclidean; ties by index)."""
    X = np.asarray(X, dtype=float)
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > X.shape[0]:
        raise ValueError("K exceeds the number of training points")
    dist = np.linalg.norm(X - np.asarray(x, dtype=float), axis=1)
    nn = np.argsort(dist, kind="stable")[:K]
    res = newsvendor_saa.__wrapped__(np.asarray(U)[nn], C, h, b)
    res.method = "knn-saa"
    res.certificate["neighbors"] = nn.tolist()
    return res


@_counted
def quad_newsvendor_opt(p: Problem, probs) -> OracleResult:
    """Exact minimizer over w >= 0 of the quadratic newsvendor cost under the
    distribution ``probs``: check every piece's stationary point and every
    breakpoint."""
    o = p.objective
    probs = np.asarray(probs, dtype=float)
    pts = np.unique(np.r_[0.0, o.support[o.support > 0]])
    cands = [0.0] + list(pts)
    edges = np.r_[pts, np.inf]
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = lo + 1.0 if not np.isfinite(hi) else 0.5 * (lo + hi)
        under = o.support > mid
        over = ~under
        # derivative is a*w + c on this piece
        a = o.q0 + 2 * o.qb * probs[under].sum() + 2 * o.qh * probs[over].sum()
        c = (o.c0 - o.cb * probs[under].sum() - 2 * o.qb * (probs[under] * o.support[under]).sum()
             + o.ch * probs[over].sum() - 2 * o.qh * (probs[over] * o.support[over]).sum())
        if a > 0:
            ws = -c / a
            if lo <= ws <= hi:
                cands.append(ws)
    vals = [float(eval_objective(p, probs, np.array([c]))) for c in cands]
    i = int(np.argmin(vals))
    return OracleResult(np.array([cands[i]]), vals[i], "piecewise-quadratic", {})


# ------------------------------------------------------------ generic ones


def _beta(p: Problem):
    o = p.objective
    fam = o.family
    if fam == "quadratic":
        return float(np.linalg.eigvalsh(o.Q).max()) or 1.0
    if fam == "electricity":
        return 1.0
    if fam == "quadratic-newsvendor":
        return o.q0 + 2 * max(o.qb, o.qh)
    return None


@_counted
def reference_optimum(p: Problem, u, rhs=None, T=10_000, eta=None, k_step=50, k_final=200,
                      tol=1e-6, window=1000) -> OracleResult:
    """Long-run projected (sub)gradient descent.

    Smooth families use a constant step 1/beta (or ``eta``); kinked ones a
    step decayed as eta0/sqrt(1+t/100).  Returns the best iterate after a
    final ``k_final``-cycle projection; ``converged`` is False when the last
    ``window`` iterations still improved the best value by more than ``tol``
    (relative).
    """
    u = np.asarray(u, dtype=float)
    beta = _beta(p)
    smooth = p.objective.smooth
    if eta is None:
        eta = 1.0 / beta if beta else 0.1
    plan = p.plan(k_step)
    final = p.plan(k_final)
    w = plan.run(np.zeros(u.shape[:-1] + (p.dim,)), rhs=rhs, tol=1e-12)[0]
    best_w, best_v = w.copy(), np.asarray(eval_objective(p, u, w), dtype=float)
    hist = []
    for t in range(T):
        step = eta if smooth else eta / np.sqrt(1.0 + t / 100.0)
        g = np.asarray(p.objective.grad(u, w))
        w = plan.run(w - step * g, rhs=rhs, tol=1e-12)[0]
        v = np.asarray(eval_objective(p, u, w), dtype=float)
        better = v < best_v
        if np.ndim(better):
            best_w[better] = w[better]
        elif better:
            best_w = w.copy()
        best_v = np.minimum(best_v, v)
        hist.append(np.sum(best_v))
    w = final.run(best_w, rhs=rhs, tol=1e-14)[0]
    obj = eval_objective(p, u, w)
    conv = True
    if len(hist) > window:
        old, new = hist[-window - 1], hist[-1]
        conv = bool(old - new <= tol * max(1.0, abs(old)))
    return OracleResult(w, obj if np.ndim(obj) else float(obj), "pgd-long", {"T": T, "eta": eta}, conv)


def _lp_data(p: Problem, rhs=None):
    A_eq, b_eq, A_ub, b_ub = [], [], [], []
    lo, hi = np.full(p.dim, -np.inf), np.full(p.dim, np.inf)
    for j, s in enumerate(p.sets):
        if s.kind == "affine":
            A_eq.append(s.A)
            b_eq.append(s.b if (rhs is None or j != p.rhs_set) else rhs)
        elif s.kind == "halfspace":
            A_ub.append(s.a[None])
            b_ub.append([float(s.b)])
        elif s.kind == "nonneg":
            lo = np.maximum(lo, 0.0)
        elif s.kind == "box":
            lo, hi = np.maximum(lo, s.lo), np.minimum(hi, s.hi)
        else:
            A_eq.append(np.ones((1, p.dim)))
            b_eq.append([s.total])
            lo = np.maximum(lo, 0.0)
    cat = lambda xs: np.concatenate([np.asarray(x, dtype=float).reshape(-1) for x in xs]) if xs else None
    return (np.vstack(A_eq) if A_eq else None, cat(b_eq), np.vstack(A_ub) if A_ub else None, cat(b_ub),
            list(zip(np.where(np.isinf(lo), None, lo), np.where(np.isinf(hi), None, hi))))


@_counted
def lp_optimum(p: Problem, u, rhs=None) -> OracleResult:
    """Linear-objective problems through scipy's HiGHS (independent cross-check)."""
    u = np.asarray(u, dtype=float)
    o = p.objective
    grad = np.asarray(o.grad(u, np.zeros(p.dim)))
    const = float(eval_objective(p, u, np.zeros(p.dim)))
    A_eq, b_eq, A_ub, b_ub, bounds = _lp_data(p, rhs)
    res = linprog(grad, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        raise ValueError(f"LP oracle failed: {res.message}")
    return OracleResult(res.x, float(res.fun) + const, "highs", {"status": int(res.status)})


_SPECIAL = ("matching", "shortest-path", "capacitated-newsvendor", "quadratic-newsvendor")
_LINEAR = ("linear", "cross-fulfill-second-stage", "matching-linear", "shortest-path-linear")


def _uses_reference(p):
    return p.kind not in _SPECIAL and p.objective.family not in _LINEAR + ("quadratic", "electricity")


def _qp_rows(p: Problem, rhs=None):
    """(A_eq, b_eq, G, h) of the feasible set with bounds folded into G."""
    A_eq, b_eq, A_ub, b_ub, bounds = _lp_data(p, rhs)
    G = [] if A_ub is None else [A_ub]
    h = [] if b_ub is None else [b_ub]
    eye = np.eye(p.dim)
    for i, (lo, hi) in enumerate(bounds):
        if lo is not None:
            G.append(-eye[i:i + 1])
            h.append([-lo])
        if hi is not None:
            G.append(eye[i:i + 1])
            h.append([hi])
    G = np.vstack(G) if G else np.zeros((0, p.dim))
    h = np.concatenate([np.asarray(x, dtype=float).reshape(-1) for x in h]) if h else np.zeros(0)
    return A_eq, b_eq, G, h


@_counted
def qp_optimum(p: Problem, u, rhs=None) -> OracleResult:
    """Convex QPs through cvxopt's interior-point solver.

    Covers the ``quadratic`` family directly and the electricity cost in
    split form: with s >= u - w, e >= w - u, s, e >= 0 the cost becomes
    gs.s + ge.e + 1/2 |w - u|^2.
    """
    from cvxopt import matrix, solvers

    u = np.asarray(u, dtype=float)
    o = p.objective
    A_eq, b_eq, G, h = _qp_rows(p, rhs)
    d = p.dim
    if o.family == "quadratic":
        P, q, nx = o.Q, u, d
        G2, h2 = G, h
        const = 0.0
    elif o.family == "electricity":
        nx = 3 * d
        P = np.zeros((nx, nx))
        P[:d, :d] = np.eye(d)
        q = np.r_[-u, np.full(d, o.gamma_s), np.full(d, o.gamma_e)]
        const = 0.5 * float(u @ u)
        I, Z = np.eye(d), np.zeros((d, d))
        G2 = np.vstack([np.hstack([G, np.zeros((len(G), 2 * d))]),
                        np.hstack([-I, -I, Z]), np.hstack([I, Z, -I]),
                        np.hstack([Z, -I, Z]), np.hstack([Z, Z, -I])])
        h2 = np.r_[h, -u, u, np.zeros(2 * d)]
        if A_eq is not None:
            A_eq = np.hstack([A_eq, np.zeros((len(A_eq), 2 * d))])
    else:
        raise ValueError(f"no QP oracle for family {o.family!r}")
    args = [matrix(P), matrix(q), matrix(G2), matrix(h2)]
    if A_eq is not None:
        args += [matrix(A_eq), matrix(b_eq)]
    opts = {"show_progress": False, "abstol": 1e-10, "reltol": 1e-10, "feastol": 1e-10, "maxiters": 200}
    sol = solvers.qp(*args, options=opts)
    w = np.array(sol["x"]).reshape(-1)[:d]
    # snap tiny bound violations from the interior-point path
    w = p.plan(50).run(w, k=2000, tol=1e-14)[0]
    return OracleResult(w, float(eval_objective(p, u, w)), "cvxopt-qp",
                        {"status": sol["status"], "const": const}, sol["status"] == "optimal")


def exact_optimum(p: Problem, u, rhs=None) -> OracleResult:
    """Pick the exact oracle for ``p`` (batched ``u`` is solved row by row)."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 2 and _uses_reference(p):
        return reference_optimum(p, u, rhs=rhs)  # vectorized over rows
    if u.ndim == 2:
        rs = [exact_optimum(p, ui, None if rhs is None else np.asarray(rhs)[i]) for i, ui in enumerate(u)]
        return OracleResult(np.stack([r.w for r in rs]), np.array([r.objective for r in rs]), rs[0].method,
                            {}, all(r.converged for r in rs))
    kind = p.kind
    if kind == "matching":
        n = p.meta["n"]
        return assignment_max(u.reshape(n, n))
    if kind == "shortest-path":
        # negative forecast costs are clipped to zero (the path problem has no
        # well-defined minimum once cycles can have negative cost)
        res = dijkstra_grid(np.maximum(u, 0.0).reshape(p.meta["side"], p.meta["side"]))
        if np.any(u < 0):
            res.objective = float(eval_objective(p, u, res.w))
        return res
    if kind == "capacitated-newsvendor":
        o = p.objective
        # a negative point forecast has the same argmin over w >= 0 as zero
        res = newsvendor_saa(np.maximum(u, 0.0)[None], p.meta["C"], o.h, o.b)
        res.objective = float(eval_objective(p, u, res.w))
        return res
    if kind == "quadratic-newsvendor":
        return quad_newsvendor_opt(p, u)
    if p.objective.family in _LINEAR:
        return lp_optimum(p, u, rhs)
    if p.objective.family in ("quadratic", "electricity"):
        return qp_optimum(p, u, rhs)
    return reference_optimum(p, u, rhs=rhs)


# ---------------------------------------------------------- two-stage LPs


def _second_stage_eq(second: Problem):
    aff = [s for s in second.sets if s.kind == "affine"]
    if len(aff) != 1 or second.rhs_set is None or any(s.kind not in ("affine", "nonneg") for s in second.sets):
        raise ValueError("two-stage oracles expect a second stage {A y = (w, d), y >= 0}")
    return aff[0].A, np.asarray(second.objective.grad(None, np.zeros(second.dim)), dtype=float)


@_counted
def second_stage_value(second: Problem, w, d) -> OracleResult:
    """Exact recourse cost V(w, d) of the cross-fulfillment second stage."""
    rhs = np.r_[np.asarray(w, dtype=float), np.asarray(d, dtype=float)]
    res = lp_optimum.__wrapped__(second, rhs, rhs)
    res.method = "highs-recourse"
    return res


@_counted
def two_stage_lp(first_cost, second: Problem, d) -> OracleResult:
    """min_w c.w + V(w, d) for a known demand d (a single LP over (w, y)).

    Used by the predict-then-optimize baseline with d the point forecast.
    """
    A, cost = _second_stage_eq(second)
    c = np.asarray(first_cost, dtype=float).reshape(-1)
    d = np.asarray(d, dtype=float).reshape(-1)
    n, m = c.size, d.size
    if A.shape[0] != n + m:
        raise ValueError("first-stage and demand sizes do not match the second stage")
    # A y - [I; 0] w = [0; d]
    Aeq = np.hstack([-np.vstack([np.eye(n), np.zeros((m, n))]), A])
    beq = np.r_[np.zeros(n), d]
    res = linprog(np.r_[c, cost], A_eq=Aeq, b_eq=beq, bounds=[(0, None)] * (n + A.shape[1]), method="highs")
    if res.status != 0:
        raise ValueError(f"two-stage LP failed: {res.message}")
    return OracleResult(res.x[:n], float(res.fun), "highs-two-stage", {"recourse": res.x[n:].tolist()})


# ------------------------------------------------- exact polytope projection


@_counted
def polytope_projection(G, h, w, E=None, f=None, tol=1e-10):
    """Exact Euclidean projection of ``w`` onto {G x <= h, E x = f}.

    Enumerates active sets: the projection is the nearest feasible point
    among the projections onto the affine hulls of all candidate faces.
    Exponential in the number of rows, meant for small test instances.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float)
    d = w.size
    E = np.zeros((0, d)) if E is None else np.atleast_2d(np.asarray(E, dtype=float))
    f = np.zeros(0) if f is None else np.asarray(f, dtype=float).reshape(-1)
    best, bd = None, np.inf
    m = G.shape[0]
    for size in range(0, min(m, d - E.shape[0]) + 1):
        for S in itertools.combinations(range(m), size):
            B = np.vstack([G[list(S)], E]) if size else E
            c = np.r_[h[list(S)], f]
            if B.shape[0]:
                if np.linalg.matrix_rank(B) < B.shape[0]:
                    continue
                x = w - B.T @ np.linalg.solve(B @ B.T, B @ w - c)
            else:
                x = w.copy()
            if np.all(G @ x <= h + tol) and np.all(np.abs(E @ x - f) <= tol):
                dist = float(np.sum((x - w) ** 2))
                if dist < bd - 1e-15:
                    best, bd = x, dist
    if best is None:
        raise ValueError("polytope is empty")
    return best


def polytope_sets(G, h, E=None, f=None, nonneg=False):
    """ConvexSet list for {G x <= h, E x = f (, x >= 0)}."""
    sets = []
    if E is not None and np.size(E):
        sets.append(ConvexSet.affine(E, f))
    sets += [ConvexSet.halfspace(g, hh) for g, hh in zip(np.atleast_2d(G), np.ravel(h))]
    if nonneg:
        sets.append(ConvexSet.nonneg())
    return sets


# ------------------------------------------------------ predict-then-optimize


def predict_then_optimize(X, U, p: Problem, forecaster_cfg=None):
    """Fit a forecaster by mean squared error, then decide with the exact oracle.

    Returns ``(forecaster, decide_fn)`` where ``decide_fn(x)`` maps features
    to oracle decisions on the forecast.
    """
    from . import end2end

    cfg = dict(forecaster_cfg or {})
    f = end2end.fit_mse(X, U, **cfg)

    def decide_fn(x):
        return end2end.decide(f, p, x, exact=True)

    return f, decide_fn
