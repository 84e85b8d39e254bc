"""Benchmark problems: feasible regions as ordered set lists plus objective families.

Every objective is written with :mod:`autodiff` operations so the same code
evaluates plain arrays and differentiates with respect to both ``u`` and
``w``.  All objectives are in minimization form; maximization problems
(matching) negate their reward.  Arrays may carry a leading batch axis.

Piecewise-linear families accept ``smoothing=delta`` in :meth:`grad`, which
returns the gradient of the softplus-smoothed objective (each ``(x)^+``
replaced by ``delta*softplus(x/delta)``).  ``delta=0`` gives the exact
subgradient with the ``relu'(0)=0`` convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .projection import ConvexSet, ProjectionPlan, RankDeficientError

__all__ = [
    "ConvexSet", "Problem", "build_problem", "eval_objective", "eval_gradient",
    "EmptyFeasibleRegionError", "RankDeficientError", "OBJECTIVES",
]


class EmptyFeasibleRegionError(ValueError):
    pass


def _ind(x, delta):
    """d/dx of (x)^+ : step function, or its sigmoid smoothing."""
    if delta > 0:
        return ad.sigmoid(x * (1.0 / delta))
    return (ad.value(x) > 0).astype(float)


def _like(c, w):
    # broadcast a gradient term to the shape of w (keeps c on the tape)
    return ad.add(c, np.zeros(np.shape(ad.value(w))))


# -------------------------------------------------------------- objectives


class Objective:
    family = ""
    loss_type = False
    smooth = True
    u_dim = 0

    def value(self, u, w):
        raise NotImplementedError

    def grad(self, u, w, smoothing=0.0):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def to_dict(self):
        return {"family": self.family, **{k: _tolist(v) for k, v in self.params().items()}}


def _tolist(v):
    return v.tolist() if isinstance(v, np.ndarray) else v


@dataclass
class LinearObjective(Objective):
    """g = sign * c(u).w + u[offset_index], with c(u) = [u[index], 0 * pad].

    Covers the plain linear family (index=None), matching (sign=-1, slack
    padding) and shortest paths (index maps an edge to its head vertex).
    """

    u_dim: int
    index: np.ndarray | None = None
    pad: int = 0
    sign: float = 1.0
    offset_index: int | None = None
    family: str = "linear"

    smooth = True

    def cost(self, u):
        c = u if self.index is None else ad.take(u, self.index)
        if self.pad:
            c = ad.concat([c, np.zeros(self.pad)])
        return c * self.sign if self.sign != 1.0 else c

    def value(self, u, w):
        v = ad.dot(self.cost(u), w)
        if self.offset_index is not None:
            v = v + ad.getitem(u, (Ellipsis, self.offset_index))
        return v

    def grad(self, u, w, smoothing=0.0):
        return _like(self.cost(u), w)

    def params(self):
        return {"u_dim": self.u_dim, "index": self.index, "pad": self.pad, "sign": self.sign,
                "offset_index": self.offset_index}


@dataclass
class QuadraticObjective(Objective):
    """g = 1/2 w'Qw + u.w  (Q symmetric PSD)."""

    Q: np.ndarray
    family: str = "quadratic"

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.u_dim = self.Q.shape[0]

    def value(self, u, w):
        Qw = ad.matmul(w, self.Q)
        return 0.5 * ad.dot(Qw, w) + ad.dot(u, w)

    def grad(self, u, w, smoothing=0.0):
        return ad.matmul(w, self.Q) + u

    def params(self):
        return {"Q": self.Q}


@dataclass
class NewsvendorObjective(Objective):
    """sum_j h_j (w_j - u_j)^+ + b_j (u_j - w_j)^+."""

    h: np.ndarray
    b: np.ndarray
    family: str = "piecewise-newsvendor"
    loss_type = True
    smooth = False

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.u_dim = self.h.size

    def value(self, u, w):
        return ad.vsum(self.h * ad.relu(w - u) + self.b * ad.relu(u - w), axis=-1)

    def grad(self, u, w, smoothing=0.0):
        return self.h * _ind(w - u, smoothing) - self.b * _ind(u - w, smoothing)

    def params(self):
        return {"h": self.h, "b": self.b}


@dataclass
class ElectricityObjective(Objective):
    """sum_i gs (u_i - w_i)^+ + ge (w_i - u_i)^+ + 1/2 (w_i - u_i)^2."""

    gamma_s: float
    gamma_e: float
    horizon: int
    family: str = "electricity"
    loss_type = True
    smooth = False

    def __post_init__(self):
        self.u_dim = int(self.horizon)

    def value(self, u, w):
        r = w - u
        return ad.vsum(self.gamma_s * ad.relu(-r) + self.gamma_e * ad.relu(r) + 0.5 * ad.square(r), axis=-1)

    def grad(self, u, w, smoothing=0.0):
        r = w - u
        return self.gamma_e * _ind(r, smoothing) - self.gamma_s * _ind(-r, smoothing) + r

    def params(self):
        return {"gamma_s": self.gamma_s, "gamma_e": self.gamma_e, "horizon": self.horizon}


@dataclass
class QuadNewsvendorObjective(Objective):
    """Single product, distributional forecast u over the support d_1..d_K.

    g_u(w) = c0 w + q0 w^2 / 2 + sum_k u_k [cb (d_k-w)^+ + qb ((d_k-w)^+)^2
                                            + ch (w-d_k)^+ + qh ((w-d_k)^+)^2]
    With u a one-hot vector this is the realized cost g_d(w).
    """

    c0: float
    q0: float
    cb: float
    qb: float
    ch: float
    qh: float
    support: np.ndarray
    family: str = "quadratic-newsvendor"
    smooth = False

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=float).reshape(-1)
        self.u_dim = self.support.size

    def _phi(self, w):
        under = ad.relu(self.support - w)  # (..., K) via broadcast of w (..., 1)
        over = ad.relu(w - self.support)
        return self.cb * under + self.qb * ad.square(under) + self.ch * over + self.qh * ad.square(over)

    def value(self, u, w):
        w0 = ad.getitem(w, (Ellipsis, 0))
        return self.c0 * w0 + 0.5 * self.q0 * ad.square(w0) + ad.dot(u, self._phi(w))

    def grad(self, u, w, smoothing=0.0):
        under = self.support - w
        over = w - self.support
        dphi = (-self.cb * _ind(under, smoothing) - 2 * self.qb * ad.relu(under)
                + self.ch * _ind(over, smoothing) + 2 * self.qh * ad.relu(over))
        g = ad.dot(u, dphi)
        g = ad.reshape(g, np.shape(ad.value(g)) + (1,))
        return self.c0 + self.q0 * w + g

    def params(self):
        return {k: getattr(self, k) for k in ("c0", "q0", "cb", "qb", "ch", "qh", "support")}


@dataclass
class CrossFulfillObjective(Objective):
    """Second-stage fulfilment cost sum c_ij v_ij + sum h_i p_i + sum b_j q_j.

    Variables are ordered (v row-major, p, q).  The cost does not depend on
    u; u = (w, d) only feeds the learned map L(u) and the constraint
    right-hand side.
    """

    c: np.ndarray
    b: np.ndarray
    h: np.ndarray
    family: str = "cross-fulfill-second-stage"

    def __post_init__(self):
        self.c = np.atleast_2d(np.asarray(self.c, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        self.u_dim = self.c.shape[0] + self.c.shape[1]
        self.cost = np.concatenate([self.c.ravel(), self.h, self.b])

    def value(self, u, w):
        return ad.dot(w, self.cost)

    def grad(self, u, w, smoothing=0.0):
        return _like(self.cost, w)

    def params(self):
        return {"c": self.c, "b": self.b, "h": self.h}


def _linear_from(d):
    idx = d.get("index")
    return LinearObjective(u_dim=d["u_dim"], index=None if idx is None else np.asarray(idx, dtype=int),
                           pad=d.get("pad", 0), sign=d.get("sign", 1.0), offset_index=d.get("offset_index"),
                           family=d["family"])


OBJECTIVES = {
    "linear": _linear_from,
    "matching-linear": _linear_from,
    "shortest-path-linear": _linear_from,
    "quadratic": lambda d: QuadraticObjective(np.asarray(d["Q"])),
    "piecewise-newsvendor": lambda d: NewsvendorObjective(d["h"], d["b"]),
    "electricity": lambda d: ElectricityObjective(d["gamma_s"], d["gamma_e"], d["horizon"]),
    "quadratic-newsvendor": lambda d: QuadNewsvendorObjective(
        **{k: d[k] for k in ("c0", "q0", "cb", "qb", "ch", "qh", "support")}),
    "cross-fulfill-second-stage": lambda d: CrossFulfillObjective(d["c"], d["b"], d["h"]),
}


# ----------------------------------------------------------------- problem


@dataclass
class Problem:
    dim: int
    sets: list
    objective: Objective
    sense: str = "min"
    kind: str = "custom"
    witness: np.ndarray | None = None
    rhs_set: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.witness is None:
            self.witness = find_witness(self.sets, self.dim)
        else:
            self.witness = np.asarray(self.witness, dtype=float)
            if self.violation(self.witness) > 1e-8:
                raise EmptyFeasibleRegionError("stored witness is not feasible")
        self.witness.setflags(write=False)
        self._plans = {}

    @property
    def u_dim(self):
        return self.objective.u_dim

    def plan(self, k, threads=1) -> ProjectionPlan:
        key = (int(k), int(threads))
        if key not in self._plans:
            self._plans[key] = ProjectionPlan(self.sets, self.dim, k=k, rhs_set=self.rhs_set, threads=threads)
        return self._plans[key]

    def violation(self, w, rhs=None):
        return max(s.violation(w, rhs if j == self.rhs_set else None) for j, s in enumerate(self.sets))

    def to_dict(self):
        return {
            "kind": self.kind, "dim": self.dim, "sense": self.sense,
            "sets": [s.to_dict() for s in self.sets],
            "objective": self.objective.to_dict(),
            "witness": self.witness.tolist(), "rhs_set": self.rhs_set,
            "meta": {k: _tolist(v) for k, v in self.meta.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        fam = d["objective"]["family"]
        if fam not in OBJECTIVES:
            raise ValueError(f"unknown objective family {fam!r}")
        return cls(dim=d["dim"], sets=[ConvexSet.from_dict(s) for s in d["sets"]],
                   objective=OBJECTIVES[fam](d["objective"]), sense=d.get("sense", "min"),
                   kind=d.get("kind", "custom"), witness=np.asarray(d["witness"]),
                   rhs_set=d.get("rhs_set"), meta=d.get("meta", {}))

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


def find_witness(sets, dim, max_cycles=100_000):
    """Phase one: least squares on the affine blocks, clamp to the bounds,
    then Dykstra from there until every set is satisfied to 1e-8."""
    aff = [s for s in sets if s.kind == "affine"]
    if aff:
        A = np.vstack([s.A for s in aff])
        b = np.concatenate([s.b for s in aff])
        w = np.linalg.lstsq(A, b, rcond=None)[0]
    else:
        w = np.zeros(dim)
    for s in sets:
        if s.kind in ("nonneg", "box", "simplex"):
            w = s.project(w)
    viol = lambda x: max(s.violation(x) for s in sets)
    if viol(w) <= 1e-9:
        return w
    plan = ProjectionPlan(sets, dim, k=1)
    for _ in range(50):
        w, _ = plan.run(w, k=max_cycles // 50, tol=1e-13)
        if viol(w) <= 1e-9:
            return w
    raise EmptyFeasibleRegionError(f"no feasible point found (violation {viol(w):.3g})")


# ------------------------------------------------------------ benchmarks


def _matching(n=10):
    n = int(n)
    if n < 1:
        raise ValueError("matching needs n >= 1")
    E = n * n
    rows = np.kron(np.eye(n), np.ones(n))  # sum_j w_ij
    cols = np.kron(np.ones(n), np.eye(n))  # sum_i w_ij
    A = np.block([[rows, np.eye(n), np.zeros((n, n))], [cols, np.zeros((n, n)), np.eye(n)]])
    hi = np.r_[np.ones(E), np.full(2 * n, np.inf)]
    sets = [ConvexSet.affine(A, np.ones(2 * n)), ConvexSet.box(np.zeros(E + 2 * n), hi)]
    obj = LinearObjective(u_dim=E, pad=2 * n, sign=-1.0, family="matching-linear")
    witness = np.r_[np.zeros(E), np.ones(2 * n)]
    return Problem(E + 2 * n, sets, obj, sense="max", kind="matching", witness=witness, meta={"n": n})


def grid_edges(side):
    """Directed 4-neighbour edges of a side x side grid, vertex id = r*side + c."""
    edges = []
    for r in range(side):
        for c in range(side):
            v = r * side + c
            if c + 1 < side:
                edges += [(v, v + 1), (v + 1, v)]
            if r + 1 < side:
                edges += [(v, v + side), (v + side, v)]
    return np.array(edges, dtype=int).reshape(-1, 2)


def _shortest_path(side=12):
    side = int(side)
    if side < 2:
        raise ValueError("shortest path needs grid side >= 2")
    V = side * side
    edges = grid_edges(side)
    E = len(edges)
    inc = np.zeros((V, E))
    inc[edges[:, 0], np.arange(E)] += 1.0  # out
    inc[edges[:, 1], np.arange(E)] -= 1.0  # in
    src, snk = 0, V - 1
    rhs = np.zeros(V)
    rhs[src], rhs[snk] = 1.0, -1.0
    keep = np.arange(V) != snk  # drop one row: node balance is rank V-1
    sets = [ConvexSet.affine(inc[keep], rhs[keep]), ConvexSet.box(np.zeros(E), np.ones(E))]
    obj = LinearObjective(u_dim=V, index=edges[:, 1].copy(), offset_index=src, family="shortest-path-linear")
    # witness: right along the top row, then down the last column
    wit = np.zeros(E)
    pos = {tuple(e): i for i, e in enumerate(edges.tolist())}
    path = [c for c in range(side)] + [r * side + side - 1 for r in range(1, side)]
    for a, b in zip(path[:-1], path[1:]):
        wit[pos[(a, b)]] = 1.0
    return Problem(E, sets, obj, kind="shortest-path", witness=wit,
                   meta={"side": side, "edges": edges, "source": src, "sink": snk})


def _cap_newsvendor(K=1, C=np.inf, h=1.0, b=2.0):
    K = int(K)
    C = float(C)
    if not C > 0:
        raise ValueError("capacity C must be positive")
    h = np.broadcast_to(np.asarray(h, dtype=float), (K,)).copy()
    b = np.broadcast_to(np.asarray(b, dtype=float), (K,)).copy()
    sets = [ConvexSet.nonneg(K)]
    if np.isfinite(C):
        sets = [ConvexSet.halfspace(np.ones(K), C)] + sets
    return Problem(K, sets, NewsvendorObjective(h, b), kind="capacitated-newsvendor",
                   witness=np.zeros(K), meta={"K": K, "C": C})


def _quad_newsvendor(support=(1, 2, 3, 4, 5), c0=1.0, q0=0.1, cb=10.0, qb=2.0, ch=2.0, qh=0.5):
    obj = QuadNewsvendorObjective(c0, q0, cb, qb, ch, qh, np.asarray(support, dtype=float))
    return Problem(1, [ConvexSet.nonneg(1)], obj, kind="quadratic-newsvendor", witness=np.zeros(1))


def _electricity(horizon=24, r=0.4, gamma_s=50.0, gamma_e=0.5):
    H = int(horizon)
    if H < 2:
        raise ValueError("electricity needs horizon >= 2")
    sets = []
    for i in range(H - 1):
        a = np.zeros(H)
        a[i + 1], a[i] = 1.0, -1.0
        sets += [ConvexSet.halfspace(a, r), ConvexSet.halfspace(-a, r)]
    sets.append(ConvexSet.nonneg(H))
    return Problem(H, sets, ElectricityObjective(gamma_s, gamma_e, H), kind="electricity",
                   witness=np.zeros(H), meta={"horizon": H, "r": r})


def crossfulfill_matrix(n, m):
    """Rows: sum_j v_ij + p_i = w_i ; sum_i v_ij + q_j = d_j."""
    top = np.hstack([np.kron(np.eye(n), np.ones(m)), np.eye(n), np.zeros((n, m))])
    bot = np.hstack([np.kron(np.ones(n), np.eye(m)), np.zeros((m, n)), np.eye(m)])
    return np.vstack([top, bot])


def _crossfulfill_second(n=3, m=3, c=None, b=None, h=None, seed=0):
    n, m = int(n), int(m)
    rng = np.random.default_rng(seed)
    if c is None:
        c = rng.uniform(0.1, 1.0, size=(n, m))
        if n == m:
            np.fill_diagonal(c, 0.0)  # warehouse i sits with client i
    c = np.asarray(c, dtype=float).reshape(n, m)
    b = np.broadcast_to(np.asarray(3.0 if b is None else b, dtype=float), (m,)).copy()
    h = np.broadcast_to(np.asarray(0.5 if h is None else h, dtype=float), (n,)).copy()
    d = n * m + n + m
    sets = [ConvexSet.affine(crossfulfill_matrix(n, m), np.zeros(n + m)), ConvexSet.nonneg(d)]
    return Problem(d, sets, CrossFulfillObjective(c, b, h), kind="crossfulfill-second-stage",
                   witness=np.zeros(d), rhs_set=0, meta={"n": n, "m": m})


def _crossfulfill_first(n=3):
    obj = LinearObjective(u_dim=int(n), family="linear")
    return Problem(int(n), [ConvexSet.nonneg(int(n))], obj, kind="crossfulfill-first-stage", witness=np.zeros(int(n)))


def _toy_polytope():
    # w1 + 2 w2 >= 1, 2 w1 + w2 >= 1, w >= 0
    sets = [ConvexSet.halfspace([-1.0, -2.0], -1.0), ConvexSet.halfspace([-2.0, -1.0], -1.0), ConvexSet.nonneg(2)]
    verts = np.array([[0.0, 1.0], [1 / 3, 1 / 3], [1.0, 0.0]])
    return Problem(2, sets, LinearObjective(u_dim=2), kind="toy-polytope", witness=np.ones(2),
                   meta={"vertices": verts})


def _simplex(d=3):
    d = int(d)
    sets = [ConvexSet.affine(np.ones((1, d)), [1.0]), ConvexSet.nonneg(d)]
    return Problem(d, sets, LinearObjective(u_dim=d), kind="simplex", witness=np.full(d, 1.0 / d))


def _lp(c_dim=None, G=None, h=None, A_eq=None, b_eq=None, lo=0.0, hi=np.inf, Q=None):
    """Generic polyhedron {A_eq x = b_eq, G x <= h, lo <= x <= hi} in slack form.

    Variables are (x, s) with G x + s = h, s >= 0.  Objective is linear in x
    (u = cost) or, with ``Q``, quadratic 1/2 x'Qx + u.x padded with zero
    curvature on the slacks.
    """
    G = np.zeros((0, c_dim)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    n = G.shape[1] if c_dim is None else int(c_dim)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float).reshape(-1)
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    mi = G.shape[0]
    A = np.vstack([np.hstack([A_eq, np.zeros((A_eq.shape[0], mi))]), np.hstack([G, np.eye(mi)])])
    b = np.r_[b_eq, h]
    d = n + mi
    lo_v = np.r_[np.broadcast_to(lo, (n,)), np.zeros(mi)]
    hi_v = np.r_[np.broadcast_to(hi, (n,)), np.full(mi, np.inf)]
    sets = []
    if A.shape[0]:
        sets.append(ConvexSet.affine(A, b))
    if np.all(lo_v == 0) and np.all(np.isinf(hi_v)):
        sets.append(ConvexSet.nonneg(d))
    else:
        sets.append(ConvexSet.box(lo_v, hi_v))
    if Q is None:
        obj = LinearObjective(u_dim=n, pad=mi)
    else:
        Qf = np.zeros((d, d))
        Qf[:n, :n] = np.asarray(Q, dtype=float)
        obj = QuadraticObjective(Qf)
    return Problem(d, sets, obj, kind="lp" if Q is None else "qp", meta={"n": n, "slacks": mi})


BUILDERS = {
    "matching": _matching,
    "shortest-path": _shortest_path,
    "capacitated-newsvendor": _cap_newsvendor,
    "quadratic-newsvendor": _quad_newsvendor,
    "electricity": _electricity,
    "crossfulfill-second-stage": _crossfulfill_second,
    "crossfulfill-first-stage": _crossfulfill_first,
    "toy-polytope": _toy_polytope,
    "simplex": _simplex,
    "lp": _lp,
}


def build_problem(kind: str, **params) -> Problem:
    try:
        builder = BUILDERS[kind]
    except KeyError:
        raise ValueError(f"unknown problem kind {kind!r}; choose from {sorted(BUILDERS)}") from None
    return builder(**params)


def _check_dims(p, u, w):
    if np.shape(u)[-1] != p.u_dim:
        raise ValueError(f"u has dimension {np.shape(u)[-1]}, problem expects {p.u_dim}")
    if np.shape(w)[-1] != p.dim:
        raise ValueError(f"w has dimension {np.shape(w)[-1]}, problem expects {p.dim}")


def eval_objective(p: Problem, u, w):
    """g_u(w) in minimization form (float for single points, array for batches)."""
    u, w = np.asarray(u, dtype=float), np.asarray(w, dtype=float)
    _check_dims(p, u, w)
    v = np.asarray(p.objective.value(u, w))
    return float(v) if v.ndim == 0 else v


def eval_gradient(p: Problem, u, w, smoothing=0.0):
    u, w = np.asarray(u, dtype=float), np.asarray(w, dtype=float)
    _check_dims(p, u, w)
    return np.asarray(p.objective.grad(u, w, smoothing))
