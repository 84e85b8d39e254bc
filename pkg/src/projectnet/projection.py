"""Convex set primitives, exact elementary projections and Dykstra's method.

Two differentiable routes to the approximate projection are provided:

* :func:`dykstra` runs the compiled (or numpy) kernel and registers a single
  tape primitive with a hand-written reverse pass.  This is the fast path.
* :func:`dykstra_composed` builds the same recursion from elementary tape
  operations.  It is slower, but it can differentiate with respect to the
  affine data (A, b) and serves as an independent check of the kernel.

Cycle order is the order of ``sets``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from ._kernels_py import AFFINE, BOX, HALFSPACE, NONNEG, SIMPLEX

KIND_CODES = {"affine": AFFINE, "halfspace": HALFSPACE, "nonneg": NONNEG, "box": BOX, "simplex": SIMPLEX}


class RankDeficientError(ValueError):
    pass


# ----------------------------------------------------------------- sets


@dataclass(frozen=True, eq=False)
class ConvexSet:
    """One convex set.  Use the classmethod constructors, which validate."""

    kind: str
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    a: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    total: float = 1.0
    dim: int | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def affine(cls, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise ValueError(f"A has {A.shape[0]} rows but b has {b.size} entries")
        if np.linalg.matrix_rank(A) < A.shape[0]:
            raise RankDeficientError(f"affine block {A.shape} is not full row rank")
        A.setflags(write=False)
        b.setflags(write=False)
        return cls("affine", A=A, b=b, dim=A.shape[1])

    @classmethod
    def halfspace(cls, a, b):
        a = np.asarray(a, dtype=float).reshape(-1)
        if not np.any(a):
            raise ValueError("halfspace normal vector is zero")
        a.setflags(write=False)
        return cls("halfspace", a=a, b=np.asarray(float(b)), dim=a.size)

    @classmethod
    def nonneg(cls, dim=None):
        return cls("nonneg", dim=dim)

    @classmethod
    def box(cls, lo, hi):
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("box bounds have different shapes")
        if np.any(lo > hi):
            raise ValueError("box bounds inverted (lo > hi)")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo == np.inf) or np.any(hi == -np.inf):
            raise ValueError("invalid box bounds")
        lo.setflags(write=False)
        hi.setflags(write=False)
        return cls("box", lo=lo, hi=hi, dim=lo.size)

    @classmethod
    def simplex(cls, total=1.0):
        if not total > 0:
            raise ValueError("simplex total must be positive")
        return cls("simplex", total=float(total))

    # cached P = A^T (A A^T)^{-1}
    @property
    def pinv_factor(self):
        if "P" not in self._cache:
            A = self.A
            self._cache["P"] = np.linalg.solve(A @ A.T, A).T.copy()
        return self._cache["P"]

    def project(self, w, b=None):
        """Exact Euclidean projection (rows of a 2-D ``w`` are projected independently)."""
        w = np.asarray(w, dtype=float)
        if self.kind == "affine":
            return project_affine(self.A, self.b if b is None else b, w, P=self.pinv_factor)
        if self.kind == "halfspace":
            return project_halfspace(self.a, float(self.b), w)
        if self.kind == "nonneg":
            return project_nonneg(w)
        if self.kind == "box":
            return project_box(self.lo, self.hi, w)
        return project_simplex(w, self.total)

    def violation(self, w, b=None):
        """Largest constraint violation of ``w`` (0 when feasible)."""
        w = np.asarray(w, dtype=float)
        if self.kind == "affine":
            bb = self.b if b is None else b
            return float(np.max(np.abs(w @ self.A.T - bb), initial=0.0))
        if self.kind == "halfspace":
            return float(max(np.max(w @ self.a - self.b, initial=0.0), 0.0))
        if self.kind == "nonneg":
            return float(max(-np.min(w, initial=0.0), 0.0))
        if self.kind == "box":
            return float(max(np.max(self.lo - w, initial=0.0), np.max(w - self.hi, initial=0.0), 0.0))
        return float(max(np.max(np.abs(w.sum(axis=-1) - self.total), initial=0.0), -np.min(w, initial=0.0), 0.0))

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == "affine":
            out.update(A=self.A.tolist(), b=self.b.tolist())
        elif self.kind == "halfspace":
            out.update(a=self.a.tolist(), b=float(self.b))
        elif self.kind == "box":
            out.update(lo=_enc(self.lo), hi=_enc(self.hi))
        elif self.kind == "simplex":
            out.update(total=self.total)
        elif self.dim is not None:
            out.update(dim=self.dim)
        return out

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        if kind == "affine":
            return cls.affine(d["A"], d["b"])
        if kind == "halfspace":
            return cls.halfspace(d["a"], d["b"])
        if kind == "nonneg":
            return cls.nonneg(d.get("dim"))
        if kind == "box":
            return cls.box(_dec(d["lo"]), _dec(d["hi"]))
        if kind == "simplex":
            return cls.simplex(d["total"])
        raise ValueError(f"unknown set kind {kind!r}")


def _enc(v):
    # JSON has no infinities
    return [x if np.isfinite(x) else ("inf" if x > 0 else "-inf") for x in np.asarray(v).tolist()]


def _dec(v):
    return np.array([float(x) for x in v])


# ---------------------------------------------------- elementary projections


def project_affine(A, b, w, P=None):
    """w - A^T (A A^T)^{-1} (A w - b); ``P`` is the cached A^T (A A^T)^{-1}."""
    A = np.asarray(A, dtype=float)
    if P is None:
        P = np.linalg.solve(A @ A.T, A).T
    return w - (w @ A.T - b) @ P.T


def project_nonneg(w):
    return np.maximum(w, 0.0)


def project_halfspace(a, b, w):
    a = np.asarray(a, dtype=float)
    nn = float(a @ a)
    if nn == 0.0:
        raise ValueError("halfspace normal vector is zero")
    s = np.maximum(w @ a - b, 0.0)
    return w - np.multiply.outer(s, a) / nn


def project_box(lo, hi, w):
    if np.any(np.asarray(lo) > np.asarray(hi)):
        raise ValueError("box bounds inverted (lo > hi)")
    return np.minimum(np.maximum(w, lo), hi)


def project_simplex(w, total=1.0):
    """Projection onto {x >= 0, sum x = total} by the sort-based rule."""
    w = np.asarray(w, dtype=float)
    flat = np.atleast_2d(w)
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - total
    idx = np.arange(1, flat.shape[1] + 1)
    rho = flat.shape[1] - 1 - np.argmax((u - css / idx > 0)[:, ::-1], axis=1)
    tau = css[np.arange(flat.shape[0]), rho] / (rho + 1)
    return np.maximum(flat - tau[:, None], 0.0).reshape(w.shape)


# ------------------------------------------------------------------ plans


@dataclass
class PackedPlan:
    kinds: np.ndarray
    foff: np.ndarray
    ioff: np.ndarray
    isize: np.ndarray
    fdata: np.ndarray
    idata: np.ndarray
    moff: np.ndarray
    zslot: np.ndarray
    hslot: np.ndarray
    nz: int
    nh: int
    R: int
    d: int
    m_rhs: int
    rhs_set: int
    entries: list


def _pack(sets, d, rhs_set):
    kinds, foff, ioff, isize, moff, zslot, hslot = [], [], [], [], [], [], []
    fdata, idata, entries = [], [], []
    nf = ni = R = nz = nh = 0
    m_rhs = 0
    for j, s in enumerate(sets):
        kinds.append(KIND_CODES[s.kind])
        foff.append(nf)
        ioff.append(ni)
        moff.append(R)
        zslot.append(-1)
        hslot.append(-1)
        if s.kind == "affine":
            A, P = s.A, s.pinv_factor
            m = A.shape[0]
            fdata += [A.ravel(), P.ravel(), s.b]
            nf += 2 * m * d + m
            isize.append(m)
            if j == rhs_set:
                m_rhs = m
            entries.append((AFFINE, A, P, s.b))
        elif s.kind == "halfspace":
            nzi = np.flatnonzero(s.a)
            vals = s.a[nzi]
            inv = 1.0 / float(vals @ vals)
            fdata += [vals, np.array([float(s.b), inv])]
            idata.append(nzi.astype(np.intp))
            nf += vals.size + 2
            ni += nzi.size
            isize.append(nzi.size)
            hslot[-1] = nh
            entries.append((HALFSPACE, nzi, vals, float(s.b), inv, nh, R))
            nh += 1
            R += 1
        else:
            isize.append(0)
            zslot[-1] = nz
            if s.kind == "nonneg":
                entries.append((NONNEG, nz, R))
            elif s.kind == "box":
                fdata += [s.lo, s.hi]
                nf += 2 * d
                entries.append((BOX, s.lo, s.hi, nz, R))
            else:
                fdata.append(np.array([s.total]))
                nf += 1
                entries.append((SIMPLEX, s.total, nz, R))
            nz += 1
            R += d
    ip = lambda v: np.ascontiguousarray(v, dtype=np.intp)
    return PackedPlan(
        kinds=ip(kinds), foff=ip(foff), ioff=ip(ioff), isize=ip(isize),
        fdata=np.ascontiguousarray(np.concatenate(fdata) if fdata else np.zeros(1)),
        idata=ip(np.concatenate(idata) if idata else np.zeros(1)),
        moff=ip(moff), zslot=ip(zslot), hslot=ip(hslot),
        nz=nz, nh=nh, R=R, d=d, m_rhs=m_rhs, rhs_set=-1 if rhs_set is None else rhs_set,
        entries=entries,
    )


class ProjectionPlan:
    """Ordered sets plus a default cycle count ``k``.

    ``rhs_set`` names one affine set whose right-hand side may be replaced per
    sample (two-stage problems).  Plans are read-only after construction.
    """

    def __init__(self, sets, dim, k=10, rhs_set=None, threads=1):
        if k < 1:
            raise ValueError("cycle count k must be >= 1")
        sets = list(sets)
        if not sets:
            raise ValueError("a projection plan needs at least one set")
        for j, s in enumerate(sets):
            if s.dim is not None and s.dim != dim:
                raise ValueError(f"set {j} ({s.kind}) has dim {s.dim}, expected {dim}")
        if rhs_set is not None and sets[rhs_set].kind != "affine":
            raise ValueError("rhs_set must point at an affine set")
        self.sets = sets
        self.dim = int(dim)
        self.k = int(k)
        self.rhs_set = rhs_set
        self.threads = int(threads)
        self.packed = _pack(sets, self.dim, rhs_set)

    def with_k(self, k):
        p = object.__new__(ProjectionPlan)
        p.__dict__.update(self.__dict__)
        if k < 1:
            raise ValueError("cycle count k must be >= 1")
        p.k = int(k)
        return p

    def run(self, w, k=None, rhs=None, tol=0.0, backend=None):
        """Plain evaluation; returns (projected w, cycles run)."""
        w = np.asarray(w, dtype=float)
        if not np.all(np.isfinite(w)):
            raise ad.NonFiniteError("non-finite input to projection")
        W = np.atleast_2d(w)
        R = None if rhs is None else np.atleast_2d(np.asarray(rhs, dtype=float))
        if R is not None and R.shape[0] != W.shape[0]:
            R = np.broadcast_to(R, (W.shape[0], R.shape[1])).copy()
        x, _, cyc = kernels.forward(self.packed, W, R, self.k if k is None else k, False, tol, self.threads, backend)
        return x.reshape(w.shape), cyc

    def violation(self, w, rhs=None):
        w = np.asarray(w, dtype=float)
        return max(s.violation(w, rhs if j == self.rhs_set else None) for j, s in enumerate(self.sets))


def _proj_fwd(w, *rest, plan=None, k=None, cache=None):
    W = np.atleast_2d(w)
    R = None
    if rest:
        R = np.atleast_2d(rest[0])
        if R.shape[0] != W.shape[0]:
            R = np.broadcast_to(R, (W.shape[0], R.shape[1])).copy()
    x, masks, _ = kernels.forward(plan.packed, W, R, k, True, 0.0, plan.threads)
    cache["masks"] = masks
    return x.reshape(np.shape(w))


def _proj_vjp(g, o, w, *rest, plan=None, k=None, cache=None):
    G = np.atleast_2d(g)
    gx, grhs = kernels.backward(plan.packed, cache["masks"], G, k, bool(rest), plan.threads)
    gw = gx.reshape(np.shape(w))
    if not rest:
        return (gw,)
    return (gw, grhs.reshape(np.shape(rest[0])) if np.ndim(rest[0]) == 2 else grhs.sum(axis=0))


ad.register("project", _proj_fwd, _proj_vjp)


def dykstra(plan: ProjectionPlan, w, k=None, rhs=None):
    """Approximate projection with ``k`` Dykstra cycles (default ``plan.k``).

    Differentiable with respect to ``w`` and, for plans with ``rhs_set``,
    the per-sample right-hand side ``rhs``.  ``w`` may be (d,) or (B, d).
    """
    k = plan.k if k is None else int(k)
    if k < 1:
        raise ValueError("cycle count k must be >= 1")
    if rhs is not None and plan.rhs_set is None:
        raise ValueError("plan has no rhs_set")
    args = (w,) if rhs is None else (w, rhs)
    if not any(isinstance(a, ad.Var) for a in args):
        return plan.run(w, k=k, rhs=rhs)[0]
    if not np.all(np.isfinite(ad.value(w))):
        raise ad.NonFiniteError("non-finite input to projection")
    tape = next(a.tape for a in args if isinstance(a, ad.Var))
    return tape.apply(ad.PRIMITIVES["project"], args, dict(plan=plan, k=k, cache={}))


# --------------------------------------------------------- composed route


def _t_affine(A, b, w):
    # w - A^T (A A^T)^{-1} (A w - b), every piece on the tape
    r = ad.matvec(A, w) - b
    AAt = ad.matmul(A, ad.transpose(A))
    return w - ad.matvec(ad.transpose(A), ad.solve(AAt, r))


def _t_halfspace(a, b, w):
    s = ad.relu(ad.dot(w, a) - b) * (1.0 / float(a @ a))
    return w - ad.mul(ad.reshape(s, np.shape(ad.value(s)) + (1,)), a)


def _t_box(lo, hi, w):
    t = lo + ad.relu(w - lo)
    fin = np.isfinite(hi).astype(float)
    hf = np.where(np.isfinite(hi), hi, 0.0)
    return fin * (hf - ad.relu(hf - t)) + (1.0 - fin) * t


def _t_simplex(total, y):
    yv = ad.value(y)
    tau = project_simplex_tau(yv, total)
    mask = (yv - tau[..., None] > 0).astype(float)
    cnt = mask.sum(axis=-1)
    tau_t = (ad.dot(y, mask) - total) * (1.0 / cnt)
    return ad.relu(y - ad.reshape(tau_t, np.shape(tau_t) + (1,)))


def project_simplex_tau(w, total=1.0):
    flat = np.atleast_2d(w)
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - total
    idx = np.arange(1, flat.shape[1] + 1)
    rho = flat.shape[1] - 1 - np.argmax((u - css / idx > 0)[:, ::-1], axis=1)
    tau = css[np.arange(flat.shape[0]), rho] / (rho + 1)
    return tau.reshape(np.shape(w)[:-1])


def dykstra_composed(sets, w, k, overrides=None):
    """Dykstra built from elementary tape ops.

    ``overrides`` maps a set index to an (A, b) pair (arrays or Vars) that
    replaces that affine set's data, so gradients reach A and b.
    """
    overrides = overrides or {}
    x = w
    z = [None] * len(sets)
    for _ in range(int(k)):
        for j, s in enumerate(sets):
            if s.kind == "affine":
                A, b = overrides.get(j, (s.A, s.b))
                x = _t_affine(A, b, x)
                continue
            y = x if z[j] is None else x + z[j]
            if s.kind == "halfspace":
                x = _t_halfspace(s.a, float(s.b), y)
            elif s.kind == "nonneg":
                x = ad.relu(y)
            elif s.kind == "box":
                x = _t_box(s.lo, s.hi, y)
            else:
                x = _t_simplex(s.total, y)
            z[j] = y - x
    return x
