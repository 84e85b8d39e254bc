"""The learned linear term L(u) with spectrum confined to [lam_lo, lam_hi].

A raw vector r(u) is produced by the model (constant, affine in u, or a small
MLP) and split into an upper-triangular M with exp'd diagonal and a diagonal
D.  Eigenvalues are rho(D) = lam_lo + (lam_hi - lam_lo) * sigmoid(D).

form="paper"      L = (M M^T) diag(rho) (M M^T)^{-1}; real positive spectrum,
                   generally not symmetric.
form="symmetric"  L = Q^T diag(rho) Q with the rows of Q an orthonormalization
                   of the rows of M (Householder QR of M^T, i.e. Gram-Schmidt
                   on the rows up to round-off); symmetric positive definite.

The rows of M are used rather than its columns: the columns of an
upper-triangular matrix orthonormalize to the identity, which would make Q
constant.  Householder keeps Q orthonormal to machine precision even when M
is badly conditioned, which classical Gram-Schmidt does not.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSlots

MODES = ("constant", "linear", "mlp", "zero")
FORMS = ("symmetric", "paper")
# eigenvalue round-off of the similarity form grows like cond(M M^T)^2 * eps;
# above ~1e4 it exceeds 1e-6 on [0.1, 10]
COND_MAX = 1e4


class IllConditionedError(ArithmeticError):
    """M M^T too ill-conditioned to invert; re-initialize the model."""


class UpdateRuleModel:
    def __init__(self, d, u_dim, mode="constant", form="symmetric", lam_lo=0.1, lam_hi=10.0,
                 hidden=32, init_D=-4.0, init_scale=0.01, seed=0, params=None, u_parts="all",
                 u_shift=None, u_scale=None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}")
        if not 0 < lam_lo <= lam_hi:
            raise ValueError("need 0 < lam_lo <= lam_hi")
        self.d, self.u_dim = int(d), int(u_dim)
        self.mode, self.form = mode, form
        self.lam_lo, self.lam_hi = float(lam_lo), float(lam_hi)
        self.hidden = int(hidden)
        if u_parts not in ("all", "D"):
            raise ValueError("u_parts must be 'all' or 'D'")
        # "D": only the spectrum depends on u, M is shared (cheaper for large d)
        self.u_parts = u_parts
        self.init_D, self.init_scale, self.seed = float(init_D), float(init_scale), int(seed)
        # fixed input standardization (u - shift) / scale, see fit_input_scaling
        self.u_shift = np.zeros(self.u_dim) if u_shift is None else np.asarray(u_shift, dtype=float).copy()
        self.u_scale = np.ones(self.u_dim) if u_scale is None else np.asarray(u_scale, dtype=float).copy()
        d = self.d
        self.iu = np.triu_indices(d)
        self.n_tri = len(self.iu[0])
        self.n_raw = self.n_tri + d
        self.n_out = self.n_raw if u_parts == "all" else d
        self.diag_pos = np.array([i for i, (r, c) in enumerate(zip(*self.iu)) if r == c])
        self.slots = ParamSlots()
        if mode != "zero":
            self.slots.add("r0", (self.n_raw,))
        if mode == "linear":
            self.slots.add("W", (self.n_out, self.u_dim))
        elif mode == "mlp":
            self.slots.add("W1", (self.hidden, self.u_dim))
            self.slots.add("b1", (self.hidden,))
            self.slots.add("W2", (self.n_out, self.hidden))
        self.params = self.init_params() if params is None else np.asarray(params, dtype=float).copy()
        if self.params.size != self.slots.size:
            raise ValueError(f"expected {self.slots.size} parameters, got {self.params.size}")

    @property
    def n_params(self):
        return self.slots.size

    def init_params(self):
        rng = np.random.default_rng(self.seed)
        p = np.zeros(self.slots.size)
        if self.mode == "zero":
            return p
        r0 = np.zeros(self.n_raw)
        off = np.ones(self.n_tri, dtype=bool)
        off[self.diag_pos] = False
        r0[: self.n_tri][off] = self.init_scale * rng.standard_normal(off.sum())
        r0[self.n_tri:] = self.init_D
        p[self.slots.slice("r0")] = r0
        if self.mode == "linear":
            p[self.slots.slice("W")] = self.init_scale * rng.standard_normal(self.n_out * self.u_dim)
        elif self.mode == "mlp":
            p[self.slots.slice("W1")] = rng.standard_normal(self.hidden * self.u_dim) / np.sqrt(max(self.u_dim, 1))
            p[self.slots.slice("W2")] = self.init_scale * rng.standard_normal(self.n_out * self.hidden)
        return p

    # ---------------------------------------------------------------- build

    def raw(self, params, u):
        """(triangle part, D part) of the raw vector."""
        r0 = self.slots.view(params, "r0")
        tri = ad.getitem(r0, slice(0, self.n_tri))
        D = ad.getitem(r0, slice(self.n_tri, self.n_raw))
        if self.mode == "constant":
            return tri, D
        u = (u - self.u_shift) * (1.0 / self.u_scale)
        if self.mode == "linear":
            du = ad.matmul(u, ad.transpose(self.slots.view(params, "W")))
        else:
            h = ad.relu(ad.matmul(u, ad.transpose(self.slots.view(params, "W1"))) + self.slots.view(params, "b1"))
            du = ad.matmul(h, ad.transpose(self.slots.view(params, "W2")))
        if self.u_parts == "D":
            return tri, D + du
        return (tri + ad.getitem(du, (Ellipsis, slice(0, self.n_tri))),
                D + ad.getitem(du, (Ellipsis, slice(self.n_tri, self.n_raw))))

    def factors(self, params, u):
        """(M, rho) with M (..., d, d) upper triangular, rho (..., d)."""
        tri, Dr = self.raw(params, u)
        d = self.d
        # exp on the diagonal entries only
        isdiag = np.zeros(self.n_tri)
        isdiag[self.diag_pos] = 1.0
        tri = tri * (1.0 - isdiag) + ad.exp(tri * isdiag) * isdiag
        # scatter the packed triangle into a d x d matrix (zeros below)
        full_idx = np.full(d * d, self.n_tri)  # points at an appended zero
        full_idx[self.iu[0] * d + self.iu[1]] = np.arange(self.n_tri)
        padded = ad.concat([tri, np.zeros(1)])
        M = ad.take(padded, full_idx)
        M = ad.reshape(M, np.shape(ad.value(M))[:-1] + (d, d))
        rho = self.lam_lo + (self.lam_hi - self.lam_lo) * ad.sigmoid(Dr)
        return M, rho

    def build_L(self, params, u):
        """L(u); ``u`` may be (u_dim,) or (B, u_dim) (then L is (B, d, d),
        except in constant mode where L is shared)."""
        if self.mode == "zero":
            return np.zeros((self.d, self.d))
        M, rho = self.factors(params, u)
        if self.form == "paper":
            return _paper_L(M, rho, self.d)
        Q = orthonormal_rows(M)
        QT = ad.transpose(Q)
        return ad.matmul(QT * ad.reshape(rho, np.shape(ad.value(rho))[:-1] + (1, self.d)), Q)

    def L(self, u=None):
        """Plain evaluation at the current parameters."""
        if u is None:
            u = np.zeros(self.u_dim)
        return np.asarray(self.build_L(self.params, np.asarray(u, dtype=float)))

    # ------------------------------------------------------------- checkpoint

    def fit_input_scaling(self, U):
        """Standardize model inputs with the column mean / std of U."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        self.u_shift = U.mean(axis=0)
        sd = U.std(axis=0)
        self.u_scale = np.where(sd > 1e-12, sd, 1.0)
        return self

    def to_dict(self):
        return {"mode": self.mode, "form": self.form, "lam_lo": self.lam_lo, "lam_hi": self.lam_hi,
                "d": self.d, "u_dim": self.u_dim, "hidden": self.hidden, "u_parts": self.u_parts,
                "u_shift": self.u_shift.tolist(), "u_scale": self.u_scale.tolist(),
                "params": self.params.tolist()}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls(d["d"], d["u_dim"], mode=d["mode"], form=d["form"], lam_lo=d["lam_lo"],
                   lam_hi=d["lam_hi"], hidden=d.get("hidden", 32), params=np.asarray(d["params"]),
                   u_parts=d.get("u_parts", "all"), u_shift=d.get("u_shift"), u_scale=d.get("u_scale"))

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))

    def copy(self, params=None):
        return UpdateRuleModel(self.d, self.u_dim, self.mode, self.form, self.lam_lo, self.lam_hi,
                               self.hidden, self.init_D, self.init_scale, self.seed,
                               params=self.params if params is None else params, u_parts=self.u_parts,
                               u_shift=self.u_shift, u_scale=self.u_scale)


def orthonormal_rows(M):
    """Q with orthonormal rows spanning the leading rows of M like Gram-Schmidt
    would (R factor with positive diagonal)."""
    return ad.transpose(ad.qr_q(ad.transpose(M)))


def _paper_L(M, rho, d):
    Mv = ad.value(M)
    S = Mv @ np.swapaxes(Mv, -1, -2)
    cond = np.linalg.cond(S)
    if np.any(cond > COND_MAX):
        raise IllConditionedError(f"cond(M M^T) = {np.max(cond):.3g} > {COND_MAX:.0e}")
    eye = np.broadcast_to(np.eye(d), np.shape(Mv))
    Minv = ad.solve_triangular(M, np.ascontiguousarray(eye), lower=False)
    MMt = ad.matmul(M, ad.transpose(M))
    left = MMt * ad.reshape(rho, np.shape(ad.value(rho))[:-1] + (1, d))
    return ad.matmul(left, ad.matmul(ad.transpose(Minv), Minv))


def spectrum_bounds_check(m: UpdateRuleModel, U, params=None):
    """(min eig, max eig) of L(u) over the rows of U."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[0] < 1:
        raise ValueError("need at least one sample")
    p = m.params if params is None else params
    L = np.asarray(m.build_L(p, U))
    if L.ndim == 2:
        L = L[None]
    if m.form == "symmetric" or m.mode == "zero":
        ev = np.linalg.eigvalsh(0.5 * (L + np.swapaxes(L, -1, -2)))
    else:
        ev = np.linalg.eigvals(L).real
    return float(ev.min()), float(ev.max())
