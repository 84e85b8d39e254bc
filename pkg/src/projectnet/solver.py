"""ProjectNet: unrolled projected iterations with a learned linear term.

    w_0     = P(0)
    w_{t+1} = P(w_t - eta * grad g_u(w_t) - gamma * L(u) w_t)

where P is k cycles of Dykstra.  With gamma = 0 (or no model) this is plain
projected gradient descent.  ``unroll`` is the differentiable core; the
``*_solve`` functions wrap it for plain evaluation and reporting.
"""

from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .problems import Problem, eval_objective
from .projection import dykstra


class SolverDivergedError(ad.NonFiniteError):
    def __init__(self, t, msg=""):
        super().__init__(f"non-finite iterate at t={t}{': ' + msg if msg else ''} (step size too large?)")
        self.t = t


@dataclass
class SolveConfig:
    eta: float = 0.1
    gamma: float = 0.1
    T: int = 5
    k: int = 10
    record_trajectory: bool = False
    # softplus smoothing width for kinked objectives; 0 = exact subgradient
    smoothing: float = 0.0
    threads: int = 1

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.smoothing < 0:
            raise ValueError("smoothing must be >= 0")

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return SolveConfig(**d)


@dataclass
class SolveReport:
    w: np.ndarray
    objective: list
    residual: float
    wall_time: float
    trajectory: list | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "w": np.asarray(self.w).tolist(),
            "objective": [np.asarray(o).tolist() for o in self.objective],
            "residual": self.residual,
            "wall_time": self.wall_time,
            "trajectory": None if self.trajectory is None else [np.asarray(t).tolist() for t in self.trajectory],
            "meta": self.meta,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    def trajectory_csv(self, path):
        """Columns t, w_0..w_{d-1}, objective (single-instance solves only)."""
        if self.trajectory is None:
            raise ValueError("trajectory was not recorded")
        d = np.asarray(self.trajectory[0]).shape[-1]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t"] + [f"w_{i}" for i in range(d)] + ["objective"])
            for t, (w, o) in enumerate(zip(self.trajectory, self.objective)):
                wr.writerow([t] + [repr(float(x)) for x in np.ravel(w)] + [repr(float(o))])


def unroll(p: Problem, u, cfg: SolveConfig, L=None, rhs=None, callback=None):
    """Differentiable iterate map.  ``u``, ``L`` and ``rhs`` may be tape Vars.

    ``L`` is (d, d) or batched (B, d, d); ``callback(t, w)`` sees every
    iterate including w_0.
    """
    plan = p.plan(cfg.k, cfg.threads)
    u_shape = np.shape(ad.value(u))
    shape = u_shape[:-1] + (p.dim,)
    if rhs is not None and len(np.shape(ad.value(rhs))) > len(shape):
        shape = np.shape(ad.value(rhs))[:-1] + (p.dim,)
    w = dykstra(plan, np.zeros(shape), rhs=rhs)
    if callback is not None:
        callback(0, w)
    for t in range(cfg.T):
        try:
            step = w - cfg.eta * p.objective.grad(u, w, cfg.smoothing)
            if L is not None:
                step = step - cfg.gamma * ad.matvec(L, w)
            if not np.all(np.isfinite(ad.value(step))):
                raise ad.NonFiniteError("step")
            w = dykstra(plan, step, rhs=rhs)
        except ad.NonFiniteError as e:
            raise SolverDivergedError(t, str(e)) from None
        if callback is not None:
            callback(t + 1, w)
    return w


def _run(p, u, cfg, L, rhs):
    u = np.asarray(u, dtype=float)
    traj, objs = [], []

    def cb(t, w):
        w = np.asarray(w)
        if cfg.record_trajectory:
            traj.append(w.copy())
        objs.append(eval_objective(p, u, w))

    t0 = time.perf_counter()
    w = np.asarray(unroll(p, u, cfg, L=L, rhs=rhs, callback=cb))
    wall = time.perf_counter() - t0
    return SolveReport(w=w, objective=objs, residual=float(p.violation(w, rhs)), wall_time=wall,
                       trajectory=traj if cfg.record_trajectory else None)


def projectnet_solve(p: Problem, m, u, cfg: SolveConfig = None, rhs=None, L_input=None) -> SolveReport:
    """Run ProjectNet with model ``m`` at its current parameters.

    ``L_input`` overrides the vector fed to L(.) (two-stage problems feed
    (w, d) while the objective's ``u`` is unused)."""
    cfg = cfg or SolveConfig()
    L = None if m is None else np.asarray(m.build_L(m.params, np.asarray(u if L_input is None else L_input, dtype=float)))
    rep = _run(p, u, cfg, L, rhs)
    rep.meta.update(method="projectnet", gamma=cfg.gamma, eta=cfg.eta, T=cfg.T, k=cfg.k)
    return rep


def pgd_solve(p: Problem, u, cfg: SolveConfig = None, rhs=None) -> SolveReport:
    cfg = cfg or SolveConfig()
    rep = _run(p, u, cfg, None, rhs)
    rep.meta.update(method="pgd", eta=cfg.eta, T=cfg.T, k=cfg.k)
    return rep


def polish(p: Problem, w, rhs=None, tol=1e-12, max_cycles=20000):
    """Evaluation-grade projection: Dykstra until the iterates stall."""
    return p.plan(1).run(w, k=max_cycles, rhs=rhs, tol=tol)[0]


def relative_regret(p: Problem, u, w_hat, w_star, return_flag=False):
    """(g(w_hat) - g(w*)) / |g(w*)| in minimization form.

    The absolute value keeps the sign meaningful for maximization problems,
    whose minimization-form optimum is negative.  If g(w*) == 0 the absolute
    regret is returned and flagged.
    """
    gh = np.asarray(eval_objective(p, u, w_hat), dtype=float)
    gs = np.asarray(eval_objective(p, u, w_star), dtype=float)
    zero = gs == 0
    den = np.where(zero, 1.0, np.abs(gs))
    val = (gh - gs) / den
    if np.any(zero):
        warnings.warn("g(w*) == 0: reporting absolute regret", RuntimeWarning, stacklevel=2)
    val = float(val) if val.ndim == 0 else val
    if return_flag:
        return val, (bool(zero) if np.ndim(zero) == 0 else zero)
    return val
