"""Fit the update-rule model: minimize the mean cost of the unrolled solver,

    min_params  mean_n  g_{u^n}( w_hat_T(u^n; L_params) ).
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .datagen import make_rng
from .problems import Problem, eval_objective
from .solver import SolveConfig, unroll

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


class Optimizer:
    """Plain gradient steps, heavy-ball momentum, or Adam."""

    def __init__(self, kind="adam", lr=1e-2, beta=0.9, beta2=0.999, eps=1e-8, clip=None):
        if kind not in ("plain", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        if not lr > 0:
            raise ValueError("learning rate must be positive")
        self.kind, self.lr, self.beta, self.beta2, self.eps, self.clip = kind, lr, beta, beta2, eps, clip
        self.m = self.v = None
        self.t = 0

    def state(self):
        return (None if self.m is None else self.m.copy(), None if self.v is None else self.v.copy(), self.t)

    def restore(self, st):
        self.m, self.v, self.t = st[0], st[1], st[2]

    def step(self, params, g):
        if self.clip is not None:
            n = np.linalg.norm(g)
            if n > self.clip:
                g = g * (self.clip / n)
        if self.kind == "plain":
            return params - self.lr * g
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        if self.kind == "momentum":
            self.m = self.beta * self.m + g
            return params - self.lr * self.m
        self.t += 1
        self.m = self.beta * self.m + (1 - self.beta) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mh = self.m / (1 - self.beta ** self.t)
        vh = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * mh / (np.sqrt(vh) + self.eps)


@dataclass
class MetaTrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-2
    optimizer: str = "adam"
    momentum: float = 0.9
    solver: SolveConfig = field(default_factory=lambda: SolveConfig(T=5, k=10))
    seed: int = 0
    val_fraction: float = 0.1
    patience: int = 10
    # optional hook: rng -> extra u-samples appended to each epoch
    augment: object = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if isinstance(self.solver, dict):
            self.solver = SolveConfig(**self.solver)


def _rhs(p: Problem, U):
    # problems with a data-dependent right-hand side (second stages) take it from u
    return U if p.rhs_set is not None else None


def batch_loss(p: Problem, m, params, U, scfg: SolveConfig, L_input=None):
    """Mean cost of the unrolled solve over the rows of U (tape-compatible)."""
    L = m.build_L(params, U if L_input is None else L_input)
    w = unroll(p, U, scfg, L=L, rhs=_rhs(p, U))
    return ad.mean(p.objective.value(U, w))


def mean_cost(p, m, params, U, scfg, chunk=256):
    tot = 0.0
    for s in range(0, len(U), chunk):
        Ub = U[s:s + chunk]
        w = np.asarray(unroll(p, Ub, scfg, L=m.build_L(params, Ub), rhs=_rhs(p, Ub)))
        tot += float(np.sum(eval_objective(p, Ub, w)))
    return tot / len(U)


def fit_loop(params0, data, loss_and_grad, mean_loss, cfg, on_epoch=None):
    """Shared minibatch loop for the meta and end-to-end trainers.

    ``data`` is a tuple of row-aligned arrays; ``loss_and_grad(params, batch)``
    and ``mean_loss(params, batch)`` take tuples of the same layout.  ``cfg``
    needs epochs, batch_size, lr, optimizer, momentum, seed, val_fraction,
    patience and augment.  ``on_epoch(params)`` may return a dict of extra
    columns for the epoch's history row (evaluated outside the timed part).
    Returns (params, history).
    """
    n = len(data[0])
    if n < 1:
        raise ValueError("need at least one training sample")
    rng = make_rng(cfg.seed)
    perm = rng.permutation(n)
    n_val = int(round(cfg.val_fraction * n)) if n >= 10 else 0
    val = tuple(a[perm[:n_val]] for a in data)
    tr = tuple(a[perm[n_val:]] for a in data)
    init_train = mean_loss(params0, tr)
    hist = []
    if params0.size == 0:
        hist.append(dict(epoch=0, train_loss=init_train, val_loss=np.nan, lr=cfg.lr, time=0.0))
        return params0.copy(), hist
    opt = Optimizer(cfg.optimizer, cfg.lr, cfg.momentum)
    params = params0.copy()
    best = (mean_loss(params, val) if n_val else init_train, params.copy())
    hist.append(dict(epoch=0, train_loss=init_train, val_loss=best[0] if n_val else np.nan, lr=opt.lr, time=0.0))
    if on_epoch is not None:
        hist[-1].update(on_epoch(params))
    halved = False
    stale = 0
    for ep in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        batch_src = tr
        if cfg.augment is not None:
            extra = cfg.augment(rng)
            extra = extra if isinstance(extra, tuple) else (np.atleast_2d(extra),)
            batch_src = tuple(np.concatenate([a, e]) for a, e in zip(tr, extra))
        order = rng.permutation(len(batch_src[0]))
        snapshot, opt_state = params.copy(), opt.state()
        losses = []
        try:
            for s in range(0, len(order), cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                loss, g = loss_and_grad(params, tuple(a[idx] for a in batch_src))
                if not (np.isfinite(loss) and np.all(np.isfinite(g))):
                    raise ad.NonFiniteError("non-finite loss or gradient")
                losses.append(loss * len(idx))
                params = opt.step(params, g)
        except (ad.NonFiniteError, FloatingPointError) as e:
            diag = {"epoch": ep, "lr": opt.lr, "error": str(e)}
            if halved:
                raise TrainingDivergedError(f"training diverged twice (epoch {ep}): {e}", diag) from None
            log.warning("divergence at epoch %d (%s); halving learning rate", ep, e)
            halved = True
            params = snapshot
            opt.restore(opt_state)
            opt.lr *= 0.5
            continue
        train_loss = float(np.sum(losses) / len(order))
        val_loss = mean_loss(params, val) if n_val else train_loss
        hist.append(dict(epoch=ep, train_loss=train_loss, val_loss=val_loss if n_val else np.nan, lr=opt.lr,
                         time=time.perf_counter() - t0))
        if on_epoch is not None:
            hist[-1].update(on_epoch(params))
        if val_loss < best[0]:
            best, stale = (val_loss, params.copy()), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    final = best[1]
    # never hand back something worse than the starting point on the training set
    if mean_loss(final, tr) > init_train:
        final = params0.copy()
    return final, hist


def train_update_rule(p: Problem, costs, m0, cfg: MetaTrainConfig = None, on_epoch=None):
    """Returns (trained model, history); history rows are dicts with keys
    epoch, train_loss, val_loss, lr, time (plus ``on_epoch(model)`` extras)."""
    cfg = cfg or MetaTrainConfig()
    U = np.atleast_2d(np.asarray(costs, dtype=float))
    if len(U) < 1:
        raise ValueError("need at least one training sample")
    if m0.d != p.dim:
        raise ValueError(f"model dimension {m0.d} does not match problem dimension {p.dim}")
    m = m0.copy()
    scfg = cfg.solver
    params, hist = fit_loop(
        m0.params, (U,),
        lambda th, b: ad.grad_eval(lambda q: batch_loss(p, m, q, b[0], scfg), th),
        lambda th, b: mean_cost(p, m, th, b[0], scfg) if len(b[0]) else np.nan,
        cfg, None if on_epoch is None else (lambda th: on_epoch(m.copy(th))))
    m.params = params
    return m, hist


def evaluate_update_rule(p: Problem, m, costs, T1, cfg: SolveConfig = None, w_star=None):
    """(mean cost, mean relative regret) of the T1-step solver on ``costs``.

    ``w_star`` (optimal decisions per row) may be passed to avoid oracle calls.
    """
    from .oracles import exact_optimum
    from .solver import relative_regret

    cfg = (cfg or SolveConfig()).replace(T=int(T1))
    U = np.atleast_2d(np.asarray(costs, dtype=float))
    params = m.params if m is not None else None
    L = None if m is None else m.build_L(params, U)
    W = np.asarray(unroll(p, U, cfg, L=None if L is None else np.asarray(L), rhs=_rhs(p, U)))
    if w_star is None:
        w_star = exact_optimum(p, U, rhs=_rhs(p, U)).w
    reg = relative_regret(p, U, W, w_star)
    return float(np.mean(eval_objective(p, U, W))), float(np.mean(reg))


def write_history_csv(path, hist):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "train_loss", "val_loss"])
        for h in hist:
            wr.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"])])
