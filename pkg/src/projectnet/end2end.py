"""End-to-end learning through a frozen ProjectNet.

A forecaster f(x) feeds the unrolled solver; the training loss is the true
decision cost g_u(w_hat(f(x))), differentiated through every iteration.  No
exact oracle is touched inside the gradient loop.  The two-stage trainer
learns a decision rule q(x) whose second-stage cost is itself a ProjectNet
solve with right-hand side (q(x), d).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSlots
from .metatrain import fit_loop
from .problems import Problem, eval_objective
from .projection import dykstra
from .solver import SolveConfig, polish, unroll

ARCHS = ("affine", "mlp")
OUTPUTS = ("identity", "softmax", "relu")


class InfeasibleSecondStageError(ValueError):
    """Relatively complete recourse fails: some first-stage decision leaves the
    second stage empty.  ``instance`` holds the offending data."""

    def __init__(self, msg, instance=None):
        super().__init__(msg)
        self.instance = instance or {}


class Forecaster:
    """Affine map or 2-hidden-layer max(., 0) network, optional residual
    input->output connection, optional softmax output.

    Inputs are standardized with a shift/scale fitted on the training
    features (stored with the checkpoint).
    """

    def __init__(self, p_in, d_out, arch="affine", width=200, residual=False, output="identity",
                 seed=0, params=None, x_shift=None, x_scale=None):
        if arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}")
        if output not in OUTPUTS:
            raise ValueError(f"output must be one of {OUTPUTS}")
        self.p_in, self.d_out = int(p_in), int(d_out)
        if self.d_out < 1 or self.p_in < 0:
            raise ValueError("need p_in >= 0 and d_out >= 1")
        self.arch, self.width, self.residual, self.output = arch, int(width), bool(residual), output
        self.seed = int(seed)
        self.x_shift = np.zeros(self.p_in) if x_shift is None else np.asarray(x_shift, dtype=float).copy()
        self.x_scale = np.ones(self.p_in) if x_scale is None else np.asarray(x_scale, dtype=float).copy()
        s = self.slots = ParamSlots()
        if arch == "affine":
            s.add("W", (self.d_out, self.p_in))
            s.add("b", (self.d_out,))
        else:
            s.add("W1", (self.width, self.p_in))
            s.add("b1", (self.width,))
            s.add("W2", (self.width, self.width))
            s.add("b2", (self.width,))
            s.add("W3", (self.d_out, self.width))
            s.add("b3", (self.d_out,))
        if self.residual:
            s.add("R", (self.d_out, self.p_in))
        self.params = self.init_params() if params is None else np.asarray(params, dtype=float).copy()
        if self.params.size != s.size:
            raise ValueError(f"expected {s.size} parameters, got {self.params.size}")

    @property
    def n_params(self):
        return self.slots.size

    def init_params(self):
        rng = np.random.default_rng(self.seed)
        p = np.zeros(self.slots.size)
        for name, (sl, shape) in self.slots.slots.items():
            if name.startswith("W"):
                fan_in = max(shape[1], 1)
                gain = np.sqrt(2.0) if name in ("W1", "W2") else 1.0
                p[sl] = gain * rng.standard_normal(sl.stop - sl.start) / np.sqrt(fan_in)
        return p

    def fit_input_scaling(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if len(X) and self.p_in:
            self.x_shift = X.mean(axis=0)
            sd = X.std(axis=0)
            self.x_scale = np.where(sd > 1e-12, sd, 1.0)
        return self

    def set_output_bias(self, target):
        """Start the output at ``target`` (the mean training label); for a
        softmax output ``target`` is a probability vector."""
        target = np.asarray(target, dtype=float).reshape(self.d_out)
        if self.output == "softmax":
            target = np.log(np.clip(target, 1e-6, None))
        elif self.output == "relu":
            target = np.maximum(target, 1e-3)
        name = "b" if self.arch == "affine" else "b3"
        self.params[self.slots.slice(name)] = target
        return self

    def forward(self, params, X):
        """Tape-compatible forward pass; X is data (never a Var)."""
        X = (np.atleast_2d(np.asarray(X, dtype=float)) - self.x_shift) / self.x_scale
        v = lambda n: self.slots.view(params, n)
        if self.arch == "affine":
            y = ad.matmul(X, ad.transpose(v("W"))) + v("b")
        else:
            h = ad.relu(ad.matmul(X, ad.transpose(v("W1"))) + v("b1"))
            h = ad.relu(ad.matmul(h, ad.transpose(v("W2"))) + v("b2"))
            y = ad.matmul(h, ad.transpose(v("W3"))) + v("b3")
        if self.residual:
            y = y + ad.matmul(X, ad.transpose(v("R")))
        if self.output == "softmax":
            y = ad.softmax(y)
        elif self.output == "relu":
            y = ad.relu(y)
        return y

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim < 2
        out = np.asarray(self.forward(self.params, X.reshape(1, self.p_in) if single else X))
        return out[0] if single else out

    # ---------------------------------------------------------- checkpoint

    def to_dict(self):
        return {"type": "forecaster", "arch": self.arch, "p_in": self.p_in, "d_out": self.d_out,
                "width": self.width, "residual": self.residual, "output": self.output,
                "x_shift": self.x_shift.tolist(), "x_scale": self.x_scale.tolist(),
                "params": self.params.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["p_in"], d["d_out"], arch=d["arch"], width=d["width"], residual=d["residual"],
                   output=d["output"], params=np.asarray(d["params"]), x_shift=d["x_shift"], x_scale=d["x_scale"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        if d.get("type") == "decision-rule":
            return DecisionRule.from_dict(d)
        return cls.from_dict(d)

    def copy(self, params=None):
        return Forecaster(self.p_in, self.d_out, self.arch, self.width, self.residual, self.output, self.seed,
                          params=self.params if params is None else params,
                          x_shift=self.x_shift, x_scale=self.x_scale)


class DecisionRule:
    """First-stage decision q(x) = projection of a network output onto the
    first-stage feasible set (k cycles while training, polished on output)."""

    def __init__(self, net: Forecaster, first: Problem, k=10):
        if net.d_out != first.dim:
            raise ValueError("network output size must equal the first-stage dimension")
        self.net, self.first, self.k = net, first, int(k)

    @property
    def params(self):
        return self.net.params

    def forward(self, params, X):
        return dykstra(self.first.plan(self.k), self.net.forward(params, X))

    def decide(self, X):
        w = polish(self.first, np.asarray(self.forward(self.net.params, np.atleast_2d(X))))
        return w[0] if np.ndim(X) == 1 else w

    def to_dict(self):
        return {"type": "decision-rule", "net": self.net.to_dict(), "first": self.first.to_dict(), "k": self.k}

    @classmethod
    def from_dict(cls, d):
        return cls(Forecaster.from_dict(d["net"]), Problem.from_dict(d["first"]), d["k"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


@dataclass
class E2EConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-2
    optimizer: str = "adam"
    momentum: float = 0.9
    solver: SolveConfig = field(default_factory=lambda: SolveConfig(T=10, k=10))
    seed: int = 0
    val_fraction: float = 0.1
    patience: int = 15
    arch: str = "affine"
    width: int = 200
    residual: bool = False
    output: str = "identity"
    # not used here; kept so the shared loop can read it
    augment: object = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if isinstance(self.solver, dict):
            self.solver = SolveConfig(**self.solver)

    def to_dict(self):
        d = asdict(self)
        d.pop("augment")
        return d


def _new_forecaster(X, target, d_out, cfg: E2EConfig):
    X = np.asarray(X, dtype=float)
    f = Forecaster(X.shape[1], d_out, cfg.arch, cfg.width, cfg.residual, cfg.output, seed=cfg.seed)
    f.fit_input_scaling(X)
    return f.set_output_bias(target)


def _check_data(X, U):
    X = np.asarray(X, dtype=float)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if X.ndim == 1:
        X = X.reshape(len(U), -1)
    if len(X) != len(U):
        raise ValueError(f"{len(X)} feature rows but {len(U)} label rows")
    if len(U) < 1:
        raise ValueError("dataset is empty")
    return X, U


# ----------------------------------------------------------- MSE baseline


def fit_mse(X, U, arch="affine", width=200, residual=False, output="identity", epochs=200, lr=1e-2,
            batch_size=64, seed=0, patience=30, f0=None):
    """Forecaster fitted by mean squared error (for a softmax output this is
    the Brier score against one-hot labels).  Returns the Forecaster."""
    X, U = _check_data(X, U)
    cfg = E2EConfig(epochs=epochs, lr=lr, batch_size=batch_size, seed=seed, patience=patience, arch=arch,
                    width=width, residual=residual, output=output)
    f = f0.copy() if f0 is not None else _new_forecaster(X, U.mean(axis=0), U.shape[1], cfg)

    def loss(th, b):
        r = f.forward(th, b[0]) - b[1]
        return ad.mean(ad.vsum(ad.square(r), axis=-1))

    params, _ = fit_loop(f.params, (X, U), lambda th, b: ad.grad_eval(lambda q: loss(q, b), th),
                         lambda th, b: float(ad.value(loss(th, b))) if len(b[0]) else np.nan, cfg)
    f.params = params
    return f


# ------------------------------------------------------------- end-to-end


def surrogate_decisions(p: Problem, m, forecast, scfg: SolveConfig):
    """w_hat(forecast) through the frozen ProjectNet (tape-compatible)."""
    L = None
    if m is not None and m.mode != "zero":
        L = m.build_L(m.params, forecast)
    return unroll(p, forecast, scfg, L=L)


def e2e_loss(p: Problem, m, f: Forecaster, params, X, U, scfg: SolveConfig):
    w = surrogate_decisions(p, m, f.forward(params, X), scfg)
    return ad.mean(p.objective.value(U, w))


def train_forecaster(X, U, p: Problem, m=None, cfg: E2EConfig = None, f0: Forecaster = None, on_epoch=None):
    """Fit f by the decision cost through the frozen ProjectNet ``m`` (None or
    a zero-mode model gives plain unrolled projected gradient descent).

    ``on_epoch(forecaster)`` may add columns to each history row.  Returns
    (forecaster, history).
    """
    cfg = cfg or E2EConfig()
    X, U = _check_data(X, U)
    if m is not None and m.d != p.dim:
        raise ValueError("update-rule model does not match the problem dimension")
    f = f0.copy() if f0 is not None else _new_forecaster(X, U.mean(axis=0), p.u_dim, cfg)
    scfg = cfg.solver

    def mean_loss(th, b):
        if not len(b[0]):
            return np.nan
        return float(ad.value(e2e_loss(p, m, f, th, b[0], b[1], scfg)))

    params, hist = fit_loop(
        f.params, (X, U),
        lambda th, b: ad.grad_eval(lambda q: e2e_loss(p, m, f, q, b[0], b[1], scfg), th),
        mean_loss, cfg, None if on_epoch is None else (lambda th: on_epoch(f.copy(th))))
    f.params = params
    return f, hist


def train_oracle_in_loop(X, U, p: Problem, cfg: E2EConfig = None, f0: Forecaster = None):
    """Timing pseudo-baseline: every gradient step solves the exact oracle at
    each forecast and back-propagates grad_w g_u(w*) through an identity
    Jacobian dw*/du.  It stands in for solver-in-the-loop layers in runtime
    comparisons; its decisions are not meant to be competitive.
    """
    from .oracles import exact_optimum

    cfg = cfg or E2EConfig()
    X, U = _check_data(X, U)
    f = f0.copy() if f0 is not None else _new_forecaster(X, U.mean(axis=0), p.u_dim, cfg)

    def lg(th, b):
        F = np.asarray(f.forward(th, b[0]))
        Ws = np.atleast_2d(exact_optimum(p, F).w)
        G = np.asarray(p.objective.grad(b[1], Ws))
        val = float(np.mean(eval_objective(p, b[1], Ws)))
        _, g = ad.grad_eval(lambda q: ad.mean(ad.vsum(f.forward(q, b[0]) * G, axis=-1)), th)
        return val, g

    def ml(th, b):
        if not len(b[0]):
            return np.nan
        F = np.asarray(f.forward(th, b[0]))
        return float(np.mean(eval_objective(p, b[1], np.atleast_2d(exact_optimum(p, F).w))))

    params, hist = fit_loop(f.params, (X, U), lg, ml, cfg)
    f.params = params
    return f, hist


def decide(f: Forecaster, p: Problem, x, exact=True, m=None, cfg: SolveConfig = None):
    """Decision for features ``x``: the oracle on the forecast (exact=True) or
    the ProjectNet approximation with T1 = cfg.T and evaluation-grade k."""
    u = f.predict(np.asarray(x, dtype=float))
    if exact:
        from .oracles import exact_optimum

        return exact_optimum(p, u).w
    cfg = cfg or SolveConfig(T=35, k=50)
    return np.asarray(surrogate_decisions(p, m, u, cfg))


def decision_cost(p: Problem, U, W):
    return np.asarray(eval_objective(p, U, W), dtype=float)


# ------------------------------------------------------- featureless descent


def nofeature_descent(p: Problem, U, T=3000, lr=None, k=10, smoothing=0.0):
    """Single decision for all samples: minimize mean_n g_{u^n}(P(w)) over a
    free w by gradient descent through the k-cycle approximate projection P.

    Full-batch subgradient steps lr0 / sqrt(1 + t/100) with iterate
    averaging over the second half; returns (P(w_avg), history of losses).
    lr0 defaults to a tenth of the demand range.  Starts from P(mean u):
    at w = 0 the nonnegativity kink would give a zero subgradient.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    plan = p.plan(k)
    lr = 0.1 * (np.ptp(U) or 1.0) if lr is None else float(lr)

    def loss(w):
        x = dykstra(plan, w)
        return ad.mean(p.objective.value(U, x))

    w = plan.run(U.mean(axis=0))[0]
    acc, n_acc, hist = np.zeros(p.dim), 0, []
    for t in range(T):
        v, g = ad.grad_eval(loss, w)
        hist.append(v)
        n = np.linalg.norm(g)
        if n == 0:
            break
        w = w - lr / np.sqrt(1.0 + t / 100.0) * g / max(n, 1.0)
        if t >= T // 2:
            acc += w
            n_acc += 1
    if n_acc:
        w = acc / n_acc
    return plan.run(w)[0], hist


# ----------------------------------------------------------------- two stage


def _stack_rhs(w, D):
    return ad.concat([w, np.asarray(D, dtype=float)])


def two_stage_loss(first: Problem, second: Problem, m, rule: DecisionRule, params, X, D, first_cost,
                   scfg: SolveConfig):
    """mean over rows of c.q(x) + d(w, u).v_hat with v_hat the second-stage
    ProjectNet solve whose constraint right-hand side is (q(x), d)."""
    w = rule.forward(params, X)
    rhs = _stack_rhs(w, D)
    L = None
    if m is not None and m.mode != "zero":
        L = m.build_L(m.params, rhs)
    v = unroll(second, rhs, scfg, L=L, rhs=rhs)
    return ad.mean(ad.matvec(w, np.asarray(first_cost, dtype=float)) + second.objective.value(rhs, v))


def _check_recourse(first, second, W, D, tol=1e-6):
    rhs = np.concatenate([W, D], axis=1)
    v = polish(second, np.zeros((len(rhs), second.dim)), rhs=rhs)
    viol = np.asarray([second.violation(vi, ri) for vi, ri in zip(v, rhs)])
    bad = np.flatnonzero(viol > tol)
    if bad.size:
        i = int(bad[0])
        raise InfeasibleSecondStageError(
            f"second stage infeasible for sample {i} (violation {viol[i]:.3g})",
            {"w": W[i].tolist(), "d": D[i].tolist(), "second": second.to_dict()})


def train_two_stage(X, D, first: Problem, second: Problem, m=None, cfg: E2EConfig = None, first_cost=None,
                    rule0: DecisionRule = None, on_epoch=None):
    """Learn q(x) minimizing the empirical two-stage cost.  Returns
    (DecisionRule, history)."""
    cfg = cfg or E2EConfig()
    X, D = _check_data(X, D)
    if second.rhs_set is None:
        raise ValueError("second stage needs a data-dependent right-hand side")
    if np.any(D < 0):
        raise InfeasibleSecondStageError("negative demand", {"d": D[np.any(D < 0, axis=1)][0].tolist()})
    c = np.zeros(first.dim) if first_cost is None else np.broadcast_to(np.asarray(first_cost, dtype=float),
                                                                        (first.dim,))
    scfg = cfg.solver
    if rule0 is None:
        # start from allocating the mean demand (same shape as the first stage when n == m)
        target = D.mean(axis=0) if D.shape[1] == first.dim else np.full(first.dim, D.mean())
        net = _new_forecaster(X, target, first.dim, cfg)
        rule = DecisionRule(net, first, k=scfg.k)
    else:
        rule = DecisionRule(rule0.net.copy(), first, k=rule0.k)
    _check_recourse(first, second, rule.decide(X), D)

    def lg(th, b):
        return ad.grad_eval(lambda q: two_stage_loss(first, second, m, rule, q, b[0], b[1], c, scfg), th)

    def ml(th, b):
        if not len(b[0]):
            return np.nan
        return float(ad.value(two_stage_loss(first, second, m, rule, th, b[0], b[1], c, scfg)))

    cb = None
    if on_epoch is not None:
        cb = lambda th: on_epoch(DecisionRule(rule.net.copy(th), first, rule.k))
    params, hist = fit_loop(rule.net.params, (X, D), lg, ml, cfg, cb)
    rule.net.params = params
    return rule, hist


def two_stage_cost(second: Problem, W, D, first_cost):
    """Exact realized cost c.w + V(w, d) per row (oracle; evaluation only)."""
    from .oracles import second_stage_value

    W = np.atleast_2d(W)
    D = np.atleast_2d(D)
    c = np.asarray(first_cost, dtype=float)
    return np.array([float(w @ np.broadcast_to(c, w.shape)) + second_stage_value(second, w, d).objective
                     for w, d in zip(W, D)])


# -------------------------------------------------------------------- output


def write_history_csv(path, hist, extra=None):
    """Columns: epoch, train_loss, val_loss, wall_time, then any ``extra``
    per-epoch columns (dict name -> list)."""
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "train_loss", "val_loss", "wall_time"] + list(extra))
        for i, h in enumerate(hist):
            wr.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"]), repr(h["time"])]
                        + [repr(v[i]) for v in extra.values()])

