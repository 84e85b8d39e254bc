"""Desk-scale experiments behind ``projectnet run`` / ``projectnet bench``.

Each experiment takes a fully merged config dict and returns a Result:
per-epoch metric rows, a comparison table, extra CSV tables and
checkpoints.  Writing files is left to the CLI.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import datagen
from .end2end import (E2EConfig, decide, decision_cost, fit_mse, nofeature_descent, surrogate_decisions,
                      train_forecaster, train_oracle_in_loop, train_two_stage, two_stage_cost,
                      two_stage_loss)
from .metatrain import MetaTrainConfig, evaluate_update_rule, train_update_rule
from .oracles import (exact_optimum, knn_saa, newsvendor_saa, predict_then_optimize, second_stage_value,
                      two_stage_lp)
from .problems import build_problem, eval_objective
from .psdmap import UpdateRuleModel
from .solver import SolveConfig, projectnet_solve, pgd_solve, unroll

# metrics.csv columns, in order (see README)
METRIC_COLUMNS = ["phase", "epoch", "train_loss", "val_loss", "test_cost", "test_regret", "wall_time"]

_SOLVER = {"eta": 0.1, "gamma": 0.1, "T": 5, "k": 10, "smoothing": 0.0}
_META = {"mode": "none", "form": "symmetric", "u_parts": "D", "init_D": -2.0, "hidden": 32, "epochs": 10,
         "lr": 0.01, "batch_size": 32, "optimizer": "adam", "augment": 0, "standardize": True}
_TRAIN = {"epochs": 50, "lr": 0.01, "batch_size": 32, "optimizer": "adam", "arch": "affine", "width": 200,
          "residual": False, "val_fraction": 0.0, "patience": 15, "warm_start": False}
_MSE = {"arch": "affine", "width": 200, "residual": False, "epochs": 200, "lr": 0.01}

DEFAULTS = {
    "matching-regret": {
        "problem": {"n": 10},
        "data": {"N": 300, "low": 0.0, "high": 1.0},
        "solver": dict(_SOLVER),
        "meta": dict(_META, mode="linear", augment=800),
        "eval": {"T1": [5, 10, 15, 20, 25, 30, 35]},
    },
    "newsvendor-e2e": {
        "problem": {"K": 20, "C": None, "cap_fraction": 0.6, "h": 1.0, "b": 2.0},
        "data": {"N": 500, "p": 5, "hidden": 16, "scale": 5.0},
        "solver": dict(_SOLVER, eta=0.5, T=20, smoothing=0.3),
        "meta": dict(_META),
        "train": dict(_TRAIN, epochs=40, warm_start=True),
        "mse": dict(_MSE),
        "eval": {"knn": 25, "k": 50},
    },
    "newsvendor-nofeature": {
        "problem": {"K": 20, "capacities": [10.0, 20.0, 30.0], "h": 1.0, "b": 2.0},
        "data": {"N": 500, "p": 5, "hidden": 16, "scale": 5.0},
        "descent": {"T": 3000, "lr": None, "k": 50},
    },
    "newsvendor-quadratic": {
        "problem": {"support": [1.0, 2.0, 3.0, 4.0, 5.0], "c0": 1.0, "q0": 0.1, "cb": 10.0, "qb": 2.0, "ch": 2.0,
                    "qh": 0.5},
        "data": {"N": 1500, "p": 5, "hidden": 16},
        "solver": dict(_SOLVER, eta=0.05, T=30),
        "meta": dict(_META),
        "train": dict(_TRAIN, epochs=40),
        "mse": dict(_MSE),
        "eval": {"k": 50},
    },
    "crossfulfill-2stage": {
        "problem": {"n": 3, "first_cost": 0.2, "b": 3.0, "h": 0.5},
        "data": {"N": 300, "p": 5},
        "solver": dict(_SOLVER, T=20),
        "meta": dict(_META),
        "train": dict(_TRAIN, epochs=150),
        "mse": dict(_MSE),
        "eval": {},
    },
    "electricity-e2e": {
        "problem": {"horizon": 24, "r": 0.4, "gamma_s": 50.0, "gamma_e": 0.5},
        "data": {"days": 120, "stride": 24, "csv": None, "transforms": ["sinusoidal-yearly", "weekend-onehot", "temp"]},
        "solver": dict(_SOLVER, T=10, smoothing=0.1),
        "meta": dict(_META, mode="constant", epochs=5),
        "train": dict(_TRAIN, epochs=30, lr=0.001, arch="mlp", width=200, residual=True),
        "mse": dict(_MSE, arch="mlp", residual=True, epochs=100),
        "eval": {"k": 50},
        "bench": {"sizes": [24, 48, 72], "epochs": 2, "samples": 32, "arch": "affine"},
    },
    "shortestpath-e2e": {
        "problem": {"side": 5},
        "data": {"N": 300, "p": 8},
        "solver": dict(_SOLVER, T=20),
        "meta": dict(_META),
        "train": dict(_TRAIN, epochs=30, warm_start=True),
        "mse": dict(_MSE),
        "eval": {"k": 50},
    },
    "toy-viz": {
        "problem": {},
        "data": {"N": 300, "M": 40, "paths": 3},
        "solver": dict(_SOLVER, T=40, eta=0.14),
        "meta": dict(_META, mode="linear", u_parts="all", epochs=20, lr=0.05, standardize=False),
        "eval": {"k": 50, "vertex_tol": 0.05},
    },
}
TOP_KEYS = {"experiment", "seed", "out", "threads"}


class ConfigError(ValueError):
    pass


@dataclass
class Result:
    metrics: list = field(default_factory=list)
    table: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)  # name -> (columns, rows)
    checks: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)  # name -> object with to_dict()


# ------------------------------------------------------------------ config


def merge_config(cfg: dict):
    """Defaults for the experiment overlaid with ``cfg``; raises ConfigError
    naming every unknown key."""
    errs = config_errors(cfg)
    if errs:
        raise ConfigError("; ".join(errs))
    exp = cfg["experiment"]
    out = copy.deepcopy(DEFAULTS[exp])
    for k, v in cfg.items():
        if k in TOP_KEYS:
            out[k] = v
        else:
            out[k].update(v)
    out.setdefault("seed", 0)
    out.setdefault("threads", 1)
    out.setdefault("out", f"runs/{exp}")
    return out


def config_errors(cfg) -> list:
    errs = []
    if not isinstance(cfg, dict):
        return ["config must be a JSON object"]
    exp = cfg.get("experiment")
    if exp not in DEFAULTS:
        errs.append(f"experiment: unknown id {exp!r} (choose from {sorted(DEFAULTS)})")
        return errs
    d = DEFAULTS[exp]
    for k, v in cfg.items():
        if k in TOP_KEYS:
            continue
        if k not in d:
            errs.append(f"unknown key {k!r}")
            continue
        if not isinstance(v, dict):
            errs.append(f"{k}: expected an object")
            continue
        for kk in v:
            if kk not in d[k]:
                errs.append(f"unknown key '{k}.{kk}'")
    if "seed" in cfg and not isinstance(cfg["seed"], int):
        errs.append("seed: expected an integer")
    if "threads" in cfg and (not isinstance(cfg["threads"], int) or cfg["threads"] < 1):
        errs.append("threads: expected a positive integer")
    return errs


def _scfg(c, threads=1, **kw):
    d = dict(c["solver"])
    d.update(kw)
    return SolveConfig(threads=threads, **d)


def _e2e_cfg(c, scfg, output="identity"):
    t = c["train"]
    return E2EConfig(epochs=t["epochs"], lr=t["lr"], batch_size=t["batch_size"], optimizer=t["optimizer"],
                     solver=scfg, seed=c["seed"], val_fraction=t["val_fraction"], patience=t["patience"],
                     arch=t["arch"], width=t["width"], residual=t["residual"], output=output)


def _mse_kw(c, output="identity"):
    m = c["mse"]
    return dict(arch=m["arch"], width=m["width"], residual=m["residual"], output=output, epochs=m["epochs"],
                lr=m["lr"], seed=c["seed"])


def _meta_model(c, p, U, scfg, res: Result, augment=None, on_epoch=None):
    """Train the update-rule model on the samples U (None when mode is none)."""
    mc = c["meta"]
    if mc["mode"] == "none":
        return None
    m0 = UpdateRuleModel(p.dim, U.shape[1], mode=mc["mode"], form=mc["form"], init_D=mc["init_D"],
                         hidden=mc["hidden"], seed=c["seed"], u_parts=mc["u_parts"])
    if mc["standardize"]:
        m0.fit_input_scaling(U)
    cfg = MetaTrainConfig(epochs=mc["epochs"], lr=mc["lr"], batch_size=mc["batch_size"], optimizer=mc["optimizer"],
                          solver=scfg, seed=c["seed"], augment=augment)
    m, hist = train_update_rule(p, U, m0, cfg, on_epoch=on_epoch)
    _log(res, "meta", hist)
    res.checkpoints["update_rule"] = m
    return m


def _log(res: Result, phase, hist):
    for h in hist:
        res.metrics.append({"phase": phase, "epoch": h["epoch"], "train_loss": h["train_loss"],
                            "val_loss": h["val_loss"], "test_cost": h.get("test_cost", np.nan),
                            "test_regret": h.get("test_regret", np.nan), "wall_time": h["time"]})


def _per_epoch(hist):
    t = [h["time"] for h in hist if h["epoch"] > 0]
    return float(np.mean(t)) if t else 0.0


def _phase_time(res: Result, phase):
    return _per_epoch([{"epoch": h["epoch"], "time": h["wall_time"]} for h in res.metrics if h["phase"] == phase])


def _regret(cost, opt):
    return float(np.mean((cost - opt) / np.abs(opt)))


def _row(method, cost, per_epoch=None, **kw):
    r = {"method": method, "mean_cost": float(np.mean(cost)), "per_epoch_time": per_epoch}
    r.update(kw)
    return r


# -------------------------------------------------------------- experiments


def matching_regret(c) -> Result:
    res = Result()
    n = c["problem"]["n"]
    p = build_problem("matching", n=n)
    dc = c["data"]
    ds = datagen.gen_cost_vectors(dc["N"], n * n, seed=c["seed"], low=dc["low"], high=dc["high"])
    Utr, Ute = ds.part("train")[1], ds.part("test")[1]
    scfg = _scfg(c, c["threads"])
    w_star = exact_optimum(p, Ute).w
    g_star = eval_objective(p, Ute, w_star)
    aug = None
    if c["meta"]["augment"]:
        A = int(c["meta"]["augment"])
        aug = lambda rng: rng.uniform(dc["low"], dc["high"], size=(A, n * n))

    def on_epoch(m):
        cost = eval_objective(p, Ute, np.asarray(unroll(p, Ute, scfg, L=np.asarray(m.build_L(m.params, Ute)))))
        return {"test_cost": float(np.mean(cost)), "test_regret": _regret(cost, g_star)}

    m = _meta_model(c, p, Utr, scfg, res, augment=aug, on_epoch=on_epoch)
    curve = []
    for T1 in c["eval"]["T1"]:
        pg = evaluate_update_rule(p, None, Ute, T1, scfg, w_star=w_star)
        pn = evaluate_update_rule(p, m, Ute, T1, scfg, w_star=w_star) if m is not None else pg
        curve.append([T1, pg[1], pn[1], 100.0 * (pg[1] - pn[1]) / pg[1]])
    res.tables["regret_curve"] = (["T1", "pgd_regret", "projectnet_regret", "improvement_pct"], curve)
    T0 = scfg.T
    at0 = next((r for r in curve if r[0] == T0), None)
    pg0 = evaluate_update_rule(p, None, Ute, T0, scfg, w_star=w_star)
    pn0 = evaluate_update_rule(p, m, Ute, T0, scfg, w_star=w_star) if m is not None else pg0
    meta_time = _phase_time(res, "meta")
    res.table = [_row("PGD", pg0[0], None, T=T0, mean_regret=pg0[1]),
                 _row("ProjectNet", pn0[0], meta_time, T=T0, mean_regret=pn0[1])]
    regs = [r[2] for r in curve]
    res.checks = {"projectnet_below_pgd_at_T0": pn0[1] < pg0[1],
                  "regret_nonincreasing_in_T1": bool(np.all(np.diff(regs) <= 1e-12)),
                  "improvement_pct_at_T0": at0[3] if at0 else None}
    return res


def _newsvendor_data(c):
    dc = c["data"]
    pc = c["problem"]
    return datagen.gen_newsvendor(N=dc["N"], p=dc["p"], K=pc["K"], seed=c["seed"], hidden=dc["hidden"],
                                  scale=dc["scale"])


def newsvendor_e2e(c) -> Result:
    res = Result()
    pc = c["problem"]
    ds = _newsvendor_data(c)
    Xtr, Utr = ds.part("train")
    Xte, Ute = ds.part("test")
    C = pc["C"] if pc["C"] is not None else pc["cap_fraction"] * float(Utr.sum(axis=1).mean())
    p = build_problem("capacitated-newsvendor", K=pc["K"], C=C, h=pc["h"], b=pc["b"])
    scfg = _scfg(c, c["threads"])
    ev = scfg.replace(k=c["eval"]["k"])
    res.table.append(_timed_row("SAA", lambda: np.broadcast_to(newsvendor_saa(Utr, C, pc["h"], pc["b"]).w,
                                                                Ute.shape), p, Ute))
    kk = min(c["eval"]["knn"], len(Xtr))
    res.table.append(_timed_row("SAA (KNN)", lambda: np.stack([knn_saa(Xtr, Utr, x, kk, C, pc["h"], pc["b"]).w
                                                                for x in Xte]), p, Ute))
    t0 = time.perf_counter()
    f_mse, dec = predict_then_optimize(Xtr, Utr, p, _mse_kw(c))
    W = dec(Xte)
    res.table.append(_row("Predict-then-optimize", decision_cost(p, Ute, W), None,
                          train_time=time.perf_counter() - t0))
    _projectnet_rows(c, res, p, Xtr, Utr, Xte, Ute, scfg, ev, f0=f_mse if c["train"]["warm_start"] else None)
    res.checkpoints["mse_forecaster"] = f_mse
    res.checks = {"e2e_below_pto": res.table[-1]["mean_cost"] < res.table[2]["mean_cost"]}
    return res


def _timed_row(name, fn, p, Ute):
    t0 = time.perf_counter()
    W = fn()
    return _row(name, decision_cost(p, Ute, W), None, train_time=time.perf_counter() - t0)


def _projectnet_rows(c, res, p, Xtr, Utr, Xte, Ute, scfg, ev, f0=None, output="identity", opt_test=None):
    """Meta-train (optional), end-to-end train, then append the approximate
    and exact-decision rows; the last row is the exact-decision one."""
    m = _meta_model(c, p, Utr, scfg, res)

    def on_epoch(f):
        F = f.predict(Xte)
        cost = decision_cost(p, Ute, np.asarray(surrogate_decisions(p, m, F, scfg)))
        out = {"test_cost": float(np.mean(cost))}
        if opt_test is not None:
            out["test_regret"] = _regret(cost, opt_test)
        return out

    t0 = time.perf_counter()
    f, hist = train_forecaster(Xtr, Utr, p, m, _e2e_cfg(c, scfg, output), f0=f0, on_epoch=on_epoch)
    train_time = time.perf_counter() - t0
    _log(res, "e2e", hist)
    res.checkpoints["forecaster"] = f
    Wa = decide(f, p, Xte, exact=False, m=m, cfg=ev)
    Wx = decide(f, p, Xte, exact=True)
    ca, cx = decision_cost(p, Ute, Wa), decision_cost(p, Ute, Wx)
    extra = {}
    if opt_test is not None:
        extra = {"mean_regret_approx": _regret(ca, opt_test), "mean_regret_exact": _regret(cx, opt_test)}
    res.table.append(_row("ProjectNet (approximate decisions)", ca, _per_epoch(hist), train_time=train_time))
    res.table.append(_row("ProjectNet", cx, _per_epoch(hist), train_time=train_time, **extra))
    return f, m


def newsvendor_nofeature(c) -> Result:
    res = Result()
    pc = c["problem"]
    dc = c["descent"]
    U = _newsvendor_data(c).U
    rows = []
    for C in pc["capacities"]:
        p = build_problem("capacitated-newsvendor", K=pc["K"], C=C, h=pc["h"], b=pc["b"])
        saa = newsvendor_saa(U, C, pc["h"], pc["b"])
        t0 = time.perf_counter()
        w, _ = nofeature_descent(p, U, T=dc["T"], lr=dc["lr"], k=dc["k"])
        gd = float(np.mean(eval_objective(p, U, w)))
        gap = (gd - saa.objective) / abs(saa.objective)
        rows.append([C, saa.objective, gd, gap, float(p.violation(w)), time.perf_counter() - t0])
        res.table.append({"capacity": C, "SAA": saa.objective, "approx_projection_descent": gd, "gap": gap})
    res.tables["nofeature"] = (["capacity", "saa_cost", "descent_cost", "gap", "violation", "time"], rows)
    res.checks = {"max_abs_gap": max(abs(r[3]) for r in rows)}
    return res


def newsvendor_quadratic(c) -> Result:
    res = Result()
    pc = dict(c["problem"])
    dc = c["data"]
    ds = datagen.gen_quad_newsvendor(N=dc["N"], p=dc["p"], support=pc["support"], seed=c["seed"],
                                     hidden=dc["hidden"])
    p = build_problem("quadratic-newsvendor", **pc)
    Xtr, Utr = ds.part("train")
    Xte, Ute = ds.part("test")
    scfg = _scfg(c, c["threads"])
    ev = scfg.replace(k=c["eval"]["k"])
    t0 = time.perf_counter()
    f_mse, dec = predict_then_optimize(Xtr, Utr, p, _mse_kw(c, "softmax"))
    res.table.append(_row("Predict-then-optimize", decision_cost(p, Ute, dec(Xte)), None,
                          train_time=time.perf_counter() - t0))
    _projectnet_rows(c, res, p, Xtr, Utr, Xte, Ute, scfg, ev, output="softmax",
                     f0=f_mse if c["train"]["warm_start"] else None)
    res.checkpoints["mse_forecaster"] = f_mse
    res.checks = {"e2e_below_pto": res.table[-1]["mean_cost"] < res.table[0]["mean_cost"]}
    return res


def crossfulfill_2stage(c) -> Result:
    res = Result()
    pc = c["problem"]
    n = pc["n"]
    ds = datagen.gen_crossfulfill(N=c["data"]["N"], p=c["data"]["p"], m=n, seed=c["seed"])
    second = build_problem("crossfulfill-second-stage", n=n, m=n, b=pc["b"], h=pc["h"], seed=c["seed"])
    first = build_problem("crossfulfill-first-stage", n=n)
    cost = np.full(n, pc["first_cost"])
    Xtr, Dtr = ds.part("train")
    Xte, Dte = ds.part("test")
    scfg = _scfg(c, c["threads"])
    t0 = time.perf_counter()
    f = fit_mse(Xtr, Dtr, **_mse_kw(c))
    Wp = np.stack([two_stage_lp(cost, second, np.maximum(d, 0.0)).w for d in f.predict(Xte)])
    res.table.append(_row("Predict-then-optimize", two_stage_cost(second, Wp, Dte, cost), None,
                          train_time=time.perf_counter() - t0))
    m = None
    if c["meta"]["mode"] != "none":
        # second-stage samples (w, d): allocations scattered around the demand
        rng = datagen.make_rng(c["seed"])
        R = np.concatenate([Dtr * rng.uniform(0.5, 1.5, Dtr.shape), Dtr], axis=1)
        m = _meta_model(c, second, R, scfg, res)

    def on_epoch(rule):
        # surrogate two-stage cost on the test split (no oracle calls while training)
        v = two_stage_loss(first, second, m, rule, rule.params, Xte, Dte, cost, scfg)
        return {"test_cost": float(ad.value(v))}

    t0 = time.perf_counter()
    rule, hist = train_two_stage(Xtr, Dtr, first, second, m, _e2e_cfg(c, scfg), first_cost=cost,
                                 on_epoch=on_epoch)
    train_time = time.perf_counter() - t0
    _log(res, "e2e", hist)
    We = rule.decide(Xte)
    ce = two_stage_cost(second, We, Dte, cost)
    res.table.append(_row("ProjectNet", ce, _per_epoch(hist), train_time=train_time))
    perfect = np.array([two_stage_lp(cost, second, d).objective for d in Dte])
    res.table.append(_row("Perfect information", perfect, None))
    # surrogate quality on the learned allocations
    R = np.concatenate([We, Dte], axis=1)
    v = np.asarray(unroll(second, R, scfg, rhs=R))
    approx = np.asarray(eval_objective(second, R, v))
    exact = np.array([second_stage_value(second, w, d).objective for w, d in zip(We, Dte)])
    res.checkpoints["decision_rule"] = rule
    res.checks = {"e2e_below_pto": res.table[1]["mean_cost"] < res.table[0]["mean_cost"],
                  "second_stage_rel_gap": float((approx.mean() - exact.mean()) / abs(exact.mean()))}
    return res


def _electricity_data(c, horizon=None):
    dc = c["data"]
    H = horizon or c["problem"]["horizon"]
    if dc["csv"]:
        return datagen.load_series_csv(dc["csv"], horizon=H, stride=dc["stride"], transforms=tuple(dc["transforms"]))
    return datagen.gen_electricity(days=dc["days"], horizon=H, seed=c["seed"], stride=dc["stride"])


def electricity_e2e(c) -> Result:
    res = Result()
    pc = c["problem"]
    ds = _electricity_data(c)
    p = build_problem("electricity", **pc)
    Xtr, Utr = ds.part("train")
    Xte, Ute = ds.part("test")
    scfg = _scfg(c, c["threads"])
    ev = scfg.replace(k=c["eval"]["k"])
    t0 = time.perf_counter()
    f_mse, dec = predict_then_optimize(Xtr, Utr, p, _mse_kw(c))
    res.table.append(_row("Predict-then-optimize", decision_cost(p, Ute, dec(Xte)), None,
                          train_time=time.perf_counter() - t0))
    _projectnet_rows(c, res, p, Xtr, Utr, Xte, Ute, scfg, ev, f0=f_mse if c["train"]["warm_start"] else None)
    res.checkpoints["mse_forecaster"] = f_mse
    res.checks = {"e2e_below_pto": res.table[-1]["mean_cost"] < res.table[0]["mean_cost"]}
    return res


def shortestpath_e2e(c) -> Result:
    res = Result()
    side = c["problem"]["side"]
    ds = datagen.gen_grid_costs(N=c["data"]["N"], side=side, p=c["data"]["p"], seed=c["seed"])
    p = build_problem("shortest-path", side=side)
    Xtr, Utr = ds.part("train")
    Xte, Ute = ds.part("test")
    scfg = _scfg(c, c["threads"])
    ev = scfg.replace(k=c["eval"]["k"])
    opt = np.asarray(exact_optimum(p, Ute).objective)
    t0 = time.perf_counter()
    f_mse, dec = predict_then_optimize(Xtr, Utr, p, _mse_kw(c))
    cp = decision_cost(p, Ute, dec(Xte))
    res.table.append(_row("Predict-then-optimize", cp, None, train_time=time.perf_counter() - t0,
                          mean_regret_exact=_regret(cp, opt)))
    _projectnet_rows(c, res, p, Xtr, Utr, Xte, Ute, scfg, ev, f0=f_mse if c["train"]["warm_start"] else None,
                     opt_test=opt)
    res.checkpoints["mse_forecaster"] = f_mse
    res.checks = {"e2e_below_pto": res.table[-1]["mean_cost"] < res.table[0]["mean_cost"]}
    return res


def toy_viz(c) -> Result:
    res = Result()
    p = build_problem("toy-polytope")
    V = p.meta["vertices"]
    dc = c["data"]
    scfg = _scfg(c, c["threads"])
    ev = scfg.replace(k=c["eval"]["k"])
    U = datagen.gen_cost_vectors(dc["N"], 2, seed=c["seed"]).U
    m = _meta_model(c, p, U, scfg, res)
    Uc = np.asarray(datagen.gen_circle_costs(dc["M"]))
    W = projectnet_solve(p, m, Uc, ev).w if m is not None else pgd_solve(p, Uc, ev).w
    dist = np.min(np.linalg.norm(W[:, None] - V[None], axis=2), axis=1)
    jumps = np.r_[0.0, np.linalg.norm(np.diff(W, axis=0), axis=1)]
    res.tables["circle"] = (["m", "u1", "u2", "w1", "w2", "vertex_distance", "jump"],
                            [[i, *Uc[i], *W[i], dist[i], jumps[i]] for i in range(len(Uc))])
    near = float(np.mean(dist <= c["eval"]["vertex_tol"]))
    # iterate paths on the 3-simplex, plain PGD vs a ProjectNet trained there
    ps = build_problem("simplex", d=3)
    Us = datagen.gen_cost_vectors(dc["N"], 3, seed=c["seed"] + 1).U
    ms = _meta_model(c, ps, Us, scfg, Result())
    rows = []
    for i, u in enumerate(datagen.gen_cost_vectors(dc["paths"], 3, seed=c["seed"] + 2).U):
        for name, model in (("pgd", None), ("projectnet", ms)):
            rep = projectnet_solve(ps, model, u, ev.replace(record_trajectory=True))
            for t, w in enumerate(rep.trajectory):
                rows.append([name, i, t, *w, rep.objective[t]])
    res.tables["simplex_paths"] = (["method", "sample", "t", "w1", "w2", "w3", "objective"], rows)
    res.table = [{"method": "ProjectNet" if m is not None else "PGD", "near_vertex_fraction": near,
                  "max_jump": float(jumps.max())}]
    res.checks = {"near_vertex_fraction": near, "max_jump": float(jumps.max())}
    return res


EXPERIMENTS = {
    "matching-regret": matching_regret,
    "newsvendor-e2e": newsvendor_e2e,
    "newsvendor-nofeature": newsvendor_nofeature,
    "newsvendor-quadratic": newsvendor_quadratic,
    "crossfulfill-2stage": crossfulfill_2stage,
    "electricity-e2e": electricity_e2e,
    "shortestpath-e2e": shortestpath_e2e,
    "toy-viz": toy_viz,
}


# -------------------------------------------------------------------- bench


def loglog_slope(sizes, times):
    sizes, times = np.asarray(sizes, dtype=float), np.asarray(times, dtype=float)
    if len(sizes) < 2:
        return float("nan")
    return float(np.polyfit(np.log(sizes), np.log(times), 1)[0])


def bench(c):
    """Per-epoch training time, ProjectNet vs the oracle-in-the-loop
    pseudo-baseline, over the horizon sweep.  Returns (rows, slopes)."""
    bc = c["bench"]
    rows = []
    for H in bc["sizes"]:
        ds = _electricity_data(c, horizon=H)
        n = min(bc["samples"], len(ds.U))
        X, U = ds.X[:n], ds.U[:n]
        p = build_problem("electricity", **dict(c["problem"], horizon=H))
        scfg = _scfg(c, c["threads"])
        m = None
        if c["meta"]["mode"] != "none":
            m = UpdateRuleModel(H, H, mode=c["meta"]["mode"], form=c["meta"]["form"], seed=c["seed"],
                                u_parts=c["meta"]["u_parts"])
        cfg = E2EConfig(epochs=bc["epochs"], solver=scfg, val_fraction=0.0, arch=bc["arch"], seed=c["seed"])
        _, h1 = train_forecaster(X, U, p, m, cfg)
        _, h2 = train_oracle_in_loop(X, U, p, cfg)
        rows.append([H, n, _per_epoch(h1), _per_epoch(h2)])
    slopes = {"projectnet": loglog_slope([r[0] for r in rows], [r[2] for r in rows]),
              "oracle_in_loop": loglog_slope([r[0] for r in rows], [r[3] for r in rows])}
    return rows, slopes
