import numpy as np
import pytest

from projectnet.datagen import gen_crossfulfill
from projectnet.end2end import (DecisionRule, E2EConfig, Forecaster, InfeasibleSecondStageError, decide,
                                decision_cost, fit_mse, nofeature_descent, train_forecaster, train_two_stage,
                                two_stage_cost, write_history_csv)
from projectnet.oracles import newsvendor_saa, second_stage_value
from projectnet.problems import build_problem, eval_objective
from projectnet.solver import SolveConfig, unroll


def test_constant_labels_give_zero_cost(rng):
    p = build_problem("capacitated-newsvendor", K=2)
    X = rng.standard_normal((60, 3))
    U = np.tile([2.0, 3.0], (60, 1))
    f0 = Forecaster(3, 2, seed=1)  # starts away from the answer
    cfg = E2EConfig(epochs=100, lr=0.05, solver=SolveConfig(T=20, eta=0.5, gamma=0.0, smoothing=0.3))
    f, hist = train_forecaster(X, U, p, cfg=cfg, f0=f0)
    # the decision trained through is the surrogate one
    W = np.array([decide(f, p, x, exact=False, cfg=cfg.solver) for x in X])
    assert decision_cost(p, U, W).mean() < 0.05
    assert hist[-1]["train_loss"] <= hist[0]["train_loss"]


def test_featureless_quantile(rng):
    p = build_problem("capacitated-newsvendor", K=1, h=1.0, b=2.0)
    D = rng.choice([1.0, 2.0, 3.0, 4.0, 5.0, 6.0], size=(120, 1))
    X = np.zeros((120, 0))
    cfg = E2EConfig(epochs=80, lr=0.1, batch_size=120, val_fraction=0.0,
                    solver=SolveConfig(T=60, eta=0.05, gamma=0.0, smoothing=0.1))
    f, _ = train_forecaster(X, D, p, cfg=cfg)
    order = float(np.asarray(unroll(p, f.predict(np.zeros(0)), cfg.solver))[0])
    lo, hi = np.quantile(D, 2 / 3, method="inverted_cdf"), np.quantile(D, 2 / 3, method="higher")
    assert lo - 0.05 * 5 <= order <= hi + 0.05 * 5


def test_decide_vertex_and_approximate(rng):
    p = build_problem("toy-polytope")
    f = Forecaster(1, 2)
    f.params[:] = 0.0
    f.params[f.slots.slice("b")] = [1.0, 5.0]  # cost favours w2 = 0
    assert np.allclose(decide(f, p, np.zeros(1)), [1.0, 0.0], atol=1e-7)
    w = decide(f, p, np.zeros(1), exact=False, cfg=SolveConfig(T=200, eta=0.05, gamma=0.0, k=50))
    assert p.violation(w) <= 1e-3
    u = f.predict(np.zeros(1))
    assert eval_objective(p, u, w) - eval_objective(p, u, [1.0, 0.0]) <= 0.05


def test_fit_mse_recovers_linear_map(rng):
    X = rng.standard_normal((200, 3))
    B = rng.standard_normal((2, 3))
    f = fit_mse(X, X @ B.T + 1.0, epochs=300, lr=0.05, patience=300)
    assert np.allclose(f.predict(X), X @ B.T + 1.0, atol=1e-2)


def test_nofeature_descent_matches_saa(rng):
    D = rng.uniform(0, 10, (100, 2))
    p = build_problem("capacitated-newsvendor", K=2, C=8.0)
    w, _ = nofeature_descent(p, D, T=2000, k=50)
    best = newsvendor_saa(D, C=8.0).objective
    assert eval_objective(p, D, np.tile(w, (100, 1))).mean() <= best * 1.005


def crossfulfill():
    ds = gen_crossfulfill(N=80, p=4, m=2, seed=3)
    first = build_problem("crossfulfill-first-stage", n=2)
    second = build_problem("crossfulfill-second-stage", n=2, m=2)
    return ds, first, second


def test_zero_demand_learns_zero_allocation():
    ds, first, second = crossfulfill()
    D = np.zeros_like(ds.U)
    cfg = E2EConfig(epochs=60, lr=0.2, solver=SolveConfig(T=10))
    rule, hist = train_two_stage(ds.X, D, first, second, cfg=cfg, first_cost=0.2, rule0=DecisionRule(
        Forecaster(ds.X.shape[1], 2, seed=2).set_output_bias([1.0, 1.0]), first))
    assert hist[-1]["train_loss"] < 1e-6
    assert rule.decide(ds.X).mean() < 0.05


def test_two_stage_training_lowers_cost():
    ds, first, second = crossfulfill()
    cfg = E2EConfig(epochs=20, lr=0.05, solver=SolveConfig(T=20))
    rule, hist = train_two_stage(ds.X, ds.U, first, second, cfg=cfg, first_cost=0.2)
    assert hist[-1]["train_loss"] <= hist[0]["train_loss"]
    c = two_stage_cost(second, rule.decide(ds.X), ds.U, 0.2)
    assert np.all(np.isfinite(c)) and c.shape == (80,)


def test_second_stage_surrogate_close_to_lp(rng):
    second = build_problem("crossfulfill-second-stage", n=3, m=3)
    w = np.array([1.0, 0.5, 2.0])
    D = rng.uniform(0, 2, (20, 3))
    R = np.concatenate([np.tile(w, (20, 1)), D], axis=1)
    v = np.asarray(unroll(second, R, SolveConfig(T=400, eta=0.05, gamma=0.0, k=20), rhs=R))
    approx = np.asarray(eval_objective(second, R, v)).mean()
    exact = np.mean([second_stage_value(second, w, d).objective for d in D])
    assert abs(approx - exact) <= 0.05 * abs(exact)


def test_negative_demand_is_infeasible():
    ds, first, second = crossfulfill()
    D = ds.U.copy()
    D[3, 0] = -1.0
    with pytest.raises(InfeasibleSecondStageError) as e:
        train_two_stage(ds.X, D, first, second, cfg=E2EConfig(epochs=1))
    assert e.value.instance["d"][0] == -1.0


def test_data_checks(rng):
    p = build_problem("capacitated-newsvendor", K=2)
    with pytest.raises(ValueError):
        train_forecaster(rng.standard_normal((5, 2)), rng.random((4, 2)), p)
    with pytest.raises(ValueError):
        Forecaster(2, 1, arch="cnn")
    with pytest.raises(ValueError):
        E2EConfig(epochs=0)


@pytest.mark.parametrize("arch,residual,output", [("affine", False, "identity"), ("mlp", True, "softmax"),
                                                  ("mlp", False, "relu")])
def test_checkpoint_round_trip(tmp_path, rng, arch, residual, output):
    f = Forecaster(3, 2, arch=arch, width=5, residual=residual, output=output, seed=4)
    f.fit_input_scaling(rng.standard_normal((10, 3)))
    f.save(tmp_path / "f.json")
    g = Forecaster.load(tmp_path / "f.json")
    X = rng.standard_normal((4, 3))
    assert np.array_equal(f.predict(X), g.predict(X))


def test_decision_rule_round_trip(tmp_path, rng):
    first = build_problem("crossfulfill-first-stage", n=2)
    rule = DecisionRule(Forecaster(3, 2, seed=5), first)
    rule.save(tmp_path / "r.json")
    back = Forecaster.load(tmp_path / "r.json")
    X = rng.standard_normal((4, 3))
    assert np.array_equal(back.decide(X), rule.decide(X))
    assert np.all(rule.decide(X) >= 0)


def test_history_csv(tmp_path):
    hist = [dict(epoch=0, train_loss=2.0, val_loss=1.0, time=0.0), dict(epoch=1, train_loss=1.0, val_loss=0.5, time=0.1)]
    write_history_csv(tmp_path / "h.csv", hist, {"test_cost": [3.0, 2.0]})
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,wall_time,test_cost"
    assert lines[2] == "1,1.0,0.5,0.1,2.0"
