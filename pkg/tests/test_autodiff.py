import numpy as np
import pytest

from projectnet import autodiff as ad
from projectnet.problems import build_problem


def test_square_value_and_gradient():
    v, g = ad.grad_eval(lambda p: ad.vsum(ad.square(p)), np.array([3.0]))
    assert v == 9.0
    assert np.array_equal(g, [6.0])


def test_constant_function_has_zero_gradient():
    v, g = ad.grad_eval(lambda p: 4.0, np.ones(3))
    assert v == 4.0
    assert np.array_equal(g, np.zeros(3))


def test_two_layer_relu_network_matches_finite_differences(rng):
    X = rng.standard_normal((20, 4))
    y = rng.standard_normal(20)
    slots = ad.ParamSlots()
    slots.add("W1", (4, 8))
    slots.add("W2", (8,))

    def loss(p):
        h = ad.relu(ad.matmul(X, slots.view(p, "W1")))
        return ad.mean(ad.square(ad.matvec(h, slots.view(p, "W2")) - y))

    assert ad.finite_diff_check(loss, rng.standard_normal(slots.size)) <= 1e-4


def test_finite_diff_check_is_exact_on_quadratics(rng):
    A = rng.standard_normal((5, 5))
    Q = A @ A.T
    assert ad.finite_diff_check(lambda p: ad.dot(p, ad.matvec(Q, p)), rng.standard_normal(5)) <= 1e-8


def test_finite_diff_check_skips_kinks():
    # |p| at 0 has no derivative; the component must be excluded, not failed
    f = lambda p: ad.vsum(ad.relu(p) + ad.relu(-p))
    assert ad.finite_diff_check(f, np.array([0.0, 1.0])) <= 1e-8


def test_electricity_objective_gradient(rng):
    p = build_problem("electricity", horizon=6)
    u = rng.uniform(1, 3, 6)
    w = u + rng.uniform(-1, 1, 6)
    assert ad.finite_diff_check(lambda x: p.objective.value(u, x), w) <= 1e-4


def test_nonpositive_step_rejected():
    with pytest.raises(ValueError):
        ad.finite_diff_check(lambda p: ad.vsum(p), np.ones(2), step=0.0)


def test_unregistered_primitive_fails_at_construction():
    with pytest.raises(ad.UnknownPrimitiveError):
        ad.apply("no-such-op", np.ones(2))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_forward_raises():
    with pytest.raises(ad.NonFiniteError):
        ad.grad_eval(lambda p: ad.vsum(ad.log(p)), np.array([-1.0]))


SQ = lambda p: ad.reshape(p, (3, 3))
UNARY = {
    "neg": ad.neg, "square": ad.square, "relu": ad.relu, "sigmoid": ad.sigmoid, "softplus": ad.softplus,
    "exp": ad.exp, "log": lambda p: ad.log(ad.exp(p)), "sqrt": lambda p: ad.sqrt(ad.exp(p)),
    "reciprocal": lambda p: ad.reciprocal(ad.exp(p)), "softmax": ad.softmax, "transpose": lambda p: ad.transpose(SQ(p)),
    "matmul": lambda p: ad.matmul(SQ(p), SQ(p)), "matvec": lambda p: ad.matvec(SQ(p), p[:3]),
    "dot": lambda p: ad.dot(p, p), "getitem": lambda p: ad.getitem(p, slice(2, 5)),
    "take": lambda p: ad.take(p, np.array([0, 0, 4])), "concat": lambda p: ad.concat([p, ad.square(p)]),
    "diag": lambda p: ad.diag(p[:3]), "mul": lambda p: p * p, "sub": lambda p: p - ad.exp(p),
    "solve": lambda p: ad.solve(SQ(p) + 5 * np.eye(3), p[:3]),
    "solve_triangular": lambda p: ad.solve_triangular(SQ(p) * np.triu(np.ones((3, 3))) + 5 * np.eye(3), p[:3]),
    "qr_q": lambda p: ad.qr_q(SQ(p) + 3 * np.eye(3)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_each_primitive_matches_finite_differences(name, rng):
    f = UNARY[name]
    c = rng.standard_normal(np.shape(ad.value(f(np.zeros(9)))))
    p = rng.uniform(0.2, 1.0, 9) * rng.choice([-1, 1], 9)
    assert ad.finite_diff_check(lambda x: ad.vsum(f(x) * c), p, step=1e-6) <= 1e-6


def test_batched_matmul_with_vector_operand(rng):
    A = rng.standard_normal((4, 3, 3))
    f = lambda p: ad.vsum(ad.square(ad.matmul(A, p)))
    assert ad.finite_diff_check(f, rng.standard_normal(3)) <= 1e-6


def test_param_slots_views():
    s = ad.ParamSlots()
    s.add("a", (2, 2))
    s.add("b", (3,))
    p = np.arange(7.0)
    assert s.size == 7 and "b" in s
    assert np.array_equal(s.view(p, "a"), [[0, 1], [2, 3]])
    assert np.array_equal(p[s.slice("b")], [4, 5, 6])
