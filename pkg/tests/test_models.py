import math

import numpy as np
import pytest

from bregman_ate.models import (DimensionError, KernelScore, KernelSpec, MlpSpec, eval_e, eval_f,
                                eval_r, gaussian_kernel, grad_params, kernel_model, linear_model,
                                median_bandwidth, mlp_model, model_from_json, penalty, r_from_f)

K = 3


def make(family, seed=0, bound=None):
    rng = np.random.default_rng(seed)
    if family == "linear":
        return linear_model(K, rng.normal(size=K + 1) * 0.5)
    if family == "kernel":
        anchors = rng.normal(size=(12, K))
        return KernelScore(rng.normal(size=12), anchors, 1.3)
    spec = MlpSpec(hidden_layers=2, width=6, output_bound=bound)
    return mlp_model(K, spec, seed=seed)


FAMILIES = ["linear", "kernel", "mlp"]


def test_linear_zero_params():
    model = linear_model(K)
    x = np.random.default_rng(0).normal(size=(4, K))
    np.testing.assert_array_equal(eval_f(model, x), 0.0)
    np.testing.assert_array_equal(eval_e(model, x), 0.5)
    np.testing.assert_array_equal(eval_r(model, 1, x), 2.0)
    np.testing.assert_array_equal(eval_r(model, 0, x), 2.0)


def test_kernel_single_anchor():
    x = np.array([[0.3, -1.0, 2.0]])
    model = KernelScore([1.0], x, bandwidth=0.7)
    assert eval_f(model, x)[0] == 1.0


def test_zero_mlp():
    model = mlp_model(K)
    model = model.with_params(np.zeros(model.n_params))
    x = np.random.default_rng(1).normal(size=(5, K))
    np.testing.assert_array_equal(eval_f(model, x), 0.0)
    np.testing.assert_array_equal(eval_e(model, x), 0.5)


def test_r_at_log3():
    f = math.log(3)
    assert 1 / r_from_f(1, f) == pytest.approx(0.75, abs=1e-15)
    assert r_from_f(1, f) == pytest.approx(4 / 3, abs=1e-15)
    assert r_from_f(0, f) == pytest.approx(4.0, abs=1e-15)


@pytest.mark.parametrize("family", FAMILIES)
def test_reciprocal_identities(family):
    model = make(family)
    x = np.random.default_rng(2).normal(size=(1000, K))
    r1, r0, e = eval_r(model, 1, x), eval_r(model, 0, x), eval_e(model, x)
    assert np.max(np.abs((r1 - 1) - 1 / (r0 - 1))) <= 1e-12
    assert np.max(np.abs(e * r1 - 1)) <= 1e-12
    assert np.max(np.abs((1 - e) * r0 - 1)) <= 1e-12
    assert np.all((e > 0) & (e < 1))
    assert np.all(r1 > 1) and np.all(r0 > 1)


def test_overflow_safety():
    f = np.linspace(-700, 700, 2001)
    for d in (0, 1):
        r = r_from_f(d, f)
        assert np.all(np.isfinite(r)) and np.all(r >= 1)
    assert np.all(r_from_f(1, f[f < 30]) > 1)


def test_dimension_mismatch():
    for family in FAMILIES:
        with pytest.raises(DimensionError):
            eval_f(make(family), np.zeros((2, K + 1)))


def test_linear_grad_at_zero():
    model = linear_model(2)
    g = grad_params(model, 1, np.array([1.0, 0.0]))
    np.testing.assert_array_equal(g, [-1.0, -0.0, -1.0])


def test_mlp_r0_gradient_at_zero_score():
    model = mlp_model(K, MlpSpec(hidden_layers=2, width=5), seed=3)
    p = np.array(model.params)
    p[-1] = 0.0
    x = np.random.default_rng(3).normal(size=(1, K))
    model = model.with_params(p)
    p[-1] = -model.f(x)[0]
    model = model.with_params(p)
    assert abs(model.f(x)[0]) < 1e-12
    np.testing.assert_allclose(grad_params(model, 0, x)[0], model.grad_f(x)[0], rtol=1e-12)


def central_diff(fun, theta, step=1e-5):
    out = np.empty_like(theta)
    for j in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[j] += step
        dn[j] -= step
        out[j] = (fun(up) - fun(dn)) / (2 * step)
    return out


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("d", [0, 1])
def test_grad_params_matches_finite_differences(family, d):
    worst = 0.0
    for trial in range(20):
        model = make(family, seed=trial, bound=4.0 if trial % 2 else None)
        x = np.random.default_rng(100 + trial).normal(size=K)
        theta = np.array(model.params)
        analytic = grad_params(model, d, x)
        numeric = central_diff(lambda t: model.with_params(t).r(d, x)[0], theta)
        scale = max(np.max(np.abs(numeric)), 1e-8)
        worst = max(worst, np.max(np.abs(analytic - numeric)) / scale)
    assert worst <= 1e-5


def test_penalty_examples():
    for family in FAMILIES:
        model = make(family)
        value, grad = penalty(model.with_params(np.zeros(model.n_params)))
        assert value == 0.0 and not grad.any()
    model = KernelScore([2.0], [[0.0, 0.0, 0.0]], 1.0)
    value, grad = penalty(model)
    assert value == 4.0
    np.testing.assert_array_equal(grad, [4.0])


def test_linear_penalty_skips_intercept():
    value, grad = penalty(linear_model(2, [1.0, 2.0, 5.0]))
    assert value == 5.0
    np.testing.assert_array_equal(grad, [2.0, 4.0, 0.0])


def test_mlp_penalty_skips_biases():
    model = mlp_model(2, MlpSpec(hidden_layers=1, width=2), params=np.arange(9.0))
    # layout: W1 (2x2), b1 (2), W2 (2x1), b2 (1)
    value, _ = penalty(model)
    assert value == sum(v * v for v in (0, 1, 2, 3, 6, 7))


@pytest.mark.parametrize("family", FAMILIES)
def test_penalty_gradient_finite_differences(family):
    model = make(family, seed=4)
    theta = np.array(model.params)
    numeric = central_diff(lambda t: penalty(model.with_params(t))[0], theta, step=1e-4)
    np.testing.assert_allclose(penalty(model)[1], numeric, rtol=1e-7, atol=1e-7)


def test_gram_is_psd():
    rng = np.random.default_rng(6)
    for _ in range(5):
        anchors = rng.normal(size=(40, K))
        gram = gaussian_kernel(anchors, anchors, median_bandwidth(anchors))
        np.testing.assert_allclose(gram, gram.T, atol=0)
        assert np.linalg.eigvalsh(gram).min() >= -1e-8 * np.trace(gram)


def test_kernel_anchor_subsample():
    x = np.random.default_rng(7).normal(size=(50, K))
    model = kernel_model(x, KernelSpec(max_anchors=20), seed=1)
    assert model.anchors.shape == (20, K)
    rows = {tuple(r) for r in x}
    assert all(tuple(a) in rows for a in model.anchors)
    assert kernel_model(x).anchors.shape == (50, K)


def test_output_bound_caps_score():
    model = mlp_model(K, MlpSpec(hidden_layers=1, width=4, output_bound=2.0), seed=0)
    p = np.array(model.params) * 50
    x = np.random.default_rng(0).normal(size=(200, K)) * 10
    assert np.all(np.abs(model.with_params(p).f(x)) <= 2.0)


def test_mlp_init_deterministic():
    a = mlp_model(K, seed=9)
    b = mlp_model(K, seed=9)
    np.testing.assert_array_equal(a.params, b.params)
    assert a.n_params == 3 * 100 + 100 + 2 * (100 * 100 + 100) + 100 + 1


@pytest.mark.parametrize("family", FAMILIES)
def test_json_round_trip_is_bit_exact(family):
    model = make(family, seed=5, bound=3.0)
    again = model_from_json(model.to_json())
    x = np.random.default_rng(8).normal(size=(30, K))
    assert again.family == model.family
    assert eval_r(again, 1, x).tobytes() == eval_r(model, 1, x).tobytes()


def test_params_are_read_only():
    model = linear_model(2)
    with pytest.raises(ValueError):
        model.params[0] = 1.0
