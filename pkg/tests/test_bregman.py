import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bregman_ate.bregman import (EMPIRICAL_BALANCING, GENERATORS, LEAST_SQUARES, UNNORMALIZED_KL,
                                 DomainError, balancing_risk_crossed, balancing_risk_tailored,
                                 conditional_risk, empirical_risk, get_generator,
                                 least_squares_risk, oracle_divergence, risk_value_gradient)
from bregman_ate.data import Dataset, DgpConfig, generate_dgp
from bregman_ate.fit import FitConfig, fit_correction
from bregman_ate.models import linear_model

# excess s = r - 1 kept exactly so the grid can approach the singular point r = 1
EXCESS = np.concatenate([np.logspace(-6, 0, 40), np.logspace(0.4, 6, 40) - 1.0])
GRID = 1.0 + EXCESS


def const_r(a, b):
    return lambda d, x: np.full(np.atleast_2d(x).shape[0], a if d == 1 else b, dtype=float)


@pytest.fixture(scope="module")
def draw():
    return generate_dgp(DgpConfig(n=2000, seed=21))


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_strictly_convex_on_grid(name):
    assert np.all(GENERATORS[name].d2g(GRID, EXCESS) > 0)


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_derivatives_match_finite_differences(name):
    gen = GENERATORS[name]
    # eb is singular at r = 1, so its step has to shrink with the excess
    step = 1e-4 * EXCESS if name == "eb" else 1e-5 * GRID
    up, dn = (GRID + step, EXCESS + step), (GRID - step, EXCESS - step)
    num_dg = (gen.g(*up) - gen.g(*dn)) / (2 * step)
    num_d2g = (gen.dg(*up) - gen.dg(*dn)) / (2 * step)
    np.testing.assert_allclose(gen.dg(GRID, EXCESS), num_dg, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(gen.d2g(GRID, EXCESS), num_d2g, rtol=1e-6)


def test_ls_two_units_example():
    data = Dataset(x=[[0.0], [1.0]], d=[1, 0], y=[3.0, 1.0])
    risk = empirical_risk(LEAST_SQUARES, data, const_r(2.0, 2.0))
    assert risk.value == -4.0
    assert risk.value == pytest.approx(np.mean(risk.per_sample) + risk.penalty, rel=1e-12)


def test_ukl_constant_model_value():
    d = np.array([1, 1, 0, 0, 0])
    data = Dataset(x=np.zeros((5, 1)), d=d, y=np.zeros(5))
    a, b = 2.5, 5 / 3
    value = empirical_risk(UNNORMALIZED_KL, data, const_r(a, b)).value
    assert value == pytest.approx(-math.log(2.5) - math.log(5 / 3) + 1 + 1, abs=1e-14)


def test_penalty_is_added():
    data = Dataset(x=[[0.0], [1.0]], d=[1, 0], y=[3.0, 1.0])
    risk = empirical_risk(LEAST_SQUARES, data, const_r(2.0, 2.0), penalty=0.25)
    assert risk.value == -3.75


def test_domain_error_names_sample():
    data = Dataset(x=[[0.0], [1.0], [2.0]], d=[1, 0, 1], y=[0.0, 0.0, 0.0])
    r = lambda d, x: np.array([2.0, 1.0, 2.0])
    with pytest.raises(DomainError, match="sample 1"):
        empirical_risk(EMPIRICAL_BALANCING, data, r)


def test_risk_value_gradient_examples():
    assert risk_value_gradient(LEAST_SQUARES, 1, 3.0) == 4.0
    assert risk_value_gradient(LEAST_SQUARES, 1, 3.0, arm=0) == -2.0
    with pytest.raises(DomainError):
        risk_value_gradient("eb", 1, 1.0)


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_population_gradient_vanishes_at_constant_optimum(name, draw):
    data, _ = draw
    gen = GENERATORS[name]
    p = data.n1 / data.n
    for arm, r in ((1, 1 / p), (0, 1 / (1 - p))):
        g = risk_value_gradient(gen, data.d, np.full(data.n, r), arm=arm)
        assert abs(g.mean()) <= 3 * g.std() / math.sqrt(data.n)


def test_oracle_divergence_zero_at_truth(draw):
    data, truth = draw
    for gen in GENERATORS.values():
        assert oracle_divergence(gen, truth, data, truth.r0) == pytest.approx(0.0, abs=1e-12)


def test_ls_pointwise_divergence():
    assert LEAST_SQUARES.divergence(3.0, 2.0) == 1.0


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_identity_with_conditional_risk(name, draw):
    # divergence minus conditional risk does not depend on the candidate
    data, truth = draw
    rng = np.random.default_rng(5)
    diffs = []
    for _ in range(10):
        cut = rng.normal()
        lo1, hi1, lo0, hi0 = 1.2 + rng.random(4) * 5
        r = lambda d, x, c=cut, v=(lo1, hi1, lo0, hi0): np.where(
            x[:, 0] < c, v[0] if d == 1 else v[2], v[1] if d == 1 else v[3])
        diffs.append(oracle_divergence(name, truth, data, r) - conditional_risk(name, truth, data, r))
    assert max(diffs) - min(diffs) <= 1e-10


def test_ls_two_code_paths_agree():
    rng = np.random.default_rng(2)
    for _ in range(5):
        n = 200
        data = Dataset(x=rng.normal(size=(n, 2)), d=(rng.random(n) < 0.4).astype(int),
                       y=rng.normal(size=n))
        r1, r0 = 1 + rng.exponential(size=n), 1 + rng.exponential(size=n)
        a = empirical_risk(LEAST_SQUARES, data, (r1, r0)).value
        b = least_squares_risk(data, r1, r0)
        assert a == pytest.approx(b, rel=1e-12)


def _mse_risk(truth, data, a, b):
    # E[(h0 - h)^2] with the indicator integrated out
    e = truth.e0(data.x)
    return np.mean(e * (truth.r0(1, data.x) - a) ** 2 + (1 - e) * (truth.r0(0, data.x) - b) ** 2)


@pytest.mark.parametrize("seed", range(3))
def test_surrogate_argmin_equals_mse_argmin(seed):
    data, truth = generate_dgp(DgpConfig(n=1000, seed=100 + seed))
    grid = np.round(np.arange(1.1, 6.0 + 1e-9, 0.1), 10)
    e = truth.e0(data.x)
    # conditional LS risk for constants is separable: mean(e) a^2 - 2a per arm
    sur = np.add.outer(e.mean() * grid ** 2 - 2 * grid, (1 - e).mean() * grid ** 2 - 2 * grid)
    mse = np.array([[_mse_risk(truth, data, a, b) for b in grid] for a in grid])
    assert np.unravel_index(sur.argmin(), sur.shape) == np.unravel_index(mse.argmin(), mse.shape)
    # the separable shortcut matches the generic risk at a probe point
    probe = conditional_risk(LEAST_SQUARES, truth, data, const_r(grid[7], grid[11]))
    assert probe == pytest.approx(sur[7, 11], rel=1e-12)


@pytest.mark.parametrize("name", ["ls", "ukl"])
def test_constant_closed_form(name):
    d = np.array([1, 1, 0, 0, 0])
    data = Dataset(x=np.zeros((5, 1)), d=d, y=np.arange(5.0))
    corr = fit_correction(data, FitConfig(generator=name, intercept_only=True, lam=0.0))
    assert corr.r(1, data.x)[0] == pytest.approx(2.5, abs=1e-6)
    assert corr.r(0, data.x)[0] == pytest.approx(5 / 3, abs=1e-6)


def test_silverman_balance_at_ukl_optimum(draw):
    data, _ = draw
    corr = fit_correction(data, FitConfig(generator="ukl", intercept_only=True, lam=0.0,
                                          tol=1e-12))
    d1 = data.d.astype(float)
    assert np.mean(d1 * corr.r(1, data.x)) == pytest.approx(1.0, abs=1e-8)
    assert np.mean((1 - d1) * corr.r(0, data.x)) == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-12, 12), min_size=2, max_size=30), st.integers(0, 2**31))
def test_balancing_forms_agree(fs, seed):
    f = np.array(fs)
    n = f.size
    d = np.random.default_rng(seed).integers(0, 2, n)
    d[0], d[1] = 1, 0
    data = Dataset(x=f[:, None], d=d, y=np.zeros(n))
    r1, r0 = 1 + np.exp(-f), 1 + np.exp(f)
    a = balancing_risk_tailored(data, r1, r0)
    b = balancing_risk_crossed(data, r1, r0)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-10)
    # f(x) = x through a linear score, so the generic path sees the exact excess
    c = empirical_risk(EMPIRICAL_BALANCING, data, linear_model(1, [1.0, 0.0])).value
    assert c == pytest.approx(b, rel=1e-10, abs=1e-10)


def test_get_generator():
    assert get_generator("LS") is LEAST_SQUARES
    assert get_generator(UNNORMALIZED_KL) is UNNORMALIZED_KL
    with pytest.raises(ValueError):
        get_generator("nope")
