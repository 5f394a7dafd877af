import numpy as np
import pytest

from bregman_ate.data import (DataError, Dataset, DgpConfig, OutcomeModel, SyntheticTruth,
                              generate_dgp, h_from_propensity, load_csv, oracle_h, write_csv)


@pytest.fixture
def five_row_csv(tmp_path):
    path = tmp_path / "five.csv"
    path.write_text("y,d,x1,x2\n"
                    "1.5,1,0.1,-2\n"
                    "2.25,1,0.3,1e-3\n"
                    "-0.5,0,1.7,0.0\n"
                    "3.0,0,-0.2,4.5\n"
                    "0.125,0,2.0,-1.25\n")
    return path


def test_load_three_rows(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("y,d,x1\n1,1,0.5\n2,0,0.25\n3,1,-1\n")
    data = load_csv(path)
    assert (data.n, data.k) == (3, 1)
    np.testing.assert_array_equal(data.y, [1, 2, 3])
    np.testing.assert_array_equal(data.d, [1, 0, 1])
    np.testing.assert_array_equal(data.x[:, 0], [0.5, 0.25, -1])


def test_column_order_is_free(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("x2,d,x1,y\n1,1,2,3\n4,0,5,6\n")
    data = load_csv(path)
    np.testing.assert_array_equal(data.x, [[2, 1], [5, 4]])
    np.testing.assert_array_equal(data.y, [3, 6])


@pytest.mark.parametrize("body, message", [
    ("y,d,x1\n1,2,0\n2,0,1\n", "invalid treatment value"),
    ("y,x1\n1,0\n2,1\n", "missing required columns"),
    ("y,d,x1,x3\n1,1,0,0\n2,0,1,1\n", "x1..xK"),
    ("y,d,x1\n1,1,abc\n2,0,1\n", "non-numeric"),
    ("y,d,x1\n1,1,\n2,0,1\n", "non-numeric"),
    ("y,d,x1\n1,1,0\n", "at least 2 rows"),
    ("y,d,x1\n1,1,0\n2,1,1\n", "both treatment groups"),
    ("y,d,x1\n1,1,0,5\n2,0,1\n", "cells"),
])
def test_load_rejects(tmp_path, body, message):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DataError, match=message):
        load_csv(path)


def test_round_trip(five_row_csv, tmp_path):
    data = load_csv(five_row_csv)
    out = tmp_path / "out.csv"
    write_csv(data, out)
    again = load_csv(out)
    np.testing.assert_array_equal(again.x, data.x)
    np.testing.assert_array_equal(again.d, data.d)
    np.testing.assert_array_equal(again.y, data.y)
    write_csv(again, tmp_path / "out2.csv")
    assert (tmp_path / "out2.csv").read_bytes() == out.read_bytes()


def test_dataset_is_immutable():
    data = Dataset(x=np.zeros((2, 1)), d=[1, 0], y=[1.0, 2.0])
    with pytest.raises(ValueError):
        data.y[0] = 3.0
    with pytest.raises(Exception):
        data.n = 5


def test_dataset_rejects_non_finite():
    with pytest.raises(DataError):
        Dataset(x=[[0.0], [np.nan]], d=[1, 0], y=[1.0, 2.0])


def test_dgp_deterministic():
    cfg = DgpConfig(k=3, n=3000, seed=11)
    a, ta = generate_dgp(cfg)
    b, tb = generate_dgp(cfg)
    for name in ("x", "d", "y"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    np.testing.assert_array_equal(ta.beta_out, tb.beta_out)


def test_dgp_seeds_differ():
    a, _ = generate_dgp(DgpConfig(seed=1, n=100))
    b, _ = generate_dgp(DgpConfig(seed=2, n=100))
    assert not np.array_equal(a.x, b.x)


def test_zero_coefficients_give_half_treated():
    data, truth = generate_dgp(DgpConfig(n=100_000, seed=3, coef_scale=0.0))
    assert truth.tau0 == 5.0
    assert abs(data.d.mean() - 0.5) <= 0.01


@pytest.mark.parametrize("model", list(OutcomeModel))
def test_noiseless_effect_is_five(model):
    data, truth = generate_dgp(DgpConfig(n=500, seed=4, noise_sd=0.0, outcome_model=model))
    np.testing.assert_allclose(truth.mu0(1, data.x) - truth.mu0(0, data.x), 5.0, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(data.y, truth.mu0(data.d, data.x))


def test_model_formulas():
    truth = SyntheticTruth(alpha=np.array([1.0, 0, 0]), beta=np.array([0, 2.0, 0]),
                           gamma=np.array([0, 0, 3.0]), beta_out=np.array([1.0, -1.0, 0.5]),
                           outcome_model=OutcomeModel.MODEL2, dgp_seed=0)
    x = np.array([[0.5, -1.0, 2.0]])
    # 1*0.5 + 2*1 + 3*0.5*2
    assert truth.score(x)[0] == pytest.approx(5.5)
    lin = 0.5 + 1.0 + 1.0
    expected = lin + lin ** 2 + 3 * np.sin(0.5) + 1.1
    assert truth.mu0(0, x)[0] == pytest.approx(expected)
    assert truth.mu0(1, x)[0] == pytest.approx(expected + 5.0)


def test_fixed_coefficients_across_seeds():
    _, a = generate_dgp(DgpConfig(seed=1, n=50, coef_seed=99))
    _, b = generate_dgp(DgpConfig(seed=2, n=50, coef_seed=99))
    np.testing.assert_array_equal(a.alpha, b.alpha)
    np.testing.assert_array_equal(a.beta_out, b.beta_out)


def test_propensity_strictly_inside_unit_interval():
    for seed in range(5):
        data, truth = generate_dgp(DgpConfig(n=2000, seed=seed, k=10))
        e = truth.e0(data.x)
        assert np.all((e > 0) & (e < 1))


def test_treated_fraction_tracks_mean_propensity():
    n = 100_000
    data, truth = generate_dgp(DgpConfig(n=n, seed=5, coef_seed=7))
    assert abs(data.d.mean() - truth.e0(data.x).mean()) <= 3 / np.sqrt(n)


def test_oracle_h_values():
    assert h_from_propensity(0.5, 1) == 2.0
    assert h_from_propensity(0.5, 0) == -2.0
    assert h_from_propensity(0.25, 0) == pytest.approx(-4 / 3)
    with pytest.raises(ValueError):
        h_from_propensity(1.0, 1)


def test_oracle_h_matches_truth():
    data, truth = generate_dgp(DgpConfig(n=20, seed=2))
    for i in range(5):
        e = truth.e0(data.x[i:i + 1])[0]
        assert oracle_h(truth, 1, data.x[i]) == pytest.approx(1 / e)
        assert oracle_h(truth, 0, data.x[i]) == pytest.approx(-1 / (1 - e))


def test_oracle_h_moment_identities():
    # E[1[D=1] h(1,X)] = 1 and E[1[D=0] (-h(0,X))] = 1; mild coefficients keep weights bounded
    n = 200_000
    data, truth = generate_dgp(DgpConfig(n=n, seed=8, coef_scale=0.05, coef_seed=3))
    d1 = data.d.astype(float)
    for vals in (d1 * truth.h0(1, data.x), (1 - d1) * -truth.h0(0, data.x)):
        se = vals.std() / np.sqrt(n)
        assert abs(vals.mean() - 1.0) <= 3 * se


def test_config_validation():
    with pytest.raises(ValueError):
        DgpConfig(k=2)
    with pytest.raises(ValueError):
        DgpConfig(n=5)
