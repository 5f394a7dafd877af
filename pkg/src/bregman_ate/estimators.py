"""Treatment-effect estimators built on a fitted bias-correction term."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .data import Dataset, SyntheticTruth
from .fit import Nuisances

Z95 = 1.959963984540054


@dataclass(frozen=True)
class BalanceReport:
    treated_weight_mean: float
    control_weight_mean: float
    oracle_l2: Optional[float] = None


@dataclass(frozen=True)
class EstimateReport:
    estimand: str
    method: str
    tau_hat: float
    variance_hat: float
    ci95: tuple
    n: int
    diagnostics: Optional[BalanceReport] = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ci95"] = list(self.ci95)
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _mean(values: np.ndarray) -> float:
    return math.fsum(np.asarray(values).tolist()) / len(values)


def _report(estimand, method, tau, influence, n, diagnostics=None) -> EstimateReport:
    """Report with variance = mean squared influence (per observation)."""
    var = _mean(influence * influence)
    half = Z95 * math.sqrt(var / n)
    return EstimateReport(estimand, method, tau, var, (tau - half, tau + half), n, diagnostics)


def estimate_dm(data: Dataset, mu: Callable) -> EstimateReport:
    diff = np.asarray(mu(1, data.x), dtype=float) - np.asarray(mu(0, data.x), dtype=float)
    tau = _mean(diff)
    return _report("ATE", "DM", tau, diff - tau, data.n)


def estimate_ipw(data: Dataset, corr, diagnostics: Optional[BalanceReport] = None) -> EstimateReport:
    """IPW with weights h(D_i, X_i); ``corr`` is a fitted correction or an array of h values."""
    h = _h_values(data, corr)
    terms = h * data.y
    tau = _mean(terms)
    return _report("ATE", "IPW", tau, terms - tau, data.n, diagnostics)


def _h_values(data, corr) -> np.ndarray:
    if hasattr(corr, "h"):
        return np.asarray(corr.h(data.d, data.x), dtype=float)
    if callable(corr):
        return np.asarray(corr(data.d, data.x), dtype=float)
    return np.asarray(corr, dtype=float)


def estimate_aipw(data: Dataset, nuisances: Nuisances,
                  diagnostics: Optional[BalanceReport] = None) -> EstimateReport:
    mu_obs = np.where(data.d == 1, nuisances.mu1, nuisances.mu0)
    psi = nuisances.h * (data.y - mu_obs) + nuisances.mu1 - nuisances.mu0
    tau = _mean(psi)
    return _report("ATE", "AIPW", tau, psi - tau, data.n, diagnostics)


def estimate_att(data: Dataset, w, mu0_hat: Optional[Callable] = None,
                 method: str = "AIPW") -> EstimateReport:
    """ATT by IPW or AIPW with control weights ``w(x)`` (an evaluable or array).

    The variance accounts for estimating the treated share by n1/n.
    """
    method = method.upper()
    if method not in ("IPW", "AIPW"):
        raise ValueError("method must be IPW or AIPW")
    n1 = data.n1
    if n1 == 0:
        raise ValueError("ATT needs at least one treated unit")
    pi = n1 / data.n
    wx = np.asarray(w(data.x) if callable(w) else w, dtype=float)
    d1 = data.d.astype(float)
    d0 = 1.0 - d1
    if method == "AIPW":
        if mu0_hat is None:
            raise ValueError("AIPW-ATT needs a control outcome regression")
        resid = data.y - np.asarray(mu0_hat(0, data.x), dtype=float)
    else:
        resid = data.y
    terms = (d1 / pi - wx * d0 / pi) * resid
    tau = _mean(terms)
    influence = terms - d1 * tau / pi
    return _report("ATT", method, tau, influence, data.n)


def diagnostics(data: Dataset, corr, truth: Optional[SyntheticTruth] = None) -> BalanceReport:
    """Weight means per arm and, with ``truth``, the e0-weighted L2 error of r."""
    r1 = np.asarray(corr.r(1, data.x), dtype=float)
    r0 = np.asarray(corr.r(0, data.x), dtype=float)
    d1 = data.d.astype(float)
    treated = _mean(d1 * r1)
    control = _mean((1.0 - d1) * r0)
    l2 = None
    if truth is not None:
        l2 = oracle_l2_error(truth, data.x, r1, r0)
    return BalanceReport(treated, control, l2)


def oracle_l2_error(truth: SyntheticTruth, x, r1, r0) -> float:
    e = truth.e0(x)
    err = (e * (r1 - truth.r0(1, x))) ** 2 + ((1.0 - e) * (r0 - truth.r0(0, x))) ** 2
    return _mean(err)


class OracleCorrection:
    """The true r0 exposed through the fitted-correction interface."""

    def __init__(self, truth: SyntheticTruth):
        self.truth = truth

    def r(self, d, x):
        return self.truth.r0(d, x)

    def e(self, x):
        return self.truth.e0(x)

    def h(self, d, x):
        return self.truth.h0(d, x)

    def w(self, x):
        return self.truth.w0(x)
