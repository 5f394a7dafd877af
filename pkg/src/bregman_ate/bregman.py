"""Bregman generators and the empirical risks they induce.

For a generator ``g`` and inverse-propensity model ``r(d, x) > 1`` the
per-arm loss of unit ``i`` is::

    1[D_i = d] * (-g(r) + g'(r) r) - g'(r),     r = r(d, X_i)

and the empirical risk sums both arms and averages over units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import Dataset, SyntheticTruth

DOMAIN_EPS = 1e-9


class DomainError(ValueError):
    """An inverse-propensity value fell outside a generator's domain."""


@dataclass(frozen=True)
class BregmanGenerator:
    """Strictly convex ``g`` on (1, inf) with its first two derivatives.

    The callables take ``(r, s)`` with ``s = r - 1`` so that generators
    singular at ``r = 1`` can use an exactly computed excess.
    """

    name: str
    g_rs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dg_rs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d2g_rs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    domain_min: float = 1.0

    @staticmethod
    def _excess(r, s):
        r = np.asarray(r, dtype=float)
        return r, (r - 1.0 if s is None else np.asarray(s, dtype=float))

    def g(self, r, s=None):
        return self.g_rs(*self._excess(r, s))

    def dg(self, r, s=None):
        return self.dg_rs(*self._excess(r, s))

    def d2g(self, r, s=None):
        return self.d2g_rs(*self._excess(r, s))

    def check_domain(self, r, s=None) -> None:
        """Reject r <= 1 + DOMAIN_EPS, or s <= 0 when the exact excess is given."""
        r = np.asarray(r)
        if s is None:
            bad = ~(r > self.domain_min + DOMAIN_EPS)
        else:
            bad = ~((np.asarray(s) > 0) & np.isfinite(r))
        if bad.any():
            i = int(np.flatnonzero(bad.ravel())[0])
            raise DomainError(f"{self.name}: r={float(r.ravel()[i])!r} at sample {i} "
                              f"is not above the domain minimum {self.domain_min}")

    def arm_loss(self, ind, r, s=None):
        r, s = self._excess(r, s)
        dg = self.dg_rs(r, s)
        return ind * (dg * r - self.g_rs(r, s)) - dg

    def arm_grad(self, ind, r, s=None):
        """Derivative of :meth:`arm_loss` with respect to ``r``."""
        r, s = self._excess(r, s)
        return self.d2g_rs(r, s) * (ind * r - 1.0)

    def divergence(self, r_true, r, s_true=None, s=None):
        return (self.g(r_true, s_true) - self.g(r, s)
                - self.dg(r, s) * (np.asarray(r_true) - np.asarray(r)))


LEAST_SQUARES = BregmanGenerator(
    name="ls",
    g_rs=lambda r, s: r * r,
    dg_rs=lambda r, s: 2.0 * r,
    d2g_rs=lambda r, s: np.full_like(r, 2.0))

UNNORMALIZED_KL = BregmanGenerator(
    name="ukl",
    g_rs=lambda r, s: r * np.log(r) - r,
    dg_rs=lambda r, s: np.log(r),
    d2g_rs=lambda r, s: 1.0 / r)

EMPIRICAL_BALANCING = BregmanGenerator(
    name="eb",
    g_rs=lambda r, s: s * np.log(s) - r,
    dg_rs=lambda r, s: np.log(s),
    d2g_rs=lambda r, s: 1.0 / s)

GENERATORS = {gen.name: gen for gen in (LEAST_SQUARES, UNNORMALIZED_KL, EMPIRICAL_BALANCING)}


def get_generator(name) -> BregmanGenerator:
    if isinstance(name, BregmanGenerator):
        return name
    try:
        return GENERATORS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}") from None


@dataclass(frozen=True)
class RiskValue:
    value: float
    per_sample: np.ndarray
    penalty: float = 0.0


def _r_arrays(r, x):
    """Evaluate ``r`` on ``x`` as (r1, s1, r0, s0) with s = r - 1.

    ``r`` is a score model / fitted correction (exposing ``f``), a callable
    r(d, X), or a pair of arrays. Only score-based inputs carry an exact
    excess; otherwise ``s`` is None.
    """
    if hasattr(r, "f"):
        f = np.asarray(r.f(x), dtype=float)
        s1, s0 = np.exp(-f), np.exp(f)
        return 1.0 + s1, s1, 1.0 + s0, s0
    if callable(r):
        return np.asarray(r(1, x), dtype=float), None, np.asarray(r(0, x), dtype=float), None
    r1, r0 = r
    return np.asarray(r1, dtype=float), None, np.asarray(r0, dtype=float), None


def per_sample_loss(gen: BregmanGenerator, w1, w0, r1, r0, s1=None, s0=None) -> np.ndarray:
    """Both-arm loss per unit with arm weights ``w1``/``w0``.

    Indicator weights give the empirical risk; propensity weights give the
    conditional-expectation risk.
    """
    gen.check_domain(r1, s1)
    gen.check_domain(r0, s0)
    return gen.arm_loss(w1, r1, s1) + gen.arm_loss(w0, r0, s0)


def empirical_risk(gen, data: Dataset, r, penalty: float = 0.0) -> RiskValue:
    """Empirical Bregman risk of ``r`` plus an optional (already scaled) penalty."""
    gen = get_generator(gen)
    r1, s1, r0, s0 = _r_arrays(r, data.x)
    ind1 = data.d.astype(float)
    per = per_sample_loss(gen, ind1, 1.0 - ind1, r1, r0, s1, s0)
    return RiskValue(value=math.fsum(per) / data.n + penalty, per_sample=per, penalty=penalty)


def conditional_risk(gen, truth: SyntheticTruth, data: Dataset, r) -> float:
    """Risk with the treatment indicator replaced by its conditional mean."""
    gen = get_generator(gen)
    r1, s1, r0, s0 = _r_arrays(r, data.x)
    e = truth.e0(data.x)
    return math.fsum(per_sample_loss(gen, e, 1.0 - e, r1, r0, s1, s0)) / data.n


def risk_value_gradient(gen, d_i: int, r_val, arm: Optional[int] = None):
    """d/dr of the per-arm loss; ``arm`` defaults to the unit's own arm."""
    gen = get_generator(gen)
    r_val = np.asarray(r_val, dtype=float)
    gen.check_domain(r_val)
    d_i = np.asarray(d_i)
    ind = np.ones(d_i.shape) if arm is None else (d_i == arm).astype(float)
    out = gen.arm_grad(ind, r_val)
    return float(out) if out.ndim == 0 else out


def oracle_divergence(gen, truth: SyntheticTruth, data: Dataset, r) -> float:
    """Average Bregman divergence of ``r`` from the true ``r0``, weighted by e0(d|X)."""
    gen = get_generator(gen)
    r1, s1, r0, s0 = _r_arrays(r, data.x)
    gen.check_domain(r1, s1)
    gen.check_domain(r0, s0)
    e = truth.e0(data.x)
    score = truth.score(data.x)
    t1, t0 = np.exp(-score), np.exp(score)
    per = (e * gen.divergence(1.0 + t1, r1, t1, s1)
           + (1.0 - e) * gen.divergence(1.0 + t0, r0, t0, s0))
    return math.fsum(per) / data.n


def least_squares_risk(data: Dataset, r1: np.ndarray, r0: np.ndarray) -> float:
    """Squared-loss risk written out term by term (independent of the generator path)."""
    d = data.d.astype(float)
    terms = [-2.0 * r1[i] - 2.0 * r0[i] + d[i] * r1[i] ** 2 + (1.0 - d[i]) * r0[i] ** 2
             for i in range(data.n)]
    return math.fsum(terms) / data.n


def balancing_risk_tailored(data: Dataset, r1: np.ndarray, r0: np.ndarray) -> float:
    """Empirical-balancing risk in tailored-loss form; valid when (r1-1)(r0-1) = 1."""
    d = data.d.astype(float)
    per = (d * (-np.log(1.0 / (r1 - 1.0)) + r1)
           + (1.0 - d) * (-np.log(1.0 / (r0 - 1.0)) + r0))
    return math.fsum(per) / data.n


def balancing_risk_crossed(data: Dataset, r1: np.ndarray, r0: np.ndarray) -> float:
    """Empirical-balancing risk with crossed log terms (no link assumption)."""
    d = data.d.astype(float)
    per = (-(1.0 - d) * np.log(r1 - 1.0) - d * np.log(r0 - 1.0)
           + d * r1 + (1.0 - d) * r0)
    return math.fsum(per) / data.n
