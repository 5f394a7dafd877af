# Quick start: fit a bias-correction term and estimate an average treatment effect.
#
# Run with:  python3 demos/01_quickstart.py

import numpy as np

from bregman_ate.bench import BenchConfig
from bregman_ate.data import DgpConfig, generate_dgp
from bregman_ate.estimators import (OracleCorrection, diagnostics, estimate_aipw, estimate_dm,
                                    estimate_ipw)
from bregman_ate.fit import fit_correction, fit_outcome, nuisances_from

# ## A synthetic draw
#
# Three standard-normal covariates, a nonlinear propensity score, a quadratic
# outcome and a homogeneous treatment effect of 5. `truth` keeps the true
# propensity and outcome functions so we can compare against them.

data, truth = generate_dgp(DgpConfig(n=3000, k=3, seed=1))
print("units:", data.n, " treated:", int(data.d.sum()), " true effect:", truth.tau0)

# ## Fitting the correction term
#
# The benchmark defaults fit a 3-layer ELU network by least squares on the
# inverse propensity, with the score capped at |f| <= 3.

cfg = BenchConfig()
corr = fit_correction(data, cfg.fit)
print("iterations %d, converged %s, final risk %.4f" % (corr.iterations, corr.converged,
                                                        corr.loss_trace[-1]))

rep = diagnostics(data, corr, truth)
print("weight means (want 1, 1): %.3f %.3f" % (rep.treated_weight_mean, rep.control_weight_mean))
print("oracle weighted L2 error: %.3f" % rep.oracle_l2)

# ## Estimators
#
# IPW uses the correction term alone. AIPW adds an outcome regression, and DM
# uses the outcome regression alone.

mu = fit_outcome(data, cfg.outcome)
for name, report in [("DM", estimate_dm(data, mu)),
                     ("IPW", estimate_ipw(data, corr)),
                     ("AIPW", estimate_aipw(data, nuisances_from(data, corr.h, mu)))]:
    lo, hi = report.ci95
    print("%-5s tau = %.3f   95%% CI [%.3f, %.3f]" % (name, report.tau_hat, lo, hi))

# ## With the true propensity
#
# For reference, the same estimators with the oracle correction term. Its
# weights are unbounded, and with limited overlap IPW becomes very noisy.

oracle = OracleCorrection(truth)
print("oracle IPW  %.3f" % estimate_ipw(data, oracle).tau_hat)
print("oracle AIPW %.3f" % estimate_aipw(data, nuisances_from(data, oracle.h, mu)).tau_hat)
print("largest oracle weight: %.1f" % np.max(np.abs(oracle.h(data.d, data.x))))
