# Comparing correction losses.
#
# Four losses fit the same score model: least squares (ls), unnormalized KL
# (ukl), empirical balancing (eb) and the logistic likelihood. We look at how
# close each one gets to the true inverse propensity, and at the weight means.
#
# Run with:  python3 demos/02_losses.py

from dataclasses import replace

from bregman_ate.data import DgpConfig, generate_dgp
from bregman_ate.estimators import diagnostics, estimate_ipw
from bregman_ate.fit import FitConfig, fit_correction

data, truth = generate_dgp(DgpConfig(n=2000, k=3, seed=7))

# A linear score is misspecified here (the true score is quadratic in x), so
# the losses disagree. Without a penalty, UKL balances both weight means to
# exactly 1 at its optimum; the small ridge penalty here moves them slightly.

base = FitConfig(family="linear", lam=1e-4)
print("%-9s %9s %9s %9s %9s" % ("loss", "L2 err", "treated", "control", "IPW"))
for loss in ("ls", "ukl", "eb", "logistic"):
    corr = fit_correction(data, replace(base, generator=loss))
    rep = diagnostics(data, corr, truth)
    print("%-9s %9.3f %9.3f %9.3f %9.3f" % (loss, rep.oracle_l2, rep.treated_weight_mean,
                                          rep.control_weight_mean,
                                          estimate_ipw(data, corr).tau_hat))

# ## The score cap
#
# Least squares with an exponential link has no lower bound when a control
# unit can be separated from the treated ones. The default `score_bound` of 3
# keeps every fit finite. Turning it off usually still works with a ridge
# penalty, but not always; try other seeds.

uncapped = replace(base, generator="ls", score_bound=None)
try:
    corr = fit_correction(data, uncapped)
    print("uncapped LS: oracle L2 %.3f" % diagnostics(data, corr, truth).oracle_l2)
except Exception as exc:  # FitError on divergence
    print("uncapped LS failed:", exc)
