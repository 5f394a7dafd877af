# The effect on the treated, and cross-fitting.
#
# Run with:  python3 demos/03_att_and_crossfit.py

from bregman_ate.data import DgpConfig, generate_dgp
from bregman_ate.estimators import estimate_aipw, estimate_att
from bregman_ate.fit import (FitConfig, crossfit_nuisances, fit_att_weights, fit_outcome,
                             full_sample_nuisances, make_folds)
from bregman_ate.models import KernelSpec

data, truth = generate_dgp(DgpConfig(n=3000, k=3, seed=3))

# ## ATT weights
#
# For the effect on the treated, controls are reweighted by w(x) = e/(1-e),
# fitted directly by a squared loss. The effect is homogeneous here, so the
# ATT equals the ATE of 5. A smaller coefficient scale gives milder overlap,
# which the ATT needs: a control with e near 1 carries a huge weight.

att_data, att_truth = generate_dgp(DgpConfig(n=3000, k=3, seed=3, coef_scale=0.1))
w_true = lambda x: att_truth.e0(x) / (1 - att_truth.e0(x))
# 400 kernel anchors (a random subset of the rows) keep the fits quick
kernel = KernelSpec(max_anchors=400)
w_fit = fit_att_weights(att_data, FitConfig(family="kernel", kernel=kernel)).w
mu = fit_outcome(att_data, FitConfig(family="kernel", generator="mse", kernel=kernel))

# IPW alone is noisy because the outcome is large and quadratic; even the true
# weights miss by almost a unit on this draw. The outcome model absorbs most of it.

for label, w in (("true w", w_true), ("kernel w", w_fit)):
    ipw = estimate_att(att_data, w, method="IPW")
    aipw = estimate_att(att_data, w, mu, method="AIPW")
    print("%-9s IPW %.3f   AIPW %.3f  CI [%.3f, %.3f]" % (label, ipw.tau_hat, aipw.tau_hat,
                                                        *aipw.ci95))

# ## Cross-fitting
#
# Each unit's nuisances come from models trained on the other folds. Folds are
# stratified by treatment arm and fixed by the seed.

cfg = FitConfig(family="linear", lam=1e-4)
outcome = FitConfig(family="kernel", generator="mse", lam=1e-4, kernel=kernel)
full = estimate_aipw(data, full_sample_nuisances(data, cfg, outcome))
folds = make_folds(data.n, data.d, k=5, seed=0)
cross = estimate_aipw(data, crossfit_nuisances(data, cfg, outcome, folds))
print("AIPW full sample %.3f   cross-fitted %.3f" % (full.tau_hat, cross.tau_hat))
