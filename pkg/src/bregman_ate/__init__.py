"""Average treatment effects from bias-correction terms fitted by Bregman risk minimization."""

from .bregman import (EMPIRICAL_BALANCING, GENERATORS, LEAST_SQUARES, UNNORMALIZED_KL,
                      BregmanGenerator, DomainError, conditional_risk, empirical_risk,
                      get_generator, oracle_divergence, risk_value_gradient)
from .data import (TAU0, DataError, Dataset, DgpConfig, OutcomeModel, SyntheticTruth,
                   generate_dgp, load_csv, oracle_h, write_csv)
from .estimators import (BalanceReport, EstimateReport, OracleCorrection, diagnostics,
                         estimate_aipw, estimate_att, estimate_dm, estimate_ipw)
from .fit import (FitConfig, FitError, FittedCorrection, FoldPlan, Nuisances,
                  crossfit_nuisances, fit_att_weights, fit_correction, fit_outcome, make_folds)
from .models import (KernelSpec, MlpSpec, ScoreModel, eval_e, eval_f, eval_r, grad_params,
                     kernel_model, linear_model, mlp_model, model_from_json, penalty)

__version__ = "0.1.0"
