"""Conditional-expectation surrogate networks for explaining tabular models.

Fit a base regression network, then one surrogate that answers
E[mu(X) | X_C = x_C] for every feature coalition C at once. On top of the
surrogate: conditional and interventional SHAP decompositions of single
predictions, drop1/anova/permutation variable importance, partial
dependence and marginal conditional expectation curves, and a global SHAP
decomposition of the deviance-loss gap between the null and full model.
"""

from .cen import (
    CenFitReport,
    CenModel,
    MaskVector,
    apply_mask,
    build_triplicated,
    fit_cen,
    load_cen,
    save_cen,
    select_mask,
)
from .data import (
    Coalition,
    Dataset,
    FeatureSchema,
    FeatureSpec,
    Instance,
    coalition_iter,
    load_csv,
    sample_coalitions,
)
from .errors import CenShapError, ConfigError, DataError, NumericError
from .explain import (
    Conditional,
    EffectCurve,
    ImportanceReport,
    Interventional,
    LossGame,
    ShapLossResult,
    anova,
    drop1,
    mcep,
    pdp,
    shap_loss_attribution,
    shap_mean,
    value,
    vpi,
)
from .nn import (
    Network,
    NetworkConfig,
    TrainConfig,
    TrainLog,
    gradients,
    load,
    poisson_deviance,
    save,
    train,
)
from .shapley import (
    Attribution,
    KernelSystem,
    ValueTable,
    build_kernel_system,
    constrained_kernel_shap,
    exact_shapley,
    kernel_shap,
    kernel_weight,
)
from .synth import (
    DiscreteJointSpec,
    GaussianLinearSpec,
    fixture_discrete,
    fixture_gaussian,
    gen_discrete,
    gen_gaussian,
    oracle_conditional_discrete,
    oracle_conditional_gaussian,
    oracle_value_table_discrete,
)

__version__ = "0.1.0"
