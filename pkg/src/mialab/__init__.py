"""Membership-inference experiment lab.

Pieces: tabular preprocessing into a numeric sample space (dataio),
dependency-inducing member/non-member pools (splits, synthetic), a ReLU
classifier with optional DP-Adam training (nn), privacy accounting (dp),
black-box attacks (attacks), advantage bounds (bounds), membership games
and the batch campaign (experiments), and a config-driven CLI (cli).
"""

from .attacks import (
    AttackOutcome,
    ShadowEnsemble,
    advantage,
    average_threshold,
    optimal_threshold,
    shadow_attack,
    train_shadow_ensemble,
)
from .bounds import bound_erlingsson, bound_new, bound_yeom, tradeoff_feasible
from .dataio import Column, Dataset, Sample, Schema, TabularEncoder, load_csv, preprocess
from .dp import (
    AccountResult,
    PrivacyParams,
    RdpProfile,
    account,
    calibrate_sigma,
    clip,
    compose_and_convert,
    noisy_mean,
    rdp_profile,
    rdp_sgm,
)
from .errors import (
    AccountingError,
    CalibrationError,
    ConfigError,
    CsvParseError,
    MialabError,
    PreprocessError,
    SchemaError,
    ShadowPoolTooSmall,
    SplitError,
    TrainingDiverged,
)
from .experiments import (
    CampaignResult,
    ExperimentConfig,
    batch_mm_campaign,
    exp_alt,
    exp_iid,
    exp_mm,
    exp_strong,
    two_proportion_z_test,
)
from .nn import (
    MlpClassifier,
    MlpModel,
    TrainConfig,
    accuracy,
    forward,
    init_model,
    load_model,
    logloss,
    loglosses,
    per_example_grad,
    save_model,
    train,
)
from .splits import (
    KmeansResult,
    MixturePools,
    SplitDraw,
    attribute_bias_pools,
    cluster_split,
    draw,
    iid_counterfactual,
    kmeans,
    source_split,
)
from .synthetic import GaussianComponent, halfspace_label, mixture_dataset, synthetic_mixture

__all__ = [name for name in dir() if not name.startswith("_")]
