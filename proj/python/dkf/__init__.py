"""Differentiable Kalman filter: field inversion of transition operators and an MLP closure."""

from ._dkf import (
    RNG_ALGORITHM,
    MlpModel,
    ModelSequence,
    RocketConfig,
    StepModel,
    derive_seed,
    invert_allen_cahn,
    invert_rocket,
    loss,
    predict,
    rocket_model,
    rocket_table_initial_F,
    rocket_true_F,
    rocket_truth,
    run_filter,
    sha256_file,
    tied_gradient,
    train_closure,
    true_diffusivity,
    update,
    verify,
)

__version__ = "0.1.0"
