"""dualpath: VAE fraud scoring, triggered Shapley explanations and a WGAN-GP retraining loop."""

from ._dualpath import (
    BackpressureError,
    CalibrationError,
    ColdStartError,
    ConflictError,
    ContractError,
    DataError,
    DualpathError,
    Model,
    NotFoundError,
    Pipeline,
    ServiceError,
    TrainingError,
    anneal_temperature,
    closed_form_kl,
    generate_stream,
    gumbel_softmax,
    permutation_oracle,
    sample_gumbel,
    shapley_exact,
    shapley_sampled,
    train_vae,
)

__all__ = [
    "BackpressureError",
    "CalibrationError",
    "ColdStartError",
    "ConflictError",
    "ContractError",
    "DataError",
    "DualpathError",
    "Model",
    "NotFoundError",
    "Pipeline",
    "ServiceError",
    "TrainingError",
    "anneal_temperature",
    "closed_form_kl",
    "generate_stream",
    "gumbel_softmax",
    "permutation_oracle",
    "sample_gumbel",
    "shapley_exact",
    "shapley_sampled",
    "train_vae",
]
