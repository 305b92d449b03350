//! The eigenvector moment flow: configuration space, generators with
//! symmetric/Hermitian/covariance rates, the explicit reversible measure
//! and Dirichlet form, adaptive ODE evolution, short/long-range splitting,
//! localization operators, and finite-speed propagation diagnostics.

mod config;
mod evolve;
mod generator;
mod rates;

pub use config::{config_distance, ConfigSpace, Configuration, CONFIG_CAP};
pub use evolve::{
    evolve, flat_av, localized_evolve, propagation_profile, EvolveOptions, EvolveOutcome,
    EvolveStats, LambdaSource, PropagationProfile,
};
pub use generator::{
    adjointness_residual, dense_generator, detailed_balance_residual, dirichlet_form,
    generator_apply_adjoint_into, generator_apply_into, inner_product, max_exit_rate, phi,
    reversible_weight, stationary_weights, MomentClass, MomentField,
};
pub use rates::{rates_from_lambda, split_short_long, RateField, RateKind};
