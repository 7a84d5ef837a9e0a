//! Differential privacy primitives shared by every model.

pub mod accounting;
pub mod mechanisms;
pub mod sampler;

pub use accounting::{
    eps_of_rho, exponential_epsilon_for_rho, gaussian_sigma_for_rho, rho_of_eps, zcdp_of_exponential,
    zcdp_of_gaussian, zcdp_of_pure, Charge, LedgerEntry, PrivacyBudget, PrivacyLedger,
};
pub use mechanisms::{exponential_mechanism, gaussian_mechanism, laplace_mechanism, NoiseScale};
pub use sampler::{discrete_gaussian, sample_discrete_gaussian, sample_discrete_laplace, Rational};
