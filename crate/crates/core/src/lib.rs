//! Joint hierarchical model of diagnostic RNA viral load, subgenomic RNA
//! (sgRNA) viral load and interval-censored IgG seroconversion.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: trajectory geometry, detection probabilities and the typed
//!   parameter blocks.
//! - [`distributions`]: seeded densities, CDFs and samplers.
//! - [`data`]: swab / DBS records, CSV ingestion and validation.
//! - [`simulate`]: forward simulation of complete synthetic studies.
//! - [`likelihood`]: priors and the exact joint log posterior.
//! - [`sampler`]: adaptive Metropolis-within-Gibbs MCMC and convergence
//!   diagnostics.
//! - [`posterior`]: estimands, trajectory bands and sgRNA imputation.
//! - [`cv`]: k-fold masking cross-validation.

pub mod cv;
pub mod data;
pub mod distributions;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod posterior;
pub mod sampler;
pub mod simulate;
pub mod state;

pub use data::{Dataset, Person, SeroRecord, SgObservation, SwabRecord};
pub use likelihood::{CovariateWiring, Model, PriorConfig};
pub use model::{AssayConstants, PeakAlignmentConfig, PopulationParams};
pub use state::{ParameterState, PersonState, StateLayout};
