//! Monte Carlo laboratory for heavy-tailed behaviour of online and offline SGD.
//!
//! The crate is organised by role:
//!
//! * [`data`] generates seeded synthetic datasets, minibatch draws and
//!   symmetric stable samples.
//! * [`sgd`] runs online and offline SGD chains and parallel ensembles.
//! * [`tail`] estimates tail indices and produces CCDF / QQ / log-log
//!   diagnostics.
//! * [`theory`] solves the moment equations for tail exponents and evaluates
//!   the closed-form contraction moments of the logistic model.
//! * [`transport`] computes Wasserstein distances between empirical measures.
//! * [`experiments`] bundles the above into reproducible scenario suites.
//! * [`runfile`] parses and serialises the declarative run files used by the
//!   `htsgd` binary.

pub mod data;
pub mod error;
pub mod experiments;
pub mod rng;
pub mod runfile;
pub mod sample;
pub mod sgd;
pub mod stats;
pub mod tail;
pub mod theory;
pub mod transport;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use sample::EmpiricalSample1D;
