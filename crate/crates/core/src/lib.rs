//! Numerical laboratory for score-based diffusion under the relaxed manifold model.
//!
//! Data are `X_0 = g*(U) + sigma_data * xi` with `U` uniform on `[0,1]^d`. The crate
//! provides the forward Ornstein-Uhlenbeck schedule, quadrature oracles for the exact
//! score, constructive ReLU networks approximating it, denoising score matching with a
//! hand-written trainer, a reverse-time Euler-Maruyama sampler, and an experiment harness.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the `parallel` feature
//! is enabled and plain iterators otherwise. Results are identical in both modes.

pub mod constructions;
pub mod dsm;
pub mod error;
pub mod exec;
pub mod generator;
pub mod harness;
pub mod netcalc;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod stats;

pub use error::{Error, Result};
pub use generator::{GeneratorSpec, LocalPolySurrogate, PartitionGrid};
pub use netcalc::{NetStats, ReluNet};
pub use oracle::{QuadratureRule, ScoreEval};
pub use schedule::{DiffusionSchedule, ScheduleValues};
