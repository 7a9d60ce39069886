//! Lifelong metric learning.
//!
//! Every task metric is factored as `M_t = L0ᵀ W_t L0` over a shared
//! dictionary `L0` (`d × d̂`) with a per-task weight matrix `W_t` whose
//! off-diagonal entries are kept sparse. Tasks arrive one at a time; each is
//! fit by a base metric learner, projected onto the dictionary by a proximal
//! solver, and summarized by a gradient matrix that later dictionary updates
//! use in place of the task's raw data.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.

// `!(x > 0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod dictionary;
pub mod engine;
pub mod error;
pub mod eval;
pub mod io;
pub mod kmeans;
pub mod learners;
pub mod linalg;
pub mod metric;
pub mod scalar;
pub mod solver;
pub mod synth;
pub mod triplets;

pub use error::{LmlError, Result};
pub use metric::{MetricKind, Triplet};
pub use scalar::Real;
pub use triplets::{MiningConfig, TripletSet};

pub type Dataset = dataset::LabeledDataset<f64>;
pub type Metric = metric::MetricMatrix<f64>;
pub type Dictionary = dictionary::LifelongDictionary<f64>;
pub type Summary = dictionary::TaskSummary<f64>;
pub type Solver = solver::SolverConfig<f64>;
pub type BaseConfig = learners::BaseLearnerConfig<f64>;
pub type Config = engine::EngineConfig<f64>;
pub type Engine = engine::EngineState<f64>;
