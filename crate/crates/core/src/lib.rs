//! Learning-rate scale tuning for first-order optimizers.
//!
//! [`Mechanic`] wraps any [`BaseOptimizer`] and learns a global multiplier on
//! its updates with a coin-betting [`TunerState`]. The remaining modules supply
//! objectives, data, training loops and numerical checks of the method's
//! guarantees.

pub mod base_opt;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod mechanic;
pub mod models;
pub mod rng;
pub mod schedule;
pub mod theory;
pub mod tuner;
pub mod vector;

pub use base_opt::{
    AdamW, AdamWHyper, BaseOptConfig, BaseOptimizer, Lion, LionHyper, Momentum, Sgd, UpdateVector,
};
pub use config::ExperimentConfig;
pub use data::{load_libsvm, parse_libsvm, synth_logistic, Dataset};
pub use error::{Error, Result};
pub use harness::{
    decomposition_residual, linearized_regret, lr_sweep, run_experiment, tuner_regret,
    RegretLedger, RunRecord,
};
pub use mechanic::{compute_h, recover_delta, DeltaMode, Mechanic, NonFinitePolicy, StepInfo};
pub use models::{Batch, Objective};
pub use rng::SplitMix64;
pub use schedule::{Schedule, ScheduleKind};
pub use theory::{
    regret_bound_margin, sweep_technical_inequality, technical_inequality_holds, InequalitySample,
};
pub use tuner::{
    tuner_sum, BetDirection, PeakTracking, TheoreticalTunerState, TunerParams, TunerState,
};
