//! Synthetic dependence generators and the Monte Carlo power harness.
//!
//! Every generator draws `X ~ N(0, I_d)`. Trial `t` of [`estimate_power`]
//! generates its data and runs its test from streams derived from
//! `(master_seed, t)`, so a report does not depend on thread scheduling.

mod generators;
mod power;
mod procedure;

pub use generators::{
    gen_large_scale, gen_linear, gen_null, gen_sine, GeneratorKind, GeneratorSpec,
};
pub use power::{estimate_power, estimate_power_with, power_ci, trial_seeds, PowerReport};
pub use procedure::{Method, TestProcedure};
