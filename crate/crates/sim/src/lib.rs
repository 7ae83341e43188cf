//! Scenario files, parameter sweeps and CSV reports for the `ctbf-core`
//! access-link simulator.

pub mod overrides;
pub mod report;
pub mod scenario;
pub mod sweep;
pub mod trace;

pub use overrides::{Overrides, PolicyChoice, Profile};
pub use report::{compare, write_csv, write_ratios, Ratio};
pub use scenario::{
    load_scenario, LoadError, PolicySpec, Scenario, SubscriberSpec, Sweep, SweepAxis, SweepPoint,
};
pub use sweep::{run_sweep, RunFailure, SweepResult};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "CTBF_OUTPUT_DIR";
