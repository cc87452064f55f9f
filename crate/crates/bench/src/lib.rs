//! Shared fixtures for the benchmarks.

use dynctl_core::{run_simulation, Dataset, SimConfig};

/// A simulated dataset of `n_contacts` over three weeks with default strata.
pub fn fixture(n_contacts: usize) -> (SimConfig, Dataset) {
    let cfg = SimConfig {
        n_contacts,
        horizon_days: 21,
        ..SimConfig::default()
    };
    let (ds, _) = run_simulation(&cfg, 1).expect("default config simulates").into_dataset();
    (cfg, ds)
}
