//! Fixtures shared by the benchmarks.

use histosurv_core::dataio::{generate_synthetic_cohort, SyntheticConfig};
use histosurv_core::Cohort;

/// The default 200-patient, 32-dimensional synthetic cohort.
pub fn default_cohort() -> Cohort {
    generate_synthetic_cohort(&SyntheticConfig::default())
        .expect("default synthetic config is valid")
        .cohort
}
