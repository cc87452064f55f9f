//! Matched synthetic controls for continuously-adaptive messaging systems.

pub mod attribution;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod ingest;
pub mod matcher;
pub mod metrics;
pub mod model;
pub mod report;
pub mod sim;
pub mod strata;

pub use config::{RunConfig, StrataThresholds, WeightStep};
pub use error::{Error, Result};
pub use ingest::{Dataset, EventLog, MessageLog, ValidationReport};
pub use matcher::{match_all, match_all_with_threads, MatchLedger};
pub use model::{BehaviorEvent, ClusterKey, ContactId, ContactProfile, EventType, MessageRecord, Timestamp, TreatmentVector};
pub use strata::{ActivityStratum, Category, RecencyBucket, Subcategory};
pub use metrics::{bin_by_stratum, match_quality, shrink_partial, StratifiedBins};
pub use attribution::{attributable_fraction, attribution_table, AttributionCell};
pub use report::{analyze, Analysis};
pub use sim::{run_simulation, GroundTruth, SimConfig};
