//! Share of test-message successes credited to messaging.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{Bin, StratifiedBins};
use crate::model::EventType;
use crate::strata::Subcategory;

/// `(test - control) / test`, or 0 when there is nothing to credit.
pub fn attributable_fraction(test_metric: f64, control_metric: f64) -> Result<f64> {
    if !(test_metric >= 0.0 && control_metric >= 0.0) {
        return Err(Error::ContractViolation(format!(
            "metrics must be non-negative, got test={test_metric} control={control_metric}"
        )));
    }
    if test_metric == 0.0 || control_metric >= test_metric {
        return Ok(0.0);
    }
    Ok((test_metric - control_metric) / test_metric)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinAttribution {
    pub bin: usize,
    pub n: usize,
    pub mean_score: f64,
    pub test_metric: f64,
    pub control_metric: f64,
    pub fraction: f64,
    pub test_success_sum: f64,
    pub control_success_sum: f64,
    pub incremental: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementalEvents {
    pub event_type: EventType,
    pub per_bin: Vec<BinAttribution>,
    pub total: f64,
    pub total_test_successes: f64,
}

/// Per bin: fraction of the (shrunk) metrics times the raw test success sum.
pub fn incremental_events(bins: &[Bin], event_type: &EventType) -> Result<IncrementalEvents> {
    if event_type.is_message_interaction() {
        return Err(Error::ClickThroughUnsupported(event_type.to_string()));
    }
    let mut per_bin = Vec::with_capacity(bins.len());
    for b in bins {
        let t = b
            .tally(event_type)
            .ok_or_else(|| Error::config(format!("event type `{event_type}` was not tallied")))?;
        let fraction = attributable_fraction(t.test_metric, t.control_metric)?;
        per_bin.push(BinAttribution {
            bin: b.index,
            n: b.n_test,
            mean_score: b.mean_score,
            test_metric: t.test_metric,
            control_metric: t.control_metric,
            fraction,
            test_success_sum: t.test_success_sum,
            control_success_sum: t.control_success_sum,
            incremental: fraction * t.test_success_sum,
        });
    }
    Ok(IncrementalEvents {
        event_type: event_type.clone(),
        total: per_bin.iter().map(|b| b.incremental).sum(),
        total_test_successes: per_bin.iter().map(|b| b.test_success_sum).sum(),
        per_bin,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionCell {
    pub stratum: Subcategory,
    pub event_type: EventType,
    pub attributable_fraction: f64,
    pub incremental_events: f64,
    pub total_test_successes: f64,
    pub matched_messages: usize,
    /// No test successes at all, so the fraction carries no information.
    pub empty: bool,
}

/// One cell per (stratum, event type); strata in report order.
pub fn attribution_table(bins: &StratifiedBins, event_types: &[EventType]) -> Result<Vec<AttributionCell>> {
    if let Some(bad) = event_types.iter().find(|e| e.is_message_interaction()) {
        return Err(Error::ClickThroughUnsupported(bad.to_string()));
    }
    let mut cells = Vec::new();
    for (&stratum, stratum_bins) in &bins.strata {
        for et in event_types {
            let inc = incremental_events(stratum_bins, et)?;
            let empty = inc.total_test_successes == 0.0;
            cells.push(AttributionCell {
                stratum,
                event_type: et.clone(),
                attributable_fraction: if empty { 0.0 } else { inc.total / inc.total_test_successes },
                incremental_events: inc.total,
                total_test_successes: inc.total_test_successes,
                matched_messages: stratum_bins.iter().map(|b| b.n_test).sum(),
                empty,
            });
        }
    }
    Ok(cells)
}
