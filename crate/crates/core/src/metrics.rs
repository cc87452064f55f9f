//! Outcome counting, score binning, curves and match-quality tables.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{validate_weight_steps, RunConfig, WeightStep};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, EventLog};
use crate::matcher::{ControlAssignment, LedgerEntry, MatchLedger};
use crate::model::{ContactId, EventType, Timestamp, HOUR};
use crate::strata::Subcategory;

/// What counts as a success after a (real or virtual) send.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessSpec {
    pub event_type: EventType,
    pub monitoring_hours: u32,
    /// Step weights: an event `h` hours after the anchor gets the weight of the
    /// first step with `h < max_hours`, or 0 past the last step.
    pub weight_table: Option<Vec<WeightStep>>,
}

impl SuccessSpec {
    pub fn new(event_type: EventType, monitoring_hours: u32, weight_table: Option<Vec<WeightStep>>) -> Result<Self> {
        if monitoring_hours == 0 {
            return Err(Error::config("monitoring_hours must be positive"));
        }
        if event_type.is_message_interaction() {
            return Err(Error::ClickThroughUnsupported(event_type.to_string()));
        }
        if let Some(steps) = &weight_table {
            validate_weight_steps(steps)?;
        }
        Ok(SuccessSpec {
            event_type,
            monitoring_hours,
            weight_table,
        })
    }

    pub fn from_config(config: &RunConfig, event_type: &EventType) -> Result<Self> {
        Self::new(event_type.clone(), config.monitoring_hours, config.reward_weights.clone())
    }

    fn weight(&self, elapsed_secs: i64) -> f64 {
        match &self.weight_table {
            None => 1.0,
            Some(steps) => {
                let hours = elapsed_secs as f64 / HOUR as f64;
                steps.iter().find(|s| hours < s.max_hours).map_or(0.0, |s| s.weight)
            }
        }
    }
}

/// Count (or weight sum) of the contact's `spec.event_type` events in
/// `[anchor, anchor + monitoring_hours)`.
pub fn success_count(contact: &ContactId, anchor: Timestamp, spec: &SuccessSpec, events: &EventLog) -> f64 {
    let history = events.history(contact);
    let end = anchor.secs() + spec.monitoring_hours as i64 * HOUR;
    let lo = history.partition_point(|e| e.occurred_at < anchor);
    history[lo..]
        .iter()
        .take_while(|e| e.occurred_at.secs() < end)
        .filter(|e| e.event_type == spec.event_type)
        .map(|e| spec.weight(e.occurred_at.secs() - anchor.secs()))
        .sum()
}

/// Partial-bin shrinkage toward zero: `raw * n / bin_size`.
pub fn shrink_partial(raw_metric: f64, n: usize, bin_size: usize) -> Result<f64> {
    if n > bin_size {
        return Err(Error::ContractViolation(format!(
            "bin holds {n} messages but its capacity is {bin_size}"
        )));
    }
    if n == bin_size {
        return Ok(raw_metric);
    }
    Ok(raw_metric * (n as f64 / bin_size as f64))
}

/// One matched test message as seen by the binning stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinMember {
    pub test_message_id: String,
    pub score: f64,
    pub test_contact_id: ContactId,
    pub control_contact_id: ContactId,
    pub anchor: Timestamp,
}

/// Test and control outcome totals of one bin for one event type.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventTally {
    pub event_type: EventType,
    pub test_success_sum: f64,
    pub control_success_sum: f64,
    /// Per-message mean after partial-bin shrinkage.
    pub test_metric: f64,
    pub control_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bin {
    pub index: usize,
    pub capacity: usize,
    pub n_test: usize,
    pub score_min: f64,
    pub score_max: f64,
    pub mean_score: f64,
    #[serde(skip)]
    pub members: Vec<BinMember>,
    pub tallies: Vec<EventTally>,
}

impl Bin {
    pub fn tally(&self, event_type: &EventType) -> Option<&EventTally> {
        self.tallies.iter().find(|t| &t.event_type == event_type)
    }

    pub fn is_full(&self) -> bool {
        self.n_test == self.capacity
    }
}

fn member(a: &ControlAssignment, dataset: &Dataset) -> Result<BinMember> {
    let rec = dataset
        .messages
        .get(&a.test_message_id)
        .ok_or_else(|| Error::UnknownMessage(a.test_message_id.clone()))?;
    Ok(BinMember {
        test_message_id: a.test_message_id.clone(),
        score: rec.confidence_score,
        test_contact_id: a.test_contact_id.clone(),
        control_contact_id: a.control_contact_id.clone(),
        anchor: a.virtual_sent_at,
    })
}

fn chunk(mut members: Vec<BinMember>, bin_size: usize) -> Result<Vec<Bin>> {
    if bin_size == 0 {
        return Err(Error::config("bin_size must be at least 1"));
    }
    if members.is_empty() {
        return Err(Error::EmptyLedger);
    }
    members.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| a.test_message_id.cmp(&b.test_message_id))
    });
    let mut bins = Vec::with_capacity(members.len().div_ceil(bin_size));
    let mut rest = members.into_iter().peekable();
    while rest.peek().is_some() {
        let members: Vec<BinMember> = rest.by_ref().take(bin_size).collect();
        let n = members.len();
        bins.push(Bin {
            index: bins.len(),
            capacity: bin_size,
            n_test: n,
            score_min: members[0].score,
            score_max: members[n - 1].score,
            mean_score: members.iter().map(|m| m.score).sum::<f64>() / n as f64,
            members,
            tallies: Vec::new(),
        });
    }
    Ok(bins)
}

/// Sorts matched test messages by `(confidence_score, message_id)` and cuts
/// them into consecutive bins of `bin_size`; only the last may be partial.
pub fn bin_messages(ledger: &MatchLedger, dataset: &Dataset, bin_size: usize) -> Result<Vec<Bin>> {
    let members = ledger
        .matched()
        .map(|a| member(a, dataset))
        .collect::<Result<Vec<_>>>()?;
    chunk(members, bin_size)
}

/// Fills test/control success tallies for every bin and event type.
pub fn tally_bins(bins: &mut [Bin], specs: &[SuccessSpec], events: &EventLog) -> Result<()> {
    bins.par_iter_mut().try_for_each(|bin| {
        let mut tallies = Vec::with_capacity(specs.len());
        for spec in specs {
            let (t, c) = bin.members.iter().fold((0.0, 0.0), |(t, c), m| {
                (
                    t + success_count(&m.test_contact_id, m.anchor, spec, events),
                    c + success_count(&m.control_contact_id, m.anchor, spec, events),
                )
            });
            let n = bin.n_test;
            tallies.push(EventTally {
                event_type: spec.event_type.clone(),
                test_success_sum: t,
                control_success_sum: c,
                test_metric: shrink_partial(t / n as f64, n, bin.capacity)?,
                control_metric: shrink_partial(c / n as f64, n, bin.capacity)?,
            });
        }
        bin.tallies = tallies;
        Ok(())
    })
}

/// Bins computed separately inside every stratum, plus one pooled set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratifiedBins {
    pub bin_size: usize,
    pub event_types: Vec<EventType>,
    pub strata: BTreeMap<Subcategory, Vec<Bin>>,
    pub pooled: Vec<Bin>,
}

/// Bins and tallies the ledger's matched messages per stratum and pooled,
/// using `config`'s bin size, monitoring window, weights and event types.
pub fn bin_by_stratum(ledger: &MatchLedger, dataset: &Dataset, config: &RunConfig) -> Result<StratifiedBins> {
    config.validate()?;
    let specs = config
        .event_types
        .iter()
        .map(|e| SuccessSpec::from_config(config, e))
        .collect::<Result<Vec<_>>>()?;

    let mut by_stratum: BTreeMap<Subcategory, Vec<BinMember>> = BTreeMap::new();
    let mut all = Vec::new();
    for a in ledger.matched() {
        let m = member(a, dataset)?;
        by_stratum.entry(a.stratum).or_default().push(m.clone());
        all.push(m);
    }
    let mut pooled = chunk(all, config.bin_size)?;
    tally_bins(&mut pooled, &specs, &dataset.events)?;
    let mut strata = BTreeMap::new();
    for (s, members) in by_stratum {
        let mut bins = chunk(members, config.bin_size)?;
        tally_bins(&mut bins, &specs, &dataset.events)?;
        strata.insert(s, bins);
    }
    Ok(StratifiedBins {
        bin_size: config.bin_size,
        event_types: config.event_types.clone(),
        strata,
        pooled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub bin: usize,
    pub n: usize,
    pub mean_score: f64,
    pub test_metric: f64,
    pub control_metric: f64,
    pub smoothed_test_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinCurve {
    pub event_type: EventType,
    pub points: Vec<CurvePoint>,
}

/// Centered moving average; windows are truncated at both ends.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let (left, right) = ((window - 1) / 2, window / 2);
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(values.len() - 1);
            let slice = &values[lo..=hi];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

pub fn bin_curve(bins: &[Bin], event_type: &EventType, smoothing_window: usize) -> Result<BinCurve> {
    let tallies = bins
        .iter()
        .map(|b| {
            b.tally(event_type)
                .ok_or_else(|| Error::config(format!("event type `{event_type}` was not tallied")))
        })
        .collect::<Result<Vec<_>>>()?;
    let test: Vec<f64> = tallies.iter().map(|t| t.test_metric).collect();
    let smoothed = moving_average(&test, smoothing_window);
    let points = bins
        .iter()
        .zip(&tallies)
        .zip(smoothed)
        .map(|((b, t), s)| CurvePoint {
            bin: b.index,
            n: b.n_test,
            mean_score: b.mean_score,
            test_metric: t.test_metric,
            control_metric: t.control_metric,
            smoothed_test_metric: s,
        })
        .collect();
    Ok(BinCurve {
        event_type: event_type.clone(),
        points,
    })
}

/// `ratio` as a percentage string with `decimals` places, e.g. `90.6%`.
pub fn format_percent(ratio: f64, decimals: usize) -> String {
    format!("{:.*}%", decimals, ratio * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityRow {
    pub stratum: Subcategory,
    pub test_messages: usize,
    pub control_messages: usize,
    pub test_contacts: usize,
    pub control_contacts: usize,
}

impl QualityRow {
    pub fn message_coverage(&self) -> f64 {
        ratio(self.control_messages, self.test_messages)
    }

    pub fn contact_coverage(&self) -> f64 {
        ratio(self.control_contacts, self.test_contacts)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityTable {
    /// `(start, end]` of the period the counts cover; `start` is clamped at zero.
    pub period_start: Timestamp,
    pub period_end: Timestamp,
    pub rows: Vec<QualityRow>,
    pub total: QualityRow,
}

#[derive(Default)]
struct RowAcc<'a> {
    test_messages: usize,
    control_messages: usize,
    test_contacts: BTreeSet<&'a ContactId>,
    control_contacts: BTreeSet<&'a ContactId>,
}

impl RowAcc<'_> {
    fn add<'b>(acc: &mut RowAcc<'b>, e: &'b LedgerEntry) {
        acc.test_messages += 1;
        acc.test_contacts.insert(e.test_contact_id());
        if let LedgerEntry::Matched(a) = e {
            acc.control_messages += 1;
            acc.control_contacts.insert(&a.control_contact_id);
        }
    }

    fn row(&self, stratum: Subcategory) -> QualityRow {
        QualityRow {
            stratum,
            test_messages: self.test_messages,
            control_messages: self.control_messages,
            test_contacts: self.test_contacts.len(),
            control_contacts: self.control_contacts.len(),
        }
    }
}

/// Coverage per stratum over the trailing `period_days` ending at the
/// ledger's latest send. Strata without test messages are omitted; the
/// total row counts unclassifiable messages too.
pub fn match_quality(ledger: &MatchLedger, period_days: u32) -> Result<QualityTable> {
    if period_days == 0 {
        return Err(Error::config("quality period must be at least one day"));
    }
    let end = ledger
        .entries
        .iter()
        .map(LedgerEntry::sent_at)
        .max()
        .ok_or(Error::EmptyLedger)?;
    let start = end.secs() - period_days as i64 * crate::model::DAY;
    let mut rows: BTreeMap<Subcategory, RowAcc> = BTreeMap::new();
    let mut total = RowAcc::default();
    for e in &ledger.entries {
        let at = e.sent_at().secs();
        if at <= start || at > end.secs() {
            continue;
        }
        RowAcc::add(rows.entry(e.stratum()).or_default(), e);
        RowAcc::add(&mut total, e);
    }
    Ok(QualityTable {
        period_start: Timestamp::new(start.max(0))?,
        period_end: end,
        rows: rows.iter().map(|(s, acc)| acc.row(*s)).collect(),
        total: total.row(Subcategory::Unclassifiable),
    })
}
