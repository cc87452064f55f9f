//! Tab-separated report tables and the end-to-end analysis bundle.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::attribution::{attribution_table, incremental_events, AttributionCell};
use crate::config::RunConfig;
use crate::diagnostics::{slope_vs_index, SlopeFit};
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::matcher::MatchLedger;
use crate::metrics::{bin_by_stratum, bin_curve, format_percent, match_quality, BinCurve, QualityRow, QualityTable, StratifiedBins};
use crate::model::EventType;
use crate::strata::Subcategory;

/// Name used for bins that pool every stratum.
pub const POOLED: &str = "all";

fn quality_line(out: &mut String, category: &str, label: &str, r: &QualityRow) {
    let _ = writeln!(
        out,
        "{category}\t{label}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.test_messages,
        r.control_messages,
        format_percent(r.message_coverage(), 1),
        r.test_contacts,
        r.control_contacts,
        format_percent(r.contact_coverage(), 1),
    );
}

pub fn quality_tsv(table: &QualityTable) -> String {
    let mut out = String::from(
        "category\tsubcategory\ttest_messages\tcontrol_messages\tmessage_coverage\ttest_contacts\tcontrol_contacts\tcontact_coverage\n",
    );
    for r in &table.rows {
        quality_line(&mut out, r.stratum.category().label(), r.stratum.label(), r);
    }
    quality_line(&mut out, "Total", "All messages", &table.total);
    out
}

/// Curve rows for one stratum (or [`POOLED`]) and event type.
pub fn curve_rows(out: &mut String, stratum: &str, curve: &BinCurve) {
    for p in &curve.points {
        let _ = writeln!(
            out,
            "{stratum}\t{}\t{}\t{:.6}\t{}\t{:.6}\t{:.6}\t{:.6}",
            curve.event_type, p.bin, p.mean_score, p.n, p.test_metric, p.control_metric, p.smoothed_test_metric
        );
    }
}

pub const CURVE_HEADER: &str =
    "stratum\tevent_type\tbin\tmean_score\tn\ttest_metric\tcontrol_metric\tsmoothed_test_metric\n";

/// Every curve of a binning run: pooled first, then each stratum.
pub fn curves_tsv(bins: &StratifiedBins, event_types: &[EventType], smoothing_window: usize) -> Result<String> {
    let mut out = String::from(CURVE_HEADER);
    for et in event_types {
        curve_rows(&mut out, POOLED, &bin_curve(&bins.pooled, et, smoothing_window)?);
    }
    for (s, b) in &bins.strata {
        for et in event_types {
            curve_rows(&mut out, s.key(), &bin_curve(b, et, smoothing_window)?);
        }
    }
    Ok(out)
}

/// Strata as rows, event types as columns, one-decimal percentages.
pub fn attribution_tsv(cells: &[AttributionCell], event_types: &[EventType]) -> String {
    let mut out = String::from("category\tsubcategory\tmatched_messages");
    for et in event_types {
        let _ = write!(out, "\t{et}");
    }
    out.push('\n');
    let mut strata: Vec<Subcategory> = cells.iter().map(|c| c.stratum).collect();
    strata.dedup();
    for s in strata {
        let row: Vec<&AttributionCell> = cells.iter().filter(|c| c.stratum == s).collect();
        let matched = row.first().map_or(0, |c| c.matched_messages);
        let _ = write!(out, "{}\t{}\t{matched}", s.category().label(), s.label());
        for et in event_types {
            match row.iter().find(|c| &c.event_type == et) {
                Some(c) if c.empty => out.push_str("\tn/a"),
                Some(c) => {
                    let _ = write!(out, "\t{}", format_percent(c.attributable_fraction, 1));
                }
                None => out.push_str("\t-"),
            }
        }
        out.push('\n');
    }
    out
}

/// Long form of the attribution cells with raw totals.
pub fn attribution_cells_tsv(cells: &[AttributionCell]) -> String {
    let mut out = String::from(
        "stratum\tevent_type\tmatched_messages\tattributable_fraction\tincremental_events\ttotal_test_successes\tempty\n",
    );
    for c in cells {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.6}\t{:.3}\t{:.3}\t{}",
            c.stratum.key(),
            c.event_type,
            c.matched_messages,
            c.attributable_fraction,
            c.incremental_events,
            c.total_test_successes,
            c.empty
        );
    }
    out
}

#[derive(Serialize)]
struct BinDetail<'a> {
    stratum: &'a str,
    #[serde(flatten)]
    bin: &'a crate::attribution::BinAttribution,
    event_type: &'a EventType,
}

/// One JSON line per (stratum, event type, bin) with the attribution inputs.
pub fn attribution_detail_jsonl(bins: &StratifiedBins, event_types: &[EventType]) -> Result<String> {
    let mut out = String::new();
    for (s, b) in &bins.strata {
        for et in event_types {
            for bin in &incremental_events(b, et)?.per_bin {
                let line = serde_json::to_string(&BinDetail {
                    stratum: s.key(),
                    bin,
                    event_type: et,
                })
                .expect("bin detail serializes");
                out.push_str(&line);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Trend of the pooled control curve, full bins only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlTrend {
    pub event_type: EventType,
    pub fit: Option<SlopeFit>,
}

pub fn control_trends(bins: &StratifiedBins, event_types: &[EventType]) -> Vec<ControlTrend> {
    event_types
        .iter()
        .map(|et| {
            let y: Vec<f64> = bins
                .pooled
                .iter()
                .filter(|b| b.is_full())
                .filter_map(|b| b.tally(et).map(|t| t.control_metric))
                .collect();
            ControlTrend {
                event_type: et.clone(),
                fit: slope_vs_index(&y, 0.95),
            }
        })
        .collect()
}

pub fn control_trend_tsv(trends: &[ControlTrend]) -> String {
    let mut out = String::from("event_type\tbins\tslope\tstd_error\tci_low\tci_high\tflat\n");
    for t in trends {
        match &t.fit {
            Some(f) => {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{}",
                    t.event_type,
                    f.n,
                    f.slope,
                    f.std_error,
                    f.ci_low,
                    f.ci_high,
                    f.ci_contains_zero()
                );
            }
            None => {
                let _ = writeln!(out, "{}\t0\t-\t-\t-\t-\t-", t.event_type);
            }
        }
    }
    out
}

/// Everything the `report` command produces, computed once.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub config: RunConfig,
    pub quality: QualityTable,
    pub bins: StratifiedBins,
    pub cells: Vec<AttributionCell>,
    pub trends: Vec<ControlTrend>,
}

/// Quality, per-stratum bins, attribution and control trends for a ledger.
/// `config` supplies the scoring parameters (bin size, event types, ...).
pub fn analyze(ledger: &MatchLedger, dataset: &Dataset, config: &RunConfig) -> Result<Analysis> {
    config.validate()?;
    let quality = match_quality(ledger, config.quality_period_days)?;
    let bins = bin_by_stratum(ledger, dataset, config)?;
    let cells = attribution_table(&bins, &config.event_types)?;
    let trends = control_trends(&bins, &config.event_types);
    Ok(Analysis {
        config: config.clone(),
        quality,
        bins,
        cells,
        trends,
    })
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

impl Analysis {
    /// `(file name, contents)` for every report file, in a fixed order.
    pub fn files(&self) -> Result<Vec<(&'static str, String)>> {
        let ets = &self.config.event_types;
        Ok(vec![
            ("quality.tsv", quality_tsv(&self.quality)),
            ("bins.tsv", curves_tsv(&self.bins, ets, self.config.smoothing_window)?),
            ("attribution.tsv", attribution_tsv(&self.cells, ets)),
            ("attribution_cells.tsv", attribution_cells_tsv(&self.cells)),
            ("attribution_bins.jsonl", attribution_detail_jsonl(&self.bins, ets)?),
            ("control_trend.tsv", control_trend_tsv(&self.trends)),
        ])
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        for (name, body) in self.files()? {
            write_file(&dir.join(name), &body)?;
        }
        Ok(())
    }
}
