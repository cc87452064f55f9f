//! Run configuration: matching windows, stratum thresholds, binning and the
//! success metrics to score.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EventType, DAY, HOUR};

/// One step of a time-discounted reward table: events occurring less than
/// `max_hours` after the send (and after every earlier step) get `weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightStep {
    pub max_hours: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Qualifying-message window opens this many days before the test send.
    pub candidate_window_start_days: u32,
    /// ... and closes (exclusive) this many days before it.
    pub candidate_window_end_days: u32,
    /// Half-width, in days, of the closed no-message band around the send.
    pub exclusion_days: u32,
    pub monitoring_hours: u32,

    pub active_days: u32,
    pub recent_days: u32,
    pub former_days: u32,
    pub new_days: u32,
    pub conversion_event: EventType,
    pub visit_event: EventType,

    pub bin_size: usize,
    pub smoothing_window: usize,
    pub quality_period_days: u32,
    pub seed: u64,
    pub event_types: Vec<EventType>,
    pub reward_weights: Option<Vec<WeightStep>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            candidate_window_start_days: 8,
            candidate_window_end_days: 2,
            exclusion_days: 1,
            monitoring_hours: 24,
            active_days: 7,
            recent_days: 30,
            former_days: 90,
            new_days: 7,
            conversion_event: EventType::Purchase,
            visit_event: EventType::Visit,
            bin_size: 1000,
            smoothing_window: 5,
            quality_period_days: 14,
            seed: 0,
            event_types: vec![EventType::Visit, EventType::AddToCart, EventType::Purchase],
            reward_weights: None,
        }
    }
}

/// Day thresholds that define recency buckets and the "new contact" rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrataThresholds {
    pub active_days: u32,
    pub recent_days: u32,
    pub former_days: u32,
    pub new_days: u32,
}

impl Default for StrataThresholds {
    fn default() -> Self {
        RunConfig::default().thresholds()
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidate_window_start_days <= self.candidate_window_end_days {
            return Err(Error::config(format!(
                "candidate_window_start_days ({}) must exceed candidate_window_end_days ({})",
                self.candidate_window_start_days, self.candidate_window_end_days
            )));
        }
        if self.candidate_window_end_days < self.exclusion_days {
            return Err(Error::config(format!(
                "candidate_window_end_days ({}) must be at least exclusion_days ({}) so the \
                 qualifying window and the exclusion band cannot overlap",
                self.candidate_window_end_days, self.exclusion_days
            )));
        }
        if self.monitoring_hours == 0 {
            return Err(Error::config("monitoring_hours must be positive"));
        }
        if !(self.active_days < self.recent_days && self.recent_days < self.former_days) {
            return Err(Error::config(format!(
                "recency thresholds must be strictly increasing, got active={} recent={} former={}",
                self.active_days, self.recent_days, self.former_days
            )));
        }
        if self.bin_size == 0 {
            return Err(Error::config("bin_size must be at least 1"));
        }
        if self.smoothing_window == 0 {
            return Err(Error::config("smoothing_window must be at least 1"));
        }
        if self.quality_period_days == 0 {
            return Err(Error::config("quality_period_days must be at least 1"));
        }
        if self.event_types.is_empty() {
            return Err(Error::config("at least one event type must be scored"));
        }
        for et in &self.event_types {
            if et.is_message_interaction() {
                return Err(Error::ClickThroughUnsupported(et.to_string()));
            }
        }
        if let Some(steps) = &self.reward_weights {
            validate_weight_steps(steps)?;
        }
        Ok(())
    }

    pub fn thresholds(&self) -> StrataThresholds {
        StrataThresholds {
            active_days: self.active_days,
            recent_days: self.recent_days,
            former_days: self.former_days,
            new_days: self.new_days,
        }
    }

    /// `[start, end)` offsets in seconds, relative to the test send, of the
    /// qualifying-message window.
    pub fn candidate_window_secs(&self) -> (i64, i64) {
        (
            -(self.candidate_window_start_days as i64) * DAY,
            -(self.candidate_window_end_days as i64) * DAY,
        )
    }

    /// Half-width in seconds of the closed exclusion band.
    pub fn exclusion_secs(&self) -> i64 {
        self.exclusion_days as i64 * DAY
    }

    pub fn monitoring_secs(&self) -> i64 {
        self.monitoring_hours as i64 * HOUR
    }

    pub fn quality_period_secs(&self) -> i64 {
        self.quality_period_days as i64 * DAY
    }

    /// Parses TOML (or JSON when `path` ends in `.json`) and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        } else {
            Self::from_toml(&text)
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }
}

pub(crate) fn validate_weight_steps(steps: &[WeightStep]) -> Result<()> {
    if steps.is_empty() {
        return Err(Error::config("reward weight table must have at least one step"));
    }
    let mut prev = 0.0;
    for s in steps {
        if s.max_hours <= prev || !s.max_hours.is_finite() {
            return Err(Error::config(
                "reward weight steps must have positive, strictly increasing max_hours",
            ));
        }
        if !(0.0..=1.0).contains(&s.weight) {
            return Err(Error::config(format!(
                "reward weight {} is outside [0, 1]",
                s.weight
            )));
        }
        prev = s.max_hours;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.candidate_window_secs(), (-8 * DAY, -2 * DAY));
        assert_eq!(cfg.exclusion_secs(), DAY);
        assert_eq!(cfg.monitoring_secs(), 24 * HOUR);
        assert_eq!(cfg.bin_size, 1000);
        assert_eq!(cfg.quality_period_days, 14);
    }

    #[test]
    fn window_ordering_is_enforced() {
        let cfg = RunConfig {
            candidate_window_end_days: 8,
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let cfg = RunConfig {
            exclusion_days: 3,
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let cfg = RunConfig {
            candidate_window_end_days: 0,
            exclusion_days: 0,
            ..RunConfig::default()
        };
        cfg.validate().unwrap();
    }

    #[test]
    fn thresholds_must_increase() {
        let cfg = RunConfig {
            recent_days: 7,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn click_metrics_are_rejected() {
        let cfg = RunConfig {
            event_types: vec![EventType::Visit, "message_click".parse().unwrap()],
            ..RunConfig::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(Error::ClickThroughUnsupported(_))
        ));
    }

    #[test]
    fn weight_table_validation() {
        let ok = [
            WeightStep { max_hours: 1.0, weight: 1.0 },
            WeightStep { max_hours: 8.0, weight: 0.5 },
        ];
        validate_weight_steps(&ok).unwrap();
        let unordered = [
            WeightStep { max_hours: 8.0, weight: 1.0 },
            WeightStep { max_hours: 1.0, weight: 0.5 },
        ];
        assert!(validate_weight_steps(&unordered).is_err());
        let heavy = [WeightStep { max_hours: 1.0, weight: 1.5 }];
        assert!(validate_weight_steps(&heavy).is_err());
    }

    #[test]
    fn toml_round_trip_with_partial_file() {
        let cfg = RunConfig::from_toml("bin_size = 500\nevent_types = [\"visit\", \"app_open\"]\n").unwrap();
        assert_eq!(cfg.bin_size, 500);
        assert_eq!(cfg.active_days, 7);
        assert_eq!(cfg.event_types[1].as_str(), "app_open");
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(RunConfig::from_toml("no_such_field = 1").is_err());
    }
}
