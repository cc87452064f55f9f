use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::EventType;
use crate::strata::Subcategory;

/// Messages per contact per week: lognormal around `median_per_week`, capped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Cadence {
    pub median_per_week: f64,
    pub sigma: f64,
    pub max_per_week: f64,
}

impl Default for Cadence {
    fn default() -> Self {
        Cadence {
            median_per_week: 2.5,
            sigma: 0.5,
            max_per_week: 35.0,
        }
    }
}

/// `score = clamp(0.5 + alpha * (p - 0.5) + N(0, noise_sd), 0, 1)` where `p`
/// is the percentile of the message's strength within its stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreModel {
    pub alpha: f64,
    pub noise_sd: f64,
}

impl Default for ScoreModel {
    fn default() -> Self {
        ScoreModel {
            alpha: 1.0,
            noise_sd: 0.05,
        }
    }
}

/// How a message's lift depends on its strength `s ~ U(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResponseShape {
    /// Every message gets the configured lift.
    #[default]
    Constant,
    /// Lift `2 * L * s`: mean `L`, rising with strength.
    Proportional,
    /// Lift `gain * (s - b / (b + k))`, floored at -1, where `b` is the
    /// event's baseline rate. Messages must clear a hurdle that grows with
    /// baseline activity; configured lifts are ignored.
    BaselineHurdle { k: f64, gain: f64 },
}

impl ResponseShape {
    pub fn lift(&self, configured: f64, strength: f64, baseline_per_day: f64) -> f64 {
        match *self {
            ResponseShape::Constant => configured,
            ResponseShape::Proportional => 2.0 * configured * strength,
            ResponseShape::BaselineHurdle { k, gain } => {
                let hurdle = baseline_per_day / (baseline_per_day + k);
                (gain * (strength - hurdle)).max(-1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumSpec {
    pub subcategory: Subcategory,
    /// Fraction of the population; shares must sum to 1.
    pub share: f64,
    /// Expected events per day by type while no message is active.
    #[serde(default)]
    pub rates: BTreeMap<EventType, f64>,
    /// Multiplicative lift by type during the monitoring window after a message.
    #[serde(default)]
    pub lift: BTreeMap<EventType, f64>,
    /// Age of the contact at the simulation start. For `new` contacts this is
    /// the upper bound of a uniform draw.
    #[serde(default)]
    pub first_seen_days_ago: Option<f64>,
    /// Range the seeded last conversion's age is drawn from; defaults to the
    /// whole recency bucket the stratum requires.
    #[serde(default)]
    pub conversion_age_days: Option<[f64; 2]>,
    #[serde(default)]
    pub visit_age_days: Option<[f64; 2]>,
}

impl StratumSpec {
    pub fn new(subcategory: Subcategory, share: f64) -> Self {
        StratumSpec {
            subcategory,
            share,
            rates: BTreeMap::new(),
            lift: BTreeMap::new(),
            first_seen_days_ago: None,
            conversion_age_days: None,
            visit_age_days: None,
        }
    }

    pub fn rate(mut self, event: EventType, per_day: f64) -> Self {
        self.rates.insert(event, per_day);
        self
    }

    pub fn with_lift(mut self, event: EventType, lift: f64) -> Self {
        self.lift.insert(event, lift);
        self
    }

    pub fn rate_of(&self, event: &EventType) -> f64 {
        self.rates.get(event).copied().unwrap_or(0.0)
    }

    pub fn lift_of(&self, event: &EventType) -> f64 {
        self.lift.get(event).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub n_contacts: usize,
    pub horizon_days: u32,
    /// Simulation start, seconds since the epoch.
    pub start_at: i64,
    pub cadence: Cadence,
    /// Attribute name to its possible labels; each message draws one label per attribute.
    pub catalog: BTreeMap<String, Vec<String>>,
    pub score: ScoreModel,
    pub response: ResponseShape,
    pub strata: Vec<StratumSpec>,
    /// Matching and scoring parameters; its stratum thresholds also drive population seeding.
    pub run: RunConfig,
}

pub fn default_catalog() -> BTreeMap<String, Vec<String>> {
    let labels = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    BTreeMap::from([
        ("channel".to_string(), labels(&["email", "push"])),
        ("timing".to_string(), labels(&["morning", "evening"])),
        ("tone".to_string(), labels(&["casual", "business"])),
        (
            "value_proposition".to_string(),
            labels(&["convenience", "price", "quality"]),
        ),
    ])
}

fn default_strata() -> Vec<StratumSpec> {
    use EventType::{AddToCart, Purchase, Visit};
    use Subcategory as S;
    vec![
        StratumSpec::new(S::New, 0.10)
            .rate(Visit, 1.5)
            .rate(AddToCart, 0.4)
            .rate(Purchase, 0.05)
            .with_lift(Visit, 0.3)
            .with_lift(AddToCart, 0.2),
        StratumSpec::new(S::ActivelyConverting, 0.10)
            .rate(Visit, 4.0)
            .rate(AddToCart, 1.5)
            .rate(Purchase, 0.6)
            .with_lift(Visit, 0.1)
            .with_lift(AddToCart, 0.1)
            .with_lift(Purchase, 0.05),
        StratumSpec::new(S::RecentlyConverted, 0.15)
            .rate(Visit, 1.7)
            .rate(AddToCart, 0.5)
            .with_lift(Visit, 0.7)
            .with_lift(AddToCart, 0.3),
        StratumSpec::new(S::ActivelyLooking, 0.35)
            .rate(Visit, 2.0)
            .rate(AddToCart, 0.5)
            .with_lift(Visit, 0.4)
            .with_lift(AddToCart, 0.2),
        StratumSpec::new(S::FormerlyLooked, 0.30)
            .rate(Visit, 0.3)
            .with_lift(Visit, 0.5),
    ]
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            n_contacts: 5_000,
            horizon_days: 28,
            start_at: 1_700_006_400,
            cadence: Cadence::default(),
            catalog: default_catalog(),
            score: ScoreModel::default(),
            response: ResponseShape::default(),
            strata: default_strata(),
            run: RunConfig::default(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        check(self.n_contacts > 0, || "n_contacts must be positive".into())?;
        check(self.horizon_days > 0, || "horizon_days must be positive".into())?;
        check(self.start_at >= 0, || "start_at must be non-negative".into())?;
        let c = &self.cadence;
        check(
            c.median_per_week > 0.0 && c.sigma >= 0.0 && c.max_per_week >= c.median_per_week,
            || "cadence needs median > 0, sigma >= 0 and max >= median".into(),
        )?;
        check(!self.catalog.is_empty(), || "treatment catalog is empty".into())?;
        for (name, labels) in &self.catalog {
            check(!name.is_empty() && !labels.is_empty() && labels.iter().all(|l| !l.is_empty()), || {
                format!("catalog attribute `{name}` needs a name and non-empty labels")
            })?;
        }
        check(
            self.score.alpha.is_finite() && self.score.noise_sd >= 0.0,
            || "score model needs finite alpha and non-negative noise".into(),
        )?;
        if let ResponseShape::BaselineHurdle { k, gain } = self.response {
            check(k > 0.0 && gain >= 0.0, || "baseline hurdle needs k > 0 and gain >= 0".into())?;
        }
        check(!self.strata.is_empty(), || "at least one stratum is required".into())?;
        let total: f64 = self.strata.iter().map(|s| s.share).sum();
        check((total - 1.0).abs() < 1e-6, || format!("stratum shares sum to {total}, not 1"))?;
        for (i, s) in self.strata.iter().enumerate() {
            check(
                self.strata[..i].iter().all(|o| o.subcategory != s.subcategory),
                || format!("stratum `{}` is listed twice", s.subcategory.key()),
            )?;
            check(s.share >= 0.0, || format!("negative share for `{}`", s.subcategory.key()))?;
            for (et, r) in &s.rates {
                check(r.is_finite() && *r >= 0.0, || format!("rate for `{et}` must be >= 0"))?;
            }
            for (et, l) in &s.lift {
                check(l.is_finite() && *l >= 0.0, || format!("lift for `{et}` must be >= 0"))?;
            }
        }
        // seeding feasibility is checked by building the plans
        super::population::plans(self).map(|_| ())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("simulation config always serializes")
    }

    /// Event types with a positive rate in any stratum, plus the two tracked kinds.
    pub fn event_types(&self) -> Vec<EventType> {
        let mut all: Vec<EventType> = self
            .strata
            .iter()
            .flat_map(|s| s.rates.keys().cloned())
            .chain([self.run.conversion_event.clone(), self.run.visit_event.clone()])
            .collect();
        all.sort();
        all.dedup();
        all
    }
}
