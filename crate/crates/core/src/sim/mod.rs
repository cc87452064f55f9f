//! Synthetic populations with known message effects, used as ground truth.
//!
//! Each contact gets its own generator derived from the global seed and the
//! contact index, so output is identical for any number of worker threads.
//! Events follow a piecewise-constant Poisson process: baseline rate `b`,
//! multiplied by `1 + lift` while a message's monitoring window is open (the
//! most recent message wins when windows overlap).

mod config;
mod population;

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{default_catalog, Cadence, ResponseShape, ScoreModel, SimConfig, StratumSpec};
pub use population::{contact_name, generate_population, Population};

use crate::error::{Error, Result};
use crate::ingest::{write_jsonl, Dataset, EventLog, MessageLog};
use crate::model::{BehaviorEvent, ContactProfile, EventType, MessageRecord, Timestamp, TreatmentVector, DAY};
use crate::strata::{classify_contact, Subcategory};

pub(crate) fn derive_rng(seed: u64, stream: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"dynctl/sim/v1/");
    h.update(stream.as_bytes());
    h.update(seed.to_le_bytes());
    h.update(index.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Expected outcomes over the monitoring windows of all messages sent to
/// contacts of one stratum, computed from the configured rates rather than
/// from sampled events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthCell {
    /// Stratum of the recipient at send time.
    pub stratum: Subcategory,
    pub event_type: EventType,
    pub windows: usize,
    pub expected_baseline: f64,
    pub expected_uplift: f64,
    /// `uplift / (baseline + uplift)`.
    pub share: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cells: Vec<TruthCell>,
}

pub fn true_attributable_share(truth: &GroundTruth, stratum: Subcategory, event_type: &EventType) -> Result<f64> {
    truth
        .cells
        .iter()
        .find(|c| c.stratum == stratum && &c.event_type == event_type)
        .map(|c| c.share)
        .ok_or_else(|| Error::UnknownStratum(format!("{} ({event_type})", stratum.key())))
}

/// Per-message facts that never reach the logs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MessageTruth {
    pub message_id: String,
    pub stratum: Subcategory,
    pub strength: f64,
    /// Lift per event type, aligned with [`SimOutput::event_types`].
    pub lifts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub population: Population,
    pub messages: MessageLog,
    pub events: EventLog,
    pub truth: GroundTruth,
    pub event_types: Vec<EventType>,
    /// In message-log order.
    pub message_truth: Vec<MessageTruth>,
}

impl SimOutput {
    pub fn profiles(&self) -> &[ContactProfile] {
        &self.population.profiles
    }

    pub fn dataset(&self) -> Dataset {
        Dataset::assemble(self.messages.clone(), self.events.clone(), self.population.profiles.clone()).0
    }

    /// Writes the three input logs plus `ground_truth.json` into `dir`.
    pub fn write_to(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        write_jsonl(&dir.join("messages.jsonl"), self.messages.records())?;
        write_jsonl(&dir.join("events.jsonl"), self.events.events())?;
        write_jsonl(&dir.join("contacts.jsonl"), &self.population.profiles)?;
        let truth = serde_json::to_string_pretty(&self.truth).expect("ground truth serializes");
        let path = dir.join("ground_truth.json");
        std::fs::write(&path, truth + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn into_dataset(self) -> (Dataset, GroundTruth) {
        let ds = Dataset::assemble(self.messages, self.events, self.population.profiles).0;
        (ds, self.truth)
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    windows: usize,
    baseline: f64,
    uplift: f64,
}

struct ContactRun {
    messages: Vec<MessageRecord>,
    events: Vec<BehaviorEvent>,
    truth: BTreeMap<(Subcategory, usize), Acc>,
    message_truth: Vec<MessageTruth>,
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("mean is positive and finite").sample(rng) as u64
}

struct Msg {
    at: i64,
    strength: f64,
    /// Lift per tracked event type.
    lifts: Vec<f64>,
}

fn simulate_contact(cfg: &SimConfig, pop: &Population, event_types: &[EventType], i: usize, seed: u64) -> ContactRun {
    let mut rng = derive_rng(seed, "activity", i as u64);
    let spec = &cfg.strata[pop.stratum_index[i]];
    let profile = &pop.profiles[i];
    let contact = &profile.contact_id;
    let start = cfg.start_at;
    let end = start + cfg.horizon_days as i64 * DAY;
    let window = cfg.run.monitoring_secs();
    let rates: Vec<f64> = event_types.iter().map(|e| spec.rate_of(e)).collect();

    // cadence and send times
    let c = &cfg.cadence;
    let weekly = LogNormal::new(c.median_per_week.ln(), c.sigma)
        .expect("validated cadence")
        .sample(&mut rng)
        .min(c.max_per_week);
    let n_msgs = poisson(&mut rng, weekly / 7.0 * cfg.horizon_days as f64);
    let mut times: Vec<i64> = (0..n_msgs).map(|_| rng.random_range(start..end)).collect();
    times.sort_unstable();

    let noise = Normal::new(0.0, cfg.score.noise_sd).expect("validated noise");
    let mut msgs = Vec::with_capacity(times.len());
    let mut records = Vec::with_capacity(times.len());
    for (k, &at) in times.iter().enumerate() {
        let mut treatment = TreatmentVector::new();
        for (name, labels) in &cfg.catalog {
            let label = &labels[rng.random_range(0..labels.len())];
            treatment.insert(name.clone(), label.clone()).expect("catalog is validated");
        }
        let strength: f64 = rng.random();
        let score = (0.5 + cfg.score.alpha * (strength - 0.5) + noise.sample(&mut rng)).clamp(0.0, 1.0);
        let lifts = event_types
            .iter()
            .zip(&rates)
            .map(|(e, &b)| cfg.response.lift(spec.lift_of(e), strength, b))
            .collect();
        records.push(
            MessageRecord::new(
                format!("{contact}-m{k:04}"),
                contact.clone(),
                Timestamp::new(at).expect("simulated times are non-negative"),
                treatment,
                score,
            )
            .expect("generated message is valid"),
        );
        msgs.push(Msg { at, strength, lifts });
    }

    // piecewise-constant segments: (from, to, active message)
    let mut cuts: Vec<i64> = vec![start, end];
    for m in &msgs {
        cuts.push(m.at);
        if m.at + window < end {
            cuts.push(m.at + window);
        }
    }
    cuts.sort_unstable();
    cuts.dedup();
    let mut segments: Vec<(i64, i64, Option<usize>)> = Vec::with_capacity(cuts.len());
    let mut latest: Option<usize> = None;
    let mut next = 0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        while next < msgs.len() && msgs[next].at <= a {
            latest = Some(next);
            next += 1;
        }
        let active = latest.filter(|&m| a < msgs[m].at + window);
        segments.push((a, b, active));
    }

    let mut events: Vec<BehaviorEvent> = pop.seeded_events[i].clone();
    for &(a, b, active) in &segments {
        // outcomes of a message land strictly after it is sent
        let lo = if active.is_some_and(|m| msgs[m].at == a) { a + 1 } else { a };
        if lo >= b {
            continue;
        }
        for (e, et) in event_types.iter().enumerate() {
            let lift = active.map_or(0.0, |m| msgs[m].lifts[e]);
            let mean = rates[e] * (1.0 + lift) * (b - a) as f64 / DAY as f64;
            for _ in 0..poisson(&mut rng, mean) {
                events.push(BehaviorEvent {
                    contact_id: contact.clone(),
                    event_type: et.clone(),
                    occurred_at: Timestamp::new(rng.random_range(lo..b)).expect("non-negative"),
                });
            }
        }
    }
    events.sort_by(|x, y| x.occurred_at.cmp(&y.occurred_at).then_with(|| x.event_type.cmp(&y.event_type)));

    let mut truth: BTreeMap<(Subcategory, usize), Acc> = BTreeMap::new();
    let mut message_truth = Vec::with_capacity(msgs.len());
    let mut first_seg = 0;
    for (m, rec) in msgs.iter().zip(&records) {
        let stratum = classify_contact(profile, &events, rec.sent_at, &cfg.run).subcategory;
        let w_end = (m.at + window).min(end);
        while segments[first_seg].1 <= m.at {
            first_seg += 1;
        }
        for (e, &b) in rates.iter().enumerate() {
            let acc = truth.entry((stratum, e)).or_default();
            acc.windows += 1;
            for &(a, s_end, active) in &segments[first_seg..] {
                if a >= w_end {
                    break;
                }
                let len = (s_end.min(w_end) - a.max(m.at)) as f64 / DAY as f64;
                let lift = active.map_or(0.0, |k| msgs[k].lifts[e]);
                acc.baseline += b * len;
                acc.uplift += b * lift * len;
            }
        }
        message_truth.push(MessageTruth {
            message_id: rec.message_id.clone(),
            stratum,
            strength: m.strength,
            lifts: m.lifts.clone(),
        });
    }

    ContactRun {
        messages: records,
        events,
        truth,
        message_truth,
    }
}

/// Generates the population, then every contact's messages and events.
pub fn run_simulation(cfg: &SimConfig, seed: u64) -> Result<SimOutput> {
    let population = generate_population(cfg, seed)?;
    let event_types = cfg.event_types();
    let runs: Vec<ContactRun> = (0..cfg.n_contacts)
        .into_par_iter()
        .map(|i| simulate_contact(cfg, &population, &event_types, i, seed))
        .collect();

    let mut acc: BTreeMap<(Subcategory, usize), Acc> = BTreeMap::new();
    let mut messages = Vec::new();
    let mut events = Vec::new();
    let mut by_id: Vec<MessageTruth> = Vec::new();
    for run in runs {
        for (k, v) in run.truth {
            let a = acc.entry(k).or_default();
            a.windows += v.windows;
            a.baseline += v.baseline;
            a.uplift += v.uplift;
        }
        messages.extend(run.messages);
        events.extend(run.events);
        by_id.extend(run.message_truth);
    }
    let messages = MessageLog::from_records(messages)?;
    let events = EventLog::from_events(events);
    let mut order: std::collections::HashMap<String, MessageTruth> =
        by_id.into_iter().map(|t| (t.message_id.clone(), t)).collect();
    let message_truth = messages
        .records()
        .iter()
        .map(|r| order.remove(&r.message_id).expect("every message has a truth record"))
        .collect();

    let cells = acc
        .into_iter()
        .map(|((stratum, e), a)| {
            let total = a.baseline + a.uplift;
            TruthCell {
                stratum,
                event_type: event_types[e].clone(),
                windows: a.windows,
                expected_baseline: a.baseline,
                expected_uplift: a.uplift,
                share: if total > 0.0 { a.uplift / total } else { 0.0 },
            }
        })
        .collect();

    Ok(SimOutput {
        population,
        messages,
        events,
        truth: GroundTruth { cells },
        event_types,
        message_truth,
    })
}
