use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::SimConfig;
use super::derive_rng;
use crate::config::StrataThresholds;
use crate::error::{Error, Result};
use crate::model::{BehaviorEvent, ContactId, ContactProfile, EventType, Timestamp, DAY};
use crate::strata::{RecencyBucket, Subcategory};

/// Inclusive range of ages in seconds, measured back from the simulation start.
type AgeRange = (i64, i64);

/// How to seed one stratum so that it classifies as intended at the start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SeedPlan {
    first_seen: AgeRange,
    conversion: Option<AgeRange>,
    visit: Option<AgeRange>,
}

fn bucket_range(bucket: RecencyBucket, th: &StrataThresholds) -> Option<AgeRange> {
    let d = |days: u32| days as i64 * DAY;
    match bucket {
        RecencyBucket::Active => Some((1, d(th.active_days))),
        RecencyBucket::Recent => Some((d(th.active_days) + 1, d(th.recent_days))),
        RecencyBucket::Former => Some((d(th.recent_days) + 1, d(th.former_days))),
        RecencyBucket::None => None,
    }
}

/// Recency buckets a non-new contact needs for each classified stratum.
fn required_buckets(s: Subcategory) -> (RecencyBucket, RecencyBucket) {
    use RecencyBucket::{Active, Former, None, Recent};
    match s {
        Subcategory::ActivelyConverting => (Active, None),
        Subcategory::RecentlyConverted => (Recent, None),
        Subcategory::FormerlyConvertedActivelyLooking => (Former, Active),
        Subcategory::FormerlyConvertedRecentlyLooked => (Former, Recent),
        Subcategory::FormerlyConvertedFormerlyLooked => (Former, None),
        Subcategory::ActivelyLooking => (None, Active),
        Subcategory::RecentlyLooked => (None, Recent),
        Subcategory::FormerlyLooked => (None, Former),
        Subcategory::New | Subcategory::Unclassifiable => (None, None),
    }
}

fn narrowed(
    key: &str,
    what: &str,
    bucket: Option<AgeRange>,
    custom: Option<[f64; 2]>,
) -> Result<Option<AgeRange>> {
    match (bucket, custom) {
        (b, None) => Ok(b),
        (None, Some(_)) => Err(Error::config(format!(
            "stratum `{key}` cannot have a seeded {what} event"
        ))),
        (Some((lo, hi)), Some([a, b])) => {
            let (a, b) = ((a * DAY as f64).round() as i64, (b * DAY as f64).round() as i64);
            if a > b || a < lo || b > hi {
                return Err(Error::config(format!(
                    "{what} age range for stratum `{key}` must lie within {:.2}..={:.2} days",
                    lo as f64 / DAY as f64,
                    hi as f64 / DAY as f64
                )));
            }
            Ok(Some((a, b)))
        }
    }
}

/// One seeding plan per configured stratum, or a config error when a
/// stratum cannot be produced as requested.
pub(crate) fn plans(cfg: &SimConfig) -> Result<Vec<SeedPlan>> {
    let th = cfg.run.thresholds();
    let new_limit = th.new_days as i64 * DAY;
    cfg.strata
        .iter()
        .map(|spec| {
            let key = spec.subcategory.key();
            if spec.subcategory == Subcategory::New {
                let max_age = spec.first_seen_days_ago.unwrap_or(th.new_days as f64);
                let max_age = (max_age * DAY as f64).round() as i64;
                if max_age < 0 || max_age > new_limit {
                    return Err(Error::config(format!(
                        "new contacts must have been first seen at most {} days ago",
                        th.new_days
                    )));
                }
                if spec.conversion_age_days.is_some() || spec.visit_age_days.is_some() {
                    return Err(Error::config("new contacts take no seeded events"));
                }
                return Ok(SeedPlan {
                    first_seen: (0, max_age),
                    conversion: None,
                    visit: None,
                });
            }
            let (cb, vb) = required_buckets(spec.subcategory);
            let conversion = narrowed(key, "conversion", bucket_range(cb, &th), spec.conversion_age_days)?;
            let visit = narrowed(key, "visit", bucket_range(vb, &th), spec.visit_age_days)?;
            let age = (spec.first_seen_days_ago.unwrap_or(365.0) * DAY as f64).round() as i64;
            let oldest_event = conversion.iter().chain(&visit).map(|r| r.1).max().unwrap_or(0);
            if age <= new_limit || age < oldest_event {
                return Err(Error::config(format!(
                    "stratum `{key}` needs first_seen_days_ago above {} and at least as old as its seeded events",
                    th.new_days
                )));
            }
            Ok(SeedPlan {
                first_seen: (age, age),
                conversion,
                visit,
            })
        })
        .collect()
}

/// Contacts, their intended strata and the history seeded before the start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Population {
    pub start_at: Timestamp,
    pub profiles: Vec<ContactProfile>,
    /// Index into the config's strata for each contact.
    pub stratum_index: Vec<usize>,
    pub intended: Vec<Subcategory>,
    /// Per contact, time-sorted.
    pub seeded_events: Vec<Vec<BehaviorEvent>>,
}

pub fn contact_name(i: usize) -> String {
    format!("c{i:07}")
}

fn draw_age(rng: &mut ChaCha8Rng, (lo, hi): AgeRange) -> i64 {
    rng.random_range(lo..=hi)
}

fn pick_stratum(rng: &mut ChaCha8Rng, cfg: &SimConfig) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, s) in cfg.strata.iter().enumerate() {
        acc += s.share;
        if u < acc {
            return i;
        }
    }
    // rounding slack lands on the last stratum with a positive share
    cfg.strata.iter().rposition(|s| s.share > 0.0).unwrap_or(0)
}

/// Draws every contact's stratum, first-seen time and seeded history.
///
/// Every contact classifies into its intended stratum at the start time.
pub fn generate_population(cfg: &SimConfig, seed: u64) -> Result<Population> {
    cfg.validate()?;
    let plans = plans(cfg)?;
    let start = cfg.start_at;
    let (conversion, visit) = (&cfg.run.conversion_event, &cfg.run.visit_event);
    let drawn: Vec<(ContactProfile, usize, Vec<BehaviorEvent>)> = (0..cfg.n_contacts)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(seed, "population", i as u64);
            let k = pick_stratum(&mut rng, cfg);
            let plan = plans[k];
            let contact = ContactId::new(contact_name(i)).expect("generated ids are non-empty");
            let at = |age: i64| Timestamp::new(start - age).map_err(|_| {
                Error::config("start_at is too early for the configured contact ages")
            });
            let first_seen = at(draw_age(&mut rng, plan.first_seen))?;
            let mut seeded = Vec::new();
            let mut seed_event = |kind: &EventType, range: Option<AgeRange>, rng: &mut ChaCha8Rng| -> Result<()> {
                if let Some(r) = range {
                    seeded.push(BehaviorEvent {
                        contact_id: contact.clone(),
                        event_type: kind.clone(),
                        occurred_at: at(draw_age(rng, r))?,
                    });
                }
                Ok(())
            };
            seed_event(conversion, plan.conversion, &mut rng)?;
            seed_event(visit, plan.visit, &mut rng)?;
            seeded.sort_by_key(|e| e.occurred_at);
            let profile = ContactProfile {
                contact_id: contact,
                first_seen_at: first_seen,
            };
            Ok((profile, k, seeded))
        })
        .collect::<Result<_>>()?;

    let mut pop = Population {
        start_at: Timestamp::new(start)?,
        profiles: Vec::with_capacity(drawn.len()),
        stratum_index: Vec::with_capacity(drawn.len()),
        intended: Vec::with_capacity(drawn.len()),
        seeded_events: Vec::with_capacity(drawn.len()),
    };
    for (profile, k, seeded) in drawn {
        pop.profiles.push(profile);
        pop.stratum_index.push(k);
        pop.intended.push(cfg.strata[k].subcategory);
        pop.seeded_events.push(seeded);
    }
    Ok(pop)
}
