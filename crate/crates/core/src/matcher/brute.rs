use std::collections::BTreeMap;

use super::{Candidate, CandidateSet, ConstraintTrace};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::model::{ContactId, MessageRecord};
use crate::strata::classify_contact;

#[derive(Default)]
struct Seen<'a> {
    qualifying: Option<&'a MessageRecord>,
    in_exclusion_band: bool,
}

/// Reference implementation of candidate search: one pass over every message
/// in the log and a fresh classification of every surviving contact.
/// Quadratic overall; only meant for small logs and for checking [`super::MatchIndex`].
pub fn brute_force_candidates(message_id: &str, dataset: &Dataset, config: &RunConfig) -> Result<CandidateSet> {
    config.validate()?;
    let test = dataset
        .messages
        .get(message_id)
        .ok_or_else(|| Error::UnknownMessage(message_id.to_string()))?;
    let t = test.sent_at.secs();
    let (w1_start, w1_end) = config.candidate_window_secs();
    let excl = config.exclusion_secs();

    let mut seen: BTreeMap<&ContactId, Seen> = BTreeMap::new();
    for m in dataset.messages.records() {
        if m.contact_id == test.contact_id {
            continue;
        }
        let at = m.sent_at.secs();
        let entry = seen.entry(&m.contact_id).or_default();
        if at >= t + w1_start && at < t + w1_end && m.cluster_key == test.cluster_key {
            let later = entry
                .qualifying
                .map_or(true, |q| (q.sent_at, &q.message_id) < (m.sent_at, &m.message_id));
            if later {
                entry.qualifying = Some(m);
            }
        }
        if at >= t - excl && at <= t + excl {
            entry.in_exclusion_band = true;
        }
    }

    let classify = |c: &ContactId| {
        classify_contact(&dataset.profile_for(c), dataset.events.history(c), test.sent_at, config)
    };
    let test_stratum = classify(&test.contact_id);

    let mut trace = ConstraintTrace::default();
    let mut candidates = Vec::new();
    for (contact, s) in seen {
        let Some(q) = s.qualifying else { continue };
        trace.pool += 1;
        if s.in_exclusion_band {
            trace.excluded_by_exclusion_band += 1;
            continue;
        }
        let stratum = classify(contact);
        if !test_stratum.subcategory.is_classified() || stratum.subcategory != test_stratum.subcategory {
            trace.excluded_by_stratum += 1;
            continue;
        }
        candidates.push(Candidate {
            contact_id: contact.clone(),
            qualifying_message_id: q.message_id.clone(),
        });
    }

    Ok(CandidateSet {
        test_message_id: test.message_id.clone(),
        test_contact_id: test.contact_id.clone(),
        sent_at: test.sent_at,
        cluster_key: test.cluster_key.clone(),
        stratum: test_stratum,
        candidates,
        trace,
    })
}
