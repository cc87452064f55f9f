use std::collections::HashMap;

use rayon::prelude::*;

use super::{
    draw_index, Candidate, CandidateSet, ConstraintTrace, ControlAssignment, LedgerEntry,
    Unmatched, UnmatchedReason,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::model::{ClusterKey, ContactId, Timestamp, DAY};
use crate::strata::{classify_at, ActivityStratum};

#[derive(Debug, Clone, Copy)]
struct Posting {
    at: i64,
    contact: u32,
    message: u32,
}

/// Compressed per-contact rows.
#[derive(Debug, Default)]
struct Rows<T> {
    offsets: Vec<usize>,
    values: Vec<T>,
}

impl<T> Rows<T> {
    fn from_nested(nested: Vec<Vec<T>>) -> Self {
        let mut offsets = Vec::with_capacity(nested.len() + 1);
        offsets.push(0);
        let total = nested.iter().map(Vec::len).sum();
        let mut values = Vec::with_capacity(total);
        for row in nested {
            values.extend(row);
            offsets.push(values.len());
        }
        Rows { offsets, values }
    }

    fn row(&self, i: u32) -> &[T] {
        let i = i as usize;
        &self.values[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Per-thread scratch space used to deduplicate contacts while scanning postings.
pub struct Scratch {
    generation: u32,
    stamp: Vec<u32>,
    accepted: Vec<bool>,
    slot: Vec<u32>,
    found: Vec<(u32, u32)>,
}

/// Read-only lookup structures for candidate search.
///
/// * contacts are interned in id order, so numeric order is canonical order;
/// * every cluster key owns a time-sorted posting list of its messages;
/// * every contact owns its sorted send times and a piecewise-constant
///   stratum timeline, so stratum lookups are a single binary search.
pub struct MatchIndex<'a> {
    dataset: &'a Dataset,
    config: RunConfig,
    contacts: Vec<ContactId>,
    contact_of: HashMap<ContactId, u32>,
    message_contact: Vec<u32>,
    message_cluster: Vec<u32>,
    send_times: Rows<i64>,
    timelines: Rows<(i64, ActivityStratum)>,
    postings: Vec<Vec<Posting>>,
}

impl<'a> MatchIndex<'a> {
    pub fn build(dataset: &'a Dataset, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let records = dataset.messages.records();
        if records.len() >= u32::MAX as usize {
            return Err(Error::ContractViolation("too many messages to index".into()));
        }

        let mut contacts: Vec<ContactId> = dataset
            .messages
            .contacts()
            .chain(dataset.events.contacts())
            .cloned()
            .collect();
        contacts.sort_unstable();
        contacts.dedup();
        let contact_of: HashMap<ContactId, u32> = contacts
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i as u32))
            .collect();

        let mut cluster_of: HashMap<&ClusterKey, u32> = HashMap::new();
        let mut postings: Vec<Vec<Posting>> = Vec::new();
        let mut message_contact = Vec::with_capacity(records.len());
        let mut message_cluster = Vec::with_capacity(records.len());
        let mut nested_sends: Vec<Vec<i64>> = vec![Vec::new(); contacts.len()];
        // records are in (sent_at, message_id) order, so postings come out sorted too
        for (pos, rec) in records.iter().enumerate() {
            let c = contact_of[&rec.contact_id];
            let next = cluster_of.len() as u32;
            let k = *cluster_of.entry(&rec.cluster_key).or_insert(next);
            if k as usize == postings.len() {
                postings.push(Vec::new());
            }
            postings[k as usize].push(Posting {
                at: rec.sent_at.secs(),
                contact: c,
                message: pos as u32,
            });
            message_contact.push(c);
            message_cluster.push(k);
            nested_sends[c as usize].push(rec.sent_at.secs());
        }

        let nested_timelines: Vec<Vec<(i64, ActivityStratum)>> = contacts
            .par_iter()
            .map(|c| stratum_timeline(dataset, config, c))
            .collect();

        Ok(MatchIndex {
            dataset,
            config: config.clone(),
            contacts,
            contact_of,
            message_contact,
            message_cluster,
            send_times: Rows::from_nested(nested_sends),
            timelines: Rows::from_nested(nested_timelines),
            postings,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Stratum of an indexed contact at `at`.
    pub fn stratum_at(&self, contact: &ContactId, at: Timestamp) -> Option<ActivityStratum> {
        self.contact_of.get(contact).map(|&c| self.stratum_of(c, at.secs()))
    }

    fn stratum_of(&self, contact: u32, at: i64) -> ActivityStratum {
        let tl = self.timelines.row(contact);
        let i = tl.partition_point(|(start, _)| *start <= at);
        // every timeline starts at 0 and timestamps are non-negative
        tl[i - 1].1
    }

    fn messaged_within(&self, contact: u32, lo: i64, hi: i64) -> bool {
        let sends = self.send_times.row(contact);
        let i = sends.partition_point(|&t| t < lo);
        i < sends.len() && sends[i] <= hi
    }

    pub(super) fn scratch(&self) -> Scratch {
        let n = self.contacts.len();
        Scratch {
            generation: 0,
            stamp: vec![0; n],
            accepted: vec![false; n],
            slot: vec![0; n],
            found: Vec::new(),
        }
    }

    /// Enumerates candidates for the message at `pos` into `scratch.found`
    /// as unsorted `(contact, qualifying message)` pairs.
    fn scan(&self, pos: usize, scratch: &mut Scratch) -> (ActivityStratum, ConstraintTrace) {
        let rec = &self.dataset.messages.records()[pos];
        let t = rec.sent_at.secs();
        let test_contact = self.message_contact[pos];
        let test_stratum = self.stratum_of(test_contact, t);
        let (w1_start, w1_end) = self.config.candidate_window_secs();
        let (w1_lo, w1_hi) = (t + w1_start, t + w1_end);
        let excl = self.config.exclusion_secs();

        scratch.found.clear();
        scratch.generation = scratch.generation.wrapping_add(1);
        if scratch.generation == 0 {
            scratch.stamp.iter_mut().for_each(|s| *s = 0);
            scratch.generation = 1;
        }
        let gen = scratch.generation;
        let mut trace = ConstraintTrace::default();

        let list = &self.postings[self.message_cluster[pos] as usize];
        let start = list.partition_point(|p| p.at < w1_lo);
        for p in &list[start..] {
            if p.at >= w1_hi {
                break;
            }
            let c = p.contact as usize;
            if p.contact == test_contact {
                continue;
            }
            if scratch.stamp[c] == gen {
                if scratch.accepted[c] {
                    // later posting: keep the most recent qualifying message
                    scratch.found[scratch.slot[c] as usize].1 = p.message;
                }
                continue;
            }
            scratch.stamp[c] = gen;
            trace.pool += 1;
            let ok = if self.messaged_within(p.contact, t - excl, t + excl) {
                trace.excluded_by_exclusion_band += 1;
                false
            } else if !test_stratum.subcategory.is_classified()
                || self.stratum_of(p.contact, t).subcategory != test_stratum.subcategory
            {
                trace.excluded_by_stratum += 1;
                false
            } else {
                true
            };
            scratch.accepted[c] = ok;
            if ok {
                scratch.slot[c] = scratch.found.len() as u32;
                scratch.found.push((p.contact, p.message));
            }
        }
        (test_stratum, trace)
    }

    /// All viable controls for one test message.
    pub fn find_candidates(&self, message_id: &str) -> Result<CandidateSet> {
        let pos = self
            .dataset
            .messages
            .position(message_id)
            .ok_or_else(|| Error::UnknownMessage(message_id.to_string()))?;
        let mut scratch = self.scratch();
        let (stratum, trace) = self.scan(pos, &mut scratch);
        scratch.found.sort_unstable_by_key(|&(c, _)| c);
        let records = self.dataset.messages.records();
        let rec = &records[pos];
        Ok(CandidateSet {
            test_message_id: rec.message_id.clone(),
            test_contact_id: rec.contact_id.clone(),
            sent_at: rec.sent_at,
            cluster_key: rec.cluster_key.clone(),
            stratum,
            candidates: scratch
                .found
                .iter()
                .map(|&(c, m)| Candidate {
                    contact_id: self.contacts[c as usize].clone(),
                    qualifying_message_id: records[m as usize].message_id.clone(),
                })
                .collect(),
            trace,
        })
    }

    /// Same outcome as `select_control(find_candidates(..))` without
    /// materializing the sorted candidate list.
    pub(super) fn match_one(&self, pos: usize, seed: u64, scratch: &mut Scratch) -> LedgerEntry {
        let (stratum, _) = self.scan(pos, scratch);
        let records = self.dataset.messages.records();
        let rec = &records[pos];
        let unmatched = |reason| {
            LedgerEntry::Unmatched(Unmatched {
                test_message_id: rec.message_id.clone(),
                test_contact_id: rec.contact_id.clone(),
                sent_at: rec.sent_at,
                stratum: stratum.subcategory,
                reason,
            })
        };
        if !stratum.subcategory.is_classified() {
            return unmatched(UnmatchedReason::UnclassifiableStratum);
        }
        let n = scratch.found.len();
        if n == 0 {
            return unmatched(UnmatchedReason::NoCandidates);
        }
        let k = draw_index(seed, &rec.message_id, n);
        let (_, &mut (c, m), _) = scratch.found.select_nth_unstable_by_key(k, |&(c, _)| c);
        LedgerEntry::Matched(ControlAssignment {
            test_message_id: rec.message_id.clone(),
            test_contact_id: rec.contact_id.clone(),
            control_contact_id: self.contacts[c as usize].clone(),
            qualifying_message_id: records[m as usize].message_id.clone(),
            virtual_sent_at: rec.sent_at,
            stratum: stratum.subcategory,
            cluster_key: rec.cluster_key.clone(),
            candidate_count: n,
        })
    }
}

/// Piecewise-constant stratum of one contact as `(start, stratum)` steps.
///
/// The stratum can only change at an event of a tracked kind, one second
/// after a recency threshold elapses from such an event, or one second after
/// the contact stops being new.
fn stratum_timeline(dataset: &Dataset, config: &RunConfig, contact: &ContactId) -> Vec<(i64, ActivityStratum)> {
    let th = config.thresholds();
    let first_seen = dataset.profile_for(contact).first_seen_at;
    let history = dataset.events.history(contact);
    let conversions: Vec<i64> = history
        .iter()
        .filter(|e| e.event_type == config.conversion_event)
        .map(|e| e.occurred_at.secs())
        .collect();
    let visits: Vec<i64> = history
        .iter()
        .filter(|e| e.event_type == config.visit_event)
        .map(|e| e.occurred_at.secs())
        .collect();

    let edges = [th.active_days, th.recent_days, th.former_days].map(|d| d as i64 * DAY + 1);
    let mut points = Vec::with_capacity(2 + 4 * (conversions.len() + visits.len()));
    points.push(0);
    points.push(first_seen.secs() + th.new_days as i64 * DAY + 1);
    for &t in conversions.iter().chain(&visits) {
        points.push(t);
        points.extend(edges.iter().map(|e| t + e));
    }
    points.sort_unstable();
    points.dedup();

    let (mut ci, mut vi) = (0, 0);
    let mut timeline: Vec<(i64, ActivityStratum)> = Vec::new();
    for at in points {
        while ci < conversions.len() && conversions[ci] <= at {
            ci += 1;
        }
        while vi < visits.len() && visits[vi] <= at {
            vi += 1;
        }
        let last = |times: &[i64], i: usize| (i > 0).then(|| Timestamp::new(times[i - 1]).expect("stored timestamps are valid"));
        let stratum = classify_at(
            first_seen,
            last(&conversions, ci),
            last(&visits, vi),
            Timestamp::new(at).expect("timeline points are non-negative"),
            &th,
        );
        if timeline.last().map_or(true, |(_, s)| *s != stratum) {
            timeline.push((at, stratum));
        }
    }
    timeline
}
