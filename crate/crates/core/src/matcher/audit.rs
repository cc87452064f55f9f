use std::collections::HashMap;

use serde::Serialize;

use super::{LedgerEntry, MatchLedger, UnmatchedReason};
use crate::ingest::Dataset;
use crate::strata::classify_contact;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Ledger refers to a message that is not in the log.
    UnknownTestMessage,
    /// A test message has no ledger entry, or more than one.
    NotPartitioned,
    /// Virtual send time, test contact or cluster key disagree with the test message.
    RecordMismatch,
    SelfMatch,
    QualifyingWindow,
    ExclusionBand,
    Cluster,
    Stratum,
    Reason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub test_message_id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

/// Re-checks every ledger entry against the raw logs, without the match index.
///
/// An empty result means every assignment satisfies the window, exclusion,
/// cluster and stratum constraints and that the ledger partitions the test
/// messages.
pub fn audit_ledger(ledger: &MatchLedger, dataset: &Dataset) -> Vec<Violation> {
    let config = &ledger.config;
    let (w1_start, w1_end) = config.candidate_window_secs();
    let excl = config.exclusion_secs();
    let mut out = Vec::new();
    let mut flag = |id: &str, kind, detail: String| {
        out.push(Violation {
            test_message_id: id.to_string(),
            kind,
            detail,
        })
    };

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for entry in &ledger.entries {
        *seen.entry(entry.test_message_id()).or_default() += 1;
    }
    for rec in dataset.messages.records() {
        match seen.get(rec.message_id.as_str()) {
            Some(1) => {}
            Some(n) => flag(&rec.message_id, ViolationKind::NotPartitioned, format!("{n} ledger entries")),
            None => flag(&rec.message_id, ViolationKind::NotPartitioned, "no ledger entry".into()),
        }
    }

    for entry in &ledger.entries {
        let id = entry.test_message_id();
        let Some(test) = dataset.messages.get(id) else {
            flag(id, ViolationKind::UnknownTestMessage, String::new());
            continue;
        };
        let t = test.sent_at.secs();
        let test_stratum = classify_contact(
            &dataset.profile_for(&test.contact_id),
            dataset.events.history(&test.contact_id),
            test.sent_at,
            config,
        )
        .subcategory;
        if entry.test_contact_id() != &test.contact_id || entry.sent_at() != test.sent_at {
            flag(id, ViolationKind::RecordMismatch, "test contact or send time differs".into());
        }
        if entry.stratum() != test_stratum {
            flag(
                id,
                ViolationKind::Stratum,
                format!("ledger says {:?}, test contact is {:?}", entry.stratum(), test_stratum),
            );
        }

        let a = match entry {
            LedgerEntry::Unmatched(u) => {
                let expect_unclassifiable = !test_stratum.is_classified();
                if (u.reason == UnmatchedReason::UnclassifiableStratum) != expect_unclassifiable {
                    flag(id, ViolationKind::Reason, format!("{:?} for stratum {:?}", u.reason, test_stratum));
                }
                continue;
            }
            LedgerEntry::Matched(a) => a,
        };

        if a.cluster_key != test.cluster_key {
            flag(id, ViolationKind::RecordMismatch, "cluster key differs from test message".into());
        }
        if a.control_contact_id == test.contact_id {
            flag(id, ViolationKind::SelfMatch, String::new());
        }

        match dataset.messages.get(&a.qualifying_message_id) {
            None => flag(id, ViolationKind::QualifyingWindow, "qualifying message not in log".into()),
            Some(q) => {
                let at = q.sent_at.secs();
                if q.contact_id != a.control_contact_id || at < t + w1_start || at >= t + w1_end {
                    flag(
                        id,
                        ViolationKind::QualifyingWindow,
                        format!("qualifying message {} at {} outside window", q.message_id, at),
                    );
                }
                if q.cluster_key != test.cluster_key {
                    flag(id, ViolationKind::Cluster, format!("{} vs {}", q.cluster_key, test.cluster_key));
                }
            }
        }

        for m in dataset.messages.messages_for(&a.control_contact_id) {
            let at = m.sent_at.secs();
            if at >= t - excl && at <= t + excl {
                flag(id, ViolationKind::ExclusionBand, format!("control messaged at {at}"));
            }
        }

        let control_stratum = classify_contact(
            &dataset.profile_for(&a.control_contact_id),
            dataset.events.history(&a.control_contact_id),
            test.sent_at,
            config,
        )
        .subcategory;
        if !test_stratum.is_classified() || control_stratum != test_stratum {
            flag(
                id,
                ViolationKind::Stratum,
                format!("test {:?} vs control {:?}", test_stratum, control_stratum),
            );
        }
    }
    out
}
