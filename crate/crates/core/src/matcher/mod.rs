//! Per-message synthetic control selection by coarsened exact matching.
//!
//! For a test message sent at `t`, a contact `c` is a viable control iff
//!
//! * (W1) `c` received a message in `[t - start, t - end)`,
//! * (W2) `c` received no message in the closed band `[t - excl, t + excl]`,
//! * (C)  one of those W1 messages has the test message's cluster key,
//! * (S)  `c` and the test contact are in the same classified stratum at `t`.
//!
//! One candidate is then drawn uniformly, with a generator derived from the
//! global seed and the test message id, so results do not depend on
//! evaluation order or thread count.

mod audit;
mod brute;
mod index;

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::model::{ClusterKey, ContactId, Timestamp};
use crate::strata::{ActivityStratum, Subcategory};

pub use audit::{audit_ledger, Violation, ViolationKind};
pub use brute::brute_force_candidates;
pub use index::MatchIndex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Candidate {
    pub contact_id: ContactId,
    /// Latest (by send time, then id) same-cluster message in the qualifying window.
    pub qualifying_message_id: String,
}

/// How many contacts each constraint removed. `pool` counts distinct
/// contacts with a same-cluster message in the qualifying window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConstraintTrace {
    pub pool: usize,
    pub excluded_by_exclusion_band: usize,
    pub excluded_by_stratum: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSet {
    pub test_message_id: String,
    pub test_contact_id: ContactId,
    pub sent_at: Timestamp,
    pub cluster_key: ClusterKey,
    pub stratum: ActivityStratum,
    /// Sorted by contact id.
    pub candidates: Vec<Candidate>,
    pub trace: ConstraintTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnmatchedReason {
    NoCandidates,
    UnclassifiableStratum,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlAssignment {
    pub test_message_id: String,
    pub test_contact_id: ContactId,
    pub control_contact_id: ContactId,
    pub qualifying_message_id: String,
    /// Always the test message's send time; the control message is never sent.
    pub virtual_sent_at: Timestamp,
    pub stratum: Subcategory,
    pub cluster_key: ClusterKey,
    pub candidate_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unmatched {
    pub test_message_id: String,
    pub test_contact_id: ContactId,
    pub sent_at: Timestamp,
    pub stratum: Subcategory,
    pub reason: UnmatchedReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LedgerEntry {
    Matched(ControlAssignment),
    Unmatched(Unmatched),
}

impl LedgerEntry {
    pub fn test_message_id(&self) -> &str {
        match self {
            LedgerEntry::Matched(a) => &a.test_message_id,
            LedgerEntry::Unmatched(u) => &u.test_message_id,
        }
    }

    pub fn test_contact_id(&self) -> &ContactId {
        match self {
            LedgerEntry::Matched(a) => &a.test_contact_id,
            LedgerEntry::Unmatched(u) => &u.test_contact_id,
        }
    }

    pub fn sent_at(&self) -> Timestamp {
        match self {
            LedgerEntry::Matched(a) => a.virtual_sent_at,
            LedgerEntry::Unmatched(u) => u.sent_at,
        }
    }

    pub fn stratum(&self) -> Subcategory {
        match self {
            LedgerEntry::Matched(a) => a.stratum,
            LedgerEntry::Unmatched(u) => u.stratum,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Control(ControlAssignment),
    NoMatch(UnmatchedReason),
}

/// One outcome per test message, in canonical `(sent_at, message_id)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchLedger {
    pub seed: u64,
    pub config: RunConfig,
    pub entries: Vec<LedgerEntry>,
}

#[derive(Serialize, Deserialize)]
struct LedgerHeader {
    kind: String,
    seed: u64,
    config: RunConfig,
}

impl MatchLedger {
    pub fn matched(&self) -> impl Iterator<Item = &ControlAssignment> {
        self.entries.iter().filter_map(|e| match e {
            LedgerEntry::Matched(a) => Some(a),
            LedgerEntry::Unmatched(_) => None,
        })
    }

    pub fn unmatched(&self) -> impl Iterator<Item = &Unmatched> {
        self.entries.iter().filter_map(|e| match e {
            LedgerEntry::Unmatched(u) => Some(u),
            LedgerEntry::Matched(_) => None,
        })
    }

    pub fn matched_count(&self) -> usize {
        self.matched().count()
    }

    /// Line-delimited form: a header line with seed and config, then one line per entry.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = LedgerHeader {
            kind: "header".into(),
            seed: self.seed,
            config: self.config.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read_from<R: BufRead>(reader: R, origin: &Path) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut header: Option<LedgerHeader> = None;
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(format!("reading {}", origin.display()), e))?;
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                let h: LedgerHeader =
                    serde_json::from_str(&line).map_err(|e| perr(i + 1, format!("bad ledger header: {e}")))?;
                if h.kind != "header" {
                    return Err(perr(i + 1, "first ledger line must be the header".into()));
                }
                header = Some(h);
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| perr(i + 1, e.to_string()))?);
        }
        let header = header.ok_or_else(|| perr(1, "ledger is missing its header line".into()))?;
        header.config.validate()?;
        Ok(MatchLedger {
            seed: header.seed,
            config: header.config,
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Self::read_from(std::io::BufReader::new(file), path)
    }
}

/// Independent generator for one test message, derived from the global seed.
pub fn message_rng(seed: u64, message_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"dynctl/select/v1");
    h.update(seed.to_le_bytes());
    h.update(message_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Index of the chosen candidate among `n` canonically ordered ones.
fn draw_index(seed: u64, message_id: &str, n: usize) -> usize {
    debug_assert!(n > 0);
    message_rng(seed, message_id).random_range(0..n)
}

/// Uniformly picks one control from a candidate set.
pub fn select_control(cands: &CandidateSet, seed: u64) -> Selection {
    if !cands.stratum.subcategory.is_classified() {
        return Selection::NoMatch(UnmatchedReason::UnclassifiableStratum);
    }
    if cands.candidates.is_empty() {
        return Selection::NoMatch(UnmatchedReason::NoCandidates);
    }
    let pick = &cands.candidates[draw_index(seed, &cands.test_message_id, cands.candidates.len())];
    Selection::Control(ControlAssignment {
        test_message_id: cands.test_message_id.clone(),
        test_contact_id: cands.test_contact_id.clone(),
        control_contact_id: pick.contact_id.clone(),
        qualifying_message_id: pick.qualifying_message_id.clone(),
        virtual_sent_at: cands.sent_at,
        stratum: cands.stratum.subcategory,
        cluster_key: cands.cluster_key.clone(),
        candidate_count: cands.candidates.len(),
    })
}

/// Convenience wrapper: builds an index and looks up one message.
pub fn find_candidates(message_id: &str, dataset: &Dataset, config: &RunConfig) -> Result<CandidateSet> {
    MatchIndex::build(dataset, config)?.find_candidates(message_id)
}

/// Matches every message in the dataset, using the ambient rayon pool.
pub fn match_all(dataset: &Dataset, config: &RunConfig, seed: u64) -> Result<MatchLedger> {
    config.validate()?;
    let index = MatchIndex::build(dataset, config)?;
    let entries: Vec<LedgerEntry> = (0..dataset.messages.len())
        .into_par_iter()
        .map_init(
            || index.scratch(),
            |scratch, pos| index.match_one(pos, seed, scratch),
        )
        .collect();
    Ok(MatchLedger {
        seed,
        config: config.clone(),
        entries,
    })
}

/// [`match_all`] on a dedicated pool of `threads` workers.
pub fn match_all_with_threads(
    dataset: &Dataset,
    config: &RunConfig,
    seed: u64,
    threads: usize,
) -> Result<MatchLedger> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| match_all(dataset, config, seed))
}
