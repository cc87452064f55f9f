//! Loading, indexing and validating the message, event and contact logs.
//!
//! Messages and events are line-delimited JSON (one object per line, blank
//! lines ignored). Events may also be given as comma-separated text with a
//! header row naming `contact_id`, `event_type` and `occurred_at`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    derive_cluster_key, BehaviorEvent, ClusterKey, ContactId, ContactProfile, EventType,
    MessageRecord, Timestamp, TreatmentVector, DEFAULT_CONFIDENCE_SCORE,
};

/// Message log kept in canonical `(sent_at, message_id)` order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageLog {
    records: Vec<MessageRecord>,
    by_id: HashMap<String, usize>,
    by_contact: HashMap<ContactId, Vec<usize>>,
}

impl MessageLog {
    pub fn from_records(mut records: Vec<MessageRecord>) -> Result<Self> {
        records.sort_by(|a, b| {
            a.sent_at
                .cmp(&b.sent_at)
                .then_with(|| a.message_id.cmp(&b.message_id))
        });
        let mut by_id = HashMap::with_capacity(records.len());
        let mut by_contact: HashMap<ContactId, Vec<usize>> = HashMap::new();
        for (i, rec) in records.iter().enumerate() {
            rec.check()?;
            if by_id.insert(rec.message_id.clone(), i).is_some() {
                return Err(Error::DuplicateMessage(rec.message_id.clone()));
            }
            // records are already time-sorted, so each contact's list is too
            by_contact.entry(rec.contact_id.clone()).or_default().push(i);
        }
        Ok(MessageLog {
            records,
            by_id,
            by_contact,
        })
    }

    pub fn records(&self) -> &[MessageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn position(&self, message_id: &str) -> Option<usize> {
        self.by_id.get(message_id).copied()
    }

    pub fn get(&self, message_id: &str) -> Option<&MessageRecord> {
        self.position(message_id).map(|i| &self.records[i])
    }

    /// Positions (into [`records`](Self::records)) of a contact's messages, ascending by send time.
    pub fn positions_for(&self, contact: &ContactId) -> &[usize] {
        self.by_contact.get(contact).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn messages_for<'a>(&'a self, contact: &ContactId) -> impl Iterator<Item = &'a MessageRecord> + 'a {
        self.positions_for(contact).iter().map(move |&i| &self.records[i])
    }

    pub fn contacts(&self) -> impl Iterator<Item = &ContactId> {
        self.by_contact.keys()
    }
}

/// Event log sorted by `(contact_id, occurred_at, event_type)`, so that each
/// contact's history is one contiguous, time-sorted slice.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<BehaviorEvent>,
    by_contact: HashMap<ContactId, Range<usize>>,
}

impl EventLog {
    pub fn from_events(mut events: Vec<BehaviorEvent>) -> Self {
        events.sort_by(|a, b| {
            a.contact_id
                .cmp(&b.contact_id)
                .then_with(|| a.occurred_at.cmp(&b.occurred_at))
                .then_with(|| a.event_type.cmp(&b.event_type))
        });
        let mut by_contact = HashMap::new();
        let mut start = 0;
        for i in 1..=events.len() {
            if i == events.len() || events[i].contact_id != events[start].contact_id {
                by_contact.insert(events[start].contact_id.clone(), start..i);
                start = i;
            }
        }
        EventLog { events, by_contact }
    }

    pub fn events(&self) -> &[BehaviorEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// The contact's events, ascending by time.
    pub fn history(&self, contact: &ContactId) -> &[BehaviorEvent] {
        match self.by_contact.get(contact) {
            Some(r) => &self.events[r.clone()],
            None => &[],
        }
    }

    pub fn contacts(&self) -> impl Iterator<Item = &ContactId> {
        self.by_contact.keys()
    }
}

/// Resolved first-seen times for every contact known to a dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileBook {
    first_seen: HashMap<ContactId, Timestamp>,
}

impl ProfileBook {
    pub fn first_seen(&self, contact: &ContactId) -> Option<Timestamp> {
        self.first_seen.get(contact).copied()
    }

    pub fn profile(&self, contact: &ContactId) -> Option<ContactProfile> {
        self.first_seen(contact).map(|first_seen_at| ContactProfile {
            contact_id: contact.clone(),
            first_seen_at,
        })
    }

    pub fn len(&self) -> usize {
        self.first_seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_seen.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ContactId, Timestamp)> {
        self.first_seen.iter().map(|(c, t)| (c, *t))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationWarning {
    MissingProfile {
        contact_id: ContactId,
        inferred_first_seen: Timestamp,
    },
    DuplicateProfile {
        contact_id: ContactId,
    },
    MessageBeforeFirstSeen {
        contact_id: ContactId,
        message_id: String,
        sent_at: Timestamp,
        first_seen: Timestamp,
    },
    EventBeforeFirstSeen {
        contact_id: ContactId,
        event_type: EventType,
        occurred_at: Timestamp,
        first_seen: Timestamp,
    },
}

impl std::fmt::Display for ValidationWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValidationWarning::MissingProfile {
                contact_id,
                inferred_first_seen,
            } => write!(f, "contact {contact_id} has no profile; first seen inferred as {inferred_first_seen}"),
            ValidationWarning::DuplicateProfile { contact_id } => {
                write!(f, "contact {contact_id} has more than one profile; the earliest first-seen time is kept")
            }
            ValidationWarning::MessageBeforeFirstSeen {
                contact_id,
                message_id,
                sent_at,
                first_seen,
            } => write!(f, "message {message_id} to {contact_id} at {sent_at} precedes first seen {first_seen}"),
            ValidationWarning::EventBeforeFirstSeen {
                contact_id,
                event_type,
                occurred_at,
                first_seen,
            } => write!(f, "{event_type} by {contact_id} at {occurred_at} precedes first seen {first_seen}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetCounts {
    pub messages: usize,
    pub events: usize,
    pub profiles_supplied: usize,
    pub contacts_referenced: usize,
    pub profiles_inferred: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub counts: DatasetCounts,
    pub warnings: Vec<ValidationWarning>,
    /// Profiles synthesized for contacts that had activity but no profile.
    pub inferred: Vec<ContactProfile>,
}

/// Cross-checks the three logs. Never fails: problems become warnings.
pub fn validate_dataset(
    messages: &MessageLog,
    events: &EventLog,
    contacts: &[ContactProfile],
) -> ValidationReport {
    let mut warnings = Vec::new();

    let mut supplied: BTreeMap<&ContactId, Timestamp> = BTreeMap::new();
    for p in contacts {
        match supplied.get_mut(&p.contact_id) {
            Some(existing) => {
                warnings.push(ValidationWarning::DuplicateProfile {
                    contact_id: p.contact_id.clone(),
                });
                *existing = (*existing).min(p.first_seen_at);
            }
            None => {
                supplied.insert(&p.contact_id, p.first_seen_at);
            }
        }
    }

    // earliest observed activity per referenced contact
    let mut earliest: BTreeMap<&ContactId, Timestamp> = BTreeMap::new();
    for m in messages.records() {
        let e = earliest.entry(&m.contact_id).or_insert(m.sent_at);
        *e = (*e).min(m.sent_at);
    }
    for ev in events.events() {
        let e = earliest.entry(&ev.contact_id).or_insert(ev.occurred_at);
        *e = (*e).min(ev.occurred_at);
    }

    let mut inferred = Vec::new();
    for (&contact, &first) in &earliest {
        if !supplied.contains_key(contact) {
            warnings.push(ValidationWarning::MissingProfile {
                contact_id: contact.clone(),
                inferred_first_seen: first,
            });
            inferred.push(ContactProfile {
                contact_id: contact.clone(),
                first_seen_at: first,
            });
        }
    }

    for (&contact, &first_seen) in &supplied {
        for m in messages.messages_for(contact) {
            if m.sent_at < first_seen {
                warnings.push(ValidationWarning::MessageBeforeFirstSeen {
                    contact_id: contact.clone(),
                    message_id: m.message_id.clone(),
                    sent_at: m.sent_at,
                    first_seen,
                });
            }
        }
        for ev in events.history(contact) {
            if ev.occurred_at >= first_seen {
                break;
            }
            warnings.push(ValidationWarning::EventBeforeFirstSeen {
                contact_id: contact.clone(),
                event_type: ev.event_type.clone(),
                occurred_at: ev.occurred_at,
                first_seen,
            });
        }
    }

    ValidationReport {
        counts: DatasetCounts {
            messages: messages.len(),
            events: events.len(),
            profiles_supplied: contacts.len(),
            contacts_referenced: earliest.len(),
            profiles_inferred: inferred.len(),
        },
        warnings,
        inferred,
    }
}

/// Validated logs plus a first-seen time for every contact they mention.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub messages: MessageLog,
    pub events: EventLog,
    pub profiles: ProfileBook,
}

impl Dataset {
    /// Validates the logs and fills in missing profiles from earliest activity.
    pub fn assemble(
        messages: MessageLog,
        events: EventLog,
        contacts: Vec<ContactProfile>,
    ) -> (Dataset, ValidationReport) {
        let report = validate_dataset(&messages, &events, &contacts);
        let mut first_seen: HashMap<ContactId, Timestamp> = HashMap::new();
        for p in contacts.into_iter().chain(report.inferred.iter().cloned()) {
            let e = first_seen.entry(p.contact_id).or_insert(p.first_seen_at);
            *e = (*e).min(p.first_seen_at);
        }
        let ds = Dataset {
            messages,
            events,
            profiles: ProfileBook { first_seen },
        };
        (ds, report)
    }

    /// The contact's profile, falling back to earliest observed activity for
    /// datasets built without [`Dataset::assemble`].
    pub fn profile_for(&self, contact: &ContactId) -> ContactProfile {
        if let Some(p) = self.profiles.profile(contact) {
            return p;
        }
        let first_message = self.messages.messages_for(contact).map(|m| m.sent_at).next();
        let first_event = self.events.history(contact).first().map(|e| e.occurred_at);
        let first_seen_at = match (first_message, first_event) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => Timestamp::new(0).expect("zero is a valid timestamp"),
        };
        ContactProfile {
            contact_id: contact.clone(),
            first_seen_at,
        }
    }
}

#[derive(Deserialize)]
struct MessageLine {
    message_id: String,
    contact_id: ContactId,
    sent_at: Timestamp,
    treatment: TreatmentVector,
    #[serde(default)]
    confidence_score: Option<f64>,
    #[serde(default)]
    cluster_key: Option<String>,
}

impl MessageLine {
    fn into_record(self) -> Result<MessageRecord> {
        let cluster_key = match self.cluster_key {
            Some(k) => ClusterKey::from_raw(k)?,
            None => derive_cluster_key(&self.treatment)?,
        };
        let rec = MessageRecord {
            message_id: self.message_id,
            contact_id: self.contact_id,
            sent_at: self.sent_at,
            treatment: self.treatment,
            confidence_score: self.confidence_score.unwrap_or(DEFAULT_CONFIDENCE_SCORE),
            cluster_key,
        };
        rec.check()?;
        Ok(rec)
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))
}

fn parse_error(path: &Path, line: usize, message: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

/// Calls `f` on every non-blank line with its 1-based line number.
fn for_each_line<R: BufRead>(
    reader: R,
    path: &Path,
    mut f: impl FnMut(usize, &str) -> Result<()>,
) -> Result<()> {
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, &line)?;
    }
    Ok(())
}

/// Parses a line-delimited message log. `origin` is only used in diagnostics.
pub fn parse_messages<R: BufRead>(reader: R, origin: &Path) -> Result<MessageLog> {
    let mut records = Vec::new();
    for_each_line(reader, origin, |n, line| {
        let parsed: MessageLine =
            serde_json::from_str(line).map_err(|e| parse_error(origin, n, e))?;
        let rec = parsed.into_record().map_err(|e| match e {
            Error::DuplicateMessage(_) => e,
            other => parse_error(origin, n, other),
        })?;
        records.push(rec);
        Ok(())
    })?;
    MessageLog::from_records(records)
}

pub fn load_messages(path: &Path) -> Result<MessageLog> {
    parse_messages(open(path)?, path)
}

pub fn parse_events_jsonl<R: BufRead>(reader: R, origin: &Path) -> Result<EventLog> {
    let mut events = Vec::new();
    for_each_line(reader, origin, |n, line| {
        let ev: BehaviorEvent = serde_json::from_str(line).map_err(|e| parse_error(origin, n, e))?;
        events.push(ev);
        Ok(())
    })?;
    Ok(EventLog::from_events(events))
}

pub fn parse_events_csv<R: Read>(reader: R, origin: &Path) -> Result<EventLog> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut events = Vec::new();
    for (i, row) in rdr.deserialize::<BehaviorEvent>().enumerate() {
        // header is line 1
        let ev = row.map_err(|e| parse_error(origin, i + 2, e))?;
        events.push(ev);
    }
    Ok(EventLog::from_events(events))
}

/// Loads events; `.csv` files are read as comma-separated text with a header.
pub fn load_events(path: &Path) -> Result<EventLog> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        parse_events_csv(open(path)?, path)
    } else {
        parse_events_jsonl(open(path)?, path)
    }
}

pub fn parse_contacts<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<ContactProfile>> {
    let mut out = Vec::new();
    for_each_line(reader, origin, |n, line| {
        out.push(serde_json::from_str(line).map_err(|e| parse_error(origin, n, e))?);
        Ok(())
    })?;
    Ok(out)
}

pub fn load_contacts(path: &Path) -> Result<Vec<ContactProfile>> {
    parse_contacts(open(path)?, path)
}

/// Loads all three logs (contacts optional) and assembles a dataset.
pub fn load_dataset(
    messages: &Path,
    events: &Path,
    contacts: Option<&Path>,
) -> Result<(Dataset, ValidationReport)> {
    let (msgs, evs) = rayon::join(|| load_messages(messages), || load_events(events));
    let contacts = match contacts {
        Some(p) => load_contacts(p)?,
        None => Vec::new(),
    };
    Ok(Dataset::assemble(msgs?, evs?, contacts))
}

/// Writes one JSON object per line.
pub fn write_jsonl<'a, T, I>(path: &Path, items: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    use std::io::Write;
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(file);
    let werr = |e| Error::io(format!("writing {}", path.display()), e);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| werr(e.into()))?;
        w.write_all(b"\n").map_err(werr)?;
    }
    w.flush().map_err(werr)
}
