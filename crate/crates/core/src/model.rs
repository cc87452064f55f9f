//! Shared domain vocabulary: contacts, messages, behavior events and the
//! treatment clusters messages are matched on.
//!
//! All time arithmetic is done in integer seconds since the Unix epoch; a
//! "day" is always [`DAY`] seconds and an "hour" [`HOUR`] seconds.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

pub const HOUR: i64 = 3_600;
pub const DAY: i64 = 86_400;

/// Score assigned to a message whose log record carries none.
pub const DEFAULT_CONFIDENCE_SCORE: f64 = 0.5;

/// Opaque, persistent contact identifier.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ContactId(Arc<str>);

impl ContactId {
    pub fn new(id: impl AsRef<str>) -> Result<Self> {
        let id = id.as_ref();
        if id.is_empty() {
            return Err(Error::ContractViolation("contact id must be non-empty".into()));
        }
        Ok(ContactId(Arc::from(id)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ContactId {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        ContactId::new(value)
    }
}

impl From<ContactId> for String {
    fn from(value: ContactId) -> Self {
        value.0.to_string()
    }
}

impl fmt::Debug for ContactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContactId({})", self.0)
    }
}

impl fmt::Display for ContactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Seconds since the Unix epoch (UTC). Never negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Timestamp(i64);

impl Timestamp {
    pub fn new(secs: i64) -> Result<Self> {
        if secs < 0 {
            return Err(Error::ContractViolation(format!(
                "timestamp must be non-negative, got {secs}"
            )));
        }
        Ok(Timestamp(secs))
    }

    pub const fn secs(self) -> i64 {
        self.0
    }

    /// Shifted by `delta` seconds, saturating at zero.
    pub fn offset(self, delta: i64) -> Timestamp {
        Timestamp(self.0.saturating_add(delta).max(0))
    }
}

impl TryFrom<i64> for Timestamp {
    type Error = Error;
    fn try_from(value: i64) -> Result<Self> {
        Timestamp::new(value)
    }
}

impl From<Timestamp> for i64 {
    fn from(value: Timestamp) -> Self {
        value.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Attribute name -> categorical label for every treatment packaged in a message.
///
/// Deserialization rejects duplicate attribute names and empty labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize)]
pub struct TreatmentVector(BTreeMap<String, String>);

impl TreatmentVector {
    pub fn new() -> Self {
        TreatmentVector(BTreeMap::new())
    }

    /// Adds an attribute, rejecting empty names or labels and repeated names.
    pub fn insert(&mut self, name: impl Into<String>, label: impl Into<String>) -> Result<()> {
        let name = name.into();
        let label = label.into();
        if name.is_empty() {
            return Err(Error::InvalidTreatment("attribute name is empty".into()));
        }
        if label.is_empty() {
            return Err(Error::InvalidTreatment(format!(
                "attribute `{name}` has an empty label"
            )));
        }
        if self.0.contains_key(&name) {
            return Err(Error::InvalidTreatment(format!(
                "attribute `{name}` appears more than once"
            )));
        }
        self.0.insert(name, label);
        Ok(())
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut tv = TreatmentVector::new();
        for (k, v) in pairs {
            tv.insert(k, v)?;
        }
        Ok(tv)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }
}

impl<'de> Deserialize<'de> for TreatmentVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct TvVisitor;

        impl<'de> Visitor<'de> for TvVisitor {
            type Value = TreatmentVector;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a flat map of attribute name to label")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut tv = TreatmentVector::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    tv.insert(k, v).map_err(serde::de::Error::custom)?;
                }
                Ok(tv)
            }
        }

        deserializer.deserialize_map(TvVisitor)
    }
}

/// Canonical identity of a message "type" used by the cluster constraint.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterKey(String);

impl ClusterKey {
    /// Wraps an externally supplied key (an upstream clustering result).
    pub fn from_raw(key: impl Into<String>) -> Result<Self> {
        let key = key.into();
        if key.is_empty() {
            return Err(Error::ContractViolation("cluster key must be non-empty".into()));
        }
        Ok(ClusterKey(key))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClusterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn push_escaped(out: &mut String, s: &str) {
    for ch in s.chars() {
        if matches!(ch, '\\' | '|' | '=') {
            out.push('\\');
        }
        out.push(ch);
    }
}

/// Derives the canonical cluster key of a treatment vector.
///
/// Attributes are sorted by name and rendered as `name=label` pairs joined by
/// `|`. Backslash, `|` and `=` inside names or labels are backslash-escaped so
/// that distinct vectors can never render to the same key.
pub fn derive_cluster_key(treatment: &TreatmentVector) -> Result<ClusterKey> {
    if treatment.is_empty() {
        return Err(Error::EmptyTreatment);
    }
    let mut key = String::new();
    for (i, (name, label)) in treatment.iter().enumerate() {
        if i > 0 {
            key.push('|');
        }
        push_escaped(&mut key, name);
        key.push('=');
        push_escaped(&mut key, label);
    }
    Ok(ClusterKey(key))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub message_id: String,
    pub contact_id: ContactId,
    pub sent_at: Timestamp,
    pub treatment: TreatmentVector,
    pub confidence_score: f64,
    pub cluster_key: ClusterKey,
}

impl MessageRecord {
    /// Builds a record, deriving the cluster key from the treatment.
    pub fn new(
        message_id: impl Into<String>,
        contact_id: ContactId,
        sent_at: Timestamp,
        treatment: TreatmentVector,
        confidence_score: f64,
    ) -> Result<Self> {
        let cluster_key = derive_cluster_key(&treatment)?;
        let rec = MessageRecord {
            message_id: message_id.into(),
            contact_id,
            sent_at,
            treatment,
            confidence_score,
            cluster_key,
        };
        rec.check()?;
        Ok(rec)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.message_id.is_empty() {
            return Err(Error::ContractViolation("message id must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence_score) {
            return Err(Error::ContractViolation(format!(
                "confidence score {} of message `{}` is outside [0, 1]",
                self.confidence_score, self.message_id
            )));
        }
        if self.treatment.is_empty() {
            return Err(Error::EmptyTreatment);
        }
        Ok(())
    }
}

/// Behavior event types. Anything outside the three built-ins is kept as a
/// custom label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EventType {
    Visit,
    AddToCart,
    Purchase,
    Custom(Arc<str>),
}

impl EventType {
    pub fn as_str(&self) -> &str {
        match self {
            EventType::Visit => "visit",
            EventType::AddToCart => "add_to_cart",
            EventType::Purchase => "purchase",
            EventType::Custom(s) => s,
        }
    }

    /// True for message-interaction events (clicks, opens) that a contact who
    /// was never sent a message cannot produce.
    pub fn is_message_interaction(&self) -> bool {
        const REJECTED: [&str; 8] = [
            "message_click",
            "message_clicked",
            "click_through",
            "clickthrough",
            "click_through_rate",
            "ctr",
            "message_open",
            "message_opened",
        ];
        let label = self.as_str().to_ascii_lowercase();
        REJECTED.contains(&label.as_str())
    }
}

impl FromStr for EventType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "" => return Err(Error::ContractViolation("event type must be non-empty".into())),
            "visit" => EventType::Visit,
            "add_to_cart" => EventType::AddToCart,
            "purchase" => EventType::Purchase,
            other => EventType::Custom(Arc::from(other)),
        })
    }
}

impl TryFrom<String> for EventType {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<EventType> for String {
    fn from(value: EventType) -> Self {
        value.as_str().to_string()
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorEvent {
    pub contact_id: ContactId,
    pub event_type: EventType,
    pub occurred_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactProfile {
    pub contact_id: ContactId,
    pub first_seen_at: Timestamp,
}
