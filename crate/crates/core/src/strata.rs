//! Coarsened activity strata.
//!
//! A contact's stratum at a point in time is a function of three coarsened
//! facts: whether they are new, how recently they converted, and how recently
//! they visited. The (conversion, visit) bucket pair maps onto one of nine
//! reporting rows, or `Unclassifiable` when there is no recent activity at all.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, StrataThresholds};
use crate::error::{Error, Result};
use crate::model::{BehaviorEvent, ContactProfile, EventType, Timestamp, DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecencyBucket {
    Active,
    Recent,
    Former,
    None,
}

impl RecencyBucket {
    pub const ALL: [RecencyBucket; 4] = [
        RecencyBucket::Active,
        RecencyBucket::Recent,
        RecencyBucket::Former,
        RecencyBucket::None,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    New,
    Active,
    Recent,
    Lurking,
    Inactive,
    Unclassifiable,
}

impl Category {
    pub fn label(self) -> &'static str {
        match self {
            Category::New => "New",
            Category::Active => "Active",
            Category::Recent => "Recent",
            Category::Lurking => "Lurking",
            Category::Inactive => "Inactive",
            Category::Unclassifiable => "Unclassifiable",
        }
    }
}

/// The reporting row a contact falls into. Declaration order is report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcategory {
    New,
    ActivelyConverting,
    RecentlyConverted,
    FormerlyConvertedActivelyLooking,
    FormerlyConvertedRecentlyLooked,
    ActivelyLooking,
    RecentlyLooked,
    FormerlyConvertedFormerlyLooked,
    FormerlyLooked,
    Unclassifiable,
}

impl Subcategory {
    /// The nine matchable rows, in report order.
    pub const CLASSIFIED: [Subcategory; 9] = [
        Subcategory::New,
        Subcategory::ActivelyConverting,
        Subcategory::RecentlyConverted,
        Subcategory::FormerlyConvertedActivelyLooking,
        Subcategory::FormerlyConvertedRecentlyLooked,
        Subcategory::ActivelyLooking,
        Subcategory::RecentlyLooked,
        Subcategory::FormerlyConvertedFormerlyLooked,
        Subcategory::FormerlyLooked,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Subcategory::New => "New",
            Subcategory::ActivelyConverting => "Actively converting",
            Subcategory::RecentlyConverted => "Recently converted",
            Subcategory::FormerlyConvertedActivelyLooking => "Formerly converted, actively looking",
            Subcategory::FormerlyConvertedRecentlyLooked => "Formerly converted, recently looked",
            Subcategory::ActivelyLooking => "Actively looking",
            Subcategory::RecentlyLooked => "Recently looked",
            Subcategory::FormerlyConvertedFormerlyLooked => "Formerly converted, formerly looked",
            Subcategory::FormerlyLooked => "Formerly looked",
            Subcategory::Unclassifiable => "Unclassifiable",
        }
    }

    /// Snake-case identifier used in machine-readable output.
    pub fn key(self) -> &'static str {
        match self {
            Subcategory::New => "new",
            Subcategory::ActivelyConverting => "actively_converting",
            Subcategory::RecentlyConverted => "recently_converted",
            Subcategory::FormerlyConvertedActivelyLooking => "formerly_converted_actively_looking",
            Subcategory::FormerlyConvertedRecentlyLooked => "formerly_converted_recently_looked",
            Subcategory::ActivelyLooking => "actively_looking",
            Subcategory::RecentlyLooked => "recently_looked",
            Subcategory::FormerlyConvertedFormerlyLooked => "formerly_converted_formerly_looked",
            Subcategory::FormerlyLooked => "formerly_looked",
            Subcategory::Unclassifiable => "unclassifiable",
        }
    }

    pub fn category(self) -> Category {
        match self {
            Subcategory::New => Category::New,
            Subcategory::ActivelyConverting => Category::Active,
            Subcategory::RecentlyConverted => Category::Recent,
            Subcategory::FormerlyConvertedActivelyLooking
            | Subcategory::FormerlyConvertedRecentlyLooked
            | Subcategory::ActivelyLooking
            | Subcategory::RecentlyLooked => Category::Lurking,
            Subcategory::FormerlyConvertedFormerlyLooked | Subcategory::FormerlyLooked => {
                Category::Inactive
            }
            Subcategory::Unclassifiable => Category::Unclassifiable,
        }
    }

    pub fn is_classified(self) -> bool {
        self != Subcategory::Unclassifiable
    }

    pub fn from_key(key: &str) -> Option<Subcategory> {
        Subcategory::CLASSIFIED
            .into_iter()
            .chain([Subcategory::Unclassifiable])
            .find(|s| s.key() == key)
    }
}

impl fmt::Display for Subcategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActivityStratum {
    pub category: Category,
    pub subcategory: Subcategory,
    pub conversion_bucket: RecencyBucket,
    pub visit_bucket: RecencyBucket,
    pub is_new: bool,
}

/// Bucket for an event `elapsed` seconds in the past. Upper edges inclusive.
fn bucket_for_elapsed(elapsed: Option<i64>, th: &StrataThresholds) -> RecencyBucket {
    match elapsed {
        None => RecencyBucket::None,
        Some(s) if s <= th.active_days as i64 * DAY => RecencyBucket::Active,
        Some(s) if s <= th.recent_days as i64 * DAY => RecencyBucket::Recent,
        Some(s) if s <= th.former_days as i64 * DAY => RecencyBucket::Former,
        Some(_) => RecencyBucket::None,
    }
}

pub fn recency_bucket(
    last_event_at: Option<Timestamp>,
    at_time: Timestamp,
    thresholds: &StrataThresholds,
) -> Result<RecencyBucket> {
    let elapsed = match last_event_at {
        Some(t) if t > at_time => {
            return Err(Error::FutureEvent {
                event_at: t.secs(),
                at_time: at_time.secs(),
            })
        }
        Some(t) => Some(at_time.secs() - t.secs()),
        None => None,
    };
    Ok(bucket_for_elapsed(elapsed, thresholds))
}

/// The stratum mapping table.
pub fn subcategory_for(is_new: bool, conversion: RecencyBucket, visit: RecencyBucket) -> Subcategory {
    use RecencyBucket as B;
    if is_new {
        return Subcategory::New;
    }
    match (conversion, visit) {
        (B::Active, _) => Subcategory::ActivelyConverting,
        (B::Recent, _) => Subcategory::RecentlyConverted,
        (B::Former, B::Active) => Subcategory::FormerlyConvertedActivelyLooking,
        (B::Former, B::Recent) => Subcategory::FormerlyConvertedRecentlyLooked,
        // a conversion is itself a visit, so "no visit" after a former conversion reads as former
        (B::Former, B::Former | B::None) => Subcategory::FormerlyConvertedFormerlyLooked,
        (B::None, B::Active) => Subcategory::ActivelyLooking,
        (B::None, B::Recent) => Subcategory::RecentlyLooked,
        (B::None, B::Former) => Subcategory::FormerlyLooked,
        (B::None, B::None) => Subcategory::Unclassifiable,
    }
}

/// Stratum from pre-extracted facts. Events after `at_time` must already be
/// excluded from `last_conversion` / `last_visit`.
pub fn classify_at(
    first_seen: Timestamp,
    last_conversion: Option<Timestamp>,
    last_visit: Option<Timestamp>,
    at_time: Timestamp,
    th: &StrataThresholds,
) -> ActivityStratum {
    let is_new = at_time.secs() - first_seen.secs() <= th.new_days as i64 * DAY;
    let conversion_bucket =
        bucket_for_elapsed(last_conversion.map(|t| at_time.secs() - t.secs()), th);
    let visit_bucket = bucket_for_elapsed(last_visit.map(|t| at_time.secs() - t.secs()), th);
    let subcategory = subcategory_for(is_new, conversion_bucket, visit_bucket);
    ActivityStratum {
        category: subcategory.category(),
        subcategory,
        conversion_bucket,
        visit_bucket,
        is_new,
    }
}

/// Most recent event of `kind` at or before `at_time` in a time-sorted history.
pub fn last_event_before(
    history: &[BehaviorEvent],
    kind: &EventType,
    at_time: Timestamp,
) -> Option<Timestamp> {
    let end = history.partition_point(|e| e.occurred_at <= at_time);
    history[..end]
        .iter()
        .rev()
        .find(|e| &e.event_type == kind)
        .map(|e| e.occurred_at)
}

/// Classifies a contact from their time-sorted event history.
pub fn classify_contact(
    profile: &ContactProfile,
    history: &[BehaviorEvent],
    at_time: Timestamp,
    config: &RunConfig,
) -> ActivityStratum {
    let last_conversion = last_event_before(history, &config.conversion_event, at_time);
    let last_visit = last_event_before(history, &config.visit_event, at_time);
    classify_at(
        profile.first_seen_at,
        last_conversion,
        last_visit,
        at_time,
        &config.thresholds(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ContactId;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    const T0: i64 = 400 * DAY;

    fn ts(s: i64) -> Timestamp {
        Timestamp::new(s).unwrap()
    }

    fn th() -> StrataThresholds {
        StrataThresholds::default()
    }

    #[test]
    fn bucket_edges_are_inclusive_on_the_upper_side() {
        let at = ts(T0);
        let b = |days_ago: i64| recency_bucket(Some(ts(T0 - days_ago)), at, &th()).unwrap();
        assert_eq!(b(7 * DAY), RecencyBucket::Active);
        assert_eq!(b(7 * DAY + 1), RecencyBucket::Recent);
        assert_eq!(b(8 * DAY), RecencyBucket::Recent);
        assert_eq!(b(30 * DAY), RecencyBucket::Recent);
        assert_eq!(b(30 * DAY + 1), RecencyBucket::Former);
        assert_eq!(b(90 * DAY), RecencyBucket::Former);
        assert_eq!(b(90 * DAY + 1), RecencyBucket::None);
        assert_eq!(b(0), RecencyBucket::Active);
        assert_eq!(recency_bucket(None, at, &th()).unwrap(), RecencyBucket::None);
    }

    #[test]
    fn future_event_is_an_error() {
        assert!(matches!(
            recency_bucket(Some(ts(T0 + 1)), ts(T0), &th()),
            Err(Error::FutureEvent { .. })
        ));
    }

    fn ev(kind: EventType, at: i64) -> BehaviorEvent {
        BehaviorEvent {
            contact_id: ContactId::new("c").unwrap(),
            event_type: kind,
            occurred_at: ts(at),
        }
    }

    fn profile(first_seen: i64) -> ContactProfile {
        ContactProfile {
            contact_id: ContactId::new("c").unwrap(),
            first_seen_at: ts(first_seen),
        }
    }

    #[test]
    fn new_contact_overrides_activity() {
        let cfg = RunConfig::default();
        let history = [ev(EventType::Purchase, T0 - DAY)];
        let s = classify_contact(&profile(T0 - 3 * DAY), &history, ts(T0), &cfg);
        assert_eq!(s.category, Category::New);
        assert_eq!(s.subcategory, Subcategory::New);
        assert!(s.is_new);
    }

    #[test]
    fn former_converter_who_visits_is_lurking() {
        let cfg = RunConfig::default();
        let history = [
            ev(EventType::Purchase, T0 - 45 * DAY),
            ev(EventType::Visit, T0 - 2 * DAY),
        ];
        let s = classify_contact(&profile(T0 - 200 * DAY), &history, ts(T0), &cfg);
        assert_eq!(s.category, Category::Lurking);
        assert_eq!(s.subcategory.label(), "Formerly converted, actively looking");
    }

    #[test]
    fn no_activity_is_unclassifiable() {
        let cfg = RunConfig::default();
        let history = [ev(EventType::Visit, T0 - 120 * DAY)];
        let s = classify_contact(&profile(T0 - 200 * DAY), &history, ts(T0), &cfg);
        assert_eq!(s.subcategory, Subcategory::Unclassifiable);
        assert_eq!(s.category, Category::Unclassifiable);
    }

    #[test]
    fn events_after_evaluation_time_are_ignored() {
        let cfg = RunConfig::default();
        let history = [
            ev(EventType::Visit, T0 - 40 * DAY),
            ev(EventType::Purchase, T0 + 1),
        ];
        let s = classify_contact(&profile(T0 - 200 * DAY), &history, ts(T0), &cfg);
        assert_eq!(s.subcategory, Subcategory::FormerlyLooked);
        // an event at exactly the evaluation time counts
        let history = [ev(EventType::Purchase, T0)];
        let s = classify_contact(&profile(T0 - 200 * DAY), &history, ts(T0), &cfg);
        assert_eq!(s.subcategory, Subcategory::ActivelyConverting);
    }

    #[test]
    fn remapped_conversion_event() {
        let cfg = RunConfig {
            conversion_event: "subscribe".parse().unwrap(),
            ..RunConfig::default()
        };
        let history = [ev("subscribe".parse().unwrap(), T0 - DAY)];
        let s = classify_contact(&profile(T0 - 200 * DAY), &history, ts(T0), &cfg);
        assert_eq!(s.subcategory, Subcategory::ActivelyConverting);
    }

    /// Exhaustive mapping oracle: every combination maps to exactly one row,
    /// and the rows hit are exactly the nine reporting rows plus Unclassifiable.
    #[test]
    fn mapping_is_total_and_covers_every_row() {
        let mut hits: BTreeMap<Subcategory, usize> = BTreeMap::new();
        for is_new in [false, true] {
            for c in RecencyBucket::ALL {
                for v in RecencyBucket::ALL {
                    *hits.entry(subcategory_for(is_new, c, v)).or_default() += 1;
                }
            }
        }
        let mut expected: Vec<Subcategory> = Subcategory::CLASSIFIED.to_vec();
        expected.push(Subcategory::Unclassifiable);
        expected.sort();
        assert_eq!(hits.keys().copied().collect::<Vec<_>>(), expected);
        assert_eq!(hits.values().sum::<usize>(), 32);
        assert_eq!(hits[&Subcategory::New], 16);
        assert_eq!(hits[&Subcategory::Unclassifiable], 1);
    }

    #[test]
    fn key_round_trip() {
        for s in Subcategory::CLASSIFIED.into_iter().chain([Subcategory::Unclassifiable]) {
            assert_eq!(Subcategory::from_key(s.key()), Some(s));
        }
    }

    fn rank(b: RecencyBucket) -> u8 {
        match b {
            RecencyBucket::Active => 0,
            RecencyBucket::Recent => 1,
            RecencyBucket::Former => 2,
            RecencyBucket::None => 3,
        }
    }

    proptest! {
        #[test]
        fn buckets_never_move_back_in_time(
            elapsed in 0i64..(120 * DAY),
            advance in 0i64..(120 * DAY),
        ) {
            let last = ts(T0 - elapsed);
            let before = recency_bucket(Some(last), ts(T0), &th()).unwrap();
            let after = recency_bucket(Some(last), ts(T0 + advance), &th()).unwrap();
            prop_assert!(rank(after) >= rank(before));
        }

        #[test]
        fn classification_is_a_pure_function(
            first_age in 0i64..(200 * DAY),
            conv in proptest::option::of(0i64..(150 * DAY)),
            visit in proptest::option::of(0i64..(150 * DAY)),
        ) {
            let at = ts(T0);
            let a = classify_at(ts(T0 - first_age), conv.map(|c| ts(T0 - c)), visit.map(|v| ts(T0 - v)), at, &th());
            let b = classify_at(ts(T0 - first_age), conv.map(|c| ts(T0 - c)), visit.map(|v| ts(T0 - v)), at, &th());
            prop_assert_eq!(a, b);
            prop_assert_eq!(a.is_new, a.category == Category::New);
            prop_assert_eq!(a.subcategory, subcategory_for(a.is_new, a.conversion_bucket, a.visit_bucket));
        }
    }
}
