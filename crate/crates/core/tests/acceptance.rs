//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.
//!
//! Run with `cargo test -p dynctl-core --test acceptance`. The large
//! simulations make this the slowest target in the workspace.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use dynctl_core::attribution::attributable_fraction;
use dynctl_core::diagnostics::{compare_monotone, crossover_score};
use dynctl_core::ingest::{Dataset, EventLog, MessageLog};
use dynctl_core::matcher::{audit_ledger, brute_force_candidates, match_all, match_all_with_threads, LedgerEntry, MatchIndex, MatchLedger};
use dynctl_core::metrics::{format_percent, match_quality, shrink_partial};
use dynctl_core::model::{BehaviorEvent, ContactId, ContactProfile, EventType, MessageRecord, Timestamp, TreatmentVector, DAY};
use dynctl_core::report::analyze;
use dynctl_core::sim::{run_simulation, true_attributable_share, ResponseShape, SimConfig, StratumSpec};
use dynctl_core::strata::{subcategory_for, RecencyBucket, Subcategory};
use dynctl_core::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Check);
/// Ledger bytes plus every report file.
type PipelineOutput = (Vec<u8>, Vec<(&'static str, String)>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_shrinkage() -> Check {
    let v = shrink_partial(1.0, 100, 1000).map_err(|e| e.to_string())?;
    ensure(v == 0.10, || format!("got {v:?}"))?;
    Ok(format!("shrink_partial(1.0, 100, 1000) = {v}"))
}

fn c2_attribution_arithmetic() -> Check {
    let f = attributable_fraction(4.3, 1.7).map_err(|e| e.to_string())?;
    ensure((f - 0.604_651_162_790_697_7).abs() < 1e-15, || format!("fraction {f}"))?;
    let (zero, one) = (format_percent(f, 0), format_percent(f, 1));
    ensure(zero == "60%" && one == "60.5%", || format!("formatted {zero} / {one}"))?;
    Ok(format!("fraction {f:.5} -> {zero} / {one}"))
}

fn cid(s: &str) -> ContactId {
    ContactId::new(s).unwrap()
}

fn ts(s: i64) -> Timestamp {
    Timestamp::new(s).unwrap()
}

/// Ledger with the requested counts for one stratum; the quality table must
/// reproduce the coverage figures from them.
fn c3_quality_arithmetic() -> Check {
    let (tests, controls, test_contacts, control_contacts) = (259_076usize, 234_633usize, 36_125usize, 2_208usize);
    let at = ts(100 * DAY);
    let entries = (0..tests)
        .map(|i| {
            let test_contact_id = cid(&format!("t{}", i % test_contacts));
            let test_message_id = format!("m{i:06}");
            if i < controls {
                LedgerEntry::Matched(dynctl_core::matcher::ControlAssignment {
                    test_message_id,
                    test_contact_id,
                    control_contact_id: cid(&format!("k{}", i % control_contacts)),
                    qualifying_message_id: "q".into(),
                    virtual_sent_at: at,
                    stratum: Subcategory::New,
                    cluster_key: dynctl_core::ClusterKey::from_raw("k").unwrap(),
                    candidate_count: 1,
                })
            } else {
                LedgerEntry::Unmatched(dynctl_core::matcher::Unmatched {
                    test_message_id,
                    test_contact_id,
                    sent_at: at,
                    stratum: Subcategory::New,
                    reason: dynctl_core::matcher::UnmatchedReason::NoCandidates,
                })
            }
        })
        .collect();
    let ledger = MatchLedger {
        seed: 0,
        config: RunConfig::default(),
        entries,
    };
    let table = match_quality(&ledger, 14).map_err(|e| e.to_string())?;
    let row = table.rows.first().ok_or("no quality row")?;
    ensure(
        (row.test_messages, row.control_messages, row.test_contacts, row.control_contacts)
            == (tests, controls, test_contacts, control_contacts),
        || format!("counts {row:?}"),
    )?;
    let (m, c) = (format_percent(row.message_coverage(), 1), format_percent(row.contact_coverage(), 1));
    ensure(m == "90.6%" && c == "6.1%", || format!("formatted {m} / {c}"))?;
    Ok(format!("message coverage {m}, contact coverage {c}"))
}

fn random_instance(rng: &mut ChaCha8Rng) -> Dataset {
    let contacts = rng.random_range(2..=200usize);
    let messages = rng.random_range(1..=2000usize);
    let clusters = rng.random_range(1..=4usize);
    let horizon = rng.random_range(10..=60) * DAY;
    let origin = 150 * DAY;
    let name = |c: usize| format!("c{c:03}");
    let snap = |rng: &mut ChaCha8Rng, t: i64| if rng.random_bool(0.25) { t - t % (DAY / 2) } else { t };
    let msgs = (0..messages)
        .map(|i| {
            let c = rng.random_range(0..contacts);
            let raw = origin + rng.random_range(0..horizon);
            let at = snap(rng, raw);
            let tone = format!("t{}", rng.random_range(0..clusters));
            MessageRecord::new(
                format!("m{i:04}"),
                cid(&name(c)),
                ts(at),
                TreatmentVector::from_pairs([("tone", tone.as_str())]).unwrap(),
                rng.random(),
            )
            .unwrap()
        })
        .collect();
    let mut events = Vec::new();
    let mut profiles = Vec::new();
    for c in 0..contacts {
        let first = rng.random_range(0..origin + horizon);
        // some contacts have no profile and get one inferred
        if rng.random_bool(0.9) {
            profiles.push(ContactProfile {
                contact_id: cid(&name(c)),
                first_seen_at: ts(first),
            });
        }
        for _ in 0..rng.random_range(0..8) {
            let kind = if rng.random_bool(0.3) { EventType::Purchase } else { EventType::Visit };
            let raw = rng.random_range(first..origin + horizon + 1);
            events.push(BehaviorEvent {
                contact_id: cid(&name(c)),
                event_type: kind,
                occurred_at: ts(snap(rng, raw)),
            });
        }
    }
    Dataset::assemble(
        MessageLog::from_records(msgs).unwrap(),
        EventLog::from_events(events),
        profiles,
    )
    .0
}

fn c4_matcher_oracle() -> Check {
    let cfg = RunConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut compared, mut assignments, mut candidates) = (0usize, 0usize, 0usize);
    let instances = 1000;
    for inst in 0..instances {
        let ds = random_instance(&mut rng);
        let index = MatchIndex::build(&ds, &cfg).map_err(|e| e.to_string())?;
        let records = ds.messages.records();
        // large logs are checked on a random subset of test messages
        let picks: Vec<usize> = if records.len() <= 400 {
            (0..records.len()).collect()
        } else {
            (0..400).map(|_| rng.random_range(0..records.len())).collect()
        };
        for i in picks {
            let id = &records[i].message_id;
            let fast = index.find_candidates(id).map_err(|e| e.to_string())?;
            let slow = brute_force_candidates(id, &ds, &cfg).map_err(|e| e.to_string())?;
            ensure(fast == slow, || format!("instance {inst}, message {id}: index and brute force differ"))?;
            candidates += fast.candidates.len();
            compared += 1;
        }
        let ledger = match_all(&ds, &cfg, inst).map_err(|e| e.to_string())?;
        let violations = audit_ledger(&ledger, &ds);
        ensure(violations.is_empty(), || format!("instance {inst}: {:?}", &violations[..violations.len().min(3)]))?;
        assignments += ledger.matched_count();
    }
    ensure(assignments > 0 && candidates > 0, || "instances produced no matches".into())?;
    Ok(format!(
        "{instances} instances, {compared} candidate sets equal ({candidates} candidates), {assignments} assignments audited clean"
    ))
}

fn wide_catalog() -> std::collections::BTreeMap<String, Vec<String>> {
    let mut catalog = dynctl_core::sim::default_catalog();
    catalog.insert("topic".into(), vec!["new_arrivals".into(), "deals".into()]);
    catalog
}

fn null_config() -> SimConfig {
    use EventType::{AddToCart, Purchase, Visit};
    let mut rc = StratumSpec::new(Subcategory::RecentlyConverted, 0.2).rate(Visit, 8.0).rate(AddToCart, 4.0);
    rc.conversion_age_days = Some([8.0, 15.0]);
    let mut fcal = StratumSpec::new(Subcategory::FormerlyConvertedActivelyLooking, 0.2)
        .rate(Visit, 8.0)
        .rate(AddToCart, 4.0);
    fcal.conversion_age_days = Some([31.0, 60.0]);
    SimConfig {
        seed: 5,
        n_contacts: 50_000,
        horizon_days: 14,
        catalog: wide_catalog(),
        strata: vec![
            StratumSpec::new(Subcategory::ActivelyLooking, 0.4).rate(Visit, 8.0).rate(AddToCart, 4.0),
            StratumSpec::new(Subcategory::ActivelyConverting, 0.2)
                .rate(Visit, 9.0)
                .rate(AddToCart, 5.0)
                .rate(Purchase, 1.0),
            rc,
            fcal,
        ],
        run: RunConfig {
            event_types: vec![Visit, AddToCart],
            ..RunConfig::default()
        },
        ..SimConfig::default()
    }
}

fn c5_null_oracle() -> Check {
    let cfg = null_config();
    let out = run_simulation(&cfg, cfg.seed).map_err(|e| e.to_string())?;
    ensure(out.truth.cells.iter().all(|c| c.share == 0.0), || "null truth is not zero".into())?;
    let (ds, _) = out.into_dataset();
    let ledger = match_all(&ds, &cfg.run, cfg.seed).map_err(|e| e.to_string())?;
    let analysis = analyze(&ledger, &ds, &cfg.run).map_err(|e| e.to_string())?;
    let worst = analysis
        .cells
        .iter()
        .max_by(|a, b| a.attributable_fraction.total_cmp(&b.attributable_fraction))
        .ok_or("no attribution cells")?;
    ensure(worst.attributable_fraction <= 0.02, || {
        format!(
            "{} / {} attributed {:.2}%",
            worst.stratum.key(),
            worst.event_type,
            worst.attributable_fraction * 100.0
        )
    })?;
    let mut slopes = Vec::new();
    for t in &analysis.trends {
        let fit = t.fit.ok_or_else(|| format!("too few bins for {}", t.event_type))?;
        ensure(fit.ci_contains_zero(), || {
            format!("{} control slope {:.3e} CI [{:.3e}, {:.3e}]", t.event_type, fit.slope, fit.ci_low, fit.ci_high)
        })?;
        slopes.push(format!("{} {:+.2e} in [{:.2e}, {:.2e}]", t.event_type, fit.slope, fit.ci_low, fit.ci_high));
    }
    // unclamped pooled difference, reported only: the per-bin clamp at zero is
    // what pushes the cells above zero under the null
    let raw: Vec<String> = cfg
        .run
        .event_types
        .iter()
        .map(|et| {
            let (t, c) = analysis.bins.pooled.iter().filter_map(|b| b.tally(et)).fold((0.0, 0.0), |(t, c), x| {
                (t + x.test_success_sum, c + x.control_success_sum)
            });
            format!("{et} {:+.2}%", (t - c) / t * 100.0)
        })
        .collect();
    Ok(format!(
        "{} messages, {} matched, {} cells, max {:.2}% ({} / {}); unclamped pooled {}; control slopes: {}",
        ds.messages.len(),
        ledger.matched_count(),
        analysis.cells.len(),
        worst.attributable_fraction * 100.0,
        worst.stratum.key(),
        worst.event_type,
        raw.join(", "),
        slopes.join("; ")
    ))
}

fn uplift_config() -> SimConfig {
    use EventType::{AddToCart, Purchase, Visit};
    let mut fcal = StratumSpec::new(Subcategory::FormerlyConvertedActivelyLooking, 1.0 / 3.0)
        .rate(Visit, 3.0)
        .rate(AddToCart, 1.0)
        .with_lift(Visit, 1.0);
    fcal.conversion_age_days = Some([31.0, 45.0]);
    SimConfig {
        seed: 6,
        n_contacts: 40_000,
        horizon_days: 21,
        catalog: wide_catalog(),
        strata: vec![
            StratumSpec::new(Subcategory::ActivelyLooking, 1.0 / 3.0)
                .rate(Visit, 3.0)
                .rate(AddToCart, 1.0)
                .with_lift(Visit, 0.25),
            fcal,
            StratumSpec::new(Subcategory::ActivelyConverting, 1.0 / 3.0)
                .rate(Visit, 3.0)
                .rate(AddToCart, 1.0)
                .rate(Purchase, 1.5)
                .with_lift(Visit, 1.5),
        ],
        run: RunConfig {
            event_types: vec![Visit],
            ..RunConfig::default()
        },
        ..SimConfig::default()
    }
}

fn c6_uplift_recovery() -> Check {
    let cfg = uplift_config();
    let out = run_simulation(&cfg, cfg.seed).map_err(|e| e.to_string())?;
    let truth = out.truth.clone();
    let (ds, _) = out.into_dataset();
    let ledger = match_all(&ds, &cfg.run, cfg.seed).map_err(|e| e.to_string())?;
    ensure(ledger.matched_count() >= 100_000, || format!("only {} matched messages", ledger.matched_count()))?;
    let analysis = analyze(&ledger, &ds, &cfg.run).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut shares = BTreeSet::new();
    for spec in &cfg.strata {
        let s = spec.subcategory;
        let want = true_attributable_share(&truth, s, &EventType::Visit).map_err(|e| e.to_string())?;
        let cell = analysis
            .cells
            .iter()
            .find(|c| c.stratum == s && c.event_type == EventType::Visit)
            .ok_or_else(|| format!("no estimate for {}", s.key()))?;
        let got = cell.attributable_fraction;
        let tol = f64::max(0.03, 0.15 * want);
        ensure((got - want).abs() <= tol, || {
            format!("{}: estimate {got:.4}, truth {want:.4}, tolerance {tol:.3}", s.key())
        })?;
        shares.insert((want * 10.0).round() as i64);
        lines.push(format!("{} truth {want:.3} est {got:.3}", s.key()));
    }
    ensure(shares == BTreeSet::from([2, 5, 6]), || format!("configured shares drifted: {lines:?}"))?;
    Ok(format!("{} matched; {}", ledger.matched_count(), lines.join("; ")))
}

fn gradient_config() -> SimConfig {
    use EventType::{Purchase, Visit};
    let mut fcal = StratumSpec::new(Subcategory::FormerlyConvertedActivelyLooking, 1.0 / 3.0).rate(Visit, 1.2);
    fcal.conversion_age_days = Some([31.0, 45.0]);
    SimConfig {
        seed: 7,
        n_contacts: 24_000,
        horizon_days: 21,
        catalog: wide_catalog(),
        response: ResponseShape::BaselineHurdle { k: 1.0, gain: 1.0 },
        strata: vec![
            StratumSpec::new(Subcategory::ActivelyLooking, 1.0 / 3.0).rate(Visit, 1.0),
            fcal,
            StratumSpec::new(Subcategory::ActivelyConverting, 1.0 / 3.0)
                .rate(Visit, 3.0)
                .rate(Purchase, 1.5),
        ],
        run: RunConfig {
            event_types: vec![Visit],
            ..RunConfig::default()
        },
        ..SimConfig::default()
    }
}

fn c7_score_gradient() -> Check {
    let cfg = gradient_config();
    let (ds, _) = run_simulation(&cfg, cfg.seed).map_err(|e| e.to_string())?.into_dataset();
    let ledger = match_all(&ds, &cfg.run, cfg.seed).map_err(|e| e.to_string())?;
    let analysis = analyze(&ledger, &ds, &cfg.run).map_err(|e| e.to_string())?;
    let mut crossovers = Vec::new();
    for s in cfg.strata.iter().map(|spec| &spec.subcategory) {
        // contacts drifting into other strata leave only a handful of messages there
        let bins = analysis.bins.strata.get(s).ok_or_else(|| format!("{} has no bins", s.key()))?;
        // the trailing partial bin is shrunk toward zero and would distort the shape
        let full: Vec<_> = bins.iter().filter(|b| b.is_full()).collect();
        ensure(full.len() >= 5, || format!("{}: only {} full bins", s.key(), full.len()))?;
        let diffs: Vec<f64> = full
            .iter()
            .map(|b| {
                let t = b.tally(&EventType::Visit).expect("visit is tallied");
                t.test_metric - t.control_metric
            })
            .collect();
        let weights = vec![1.0; diffs.len()];
        let cmp = compare_monotone(&diffs, &weights);
        ensure(cmp.favours_increasing(), || {
            format!(
                "{}: increasing fit SSE {:.4} vs decreasing {:.4}",
                s.key(),
                cmp.increasing_sse,
                cmp.decreasing_sse
            )
        })?;
        let scores: Vec<f64> = full.iter().map(|b| b.mean_score).collect();
        let x = crossover_score(&scores, &diffs, &weights).ok_or_else(|| format!("{}: test never beats control", s.key()))?;
        crossovers.push((*s, x));
    }
    let high = crossovers
        .iter()
        .find(|(s, _)| *s == Subcategory::ActivelyConverting)
        .ok_or("high-baseline stratum missing")?
        .1;
    for &(s, x) in &crossovers {
        if s != Subcategory::ActivelyConverting {
            ensure(high > x, || format!("high-baseline crossover {high:.3} not above {} at {x:.3}", s.key()))?;
        }
    }
    ensure(crossovers.len() == 3, || format!("expected three strata, got {crossovers:?}"))?;
    let desc: Vec<String> = crossovers.iter().map(|(s, x)| format!("{} crosses at {x:.3}", s.key())).collect();
    Ok(desc.join("; "))
}

fn c8_determinism() -> Check {
    let mut cfg = SimConfig {
        n_contacts: 3_000,
        horizon_days: 21,
        ..SimConfig::default()
    };
    cfg.run.bin_size = 200;
    let run = |threads: usize| -> Result<PipelineOutput, String> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        pool.install(|| {
            let (ds, _) = run_simulation(&cfg, 21).map_err(|e| e.to_string())?.into_dataset();
            let ledger = match_all_with_threads(&ds, &cfg.run, 21, threads).map_err(|e| e.to_string())?;
            let files = analyze(&ledger, &ds, &cfg.run).map_err(|e| e.to_string())?.files().map_err(|e| e.to_string())?;
            Ok((ledger.to_jsonl(), files))
        })
    };
    let (l1, f1) = run(1)?;
    let (l8, f8) = run(8)?;
    ensure(l1 == l8, || "ledgers differ between 1 and 8 workers".into())?;
    for ((name, a), (_, b)) in f1.iter().zip(&f8) {
        ensure(a == b, || format!("{name} differs between 1 and 8 workers"))?;
    }
    Ok(format!("ledger ({} bytes) and {} report files identical", l1.len(), f1.len()))
}

fn c9_stratum_totality() -> Check {
    let mut hits = std::collections::BTreeMap::new();
    for is_new in [false, true] {
        for c in RecencyBucket::ALL {
            for v in RecencyBucket::ALL {
                *hits.entry(subcategory_for(is_new, c, v)).or_insert(0usize) += 1;
            }
        }
    }
    let total: usize = hits.values().sum();
    ensure(total == 32, || format!("{total} combinations mapped"))?;
    let labels: BTreeSet<Subcategory> = hits.keys().copied().collect();
    let expected: BTreeSet<Subcategory> = Subcategory::CLASSIFIED
        .into_iter()
        .chain([Subcategory::Unclassifiable])
        .collect();
    ensure(labels == expected, || format!("labels reached: {labels:?}"))?;
    ensure(hits[&Subcategory::Unclassifiable] == 1, || "unclassifiable reached more than once".into())?;
    ensure(hits[&Subcategory::New] == 16, || "new must override all 16 bucket pairs".into())?;
    let distinct: BTreeSet<&str> = expected.iter().map(|s| s.label()).collect();
    ensure(distinct.len() == 10, || "labels are not distinct".into())?;
    Ok(format!("32 combinations onto {} labels", labels.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("C1", "partial-bin shrinkage arithmetic", c1_shrinkage),
        ("C2", "attributable fraction arithmetic", c2_attribution_arithmetic),
        ("C3", "match-quality percentages", c3_quality_arithmetic),
        ("C4", "matcher validity and oracle equivalence", c4_matcher_oracle),
        ("C5", "null simulation", c5_null_oracle),
        ("C6", "uplift recovery", c6_uplift_recovery),
        ("C7", "score gradient and crossover ordering", c7_score_gradient),
        ("C8", "determinism across worker counts", c8_determinism),
        ("C9", "stratum mapping totality", c9_stratum_totality),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o.eq_ignore_ascii_case(id)) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id} {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id} {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
