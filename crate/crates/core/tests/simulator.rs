use dynctl_core::model::{EventType, DAY};
use dynctl_core::sim::{run_simulation, true_attributable_share, SimConfig, StratumSpec};
use dynctl_core::Subcategory;

/// A lift of 1.0 on a baseline of 1.7 visits per day doubles the expected
/// count inside a one-day window to 3.4, and half of it is attributable.
#[test]
fn constant_lift_doubles_window_counts() {
    let cfg = SimConfig {
        n_contacts: 20_000,
        horizon_days: 14,
        strata: vec![StratumSpec::new(Subcategory::ActivelyLooking, 1.0)
            .rate(EventType::Visit, 1.7)
            .with_lift(EventType::Visit, 1.0)],
        ..SimConfig::default()
    };
    let out = run_simulation(&cfg, 11).unwrap();
    let window = cfg.run.monitoring_secs();
    let end = cfg.start_at + cfg.horizon_days as i64 * DAY;
    let (mut windows, mut visits) = (0usize, 0usize);
    for m in out.messages.records() {
        let t = m.sent_at.secs();
        if t + window > end {
            continue;
        }
        let history = out.events.history(&m.contact_id);
        let lo = history.partition_point(|e| e.occurred_at.secs() < t);
        let hi = history.partition_point(|e| e.occurred_at.secs() < t + window);
        visits += history[lo..hi].iter().filter(|e| e.event_type == EventType::Visit).count();
        windows += 1;
    }
    assert!(windows >= 100_000, "{windows} windows");
    let mean = visits as f64 / windows as f64;
    // standard error is about sqrt(3.4 / 1e5) < 0.006
    assert!((mean - 3.4).abs() < 0.03, "mean {mean}");
    let share = true_attributable_share(&out.truth, Subcategory::ActivelyLooking, &EventType::Visit).unwrap();
    assert!((share - 0.5).abs() < 1e-9, "{share}");
}

#[test]
fn written_logs_load_back_identically() {
    let cfg = SimConfig {
        n_contacts: 300,
        ..SimConfig::default()
    };
    let out = run_simulation(&cfg, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write_to(dir.path()).unwrap();
    let (ds, report) = dynctl_core::ingest::load_dataset(
        &dir.path().join("messages.jsonl"),
        &dir.path().join("events.jsonl"),
        Some(&dir.path().join("contacts.jsonl")),
    )
    .unwrap();
    assert_eq!(ds.messages, out.messages);
    assert_eq!(ds.events, out.events);
    assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    let truth: dynctl_core::GroundTruth =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ground_truth.json")).unwrap()).unwrap();
    assert_eq!(truth, out.truth);
}
