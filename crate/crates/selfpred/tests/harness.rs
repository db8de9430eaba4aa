use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selfpred::harness::{
    aggregate, collapse_study, emit_plot, log_ticks, median, oracle_study, parse_seeds,
    plot_collapse_csv, ExperimentConfig, ExperimentKind, HarnessError, PlotSpec, Series,
};
use selfpred::linearlab::LabEnv;

#[test]
fn config_hash_is_stable_under_key_reordering() {
    let a = ExperimentConfig::from_text(
        "kind = linear-collapse\nseeds = 0..4\nsteps = 100\nlearning_rate = 0.01\n",
    )
    .unwrap();
    let b = ExperimentConfig::from_text(
        "learning_rate = 0.01\nsteps = 100\n# moved around\nseeds = 0,1,2,3\nkind = linear-collapse\n",
    )
    .unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    assert_eq!(a.kind, ExperimentKind::LinearCollapse);
    assert_eq!(a.seeds, vec![0, 1, 2, 3]);
}

#[test]
fn config_hash_changes_with_any_value() {
    let a = ExperimentConfig::from_text("kind = train\nseeds = 0..4\nbudget = 100\n").unwrap();
    let b = ExperimentConfig::from_text("kind = train\nseeds = 0..4\nbudget = 101\n").unwrap();
    assert_ne!(a.content_hash(), b.content_hash());
}

#[test]
fn malformed_configs_are_rejected() {
    assert!(matches!(
        ExperimentConfig::from_text("kind train\nseeds = 0..2\n"),
        Err(HarnessError::BadLine { line: 1, .. })
    ));
    assert!(matches!(
        ExperimentConfig::from_text("kind = train\nkind = train\nseeds = 0..2\n"),
        Err(HarnessError::DuplicateKey(_))
    ));
    assert!(matches!(
        ExperimentConfig::from_text("kind = warp-drive\nseeds = 0..2\n"),
        Err(HarnessError::UnknownKind(_))
    ));
    assert!(matches!(
        ExperimentConfig::from_text("kind = train\n"),
        Err(HarnessError::MissingKey(_))
    ));
    assert!(matches!(
        ExperimentConfig::from_text("kind = train\nseeds = 5..5\n"),
        Err(HarnessError::BadValue { .. })
    ));
}

#[test]
fn seed_lists_accept_ranges_and_commas() {
    assert_eq!(parse_seeds("3..6"), Some(vec![3, 4, 5]));
    assert_eq!(parse_seeds("7, 1, 7"), Some(vec![7, 1, 7]));
    assert_eq!(parse_seeds(""), None);
    assert_eq!(parse_seeds("a..b"), None);
}

#[test]
fn single_record_aggregate_is_the_record() {
    let s = aggregate(&[("x".into(), vec![2.5])]).unwrap();
    assert_eq!(s.metrics[0].median, 2.5);
    assert_eq!(s.metrics[0].iqr, 0.0);
}

#[test]
fn constant_series_has_zero_iqr() {
    let s = aggregate(&[("x".into(), vec![1.0; 17])]).unwrap();
    assert_eq!(s.metrics[0].median, 1.0);
    assert_eq!(s.metrics[0].iqr, 0.0);
}

#[test]
fn zero_records_cannot_be_aggregated() {
    assert!(matches!(
        aggregate(&[("x".into(), vec![])]),
        Err(HarnessError::NoRecords)
    ));
}

// Independent recomputation of the median via a full sort.
fn sorted_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn selection_median_matches_the_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for size in 1..40usize {
        let v: Vec<f64> = (0..size).map(|_| rng.gen_range(-5.0..5.0)).collect();
        assert!((median(&v) - sorted_median(&v)).abs() < 1e-12, "n={size}");
    }
}

fn demo_series() -> Vec<Series> {
    vec![
        Series {
            label: "online".into(),
            points: (0..20).map(|i| (i as f64, 1.0 / (i + 1) as f64)).collect(),
        },
        Series {
            label: "detached".into(),
            points: (0..20).map(|i| (i as f64, 0.001 + i as f64 * 1e-5)).collect(),
        },
    ]
}

#[test]
fn plots_are_byte_identical_across_calls() {
    let spec = PlotSpec::new("t", "x", "y", true);
    let (a, _) = emit_plot(&demo_series(), &spec).unwrap();
    let (b, _) = emit_plot(&demo_series(), &spec).unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with("<svg"));
}

#[test]
fn non_finite_points_are_dropped_and_counted() {
    let mut series = demo_series();
    series[0].points.push((20.0, f64::NAN));
    series[1].points.push((f64::INFINITY, 1.0));
    let spec = PlotSpec::new("t", "x", "y", false);
    let (svg, dropped) = emit_plot(&series, &spec).unwrap();
    assert_eq!(dropped, 2);
    assert!(svg.contains("dropped 2 non-finite"));
}

#[test]
fn a_plot_with_nothing_left_is_an_error() {
    let series = vec![Series {
        label: "x".into(),
        points: vec![(0.0, f64::NAN), (1.0, -1.0)],
    }];
    let spec = PlotSpec::new("t", "x", "y", true); // -1 invalid on log axis
    assert!(matches!(
        emit_plot(&series, &spec),
        Err(HarnessError::EmptyPlot)
    ));
}

#[test]
fn log_ticks_are_powers_of_ten_spanning_the_data() {
    let ticks = log_ticks(3e-4, 0.2);
    assert_eq!(ticks, vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0]);
    for t in &ticks {
        let e = t.log10();
        assert!((e - e.round()).abs() < 1e-12);
    }
    assert!(*ticks.first().unwrap() <= 3e-4);
    assert!(*ticks.last().unwrap() >= 0.2);
    // Legend order must follow declaration order.
    let spec = PlotSpec::new("t", "x", "y", true);
    let (svg, _) = emit_plot(&demo_series(), &spec).unwrap();
    let online = svg.find(">online<").unwrap();
    let detached = svg.find(">detached<").unwrap();
    assert!(online < detached);
}

#[test]
fn collapse_study_artifacts_are_reproducible_and_claims_pass() {
    let seeds: Vec<u64> = (0..6).collect();
    let a = collapse_study(LabEnv::LoadUnload, &seeds, 0.01, 120).unwrap();
    let b = collapse_study(LabEnv::LoadUnload, &seeds, 0.01, 120).unwrap();
    assert_eq!(a.csv(), b.csv());
    assert_eq!(a.svg().unwrap(), b.svg().unwrap());
    assert!(a.summary.all_claims_pass());
    assert_eq!(a.modes.len(), 3);
    // Re-plotting the CSV reproduces series for all three targets.
    let svg = plot_collapse_csv(&a.csv(), "abs_cos").unwrap();
    for mode in ["online", "detached", "ema"] {
        assert!(svg.contains(&format!(">{mode}<")), "{mode} missing");
    }
}

#[test]
fn implication_sweep_stays_clean_on_fresh_models() {
    let report = oracle_study(&[3, 4], 1_000_000).unwrap();
    assert!(report.clean(), "{}", report.to_text());
    // Both history-level and MDP-only edges must have accumulated
    // premise-holding samples.
    for e in &report.entries {
        assert!(e.encoders_sampled > 0, "{} never sampled", e.name);
    }
}
