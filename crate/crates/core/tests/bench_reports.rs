use sheaf_mapf::baseline::PlannerPolicy;
use sheaf_mapf::bench::{
    build_suite, run_benchmark, summarize, BenchmarkReport, EpisodeMetrics, EpisodeRow, StationaryPolicy, SuiteConfig,
};

fn m(el: usize, arrived: usize, n: usize, success: bool) -> EpisodeMetrics {
    EpisodeMetrics {
        episode_length: el,
        arrived,
        n,
        success,
    }
}

fn small_suite() -> SuiteConfig {
    SuiteConfig {
        sizes: vec![10, 12],
        agent_counts: vec![2, 4],
        episodes: 4,
        seed: 5,
        step_limit: 128,
        ..SuiteConfig::default()
    }
}

#[test]
fn aggregates_recompute_from_rows() {
    let rows: Vec<EpisodeRow> = [m(10, 4, 4, true), m(512, 3, 4, false), m(20, 4, 4, true), m(14, 4, 4, true)]
        .into_iter()
        .enumerate()
        .map(|(episode, metrics)| EpisodeRow {
            map_size: 10,
            n_agents: 4,
            seed: 0,
            episode,
            metrics,
        })
        .collect();
    let report = BenchmarkReport { header: vec![], rows };
    let agg = report.aggregates();
    assert_eq!(agg.len(), 1);
    let s = agg[0].1;
    assert_eq!(s.sr, 0.75);
    assert_eq!(s.ar, 15.0 / 16.0);
    assert_eq!(s.mean_el, (10.0 + 512.0 + 20.0 + 14.0) / 4.0);
}

#[test]
fn success_implies_full_arrival() {
    let report = run_benchmark(&PlannerPolicy::default(), &small_suite()).unwrap();
    for r in &report.rows {
        if r.metrics.success {
            assert_eq!(r.metrics.arrived, r.metrics.n);
        } else {
            assert_eq!(r.metrics.episode_length, 128);
        }
    }
    let reparsed = BenchmarkReport::from_csv(&report.to_csv()).unwrap();
    assert_eq!(reparsed.aggregates(), report.aggregates());
}

#[test]
fn reports_are_reproducible() {
    let a = run_benchmark(&PlannerPolicy::default(), &small_suite()).unwrap().to_csv();
    let b = run_benchmark(&PlannerPolicy::default(), &small_suite()).unwrap().to_csv();
    assert_eq!(a, b);
    assert!(a.lines().next().unwrap().starts_with("# suite:"));
}

#[test]
fn suites_depend_only_on_config() {
    let a = build_suite(&small_suite()).unwrap();
    let mut other = small_suite();
    other.seed = 6;
    let b = build_suite(&other).unwrap();
    assert_eq!(a, build_suite(&small_suite()).unwrap());
    assert_ne!(a, b);
    assert_eq!(a.len(), 2 * 2 * 4);
}

#[test]
fn stationary_policy_counts_coincidental_arrivals() {
    let report = run_benchmark(&StationaryPolicy, &small_suite()).unwrap();
    let s = summarize(&report.rows.iter().map(|r| r.metrics).collect::<Vec<_>>());
    assert_eq!(s.sr, 0.0);
    assert_eq!(s.mean_el, 128.0);
    assert!(report.rows.iter().all(|r| r.metrics.arrived == 0));
}
