mod common;

use chunkcast::domain::*;
use chunkcast::engine::{run, run_with_sink};
use chunkcast::metrics::{summarize, MetricsAccumulator};
use chunkcast::overlay::generate_overlay;
use common::{scenario, table1, valid};

fn heterogeneous() -> ValidScenario {
    let mut s = scenario(200, &table1());
    s.edge_probability = EdgeProbability::Probability(0.2);
    s.scheme.weight_kind = WeightKind::BandwidthAware;
    s.scheme.awareness_probability = 0.5;
    s.duration = 300.0;
    valid(s)
}

#[test]
fn streaming_and_batch_summaries_agree() {
    let v = heterogeneous();
    let overlay = generate_overlay(v.n(), v.scenario().edge_probability, v.scenario().seed);
    let (log, _) = run(&v, &overlay);
    let batch = summarize(&log, &v).unwrap();
    let mut acc = MetricsAccumulator::new(&v);
    run_with_sink(&v, &overlay, &mut acc);
    let streamed = acc.finish().unwrap();
    assert_eq!(batch, streamed);
    assert_eq!(batch, summarize(&log, &v).unwrap());
}

#[test]
fn class_rates_recombine_to_the_global_rate() {
    let v = heterogeneous();
    let overlay = generate_overlay(v.n(), v.scenario().edge_probability, v.scenario().seed);
    let (log, _) = run(&v, &overlay);
    let r = summarize(&log, &v).unwrap();
    let mixed: f64 = r.classes.iter().map(|c| c.rate * c.population as f64).sum::<f64>() / v.n() as f64;
    assert!((mixed - r.global.rate).abs() < 1e-12);
    for c in r.classes.iter().chain([&r.global]) {
        assert!((c.rate + c.miss_ratio - 1.0).abs() < 1e-15);
    }
}

#[test]
fn copy_conditionals_mix_back_to_the_unconditional_rate() {
    let v = heterogeneous();
    let overlay = generate_overlay(v.n(), v.scenario().edge_probability, v.scenario().seed);
    let (log, _) = run(&v, &overlay);
    let r = summarize(&log, &v).unwrap();
    for k in 1..=3 {
        let cond = r.kth_copy_conditional(k);
        let total: usize = cond.partitions.iter().map(|p| p.chunks).sum();
        assert_eq!(total + cond.excluded, r.scored_chunks);
        let kept: Vec<f64> = r
            .scored()
            .filter(|c| c.copy_classes.len() >= k)
            .map(|c| c.global.delivered_fraction)
            .collect();
        let mixed: f64 = cond.partitions.iter().map(|p| p.rate * p.chunks as f64).sum::<f64>() / total as f64;
        let direct = kept.iter().sum::<f64>() / kept.len() as f64;
        assert!((mixed - direct).abs() < 1e-12, "k={k}");
    }
}

#[test]
fn csv_tables_have_the_documented_shape() {
    let v = heterogeneous();
    let overlay = generate_overlay(v.n(), v.scenario().edge_probability, v.scenario().seed);
    let (log, _) = run(&v, &overlay);
    let r = summarize(&log, &v).unwrap();
    let mut per_chunk = Vec::new();
    r.write_per_chunk_csv(&mut per_chunk).unwrap();
    let text = String::from_utf8(per_chunk).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("chunk_id,class,delivered_fraction,mean_delay,p95_delay"));
    assert_eq!(lines.count(), r.scored_chunks * (v.class_count() + 1));
    let mut cdf = Vec::new();
    r.write_cdf_csv(&mut cdf).unwrap();
    assert!(String::from_utf8(cdf).unwrap().starts_with("metric,class,x,F\n"));
}

#[test]
fn convergence_is_reported_for_a_steady_run() {
    let v = heterogeneous();
    let overlay = generate_overlay(v.n(), v.scenario().edge_probability, v.scenario().seed);
    let (log, _) = run(&v, &overlay);
    let r = summarize(&log, &v).unwrap();
    assert!(r.windows.iter().all(|w| w.chunks == r.windows[0].chunks));
    let t = r.convergence.time.expect("random selection settles");
    assert!(t < v.scenario().duration);
}
