mod common;

use chunkcast::analytic::*;
use chunkcast::domain::*;
use common::{scenario, table1, valid};

fn validation_like() -> ValidScenario {
    let mut s = scenario(1000, &table1());
    s.stream = StreamSpec { stream_rate: 0.9, chunk_size: 0.9 };
    s.source.upload_capacity = 0.9;
    s.scheme.weight_kind = WeightKind::BandwidthAware;
    s.scheme.awareness_probability = 1.0;
    s.scheme.chunk_policy = ChunkPolicy::LatestBlind;
    s.scheme.blind_retry = false;
    s.buffer_deadline = 30.0;
    valid(s)
}

fn opts(conditions: usize) -> SolveOptions {
    SolveOptions { conditions, t_init: 2.0, ..Default::default() }
}

#[test]
fn solve_is_deterministic() {
    let v = validation_like();
    let a = solve(&v, &opts(100)).unwrap();
    let b = solve(&v, &opts(100)).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.r_bar, b.r_bar);
}

#[test]
fn richer_classes_are_predicted_to_do_better() {
    let v = validation_like();
    let sol = solve(&v, &opts(300)).unwrap();
    assert!(sol.report.converged);
    let rates: Vec<f64> = sol.report.classes.iter().map(|c| c.rate).collect();
    assert!(rates.windows(2).all(|w| w[0] > w[1]), "{rates:?}");
    let delays: Vec<f64> = sol.report.classes.iter().map(|c| c.mean_delay.unwrap()).collect();
    assert!(delays.windows(2).all(|w| w[0] < w[1]), "{delays:?}");
    assert!(sol.report.horizon == 30.0);
}

#[test]
fn average_curve_is_the_mean_of_the_condition_curves() {
    let v = validation_like();
    let sol = solve(&v, &opts(50)).unwrap();
    let again = AverageCurve::from_curves(&sol.curves, v.class_count());
    for &t in &sol.r_bar.times {
        for k in 0..v.class_count() {
            assert!((sol.r_bar.at(t, k) - again.at(t, k)).abs() < 1e-12);
        }
    }
}

#[test]
fn literal_poisson_mean_spreads_less() {
    let v = validation_like();
    let per_peer = solve(&v, &opts(100)).unwrap();
    let literal = solve(&v, &SolveOptions { poisson: PoissonMean::Literal, ..opts(100) }).unwrap();
    assert!(literal.report.global.rate < per_peer.report.global.rate);
}

#[test]
fn curve_csv_lists_every_point_and_class() {
    let v = validation_like();
    let sol = solve(&v, &opts(10)).unwrap();
    let mut out = Vec::new();
    write_curve_csv(&sol.curves[0], &sol.r_bar, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("t,class,r,p,r_bar\n"));
    assert_eq!(text.lines().count(), 1 + sol.curves[0].points.len() * v.class_count());
}

#[test]
fn tit_for_tat_is_rejected() {
    let mut s = validation_like().into_scenario();
    s.scheme.weight_kind = WeightKind::TitForTat;
    s.scheme.epoch_length = Some(10.0);
    assert!(matches!(solve(&valid(s), &opts(5)), Err(AnalyticError::UnsupportedWeight(_))));
}
