//! Rate, miss ratio and delay measures computed from transmission records.
//!
//! A chunk is scored when it was created in `[warmup, duration - D]`, so its
//! whole deadline window lies inside the run. A (chunk, peer) pair counts as
//! delivered iff the peer got a useful arrival; delays run from creation.
//! The accumulator consumes records in arrival order and closes a chunk as
//! soon as time passes its deadline, keeping only per-chunk aggregates.

use std::collections::VecDeque;
use std::io::{self, Write};

use serde::Serialize;

use crate::domain::{derive_timing, ChunkId, SimTime, ValidScenario};
use crate::engine::{Transmission, TransmissionSink};
use crate::overlay::SOURCE;
use crate::stats;

/// Receiver classes remembered per chunk for copy-order analysis.
pub const TRACKED_COPIES: usize = 10;
pub const WINDOW_SECS: f64 = 10.0;

/// Class label and `(x, F)` steps.
pub type ClassCdf = (String, Vec<(f64, f64)>);
pub const CONVERGENCE_TOL: f64 = 0.05;
/// Share of windows, taken from the end, that defines the steady value.
pub const TAIL_FRACTION: f64 = 0.25;
/// The stability band never gets narrower than this many standard
/// deviations of the tail windows, so window noise alone does not count as
/// instability.
pub const NOISE_SIGMAS: f64 = 4.0;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("duration too short for warmup + deadline")]
    EmptyWindow,
}

/// Per-chunk outcome for one class, or for all peers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkClassStats {
    pub delivered: u32,
    pub delivered_fraction: f64,
    pub mean_delay: Option<f64>,
    pub p95_delay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkRecord {
    pub chunk: ChunkId,
    pub creation: f64,
    pub scored: bool,
    pub global: ChunkClassStats,
    pub classes: Vec<ChunkClassStats>,
    /// Class (0-based) of the receiver of arrival 1, 2, ... within the deadline.
    pub copy_classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    /// 1-based class id; `None` for the all-peer aggregate.
    pub class: Option<u32>,
    pub population: usize,
    pub rate: f64,
    pub miss_ratio: f64,
    /// Mean over delivered (chunk, peer) pairs.
    pub mean_delay: Option<f64>,
    /// Mean over chunks of the per-chunk 95th percentile delay.
    pub p95_delay: Option<f64>,
    pub rate_stderr: Option<f64>,
    /// Standard error across chunks of the per-chunk mean delay.
    pub delay_stderr: Option<f64>,
    pub rate_iqr: Option<f64>,
    pub delay_iqr: Option<f64>,
    pub delay_variance: Option<f64>,
    pub miss_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowPoint {
    pub start: f64,
    pub chunks: usize,
    pub miss_ratio: f64,
    pub mean_delay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Convergence {
    pub window: f64,
    pub tolerance: f64,
    pub time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scored_chunks: usize,
    pub global: ClassSummary,
    pub classes: Vec<ClassSummary>,
    pub convergence: Convergence,
    pub windows: Vec<WindowPoint>,
    #[serde(skip)]
    pub chunks: Vec<ChunkRecord>,
}

struct OpenChunk {
    delays: Vec<Vec<f64>>,
    copy_classes: Vec<usize>,
}

/// Streaming metrics sink; see the module docs.
pub struct MetricsAccumulator {
    period: u64,
    deadline: u64,
    warmup: SimTime,
    last_chunk: Option<ChunkId>,
    populations: Vec<usize>,
    node_class: Vec<Option<usize>>,
    base: ChunkId,
    open: VecDeque<OpenChunk>,
    closed: Vec<ChunkRecord>,
}

impl MetricsAccumulator {
    pub fn new(scenario: &ValidScenario) -> Self {
        let sc = scenario.scenario();
        let period = derive_timing(scenario).chunk_period_ticks().nanos();
        let deadline = SimTime::from_secs(sc.buffer_deadline).nanos();
        let duration = SimTime::from_secs(sc.duration).nanos();
        let last_chunk = duration.checked_sub(deadline).map(|t| t / period);
        MetricsAccumulator {
            period,
            deadline,
            warmup: SimTime::from_secs(sc.warmup),
            last_chunk,
            populations: scenario.populations().to_vec(),
            node_class: scenario.node_classes(),
            base: 0,
            open: VecDeque::new(),
            closed: Vec::new(),
        }
    }

    fn creation(&self, id: ChunkId) -> SimTime {
        SimTime(id * self.period)
    }

    fn in_range(&self, id: ChunkId) -> bool {
        self.last_chunk.is_some_and(|last| id <= last)
    }

    fn close_until(&mut self, now: SimTime) {
        while self.in_range(self.base) && self.creation(self.base).nanos() + self.deadline < now.nanos() {
            self.close_front();
        }
    }

    fn close_front(&mut self) {
        let open = self.open.pop_front().unwrap_or_else(|| OpenChunk {
            delays: vec![Vec::new(); self.populations.len()],
            copy_classes: Vec::new(),
        });
        let id = self.base;
        let creation = self.creation(id);
        let classes: Vec<ChunkClassStats> =
            open.delays.iter().zip(&self.populations).map(|(d, &pop)| chunk_stats(d, pop)).collect();
        let all: Vec<f64> = open.delays.concat();
        let global = chunk_stats(&all, self.populations.iter().sum());
        self.closed.push(ChunkRecord {
            chunk: id,
            creation: creation.as_secs(),
            scored: creation >= self.warmup,
            global,
            classes,
            copy_classes: open.copy_classes,
        });
        self.base += 1;
    }

    fn open_slot(&mut self, id: ChunkId) -> Option<&mut OpenChunk> {
        if id < self.base || !self.in_range(id) {
            return None;
        }
        let idx = (id - self.base) as usize;
        let classes = self.populations.len();
        while self.open.len() <= idx {
            self.open.push_back(OpenChunk { delays: vec![Vec::new(); classes], copy_classes: Vec::new() });
        }
        Some(&mut self.open[idx])
    }

    pub fn finish(mut self) -> Result<MetricsReport, MetricsError> {
        while self.in_range(self.base) {
            self.close_front();
        }
        build_report(self.closed, &self.populations)
    }
}

impl TransmissionSink for MetricsAccumulator {
    fn record(&mut self, t: &Transmission) {
        self.close_until(t.arrival);
        let Some(class) = self.node_class.get(t.receiver as usize).copied().flatten() else {
            debug_assert!(t.receiver != SOURCE, "arrival at the source");
            return;
        };
        let delay = (t.arrival - self.creation(t.chunk)).as_secs();
        let Some(slot) = self.open_slot(t.chunk) else {
            return;
        };
        if slot.copy_classes.len() < TRACKED_COPIES && t.copy_ordinal as usize == slot.copy_classes.len() + 1 {
            slot.copy_classes.push(class);
        }
        if t.useful {
            slot.delays[class].push(delay);
        }
    }
}

fn chunk_stats(delays: &[f64], population: usize) -> ChunkClassStats {
    let mut sorted = delays.to_vec();
    sorted.sort_by(f64::total_cmp);
    let delivered = sorted.len() as u32;
    ChunkClassStats {
        delivered,
        delivered_fraction: if population == 0 { 0.0 } else { delivered as f64 / population as f64 },
        mean_delay: stats::mean(&sorted),
        p95_delay: (!sorted.is_empty()).then(|| stats::quantile_sorted(&sorted, 0.95)),
    }
}

/// Scores a complete log against its scenario.
pub fn summarize(log: &[Transmission], scenario: &ValidScenario) -> Result<MetricsReport, MetricsError> {
    let mut acc = MetricsAccumulator::new(scenario);
    for t in log {
        acc.record(t);
    }
    acc.finish()
}

fn class_summary(class: Option<u32>, population: usize, stats_of: &[&ChunkClassStats]) -> ClassSummary {
    let fractions: Vec<f64> = stats_of.iter().map(|s| s.delivered_fraction).collect();
    let delays: Vec<Option<f64>> = stats_of.iter().map(|s| s.mean_delay).collect();
    let p95s: Vec<f64> = stats_of.iter().filter_map(|s| s.p95_delay).collect();
    ClassSummary { p95_delay: stats::mean(&p95s), ..summary_from_samples(class, population, &fractions, &delays) }
}

/// Aggregates per-chunk (or per-sample) delivered fractions and mean delays.
/// The mean delay is weighted by delivered fraction, i.e. taken over
/// delivered pairs.
pub fn summary_from_samples(
    class: Option<u32>,
    population: usize,
    fractions: &[f64],
    delays: &[Option<f64>],
) -> ClassSummary {
    assert_eq!(fractions.len(), delays.len());
    let rate = stats::mean(fractions).unwrap_or(0.0);
    let misses: Vec<f64> = fractions.iter().map(|f| 1.0 - f).collect();
    let means: Vec<f64> = delays.iter().flatten().copied().collect();
    let weight: f64 = fractions.iter().zip(delays).filter(|(_, d)| d.is_some()).map(|(f, _)| f).sum();
    let weighted: f64 = fractions.iter().zip(delays).filter_map(|(f, d)| d.map(|d| f * d)).sum();
    ClassSummary {
        class,
        population,
        rate,
        miss_ratio: 1.0 - rate,
        mean_delay: (weight > 0.0).then(|| weighted / weight),
        p95_delay: None,
        rate_stderr: stats::std_error(fractions),
        delay_stderr: stats::std_error(&means),
        rate_iqr: stats::iqr(fractions),
        delay_iqr: stats::iqr(&means),
        delay_variance: stats::variance(&means),
        miss_variance: stats::variance(&misses),
    }
}

fn build_report(chunks: Vec<ChunkRecord>, populations: &[usize]) -> Result<MetricsReport, MetricsError> {
    let scored: Vec<&ChunkRecord> = chunks.iter().filter(|c| c.scored).collect();
    if scored.is_empty() {
        return Err(MetricsError::EmptyWindow);
    }
    let global = class_summary(None, populations.iter().sum(), &scored.iter().map(|c| &c.global).collect::<Vec<_>>());
    let classes = populations
        .iter()
        .enumerate()
        .map(|(i, &pop)| {
            let per: Vec<&ChunkClassStats> = scored.iter().map(|c| &c.classes[i]).collect();
            class_summary(Some(i as u32 + 1), pop, &per)
        })
        .collect();
    let windows = window_series(&chunks);
    let miss: Vec<f64> = windows.iter().map(|w| w.miss_ratio).collect();
    let delay: Vec<Option<f64>> = windows.iter().map(|w| w.mean_delay).collect();
    let time = convergence_time(&delay, &miss, CONVERGENCE_TOL).map(|w| windows[w].start);
    Ok(MetricsReport {
        scored_chunks: scored.len(),
        global,
        classes,
        convergence: Convergence { window: WINDOW_SECS, tolerance: CONVERGENCE_TOL, time },
        windows,
        chunks,
    })
}

/// Tumbling windows by chunk creation time over every chunk with a full
/// deadline window, warmup included.
fn window_series(chunks: &[ChunkRecord]) -> Vec<WindowPoint> {
    let mut out: Vec<WindowPoint> = Vec::new();
    let mut members: Vec<&ChunkRecord> = Vec::new();
    let mut current = 0usize;
    let flush = |idx: usize, members: &mut Vec<&ChunkRecord>, out: &mut Vec<WindowPoint>| {
        if members.is_empty() {
            return;
        }
        let fractions: Vec<f64> = members.iter().map(|c| c.global.delivered_fraction).collect();
        let delays: Vec<f64> = members.iter().filter_map(|c| c.global.mean_delay).collect();
        out.push(WindowPoint {
            start: idx as f64 * WINDOW_SECS,
            chunks: members.len(),
            miss_ratio: 1.0 - stats::mean(&fractions).unwrap_or(0.0),
            mean_delay: stats::mean(&delays),
        });
        members.clear();
    };
    for c in chunks {
        let idx = (c.creation / WINDOW_SECS).floor() as usize;
        if idx != current {
            flush(current, &mut members, &mut out);
            current = idx;
        }
        members.push(c);
    }
    flush(current, &mut members, &mut out);
    // The chunk created exactly at duration - D opens a window of its own.
    let full = out.iter().map(|w| w.chunks).max().unwrap_or(0);
    if out.len() > 1 && out.last().is_some_and(|w| w.chunks < full) {
        out.pop();
    }
    out
}

/// Index of the earliest window after which both series stay within `tol`
/// (relative) of their tail means, or within `NOISE_SIGMAS` tail standard
/// deviations if that is wider. `None` if the last window already fails.
pub fn convergence_time(delay: &[Option<f64>], miss: &[f64], tol: f64) -> Option<usize> {
    assert_eq!(delay.len(), miss.len());
    let n = miss.len();
    if n == 0 {
        return None;
    }
    let tail_len = ((n as f64 * TAIL_FRACTION).ceil() as usize).clamp(1, n);
    let tail = n - tail_len;
    let delay_tail: Vec<f64> = delay[tail..].iter().flatten().copied().collect();
    let band = |xs: &[f64]| {
        let m = stats::mean(xs)?;
        let sd = stats::variance(xs).map_or(0.0, f64::sqrt);
        Some((m, (tol * m.abs()).max(NOISE_SIGMAS * sd)))
    };
    let delay_band = band(&delay_tail);
    let (miss_tail, miss_width) = band(&miss[tail..])?;
    let ok = |i: usize| {
        let d = match (delay[i], delay_band) {
            (Some(d), Some((t, width))) => (d - t).abs() <= width,
            (None, None) => true,
            _ => false,
        };
        d && (miss[i] - miss_tail).abs() <= miss_width
    };
    let mut start = n;
    while start > 0 && ok(start - 1) {
        start -= 1;
    }
    (start < n).then_some(start)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CopyPartition {
    /// 0-based class of the k-th copy's receiver.
    pub class: usize,
    pub chunks: usize,
    pub rate: f64,
    pub rate_stderr: Option<f64>,
    pub mean_delay: Option<f64>,
    pub delay_stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CopyConditional {
    pub k: usize,
    pub partitions: Vec<CopyPartition>,
    /// Scored chunks with fewer than `k` timely arrivals.
    pub excluded: usize,
}

impl CopyPartition {
    /// 95% normal interval on the conditional rate.
    pub fn rate_interval(&self) -> (f64, f64) {
        let half = 1.96 * self.rate_stderr.unwrap_or(f64::INFINITY);
        (self.rate - half, self.rate + half)
    }
}

impl MetricsReport {
    /// Groups scored chunks by the class of their k-th arrival's receiver and
    /// reports the final global rate and mean delay of each group.
    pub fn kth_copy_conditional(&self, k: usize) -> CopyConditional {
        assert!((1..=TRACKED_COPIES).contains(&k), "k must be in 1..={TRACKED_COPIES}");
        let mut groups: Vec<Vec<&ChunkRecord>> = vec![Vec::new(); self.classes.len()];
        let mut excluded = 0;
        for c in self.chunks.iter().filter(|c| c.scored) {
            match c.copy_classes.get(k - 1) {
                Some(&class) => groups[class].push(c),
                None => excluded += 1,
            }
        }
        let partitions = groups
            .into_iter()
            .enumerate()
            .filter(|(_, g)| !g.is_empty())
            .map(|(class, g)| {
                let rates: Vec<f64> = g.iter().map(|c| c.global.delivered_fraction).collect();
                let delays: Vec<f64> = g.iter().filter_map(|c| c.global.mean_delay).collect();
                CopyPartition {
                    class,
                    chunks: g.len(),
                    rate: stats::mean(&rates).unwrap_or(0.0),
                    rate_stderr: stats::std_error(&rates),
                    mean_delay: stats::mean(&delays),
                    delay_stderr: stats::std_error(&delays),
                }
            })
            .collect();
        CopyConditional { k, partitions, excluded }
    }

    pub fn scored(&self) -> impl Iterator<Item = &ChunkRecord> {
        self.chunks.iter().filter(|c| c.scored)
    }

    pub fn write_json<W: Write>(&self, out: W) -> io::Result<()> {
        serde_json::to_writer_pretty(out, self).map_err(io::Error::from)
    }

    /// `chunk_id,class,delivered_fraction,mean_delay,p95_delay`; class `all`
    /// is the all-peer aggregate.
    pub fn write_per_chunk_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["chunk_id", "class", "delivered_fraction", "mean_delay", "p95_delay"])?;
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        for c in self.scored() {
            let rows = std::iter::once(("all".to_string(), &c.global))
                .chain(c.classes.iter().enumerate().map(|(i, s)| ((i + 1).to_string(), s)));
            for (class, s) in rows {
                w.write_record([
                    c.chunk.to_string(),
                    class,
                    format!("{:.6}", s.delivered_fraction),
                    opt(s.mean_delay),
                    opt(s.p95_delay),
                ])?;
            }
        }
        w.flush()
    }

    /// Empirical CDFs of per-chunk rate and per-chunk mean delay,
    /// `metric,class,x,F`.
    pub fn write_cdf_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "class", "x", "F"])?;
        for (metric, rows) in self.cdfs() {
            for (class, points) in rows {
                for (x, f) in points {
                    w.write_record([metric.to_string(), class.clone(), format!("{x:.6}"), format!("{f:.6}")])?;
                }
            }
        }
        w.flush()
    }

    /// `(metric, [(class label, ecdf points)])` for `rate` and `mean_delay`.
    pub fn cdfs(&self) -> Vec<(&'static str, Vec<ClassCdf>)> {
        let labels = std::iter::once("all".to_string()).chain((1..=self.classes.len()).map(|i| i.to_string()));
        let pick = |c: &ChunkRecord, idx: usize| -> ChunkClassStats {
            if idx == 0 { c.global.clone() } else { c.classes[idx - 1].clone() }
        };
        let mut rate = Vec::new();
        let mut delay = Vec::new();
        for (idx, label) in labels.enumerate() {
            let per: Vec<ChunkClassStats> = self.scored().map(|c| pick(c, idx)).collect();
            let r: Vec<f64> = per.iter().map(|s| s.delivered_fraction).collect();
            let d: Vec<f64> = per.iter().filter_map(|s| s.mean_delay).collect();
            rate.push((label.clone(), stats::ecdf(&r)));
            delay.push((label, stats::ecdf(&d)));
        }
        vec![("rate", rate), ("mean_delay", delay)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::*;

    fn scenario(n: usize, classes: &[(f64, f64)]) -> ValidScenario {
        validate_scenario(Scenario {
            n,
            edge_probability: EdgeProbability::Complete,
            classes: classes
                .iter()
                .enumerate()
                .map(|(i, &(u, f))| BandwidthClass { id: i as u32 + 1, upload_capacity: u, fraction: f })
                .collect(),
            stream: StreamSpec { stream_rate: 1.0, chunk_size: 1.0 },
            source: SourceSpec { upload_capacity: 1.0, policy: SourcePolicy::RandomPeer },
            scheme: SchemeSpec {
                weight_kind: WeightKind::Random,
                awareness_probability: 0.0,
                chunk_policy: ChunkPolicy::LatestUseful,
                epoch_length: None,
                blind_retry: true,
            },
            buffer_deadline: 5.0,
            duration: 40.0,
            warmup: 10.0,
            seed: 1,
        })
        .unwrap()
    }

    fn arrival(chunk: u64, receiver: u32, delay: f64, ordinal: u32) -> Transmission {
        let created = SimTime::from_secs(chunk as f64);
        Transmission {
            chunk,
            sender: 0,
            receiver,
            send_start: created,
            arrival: created + SimTime::from_secs(delay),
            useful: true,
            copy_ordinal: ordinal,
        }
    }

    fn sorted(mut log: Vec<Transmission>) -> Vec<Transmission> {
        log.sort_by_key(|t| (t.arrival, t.chunk, t.receiver));
        log
    }

    #[test]
    fn everyone_at_one_second_gives_rate_one() {
        let s = scenario(4, &[(1.0, 1.0)]);
        let log = sorted((0..40).flat_map(|k| (1..=4).map(move |p| arrival(k, p, 1.0, p))).collect());
        let r = summarize(&log, &s).unwrap();
        // Chunks 10..=35 are scored.
        assert_eq!(r.scored_chunks, 26);
        assert_eq!(r.global.rate, 1.0);
        assert_eq!(r.global.miss_ratio, 0.0);
        assert_eq!(r.global.mean_delay, Some(1.0));
        assert_eq!(r.global.p95_delay, Some(1.0));
    }

    #[test]
    fn empty_log_has_no_delay() {
        let r = summarize(&[], &scenario(4, &[(1.0, 1.0)])).unwrap();
        assert_eq!(r.global.rate, 0.0);
        assert_eq!(r.global.miss_ratio, 1.0);
        assert_eq!(r.global.mean_delay, None);
    }

    #[test]
    fn short_run_is_an_error() {
        let mut sc = scenario(4, &[(1.0, 1.0)]).into_scenario();
        sc.duration = 14.0;
        let s = validate_scenario(sc).unwrap();
        assert_eq!(summarize(&[], &s).unwrap_err(), MetricsError::EmptyWindow);
        assert_eq!(MetricsError::EmptyWindow.to_string(), "duration too short for warmup + deadline");
    }

    #[test]
    fn class_rates_recombine_and_late_copies_miss() {
        let s = scenario(4, &[(1.0, 0.5), (1.0, 0.5)]);
        let mut log = Vec::new();
        for k in 0..40 {
            log.push(arrival(k, 1, 1.0, 1));
            log.push(arrival(k, 3, 2.0, 2));
            let mut late = arrival(k, 4, 6.0, 3);
            late.useful = false;
            log.push(late);
        }
        let r = summarize(&sorted(log), &s).unwrap();
        assert_eq!(r.classes[0].rate, 0.5);
        assert_eq!(r.classes[1].rate, 0.5);
        let recombined: f64 = r.classes.iter().map(|c| c.population as f64 * c.rate).sum::<f64>() / 4.0;
        assert!((recombined - r.global.rate).abs() < 1e-12);
        assert_eq!(r.global.mean_delay, Some(1.5));
        for c in &r.classes {
            assert_eq!(c.rate + c.miss_ratio, 1.0);
        }
    }

    #[test]
    fn kth_copy_partitions_mix_back_to_unconditional() {
        let s = scenario(4, &[(1.0, 0.5), (1.0, 0.5)]);
        let mut log = Vec::new();
        for k in 0..40u64 {
            let first = if k % 3 == 0 { 1 } else { 3 };
            log.push(arrival(k, first, 1.0, 1));
            if k % 2 == 0 {
                log.push(arrival(k, 2, 2.0, 2));
            }
        }
        let r = summarize(&sorted(log), &s).unwrap();
        let cond = r.kth_copy_conditional(1);
        assert_eq!(cond.excluded, 0);
        let total: usize = cond.partitions.iter().map(|p| p.chunks).sum();
        assert_eq!(total, r.scored_chunks);
        let mixed: f64 = cond.partitions.iter().map(|p| p.rate * p.chunks as f64).sum::<f64>() / total as f64;
        assert!((mixed - r.global.rate).abs() < 1e-12);
        let second = r.kth_copy_conditional(2);
        assert_eq!(second.partitions.len(), 1);
        assert_eq!(second.excluded, r.scored().filter(|c| c.chunk % 2 == 1).count());
    }

    #[test]
    fn single_class_copies_form_one_partition() {
        let s = scenario(3, &[(1.0, 1.0)]);
        let log = sorted((0..40).flat_map(|k| (1..=2).map(move |p| arrival(k, p, p as f64, p))).collect());
        let r = summarize(&log, &s).unwrap();
        let cond = r.kth_copy_conditional(1);
        assert_eq!(cond.partitions.len(), 1);
        assert!((cond.partitions[0].rate - r.global.rate).abs() < 1e-12);
    }

    #[test]
    fn convergence_of_constant_and_step_series() {
        let flat = vec![Some(3.0); 8];
        assert_eq!(convergence_time(&flat, &[0.1; 8], 0.05), Some(0));
        let mut step: Vec<Option<f64>> = vec![Some(9.0); 3];
        step.extend(vec![Some(3.0); 9]);
        let miss = [0.1; 12];
        assert_eq!(convergence_time(&step, &miss, 0.05), Some(3));
        let mut last_bad = vec![0.1; 80];
        last_bad[79] = 100.0;
        assert_eq!(convergence_time(&[Some(3.0); 80], &last_bad, 0.05), None);
        // Alternating noise within the tail spread is not a transient.
        let noisy: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 0.09 } else { 0.11 }).collect();
        assert_eq!(convergence_time(&[Some(3.0); 40], &noisy, 0.05), Some(0));
    }

    #[test]
    fn cdfs_end_at_one_and_csv_has_headers() {
        let s = scenario(4, &[(1.0, 1.0)]);
        let log = sorted((0..40).flat_map(|k| (1..=(1 + k % 4) as u32).map(move |p| arrival(k, p, p as f64, p))).collect());
        let r = summarize(&log, &s).unwrap();
        for (_, rows) in r.cdfs() {
            for (_, pts) in rows {
                assert!(pts.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
                assert_eq!(pts.last().unwrap().1, 1.0);
            }
        }
        let mut buf = Vec::new();
        r.write_per_chunk_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("chunk_id,class,delivered_fraction,mean_delay,p95_delay\n"));
        assert_eq!(text.lines().count(), 1 + 2 * r.scored_chunks);
        let mut buf = Vec::new();
        r.write_cdf_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("metric,class,x,F\n"));
    }

    #[test]
    fn summarize_is_repeatable() {
        let s = scenario(4, &[(1.0, 1.0)]);
        let log = sorted((0..40).flat_map(|k| (1..=3).map(move |p| arrival(k, p, 0.5 * p as f64, p))).collect());
        assert_eq!(summarize(&log, &s).unwrap(), summarize(&log, &s).unwrap());
    }
}
