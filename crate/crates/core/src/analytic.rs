//! Mean-field recursion for latest-blind diffusion of one tagged chunk.
//!
//! Peers of a class are assumed to upload in lockstep every `T_i`, starting
//! from the tagged chunk's creation. An exact peer-level simulation of the
//! first exchanges (up to `T_init`) gives a set of initial conditions; from
//! there each condition is propagated with the class-level recursion:
//!
//! * at a class-`i` upload event `t`, every class `k` gains
//!   `(1 - exp(-λ_k)) (1 - r_k)` with `λ_k` the Poisson mean of copies a
//!   class-`k` peer receives;
//! * holders of class `i` then push the chunk, completing at `t + T_i`, with
//!   mass `α_i r_i(t)` damped by the chance that a fresher chunk took over;
//! * chunk generation events leave the curves unchanged.
//!
//! The freshness damping needs the J-averaged curve `r̄`, so the passes are
//! iterated to a fixed point starting from `r̄ ≡ 0`.

use std::collections::{BinaryHeap, HashSet};
use std::cmp::Reverse;
use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{derive_timing, ChunkPolicy, EdgeProbability, SimTime, SourcePolicy, ValidScenario, WeightKind};
use crate::metrics::{summary_from_samples, ClassSummary};
use crate::policies::draw_index;
use crate::rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticError {
    #[error("the solver supports random and bandwidth-aware selection only, got {0}")]
    UnsupportedWeight(WeightKind),
    #[error("{0}")]
    Invalid(String),
}

/// What produced a timeline entry. Equal times run in declaration order,
/// classes by ascending id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EventSource {
    Generation,
    Source,
    Class(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TimelineEntry {
    pub time: SimTime,
    pub source: EventSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventTimeline {
    pub entries: Vec<TimelineEntry>,
}

/// Merges `{k T_i}` for every uploading class and `{k T_SR}`, `k >= 1`, up
/// to and including `horizon`. Coincident times stay separate entries.
pub fn build_timeline(class_ticks: &[Option<SimTime>], chunk_period: SimTime, horizon: SimTime) -> EventTimeline {
    let mut entries = Vec::new();
    let mut add = |step: SimTime, source: EventSource| {
        assert!(step.nanos() > 0, "event period must be positive");
        let mut t = step;
        while t <= horizon {
            entries.push(TimelineEntry { time: t, source });
            t = t + step;
        }
    };
    add(chunk_period, EventSource::Generation);
    for (i, ticks) in class_ticks.iter().enumerate() {
        if let Some(step) = ticks {
            add(*step, EventSource::Class(i));
        }
    }
    entries.sort();
    EventTimeline { entries }
}

/// Upload mass known at the handoff, due at `time` on stream `source`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PendingMass {
    pub time: SimTime,
    pub source: EventSource,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialCondition {
    /// Fraction of each class holding the chunk at `T_init`.
    pub r: Vec<f64>,
    /// Exact receipts up to `T_init`, by time.
    pub receipts: Vec<(SimTime, usize)>,
    pub pending: Vec<PendingMass>,
    /// Uploads completed by `T_init`, source copies included.
    pub exchanges: usize,
}

/// When a peer that just received the tagged chunk starts forwarding it
/// during the exact prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PrefixStart {
    /// At the next point of its class grid `{k T_i}`, as in the recursion.
    #[default]
    Synchronized,
    /// After a uniform fraction of one upload time, as if finishing another chunk.
    RandomPhase,
    /// Immediately on receipt.
    Immediate,
}

/// Index used in the freshness product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProductIndex {
    /// `∏_{k=1}^{⌊t/T_SR⌋} (1 - r̄_i(k T_SR))`, as written.
    #[default]
    Literal,
    /// `∏_{k=1}^{⌊t/T_SR⌋} (1 - r̄_i(t - k T_SR))`, the age of each fresher chunk.
    Age,
}

/// Mean of the Poisson number of copies a class-`k` peer gets from mass `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PoissonMean {
    /// `β(i,k) p / α_k`: the class's share of `n p` copies spread over its `α_k n` peers.
    #[default]
    PerPeer,
    /// `β(i,k) p`, as written.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveOptions {
    pub conditions: usize,
    pub t_init: f64,
    /// Defaults to the buffer deadline.
    pub horizon: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub prefix: PrefixStart,
    pub product: ProductIndex,
    pub poisson: PoissonMean,
    /// Keep `r̄` and the first condition's curve for every iteration.
    pub keep_history: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            conditions: 1000,
            t_init: 0.0,
            horizon: None,
            tol: 1e-4,
            max_iter: 20,
            prefix: PrefixStart::default(),
            product: ProductIndex::default(),
            poisson: PoissonMean::default(),
            keep_history: false,
        }
    }
}

fn static_weight(kind: WeightKind) -> Result<(), AnalyticError> {
    match kind {
        WeightKind::Random | WeightKind::BandwidthAware => Ok(()),
        other => Err(AnalyticError::UnsupportedWeight(other)),
    }
}

fn class_weight(kind: WeightKind, capacity: f64) -> f64 {
    match kind {
        WeightKind::BandwidthAware => capacity,
        _ => 1.0,
    }
}

/// Probability that one sender picks one given peer of class `k`.
#[derive(Debug, Clone, PartialEq)]
struct PeerMass {
    per_peer: Vec<f64>,
}

fn peer_mass(s: &ValidScenario, sender: Option<usize>) -> Result<PeerMass, AnalyticError> {
    let sc = s.scenario();
    let pops = s.populations();
    let n = s.n() as f64;
    let (kind, w, targeted) = match sender {
        Some(_) => (sc.scheme.weight_kind, sc.scheme.effective_awareness(), None),
        None => match &sc.source.policy {
            SourcePolicy::RandomPeer => (WeightKind::Random, 0.0, None),
            SourcePolicy::ClassTargeted { class } => (WeightKind::Random, 0.0, Some(*class as usize - 1)),
            SourcePolicy::Aware { weight_kind, awareness_probability } => {
                (*weight_kind, if *weight_kind == WeightKind::Random { 0.0 } else { *awareness_probability }, None)
            }
        },
    };
    static_weight(kind)?;
    if let Some(c) = targeted {
        let per_peer = (0..pops.len()).map(|k| if k == c { 1.0 / pops[c] as f64 } else { 0.0 }).collect();
        return Ok(PeerMass { per_peer });
    }
    let h: Vec<f64> = sc.classes.iter().map(|c| class_weight(kind, c.upload_capacity)).collect();
    let own = sender.map(|i| h[i]).unwrap_or(0.0);
    let others = if sender.is_some() { n - 1.0 } else { n };
    let total: f64 = pops.iter().zip(&h).map(|(&p, &x)| p as f64 * x).sum::<f64>() - own;
    let per_peer = h
        .iter()
        .map(|&hk| {
            if others <= 0.0 {
                return 0.0;
            }
            let uniform = 1.0 / others;
            let aware = if total > 0.0 { hk / total } else { uniform };
            w * aware + (1.0 - w) * uniform
        })
        .collect();
    Ok(PeerMass { per_peer })
}

/// Class-level selection matrix on a full mesh: row `i` is the chance that a
/// class-`i` peer picks some peer of class `i'`, self excluded. Rows sum to 1.
pub fn class_beta(s: &ValidScenario) -> Result<Vec<Vec<f64>>, AnalyticError> {
    let pops = s.populations();
    (0..pops.len())
        .map(|i| {
            let m = peer_mass(s, Some(i))?;
            Ok((0..pops.len())
                .map(|k| {
                    let count = pops[k] as f64 - if k == i { 1.0 } else { 0.0 };
                    count.max(0.0) * m.per_peer[k]
                })
                .collect())
        })
        .collect()
}

/// The source's selection row over classes.
pub fn source_beta(s: &ValidScenario) -> Result<Vec<f64>, AnalyticError> {
    let m = peer_mass(s, None)?;
    Ok(s.populations().iter().zip(&m.per_peer).map(|(&p, &x)| p as f64 * x).collect())
}

/// Shared constants of one scenario.
struct Model {
    n: usize,
    populations: Vec<usize>,
    alpha: Vec<f64>,
    class_ticks: Vec<Option<SimTime>>,
    chunk_period: SimTime,
    source_upload: SimTime,
    horizon: SimTime,
    t_init: SimTime,
    beta: Vec<Vec<f64>>,
    source_beta: Vec<f64>,
    peer_mass: Vec<PeerMass>,
    source_mass: PeerMass,
    blind_retry: bool,
}

impl Model {
    fn new(s: &ValidScenario, opts: &SolveOptions) -> Result<Self, AnalyticError> {
        let sc = s.scenario();
        if !(opts.t_init.is_finite() && opts.t_init >= 0.0) {
            return Err(AnalyticError::Invalid("t_init must be >= 0".into()));
        }
        if opts.conditions == 0 {
            return Err(AnalyticError::Invalid("at least one initial condition is required".into()));
        }
        if sc.edge_probability != EdgeProbability::Complete {
            log::warn!("the solver assumes a full mesh; edge probability is ignored");
        }
        if sc.scheme.chunk_policy != ChunkPolicy::LatestBlind {
            log::warn!("the solver models latest-blind chunk selection");
        }
        let timing = derive_timing(s);
        let pops = s.populations().to_vec();
        let n = s.n();
        let horizon = SimTime::from_secs(opts.horizon.unwrap_or(sc.buffer_deadline));
        let masses = (0..pops.len()).map(|i| peer_mass(s, Some(i))).collect::<Result<_, _>>()?;
        Ok(Model {
            n,
            alpha: pops.iter().map(|&p| p as f64 / n as f64).collect(),
            class_ticks: (0..pops.len()).map(|i| timing.class_ticks(i)).collect(),
            chunk_period: timing.chunk_period_ticks(),
            source_upload: timing.source_upload_ticks(),
            horizon,
            t_init: SimTime::from_secs(opts.t_init),
            beta: class_beta(s)?,
            source_beta: source_beta(s)?,
            peer_mass: masses,
            source_mass: peer_mass(s, None)?,
            blind_retry: sc.scheme.chunk_policy != ChunkPolicy::LatestBlind || sc.scheme.blind_retry,
            populations: pops,
        })
    }

    fn classes(&self) -> usize {
        self.populations.len()
    }

    /// First class-`i` grid point strictly after `t_init`.
    fn first_event_after_init(&self, step: SimTime) -> SimTime {
        SimTime((self.t_init.nanos() / step.nanos() + 1) * step.nanos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum PrefixEvent {
    /// Completion sorts first so receipts at `t` are visible to starts at `t`.
    Complete { sender: Option<(usize, u32)>, target: (usize, u32) },
    Start { sender: Option<(usize, u32)> },
}

/// Draws one initial condition by simulating the tagged chunk exactly on a
/// full mesh until `T_init`. With retry, holders send to peers lacking the
/// chunk, drawn from the selection law restricted to them; without, targets
/// come from the whole law and copies to holders are wasted.
fn sample_condition<R: Rng>(m: &Model, prefix: PrefixStart, rng: &mut R) -> InitialCondition {
    let classes = m.classes();
    let mut holders: HashSet<(usize, u32)> = HashSet::new();
    let mut held = vec![0usize; classes];
    let mut receipts = Vec::new();
    let mut pending = Vec::new();
    let mut exchanges = 0;
    let mut queue: BinaryHeap<Reverse<(SimTime, PrefixEvent, u64)>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |queue: &mut BinaryHeap<_>, t: SimTime, e: PrefixEvent| {
        seq += 1;
        queue.push(Reverse((t, e, seq)));
    };
    let unit = 1.0 / m.n as f64;

    // Source copies: one per slot while the tagged chunk is the newest.
    let mut start = SimTime::ZERO;
    while start < m.chunk_period {
        if start <= m.t_init {
            push(&mut queue, start, PrefixEvent::Start { sender: None });
        } else {
            pending.push(PendingMass { time: start + m.source_upload, source: EventSource::Source, mass: unit });
        }
        start = start + m.source_upload;
    }

    while let Some(Reverse((t, event, _))) = queue.pop() {
        match event {
            PrefixEvent::Start { sender } => {
                let (upload, mass) = match sender {
                    None => (m.source_upload, &m.source_mass),
                    Some((i, _)) => (m.class_ticks[i].expect("free-riders never upload"), &m.peer_mass[i]),
                };
                let candidates = |k: usize| -> usize {
                    if m.blind_retry {
                        m.populations[k] - held[k]
                    } else {
                        m.populations[k] - usize::from(sender.is_some_and(|(i, _)| i == k))
                    }
                };
                let masses: Vec<f64> = (0..classes).map(|k| candidates(k) as f64 * mass.per_peer[k]).collect();
                let mut chosen = draw_index(&masses, rng);
                if chosen.is_none() && sender.is_none() {
                    // Class-targeted source with its class exhausted.
                    let any: Vec<f64> = (0..classes).map(|k| candidates(k) as f64).collect();
                    chosen = draw_index(&any, rng);
                }
                let Some(k) = chosen else { continue };
                let idx = loop {
                    let idx = rng.gen_range(0..m.populations[k] as u32);
                    let taken = if m.blind_retry { holders.contains(&(k, idx)) } else { sender == Some((k, idx)) };
                    if !taken {
                        break idx;
                    }
                };
                let done = t + upload;
                if done <= m.t_init {
                    push(&mut queue, done, PrefixEvent::Complete { sender, target: (k, idx) });
                } else {
                    let (time, source) = match sender {
                        None => (done, EventSource::Source),
                        Some((i, _)) => (m.first_event_after_init(upload), EventSource::Class(i)),
                    };
                    pending.push(PendingMass { time, source, mass: unit });
                }
            }
            PrefixEvent::Complete { sender, target } => {
                exchanges += 1;
                if holders.insert(target) {
                    held[target.0] += 1;
                    receipts.push((t, target.0));
                    if let Some(step) = m.class_ticks[target.0] {
                        let first = match prefix {
                            PrefixStart::Synchronized => SimTime(t.nanos().div_ceil(step.nanos()) * step.nanos()),
                            PrefixStart::RandomPhase => t + SimTime((rng.gen::<f64>() * step.nanos() as f64) as u64),
                            PrefixStart::Immediate => t,
                        };
                        if first <= m.t_init {
                            push(&mut queue, first, PrefixEvent::Start { sender: Some(target) });
                        }
                    }
                }
                if sender.is_some() {
                    push(&mut queue, t, PrefixEvent::Start { sender });
                }
            }
        }
    }

    let r = (0..classes)
        .map(|k| if m.populations[k] == 0 { 0.0 } else { held[k] as f64 / m.populations[k] as f64 })
        .collect();
    InitialCondition { r, receipts, pending, exchanges }
}

/// Samples `count` independent initial conditions from the scenario seed.
pub fn sample_initial_conditions(
    s: &ValidScenario,
    count: usize,
    t_init: f64,
    prefix: PrefixStart,
) -> Result<Vec<InitialCondition>, AnalyticError> {
    let opts = SolveOptions { conditions: count, t_init, ..Default::default() };
    let m = Model::new(s, &opts)?;
    let mut rng = rng::initial_condition_stream(s.scenario().seed);
    Ok((0..count).map(|_| sample_condition(&m, prefix, &mut rng)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub time: SimTime,
    /// `None` for exact-prefix receipts.
    pub source: Option<EventSource>,
    pub r: Vec<f64>,
    /// Upload mass that completed at this entry.
    pub p: f64,
}

/// Per-class holder fractions of one initial condition, as a step function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionCurve {
    pub points: Vec<CurvePoint>,
}

impl DiffusionCurve {
    /// Value after every point at or before `t`; zero before the first.
    pub fn at(&self, t: SimTime, class: usize) -> f64 {
        let idx = self.points.partition_point(|p| p.time <= t);
        if idx == 0 {
            0.0
        } else {
            self.points[idx - 1].r[class]
        }
    }

    pub fn final_r(&self) -> Option<&[f64]> {
        self.points.last().map(|p| p.r.as_slice())
    }

    /// Per-class rate at the end of the curve and mean receipt time among
    /// receivers (`None` when nobody received).
    pub fn rate_and_delay(&self, classes: usize) -> (Vec<f64>, Vec<Option<f64>>) {
        let mut prev = vec![0.0; classes];
        let mut weighted = vec![0.0; classes];
        for p in &self.points {
            for k in 0..classes {
                weighted[k] += (p.r[k] - prev[k]) * p.time.as_secs();
            }
            prev.clone_from(&p.r);
        }
        let delay = (0..classes).map(|k| (prev[k] > 0.0).then(|| weighted[k] / prev[k])).collect();
        (prev, delay)
    }
}

/// J-average of diffusion curves on the union of their breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AverageCurve {
    pub times: Vec<SimTime>,
    pub values: Vec<Vec<f64>>,
}

impl AverageCurve {
    pub fn zero(classes: usize) -> Self {
        AverageCurve { times: vec![SimTime::ZERO], values: vec![vec![0.0; classes]] }
    }

    pub fn from_curves(curves: &[DiffusionCurve], classes: usize) -> Self {
        let mut times: Vec<SimTime> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.time)).collect();
        times.push(SimTime::ZERO);
        times.sort_unstable();
        times.dedup();
        let values = times
            .par_iter()
            .map(|&t| {
                (0..classes)
                    .map(|k| curves.iter().map(|c| c.at(t, k)).sum::<f64>() / curves.len() as f64)
                    .collect()
            })
            .collect();
        AverageCurve { times, values }
    }

    pub fn at(&self, t: SimTime, class: usize) -> f64 {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            0.0
        } else {
            self.values[idx - 1][class]
        }
    }

    /// Largest pointwise difference, checked at both curves' breakpoints.
    pub fn sup_distance(&self, other: &AverageCurve) -> f64 {
        let classes = self.values.first().map_or(0, Vec::len);
        self.times
            .iter()
            .chain(&other.times)
            .flat_map(|&t| (0..classes).map(move |k| (t, k)))
            .map(|(t, k)| (self.at(t, k) - other.at(t, k)).abs())
            .fold(0.0, f64::max)
    }
}

fn freshness_product(m: &Model, r_bar: &AverageCurve, class: usize, t: SimTime, index: ProductIndex) -> f64 {
    let fresher = t.nanos() / m.chunk_period.nanos();
    (1..=fresher)
        .map(|k| {
            let at = match index {
                ProductIndex::Literal => SimTime(k * m.chunk_period.nanos()),
                ProductIndex::Age => SimTime(t.nanos() - k * m.chunk_period.nanos()),
            };
            1.0 - r_bar.at(at, class)
        })
        .product()
}

/// Applies one upload completion of mass `p` spread by `row`.
fn absorb(r: &mut [f64], row: &[f64], p: f64, alpha: &[f64], poisson: PoissonMean) {
    for k in 0..r.len() {
        let lambda = match poisson {
            PoissonMean::PerPeer if alpha[k] > 0.0 => row[k] * p / alpha[k],
            PoissonMean::PerPeer => 0.0,
            PoissonMean::Literal => row[k] * p,
        };
        r[k] += (1.0 - (-lambda).exp()) * (1.0 - r[k]);
    }
}

/// Runs the recursion for one initial condition against a given `r̄`.
pub fn recursion_pass(
    timeline: &EventTimeline,
    condition: &InitialCondition,
    r_bar: &AverageCurve,
    s: &ValidScenario,
    opts: &SolveOptions,
) -> Result<DiffusionCurve, AnalyticError> {
    let m = Model::new(s, opts)?;
    Ok(pass(&m, timeline, condition, r_bar, opts))
}

fn pass(m: &Model, timeline: &EventTimeline, cond: &InitialCondition, r_bar: &AverageCurve, opts: &SolveOptions) -> DiffusionCurve {
    let classes = m.classes();
    let mut points = Vec::with_capacity(cond.receipts.len() + timeline.entries.len());
    let mut counts = vec![0usize; classes];
    for &(t, k) in &cond.receipts {
        counts[k] += 1;
        let r = (0..classes).map(|c| counts[c] as f64 / m.populations[c].max(1) as f64).collect();
        points.push(CurvePoint { time: t, source: None, r, p: 0.0 });
    }

    // Mass due on each class grid, indexed by k for time k T_i.
    let mut p_class: Vec<Vec<f64>> = m
        .class_ticks
        .iter()
        .map(|t| t.map_or(Vec::new(), |step| vec![0.0; (m.horizon.nanos() / step.nanos()) as usize + 2]))
        .collect();
    let mut entries: Vec<(TimelineEntry, f64)> = Vec::new();
    for pm in &cond.pending {
        match pm.source {
            EventSource::Class(i) => {
                let step = m.class_ticks[i].expect("pending mass on a free-rider stream").nanos();
                debug_assert_eq!(pm.time.nanos() % step, 0);
                if let Some(slot) = p_class[i].get_mut((pm.time.nanos() / step) as usize) {
                    *slot += pm.mass;
                }
            }
            EventSource::Source => {
                if pm.time > m.t_init && pm.time <= m.horizon {
                    entries.push((TimelineEntry { time: pm.time, source: EventSource::Source }, pm.mass));
                }
            }
            EventSource::Generation => unreachable!("generation carries no mass"),
        }
    }
    entries.extend(timeline.entries.iter().filter(|e| e.time > m.t_init).map(|&e| (e, 0.0)));
    entries.sort_by_key(|e| e.0);

    let mut r = cond.r.clone();
    for (entry, source_mass) in entries {
        let t = entry.time;
        let p = match entry.source {
            EventSource::Generation => 0.0,
            EventSource::Source => {
                absorb(&mut r, &m.source_beta, source_mass, &m.alpha, opts.poisson);
                source_mass
            }
            EventSource::Class(i) => {
                let step = m.class_ticks[i].expect("free-riders have no events").nanos();
                let k = (t.nanos() / step) as usize;
                let p = p_class[i][k];
                if p > 0.0 {
                    absorb(&mut r, &m.beta[i], p, &m.alpha, opts.poisson);
                }
                let push = m.alpha[i] * r[i] * freshness_product(m, r_bar, i, t, opts.product);
                if let Some(slot) = p_class[i].get_mut(k + 1) {
                    *slot += push;
                }
                p
            }
        };
        points.push(CurvePoint { time: t, source: Some(entry.source), r: r.clone(), p });
    }
    DiffusionCurve { points }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub rate: Vec<f64>,
    pub delay: Vec<Option<f64>>,
    pub global_rate: f64,
    pub global_delay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationTrace {
    pub r_bar: AverageCurve,
    pub first_curve: DiffusionCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub conditions: usize,
    pub t_init: f64,
    pub horizon: f64,
    pub mean_exchanges: f64,
    pub options: SolveOptions,
    pub global: ClassSummary,
    pub classes: Vec<ClassSummary>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub conditions: Vec<InitialCondition>,
    pub curves: Vec<DiffusionCurve>,
    pub r_bar: AverageCurve,
    pub predictions: Vec<Prediction>,
    pub report: PredictionReport,
    pub history: Vec<IterationTrace>,
    /// Sup-norm change of `r̄` at each iteration.
    pub residuals: Vec<f64>,
}

/// Fixed-point solve: iterate passes over all conditions, feeding each
/// iteration's `r̄` into the next, until `r̄` moves less than `tol`. When the
/// budget runs out the iterate with the smallest change is returned.
pub fn solve(s: &ValidScenario, opts: &SolveOptions) -> Result<Solution, AnalyticError> {
    let m = Model::new(s, opts)?;
    let classes = m.classes();
    let mut rng = rng::initial_condition_stream(s.scenario().seed);
    let conditions: Vec<InitialCondition> =
        (0..opts.conditions).map(|_| sample_condition(&m, opts.prefix, &mut rng)).collect();
    let timeline = build_timeline(&m.class_ticks, m.chunk_period, m.horizon);

    let mut r_bar = AverageCurve::zero(classes);
    let mut best: Option<(f64, Vec<DiffusionCurve>, AverageCurve)> = None;
    let mut history = Vec::new();
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter.max(1) {
        let curves: Vec<DiffusionCurve> =
            conditions.par_iter().map(|c| pass(&m, &timeline, c, &r_bar, opts)).collect();
        let next = AverageCurve::from_curves(&curves, classes);
        let residual = next.sup_distance(&r_bar);
        residuals.push(residual);
        if opts.keep_history {
            history.push(IterationTrace { r_bar: next.clone(), first_curve: curves[0].clone() });
        }
        if best.as_ref().is_none_or(|b| residual < b.0) {
            best = Some((residual, curves, next.clone()));
        }
        r_bar = next;
        if residual < opts.tol {
            converged = true;
            break;
        }
    }
    let (residual, curves, r_bar) = best.expect("at least one iteration");
    if !converged {
        log::warn!("fixed point not reached after {} iterations (residual {residual:.2e})", residuals.len());
    }

    let predictions: Vec<Prediction> = curves
        .iter()
        .map(|c| {
            let (rate, delay) = c.rate_and_delay(classes);
            let global_rate: f64 = rate.iter().zip(&m.alpha).map(|(r, a)| r * a).sum();
            let weighted: f64 = (0..classes).filter_map(|k| delay[k].map(|d| d * rate[k] * m.alpha[k])).sum();
            Prediction { global_delay: (global_rate > 0.0).then(|| weighted / global_rate), global_rate, rate, delay }
        })
        .collect();

    let summary = |class: Option<usize>| {
        let (fractions, delays): (Vec<f64>, Vec<Option<f64>>) = predictions
            .iter()
            .map(|p| match class {
                None => (p.global_rate, p.global_delay),
                Some(k) => (p.rate[k], p.delay[k]),
            })
            .unzip();
        let pop = class.map_or(m.n, |k| m.populations[k]);
        summary_from_samples(class.map(|k| k as u32 + 1), pop, &fractions, &delays)
    };
    let report = PredictionReport {
        converged,
        iterations: residuals.len(),
        residual,
        conditions: conditions.len(),
        t_init: opts.t_init,
        horizon: m.horizon.as_secs(),
        mean_exchanges: conditions.iter().map(|c| c.exchanges as f64).sum::<f64>() / conditions.len() as f64,
        options: opts.clone(),
        global: summary(None),
        classes: (0..classes).map(|k| summary(Some(k))).collect(),
    };
    Ok(Solution { conditions, curves, r_bar, predictions, report, history, residuals })
}

/// `t,class,r,p,r_bar` rows for one curve and its average, class ids 1-based.
pub fn write_curve_csv<W: Write>(curve: &DiffusionCurve, r_bar: &AverageCurve, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "class", "r", "p", "r_bar"])?;
    for p in &curve.points {
        for (k, r) in p.r.iter().enumerate() {
            w.write_record([
                format!("{}", p.time),
                (k + 1).to_string(),
                format!("{r:.8}"),
                format!("{:.8}", p.p),
                format!("{:.8}", r_bar.at(p.time, k)),
            ])?;
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::*;

    fn secs(x: f64) -> SimTime {
        SimTime::from_secs(x)
    }

    fn scenario(classes: &[(f64, f64)], n: usize) -> Scenario {
        Scenario {
            n,
            edge_probability: EdgeProbability::Complete,
            classes: classes
                .iter()
                .enumerate()
                .map(|(i, &(u, f))| BandwidthClass { id: i as u32 + 1, upload_capacity: u, fraction: f })
                .collect(),
            stream: StreamSpec { stream_rate: 0.9, chunk_size: 0.9 },
            source: SourceSpec { upload_capacity: 0.9, policy: SourcePolicy::RandomPeer },
            scheme: SchemeSpec {
                weight_kind: WeightKind::BandwidthAware,
                awareness_probability: 1.0,
                chunk_policy: ChunkPolicy::LatestBlind,
                epoch_length: None,
                blind_retry: true,
            },
            buffer_deadline: 30.0,
            duration: 100.0,
            warmup: 10.0,
            seed: 3,
        }
    }

    fn table1() -> Vec<(f64, f64)> {
        vec![(4.0, 0.15), (1.0, 0.25), (0.384, 0.40), (0.128, 0.20)]
    }

    #[test]
    fn timeline_enumerates_with_multiplicity() {
        let tl = build_timeline(&[Some(secs(2.0))], secs(1.0), secs(4.0));
        let got: Vec<(f64, EventSource)> = tl.entries.iter().map(|e| (e.time.as_secs(), e.source)).collect();
        use EventSource::*;
        assert_eq!(
            got,
            vec![(1.0, Generation), (2.0, Generation), (2.0, Class(0)), (3.0, Generation), (4.0, Generation), (4.0, Class(0))]
        );
        let same = build_timeline(&[Some(secs(1.0))], secs(1.0), secs(3.0));
        assert_eq!(same.entries.len(), 6);
        let two = build_timeline(&[Some(secs(2.0)), Some(secs(0.5)), None], secs(100.0), secs(10.0));
        let count = |c| two.entries.iter().filter(|e| e.source == Class(c)).count();
        assert_eq!((count(0), count(1), count(2)), (5, 20, 0));
    }

    #[test]
    fn random_peer_beta_is_uniform_over_others() {
        let mut sc = scenario(&[(0.5, 2.0 / 3.0), (2.0, 1.0 / 3.0)], 600);
        sc.scheme.weight_kind = WeightKind::Random;
        let b = class_beta(&validate_scenario(sc).unwrap()).unwrap();
        assert!((b[0][0] - 399.0 / 599.0).abs() < 1e-15);
        assert!((b[0][1] - 200.0 / 599.0).abs() < 1e-15);
    }

    #[test]
    fn homogeneous_bandwidth_aware_equals_random() {
        let aware = validate_scenario(scenario(&[(1.0, 0.3), (1.0, 0.7)], 100)).unwrap();
        let mut rp = scenario(&[(1.0, 0.3), (1.0, 0.7)], 100);
        rp.scheme.weight_kind = WeightKind::Random;
        let a = class_beta(&aware).unwrap();
        let b = class_beta(&validate_scenario(rp).unwrap()).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn table1_rows_sum_to_one_and_favour_rich() {
        let v = validate_scenario(scenario(&table1(), 1000)).unwrap();
        let b = class_beta(&v).unwrap();
        for row in &b {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row[0] > 0.15);
        }
    }

    #[test]
    fn tit_for_tat_is_rejected() {
        let mut sc = scenario(&table1(), 100);
        sc.scheme.weight_kind = WeightKind::TitForTat;
        sc.scheme.epoch_length = Some(10.0);
        let v = validate_scenario(sc).unwrap();
        assert_eq!(class_beta(&v), Err(AnalyticError::UnsupportedWeight(WeightKind::TitForTat)));
    }

    #[test]
    fn eq3_examples() {
        let mut r = vec![0.0];
        absorb(&mut r, &[1.0], std::f64::consts::LN_2, &[1.0], PoissonMean::Literal);
        assert!((r[0] - 0.5).abs() < 1e-15);
        let mut r = vec![0.3, 0.6];
        absorb(&mut r, &[0.0, 1.0], 0.0, &[0.5, 0.5], PoissonMean::PerPeer);
        assert_eq!(r, vec![0.3, 0.6]);
        absorb(&mut r, &[0.0, 1.0], 0.2, &[0.5, 0.5], PoissonMean::PerPeer);
        assert_eq!(r[0], 0.3);
        assert!(r[1] > 0.6);
    }

    #[test]
    fn init_at_zero_leaves_only_the_source_copy() {
        let v = validate_scenario(scenario(&table1(), 1000)).unwrap();
        let conds = sample_initial_conditions(&v, 1, 0.0, PrefixStart::Synchronized).unwrap();
        let c = &conds[0];
        assert!(c.r.iter().all(|&x| x == 0.0));
        assert_eq!(c.pending, vec![PendingMass { time: secs(1.0), source: EventSource::Source, mass: 1e-3 }]);
    }

    #[test]
    fn init_at_chunk_period_holds_exactly_the_source_copy() {
        let v = validate_scenario(scenario(&table1(), 1000)).unwrap();
        let c = &sample_initial_conditions(&v, 1, 1.0, PrefixStart::Synchronized).unwrap()[0];
        assert_eq!(c.receipts.len(), 1);
        assert_eq!(c.exchanges, 1);
        let k = c.receipts[0].1;
        assert_eq!(c.r[k], 1.0 / v.populations()[k] as f64);
    }

    #[test]
    fn empty_condition_never_spreads() {
        let v = validate_scenario(scenario(&table1(), 1000)).unwrap();
        let opts = SolveOptions { t_init: 0.0, ..Default::default() };
        let m = Model::new(&v, &opts).unwrap();
        let tl = build_timeline(&m.class_ticks, m.chunk_period, m.horizon);
        let empty = InitialCondition { r: vec![0.0; 4], receipts: vec![], pending: vec![], exchanges: 0 };
        let curve = pass(&m, &tl, &empty, &AverageCurve::zero(4), &opts);
        assert!(curve.points.iter().all(|p| p.r.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn curves_are_monotone_and_bounded() {
        let v = validate_scenario(scenario(&table1(), 1000)).unwrap();
        let opts = SolveOptions { conditions: 50, t_init: 2.0, max_iter: 4, ..Default::default() };
        let sol = solve(&v, &opts).unwrap();
        for c in &sol.curves {
            for w in c.points.windows(2) {
                assert!(w[0].time <= w[1].time);
                for k in 0..4 {
                    assert!(w[0].r[k] <= w[1].r[k] + 1e-15);
                    assert!((0.0..=1.0).contains(&w[1].r[k]));
                }
                assert!(w[1].p >= 0.0);
            }
        }
    }

    #[test]
    fn fixed_point_iterates_alternate_and_bracket() {
        let v = validate_scenario(scenario(&table1(), 1000)).unwrap();
        let opts = SolveOptions { conditions: 100, t_init: 2.0, max_iter: 6, tol: 0.0, keep_history: true, ..Default::default() };
        let sol = solve(&v, &opts).unwrap();
        let h = &sol.history;
        assert!(h.len() >= 4);
        let probe = |m: usize| h[m].r_bar.at(secs(30.0), 0);
        // r̄ ↦ next r̄ is antitone: odd iterates fall, even iterates rise.
        assert!(probe(2) <= probe(0) + 1e-12);
        assert!(probe(3) >= probe(1) - 1e-12);
        assert!(probe(1) <= probe(2) + 1e-12 && probe(2) <= probe(0) + 1e-12);
    }
}
