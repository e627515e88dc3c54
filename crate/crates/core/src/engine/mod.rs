//! Discrete-event simulation of chunk diffusion.
//!
//! The source creates chunk `k` at `k * T_SR` and pushes copies serially,
//! each taking `T_S`. Every peer uploads serially at its class rate: when its
//! slot frees it samples a neighbor from the aware/agnostic mixture and sends
//! a chunk chosen by the chunk policy. Receivers have no download limit and
//! links never lose data.
//!
//! Target sampling is restricted to neighbors the chosen chunk is useful
//! for (latest-blind: the target lacks the sender's newest chunk;
//! latest-useful: the sender has something the target lacks). A sender with
//! no such neighbor idles until it next receives a chunk; the source idles
//! until the next chunk creation. With `blind_retry` off, latest-blind
//! senders draw from all neighbors but the source and may waste the upload.
//!
//! Equal-time events run in the order chunk creation, epoch boundary,
//! upload completion, then by sender id, then by scheduling sequence. Target
//! selection is deferred until all events of an instant have run, so a
//! sender sees every arrival stamped with the current time.

mod log;
pub mod ring;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand_chacha::ChaCha8Rng;

pub use self::log::{
    log_digest, verify_log, write_log_csv, NullSink, Transmission, TransmissionSink, LOG_CSV_HEADER,
};
use self::ring::{clear_bit, get_bit, set_bit, RingLayout};
use crate::domain::{
    derive_timing, ChunkId, ChunkPolicy, SimTime, SourcePolicy, ValidScenario, WeightKind,
};
use crate::overlay::{NodeId, Overlay, SOURCE};
use crate::policies::{compute_weights, draw_index, mixture_probabilities, MixtureSampler, TftHistory, WeightContext};
use crate::rng;

/// Rejection attempts before the exact restricted draw.
const REJECTION_ROUNDS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    ChunkCreation { id: ChunkId },
    EpochBoundary,
    UploadComplete { receiver: NodeId, chunk: ChunkId, start: SimTime },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::ChunkCreation { .. } => 0,
            EventKind::EpochBoundary => 1,
            EventKind::UploadComplete { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    time: SimTime,
    sender: NodeId,
    seq: u64,
    kind: EventKind,
}

impl Event {
    fn key(&self) -> (SimTime, u8, NodeId, u64) {
        (self.time, self.kind.rank(), self.sender, self.seq)
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Snapshot of a node at the end of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerState {
    pub id: NodeId,
    /// 0-based class index; `None` for the source.
    pub class: Option<usize>,
    /// Chunks still tracked in the node's window, with receipt times.
    pub chunks: Vec<(ChunkId, SimTime)>,
    pub busy_until: Option<SimTime>,
    pub idle: bool,
    pub tft_last_epoch: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    pub chunks_created: u64,
    pub uploads: u64,
    pub useful_arrivals: u64,
    pub late_arrivals: u64,
    pub duplicate_arrivals: u64,
    pub idle_transitions: u64,
    pub exact_fallbacks: u64,
    pub class_target_fallbacks: u64,
    pub epoch_rolls: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub peers: Vec<PeerState>,
    pub stats: RunStats,
}

/// How a node chooses targets.
#[derive(Debug, Clone)]
enum Selector {
    /// Random, bandwidth-aware and tit-for-tat: weights only change at epochs.
    Mixture(MixtureSampler),
    DataDriven { kind: WeightKind, awareness: f64 },
    ClassTargeted { class: usize },
}

struct Engine<'a, S: TransmissionSink> {
    overlay: &'a Overlay,
    sink: S,
    rng: ChaCha8Rng,
    policy: ChunkPolicy,
    blind_retry: bool,
    chunk_period: u64,
    deadline: u64,
    duration: SimTime,
    chunk_size: f64,
    epoch_length: Option<SimTime>,
    node_class: Vec<Option<usize>>,
    upload_time: Vec<Option<SimTime>>,

    layout: RingLayout,
    bits: Vec<u64>,
    receipt: Vec<SimTime>,
    copies: Vec<u32>,
    newest: Option<ChunkId>,
    window_key: Option<(ChunkId, ChunkId)>,
    window: Vec<u64>,
    scratch: Vec<u64>,

    busy_until: Vec<Option<SimTime>>,
    idle: Vec<bool>,
    selectors: Vec<Selector>,
    tft: Vec<TftHistory>,
    tft_nodes: Vec<usize>,

    queue: BinaryHeap<Reverse<Event>>,
    ready: Vec<usize>,
    seq: u64,
    stats: RunStats,
}

/// Runs the scenario and returns the full transmission log.
pub fn run(scenario: &ValidScenario, overlay: &Overlay) -> (Vec<Transmission>, RunOutput) {
    let mut log = Vec::new();
    let out = run_with_sink(scenario, overlay, &mut log);
    (log, out)
}

/// Runs the scenario, streaming every arrival into `sink` in arrival order.
pub fn run_with_sink<S: TransmissionSink>(scenario: &ValidScenario, overlay: &Overlay, sink: S) -> RunOutput {
    assert_eq!(overlay.node_count(), scenario.n() + 1, "overlay must have n + 1 nodes");
    let mut engine = Engine::new(scenario, overlay, sink);
    engine.simulate();
    engine.finish()
}

impl<'a, S: TransmissionSink> Engine<'a, S> {
    fn new(scenario: &ValidScenario, overlay: &'a Overlay, sink: S) -> Self {
        let sc = scenario.scenario();
        let timing = derive_timing(scenario);
        let node_count = overlay.node_count();
        let node_class = scenario.node_classes();
        let upload_time: Vec<Option<SimTime>> = node_class
            .iter()
            .map(|c| match c {
                None => Some(timing.source_upload_ticks()),
                Some(c) => timing.class_ticks(*c),
            })
            .collect();
        let capacity: Vec<f64> = node_class
            .iter()
            .map(|c| match c {
                None => sc.source.upload_capacity,
                Some(c) => sc.classes[*c].upload_capacity,
            })
            .collect();

        let chunk_period = timing.chunk_period_ticks().nanos();
        let deadline = SimTime::from_secs(sc.buffer_deadline).nanos();
        let longest_upload = upload_time.iter().flatten().map(|t| t.nanos()).max().unwrap_or(0);
        // Ids that may still be forwarded or arrive late, plus slack.
        let min_slots = ((deadline + longest_upload).div_ceil(chunk_period) + 2) as usize;
        let layout = RingLayout::with_min_slots(min_slots);

        let uses_tft = sc.scheme.weight_kind == WeightKind::TitForTat
            || matches!(sc.source.policy, SourcePolicy::Aware { weight_kind: WeightKind::TitForTat, .. });
        let epoch_length = if uses_tft { sc.scheme.epoch_length.map(SimTime::from_secs) } else { None };

        let mut selectors = Vec::with_capacity(node_count);
        let mut tft_nodes = Vec::new();
        for node in 0..node_count {
            let neighbors = overlay.neighbors(node as NodeId);
            let (kind, awareness) = if node == SOURCE as usize {
                match &sc.source.policy {
                    SourcePolicy::RandomPeer => (WeightKind::Random, 0.0),
                    SourcePolicy::ClassTargeted { class } => {
                        selectors.push(Selector::ClassTargeted { class: *class as usize - 1 });
                        continue;
                    }
                    SourcePolicy::Aware { weight_kind, awareness_probability } => {
                        (*weight_kind, if *weight_kind == WeightKind::Random { 0.0 } else { *awareness_probability })
                    }
                }
            } else {
                (sc.scheme.weight_kind, sc.scheme.effective_awareness())
            };
            let selector = match kind {
                WeightKind::Random => Selector::Mixture(MixtureSampler::new(&vec![1.0; neighbors.len()], 0.0)),
                WeightKind::BandwidthAware => {
                    let caps: Vec<f64> = neighbors.iter().map(|&v| capacity[v as usize]).collect();
                    let ctx = WeightContext { neighbors, capacities: Some(&caps), ..Default::default() };
                    Selector::Mixture(MixtureSampler::new(&compute_weights(kind, &ctx), awareness))
                }
                WeightKind::TitForTat => {
                    tft_nodes.push(node);
                    Selector::Mixture(MixtureSampler::new(&vec![0.0; neighbors.len()], awareness))
                }
                WeightKind::MostDeprived | WeightKind::ProportionalDeprived => {
                    Selector::DataDriven { kind, awareness }
                }
            };
            selectors.push(selector);
        }

        let tft = if epoch_length.is_some() {
            (0..node_count).map(|u| TftHistory::new(overlay.degree(u as NodeId))).collect()
        } else {
            Vec::new()
        };

        Engine {
            overlay,
            sink,
            rng: rng::engine_stream(sc.seed),
            policy: sc.scheme.chunk_policy,
            blind_retry: sc.scheme.blind_retry,
            chunk_period,
            deadline,
            duration: SimTime::from_secs(sc.duration),
            chunk_size: sc.stream.chunk_size,
            epoch_length,
            node_class,
            upload_time,
            bits: vec![0; node_count * layout.words()],
            receipt: vec![SimTime::ZERO; node_count * layout.slots()],
            copies: vec![0; layout.slots()],
            newest: None,
            window_key: None,
            window: vec![0; layout.words()],
            scratch: vec![0; layout.words()],
            layout,
            busy_until: vec![None; node_count],
            idle: vec![false; node_count],
            selectors,
            tft,
            tft_nodes,
            queue: BinaryHeap::new(),
            ready: Vec::new(),
            seq: 0,
            stats: RunStats::default(),
        }
    }

    fn push(&mut self, time: SimTime, sender: NodeId, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event { time, sender, seq: self.seq, kind }));
    }

    fn simulate(&mut self) {
        self.push(SimTime::ZERO, SOURCE, EventKind::ChunkCreation { id: 0 });
        if let Some(te) = self.epoch_length {
            if te <= self.duration {
                self.push(te, SOURCE, EventKind::EpochBoundary);
            }
        }
        while let Some(Reverse(event)) = self.queue.pop() {
            if event.time > self.duration {
                break;
            }
            match event.kind {
                EventKind::ChunkCreation { id } => self.on_creation(event.time, id),
                EventKind::EpochBoundary => self.on_epoch(event.time),
                EventKind::UploadComplete { receiver, chunk, start } => {
                    self.on_complete(event.time, event.sender, receiver, chunk, start)
                }
            }
            let instant_done = self.queue.peek().is_none_or(|Reverse(next)| next.time != event.time);
            if instant_done {
                self.flush_ready(event.time);
            }
        }
    }

    fn on_creation(&mut self, now: SimTime, id: ChunkId) {
        let slot = self.layout.slot(id);
        let words = self.layout.words();
        for node in 0..self.overlay.node_count() {
            clear_bit(&mut self.bits[node * words..(node + 1) * words], slot);
        }
        self.copies[slot] = 0;
        set_bit(&mut self.bits[0..words], slot);
        self.receipt[slot] = now;
        self.newest = Some(id);
        self.stats.chunks_created += 1;

        let next = SimTime((id + 1) * self.chunk_period);
        if next <= self.duration {
            self.push(next, SOURCE, EventKind::ChunkCreation { id: id + 1 });
        }
        self.ready.push(SOURCE as usize);
    }

    /// Lets freed or newly fed nodes pick targets once every event of the
    /// instant has been applied, in node-id order.
    fn flush_ready(&mut self, now: SimTime) {
        let mut ready = std::mem::take(&mut self.ready);
        ready.sort_unstable();
        ready.dedup();
        for &node in &ready {
            if self.busy_until[node].is_none() {
                self.try_start(node, now);
            }
        }
        ready.clear();
        self.ready = ready;
    }

    fn on_epoch(&mut self, now: SimTime) {
        for h in &mut self.tft {
            h.roll_epoch();
        }
        for &node in &self.tft_nodes {
            if let Selector::Mixture(sampler) = &mut self.selectors[node] {
                sampler.set_weights(self.tft[node].last_epoch());
            }
        }
        self.stats.epoch_rolls += 1;
        let te = self.epoch_length.expect("epoch event without epoch length");
        if now + te <= self.duration {
            self.push(now + te, SOURCE, EventKind::EpochBoundary);
        }
    }

    fn on_complete(&mut self, now: SimTime, sender: NodeId, receiver: NodeId, chunk: ChunkId, start: SimTime) {
        let (s, r) = (sender as usize, receiver as usize);
        self.busy_until[s] = None;

        let slot = self.layout.slot(chunk);
        let creation = chunk * self.chunk_period;
        let on_time = now.nanos() - creation <= self.deadline;
        let words = self.layout.words();
        let held = get_bit(&self.bits[r * words..(r + 1) * words], slot);
        let useful = on_time && !held;
        self.copies[slot] += 1;
        let copy_ordinal = self.copies[slot];

        if useful {
            set_bit(&mut self.bits[r * words..(r + 1) * words], slot);
            self.receipt[r * self.layout.slots() + slot] = now;
            self.stats.useful_arrivals += 1;
        } else if !on_time {
            self.stats.late_arrivals += 1;
        } else {
            self.stats.duplicate_arrivals += 1;
        }
        if !self.tft.is_empty() {
            let pos = self
                .overlay
                .neighbors(receiver)
                .binary_search(&sender)
                .expect("transfer along a non-edge");
            self.tft[r].record_transfer(pos, self.chunk_size);
        }

        self.sink.record(&Transmission { chunk, sender, receiver, send_start: start, arrival: now, useful, copy_ordinal });

        if useful {
            self.ready.push(r);
        }
        self.ready.push(s);
    }

    /// Refreshes the eligible-window mask for ids created within the deadline.
    fn refresh_window(&mut self, now: SimTime) -> Option<ChunkId> {
        let hi = self.newest?;
        let lo = if now.nanos() > self.deadline {
            (now.nanos() - self.deadline).div_ceil(self.chunk_period)
        } else {
            0
        };
        if lo > hi {
            return None;
        }
        if self.window_key != Some((lo, hi)) {
            self.layout.range_mask(lo, hi, &mut self.window);
            self.window_key = Some((lo, hi));
        }
        Some(hi)
    }

    fn try_start(&mut self, node: usize, now: SimTime) {
        let Some(upload) = self.upload_time[node] else {
            return;
        };
        let overlay = self.overlay;
        let neighbors = overlay.neighbors(node as NodeId);
        if neighbors.is_empty() {
            return;
        }
        let Some(hi) = self.refresh_window(now) else {
            self.mark_idle(node);
            return;
        };

        let words = self.layout.words();
        let mut any = false;
        for k in 0..words {
            self.scratch[k] = self.bits[node * words + k] & self.window[k];
            any |= self.scratch[k] != 0;
        }
        if !any {
            self.mark_idle(node);
            return;
        }

        let layout = self.layout;
        let bits = &self.bits;
        let sender_mask = &self.scratch;
        let blind_chunk = match self.policy {
            ChunkPolicy::LatestBlind => layout.latest(sender_mask, hi),
            ChunkPolicy::LatestUseful => None,
        };
        let retry = self.blind_retry;
        let eligible = |v: NodeId| -> bool {
            let target = &bits[v as usize * words..(v as usize + 1) * words];
            match blind_chunk {
                Some(_) if !retry => v != SOURCE,
                Some(c) => !get_bit(target, layout.slot(c)),
                None => sender_mask.iter().zip(target).any(|(s, t)| s & !t != 0),
            }
        };

        let choice = match &self.selectors[node] {
            Selector::Mixture(sampler) => {
                let mut rejected = 0;
                let pick = sampler.draw_restricted(&mut self.rng, REJECTION_ROUNDS, |i| {
                    let ok = eligible(neighbors[i]);
                    rejected += usize::from(!ok);
                    ok
                });
                if rejected >= REJECTION_ROUNDS {
                    self.stats.exact_fallbacks += 1;
                }
                pick
            }
            Selector::DataDriven { kind, awareness } => {
                let counts: Vec<u32> = neighbors
                    .iter()
                    .map(|&v| {
                        let target = &bits[v as usize * words..(v as usize + 1) * words];
                        sender_mask.iter().zip(target).map(|(s, t)| (s & !t).count_ones()).sum()
                    })
                    .collect();
                let ctx = WeightContext { neighbors, useful_counts: Some(&counts), ..Default::default() };
                let beta = mixture_probabilities(&compute_weights(*kind, &ctx), *awareness);
                let masses: Vec<f64> =
                    neighbors.iter().zip(&beta).map(|(&v, &b)| if eligible(v) { b } else { 0.0 }).collect();
                draw_index(&masses, &mut self.rng)
            }
            Selector::ClassTargeted { class } => {
                let in_class = |v: NodeId| self.node_class[v as usize] == Some(*class);
                let has_class_neighbor = neighbors.iter().any(|&v| in_class(v));
                let mut masses: Vec<f64> = neighbors
                    .iter()
                    .map(|&v| if (!has_class_neighbor || in_class(v)) && eligible(v) { 1.0 } else { 0.0 })
                    .collect();
                if masses.iter().all(|&m| m == 0.0) {
                    masses = neighbors.iter().map(|&v| if eligible(v) { 1.0 } else { 0.0 }).collect();
                    if masses.iter().any(|&m| m > 0.0) {
                        self.stats.class_target_fallbacks += 1;
                    }
                } else if !has_class_neighbor {
                    self.stats.class_target_fallbacks += 1;
                }
                draw_index(&masses, &mut self.rng)
            }
        };

        let Some(idx) = choice else {
            if !self.idle[node] {
                self.idle[node] = true;
                self.stats.idle_transitions += 1;
            }
            return;
        };
        let target = neighbors[idx];
        let chunk = match blind_chunk {
            Some(c) => c,
            None => {
                let t = &bits[target as usize * words..(target as usize + 1) * words];
                let useful: Vec<u64> = sender_mask.iter().zip(t).map(|(s, t)| s & !t).collect();
                layout.latest(&useful, hi).expect("eligible target without useful chunk")
            }
        };

        let end = now + upload;
        self.busy_until[node] = Some(end);
        self.idle[node] = false;
        self.stats.uploads += 1;
        self.push(end, node as NodeId, EventKind::UploadComplete { receiver: target, chunk, start: now });
    }

    fn mark_idle(&mut self, node: usize) {
        if !self.idle[node] {
            self.idle[node] = true;
            self.stats.idle_transitions += 1;
        }
    }

    fn finish(self) -> RunOutput {
        let words = self.layout.words();
        let slots = self.layout.slots();
        let peers = (0..self.overlay.node_count())
            .map(|node| {
                let mine = &self.bits[node * words..(node + 1) * words];
                let chunks = match self.newest {
                    None => Vec::new(),
                    Some(hi) => {
                        let oldest = hi.saturating_sub(slots as u64 - 1);
                        (oldest..=hi)
                            .filter(|&id| get_bit(mine, self.layout.slot(id)))
                            .map(|id| {
                                let t = if node == SOURCE as usize {
                                    SimTime(id * self.chunk_period)
                                } else {
                                    self.receipt[node * slots + self.layout.slot(id)]
                                };
                                (id, t)
                            })
                            .collect()
                    }
                };
                PeerState {
                    id: node as NodeId,
                    class: self.node_class[node],
                    chunks,
                    busy_until: self.busy_until[node],
                    idle: self.idle[node],
                    tft_last_epoch: self.tft.get(node).map(|h| h.last_epoch().to_vec()).unwrap_or_default(),
                }
            })
            .collect();
        RunOutput { peers, stats: self.stats }
    }
}

/// Per-node upload-slot usage derived from a log.
pub fn busy_time(records: &[Transmission], node_count: usize) -> Vec<SimTime> {
    let mut out = vec![SimTime::ZERO; node_count];
    for r in records {
        out[r.sender as usize] = out[r.sender as usize] + (r.arrival - r.send_start);
    }
    out
}

