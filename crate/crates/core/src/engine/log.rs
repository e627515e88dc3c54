//! Transmission records, sinks, CSV dump and invariant checks.

use std::collections::HashMap;
use std::io::{self, Write};

use sha2::{Digest, Sha256};

use crate::domain::{derive_timing, ChunkId, ChunkPolicy, SimTime, ValidScenario};
use crate::overlay::{NodeId, Overlay, SOURCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub chunk: ChunkId,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub send_start: SimTime,
    pub arrival: SimTime,
    /// On time and new to the receiver.
    pub useful: bool,
    /// 1-based arrival rank among all arrivals of this chunk.
    pub copy_ordinal: u32,
}

pub trait TransmissionSink {
    fn record(&mut self, t: &Transmission);
}

impl TransmissionSink for Vec<Transmission> {
    fn record(&mut self, t: &Transmission) {
        self.push(*t);
    }
}

impl<A: TransmissionSink, B: TransmissionSink> TransmissionSink for (A, B) {
    fn record(&mut self, t: &Transmission) {
        self.0.record(t);
        self.1.record(t);
    }
}

impl<S: TransmissionSink + ?Sized> TransmissionSink for &mut S {
    fn record(&mut self, t: &Transmission) {
        (**self).record(t);
    }
}

/// Discards records.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TransmissionSink for NullSink {
    fn record(&mut self, _t: &Transmission) {}
}

pub const LOG_CSV_HEADER: &str = "chunk_id,sender,receiver,send_start,arrival,useful,copy_ordinal";

pub fn write_log_csv<W: Write>(records: &[Transmission], mut out: W) -> io::Result<()> {
    writeln!(out, "{LOG_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.chunk,
            r.sender,
            r.receiver,
            r.send_start,
            r.arrival,
            u8::from(r.useful),
            r.copy_ordinal
        )?;
    }
    Ok(())
}

/// SHA-256 over the raw record fields, hex encoded.
pub fn log_digest(records: &[Transmission]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(r.chunk.to_le_bytes());
        h.update(r.sender.to_le_bytes());
        h.update(r.receiver.to_le_bytes());
        h.update(r.send_start.nanos().to_le_bytes());
        h.update(r.arrival.nanos().to_le_bytes());
        h.update([u8::from(r.useful)]);
        h.update(r.copy_ordinal.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Checks conservation, causality, serial uploads, deadline eligibility,
/// uniqueness of useful receipts and ordinal numbering. Returns every
/// violation found; empty means the log is consistent.
pub fn verify_log(records: &[Transmission], scenario: &ValidScenario, overlay: &Overlay) -> Vec<String> {
    let sc = scenario.scenario();
    let timing = derive_timing(scenario);
    let period = timing.chunk_period_ticks();
    let deadline = SimTime::from_secs(sc.buffer_deadline);
    let duration = SimTime::from_secs(sc.duration);
    let classes = scenario.node_classes();
    let upload_time = |node: NodeId| -> Option<SimTime> {
        match classes[node as usize] {
            None => Some(timing.source_upload_ticks()),
            Some(c) => timing.class_ticks(c),
        }
    };

    let mut errors = Vec::new();
    let mut first_useful: HashMap<(NodeId, ChunkId), SimTime> = HashMap::new();
    let mut ordinals: HashMap<ChunkId, u32> = HashMap::new();
    let mut last_end: HashMap<NodeId, SimTime> = HashMap::new();
    let mut busy: HashMap<NodeId, SimTime> = HashMap::new();
    let mut prev_arrival = SimTime::ZERO;

    for (i, r) in records.iter().enumerate() {
        let creation = SimTime(r.chunk * period.nanos());
        if r.arrival < prev_arrival {
            errors.push(format!("#{i}: records out of arrival order"));
        }
        prev_arrival = r.arrival;
        if r.receiver == SOURCE {
            errors.push(format!("#{i}: source received a chunk"));
        }
        if !overlay.has_edge(r.sender, r.receiver) {
            errors.push(format!("#{i}: {} -> {} is not an overlay edge", r.sender, r.receiver));
        }
        match upload_time(r.sender) {
            None => errors.push(format!("#{i}: free-rider {} uploaded", r.sender)),
            Some(t) if r.arrival != r.send_start + t => {
                errors.push(format!("#{i}: upload took {} instead of {t}", r.arrival.saturating_sub(r.send_start)))
            }
            Some(_) => {}
        }
        if r.send_start < creation || r.send_start - creation > deadline {
            errors.push(format!("#{i}: chunk {} not eligible at send start {}", r.chunk, r.send_start));
        }
        if let Some(end) = last_end.get(&r.sender) {
            if r.send_start < *end {
                errors.push(format!("#{i}: overlapping uploads at sender {}", r.sender));
            }
        }
        last_end.insert(r.sender, r.arrival);
        let spent = busy.entry(r.sender).or_default();
        *spent = *spent + (r.arrival - r.send_start);

        let held_by_sender = r.sender == SOURCE || first_useful.get(&(r.sender, r.chunk)).is_some_and(|t| *t <= r.send_start);
        if !held_by_sender {
            errors.push(format!("#{i}: sender {} did not hold chunk {}", r.sender, r.chunk));
        }

        let ordinal = ordinals.entry(r.chunk).or_insert(0);
        *ordinal += 1;
        if r.copy_ordinal != *ordinal {
            errors.push(format!("#{i}: copy ordinal {} expected {}", r.copy_ordinal, ordinal));
        }

        let key = (r.receiver, r.chunk);
        let on_time = r.arrival - creation <= deadline;
        let earlier = first_useful.get(&key).copied();
        let expected_useful = on_time && earlier.is_none();
        if r.useful != expected_useful {
            errors.push(format!("#{i}: useful flag {} expected {}", r.useful, expected_useful));
        }
        // Senders decide after every arrival of the instant has been applied.
        if sc.scheme.chunk_policy == ChunkPolicy::LatestUseful {
            if let Some(t) = earlier {
                if t <= r.send_start {
                    errors.push(format!("#{i}: latest-useful sent a chunk the receiver already held (held since {t}, sent {})", r.send_start));
                }
            }
        }
        if r.useful {
            first_useful.insert(key, r.arrival);
        }
    }
    for (node, total) in busy {
        if total > duration {
            errors.push(format!("node {node} busy {total} beyond run duration"));
        }
    }
    errors
}
