//! Peer selection (aware/agnostic mixture over neighbor weights) and the two
//! latest-chunk selection rules.
//!
//! A sender `l` with neighbors `N(l)` and weights `H_l(v)` picks `v` with
//! probability
//!
//! ```text
//! beta(l, v) = W * H_l(v) / sum_k H_l(k) + (1 - W) / |N(l)|
//! ```
//!
//! When every weight is zero the aware share `W` is spread uniformly, so the
//! distribution degrades to uniform selection.

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::domain::{ChunkId, SimTime, WeightKind};
use crate::overlay::NodeId;

/// Inputs to the weight functions, aligned with `neighbors`. Only the slice
/// required by the weight kind has to be present.
#[derive(Debug, Clone, Copy, Default)]
pub struct WeightContext<'a> {
    pub neighbors: &'a [NodeId],
    /// Upload capacity of each neighbor (bandwidth-aware).
    pub capacities: Option<&'a [f64]>,
    /// Megabits received from each neighbor during the last completed epoch.
    pub last_epoch_received: Option<&'a [f64]>,
    /// `|B(l) \ B(v)|` for each neighbor (data-driven kinds).
    pub useful_counts: Option<&'a [u32]>,
}

/// `|B(l) \ B(v)|` for each neighbor collection.
pub fn useful_counts(sender: &BTreeSet<ChunkId>, neighbors: &[&BTreeSet<ChunkId>]) -> Vec<u32> {
    neighbors.iter().map(|b| sender.difference(b).count() as u32).collect()
}

/// Per-neighbor weights `H_l(v)`.
///
/// Panics if the input slice required by `kind` is missing or misaligned.
pub fn compute_weights(kind: WeightKind, ctx: &WeightContext<'_>) -> Vec<f64> {
    let len = ctx.neighbors.len();
    let required = |slice: Option<&[f64]>, what: &str| -> Vec<f64> {
        let slice = slice.unwrap_or_else(|| panic!("{kind} weights need {what}"));
        assert_eq!(slice.len(), len, "{what} misaligned with neighbors");
        slice.to_vec()
    };
    match kind {
        WeightKind::Random => vec![1.0; len],
        WeightKind::BandwidthAware => required(ctx.capacities, "capacities"),
        WeightKind::TitForTat => required(ctx.last_epoch_received, "epoch history"),
        WeightKind::MostDeprived | WeightKind::ProportionalDeprived => {
            let counts = ctx.useful_counts.expect("data-driven weights need useful counts");
            assert_eq!(counts.len(), len, "useful counts misaligned with neighbors");
            if kind == WeightKind::ProportionalDeprived {
                counts.iter().map(|&c| c as f64).collect()
            } else {
                let max = counts.iter().copied().max().unwrap_or(0);
                counts.iter().map(|&c| if c == max { 1.0 } else { 0.0 }).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("sender has no neighbors")]
pub struct NoNeighbors;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDistribution {
    pub neighbors: Vec<NodeId>,
    pub probabilities: Vec<f64>,
}

impl SelectionDistribution {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn probability_of(&self, node: NodeId) -> Option<f64> {
        self.neighbors.iter().position(|&v| v == node).map(|i| self.probabilities[i])
    }
}

/// Mixture probabilities for weights `h` at awareness `w`.
pub fn mixture_probabilities(h: &[f64], w: f64) -> Vec<f64> {
    let len = h.len() as f64;
    let total: f64 = h.iter().sum();
    let all_equal = h.iter().all(|&x| x == h[0]);
    if total > 0.0 && !all_equal {
        h.iter().map(|x| w * x / total + (1.0 - w) / len).collect()
    } else {
        vec![1.0 / len; h.len()]
    }
}

pub fn selection_distribution(
    neighbors: &[NodeId],
    weights: &[f64],
    awareness: f64,
) -> Result<SelectionDistribution, NoNeighbors> {
    assert_eq!(neighbors.len(), weights.len());
    if neighbors.is_empty() {
        return Err(NoNeighbors);
    }
    Ok(SelectionDistribution { neighbors: neighbors.to_vec(), probabilities: mixture_probabilities(weights, awareness) })
}

/// Inverse-CDF draw of an index from unnormalized non-negative masses.
/// Returns `None` when the total mass is zero.
pub fn draw_index<R: Rng + ?Sized>(masses: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let target = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &m) in masses.iter().enumerate() {
        if m > 0.0 {
            acc += m;
            last_positive = Some(i);
            if target < acc {
                return Some(i);
            }
        }
    }
    last_positive
}

pub fn sample_peer<R: Rng + ?Sized>(dist: &SelectionDistribution, rng: &mut R) -> NodeId {
    let idx = draw_index(&dist.probabilities, rng).expect("empty selection distribution");
    dist.neighbors[idx]
}

/// Draws from the same mixture as [`selection_distribution`] in O(log |N|):
/// a coin picks the aware branch with probability `W`, which then samples by
/// binary search over the weight prefix sums; otherwise a uniform index.
#[derive(Debug, Clone, Default)]
pub struct MixtureSampler {
    prefix: Vec<f64>,
    awareness: f64,
}

impl MixtureSampler {
    pub fn new(weights: &[f64], awareness: f64) -> Self {
        let mut s = MixtureSampler { prefix: Vec::with_capacity(weights.len()), awareness };
        s.set_weights(weights);
        s
    }

    pub fn set_weights(&mut self, weights: &[f64]) {
        self.prefix.clear();
        let mut acc = 0.0;
        for &w in weights {
            acc += w;
            self.prefix.push(acc);
        }
    }

    pub fn len(&self) -> usize {
        self.prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefix.is_empty()
    }

    fn total(&self) -> f64 {
        self.prefix.last().copied().unwrap_or(0.0)
    }

    fn weight(&self, i: usize) -> f64 {
        if i == 0 {
            self.prefix[0]
        } else {
            self.prefix[i] - self.prefix[i - 1]
        }
    }

    /// `beta` of neighbor index `i`.
    pub fn probability(&self, i: usize) -> f64 {
        let len = self.len() as f64;
        let total = self.total();
        if total > 0.0 {
            self.awareness * self.weight(i) / total + (1.0 - self.awareness) / len
        } else {
            1.0 / len
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.probability(i)).collect()
    }

    /// W = 0, W = 1 and all-zero weights consume no coin.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        debug_assert!(!self.is_empty());
        let total = self.total();
        let aware = if total <= 0.0 || self.awareness <= 0.0 {
            false
        } else if self.awareness >= 1.0 {
            true
        } else {
            rng.gen::<f64>() < self.awareness
        };
        if aware {
            let target = rng.gen::<f64>() * total;
            let idx = self.prefix.partition_point(|&p| p <= target);
            // Rounding can land on the end or on a zero-weight slot.
            let mut idx = idx.min(self.len() - 1);
            while self.weight(idx) <= 0.0 {
                idx -= 1;
            }
            idx
        } else {
            rng.gen_range(0..self.len())
        }
    }

    /// Draws among indices accepted by `eligible`, with probability
    /// proportional to `beta` restricted to them. This is the law of
    /// resampling without replacement until an eligible neighbor comes up.
    ///
    /// A few rejection rounds are tried first; the exact restricted draw
    /// handles the rest. Both routes sample the same law.
    pub fn draw_restricted<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        rejection_rounds: usize,
        mut eligible: impl FnMut(usize) -> bool,
    ) -> Option<usize> {
        if self.is_empty() {
            return None;
        }
        for _ in 0..rejection_rounds {
            let idx = self.draw(rng);
            if eligible(idx) {
                return Some(idx);
            }
        }
        let masses: Vec<f64> =
            (0..self.len()).map(|i| if eligible(i) { self.probability(i) } else { 0.0 }).collect();
        draw_index(&masses, rng)
    }
}

/// Freshest chunk owned by the sender.
pub fn latest_blind_pick(sender: &BTreeSet<ChunkId>) -> Option<ChunkId> {
    sender.iter().next_back().copied()
}

/// Freshest chunk the sender owns and the receiver lacks.
pub fn latest_useful_pick(sender: &BTreeSet<ChunkId>, receiver: &BTreeSet<ChunkId>) -> Option<ChunkId> {
    sender.iter().rev().find(|c| !receiver.contains(c)).copied()
}

/// Tit-for-tat counters for one peer, indexed by neighbor position.
///
/// Transfers land in the current epoch; weights read the last completed one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TftHistory {
    current: Vec<f64>,
    last: Vec<f64>,
}

impl TftHistory {
    pub fn new(neighbor_count: usize) -> Self {
        TftHistory { current: vec![0.0; neighbor_count], last: vec![0.0; neighbor_count] }
    }

    pub fn record_transfer(&mut self, neighbor_index: usize, megabits: f64) {
        self.current[neighbor_index] += megabits;
    }

    pub fn roll_epoch(&mut self) {
        std::mem::swap(&mut self.current, &mut self.last);
        self.current.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn last_epoch(&self) -> &[f64] {
        &self.last
    }

    pub fn current_epoch(&self) -> &[f64] {
        &self.current
    }
}

/// Epoch boundaries `k * T_e` with `0 < k * T_e <= duration`.
pub fn epoch_boundaries(epoch_length: SimTime, duration: SimTime) -> impl Iterator<Item = SimTime> {
    let step = epoch_length.nanos();
    assert!(step > 0, "epoch length must be positive");
    (1..=duration.nanos() / step).map(move |k| SimTime(k * step))
}
