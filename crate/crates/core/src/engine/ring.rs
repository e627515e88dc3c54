//! Fixed-width ring bitsets over chunk ids.
//!
//! Chunk `id` lives in slot `id % slots`. The slot count exceeds the number
//! of chunks that can still be forwarded or arrive late, so a slot is only
//! recycled after its previous occupant is irrelevant.

use crate::domain::ChunkId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingLayout {
    slots: usize,
    words: usize,
}

impl RingLayout {
    /// Smallest multiple of 64 holding at least `min_slots` slots.
    pub fn with_min_slots(min_slots: usize) -> Self {
        let words = min_slots.max(1).div_ceil(64);
        RingLayout { slots: words * 64, words }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn words(&self) -> usize {
        self.words
    }

    pub fn slot(&self, id: ChunkId) -> usize {
        (id % self.slots as u64) as usize
    }

    /// Writes the mask of ids `lo..=hi` into `out`. Requires `hi - lo < slots`.
    pub fn range_mask(&self, lo: ChunkId, hi: ChunkId, out: &mut [u64]) {
        debug_assert_eq!(out.len(), self.words);
        out.iter_mut().for_each(|w| *w = 0);
        if hi < lo {
            return;
        }
        assert!(((hi - lo) as usize) < self.slots, "window wider than ring");
        let a = self.slot(lo);
        let b = self.slot(hi);
        if a <= b {
            fill(out, a, b);
        } else {
            fill(out, a, self.slots - 1);
            fill(out, 0, b);
        }
    }

    /// Newest id among set bits of `mask`, given the newest live id `hi`.
    /// Bits must only cover ids in `(hi - slots, hi]`.
    pub fn latest(&self, mask: &[u64], hi: ChunkId) -> Option<ChunkId> {
        let hi_slot = self.slot(hi);
        let slot = highest_in(mask, 0, hi_slot).or_else(|| {
            if hi_slot + 1 < self.slots {
                highest_in(mask, hi_slot + 1, self.slots - 1)
            } else {
                None
            }
        })?;
        let back = if slot <= hi_slot { hi_slot - slot } else { hi_slot + self.slots - slot };
        Some(hi - back as u64)
    }
}

fn fill(out: &mut [u64], a: usize, b: usize) {
    let (wa, wb) = (a / 64, b / 64);
    for (w, word) in out.iter_mut().enumerate().take(wb + 1).skip(wa) {
        let lo = if w == wa { a % 64 } else { 0 };
        let hi = if w == wb { b % 64 } else { 63 };
        let width = hi - lo + 1;
        let bits = if width == 64 { u64::MAX } else { ((1u64 << width) - 1) << lo };
        *word |= bits;
    }
}

/// Highest set bit position within slots `a..=b`.
fn highest_in(mask: &[u64], a: usize, b: usize) -> Option<usize> {
    let (wa, wb) = (a / 64, b / 64);
    for w in (wa..=wb).rev() {
        let mut word = mask[w];
        if w == wb && b % 64 != 63 {
            word &= (1u64 << (b % 64 + 1)) - 1;
        }
        if w == wa {
            word &= u64::MAX << (a % 64);
        }
        if word != 0 {
            return Some(w * 64 + 63 - word.leading_zeros() as usize);
        }
    }
    None
}

pub fn get_bit(words: &[u64], slot: usize) -> bool {
    words[slot / 64] >> (slot % 64) & 1 == 1
}

pub fn set_bit(words: &mut [u64], slot: usize) {
    words[slot / 64] |= 1 << (slot % 64);
}

pub fn clear_bit(words: &mut [u64], slot: usize) {
    words[slot / 64] &= !(1 << (slot % 64));
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    use crate::policies::{latest_blind_pick, latest_useful_pick};

    fn load(layout: &RingLayout, ids: &BTreeSet<ChunkId>) -> Vec<u64> {
        let mut w = vec![0; layout.words()];
        for &id in ids {
            set_bit(&mut w, layout.slot(id));
        }
        w
    }

    #[test]
    fn slots_round_up_to_words() {
        assert_eq!(RingLayout::with_min_slots(1).slots(), 64);
        assert_eq!(RingLayout::with_min_slots(64).slots(), 64);
        assert_eq!(RingLayout::with_min_slots(65).slots(), 128);
    }

    #[test]
    fn wrapped_range_mask() {
        let l = RingLayout::with_min_slots(64);
        let mut m = vec![0; 1];
        l.range_mask(60, 67, &mut m);
        let set: Vec<usize> = (0..64).filter(|&s| get_bit(&m, s)).collect();
        assert_eq!(set, vec![0, 1, 2, 3, 60, 61, 62, 63]);
        assert_eq!(l.latest(&m, 67), Some(67));
        let mut only_old = m.clone();
        for s in 0..4 {
            clear_bit(&mut only_old, s);
        }
        assert_eq!(l.latest(&only_old, 67), Some(63));
    }

    proptest! {
        #[test]
        fn ring_latest_matches_set_picks(
            hi in 0u64..10_000,
            width in 1u64..190,
            a in prop::collection::vec(any::<bool>(), 190),
            b in prop::collection::vec(any::<bool>(), 190),
        ) {
            let layout = RingLayout::with_min_slots(190);
            let lo = hi.saturating_sub(width - 1);
            let pick = |flags: &[bool]| -> BTreeSet<ChunkId> {
                (lo..=hi).filter(|id| flags[(hi - id) as usize]).collect()
            };
            let (sa, sb) = (pick(&a), pick(&b));
            let (wa, wb) = (load(&layout, &sa), load(&layout, &sb));
            let mut window = vec![0; layout.words()];
            layout.range_mask(lo, hi, &mut window);
            let masked: Vec<u64> = wa.iter().zip(&window).map(|(x, e)| x & e).collect();
            prop_assert_eq!(layout.latest(&masked, hi), latest_blind_pick(&sa));
            let useful: Vec<u64> = masked.iter().zip(&wb).map(|(x, y)| x & !y).collect();
            prop_assert_eq!(layout.latest(&useful, hi), latest_useful_pick(&sa, &sb));
        }
    }
}
