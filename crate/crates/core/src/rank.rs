//! Deterministic ranking helpers.
//!
//! Every ranking in the crate orders by score descending, then id ascending.
//! With unique ids this is a total order, so selections do not depend on
//! input order, chunking or thread count.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// `Less` means `a` ranks ahead of `b`.
#[inline]
pub fn rank_cmp(a_score: f64, a_id: u64, b_score: f64, b_id: u64) -> Ordering {
    b_score.total_cmp(&a_score).then(a_id.cmp(&b_id))
}

struct Entry<T> {
    score: f64,
    id: u64,
    payload: T,
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    // Max-heap top is the worst-ranked entry.
    fn cmp(&self, other: &Self) -> Ordering {
        rank_cmp(self.score, self.id, other.score, other.id)
    }
}

/// Keeps the `k` best `(score, id)` entries seen so far in bounded memory.
pub struct TopK<T> {
    k: usize,
    heap: BinaryHeap<Entry<T>>,
}

impl<T> TopK<T> {
    pub fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k.min(1 << 20) + 1),
        }
    }

    /// Offers an entry; the payload is only built if the entry is kept.
    pub fn offer_with(&mut self, score: f64, id: u64, payload: impl FnOnce() -> T) {
        if self.k == 0 {
            return;
        }
        if self.heap.len() < self.k {
            self.heap.push(Entry {
                score,
                id,
                payload: payload(),
            });
            return;
        }
        let worst = self.heap.peek().expect("heap is full");
        if rank_cmp(score, id, worst.score, worst.id) == Ordering::Less {
            self.heap.pop();
            self.heap.push(Entry {
                score,
                id,
                payload: payload(),
            });
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Entries in rank order, best first.
    pub fn into_sorted(self) -> Vec<(f64, u64, T)> {
        let mut v: Vec<_> = self
            .heap
            .into_iter()
            .map(|e| (e.score, e.id, e.payload))
            .collect();
        v.sort_unstable_by(|a, b| rank_cmp(a.0, a.1, b.0, b.1));
        v
    }
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `threads` is `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(e) => {
                log::warn!("could not build a {t}-thread pool ({e}); using the global pool");
                f()
            }
        },
        None => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_best_with_id_ties() {
        let mut top = TopK::new(3);
        for (s, id) in [(0.5, 4), (0.9, 7), (0.5, 2), (0.1, 1), (0.5, 3)] {
            top.offer_with(s, id, || id);
        }
        let ids: Vec<u64> = top.into_sorted().into_iter().map(|e| e.1).collect();
        assert_eq!(ids, vec![7, 2, 3]);
    }

    #[test]
    fn zero_capacity() {
        let mut top = TopK::new(0);
        top.offer_with(1.0, 1, || ());
        assert!(top.is_empty());
    }
}
