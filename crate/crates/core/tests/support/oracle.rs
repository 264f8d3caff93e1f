//! Exhaustive reference for span matching. Deliberately shares no code with the
//! library: compatibility is re-derived from raw offsets and the maximum matching
//! is found by enumerating assignments.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(start, end, category index)`.
pub type RawSpan = (usize, usize, u8);

pub fn compatible(p: RawSpan, g: RawSpan, strict: bool, category_aware: bool) -> bool {
    let boundary = if strict {
        p.0 == g.0 && p.1 == g.1
    } else {
        p.0.max(g.0) < p.1.min(g.1)
    };
    boundary && (!category_aware || p.2 == g.2)
}

/// Largest number of disjoint compatible (pred, gold) pairs, by exhaustive search.
pub fn max_matching(pred: &[RawSpan], gold: &[RawSpan], strict: bool, category_aware: bool) -> usize {
    #[allow(clippy::too_many_arguments)]
    fn go(i: usize, pred: &[RawSpan], gold: &[RawSpan], used: &mut [bool], cur: usize, best: &mut usize, s: bool, c: bool) {
        let cap = pred.len().min(gold.len());
        if *best == cap || cur + (pred.len() - i) <= *best {
            return;
        }
        if i == pred.len() {
            *best = (*best).max(cur);
            return;
        }
        for j in 0..gold.len() {
            if !used[j] && compatible(pred[i], gold[j], s, c) {
                used[j] = true;
                go(i + 1, pred, gold, used, cur + 1, best, s, c);
                used[j] = false;
            }
        }
        go(i + 1, pred, gold, used, cur, best, s, c);
    }
    let mut best = 0;
    let mut used = vec![false; gold.len()];
    go(0, pred, gold, &mut used, 0, &mut best, strict, category_aware);
    best
}

/// Random instance: up to 8 predictions and 8 gold spans inside [0, 30).
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<RawSpan>, Vec<RawSpan>) {
    fn spans(rng: &mut ChaCha8Rng, n: usize) -> Vec<RawSpan> {
        (0..n)
            .map(|_| {
                let start = rng.random_range(0..29);
                let end = rng.random_range(start + 1..=30);
                (start, end, rng.random_range(0..4u8))
            })
            .collect()
    }
    let np = rng.random_range(0..=8);
    let pred = spans(rng, np);
    let ng = rng.random_range(0..=8);
    let gold = spans(rng, ng);
    (pred, gold)
}

pub fn instances(n: usize, seed: u64) -> Vec<(Vec<RawSpan>, Vec<RawSpan>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_instance(&mut rng)).collect()
}
