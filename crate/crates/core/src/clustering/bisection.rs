//! Recursive balanced bisection.
//!
//! Every block is split by a seeded random halving that is then refined with
//! pairwise vertex swaps (Kernighan–Lin style) that strictly reduce the cut.
//! Swaps preserve side sizes, so each split stays at `⌊n/2⌋ / ⌈n/2⌉`, well
//! inside the `⌈BALANCE_TOLERANCE · n⌉` bound.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Clustering;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Largest allowed side-size difference per split, as a fraction of the block.
pub const BALANCE_TOLERANCE: f64 = 0.05;

const RESTARTS: usize = 3;
const MAX_PASSES: usize = 64;

struct Splitter<'g> {
    graph: &'g Graph,
    /// Block of every vertex at the level being split.
    block: Vec<u32>,
    /// Side (0/1) of every vertex during refinement.
    side: Vec<u8>,
    gain: Vec<f64>,
    dirty: Vec<bool>,
}

impl Splitter<'_> {
    fn cut(&self, members: &[usize], blk: u32) -> f64 {
        members
            .iter()
            .map(|&v| {
                self.graph
                    .neighbors(v)
                    .filter(|&(u, _)| u > v && self.block[u] == blk && self.side[u] != self.side[v])
                    .map(|(_, w)| w)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Swap passes until no improving pair remains.
    fn refine(&mut self, members: &[usize], blk: u32) {
        for _ in 0..MAX_PASSES {
            for &v in members {
                let mut g = 0.0;
                for (u, w) in self.graph.neighbors(v) {
                    if self.block[u] == blk {
                        g += if self.side[u] == self.side[v] { -w } else { w };
                    }
                }
                self.gain[v] = g;
                self.dirty[v] = false;
            }
            let by_gain = |side: u8| {
                let mut v: Vec<usize> = members.iter().copied().filter(|&x| self.side[x] == side).collect();
                v.sort_by(|&a, &b| self.gain[b].total_cmp(&self.gain[a]).then(a.cmp(&b)));
                v
            };
            let left = by_gain(0);
            let right = by_gain(1);
            let (mut i, mut j) = (0, 0);
            let mut swapped = false;
            loop {
                while i < left.len() && self.dirty[left[i]] {
                    i += 1;
                }
                while j < right.len() && self.dirty[right[j]] {
                    j += 1;
                }
                if i == left.len() || j == right.len() {
                    break;
                }
                let (a, b) = (left[i], right[j]);
                let delta = self.gain[a] + self.gain[b] - 2.0 * self.graph.weight_between(a, b);
                if delta <= 1e-12 * (1.0 + self.gain[a].abs() + self.gain[b].abs()) {
                    break;
                }
                self.side[a] = 1;
                self.side[b] = 0;
                swapped = true;
                for x in [a, b] {
                    self.dirty[x] = true;
                    for (u, _) in self.graph.neighbors(x) {
                        if self.block[u] == blk {
                            self.dirty[u] = true;
                        }
                    }
                }
                i += 1;
                j += 1;
            }
            if !swapped {
                break;
            }
        }
    }

    /// Splits `members` (sorted) of block `blk`, leaving sides in `self.side`.
    fn split(&mut self, members: &[usize], blk: u32, rng: &mut ChaCha8Rng) {
        let half = members.len() / 2;
        let mut best: Option<(f64, Vec<u8>)> = None;
        let mut order = members.to_vec();
        for _ in 0..RESTARTS {
            order.shuffle(rng);
            for (pos, &v) in order.iter().enumerate() {
                self.side[v] = u8::from(pos >= half);
            }
            self.refine(members, blk);
            let cut = self.cut(members, blk);
            if best.as_ref().is_none_or(|(c, _)| cut < *c) {
                best = Some((cut, members.iter().map(|&v| self.side[v]).collect()));
            }
            if cut == 0.0 {
                break;
            }
        }
        let (_, sides) = best.expect("at least one restart");
        for (&v, s) in members.iter().zip(sides) {
            self.side[v] = s;
        }
    }
}

/// Recursive bisection into `2^k` clusters for every level `k = 1..=levels`.
/// Level `k` clusters are the halves of level `k − 1` clusters.
pub fn balanced_partition(graph: &Graph, levels: u32, seed: u64) -> Result<Vec<Clustering>> {
    let n = graph.vertex_count();
    if levels == 0 {
        return Err(Error::InvalidParameter("levels must be at least 1".into()));
    }
    if levels >= usize::BITS || (1usize << levels) > n {
        return Err(Error::InvalidParameter(format!(
            "2^{levels} clusters requested but the graph has only {n} vertices"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splitter = Splitter {
        graph,
        block: vec![0; n],
        side: vec![0; n],
        gain: vec![0.0; n],
        dirty: vec![false; n],
    };
    let mut out = Vec::with_capacity(levels as usize);
    for level in 1..=levels {
        let blocks = 1usize << (level - 1);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); blocks];
        for v in 0..n {
            members[splitter.block[v] as usize].push(v);
        }
        for (blk, verts) in members.iter().enumerate() {
            let limit = (BALANCE_TOLERANCE * verts.len() as f64).ceil() as usize;
            splitter.split(verts, blk as u32, &mut rng);
            let ones = verts.iter().filter(|&&v| splitter.side[v] == 1).count();
            debug_assert!(ones.abs_diff(verts.len() - ones) <= limit.max(1));
        }
        for v in 0..n {
            splitter.block[v] = 2 * splitter.block[v] + u32::from(splitter.side[v]);
        }
        let labels: Vec<usize> = splitter.block.iter().map(|&b| b as usize).collect();
        out.push(Clustering::from_labels(graph, &labels, format!("bp-level{level}")));
    }
    Ok(out)
}
