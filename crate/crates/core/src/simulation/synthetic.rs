//! Synthetic interference graphs with planted communities.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clustering::Clustering;
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphBuilder, UnitId};

/// Community sizes drawn from a truncated power law `P(s) ∝ s^−exponent`
/// on `[min, max]` until they cover `total` vertices; the last size is
/// trimmed (never below `min`, so the sum may exceed `total` slightly).
pub fn power_law_sizes(total: usize, exponent: f64, min: usize, max: usize, seed: u64) -> Result<Vec<usize>> {
    if min == 0 || max < min || total == 0 {
        return Err(Error::InvalidParameter("sizes need 0 < min ≤ max and a positive total".into()));
    }
    if !(exponent.is_finite() && exponent > 1.0) {
        return Err(Error::InvalidParameter("exponent must exceed 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (min as f64, max as f64 + 1.0);
    let a = 1.0 - exponent;
    let (la, ha) = (lo.powf(a), hi.powf(a));
    let mut sizes = Vec::new();
    let mut sum = 0;
    while sum < total {
        let u: f64 = rng.random();
        let s = ((la + u * (ha - la)).powf(1.0 / a).floor() as usize).clamp(min, max);
        let s = s.min((total - sum).max(min));
        sizes.push(s);
        sum += s;
    }
    Ok(sizes)
}

/// A planted-partition graph and its ground-truth communities.
#[derive(Clone, Debug)]
pub struct PlantedGraph {
    pub graph: Graph,
    /// Community of every vertex, by vertex index.
    pub labels: Vec<usize>,
}

impl PlantedGraph {
    pub fn truth(&self) -> Clustering {
        Clustering::from_labels(&self.graph, &self.labels, "planted".into())
    }
}

/// Vertices `v0..` grouped into consecutive communities of the given sizes.
/// Each vertex gets about `mean_degree · (1 − mixing)` neighbours inside its
/// community (capped by the community size) and `mean_degree · mixing`
/// outside it. All edges have weight 1.
pub fn planted_partition(sizes: &[usize], mean_degree: f64, mixing: f64, seed: u64) -> Result<PlantedGraph> {
    if !(mean_degree.is_finite() && mean_degree > 0.0) || !(0.0..=1.0).contains(&mixing) {
        return Err(Error::InvalidParameter("need mean_degree > 0 and mixing in [0, 1]".into()));
    }
    let n: usize = sizes.iter().sum();
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidParameter("need at least two non-empty communities".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    for v in 0..n {
        b.add_vertex(UnitId::new(format!("v{v}"))?);
    }
    let mut labels = Vec::with_capacity(n);
    let mut start = 0;
    for (c, &s) in sizes.iter().enumerate() {
        labels.extend(std::iter::repeat_n(c, s));
        let pairs = s * (s - 1) / 2;
        let want = ((s as f64 * mean_degree * (1.0 - mixing) / 2.0).round() as usize).min(pairs);
        if 2 * want >= pairs {
            let q = want as f64 / pairs as f64;
            for i in 0..s {
                for j in i + 1..s {
                    if rng.random::<f64>() < q {
                        b.add_edge_by_index((start + i) as u32, (start + j) as u32, 1.0);
                    }
                }
            }
        } else {
            let mut seen = HashSet::with_capacity(want);
            while seen.len() < want {
                let (i, j) = (rng.random_range(0..s), rng.random_range(0..s));
                if i != j && seen.insert((i.min(j), i.max(j))) {
                    b.add_edge_by_index((start + i) as u32, (start + j) as u32, 1.0);
                }
            }
        }
        start += s;
    }
    let external = (n as f64 * mean_degree * mixing / 2.0).round() as usize;
    let mut seen = HashSet::with_capacity(external);
    let mut attempts = 0usize;
    while seen.len() < external && attempts < 100 * external.max(1) {
        attempts += 1;
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        if labels[i] != labels[j] && seen.insert((i.min(j), i.max(j))) {
            b.add_edge_by_index(i as u32, j as u32, 1.0);
        }
    }
    Ok(PlantedGraph {
        graph: b.build(),
        labels,
    })
}
