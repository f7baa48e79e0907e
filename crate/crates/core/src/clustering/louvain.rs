//! Multi-level Louvain modularity optimisation.
//!
//! Each outer round runs local moving to convergence on the current level
//! graph, then aggregates communities into super-vertices. Aggregated
//! graphs carry each community's internal weight as a self-loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Clustering;
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LouvainParams {
    /// Divides the null-model term; smaller values give smaller clusters.
    pub resolution: f64,
    /// Number of outer (move + aggregate) rounds.
    pub iterations: usize,
    pub seed: u64,
}

impl Default for LouvainParams {
    fn default() -> Self {
        Self {
            resolution: 1.0,
            iterations: 3,
            seed: 0,
        }
    }
}

impl LouvainParams {
    fn validate(&self) -> Result<()> {
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Weighted graph at one aggregation level.
struct Level {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
    /// Strength `k_i`, including twice the self-loop weight.
    strength: Vec<f64>,
}

impl Level {
    fn from_graph(graph: &Graph) -> Self {
        let n = graph.vertex_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for v in 0..n {
            for (u, w) in graph.neighbors(v) {
                targets.push(u as u32);
                weights.push(w);
            }
            offsets.push(targets.len());
        }
        Self {
            offsets,
            targets,
            weights,
            strength: (0..n).map(|v| graph.degree(v)).collect(),
        }
    }

    fn len(&self) -> usize {
        self.strength.len()
    }

    fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[v]..self.offsets[v + 1];
        self.targets[r.clone()]
            .iter()
            .zip(&self.weights[r])
            .map(|(&t, &w)| (t as usize, w))
    }

    /// Collapses each community into one vertex. `community` must be dense.
    fn aggregate(&self, community: &[usize], count: usize) -> Self {
        let mut entries: Vec<(u32, u32, f64)> = Vec::with_capacity(self.targets.len());
        let mut strength = vec![0.0; count];
        for v in 0..self.len() {
            let cv = community[v];
            strength[cv] += self.strength[v];
            for (u, w) in self.neighbors(v) {
                let cu = community[u];
                if cu != cv {
                    entries.push((cv as u32, cu as u32, w));
                }
            }
        }
        entries.sort_by_key(|&(a, b, _)| (a, b));
        let mut offsets = vec![0usize; count + 1];
        let mut targets = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut last: Option<(u32, u32)> = None;
        for (a, b, w) in entries {
            if last == Some((a, b)) {
                *weights.last_mut().expect("previous entry") += w;
            } else {
                targets.push(b);
                weights.push(w);
                offsets[a as usize + 1] += 1;
                last = Some((a, b));
            }
        }
        for i in 0..count {
            offsets[i + 1] += offsets[i];
        }
        Self {
            offsets,
            targets,
            weights,
            strength,
        }
    }
}

/// Renumbers labels by first appearance; returns the number of labels.
fn densify(labels: &mut [usize]) -> usize {
    let mut map = vec![usize::MAX; labels.len()];
    let mut next = 0;
    for l in labels.iter_mut() {
        if map[*l] == usize::MAX {
            map[*l] = next;
            next += 1;
        }
        *l = map[*l];
    }
    next
}

/// Moves vertices between communities until no single move improves the
/// objective. Returns whether any vertex moved.
fn local_moving(level: &Level, two_m: f64, null_scale: f64, rng: &mut ChaCha8Rng, community: &mut [usize]) -> bool {
    let n = level.len();
    let mut total: Vec<f64> = level.strength.clone();
    let mut link = vec![0.0; n];
    let mut seen = vec![false; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut any_move = false;
    loop {
        order.shuffle(rng);
        let mut moved = false;
        for &v in &order {
            let own = community[v];
            let k = level.strength[v];
            for (u, w) in level.neighbors(v) {
                let c = community[u];
                if !seen[c] {
                    seen[c] = true;
                    touched.push(c);
                }
                link[c] += w;
            }
            total[own] -= k;
            let gain = |c: usize, link: &[f64], total: &[f64]| link[c] - null_scale * k * total[c] / two_m;
            let stay = gain(own, &link, &total);
            let mut best = own;
            let mut best_gain = f64::NEG_INFINITY;
            for &c in &touched {
                if c == own {
                    continue;
                }
                let g = gain(c, &link, &total);
                if g > best_gain || (g == best_gain && c < best) {
                    best = c;
                    best_gain = g;
                }
            }
            let eps = 1e-12 * k.max(1.0);
            let target = if best != own && best_gain > stay + eps { best } else { own };
            total[target] += k;
            if target != own {
                community[v] = target;
                moved = true;
            }
            for &c in &touched {
                link[c] = 0.0;
                seen[c] = false;
            }
            touched.clear();
        }
        if !moved {
            break;
        }
        any_move = true;
    }
    any_move
}

/// Flattened partition after each outer round (`params.iterations` entries).
/// Once a round makes no move, later entries repeat the converged partition.
pub fn louvain_rounds(graph: &Graph, params: LouvainParams) -> Result<Vec<Clustering>> {
    params.validate()?;
    if graph.vertex_count() == 0 {
        return Err(Error::InvalidParameter("louvain requires a non-empty graph".into()));
    }
    let two_m = 2.0 * graph.total_weight();
    let null_scale = 1.0 / params.resolution;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut level = Level::from_graph(graph);
    let mut vertex_community: Vec<usize> = (0..graph.vertex_count()).collect();
    let mut rounds = Vec::with_capacity(params.iterations);
    let mut converged = two_m <= 0.0;
    for round in 1..=params.iterations {
        if !converged {
            let mut community: Vec<usize> = (0..level.len()).collect();
            let moved = local_moving(&level, two_m, null_scale, &mut rng, &mut community);
            if moved {
                let count = densify(&mut community);
                for c in vertex_community.iter_mut() {
                    *c = community[*c];
                }
                level = level.aggregate(&community, count);
            } else {
                converged = true;
            }
        }
        let mut labels = vertex_community.clone();
        densify(&mut labels);
        let name = format!("louvain-r{}-i{}", params.resolution, round);
        rounds.push(Clustering::from_labels(graph, &labels, name));
    }
    Ok(rounds)
}

/// Partition after the final requested round.
pub fn louvain(graph: &Graph, params: LouvainParams) -> Result<Clustering> {
    Ok(louvain_rounds(graph, params)?.pop().expect("at least one round"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::modularity;
    use crate::graph::{GraphBuilder, UnitId};

    fn graph_from(edges: &[(usize, usize)], n: usize) -> Graph {
        let mut b = GraphBuilder::new();
        for v in 0..n {
            b.add_vertex(UnitId::new(format!("{v}")).unwrap());
        }
        for &(x, y) in edges {
            b.add_edge(
                UnitId::new(format!("{x}")).unwrap(),
                UnitId::new(format!("{y}")).unwrap(),
                1.0,
            )
            .unwrap();
        }
        b.build()
    }

    fn two_cliques() -> Graph {
        let mut edges = Vec::new();
        for base in [0, 4] {
            for i in 0..4 {
                for j in i + 1..4 {
                    edges.push((base + i, base + j));
                }
            }
        }
        edges.push((3, 4));
        graph_from(&edges, 8)
    }

    /// Naive double-sum modularity, independent of the library's routine.
    fn brute_modularity(adj: &[[f64; 8]; 8], labels: &[usize]) -> f64 {
        let k: Vec<f64> = adj.iter().map(|r| r.iter().sum()).collect();
        let two_m: f64 = k.iter().sum();
        let mut q = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                if labels[i] == labels[j] {
                    q += adj[i][j] - k[i] * k[j] / two_m;
                }
            }
        }
        q / two_m
    }

    /// Every set partition of `n` elements as restricted growth strings.
    fn set_partitions(n: usize) -> Vec<Vec<usize>> {
        fn rec(i: usize, n: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if i == n {
                out.push(cur.clone());
                return;
            }
            for l in 0..=max + 1 {
                cur.push(l);
                rec(i + 1, n, max.max(l), cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        let mut cur = vec![0];
        rec(1, n, 0, &mut cur, &mut out);
        out
    }

    #[test]
    fn recovers_two_cliques_and_matches_brute_force_optimum() {
        let g = two_cliques();
        let mut adj = [[0.0; 8]; 8];
        for (a, b, w) in g.edges() {
            let (ia, ib) = (
                g.id(a).as_str().parse::<usize>().unwrap(),
                g.id(b).as_str().parse::<usize>().unwrap(),
            );
            adj[ia][ib] = w;
            adj[ib][ia] = w;
        }
        let partitions = set_partitions(8);
        assert_eq!(partitions.len(), 4140);
        let (best_labels, best_q) = partitions
            .iter()
            .map(|p| (p.clone(), brute_modularity(&adj, p)))
            .fold((vec![], f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        assert_eq!(best_labels, vec![0, 0, 0, 0, 1, 1, 1, 1]);

        for seed in 0..10 {
            let c = louvain(&g, LouvainParams { resolution: 1.0, iterations: 3, seed }).unwrap();
            assert_eq!(c.cluster_count(), 2, "seed {seed}");
            let q = modularity(&g, &c, 1.0).unwrap();
            assert!((q - best_q).abs() < 1e-12, "seed {seed}: {q} vs {best_q}");
            for v in 0..8 {
                let expected = if v < 4 { "0" } else { "1" };
                let first = c.cluster_of(&UnitId::new("0").unwrap()).unwrap().clone();
                let same = c.cluster_of(&UnitId::new(format!("{v}")).unwrap()).unwrap() == &first;
                assert_eq!(same, expected == "0");
            }
        }
    }

    #[test]
    fn edgeless_graph_stays_singletons() {
        let g = graph_from(&[], 5);
        let c = louvain(&g, LouvainParams::default()).unwrap();
        assert_eq!(c.cluster_count(), 5);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut edges = Vec::new();
        let mut x = 12345u64;
        for _ in 0..400 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let a = (x >> 33) as usize % 120;
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let b = (x >> 33) as usize % 120;
            edges.push((a, b));
        }
        let g = graph_from(&edges, 120);
        let p = LouvainParams { resolution: 1.0, iterations: 4, seed: 7 };
        let a = louvain(&g, p).unwrap();
        let b = louvain(&g, p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rounds_never_lower_modularity() {
        let mut edges = Vec::new();
        for c in 0..6 {
            for i in 0..6 {
                for j in i + 1..6 {
                    if (i + j + c) % 3 != 0 {
                        edges.push((c * 6 + i, c * 6 + j));
                    }
                }
            }
            edges.push((c * 6, ((c + 1) % 6) * 6 + 1));
        }
        let g = graph_from(&edges, 36);
        let rounds = louvain_rounds(&g, LouvainParams { resolution: 1.0, iterations: 4, seed: 3 }).unwrap();
        let singletons = Clustering::from_labels(&g, &(0..36).collect::<Vec<_>>(), "s".into());
        let mut prev = modularity(&g, &singletons, 1.0).unwrap();
        for r in &rounds {
            let q = modularity(&g, r, 1.0).unwrap();
            assert!(q + 1e-12 >= prev);
            prev = q;
        }
        assert_eq!(rounds.len(), 4);
    }

    #[test]
    fn rejects_invalid_params() {
        let g = two_cliques();
        assert!(louvain(&g, LouvainParams { resolution: 0.0, iterations: 1, seed: 0 }).is_err());
        assert!(louvain(&g, LouvainParams { resolution: 1.0, iterations: 0, seed: 0 }).is_err());
        assert!(louvain(&graph_from(&[], 0), LouvainParams::default()).is_err());
    }
}
