//! Weighted undirected interference graph and cluster purity.
//!
//! `total_weight` is `m`, the sum of undirected edge weights with every edge
//! counted once. Modularity code works with `2m = 2 * total_weight`.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::error::{Error, Result};

/// Stable, opaque identifier of an experimental unit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UnitId(String);

impl UnitId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Validation("unit id must be non-empty".into()));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

impl TryFrom<String> for UnitId {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<UnitId> for String {
    fn from(value: UnitId) -> Self {
        value.0
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Immutable CSR graph. Vertex `i` has neighbours
/// `targets[offsets[i]..offsets[i + 1]]`, sorted by index.
#[derive(Clone, Debug)]
pub struct Graph {
    ids: Vec<UnitId>,
    index: HashMap<UnitId, usize>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
    degrees: Vec<f64>,
    edge_count: usize,
    total_weight: f64,
}

impl Graph {
    pub fn vertex_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Sum of edge weights, each undirected edge once (`m`).
    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn id(&self, vertex: usize) -> &UnitId {
        &self.ids[vertex]
    }

    pub fn ids(&self) -> &[UnitId] {
        &self.ids
    }

    pub fn index_of(&self, id: &UnitId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Weighted degree.
    pub fn degree(&self, vertex: usize) -> f64 {
        self.degrees[vertex]
    }

    pub fn neighbors(&self, vertex: usize) -> impl ExactSizeIterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[vertex]..self.offsets[vertex + 1];
        self.targets[range.clone()]
            .iter()
            .zip(&self.weights[range])
            .map(|(&t, &w)| (t as usize, w))
    }

    /// Weight of edge `(a, b)`, 0 when absent.
    pub fn weight_between(&self, a: usize, b: usize) -> f64 {
        let range = self.offsets[a]..self.offsets[a + 1];
        match self.targets[range.clone()].binary_search(&(b as u32)) {
            Ok(i) => self.weights[range.start + i],
            Err(_) => 0.0,
        }
    }

    /// Each undirected edge once, as `(lo, hi, weight)` with `lo < hi`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.vertex_count()).flat_map(move |v| {
            self.neighbors(v)
                .filter(move |&(u, _)| u > v)
                .map(move |(u, w)| (v, u, w))
        })
    }
}

/// Accumulates vertices and edges; duplicate pairs have their weights summed.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    ids: Vec<UnitId>,
    index: HashMap<UnitId, usize>,
    edges: HashMap<(u32, u32), f64>,
    self_loops: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, id: UnitId) -> usize {
        if let Some(&i) = self.index.get(&id) {
            return i;
        }
        let i = self.ids.len();
        self.index.insert(id.clone(), i);
        self.ids.push(id);
        i
    }

    /// Adds `weight` to the undirected pair. Self-loops touch the vertex but
    /// are otherwise dropped and counted.
    pub fn add_edge(&mut self, a: UnitId, b: UnitId, weight: f64) -> Result<()> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::Validation(format!(
                "edge ({a}, {b}) has invalid weight {weight}"
            )));
        }
        let ia = self.add_vertex(a) as u32;
        let ib = self.add_vertex(b) as u32;
        self.add_edge_by_index(ia, ib, weight);
        Ok(())
    }

    pub(crate) fn add_edge_by_index(&mut self, a: u32, b: u32, weight: f64) {
        if a == b {
            self.self_loops += 1;
            return;
        }
        let key = if a < b { (a, b) } else { (b, a) };
        *self.edges.entry(key).or_insert(0.0) += weight;
    }

    pub fn self_loops_dropped(&self) -> usize {
        self.self_loops
    }

    pub fn build(self) -> Graph {
        let n = self.ids.len();
        let mut counts = vec![0usize; n + 1];
        for &(a, b) in self.edges.keys() {
            counts[a as usize + 1] += 1;
            counts[b as usize + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts;
        let mut cursor = offsets.clone();
        let mut targets = vec![0u32; offsets[n]];
        let mut weights = vec![0.0; offsets[n]];
        let mut total_weight = 0.0;
        for (&(a, b), &w) in &self.edges {
            for (from, to) in [(a, b), (b, a)] {
                let slot = &mut cursor[from as usize];
                targets[*slot] = to;
                weights[*slot] = w;
                *slot += 1;
            }
        }
        let mut degrees = vec![0.0; n];
        for v in 0..n {
            let range = offsets[v]..offsets[v + 1];
            let mut pairs: Vec<(u32, f64)> = targets[range.clone()]
                .iter()
                .copied()
                .zip(weights[range.clone()].iter().copied())
                .collect();
            pairs.sort_unstable_by_key(|&(t, _)| t);
            for (slot, (t, w)) in range.zip(pairs) {
                targets[slot] = t;
                weights[slot] = w;
                degrees[v] += w;
                if t as usize > v {
                    total_weight += w;
                }
            }
        }
        Graph {
            ids: self.ids,
            index: self.index,
            offsets,
            targets,
            weights,
            degrees,
            edge_count: self.edges.len(),
            total_weight,
        }
    }
}

/// Result of [`load_edge_list`].
#[derive(Debug, Clone)]
pub struct EdgeListLoad {
    pub graph: Graph,
    pub self_loops_dropped: usize,
}

/// Parses `src<TAB>dst[<TAB>weight]` lines. Blank lines and lines starting
/// with `#` are skipped; a missing weight defaults to 1.
pub fn load_edge_list<R: BufRead>(reader: R) -> Result<EdgeListLoad> {
    let mut builder = GraphBuilder::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |message: String| Error::Parse {
            line: lineno,
            message,
        };
        let (src, dst, weight) = match fields.as_slice() {
            [src, dst] => (*src, *dst, 1.0),
            [src, dst, w] => {
                let w: f64 = w
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(format!("weight `{w}` is not a number")))?;
                (*src, *dst, w)
            }
            _ => {
                return Err(parse_err(format!(
                    "expected 2 or 3 tab-separated fields, found {}",
                    fields.len()
                )))
            }
        };
        if weight < 0.0 || !weight.is_finite() {
            return Err(Error::Validation(format!(
                "line {lineno}: edge weight {weight} must be finite and non-negative"
            )));
        }
        let src = UnitId::new(src).map_err(|_| parse_err("empty source id".into()))?;
        let dst = UnitId::new(dst).map_err(|_| parse_err("empty target id".into()))?;
        builder.add_edge(src, dst, weight)?;
    }
    let self_loops_dropped = builder.self_loops_dropped();
    Ok(EdgeListLoad {
        graph: builder.build(),
        self_loops_dropped,
    })
}

/// Maps every graph vertex to a dense cluster index, failing with the list of
/// vertices that have no assignment.
pub(crate) fn vertex_clusters(graph: &Graph, clustering: &Clustering) -> Result<Vec<usize>> {
    let mut dense: HashMap<&str, usize> = HashMap::new();
    let mut out = Vec::with_capacity(graph.vertex_count());
    let mut missing = Vec::new();
    for id in graph.ids() {
        match clustering.cluster_of(id) {
            Some(c) => {
                let next = dense.len();
                out.push(*dense.entry(c.as_str()).or_insert(next));
            }
            None => missing.push(id.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Unassigned {
            count: missing.len(),
            sample: missing.into_iter().take(10).collect(),
        });
    }
    Ok(out)
}

/// Weighted fraction of edge weight with both endpoints in the same cluster.
/// An edgeless (or zero-weight) graph has purity 1.
pub fn purity(graph: &Graph, clustering: &Clustering) -> Result<f64> {
    let cluster = vertex_clusters(graph, clustering)?;
    let total = graph.total_weight();
    if total <= 0.0 {
        return Ok(1.0);
    }
    let within: f64 = graph
        .edges()
        .filter(|&(a, b, _)| cluster[a] == cluster[b])
        .map(|(_, _, w)| w)
        .sum();
    Ok((within / total).clamp(0.0, 1.0))
}
