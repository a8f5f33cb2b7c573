//! Undirected communication graphs in CSR form, the text file format,
//! k-hop extraction and synthetic botnet datasets.

mod dataset;
mod generate;
mod io;
mod subgraph;

pub use dataset::{load_split, parse_triple, Dataset, GeneratorConfig, Split, SplitStats, Topology};
pub use generate::{
    gen_background, gen_background_edges, gen_dataset, gen_graph, overlay_c2, overlay_p2p_debruijn,
    overlay_p2p_regular, EdgeSet,
};
pub use io::{load_graph, parse_graph, save_graph, write_graph};
pub use subgraph::{khop_subgraph, Subgraph};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Immutable undirected graph with node features and binary labels.
///
/// Each undirected edge `{u, v}` occupies two directed CSR slots that share
/// one edge id. Edge ids index the canonical edge list: pairs `(min, max)`
/// sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    edge_ids: Vec<usize>,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    labels: Vec<u8>,
}

impl Graph {
    /// Builds a graph from an undirected edge list in any order and
    /// orientation. Duplicate edges are merged; self-loops are rejected.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let mut canon: Vec<(usize, usize)> = Vec::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::Contract(format!("self-loop on node {u}")));
            }
            if u >= n || v >= n {
                return Err(Error::Contract(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        canon.dedup();
        Self::from_canonical(n, canon, features, labels)
    }

    /// `edges` must already be canonical: `u < v`, strictly increasing.
    pub(crate) fn from_canonical(
        n: usize,
        edges: Vec<(usize, usize)>,
        features: Matrix,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if features.rows() != n {
            return Err(Error::shape("graph features", features.shape(), (n, features.cols())));
        }
        if labels.len() != n {
            return Err(Error::Contract(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Contract(format!("label {l} is not binary")));
        }
        debug_assert!(edges.windows(2).all(|w| w[0] < w[1]));
        let mut degree = vec![0usize; n];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n].to_vec();
        let mut neighbors = vec![0; 2 * edges.len()];
        let mut edge_ids = vec![0; 2 * edges.len()];
        // two passes over the canonical list keep every neighbor list ascending:
        // first the smaller endpoints, then the larger ones
        for (id, &(u, v)) in edges.iter().enumerate() {
            neighbors[cursor[v]] = u;
            edge_ids[cursor[v]] = id;
            cursor[v] += 1;
        }
        for (id, &(u, v)) in edges.iter().enumerate() {
            neighbors[cursor[u]] = v;
            edge_ids[cursor[u]] = id;
            cursor[u] += 1;
        }
        Ok(Graph {
            offsets,
            neighbors,
            edge_ids,
            edges,
            features,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Neighbor ids of `v` in ascending order.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Undirected edge ids aligned with [`Graph::neighbors`].
    pub fn neighbor_edge_ids(&self, v: usize) -> &[usize] {
        &self.edge_ids[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Canonical `(u, v)` pairs with `u < v`, indexed by edge id.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Edge id of `{u, v}` if present.
    pub fn edge_id(&self, u: usize, v: usize) -> Option<usize> {
        let (a, b) = (u.min(v), u.max(v));
        self.edges.binary_search(&(a, b)).ok()
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.num_nodes();
        if perm.len() != n {
            return Err(Error::Contract("permutation length differs from node count".into()));
        }
        let mut inverse = vec![usize::MAX; n];
        for (old, &new) in perm.iter().enumerate() {
            if new >= n || inverse[new] != usize::MAX {
                return Err(Error::Contract("not a permutation".into()));
            }
            inverse[new] = old;
        }
        let features = self.features.select_rows(&inverse);
        let labels = inverse.iter().map(|&o| self.labels[o]).collect();
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v]));
        Graph::new(n, edges, features, labels)
    }
}
