use std::collections::VecDeque;

use super::Graph;
use crate::error::{Error, Result};

/// Induced k-hop neighborhood with maps back to the parent graph.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub graph: Graph,
    /// Local node id → parent node id (ascending).
    pub nodes: Vec<usize>,
    /// Local edge id → parent edge id.
    pub edge_map: Vec<usize>,
    /// Local id of the center node.
    pub center: usize,
}

/// Induced subgraph on all nodes within distance `k` of `center`.
pub fn khop_subgraph(g: &Graph, center: usize, k: usize) -> Result<Subgraph> {
    let n = g.num_nodes();
    if center >= n {
        return Err(Error::Contract(format!("node {center} out of range for {n} nodes")));
    }
    let mut dist = vec![usize::MAX; n];
    dist[center] = 0;
    let mut queue = VecDeque::from([center]);
    while let Some(u) = queue.pop_front() {
        if dist[u] == k {
            continue;
        }
        for &v in g.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let nodes: Vec<usize> = (0..n).filter(|&v| dist[v] != usize::MAX).collect();
    let mut local = vec![usize::MAX; n];
    for (i, &v) in nodes.iter().enumerate() {
        local[v] = i;
    }
    // parent edges are canonical, so remapped pairs stay sorted
    let mut edges = Vec::new();
    let mut edge_map = Vec::new();
    for (id, &(u, v)) in g.edges().iter().enumerate() {
        if local[u] != usize::MAX && local[v] != usize::MAX {
            edges.push((local[u], local[v]));
            edge_map.push(id);
        }
    }
    let features = g.features().select_rows(&nodes);
    let labels = nodes.iter().map(|&v| g.labels()[v]).collect();
    let graph = Graph::from_canonical(nodes.len(), edges, features, labels)?;
    Ok(Subgraph {
        graph,
        center: local[center],
        nodes,
        edge_map,
    })
}
