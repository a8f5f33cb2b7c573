//! Synthetic communication graphs: uniform random background traffic with a
//! botnet overlay mixed in.

use std::collections::BTreeSet;

use super::{Dataset, Graph, GeneratorConfig, Split, Topology};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

/// Canonical undirected edges `(u, v)` with `u < v`.
pub type EdgeSet = BTreeSet<(usize, usize)>;

fn canon(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

fn max_edges(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// G(n, M) background with `M = round(n · avg_degree / 2)`.
pub fn gen_background(n: usize, avg_degree: f64, rng: &mut RngState) -> Result<EdgeSet> {
    if !(avg_degree.is_finite() && avg_degree >= 0.0) {
        return Err(Error::Config(format!("avg_degree must be finite and >= 0, got {avg_degree}")));
    }
    let m = (n as f64 * avg_degree / 2.0).round() as usize;
    gen_background_edges(n, m, rng)
}

/// Uniform random simple graph on `n` nodes with exactly `m` edges.
pub fn gen_background_edges(n: usize, m: usize, rng: &mut RngState) -> Result<EdgeSet> {
    let max = max_edges(n);
    if m > max {
        return Err(Error::Generation(format!(
            "{m} edges requested but {n} nodes admit at most {max}"
        )));
    }
    // dense requests sample the (smaller) complement instead
    let dense = 2 * m > max;
    let target = if dense { max - m } else { m };
    let mut picked = EdgeSet::new();
    while picked.len() < target {
        let u = rng.below(n);
        let v = rng.below(n);
        if u != v {
            picked.insert(canon(u, v));
        }
    }
    if !dense {
        return Ok(picked);
    }
    let mut all = EdgeSet::new();
    for u in 0..n {
        for v in u + 1..n {
            if !picked.contains(&(u, v)) {
                all.insert((u, v));
            }
        }
    }
    Ok(all)
}

/// Star overlay: one controller plus `bots` victims, each linked to the
/// controller. Returns the merged edges and the overlay nodes in selection
/// order, controller first.
pub fn overlay_c2(
    mut edges: EdgeSet,
    n: usize,
    bots: usize,
    rng: &mut RngState,
) -> Result<(EdgeSet, Vec<usize>)> {
    if bots == 0 || bots + 1 > n {
        return Err(Error::Config(format!(
            "c2 overlay needs 1 <= bots and bots + 1 <= n (bots={bots}, n={n})"
        )));
    }
    let nodes = rng.sample_distinct(n, bots + 1);
    let controller = nodes[0];
    for &b in &nodes[1..] {
        edges.insert(canon(controller, b));
    }
    Ok((edges, nodes))
}

/// Binary de Bruijn overlay on `bots = 2^k` labels: `x -> 2x mod bots` and
/// `x -> 2x + 1 mod bots`, undirected, self-loops dropped. Label `i` is placed
/// on the `i`-th randomly selected host.
pub fn overlay_p2p_debruijn(
    mut edges: EdgeSet,
    n: usize,
    bots: usize,
    rng: &mut RngState,
) -> Result<(EdgeSet, Vec<usize>)> {
    if bots < 2 || !bots.is_power_of_two() {
        return Err(Error::Config(format!(
            "de Bruijn overlay needs bots to be a power of two >= 2, got {bots}"
        )));
    }
    if bots > n {
        return Err(Error::Config(format!("bots ({bots}) exceeds nodes ({n})")));
    }
    let hosts = rng.sample_distinct(n, bots);
    for x in 0..bots {
        for y in [(2 * x) % bots, (2 * x + 1) % bots] {
            if x != y {
                edges.insert(canon(hosts[x], hosts[y]));
            }
        }
    }
    Ok((edges, hosts))
}

const PAIRING_ATTEMPTS: usize = 10_000;

/// Random `degree_k`-regular simple graph among `bots` random hosts, built by
/// the pairing model with whole-configuration retries.
pub fn overlay_p2p_regular(
    mut edges: EdgeSet,
    n: usize,
    bots: usize,
    degree_k: usize,
    rng: &mut RngState,
) -> Result<(EdgeSet, Vec<usize>)> {
    if degree_k == 0 || degree_k >= bots || (bots * degree_k) % 2 != 0 {
        return Err(Error::Config(format!(
            "regular overlay needs 0 < k < bots and bots·k even (bots={bots}, k={degree_k})"
        )));
    }
    if bots > n {
        return Err(Error::Config(format!("bots ({bots}) exceeds nodes ({n})")));
    }
    let hosts = rng.sample_distinct(n, bots);
    let mut stubs: Vec<usize> = (0..bots).flat_map(|b| std::iter::repeat(b).take(degree_k)).collect();
    for _ in 0..PAIRING_ATTEMPTS {
        rng.shuffle(&mut stubs);
        let mut overlay = BTreeSet::new();
        let ok = stubs.chunks_exact(2).all(|p| p[0] != p[1] && overlay.insert(canon(p[0], p[1])));
        if ok {
            for (a, b) in overlay {
                edges.insert(canon(hosts[a], hosts[b]));
            }
            return Ok((edges, hosts));
        }
    }
    Err(Error::Generation(format!(
        "no simple {degree_k}-regular pairing on {bots} bots after {PAIRING_ATTEMPTS} attempts (seed {})",
        rng.origin()
    )))
}

/// One graph of a synthetic dataset.
pub fn gen_graph(cfg: &GeneratorConfig, rng: &mut RngState) -> Result<Graph> {
    let background = gen_background(cfg.nodes, cfg.avg_degree, rng)?;
    let (edges, members) = match cfg.topology {
        Topology::C2 => overlay_c2(background, cfg.nodes, cfg.bots, rng)?,
        Topology::P2pDeBruijn => overlay_p2p_debruijn(background, cfg.nodes, cfg.bots, rng)?,
        Topology::P2pRegular => {
            overlay_p2p_regular(background, cfg.nodes, cfg.bots, cfg.degree_k, rng)?
        }
    };
    let mut labels = vec![0u8; cfg.nodes];
    for m in members {
        labels[m] = 1;
    }
    let features = Matrix::filled(cfg.nodes, cfg.feature_dim, 1.0);
    Graph::from_canonical(cfg.nodes, edges.into_iter().collect(), features, labels)
}

/// Generates every split; graph `j` of split `s` draws from the substream
/// `derive(seed, [s, j])`.
pub fn gen_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut splits: [Vec<Graph>; 3] = Default::default();
    for split in Split::ALL {
        let s = split as usize;
        for j in 0..cfg.graphs[s] {
            let mut rng = RngState::derive(cfg.seed, &[s as u64, j as u64]);
            let g = gen_graph(cfg, &mut rng)?;
            if g.num_positive() == 0 || g.num_positive() == g.num_nodes() {
                return Err(Error::Generation(format!(
                    "{} graph {j} lacks one of the two classes",
                    split.name()
                )));
            }
            splits[s].push(g);
        }
    }
    let [train, val, test] = splits;
    Ok(Dataset {
        train,
        val,
        test,
        config: Some(cfg.clone()),
    })
}
