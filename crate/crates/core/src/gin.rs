//! Graph isomorphism network encoder with sum aggregation:
//!
//! ```text
//! agg = (1 + ε)·x + Σ_{u ∈ N(v)} m(u, v)·x_u
//! y   = Linear₂(ReLU(BatchNorm(Linear₁(agg))))
//! ```
//!
//! `m` is an optional per-edge mask shared by both directions of an edge.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{
    batchnorm_apply, batchnorm_backward, matmul, matmul_nt, matmul_tn, relu_backward,
    relu_forward, BnCache, Matrix, Mode, NormPass, Param, RngState, RunningStats,
};

/// Glorot-uniform `fan_in × fan_out` weight.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut RngState) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform(-a, a)).collect();
    Matrix::new(fan_in, fan_out, data).expect("length matches by construction")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GinParams {
    pub lin1_w: Param,
    pub lin1_b: Param,
    pub bn_gamma: Param,
    pub bn_beta: Param,
    pub running: RunningStats,
    pub lin2_w: Param,
    pub lin2_b: Param,
    /// Self-weight ε; fixed, never trained.
    pub eps: f64,
}

impl GinParams {
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut RngState) -> Self {
        GinParams {
            lin1_w: Param::new(glorot(input, hidden, rng)),
            lin1_b: Param::zeros(1, hidden),
            bn_gamma: Param::new(Matrix::filled(1, hidden, 1.0)),
            bn_beta: Param::zeros(1, hidden),
            running: RunningStats::new(hidden),
            lin2_w: Param::new(glorot(hidden, output, rng)),
            lin2_b: Param::zeros(1, output),
            eps: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.lin1_w.shape().0
    }

    pub fn hidden_dim(&self) -> usize {
        self.lin1_w.shape().1
    }

    pub fn output_dim(&self) -> usize {
        self.lin2_w.shape().1
    }

    /// Trainable tensors with their suffix names, in checkpoint order.
    pub fn named_params(&self) -> [(&'static str, &Param); 6] {
        [
            ("lin1.weight", &self.lin1_w),
            ("lin1.bias", &self.lin1_b),
            ("bn.gamma", &self.bn_gamma),
            ("bn.beta", &self.bn_beta),
            ("lin2.weight", &self.lin2_w),
            ("lin2.bias", &self.lin2_b),
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 6] {
        [
            &mut self.lin1_w,
            &mut self.lin1_b,
            &mut self.bn_gamma,
            &mut self.bn_beta,
            &mut self.lin2_w,
            &mut self.lin2_b,
        ]
    }
}

/// Everything [`gin_backward`] needs.
#[derive(Debug, Clone)]
pub struct GinCache {
    input: Matrix,
    agg: Matrix,
    bn: BnCache,
    relu_mask: Matrix,
    hidden: Matrix,
    edge_mask: Option<Vec<f64>>,
    nodes: usize,
    edges: usize,
}

impl GinCache {
    pub fn bn(&self) -> &BnCache {
        &self.bn
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

fn check_mask(g: &Graph, edge_mask: Option<&[f64]>) -> Result<()> {
    if let Some(m) = edge_mask {
        if m.len() != g.num_edges() {
            return Err(Error::shape("edge mask", (1, m.len()), (1, g.num_edges())));
        }
    }
    Ok(())
}

/// Row `v` of the result is `Σ_{u ∈ N(v)} m(u, v)·x_u`.
///
/// Contributions are added in lexicographic order of their value vectors, so
/// the result does not depend on how nodes are numbered.
pub fn masked_neighbor_sum(x: &Matrix, g: &Graph, edge_mask: Option<&[f64]>) -> Result<Matrix> {
    let n = g.num_nodes();
    if x.rows() != n {
        return Err(Error::shape("masked_neighbor_sum", x.shape(), (n, x.cols())));
    }
    check_mask(g, edge_mask)?;
    let f = x.cols();
    let mut out = Matrix::zeros(n, f);
    let mut order: Vec<usize> = Vec::new();
    let mut scratch: Vec<f64> = Vec::new();
    for v in 0..n {
        let nbrs = g.neighbors(v);
        if nbrs.is_empty() {
            continue;
        }
        order.clear();
        order.extend(0..nbrs.len());
        let acc = out.row_mut(v);
        match edge_mask {
            None => {
                order.sort_by(|&a, &b| lex_cmp(x.row(nbrs[a]), x.row(nbrs[b])));
                for &i in &order {
                    for (o, xv) in acc.iter_mut().zip(x.row(nbrs[i])) {
                        *o += xv;
                    }
                }
            }
            Some(mask) => {
                let ids = g.neighbor_edge_ids(v);
                scratch.clear();
                for (&u, &e) in nbrs.iter().zip(ids) {
                    let m = mask[e];
                    scratch.extend(x.row(u).iter().map(|xv| m * xv));
                }
                let rows = &scratch;
                order.sort_by(|&a, &b| lex_cmp(&rows[a * f..(a + 1) * f], &rows[b * f..(b + 1) * f]));
                for &i in &order {
                    for (o, c) in acc.iter_mut().zip(&rows[i * f..(i + 1) * f]) {
                        *o += c;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`masked_neighbor_sum`]; equal to it up to summation order
/// because the adjacency is symmetric.
fn neighbor_sum_adjoint(d: &Matrix, g: &Graph, edge_mask: Option<&[f64]>) -> Matrix {
    let mut out = Matrix::zeros(d.rows(), d.cols());
    for u in 0..g.num_nodes() {
        let acc = out.row_mut(u);
        for (&v, &e) in g.neighbors(u).iter().zip(g.neighbor_edge_ids(u)) {
            let m = edge_mask.map_or(1.0, |mask| mask[e]);
            for (o, dv) in acc.iter_mut().zip(d.row(v)) {
                *o += m * dv;
            }
        }
    }
    out
}

/// Forward pass without touching running statistics.
pub fn gin_apply(
    x: &Matrix,
    g: &Graph,
    edge_mask: Option<&[f64]>,
    p: &GinParams,
    pass: NormPass<'_>,
) -> Result<(Matrix, GinCache)> {
    if x.cols() != p.input_dim() {
        return Err(Error::shape("gin input", x.shape(), p.lin1_w.shape()));
    }
    let mut agg = masked_neighbor_sum(x, g, edge_mask)?;
    let self_weight = 1.0 + p.eps;
    for (a, xv) in agg.data_mut().iter_mut().zip(x.data()) {
        *a += self_weight * xv;
    }
    let mut pre = matmul(&agg, &p.lin1_w.value)?;
    pre.add_row_broadcast(p.lin1_b.value.data())?;
    let (normed, bn) = batchnorm_apply(&pre, &p.bn_gamma, &p.bn_beta, pass, &p.running)?;
    drop(pre);
    let (hidden, relu_mask) = relu_forward(&normed);
    drop(normed);
    let mut y = matmul(&hidden, &p.lin2_w.value)?;
    y.add_row_broadcast(p.lin2_b.value.data())?;
    Ok((
        y,
        GinCache {
            input: x.clone(),
            agg,
            bn,
            relu_mask,
            hidden,
            edge_mask: edge_mask.map(<[f64]>::to_vec),
            nodes: g.num_nodes(),
            edges: g.num_edges(),
        },
    ))
}

/// Train mode folds the batch statistics into the running statistics.
pub fn gin_forward(
    x: &Matrix,
    g: &Graph,
    edge_mask: Option<&[f64]>,
    p: &mut GinParams,
    mode: Mode,
) -> Result<(Matrix, GinCache)> {
    let pass = match mode {
        Mode::Train => NormPass::Batch,
        Mode::Eval => NormPass::Running,
    };
    let (y, cache) = gin_apply(x, g, edge_mask, p, pass)?;
    if let Some(stats) = &cache.bn.stats {
        if mode == Mode::Train {
            p.running.update(stats);
        }
    }
    Ok((y, cache))
}

/// Returns `dX` and, when the forward used an edge mask, `dMask`.
/// Parameter gradients are accumulated into `p`.
pub fn gin_backward(
    dy: &Matrix,
    cache: &GinCache,
    p: &mut GinParams,
    g: &Graph,
) -> Result<(Matrix, Option<Vec<f64>>)> {
    if dy.shape() != (cache.nodes, p.output_dim())
        || g.num_nodes() != cache.nodes
        || g.num_edges() != cache.edges
        || cache.hidden.cols() != p.hidden_dim()
        || cache.input.cols() != p.input_dim()
    {
        return Err(Error::Contract(format!(
            "gin cache for {} nodes / {} edges does not match gradient {:?} on a graph with {} nodes / {} edges",
            cache.nodes,
            cache.edges,
            dy.shape(),
            g.num_nodes(),
            g.num_edges()
        )));
    }
    p.lin2_w.accumulate(&matmul_tn(&cache.hidden, dy)?)?;
    p.lin2_b.accumulate_row(&dy.col_sums());
    let dhidden = matmul_nt(dy, &p.lin2_w.value)?;
    let dnormed = relu_backward(&dhidden, &cache.relu_mask)?;
    drop(dhidden);
    let dpre = batchnorm_backward(&dnormed, &cache.bn, &mut p.bn_gamma, &mut p.bn_beta)?;
    drop(dnormed);
    p.lin1_w.accumulate(&matmul_tn(&cache.agg, &dpre)?)?;
    p.lin1_b.accumulate_row(&dpre.col_sums());
    let dagg = matmul_nt(&dpre, &p.lin1_w.value)?;
    drop(dpre);

    let mask = cache.edge_mask.as_deref();
    let mut dx = neighbor_sum_adjoint(&dagg, g, mask);
    let self_weight = 1.0 + p.eps;
    for (o, d) in dx.data_mut().iter_mut().zip(dagg.data()) {
        *o += self_weight * d;
    }
    let dmask = mask.map(|_| {
        let mut dm = vec![0.0; g.num_edges()];
        for v in 0..g.num_nodes() {
            let dv = dagg.row(v);
            for (&u, &e) in g.neighbors(v).iter().zip(g.neighbor_edge_ids(v)) {
                dm[e] += cache.input.row(u).iter().zip(dv).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        dm
    });
    Ok((dx, dmask))
}
