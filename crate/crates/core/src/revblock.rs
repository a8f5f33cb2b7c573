//! Grouped reversible residual block.
//!
//! The `D` channels are split into `C` contiguous groups `x₁ … x_C` of width
//! `D/C`. With `x₀′ = x₂ + … + x_C`, group `i` is updated as
//! `xᵢ′ = fᵢ(xᵢ₋₁′) + xᵢ` for `i = 1 … C`, and the output is `x₁′ ‖ … ‖ x_C′`.
//! Every `fᵢ` is a [`gin`](crate::gin) encoder over the same graph.
//!
//! The inputs can be recovered from the outputs, so backward passes rebuild
//! activations instead of storing them: the only per-block state kept between
//! forward and backward is a [`BlockSideCache`] holding the batch-norm
//! statistics of each group, `O(D)` reals.

use crate::error::{Error, Result};
use crate::gin::{gin_apply, gin_backward, gin_forward, GinCache, GinParams};
use crate::graph::Graph;
use crate::numerics::{BatchStats, Matrix, Mode, NormPass, RngState};

#[derive(Debug, Clone, PartialEq)]
pub struct RevBlockParams {
    pub groups: Vec<GinParams>,
}

impl RevBlockParams {
    pub fn new(width: usize, groups: usize, rng: &mut RngState) -> Result<Self> {
        check_split(width, groups)?;
        let w = width / groups;
        Ok(RevBlockParams {
            groups: (0..groups).map(|_| GinParams::new(w, w, w, rng)).collect(),
        })
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_width(&self) -> usize {
        self.groups[0].input_dim()
    }

    pub fn width(&self) -> usize {
        self.group_width() * self.num_groups()
    }
}

pub fn check_split(width: usize, groups: usize) -> Result<()> {
    if groups < 2 {
        return Err(Error::Config(format!("at least 2 groups are required, got {groups}")));
    }
    if width == 0 || width % groups != 0 {
        return Err(Error::Config(format!(
            "width {width} is not divisible into {groups} groups"
        )));
    }
    Ok(())
}

/// Normalization statistics one group used during the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupReplay {
    Batch(BatchStats),
    Running,
}

impl GroupReplay {
    fn pass(&self) -> NormPass<'_> {
        match self {
            GroupReplay::Batch(s) => NormPass::Replay(s),
            GroupReplay::Running => NormPass::Running,
        }
    }
}

/// Per-block state retained between forward and backward. Holds no
/// activation matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSideCache {
    groups: Vec<GroupReplay>,
    nodes: usize,
    width: usize,
}

impl BlockSideCache {
    pub fn groups(&self) -> &[GroupReplay] {
        &self.groups
    }

    /// Number of reals retained.
    pub fn retained_reals(&self) -> usize {
        self.groups
            .iter()
            .map(|g| match g {
                GroupReplay::Batch(s) => s.mean.len() + s.var.len(),
                GroupReplay::Running => 0,
            })
            .sum()
    }

    fn check(&self, x: &Matrix, p: &RevBlockParams) -> Result<()> {
        if self.nodes != x.rows() || self.width != x.cols() || self.groups.len() != p.num_groups() {
            return Err(Error::Contract(format!(
                "side cache for {} nodes x {} channels / {} groups used with {:?} and {} groups",
                self.nodes,
                self.width,
                self.groups.len(),
                x.shape(),
                p.num_groups()
            )));
        }
        Ok(())
    }
}

fn check_input(x: &Matrix, p: &RevBlockParams, g: &Graph) -> Result<()> {
    if x.cols() != p.width() || x.rows() != g.num_nodes() {
        return Err(Error::shape("rev block input", x.shape(), (g.num_nodes(), p.width())));
    }
    Ok(())
}

/// `x₂ + … + x_C` read from the given matrix.
fn tail_sum(x: &Matrix, groups: usize, w: usize) -> Matrix {
    let mut s = x.column_block(w, w);
    for i in 2..groups {
        s.add_assign(&x.column_block(i * w, w)).expect("equal group shapes");
    }
    s
}

/// Overwrites `x` with the block output.
pub fn rev_forward_in_place(
    x: &mut Matrix,
    g: &Graph,
    edge_mask: Option<&[f64]>,
    p: &mut RevBlockParams,
    mode: Mode,
) -> Result<BlockSideCache> {
    check_input(x, p, g)?;
    let (c, w) = (p.num_groups(), p.group_width());
    let mut prev = tail_sum(x, c, w);
    let mut replay = Vec::with_capacity(c);
    for (i, group) in p.groups.iter_mut().enumerate() {
        let pass = match mode {
            Mode::Train => NormPass::Batch,
            Mode::Eval => NormPass::Running,
        };
        let (mut out, cache) = gin_apply(&prev, g, edge_mask, group, pass)?;
        match (mode, &cache.bn().stats) {
            (Mode::Train, Some(stats)) => {
                group.running.update(stats);
                replay.push(GroupReplay::Batch(stats.clone()));
            }
            _ => replay.push(GroupReplay::Running),
        }
        drop(cache);
        out.add_assign(&x.column_block(i * w, w))?;
        x.set_column_block(i * w, &out)?;
        prev = out;
    }
    Ok(BlockSideCache {
        groups: replay,
        nodes: x.rows(),
        width: x.cols(),
    })
}

pub fn rev_forward(
    x: &Matrix,
    g: &Graph,
    edge_mask: Option<&[f64]>,
    p: &mut RevBlockParams,
    mode: Mode,
) -> Result<(Matrix, BlockSideCache)> {
    let mut out = x.clone();
    let side = rev_forward_in_place(&mut out, g, edge_mask, p, mode)?;
    Ok((out, side))
}

/// Overwrites the block output `y` with the reconstructed input.
pub fn rev_inverse_in_place(
    y: &mut Matrix,
    g: &Graph,
    edge_mask: Option<&[f64]>,
    p: &RevBlockParams,
    side: &BlockSideCache,
) -> Result<()> {
    check_input(y, p, g)?;
    side.check(y, p)?;
    let (c, w) = (p.num_groups(), p.group_width());
    for i in (1..c).rev() {
        let input = y.column_block((i - 1) * w, w);
        let (out, _) = gin_apply(&input, g, edge_mask, &p.groups[i], side.groups[i].pass())?;
        let mut xi = y.column_block(i * w, w);
        xi.sub_assign(&out)?;
        y.set_column_block(i * w, &xi)?;
    }
    let x0 = tail_sum(y, c, w);
    let (out, _) = gin_apply(&x0, g, edge_mask, &p.groups[0], side.groups[0].pass())?;
    let mut x1 = y.column_block(0, w);
    x1.sub_assign(&out)?;
    y.set_column_block(0, &x1)
}

pub fn rev_inverse(
    y: &Matrix,
    g: &Graph,
    edge_mask: Option<&[f64]>,
    p: &RevBlockParams,
    side: &BlockSideCache,
) -> Result<Matrix> {
    let mut x = y.clone();
    rev_inverse_in_place(&mut x, g, edge_mask, p, side)?;
    Ok(x)
}

/// Backward through one block using reconstruction.
///
/// On entry `y` holds the block output and `dy` the gradient with respect to
/// it. On return `y` holds the reconstructed input and `dy` the gradient with
/// respect to that input. Parameter gradients accumulate into `p`; mask
/// gradients, when requested, accumulate into `dmask`.
pub fn rev_backward_in_place(
    y: &mut Matrix,
    dy: &mut Matrix,
    g: &Graph,
    edge_mask: Option<&[f64]>,
    p: &mut RevBlockParams,
    side: &BlockSideCache,
    mut dmask: Option<&mut [f64]>,
) -> Result<()> {
    check_input(y, p, g)?;
    side.check(y, p)?;
    y.same_shape(dy, "rev_backward")?;
    if let (Some(d), Some(m)) = (dmask.as_deref(), edge_mask) {
        if d.len() != m.len() {
            return Err(Error::shape("rev_backward mask gradient", (1, d.len()), (1, m.len())));
        }
    }
    let (c, w) = (p.num_groups(), p.group_width());
    let mut add_mask_grad = |dm: Option<Vec<f64>>| {
        if let (Some(acc), Some(dm)) = (dmask.as_deref_mut(), dm) {
            for (a, d) in acc.iter_mut().zip(dm) {
                *a += d;
            }
        }
    };

    // groups C … 2: the input of fᵢ is the untouched output group i - 1
    for i in (1..c).rev() {
        let input = y.column_block((i - 1) * w, w);
        let (out, cache) = gin_apply(&input, g, edge_mask, &p.groups[i], side.groups[i].pass())?;
        drop(input);
        let mut xi = y.column_block(i * w, w);
        xi.sub_assign(&out)?;
        y.set_column_block(i * w, &xi)?;
        drop(out);
        let gi = dy.column_block(i * w, w);
        let (dinput, dm) = gin_backward(&gi, &cache, &mut p.groups[i], g)?;
        dy.add_column_block((i - 1) * w, &dinput)?;
        add_mask_grad(dm);
    }

    // group 1 reads x₀′ = x₂ + … + x_C, all reconstructed by now
    let x0 = tail_sum(y, c, w);
    let (out, cache) = gin_apply(&x0, g, edge_mask, &p.groups[0], side.groups[0].pass())?;
    drop(x0);
    let mut x1 = y.column_block(0, w);
    x1.sub_assign(&out)?;
    y.set_column_block(0, &x1)?;
    drop(out);
    let g1 = dy.column_block(0, w);
    let (dx0, dm) = gin_backward(&g1, &cache, &mut p.groups[0], g)?;
    for j in 1..c {
        dy.add_column_block(j * w, &dx0)?;
    }
    add_mask_grad(dm);
    Ok(())
}

/// Allocating wrapper around [`rev_backward_in_place`]; returns
/// `(dX_in, X_in, dMask)`.
pub fn rev_backward(
    dy: &Matrix,
    y: &Matrix,
    g: &Graph,
    edge_mask: Option<&[f64]>,
    p: &mut RevBlockParams,
    side: &BlockSideCache,
) -> Result<(Matrix, Matrix, Option<Vec<f64>>)> {
    let mut x = y.clone();
    let mut dx = dy.clone();
    let mut dmask = edge_mask.map(|m| vec![0.0; m.len()]);
    rev_backward_in_place(&mut x, &mut dx, g, edge_mask, p, side, dmask.as_deref_mut())?;
    Ok((dx, x, dmask))
}

/// Activations kept by [`rev_forward_stored`]: one GIN cache per group.
#[derive(Debug, Clone)]
pub struct StoredBlock {
    caches: Vec<GinCache>,
}

/// Conventional forward that keeps every intermediate activation. Used as a
/// reference for the reconstructing backward; costs O(C) group caches per block.
pub fn rev_forward_stored(
    x: &Matrix,
    g: &Graph,
    edge_mask: Option<&[f64]>,
    p: &mut RevBlockParams,
    mode: Mode,
) -> Result<(Matrix, StoredBlock)> {
    check_input(x, p, g)?;
    let (c, w) = (p.num_groups(), p.group_width());
    let mut y = Matrix::zeros(x.rows(), x.cols());
    let mut input = tail_sum(x, c, w);
    let mut caches = Vec::with_capacity(c);
    for (i, group) in p.groups.iter_mut().enumerate() {
        let (mut out, cache) = gin_forward(&input, g, edge_mask, group, mode)?;
        out.add_assign(&x.column_block(i * w, w))?;
        y.set_column_block(i * w, &out)?;
        caches.push(cache);
        input = out;
    }
    Ok((y, StoredBlock { caches }))
}

/// Plain reverse-mode sweep over the stored caches.
pub fn rev_backward_stored(
    dy: &Matrix,
    stored: &StoredBlock,
    g: &Graph,
    p: &mut RevBlockParams,
) -> Result<(Matrix, Option<Vec<f64>>)> {
    let (c, w) = (p.num_groups(), p.group_width());
    if stored.caches.len() != c || dy.cols() != p.width() {
        return Err(Error::Contract("stored activations do not match the block".into()));
    }
    let mut grads: Vec<Matrix> = (0..c).map(|i| dy.column_block(i * w, w)).collect();
    let mut dmask: Option<Vec<f64>> = None;
    let mut dx = Matrix::zeros(dy.rows(), dy.cols());
    let mut dtail = None;
    for i in (0..c).rev() {
        let (dinput, dm) = gin_backward(&grads[i], &stored.caches[i], &mut p.groups[i], g)?;
        if let Some(dm) = dm {
            let acc = dmask.get_or_insert_with(|| vec![0.0; dm.len()]);
            for (a, d) in acc.iter_mut().zip(dm) {
                *a += d;
            }
        }
        if i > 0 {
            grads[i - 1].add_assign(&dinput)?;
        } else {
            dtail = Some(dinput);
        }
    }
    let dtail = dtail.expect("at least two groups");
    for (i, gi) in grads.iter().enumerate() {
        let mut d = gi.clone();
        if i > 0 {
            d.add_assign(&dtail)?;
        }
        dx.set_column_block(i * w, &d)?;
    }
    Ok((dx, dmask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn random_graph(n: usize, m: usize, rng: &mut RngState) -> Graph {
        let mut edges = Vec::new();
        while edges.len() < m {
            let (a, b) = (rng.below(n), rng.below(n));
            if a != b {
                edges.push((a, b));
            }
        }
        Graph::new(n, edges, Matrix::filled(n, 1, 1.0), vec![0; n]).unwrap()
    }

    fn randm(r: usize, c: usize, rng: &mut RngState) -> Matrix {
        Matrix::new(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    fn zero_block(width: usize, groups: usize) -> RevBlockParams {
        let mut p = RevBlockParams::new(width, groups, &mut RngState::new(1)).unwrap();
        for gp in &mut p.groups {
            gp.lin2_w.value.fill(0.0);
            gp.lin2_b.value.fill(0.0);
        }
        p
    }

    #[test]
    fn zero_functions_are_identity() {
        let mut rng = RngState::new(4);
        let g = random_graph(10, 20, &mut rng);
        let x = randm(10, 8, &mut rng);
        let mut p = zero_block(8, 2);
        let (y, side) = rev_forward(&x, &g, None, &mut p, Mode::Train).unwrap();
        assert_eq!(y, x);
        assert_eq!(rev_inverse(&y, &g, None, &p, &side).unwrap(), x);
    }

    #[test]
    fn constant_first_group() {
        let mut rng = RngState::new(4);
        let g = random_graph(6, 8, &mut rng);
        let x = randm(6, 4, &mut rng);
        let mut p = zero_block(4, 2);
        p.groups[0].lin2_b.value = Matrix::from_rows(&[[0.5, -2.0]]);
        let (y, _) = rev_forward(&x, &g, None, &mut p, Mode::Eval).unwrap();
        for r in 0..6 {
            assert_eq!(y.row(r), &[x.get(r, 0) + 0.5, x.get(r, 1) - 2.0, x.get(r, 2), x.get(r, 3)]);
        }
    }

    #[test]
    fn two_groups_follow_the_coupling_equations() {
        // y₁ = x₁ + G₁(x₂), y₂ = x₂ + G₂(y₁)
        let mut rng = RngState::new(12);
        let g = random_graph(9, 15, &mut rng);
        let x = randm(9, 6, &mut rng);
        let mut p = RevBlockParams::new(6, 2, &mut rng).unwrap();
        let (y, _) = rev_forward(&x, &g, None, &mut p, Mode::Eval).unwrap();
        let x1 = x.column_block(0, 3);
        let x2 = x.column_block(3, 3);
        let (g1, _) = gin_apply(&x2, &g, None, &p.groups[0], NormPass::Running).unwrap();
        let mut y1 = x1.clone();
        y1.add_assign(&g1).unwrap();
        let (g2, _) = gin_apply(&y1, &g, None, &p.groups[1], NormPass::Running).unwrap();
        let mut y2 = x2.clone();
        y2.add_assign(&g2).unwrap();
        assert_eq!(y.column_block(0, 3), y1);
        assert_eq!(y.column_block(3, 3), y2);
    }

    #[test]
    fn round_trip_two_and_four_groups() {
        for (groups, width) in [(2, 8), (4, 16)] {
            let mut rng = RngState::new(groups as u64);
            let g = random_graph(10, 18, &mut rng);
            let x = randm(10, width, &mut rng);
            let mut p = RevBlockParams::new(width, groups, &mut rng).unwrap();
            for mode in [Mode::Train, Mode::Eval] {
                let (y, side) = rev_forward(&x, &g, None, &mut p, mode).unwrap();
                let back = rev_inverse(&y, &g, None, &p, &side).unwrap();
                assert!(back.max_abs_diff(&x) < 1e-9, "C={groups}: {}", back.max_abs_diff(&x));
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let mut rng = RngState::new(6);
        let g = random_graph(8, 12, &mut rng);
        let x = randm(8, 8, &mut rng);
        let mut p = RevBlockParams::new(8, 2, &mut rng).unwrap();
        let (y, side) = rev_forward(&x, &g, None, &mut p, Mode::Train).unwrap();
        let (dx, xin, _) = rev_backward(&Matrix::zeros(8, 8), &y, &g, None, &mut p, &side).unwrap();
        assert_eq!(dx.max_abs(), 0.0);
        assert!(xin.max_abs_diff(&x) < 1e-9);
        for gp in &mut p.groups {
            for q in gp.params_mut() {
                assert_eq!(q.grad.max_abs(), 0.0);
            }
        }
    }

    #[test]
    fn indivisible_width_rejected() {
        assert!(RevBlockParams::new(63, 2, &mut RngState::new(0)).is_err());
        assert!(RevBlockParams::new(8, 1, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn side_cache_is_small_and_checked() {
        let mut rng = RngState::new(6);
        let g = random_graph(30, 60, &mut rng);
        let x = randm(30, 8, &mut rng);
        let mut p = RevBlockParams::new(8, 2, &mut rng).unwrap();
        let (y, side) = rev_forward(&x, &g, None, &mut p, Mode::Train).unwrap();
        assert_eq!(side.retained_reals(), 2 * 2 * 4);
        let smaller = random_graph(29, 60, &mut rng);
        let wrong = y.select_rows(&(0..29).collect::<Vec<_>>());
        assert!(rev_inverse(&wrong, &smaller, None, &p, &side).is_err());
    }
}
