use super::{Matrix, Param};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub fn relu_forward(x: &Matrix) -> (Matrix, Matrix) {
    let mut y = x.clone();
    let mut mask = Matrix::zeros(x.rows(), x.cols());
    for (v, m) in y.data_mut().iter_mut().zip(mask.data_mut()) {
        if *v > 0.0 {
            *m = 1.0;
        } else {
            *v = 0.0;
        }
    }
    (y, mask)
}

pub fn relu_backward(dy: &Matrix, mask: &Matrix) -> Result<Matrix> {
    dy.same_shape(mask, "relu_backward")?;
    let mut dx = dy.clone();
    for (d, m) in dx.data_mut().iter_mut().zip(mask.data()) {
        *d *= m;
    }
    Ok(dx)
}

/// Whether batch norm uses batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-column running mean and (unbiased) variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(cols: usize) -> Self {
        RunningStats {
            mean: vec![0.0; cols],
            var: vec![1.0; cols],
        }
    }

    pub fn zeros(cols: usize) -> Self {
        RunningStats {
            mean: vec![0.0; cols],
            var: vec![0.0; cols],
        }
    }

    /// Adds the batch mean and unbiased variance to the current values.
    pub fn accumulate(&mut self, batch: &BatchStats) {
        let correction = unbiased_correction(batch.rows);
        for c in 0..self.mean.len() {
            self.mean[c] += batch.mean[c];
            self.var[c] += batch.var[c] * correction;
        }
    }

    /// Exponential update with [`BN_MOMENTUM`]. Uses the unbiased batch
    /// variance, except for single-row batches where only the biased (zero)
    /// variance exists.
    pub fn update(&mut self, batch: &BatchStats) {
        let correction = unbiased_correction(batch.rows);
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - BN_MOMENTUM) * self.mean[c] + BN_MOMENTUM * batch.mean[c];
            self.var[c] =
                (1.0 - BN_MOMENTUM) * self.var[c] + BN_MOMENTUM * batch.var[c] * correction;
        }
    }
}

fn unbiased_correction(rows: usize) -> f64 {
    if rows > 1 {
        rows as f64 / (rows as f64 - 1.0)
    } else {
        1.0
    }
}

/// Biased batch mean/variance captured by a train-mode forward.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub rows: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchStats {
    pub fn of(x: &Matrix) -> Self {
        let (n, cols) = x.shape();
        let mut mean = x.col_sums();
        let inv = 1.0 / n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        let mut var = vec![0.0; cols];
        for r in 0..n {
            for ((v, &xv), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                let d = xv - m;
                *v += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v *= inv);
        BatchStats { rows: n, mean, var }
    }
}

/// How a batch-norm forward obtains its normalization statistics.
#[derive(Debug, Clone, Copy)]
pub enum NormPass<'a> {
    /// Fresh batch statistics (train mode).
    Batch,
    /// Previously captured batch statistics, replayed bit-exactly.
    Replay(&'a BatchStats),
    /// Running statistics (eval mode).
    Running,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
    // train-style backward (statistics depend on the input)
    batch: bool,
    /// Statistics used by the forward; `None` in eval mode.
    pub stats: Option<BatchStats>,
}

/// Normalizes per column, then applies `gamma`/`beta`. Pure: running
/// statistics are only read (eval) and never updated here.
pub fn batchnorm_apply(
    x: &Matrix,
    gamma: &Param,
    beta: &Param,
    pass: NormPass<'_>,
    running: &RunningStats,
) -> Result<(Matrix, BnCache)> {
    let cols = x.cols();
    if gamma.shape() != (1, cols) || beta.shape() != (1, cols) || running.mean.len() != cols {
        return Err(Error::shape("batchnorm", x.shape(), gamma.shape()));
    }
    let (mean, var, stats) = match pass {
        NormPass::Batch => {
            let s = BatchStats::of(x);
            (s.mean.clone(), s.var.clone(), Some(s))
        }
        NormPass::Replay(s) => {
            if s.mean.len() != cols || s.rows != x.rows() {
                return Err(Error::Contract(format!(
                    "replayed batch statistics cover {}x{}, input is {}x{}",
                    s.rows,
                    s.mean.len(),
                    x.rows(),
                    cols
                )));
            }
            (s.mean.clone(), s.var.clone(), Some(s.clone()))
        }
        NormPass::Running => (running.mean.clone(), running.var.clone(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let g = gamma.value.data();
    let b = beta.value.data();
    let mut xhat = x.clone();
    let mut y = Matrix::zeros(x.rows(), cols);
    for r in 0..x.rows() {
        let xr = xhat.row_mut(r);
        for c in 0..cols {
            xr[c] = (xr[c] - mean[c]) * inv_std[c];
        }
        let yr = y.row_mut(r);
        for c in 0..cols {
            yr[c] = g[c] * xr[c] + b[c];
        }
    }
    let batch = stats.is_some();
    Ok((
        y,
        BnCache {
            xhat,
            inv_std,
            batch,
            stats,
        },
    ))
}

/// Train mode normalizes with batch statistics and folds them into
/// `running` (momentum 0.1); eval mode uses `running` as is.
pub fn batchnorm_forward(
    x: &Matrix,
    gamma: &Param,
    beta: &Param,
    mode: Mode,
    running: &mut RunningStats,
) -> Result<(Matrix, BnCache)> {
    let pass = match mode {
        Mode::Train => NormPass::Batch,
        Mode::Eval => NormPass::Running,
    };
    let (y, cache) = batchnorm_apply(x, gamma, beta, pass, running)?;
    if let Some(stats) = &cache.stats {
        running.update(stats);
    }
    Ok((y, cache))
}

/// Returns `dx`; accumulates into `gamma.grad` and `beta.grad`.
pub fn batchnorm_backward(
    dy: &Matrix,
    cache: &BnCache,
    gamma: &mut Param,
    beta: &mut Param,
) -> Result<Matrix> {
    dy.same_shape(&cache.xhat, "batchnorm_backward")?;
    let (n, cols) = dy.shape();
    let mut dgamma = vec![0.0; cols];
    let mut dbeta = vec![0.0; cols];
    for r in 0..n {
        for ((c, &d), &xh) in dy.row(r).iter().enumerate().zip(cache.xhat.row(r)) {
            dgamma[c] += d * xh;
            dbeta[c] += d;
        }
    }
    gamma.accumulate_row(&dgamma);
    beta.accumulate_row(&dbeta);

    let g = gamma.value.data();
    let mut dx = Matrix::zeros(n, cols);
    if cache.batch {
        // dx = inv_std/N · (N·dxhat − Σdxhat − xhat·Σ(dxhat·xhat)), dxhat = dy·gamma
        let nf = n as f64;
        let sum_dxhat: Vec<f64> = dbeta.iter().zip(g).map(|(d, g)| d * g).collect();
        let sum_dxhat_xhat: Vec<f64> = dgamma.iter().zip(g).map(|(d, g)| d * g).collect();
        for r in 0..n {
            let dyr = dy.row(r);
            let xr = cache.xhat.row(r);
            let out = dx.row_mut(r);
            for c in 0..cols {
                let dxhat = dyr[c] * g[c];
                out[c] = cache.inv_std[c] / nf
                    * (nf * dxhat - sum_dxhat[c] - xr[c] * sum_dxhat_xhat[c]);
            }
        }
    } else {
        for r in 0..n {
            let dyr = dy.row(r);
            let out = dx.row_mut(r);
            for c in 0..cols {
                out[c] = dyr[c] * g[c] * cache.inv_std[c];
            }
        }
    }
    Ok(dx)
}

/// Class-weighted two-class softmax cross-entropy, averaged over rows.
///
/// `loss = (1/n) Σᵢ w[yᵢ] · −log softmax(logitsᵢ)[yᵢ]`; returns the loss and
/// its exact gradient with respect to the logits.
pub fn weighted_softmax_xent(
    logits: &Matrix,
    labels: &[u8],
    class_weights: (f64, f64),
) -> Result<(f64, Matrix)> {
    if labels.is_empty() {
        return Err(Error::Contract("cross-entropy over an empty label set".into()));
    }
    if logits.cols() != 2 || logits.rows() != labels.len() {
        return Err(Error::shape("weighted_softmax_xent", logits.shape(), (labels.len(), 2)));
    }
    if !(class_weights.0 > 0.0 && class_weights.1 > 0.0) {
        return Err(Error::Contract(format!(
            "class weights must be strictly positive, got {class_weights:?}"
        )));
    }
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut d = Matrix::zeros(logits.rows(), 2);
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let w = if y == 1 { class_weights.1 } else { class_weights.0 };
        let (p0, p1, lse) = softmax2(row[0], row[1]);
        loss += w * (lse - row[y as usize]);
        let out = d.row_mut(i);
        out[0] = w * (p0 - if y == 0 { 1.0 } else { 0.0 }) / n;
        out[1] = w * (p1 - if y == 1 { 1.0 } else { 0.0 }) / n;
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok((loss, d))
}

/// Stable two-way softmax; returns `(p0, p1, logsumexp)`.
pub fn softmax2(a: f64, b: f64) -> (f64, f64, f64) {
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let s = ea + eb;
    (ea / s, eb / s, m + s.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, RngState};

    fn random(rows: usize, cols: usize, rng: &mut RngState) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.max_abs_diff(b) / b.max_abs().max(1e-12)
    }

    #[test]
    fn relu_cases() {
        let (y, _) = relu_forward(&Matrix::from_rows(&[[-1.0, 0.0, 2.0]]));
        assert_eq!(y, Matrix::from_rows(&[[0.0, 0.0, 2.0]]));
        let x = Matrix::from_rows(&[[0.5, 3.0], [1.0, 2.0]]);
        assert_eq!(relu_forward(&x).0, x);
    }

    #[test]
    fn relu_backward_matches_finite_differences() {
        let mut rng = RngState::new(11);
        let x = random(4, 5, &mut rng);
        let w = random(4, 5, &mut rng);
        let loss = |m: &Matrix| {
            let (y, _) = relu_forward(m);
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, mask) = relu_forward(&x);
        let analytic = relu_backward(&w, &mask).unwrap();
        let numeric = finite_difference_gradient(loss, &x, 1e-6).unwrap();
        assert!(rel_err(&analytic, &numeric) < 1e-6);
        for (a, xv) in analytic.data().iter().zip(x.data()) {
            if *xv <= 0.0 {
                assert_eq!(*a, 0.0);
            }
        }
    }

    #[test]
    fn batchnorm_standard_column_unchanged() {
        let x = Matrix::from_rows(&[[-1.0], [1.0], [-1.0], [1.0]]);
        let gamma = Param::new(Matrix::filled(1, 1, 1.0));
        let beta = Param::zeros(1, 1);
        let mut rs = RunningStats::new(1);
        let (y, _) = batchnorm_forward(&x, &gamma, &beta, Mode::Train, &mut rs).unwrap();
        let scale = 1.0 / (1.0 + BN_EPS).sqrt();
        for r in 0..4 {
            assert!((y.get(r, 0) - x.get(r, 0) * scale).abs() < 1e-15);
        }
        // running stats moved by momentum toward batch mean 0, unbiased var 4/3
        assert!((rs.var[0] - (0.9 + 0.1 * 4.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_constant_column_gives_beta() {
        let x = Matrix::filled(5, 2, 3.25);
        let gamma = Param::new(Matrix::filled(1, 2, 2.0));
        let beta = Param::new(Matrix::from_rows(&[[0.5, -1.0]]));
        let mut rs = RunningStats::new(2);
        let (y, _) = batchnorm_forward(&x, &gamma, &beta, Mode::Train, &mut rs).unwrap();
        for r in 0..5 {
            assert_eq!(y.row(r), &[0.5, -1.0]);
        }
    }

    #[test]
    fn batchnorm_single_row_is_degenerate_but_finite() {
        let x = Matrix::from_rows(&[[4.0, -2.0]]);
        let gamma = Param::new(Matrix::filled(1, 2, 1.0));
        let beta = Param::zeros(1, 2);
        let mut rs = RunningStats::new(2);
        let (y, _) = batchnorm_forward(&x, &gamma, &beta, Mode::Train, &mut rs).unwrap();
        assert_eq!(y, Matrix::zeros(1, 2));
        assert!(rs.var.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn batchnorm_replay_is_bit_exact_and_does_not_touch_running() {
        let mut rng = RngState::new(5);
        let x = random(7, 3, &mut rng);
        let gamma = Param::new(random(1, 3, &mut rng));
        let beta = Param::new(random(1, 3, &mut rng));
        let mut rs = RunningStats::new(3);
        let (y, cache) = batchnorm_forward(&x, &gamma, &beta, Mode::Train, &mut rs).unwrap();
        let snapshot = rs.clone();
        let stats = cache.stats.clone().unwrap();
        let (y2, _) =
            batchnorm_apply(&x, &gamma, &beta, NormPass::Replay(&stats), &rs).unwrap();
        assert_eq!(y, y2);
        assert_eq!(rs, snapshot);
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut rng = RngState::new(21);
        let x = random(6, 4, &mut rng);
        let w = random(6, 4, &mut rng);
        let gamma0 = random(1, 4, &mut rng);
        let beta0 = random(1, 4, &mut rng);
        let objective = |x: &Matrix, g: &Matrix, b: &Matrix| {
            let mut rs = RunningStats::new(4);
            let (y, _) = batchnorm_forward(
                x,
                &Param::new(g.clone()),
                &Param::new(b.clone()),
                Mode::Train,
                &mut rs,
            )
            .unwrap();
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut gamma = Param::new(gamma0.clone());
        let mut beta = Param::new(beta0.clone());
        let mut rs = RunningStats::new(4);
        let (_, cache) = batchnorm_forward(&x, &gamma, &beta, Mode::Train, &mut rs).unwrap();
        let dx = batchnorm_backward(&w, &cache, &mut gamma, &mut beta).unwrap();

        let nx = finite_difference_gradient(|m| objective(m, &gamma0, &beta0), &x, 1e-5).unwrap();
        let ng = finite_difference_gradient(|m| objective(&x, m, &beta0), &gamma0, 1e-5).unwrap();
        let nb = finite_difference_gradient(|m| objective(&x, &gamma0, m), &beta0, 1e-5).unwrap();
        assert!(rel_err(&dx, &nx) < 1e-5, "dx {}", rel_err(&dx, &nx));
        assert!(rel_err(&gamma.grad, &ng) < 1e-5);
        assert!(rel_err(&beta.grad, &nb) < 1e-5);
    }

    #[test]
    fn batchnorm_eval_backward_matches_finite_differences() {
        let mut rng = RngState::new(8);
        let x = random(5, 3, &mut rng);
        let w = random(5, 3, &mut rng);
        let mut gamma = Param::new(random(1, 3, &mut rng));
        let mut beta = Param::new(random(1, 3, &mut rng));
        let running = RunningStats {
            mean: vec![0.1, -0.2, 0.3],
            var: vec![0.5, 2.0, 1.5],
        };
        let f = |m: &Matrix| {
            let (y, _) = batchnorm_apply(m, &gamma, &beta, NormPass::Running, &running).unwrap();
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let numeric = finite_difference_gradient(f, &x, 1e-5).unwrap();
        let (_, cache) = batchnorm_apply(&x, &gamma, &beta, NormPass::Running, &running).unwrap();
        let dx = batchnorm_backward(&w, &cache, &mut gamma, &mut beta).unwrap();
        assert!(rel_err(&dx, &numeric) < 1e-7);
    }

    #[test]
    fn xent_confident_and_uniform() {
        let (l, _) =
            weighted_softmax_xent(&Matrix::from_rows(&[[10.0, -10.0]]), &[0], (1.0, 1.0)).unwrap();
        assert!(l < 1e-8);
        let (l, _) =
            weighted_softmax_xent(&Matrix::from_rows(&[[0.0, 0.0]]), &[1], (1.0, 1.0)).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn xent_gradient_matches_finite_differences() {
        let mut rng = RngState::new(2);
        let logits = random(5, 2, &mut rng);
        let labels = [0u8, 1, 0, 0, 1];
        let (_, d) = weighted_softmax_xent(&logits, &labels, (1.0, 40.0)).unwrap();
        let numeric = finite_difference_gradient(
            |m| weighted_softmax_xent(m, &labels, (1.0, 40.0)).unwrap().0,
            &logits,
            1e-6,
        )
        .unwrap();
        for (a, b) in d.data().iter().zip(numeric.data()) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()) + 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn xent_errors() {
        assert!(weighted_softmax_xent(&Matrix::zeros(0, 2), &[], (1.0, 1.0)).is_err());
        assert!(weighted_softmax_xent(&Matrix::zeros(1, 2), &[0], (0.0, 1.0)).is_err());
    }
}
