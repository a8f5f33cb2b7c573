use super::Matrix;

/// Trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
    pub m: Matrix,
    pub v: Matrix,
    pub step: u64,
}

impl Param {
    pub fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Param {
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            step: 0,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Matrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Adds `delta` into the gradient row-vector-wise; `delta` must match the shape.
    pub fn accumulate(&mut self, delta: &Matrix) -> crate::Result<()> {
        self.grad.add_assign(delta)
    }

    pub fn accumulate_row(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.grad.data().len());
        for (g, d) in self.grad.data_mut().iter_mut().zip(delta) {
            *g += d;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update. Increments `step` and zeroes the gradient.
pub fn adam_step(p: &mut Param, lr: f64, hyper: AdamHyper) {
    p.step += 1;
    let t = p.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let value = p.value.data_mut();
    let grad = p.grad.data_mut();
    let m = p.m.data_mut();
    let v = p.v.data_mut();
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        value[i] -= lr * mhat / (vhat.sqrt() + hyper.eps);
        grad[i] = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = Param::new(Matrix::from_rows(&[[1.5, -2.0]]));
        adam_step(&mut p, 0.1, AdamHyper::default());
        assert_eq!(p.value, Matrix::from_rows(&[[1.5, -2.0]]));
        assert_eq!(p.step, 1);
    }

    #[test]
    fn first_step_matches_scalar_hand_computation() {
        let g = 0.3;
        let lr = 0.001;
        let h = AdamHyper::default();
        let mut p = Param::new(Matrix::from_rows(&[[0.0]]));
        p.grad.set(0, 0, g);
        adam_step(&mut p, lr, h);
        // m = 0.1 g, v = 0.001 g²; corrected: mhat = g, vhat = g²
        let m = (1.0 - h.beta1) * g;
        let v = (1.0 - h.beta2) * g * g;
        let expected = -lr * (m / (1.0 - h.beta1)) / ((v / (1.0 - h.beta2)).sqrt() + h.eps);
        assert_eq!(p.value.get(0, 0), expected);
        // same quantity written as in the closed form -lr·g/(|g| + eps·√(1-β2))·√(1-β2)/√(1-β2)
        assert!((p.value.get(0, 0) + lr * g / (g.abs() + h.eps)).abs() < 1e-15);
        assert_eq!(p.grad.get(0, 0), 0.0);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let lr = 0.01;
        let mut p = Param::new(Matrix::from_rows(&[[0.0, 0.0]]));
        let mut last = [0.0; 2];
        for _ in 0..2000 {
            let before = [p.value.get(0, 0), p.value.get(0, 1)];
            p.grad.set(0, 0, 2.5);
            p.grad.set(0, 1, -0.004);
            adam_step(&mut p, lr, AdamHyper::default());
            last = [p.value.get(0, 0) - before[0], p.value.get(0, 1) - before[1]];
        }
        assert!((last[0] + lr).abs() < 1e-8, "{last:?}");
        assert!((last[1] - lr).abs() < 1e-6, "{last:?}");
    }
}
