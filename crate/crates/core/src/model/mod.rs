//! Full detector: linear input encoder, a stack of reversible GIN blocks and a
//! linear two-class head.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, parse_checkpoint, save_checkpoint, write_checkpoint, CKPT_MAGIC};
pub use train::{class_weights, evaluate, train, EpochRecord, TrainReport};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gin::glorot;
use crate::graph::Graph;
use crate::numerics::{
    adam_step, matmul, matmul_nt, matmul_tn, softmax2, AdamHyper, Matrix, Mode, Param, RngState,
    RunningStats,
};
use crate::revblock::{
    check_split, rev_backward_in_place, rev_forward_in_place, BlockSideCache, GroupReplay,
    RevBlockParams,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassWeight {
    /// Per graph: negatives get 1, positives get #neg / #pos.
    Auto,
    /// Negatives get 1, positives get the given weight.
    Fixed(f64),
}

impl fmt::Display for ClassWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassWeight::Auto => f.write_str("auto"),
            ClassWeight::Fixed(w) => write!(f, "{w}"),
        }
    }
}

impl FromStr for ClassWeight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(ClassWeight::Auto);
        }
        match s.parse::<f64>() {
            Ok(w) if w > 0.0 && w.is_finite() => Ok(ClassWeight::Fixed(w)),
            _ => Err(Error::Config(format!(
                "class weight must be `auto` or a positive number, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XgBotConfig {
    pub blocks: usize,
    pub groups: usize,
    pub channels: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub class_weight: ClassWeight,
    pub eval_threshold: f64,
    pub feature_dim: usize,
}

impl Default for XgBotConfig {
    fn default() -> Self {
        XgBotConfig {
            blocks: 24,
            groups: 2,
            channels: 64,
            lr: 0.001,
            epochs: 30,
            seed: 0,
            class_weight: ClassWeight::Auto,
            eval_threshold: 0.5,
            feature_dim: 1,
        }
    }
}

impl XgBotConfig {
    pub fn validate(&self) -> Result<()> {
        check_split(self.channels, self.groups)?;
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be a finite non-negative number, got {}", self.lr)));
        }
        if !self.eval_threshold.is_finite() {
            return Err(Error::Config("eval_threshold must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XgBotModel {
    pub config: XgBotConfig,
    pub encoder_w: Param,
    pub encoder_b: Param,
    pub blocks: Vec<RevBlockParams>,
    pub head_w: Param,
    pub head_b: Param,
}

/// Glorot weights, zero biases, unit batch-norm scales. Deterministic in `rng`.
pub fn init_model(cfg: &XgBotConfig, rng: &mut RngState) -> Result<XgBotModel> {
    cfg.validate()?;
    let d = cfg.channels;
    let encoder_w = Param::new(glorot(cfg.feature_dim, d, rng));
    let blocks = (0..cfg.blocks)
        .map(|_| RevBlockParams::new(d, cfg.groups, rng))
        .collect::<Result<Vec<_>>>()?;
    let head_w = Param::new(glorot(d, 2, rng));
    Ok(XgBotModel {
        config: cfg.clone(),
        encoder_w,
        encoder_b: Param::zeros(1, d),
        blocks,
        head_w,
        head_b: Param::zeros(1, 2),
    })
}

/// Hidden state after the last block plus what backward needs.
pub(crate) struct ForwardState {
    pub hidden: Matrix,
    pub sides: Vec<BlockSideCache>,
}

impl XgBotModel {
    /// Initializes from `config.seed`.
    pub fn from_seed(cfg: &XgBotConfig) -> Result<Self> {
        init_model(cfg, &mut RngState::derive(cfg.seed, &[0x1417]))
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder_w.shape().0
    }

    /// Every trainable tensor in checkpoint order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.encoder_w, &mut self.encoder_b];
        for block in &mut self.blocks {
            for g in &mut block.groups {
                out.extend(g.params_mut());
            }
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn num_parameters(&self) -> usize {
        let mut total = self.encoder_w.value.data().len() + self.encoder_b.value.data().len();
        for block in &self.blocks {
            for g in &block.groups {
                total += g.named_params().iter().map(|(_, p)| p.value.data().len()).sum::<usize>();
            }
        }
        total + self.head_w.value.data().len() + self.head_b.value.data().len()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_graph(&self, g: &Graph) -> Result<()> {
        if g.feature_dim() != self.feature_dim() {
            return Err(Error::Config(format!(
                "graph has {} feature columns but the model expects {}",
                g.feature_dim(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_hidden(
        &mut self,
        g: &Graph,
        features: &Matrix,
        edge_mask: Option<&[f64]>,
        mode: Mode,
    ) -> Result<ForwardState> {
        self.check_graph(g)?;
        let mut hidden = matmul(features, &self.encoder_w.value)?;
        hidden.add_row_broadcast(self.encoder_b.value.data())?;
        let mut sides = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            sides.push(rev_forward_in_place(&mut hidden, g, edge_mask, block, mode)?);
        }
        Ok(ForwardState { hidden, sides })
    }

    pub(crate) fn head(&self, hidden: &Matrix) -> Result<Matrix> {
        let mut logits = matmul(hidden, &self.head_w.value)?;
        logits.add_row_broadcast(self.head_b.value.data())?;
        Ok(logits)
    }

    /// Backpropagates `dlogits` through the head, every block (rebuilding
    /// activations by inversion) and the encoder. Consumes the forward state
    /// and returns the gradient with respect to the input features.
    pub(crate) fn backward(
        &mut self,
        g: &Graph,
        features: &Matrix,
        edge_mask: Option<&[f64]>,
        state: ForwardState,
        dlogits: &Matrix,
        mut dmask: Option<&mut [f64]>,
    ) -> Result<Matrix> {
        let ForwardState { mut hidden, sides } = state;
        self.head_w.accumulate(&matmul_tn(&hidden, dlogits)?)?;
        self.head_b.accumulate_row(&dlogits.col_sums());
        let mut dhidden = matmul_nt(dlogits, &self.head_w.value)?;
        for (block, side) in self.blocks.iter_mut().zip(&sides).rev() {
            rev_backward_in_place(
                &mut hidden,
                &mut dhidden,
                g,
                edge_mask,
                block,
                side,
                dmask.as_deref_mut(),
            )?;
        }
        drop(hidden);
        self.encoder_w.accumulate(&matmul_tn(features, &dhidden)?)?;
        self.encoder_b.accumulate_row(&dhidden.col_sums());
        matmul_nt(&dhidden, &self.encoder_w.value)
    }

    /// Logits for every node. Train mode updates batch-norm running statistics.
    pub fn forward_full(
        &mut self,
        g: &Graph,
        edge_mask: Option<&[f64]>,
        mode: Mode,
    ) -> Result<Matrix> {
        let state = self.forward_hidden(g, g.features(), edge_mask, mode)?;
        self.head(&state.hidden)
    }

    /// Eval-mode logits; does not modify the model.
    pub fn logits(&self, g: &Graph, edge_mask: Option<&[f64]>) -> Result<Matrix> {
        self.logits_with_features(g, g.features(), edge_mask)
    }

    pub(crate) fn logits_with_features(
        &self,
        g: &Graph,
        features: &Matrix,
        edge_mask: Option<&[f64]>,
    ) -> Result<Matrix> {
        self.check_graph(g)?;
        let mut hidden = matmul(features, &self.encoder_w.value)?;
        hidden.add_row_broadcast(self.encoder_b.value.data())?;
        for block in &self.blocks {
            eval_block(&mut hidden, g, edge_mask, block)?;
        }
        self.head(&hidden)
    }

    /// Replaces every batch-norm running statistic with the plain average of
    /// the batch statistics produced by `graphs` under the current
    /// parameters. Variances are averaged after the unbiased correction.
    pub fn recalibrate_norms(&mut self, graphs: &[Graph]) -> Result<()> {
        if graphs.is_empty() {
            return Ok(());
        }
        let mut sums: Vec<Vec<RunningStats>> = self
            .blocks
            .iter()
            .map(|b| b.groups.iter().map(|g| RunningStats::zeros(g.hidden_dim())).collect())
            .collect();
        for g in graphs {
            let state = self.forward_hidden(g, g.features(), None, Mode::Train)?;
            for (side, acc) in state.sides.iter().zip(&mut sums) {
                for (replay, a) in side.groups().iter().zip(acc.iter_mut()) {
                    if let GroupReplay::Batch(stats) = replay {
                        a.accumulate(stats);
                    }
                }
            }
        }
        let k = graphs.len() as f64;
        for (block, acc) in self.blocks.iter_mut().zip(sums) {
            for (group, mut a) in block.groups.iter_mut().zip(acc) {
                a.mean.iter_mut().chain(a.var.iter_mut()).for_each(|v| *v /= k);
                group.running = a;
            }
        }
        Ok(())
    }

    /// Applies one Adam step to every parameter and clears gradients.
    pub fn adam_step(&mut self, lr: f64) {
        for p in self.params_mut() {
            adam_step(p, lr, AdamHyper::default());
        }
    }
}

fn eval_block(
    x: &mut Matrix,
    g: &Graph,
    edge_mask: Option<&[f64]>,
    block: &RevBlockParams,
) -> Result<()> {
    use crate::gin::gin_apply;
    use crate::numerics::NormPass;
    let (c, w) = (block.num_groups(), block.group_width());
    let mut prev = x.column_block(w, w);
    for i in 2..c {
        prev.add_assign(&x.column_block(i * w, w))?;
    }
    for (i, group) in block.groups.iter().enumerate() {
        let (mut out, _) = gin_apply(&prev, g, edge_mask, group, NormPass::Running)?;
        out.add_assign(&x.column_block(i * w, w))?;
        x.set_column_block(i * w, &out)?;
        prev = out;
    }
    Ok(())
}

/// Softmax botnet probability per node and the thresholded labels.
pub fn predict(model: &XgBotModel, g: &Graph, threshold: f64) -> Result<(Vec<u8>, Vec<f64>)> {
    let logits = model.logits(g, None)?;
    Ok(threshold_logits(&logits, threshold))
}

pub fn threshold_logits(logits: &Matrix, threshold: f64) -> (Vec<u8>, Vec<f64>) {
    let probs: Vec<f64> = (0..logits.rows())
        .map(|i| softmax2(logits.get(i, 0), logits.get(i, 1)).1)
        .collect();
    let labels = probs.iter().map(|&p| u8::from(p >= threshold)).collect();
    (labels, probs)
}
