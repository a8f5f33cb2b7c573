use std::time::{Duration, Instant};

use super::{threshold_logits, ClassWeight, XgBotModel};
use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};
use crate::metrics::{confusion, Confusion};
use crate::numerics::{weighted_softmax_xent, Mode, RngState};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean training loss over the epoch's graphs.
    pub train_loss: f64,
    /// Pooled validation confusion at the configured threshold.
    pub val: Confusion,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, if any epoch ran.
    pub best_epoch: Option<usize>,
    pub wall_time: Duration,
}

// wall time is excluded: identical runs must compare equal
impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs && self.best_epoch == other.best_epoch
    }
}

impl TrainReport {
    pub const CSV_HEADER: &'static str =
        "epoch,train_loss,val_tp,val_fp,val_tn,val_fn,val_recall,val_precision,val_f1,val_far,best";

    pub fn to_csv(&self) -> String {
        use crate::metrics::fmt_metric;
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let v = &r.val;
            out.push_str(&format!(
                "{},{:.17e},{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.train_loss,
                v.tp,
                v.fp,
                v.tn,
                v.fn_,
                fmt_metric(v.recall()),
                fmt_metric(v.precision()),
                fmt_metric(v.f1()),
                fmt_metric(v.far()),
                u8::from(self.best_epoch == Some(r.epoch))
            ));
        }
        out
    }
}

/// `(negative, positive)` loss weights for one graph.
pub fn class_weights(mode: ClassWeight, g: &Graph, name: &str) -> Result<(f64, f64)> {
    match mode {
        ClassWeight::Fixed(w) => Ok((1.0, w)),
        ClassWeight::Auto => {
            let pos = g.num_positive();
            if pos == 0 {
                return Err(Error::Contract(format!(
                    "{name} has no positive nodes; automatic class weights are undefined"
                )));
            }
            Ok((1.0, (g.num_nodes() - pos) as f64 / pos as f64))
        }
    }
}

/// Pooled confusion over `graphs` with eval-mode batch norm.
pub fn evaluate(model: &XgBotModel, graphs: &[Graph], threshold: f64) -> Result<Confusion> {
    let mut total = Confusion::default();
    for g in graphs {
        let logits = model.logits(g, None)?;
        let (preds, _) = threshold_logits(&logits, threshold);
        total += confusion(&preds, g.labels())?;
    }
    Ok(total)
}

impl XgBotModel {
    /// One full-graph optimization step. Returns the loss before the update.
    pub fn train_step(&mut self, g: &Graph, weights: (f64, f64)) -> Result<f64> {
        let loss = self.loss_and_grad(g, weights)?;
        self.adam_step(self.config.lr);
        Ok(loss)
    }

    /// Forward in train mode and backward; gradients accumulate, no update.
    pub fn loss_and_grad(&mut self, g: &Graph, weights: (f64, f64)) -> Result<f64> {
        Ok(self.loss_and_grad_masked(g, None, weights, Mode::Train)?.0)
    }

    /// Weighted cross-entropy over all nodes under an optional edge mask.
    /// Parameter gradients accumulate; the mask gradient is returned when a
    /// mask is given.
    pub fn loss_and_grad_masked(
        &mut self,
        g: &Graph,
        edge_mask: Option<&[f64]>,
        weights: (f64, f64),
        mode: Mode,
    ) -> Result<(f64, Option<Vec<f64>>)> {
        let state = self.forward_hidden(g, g.features(), edge_mask, mode)?;
        let logits = self.head(&state.hidden)?;
        let (loss, dlogits) = weighted_softmax_xent(&logits, g.labels(), weights)?;
        drop(logits);
        let mut dmask = edge_mask.map(|m| vec![0.0; m.len()]);
        self.backward(g, g.features(), edge_mask, state, &dlogits, dmask.as_deref_mut())?;
        Ok((loss, dmask))
    }
}

/// Trains with Adam, one step per training graph in a seeded shuffled order
/// each epoch. After every epoch the normalization statistics are
/// recomputed over the training split and the validation split is scored;
/// the parameters of the best-F1 epoch are restored at the end.
pub fn train(
    model: &mut XgBotModel,
    dataset: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if dataset.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let start = Instant::now();
    let cfg = model.config.clone();
    let weights = dataset
        .train
        .iter()
        .enumerate()
        .map(|(i, g)| class_weights(cfg.class_weight, g, &format!("train graph {i}")))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, XgBotModel)> = None;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        RngState::derive(cfg.seed, &[0x5417, epoch as u64]).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for &i in &order {
            loss_sum += model.train_step(&dataset.train[i], weights[i])?;
        }
        // a handful of steps per epoch is too few for momentum statistics to
        // track the weights through dozens of stacked normalizations
        model.recalibrate_norms(&dataset.train)?;
        let val = evaluate(model, &dataset.val, cfg.eval_threshold)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val,
        };
        on_epoch(&record);
        // undefined F1 ranks below every defined value; an empty validation
        // split keeps the latest epoch
        let score = if dataset.val.is_empty() {
            epoch as f64
        } else {
            val.f1().unwrap_or(-1.0)
        };
        if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
            best = Some((score, epoch, model.clone()));
        }
        records.push(record);
    }
    let best_epoch = best.map(|(_, epoch, snapshot)| {
        *model = snapshot;
        epoch
    });
    Ok(TrainReport {
        epochs: records,
        best_epoch,
        wall_time: start.elapsed(),
    })
}
