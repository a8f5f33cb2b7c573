//! Edge-mask explanations for single-node predictions.
//!
//! A per-edge logit `m_e` is learned on the k-hop neighborhood of the target
//! so that the masked graph keeps the model's decision while the mask stays
//! small and close to binary:
//!
//! `L(m) = −log p(ŷ | σ(m)) + λ_size·Σ σ(m_e) + λ_ent·Σ H_b(σ(m_e))`
//!
//! The model runs in eval mode throughout; only the mask is optimized.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{khop_subgraph, Graph};
use crate::model::{threshold_logits, XgBotModel};
use crate::numerics::{adam_step, softmax2, AdamHyper, Matrix, Mode, Param};

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainConfig {
    pub khop: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lambda_size: f64,
    pub lambda_entropy: f64,
    pub seed: u64,
    /// Also learn a mask over feature columns.
    pub feature_mask: bool,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            khop: 3,
            epochs: 100,
            lr: 0.01,
            lambda_size: 0.005,
            lambda_entropy: 1.0,
            seed: 0,
            feature_mask: false,
        }
    }
}

impl ExplainConfig {
    /// `khop = 0` is allowed and yields a single-node explanation.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_size", self.lambda_size), ("lambda_entropy", self.lambda_entropy)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("explainer lr must be finite and >= 0, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainedEdge {
    pub u: usize,
    pub v: usize,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub target: usize,
    /// Class predicted on the full graph and its probability.
    pub predicted: u8,
    pub probability: f64,
    /// Subgraph edges in original ids, most important first.
    pub edges: Vec<ExplainedEdge>,
    /// Probability of `predicted` on the subgraph under the final mask.
    pub masked_probability: f64,
    /// Subgraph nodes (original id, label), ascending by id.
    pub nodes: Vec<(usize, u8)>,
    /// Objective value before each update.
    pub objective: Vec<f64>,
    pub feature_importance: Option<Vec<f64>>,
    /// Set when the target has no edges within `khop`.
    pub isolated: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn binary_entropy(s: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    term(s) + term(1.0 - s)
}

/// Size and entropy penalty over a set of mask logits, and its gradient.
fn regularizer(logits: &[f64], cfg: &ExplainConfig, grad: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for (&m, gr) in logits.iter().zip(grad.iter_mut()) {
        let s = sigmoid(m);
        let ds = s * (1.0 - s);
        total += cfg.lambda_size * s + cfg.lambda_entropy * binary_entropy(s);
        // dH_b/dm = ln((1-s)/s)·s(1-s) = -m·s(1-s)
        *gr += cfg.lambda_size * ds - cfg.lambda_entropy * m * ds;
    }
    total
}

/// Features scaled column-wise by `σ(feature logits)`.
fn masked_features(x: &Matrix, logits: Option<&[f64]>) -> Matrix {
    let mut out = x.clone();
    if let Some(f) = logits {
        let s: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
        for r in 0..out.rows() {
            for (o, k) in out.row_mut(r).iter_mut().zip(&s) {
                *o *= k;
            }
        }
    }
    out
}

/// Objective and gradients for one mask setting.
///
/// `work` must be an eval-mode copy of the model; its parameter gradients are
/// scratch space.
pub(crate) struct Objective<'a> {
    pub work: XgBotModel,
    pub graph: &'a Graph,
    pub center: usize,
    pub class: u8,
    pub cfg: &'a ExplainConfig,
}

impl Objective<'_> {
    /// Returns `(L, dL/dedge_logits, dL/dfeature_logits)`.
    pub fn eval(
        &mut self,
        edge_logits: &[f64],
        feature_logits: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
        let mask: Vec<f64> = edge_logits.iter().map(|&m| sigmoid(m)).collect();
        let features = masked_features(self.graph.features(), feature_logits);
        let (loss, dmask, dfeat) = self.fidelity(&mask, &features)?;

        let mut dedge = vec![0.0; edge_logits.len()];
        for ((d, &dm), &s) in dedge.iter_mut().zip(&dmask).zip(&mask) {
            *d = dm * s * (1.0 - s);
        }
        let mut total = loss + regularizer(edge_logits, self.cfg, &mut dedge);

        let dfeature = match feature_logits {
            Some(f) => {
                let x = self.graph.features();
                let mut grad = vec![0.0; f.len()];
                for r in 0..x.rows() {
                    for (k, gk) in grad.iter_mut().enumerate() {
                        *gk += dfeat.get(r, k) * x.get(r, k);
                    }
                }
                for (gk, &v) in grad.iter_mut().zip(f) {
                    let s = sigmoid(v);
                    *gk *= s * (1.0 - s);
                }
                total += regularizer(f, self.cfg, &mut grad);
                Some(grad)
            }
            None => None,
        };
        Ok((total, dedge, dfeature))
    }

    /// `−log p(class)` at the center and its gradients w.r.t. mask and features.
    fn fidelity(&mut self, mask: &[f64], features: &Matrix) -> Result<(f64, Vec<f64>, Matrix)> {
        let g = self.graph;
        let state = self.work.forward_hidden(g, features, Some(mask), Mode::Eval)?;
        let logits = self.work.head(&state.hidden)?;
        let (a, b) = (logits.get(self.center, 0), logits.get(self.center, 1));
        let (p0, p1, lse) = softmax2(a, b);
        let chosen = if self.class == 1 { b } else { a };
        let loss = lse - chosen;
        let mut dlogits = Matrix::zeros(logits.rows(), 2);
        drop(logits);
        dlogits.set(self.center, 0, p0 - f64::from(self.class == 0));
        dlogits.set(self.center, 1, p1 - f64::from(self.class == 1));
        let mut dmask = vec![0.0; mask.len()];
        let dfeat = self.work.backward(g, features, Some(mask), state, &dlogits, Some(&mut dmask))?;
        self.work.zero_grad();
        Ok((loss, dmask, dfeat))
    }

    /// Probability of the explained class under a given mask.
    pub fn probability(&self, mask: &[f64], features: &Matrix) -> Result<f64> {
        let logits = self.work.logits_with_features(self.graph, features, Some(mask))?;
        let (p0, p1, _) = softmax2(logits.get(self.center, 0), logits.get(self.center, 1));
        Ok(if self.class == 1 { p1 } else { p0 })
    }
}

/// Learns an edge mask explaining the model's full-graph decision for `node`.
pub fn explain_node(
    model: &XgBotModel,
    g: &Graph,
    node: usize,
    cfg: &ExplainConfig,
) -> Result<Explanation> {
    cfg.validate()?;
    if node >= g.num_nodes() {
        return Err(Error::Contract(format!(
            "node {node} out of range for a graph with {} nodes",
            g.num_nodes()
        )));
    }
    let full = model.logits(g, None)?;
    let (labels, probs) = threshold_logits(&full.select_rows(&[node]), model.config.eval_threshold);
    drop(full);
    let predicted = labels[0];
    let probability = if predicted == 1 { probs[0] } else { 1.0 - probs[0] };

    let sub = khop_subgraph(g, node, cfg.khop)?;
    let nodes = sub.nodes.iter().map(|&v| (v, g.labels()[v])).collect();
    let mut objective = Objective {
        work: model.clone(),
        graph: &sub.graph,
        center: sub.center,
        class: predicted,
        cfg,
    };
    objective.work.zero_grad();

    let e = sub.graph.num_edges();
    let mut edge_param = Param::new(Matrix::filled(1, e, 1.0));
    let mut feature_param = cfg
        .feature_mask
        .then(|| Param::new(Matrix::filled(1, g.feature_dim(), 1.0)));
    let hyper = AdamHyper::default();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let isolated = e == 0;
    if !isolated || feature_param.is_some() {
        for _ in 0..cfg.epochs {
            let flogits = feature_param.as_ref().map(|p| p.value.data().to_vec());
            let (value, dedge, dfeat) = objective.eval(edge_param.value.data(), flogits.as_deref())?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("explainer objective for node {node}")));
            }
            trace.push(value);
            edge_param.accumulate_row(&dedge);
            adam_step(&mut edge_param, cfg.lr, hyper);
            if let (Some(p), Some(d)) = (feature_param.as_mut(), dfeat) {
                p.accumulate_row(&d);
                adam_step(p, cfg.lr, hyper);
            }
        }
    }

    let mask: Vec<f64> = edge_param.value.data().iter().map(|&m| sigmoid(m)).collect();
    let feature_importance: Option<Vec<f64>> = feature_param
        .as_ref()
        .map(|p| p.value.data().iter().map(|&m| sigmoid(m)).collect());
    let features = masked_features(
        sub.graph.features(),
        feature_param.as_ref().map(|p| p.value.data()),
    );
    let masked_probability = objective.probability(&mask, &features)?;

    let mut edges: Vec<ExplainedEdge> = sub
        .edge_map
        .iter()
        .zip(&mask)
        .map(|(&pe, &importance)| {
            let (u, v) = g.edges()[pe];
            ExplainedEdge { u, v, importance }
        })
        .collect();
    sort_edges(&mut edges);

    Ok(Explanation {
        target: node,
        predicted,
        probability,
        edges,
        masked_probability,
        nodes,
        objective: trace,
        feature_importance,
        isolated,
    })
}

/// Descending importance, ties by endpoint ids.
fn sort_edges(edges: &mut [ExplainedEdge]) {
    edges.sort_by(|a, b| {
        b.importance
            .total_cmp(&a.importance)
            .then((a.u, a.v).cmp(&(b.u, b.v)))
    });
}

/// Gray level for an importance in [0, 1]; darker is more important.
fn pen_color(importance: f64) -> String {
    let level = (255.0 * (1.0 - importance.clamp(0.0, 1.0))).round() as u8;
    format!("#{level:02x}{level:02x}{level:02x}")
}

/// DOT rendering of the edges with importance ≥ `threshold`.
pub fn write_dot(expl: &Explanation, threshold: f64) -> Result<String> {
    if !(threshold >= 0.0) {
        return Err(Error::Config(format!("dot threshold must be >= 0, got {threshold}")));
    }
    let kept: Vec<&ExplainedEdge> = expl.edges.iter().filter(|e| e.importance >= threshold).collect();
    let mut incident = std::collections::BTreeSet::new();
    for e in &kept {
        incident.insert(e.u);
        incident.insert(e.v);
    }
    let mut out = String::new();
    let _ = writeln!(out, "graph explanation {{");
    let _ = writeln!(out, "  node [shape=circle];");
    for &(v, label) in &expl.nodes {
        let attrs = if v == expl.target {
            "style=filled, fillcolor=red, color=red"
        } else if label == 1 {
            "color=red"
        } else if incident.contains(&v) {
            "color=black"
        } else {
            continue;
        };
        let _ = writeln!(out, "  {v} [{attrs}];");
    }
    if !expl.nodes.iter().any(|&(v, _)| v == expl.target) {
        let _ = writeln!(out, "  {} [style=filled, fillcolor=red, color=red];", expl.target);
    }
    for e in kept {
        let _ = writeln!(
            out,
            "  {} -- {} [color=\"{}\", penwidth={:.3}, label=\"{:.3}\"];",
            e.u,
            e.v,
            pen_color(e.importance),
            1.0 + 3.0 * e.importance,
            e.importance
        );
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn export_dot(expl: &Explanation, threshold: f64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_dot(expl, threshold)?)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// `u,v,importance` rows, most important first.
pub fn write_edge_csv(expl: &Explanation) -> String {
    let mut out = String::from("u,v,importance\n");
    for e in &expl.edges {
        let _ = writeln!(out, "{},{},{}", e.u, e.v, e.importance);
    }
    out
}
