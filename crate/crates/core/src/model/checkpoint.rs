//! Versioned text checkpoints:
//!
//! ```text
//! xgbot-ckpt 1
//! config <key>=<value>        one line per config field
//! param <dotted.name> <rows> <cols>
//! <rows lines of cols numbers, 17 significant digits>
//! ...
//! ```
//!
//! Batch-norm running statistics are stored as 1×H `param` entries named
//! `...bn.running_mean` / `...bn.running_var`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{ClassWeight, XgBotConfig, XgBotModel};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

pub const CKPT_MAGIC: &str = "xgbot-ckpt 1";

fn config_lines(cfg: &XgBotConfig) -> Vec<(&'static str, String)> {
    vec![
        ("blocks", cfg.blocks.to_string()),
        ("groups", cfg.groups.to_string()),
        ("channels", cfg.channels.to_string()),
        ("feature_dim", cfg.feature_dim.to_string()),
        ("lr", format!("{:?}", cfg.lr)),
        ("epochs", cfg.epochs.to_string()),
        ("seed", cfg.seed.to_string()),
        ("class_weight", cfg.class_weight.to_string()),
        ("eval_threshold", format!("{:?}", cfg.eval_threshold)),
    ]
}

/// Visits every serialized tensor in file order.
fn tensors(model: &XgBotModel) -> Vec<(String, Matrix)> {
    let mut out = vec![
        ("encoder.weight".to_string(), model.encoder_w.value.clone()),
        ("encoder.bias".to_string(), model.encoder_b.value.clone()),
    ];
    for (b, block) in model.blocks.iter().enumerate() {
        for (i, g) in block.groups.iter().enumerate() {
            let prefix = format!("blocks.{b}.group.{i}");
            for (name, p) in g.named_params() {
                out.push((format!("{prefix}.{name}"), p.value.clone()));
            }
            out.push((format!("{prefix}.bn.running_mean"), Matrix::row_vector(&g.running.mean)));
            out.push((format!("{prefix}.bn.running_var"), Matrix::row_vector(&g.running.var)));
        }
    }
    out.push(("head.weight".to_string(), model.head_w.value.clone()));
    out.push(("head.bias".to_string(), model.head_b.value.clone()));
    out
}

fn assign(model: &mut XgBotModel, index: usize, m: Matrix) {
    // mirrors the order of `tensors`
    if index == 0 {
        model.encoder_w.value = m;
        return;
    }
    if index == 1 {
        model.encoder_b.value = m;
        return;
    }
    let per_group = 8;
    let groups = model.config.groups;
    let k = index - 2;
    if k < model.blocks.len() * groups * per_group {
        let (b, rest) = (k / (groups * per_group), k % (groups * per_group));
        let g = &mut model.blocks[b].groups[rest / per_group];
        match rest % per_group {
            6 => g.running.mean = m.data().to_vec(),
            7 => g.running.var = m.data().to_vec(),
            slot => g.params_mut()[slot].value = m,
        }
        return;
    }
    if k == model.blocks.len() * groups * per_group {
        model.head_w.value = m;
    } else {
        model.head_b.value = m;
    }
}

pub fn write_checkpoint(model: &XgBotModel) -> String {
    let mut out = String::new();
    out.push_str(CKPT_MAGIC);
    out.push('\n');
    for (k, v) in config_lines(&model.config) {
        let _ = writeln!(out, "config {k}={v}");
    }
    for (name, m) in tensors(model) {
        let _ = writeln!(out, "param {name} {} {}", m.rows(), m.cols());
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn save_checkpoint(model: &XgBotModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(model))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<XgBotModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_checkpoint(&text, path)
}

pub fn parse_checkpoint(text: &str, origin: &Path) -> Result<XgBotModel> {
    let fail = |message: String| Error::Checkpoint {
        path: PathBuf::from(origin),
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    match lines.next() {
        Some((_, l)) if l == CKPT_MAGIC => {}
        Some((_, l)) if l.starts_with("xgbot-ckpt ") => {
            return Err(fail(format!("unsupported version `{l}`, expected `{CKPT_MAGIC}`")))
        }
        _ => return Err(fail(format!("missing `{CKPT_MAGIC}` header"))),
    }

    let mut cfg = XgBotConfig::default();
    while let Some((no, l)) = lines.peek().copied() {
        let Some(kv) = l.strip_prefix("config ") else { break };
        lines.next();
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| fail(format!("line {no}: config entry `{kv}` is not key=value")))?;
        let bad = || fail(format!("line {no}: bad value `{v}` for config key {k}"));
        match k {
            "blocks" => cfg.blocks = v.parse().map_err(|_| bad())?,
            "groups" => cfg.groups = v.parse().map_err(|_| bad())?,
            "channels" => cfg.channels = v.parse().map_err(|_| bad())?,
            "feature_dim" => cfg.feature_dim = v.parse().map_err(|_| bad())?,
            "lr" => cfg.lr = v.parse().map_err(|_| bad())?,
            "epochs" => cfg.epochs = v.parse().map_err(|_| bad())?,
            "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
            "class_weight" => cfg.class_weight = v.parse::<ClassWeight>().map_err(|_| bad())?,
            "eval_threshold" => cfg.eval_threshold = v.parse().map_err(|_| bad())?,
            _ => return Err(fail(format!("line {no}: unknown config key `{k}`"))),
        }
    }
    cfg.validate().map_err(|e| fail(e.to_string()))?;
    let mut model = super::init_model(&cfg, &mut RngState::new(0)).map_err(|e| fail(e.to_string()))?;

    for (index, (name, expected)) in tensors(&model).into_iter().enumerate() {
        let (no, l) = lines
            .next()
            .ok_or_else(|| fail(format!("truncated: missing parameter {name}")))?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        let header = match parts[..] {
            ["param", n, r, c] => r.parse::<usize>().ok().zip(c.parse::<usize>().ok()).map(|s| (n, s)),
            _ => None,
        };
        let (found, (rows, cols)) =
            header.ok_or_else(|| fail(format!("line {no}: expected `param {name} <rows> <cols>`")))?;
        if found != name {
            return Err(fail(format!("line {no}: expected parameter {name}, found {found}")));
        }
        if (rows, cols) != expected.shape() {
            return Err(fail(format!(
                "line {no}: parameter {name} has shape {rows}x{cols} in the header, expected {}x{}",
                expected.rows(),
                expected.cols()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (no, l) = lines
                .next()
                .ok_or_else(|| fail(format!("truncated inside parameter {name}")))?;
            let before = data.len();
            for tok in l.split_whitespace() {
                let x: f64 = tok
                    .parse()
                    .map_err(|_| fail(format!("line {no}: bad number `{tok}` in parameter {name}")))?;
                data.push(x);
            }
            if data.len() - before != cols {
                return Err(fail(format!(
                    "line {no}: parameter {name} row has {} values, expected {cols}",
                    data.len() - before
                )));
            }
        }
        assign(&mut model, index, Matrix::new(rows, cols, data)?);
    }
    if let Some((no, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(fail(format!("line {no}: unexpected content after the last parameter")));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn model() -> XgBotModel {
        let cfg = XgBotConfig {
            blocks: 2,
            channels: 8,
            seed: 3,
            ..XgBotConfig::default()
        };
        let mut m = XgBotModel::from_seed(&cfg).unwrap();
        // non-trivial running statistics
        m.blocks[1].groups[0].running.mean[2] = 0.1 + 0.2;
        m.blocks[0].groups[1].running.var[3] = 1.0 / 3.0;
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = parse_checkpoint(&write_checkpoint(&m), Path::new("m.ckpt")).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(tensors(&back), tensors(&m));
        let g = Graph::new(5, [(0, 1), (1, 2), (3, 4), (0, 4)], Matrix::filled(5, 1, 1.0), vec![0, 1, 0, 0, 1]).unwrap();
        assert_eq!(back.logits(&g, None).unwrap(), m.logits(&g, None).unwrap());
    }

    #[test]
    fn default_structure() {
        let m = XgBotModel::from_seed(&XgBotConfig::default()).unwrap();
        let text = write_checkpoint(&m);
        let lin1 = text.lines().filter(|l| l.starts_with("param ") && l.contains(".lin1.weight ")).count();
        assert_eq!(lin1, 24 * 2);
        assert!(text.contains("param blocks.23.group.1.bn.running_var 1 32\n"));
    }

    #[test]
    fn tampered_shape_names_parameter() {
        let text = write_checkpoint(&model()).replace(
            "param blocks.1.group.0.lin2.weight 4 4",
            "param blocks.1.group.0.lin2.weight 4 5",
        );
        let err = parse_checkpoint(&text, Path::new("m.ckpt")).unwrap_err().to_string();
        assert!(err.contains("blocks.1.group.0.lin2.weight"), "{err}");
    }

    #[test]
    fn version_and_truncation_errors() {
        let text = write_checkpoint(&model());
        let v2 = text.replacen("xgbot-ckpt 1", "xgbot-ckpt 2", 1);
        assert!(parse_checkpoint(&v2, Path::new("m")).unwrap_err().to_string().contains("version"));
        let cut = &text[..text.len() / 2];
        let cut = &cut[..cut.rfind('\n').unwrap() + 1];
        assert!(parse_checkpoint(cut, Path::new("m")).unwrap_err().to_string().contains("truncated"));
    }
}
