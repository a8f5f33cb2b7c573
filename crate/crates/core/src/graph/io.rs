//! Text graph format:
//!
//! ```text
//! xgbot-graph 1
//! <n> <E> <F>
//! <u> <v>            E lines, u < v, sorted lexicographically
//! <f_1> .. <f_F> <l> n lines: feature row then the label digit
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::Graph;
use crate::error::{Error, GraphFormatError, Result};
use crate::numerics::Matrix;

pub const GRAPH_MAGIC: &str = "xgbot-graph 1";

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_graph(&text, path)
}

/// Parses the text format; `origin` only labels diagnostics.
pub fn parse_graph(text: &str, origin: &Path) -> Result<Graph> {
    let fail = |line: usize, kind: GraphFormatError| Error::GraphFormat {
        path: PathBuf::from(origin),
        line,
        kind,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    match lines.next() {
        Some((_, l)) if l.trim_end() == GRAPH_MAGIC => {}
        Some((no, l)) => {
            return Err(fail(no, GraphFormatError::Header(format!("expected `{GRAPH_MAGIC}`, found `{l}`"))))
        }
        None => return Err(fail(1, GraphFormatError::Header("empty file".into()))),
    }
    let (no, counts) = lines
        .next()
        .ok_or_else(|| fail(2, GraphFormatError::Header("missing `<n> <E> <F>` line".into())))?;
    let nums: Vec<usize> = counts
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| fail(no, GraphFormatError::Header(format!("bad counts `{counts}`"))))?;
    let [n, e, f] = nums[..] else {
        return Err(fail(no, GraphFormatError::Header(format!("expected 3 counts, found `{counts}`"))));
    };

    let mut edges = Vec::with_capacity(e);
    for k in 0..e {
        let (no, l) = lines.next().ok_or_else(|| {
            fail(
                2 + k + 1,
                GraphFormatError::EdgeSyntax(format!("file ends after {k} of {e} edges")),
            )
        })?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        let pair = match parts[..] {
            [a, b] => a.parse::<usize>().ok().zip(b.parse::<usize>().ok()),
            _ => None,
        };
        let (u, v) = pair.ok_or_else(|| fail(no, GraphFormatError::EdgeSyntax(l.to_string())))?;
        if u == v {
            return Err(fail(no, GraphFormatError::SelfLoop(u)));
        }
        for id in [u, v] {
            if id >= n {
                return Err(fail(no, GraphFormatError::NodeOutOfRange { id, n }));
            }
        }
        if u > v || edges.last().is_some_and(|&last| last >= (u, v)) {
            return Err(fail(no, GraphFormatError::EdgeOrder(u, v)));
        }
        edges.push((u, v));
    }

    let mut feats = Vec::with_capacity(n * f);
    let mut labels = Vec::with_capacity(n);
    for found in 0..n {
        let (no, l) = lines.next().ok_or_else(|| {
            fail(
                3 + e + found,
                GraphFormatError::LabelCount { expected: n, found },
            )
        })?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != f + 1 {
            return Err(fail(
                no,
                GraphFormatError::NodeRow(format!("expected {f} features and a label, found `{l}`")),
            ));
        }
        for p in &parts[..f] {
            let x: f64 = p
                .parse()
                .map_err(|_| fail(no, GraphFormatError::NodeRow(format!("bad feature `{p}`"))))?;
            if !x.is_finite() {
                return Err(fail(no, GraphFormatError::NodeRow(format!("non-finite feature `{p}`"))));
            }
            feats.push(x);
        }
        match parts[f] {
            "0" => labels.push(0),
            "1" => labels.push(1),
            other => {
                return Err(fail(no, GraphFormatError::NodeRow(format!("label `{other}` is not 0 or 1"))))
            }
        }
    }
    if let Some((no, l)) = lines.next() {
        if !l.trim().is_empty() || lines.any(|(_, l)| !l.trim().is_empty()) {
            return Err(fail(no, GraphFormatError::Trailing));
        }
    }
    let features = Matrix::new(n, f, feats)?;
    Graph::from_canonical(n, edges, features, labels)
}

/// Serializes in the canonical text form.
pub fn write_graph(g: &Graph) -> String {
    let mut out = String::with_capacity(16 * (g.num_edges() + g.num_nodes()) + 32);
    out.push_str(GRAPH_MAGIC);
    out.push('\n');
    let _ = writeln!(out, "{} {} {}", g.num_nodes(), g.num_edges(), g.feature_dim());
    for &(u, v) in g.edges() {
        let _ = writeln!(out, "{u} {v}");
    }
    for (i, &label) in g.labels().iter().enumerate() {
        for x in g.features().row(i) {
            // shortest round-trip representation
            let _ = write!(out, "{x} ");
        }
        let _ = writeln!(out, "{label}");
    }
    out
}

pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_graph(g))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
