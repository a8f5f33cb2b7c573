use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{load_graph, save_graph, Graph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    C2,
    P2pDeBruijn,
    P2pRegular,
}

impl Topology {
    pub fn name(self) -> &'static str {
        match self {
            Topology::C2 => "c2",
            Topology::P2pDeBruijn => "p2p-debruijn",
            Topology::P2pRegular => "p2p-regular",
        }
    }

    /// Default background mean degree.
    pub fn default_avg_degree(self) -> f64 {
        match self {
            Topology::C2 => 11.3,
            Topology::P2pDeBruijn | Topology::P2pRegular => 22.5,
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c2" => Ok(Topology::C2),
            "p2p-debruijn" => Ok(Topology::P2pDeBruijn),
            "p2p-regular" => Ok(Topology::P2pRegular),
            other => Err(Error::Config(format!(
                "unknown topology `{other}` (expected c2, p2p-debruijn or p2p-regular)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train = 0,
    Val = 1,
    Test = 2,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub topology: Topology,
    pub nodes: usize,
    pub bots: usize,
    pub avg_degree: f64,
    /// Graph counts for train, val and test.
    pub graphs: [usize; 3],
    pub seed: u64,
    pub feature_dim: usize,
    /// Overlay degree for `p2p-regular`.
    pub degree_k: usize,
}

impl GeneratorConfig {
    pub fn new(topology: Topology, nodes: usize, bots: usize) -> Self {
        GeneratorConfig {
            topology,
            nodes,
            bots,
            avg_degree: topology.default_avg_degree(),
            graphs: [8, 2, 2],
            seed: 0,
            feature_dim: 1,
            degree_k: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.bots == 0 || self.bots >= self.nodes {
            return bad(format!("bots must satisfy 0 < bots < nodes (bots={}, nodes={})", self.bots, self.nodes));
        }
        if self.topology == Topology::C2 && self.bots + 1 >= self.nodes {
            return bad(format!(
                "c2 needs a controller and at least one normal node: bots + 1 < nodes (bots={}, nodes={})",
                self.bots, self.nodes
            ));
        }
        if self.topology == Topology::P2pDeBruijn && (self.bots < 2 || !self.bots.is_power_of_two()) {
            return bad(format!("p2p-debruijn needs bots to be a power of two >= 2, got {}", self.bots));
        }
        if self.topology == Topology::P2pRegular
            && (self.degree_k == 0 || self.degree_k >= self.bots || (self.bots * self.degree_k) % 2 == 1)
        {
            return bad(format!(
                "p2p-regular needs 0 < degree_k < bots and bots·degree_k even (bots={}, degree_k={})",
                self.bots, self.degree_k
            ));
        }
        if !(self.avg_degree.is_finite() && self.avg_degree >= 0.0) {
            return bad(format!("avg_degree must be >= 0, got {}", self.avg_degree));
        }
        if self.avg_degree * self.nodes as f64 / 2.0 < 1.0 {
            return bad("avg_degree·nodes/2 must be at least 1".into());
        }
        if self.avg_degree >= (self.nodes - 1) as f64 {
            return bad(format!("avg_degree must be below nodes - 1 = {}", self.nodes - 1));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        Ok(())
    }

    /// `key=value` manifest lines.
    pub fn manifest(&self) -> String {
        format!(
            "topology={}\nn={}\nbots={}\navg_degree={}\nseed={}\nfeature_dim={}\ngraphs={},{},{}\ndegree_k={}\n",
            self.topology,
            self.nodes,
            self.bots,
            self.avg_degree,
            self.seed,
            self.feature_dim,
            self.graphs[0],
            self.graphs[1],
            self.graphs[2],
            self.degree_k
        )
    }

    pub fn parse_manifest(text: &str) -> Result<Self> {
        let mut cfg = GeneratorConfig::new(Topology::C2, 0, 0);
        let mut avg = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("manifest line `{line}` is not key=value")))?;
            let num = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("manifest key {k}: bad value `{v}`")))
            };
            match k {
                "topology" => cfg.topology = v.parse()?,
                "n" => cfg.nodes = num(v)?,
                "bots" => cfg.bots = num(v)?,
                "avg_degree" => {
                    avg = Some(v.parse::<f64>().map_err(|_| {
                        Error::Config(format!("manifest key avg_degree: bad value `{v}`"))
                    })?)
                }
                "seed" => {
                    cfg.seed = v
                        .parse()
                        .map_err(|_| Error::Config(format!("manifest key seed: bad value `{v}`")))?
                }
                "feature_dim" => cfg.feature_dim = num(v)?,
                "degree_k" => cfg.degree_k = num(v)?,
                "graphs" => cfg.graphs = parse_triple(v)?,
                other => return Err(Error::Config(format!("unknown manifest key `{other}`"))),
            }
        }
        cfg.avg_degree = avg.unwrap_or_else(|| cfg.topology.default_avg_degree());
        Ok(cfg)
    }
}

/// Parses `a,b,c` graph counts.
pub fn parse_triple(v: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = v
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("expected three comma-separated counts, got `{v}`")))?;
    <[usize; 3]>::try_from(parts)
        .map_err(|_| Error::Config(format!("expected three comma-separated counts, got `{v}`")))
}

/// Train/val/test graphs plus the generator configuration, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Graph>,
    pub val: Vec<Graph>,
    pub test: Vec<Graph>,
    pub config: Option<GeneratorConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitStats {
    pub graphs: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
    pub avg_botnet_nodes: f64,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Graph] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn stats(&self, split: Split) -> SplitStats {
        let gs = self.split(split);
        let k = gs.len().max(1) as f64;
        SplitStats {
            graphs: gs.len(),
            avg_nodes: gs.iter().map(|g| g.num_nodes() as f64).sum::<f64>() / k,
            avg_edges: gs.iter().map(|g| g.num_edges() as f64).sum::<f64>() / k,
            avg_botnet_nodes: gs.iter().map(|g| g.num_positive() as f64).sum::<f64>() / k,
        }
    }

    /// Writes `train/`, `val/`, `test/` with `graph_NNNN.txt` files and
    /// `manifest.txt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for split in Split::ALL {
            let sub = dir.join(split.name());
            std::fs::create_dir_all(&sub)
                .map_err(|e| Error::io(format!("creating {}", sub.display()), e))?;
            for (j, g) in self.split(split).iter().enumerate() {
                save_graph(g, sub.join(format!("graph_{j:04}.txt")))?;
            }
        }
        if let Some(cfg) = &self.config {
            let path = dir.join("manifest.txt");
            std::fs::write(&path, cfg.manifest())
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }

    /// Loads a dataset directory. Every split directory must exist.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut splits: [Vec<Graph>; 3] = Default::default();
        for split in Split::ALL {
            splits[split as usize] = load_split(dir, split)?;
        }
        let manifest = dir.join("manifest.txt");
        let config = if manifest.exists() {
            let text = std::fs::read_to_string(&manifest)
                .map_err(|e| Error::io(format!("reading {}", manifest.display()), e))?;
            Some(GeneratorConfig::parse_manifest(&text)?)
        } else {
            None
        };
        let [train, val, test] = splits;
        Ok(Dataset {
            train,
            val,
            test,
            config,
        })
    }
}

/// Loads the `graph_*.txt` files of one split in name order.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Graph>> {
    let sub = dir.join(split.name());
    if !sub.is_dir() {
        return Err(Error::Config(format!(
            "missing split directory {}",
            sub.display()
        )));
    }
    let mut files: Vec<_> = std::fs::read_dir(&sub)
        .map_err(|e| Error::io(format!("listing {}", sub.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("graph_") && n.ends_with(".txt"))
        })
        .collect();
    files.sort();
    files.iter().map(load_graph).collect()
}
