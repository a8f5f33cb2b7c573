use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xgbot::explainer::{explain_node, export_dot, write_edge_csv, ExplainConfig};
use xgbot::graph::{gen_dataset, load_graph, parse_triple, Dataset, GeneratorConfig, Split, Topology};
use xgbot::metrics::{csv_row, fmt_metric, CSV_HEADER};
use xgbot::model::{evaluate, load_checkpoint, save_checkpoint, train, ClassWeight, XgBotConfig, XgBotModel};

mod settings;

use settings::Settings;

/// Botnet node detection with reversible graph networks.
#[derive(Parser)]
#[command(name = "xgbot", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic botnet dataset directory.
    Gen(GenArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Explain the prediction for one node.
    Explain(ExplainArgs),
}

#[derive(Args)]
struct GenArgs {
    /// key=value configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// c2, p2p-debruijn or p2p-regular.
    #[arg(long)]
    topology: Option<Topology>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    bots: Option<usize>,
    #[arg(long)]
    avg_degree: Option<f64>,
    /// Graph counts as train,val,test.
    #[arg(long)]
    graphs: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Overlay degree for p2p-regular.
    #[arg(long)]
    degree_k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `auto` or a fixed positive-class weight.
    #[arg(long)]
    class_weight: Option<ClassWeight>,
    /// Botnet probability threshold used for validation.
    #[arg(long)]
    threshold: Option<f64>,
    /// Output directory for model.ckpt, report.csv and config.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: Split,
    /// Defaults to the threshold stored in the checkpoint.
    #[arg(long)]
    threshold: Option<f64>,
    /// Also write the metrics CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Graph file in the dataset text format.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    node: usize,
    #[arg(long)]
    khop: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda_size: Option<f64>,
    #[arg(long)]
    lambda_entropy: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also learn a feature-column mask.
    #[arg(long)]
    feature_mask: Option<bool>,
    /// Minimum importance for an edge to appear in the DOT output.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    dot: PathBuf,
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl From<xgbot::Error> for CliError {
    fn from(e: xgbot::Error) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn write_file(path: &Path, contents: &str) -> CliResult {
    std::fs::write(path, contents)
        .map_err(|e| CliError::new("io", format!("writing {}: {e}", path.display())))
}

fn log_config(settings: &Settings) {
    eprintln!("resolved configuration:");
    for line in settings.render().lines() {
        eprintln!("  {line}");
    }
}

fn cmd_gen(args: GenArgs) -> CliResult {
    let mut s = Settings::load(args.config.as_deref())?;
    let topology = s.get("topology", args.topology, Topology::C2)?;
    let nodes = s.get("nodes", args.nodes, 3000)?;
    let bots = s.get("bots", args.bots, 60)?;
    let mut cfg = GeneratorConfig::new(topology, nodes, bots);
    cfg.avg_degree = s.get("avg_degree", args.avg_degree, topology.default_avg_degree())?;
    let graphs = s.get("graphs", args.graphs, "8,2,2".to_string())?;
    cfg.graphs = parse_triple(&graphs)?;
    cfg.seed = s.seed(args.seed, 0)?;
    cfg.feature_dim = s.get("feature_dim", args.feature_dim, cfg.feature_dim)?;
    cfg.degree_k = s.get("degree_k", args.degree_k, cfg.degree_k)?;
    log_config(&s);

    let dataset = gen_dataset(&cfg)?;
    dataset.save(&args.out)?;
    println!("{:<6} {:>6} {:>10} {:>12} {:>12}", "split", "graphs", "avg_nodes", "avg_edges", "avg_botnet");
    for split in Split::ALL {
        let st = dataset.stats(split);
        println!(
            "{:<6} {:>6} {:>10.1} {:>12.1} {:>12.1}",
            split.name(),
            st.graphs,
            st.avg_nodes,
            st.avg_edges,
            st.avg_botnet_nodes
        );
    }
    Ok(())
}

fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    if !dir.is_dir() {
        return Err(CliError::new("io", format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(Dataset::load(dir)?)
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let mut s = Settings::load(args.config.as_deref())?;
    s.record("data", &args.data.display());
    let d = XgBotConfig::default();
    let mut cfg = XgBotConfig {
        blocks: s.get("blocks", args.blocks, d.blocks)?,
        groups: s.get("groups", args.groups, d.groups)?,
        channels: s.get("channels", args.channels, d.channels)?,
        lr: s.get("lr", args.lr, d.lr)?,
        epochs: s.get("epochs", args.epochs, d.epochs)?,
        seed: s.seed(args.seed, d.seed)?,
        class_weight: s.get("class_weight", args.class_weight, d.class_weight)?,
        eval_threshold: s.get("eval_threshold", args.threshold, d.eval_threshold)?,
        feature_dim: d.feature_dim,
    };
    cfg.validate()?;
    let dataset = load_dataset(&args.data)?;
    let first = dataset
        .train
        .first()
        .ok_or_else(|| CliError::new("config", format!("{} has an empty train split", args.data.display())))?;
    cfg.feature_dim = first.feature_dim();
    s.record("feature_dim", &cfg.feature_dim);
    log_config(&s);

    let mut model = XgBotModel::from_seed(&cfg)?;
    let report = train(&mut model, &dataset, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.6}  val f1 {}  val far {}",
            r.epoch,
            r.train_loss,
            fmt_metric(r.val.f1()),
            fmt_metric(r.val.far())
        );
    })?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::new("io", format!("creating {}: {e}", args.out.display())))?;
    save_checkpoint(&model, args.out.join("model.ckpt"))?;
    write_file(&args.out.join("report.csv"), &report.to_csv())?;
    write_file(&args.out.join("config.txt"), &s.render())?;
    eprintln!("wall time {:.1}s", report.wall_time.as_secs_f64());
    match report.best_epoch {
        Some(e) => println!("best epoch {e}; wrote {}", args.out.display()),
        None => println!("no epochs run; wrote initial model to {}", args.out.display()),
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let mut s = Settings::load(args.config.as_deref())?;
    let model = load_checkpoint(&args.checkpoint)?;
    let threshold = s.get("eval_threshold", args.threshold, model.config.eval_threshold)?;
    s.record("split", &args.split.name());
    log_config(&s);
    let dataset = load_dataset(&args.data)?;
    let graphs = dataset.split(args.split);
    let pooled = evaluate(&model, graphs, threshold)?;
    let mut csv = String::new();
    let _ = writeln!(csv, "{CSV_HEADER}");
    let _ = writeln!(csv, "{}", csv_row(args.split.name(), graphs.len(), &pooled));
    print!("{csv}");
    if let Some(out) = &args.out {
        write_file(out, &csv)?;
    }
    Ok(())
}

fn cmd_explain(args: ExplainArgs) -> CliResult {
    let mut s = Settings::load(args.config.as_deref())?;
    let d = ExplainConfig::default();
    let cfg = ExplainConfig {
        khop: s.get("khop", args.khop, d.khop)?,
        epochs: s.get("explain_epochs", args.epochs, d.epochs)?,
        lr: s.get("explain_lr", args.lr, d.lr)?,
        lambda_size: s.get("lambda_size", args.lambda_size, d.lambda_size)?,
        lambda_entropy: s.get("lambda_entropy", args.lambda_entropy, d.lambda_entropy)?,
        seed: s.seed(args.seed, d.seed)?,
        feature_mask: s.get("feature_mask", args.feature_mask, d.feature_mask)?,
    };
    s.record("node", &args.node);
    log_config(&s);
    let model = load_checkpoint(&args.checkpoint)?;
    let g = load_graph(&args.graph)?;
    if args.node >= g.num_nodes() {
        return Err(CliError::new(
            "range",
            format!("node {} out of range: {} has {} nodes", args.node, args.graph.display(), g.num_nodes()),
        ));
    }
    let expl = explain_node(&model, &g, args.node, &cfg)?;
    if expl.isolated {
        eprintln!("warning: node {} has no edges within {} hops; explanation is empty", args.node, cfg.khop);
    }
    export_dot(&expl, args.threshold, &args.dot)?;
    write_file(&args.csv, &write_edge_csv(&expl))?;
    println!(
        "node {} predicted {} (p={:.6}), masked p={:.6}",
        expl.target,
        if expl.predicted == 1 { "botnet" } else { "normal" },
        expl.probability,
        expl.masked_probability
    );
    for e in expl.edges.iter().take(10) {
        println!("{:>8} -- {:<8} {:.6}", e.u, e.v, e.importance);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Explain(a) => cmd_explain(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code, e.message.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
