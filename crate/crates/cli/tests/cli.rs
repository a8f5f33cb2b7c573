use std::path::Path;
use std::process::{Command, Output};

fn xgbot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xgbot"))
        .args(args)
        .env_remove("XGBOT_SEED")
        .output()
        .expect("spawn xgbot")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_small(out: &Path, seed: &str) -> Output {
    xgbot(&[
        "gen", "--topology", "c2", "--nodes", "120", "--bots", "8", "--avg-degree", "4",
        "--graphs", "3,1,1", "--seed", seed, "--out", s(out),
    ])
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_writes_splits_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let o = gen_small(&out, "7");
    assert!(o.status.success(), "{}", stderr(&o));
    let files = read_tree(&out);
    assert_eq!(files.len(), 3 + 1 + 1 + 1);
    assert!(files.iter().any(|(n, _)| n == "manifest.txt"));
    assert!(stdout(&o).contains("train"));
    assert!(stderr(&o).contains("seed=7"));

    let again = tmp.path().join("e");
    assert!(gen_small(&again, "7").status.success());
    assert_eq!(read_tree(&out), read_tree(&again));
}

#[test]
fn gen_rejects_all_bot_graphs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = xgbot(&["gen", "--nodes", "3000", "--bots", "3000", "--out", s(tmp.path())]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.lines().last().unwrap().starts_with("error[config]: "), "{err}");
}

#[test]
fn usage_errors_are_one_line() {
    let o = xgbot(&["eval", "--checkpoint", "x", "--data", "y", "--split", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[usage]: "));
    let o = xgbot(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_and_env_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "topology=c2\nnodes=100\nbots=6\navg_degree=4\ngraphs=2,1,1\nepochs=1\n").unwrap();
    let a = tmp.path().join("a");
    let o = Command::new(env!("CARGO_BIN_EXE_xgbot"))
        .args(["gen", "--config", s(&cfg), "--nodes", "90", "--out", s(&a)])
        .env("XGBOT_SEED", "42")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("n=90") && manifest.contains("seed=42"), "{manifest}");

    std::fs::write(&cfg, "nodez=5\n").unwrap();
    let o = xgbot(&["gen", "--config", s(&cfg), "--out", s(&a)]);
    assert!(stderr(&o).contains("nodez"));
    assert!(!o.status.success());
}

#[test]
fn train_eval_explain_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert!(gen_small(&data, "3").status.success());
    let run = tmp.path().join("run");
    let train_args = [
        "train", "--data", s(&data), "--blocks", "2", "--channels", "8", "--epochs", "2",
        "--seed", "1", "--out", s(&run),
    ];
    let o = xgbot(&train_args);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = run.join("model.ckpt");
    let report = std::fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);
    let config = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(config.contains("blocks=2\n") && config.contains("epochs=2\n"));

    let o = xgbot(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--split", "test"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("split,graphs,tp,fp,tn,fn,recall,precision,f1,far\ntest,1,"), "{out}");

    let graph = data.join("test").join("graph_0000.txt");
    let dot = tmp.path().join("e.dot");
    let csv = tmp.path().join("e.csv");
    let explain = |node: &str, khop: &str| {
        xgbot(&[
            "explain", "--checkpoint", s(&ckpt), "--graph", s(&graph), "--node", node, "--khop", khop,
            "--epochs", "5", "--dot", s(&dot), "--csv", s(&csv),
        ])
    };
    let o = explain("3", "2");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("u,v,importance\n"));
    assert!(std::fs::read_to_string(&dot).unwrap().starts_with("graph explanation {"));

    let o = explain("3", "0");
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), "u,v,importance\n");

    let o = explain("120", "2");
    assert!(stderr(&o).starts_with("error[range]") || stderr(&o).contains("\nerror[range]"));
    assert!(!o.status.success());
}

#[test]
fn train_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert!(gen_small(&data, "3").status.success());
    let o = xgbot(&["train", "--data", s(&data), "--channels", "63", "--groups", "2", "--out", s(tmp.path())]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error[config]"));

    std::fs::remove_dir_all(data.join("val")).unwrap();
    let o = xgbot(&["train", "--data", s(&data), "--epochs", "0", "--out", s(tmp.path())]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("val"));
}

#[test]
fn zero_epochs_saves_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    assert!(gen_small(&data, "3").status.success());
    let run = tmp.path().join("r");
    let o = xgbot(&["train", "--data", s(&data), "--blocks", "2", "--channels", "8", "--epochs", "0", "--seed", "4", "--out", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1);
    let model = xgbot::model::load_checkpoint(run.join("model.ckpt")).unwrap();
    let init = xgbot::model::XgBotModel::from_seed(&model.config).unwrap();
    assert_eq!(xgbot::model::write_checkpoint(&model), xgbot::model::write_checkpoint(&init));
}
