//! Subcommands against small blob experiments, through the library entry
//! points and through the compiled binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use weightforge::cli::{
    cmd_compare, cmd_finetune, cmd_pretrain, cmd_sweep, load_config, prepare_splits, read_runs, Aggregate,
    BudgetSpec, ExperimentConfig, Preset, RunArgs, RunManifest,
};
use weightforge::finetune::PipelineReport;
use weightforge::model::{load_state, sgd_train, TrainConfig};
use weightforge::Error;

const CONFIG: &str = r#"{
  "dataset": {"kind": "blobs", "classes": 3, "per_class": 40, "dim": 2, "spread": 3.0, "seed": 2},
  "split": {"train": 0.6, "val": 0.2, "test": 0.2, "seed": 1},
  "model": {"kind": "mlp", "n_inputs": 2, "n_hidden": 8, "n_outputs": 3},
  "train": {"epochs": 8, "batch_size": 16, "learning_rate": 0.05},
  "algorithm": "ga",
  "budget": "alpha",
  "delta": 0.001,
  "seeds": [0, 1, 2]
}"#;

fn setup(text: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, text).unwrap();
    (dir, path)
}

fn config_in(dir: &Path, path: &Path, out: &str) -> ExperimentConfig {
    let mut cfg = load_config(path).unwrap();
    cfg.out = dir.join(out);
    cfg
}

fn binary(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weightforge"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn read_report(path: PathBuf) -> PipelineReport {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pretrain_writes_reloadable_deterministic_weights() {
    let (dir, path) = setup(CONFIG);
    let mut cfg = config_in(dir.path(), &path, "a");
    cfg.seeds = vec![1];
    cmd_pretrain(&cfg).unwrap();
    let file = dir.path().join("a/weights_seed1.wfnn");
    let reloaded = load_state(&file).unwrap();

    let splits = prepare_splits(&cfg).unwrap();
    let direct = sgd_train(cfg.model, &splits.train, Some(&splits.val), &TrainConfig { seed: 1, ..cfg.train.clone() }).unwrap();
    assert_eq!(reloaded, direct.state);

    cfg.out = dir.path().join("b");
    cmd_pretrain(&cfg).unwrap();
    assert_eq!(fs::read(&file).unwrap(), fs::read(dir.path().join("b/weights_seed1.wfnn")).unwrap());
    assert!(dir.path().join("a/trace_seed1.json").exists());
    assert!(dir.path().join("a/weights_seed1.json").exists());
}

#[test]
fn zero_epochs_is_a_config_error() {
    let (_dir, path) = setup(&CONFIG.replace("\"epochs\": 8", "\"epochs\": 0"));
    assert!(matches!(load_config(&path), Err(Error::Config(_))));
}

#[test]
fn ten_seed_finetune_writes_reports_and_manifest() {
    let (dir, path) = setup(CONFIG);
    let mut cfg = config_in(dir.path(), &path, "ft");
    cfg.seeds = (0..10).collect();
    let outcome = cmd_finetune(&cfg, None).unwrap();
    assert!(outcome.succeeded());
    for s in 0..10 {
        let r = read_report(cfg.out.join(format!("report_seed{s}.json")));
        assert_eq!(r.seed, s);
        assert_eq!(r.optimization.trace.len(), 5);
        assert!(r.post_val_accuracy >= r.pre_val_accuracy);
    }
    assert_eq!(read_runs(&cfg.out.join("runs_post.csv")).unwrap().len(), 10);
    let agg: Aggregate = serde_json::from_str(&fs::read_to_string(cfg.out.join("aggregate.json")).unwrap()).unwrap();
    assert_eq!(agg.seeds.len(), 10);
    assert_eq!(agg.tuned, "alpha-GA-MLP");

    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(cfg.out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.version, env!("CARGO_PKG_VERSION"));
    for f in &manifest.files {
        assert!(cfg.out.join(f).exists(), "{f}");
    }
    let dump = fs::read_to_string(cfg.out.join("weights_dump_seed0.csv")).unwrap();
    assert_eq!(dump.lines().count(), 1 + 8 * 3);
}

#[test]
fn saved_weights_reproduce_in_process_pretraining() {
    let (dir, path) = setup(CONFIG);
    let pre = config_in(dir.path(), &path, "pre");
    cmd_pretrain(&pre).unwrap();
    let inline = config_in(dir.path(), &path, "inline");
    cmd_finetune(&inline, None).unwrap();
    let loaded = config_in(dir.path(), &path, "loaded");
    cmd_finetune(&loaded, Some(&pre.out)).unwrap();
    for s in 0..3 {
        let mut a = read_report(inline.out.join(format!("report_seed{s}.json")));
        let b = read_report(loaded.out.join(format!("report_seed{s}.json")));
        assert!(a.pretrain_trace.take().is_some());
        assert_eq!(a, b);
    }
}

#[test]
fn no_anchor_flag_reaches_the_reports() {
    let (dir, path) = setup(CONFIG);
    let args = RunArgs {
        config: path.clone(),
        seeds: Some("4".into()),
        out: Some(dir.path().join("free")),
        no_anchor: true,
        algorithm: Some(weightforge::cli::AlgorithmName::Pso),
        preset: None,
        delta: Some(0.01),
    };
    let cfg = args.resolve().unwrap();
    assert!(!cfg.anchor);
    cmd_finetune(&cfg, None).unwrap();
    let r = read_report(cfg.out.join("report_seed4.json"));
    assert!(!r.config.anchor && !r.optimization.anchored);
    assert_eq!(r.optimization.algorithm.short_name(), "PSO");
    let manifest = fs::read_to_string(cfg.out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"anchor\": false"));
}

#[test]
fn binary_exit_codes() {
    let (dir, _path) = setup(CONFIG);
    let missing = binary(&["finetune", "--config", "config.json", "--weights", "absent.wfnn", "--out", "x"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("absent.wfnn"));

    let ok = binary(&["finetune", "--config", "config.json", "--seeds", "0,1", "--out", "y"], dir.path());
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));

    let cmp = binary(&["compare", "y/runs_pre.csv", "y/runs_post.csv", "--out", "cmp"], dir.path());
    assert!(cmp.status.success());
    let table = String::from_utf8_lossy(&cmp.stdout);
    assert!(table.starts_with("| Model | Accuracy | Precision | Recall | F1-Score |"));
    assert!(dir.path().join("cmp/comparison.csv").exists());

    let eval = binary(&["evaluate", "--config", "config.json", "--weights", "y/weights_post_seed0.wfnn"], dir.path());
    assert!(eval.status.success());
    assert!(String::from_utf8_lossy(&eval.stdout).contains("\"accuracy\""));

    let no_config = binary(&["pretrain", "--config", "nope.json"], dir.path());
    assert_eq!(no_config.status.code(), Some(2));
}

#[test]
fn comparing_a_run_table_with_itself() {
    let (dir, path) = setup(CONFIG);
    let cfg = config_in(dir.path(), &path, "ft");
    cmd_finetune(&cfg, None).unwrap();
    let runs = cfg.out.join("runs_post.csv");
    let cmp = cmd_compare(&runs, &runs, 0.05).unwrap();
    assert!(cmp.tests.iter().all(|t| t.p_value == 1.0 && !t.significant));

    let short = dir.path().join("short.csv");
    let text = fs::read_to_string(&runs).unwrap();
    fs::write(&short, text.lines().take(3).collect::<Vec<_>>().join("\n")).unwrap();
    assert!(matches!(cmd_compare(&runs, &short, 0.05), Err(Error::Pairing(_))));
}

#[test]
fn sweep_grid_shape_and_single_cell_agreement() {
    let (dir, path) = setup(CONFIG);
    let mut cfg = config_in(dir.path(), &path, "sweep");
    cfg.seeds = vec![0, 1];
    let presets: Vec<BudgetSpec> = [Preset::Alpha, Preset::Beta, Preset::Gamma].map(BudgetSpec::Preset).to_vec();
    let (grid, _) = cmd_sweep(&cfg, &[0.0001, 0.001], &presets).unwrap();
    assert_eq!(grid.cells.len(), 6);
    assert_eq!(grid.to_markdown().lines().count(), 2 + 2);

    let mut one = config_in(dir.path(), &path, "one");
    one.seeds = vec![0, 1];
    let (single, _) = cmd_sweep(&one, &[0.001], &[BudgetSpec::Preset(Preset::Alpha)]).unwrap();
    let mut ft = config_in(dir.path(), &path, "ft");
    ft.seeds = vec![0, 1];
    cmd_finetune(&ft, None).unwrap();
    let agg: Aggregate = serde_json::from_str(&fs::read_to_string(ft.out.join("aggregate.json")).unwrap()).unwrap();
    assert_eq!(single.cells[0].aggregate, agg);

    assert!(matches!(cmd_sweep(&cfg, &[], &presets), Err(Error::Config(_))));
}
