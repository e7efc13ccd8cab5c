//! End-to-end checks of the `imitation` binary and the experiment outputs:
//! exit codes, file shapes, the seeding contract, and the banana training
//! dynamics.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use imitation_cli::config::{resolve, Overrides};
use imitation_cli::dataio::load_banana;
use imitation_cli::experiments::run_experiment;
use imitation_core::data::random_embed;
use imitation_core::engine::imitation_loss;
use imitation_core::linalg::Matrix;
use imitation_core::net::Mlp;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .expect("repo root")
}

fn banana_path() -> PathBuf {
    repo_root().join("data/banana.csv")
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imitation"))
        .args(args)
        .output()
        .expect("spawn imitation")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("exp.conf");
    std::fs::write(&path, body).unwrap();
    path
}

/// Small banana config for fast end-to-end runs.
fn tiny_banana_config(extra: &str) -> String {
    format!(
        "dataset = banana\n\
         banana_path = {}\n\
         embed_dim = 10\n\
         labels_per_class = 5\n\
         hidden_dims = 16\n\
         gp_mode = regression\n\
         steps = 2\n\
         epochs_per_step = 2\n\
         batch_size = 20\n\
         pseudo_count = 30\n\
         seeds = 3\n\
         {extra}",
        banana_path().display()
    )
}

#[test]
fn validate_preset_exits_zero_and_echoes_materialized_defaults() {
    let out = run_cli(&["validate", "--preset", "banana-fig2-fast"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    // lambda_bar2 = 1 in the preset, so the default upper bound echoes 10.
    assert!(stdout.contains("lambda_hat2 = 10"), "{stdout}");
    assert!(stdout.contains("strategy = imitation-opt-fid"));
}

#[test]
fn validate_rejects_empty_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_config(dir.path(), "");
    let out = run_cli(&["validate", "--config", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let bogus = write_config(dir.path(), "dataset = banana\nbanana_path = x\nwhatever = 1\n");
    let out = run_cli(&["validate", "--config", bogus.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("whatever"), "{stderr}");
}

#[test]
fn run_reports_data_errors_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "dataset = banana\nbanana_path = /definitely/not/here.csv\nseeds = 0\n",
    );
    let out = run_cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_reports_numerical_failures_with_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &tiny_banana_config("strategy = nn\ntarget_lr = 1e150\n"),
    );
    let out = run_cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gp_single_seed_writes_one_accuracy_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_banana_config("strategy = gp\n"));
    let out_dir = dir.path().join("out");
    let out = run_cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let runs = std::fs::read_to_string(out_dir.join("runs.csv")).unwrap();
    let lines: Vec<&str> = runs.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("3,gp,5,"));
    let agg = std::fs::read_to_string(out_dir.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 2);
}

/// The labeled split depends only on the seed, never on which strategies
/// run: the gp row of a combined run matches a gp-only run byte for byte.
#[test]
fn gp_accuracy_identical_between_solo_and_combined_runs() {
    let dir = tempfile::tempdir().unwrap();
    let solo_cfg = write_config(dir.path(), &tiny_banana_config("strategy = gp\n"));
    let solo_out = dir.path().join("solo");
    assert!(run_cli(&[
        "run",
        "--config",
        solo_cfg.to_str().unwrap(),
        "--out",
        solo_out.to_str().unwrap(),
    ])
    .status
    .success());

    let combined_cfg = write_config(dir.path(), &tiny_banana_config("strategy = nn,gp\n"));
    let combined_out = dir.path().join("combined");
    assert!(run_cli(&[
        "run",
        "--config",
        combined_cfg.to_str().unwrap(),
        "--out",
        combined_out.to_str().unwrap(),
    ])
    .status
    .success());

    let gp_row = |path: &Path| -> String {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .find(|l| l.contains(",gp,"))
            .unwrap()
            .to_string()
    };
    assert_eq!(
        gp_row(&solo_out.join("runs.csv")),
        gp_row(&combined_out.join("runs.csv"))
    );
}

#[test]
fn boundary_outputs_have_declared_shapes_and_manifest_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &tiny_banana_config("strategy = imitation-opt-fid\nboundary_resolution = 12\n"),
    );
    let out_dir = dir.path().join("out");
    let out = run_cli(&[
        "boundary",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    for grid in ["grid_reference.csv", "grid_target.csv"] {
        let text = std::fs::read_to_string(out_dir.join(grid)).unwrap();
        assert_eq!(text.lines().count(), 1 + 12 * 12, "{grid}");
        assert_eq!(text.lines().next().unwrap(), "x,y,p_class1");
    }
    // One snapshot per training step, sizes following the growth law.
    let snap0 = std::fs::read_to_string(out_dir.join("pseudo_step0.csv")).unwrap();
    assert_eq!(snap0.lines().count(), 1 + 30);
    let snap1 = std::fs::read_to_string(out_dir.join("pseudo_step1.csv")).unwrap();
    assert_eq!(snap1.lines().count(), 1 + 60);
    // Report has steps x epochs rows.
    let report = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 4);

    // Every file the manifest declares exists and is non-empty.
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert!(!files.is_empty());
    for f in files {
        let path = PathBuf::from(f.as_str().unwrap());
        let meta = std::fs::metadata(&path)
            .unwrap_or_else(|_| panic!("declared file missing: {}", path.display()));
        assert!(meta.len() > 0, "declared file empty: {}", path.display());
    }
    // The trained model reloads exactly.
    let model = imitation_cli::checkpoint::load_mlp(&out_dir.join("model.bin")).unwrap();
    assert_eq!(model.input_dim(), 10);
    assert_eq!(model.class_count(), 2);
}

#[test]
fn reference_grid_identical_across_strategies_under_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut grids = Vec::new();
    for strategy in ["gp", "imitation"] {
        let cfg = write_config(
            dir.path(),
            &tiny_banana_config(&format!("strategy = {strategy}\nboundary_resolution = 10\n")),
        );
        let out_dir = dir.path().join(strategy);
        let out = run_cli(&[
            "boundary",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        grids.push(std::fs::read(out_dir.join("grid_reference.csv")).unwrap());
    }
    assert_eq!(grids[0], grids[1]);
}

#[test]
fn aggregate_mean_matches_per_seed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &tiny_banana_config("strategy = gp\nseeds = 0,1,2,3\n"),
    );
    let out_dir = dir.path().join("out");
    assert!(run_cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ])
    .status
    .success());
    let runs = std::fs::read_to_string(out_dir.join("runs.csv")).unwrap();
    let accs: Vec<f64> = runs
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let agg = std::fs::read_to_string(out_dir.join("aggregate.csv")).unwrap();
    let agg_mean: f64 = agg
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!((mean - agg_mean).abs() <= 1e-12);
}

/// Embedded banana data runs through the network without numeric blowups.
#[test]
fn embedded_banana_losses_are_finite() {
    let ds = load_banana(&banana_path()).unwrap();
    let (embedded, _) = random_embed(&ds, 100, 1234).unwrap();
    let net = Mlp::init(&[100, 64, 2], 0).unwrap();
    let eval = imitation_loss(
        &net,
        &embedded.features,
        &embedded.labels,
        &Matrix::zeros(0, 100),
        &Matrix::zeros(0, 2),
        &[],
        1.0,
    )
    .unwrap();
    assert!(eval.loss.is_finite());
    assert!(eval.loss > 0.0);
}

/// The banana protocol (250 pseudo examples, 4 steps of 50 epochs) ends at a
/// current set of 1000 and shows a decreasing first-step loss trend in at
/// least 4 of 5 seeds.
#[test]
fn banana_protocol_training_dynamics() {
    let root = repo_root();
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(
        dir.path(),
        &format!(
            "preset = banana-fig2-fast\n\
             banana_path = {}\n\
             track_test_accuracy = false\n",
            root.join("data/banana.csv").display()
        ),
    );
    let out_dir = dir.path().join("out");
    let overrides = Overrides { out_dir: Some(out_dir.clone()), ..Overrides::default() };
    let cfg = resolve(Some(&cfg_path), &overrides).unwrap();
    run_experiment(&cfg).unwrap();

    let mut trending = 0;
    for seed in 0..5 {
        let report = std::fs::read_to_string(
            out_dir.join(format!("imitation-opt-fid_l5/seed{seed}/report.csv")),
        )
        .unwrap();
        let rows: Vec<Vec<&str>> = report.lines().skip(1).map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 200, "4 steps x 50 epochs");
        // Final step trains against the full 1000-point set.
        assert_eq!(rows.last().unwrap()[4], "1000");

        // First-step epoch losses, block-averaged against minibatch noise:
        // five consecutive 10-epoch means must decrease strictly.
        let losses: Vec<f64> = rows[..50]
            .iter()
            .map(|r| r[2].parse::<f64>().unwrap() + r[3].parse::<f64>().unwrap())
            .collect();
        let blocks: Vec<f64> = losses
            .chunks(10)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        if blocks.windows(2).all(|w| w[1] < w[0]) {
            trending += 1;
        }
    }
    assert!(trending >= 4, "first-step loss trend decreasing in only {trending}/5 seeds");
}
