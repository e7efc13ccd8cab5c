//! Experiment orchestration: loads data once, fans seeds out over worker
//! threads, dispatches the five strategies, and writes the result files.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use imitation_core::data::{few_shot_split, Dataset, EmbeddingMap};
use imitation_core::derive_seed;
use imitation_core::engine::{
    dense_grid_pseudo, evaluate_accuracy, init_pseudo, train, train_with_observer,
    ImitationConfig, PseudoSets, TrainObserver, TrainReport,
};
use imitation_core::gp::{fit_ensemble, hyper_grid, GpEnsemble};
use imitation_core::linalg::Matrix;
use imitation_core::net::Mlp;

use crate::checkpoint::save_mlp;
use crate::config::{DatasetSpec, PseudoInit, ResolvedConfig, Strategy};
use crate::dataio::{load_banana, load_idx};
use crate::error::{CliError, Result};
use crate::reports::{
    aggregate, write_aggregate_csv, write_grid_csv, write_manifest, write_pseudo_snapshot_csv,
    write_report_csv, write_runs_csv, write_table1_csv, RunRow,
};

// Independent RNG stream tags fanned out from one run seed.
const TAG_SPLIT: u64 = 1;
const TAG_NET: u64 = 2;
const TAG_PSEUDO: u64 = 3;
const TAG_TRAIN: u64 = 4;

/// Everything a run needs from disk, loaded once and shared across seeds.
pub struct ExperimentData {
    /// Training pool in original feature space.
    pub pool_raw: Dataset,
    /// Held-out test set (IDX datasets only; banana evaluates on the split
    /// complement).
    pub test_raw: Option<Dataset>,
    pub embedding: Option<EmbeddingMap>,
    /// Training pool in network input space.
    pub pool: Dataset,
    pub test: Option<Dataset>,
}

pub fn load_experiment_data(cfg: &ResolvedConfig) -> Result<ExperimentData> {
    let (pool_raw, test_raw) = match &cfg.dataset {
        DatasetSpec::Banana { path } => (load_banana(path)?, None),
        DatasetSpec::Idx { train_images, train_labels, test_images, test_labels } => (
            load_idx(train_images, train_labels)?,
            Some(load_idx(test_images, test_labels)?),
        ),
    };
    let embedding = if cfg.embed_dim > 0 {
        Some(
            EmbeddingMap::random(pool_raw.dim(), cfg.embed_dim, cfg.embed_seed)
                .map_err(|e| CliError::config(e.to_string()))?,
        )
    } else {
        None
    };
    let embed = |ds: &Dataset| -> Result<Dataset> {
        match &embedding {
            Some(map) => Ok(Dataset::new(
                map.apply_matrix(&ds.features)?,
                ds.labels.clone(),
                ds.class_count,
            )?),
            None => Ok(ds.clone()),
        }
    };
    let pool = embed(&pool_raw)?;
    let test = test_raw.as_ref().map(|t| embed(t)).transpose()?;
    Ok(ExperimentData { pool_raw, test_raw, embedding, pool, test })
}

fn fit_reference(cfg: &ResolvedConfig, labeled: &Dataset) -> Result<GpEnsemble> {
    let grid = hyper_grid(&labeled.features, &cfg.gp_lengthscale_factors, &cfg.gp_variances);
    let top_k = cfg.gp_top_k.min(grid.len());
    Ok(fit_ensemble(labeled, &grid, cfg.gp_mode, cfg.gp_noise, top_k)?)
}

fn ensemble_accuracy(ens: &GpEnsemble, ds: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    let chunk = 512;
    let mut start = 0;
    while start < ds.len() {
        let end = (start + chunk).min(ds.len());
        let idx: Vec<usize> = (start..end).collect();
        let batch = ds.subset(&idx);
        let preds = ens.predict_batch(&batch.features)?;
        for (p, &label) in preds.iter().zip(&batch.labels) {
            let argmax = p
                .probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map_or(0, |(c, _)| c);
            if argmax == label {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / ds.len() as f64)
}

fn net_dims(cfg: &ResolvedConfig, input_dim: usize, class_count: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(cfg.hidden_dims.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(&cfg.hidden_dims);
    dims.push(class_count);
    dims
}

fn engine_config(
    cfg: &ResolvedConfig,
    strategy: Strategy,
    total_labeled: usize,
    seed: u64,
) -> ImitationConfig {
    let bar = cfg.lambda_bar2_for(total_labeled);
    ImitationConfig {
        lambda1: cfg.lambda1,
        lambda_bar2: bar,
        lambda_hat2: cfg.lambda_hat2_for(bar),
        fidelity_enabled: strategy.uses_fidelity(),
        pseudo_optimize_enabled: strategy.optimizes_pseudo(),
        update_mode: cfg.update_mode,
        pseudo_lr: cfg.pseudo_lr,
        target_lr: cfg.target_lr,
        steps: cfg.steps,
        epochs_per_step: cfg.epochs_per_step,
        batch_size: cfg.batch_size,
        seed: derive_seed(seed, TAG_TRAIN),
    }
}

fn pseudo_points(
    cfg: &ResolvedConfig,
    data: &ExperimentData,
    labeled: &Dataset,
    seed: u64,
) -> Result<Matrix> {
    match cfg.pseudo_init {
        PseudoInit::InterpGauss => Ok(init_pseudo(
            labeled,
            cfg.pseudo_count,
            cfg.interp_fraction,
            cfg.jitter_scale,
            derive_seed(seed, TAG_PSEUDO),
        )?),
        PseudoInit::DenseGrid => {
            let bounds = data.pool_raw.bounding_box_2d(0.1)?;
            let grid = dense_grid_pseudo(&bounds, cfg.grid_resolution)?;
            match &data.embedding {
                Some(map) => Ok(map.apply_matrix(&grid)?),
                None => Ok(grid),
            }
        }
    }
}

/// Outcome of one (strategy, labels, seed) run.
pub struct SingleRun {
    pub accuracy: f64,
    pub report: TrainReport,
}

/// Runs one strategy at one label count under one seed. The labeled split
/// depends only on the seed, so strategies compared under the same seed see
/// identical supervision.
pub fn run_single(
    cfg: &ResolvedConfig,
    data: &ExperimentData,
    strategy: Strategy,
    labels_per_class: usize,
    seed: u64,
) -> Result<SingleRun> {
    let (labeled, rest) = few_shot_split(
        &data.pool,
        labels_per_class,
        derive_seed(seed, TAG_SPLIT),
    )
    .map_err(|e| CliError::data(e.to_string()))?;
    let test_ds = data.test.as_ref().unwrap_or(&rest);
    let total_labeled = labeled.len();
    let tracked = cfg.track_test_accuracy.then_some(test_ds);

    match strategy {
        Strategy::Gp => {
            let ens = fit_reference(cfg, &labeled)?;
            Ok(SingleRun {
                accuracy: ensemble_accuracy(&ens, test_ds)?,
                report: TrainReport::default(),
            })
        }
        Strategy::Nn => {
            let dims = net_dims(cfg, data.pool.dim(), data.pool.class_count);
            let net = Mlp::init(&dims, derive_seed(seed, TAG_NET))?;
            let ecfg = engine_config(cfg, strategy, total_labeled, seed);
            let (net, report) = train(
                &labeled,
                None,
                net,
                &ecfg,
                &Matrix::zeros(0, data.pool.dim()),
                tracked,
            )?;
            Ok(SingleRun { accuracy: evaluate_accuracy(&net, test_ds)?, report })
        }
        Strategy::Imitation | Strategy::ImitationOpt | Strategy::ImitationOptFid => {
            let ens = fit_reference(cfg, &labeled)?;
            let points = pseudo_points(cfg, data, &labeled, seed)?;
            let dims = net_dims(cfg, data.pool.dim(), data.pool.class_count);
            let net = Mlp::init(&dims, derive_seed(seed, TAG_NET))?;
            let ecfg = engine_config(cfg, strategy, total_labeled, seed);
            let (net, report) = train(&labeled, Some(&ens), net, &ecfg, &points, tracked)?;
            Ok(SingleRun { accuracy: evaluate_accuracy(&net, test_ds)?, report })
        }
    }
}

struct Job {
    strategy: Strategy,
    labels_per_class: usize,
    seed: u64,
}

/// Runs the full strategy/label/seed sweep, independent runs in parallel
/// worker slots, results reduced in declared order.
pub fn run_experiment(cfg: &ResolvedConfig) -> Result<Vec<PathBuf>> {
    let data = load_experiment_data(cfg)?;
    let mut jobs = Vec::new();
    for &strategy in &cfg.strategies {
        for &labels in &cfg.labels_per_class {
            for &seed in &cfg.seeds {
                jobs.push(Job { strategy, labels_per_class: labels, seed });
            }
        }
    }

    let workers = std::thread::available_parallelism()
        .map_or(1, std::num::NonZeroUsize::get)
        .min(jobs.len().max(1));
    let results: Mutex<Vec<Option<Result<SingleRun>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let job = &jobs[i];
                let out = run_single(cfg, &data, job.strategy, job.labels_per_class, job.seed);
                results.lock().expect("result lock").as_mut_slice()[i] = Some(out);
            });
        }
    });

    let collected = results.into_inner().expect("result lock");
    let mut rows = Vec::with_capacity(jobs.len());
    let mut reports = Vec::with_capacity(jobs.len());
    for (job, slot) in jobs.iter().zip(collected) {
        let run = slot.expect("every job ran")?;
        rows.push(RunRow {
            seed: job.seed,
            strategy: job.strategy.name().to_string(),
            labels_per_class: job.labels_per_class,
            accuracy: run.accuracy,
        });
        reports.push(run.report);
    }

    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut files = Vec::new();

    let runs_path = cfg.out_dir.join("runs.csv");
    write_runs_csv(&runs_path, &rows)?;
    files.push(runs_path);

    let agg = aggregate(&rows);
    let agg_path = cfg.out_dir.join("aggregate.csv");
    write_aggregate_csv(&agg_path, &agg)?;
    files.push(agg_path);

    let strategies: Vec<String> = cfg.strategies.iter().map(|s| s.name().to_string()).collect();
    let table1_path = cfg.out_dir.join("table1.csv");
    write_table1_csv(
        &table1_path,
        &strategies,
        &cfg.labels_per_class,
        data.pool.class_count,
        &agg,
    )?;
    files.push(table1_path);

    for (job, report) in jobs.iter().zip(&reports) {
        if report.epochs.is_empty() {
            continue;
        }
        let dir = cfg
            .out_dir
            .join(format!("{}_l{}", job.strategy.name(), job.labels_per_class))
            .join(format!("seed{}", job.seed));
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("report.csv");
        write_report_csv(&path, report)?;
        files.push(path);
    }

    let manifest_path = cfg.out_dir.join("manifest.json");
    write_manifest(&manifest_path, "run", &cfg.echo(), &files)?;
    files.push(manifest_path);

    for row in &rows {
        println!(
            "run: strategy={} labels_per_class={} seed={} accuracy={:.4}",
            row.strategy, row.labels_per_class, row.seed, row.accuracy
        );
    }
    for a in &agg {
        println!(
            "aggregate: strategy={} labels_per_class={} mean={:.4} std={:.4} over {} seeds",
            a.strategy, a.labels_per_class, a.mean_accuracy, a.std_accuracy, a.seeds
        );
    }
    Ok(files)
}

/// Observer that snapshots the current pseudo set at every step boundary.
struct SnapshotObserver<'a> {
    out_dir: PathBuf,
    embedding: Option<&'a EmbeddingMap>,
    files: Vec<PathBuf>,
    error: Option<CliError>,
}

impl TrainObserver for SnapshotObserver<'_> {
    fn on_step_start(&mut self, step: usize, sets: &PseudoSets) {
        if self.error.is_some() {
            return;
        }
        let path = self.out_dir.join(format!("pseudo_step{step}.csv"));
        match write_pseudo_snapshot_csv(&path, step, sets.current(), self.embedding) {
            Ok(()) => self.files.push(path),
            Err(e) => self.error = Some(e),
        }
    }
}

/// Boundary study on a 2-d dataset: reference and target class-1
/// probabilities over an evaluation grid, pseudo-set snapshots per training
/// step, the training report, and the trained model.
pub fn boundary_experiment(cfg: &ResolvedConfig) -> Result<Vec<PathBuf>> {
    let data = load_experiment_data(cfg)?;
    if data.pool_raw.dim() != 2 {
        return Err(CliError::config(format!(
            "boundary requires a 2-d base dataset, got {} dims",
            data.pool_raw.dim()
        )));
    }
    let strategy = cfg.strategies[0];
    let seed = cfg.seeds[0];
    let labels_per_class = cfg.labels_per_class[0];

    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut files = Vec::new();

    let (labeled, rest) = few_shot_split(
        &data.pool,
        labels_per_class,
        derive_seed(seed, TAG_SPLIT),
    )
    .map_err(|e| CliError::data(e.to_string()))?;
    let test_ds = data.test.as_ref().unwrap_or(&rest);
    let ens = fit_reference(cfg, &labeled)?;

    let bounds = data.pool_raw.bounding_box_2d(0.1)?;
    let grid = imitation_core::data::make_grid(
        bounds[0].0,
        bounds[0].1,
        bounds[1].0,
        bounds[1].1,
        cfg.boundary_resolution,
    )?;
    let grid_input = match &data.embedding {
        Some(map) => map.apply_matrix(&grid)?,
        None => grid.clone(),
    };

    let ref_preds = ens.predict_batch(&grid_input)?;
    let ref_p1: Vec<f64> = ref_preds.iter().map(|p| p.probs[1]).collect();
    let ref_path = cfg.out_dir.join("grid_reference.csv");
    write_grid_csv(&ref_path, &grid, &ref_p1)?;
    files.push(ref_path);

    if strategy == Strategy::Gp {
        let manifest_path = cfg.out_dir.join("manifest.json");
        write_manifest(&manifest_path, "boundary", &cfg.echo(), &files)?;
        files.push(manifest_path);
        return Ok(files);
    }

    let total_labeled = labeled.len();
    let dims = net_dims(cfg, data.pool.dim(), data.pool.class_count);
    let net = Mlp::init(&dims, derive_seed(seed, TAG_NET))?;
    let ecfg = engine_config(cfg, strategy, total_labeled, seed);
    let points = if strategy.uses_pseudo() {
        pseudo_points(cfg, &data, &labeled, seed)?
    } else {
        Matrix::zeros(0, data.pool.dim())
    };

    let mut observer = SnapshotObserver {
        out_dir: cfg.out_dir.clone(),
        embedding: data.embedding.as_ref(),
        files: Vec::new(),
        error: None,
    };
    let tracked = cfg.track_test_accuracy.then_some(test_ds);
    let (net, report) = train_with_observer(
        &labeled,
        Some(&ens),
        net,
        &ecfg,
        &points,
        tracked,
        &mut observer,
    )?;
    if let Some(e) = observer.error {
        return Err(e);
    }
    files.extend(observer.files);

    let logits = net.forward_logits(&grid_input)?;
    let target_p1: Vec<f64> = (0..logits.rows())
        .map(|r| imitation_core::net::softmax(logits.row(r))[1])
        .collect();
    let target_path = cfg.out_dir.join("grid_target.csv");
    write_grid_csv(&target_path, &grid, &target_p1)?;
    files.push(target_path);

    let report_path = cfg.out_dir.join("report.csv");
    write_report_csv(&report_path, &report)?;
    files.push(report_path);

    let model_path = cfg.out_dir.join("model.bin");
    save_mlp(&model_path, &net)?;
    files.push(model_path);

    let manifest_path = cfg.out_dir.join("manifest.json");
    write_manifest(&manifest_path, "boundary", &cfg.echo(), &files)?;
    files.push(manifest_path);

    let agreement = ref_p1
        .iter()
        .zip(&target_p1)
        .filter(|(r, t)| (**r > 0.5) == (**t > 0.5))
        .count() as f64
        / ref_p1.len() as f64;
    println!(
        "boundary: strategy={strategy} seed={seed} grid={res}x{res} reference/target argmax agreement={agreement:.4}",
        res = cfg.boundary_resolution,
    );
    Ok(files)
}
