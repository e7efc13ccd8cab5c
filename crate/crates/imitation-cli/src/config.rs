//! Experiment configuration: a flat `key = value` text format with built-in
//! presets and CLI-flag overrides (flags win over file keys, file keys win
//! over the preset baseline).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use imitation_core::engine::UpdateMode;
use imitation_core::gp::GpMode;

use crate::error::{CliError, Result};

/// The five benchmark strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Naive supervised training of the target network.
    Nn,
    /// The GP ensemble itself, evaluated directly.
    Gp,
    /// Imitation loss on a fixed pseudo set.
    Imitation,
    /// Imitation loss plus pseudo-example optimization.
    ImitationOpt,
    /// Imitation loss, pseudo-example optimization and fidelity weighting.
    ImitationOptFid,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Nn,
        Strategy::Gp,
        Strategy::Imitation,
        Strategy::ImitationOpt,
        Strategy::ImitationOptFid,
    ];

    #[must_use]
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Nn => "nn",
            Strategy::Gp => "gp",
            Strategy::Imitation => "imitation",
            Strategy::ImitationOpt => "imitation-opt",
            Strategy::ImitationOptFid => "imitation-opt-fid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(Strategy::Nn),
            "gp" => Ok(Strategy::Gp),
            "imitation" => Ok(Strategy::Imitation),
            "imitation-opt" => Ok(Strategy::ImitationOpt),
            "imitation-opt-fid" => Ok(Strategy::ImitationOptFid),
            other => Err(CliError::config(format!(
                "strategy: unknown value '{other}' (want nn | gp | imitation | imitation-opt | imitation-opt-fid)"
            ))),
        }
    }

    #[must_use]
    pub fn uses_pseudo(self) -> bool {
        matches!(
            self,
            Strategy::Imitation | Strategy::ImitationOpt | Strategy::ImitationOptFid
        )
    }

    #[must_use]
    pub fn optimizes_pseudo(self) -> bool {
        matches!(self, Strategy::ImitationOpt | Strategy::ImitationOptFid)
    }

    #[must_use]
    pub fn uses_fidelity(self) -> bool {
        matches!(self, Strategy::ImitationOptFid)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSpec {
    Banana { path: PathBuf },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseudoInit {
    /// Interpolation between labeled pairs plus Gaussian jitter.
    InterpGauss,
    /// Dense 2-d grid over the data bounding box (banana protocol).
    DenseGrid,
}

/// Fully resolved configuration with every default materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub dataset: DatasetSpec,
    pub embed_dim: usize,
    pub embed_seed: u64,
    pub labels_per_class: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub hidden_dims: Vec<usize>,
    pub gp_mode: GpMode,
    pub gp_noise: f64,
    pub gp_top_k: usize,
    pub gp_lengthscale_factors: Vec<f64>,
    pub gp_variances: Vec<f64>,
    pub lambda1: f64,
    pub lambda_bar2: f64,
    /// `None` means `lambda_hat2_factor * lambda_bar2` (tracking any
    /// schedule).
    pub lambda_hat2: Option<f64>,
    /// Ratio of the fidelity upper bound to the mean soft weight, used when
    /// `lambda_hat2` is not set explicitly.
    pub lambda_hat2_factor: f64,
    /// Maps total labeled count to a soft-loss weight; empty = no schedule.
    pub lambda_bar2_schedule: Vec<(usize, f64)>,
    pub update_mode: UpdateMode,
    pub pseudo_lr: f64,
    pub target_lr: f64,
    pub steps: usize,
    pub epochs_per_step: usize,
    pub batch_size: usize,
    pub pseudo_init: PseudoInit,
    pub pseudo_count: usize,
    pub interp_fraction: f64,
    pub jitter_scale: f64,
    pub grid_resolution: usize,
    pub boundary_resolution: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub track_test_accuracy: bool,
}

impl ResolvedConfig {
    /// Soft-loss weight for a run with `total_labeled` examples: the
    /// schedule entry when one matches, otherwise the flat `lambda_bar2`.
    #[must_use]
    pub fn lambda_bar2_for(&self, total_labeled: usize) -> f64 {
        self.lambda_bar2_schedule
            .iter()
            .find(|(n, _)| *n == total_labeled)
            .map_or(self.lambda_bar2, |(_, v)| *v)
    }

    /// Upper fidelity bound for a given effective soft weight.
    #[must_use]
    pub fn lambda_hat2_for(&self, lambda_bar2: f64) -> f64 {
        self.lambda_hat2
            .unwrap_or(self.lambda_hat2_factor * lambda_bar2)
    }

    /// All keys with materialized values, for `validate` echo and the run
    /// manifest.
    #[must_use]
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let join_usize = |v: &[usize]| {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        };
        let join_f64 =
            |v: &[f64]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        match &self.dataset {
            DatasetSpec::Banana { path } => {
                map.insert("dataset".into(), "banana".into());
                map.insert("banana_path".into(), path.display().to_string());
            }
            DatasetSpec::Idx { train_images, train_labels, test_images, test_labels } => {
                map.insert("dataset".into(), "idx".into());
                map.insert("idx_train_images".into(), train_images.display().to_string());
                map.insert("idx_train_labels".into(), train_labels.display().to_string());
                map.insert("idx_test_images".into(), test_images.display().to_string());
                map.insert("idx_test_labels".into(), test_labels.display().to_string());
            }
        }
        map.insert("embed_dim".into(), self.embed_dim.to_string());
        map.insert("embed_seed".into(), self.embed_seed.to_string());
        map.insert("labels_per_class".into(), join_usize(&self.labels_per_class));
        map.insert(
            "strategy".into(),
            self.strategies.iter().map(|s| s.name()).collect::<Vec<_>>().join(","),
        );
        map.insert("hidden_dims".into(), join_usize(&self.hidden_dims));
        map.insert(
            "gp_mode".into(),
            match self.gp_mode {
                GpMode::LabelRegression => "regression".into(),
                GpMode::LaplaceBinary => "laplace".to_string(),
            },
        );
        map.insert("gp_noise".into(), self.gp_noise.to_string());
        map.insert("gp_top_k".into(), self.gp_top_k.to_string());
        map.insert("gp_lengthscale_factors".into(), join_f64(&self.gp_lengthscale_factors));
        map.insert("gp_variances".into(), join_f64(&self.gp_variances));
        map.insert("lambda1".into(), self.lambda1.to_string());
        map.insert("lambda_bar2".into(), self.lambda_bar2.to_string());
        map.insert(
            "lambda_hat2".into(),
            self.lambda_hat2_for(self.lambda_bar2).to_string(),
        );
        map.insert("lambda_hat2_factor".into(), self.lambda_hat2_factor.to_string());
        map.insert(
            "lambda_bar2_schedule".into(),
            self.lambda_bar2_schedule
                .iter()
                .map(|(n, v)| format!("{n}:{v}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert(
            "update_mode".into(),
            match self.update_mode {
                UpdateMode::Gradient => "gradient".into(),
                UpdateMode::Sign => "sign".to_string(),
            },
        );
        map.insert("pseudo_lr".into(), self.pseudo_lr.to_string());
        map.insert("target_lr".into(), self.target_lr.to_string());
        map.insert("steps".into(), self.steps.to_string());
        map.insert("epochs_per_step".into(), self.epochs_per_step.to_string());
        map.insert("batch_size".into(), self.batch_size.to_string());
        map.insert(
            "pseudo_init".into(),
            match self.pseudo_init {
                PseudoInit::InterpGauss => "interp-gauss".into(),
                PseudoInit::DenseGrid => "dense-grid".to_string(),
            },
        );
        map.insert("pseudo_count".into(), self.pseudo_count.to_string());
        map.insert("interp_fraction".into(), self.interp_fraction.to_string());
        map.insert("jitter_scale".into(), self.jitter_scale.to_string());
        map.insert("grid_resolution".into(), self.grid_resolution.to_string());
        map.insert("boundary_resolution".into(), self.boundary_resolution.to_string());
        map.insert(
            "seeds".into(),
            self.seeds.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        );
        map.insert("out_dir".into(), self.out_dir.display().to_string());
        map.insert("track_test_accuracy".into(), self.track_test_accuracy.to_string());
        map
    }
}

/// Flag-level overrides; flags always win.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seeds: Vec<u64>,
    pub strategy: Option<String>,
    pub labels_per_class: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

pub const PRESET_NAMES: [&str; 3] = ["banana-fig2", "banana-fig2-fast", "mnist-table1-desk"];

fn preset_text(name: &str) -> Result<&'static str> {
    match name {
        "banana-fig2" => Ok(include_str!("../presets/banana-fig2.conf")),
        "banana-fig2-fast" => Ok(include_str!("../presets/banana-fig2-fast.conf")),
        "mnist-table1-desk" => Ok(include_str!("../presets/mnist-table1-desk.conf")),
        other => Err(CliError::config(format!(
            "unknown preset '{other}' (available: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// `key = value` pairs in file order, with line numbers for diagnostics.
fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String, usize)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(CliError::config(format!(
                "{origin}:{line}: expected 'key = value', found '{trimmed}'"
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string(), line));
    }
    Ok(pairs)
}

const KNOWN_KEYS: [&str; 37] = [
    "preset",
    "dataset",
    "banana_path",
    "idx_train_images",
    "idx_train_labels",
    "idx_test_images",
    "idx_test_labels",
    "embed_dim",
    "embed_seed",
    "labels_per_class",
    "strategy",
    "hidden_dims",
    "gp_mode",
    "gp_noise",
    "gp_top_k",
    "gp_lengthscale_factors",
    "gp_variances",
    "lambda1",
    "lambda_bar2",
    "lambda_hat2",
    "lambda_hat2_factor",
    "lambda_bar2_schedule",
    "update_mode",
    "pseudo_lr",
    "target_lr",
    "steps",
    "epochs_per_step",
    "batch_size",
    "pseudo_init",
    "pseudo_count",
    "interp_fraction",
    "jitter_scale",
    "grid_resolution",
    "boundary_resolution",
    "seeds",
    "out_dir",
    "track_test_accuracy",
];

/// Raw key/value store with provenance; later inserts win.
#[derive(Debug, Default)]
struct KeyStore {
    values: BTreeMap<String, String>,
}

impl KeyStore {
    fn absorb(&mut self, pairs: &[(String, String, usize)], origin: &str) -> Result<()> {
        for (key, value, line) in pairs {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::config(format!(
                    "{origin}:{line}: unknown key '{key}'"
                )));
            }
            self.values.insert(key.clone(), value.clone());
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| CliError::config(format!("{key}: cannot parse '{value}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| CliError::config(format!("{key}: cannot parse '{s}'")))
        })
        .collect()
}

/// Builds the resolved configuration: defaults, then preset, then config
/// file, then flag overrides.
pub fn resolve(
    config_path: Option<&Path>,
    overrides: &Overrides,
) -> Result<ResolvedConfig> {
    let file_pairs = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            parse_pairs(&text, &path.display().to_string())?
        }
        None => Vec::new(),
    };

    // Preset choice: flag wins over a file `preset` key.
    let preset_name = overrides.preset.clone().or_else(|| {
        file_pairs
            .iter()
            .rev()
            .find(|(k, _, _)| k == "preset")
            .map(|(_, v, _)| v.clone())
    });

    let mut store = KeyStore::default();
    if let Some(name) = &preset_name {
        let pairs = parse_pairs(preset_text(name)?, &format!("preset {name}"))?;
        store.absorb(&pairs, &format!("preset {name}"))?;
    }
    let origin = config_path.map_or_else(|| "<flags>".to_string(), |p| p.display().to_string());
    store.absorb(&file_pairs, &origin)?;

    let get_or = |key: &str, default: &str| -> String {
        store.get(key).unwrap_or(default).to_string()
    };

    // Dataset block.
    let dataset = match store.get("dataset") {
        None => {
            return Err(CliError::config(
                "dataset: missing (set 'dataset = banana' or 'dataset = idx', or use a preset)",
            ))
        }
        Some("banana") => {
            let path = store.get("banana_path").ok_or_else(|| {
                CliError::config("banana_path: required when dataset = banana")
            })?;
            DatasetSpec::Banana { path: PathBuf::from(path) }
        }
        Some("idx") => {
            let need = |key: &str| -> Result<PathBuf> {
                store
                    .get(key)
                    .map(PathBuf::from)
                    .ok_or_else(|| CliError::config(format!("{key}: required when dataset = idx")))
            };
            DatasetSpec::Idx {
                train_images: need("idx_train_images")?,
                train_labels: need("idx_train_labels")?,
                test_images: need("idx_test_images")?,
                test_labels: need("idx_test_labels")?,
            }
        }
        Some(other) => {
            return Err(CliError::config(format!(
                "dataset: unknown value '{other}' (want banana | idx)"
            )))
        }
    };

    let strategies: Vec<Strategy> = match &overrides.strategy {
        Some(s) => vec![Strategy::parse(s)?],
        None => parse_list::<String>("strategy", &get_or("strategy", "imitation-opt-fid"))?
            .iter()
            .map(|s| Strategy::parse(s))
            .collect::<Result<_>>()?,
    };
    if strategies.is_empty() {
        return Err(CliError::config("strategy: empty list"));
    }

    let labels_per_class: Vec<usize> = match overrides.labels_per_class {
        Some(n) => vec![n],
        None => parse_list("labels_per_class", &get_or("labels_per_class", "5"))?,
    };
    if labels_per_class.is_empty() || labels_per_class.contains(&0) {
        return Err(CliError::config("labels_per_class: entries must be >= 1"));
    }

    let seeds: Vec<u64> = if overrides.seeds.is_empty() {
        parse_list("seeds", &get_or("seeds", "0,1,2,3,4"))?
    } else {
        overrides.seeds.clone()
    };
    if seeds.is_empty() {
        return Err(CliError::config("seeds: at least one seed required"));
    }

    let gp_mode = match get_or("gp_mode", "regression").as_str() {
        "regression" => GpMode::LabelRegression,
        "laplace" => GpMode::LaplaceBinary,
        other => {
            return Err(CliError::config(format!(
                "gp_mode: unknown value '{other}' (want regression | laplace)"
            )))
        }
    };
    let update_mode = match get_or("update_mode", "gradient").as_str() {
        "gradient" => UpdateMode::Gradient,
        "sign" => UpdateMode::Sign,
        other => {
            return Err(CliError::config(format!(
                "update_mode: unknown value '{other}' (want gradient | sign)"
            )))
        }
    };
    let pseudo_init = match get_or("pseudo_init", "interp-gauss").as_str() {
        "interp-gauss" => PseudoInit::InterpGauss,
        "dense-grid" => PseudoInit::DenseGrid,
        other => {
            return Err(CliError::config(format!(
                "pseudo_init: unknown value '{other}' (want interp-gauss | dense-grid)"
            )))
        }
    };

    let lambda_bar2_schedule: Vec<(usize, f64)> = {
        let raw = get_or("lambda_bar2_schedule", "");
        if raw.is_empty() {
            Vec::new()
        } else {
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|entry| {
                    let (n, v) = entry.split_once(':').ok_or_else(|| {
                        CliError::config(format!(
                            "lambda_bar2_schedule: expected 'count:weight', found '{entry}'"
                        ))
                    })?;
                    Ok((
                        parse_scalar::<usize>("lambda_bar2_schedule", n.trim())?,
                        parse_scalar::<f64>("lambda_bar2_schedule", v.trim())?,
                    ))
                })
                .collect::<Result<_>>()?
        }
    };

    let cfg = ResolvedConfig {
        dataset,
        embed_dim: parse_scalar("embed_dim", &get_or("embed_dim", "0"))?,
        embed_seed: parse_scalar("embed_seed", &get_or("embed_seed", "1234"))?,
        labels_per_class,
        strategies,
        hidden_dims: parse_list("hidden_dims", &get_or("hidden_dims", "256,256"))?,
        gp_mode,
        gp_noise: parse_scalar("gp_noise", &get_or("gp_noise", "0.01"))?,
        gp_top_k: parse_scalar("gp_top_k", &get_or("gp_top_k", "3"))?,
        gp_lengthscale_factors: parse_list(
            "gp_lengthscale_factors",
            &get_or("gp_lengthscale_factors", "0.5,1,2,4,8"),
        )?,
        gp_variances: parse_list("gp_variances", &get_or("gp_variances", "0.5,1,2"))?,
        lambda1: parse_scalar("lambda1", &get_or("lambda1", "1"))?,
        lambda_bar2: parse_scalar("lambda_bar2", &get_or("lambda_bar2", "1"))?,
        lambda_hat2: match store.get("lambda_hat2") {
            Some(v) => Some(parse_scalar("lambda_hat2", v)?),
            None => None,
        },
        lambda_hat2_factor: parse_scalar(
            "lambda_hat2_factor",
            &get_or("lambda_hat2_factor", "10"),
        )?,
        lambda_bar2_schedule,
        update_mode,
        pseudo_lr: parse_scalar("pseudo_lr", &get_or("pseudo_lr", "0.05"))?,
        target_lr: parse_scalar("target_lr", &get_or("target_lr", "0.001"))?,
        steps: parse_scalar("steps", &get_or("steps", "4"))?,
        epochs_per_step: parse_scalar("epochs_per_step", &get_or("epochs_per_step", "50"))?,
        batch_size: parse_scalar("batch_size", &get_or("batch_size", "100"))?,
        pseudo_init,
        pseudo_count: parse_scalar("pseudo_count", &get_or("pseudo_count", "250"))?,
        interp_fraction: parse_scalar("interp_fraction", &get_or("interp_fraction", "0.5"))?,
        jitter_scale: parse_scalar("jitter_scale", &get_or("jitter_scale", "0.25"))?,
        grid_resolution: parse_scalar("grid_resolution", &get_or("grid_resolution", "50"))?,
        boundary_resolution: parse_scalar(
            "boundary_resolution",
            &get_or("boundary_resolution", "60"),
        )?,
        seeds,
        out_dir: overrides
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(get_or("out_dir", "out"))),
        track_test_accuracy: parse_scalar(
            "track_test_accuracy",
            &get_or("track_test_accuracy", "false"),
        )?,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ResolvedConfig) -> Result<()> {
    let positive = |name: &str, v: f64| -> Result<()> {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(CliError::config(format!("{name}: must be > 0, got {v}")))
        }
    };
    if !(cfg.lambda1 >= 0.0 && cfg.lambda1.is_finite()) {
        return Err(CliError::config(format!(
            "lambda1: must be >= 0, got {}",
            cfg.lambda1
        )));
    }
    positive("lambda_bar2", cfg.lambda_bar2)?;
    if cfg.lambda_hat2_factor < 1.0 || !cfg.lambda_hat2_factor.is_finite() {
        return Err(CliError::config(format!(
            "lambda_hat2_factor: must be >= 1, got {}",
            cfg.lambda_hat2_factor
        )));
    }
    if let Some(hat) = cfg.lambda_hat2 {
        let bars: Vec<f64> = std::iter::once(cfg.lambda_bar2)
            .chain(cfg.lambda_bar2_schedule.iter().map(|(_, v)| *v))
            .collect();
        for bar in bars {
            if hat < bar {
                return Err(CliError::config(format!(
                    "lambda_hat2: must be >= lambda_bar2 ({hat} < {bar})"
                )));
            }
        }
    }
    for (_, v) in &cfg.lambda_bar2_schedule {
        positive("lambda_bar2_schedule", *v)?;
    }
    positive("pseudo_lr", cfg.pseudo_lr)?;
    positive("target_lr", cfg.target_lr)?;
    positive("gp_noise", cfg.gp_noise)?;
    if cfg.steps == 0 || cfg.epochs_per_step == 0 || cfg.batch_size == 0 {
        return Err(CliError::config(
            "steps, epochs_per_step and batch_size must all be >= 1",
        ));
    }
    if cfg.hidden_dims.is_empty() || cfg.hidden_dims.contains(&0) {
        return Err(CliError::config("hidden_dims: entries must be >= 1"));
    }
    let grid = cfg.gp_lengthscale_factors.len() * cfg.gp_variances.len();
    if grid == 0 {
        return Err(CliError::config("gp grid: needs at least one kernel"));
    }
    if cfg.gp_top_k == 0 || cfg.gp_top_k > grid {
        return Err(CliError::config(format!(
            "gp_top_k: must be in 1..={grid}, got {}",
            cfg.gp_top_k
        )));
    }
    for &f in cfg.gp_lengthscale_factors.iter().chain(&cfg.gp_variances) {
        positive("gp grid entry", f)?;
    }
    if !(0.0..=1.0).contains(&cfg.interp_fraction) {
        return Err(CliError::config(format!(
            "interp_fraction: must be in [0, 1], got {}",
            cfg.interp_fraction
        )));
    }
    if cfg.jitter_scale < 0.0 {
        return Err(CliError::config("jitter_scale: must be >= 0"));
    }
    if cfg.pseudo_count == 0 && cfg.strategies.iter().any(|s| s.uses_pseudo()) {
        return Err(CliError::config(
            "pseudo_count: must be >= 1 for imitation strategies",
        ));
    }
    if cfg.grid_resolution < 2 || cfg.boundary_resolution < 2 {
        return Err(CliError::config("grid resolutions must be >= 2"));
    }
    if cfg.pseudo_init == PseudoInit::DenseGrid
        && !matches!(cfg.dataset, DatasetSpec::Banana { .. })
    {
        return Err(CliError::config(
            "pseudo_init = dense-grid requires the 2-d banana dataset",
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_config(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("exp.conf");
        std::fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn minimal_banana_config_resolves_with_defaults() {
        let (_d, path) = write_config("dataset = banana\nbanana_path = b.csv\n");
        let cfg = resolve(Some(&path), &Overrides::default()).unwrap();
        assert_eq!(cfg.labels_per_class, vec![5]);
        assert_eq!(cfg.strategies, vec![Strategy::ImitationOptFid]);
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(cfg.lambda_hat2_for(cfg.lambda_bar2), 10.0);
    }

    #[test]
    fn empty_config_is_rejected() {
        let (_d, path) = write_config("");
        let err = resolve(Some(&path), &Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("dataset"));
    }

    #[test]
    fn unknown_key_is_named() {
        let (_d, path) = write_config("dataset = banana\nbanana_path = b.csv\nbogus_key = 1\n");
        let err = resolve(Some(&path), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn preset_plus_overrides() {
        let (_d, path) = write_config("preset = mnist-table1-desk\nepochs_per_step = 2\n");
        let cfg = resolve(Some(&path), &Overrides::default()).unwrap();
        assert_eq!(cfg.epochs_per_step, 2); // file overrides preset
        assert_eq!(cfg.strategies.len(), 5); // preset sweep kept
        assert_eq!(cfg.labels_per_class, vec![1, 2, 5, 10, 20]);
        assert_eq!(cfg.lambda_bar2_for(10), 100.0);
        assert_eq!(cfg.lambda_bar2_for(200), 1.0);
        assert_eq!(cfg.lambda_bar2_for(12345), cfg.lambda_bar2);

        let over = Overrides {
            strategy: Some("nn".into()),
            labels_per_class: Some(1),
            seeds: vec![7],
            ..Overrides::default()
        };
        let cfg = resolve(Some(&path), &over).unwrap();
        assert_eq!(cfg.strategies, vec![Strategy::Nn]);
        assert_eq!(cfg.labels_per_class, vec![1]);
        assert_eq!(cfg.seeds, vec![7]);
    }

    #[test]
    fn preset_flag_beats_file_preset() {
        let (_d, path) = write_config("preset = mnist-table1-desk\n");
        let over = Overrides {
            preset: Some("banana-fig2-fast".into()),
            ..Overrides::default()
        };
        let cfg = resolve(Some(&path), &over).unwrap();
        assert!(matches!(cfg.dataset, DatasetSpec::Banana { .. }));
    }

    #[test]
    fn echo_materializes_lambda_hat2_default() {
        let (_d, path) =
            write_config("dataset = banana\nbanana_path = b.csv\nlambda_bar2 = 3\n");
        let cfg = resolve(Some(&path), &Overrides::default()).unwrap();
        let echo = cfg.echo();
        assert_eq!(echo["lambda_hat2"], "30");
    }

    #[test]
    fn cross_field_validation() {
        let (_d, path) = write_config(
            "dataset = banana\nbanana_path = b.csv\nlambda_bar2 = 5\nlambda_hat2 = 1\n",
        );
        assert!(resolve(Some(&path), &Overrides::default()).is_err());

        let (_d, path) = write_config("dataset = banana\nbanana_path = b.csv\ngp_top_k = 99\n");
        let err = resolve(Some(&path), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("gp_top_k"));

        let (_d, path) = write_config(
            "dataset = idx\nidx_train_images = a\nidx_train_labels = b\nidx_test_images = c\nidx_test_labels = d\npseudo_init = dense-grid\n",
        );
        let err = resolve(Some(&path), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("dense-grid"));
    }

    #[test]
    fn all_presets_resolve() {
        for name in PRESET_NAMES {
            let over = Overrides { preset: Some(name.into()), ..Overrides::default() };
            let cfg = resolve(None, &over).unwrap();
            assert!(!cfg.seeds.is_empty(), "{name}");
        }
    }

    #[test]
    fn bad_syntax_reports_line() {
        let (_d, path) = write_config("dataset = banana\nthis is not a pair\n");
        let err = resolve(Some(&path), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }
}
