//! The imitation training engine.
//!
//! Combines a hinge loss on the few labeled examples with a fidelity-weighted
//! KL divergence between reference and target predictions on pseudo examples.
//! Targets descend this loss; pseudo examples ascend it. Training runs in
//! steps: within a step the *current* pseudo set is frozen and trained
//! against while a same-size *next* set is moved by gradient (or sign)
//! ascent; at step boundaries the current set is absorbed into the next one,
//! growing it by the initial set size.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{make_grid, DataError, Dataset};
use crate::gp::{GpEnsemble, GpError};
use crate::linalg::{LinalgError, Matrix};
use crate::net::{hinge_hard_loss, kl_soft_loss, ForwardTrace, Mlp, NetError, NetGrads};
use crate::optim::{AdamState, NadamState, OptimError};

#[derive(Debug, Clone, PartialEq)]
pub enum EngineError {
    /// Configuration violates an invariant; the message names the field.
    BadConfig(&'static str),
    /// Pseudo examples are present but no reference model was supplied.
    MissingReference,
    /// Interpolation needs at least two labeled examples.
    TooFewLabeled { have: usize },
    /// The loss became non-finite; carries the step and epoch.
    NonFiniteLoss { step: usize, epoch: usize },
    Net(NetError),
    Gp(GpError),
    Optim(OptimError),
    Data(DataError),
    Linalg(LinalgError),
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::BadConfig(msg) => write!(f, "bad config: {msg}"),
            EngineError::MissingReference => {
                write!(f, "pseudo examples supplied without a reference model")
            }
            EngineError::TooFewLabeled { have } => {
                write!(f, "interpolation needs >= 2 labeled examples, have {have}")
            }
            EngineError::NonFiniteLoss { step, epoch } => {
                write!(f, "non-finite loss at step {step}, epoch {epoch}")
            }
            EngineError::Net(e) => write!(f, "{e}"),
            EngineError::Gp(e) => write!(f, "{e}"),
            EngineError::Optim(e) => write!(f, "{e}"),
            EngineError::Data(e) => write!(f, "{e}"),
            EngineError::Linalg(e) => write!(f, "{e}"),
        }
    }
}

impl From<NetError> for EngineError {
    fn from(e: NetError) -> Self {
        EngineError::Net(e)
    }
}
impl From<GpError> for EngineError {
    fn from(e: GpError) -> Self {
        EngineError::Gp(e)
    }
}
impl From<OptimError> for EngineError {
    fn from(e: OptimError) -> Self {
        EngineError::Optim(e)
    }
}
impl From<DataError> for EngineError {
    fn from(e: DataError) -> Self {
        EngineError::Data(e)
    }
}
impl From<LinalgError> for EngineError {
    fn from(e: LinalgError) -> Self {
        EngineError::Linalg(e)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EngineError {}

/// How pseudo examples move against the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// One Adam ascent step on the input gradient.
    Gradient,
    /// Fast-gradient-sign step: `x <- x + lr * sign(grad)`.
    Sign,
}

/// One pseudo example: a synthetic input carrying the reference's soft
/// prediction, uncertainty, and fidelity weight. Members of the *next* set
/// also carry the Adam state that moves them.
#[derive(Debug, Clone)]
pub struct PseudoExample {
    pub x: Vec<f64>,
    pub ref_probs: Vec<f64>,
    pub sigma: f64,
    pub weight: f64,
    pub optimizer: Option<AdamState>,
}

/// The frozen current set and the trainable next set.
#[derive(Debug, Clone)]
pub struct PseudoSets {
    current: Vec<PseudoExample>,
    next: Vec<PseudoExample>,
    step_index: usize,
    n0: usize,
}

impl PseudoSets {
    /// Builds step-0 sets: `current` is the initial examples, `next` a
    /// carbon copy carrying fresh optimizer state.
    pub fn new(initial: Vec<PseudoExample>, pseudo_lr: f64) -> Result<Self, EngineError> {
        let n0 = initial.len();
        let mut next = initial.clone();
        for p in next.iter_mut() {
            p.optimizer = Some(AdamState::new(p.x.len(), pseudo_lr)?);
        }
        let mut current = initial;
        for p in current.iter_mut() {
            p.optimizer = None;
        }
        Ok(PseudoSets { current, next, step_index: 0, n0 })
    }

    /// Empty sets; training degenerates to plain supervised updates.
    #[must_use]
    pub fn empty() -> Self {
        PseudoSets { current: Vec::new(), next: Vec::new(), step_index: 0, n0: 0 }
    }

    #[must_use]
    pub fn current(&self) -> &[PseudoExample] {
        &self.current
    }

    #[must_use]
    pub fn next(&self) -> &[PseudoExample] {
        &self.next
    }

    pub fn next_mut(&mut self) -> &mut [PseudoExample] {
        &mut self.next
    }

    #[must_use]
    pub fn step_index(&self) -> usize {
        self.step_index
    }

    #[must_use]
    pub fn initial_size(&self) -> usize {
        self.n0
    }

    fn assign_weights(&mut self, cfg: &ImitationConfig) -> f64 {
        let sigmas: Vec<f64> = self.current.iter().map(|p| p.sigma).collect();
        let sigma_bar = if sigmas.is_empty() {
            0.0
        } else {
            sigmas.iter().sum::<f64>() / sigmas.len() as f64
        };
        let weights = if cfg.fidelity_enabled {
            fidelity_weights(&sigmas, cfg.lambda_hat2, cfg.lambda_bar2)
        } else {
            vec![cfg.lambda_bar2; sigmas.len()]
        };
        for (p, w) in self.current.iter_mut().zip(weights) {
            p.weight = w;
        }
        sigma_bar
    }
}

/// Absorbs the moved next set into the current set and starts a new next set
/// as a copy with fresh optimizer state. Duplicates are kept; the step index
/// advances. `|current|` grows by `n0`; `|next|` stays `n0`.
pub fn merge_and_advance(sets: PseudoSets, pseudo_lr: f64) -> Result<PseudoSets, EngineError> {
    let PseudoSets { mut current, next, step_index, n0 } = sets;
    let mut new_next = next.clone();
    for p in new_next.iter_mut() {
        p.optimizer = Some(AdamState::new(p.x.len(), pseudo_lr)?);
    }
    current.extend(next.into_iter().map(|mut p| {
        p.optimizer = None;
        p
    }));
    Ok(PseudoSets { current, next: new_next, step_index: step_index + 1, n0 })
}

/// Hyperparameters for one imitation training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ImitationConfig {
    /// Weight of the supervised hinge term.
    pub lambda1: f64,
    /// Soft-loss weight at mean uncertainty (and the flat weight when
    /// fidelity is disabled).
    pub lambda_bar2: f64,
    /// Upper bound of the fidelity weights.
    pub lambda_hat2: f64,
    pub fidelity_enabled: bool,
    pub pseudo_optimize_enabled: bool,
    pub update_mode: UpdateMode,
    /// Ascent rate for pseudo examples (Adam lr, or the sign-step size).
    pub pseudo_lr: f64,
    /// Nadam lr for the target parameters.
    pub target_lr: f64,
    pub steps: usize,
    pub epochs_per_step: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl ImitationConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(EngineError::BadConfig("lambda1 must be >= 0"));
        }
        if !(self.lambda_bar2 > 0.0 && self.lambda_bar2.is_finite()) {
            return Err(EngineError::BadConfig("lambda_bar2 must be > 0"));
        }
        if !(self.lambda_hat2 >= self.lambda_bar2 && self.lambda_hat2.is_finite()) {
            return Err(EngineError::BadConfig("lambda_hat2 must be >= lambda_bar2"));
        }
        if !(self.pseudo_lr > 0.0 && self.pseudo_lr.is_finite()) {
            return Err(EngineError::BadConfig("pseudo_lr must be > 0"));
        }
        if !(self.target_lr > 0.0 && self.target_lr.is_finite()) {
            return Err(EngineError::BadConfig("target_lr must be > 0"));
        }
        if self.steps == 0 {
            return Err(EngineError::BadConfig("steps must be >= 1"));
        }
        if self.epochs_per_step == 0 {
            return Err(EngineError::BadConfig("epochs_per_step must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(EngineError::BadConfig("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub step: usize,
    pub epoch: usize,
    pub hard_loss: f64,
    pub soft_loss: f64,
    pub current_size: usize,
    pub test_accuracy: Option<f64>,
}

/// Per-epoch losses plus the per-step mean reference uncertainty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub sigma_bars: Vec<f64>,
}

/// Step-boundary hook; lets callers snapshot pseudo sets without the engine
/// knowing about files.
pub trait TrainObserver {
    /// Called at the start of every training step, after fidelity weights
    /// have been assigned to the current set.
    fn on_step_start(&mut self, _step: usize, _sets: &PseudoSets) {}
    /// Called once after the last step completes.
    fn on_train_end(&mut self, _sets: &PseudoSets) {}
}

/// Observer that does nothing.
pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Eq.-4 fidelity weights: `w_n = hat * exp(-ln(hat/bar) * sigma_n / mean)`.
///
/// At `sigma_n = mean(sigmas)` the weight is exactly `bar`; at zero
/// uncertainty it is `hat`. A zero mean uncertainty (all sigmas zero) is
/// degenerate certainty: every weight falls back to `bar`.
#[must_use]
pub fn fidelity_weights(sigmas: &[f64], lambda_hat2: f64, lambda_bar2: f64) -> Vec<f64> {
    if sigmas.is_empty() {
        return Vec::new();
    }
    let sigma_bar: f64 = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
    if sigma_bar == 0.0 {
        return vec![lambda_bar2; sigmas.len()];
    }
    let ln_ratio = libm::log(lambda_hat2 / lambda_bar2);
    sigmas
        .iter()
        .map(|&s| lambda_hat2 * libm::exp(-ln_ratio * s / sigma_bar))
        .collect()
}

/// Pseudo-example initialization: a mixture of pairwise interpolation and
/// Gaussian jitter around labeled examples.
///
/// `interp_fraction` of the points are `u*x_i + (1-u)*x_j` for random
/// distinct labeled pairs (any classes) and `u ~ U(0,1)`; the rest are
/// `x_i + noise` with per-dimension std `jitter_scale` times the labeled
/// set's per-dimension std. Deterministic in `seed`.
pub fn init_pseudo(
    labeled: &Dataset,
    count: usize,
    interp_fraction: f64,
    jitter_scale: f64,
    seed: u64,
) -> Result<Matrix, EngineError> {
    if labeled.is_empty() {
        return Err(EngineError::BadConfig("init_pseudo needs labeled examples"));
    }
    if count == 0 {
        return Err(EngineError::BadConfig("init_pseudo count must be >= 1"));
    }
    if !(0.0..=1.0).contains(&interp_fraction) {
        return Err(EngineError::BadConfig("interp_fraction must be in [0, 1]"));
    }
    let n_interp = libm::round(count as f64 * interp_fraction) as usize;
    let n_interp = n_interp.min(count);
    if n_interp > 0 && labeled.len() < 2 {
        return Err(EngineError::TooFewLabeled { have: labeled.len() });
    }
    let d = labeled.dim();
    let std = labeled.feature_std();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(count * d);
    for _ in 0..n_interp {
        let i = rng.random_range(0..labeled.len());
        let mut j = rng.random_range(0..labeled.len() - 1);
        if j >= i {
            j += 1;
        }
        let u: f64 = rng.random();
        for (a, b) in labeled.features.row(i).iter().zip(labeled.features.row(j)) {
            data.push(u * a + (1.0 - u) * b);
        }
    }
    for _ in n_interp..count {
        let i = rng.random_range(0..labeled.len());
        for (a, s) in labeled.features.row(i).iter().zip(&std) {
            let z: f64 = rng.sample(StandardNormal);
            data.push(a + jitter_scale * s * z);
        }
    }
    Ok(Matrix::from_vec(count, d, data)?)
}

/// Dense 2-d grid covering `bounds`, `resolution^2` points in row-major
/// order. The dense banana protocol's pseudo initialization.
pub fn dense_grid_pseudo(
    bounds: &[(f64, f64)],
    resolution: usize,
) -> Result<Matrix, EngineError> {
    if bounds.len() != 2 {
        return Err(EngineError::BadConfig("dense grid needs exactly 2-d bounds"));
    }
    Ok(make_grid(
        bounds[0].0,
        bounds[0].1,
        bounds[1].0,
        bounds[1].1,
        resolution,
    )?)
}

/// The imitation loss on one (labeled batch, pseudo batch) pair, with the
/// logit gradients needed to backpropagate it.
#[derive(Debug)]
pub struct LossEval {
    /// `hard_term + soft_term`.
    pub loss: f64,
    /// `(lambda1 / N_L) * sum hinge(y_n, f(x_n))`.
    pub hard_term: f64,
    /// `(1 / N_P) * sum w_n * KL(g_n || f(x_n))`.
    pub soft_term: f64,
    /// Trace and scaled logit gradients for the labeled batch, when the hard
    /// term was evaluated.
    pub labeled: Option<(ForwardTrace, Matrix)>,
    /// Trace and scaled logit gradients for the pseudo batch, when the soft
    /// term was evaluated.
    pub pseudo: Option<(ForwardTrace, Matrix)>,
}

/// Evaluates the imitation loss. Either batch may be empty (its term is
/// skipped); a zero `lambda1` also skips the labeled forward pass.
pub fn imitation_loss(
    net: &Mlp,
    labeled_x: &Matrix,
    labeled_y: &[usize],
    pseudo_x: &Matrix,
    pseudo_ref: &Matrix,
    pseudo_weights: &[f64],
    lambda1: f64,
) -> Result<LossEval, EngineError> {
    if labeled_x.rows() != labeled_y.len() {
        return Err(EngineError::BadConfig("labeled batch size mismatch"));
    }
    if pseudo_x.rows() != pseudo_ref.rows() || pseudo_x.rows() != pseudo_weights.len() {
        return Err(EngineError::BadConfig("pseudo batch size mismatch"));
    }

    let mut hard_term = 0.0;
    let mut labeled_out = None;
    if lambda1 > 0.0 && labeled_x.rows() > 0 {
        let n = labeled_x.rows();
        let scale = lambda1 / n as f64;
        let (logits, trace) = net.forward(labeled_x)?;
        let mut dlogits = Matrix::zeros(n, net.class_count());
        for r in 0..n {
            let (l, d) = hinge_hard_loss(labeled_y[r], logits.row(r))?;
            hard_term += scale * l;
            for (c, v) in d.iter().enumerate() {
                dlogits.set(r, c, scale * v);
            }
        }
        labeled_out = Some((trace, dlogits));
    }

    let mut soft_term = 0.0;
    let mut pseudo_out = None;
    if pseudo_x.rows() > 0 {
        let n = pseudo_x.rows();
        let inv_n = 1.0 / n as f64;
        let (logits, trace) = net.forward(pseudo_x)?;
        let mut dlogits = Matrix::zeros(n, net.class_count());
        for r in 0..n {
            let (l, d) = kl_soft_loss(pseudo_ref.row(r), logits.row(r))?;
            let w = pseudo_weights[r] * inv_n;
            soft_term += w * l;
            for (c, v) in d.iter().enumerate() {
                dlogits.set(r, c, w * v);
            }
        }
        pseudo_out = Some((trace, dlogits));
    }

    Ok(LossEval {
        loss: hard_term + soft_term,
        hard_term,
        soft_term,
        labeled: labeled_out,
        pseudo: pseudo_out,
    })
}

/// One ascent pass over the next set: each point moves to *increase*
/// `KL(g(x) || f(x))`, treating the reference prediction as a constant.
/// Afterwards, reference predictions and uncertainties are refreshed at the
/// moved points.
pub fn pseudo_update_pass(
    next: &mut [PseudoExample],
    net: &Mlp,
    reference: &GpEnsemble,
    mode: UpdateMode,
    lr: f64,
) -> Result<(), EngineError> {
    if next.is_empty() {
        return Ok(());
    }
    let d = next[0].x.len();
    let mut xs = Matrix::zeros(next.len(), d);
    for (i, p) in next.iter().enumerate() {
        xs.row_mut(i).copy_from_slice(&p.x);
    }
    let (logits, trace) = net.forward(&xs)?;
    let mut dlogits = Matrix::zeros(next.len(), net.class_count());
    for (i, p) in next.iter().enumerate() {
        let (_, dl) = kl_soft_loss(&p.ref_probs, logits.row(i))?;
        for (c, &v) in dl.iter().enumerate() {
            dlogits.set(i, c, v);
        }
    }
    let input_grads = net.backward_inputs(&trace, &dlogits)?;

    for (i, p) in next.iter_mut().enumerate() {
        let grad = input_grads.row(i);
        match mode {
            UpdateMode::Gradient => {
                let adam = p
                    .optimizer
                    .as_mut()
                    .ok_or(EngineError::BadConfig("next-set member lacks optimizer state"))?;
                adam.ascend(&mut p.x, grad)?;
            }
            UpdateMode::Sign => {
                if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
                    return Err(EngineError::Optim(OptimError::NonFiniteGradient { index }));
                }
                for (x, g) in p.x.iter_mut().zip(grad) {
                    *x += lr * g.signum();
                }
            }
        }
    }

    // Refresh the reference at the moved points.
    let mut moved = Matrix::zeros(next.len(), d);
    for (i, p) in next.iter().enumerate() {
        moved.row_mut(i).copy_from_slice(&p.x);
    }
    let preds = reference.predict_batch(&moved)?;
    for (p, pred) in next.iter_mut().zip(preds) {
        p.ref_probs = pred.probs;
        p.sigma = pred.sigma;
    }
    Ok(())
}

/// Builds pseudo examples at the given points with reference predictions
/// attached; weights start at `lambda_bar2` until the first step assigns
/// them.
pub fn pseudo_from_points(
    points: &Matrix,
    reference: &GpEnsemble,
    lambda_bar2: f64,
) -> Result<Vec<PseudoExample>, EngineError> {
    let preds = reference.predict_batch(points)?;
    Ok(points
        .data()
        .chunks(points.cols())
        .zip(preds)
        .map(|(row, pred)| PseudoExample {
            x: row.to_vec(),
            ref_probs: pred.probs,
            sigma: pred.sigma,
            weight: lambda_bar2,
            optimizer: None,
        })
        .collect())
}

/// Top-1 accuracy of the network on a dataset; ties break to the lower
/// class index.
pub fn evaluate_accuracy(net: &Mlp, ds: &Dataset) -> Result<f64, EngineError> {
    if ds.is_empty() {
        return Err(EngineError::BadConfig("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0usize;
    let chunk = 512;
    let mut start = 0;
    while start < ds.len() {
        let end = (start + chunk).min(ds.len());
        let idx: Vec<usize> = (start..end).collect();
        let batch = ds.subset(&idx);
        let logits = net.forward_logits(&batch.features)?;
        for r in 0..batch.len() {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            if best == batch.labels[r] {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / ds.len() as f64)
}

struct LayerOptimizers {
    weights: NadamState,
    bias: NadamState,
}

fn apply_target_update(
    net: &mut Mlp,
    opts: &mut [LayerOptimizers],
    grads: &NetGrads,
) -> Result<(), EngineError> {
    for ((layer, opt), g) in net.layers_mut().iter_mut().zip(opts.iter_mut()).zip(&grads.layers) {
        opt.weights.step(layer.weights.data_mut(), g.dw.data())?;
        opt.bias.step(&mut layer.bias, &g.db)?;
    }
    Ok(())
}

/// Runs the staged imitation training procedure.
///
/// Per step: fidelity weights are assigned over the frozen current set, then
/// `epochs_per_step` epochs run. Each epoch shuffles the current set into
/// minibatches of `batch_size`, pairs every minibatch with the full labeled
/// set for one Nadam update of the target, and (when enabled) finishes with
/// one ascent pass over the next set. Steps are separated by
/// [`merge_and_advance`].
///
/// With an empty pseudo set this degenerates to plain supervised training
/// (one full-batch update per epoch); `reference` may then be `None`.
pub fn train(
    labeled: &Dataset,
    reference: Option<&GpEnsemble>,
    net: Mlp,
    cfg: &ImitationConfig,
    initial_pseudo: &Matrix,
    test: Option<&Dataset>,
) -> Result<(Mlp, TrainReport), EngineError> {
    train_with_observer(labeled, reference, net, cfg, initial_pseudo, test, &mut NoopObserver)
}

/// [`train`] with a step-boundary observer.
pub fn train_with_observer(
    labeled: &Dataset,
    reference: Option<&GpEnsemble>,
    mut net: Mlp,
    cfg: &ImitationConfig,
    initial_pseudo: &Matrix,
    test: Option<&Dataset>,
    observer: &mut dyn TrainObserver,
) -> Result<(Mlp, TrainReport), EngineError> {
    cfg.validate()?;
    let has_pseudo = initial_pseudo.rows() > 0;
    if has_pseudo && initial_pseudo.cols() != net.input_dim() {
        return Err(EngineError::BadConfig("pseudo width does not match network input"));
    }
    if !labeled.is_empty() && labeled.dim() != net.input_dim() {
        return Err(EngineError::BadConfig("labeled width does not match network input"));
    }
    let supervised_active = cfg.lambda1 > 0.0 && !labeled.is_empty();
    if !has_pseudo && !supervised_active {
        return Err(EngineError::BadConfig(
            "nothing to train on: no pseudo examples and no active hard loss",
        ));
    }

    let mut sets = if has_pseudo {
        let reference = reference.ok_or(EngineError::MissingReference)?;
        let initial = pseudo_from_points(initial_pseudo, reference, cfg.lambda_bar2)?;
        PseudoSets::new(initial, cfg.pseudo_lr)?
    } else {
        PseudoSets::empty()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opts: Vec<LayerOptimizers> = net
        .layers()
        .iter()
        .map(|l| {
            Ok(LayerOptimizers {
                weights: NadamState::new(l.weights.data().len(), cfg.target_lr)?,
                bias: NadamState::new(l.bias.len(), cfg.target_lr)?,
            })
        })
        .collect::<Result<_, EngineError>>()?;

    let class_count = net.class_count();
    let dim = net.input_dim();
    let mut report = TrainReport::default();

    for step in 0..cfg.steps {
        let sigma_bar = sets.assign_weights(cfg);
        report.sigma_bars.push(sigma_bar);
        observer.on_step_start(step, &sets);

        for epoch in 0..cfg.epochs_per_step {
            let current_size = sets.current().len();
            let mut order: Vec<usize> = (0..current_size).collect();
            order.shuffle(&mut rng);
            let batches: Vec<&[usize]> = if current_size == 0 {
                vec![&[][..]]
            } else {
                order.chunks(cfg.batch_size).collect()
            };

            let mut epoch_hard = 0.0;
            let mut epoch_soft = 0.0;
            for batch in &batches {
                let m = batch.len();
                let mut px = Matrix::zeros(m, dim);
                let mut pref = Matrix::zeros(m, class_count);
                let mut pw = Vec::with_capacity(m);
                for (r, &idx) in batch.iter().enumerate() {
                    let p = &sets.current()[idx];
                    px.row_mut(r).copy_from_slice(&p.x);
                    pref.row_mut(r).copy_from_slice(&p.ref_probs);
                    pw.push(p.weight);
                }
                let eval = imitation_loss(
                    &net,
                    &labeled.features,
                    &labeled.labels,
                    &px,
                    &pref,
                    &pw,
                    cfg.lambda1,
                )?;
                if !eval.loss.is_finite() {
                    return Err(EngineError::NonFiniteLoss { step, epoch });
                }
                epoch_hard += eval.hard_term;
                epoch_soft += eval.soft_term;

                let mut total: Option<NetGrads> = None;
                for part in [eval.labeled, eval.pseudo].into_iter().flatten() {
                    let (grads, _) = net.backward(&part.0, &part.1)?;
                    match &mut total {
                        None => total = Some(grads),
                        Some(t) => t.add_assign(&grads),
                    }
                }
                if let Some(grads) = total {
                    apply_target_update(&mut net, &mut opts, &grads)?;
                }
            }

            if cfg.pseudo_optimize_enabled && !sets.next.is_empty() {
                let reference = reference.ok_or(EngineError::MissingReference)?;
                pseudo_update_pass(&mut sets.next, &net, reference, cfg.update_mode, cfg.pseudo_lr)?;
            }

            let test_accuracy = match test {
                Some(ds) => Some(evaluate_accuracy(&net, ds)?),
                None => None,
            };
            let n_batches = batches.len() as f64;
            report.epochs.push(EpochRecord {
                step,
                epoch,
                hard_loss: epoch_hard / n_batches,
                soft_loss: epoch_soft / n_batches,
                current_size,
                test_accuracy,
            });
        }

        if step + 1 < cfg.steps && !sets.current.is_empty() {
            sets = merge_and_advance(sets, cfg.pseudo_lr)?;
        }
    }

    observer.on_train_end(&sets);
    Ok((net, report))
}
