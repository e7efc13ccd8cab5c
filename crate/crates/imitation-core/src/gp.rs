//! RBF-kernel Gaussian-process reference models.
//!
//! Two inference modes:
//!
//! - **Label regression** (default): GP regression on one-hot targets scaled
//!   to {-1, +1}, exact closed-form posterior. Class probabilities are the
//!   softmax of the per-class posterior means; the predictive standard
//!   deviation supplies the uncertainty consumed by fidelity weighting.
//! - **Laplace binary**: one-vs-rest GP classification with a logistic
//!   likelihood, Newton mode finding, and the moment approximation of the
//!   logistic-Gaussian integral for predictive probabilities.
//!
//! Ensembles are built over a hyperparameter grid, ranked by (approximate)
//! log marginal likelihood, and predict by averaging member predictions.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::data::Dataset;
use crate::linalg::{
    cholesky, cholesky_with_jitter, dot, solve_triangular, CholeskyFactor, LinalgError, Matrix,
    Side,
};
use crate::net::softmax;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, PartialEq)]
pub enum GpError {
    /// Kernel hyperparameters must be strictly positive and finite.
    BadKernel { variance: f64, lengthscale: f64 },
    /// Feature widths of two point sets disagree.
    WidthMismatch { left: usize, right: usize },
    EmptyTrainingSet,
    /// Noise variance must be strictly positive.
    BadNoise { noise: f64 },
    /// Newton mode finding did not converge.
    NewtonDiverged { iterations: usize },
    /// No kernel in the grid produced a usable fit.
    AllGridMembersFailed,
    /// top_k must be in 1..=grid length.
    BadTopK { top_k: usize, grid: usize },
    EmptyEnsemble,
    Linalg(LinalgError),
}

impl fmt::Display for GpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GpError::BadKernel { variance, lengthscale } => {
                write!(f, "kernel parameters must be positive: variance={variance}, lengthscale={lengthscale}")
            }
            GpError::WidthMismatch { left, right } => {
                write!(f, "feature width mismatch: {left} vs {right}")
            }
            GpError::EmptyTrainingSet => write!(f, "empty training set"),
            GpError::BadNoise { noise } => write!(f, "noise variance must be positive: {noise}"),
            GpError::NewtonDiverged { iterations } => {
                write!(f, "Newton mode finding did not converge in {iterations} iterations")
            }
            GpError::AllGridMembersFailed => write!(f, "every kernel in the grid failed to fit"),
            GpError::BadTopK { top_k, grid } => {
                write!(f, "top_k={top_k} invalid for grid of {grid}")
            }
            GpError::EmptyEnsemble => write!(f, "ensemble has no members"),
            GpError::Linalg(e) => write!(f, "{e}"),
        }
    }
}

impl From<LinalgError> for GpError {
    fn from(e: LinalgError) -> Self {
        GpError::Linalg(e)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GpError {}

/// RBF kernel `k(a, b) = variance * exp(-|a-b|^2 / (2 lengthscale^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfKernel {
    pub variance: f64,
    pub lengthscale: f64,
}

impl RbfKernel {
    pub fn new(variance: f64, lengthscale: f64) -> Result<Self, GpError> {
        if !(variance > 0.0 && variance.is_finite() && lengthscale > 0.0 && lengthscale.is_finite())
        {
            return Err(GpError::BadKernel { variance, lengthscale });
        }
        Ok(RbfKernel { variance, lengthscale })
    }
}

/// Cross-kernel matrix `K[i][j] = k(a_i, b_j)`.
pub fn kernel_matrix(k: &RbfKernel, a: &Matrix, b: &Matrix) -> Result<Matrix, GpError> {
    if a.cols() != b.cols() {
        return Err(GpError::WidthMismatch { left: a.cols(), right: b.cols() });
    }
    let inv_two_ls2 = 1.0 / (2.0 * k.lengthscale * k.lengthscale);
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ra = a.row(i);
        let row = out.row_mut(i);
        for (j, o) in row.iter_mut().enumerate() {
            let rb = b.row(j);
            let mut d2 = 0.0;
            for (x, y) in ra.iter().zip(rb) {
                let d = x - y;
                d2 += d * d;
            }
            *o = k.variance * libm::exp(-d2 * inv_two_ls2);
        }
    }
    Ok(out)
}

/// GP inference mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpMode {
    /// Closed-form regression on {-1,+1} one-hot targets.
    LabelRegression,
    /// One-vs-rest Laplace-approximate logistic classification.
    LaplaceBinary,
}

/// One fitted one-vs-rest Laplace submodel.
#[derive(Debug, Clone)]
struct LaplaceSubmodel {
    /// Gradient of the log likelihood at the mode; predictive mean weights.
    grad: Vec<f64>,
    /// sqrt of the likelihood curvature at the mode.
    sqrt_w: Vec<f64>,
    /// Cholesky factor of `B = I + sqrtW K sqrtW`.
    chol_b: CholeskyFactor,
}

#[derive(Debug, Clone)]
enum GpState {
    Regression {
        /// `(K + noise I)^-1 Y`, one column per class.
        alpha: Matrix,
        /// Factor of `K + noise I` (plus rescue jitter if it was needed).
        chol: CholeskyFactor,
    },
    Laplace { submodels: Vec<LaplaceSubmodel> },
}

/// A fitted reference model on one kernel.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: RbfKernel,
    mode: GpMode,
    train_x: Matrix,
    noise: f64,
    class_count: usize,
    state: GpState,
    lml: f64,
}

/// Class probabilities plus a scalar predictive uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct RefPrediction {
    pub probs: Vec<f64>,
    pub sigma: f64,
}

/// One-hot targets scaled to {-1, +1}, one column per class.
fn regression_targets(train: &Dataset) -> Matrix {
    let n = train.len();
    let c = train.class_count;
    let mut y = Matrix::zeros(n, c);
    for (i, &label) in train.labels.iter().enumerate() {
        for j in 0..c {
            y.set(i, j, if j == label { 1.0 } else { -1.0 });
        }
    }
    y
}

const NEWTON_MAX_ITERS: usize = 50;
const NEWTON_TOL: f64 = 1e-8;

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + libm::exp(-t))
    } else {
        let e = libm::exp(t);
        e / (1.0 + e)
    }
}

/// `ln p(y|f) = -ln(1 + exp(-y f))`, computed stably.
fn log_logistic(y: f64, f: f64) -> f64 {
    let t = y * f;
    if t >= 0.0 {
        -libm::log1p(libm::exp(-t))
    } else {
        t - libm::log1p(libm::exp(t))
    }
}

/// Newton mode finding for one binary logistic GP; returns the fitted
/// submodel and its approximate log marginal likelihood.
fn fit_laplace_submodel(kmat: &Matrix, y: &[f64]) -> Result<(LaplaceSubmodel, f64), GpError> {
    let n = y.len();
    let mut fvec = vec![0.0; n];
    for _ in 0..NEWTON_MAX_ITERS {
        // pi, W, sqrtW at the current f.
        let pi: Vec<f64> = fvec.iter().map(|&f| sigmoid(f)).collect();
        let w: Vec<f64> = pi.iter().map(|p| p * (1.0 - p)).collect();
        let sqrt_w: Vec<f64> = w.iter().map(|&v| libm::sqrt(v)).collect();
        // grad_i = t_i - pi_i with t = (y+1)/2.
        let grad: Vec<f64> = y
            .iter()
            .zip(&pi)
            .map(|(&yi, &p)| (yi + 1.0) / 2.0 - p)
            .collect();

        // B = I + sqrtW K sqrtW.
        let mut b = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = sqrt_w[i] * kmat.get(i, j) * sqrt_w[j];
                b.set(i, j, v + if i == j { 1.0 } else { 0.0 });
            }
        }
        let chol_b = cholesky(&b)?;

        // b_vec = W f + grad; a = b_vec - sqrtW B^-1 sqrtW K b_vec.
        let b_vec: Vec<f64> = (0..n).map(|i| w[i] * fvec[i] + grad[i]).collect();
        let mut kb = Matrix::zeros(n, 1);
        for i in 0..n {
            kb.set(i, 0, dot(kmat.row(i), &b_vec));
        }
        let mut swkb = kb;
        for i in 0..n {
            let v = swkb.get(i, 0) * sqrt_w[i];
            swkb.set(i, 0, v);
        }
        let solved = chol_b.solve(&swkb)?;
        let a: Vec<f64> = (0..n)
            .map(|i| b_vec[i] - sqrt_w[i] * solved.get(i, 0))
            .collect();

        // f_new = K a.
        let mut f_new = vec![0.0; n];
        let mut delta = 0.0f64;
        for i in 0..n {
            f_new[i] = dot(kmat.row(i), &a);
            delta = delta.max((f_new[i] - fvec[i]).abs());
        }
        fvec = f_new;

        if delta < NEWTON_TOL {
            // Converged; assemble the final state at the mode.
            let pi: Vec<f64> = fvec.iter().map(|&f| sigmoid(f)).collect();
            let sqrt_w: Vec<f64> = pi.iter().map(|p| libm::sqrt(p * (1.0 - p))).collect();
            let grad: Vec<f64> = y
                .iter()
                .zip(&pi)
                .map(|(&yi, &p)| (yi + 1.0) / 2.0 - p)
                .collect();
            let mut b = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let v = sqrt_w[i] * kmat.get(i, j) * sqrt_w[j];
                    b.set(i, j, v + if i == j { 1.0 } else { 0.0 });
                }
            }
            let chol_b = cholesky(&b)?;
            // lml ~= -1/2 a^T f + sum ln p(y|f) - sum ln diag(L_B).
            let af: f64 = a.iter().zip(&fvec).map(|(x, y)| x * y).sum();
            let lik: f64 = y.iter().zip(&fvec).map(|(&yi, &fi)| log_logistic(yi, fi)).sum();
            let lml = -0.5 * af + lik - 0.5 * chol_b.log_det();
            return Ok((LaplaceSubmodel { grad, sqrt_w, chol_b }, lml));
        }
    }
    Err(GpError::NewtonDiverged { iterations: NEWTON_MAX_ITERS })
}

/// Fits a GP reference model on the labeled set.
pub fn fit(train: &Dataset, kernel: RbfKernel, mode: GpMode, noise: f64) -> Result<GpModel, GpError> {
    if train.is_empty() {
        return Err(GpError::EmptyTrainingSet);
    }
    if !(noise > 0.0 && noise.is_finite()) {
        return Err(GpError::BadNoise { noise });
    }
    let kmat = kernel_matrix(&kernel, &train.features, &train.features)?;
    match mode {
        GpMode::LabelRegression => {
            let ky = kmat.with_added_diagonal(noise);
            let (chol, _extra) = cholesky_with_jitter(&ky, 0.0)?;
            let y = regression_targets(train);
            let alpha = chol.solve(&y)?;
            // Closed-form log marginal likelihood, summed over classes.
            let n = train.len() as f64;
            let mut lml = 0.0;
            for c in 0..train.class_count {
                let mut fit_term = 0.0;
                for i in 0..train.len() {
                    fit_term += y.get(i, c) * alpha.get(i, c);
                }
                lml += -0.5 * fit_term - 0.5 * chol.log_det() - 0.5 * n * LN_2PI;
            }
            Ok(GpModel {
                kernel,
                mode,
                train_x: train.features.clone(),
                noise,
                class_count: train.class_count,
                state: GpState::Regression { alpha, chol },
                lml,
            })
        }
        GpMode::LaplaceBinary => {
            let mut submodels = Vec::with_capacity(train.class_count);
            let mut lml = 0.0;
            for class in 0..train.class_count {
                let y: Vec<f64> = train
                    .labels
                    .iter()
                    .map(|&l| if l == class { 1.0 } else { -1.0 })
                    .collect();
                let (sub, sub_lml) = fit_laplace_submodel(&kmat, &y)?;
                submodels.push(sub);
                lml += sub_lml;
            }
            Ok(GpModel {
                kernel,
                mode,
                train_x: train.features.clone(),
                noise,
                class_count: train.class_count,
                state: GpState::Laplace { submodels },
                lml,
            })
        }
    }
}

impl GpModel {
    #[must_use]
    pub fn kernel(&self) -> &RbfKernel {
        &self.kernel
    }

    #[must_use]
    pub fn mode(&self) -> GpMode {
        self.mode
    }

    #[must_use]
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    #[must_use]
    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Fitted (approximate) log marginal likelihood; ensemble ranking key.
    #[must_use]
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    /// In regression mode, the `(K + noise I)^-1 Y` solve matrix.
    #[must_use]
    pub fn alpha(&self) -> Option<&Matrix> {
        match &self.state {
            GpState::Regression { alpha, .. } => Some(alpha),
            GpState::Laplace { .. } => None,
        }
    }

    /// Prediction at a single point.
    pub fn predict(&self, x: &[f64]) -> Result<RefPrediction, GpError> {
        let xs = Matrix::from_vec(1, x.len(), x.to_vec()).map_err(GpError::Linalg)?;
        Ok(self.predict_batch(&xs)?.pop().expect("one row in, one out"))
    }

    /// Predictions for every row of `xs`.
    pub fn predict_batch(&self, xs: &Matrix) -> Result<Vec<RefPrediction>, GpError> {
        if xs.cols() != self.train_x.cols() {
            return Err(GpError::WidthMismatch {
                left: xs.cols(),
                right: self.train_x.cols(),
            });
        }
        let kstar = kernel_matrix(&self.kernel, xs, &self.train_x)?;
        let m = xs.rows();
        match &self.state {
            GpState::Regression { alpha, chol } => {
                let means = kstar.matmul(alpha)?;
                // v_j = k(x,x) + noise - k*^T (K + noise I)^-1 k*.
                let solved = chol.solve(&kstar.transpose())?;
                let prior = self.kernel.variance + self.noise;
                let mut out = Vec::with_capacity(m);
                for j in 0..m {
                    let mut quad = 0.0;
                    for i in 0..self.train_x.rows() {
                        quad += kstar.get(j, i) * solved.get(i, j);
                    }
                    let var = (prior - quad).max(0.0);
                    out.push(RefPrediction {
                        probs: softmax(means.row(j)),
                        sigma: libm::sqrt(var),
                    });
                }
                Ok(out)
            }
            GpState::Laplace { submodels } => {
                let mut raw = Matrix::zeros(m, self.class_count);
                let mut sigma_sum = vec![0.0; m];
                for (c, sub) in submodels.iter().enumerate() {
                    // Latent mean: k*^T grad. Latent variance:
                    // k(x,x) - |L^-1 (sqrtW k*)|^2.
                    let mut scaled = kstar.transpose();
                    for i in 0..scaled.rows() {
                        let s = sub.sqrt_w[i];
                        for v in scaled.row_mut(i).iter_mut() {
                            *v *= s;
                        }
                    }
                    let vmat = solve_triangular(&sub.chol_b, &scaled, Side::Lower)?;
                    for j in 0..m {
                        let mean = dot(kstar.row(j), &sub.grad);
                        let mut quad = 0.0;
                        for i in 0..self.train_x.rows() {
                            let v = vmat.get(i, j);
                            quad += v * v;
                        }
                        let var = (self.kernel.variance - quad).max(0.0);
                        // Moment approximation of the logistic-Gaussian
                        // integral: sigma(mean / sqrt(1 + pi var / 8)).
                        let kappa = 1.0 / libm::sqrt(1.0 + core::f64::consts::PI * var / 8.0);
                        raw.set(j, c, sigmoid(kappa * mean));
                        sigma_sum[j] += libm::sqrt(var);
                    }
                }
                let mut out = Vec::with_capacity(m);
                for j in 0..m {
                    let total: f64 = raw.row(j).iter().sum();
                    let probs: Vec<f64> = if total > 0.0 {
                        raw.row(j).iter().map(|v| v / total).collect()
                    } else {
                        vec![1.0 / self.class_count as f64; self.class_count]
                    };
                    out.push(RefPrediction {
                        probs,
                        sigma: sigma_sum[j] / self.class_count as f64,
                    });
                }
                Ok(out)
            }
        }
    }
}

/// An ensemble of fitted models sharing training data and class count.
#[derive(Debug, Clone)]
pub struct GpEnsemble {
    members: Vec<GpModel>,
}

impl GpEnsemble {
    pub fn from_members(members: Vec<GpModel>) -> Result<Self, GpError> {
        if members.is_empty() {
            return Err(GpError::EmptyEnsemble);
        }
        Ok(GpEnsemble { members })
    }

    #[must_use]
    pub fn members(&self) -> &[GpModel] {
        &self.members
    }

    #[must_use]
    pub fn class_count(&self) -> usize {
        self.members[0].class_count
    }

    /// Arithmetic mean of member probabilities (renormalized) and of member
    /// uncertainties.
    pub fn predict(&self, x: &[f64]) -> Result<RefPrediction, GpError> {
        let xs = Matrix::from_vec(1, x.len(), x.to_vec()).map_err(GpError::Linalg)?;
        Ok(self.predict_batch(&xs)?.pop().expect("one row in, one out"))
    }

    pub fn predict_batch(&self, xs: &Matrix) -> Result<Vec<RefPrediction>, GpError> {
        let c = self.class_count();
        let m = xs.rows();
        let mut probs = vec![0.0; m * c];
        let mut sigmas = vec![0.0; m];
        for member in &self.members {
            let preds = member.predict_batch(xs)?;
            for (j, p) in preds.iter().enumerate() {
                for (acc, v) in probs[j * c..(j + 1) * c].iter_mut().zip(&p.probs) {
                    *acc += v;
                }
                sigmas[j] += p.sigma;
            }
        }
        let k = self.members.len() as f64;
        let mut out = Vec::with_capacity(m);
        for j in 0..m {
            let slice = &mut probs[j * c..(j + 1) * c];
            for v in slice.iter_mut() {
                *v /= k;
            }
            let total: f64 = slice.iter().sum();
            for v in slice.iter_mut() {
                *v /= total;
            }
            out.push(RefPrediction {
                probs: slice.to_vec(),
                sigma: sigmas[j] / k,
            });
        }
        Ok(out)
    }
}

/// Fits every kernel in the grid and keeps the `top_k` by log marginal
/// likelihood, preserving grid order among the kept members. Members that
/// fail to factorize are skipped; failing all of them is an error.
pub fn fit_ensemble(
    train: &Dataset,
    hyper_grid: &[RbfKernel],
    mode: GpMode,
    noise: f64,
    top_k: usize,
) -> Result<GpEnsemble, GpError> {
    if top_k == 0 || top_k > hyper_grid.len() {
        return Err(GpError::BadTopK { top_k, grid: hyper_grid.len() });
    }
    let mut fitted: Vec<(usize, GpModel)> = Vec::with_capacity(hyper_grid.len());
    for (i, kernel) in hyper_grid.iter().enumerate() {
        match fit(train, *kernel, mode, noise) {
            Ok(model) => fitted.push((i, model)),
            Err(GpError::Linalg(_)) | Err(GpError::NewtonDiverged { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    if fitted.is_empty() {
        return Err(GpError::AllGridMembersFailed);
    }
    // Rank by lml (descending), then restore grid order among the kept.
    let mut order: Vec<usize> = (0..fitted.len()).collect();
    order.sort_by(|&a, &b| {
        fitted[b].1.lml
            .partial_cmp(&fitted[a].1.lml)
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let keep = top_k.min(order.len());
    let mut kept_slots: Vec<usize> = order[..keep].to_vec();
    kept_slots.sort_unstable();
    let mut members = Vec::with_capacity(keep);
    for slot in kept_slots.into_iter().rev() {
        members.push(fitted.remove(slot).1);
    }
    members.reverse();
    GpEnsemble::from_members(members)
}

/// Median pairwise Euclidean distance between feature rows; anchors the
/// default lengthscale grid to the data scale.
#[must_use]
pub fn median_pairwise_distance(features: &Matrix) -> f64 {
    let n = features.rows();
    if n < 2 {
        return 1.0;
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d2 = 0.0;
            for (a, b) in features.row(i).iter().zip(features.row(j)) {
                let d = a - b;
                d2 += d * d;
            }
            dists.push(libm::sqrt(d2));
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

pub const DEFAULT_LENGTHSCALE_FACTORS: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];
pub const DEFAULT_VARIANCES: [f64; 3] = [0.5, 1.0, 2.0];
pub const DEFAULT_NOISE: f64 = 1e-2;
pub const DEFAULT_TOP_K: usize = 3;

/// Default hyperparameter grid: lengthscales as multiples of the median
/// pairwise distance crossed with a few signal variances.
#[must_use]
pub fn default_hyper_grid(features: &Matrix) -> Vec<RbfKernel> {
    hyper_grid(features, &DEFAULT_LENGTHSCALE_FACTORS, &DEFAULT_VARIANCES)
}

/// Hyperparameter grid with explicit lengthscale factors and variances.
#[must_use]
pub fn hyper_grid(features: &Matrix, ls_factors: &[f64], variances: &[f64]) -> Vec<RbfKernel> {
    let med = median_pairwise_distance(features);
    let mut grid = Vec::with_capacity(ls_factors.len() * variances.len());
    for &v in variances {
        for &f in ls_factors {
            if let Ok(k) = RbfKernel::new(v, f * med) {
                grid.push(k);
            }
        }
    }
    grid
}
