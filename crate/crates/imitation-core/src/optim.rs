//! Adam and Nadam steppers.
//!
//! Nadam drives the target-network parameters, Adam drives pseudo-example
//! ascent. Each state owns the moment accumulators for exactly one parameter
//! tensor and is stored next to whatever it optimizes, so pseudo examples can
//! carry their own optimizer state across epochs.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Errors from optimizer steps.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimError {
    /// A gradient entry was NaN or infinite; carries the coordinate index.
    NonFiniteGradient { index: usize },
    /// Parameter, gradient and accumulator lengths disagree.
    LengthMismatch {
        params: usize,
        grads: usize,
        state: usize,
    },
    /// A hyperparameter is outside its valid range.
    BadHyper { name: &'static str },
}

impl fmt::Display for OptimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimError::NonFiniteGradient { index } => {
                write!(f, "non-finite gradient at coordinate {index}")
            }
            OptimError::LengthMismatch { params, grads, state } => write!(
                f,
                "length mismatch: params={params}, grads={grads}, state={state}"
            ),
            OptimError::BadHyper { name } => write!(f, "invalid hyperparameter: {name}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for OptimError {}

/// Shared moment accumulators for Adam-family updates.
#[derive(Debug, Clone, PartialEq)]
struct Moments {
    step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments {
            step_count: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    fn check(&self, params: &[f64], grads: &[f64]) -> Result<(), OptimError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(OptimError::LengthMismatch {
                params: params.len(),
                grads: grads.len(),
                state: self.m.len(),
            });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(OptimError::NonFiniteGradient { index });
        }
        Ok(())
    }
}

fn check_hypers(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<(), OptimError> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(OptimError::BadHyper { name: "lr" });
    }
    if !(0.0..1.0).contains(&beta1) {
        return Err(OptimError::BadHyper { name: "beta1" });
    }
    if !(0.0..1.0).contains(&beta2) {
        return Err(OptimError::BadHyper { name: "beta2" });
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(OptimError::BadHyper { name: "eps" });
    }
    Ok(())
}

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Adam with bias correction:
///
/// ```text
/// m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
/// p <- p - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: Moments,
}

impl AdamState {
    /// Adam state for a `dim`-long parameter vector with default betas.
    pub fn new(dim: usize, lr: f64) -> Result<Self, OptimError> {
        Self::with_hypers(dim, lr, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS)
    }

    pub fn with_hypers(
        dim: usize,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<Self, OptimError> {
        check_hypers(lr, beta1, beta2, eps)?;
        Ok(AdamState {
            lr,
            beta1,
            beta2,
            eps,
            moments: Moments::new(dim),
        })
    }

    #[must_use]
    pub fn step_count(&self) -> u64 {
        self.moments.step_count
    }

    /// One descent step; `params` moves against `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), OptimError> {
        self.moments.check(params, grads)?;
        self.moments.step_count += 1;
        let t = self.moments.step_count as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, f64::from(t));
        let bc2 = 1.0 - libm::pow(self.beta2, f64::from(t));
        for (i, g) in grads.iter().enumerate() {
            let m = self.beta1 * self.moments.m[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.moments.v[i] + (1.0 - self.beta2) * g * g;
            self.moments.m[i] = m;
            self.moments.v[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            params[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
        Ok(())
    }

    /// One ascent step: exactly `step` applied to the negated gradient, so
    /// `params` moves along `grads`.
    pub fn ascend(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), OptimError> {
        self.moments.check(params, grads)?;
        let neg: Vec<f64> = grads.iter().map(|g| -g).collect();
        self.step(params, &neg)
    }
}

/// Nadam: Adam with a Nesterov lookahead on the bias-corrected first moment.
///
/// ```text
/// m_bar = b1 * m/(1-b1^t) + (1-b1) * g
/// p <- p - lr * m_bar / (sqrt(v/(1-b2^t)) + eps)
/// ```
///
/// This is the schedule-free variant: no 0.96-decay momentum schedule. At
/// step 1 the effective first moment equals the raw gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct NadamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    moments: Moments,
}

impl NadamState {
    pub fn new(dim: usize, lr: f64) -> Result<Self, OptimError> {
        Self::with_hypers(dim, lr, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS)
    }

    pub fn with_hypers(
        dim: usize,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<Self, OptimError> {
        check_hypers(lr, beta1, beta2, eps)?;
        Ok(NadamState {
            lr,
            beta1,
            beta2,
            eps,
            moments: Moments::new(dim),
        })
    }

    #[must_use]
    pub fn step_count(&self) -> u64 {
        self.moments.step_count
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), OptimError> {
        self.moments.check(params, grads)?;
        self.moments.step_count += 1;
        let t = self.moments.step_count as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, f64::from(t));
        let bc2 = 1.0 - libm::pow(self.beta2, f64::from(t));
        for (i, g) in grads.iter().enumerate() {
            let m = self.beta1 * self.moments.m[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.moments.v[i] + (1.0 - self.beta2) * g * g;
            self.moments.m[i] = m;
            self.moments.v[i] = v;
            let m_bar = self.beta1 * (m / bc1) + (1.0 - self.beta1) * g;
            let v_hat = v / bc2;
            params[i] -= self.lr * m_bar / (libm::sqrt(v_hat) + self.eps);
        }
        Ok(())
    }
}
