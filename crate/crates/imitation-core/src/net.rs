//! The target model: a fully-connected network with ReLU hidden layers and a
//! linear (logit) output, plus the two losses it is trained with — a
//! Weston-Watkins multi-class hinge on true labels and a KL divergence
//! against reference predictions.
//!
//! `backward` produces exact reverse-mode gradients with respect to both the
//! parameters (for training) and the inputs (for pseudo-example ascent).

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{LinalgError, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub enum NetError {
    /// Input width does not match the first layer.
    InputWidthMismatch { expected: usize, got: usize },
    /// Consecutive layer dimensions do not conform.
    LayerMismatch { layer: usize, expected: usize, got: usize },
    /// A non-finite activation appeared in the named layer.
    NonFiniteActivation { layer: usize },
    /// Reference probabilities do not sum to 1 within 1e-6.
    InvalidDistribution { sum: f64 },
    /// Class label outside `0..classes`.
    LabelOutOfRange { label: usize, classes: usize },
    /// A trace was paired with a different network or batch.
    TraceMismatch,
    /// Need at least an input and an output dimension.
    TooFewDims,
    Linalg(LinalgError),
}

impl fmt::Display for NetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetError::InputWidthMismatch { expected, got } => {
                write!(f, "input width {got}, network expects {expected}")
            }
            NetError::LayerMismatch { layer, expected, got } => {
                write!(f, "layer {layer}: input width {got}, expected {expected}")
            }
            NetError::NonFiniteActivation { layer } => {
                write!(f, "non-finite activation in layer {layer}")
            }
            NetError::InvalidDistribution { sum } => {
                write!(f, "reference probabilities sum to {sum}, not 1")
            }
            NetError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            NetError::TraceMismatch => write!(f, "trace does not match network/batch"),
            NetError::TooFewDims => write!(f, "need at least [input, output] dimensions"),
            NetError::Linalg(e) => write!(f, "{e}"),
        }
    }
}

impl From<LinalgError> for NetError {
    fn from(e: LinalgError) -> Self {
        NetError::Linalg(e)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for NetError {}

/// One dense layer: `weights` is `out x in`, applied as `x W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    #[must_use]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    #[must_use]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Fully-connected network; hidden layers ReLU, output linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Per-layer intermediates captured by one forward pass: the input batch,
/// every pre-activation, and every hidden activation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Matrix,
    pre: Vec<Matrix>,
    hidden: Vec<Matrix>,
}

/// Gradients for one dense layer, aligned with [`DenseLayer`].
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub dw: Matrix,
    pub db: Vec<f64>,
}

/// Gradients for every layer of an [`Mlp`].
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    /// Accumulates another gradient set (used to combine the hard- and
    /// soft-loss contributions).
    pub fn add_assign(&mut self, other: &NetGrads) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.dw.data_mut().iter_mut().zip(b.dw.data()) {
                *x += y;
            }
            for (x, y) in a.db.iter_mut().zip(&b.db) {
                *x += y;
            }
        }
    }
}

impl Mlp {
    /// He-initialized network: weights `N(0, 2/fan_in)`, zero biases.
    /// Deterministic in `seed`; `dims` runs input..=output.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self, NetError> {
        if dims.len() < 2 {
            return Err(NetError::TooFewDims);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = libm::sqrt(2.0 / fan_in as f64);
            let data: Vec<f64> = (0..fan_out * fan_in)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * scale
                })
                .collect();
            layers.push(DenseLayer {
                weights: Matrix::from_vec(fan_out, fan_in, data).expect("finite normal draws"),
                bias: vec![0.0; fan_out],
            });
        }
        Ok(Mlp { layers })
    }

    /// Wraps explicit layers, validating that dimensions conform.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::TooFewDims);
        }
        for i in 1..layers.len() {
            if layers[i].in_dim() != layers[i - 1].out_dim() {
                return Err(NetError::LayerMismatch {
                    layer: i,
                    expected: layers[i - 1].out_dim(),
                    got: layers[i].in_dim(),
                });
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim()
                || l.bias.iter().any(|b| !b.is_finite())
            {
                return Err(NetError::LayerMismatch {
                    layer: i,
                    expected: l.out_dim(),
                    got: l.bias.len(),
                });
            }
        }
        Ok(Mlp { layers })
    }

    #[must_use]
    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    #[must_use]
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    #[must_use]
    pub fn class_count(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim()
    }

    #[must_use]
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    fn layer_forward(&self, l: usize, input: &Matrix) -> Result<Matrix, NetError> {
        let layer = &self.layers[l];
        let mut z = input.matmul_nt(&layer.weights)?;
        for r in 0..z.rows() {
            let row = z.row_mut(r);
            for (v, b) in row.iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        if z.data().iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFiniteActivation { layer: l });
        }
        Ok(z)
    }

    /// Forward pass over a batch (one example per row), capturing the trace
    /// needed by [`Mlp::backward`]. Returns the logits.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardTrace), NetError> {
        if x.cols() != self.input_dim() {
            return Err(NetError::InputWidthMismatch {
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        let depth = self.layers.len();
        let mut pre = Vec::with_capacity(depth);
        let mut hidden = Vec::with_capacity(depth.saturating_sub(1));
        let mut act = x.clone();
        for l in 0..depth {
            let z = self.layer_forward(l, &act)?;
            pre.push(z.clone());
            if l + 1 < depth {
                let mut h = z;
                for v in h.data_mut().iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                hidden.push(h.clone());
                act = h;
            } else {
                act = z;
            }
        }
        let logits = act;
        Ok((
            logits,
            ForwardTrace {
                input: x.clone(),
                pre,
                hidden,
            },
        ))
    }

    /// Forward pass that skips the trace; for evaluation.
    pub fn forward_logits(&self, x: &Matrix) -> Result<Matrix, NetError> {
        if x.cols() != self.input_dim() {
            return Err(NetError::InputWidthMismatch {
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        let depth = self.layers.len();
        let mut act = x.clone();
        for l in 0..depth {
            let mut z = self.layer_forward(l, &act)?;
            if l + 1 < depth {
                for v in z.data_mut().iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            act = z;
        }
        Ok(act)
    }

    /// Reverse-mode gradients of the scalar loss whose logit gradient is
    /// `dlogits`, with respect to all parameters and to the input batch.
    /// ReLU passes gradient where the pre-activation is strictly positive.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        dlogits: &Matrix,
    ) -> Result<(NetGrads, Matrix), NetError> {
        let depth = self.layers.len();
        if trace.pre.len() != depth || trace.hidden.len() + 1 != depth {
            return Err(NetError::TraceMismatch);
        }
        let batch = trace.input.rows();
        if dlogits.rows() != batch || dlogits.cols() != self.class_count() {
            return Err(NetError::TraceMismatch);
        }
        for (l, p) in trace.pre.iter().enumerate() {
            if p.rows() != batch || p.cols() != self.layers[l].out_dim() {
                return Err(NetError::TraceMismatch);
            }
        }

        let mut grads: Vec<LayerGrads> = Vec::with_capacity(depth);
        let mut dz = dlogits.clone();
        for l in (0..depth).rev() {
            let a_prev = if l == 0 { &trace.input } else { &trace.hidden[l - 1] };
            // dW = dz^T a_prev, db = column sums of dz.
            let dw = dz.matmul_tn(a_prev)?;
            let mut db = vec![0.0; self.layers[l].out_dim()];
            for r in 0..dz.rows() {
                for (s, v) in db.iter_mut().zip(dz.row(r)) {
                    *s += v;
                }
            }
            grads.push(LayerGrads { dw, db });
            // dA_{l-1} = dz W, masked by ReLU'(pre_{l-1}) for hidden layers.
            let mut da = dz.matmul(&self.layers[l].weights)?;
            if l > 0 {
                let mask = &trace.pre[l - 1];
                for (v, p) in da.data_mut().iter_mut().zip(mask.data()) {
                    if *p <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            dz = da;
        }
        grads.reverse();
        Ok((NetGrads { layers: grads }, dz))
    }
}

impl Mlp {
    /// Input gradients only, skipping the parameter-gradient products.
    /// Roughly halves the cost of a pseudo-example ascent pass.
    pub fn backward_inputs(
        &self,
        trace: &ForwardTrace,
        dlogits: &Matrix,
    ) -> Result<Matrix, NetError> {
        let depth = self.layers.len();
        if trace.pre.len() != depth || trace.hidden.len() + 1 != depth {
            return Err(NetError::TraceMismatch);
        }
        let batch = trace.input.rows();
        if dlogits.rows() != batch || dlogits.cols() != self.class_count() {
            return Err(NetError::TraceMismatch);
        }
        for (l, p) in trace.pre.iter().enumerate() {
            if p.rows() != batch || p.cols() != self.layers[l].out_dim() {
                return Err(NetError::TraceMismatch);
            }
        }
        let mut dz = dlogits.clone();
        for l in (0..depth).rev() {
            let mut da = dz.matmul(&self.layers[l].weights)?;
            if l > 0 {
                let mask = &trace.pre[l - 1];
                for (v, p) in da.data_mut().iter_mut().zip(mask.data()) {
                    if *p <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            dz = da;
        }
        Ok(dz)
    }
}

/// Numerically stable softmax (max-subtraction).
#[must_use]
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut out: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = libm::log(logits.iter().map(|&z| libm::exp(z - max)).sum::<f64>());
    logits.iter().map(|&z| z - max - lse).collect()
}

/// KL divergence `KL(ref || softmax(logits))` and its exact logit gradient
/// `softmax(logits) - ref`. Reference entries equal to zero contribute
/// nothing. The loss is clamped at zero against floating-point undershoot.
pub fn kl_soft_loss(ref_probs: &[f64], logits: &[f64]) -> Result<(f64, Vec<f64>), NetError> {
    debug_assert_eq!(ref_probs.len(), logits.len());
    let sum: f64 = ref_probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || ref_probs.iter().any(|&p| p < 0.0) {
        return Err(NetError::InvalidDistribution { sum });
    }
    let ls = log_softmax(logits);
    let mut loss = 0.0;
    for (&g, &l) in ref_probs.iter().zip(&ls) {
        if g > 0.0 {
            loss += g * (libm::log(g) - l);
        }
    }
    let f = softmax(logits);
    let dlogits: Vec<f64> = f.iter().zip(ref_probs).map(|(p, g)| p - g).collect();
    Ok((loss.max(0.0), dlogits))
}

/// Weston-Watkins multi-class hinge `sum_{j != y} max(0, 1 + z_j - z_y)`
/// with its subgradient (zero at the kink).
pub fn hinge_hard_loss(label: usize, logits: &[f64]) -> Result<(f64, Vec<f64>), NetError> {
    if label >= logits.len() {
        return Err(NetError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let zy = logits[label];
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; logits.len()];
    for (j, &zj) in logits.iter().enumerate() {
        if j == label {
            continue;
        }
        let margin = 1.0 + zj - zy;
        if margin > 0.0 {
            loss += margin;
            dlogits[j] = 1.0;
            dlogits[label] -= 1.0;
        }
    }
    Ok((loss, dlogits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_linear_layer_is_matrix_product() {
        let w = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let net = Mlp::from_layers(vec![DenseLayer {
            weights: w.clone(),
            bias: vec![0.0, 0.0],
        }])
        .unwrap();
        let x = Matrix::from_vec(1, 3, vec![1.0, -1.0, 2.0]).unwrap();
        let (logits, _) = net.forward(&x).unwrap();
        let want = x.matmul_nt(&w).unwrap();
        assert_eq!(logits, want);
    }

    #[test]
    fn zero_network_gives_uniform_softmax() {
        let net = Mlp::from_layers(vec![
            DenseLayer { weights: Matrix::zeros(4, 2), bias: vec![0.0; 4] },
            DenseLayer { weights: Matrix::zeros(3, 4), bias: vec![0.0; 3] },
        ])
        .unwrap();
        let x = Matrix::from_vec(1, 2, vec![0.3, -0.7]).unwrap();
        let (logits, _) = net.forward(&x).unwrap();
        assert_eq!(logits.data(), &[0.0, 0.0, 0.0]);
        let p = softmax(logits.row(0));
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_layer_forward_matches_hand_unrolled_arithmetic() {
        let w1 = Matrix::from_vec(2, 2, vec![1.0, -2.0, 0.5, 1.0]).unwrap();
        let b1 = vec![0.1, -0.2];
        let w2 = Matrix::from_vec(2, 2, vec![1.0, 1.0, -1.0, 2.0]).unwrap();
        let b2 = vec![0.0, 0.3];
        let net = Mlp::from_layers(vec![
            DenseLayer { weights: w1, bias: b1 },
            DenseLayer { weights: w2, bias: b2 },
        ])
        .unwrap();
        let x = [0.7, 0.4];
        // Hand-unrolled: z1 = W1 x + b1, h = relu(z1), z2 = W2 h + b2.
        let z1: [f64; 2] = [
            1.0 * x[0] + -2.0 * x[1] + 0.1,
            0.5 * x[0] + 1.0 * x[1] + -0.2,
        ];
        let h = [z1[0].max(0.0), z1[1].max(0.0)];
        let z2 = [h[0] + h[1], -h[0] + 2.0 * h[1] + 0.3];
        let xb = Matrix::from_vec(1, 2, x.to_vec()).unwrap();
        let (logits, _) = net.forward(&xb).unwrap();
        assert!((logits.get(0, 0) - z2[0]).abs() < 1e-12);
        assert!((logits.get(0, 1) - z2[1]).abs() < 1e-12);
    }

    #[test]
    fn softmax_properties() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // Shift invariance.
        let a = softmax(&[1.0, 2.0, -0.5]);
        let b = softmax(&[101.0, 102.0, 99.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        // Closed form: [ln 1, ln 3] -> [0.25, 0.75].
        let c = softmax(&[0.0, libm::log(3.0)]);
        assert!((c[0] - 0.25).abs() < 1e-12);
        assert!((c[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn kl_zero_when_distributions_match() {
        let logits = [0.4, -1.0, 2.0];
        let r = softmax(&logits);
        let (loss, d) = kl_soft_loss(&r, &logits).unwrap();
        assert!(loss.abs() < 1e-12);
        for v in d {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn kl_closed_form_case() {
        let (loss, d) = kl_soft_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((loss - libm::log(2.0)).abs() < 1e-12);
        assert!((d[0] - -0.5).abs() < 1e-12);
        assert!((d[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..10 {
            let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let refp: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let (_, d) = kl_soft_loss(&refp, &logits).unwrap();
            let h = 1e-6;
            for k in 0..4 {
                let mut lp = logits.clone();
                let mut lm = logits.clone();
                lp[k] += h;
                lm[k] -= h;
                let (fp, _) = kl_soft_loss(&refp, &lp).unwrap();
                let (fm, _) = kl_soft_loss(&refp, &lm).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - d[k]).abs() < 1e-6, "coord {k}: fd={fd} analytic={}", d[k]);
            }
        }
    }

    #[test]
    fn kl_rejects_unnormalized_reference() {
        assert!(matches!(
            kl_soft_loss(&[0.5, 0.2], &[0.0, 0.0]),
            Err(NetError::InvalidDistribution { .. })
        ));
    }

    #[test]
    fn hinge_cases() {
        let (loss, d) = hinge_hard_loss(0, &[2.0, 0.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(d, vec![0.0, 0.0]);

        let (loss, d) = hinge_hard_loss(0, &[0.0, 0.0]).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(d, vec![-1.0, 1.0]);

        let (loss, _) = hinge_hard_loss(2, &[0.0, 0.5, 2.0]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn hinge_zero_when_margin_satisfied() {
        // True-class logit exceeding every other by >= 1 gives zero loss.
        let (loss, _) = hinge_hard_loss(1, &[0.0, 1.5, 0.5]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn hinge_rejects_bad_label() {
        assert!(matches!(
            hinge_hard_loss(3, &[0.0, 0.0]),
            Err(NetError::LabelOutOfRange { label: 3, classes: 2 })
        ));
    }

    #[test]
    fn backward_zero_dlogits_gives_zero_gradients() {
        let net = Mlp::init(&[3, 5, 2], 0).unwrap();
        let x = Matrix::from_vec(2, 3, vec![0.1, 0.2, 0.3, -0.1, 0.0, 0.5]).unwrap();
        let (_, trace) = net.forward(&x).unwrap();
        let (grads, din) = net.backward(&trace, &Matrix::zeros(2, 2)).unwrap();
        assert!(din.data().iter().all(|&v| v == 0.0));
        for lg in &grads.layers {
            assert!(lg.dw.data().iter().all(|&v| v == 0.0));
            assert!(lg.db.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_single_linear_layer_input_grad_is_wt_dlogits() {
        let w = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let net = Mlp::from_layers(vec![DenseLayer {
            weights: w.clone(),
            bias: vec![0.0; 2],
        }])
        .unwrap();
        let x = Matrix::from_vec(1, 3, vec![0.5, -0.5, 1.0]).unwrap();
        let (_, trace) = net.forward(&x).unwrap();
        let dl = Matrix::from_vec(1, 2, vec![0.3, -0.7]).unwrap();
        let (_, din) = net.backward(&trace, &dl).unwrap();
        let want = dl.matmul(&w).unwrap();
        assert_eq!(din, want);
    }

    /// Loss: mean over the batch of KL against fixed references. Used to
    /// finite-difference every parameter and input coordinate.
    fn batch_loss(net: &Mlp, x: &Matrix, refs: &Matrix) -> f64 {
        let logits = net.forward_logits(x).unwrap();
        let mut total = 0.0;
        for r in 0..x.rows() {
            let (l, _) = kl_soft_loss(refs.row(r), logits.row(r)).unwrap();
            total += l;
        }
        total / x.rows() as f64
    }

    #[test]
    fn backward_matches_finite_differences_on_three_layer_net() {
        let mut rng = StdRng::seed_from_u64(21);
        let mut net = Mlp::init(&[4, 6, 5, 3], 77).unwrap();
        let x = Matrix::from_vec(
            3,
            4,
            (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let refs = {
            let mut rows = Vec::new();
            for _ in 0..3 {
                let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                rows.push(raw.iter().map(|v| v / s).collect::<Vec<f64>>());
            }
            Matrix::from_rows(&rows).unwrap()
        };

        // Analytic gradients.
        let (logits, trace) = net.forward(&x).unwrap();
        let mut dl = Matrix::zeros(3, 3);
        for r in 0..3 {
            let (_, d) = kl_soft_loss(refs.row(r), logits.row(r)).unwrap();
            for (c, v) in d.iter().enumerate() {
                dl.set(r, c, v / 3.0);
            }
        }
        let (grads, din) = net.backward(&trace, &dl).unwrap();

        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-3);

        // Parameter gradients, every coordinate of every layer.
        for l in 0..net.layers().len() {
            for idx in 0..net.layers()[l].weights.data().len() {
                let orig = net.layers()[l].weights.data()[idx];
                net.layers_mut()[l].weights.data_mut()[idx] = orig + h;
                let fp = batch_loss(&net, &x, &refs);
                net.layers_mut()[l].weights.data_mut()[idx] = orig - h;
                let fm = batch_loss(&net, &x, &refs);
                net.layers_mut()[l].weights.data_mut()[idx] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let a = grads.layers[l].dw.data()[idx];
                assert!(rel(a, fd) <= 1e-4, "layer {l} w[{idx}]: analytic {a} fd {fd}");
            }
            for bi in 0..net.layers()[l].bias.len() {
                let orig = net.layers()[l].bias[bi];
                net.layers_mut()[l].bias[bi] = orig + h;
                let fp = batch_loss(&net, &x, &refs);
                net.layers_mut()[l].bias[bi] = orig - h;
                let fm = batch_loss(&net, &x, &refs);
                net.layers_mut()[l].bias[bi] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let a = grads.layers[l].db[bi];
                assert!(rel(a, fd) <= 1e-4, "layer {l} b[{bi}]: analytic {a} fd {fd}");
            }
        }

        // Input gradients.
        let mut xm = x.clone();
        for idx in 0..xm.data().len() {
            let orig = xm.data()[idx];
            xm.data_mut()[idx] = orig + h;
            let fp = batch_loss(&net, &xm, &refs);
            xm.data_mut()[idx] = orig - h;
            let fm = batch_loss(&net, &xm, &refs);
            xm.data_mut()[idx] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let a = din.data()[idx];
            assert!(rel(a, fd) <= 1e-4, "input[{idx}]: analytic {a} fd {fd}");
        }
    }

    #[test]
    fn backward_inputs_agrees_with_full_backward() {
        let mut rng = StdRng::seed_from_u64(31);
        let net = Mlp::init(&[4, 7, 3], 88).unwrap();
        let x = Matrix::from_vec(
            5,
            4,
            (0..20).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let (_, trace) = net.forward(&x).unwrap();
        let dl = Matrix::from_vec(
            5,
            3,
            (0..15).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let (_, din_full) = net.backward(&trace, &dl).unwrap();
        let din_fast = net.backward_inputs(&trace, &dl).unwrap();
        assert_eq!(din_full, din_fast);
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = Mlp::init(&[2, 3, 2], 5).unwrap();
        let b = Mlp::init(&[2, 3, 2], 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layers()[0].weights.rows(), 3);
        assert_eq!(a.layers()[0].weights.cols(), 2);
        assert_eq!(a.layers()[1].weights.rows(), 2);
        assert_eq!(a.layers()[1].weights.cols(), 3);
        assert_ne!(a, Mlp::init(&[2, 3, 2], 6).unwrap());
    }

    #[test]
    fn init_first_layer_variance_close_to_he_target() {
        let fan_in = 100;
        let net = Mlp::init(&[fan_in, 100, 2], 123).unwrap();
        let w = net.layers()[0].weights.data();
        assert_eq!(w.len(), 10_000);
        let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
        let var: f64 = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64;
        let target = 2.0 / fan_in as f64;
        assert!(
            (var - target).abs() / target < 0.2,
            "sample variance {var} vs target {target}"
        );
    }

    #[test]
    fn init_rejects_short_dims() {
        assert!(matches!(Mlp::init(&[3], 0), Err(NetError::TooFewDims)));
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let net = Mlp::init(&[3, 2], 0).unwrap();
        let x = Matrix::zeros(1, 4);
        assert!(matches!(
            net.forward(&x),
            Err(NetError::InputWidthMismatch { expected: 3, got: 4 })
        ));
    }

    #[test]
    fn backward_rejects_foreign_trace() {
        let net_a = Mlp::init(&[3, 4, 2], 0).unwrap();
        let net_b = Mlp::init(&[3, 5, 2], 0).unwrap();
        let x = Matrix::zeros(2, 3);
        let (_, trace) = net_a.forward(&x).unwrap();
        assert!(matches!(
            net_b.backward(&trace, &Matrix::zeros(2, 2)),
            Err(NetError::TraceMismatch)
        ));
    }
}
