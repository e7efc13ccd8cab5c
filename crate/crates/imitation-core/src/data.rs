//! Datasets and experiment scaffolding that needs no IO: random linear
//! embeddings, seeded few-shot splits and 2-d evaluation grids.
//!
//! File loading (CSV, IDX) lives in the companion crate.

use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{solve_spd, LinalgError, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    /// A label is >= class_count.
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    /// Feature row count and label count disagree.
    CountMismatch { features: usize, labels: usize },
    /// A class has fewer members than the requested split size.
    InsufficientClassMembers { class: usize, have: usize, need: usize },
    /// Requested embedding dimension is below the source dimension.
    EmbedDimTooSmall { requested: usize, source: usize },
    /// Grid bounds are inverted or degenerate.
    InvalidBounds,
    /// Grid resolution must be at least 2.
    InvalidResolution { got: usize },
    /// The dataset has no examples.
    Empty,
    Linalg(LinalgError),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::LabelOutOfRange { index, label, classes } => write!(
                f,
                "label {label} at row {index} out of range for {classes} classes"
            ),
            DataError::CountMismatch { features, labels } => {
                write!(f, "{features} feature rows but {labels} labels")
            }
            DataError::InsufficientClassMembers { class, have, need } => {
                write!(f, "class {class} has {have} members, need {need}")
            }
            DataError::EmbedDimTooSmall { requested, source } => {
                write!(f, "embedding dim {requested} below source dim {source}")
            }
            DataError::InvalidBounds => write!(f, "grid bounds are inverted"),
            DataError::InvalidResolution { got } => {
                write!(f, "grid resolution must be >= 2, got {got}")
            }
            DataError::Empty => write!(f, "dataset is empty"),
            DataError::Linalg(e) => write!(f, "{e}"),
        }
    }
}

impl From<LinalgError> for DataError {
    fn from(e: LinalgError) -> Self {
        DataError::Linalg(e)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DataError {}

/// A labeled dataset: one feature row per example plus integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    /// Validates the label/feature contract.
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self, DataError> {
        if features.rows() != labels.len() {
            return Err(DataError::CountMismatch {
                features: features.rows(),
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(DataError::LabelOutOfRange { index, label, classes: class_count });
        }
        Ok(Dataset { features, labels, class_count })
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// New dataset holding the given example indices, in order.
    #[must_use]
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut data = Vec::with_capacity(indices.len() * self.dim());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features: Matrix::from_vec(indices.len(), self.dim(), data)
                .expect("subset of valid dataset"),
            labels,
            class_count: self.class_count,
        }
    }

    /// Per-dimension standard deviation of the feature columns (population).
    #[must_use]
    pub fn feature_std(&self) -> Vec<f64> {
        let n = self.len();
        let d = self.dim();
        let mut mean = alloc::vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(self.features.row(i)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut var = alloc::vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(self.features.row(i)).zip(&mean) {
                let c = v - m;
                *s += c * c;
            }
        }
        var.iter().map(|s| libm::sqrt(s / n as f64)).collect()
    }

    /// Axis-aligned bounding box of a 2-d dataset, each side expanded by
    /// `expand` of its width.
    pub fn bounding_box_2d(&self, expand: f64) -> Result<[(f64, f64); 2], DataError> {
        if self.dim() != 2 {
            return Err(DataError::InvalidBounds);
        }
        if self.is_empty() {
            return Err(DataError::Empty);
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for i in 0..self.len() {
            let row = self.features.row(i);
            for k in 0..2 {
                lo[k] = lo[k].min(row[k]);
                hi[k] = hi[k].max(row[k]);
            }
        }
        let mut out = [(0.0, 0.0); 2];
        for k in 0..2 {
            let pad = (hi[k] - lo[k]) * expand * 0.5;
            out[k] = (lo[k] - pad, hi[k] + pad);
        }
        Ok(out)
    }
}

/// A fixed random linear map into a higher-dimensional space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap {
    /// `target_dim x source_dim`; applied as `A x`.
    pub matrix: Matrix,
    pub seed: u64,
}

impl EmbeddingMap {
    /// Entries iid standard normal, deterministic in `seed`.
    pub fn random(source_dim: usize, target_dim: usize, seed: u64) -> Result<Self, DataError> {
        if target_dim < source_dim {
            return Err(DataError::EmbedDimTooSmall {
                requested: target_dim,
                source: source_dim,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..target_dim * source_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Ok(EmbeddingMap {
            matrix: Matrix::from_vec(target_dim, source_dim, data).expect("finite normal draws"),
            seed,
        })
    }

    /// Identity map; embedding becomes a no-op. Used in tests.
    #[must_use]
    pub fn identity(dim: usize) -> Self {
        EmbeddingMap {
            matrix: Matrix::identity(dim),
            seed: 0,
        }
    }

    #[must_use]
    pub fn source_dim(&self) -> usize {
        self.matrix.cols()
    }

    #[must_use]
    pub fn target_dim(&self) -> usize {
        self.matrix.rows()
    }

    /// `A x` for one feature vector.
    #[must_use]
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.target_dim());
        for i in 0..self.target_dim() {
            out.push(crate::linalg::dot(self.matrix.row(i), x));
        }
        out
    }

    /// Applies the map to every row.
    pub fn apply_matrix(&self, xs: &Matrix) -> Result<Matrix, DataError> {
        Ok(xs.matmul_nt(&self.matrix)?)
    }

    /// Least-squares preimage `argmin_z |A z - x|`: projects an embedded (or
    /// moved) point back to the source space for visualization.
    pub fn project_back(&self, x: &[f64]) -> Result<Vec<f64>, DataError> {
        let ata = self.matrix.matmul_tn(&self.matrix)?;
        let mut atx = Matrix::zeros(self.source_dim(), 1);
        for j in 0..self.source_dim() {
            let mut s = 0.0;
            for i in 0..self.target_dim() {
                s += self.matrix.get(i, j) * x[i];
            }
            atx.set(j, 0, s);
        }
        let z = solve_spd(&ata, &atx, 0.0)?;
        Ok(z.data().to_vec())
    }
}

/// Replaces features by `A x` with `A` drawn iid standard normal from `seed`.
/// Labels are untouched.
pub fn random_embed(
    ds: &Dataset,
    target_dim: usize,
    seed: u64,
) -> Result<(Dataset, EmbeddingMap), DataError> {
    let map = EmbeddingMap::random(ds.dim(), target_dim, seed)?;
    let features = map.apply_matrix(&ds.features)?;
    Ok((
        Dataset {
            features,
            labels: ds.labels.clone(),
            class_count: ds.class_count,
        },
        map,
    ))
}

/// Draws exactly `per_class` examples of every class, uniformly without
/// replacement, deterministic in `seed`. Returns `(labeled, rest)`; `rest`
/// keeps the original example order.
pub fn few_shot_split(
    ds: &Dataset,
    per_class: usize,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = alloc::vec![false; ds.len()];
    let mut labeled_idx = Vec::with_capacity(per_class * ds.class_count);
    for class in 0..ds.class_count {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        if members.len() < per_class {
            return Err(DataError::InsufficientClassMembers {
                class,
                have: members.len(),
                need: per_class,
            });
        }
        members.shuffle(&mut rng);
        for &i in &members[..per_class] {
            picked[i] = true;
            labeled_idx.push(i);
        }
    }
    let rest_idx: Vec<usize> = (0..ds.len()).filter(|&i| !picked[i]).collect();
    Ok((ds.subset(&labeled_idx), ds.subset(&rest_idx)))
}

/// Regular 2-d grid of `resolution^2` points, inclusive of the bounds,
/// row-major with x varying fastest.
pub fn make_grid(
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
    resolution: usize,
) -> Result<Matrix, DataError> {
    if !(xmin < xmax && ymin < ymax) {
        return Err(DataError::InvalidBounds);
    }
    if resolution < 2 {
        return Err(DataError::InvalidResolution { got: resolution });
    }
    let step_x = (xmax - xmin) / (resolution - 1) as f64;
    let step_y = (ymax - ymin) / (resolution - 1) as f64;
    let mut data = Vec::with_capacity(resolution * resolution * 2);
    for iy in 0..resolution {
        let y = if iy + 1 == resolution { ymax } else { ymin + step_y * iy as f64 };
        for ix in 0..resolution {
            let x = if ix + 1 == resolution { xmax } else { xmin + step_x * ix as f64 };
            data.push(x);
            data.push(y);
        }
    }
    Ok(Matrix::from_vec(resolution * resolution, 2, data).expect("finite grid"))
}
