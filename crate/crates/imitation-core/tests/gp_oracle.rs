//! Regression-mode GP predictions against a brute-force dense-inverse
//! oracle, on random problems of up to 50 training points.

use imitation_core::data::Dataset;
use imitation_core::gp::{fit, kernel_matrix, GpMode, RbfKernel};
use imitation_core::linalg::Matrix;
use imitation_core::net::softmax;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Gaussian elimination with partial pivoting; independent of the library's
/// Cholesky path.
fn gauss_solve(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.rows();
    let m = b.cols();
    let mut aug = Matrix::zeros(n, n + m);
    for i in 0..n {
        for j in 0..n {
            aug.set(i, j, a.get(i, j));
        }
        for j in 0..m {
            aug.set(i, n + j, b.get(i, j));
        }
    }
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if aug.get(r, col).abs() > aug.get(piv, col).abs() {
                piv = r;
            }
        }
        if piv != col {
            for j in 0..(n + m) {
                let t = aug.get(col, j);
                aug.set(col, j, aug.get(piv, j));
                aug.set(piv, j, t);
            }
        }
        let p = aug.get(col, col);
        for r in (col + 1)..n {
            let f = aug.get(r, col) / p;
            for j in col..(n + m) {
                let v = aug.get(r, j) - f * aug.get(col, j);
                aug.set(r, j, v);
            }
        }
    }
    let mut x = Matrix::zeros(n, m);
    for j in 0..m {
        for i in (0..n).rev() {
            let mut s = aug.get(i, n + j);
            for k in (i + 1)..n {
                s -= aug.get(i, k) * x.get(k, j);
            }
            x.set(i, j, s / aug.get(i, i));
        }
    }
    x
}

fn random_problem(rng: &mut StdRng) -> (Dataset, RbfKernel, f64) {
    let n = rng.random_range(3..=50);
    let d = rng.random_range(1..=4);
    let classes = rng.random_range(2..=3);
    let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    // Guarantee every class appears.
    for c in 0..classes {
        labels[c % n] = c;
    }
    let ds = Dataset::new(Matrix::from_vec(n, d, data).unwrap(), labels, classes).unwrap();
    let kernel = RbfKernel::new(rng.random_range(0.3..2.0), rng.random_range(0.4..2.5)).unwrap();
    let noise = rng.random_range(0.01..0.3);
    (ds, kernel, noise)
}

#[test]
fn predict_matches_dense_inverse_oracle_on_20_problems() {
    let mut rng = StdRng::seed_from_u64(4242);
    for trial in 0..20 {
        let (ds, kernel, noise) = random_problem(&mut rng);
        let model = fit(&ds, kernel, GpMode::LabelRegression, noise).unwrap();

        let ky = kernel_matrix(&kernel, &ds.features, &ds.features)
            .unwrap()
            .with_added_diagonal(noise);
        // One-hot {-1,+1} targets, independently rebuilt.
        let mut y = Matrix::zeros(ds.len(), ds.class_count);
        for (i, &l) in ds.labels.iter().enumerate() {
            for c in 0..ds.class_count {
                y.set(i, c, if c == l { 1.0 } else { -1.0 });
            }
        }
        let alpha = gauss_solve(&ky, &y);

        for _ in 0..5 {
            let x: Vec<f64> = (0..ds.dim()).map(|_| rng.random_range(-2.5..2.5)).collect();
            let xm = Matrix::from_vec(1, ds.dim(), x.clone()).unwrap();
            let kstar = kernel_matrix(&kernel, &ds.features, &xm).unwrap();

            let mut means = vec![0.0; ds.class_count];
            for c in 0..ds.class_count {
                for i in 0..ds.len() {
                    means[c] += kstar.get(i, 0) * alpha.get(i, c);
                }
            }
            let solved = gauss_solve(&ky, &kstar);
            let mut quad = 0.0;
            for i in 0..ds.len() {
                quad += kstar.get(i, 0) * solved.get(i, 0);
            }
            let var = kernel.variance + noise - quad;

            let got = model.predict(&x).unwrap();
            let want_probs = softmax(&means);
            for (g, w) in got.probs.iter().zip(&want_probs) {
                assert!(
                    (g - w).abs() < 1e-8,
                    "trial {trial}: prob {g} vs oracle {w}"
                );
            }
            assert!(
                (got.sigma - var.max(0.0).sqrt()).abs() < 1e-8,
                "trial {trial}: sigma {} vs oracle {}",
                got.sigma,
                var.max(0.0).sqrt()
            );
        }
    }
}
