//! Property tests over the numeric invariants of the core modules.

use imitation_core::engine::{fidelity_weights, merge_and_advance, PseudoExample, PseudoSets};
use imitation_core::linalg::{cholesky, solve_spd, Matrix};
use imitation_core::net::{hinge_hard_loss, kl_soft_loss, softmax};
use imitation_core::optim::{AdamState, NadamState};
use proptest::prelude::*;

fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0f64..1.0, rows * cols)
        .prop_map(move |data| Matrix::from_vec(rows, cols, data).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1usize..8, 1usize..8, 1usize..8, 1usize..8)
}

proptest! {
    #[test]
    fn matmul_is_associative((a, b, c, d) in dims().prop_flat_map(|(m, n, p, q)| {
        (matrix_strategy(m, n), matrix_strategy(n, p), matrix_strategy(p, q), Just(()))
    })) {
        let _ = d;
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_reconstructs_random_spd(b in (2usize..16).prop_flat_map(|n| matrix_strategy(n, n))) {
        let a = b.matmul_tn(&b).unwrap().with_added_diagonal(1.0);
        let f = cholesky(&a).unwrap();
        let rec = f.lower().matmul_nt(f.lower()).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, y) in rec.data().iter().zip(a.data()) {
            num += (x - y) * (x - y);
            den += y * y;
        }
        prop_assert!((num / den).sqrt() < 1e-8);
    }

    #[test]
    fn solve_spd_satisfies_residual_bound(
        b in (2usize..12).prop_flat_map(|n| (matrix_strategy(n, n), matrix_strategy(n, 1)))
    ) {
        let (c, rhs) = b;
        let a = c.matmul_tn(&c).unwrap().with_added_diagonal(0.5);
        let x = solve_spd(&a, &rhs, 0.0).unwrap();
        let ax = a.matmul(&x).unwrap();
        let bmax = rhs.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let resid = ax
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0f64, f64::max);
        prop_assert!(resid / bmax <= 1e-8);
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant(
        logits in prop::collection::vec(-20.0f64..20.0, 2..10),
        shift in -50.0f64..50.0,
    ) {
        let p = softmax(&logits);
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));

        let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
        let q = softmax(&shifted);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_match(
        logits in prop::collection::vec(-5.0f64..5.0, 3),
        raw in prop::collection::vec(0.05f64..1.0, 3),
    ) {
        let s: f64 = raw.iter().sum();
        let refp: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let (loss, _) = kl_soft_loss(&refp, &logits).unwrap();
        prop_assert!(loss >= 0.0);

        let (zero_loss, _) = kl_soft_loss(&softmax(&logits), &logits).unwrap();
        prop_assert!(zero_loss < 1e-12);
    }

    #[test]
    fn hinge_zero_iff_unit_margin(
        base in prop::collection::vec(-3.0f64..3.0, 4),
        label in 0usize..4,
        boost in 1.0f64..3.0,
    ) {
        // Construct logits where the true class exceeds all others by >= 1.
        let mut logits = base.clone();
        let others_max = base
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != label)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        logits[label] = others_max + boost;
        let (loss, grad) = hinge_hard_loss(label, &logits).unwrap();
        prop_assert_eq!(loss, 0.0);
        prop_assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn fidelity_weights_hit_identities(
        sigmas in prop::collection::vec(0.0f64..4.0, 1..50),
        bar in 0.1f64..10.0,
        spread in 1.0f64..50.0,
    ) {
        let hat = bar * spread;
        let w = fidelity_weights(&sigmas, hat, bar);
        let mean: f64 = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
        for (s, v) in sigmas.iter().zip(&w) {
            prop_assert!(*v > 0.0 && *v <= hat * (1.0 + 1e-12));
            if mean > 0.0 && (s - mean).abs() < 1e-15 {
                prop_assert!((v - bar).abs() < 1e-12);
            }
            if *s == 0.0 && mean > 0.0 {
                prop_assert!((v - hat).abs() / hat < 1e-12);
            }
        }
    }

    #[test]
    fn pseudo_set_growth_law(n0 in 1usize..30, merges in 0usize..5) {
        let initial: Vec<PseudoExample> = (0..n0)
            .map(|i| PseudoExample {
                x: vec![i as f64, -(i as f64)],
                ref_probs: vec![0.5, 0.5],
                sigma: 0.1,
                weight: 1.0,
                optimizer: None,
            })
            .collect();
        let mut sets = PseudoSets::new(initial, 0.05).unwrap();
        for t in 0..merges {
            prop_assert_eq!(sets.current().len(), (t + 1) * n0);
            prop_assert_eq!(sets.next().len(), n0);
            sets = merge_and_advance(sets, 0.05).unwrap();
        }
        prop_assert_eq!(sets.current().len(), (merges + 1) * n0);
        prop_assert_eq!(sets.next().len(), n0);
        prop_assert_eq!(sets.step_index(), merges);
    }

    #[test]
    fn optimizers_are_bit_deterministic(
        grads in prop::collection::vec(-2.0f64..2.0, 1..6),
        lr in 1e-4f64..0.5,
    ) {
        let dim = grads.len();
        let run_adam = || {
            let mut st = AdamState::new(dim, lr).unwrap();
            let mut p = vec![0.5; dim];
            for _ in 0..7 {
                st.step(&mut p, &grads).unwrap();
            }
            p
        };
        let run_nadam = || {
            let mut st = NadamState::new(dim, lr).unwrap();
            let mut p = vec![0.5; dim];
            for _ in 0..7 {
                st.step(&mut p, &grads).unwrap();
            }
            p
        };
        let (a, b) = (run_adam(), run_adam());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let (a, b) = (run_nadam(), run_nadam());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
