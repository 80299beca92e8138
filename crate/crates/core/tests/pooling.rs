mod common;

use common::{dominant_eigenpair, rand_matrix, rng, top_m_oracle};
use gpnet::autodiff::{Matrix, Tape};
use gpnet::pooling::{diffpool, mhfapool, power_iteration, sagpool, top_m, Provenance};
use proptest::prelude::*;
use rand::Rng;

fn positive_matrix<R: Rng>(r: &mut R, n: usize) -> Matrix {
    Matrix::from_shape_fn((n, n), |_| r.random::<f64>() + 1e-3)
}

#[test]
fn power_iteration_matches_eigendecomposition() {
    let mut r = rng(2024);
    for _ in 0..200 {
        let n = r.random_range(4..=16);
        let c = positive_matrix(&mut r, n);
        let mut tape = Tape::new();
        let cv = tape.constant(c.clone());
        let pi = power_iteration(&mut tape, cv, 1000, 1e-12).unwrap();
        assert!(pi.converged);
        let xi = tape.value(pi.vector.unwrap()).column(0).to_vec();
        let (lambda, v) = dominant_eigenpair(&c);
        let dot: f64 = xi.iter().zip(&v).map(|(a, b)| a * b).sum();
        let norm_v = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((dot / norm_v).abs() >= 0.999);
        let cx = c.dot(&Matrix::from_shape_vec((n, 1), xi.clone()).unwrap());
        let residual = (0..n)
            .map(|i| (cx[[i, 0]] - lambda * xi[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(
            residual <= 1e-3 * lambda,
            "residual {residual} lambda {lambda}"
        );
    }
}

#[test]
fn capped_power_iteration_reports_iterations() {
    let c = positive_matrix(&mut rng(3), 6);
    let mut tape = Tape::new();
    let cv = tape.constant(c);
    let pi = power_iteration(&mut tape, cv, 5, 0.0).unwrap();
    assert_eq!(pi.iterations, 5);
    assert!(!pi.converged);
}

#[test]
fn nilpotent_matrix_keeps_last_iterate() {
    // Strictly upper-triangular: C³ = 0, so the third product vanishes.
    let c = Matrix::from_shape_fn((3, 3), |(i, j)| if j > i { 1.0 } else { 0.0 });
    let mut tape = Tape::new();
    let cv = tape.constant(c);
    let pi = power_iteration(&mut tape, cv, 5, 1e-9).unwrap();
    assert_eq!(pi.iterations, 2);
    let v = tape.value(pi.vector.unwrap());
    assert_eq!(v.column(0).to_vec(), vec![1.0, 0.0, 0.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn top_m_matches_brute_force(raw in prop::collection::vec(0u8..6, 1..20), frac in 0.0f64..1.0) {
        let scores: Vec<f64> = raw.iter().map(|&v| f64::from(v) / 5.0).collect();
        let m = 1 + (frac * (scores.len() - 1) as f64) as usize;
        prop_assert_eq!(top_m(&scores, m), top_m_oracle(&scores, m));
    }

    #[test]
    fn sagpool_keeps_oracle_set(seed in any::<u64>(), n in 2usize..16) {
        let mut r = rng(seed);
        let mut tape = Tape::new();
        let h = tape.constant(rand_matrix(&mut r, n, 3, 1.0));
        let a = tape.constant(rand_matrix(&mut r, n, n, 1.0).mapv(f64::abs));
        let w = tape.constant(rand_matrix(&mut r, 3, 1, 1.0));
        let m = r.random_range(1..=n);
        let pg = sagpool(&mut tape, h, a, w, m).unwrap();
        let Provenance::Sagpool { scores, retained } = pg.provenance else { panic!("provenance") };
        let s = tape.value(scores).column(0).to_vec();
        prop_assert_eq!(&retained, &top_m_oracle(&s, m));
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        // Pooled rows: retained nodes in ascending index, gated by their score.
        let mut ascending = retained.clone();
        ascending.sort_unstable();
        let hv = tape.value(h);
        let out = tape.value(pg.pooled);
        for (row, &i) in ascending.iter().enumerate() {
            for c in 0..3 {
                prop_assert!((out[[row, c]] - hv[[i, c]] * s[i]).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn diffpool_assignment_rows_sum_to_one(seed in any::<u64>(), n in 1usize..16) {
        let mut r = rng(seed);
        let mut tape = Tape::new();
        let h = tape.constant(rand_matrix(&mut r, n, 3, 2.0));
        let a = tape.constant(rand_matrix(&mut r, n, n, 1.0).mapv(f64::abs));
        let m = r.random_range(1..=n);
        let w = tape.constant(rand_matrix(&mut r, 3, m, 2.0));
        let pg = diffpool(&mut tape, h, a, w, m).unwrap();
        let Provenance::Diffpool { assignment } = pg.provenance else { panic!("provenance") };
        prop_assert_eq!(tape.shape(pg.pooled), (m, 3));
        for row in tape.value(assignment).rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn mhfapool_attention_rows_sum_to_one(seed in any::<u64>(), n in 1usize..16, heads in 1usize..5) {
        let mut r = rng(seed);
        let mut tape = Tape::new();
        let h = tape.constant(rand_matrix(&mut r, n, 3, 2.0));
        let ws: Vec<_> = (0..heads).map(|_| tape.constant(rand_matrix(&mut r, 6, 1, 2.0))).collect();
        let pg = mhfapool(&mut tape, h, &ws, 5, 1e-6).unwrap();
        prop_assert_eq!(tape.shape(pg.pooled), (heads, 3));
        let Provenance::Mhfapool { heads: traces } = pg.provenance else { panic!("provenance") };
        for t in traces {
            let w = tape.value(t.weights);
            prop_assert!((w.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(t.iterations <= 5);
        }
    }
}
