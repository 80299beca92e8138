mod common;

use common::{rand_matrix, rng};
use gpnet::autodiff::{Matrix, Tape};
use gpnet::model::losses::hardest_pairs;
use gpnet::model::triplet_loss;
use gpnet::retrieval::{
    average_precision, evaluate, evaluate_leave_one_out, rank_gallery, EvalOptions, GalleryItem,
    RetrievalIndex,
};
use proptest::prelude::*;
use rand::Rng;

fn items(features: &Matrix, ids: &[u64]) -> Vec<GalleryItem> {
    features
        .rows()
        .into_iter()
        .zip(ids)
        .map(|(r, &id)| GalleryItem {
            feature: r.to_vec(),
            identity: id,
            camera: None,
        })
        .collect()
}

/// Mean over relevant positions `k` of (relevant in top k) / k.
fn ap_oracle(relevant: &[bool]) -> Option<f64> {
    let positions: Vec<usize> = (0..relevant.len()).filter(|&i| relevant[i]).collect();
    if positions.is_empty() {
        return None;
    }
    let precisions = positions
        .iter()
        .map(|&k| relevant[..=k].iter().filter(|&&r| r).count() as f64 / (k + 1) as f64);
    Some(precisions.sum::<f64>() / positions.len() as f64)
}

fn triplet_oracle(f: &Matrix, labels: &[usize], margin: f64) -> f64 {
    let n = f.nrows();
    let d = |i: usize, j: usize| (&f.row(i) - &f.row(j)).mapv(|v| v * v).sum().sqrt();
    (0..n)
        .map(|a| {
            let hp = (0..n)
                .filter(|&j| j != a && labels[j] == labels[a])
                .map(|j| d(a, j))
                .fold(f64::MIN, f64::max);
            let hn = (0..n)
                .filter(|&j| labels[j] != labels[a])
                .map(|j| d(a, j))
                .fold(f64::MAX, f64::min);
            (margin + hp - hn).max(0.0)
        })
        .sum()
}

fn setup(seed: u64, n: usize, dim: usize, classes: u64) -> (Matrix, Vec<u64>, Matrix, Vec<u64>) {
    let mut r = rng(seed);
    let g = rand_matrix(&mut r, n, dim, 1.0);
    let gids: Vec<u64> = (0..n).map(|_| r.random_range(0..classes)).collect();
    let q = rand_matrix(&mut r, 5, dim, 1.0);
    let qids: Vec<u64> = (0..5).map(|_| r.random_range(0..classes)).collect();
    (g, gids, q, qids)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ap_matches_definition(relevant in prop::collection::vec(any::<bool>(), 0..30)) {
        let got = average_precision(&relevant).map(|a| a.0);
        match (got, ap_oracle(&relevant)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn cmc_is_monotone(seed in any::<u64>(), n in 2usize..40) {
        let (g, gids, q, qids) = setup(seed, n, 3, 4);
        let idx = RetrievalIndex::new(items(&g, &gids)).unwrap();
        let r = evaluate(&items(&q, &qids), &idx, EvalOptions::default()).unwrap();
        prop_assert!(r.rank(1) <= r.rank(5) && r.rank(5) <= r.rank(20));
        prop_assert!(r.map >= 0.0 && r.map <= 1.0);
    }

    #[test]
    fn map_invariant_under_isometry(seed in any::<u64>(), n in 2usize..30, shift in -5.0f64..5.0) {
        let (g, gids, q, qids) = setup(seed, n, 2, 3);
        let (s, c) = (0.6, 0.8);
        let rot = Matrix::from_shape_vec((2, 2), vec![c, -s, s, c]).unwrap();
        let move_ = |m: &Matrix| m.dot(&rot).mapv(|v| v + shift);
        let base = evaluate(&items(&q, &qids), &RetrievalIndex::new(items(&g, &gids)).unwrap(), EvalOptions::default()).unwrap();
        let moved = evaluate(
            &items(&move_(&q), &qids),
            &RetrievalIndex::new(items(&move_(&g), &gids)).unwrap(),
            EvalOptions::default(),
        )
        .unwrap();
        prop_assert!((base.map - moved.map).abs() < 1e-9);
        prop_assert_eq!(base.rank(1), moved.rank(1));
    }

    #[test]
    fn duplicating_gallery_keeps_rank1(seed in any::<u64>(), n in 2usize..30) {
        let (g, gids, q, qids) = setup(seed, n, 3, 3);
        let once = items(&g, &gids);
        let twice: Vec<GalleryItem> = once.iter().chain(&once).cloned().collect();
        let qs = items(&q, &qids);
        let a = evaluate(&qs, &RetrievalIndex::new(once).unwrap(), EvalOptions::default()).unwrap();
        let b = evaluate(&qs, &RetrievalIndex::new(twice).unwrap(), EvalOptions::default()).unwrap();
        prop_assert_eq!(a.rank(1), b.rank(1));
    }

    #[test]
    fn triplet_loss_matches_oracle_and_ignores_translation(seed in any::<u64>(), shift in -10.0f64..10.0) {
        let mut r = rng(seed);
        let f = rand_matrix(&mut r, 8, 3, 2.0);
        let labels = [0, 0, 1, 1, 2, 2, 3, 3];
        let loss = |m: &Matrix| {
            let mut t = Tape::new();
            let v = t.constant(m.clone());
            let l = triplet_loss(&mut t, v, &labels, 0.3).unwrap();
            t.value(l)[[0, 0]]
        };
        let base = loss(&f);
        prop_assert!((base - triplet_oracle(&f, &labels, 0.3)).abs() < 1e-9);
        prop_assert!((base - loss(&f.mapv(|v| v + shift))).abs() < 1e-9);
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut t = Tape::new();
        let x = t.constant(rand_matrix(&mut rng(seed), 4, 6, scale));
        let s = t.softmax_rows(x);
        for row in t.value(s).rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

#[test]
fn hardest_pairs_follow_distances() {
    let f = Matrix::from_shape_vec((4, 1), vec![0.0, 1.0, 3.0, 10.0]).unwrap();
    let mut t = Tape::new();
    let v = t.constant(f);
    assert_eq!(
        hardest_pairs(&t, v, &[0, 0, 1, 1]).unwrap(),
        vec![(1, 2), (0, 2), (3, 1), (2, 1)]
    );
}

#[test]
fn leave_one_out_excludes_the_query() {
    let f = Matrix::from_shape_vec((4, 1), vec![0.0, 0.1, 5.0, 5.1]).unwrap();
    let idx = RetrievalIndex::new(items(&f, &[1, 1, 2, 2])).unwrap();
    let r = evaluate_leave_one_out(&idx, EvalOptions::default()).unwrap();
    assert_eq!(r.rank(1), 1.0);
    assert_eq!(r.map, 1.0);
    assert_eq!(rank_gallery(&[0.0], &idx).unwrap()[0], 0);
}
