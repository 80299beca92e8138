#![allow(dead_code)]

use gpnet::autodiff::{Bound, Matrix, ParamStore, Tape, Var};
use gpnet::graph::FeatureMapSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| scale * (2.0 * rng.random::<f64>() - 1.0))
}

pub fn random_sequence<R: Rng>(
    rng: &mut R,
    t: usize,
    w: usize,
    h: usize,
    c: usize,
    id: u64,
) -> FeatureMapSequence {
    let data = (0..t * w * h * c)
        .map(|_| rng.random::<f32>() * 2.0 - 1.0)
        .collect();
    FeatureMapSequence::new(t, w, h, c, data, id).unwrap()
}

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let diff = (analytic - numeric).mapv(|v| v * v).sum().sqrt();
    let scale = analytic.mapv(|v| v * v).sum().sqrt() + numeric.mapv(|v| v * v).sum().sqrt();
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Reduces any output to a scalar through a fixed random weighting so every
/// entry of the output contributes a distinct gradient.
pub fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(out);
    let w = rand_matrix(&mut rng(seed), r, c, 1.0);
    let wv = tape.constant(w);
    let prod = tape.mul(out, wv).unwrap();
    tape.sum(prod)
}

fn eval_scalar<F>(inputs: &[Matrix], f: &F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> gpnet::Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    tape.value(out)[[0, 0]]
}

/// Largest relative error between backprop and central differences over all inputs.
pub fn check_inputs<F>(inputs: &[Matrix], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> gpnet::Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, m) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[k])
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(m.dim()));
        let mut numeric = Matrix::zeros(m.dim());
        for idx in 0..m.len() {
            let (r, c) = (idx / m.ncols(), idx % m.ncols());
            let mut plus = inputs.to_vec();
            plus[k][[r, c]] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k][[r, c]] -= FD_STEP;
            numeric[[r, c]] = (eval_scalar(&plus, &f) - eval_scalar(&minus, &f)) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Same check over every parameter of a store.
pub fn check_store<F>(store: &ParamStore, f: F) -> f64
where
    F: Fn(&mut Tape, &Bound) -> gpnet::Result<Var>,
{
    let eval = |s: &ParamStore| {
        let mut tape = Tape::new();
        let b = s.bind(&mut tape);
        let out = f(&mut tape, &b).unwrap();
        tape.value(out)[[0, 0]]
    };
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = f(&mut tape, &bound).unwrap();
    tape.backward(out).unwrap();
    let grads = store.gradients(&tape, &bound);
    let mut worst: f64 = 0.0;
    for (k, analytic) in grads.iter().enumerate() {
        let mut numeric = Matrix::zeros(analytic.dim());
        let cols = analytic.ncols();
        for idx in 0..analytic.len() {
            let (r, c) = (idx / cols, idx % cols);
            let mut plus = store.clone();
            plus.values_mut()[k][[r, c]] += FD_STEP;
            let mut minus = store.clone();
            minus.values_mut()[k][[r, c]] -= FD_STEP;
            numeric[[r, c]] = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(analytic, &numeric));
    }
    worst
}

/// Row-permutation matrix `P` with `(P X)[i] = X[perm[i]]`.
pub fn permutation_matrix(perm: &[usize]) -> Matrix {
    let n = perm.len();
    Matrix::from_shape_fn((n, n), |(i, j)| if perm[i] == j { 1.0 } else { 0.0 })
}

pub fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    Matrix::from_shape_fn(m.dim(), |(i, j)| m[[perm[i], j]])
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Largest deviation from equivariance (both GC kinds) and from invariance
/// (MHFAPool followed by readout) over `trials` random node permutations.
pub fn permutation_deviation(trials: usize, seed: u64) -> f64 {
    use gpnet::gc::{GcKind, GcStack, GcStackConfig};
    use gpnet::graph::{AdjacencyVariant, GranularGraph};
    use gpnet::pooling::{PoolConfig, PoolMethod, Pooler, Readout};
    use rand::seq::SliceRandom;

    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let seq = random_sequence(&mut r, 4, 2, 4, 3, 0);
        let g = GranularGraph::build(&seq, 4, AdjacencyVariant::Dna, 1, 2).unwrap();
        let n = g.num_nodes();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let p = permutation_matrix(&perm);
        let x = g.node_features.clone();
        let px = permute_rows(&x, &perm);

        for kind in [GcKind::Spatial, GcKind::Spectral] {
            let prop = match kind {
                GcKind::Spatial => g.neighbor_mean().unwrap(),
                GcKind::Spectral => g.adjacency.normalized.clone(),
            };
            let pprop = p.dot(&prop).dot(&p.t());
            let cfg = GcStackConfig {
                kind,
                num_layers: 2,
                hidden_dim: 6,
                spectral_shortcut_out_dim: 5,
            };
            let mut store = ParamStore::new();
            let stack =
                GcStack::init(&mut store, "b", 3, cfg, &mut rng(seed ^ trial as u64)).unwrap();
            let pool_cfg = PoolConfig {
                method: PoolMethod::Mhfapool,
                ..Default::default()
            };
            let d = cfg.output_dim();
            let pooler = Pooler::init(&mut store, "b", n, d, pool_cfg, &mut r).unwrap();
            let readout = Readout::init(&mut store, "b", d, 4, &mut r);
            let run = |feats: &Matrix, prop: &Matrix| {
                let mut t = Tape::new();
                let b = store.bind(&mut t);
                let xv = t.constant(feats.clone());
                let pv = t.constant(prop.clone());
                let h = stack.forward(&mut t, &b, xv, pv).unwrap();
                let pooled = pooler.forward(&mut t, &b, h, pv).unwrap();
                let out = readout.forward(&mut t, &b, pooled.pooled).unwrap();
                (t.value(h).clone(), t.value(out).clone())
            };
            let (h, out) = run(&x, &prop);
            let (ph, pout) = run(&px, &pprop);
            worst = worst.max(max_abs_diff(&permute_rows(&h, &perm), &ph));
            worst = worst.max(max_abs_diff(&out, &pout));
        }
    }
    worst
}

/// `k` nearest other nodes by repeated minimum selection.
pub fn knn_oracle(f: &Matrix, k: usize) -> gpnet::graph::EdgeSet {
    let n = f.nrows();
    let mut edges = gpnet::graph::EdgeSet::new();
    for i in 0..n {
        let dist = |j: usize| -> f64 {
            (0..f.ncols())
                .map(|c| (f[[i, c]] - f[[j, c]]).powi(2))
                .sum::<f64>()
        };
        let mut chosen: Vec<usize> = Vec::new();
        for _ in 0..k {
            // Selection by repeated minimum; strict `<` keeps the lowest index on ties.
            let mut best: Option<usize> = None;
            for j in 0..n {
                if j == i || chosen.contains(&j) {
                    continue;
                }
                if best.is_none_or(|b| dist(j) < dist(b)) {
                    best = Some(j);
                }
            }
            chosen.push(best.unwrap());
        }
        for j in chosen {
            edges.insert(gpnet::graph::Edge::new(j, i));
        }
    }
    edges
}

/// Nodes beaten by fewer than `m` others under (score desc, index asc), in that order.
pub fn top_m_oracle(scores: &[f64], m: usize) -> Vec<usize> {
    let beats = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let mut kept: Vec<usize> = (0..scores.len())
        .filter(|&i| (0..scores.len()).filter(|&j| beats(j, i)).count() < m)
        .collect();
    kept.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    kept
}

/// Perron root from the full spectrum, eigenvector from the null space of `C − λI`.
pub fn dominant_eigenpair(c: &Matrix) -> (f64, Vec<f64>) {
    let n = c.nrows();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| c[[i, j]]);
    let lambda = m
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = &m - nalgebra::DMatrix::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    (lambda, v_t.row(k).iter().copied().collect())
}
