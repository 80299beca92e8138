use crate::error::{GpnetError, Result};

use super::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 5e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for each parameter plus the shared step count.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &[Matrix]) -> Self {
        Self {
            step: 0,
            first: params.iter().map(|p| Matrix::zeros(p.dim())).collect(),
            second: params.iter().map(|p| Matrix::zeros(p.dim())).collect(),
        }
    }
}

/// One Adam update with L2 weight decay folded into the gradient.
pub fn adam_step(
    params: &mut [Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(GpnetError::Config(format!(
            "learning rate must be positive, got {}",
            cfg.lr
        )));
    }
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(GpnetError::Contract(format!(
            "adam_step got {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    state.step += 1;
    let (b1, b2) = cfg.betas;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        if p.dim() != g.dim() {
            return Err(GpnetError::Dimension {
                op: "adam_step",
                left: p.dim(),
                right: g.dim(),
            });
        }
        ndarray::Zip::from(p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                let g = g + cfg.weight_decay * *p;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![array![[1.0, -2.0]]];
        let g = vec![Matrix::zeros((1, 2))];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_step(&mut p, &g, &mut s, &cfg).unwrap();
        assert_eq!(p[0], array![[1.0, -2.0]]);
    }

    #[test]
    fn quadratic_descends() {
        let mut p = vec![array![[1.0]]];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let g = vec![&p[0] * 2.0];
        adam_step(&mut p, &g, &mut s, &cfg).unwrap();
        assert!(p[0][[0, 0]] < 1.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(w) = sum (w - target)^2 has its minimizer at target.
        let target = array![[0.5, -1.5, 2.0]];
        let mut p = vec![Matrix::zeros((1, 3))];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        for step in 0..200 {
            let lr = if step < 150 { cfg.lr } else { 0.01 };
            let g = vec![(&p[0] - &target) * 2.0];
            adam_step(&mut p, &g, &mut s, &AdamConfig { lr, ..cfg }).unwrap();
        }
        let err = (&p[0] - &target)
            .mapv(f64::abs)
            .fold(0.0f64, |a, b| a.max(*b));
        assert!(err < 1e-3, "max error {err}");
    }

    #[test]
    fn non_positive_lr_rejected() {
        let mut p = vec![Matrix::zeros((1, 1))];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.0,
            ..Default::default()
        };
        let g = p.clone();
        assert!(matches!(
            adam_step(&mut p, &g, &mut s, &cfg),
            Err(GpnetError::Config(_))
        ));
    }
}
