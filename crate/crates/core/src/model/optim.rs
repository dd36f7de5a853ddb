//! AdamW with decoupled weight decay, the warmup-then-linear-decay
//! schedule and global-norm gradient clipping.

use super::config::TrainConfig;
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn from_config(c: &TrainConfig, lr: f64) -> Self {
        AdamW {
            lr,
            weight_decay: c.weight_decay,
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
        }
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = usize>) -> Self {
        let zeros: Vec<Vec<f64>> = shapes.into_iter().map(|n| vec![0.0; n]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One AdamW update. `decay[i]` says whether tensor `i` takes weight decay.
/// Decay scales the parameter directly by `1 - lr * weight_decay` before
/// the moment update. A non-finite gradient aborts without touching
/// anything.
pub fn optimizer_step(
    params: &mut [&mut [f64]],
    grads: &[Vec<f64>],
    decay: &[bool],
    state: &mut AdamState,
    opt: &AdamW,
) -> Result<(), ModelError> {
    if params.len() != grads.len() || grads.len() != state.m.len() || decay.len() != grads.len() {
        return Err(ModelError::Shape("optimizer tensor count mismatch".into()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != g.len() {
            return Err(ModelError::Shape(format!("optimizer tensor {i}: length mismatch")));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(format!("gradient of tensor {i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let shrink = if decay[i] { 1.0 - opt.lr * opt.weight_decay } else { 1.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for k in 0..g.len() {
            p[k] *= shrink;
            m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g[k];
            v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
        }
    }
    Ok(())
}

/// Linear warmup from 0 to the peak rate over `warmup_steps`, then linear
/// decay to 0 at `total_steps`.
pub fn lr_at(step: usize, config: &TrainConfig, total_steps: usize) -> Result<f64, ModelError> {
    let w = config.warmup_steps;
    if total_steps <= w {
        return Err(ModelError::Config(format!(
            "total steps ({total_steps}) must exceed warmup steps ({w})"
        )));
    }
    let peak = config.learning_rate;
    Ok(if step < w {
        peak * step as f64 / w as f64
    } else if step >= total_steps {
        0.0
    } else {
        peak * (total_steps - step) as f64 / (total_steps - w) as f64
    })
}

/// Global L2 norm over all tensors.
pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales all gradients jointly so their global norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(p: &mut Vec<f64>, g: &[f64], st: &mut AdamState, opt: &AdamW, decay: bool) -> Result<(), ModelError> {
        let mut views: Vec<&mut [f64]> = vec![p.as_mut_slice()];
        optimizer_step(&mut views, &[g.to_vec()], &[decay], st, opt)
    }

    #[test]
    fn zero_gradient_only_decays() {
        let opt = AdamW {
            lr: 0.001,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut p = vec![2.0, -3.0];
        let mut st = AdamState::new([2]);
        step(&mut p, &[0.0, 0.0], &mut st, &opt, true).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.001 * 0.01)).abs() <= 1e-12);
        assert!((p[1] + 3.0 * (1.0 - 0.001 * 0.01)).abs() <= 1e-12);
    }

    #[test]
    fn two_steps_by_hand() {
        let (lr, wd, b1, b2, eps) = (0.1, 0.01, 0.9, 0.999, 1e-8);
        let opt = AdamW {
            lr,
            weight_decay: wd,
            beta1: b1,
            beta2: b2,
            eps,
        };
        let g = 0.5;
        let mut p = vec![1.0];
        let mut st = AdamState::new([1]);
        step(&mut p, &[g], &mut st, &opt, true).unwrap();
        step(&mut p, &[g], &mut st, &opt, true).unwrap();

        let mut x = 1.0f64;
        // step 1
        x *= 1.0 - lr * wd;
        let m1 = (1.0 - b1) * g;
        let v1 = (1.0 - b2) * g * g;
        x -= lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        // step 2
        x *= 1.0 - lr * wd;
        let m2 = b1 * m1 + (1.0 - b1) * g;
        let v2 = b2 * v1 + (1.0 - b2) * g * g;
        x -= lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!((p[0] - x).abs() <= 1e-10);
        // with a constant gradient both bias-corrected steps have size ~lr
        assert!((p[0] - (1.0 - 2.0 * lr)).abs() < 1e-2);
    }

    #[test]
    fn no_decay_is_plain_adam() {
        let opt = AdamW {
            lr: 0.01,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let (mut a, mut b) = (vec![1.0], vec![1.0]);
        let (mut sa, mut sb) = (AdamState::new([1]), AdamState::new([1]));
        step(&mut a, &[0.3], &mut sa, &opt, true).unwrap();
        step(&mut b, &[0.3], &mut sb, &opt, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let opt = AdamW {
            lr: 0.01,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut p = vec![1.0];
        let mut st = AdamState::new([1]);
        assert!(matches!(step(&mut p, &[f64::NAN], &mut st, &opt, true), Err(ModelError::NonFinite(_))));
        assert_eq!((p[0], st.step), (1.0, 0));
    }

    #[test]
    fn schedule_shape() {
        let c = TrainConfig::default();
        let total = 20_000;
        assert_eq!(lr_at(0, &c, total).unwrap(), 0.0);
        assert_eq!(lr_at(5000, &c, total).unwrap(), 0.001);
        assert_eq!(lr_at(total, &c, total).unwrap(), 0.0);
        assert!((lr_at(2500, &c, total).unwrap() - 0.0005).abs() < 1e-15);
        let max = (0..=total).map(|s| lr_at(s, &c, total).unwrap()).fold(0.0, f64::max);
        assert_eq!(max, 0.001);
        for s in 1..=total {
            let jump = (lr_at(s, &c, total).unwrap() - lr_at(s - 1, &c, total).unwrap()).abs();
            assert!(jump <= 0.001 / 5000.0 + 1e-15);
        }
        assert!(lr_at(0, &c, 5000).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0, 4.0]];
        assert_eq!(clip_gradients(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[0][1] - 0.8).abs() < 1e-15);
        let mut g = vec![vec![1.2], vec![1.6]];
        clip_gradients(&mut g, 1.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
        let mut g = vec![vec![0.3, 0.4]];
        clip_gradients(&mut g, 1.0);
        assert_eq!(g, vec![vec![0.3, 0.4]]);
    }
}
