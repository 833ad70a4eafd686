use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{Parameters, Real};

use super::ObjectiveConfig;

/// Linear warmup to the peak rate, then cosine decay to zero at `total_steps`.
pub fn schedule(step: u64, cfg: &ObjectiveConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::Validation(format!(
            "step {step} outside schedule of {} steps",
            cfg.total_steps
        )));
    }
    let (s, w, t) = (step as f64, cfg.warmup_steps as f64, cfg.total_steps as f64);
    if step < cfg.warmup_steps {
        return Ok(cfg.peak_lr * s / w);
    }
    if cfg.total_steps == cfg.warmup_steps {
        return Ok(cfg.peak_lr);
    }
    Ok(cfg.peak_lr * 0.5 * (1.0 + (PI * (s - w) / (t - w)).cos()))
}

/// AdamW moments and the number of updates applied so far.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Parameters<T>,
    pub v: Parameters<T>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(like: &Parameters<T>) -> Self {
        let zero = |p: &Parameters<T>| {
            let mut z = p.clone();
            for (_, s) in z.tensors_mut() {
                s.fill(T::zero());
            }
            z
        };
        OptimizerState {
            m: zero(like),
            v: zero(like),
            step: 0,
        }
    }
}

/// Rescales `grads` in place so its global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut Parameters<T>, max_norm: f64) -> f64 {
    let norm = grads.squared_norm().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = T::lit(max_norm / norm);
        for (_, s) in grads.tensors_mut() {
            s.iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// One bias-corrected AdamW update with decoupled weight decay at rate `lr`.
pub fn adamw_update<T: Real>(
    params: &mut Parameters<T>,
    grads: &Parameters<T>,
    state: &mut OptimizerState<T>,
    cfg: &ObjectiveConfig,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = T::lit(1.0 / (1.0 - b1.powi(t)));
    let c2 = T::lit(1.0 / (1.0 - b2.powi(t)));
    let (b1t, b2t) = (T::lit(b1), T::lit(b2));
    let (ob1, ob2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
    let (lr, wd, eps) = (T::lit(lr), T::lit(cfg.weight_decay), T::lit(cfg.adam_eps));

    let g = grads.tensors();
    let mut p = params.tensors_mut();
    let mut m = state.m.tensors_mut();
    let mut v = state.v.tensors_mut();
    if g.len() != p.len() || m.len() != p.len() || v.len() != p.len() {
        return Err(Error::Validation(
            "optimizer state does not match parameters".into(),
        ));
    }
    for (((pt, gt), mt), vt) in p.iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
        if pt.1.len() != gt.data.len() || mt.1.len() != pt.1.len() || vt.1.len() != pt.1.len() {
            return Err(Error::Validation(format!(
                "shape mismatch in tensor '{}'",
                pt.0
            )));
        }
        for i in 0..pt.1.len() {
            let gi = gt.data[i];
            let mi = b1t * mt.1[i] + ob1 * gi;
            let vi = b2t * vt.1[i] + ob2 * gi * gi;
            mt.1[i] = mi;
            vt.1[i] = vi;
            let step = (mi * c1) / ((vi * c2).sqrt() + eps) + wd * pt.1[i];
            pt.1[i] -= lr * step;
        }
    }
    Ok(())
}

/// [`adamw_update`] at the scheduled rate for the next step.
pub fn adamw_step<T: Real>(
    params: &mut Parameters<T>,
    grads: &Parameters<T>,
    state: &mut OptimizerState<T>,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    let lr = schedule(state.step + 1, cfg)?;
    adamw_update(params, grads, state, cfg, lr)?;
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn cfg() -> ObjectiveConfig {
        ObjectiveConfig {
            peak_lr: 1e-3,
            warmup_steps: 100,
            total_steps: 1000,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_endpoints() {
        let c = cfg();
        assert_eq!(schedule(0, &c).unwrap(), 0.0);
        assert!((schedule(100, &c).unwrap() - 1e-3).abs() < 1e-12);
        assert!(schedule(1000, &c).unwrap().abs() < 1e-12);
        assert!(schedule(1001, &c).is_err());
        let below = schedule(99, &c).unwrap();
        let above = schedule(101, &c).unwrap();
        assert!((below - 1e-3).abs() < 2e-5 && (above - 1e-3).abs() < 2e-5);
        for s in 100..1000 {
            assert!(schedule(s + 1, &c).unwrap() <= schedule(s, &c).unwrap());
        }
    }

    fn scalar_model() -> (ModelConfig, Parameters<f64>) {
        let mc = ModelConfig {
            vocab_size: 5,
            hidden: 2,
            heads: 1,
            ffn: 1,
            max_len: 4,
            layers: 1,
            ..Default::default()
        };
        (mc.clone(), Parameters::zeros(&mc))
    }

    #[test]
    fn single_step_hand_value() {
        let (_, mut p) = scalar_model();
        let mut g = p.clone();
        p.head_b[0] = 1.0;
        g.head_b[0] = 1.0;
        let mut st = OptimizerState::new(&p);
        let c = ObjectiveConfig {
            weight_decay: 0.01,
            ..Default::default()
        };
        adamw_update(&mut p, &g, &mut st, &c, 0.1).unwrap();
        let expect = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8) + 0.01);
        assert!((p.head_b[0] - expect).abs() < 1e-15);
        assert!((p.head_b[0] - 0.899).abs() < 1e-8);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let (mc, _) = scalar_model();
        let mut p = Parameters::<f64>::init(&mc, 3).unwrap();
        let before = p.clone();
        let g = Parameters::zeros(&mc);
        let mut st = OptimizerState::new(&p);
        let c = ObjectiveConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..3 {
            adamw_update(&mut p, &g, &mut st, &c, 0.1).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn clipping_bounds_norm() {
        let (mc, _) = scalar_model();
        let mut g = Parameters::<f64>::init(&mc, 1).unwrap();
        let n0 = clip_grad_norm(&mut g, 0.0);
        assert!((g.squared_norm().sqrt() - n0).abs() < 1e-12);
        clip_grad_norm(&mut g, n0 / 2.0);
        assert!((g.squared_norm().sqrt() - n0 / 2.0).abs() < 1e-9);
    }
}
