use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::model::{vjp, ForwardTrace, ModelConfig, Parameters, Real};
use crate::supervision::EntailmentLabel;

use super::ObjectiveConfig;

/// Smoothed target `(1 - eps) * onehot(y) + eps / 3`.
pub fn smoothed_target(label: EntailmentLabel, eps: f64) -> [f64; 3] {
    let mut q = [eps / 3.0; 3];
    q[label.index()] += 1.0 - eps;
    q
}

fn log_softmax<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite logits".into()));
    }
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
    Ok(logits.iter().map(|&v| v - lse).collect())
}

/// Label-smoothed cross-entropy of one 3-way prediction.
pub fn tep_loss<T: Real>(logits: &[T], label: EntailmentLabel, eps: f64) -> Result<T> {
    if logits.len() != 3 {
        return Err(Error::Validation(format!(
            "expected 3 logits, got {}",
            logits.len()
        )));
    }
    let lp = log_softmax(logits)?;
    let q = smoothed_target(label, eps);
    Ok(-(0..3).map(|i| T::lit(q[i]) * lp[i]).sum::<T>())
}

/// Gradient of [`tep_loss`] with respect to the logits: `softmax - q`.
pub fn tep_loss_grad<T: Real>(logits: &[T], label: EntailmentLabel, eps: f64) -> Result<[T; 3]> {
    let lp = log_softmax(logits)?;
    let q = smoothed_target(label, eps);
    Ok([
        lp[0].exp() - T::lit(q[0]),
        lp[1].exp() - T::lit(q[1]),
        lp[2].exp() - T::lit(q[2]),
    ])
}

/// Sum of coordinates where the earlier embedding exceeds the later one.
pub fn order_loss<T: Real>(u_t: ArrayView1<'_, T>, u_t2: ArrayView1<'_, T>) -> Result<T> {
    if u_t.len() != u_t2.len() {
        return Err(Error::Validation(format!(
            "embedding dimensions differ: {} vs {}",
            u_t.len(),
            u_t2.len()
        )));
    }
    Ok(u_t
        .iter()
        .zip(u_t2.iter())
        .map(|(&a, &b)| (a - b).max(T::zero()))
        .sum())
}

/// Whether any coordinate of `u_t` strictly exceeds `u_t2`.
pub fn violates<T: Real>(u_t: ArrayView1<'_, T>, u_t2: ArrayView1<'_, T>) -> bool {
    u_t.iter().zip(u_t2.iter()).any(|(&a, &b)| a > b)
}

/// Batch-mean losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub tep: f64,
    /// Mean order loss over entail pairs (unweighted); 0 if there are none.
    pub order: f64,
    /// Entail pairs in the batch.
    pub n_entail: usize,
    /// Entail pairs whose embeddings break dominance.
    pub n_violating: usize,
}

impl LossBreakdown {
    pub fn violation_rate(&self) -> Option<f64> {
        (self.n_entail > 0).then(|| self.n_violating as f64 / self.n_entail as f64)
    }
}

/// `mean_i [tep_i + lambda * order_i * 1(y_i = entail)]` for a traced batch.
pub fn total_loss<T: Real>(
    trace: &ForwardTrace<T>,
    labels: &[EntailmentLabel],
    cfg: &ObjectiveConfig,
) -> Result<LossBreakdown> {
    let b = trace.batch_size();
    if labels.len() != b {
        return Err(Error::Validation(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if b == 0 {
        return Err(Error::Validation("empty batch".into()));
    }
    let mut tep = 0.0;
    let mut order_sum = 0.0;
    let mut n_entail = 0;
    let mut n_violating = 0;
    for (e, &y) in labels.iter().enumerate() {
        let logits = trace.logits.row(e);
        tep += tep_loss(logits.as_slice().expect("contiguous"), y, cfg.smoothing)?.as_f64();
        if y == EntailmentLabel::Entail {
            let (a, c) = (trace.u_first.row(e), trace.u_second.row(e));
            order_sum += order_loss(a, c)?.as_f64();
            n_entail += 1;
            n_violating += violates(a, c) as usize;
        }
    }
    let bf = b as f64;
    let total = tep / bf + cfg.order_weight * order_sum / bf;
    Ok(LossBreakdown {
        total,
        tep: tep / bf,
        order: if n_entail > 0 {
            order_sum / n_entail as f64
        } else {
            0.0
        },
        n_entail,
        n_violating,
    })
}

/// Output gradients of [`total_loss`] with respect to logits and pooled
/// embeddings.
pub fn output_grads<T: Real>(
    trace: &ForwardTrace<T>,
    labels: &[EntailmentLabel],
    cfg: &ObjectiveConfig,
) -> Result<(Array2<T>, Array2<T>, Array2<T>)> {
    let b = trace.batch_size();
    let inv_b = T::lit(1.0 / b as f64);
    let lam = T::lit(cfg.order_weight);
    let mut d_logits = Array2::<T>::zeros(trace.logits.dim());
    let mut d_first = Array2::<T>::zeros(trace.u_first.dim());
    let mut d_second = Array2::<T>::zeros(trace.u_second.dim());
    for (e, &y) in labels.iter().enumerate() {
        let g = tep_loss_grad(
            trace.logits.row(e).as_slice().expect("contiguous"),
            y,
            cfg.smoothing,
        )?;
        for c in 0..3 {
            d_logits[[e, c]] = g[c] * inv_b;
        }
        if y == EntailmentLabel::Entail && cfg.order_weight > 0.0 {
            let w = lam * inv_b;
            for i in 0..trace.u_first.ncols() {
                if trace.u_first[[e, i]] > trace.u_second[[e, i]] {
                    d_first[[e, i]] = w;
                    d_second[[e, i]] = -w;
                }
            }
        }
    }
    Ok((d_logits, d_first, d_second))
}

/// Loss and exact parameter gradients for a traced batch.
pub fn backward<T: Real>(
    params: &Parameters<T>,
    model_cfg: &ModelConfig,
    trace: &ForwardTrace<T>,
    labels: &[EntailmentLabel],
    cfg: &ObjectiveConfig,
) -> Result<(LossBreakdown, Parameters<T>)> {
    let loss = total_loss(trace, labels, cfg)?;
    let (dl, df, ds) = output_grads(trace, labels, cfg)?;
    let grads = vjp(params, model_cfg, trace, &dl, &df, &ds);
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::Numerical(format!(
            "non-finite gradient in tensor '{name}'"
        )));
    }
    Ok((loss, grads))
}
