use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{order_loss, violates};
use crate::supervision::EntailmentLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderStats {
    pub n: usize,
    /// Fraction of pairs where some coordinate of `u_t` exceeds `u_t'`.
    pub violation_rate: f64,
    pub mean_order_loss: f64,
}

/// Dominance check over the `(u_t, u_t')` rows of entail pairs.
pub fn order_violation_rate(u_first: &Array2<f32>, u_second: &Array2<f32>) -> Result<OrderStats> {
    if u_first.dim() != u_second.dim() {
        return Err(Error::Validation(
            "embedding matrices differ in shape".into(),
        ));
    }
    let n = u_first.nrows();
    if n == 0 {
        return Err(Error::Validation(
            "no entail pairs to measure order violations on".into(),
        ));
    }
    let mut violating = 0usize;
    let mut loss = 0.0f64;
    for (a, b) in u_first.rows().into_iter().zip(u_second.rows()) {
        violating += violates(a, b) as usize;
        loss += order_loss(a, b)? as f64;
    }
    Ok(OrderStats {
        n,
        violation_rate: violating as f64 / n as f64,
        mean_order_loss: loss / n as f64,
    })
}

pub fn cosine(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> Option<f64> {
    let dot: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineStats {
    pub label: String,
    pub n: usize,
    /// Pairs skipped because one embedding was the zero vector.
    pub skipped: usize,
    pub mean_cosine: Option<f64>,
}

/// Mean `cos(u_t, u_t')` per label class (diagnostic only).
pub fn neutral_cosine_stats(
    u_first: &Array2<f32>,
    u_second: &Array2<f32>,
    labels: &[EntailmentLabel],
) -> Result<Vec<CosineStats>> {
    if u_first.nrows() != labels.len() || u_second.nrows() != labels.len() {
        return Err(Error::Validation(
            "embedding rows and labels differ in count".into(),
        ));
    }
    let mut sum = [0.0f64; 3];
    let mut n = [0usize; 3];
    let mut skipped = [0usize; 3];
    for (i, y) in labels.iter().enumerate() {
        let k = y.index();
        match cosine(u_first.row(i), u_second.row(i)) {
            Some(c) => {
                sum[k] += c;
                n[k] += 1;
            }
            None => skipped[k] += 1,
        }
    }
    Ok(EntailmentLabel::ALL
        .iter()
        .map(|l| {
            let k = l.index();
            CosineStats {
                label: l.name().to_string(),
                n: n[k],
                skipped: skipped[k],
                mean_cosine: (n[k] > 0).then(|| sum[k] / n[k] as f64),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn violation_rate_cases() {
        let a = array![[0.0f32, 0.0], [1.0, 0.0], [0.0, 0.0], [2.0, 2.0]];
        let b = array![[1.0f32, 1.0], [0.0, 1.0], [0.0, 0.0], [1.0, 1.0]];
        let s = order_violation_rate(&a, &b).unwrap();
        assert_eq!(s.violation_rate, 0.5);
        assert_eq!(s.mean_order_loss, (1.0 + 2.0) / 4.0);
        let ok = order_violation_rate(
            &b.slice(ndarray::s![2..3, ..]).to_owned(),
            &b.slice(ndarray::s![2..3, ..]).to_owned(),
        )
        .unwrap();
        assert_eq!((ok.violation_rate, ok.mean_order_loss), (0.0, 0.0));
        assert!(order_violation_rate(&Array2::zeros((0, 2)), &Array2::zeros((0, 2))).is_err());
    }

    #[test]
    fn cosine_cases() {
        let u = array![[1.0f32, 2.0], [1.0, 0.0], [0.0, 0.0]];
        let v = array![[1.0f32, 2.0], [0.0, 3.0], [1.0, 1.0]];
        let labels = [
            EntailmentLabel::Entail,
            EntailmentLabel::Neutral,
            EntailmentLabel::Neutral,
        ];
        let s = neutral_cosine_stats(&u, &v, &labels).unwrap();
        assert!((s[0].mean_cosine.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(s[2].mean_cosine, Some(0.0));
        assert_eq!((s[2].n, s[2].skipped), (1, 1));
        assert_eq!(s[1].mean_cosine, None);
    }
}
