use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::supervision::EntailmentLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True instances of the class.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub mcc: f64,
    /// `confusion[true][predicted]`, class order entail, contradict, neutral.
    pub confusion: [[usize; 3]; 3],
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Accuracy, per-class precision/recall/F1, macro-F1 and multiclass MCC.
///
/// Precision, recall or F1 with a zero denominator are 0; MCC with a zero
/// denominator is 0.
pub fn classify_metrics(
    predictions: &[EntailmentLabel],
    labels: &[EntailmentLabel],
) -> Result<ClassificationMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Validation(
            "cannot score an empty prediction set".into(),
        ));
    }
    let mut confusion = [[0usize; 3]; 3];
    for (p, y) in predictions.iter().zip(labels) {
        confusion[y.index()][p.index()] += 1;
    }
    let n = labels.len();
    let correct: usize = (0..3).map(|k| confusion[k][k]).sum();
    let t: Vec<f64> = (0..3)
        .map(|k| confusion[k].iter().sum::<usize>() as f64)
        .collect();
    let p: Vec<f64> = (0..3)
        .map(|k| (0..3).map(|r| confusion[r][k]).sum::<usize>() as f64)
        .collect();

    let per_class: Vec<ClassMetrics> = EntailmentLabel::ALL
        .iter()
        .map(|&l| {
            let k = l.index();
            let tp = confusion[k][k] as f64;
            let precision = ratio(tp, p[k]);
            let recall = ratio(tp, t[k]);
            ClassMetrics {
                label: l.name().to_string(),
                precision,
                recall,
                f1: ratio(2.0 * precision * recall, precision + recall),
                support: t[k] as usize,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / 3.0;

    let (c, s) = (correct as f64, n as f64);
    let pt: f64 = (0..3).map(|k| p[k] * t[k]).sum();
    let pp: f64 = p.iter().map(|v| v * v).sum();
    let tt: f64 = t.iter().map(|v| v * v).sum();
    let denom = ((s * s - pp) * (s * s - tt)).sqrt();
    let mcc = if denom == 0.0 {
        0.0
    } else {
        (c * s - pt) / denom
    };

    Ok(ClassificationMetrics {
        n,
        accuracy: c / s,
        per_class,
        macro_f1,
        mcc,
        confusion,
    })
}

fn check_calibration_inputs(confidences: &[f64], correct: &[bool]) -> Result<()> {
    if confidences.len() != correct.len() {
        return Err(Error::Validation(format!(
            "{} confidences for {} outcomes",
            confidences.len(),
            correct.len()
        )));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Validation(format!("confidence {c} outside [0, 1]")));
    }
    Ok(())
}

/// Equal-width bin of a confidence; values on an interior edge go to the
/// upper bin and 1.0 goes to the last bin.
pub fn ece_bin(confidence: f64, n_bins: usize) -> usize {
    ((confidence * n_bins as f64).floor() as usize).min(n_bins - 1)
}

/// Expected calibration error over `n_bins` equal-width bins on [0, 1].
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    check_calibration_inputs(confidences, correct)?;
    if n_bins == 0 {
        return Err(Error::Config("n_bins must be positive".into()));
    }
    if confidences.is_empty() {
        return Err(Error::Validation("ECE of an empty set".into()));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf = vec![0.0f64; n_bins];
    let mut acc = vec![0.0f64; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ece_bin(c, n_bins);
        count[b] += 1;
        conf[b] += c;
        acc[b] += ok as u8 as f64;
    }
    let n = confidences.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let k = count[b] as f64;
            (k / n) * (acc[b] / k - conf[b] / k).abs()
        })
        .sum())
}

/// One gap stratum: `[lo, hi)` days, open-ended where `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapBucket {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub n: usize,
    /// Absent when the bucket is empty.
    pub ece: Option<f64>,
}

/// ECE per time-gap stratum. `edges` split the line into `edges.len() + 1`
/// buckets; every sample lands in exactly one.
pub fn ece_by_gap(
    gaps: &[f64],
    confidences: &[f64],
    correct: &[bool],
    edges: &[f64],
    n_bins: usize,
) -> Result<Vec<GapBucket>> {
    check_calibration_inputs(confidences, correct)?;
    if gaps.len() != confidences.len() {
        return Err(Error::Validation(format!(
            "{} gaps for {} confidences",
            gaps.len(),
            confidences.len()
        )));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "gap bucket edges must be strictly ascending".into(),
        ));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); edges.len() + 1];
    for (i, g) in gaps.iter().enumerate() {
        let b = edges.partition_point(|e| e <= g);
        members[b].push(i);
    }
    members
        .into_iter()
        .enumerate()
        .map(|(b, ix)| {
            let c: Vec<f64> = ix.iter().map(|&i| confidences[i]).collect();
            let k: Vec<bool> = ix.iter().map(|&i| correct[i]).collect();
            Ok(GapBucket {
                lo: b.checked_sub(1).map(|j| edges[j]),
                hi: edges.get(b).copied(),
                n: ix.len(),
                ece: if ix.is_empty() {
                    None
                } else {
                    Some(ece(&c, &k, n_bins)?)
                },
            })
        })
        .collect()
}

/// Exact two-sided binomial interval `[lo, hi]` on the success count of
/// `Binomial(n, p)`: each tail outside it carries at most `(1 - level) / 2`.
pub fn binomial_interval(n: u64, p: f64, level: f64) -> Result<(u64, u64)> {
    let dist =
        Binomial::new(p, n).map_err(|e| Error::Validation(format!("binomial({n}, {p}): {e}")))?;
    let alpha = (1.0 - level) / 2.0;
    // P(X < lo) <= alpha and P(X > hi) <= alpha.
    let lo = (0..=n).find(|&k| dist.cdf(k) > alpha).unwrap_or(n);
    let hi = (0..=n).find(|&k| dist.sf(k) <= alpha).unwrap_or(n);
    Ok((lo, hi))
}
