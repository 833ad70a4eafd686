use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::geometry::{neutral_cosine_stats, order_violation_rate, CosineStats, OrderStats};
use super::metrics::{classify_metrics, ece, ece_by_gap, ClassificationMetrics, GapBucket};
use crate::config::EvalOptions;
use crate::error::{Error, Result};
use crate::model::{forward, Mode, ModelConfig, Parameters};
use crate::objective::encode_records;
use crate::supervision::{EntailmentLabel, PairRecord};
use crate::textizer::{TokenSequence, Vocab};

/// Eval-mode outputs for a set of sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub probs: Vec<[f64; 3]>,
    pub u_first: Array2<f32>,
    pub u_second: Array2<f32>,
}

impl Predictions {
    /// Arg-max class; ties go to the lower class index.
    pub fn labels(&self) -> Vec<EntailmentLabel> {
        self.probs
            .iter()
            .map(|p| {
                let mut best = 0;
                for k in 1..3 {
                    if p[k] > p[best] {
                        best = k;
                    }
                }
                EntailmentLabel::from_index(best).expect("three classes")
            })
            .collect()
    }

    /// Max softmax probability.
    pub fn confidences(&self) -> Vec<f64> {
        self.probs
            .iter()
            .map(|p| p[0].max(p[1]).max(p[2]))
            .collect()
    }
}

pub fn predict(
    params: &Parameters<f32>,
    cfg: &ModelConfig,
    seqs: &[TokenSequence],
    batch_size: usize,
) -> Result<Predictions> {
    let d = cfg.hidden;
    let mut probs = Vec::with_capacity(seqs.len());
    let mut u_first = Array2::<f32>::zeros((seqs.len(), d));
    let mut u_second = Array2::<f32>::zeros((seqs.len(), d));
    for (c, chunk) in seqs.chunks(batch_size.max(1)).enumerate() {
        let trace = forward(params, cfg, chunk, Mode::Eval)?;
        let base = c * batch_size.max(1);
        for e in 0..chunk.len() {
            let p = trace.probabilities(e);
            probs.push([p[0] as f64, p[1] as f64, p[2] as f64]);
            u_first.row_mut(base + e).assign(&trace.u_first.row(e));
            u_second.row_mut(base + e).assign(&trace.u_second.row(e));
        }
    }
    Ok(Predictions {
        probs,
        u_first,
        u_second,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classification: ClassificationMetrics,
    pub ece: f64,
    pub ece_by_gap: Vec<GapBucket>,
    /// Absent when the set has no entail pairs.
    pub order: Option<OrderStats>,
    pub cosine: Vec<CosineStats>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.classification.accuracy
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Validation(e.to_string()))
    }

    /// Flat `(metric, value)` rows.
    pub fn rows(&self) -> Vec<(String, String)> {
        let c = &self.classification;
        let mut rows = vec![
            ("n".to_string(), c.n.to_string()),
            ("accuracy".into(), c.accuracy.to_string()),
            ("macro_f1".into(), c.macro_f1.to_string()),
            ("mcc".into(), c.mcc.to_string()),
            ("ece".into(), self.ece.to_string()),
        ];
        for k in &c.per_class {
            rows.push((format!("precision.{}", k.label), k.precision.to_string()));
            rows.push((format!("recall.{}", k.label), k.recall.to_string()));
            rows.push((format!("f1.{}", k.label), k.f1.to_string()));
            rows.push((format!("support.{}", k.label), k.support.to_string()));
        }
        for (t, row) in EntailmentLabel::ALL.iter().zip(&c.confusion) {
            for (p, v) in EntailmentLabel::ALL.iter().zip(row) {
                rows.push((
                    format!("confusion.{}.{}", t.name(), p.name()),
                    v.to_string(),
                ));
            }
        }
        let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_else(|| "inf".into());
        for b in &self.ece_by_gap {
            let lo = b.lo.map(|v| v.to_string()).unwrap_or_else(|| "0".into());
            let key = format!("ece_gap.{lo}-{}", fmt(b.hi));
            rows.push((format!("{key}.n"), b.n.to_string()));
            rows.push((
                format!("{key}.ece"),
                b.ece.map(|v| v.to_string()).unwrap_or_default(),
            ));
        }
        if let Some(o) = &self.order {
            rows.push(("order.n".into(), o.n.to_string()));
            rows.push(("order.violation_rate".into(), o.violation_rate.to_string()));
            rows.push(("order.mean_loss".into(), o.mean_order_loss.to_string()));
        }
        for s in &self.cosine {
            rows.push((
                format!("cosine.{}", s.label),
                s.mean_cosine.map(|v| v.to_string()).unwrap_or_default(),
            ));
            rows.push((format!("cosine.{}.skipped", s.label), s.skipped.to_string()));
        }
        rows
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Validation(e.to_string());
        w.write_record(["metric", "value"]).map_err(err)?;
        for (k, v) in self.rows() {
            w.write_record([k, v]).map_err(err)?;
        }
        String::from_utf8(
            w.into_inner()
                .map_err(|e| Error::Validation(e.to_string()))?,
        )
        .map_err(|e| Error::Validation(e.to_string()))
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        for (ext, body) in [("json", self.to_json()?), ("csv", self.to_csv()?)] {
            let path = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Scores a model on labeled pair records.
pub fn evaluate(
    params: &Parameters<f32>,
    cfg: &ModelConfig,
    records: &[PairRecord],
    vocab: &Vocab,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Validation("evaluation split is empty".into()));
    }
    let (seqs, labels) = encode_records(records, vocab, cfg.max_len)?;
    let preds = predict(params, cfg, &seqs, opts.batch_size)?;
    let predicted = preds.labels();
    let confidences = preds.confidences();
    let correct: Vec<bool> = predicted.iter().zip(&labels).map(|(p, y)| p == y).collect();
    let gaps: Vec<f64> = records.iter().map(|r| r.gap_days).collect();

    let entail: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == EntailmentLabel::Entail)
        .collect();
    let order = if entail.is_empty() {
        None
    } else {
        let pick = |m: &Array2<f32>| m.select(ndarray::Axis(0), &entail);
        Some(order_violation_rate(
            &pick(&preds.u_first),
            &pick(&preds.u_second),
        )?)
    };

    Ok(EvalReport {
        classification: classify_metrics(&predicted, &labels)?,
        ece: ece(&confidences, &correct, opts.n_bins)?,
        ece_by_gap: ece_by_gap(&gaps, &confidences, &correct, &opts.gap_edges, opts.n_bins)?,
        order,
        cosine: neutral_cosine_stats(&preds.u_first, &preds.u_second, &labels)?,
    })
}
