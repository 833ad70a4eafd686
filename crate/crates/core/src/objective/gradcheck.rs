use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, ForwardTrace, Mode, ModelConfig, Parameters};
use crate::seed;
use crate::supervision::EntailmentLabel;
use crate::textizer::{encode_texts, TokenSequence, Vocab};

use super::loss::{backward, total_loss, violates};
use super::ObjectiveConfig;

/// Gradient magnitudes below this are compared absolutely rather than
/// relatively.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    pub n_pairs: usize,
    pub seed: u64,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    pub smoothing: f64,
    pub order_weight: f64,
    /// Hidden test hook: perturbs one analytic gradient entry so the check
    /// must fail.
    #[serde(skip)]
    pub corrupt_gradient: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            model: ModelConfig {
                layers: 2,
                hidden: 32,
                heads: 4,
                ffn: 64,
                max_len: 32,
                dropout: 0.1,
                ..Default::default()
            },
            n_pairs: 5,
            seed: 7,
            step: 1e-5,
            tolerance: 1e-4,
            smoothing: 0.1,
            order_weight: 1.0,
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorError {
    pub name: String,
    pub scalars: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub n_pairs: usize,
    /// Entail pairs whose order loss is active at the checked point.
    pub violating_entail_pairs: usize,
    pub scalars_checked: usize,
    pub tensors: Vec<TensorError>,
}

fn random_batch(
    cfg: &GradcheckConfig,
    vocab: &Vocab,
    attempt: u64,
) -> Result<(Vec<TokenSequence>, Vec<EntailmentLabel>)> {
    let mut rng = seed::rng(cfg.seed, "gradcheck-data", attempt);
    let words: Vec<String> = (0..vocab.size() - 4).map(|i| format!("w{i}")).collect();
    let text = |rng: &mut rand_chacha::ChaCha8Rng| {
        let n = rng.gen_range(2..=6);
        (0..n)
            .map(|_| words[rng.gen_range(0..words.len())].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut seqs = Vec::with_capacity(cfg.n_pairs);
    let mut labels = Vec::with_capacity(cfg.n_pairs);
    for i in 0..cfg.n_pairs {
        let (a, b) = (text(&mut rng), text(&mut rng));
        let gap = rng.gen_range(1.0..30.0);
        seqs.push(encode_texts(&a, &b, gap, vocab, cfg.model.max_len)?);
        labels.push(if i == 0 {
            EntailmentLabel::Entail
        } else {
            EntailmentLabel::from_index(rng.gen_range(0..3)).expect("in range")
        });
    }
    Ok((seqs, labels))
}

fn count_violating(trace: &ForwardTrace<f64>, labels: &[EntailmentLabel]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|(e, &y)| {
            y == EntailmentLabel::Entail && violates(trace.u_first.row(*e), trace.u_second.row(*e))
        })
        .count()
}

/// Compares analytic gradients of the full objective with central finite
/// differences for every parameter scalar, in 64-bit arithmetic.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.n_pairs == 0 {
        return Err(Error::Config("gradcheck needs at least one pair".into()));
    }
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(Error::Config(format!(
            "finite-difference step {} must be positive",
            cfg.step
        )));
    }
    let vocab = Vocab::from_tokens((0..12).map(|i| format!("w{i}")));
    let mut model = cfg.model.clone();
    model.vocab_size = vocab.size();
    model.validate()?;
    let obj = ObjectiveConfig {
        smoothing: cfg.smoothing,
        order_weight: cfg.order_weight,
        ..Default::default()
    };
    obj.validate()?;
    let mode = Mode::Train {
        seed: seed::derive(cfg.seed, "gradcheck-dropout", 0),
    };
    let params = Parameters::<f64>::init(&model, cfg.seed)?;

    // Redraw until the order-loss path is live on some entail pair.
    let mut found = None;
    for attempt in 0..64 {
        let (seqs, labels) = random_batch(cfg, &vocab, attempt)?;
        let trace = forward(&params, &model, &seqs, mode)?;
        if count_violating(&trace, &labels) > 0 {
            found = Some((seqs, labels, trace));
            break;
        }
    }
    let (seqs, labels, trace) = found
        .ok_or_else(|| Error::Numerical("could not draw an entail pair with violations".into()))?;
    let violating = count_violating(&trace, &labels);

    let (_, mut analytic) = backward(&params, &model, &trace, &labels, &obj)?;
    if cfg.corrupt_gradient {
        let (_, slice) = analytic.tensors_mut().remove(2);
        slice[0] += 1e-2 * (1.0 + slice[0].abs());
    }

    let loss_at = |p: &Parameters<f64>| -> Result<f64> {
        let t = forward(p, &model, &seqs, mode)?;
        Ok(total_loss(&t, &labels, &obj)?.total)
    };

    let mut probe = params.clone();
    let h = cfg.step;
    let mut tensors = Vec::new();
    let analytic_views = analytic.tensors();
    for (k, view) in analytic_views.iter().enumerate() {
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for i in 0..view.data.len() {
            let orig = probe.tensors_mut()[k].1[i];
            probe.tensors_mut()[k].1[i] = orig + h;
            let up = loss_at(&probe)?;
            probe.tensors_mut()[k].1[i] = orig - h;
            let down = loss_at(&probe)?;
            probe.tensors_mut()[k].1[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = view.data[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        tensors.push(TensorError {
            name: view.name.clone(),
            scalars: view.data.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        passed: max_rel_error < cfg.tolerance,
        max_rel_error,
        tolerance: cfg.tolerance,
        n_pairs: cfg.n_pairs,
        violating_entail_pairs: violating,
        scalars_checked: tensors.iter().map(|t| t.scalars).sum(),
        tensors,
    })
}
