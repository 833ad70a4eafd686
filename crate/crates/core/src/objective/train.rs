use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, Checkpoint, Mode, ModelConfig, Parameters};
use crate::seed;
use crate::supervision::{EntailmentLabel, PairRecord};
use crate::textizer::{encode_pair, TokenSequence, Vocab};

use super::loss::backward;
use super::optim::{adamw_step, clip_grad_norm, OptimizerState};
use super::ObjectiveConfig;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub tep_loss: f64,
    pub order_loss: f64,
    /// Fraction of entail pairs in the batch breaking dominance.
    pub violation_rate: Option<f64>,
}

pub fn encode_records(
    records: &[PairRecord],
    vocab: &Vocab,
    max_len: usize,
) -> Result<(Vec<TokenSequence>, Vec<EntailmentLabel>)> {
    let seqs = records
        .iter()
        .map(|r| encode_pair(r, vocab, max_len))
        .collect::<Result<Vec<_>>>()?;
    Ok((seqs, records.iter().map(|r| r.label).collect()))
}

/// Sequential, deterministic trainer. The batch at step `s` depends only on
/// the seed and `s`, so a resumed run continues exactly where it stopped.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    pub seed: u64,
    pub params: Parameters<f32>,
    pub state: OptimizerState<f32>,
    seqs: Vec<TokenSequence>,
    labels: Vec<EntailmentLabel>,
    perm: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    pub fn new(
        model: ModelConfig,
        objective: ObjectiveConfig,
        seed: u64,
        records: &[PairRecord],
        vocab: &Vocab,
    ) -> Result<Self> {
        let mut model = model;
        if model.vocab_size == 0 {
            model.vocab_size = vocab.size();
        }
        model.validate()?;
        let params = Parameters::init(&model, seed)?;
        Self::assemble(model, objective, seed, params, None, 0, records, vocab)
    }

    /// Continues from a checkpoint, restoring optimizer moments if present.
    pub fn resume(
        ckpt: Checkpoint,
        objective: ObjectiveConfig,
        seed: u64,
        records: &[PairRecord],
        vocab: &Vocab,
    ) -> Result<Self> {
        Self::assemble(
            ckpt.config,
            objective,
            seed,
            ckpt.params,
            ckpt.moments,
            ckpt.step,
            records,
            vocab,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        model: ModelConfig,
        objective: ObjectiveConfig,
        seed: u64,
        params: Parameters<f32>,
        moments: Option<(Parameters<f32>, Parameters<f32>)>,
        step: u64,
        records: &[PairRecord],
        vocab: &Vocab,
    ) -> Result<Self> {
        objective.validate()?;
        model.validate()?;
        if model.vocab_size != vocab.size() {
            return Err(Error::Config(format!(
                "model vocabulary size {} does not match vocabulary of {}",
                model.vocab_size,
                vocab.size()
            )));
        }
        params.check_shapes(&model)?;
        if records.is_empty() {
            return Err(Error::Validation("training split is empty".into()));
        }
        if step > objective.total_steps {
            return Err(Error::Config(format!(
                "checkpoint step {step} is past total_steps {}",
                objective.total_steps
            )));
        }
        let (seqs, labels) = encode_records(records, vocab, model.max_len)?;
        let mut state = OptimizerState::new(&params);
        if let Some((m, v)) = moments {
            state.m = m;
            state.v = v;
        }
        state.step = step;
        Ok(Trainer {
            model,
            objective,
            seed,
            params,
            state,
            seqs,
            labels,
            perm: None,
        })
    }

    pub fn step(&self) -> u64 {
        self.state.step
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.objective.total_steps
    }

    fn example_index(&mut self, global: u64) -> usize {
        let n = self.seqs.len() as u64;
        let epoch = global / n;
        if self.perm.as_ref().map(|p| p.0) != Some(epoch) {
            let mut order: Vec<usize> = (0..self.seqs.len()).collect();
            order.shuffle(&mut seed::rng(self.seed, "shuffle", epoch));
            self.perm = Some((epoch, order));
        }
        self.perm.as_ref().expect("set above").1[(global % n) as usize]
    }

    /// Dataset indices of the batch consumed by step `step` (0-based).
    pub fn batch_indices(&mut self, step: u64) -> Vec<usize> {
        let b = self.objective.batch_size as u64;
        (0..b).map(|j| self.example_index(step * b + j)).collect()
    }

    pub fn train_step(&mut self) -> Result<StepRecord> {
        if self.is_done() {
            return Err(Error::Validation("training already finished".into()));
        }
        let step = self.state.step;
        let idx = self.batch_indices(step);
        let seqs: Vec<TokenSequence> = idx.iter().map(|&i| self.seqs[i].clone()).collect();
        let labels: Vec<EntailmentLabel> = idx.iter().map(|&i| self.labels[i]).collect();
        let mode = Mode::Train {
            seed: seed::derive(self.seed, "dropout", step),
        };
        let diverged = |what: &str| Error::Numerical(format!("{what} at step {}", step + 1));
        let trace = forward(&self.params, &self.model, &seqs, mode)
            .map_err(|_| diverged("non-finite forward pass"))?;
        let (loss, mut grads) =
            backward(&self.params, &self.model, &trace, &labels, &self.objective)?;
        if !loss.total.is_finite() {
            return Err(diverged("non-finite loss"));
        }
        clip_grad_norm(&mut grads, self.objective.grad_clip);
        let lr = adamw_step(&mut self.params, &grads, &mut self.state, &self.objective)?;
        if let Some(name) = self.params.first_non_finite() {
            return Err(diverged(&format!("non-finite parameter '{name}'")));
        }
        Ok(StepRecord {
            step: self.state.step,
            lr,
            loss: loss.total,
            tep_loss: loss.tep,
            order_loss: loss.order,
            violation_rate: loss.violation_rate(),
        })
    }

    /// Runs to `total_steps`, calling `on_step` after every update.
    pub fn run(
        &mut self,
        mut on_step: impl FnMut(&StepRecord, &Trainer) -> Result<()>,
    ) -> Result<()> {
        while !self.is_done() {
            let rec = self.train_step()?;
            on_step(&rec, self)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.clone(),
            step: self.state.step,
            params: self.params.clone(),
            moments: Some((self.state.m.clone(), self.state.v.clone())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, CohortConfig};
    use crate::ontology::Ontology;
    use crate::supervision::{build_dataset, PairConfig, SplitSpec};

    fn records(n: usize) -> Vec<PairRecord> {
        let ont = Ontology::seed();
        let cohort = generate_cohort(
            &CohortConfig {
                n_patients: n,
                ..Default::default()
            },
            &ont,
        )
        .unwrap();
        let ds =
            build_dataset(&cohort, &PairConfig::default(), &ont, &SplitSpec::default()).unwrap();
        ds.train
            .iter()
            .map(|p| PairRecord::from_pair(p, &ont).unwrap())
            .collect()
    }

    fn small() -> (ModelConfig, ObjectiveConfig) {
        (
            ModelConfig {
                hidden: 16,
                heads: 2,
                ffn: 16,
                layers: 1,
                ..Default::default()
            },
            ObjectiveConfig {
                total_steps: 6,
                warmup_steps: 2,
                batch_size: 4,
                ..Default::default()
            },
        )
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let recs = records(30);
        let vocab = Vocab::build(&recs);
        let (m, o) = small();
        let mut full = Trainer::new(m.clone(), o.clone(), 3, &recs, &vocab).unwrap();
        let mut log_full = Vec::new();
        full.run(|r, _| {
            log_full.push(r.clone());
            Ok(())
        })
        .unwrap();

        let mut first = Trainer::new(m, o.clone(), 3, &recs, &vocab).unwrap();
        let mut log = vec![first.train_step().unwrap(), first.train_step().unwrap()];
        let bytes = first.checkpoint().to_bytes().unwrap();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ck.params, first.params);
        let mut second = Trainer::resume(ck, o, 3, &recs, &vocab).unwrap();
        assert_eq!(second.step(), 2);
        second
            .run(|r, _| {
                log.push(r.clone());
                Ok(())
            })
            .unwrap();
        assert_eq!(log, log_full);
        assert_eq!(second.params, full.params);
        assert!(second.train_step().is_err());
    }

    #[test]
    fn epochs_cover_every_example() {
        let recs = records(12);
        let vocab = Vocab::build(&recs);
        let (m, o) = small();
        let mut t = Trainer::new(m, o, 1, &recs, &vocab).unwrap();
        let n = recs.len() as u64;
        let mut seen: Vec<usize> = (0..n).map(|g| t.example_index(g)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..recs.len()).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_empty_and_mismatched_inputs() {
        let recs = records(12);
        let vocab = Vocab::build(&recs);
        let (m, o) = small();
        assert!(Trainer::new(m.clone(), o.clone(), 1, &[], &vocab).is_err());
        let wrong = ModelConfig {
            vocab_size: vocab.size() + 1,
            ..m
        };
        assert!(matches!(
            Trainer::new(wrong, o, 1, &recs, &vocab),
            Err(Error::Config(_))
        ));
    }
}
