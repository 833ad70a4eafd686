//! The single pipeline configuration file shared by every command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::CohortConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objective::ObjectiveConfig;
use crate::ontology::Ontology;
use crate::supervision::{PairConfig, SplitSpec};

/// `[cohort]`, `[pairs]`, `[split]`, `[model]`, `[objective]` and `[eval]`
/// sections; all optional, every field defaulted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; when set, overrides the per-section seeds.
    pub seed: Option<u64>,
    pub cohort: CohortConfig,
    pub pairs: PairConfig,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    pub eval: EvalOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub n_bins: usize,
    /// Gap bucket edges in days.
    pub gap_edges: Vec<f64>,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_bins: 10,
            gap_edges: vec![1.0, 3.0, 7.0, 14.0, 30.0],
            batch_size: 64,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                path: origin.display().to_string(),
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Applies the master seed (if any) to every section.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.cohort.seed = s;
            self.pairs.seed = s;
        }
        self
    }

    /// The seed recorded as provenance root.
    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(self.cohort.seed)
    }

    pub fn validate(&self, ont: &Ontology) -> Result<()> {
        self.cohort.validate(ont)?;
        self.pairs.validate()?;
        self.split.validate()?;
        self.objective.validate()?;
        if self.eval.n_bins == 0 {
            return Err(Error::Config("eval.n_bins must be positive".into()));
        }
        if self.eval.batch_size == 0 {
            return Err(Error::Config("eval.batch_size must be positive".into()));
        }
        if self.eval.gap_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "eval.gap_edges must be strictly ascending".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = PipelineConfig::parse("", Path::new("x.toml")).unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert!(c.validate(&Ontology::seed()).is_ok());
    }

    #[test]
    fn sections_override_and_seed_propagates() {
        let c = PipelineConfig::parse(
            "seed = 11\n[cohort]\nn_patients = 20\n[objective]\norder_weight = 0.0\n",
            Path::new("x.toml"),
        )
        .unwrap()
        .with_seed(None);
        assert_eq!(c.cohort.n_patients, 20);
        assert_eq!(c.objective.order_weight, 0.0);
        assert_eq!((c.cohort.seed, c.pairs.seed), (11, 11));
        let c = c.with_seed(Some(3));
        assert_eq!((c.master_seed(), c.cohort.seed, c.pairs.seed), (3, 3, 3));
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = PipelineConfig::parse("[model]\nlayers = 2\nbogus = 1\n", Path::new("x.toml"))
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
    }
}
