use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::report::{evaluate, EvalReport};
use crate::cohort::generate_cohort;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::objective::Trainer;
use crate::ontology::Ontology;
use crate::supervision::{build_dataset, EntailmentPair, PairRecord};
use crate::textizer::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationFactor {
    /// Rotary positions on vs off.
    Rope,
    /// All training pairs vs training pairs without any contradiction rule.
    Contradictions,
    /// Training pairs per patient.
    Density,
}

impl std::str::FromStr for AblationFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rope" => Ok(AblationFactor::Rope),
            "contradictions" => Ok(AblationFactor::Contradictions),
            "density" => Ok(AblationFactor::Density),
            other => Err(Error::Config(format!(
                "unknown ablation factor '{other}' (expected rope, contradictions or density)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub factor: AblationFactor,
    /// Pairs-per-patient levels for the density factor.
    pub densities: Vec<usize>,
}

impl AblationSpec {
    pub fn new(factor: AblationFactor) -> Self {
        AblationSpec {
            factor,
            densities: vec![1, 5, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    /// Resolved-config fields that differ from the base, `path -> value`.
    pub changes: BTreeMap<String, Value>,
    /// Training-data filter applied, if any.
    pub train_filter: Option<String>,
    pub train_pairs: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub factor: AblationFactor,
    pub seed: u64,
    pub valid_pairs: usize,
    pub variants: Vec<AblationVariant>,
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, x, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

/// Leaf fields of `variant` that differ from `base`.
pub fn config_diff(base: &PipelineConfig, variant: &PipelineConfig) -> BTreeMap<String, Value> {
    let (mut a, mut b) = (BTreeMap::new(), BTreeMap::new());
    flatten(
        "",
        &serde_json::to_value(base).expect("config serializes"),
        &mut a,
    );
    flatten(
        "",
        &serde_json::to_value(variant).expect("config serializes"),
        &mut b,
    );
    b.into_iter().filter(|(k, v)| a.get(k) != Some(v)).collect()
}

struct Plan {
    name: String,
    config: PipelineConfig,
    drop_contradictions: bool,
}

fn records(pairs: &[EntailmentPair], ont: &Ontology) -> Result<Vec<PairRecord>> {
    pairs
        .iter()
        .map(|p| PairRecord::from_pair(p, ont))
        .collect()
}

/// Trains one model per variant with the same seed and scores each on the
/// base configuration's validation split.
pub fn run_ablation(
    spec: &AblationSpec,
    base: &PipelineConfig,
    ont: &Ontology,
) -> Result<AblationReport> {
    base.validate(ont)?;
    let mut plans = Vec::new();
    match spec.factor {
        AblationFactor::Rope => {
            plans.push(Plan {
                name: "rope-on".into(),
                config: base.clone(),
                drop_contradictions: false,
            });
            let mut off = base.clone();
            off.model.rotary = false;
            plans.push(Plan {
                name: "rope-off".into(),
                config: off,
                drop_contradictions: false,
            });
        }
        AblationFactor::Contradictions => {
            for (name, drop) in [
                ("with-contradictions", false),
                ("without-contradictions", true),
            ] {
                plans.push(Plan {
                    name: name.into(),
                    config: base.clone(),
                    drop_contradictions: drop,
                });
            }
        }
        AblationFactor::Density => {
            if spec.densities.is_empty() || spec.densities.contains(&0) {
                return Err(Error::Config(
                    "density levels must be positive and non-empty".into(),
                ));
            }
            for &k in &spec.densities {
                let mut c = base.clone();
                c.pairs.pairs_per_patient = k;
                plans.push(Plan {
                    name: format!("pairs-per-patient-{k}"),
                    config: c,
                    drop_contradictions: false,
                });
            }
        }
    }

    let cohort = generate_cohort(&base.cohort, ont)?;
    let base_ds = build_dataset(&cohort, &base.pairs, ont, &base.split)?;
    let valid = records(&base_ds.valid, ont)?;
    let seed = base.master_seed();

    let mut variants = Vec::with_capacity(plans.len());
    for plan in plans {
        let mut train = if plan.config.pairs == base.pairs {
            records(&base_ds.train, ont)?
        } else {
            records(
                &build_dataset(&cohort, &plan.config.pairs, ont, &plan.config.split)?.train,
                ont,
            )?
        };
        if plan.drop_contradictions {
            train.retain(|r| !r.has_contradiction_rule());
        }
        let vocab = Vocab::build(&train);
        let mut trainer = Trainer::new(
            plan.config.model.clone(),
            plan.config.objective.clone(),
            seed,
            &train,
            &vocab,
        )?;
        trainer.run(|_, _| Ok(()))?;
        let report = evaluate(
            &trainer.params,
            &trainer.model,
            &valid,
            &vocab,
            &plan.config.eval,
        )?;
        variants.push(AblationVariant {
            name: plan.name,
            changes: config_diff(base, &plan.config),
            train_filter: plan
                .drop_contradictions
                .then(|| "drop pairs with any R1 rule".to_string()),
            train_pairs: train.len(),
            report,
        });
    }
    Ok(AblationReport {
        factor: spec.factor,
        seed,
        valid_pairs: valid.len(),
        variants,
    })
}

impl AblationReport {
    /// One row per variant with headline metrics and deltas against the
    /// first variant.
    pub fn delta_csv(&self) -> Result<String> {
        let err = |e: csv::Error| Error::Validation(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "variant",
            "train_pairs",
            "accuracy",
            "macro_f1",
            "mcc",
            "ece",
            "violation_rate",
            "delta_accuracy",
            "delta_macro_f1",
            "delta_mcc",
            "delta_ece",
            "delta_violation_rate",
        ])
        .map_err(err)?;
        let metrics = |r: &EvalReport| {
            [
                Some(r.classification.accuracy),
                Some(r.classification.macro_f1),
                Some(r.classification.mcc),
                Some(r.ece),
                r.order.as_ref().map(|o| o.violation_rate),
            ]
        };
        let base = self.variants.first().map(|v| metrics(&v.report));
        let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for v in &self.variants {
            let m = metrics(&v.report);
            let mut row = vec![v.name.clone(), v.train_pairs.to_string()];
            row.extend(m.iter().map(|&x| cell(x)));
            let b = base.expect("non-empty");
            row.extend(
                m.iter()
                    .zip(&b)
                    .map(|(x, y)| cell(x.zip(*y).map(|(x, y)| x - y))),
            );
            w.write_record(row).map_err(err)?;
        }
        String::from_utf8(
            w.into_inner()
                .map_err(|e| Error::Validation(e.to_string()))?,
        )
        .map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Validation(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::objective::ObjectiveConfig;

    fn tiny() -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.cohort.n_patients = 40;
        c.model = ModelConfig {
            hidden: 8,
            heads: 2,
            ffn: 8,
            layers: 1,
            ..Default::default()
        };
        c.objective = ObjectiveConfig {
            total_steps: 3,
            warmup_steps: 1,
            batch_size: 4,
            ..Default::default()
        };
        c
    }

    #[test]
    fn rope_variant_changes_one_field() {
        let ont = Ontology::seed();
        let r = run_ablation(&AblationSpec::new(AblationFactor::Rope), &tiny(), &ont).unwrap();
        assert_eq!(r.variants.len(), 2);
        assert!(r.variants[0].changes.is_empty());
        let keys: Vec<&String> = r.variants[1].changes.keys().collect();
        assert_eq!(keys, vec!["model.rotary"]);
        let csv = r.delta_csv().unwrap();
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn density_produces_one_report_per_level_and_is_deterministic() {
        let ont = Ontology::seed();
        let spec = AblationSpec::new(AblationFactor::Density);
        let a = run_ablation(&spec, &tiny(), &ont).unwrap();
        assert_eq!(a.variants.len(), 3);
        assert!(a.variants[0].train_pairs < a.variants[2].train_pairs);
        let b = run_ablation(&spec, &tiny(), &ont).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn contradiction_filter_removes_r1_pairs() {
        let ont = Ontology::seed();
        let r = run_ablation(
            &AblationSpec::new(AblationFactor::Contradictions),
            &tiny(),
            &ont,
        )
        .unwrap();
        assert!(r.variants[1].train_pairs < r.variants[0].train_pairs);
        assert!(r.variants[1].train_filter.is_some());
        assert!("bogus".parse::<AblationFactor>().is_err());
    }
}
