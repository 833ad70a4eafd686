//! Clinical staging ontology.
//!
//! The ontology is the ground truth behind both synthetic generation and weak
//! labeling: conditions belong to organ systems, carry an ordered list of
//! severity stages, and may be indexed by a banded lab.
//!
//! # File format
//!
//! Line oriented. `[system]`, `[condition]`, `[stage]` and `[lab]` headers
//! each open a new record; `key = value` lines fill the current record; `#`
//! starts a comment. Keys before the first header are global (`version`).
//!
//! | section     | keys                                                        |
//! |-------------|-------------------------------------------------------------|
//! | `system`    | `id`, `display_name`                                        |
//! | `condition` | `id`, `system`                                              |
//! | `stage`     | `id`, `condition`, `rank`, `phrase`, `resolution` (opt.)    |
//! | `lab`       | `id`, `condition`, `edges`, `direction`, `normal_band`      |
//!
//! `edges` is a comma separated ascending list; `direction` is
//! `higher-healthier` or `higher-sicker`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SEED_SOURCE: &str = include_str!("../data/seed.ontology");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrganSystem {
    pub id: String,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub id: String,
    pub organ_system: String,
    /// Stage ids ordered by increasing severity.
    pub stages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub id: String,
    pub condition: String,
    /// Severity rank, 1 = least severe.
    pub rank: u32,
    pub display_phrase: String,
    /// Marks a stage that represents resolution of the condition.
    pub resolution: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabDirection {
    HigherHealthier,
    HigherSicker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabDefinition {
    pub id: String,
    pub condition: String,
    pub quantile_edges: Vec<f64>,
    pub direction: LabDirection,
    pub normal_band: usize,
}

impl LabDefinition {
    pub fn n_bands(&self) -> usize {
        self.quantile_edges.len() + 1
    }

    /// Band index containing `value`. Values on an edge belong to the upper band.
    pub fn band(&self, value: f64) -> Result<usize> {
        if !value.is_finite() {
            return Err(Error::Validation(format!(
                "lab {}: non-finite value {value}",
                self.id
            )));
        }
        Ok(self.quantile_edges.iter().filter(|&&e| value >= e).count())
    }

    /// How far a band is towards the sick end: 0 at the healthiest band.
    pub fn sickness(&self, band: usize) -> usize {
        match self.direction {
            LabDirection::HigherHealthier => self.n_bands() - 1 - band,
            LabDirection::HigherSicker => band,
        }
    }

    /// Representative value inside `band`, interpolated by `frac` in `[0, 1)`.
    /// Open-ended outer bands are given the width of their neighbour.
    pub fn value_in_band(&self, band: usize, frac: f64) -> f64 {
        let edges = &self.quantile_edges;
        let n = edges.len();
        let (lo, hi) = if n == 1 {
            let e = edges[0];
            let w = e.abs().max(1.0);
            if band == 0 {
                (e - w, e)
            } else {
                (e, e + w)
            }
        } else if band == 0 {
            let w = edges[1] - edges[0];
            ((edges[0] - w).max(0.0).min(edges[0]), edges[0])
        } else if band == n {
            let w = edges[n - 1] - edges[n - 2];
            (edges[n - 1], edges[n - 1] + w)
        } else {
            (edges[band - 1], edges[band])
        };
        lo + (hi - lo) * frac.clamp(0.0, 0.999)
    }
}

/// Result of comparing two stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageDelta {
    /// `rank(b) - rank(a)` for stages of the same condition.
    Same(i32),
    DifferentCondition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ontology {
    pub version: String,
    pub organ_systems: Vec<OrganSystem>,
    pub conditions: Vec<Condition>,
    pub stages: Vec<Stage>,
    pub labs: Vec<LabDefinition>,
    #[serde(skip)]
    index: Index,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Index {
    systems: BTreeMap<String, usize>,
    conditions: BTreeMap<String, usize>,
    stages: BTreeMap<String, usize>,
    labs: BTreeMap<String, usize>,
}

impl Ontology {
    /// The ontology bundled with the crate.
    pub fn seed() -> Self {
        Self::parse(SEED_SOURCE, "<seed>").expect("bundled seed ontology is valid")
    }

    pub fn seed_source() -> &'static str {
        SEED_SOURCE
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses and validates ontology text. `origin` labels parse errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let records = parse_records(text, origin)?;
        build(records, origin)
    }

    pub fn system(&self, id: &str) -> Result<&OrganSystem> {
        lookup(&self.index.systems, &self.organ_systems, id, "organ system")
    }

    pub fn condition(&self, id: &str) -> Result<&Condition> {
        lookup(&self.index.conditions, &self.conditions, id, "condition")
    }

    pub fn stage(&self, id: &str) -> Result<&Stage> {
        lookup(&self.index.stages, &self.stages, id, "stage")
    }

    pub fn lab(&self, id: &str) -> Result<&LabDefinition> {
        lookup(&self.index.labs, &self.labs, id, "lab")
    }

    /// Organ system id of a stage.
    pub fn stage_system(&self, stage: &str) -> Result<&str> {
        let cond = self.condition(&self.stage(stage)?.condition)?;
        Ok(&cond.organ_system)
    }

    /// Organ system id of a lab.
    pub fn lab_system(&self, lab: &str) -> Result<&str> {
        let cond = self.condition(&self.lab(lab)?.condition)?;
        Ok(&cond.organ_system)
    }

    pub fn stages_of(&self, condition: &str) -> Result<Vec<&Stage>> {
        let cond = self.condition(condition)?;
        cond.stages.iter().map(|s| self.stage(s)).collect()
    }

    pub fn labs_of(&self, condition: &str) -> Vec<&LabDefinition> {
        self.labs
            .iter()
            .filter(|l| l.condition == condition)
            .collect()
    }

    pub fn stage_delta(&self, a: &str, b: &str) -> Result<StageDelta> {
        let a = self.stage(a)?;
        let b = self.stage(b)?;
        if a.condition != b.condition {
            return Ok(StageDelta::DifferentCondition);
        }
        Ok(StageDelta::Same(b.rank as i32 - a.rank as i32))
    }

    pub fn lab_band(&self, lab: &str, value: f64) -> Result<usize> {
        self.lab(lab)?.band(value)
    }
}

fn lookup<'a, T>(
    index: &BTreeMap<String, usize>,
    items: &'a [T],
    id: &str,
    what: &str,
) -> Result<&'a T> {
    index
        .get(id)
        .map(|&i| &items[i])
        .ok_or_else(|| Error::Validation(format!("unknown {what} id `{id}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    System,
    Condition,
    Stage,
    Lab,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::System => "system",
            Section::Condition => "condition",
            Section::Stage => "stage",
            Section::Lab => "lab",
        })
    }
}

struct Record {
    section: Section,
    line: usize,
    entries: BTreeMap<String, (usize, String)>,
}

impl Record {
    fn take(&mut self, key: &str, origin: &str) -> Result<(usize, String)> {
        self.entries.remove(key).ok_or_else(|| {
            Error::parse(
                origin,
                self.line,
                format!("[{}] record is missing key `{key}`", self.section),
            )
        })
    }
}

struct Records {
    globals: BTreeMap<String, (usize, String)>,
    records: Vec<Record>,
}

fn parse_records(text: &str, origin: &str) -> Result<Records> {
    let mut globals = BTreeMap::new();
    let mut records: Vec<Record> = Vec::new();
    let mut saw_content = false;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        saw_content = true;
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::parse(origin, line_no, "unterminated section header"))?
                .trim();
            let section = match name {
                "system" => Section::System,
                "condition" => Section::Condition,
                "stage" => Section::Stage,
                "lab" => Section::Lab,
                other => {
                    return Err(Error::parse(
                        origin,
                        line_no,
                        format!("unknown section `[{other}]`"),
                    ))
                }
            };
            records.push(Record {
                section,
                line: line_no,
                entries: BTreeMap::new(),
            });
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(origin, line_no, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(Error::parse(origin, line_no, "empty key"));
        }
        let target = match records.last_mut() {
            Some(r) => &mut r.entries,
            None => &mut globals,
        };
        if target
            .insert(key.to_string(), (line_no, value.to_string()))
            .is_some()
        {
            return Err(Error::parse(
                origin,
                line_no,
                format!("duplicate key `{key}`"),
            ));
        }
    }

    if !saw_content {
        return Err(Error::parse(origin, 1, "empty ontology file"));
    }
    Ok(Records { globals, records })
}

fn build(mut parsed: Records, origin: &str) -> Result<Ontology> {
    let version = parsed
        .globals
        .remove("version")
        .map(|(_, v)| v)
        .unwrap_or_else(|| "unversioned".to_string());
    if let Some((key, (line, _))) = parsed.globals.into_iter().next() {
        return Err(Error::parse(
            origin,
            line,
            format!("unknown global key `{key}`"),
        ));
    }

    let mut systems = Vec::new();
    let mut conditions = Vec::new();
    let mut stages = Vec::new();
    let mut labs = Vec::new();

    for mut rec in parsed.records {
        let (_, id) = rec.take("id", origin)?;
        match rec.section {
            Section::System => {
                let display_name = rec
                    .entries
                    .remove("display_name")
                    .map(|(_, v)| v)
                    .unwrap_or_else(|| id.clone());
                systems.push(OrganSystem { id, display_name });
            }
            Section::Condition => {
                let (_, system) = rec.take("system", origin)?;
                conditions.push(Condition {
                    id,
                    organ_system: system,
                    stages: Vec::new(),
                });
            }
            Section::Stage => {
                let (_, condition) = rec.take("condition", origin)?;
                let (rank_line, rank) = rec.take("rank", origin)?;
                let rank: u32 = rank.parse().map_err(|_| {
                    Error::parse(
                        origin,
                        rank_line,
                        format!("rank `{rank}` is not a positive integer"),
                    )
                })?;
                let (_, display_phrase) = rec.take("phrase", origin)?;
                let resolution = match rec.entries.remove("resolution") {
                    None => false,
                    Some((l, v)) => v.parse().map_err(|_| {
                        Error::parse(origin, l, format!("resolution `{v}` is not true/false"))
                    })?,
                };
                stages.push(Stage {
                    id,
                    condition,
                    rank,
                    display_phrase,
                    resolution,
                });
            }
            Section::Lab => {
                let (_, condition) = rec.take("condition", origin)?;
                let (edges_line, edges) = rec.take("edges", origin)?;
                let quantile_edges = edges
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| {
                        Error::parse(
                            origin,
                            edges_line,
                            format!("edges `{edges}` are not numbers"),
                        )
                    })?;
                let (dir_line, dir) = rec.take("direction", origin)?;
                let direction = match dir.as_str() {
                    "higher-healthier" => LabDirection::HigherHealthier,
                    "higher-sicker" => LabDirection::HigherSicker,
                    _ => {
                        return Err(Error::parse(
                            origin,
                            dir_line,
                            format!("direction `{dir}` must be higher-healthier or higher-sicker"),
                        ))
                    }
                };
                let (nb_line, nb) = rec.take("normal_band", origin)?;
                let normal_band = nb.parse().map_err(|_| {
                    Error::parse(
                        origin,
                        nb_line,
                        format!("normal_band `{nb}` is not an index"),
                    )
                })?;
                labs.push(LabDefinition {
                    id,
                    condition,
                    quantile_edges,
                    direction,
                    normal_band,
                });
            }
        }
        if let Some((key, (line, _))) = rec.entries.into_iter().next() {
            return Err(Error::parse(
                origin,
                line,
                format!("unknown key `{key}` in [{}] record", rec.section),
            ));
        }
    }

    validate(version, systems, conditions, stages, labs)
}

fn unique_index<T>(
    items: &[T],
    id: impl Fn(&T) -> &str,
    what: &str,
) -> Result<BTreeMap<String, usize>> {
    let mut map = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        if map.insert(id(item).to_string(), i).is_some() {
            return Err(Error::Validation(format!(
                "duplicate {what} id `{}`",
                id(item)
            )));
        }
    }
    Ok(map)
}

fn validate(
    version: String,
    organ_systems: Vec<OrganSystem>,
    mut conditions: Vec<Condition>,
    mut stages: Vec<Stage>,
    labs: Vec<LabDefinition>,
) -> Result<Ontology> {
    let systems_ix = unique_index(&organ_systems, |s| &s.id, "organ system")?;
    let conditions_ix = unique_index(&conditions, |c| &c.id, "condition")?;
    let labs_ix = unique_index(&labs, |l| &l.id, "lab")?;

    for c in &conditions {
        if !systems_ix.contains_key(&c.organ_system) {
            return Err(Error::Validation(format!(
                "condition `{}` references unknown organ system `{}`",
                c.id, c.organ_system
            )));
        }
    }

    // Stable order: by condition declaration, then rank.
    for s in &stages {
        if !conditions_ix.contains_key(&s.condition) {
            return Err(Error::Validation(format!(
                "stage `{}` references unknown condition `{}`",
                s.id, s.condition
            )));
        }
        if s.rank == 0 {
            return Err(Error::Validation(format!("stage `{}` has rank 0", s.id)));
        }
    }
    stages.sort_by_key(|s| (conditions_ix[&s.condition], s.rank));
    let stages_ix = unique_index(&stages, |s| &s.id, "stage")?;

    for c in conditions.iter_mut() {
        let ranks: Vec<&Stage> = stages.iter().filter(|s| s.condition == c.id).collect();
        if ranks.is_empty() {
            return Err(Error::Validation(format!(
                "condition `{}` has no stages",
                c.id
            )));
        }
        let mut seen = BTreeSet::new();
        for s in &ranks {
            if !seen.insert(s.rank) {
                return Err(Error::Validation(format!(
                    "stage `{}` duplicates rank {} of condition `{}`",
                    s.id, s.rank, c.id
                )));
            }
        }
        for (expected, s) in (1u32..).zip(&ranks) {
            if s.rank != expected {
                return Err(Error::Validation(format!(
                    "stage `{}`: ranks of condition `{}` are not contiguous from 1",
                    s.id, c.id
                )));
            }
        }
        c.stages = ranks.iter().map(|s| s.id.clone()).collect();
    }

    for l in &labs {
        if !conditions_ix.contains_key(&l.condition) {
            return Err(Error::Validation(format!(
                "lab `{}` references unknown condition `{}`",
                l.id, l.condition
            )));
        }
        if l.quantile_edges.is_empty() || l.quantile_edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::Validation(format!(
                "lab `{}` needs finite edges",
                l.id
            )));
        }
        if l.quantile_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "lab `{}` edges are not strictly ascending",
                l.id
            )));
        }
        if l.normal_band >= l.n_bands() {
            return Err(Error::Validation(format!(
                "lab `{}` normal_band {} out of range 0..{}",
                l.id,
                l.normal_band,
                l.n_bands()
            )));
        }
    }

    Ok(Ontology {
        version,
        organ_systems,
        conditions,
        stages,
        labs,
        index: Index {
            systems: systems_ix,
            conditions: conditions_ix,
            stages: stages_ix,
            labs: labs_ix,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seed_has_ckd_and_nyha() {
        let ont = Ontology::seed();
        assert_eq!(ont.condition("ckd").unwrap().stages.len(), 5);
        assert_eq!(ont.condition("nyha").unwrap().stages.len(), 4);
        assert_eq!(ont.organ_systems.len(), 5);
        assert_eq!(ont.stage_system("sepsis-active").unwrap(), "infectious");
    }

    #[test]
    fn empty_file_is_parse_error() {
        assert!(matches!(Ontology::parse("", "t"), Err(Error::Parse { .. })));
        assert!(matches!(
            Ontology::parse("# only a comment\n\n", "t"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn dangling_stage_names_the_stage() {
        let text = "[system]\nid = renal\n[condition]\nid = ckd\nsystem = renal\n\
                    [stage]\nid = ckd-1\ncondition = ckd\nrank = 1\nphrase = a\n\
                    [stage]\nid = ghost-2\ncondition = ghost\nrank = 1\nphrase = b\n";
        let err = Ontology::parse(text, "t").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("ghost-2"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Ontology::parse("[system]\nid = a\nnonsense\n", "t").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = Ontology::parse("[system]\nid = a\n[organ]\n", "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn non_contiguous_ranks_rejected() {
        let text = "[system]\nid = s\n[condition]\nid = c\nsystem = s\n\
                    [stage]\nid = c-1\ncondition = c\nrank = 1\nphrase = a\n\
                    [stage]\nid = c-3\ncondition = c\nrank = 3\nphrase = b\n";
        let err = Ontology::parse(text, "t").unwrap_err();
        assert!(err.to_string().contains("c-3"), "{err}");
    }

    #[test]
    fn stage_delta_cases() {
        let ont = Ontology::seed();
        assert_eq!(
            ont.stage_delta("ckd-2", "ckd-4").unwrap(),
            StageDelta::Same(2)
        );
        assert_eq!(
            ont.stage_delta("ckd-3", "ckd-3").unwrap(),
            StageDelta::Same(0)
        );
        assert_eq!(
            ont.stage_delta("ckd-2", "nyha-ii").unwrap(),
            StageDelta::DifferentCondition
        );
        assert!(ont.stage_delta("ckd-2", "ckd-9").is_err());
    }

    #[test]
    fn stage_delta_is_antisymmetric() {
        let ont = Ontology::seed();
        for a in &ont.stages {
            for b in &ont.stages {
                match (
                    ont.stage_delta(&a.id, &b.id).unwrap(),
                    ont.stage_delta(&b.id, &a.id).unwrap(),
                ) {
                    (StageDelta::Same(x), StageDelta::Same(y)) => assert_eq!(x, -y),
                    (StageDelta::DifferentCondition, StageDelta::DifferentCondition) => {}
                    other => panic!("asymmetric kinds {other:?}"),
                }
            }
        }
    }

    #[test]
    fn gfr_bands() {
        let ont = Ontology::seed();
        let gfr = ont.lab("gfr").unwrap();
        assert_eq!(gfr.quantile_edges, vec![15.0, 30.0, 60.0, 90.0]);
        assert_eq!(gfr.band(95.0).unwrap(), 4);
        assert_eq!(gfr.band(95.0).unwrap(), gfr.normal_band);
        assert_eq!(gfr.band(30.0).unwrap(), 2);
        assert_eq!(gfr.band(10.0).unwrap(), 0);
        assert!(gfr.band(f64::NAN).is_err());
        assert!(gfr.band(f64::INFINITY).is_err());
    }

    #[test]
    fn value_in_band_lands_in_band() {
        let ont = Ontology::seed();
        for lab in &ont.labs {
            for band in 0..lab.n_bands() {
                for frac in [0.0, 0.3, 0.999, 1.0] {
                    let v = lab.value_in_band(band, frac);
                    assert_eq!(
                        lab.band(v).unwrap(),
                        band,
                        "{} band {band} frac {frac}",
                        lab.id
                    );
                }
            }
        }
    }

    #[test]
    fn seed_file_roundtrips_through_loader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("seed.ontology");
        std::fs::write(&p, Ontology::seed_source()).unwrap();
        assert_eq!(Ontology::load(&p).unwrap(), Ontology::seed());
        assert!(matches!(
            Ontology::load(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn lab_band_is_monotone(a in -50.0f64..200.0, b in -50.0f64..200.0) {
            let ont = Ontology::seed();
            for lab in &ont.labs {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(lab.band(lo).unwrap() <= lab.band(hi).unwrap());
            }
        }
    }
}
