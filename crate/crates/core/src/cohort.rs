//! Deterministic synthetic patient timelines.
//!
//! Each patient follows one archetype:
//!
//! * `progressive`: one condition whose stage rank never decreases and ends
//!   strictly higher than it started.
//! * `recovering`: one condition whose stage rank never increases and ends
//!   strictly lower (sepsis recoveries also start and stop an antibiotic).
//! * `stable`: one condition held at a fixed stage.
//! * `orthogonal-mixed`: two conditions from different organ systems, each at
//!   a fixed stage, interleaved.
//!
//! Randomness for patient `i` comes only from `seed::rng(cfg.seed, "cohort", i)`.
//!
//! # Corpus format
//!
//! JSON lines, one patient per line:
//!
//! ```text
//! {"patient_id":"p000000","archetype":"progressive","events":[
//!   {"time":0.5,"kind":"diagnosis-stage","stage":"ckd-2"},
//!   {"time":1.25,"kind":"lab-observation","lab":"gfr","value":55.0},
//!   {"time":3.0,"kind":"medication-start","medication":"ace-inhibitor"},
//!   {"time":9.0,"kind":"medication-stop","medication":"ace-inhibitor"}]}
//! ```
//!
//! `time` is days since admission and strictly increases within a patient.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::{Condition, Ontology};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventPayload {
    DiagnosisStage { stage: String },
    LabObservation { lab: String, value: f64 },
    MedicationStart { medication: String },
    MedicationStop { medication: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalEvent {
    /// Days since admission.
    pub time: f64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl ClinicalEvent {
    pub fn stage(time: f64, stage: &str) -> Self {
        ClinicalEvent {
            time,
            payload: EventPayload::DiagnosisStage {
                stage: stage.to_string(),
            },
        }
    }

    pub fn lab(time: f64, lab: &str, value: f64) -> Self {
        ClinicalEvent {
            time,
            payload: EventPayload::LabObservation {
                lab: lab.to_string(),
                value,
            },
        }
    }

    pub fn med_start(time: f64, medication: &str) -> Self {
        ClinicalEvent {
            time,
            payload: EventPayload::MedicationStart {
                medication: medication.to_string(),
            },
        }
    }

    pub fn med_stop(time: f64, medication: &str) -> Self {
        ClinicalEvent {
            time,
            payload: EventPayload::MedicationStop {
                medication: medication.to_string(),
            },
        }
    }

    /// Checks every id the event carries against the ontology.
    pub fn check_ids(&self, ont: &Ontology) -> Result<()> {
        match &self.payload {
            EventPayload::DiagnosisStage { stage } => ont.stage(stage).map(|_| ()),
            EventPayload::LabObservation { lab, value } => ont.lab(lab)?.band(*value).map(|_| ()),
            EventPayload::MedicationStart { .. } | EventPayload::MedicationStop { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    Progressive,
    Recovering,
    Stable,
    OrthogonalMixed,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::Progressive,
        Archetype::Recovering,
        Archetype::Stable,
        Archetype::OrthogonalMixed,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTimeline {
    pub patient_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archetype: Option<Archetype>,
    pub events: Vec<ClinicalEvent>,
}

impl PatientTimeline {
    /// Times finite, non-negative and strictly increasing.
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.events.iter().enumerate() {
            if !e.time.is_finite() || e.time < 0.0 {
                return Err(Error::Validation(format!(
                    "patient {}: event {i} has invalid time {}",
                    self.patient_id, e.time
                )));
            }
            if i > 0 && self.events[i - 1].time >= e.time {
                return Err(Error::Validation(format!(
                    "patient {}: event {i} at day {} is not after day {}",
                    self.patient_id,
                    e.time,
                    self.events[i - 1].time
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchetypeMix {
    pub progressive: f64,
    pub recovering: f64,
    pub stable: f64,
    pub orthogonal_mixed: f64,
}

impl Default for ArchetypeMix {
    fn default() -> Self {
        ArchetypeMix {
            progressive: 0.25,
            recovering: 0.25,
            stable: 0.25,
            orthogonal_mixed: 0.25,
        }
    }
}

impl ArchetypeMix {
    pub fn weight(&self, a: Archetype) -> f64 {
        match a {
            Archetype::Progressive => self.progressive,
            Archetype::Recovering => self.recovering,
            Archetype::Stable => self.stable,
            Archetype::OrthogonalMixed => self.orthogonal_mixed,
        }
    }

    pub fn only(a: Archetype) -> Self {
        let mut mix = ArchetypeMix {
            progressive: 0.0,
            recovering: 0.0,
            stable: 0.0,
            orthogonal_mixed: 0.0,
        };
        match a {
            Archetype::Progressive => mix.progressive = 1.0,
            Archetype::Recovering => mix.recovering = 1.0,
            Archetype::Stable => mix.stable = 1.0,
            Archetype::OrthogonalMixed => mix.orthogonal_mixed = 1.0,
        }
        mix
    }

    fn draw(&self, u: f64) -> Archetype {
        let mut acc = 0.0;
        for a in Archetype::ALL {
            acc += self.weight(a);
            if u < acc {
                return a;
            }
        }
        // u landed in the rounding slack above the cumulative sum.
        *Archetype::ALL
            .iter()
            .rev()
            .find(|&&a| self.weight(a) > 0.0)
            .expect("mix has positive mass")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_patients: usize,
    pub seed: u64,
    pub archetype_mix: ArchetypeMix,
    pub events_per_patient: EventRange,
    pub horizon_days: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_patients: 2000,
            seed: 7,
            archetype_mix: ArchetypeMix::default(),
            events_per_patient: EventRange { min: 6, max: 16 },
            horizon_days: 40.0,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self, ont: &Ontology) -> Result<()> {
        let mix = &self.archetype_mix;
        let weights: Vec<f64> = Archetype::ALL.iter().map(|&a| mix.weight(a)).collect();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(
                "archetype_mix proportions must be non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "archetype_mix sums to {sum}, expected 1"
            )));
        }
        let r = self.events_per_patient;
        if r.min > r.max {
            return Err(Error::Config(format!(
                "events_per_patient min {} exceeds max {}",
                r.min, r.max
            )));
        }
        if r.max < 2 {
            return Err(Error::Config(
                "events_per_patient.max must be at least 2".into(),
            ));
        }
        if !(self.horizon_days.is_finite() && self.horizon_days >= 1.0) {
            return Err(Error::Config(
                "horizon_days must be a finite number >= 1".into(),
            ));
        }
        // Each event needs at least one hundredth of a day.
        if (self.horizon_days * 100.0) < r.max as f64 {
            return Err(Error::Config(
                "horizon_days too short for events_per_patient.max".into(),
            ));
        }
        for a in Archetype::ALL {
            if mix.weight(a) > 0.0 && candidates(ont, a).is_empty() {
                return Err(Error::Config(format!(
                    "archetype {a:?} is not realizable with this ontology"
                )));
            }
        }
        Ok(())
    }
}

fn medication_for(condition: &str) -> &'static str {
    match condition {
        "ckd" => "ace-inhibitor",
        "nyha" => "diuretic",
        "sepsis" => "antibiotic",
        "dermatitis" => "steroid-cream",
        "neuropathy" => "gabapentin",
        _ => "supportive-care",
    }
}

fn has_resolution(ont: &Ontology, c: &Condition) -> bool {
    c.stages
        .iter()
        .any(|s| ont.stage(s).map(|s| s.resolution).unwrap_or(false))
}

/// Conditions able to carry the given archetype.
fn candidates(ont: &Ontology, a: Archetype) -> Vec<&Condition> {
    match a {
        // Worsening towards a resolution stage is not a meaningful trajectory.
        Archetype::Progressive => ont
            .conditions
            .iter()
            .filter(|c| c.stages.len() >= 2 && !has_resolution(ont, c))
            .collect(),
        Archetype::Recovering => ont
            .conditions
            .iter()
            .filter(|c| c.stages.len() >= 2)
            .collect(),
        Archetype::Stable => ont.conditions.iter().collect(),
        Archetype::OrthogonalMixed => {
            let systems: std::collections::BTreeSet<&str> = ont
                .conditions
                .iter()
                .map(|c| c.organ_system.as_str())
                .collect();
            if systems.len() >= 2 {
                ont.conditions.iter().collect()
            } else {
                Vec::new()
            }
        }
    }
}

/// Event times in integer hundredths of a day, strictly increasing.
fn event_times(rng: &mut ChaCha8Rng, n: usize, horizon: f64) -> Vec<f64> {
    let horizon_h = (horizon * 100.0).floor() as u64;
    let span = ((horizon_h as f64) * rng.gen_range(0.6..1.0)) as u64;
    let start = rng.gen_range(0..=(horizon_h - span).min(200));
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..1.7)).collect();
    let total: f64 = raw.iter().sum();
    let mut t = start;
    let mut out = Vec::with_capacity(n);
    for (i, r) in raw.iter().enumerate() {
        if i > 0 {
            let step = ((r / total) * span as f64).round() as u64;
            t += step.max(1);
        }
        out.push(t);
    }
    // Rounding may overshoot; pull the tail back while keeping order.
    let limit = horizon_h;
    for i in (0..n).rev() {
        let cap = limit - (n - 1 - i) as u64;
        if out[i] > cap {
            out[i] = cap;
        }
        if i + 1 < n && out[i] >= out[i + 1] {
            out[i] = out[i + 1] - 1;
        }
    }
    out.into_iter().map(|h| h as f64 / 100.0).collect()
}

/// Lab band matching a stage rank: rank 1 sits at the healthiest band and the
/// top rank at the sickest.
fn band_for_rank(lab: &crate::ontology::LabDefinition, rank: u32, n_stages: usize) -> usize {
    let top = lab.n_bands() - 1;
    let sickness = if n_stages <= 1 {
        0
    } else {
        ((rank as usize - 1) * top + (n_stages - 1) / 2) / (n_stages - 1)
    };
    match lab.direction {
        crate::ontology::LabDirection::HigherHealthier => top - sickness,
        crate::ontology::LabDirection::HigherSicker => sickness,
    }
}

/// One condition followed along a rank trajectory.
struct Track<'a> {
    condition: &'a Condition,
    ranks: Vec<u32>,
}

impl Track<'_> {
    fn stage_id(&self, rank: u32) -> &str {
        &self.condition.stages[rank as usize - 1]
    }
}

fn emit_track(
    rng: &mut ChaCha8Rng,
    ont: &Ontology,
    track: &Track<'_>,
    times: &[f64],
    with_medication: bool,
) -> Vec<ClinicalEvent> {
    let n = times.len();
    let labs = ont.labs_of(&track.condition.id);
    let n_stages = track.condition.stages.len();
    let med = medication_for(&track.condition.id);
    let mut events = Vec::with_capacity(n);
    for (i, &t) in times.iter().enumerate() {
        let rank = track.ranks[i];
        let forced_stage = i == 0 || i == n - 1;
        if !forced_stage && with_medication && i == 1 {
            events.push(ClinicalEvent::med_start(t, med));
            continue;
        }
        if !forced_stage && !labs.is_empty() && rng.gen_bool(0.4) {
            let lab = labs[rng.gen_range(0..labs.len())];
            let band = band_for_rank(lab, rank, n_stages);
            let value = lab.value_in_band(band, rng.gen_range(0.05..0.95));
            let value = (value * 10.0).round() / 10.0;
            events.push(ClinicalEvent::lab(t, &lab.id, value));
            continue;
        }
        events.push(ClinicalEvent::stage(t, track.stage_id(rank)));
    }
    events
}

/// Trajectory of `n` ranks from `from` to `to`, monotone, hitting both ends.
fn monotone_ranks(n: usize, from: u32, to: u32) -> Vec<u32> {
    if n == 1 {
        return vec![to];
    }
    (0..n)
        .map(|i| {
            let steps = (to as i64 - from as i64) * i as i64 / (n as i64 - 1);
            (from as i64 + steps) as u32
        })
        .collect()
}

fn generate_patient(cfg: &CohortConfig, ont: &Ontology, index: usize) -> PatientTimeline {
    let mut rng = seed::rng(cfg.seed, "cohort", index as u64);
    let archetype = cfg.archetype_mix.draw(rng.gen::<f64>());
    let r = cfg.events_per_patient;
    let n = rng.gen_range(r.min..=r.max).max(2);
    let times = event_times(&mut rng, n, cfg.horizon_days);
    let pool = candidates(ont, archetype);

    let events = match archetype {
        Archetype::Progressive | Archetype::Recovering | Archetype::Stable => {
            let condition = pool[rng.gen_range(0..pool.len())];
            let top = condition.stages.len() as u32;
            let (from, to) = match archetype {
                Archetype::Progressive => {
                    let from = rng.gen_range(1..top);
                    (from, rng.gen_range(from + 1..=top))
                }
                Archetype::Recovering => {
                    let from = rng.gen_range(2..=top);
                    (from, rng.gen_range(1..from))
                }
                _ => {
                    let r = rng.gen_range(1..=top);
                    (r, r)
                }
            };
            let track = Track {
                condition,
                ranks: monotone_ranks(n, from, to),
            };
            let sepsis_like = archetype == Archetype::Recovering && has_resolution(ont, condition);
            let with_med = n >= 3 && (sepsis_like || rng.gen_bool(0.3));
            let mut events = emit_track(&mut rng, ont, &track, &times, with_med);
            if sepsis_like && n >= 4 {
                // Stop the antibiotic just before the resolving diagnosis.
                let med = medication_for(&condition.id);
                events[n - 2] = ClinicalEvent::med_stop(times[n - 2], med);
            }
            events
        }
        Archetype::OrthogonalMixed => {
            let a = pool[rng.gen_range(0..pool.len())];
            let others: Vec<&Condition> = pool
                .iter()
                .copied()
                .filter(|c| c.organ_system != a.organ_system)
                .collect();
            let b = others[rng.gen_range(0..others.len())];
            let ra = rng.gen_range(1..=a.stages.len() as u32);
            let rb = rng.gen_range(1..=b.stages.len() as u32);
            // Event 0 belongs to a, event 1 to b, the rest at random.
            let owner: Vec<bool> = (0..n)
                .map(|i| match i {
                    0 => false,
                    1 => true,
                    _ => rng.gen_bool(0.5),
                })
                .collect();
            let times_a: Vec<f64> = times
                .iter()
                .zip(&owner)
                .filter(|(_, &o)| !o)
                .map(|(t, _)| *t)
                .collect();
            let times_b: Vec<f64> = times
                .iter()
                .zip(&owner)
                .filter(|(_, &o)| o)
                .map(|(t, _)| *t)
                .collect();
            let ea = emit_track(
                &mut rng,
                ont,
                &Track {
                    condition: a,
                    ranks: vec![ra; times_a.len()],
                },
                &times_a,
                false,
            );
            let eb = emit_track(
                &mut rng,
                ont,
                &Track {
                    condition: b,
                    ranks: vec![rb; times_b.len()],
                },
                &times_b,
                false,
            );
            let mut events: Vec<ClinicalEvent> = ea.into_iter().chain(eb).collect();
            events.sort_by(|x, y| x.time.total_cmp(&y.time));
            events
        }
    };

    PatientTimeline {
        patient_id: format!("p{index:06}"),
        archetype: Some(archetype),
        events,
    }
}

/// Generates patients `range` of the cohort. Shards concatenate to the full cohort.
pub fn generate_shard(
    cfg: &CohortConfig,
    ont: &Ontology,
    range: std::ops::Range<usize>,
) -> Result<Vec<PatientTimeline>> {
    cfg.validate(ont)?;
    Ok(range
        .filter(|&i| i < cfg.n_patients)
        .map(|i| generate_patient(cfg, ont, i))
        .collect())
}

pub fn generate_cohort(cfg: &CohortConfig, ont: &Ontology) -> Result<Vec<PatientTimeline>> {
    generate_shard(cfg, ont, 0..cfg.n_patients)
}

pub fn write_corpus(timelines: &[PatientTimeline], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for tl in timelines {
        let line = serde_json::to_string(tl).expect("timeline serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<PatientTimeline>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tl: PatientTimeline = serde_json::from_str(&line)
            .map_err(|e| Error::parse(origin.clone(), i + 1, e.to_string()))?;
        tl.validate()
            .map_err(|e| Error::parse(origin.clone(), i + 1, e.to_string()))?;
        out.push(tl);
    }
    Ok(out)
}

/// Checks that every event in the corpus references ids present in `ont`.
pub fn check_corpus_ids(timelines: &[PatientTimeline], ont: &Ontology) -> Result<()> {
    for tl in timelines {
        for e in &tl.events {
            e.check_ids(ont)
                .map_err(|err| Error::Validation(format!("patient {}: {err}", tl.patient_id)))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::StageDelta;

    fn cfg(n: usize, mix: ArchetypeMix) -> CohortConfig {
        CohortConfig {
            n_patients: n,
            archetype_mix: mix,
            ..CohortConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let ont = Ontology::seed();
        let c = CohortConfig {
            n_patients: 2,
            seed: 7,
            ..CohortConfig::default()
        };
        let a = serde_json::to_string(&generate_cohort(&c, &ont).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_cohort(&c, &ont).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shards_match_single_pass() {
        let ont = Ontology::seed();
        let c = cfg(50, ArchetypeMix::default());
        let full = generate_cohort(&c, &ont).unwrap();
        let mut sharded = generate_shard(&c, &ont, 30..50).unwrap();
        let mut head = generate_shard(&c, &ont, 0..30).unwrap();
        head.append(&mut sharded);
        assert_eq!(full, head);
    }

    #[test]
    fn every_timeline_valid_and_in_ontology() {
        let ont = Ontology::seed();
        let cohort = generate_cohort(&cfg(300, ArchetypeMix::default()), &ont).unwrap();
        assert_eq!(cohort.len(), 300);
        for tl in &cohort {
            tl.validate().unwrap();
            assert!(tl.events.len() >= 2);
            assert!(tl.events.last().unwrap().time <= 40.0);
        }
        check_corpus_ids(&cohort, &ont).unwrap();
    }

    fn stage_ranks_by_condition(ont: &Ontology, tl: &PatientTimeline) -> Vec<(String, Vec<u32>)> {
        let mut map: std::collections::BTreeMap<String, Vec<u32>> = Default::default();
        for e in &tl.events {
            if let EventPayload::DiagnosisStage { stage } = &e.payload {
                let s = ont.stage(stage).unwrap();
                map.entry(s.condition.clone()).or_default().push(s.rank);
            }
        }
        map.into_iter().collect()
    }

    #[test]
    fn progressive_ranks_non_decreasing() {
        let ont = Ontology::seed();
        let cohort =
            generate_cohort(&cfg(100, ArchetypeMix::only(Archetype::Progressive)), &ont).unwrap();
        for tl in &cohort {
            for (_, ranks) in stage_ranks_by_condition(&ont, tl) {
                assert!(ranks.windows(2).all(|w| w[0] <= w[1]), "{tl:?}");
                assert!(ranks.first() < ranks.last());
            }
        }
    }

    #[test]
    fn recovering_contains_regression() {
        let ont = Ontology::seed();
        let cohort =
            generate_cohort(&cfg(100, ArchetypeMix::only(Archetype::Recovering)), &ont).unwrap();
        for tl in &cohort {
            let stages: Vec<&str> = tl
                .events
                .iter()
                .filter_map(|e| match &e.payload {
                    EventPayload::DiagnosisStage { stage } => Some(stage.as_str()),
                    _ => None,
                })
                .collect();
            let regress = stages.windows(2).any(
                |w| matches!(ont.stage_delta(w[0], w[1]).unwrap(), StageDelta::Same(d) if d < 0),
            );
            assert!(regress, "{tl:?}");
        }
    }

    #[test]
    fn orthogonal_spans_two_systems() {
        let ont = Ontology::seed();
        let cohort = generate_cohort(
            &cfg(100, ArchetypeMix::only(Archetype::OrthogonalMixed)),
            &ont,
        )
        .unwrap();
        for tl in &cohort {
            let systems: std::collections::BTreeSet<&str> = tl
                .events
                .iter()
                .filter_map(|e| match &e.payload {
                    EventPayload::DiagnosisStage { stage } => {
                        Some(ont.stage_system(stage).unwrap())
                    }
                    EventPayload::LabObservation { lab, .. } => Some(ont.lab_system(lab).unwrap()),
                    _ => None,
                })
                .collect();
            assert!(systems.len() >= 2, "{tl:?}");
        }
    }

    #[test]
    fn config_errors() {
        let ont = Ontology::seed();
        let mut c = CohortConfig::default();
        c.events_per_patient = EventRange { min: 1, max: 1 };
        assert!(matches!(c.validate(&ont), Err(Error::Config(_))));
        let mut c = CohortConfig::default();
        c.archetype_mix.stable = 0.5;
        assert!(matches!(c.validate(&ont), Err(Error::Config(_))));
        let mut c = CohortConfig::default();
        c.events_per_patient = EventRange { min: 9, max: 3 };
        assert!(c.validate(&ont).is_err());
    }

    #[test]
    fn corpus_roundtrip_and_errors() {
        let ont = Ontology::seed();
        let cohort = generate_cohort(&cfg(40, ArchetypeMix::default()), &ont).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("corpus.jsonl");
        write_corpus(&cohort, &p).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), cohort);

        std::fs::write(&p, "").unwrap();
        assert!(read_corpus(&p).unwrap().is_empty());

        let bad = r#"{"patient_id":"x","events":[{"time":2.0,"kind":"diagnosis-stage","stage":"ckd-1"},{"time":1.0,"kind":"diagnosis-stage","stage":"ckd-2"}]}"#;
        std::fs::write(&p, format!("{bad}\n")).unwrap();
        assert!(matches!(read_corpus(&p), Err(Error::Parse { line: 1, .. })));

        std::fs::write(&p, "{\"patient_id\":\"x\",\"events\":[]}\nnot json\n").unwrap();
        assert!(matches!(read_corpus(&p), Err(Error::Parse { line: 2, .. })));
    }
}
