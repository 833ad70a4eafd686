//! Weak entailment labels and gap-bounded pair sampling.
//!
//! Timelines are cut into consecutive half-open windows; each window pair
//! `(earlier, later)` gets a label from a fixed rule list, first match wins:
//!
//! | rule       | label      | fires when                                                         |
//! |------------|------------|--------------------------------------------------------------------|
//! | `R1.stage` | contradict | a same-condition stage pair whose rank decreases                   |
//! | `R1.lab`   | contradict | a lab band moves from abnormal to its normal band                  |
//! | `R1.med`   | contradict | a medication started earlier is stopped later next to a resolution |
//! | `R2.stage` | entail     | a same-condition stage pair whose rank increases                   |
//! | `R2.lab`   | entail     | a lab moves one or more bands sicker, its condition present earlier |
//! | `R3`       | neutral    | the windows' organ-system sets are non-empty and disjoint          |
//! | `R4`       | neutral    | nothing above fired                                                 |
//!
//! Every rule that fires is recorded in the pair's `rule_trace`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cohort::{ClinicalEvent, EventPayload, PatientTimeline};
use crate::error::{Error, Result};
use crate::ontology::{LabDefinition, Ontology, Stage};
use crate::seed;
use crate::textizer;

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub patient_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub events: Vec<ClinicalEvent>,
}

impl Window {
    /// Representative time of the window: its end.
    pub fn anchor_time(&self) -> f64 {
        self.t_end
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_start < self.t_end) {
            return Err(Error::Validation(format!(
                "window [{}, {}) is empty",
                self.t_start, self.t_end
            )));
        }
        if self.events.is_empty() {
            return Err(Error::Validation("window has no events".into()));
        }
        if let Some(e) = self
            .events
            .iter()
            .find(|e| e.time < self.t_start || e.time >= self.t_end)
        {
            return Err(Error::Validation(format!(
                "event at day {} outside window [{}, {})",
                e.time, self.t_start, self.t_end
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum EntailmentLabel {
    Entail = 0,
    Contradict = 1,
    Neutral = 2,
}

impl EntailmentLabel {
    pub const ALL: [EntailmentLabel; 3] = [
        EntailmentLabel::Entail,
        EntailmentLabel::Contradict,
        EntailmentLabel::Neutral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EntailmentLabel::Entail => "entail",
            EntailmentLabel::Contradict => "contradict",
            EntailmentLabel::Neutral => "neutral",
        }
    }
}

impl From<EntailmentLabel> for u8 {
    fn from(l: EntailmentLabel) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for EntailmentLabel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Self::from_index(v as usize).ok_or_else(|| format!("label {v} is not 0, 1 or 2"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    #[serde(rename = "R1.stage")]
    StageRegression,
    #[serde(rename = "R1.lab")]
    LabNormalized,
    #[serde(rename = "R1.med")]
    TreatmentResolved,
    #[serde(rename = "R2.stage")]
    StageProgression,
    #[serde(rename = "R2.lab")]
    LabWorsened,
    #[serde(rename = "R3")]
    OrthogonalSystems,
    #[serde(rename = "R4")]
    Fallback,
}

impl Rule {
    pub fn label(self) -> EntailmentLabel {
        match self {
            Rule::StageRegression | Rule::LabNormalized | Rule::TreatmentResolved => {
                EntailmentLabel::Contradict
            }
            Rule::StageProgression | Rule::LabWorsened => EntailmentLabel::Entail,
            Rule::OrthogonalSystems | Rule::Fallback => EntailmentLabel::Neutral,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Rule::StageRegression => "R1.stage",
            Rule::LabNormalized => "R1.lab",
            Rule::TreatmentResolved => "R1.med",
            Rule::StageProgression => "R2.stage",
            Rule::LabWorsened => "R2.lab",
            Rule::OrthogonalSystems => "R3",
            Rule::Fallback => "R4",
        }
    }

    pub fn is_contradiction(self) -> bool {
        self.label() == EntailmentLabel::Contradict
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntailmentPair {
    pub patient_id: String,
    pub earlier: Window,
    pub later: Window,
    pub label: EntailmentLabel,
    pub gap_days: f64,
    pub rule_trace: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    pub delta_min: f64,
    pub delta_max: f64,
    pub window_len: f64,
    pub pairs_per_patient: usize,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            delta_min: 1.0,
            delta_max: 30.0,
            window_len: 3.0,
            pairs_per_patient: 10,
            seed: 7,
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_min > 0.0 && self.delta_min < self.delta_max && self.delta_max.is_finite())
        {
            return Err(Error::Config(format!(
                "need 0 < delta_min < delta_max, got ({}, {})",
                self.delta_min, self.delta_max
            )));
        }
        if !(self.window_len > 0.0 && self.window_len.is_finite()) {
            return Err(Error::Config("window_len must be positive".into()));
        }
        if self.pairs_per_patient == 0 {
            return Err(Error::Config("pairs_per_patient must be positive".into()));
        }
        Ok(())
    }
}

/// Consecutive half-open windows of `window_len` days starting at the first
/// event. Empty windows are dropped.
pub fn segment_timeline(tl: &PatientTimeline, window_len: f64) -> Result<Vec<Window>> {
    let first = tl
        .events
        .first()
        .ok_or_else(|| Error::Validation(format!("patient {} has no events", tl.patient_id)))?;
    if !(window_len > 0.0) {
        return Err(Error::Config("window_len must be positive".into()));
    }
    let t0 = first.time;
    let bounds = |k: i64| (t0 + k as f64 * window_len, t0 + (k + 1) as f64 * window_len);
    let mut windows: Vec<(i64, Window)> = Vec::new();
    for e in &tl.events {
        let mut k = ((e.time - t0) / window_len).floor() as i64;
        // Division and multiplication can disagree by an ulp at the edges.
        while e.time < bounds(k).0 {
            k -= 1;
        }
        while e.time >= bounds(k).1 {
            k += 1;
        }
        match windows.last_mut() {
            Some((last, w)) if *last == k => w.events.push(e.clone()),
            _ => {
                let (t_start, t_end) = bounds(k);
                windows.push((
                    k,
                    Window {
                        patient_id: tl.patient_id.clone(),
                        t_start,
                        t_end,
                        events: vec![e.clone()],
                    },
                ));
            }
        }
    }
    Ok(windows.into_iter().map(|(_, w)| w).collect())
}

struct WindowFacts<'a> {
    stages: Vec<&'a Stage>,
    labs: Vec<(&'a LabDefinition, usize)>,
    med_starts: BTreeSet<&'a str>,
    med_stops: BTreeSet<&'a str>,
    systems: BTreeSet<&'a str>,
    conditions: BTreeSet<&'a str>,
}

fn facts<'a>(w: &'a Window, ont: &'a Ontology) -> Result<WindowFacts<'a>> {
    let mut f = WindowFacts {
        stages: Vec::new(),
        labs: Vec::new(),
        med_starts: BTreeSet::new(),
        med_stops: BTreeSet::new(),
        systems: BTreeSet::new(),
        conditions: BTreeSet::new(),
    };
    for e in &w.events {
        match &e.payload {
            EventPayload::DiagnosisStage { stage } => {
                let s = ont.stage(stage)?;
                f.systems.insert(ont.stage_system(stage)?);
                f.conditions.insert(&s.condition);
                f.stages.push(s);
            }
            EventPayload::LabObservation { lab, value } => {
                let l = ont.lab(lab)?;
                f.systems.insert(ont.lab_system(lab)?);
                f.labs.push((l, l.band(*value)?));
            }
            EventPayload::MedicationStart { medication } => {
                f.med_starts.insert(medication);
            }
            EventPayload::MedicationStop { medication } => {
                f.med_stops.insert(medication);
            }
        }
    }
    Ok(f)
}

/// Labels a window pair. Returns the label and every rule that fired.
pub fn label_pair(
    earlier: &Window,
    later: &Window,
    ont: &Ontology,
) -> Result<(EntailmentLabel, Vec<Rule>)> {
    if !(earlier.anchor_time() < later.anchor_time()) {
        return Err(Error::Validation(format!(
            "earlier window anchor {} is not before later anchor {}",
            earlier.anchor_time(),
            later.anchor_time()
        )));
    }
    let a = facts(earlier, ont)?;
    let b = facts(later, ont)?;

    let stage_deltas = || {
        a.stages.iter().flat_map(|sa| {
            b.stages
                .iter()
                .filter(move |sb| sb.condition == sa.condition)
                .map(move |sb| sb.rank as i64 - sa.rank as i64)
        })
    };
    let lab_moves = || {
        a.labs.iter().flat_map(|&(la, ba)| {
            b.labs
                .iter()
                .filter(move |(lb, _)| lb.id == la.id)
                .map(move |&(_, bb)| (la, ba, bb))
        })
    };

    let mut fired = Vec::new();
    if stage_deltas().any(|d| d < 0) {
        fired.push(Rule::StageRegression);
    }
    if lab_moves().any(|(l, ba, bb)| ba != l.normal_band && bb == l.normal_band) {
        fired.push(Rule::LabNormalized);
    }
    let resolves = b.stages.iter().any(|s| s.resolution);
    if resolves && b.med_stops.iter().any(|m| a.med_starts.contains(m)) {
        fired.push(Rule::TreatmentResolved);
    }
    if stage_deltas().any(|d| d > 0) {
        fired.push(Rule::StageProgression);
    }
    if lab_moves().any(|(l, ba, bb)| {
        l.sickness(bb) > l.sickness(ba) && a.conditions.contains(l.condition.as_str())
    }) {
        fired.push(Rule::LabWorsened);
    }
    if !a.systems.is_empty() && !b.systems.is_empty() && a.systems.is_disjoint(&b.systems) {
        fired.push(Rule::OrthogonalSystems);
    }
    if fired.is_empty() {
        fired.push(Rule::Fallback);
    }
    Ok((fired[0].label(), fired))
}

/// Index pairs `(i, j)`, `i < j`, whose anchor gap lies strictly inside
/// `(delta_min, delta_max)`.
pub fn eligible_window_pairs(windows: &[Window], cfg: &PairConfig) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..windows.len() {
        for j in i + 1..windows.len() {
            let gap = windows[j].anchor_time() - windows[i].anchor_time();
            if gap > cfg.delta_min && gap < cfg.delta_max {
                out.push((i, j));
            }
        }
    }
    out
}

/// Samples up to `pairs_per_patient` gap-valid pairs for one patient.
///
/// Pairs labelled by a real rule are drawn uniformly without replacement
/// first. Fallback (`R4`) neutrals are added only to bring the neutral share
/// up to a third of the quota.
pub fn sample_pairs(
    tl: &PatientTimeline,
    cfg: &PairConfig,
    ont: &Ontology,
) -> Result<Vec<EntailmentPair>> {
    cfg.validate()?;
    if tl.events.is_empty() {
        return Ok(Vec::new());
    }
    let windows = segment_timeline(tl, cfg.window_len)?;
    let mut informative = Vec::new();
    let mut fallback = Vec::new();
    for (i, j) in eligible_window_pairs(&windows, cfg) {
        let (label, trace) = label_pair(&windows[i], &windows[j], ont)?;
        if trace == [Rule::Fallback] {
            fallback.push((i, j, label, trace));
        } else {
            informative.push((i, j, label, trace));
        }
    }

    let mut rng = seed::keyed_rng(cfg.seed, "pairs", &tl.patient_id);
    informative.shuffle(&mut rng);
    fallback.shuffle(&mut rng);

    let quota = cfg.pairs_per_patient;
    informative.truncate(quota);
    let neutrals = informative
        .iter()
        .filter(|p| p.2 == EntailmentLabel::Neutral)
        .count();
    let target = quota.div_ceil(3);
    let room = quota - informative.len();
    let topup = target
        .saturating_sub(neutrals)
        .min(room)
        .min(fallback.len());
    let mut chosen: Vec<_> = informative
        .into_iter()
        .chain(fallback.into_iter().take(topup))
        .collect();
    chosen.sort_by_key(|p| (p.0, p.1));

    Ok(chosen
        .into_iter()
        .map(|(i, j, label, rule_trace)| {
            let earlier = windows[i].clone();
            let later = windows[j].clone();
            EntailmentPair {
                patient_id: tl.patient_id.clone(),
                gap_days: later.anchor_time() - earlier.anchor_time(),
                earlier,
                later,
                label,
                rule_trace,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config(
                "split proportions must be non-negative".into(),
            ));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split proportions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Valid => "valid.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub patients: usize,
    pub pairs: usize,
    /// Pair counts indexed by label encoding (entail, contradict, neutral).
    pub class_histogram: [usize; 3],
    pub mean_gap_days: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub seed: u64,
    pub pair_config: PairConfig,
    pub split: SplitSpec,
    pub class_histogram: [usize; 3],
    pub mean_gap_days: Option<f64>,
    pub splits: BTreeMap<Split, SplitStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<EntailmentPair>,
    pub valid: Vec<EntailmentPair>,
    pub test: Vec<EntailmentPair>,
    pub summary: DatasetSummary,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[EntailmentPair] {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

fn stats(pairs: &[EntailmentPair], patients: usize) -> SplitStats {
    let mut hist = [0usize; 3];
    for p in pairs {
        hist[p.label.index()] += 1;
    }
    SplitStats {
        patients,
        pairs: pairs.len(),
        class_histogram: hist,
        mean_gap_days: mean_gap(pairs),
    }
}

fn mean_gap(pairs: &[EntailmentPair]) -> Option<f64> {
    if pairs.is_empty() {
        None
    } else {
        Some(pairs.iter().map(|p| p.gap_days).sum::<f64>() / pairs.len() as f64)
    }
}

/// Assigns patients to splits and samples pairs for each.
pub fn build_dataset(
    corpus: &[PatientTimeline],
    cfg: &PairConfig,
    ont: &Ontology,
    split: &SplitSpec,
) -> Result<Dataset> {
    cfg.validate()?;
    split.validate()?;
    let n = corpus.len();
    let n_train = ((n as f64 * split.train).round() as usize).min(n);
    let n_valid = ((n as f64 * split.valid).round() as usize).min(n - n_train);
    let n_test = n - n_train - n_valid;
    for (name, want, got) in [
        ("train", split.train, n_train),
        ("valid", split.valid, n_valid),
        ("test", split.test, n_test),
    ] {
        if want > 0.0 && got == 0 {
            return Err(Error::Validation(format!(
                "corpus of {n} patients is too small to populate the {name} split"
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| corpus[a].patient_id.cmp(&corpus[b].patient_id));
    if order
        .windows(2)
        .any(|w| corpus[w[0]].patient_id == corpus[w[1]].patient_id)
    {
        return Err(Error::Validation("duplicate patient ids in corpus".into()));
    }
    let mut rng = seed::rng(cfg.seed, "split", 0);
    order.shuffle(&mut rng);

    let mut assign = vec![Split::Test; n];
    for (rank, &idx) in order.iter().enumerate() {
        assign[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }

    let mut out: BTreeMap<Split, Vec<EntailmentPair>> =
        Split::ALL.iter().map(|&s| (s, Vec::new())).collect();
    let mut patients: BTreeMap<Split, usize> = Split::ALL.iter().map(|&s| (s, 0)).collect();
    for (tl, &s) in corpus.iter().zip(&assign) {
        *patients.get_mut(&s).unwrap() += 1;
        out.get_mut(&s).unwrap().extend(sample_pairs(tl, cfg, ont)?);
    }

    let all: Vec<&EntailmentPair> = out.values().flatten().collect();
    let mut hist = [0usize; 3];
    for p in &all {
        hist[p.label.index()] += 1;
    }
    let mean = if all.is_empty() {
        None
    } else {
        Some(all.iter().map(|p| p.gap_days).sum::<f64>() / all.len() as f64)
    };
    let summary = DatasetSummary {
        seed: cfg.seed,
        pair_config: cfg.clone(),
        split: *split,
        class_histogram: hist,
        mean_gap_days: mean,
        splits: Split::ALL
            .iter()
            .map(|&s| (s, stats(&out[&s], patients[&s])))
            .collect(),
    };
    let mut take = |s| out.remove(&s).unwrap();
    Ok(Dataset {
        train: take(Split::Train),
        valid: take(Split::Valid),
        test: take(Split::Test),
        summary,
    })
}

/// Pair file record: one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub patient_id: String,
    pub earlier: WindowRecord,
    pub later: WindowRecord,
    pub label: EntailmentLabel,
    pub gap_days: f64,
    pub rule_trace: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub t_start: f64,
    pub t_end: f64,
    pub events: Vec<ClinicalEvent>,
    /// Rendered text of the window.
    pub text: String,
}

impl PairRecord {
    pub fn from_pair(p: &EntailmentPair, ont: &Ontology) -> Result<Self> {
        let window = |w: &Window| -> Result<WindowRecord> {
            Ok(WindowRecord {
                t_start: w.t_start,
                t_end: w.t_end,
                events: w.events.clone(),
                text: textizer::render_window(w, ont)?,
            })
        };
        Ok(PairRecord {
            patient_id: p.patient_id.clone(),
            earlier: window(&p.earlier)?,
            later: window(&p.later)?,
            label: p.label,
            gap_days: p.gap_days,
            rule_trace: p.rule_trace.clone(),
        })
    }

    pub fn to_pair(&self) -> EntailmentPair {
        let window = |w: &WindowRecord| Window {
            patient_id: self.patient_id.clone(),
            t_start: w.t_start,
            t_end: w.t_end,
            events: w.events.clone(),
        };
        EntailmentPair {
            patient_id: self.patient_id.clone(),
            earlier: window(&self.earlier),
            later: window(&self.later),
            label: self.label,
            gap_days: self.gap_days,
            rule_trace: self.rule_trace.clone(),
        }
    }

    pub fn has_contradiction_rule(&self) -> bool {
        self.rule_trace.iter().any(|r| r.is_contradiction())
    }
}

pub fn write_pairs(pairs: &[EntailmentPair], ont: &Ontology, path: impl AsRef<Path>) -> Result<()> {
    let records = pairs
        .iter()
        .map(|p| PairRecord::from_pair(p, ont))
        .collect::<Result<Vec<_>>>()?;
    write_records(&records, path)
}

pub fn write_records(records: &[PairRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("pair record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(origin.clone(), i + 1, e.to_string()))?;
        if !(rec.gap_days > 0.0) {
            return Err(Error::parse(
                origin.clone(),
                i + 1,
                "gap_days must be positive",
            ));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Writes `train/valid/test.jsonl` into `dir`.
pub fn write_dataset(ds: &Dataset, ont: &Ontology, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in Split::ALL {
        write_pairs(ds.split(s), ont, dir.join(s.file_name()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, CohortConfig};

    fn tl(events: Vec<ClinicalEvent>) -> PatientTimeline {
        PatientTimeline {
            patient_id: "p".into(),
            archetype: None,
            events,
        }
    }

    fn win(t_start: f64, t_end: f64, events: Vec<ClinicalEvent>) -> Window {
        Window {
            patient_id: "p".into(),
            t_start,
            t_end,
            events,
        }
    }

    #[test]
    fn segment_example() {
        let t = tl(vec![
            ClinicalEvent::stage(0.5, "ckd-1"),
            ClinicalEvent::stage(1.2, "ckd-1"),
            ClinicalEvent::stage(9.0, "ckd-2"),
        ]);
        let w = segment_timeline(&t, 7.0).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!((w[0].t_start, w[0].t_end, w[0].events.len()), (0.5, 7.5, 2));
        assert_eq!(
            (w[1].t_start, w[1].t_end, w[1].events.len()),
            (7.5, 14.5, 1)
        );
    }

    #[test]
    fn segment_single_and_wide() {
        let w = segment_timeline(&tl(vec![ClinicalEvent::stage(3.0, "ckd-1")]), 2.0).unwrap();
        assert_eq!(w.len(), 1);
        let t = tl(vec![
            ClinicalEvent::stage(1.0, "ckd-1"),
            ClinicalEvent::stage(5.0, "ckd-2"),
        ]);
        assert_eq!(segment_timeline(&t, 100.0).unwrap().len(), 1);
        assert!(segment_timeline(&tl(vec![]), 1.0).is_err());
    }

    #[test]
    fn segment_drops_empty_windows_and_covers_events() {
        let ont = Ontology::seed();
        let cohort = generate_cohort(
            &CohortConfig {
                n_patients: 100,
                ..Default::default()
            },
            &ont,
        )
        .unwrap();
        for t in &cohort {
            let ws = segment_timeline(t, 3.0).unwrap();
            let total: usize = ws.iter().map(|w| w.events.len()).sum();
            assert_eq!(total, t.events.len());
            for w in &ws {
                w.validate().unwrap();
            }
            assert!(ws.windows(2).all(|p| p[0].t_end <= p[1].t_start));
        }
    }

    #[test]
    fn labeler_worked_examples() {
        let ont = Ontology::seed();
        // Worsening CKD.
        let e = win(
            0.0,
            3.0,
            vec![
                ClinicalEvent::stage(1.0, "ckd-2"),
                ClinicalEvent::lab(2.0, "gfr", 55.0),
            ],
        );
        let l = win(6.0, 9.0, vec![ClinicalEvent::stage(7.0, "ckd-4")]);
        let (label, trace) = label_pair(&e, &l, &ont).unwrap();
        assert_eq!(label, EntailmentLabel::Entail);
        assert_eq!(trace, vec![Rule::StageProgression]);

        // GFR returns to normal.
        let e = win(
            0.0,
            3.0,
            vec![
                ClinicalEvent::stage(1.0, "ckd-4"),
                ClinicalEvent::lab(1.5, "gfr", 20.0),
            ],
        );
        let l = win(6.0, 9.0, vec![ClinicalEvent::lab(7.0, "gfr", 95.0)]);
        let (label, trace) = label_pair(&e, &l, &ont).unwrap();
        assert_eq!(label, EntailmentLabel::Contradict);
        assert_eq!(trace, vec![Rule::LabNormalized]);

        // Orthogonal systems.
        let e = win(0.0, 3.0, vec![ClinicalEvent::stage(1.0, "dermatitis-mild")]);
        let l = win(6.0, 9.0, vec![ClinicalEvent::stage(7.0, "neuropathy-mild")]);
        assert_eq!(
            label_pair(&e, &l, &ont).unwrap(),
            (EntailmentLabel::Neutral, vec![Rule::OrthogonalSystems])
        );

        // Sepsis treated and resolved.
        let e = win(
            0.0,
            3.0,
            vec![
                ClinicalEvent::stage(0.5, "sepsis-active"),
                ClinicalEvent::med_start(1.0, "antibiotic"),
            ],
        );
        let l = win(
            6.0,
            9.0,
            vec![
                ClinicalEvent::med_stop(6.5, "antibiotic"),
                ClinicalEvent::stage(7.0, "sepsis-resolved"),
            ],
        );
        let (label, trace) = label_pair(&e, &l, &ont).unwrap();
        assert_eq!(label, EntailmentLabel::Contradict);
        assert!(trace.contains(&Rule::TreatmentResolved));
    }

    #[test]
    fn labeler_fallback_and_order() {
        let ont = Ontology::seed();
        let e = win(0.0, 3.0, vec![ClinicalEvent::stage(1.0, "ckd-3")]);
        let l = win(6.0, 9.0, vec![ClinicalEvent::stage(7.0, "ckd-3")]);
        assert_eq!(
            label_pair(&e, &l, &ont).unwrap(),
            (EntailmentLabel::Neutral, vec![Rule::Fallback])
        );
        assert!(label_pair(&l, &e, &ont).is_err());
        let bad = win(6.0, 9.0, vec![ClinicalEvent::stage(7.0, "ckd-9")]);
        assert!(label_pair(&e, &bad, &ont).is_err());
    }

    #[test]
    fn swapping_progression_gives_contradiction() {
        let ont = Ontology::seed();
        for c in &ont.conditions {
            for (i, a) in c.stages.iter().enumerate() {
                for b in &c.stages[i + 1..] {
                    let w1 = win(0.0, 3.0, vec![ClinicalEvent::stage(1.0, a)]);
                    let w2 = win(6.0, 9.0, vec![ClinicalEvent::stage(7.0, b)]);
                    assert_eq!(
                        label_pair(&w1, &w2, &ont).unwrap().0,
                        EntailmentLabel::Entail
                    );
                    let w1s = win(0.0, 3.0, vec![ClinicalEvent::stage(1.0, b)]);
                    let w2s = win(6.0, 9.0, vec![ClinicalEvent::stage(7.0, a)]);
                    assert_eq!(
                        label_pair(&w1s, &w2s, &ont).unwrap().0,
                        EntailmentLabel::Contradict
                    );
                }
            }
        }
    }

    #[test]
    fn eligible_pairs_example() {
        let ws: Vec<Window> = [3.0, 7.0, 25.0]
            .iter()
            .map(|&t| win(t - 1.0, t, vec![ClinicalEvent::stage(t - 0.5, "ckd-1")]))
            .collect();
        let cfg = PairConfig {
            delta_min: 1.0,
            delta_max: 15.0,
            ..Default::default()
        };
        assert_eq!(eligible_window_pairs(&ws, &cfg), vec![(0, 1)]);
    }

    fn rich_timeline() -> PatientTimeline {
        let mut events = Vec::new();
        for k in 0..20 {
            let rank = 1 + (k / 4).min(4);
            events.push(ClinicalEvent::stage(
                k as f64 * 1.5 + 0.1,
                &format!("ckd-{rank}"),
            ));
        }
        tl(events)
    }

    #[test]
    fn quota_and_gap_contract() {
        let ont = Ontology::seed();
        let cfg = PairConfig {
            window_len: 1.0,
            ..Default::default()
        };
        let pairs = sample_pairs(&rich_timeline(), &cfg, &ont).unwrap();
        assert_eq!(pairs.len(), 10);
        for p in &pairs {
            assert!(p.gap_days > cfg.delta_min && p.gap_days < cfg.delta_max);
        }
        let shut = PairConfig {
            delta_min: 29.0,
            delta_max: 29.0 + 1e-9,
            ..cfg
        };
        assert!(sample_pairs(&rich_timeline(), &shut, &ont)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn stable_patients_contribute_capped_fallbacks() {
        let ont = Ontology::seed();
        let events = (0..12)
            .map(|k| ClinicalEvent::stage(k as f64 * 2.0, "nyha-ii"))
            .collect();
        let cfg = PairConfig::default();
        let pairs = sample_pairs(&tl(events), &cfg, &ont).unwrap();
        assert_eq!(pairs.len(), cfg.pairs_per_patient.div_ceil(3));
        assert!(pairs.iter().all(|p| p.rule_trace == [Rule::Fallback]));
    }

    #[test]
    fn dataset_split_is_patient_disjoint() {
        let ont = Ontology::seed();
        let cohort = generate_cohort(
            &CohortConfig {
                n_patients: 1000,
                ..Default::default()
            },
            &ont,
        )
        .unwrap();
        let cfg = PairConfig::default();
        let ds = build_dataset(&cohort, &cfg, &ont, &SplitSpec::default()).unwrap();
        let s = &ds.summary.splits;
        assert_eq!(
            (
                s[&Split::Train].patients,
                s[&Split::Valid].patients,
                s[&Split::Test].patients
            ),
            (800, 100, 100)
        );
        let ids = |ps: &[EntailmentPair]| {
            ps.iter()
                .map(|p| p.patient_id.clone())
                .collect::<BTreeSet<_>>()
        };
        let (a, b, c) = (ids(&ds.train), ids(&ds.valid), ids(&ds.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        let mean = ds.summary.mean_gap_days.unwrap();
        assert!(mean > cfg.delta_min && mean < cfg.delta_max);
        assert!(
            ds.summary.class_histogram.iter().all(|&c| c > 0),
            "{:?}",
            ds.summary
        );

        let again = build_dataset(&cohort, &cfg, &ont, &SplitSpec::default()).unwrap();
        assert_eq!(ds, again);

        assert!(build_dataset(&cohort[..2], &cfg, &ont, &SplitSpec::default()).is_err());
    }

    #[test]
    fn pair_file_roundtrip() {
        let ont = Ontology::seed();
        let cohort = generate_cohort(
            &CohortConfig {
                n_patients: 20,
                ..Default::default()
            },
            &ont,
        )
        .unwrap();
        let pairs: Vec<EntailmentPair> = cohort
            .iter()
            .flat_map(|t| sample_pairs(t, &PairConfig::default(), &ont).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.jsonl");
        write_pairs(&pairs, &ont, &p).unwrap();
        let back: Vec<EntailmentPair> = read_pairs(&p)
            .unwrap()
            .iter()
            .map(|r| r.to_pair())
            .collect();
        assert_eq!(back, pairs);
    }
}
