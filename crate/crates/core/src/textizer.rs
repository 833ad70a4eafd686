//! Window rendering and pair encoding.
//!
//! # Templates
//!
//! Events render in time order, joined by ` . `:
//!
//! | event            | text                                   |
//! |------------------|----------------------------------------|
//! | diagnosis stage  | `diagnosis <stage phrase>`             |
//! | lab observation  | `lab <lab id> band <band> <trend>`     |
//! | medication start | `start <medication>`                   |
//! | medication stop  | `stop <medication>`                    |
//!
//! The lab trend word is `rising`, `falling` or `steady`, comparing the band
//! with the previous observation of the same lab in the window, or with the
//! lab's normal band for the window's first observation. So
//! `{ckd-2 at day 1, GFR 55 at day 2}` renders as
//! `diagnosis ckd stage 2 . lab gfr band 2 falling`.
//!
//! # Vocabulary file
//!
//! One token per line; the token on line `k` (0-based) has id `k + 4`. Ids
//! 0-3 are the specials `[PAD]`, `[UNK]`, `[CLS]`, `[SEP]` and are not written.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::EventPayload;
use crate::error::{Error, Result};
use crate::ontology::Ontology;
use crate::supervision::{PairRecord, Window};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const N_SPECIAL: u32 = 4;
const SPECIAL_NAMES: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

pub fn render_window(w: &Window, ont: &Ontology) -> Result<String> {
    if w.events.is_empty() {
        return Err(Error::Validation("cannot render an empty window".into()));
    }
    let mut last_band: BTreeMap<&str, usize> = BTreeMap::new();
    let mut parts = Vec::with_capacity(w.events.len());
    for e in &w.events {
        let part = match &e.payload {
            EventPayload::DiagnosisStage { stage } => {
                format!("diagnosis {}", ont.stage(stage)?.display_phrase)
            }
            EventPayload::LabObservation { lab, value } => {
                let def = ont.lab(lab)?;
                let band = def.band(*value)?;
                let reference = last_band
                    .get(lab.as_str())
                    .copied()
                    .unwrap_or(def.normal_band);
                let trend = match band.cmp(&reference) {
                    std::cmp::Ordering::Less => "falling",
                    std::cmp::Ordering::Greater => "rising",
                    std::cmp::Ordering::Equal => "steady",
                };
                last_band.insert(lab, band);
                format!("lab {} band {band} {trend}", def.id)
            }
            EventPayload::MedicationStart { medication } => format!("start {medication}"),
            EventPayload::MedicationStop { medication } => format!("stop {medication}"),
        };
        parts.push(part);
    }
    Ok(parts.join(" . "))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tokens.into_iter().map(Into::into).collect();
        let tokens: Vec<String> = set.into_iter().collect();
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32 + N_SPECIAL))
            .collect();
        Vocab { tokens, ids }
    }

    /// Vocabulary over the rendered texts of the given (training) pairs.
    pub fn build(records: &[PairRecord]) -> Self {
        Self::from_tokens(records.iter().flat_map(|r| {
            r.earlier
                .text
                .split_whitespace()
                .chain(r.later.text.split_whitespace())
        }))
    }

    pub fn size(&self) -> usize {
        self.tokens.len() + N_SPECIAL as usize
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        if id < N_SPECIAL {
            Some(SPECIAL_NAMES[id as usize])
        } else {
            self.tokens
                .get((id - N_SPECIAL) as usize)
                .map(String::as_str)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for t in &self.tokens {
            writeln!(f, "{t}").map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::parse(
                    path.display().to_string(),
                    i + 1,
                    "malformed token",
                ));
            }
            if ids.insert(t.clone(), i as u32 + N_SPECIAL).is_some() {
                return Err(Error::parse(
                    path.display().to_string(),
                    i + 1,
                    format!("duplicate token `{t}`"),
                ));
            }
        }
        Ok(Vocab { tokens, ids })
    }
}

/// Which part of the joint input a token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Special = 0,
    First = 1,
    Second = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub segments: Vec<Segment>,
    /// Gap between the two windows, used by time-bucket positions.
    pub gap_days: f64,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Appends `[PAD]` tokens up to `len`.
    pub fn padded(&self, len: usize) -> Self {
        let mut out = self.clone();
        while out.ids.len() < len {
            out.ids.push(PAD);
            out.segments.push(Segment::Special);
        }
        out
    }

    pub fn validate(&self, max_len: usize) -> Result<()> {
        if self.ids.len() != self.segments.len() {
            return Err(Error::Validation(
                "ids and segments differ in length".into(),
            ));
        }
        if self.ids.first() != Some(&CLS) {
            return Err(Error::Validation("sequence must start with [CLS]".into()));
        }
        if self.ids.iter().skip(1).any(|&i| i == CLS) {
            return Err(Error::Validation(
                "[CLS] may only appear at position 0".into(),
            ));
        }
        if self.ids.iter().filter(|&&i| i == SEP).count() > 1 {
            return Err(Error::Validation("more than one [SEP]".into()));
        }
        if self.ids.len() > max_len {
            return Err(Error::Validation(format!(
                "sequence length {} exceeds max_len {max_len}",
                self.ids.len()
            )));
        }
        Ok(())
    }
}

/// Keeps `budget` tokens split across two segments in proportion to their
/// lengths, never dropping a non-empty segment entirely while budget allows.
fn split_budget(a: usize, b: usize, budget: usize) -> (usize, usize) {
    if a + b <= budget {
        return (a, b);
    }
    let mut ka = ((budget as f64) * a as f64 / (a + b) as f64).round() as usize;
    if a > 0 && b > 0 && budget >= 2 {
        ka = ka.clamp(1, budget - 1);
    }
    let ka = ka.min(a);
    let kb = (budget - ka).min(b);
    (ka, kb)
}

/// `[CLS] earlier [SEP] later`, truncated to `max_len`.
pub fn encode_texts(
    earlier: &str,
    later: &str,
    gap_days: f64,
    vocab: &Vocab,
    max_len: usize,
) -> Result<TokenSequence> {
    if max_len < 3 {
        return Err(Error::Config(format!("max_len {max_len} < 3")));
    }
    let a: Vec<u32> = earlier.split_whitespace().map(|t| vocab.id(t)).collect();
    let b: Vec<u32> = later.split_whitespace().map(|t| vocab.id(t)).collect();
    let (ka, kb) = split_budget(a.len(), b.len(), max_len - 2);
    let mut ids = Vec::with_capacity(ka + kb + 2);
    let mut segments = Vec::with_capacity(ka + kb + 2);
    ids.push(CLS);
    segments.push(Segment::Special);
    ids.extend_from_slice(&a[..ka]);
    segments.extend(std::iter::repeat_n(Segment::First, ka));
    ids.push(SEP);
    segments.push(Segment::Special);
    ids.extend_from_slice(&b[..kb]);
    segments.extend(std::iter::repeat_n(Segment::Second, kb));
    Ok(TokenSequence {
        ids,
        segments,
        gap_days,
    })
}

pub fn encode_pair(p: &PairRecord, vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    encode_texts(&p.earlier.text, &p.later.text, p.gap_days, vocab, max_len)
}

/// Token strings of the two segments, specials removed.
pub fn decode(seq: &TokenSequence, vocab: &Vocab) -> (Vec<String>, Vec<String>) {
    let pick = |want: Segment| {
        seq.ids
            .iter()
            .zip(&seq.segments)
            .filter(|(_, &s)| s == want)
            .map(|(&i, _)| vocab.token(i).unwrap_or("[UNK]").to_string())
            .collect()
    };
    (pick(Segment::First), pick(Segment::Second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, ClinicalEvent, CohortConfig};
    use crate::supervision::{sample_pairs, PairConfig};
    use proptest::prelude::*;

    fn window(events: Vec<ClinicalEvent>) -> Window {
        Window {
            patient_id: "p".into(),
            t_start: 0.0,
            t_end: 3.0,
            events,
        }
    }

    #[test]
    fn render_fixture() {
        let ont = Ontology::seed();
        let w = window(vec![
            ClinicalEvent::stage(1.0, "ckd-2"),
            ClinicalEvent::lab(2.0, "gfr", 55.0),
        ]);
        assert_eq!(
            render_window(&w, &ont).unwrap(),
            "diagnosis ckd stage 2 . lab gfr band 2 falling"
        );
        assert_eq!(
            render_window(&w, &ont).unwrap(),
            render_window(&w.clone(), &ont).unwrap()
        );
    }

    #[test]
    fn render_trends_and_meds() {
        let ont = Ontology::seed();
        let w = window(vec![
            ClinicalEvent::lab(0.1, "lactate", 3.0),
            ClinicalEvent::med_start(0.2, "antibiotic"),
            ClinicalEvent::lab(0.3, "lactate", 1.0),
            ClinicalEvent::lab(0.4, "lactate", 1.5),
            ClinicalEvent::med_stop(0.5, "antibiotic"),
        ]);
        assert_eq!(
            render_window(&w, &ont).unwrap(),
            "lab lactate band 1 rising . start antibiotic . lab lactate band 0 falling . \
             lab lactate band 0 steady . stop antibiotic"
        );
        assert!(render_window(&window(vec![]), &ont).is_err());
        assert!(render_window(&window(vec![ClinicalEvent::stage(1.0, "x-9")]), &ont).is_err());
    }

    #[test]
    fn vocab_counts_and_unk() {
        let v = Vocab::from_tokens(["b", "a", "a"]);
        assert_eq!(v.size(), 6);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v, Vocab::from_tokens(["a", "b"]));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "a\nb\n");
        assert_eq!(Vocab::load(&p).unwrap(), v);
    }

    #[test]
    fn encode_shapes() {
        let v = Vocab::from_tokens(["a", "b", "c"]);
        let s = encode_texts("a b", "c", 4.0, &v, 16).unwrap();
        assert_eq!(s.ids, vec![CLS, 4, 5, SEP, 6]);
        assert_eq!(
            s.segments,
            vec![
                Segment::Special,
                Segment::First,
                Segment::First,
                Segment::Special,
                Segment::Second
            ]
        );
        let long = "a b c ".repeat(20);
        let s = encode_texts(&long, "c c c c c c c c c c", 1.0, &v, 12).unwrap();
        assert_eq!(s.len(), 12);
        assert_eq!(s.ids.iter().filter(|&&i| i == SEP).count(), 1);
        assert!(s.segments.contains(&Segment::Second));
        s.validate(12).unwrap();
        assert!(encode_texts("a", "b", 1.0, &v, 2).is_err());
        let s = encode_texts("a b", "c", 1.0, &v, 3).unwrap();
        assert_eq!(s.ids.len(), 3);
    }

    #[test]
    fn generated_pairs_encode_validly() {
        let ont = Ontology::seed();
        let cohort = generate_cohort(
            &CohortConfig {
                n_patients: 60,
                ..Default::default()
            },
            &ont,
        )
        .unwrap();
        let recs: Vec<PairRecord> = cohort
            .iter()
            .flat_map(|t| sample_pairs(t, &PairConfig::default(), &ont).unwrap())
            .map(|p| PairRecord::from_pair(&p, &ont).unwrap())
            .collect();
        let v = Vocab::build(&recs);
        for max_len in [3, 8, 32, 256] {
            for r in &recs {
                encode_pair(r, &v, max_len)
                    .unwrap()
                    .validate(max_len)
                    .unwrap();
            }
        }
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(a in proptest::collection::vec(0usize..6, 0..12),
                                 b in proptest::collection::vec(0usize..6, 0..12)) {
            let words = ["w0", "w1", "w2", "w3", "w4", "w5"];
            let v = Vocab::from_tokens(words);
            let ta: Vec<String> = a.iter().map(|&i| words[i].to_string()).collect();
            let tb: Vec<String> = b.iter().map(|&i| words[i].to_string()).collect();
            let s = encode_texts(&ta.join(" "), &tb.join(" "), 1.0, &v, 64).unwrap();
            prop_assert_eq!(decode(&s, &v), (ta, tb));
        }
    }
}
