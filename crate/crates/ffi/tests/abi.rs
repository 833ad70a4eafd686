use std::ffi::{CStr, CString};
use std::ptr;

use tep_core::cohort::generate_cohort;
use tep_core::config::PipelineConfig;
use tep_core::model::ModelConfig;
use tep_core::objective::{ObjectiveConfig, Trainer};
use tep_core::ontology::Ontology;
use tep_core::supervision::{build_dataset, PairRecord};
use tep_core::textizer::Vocab;
use tep_ffi::*;

fn last_error() -> String {
    let p = tep_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tiny_model(dir: &std::path::Path) -> (CString, CString, PairRecord) {
    let ont = Ontology::seed();
    let mut c = PipelineConfig::default();
    c.cohort.n_patients = 30;
    let corpus = generate_cohort(&c.cohort, &ont).unwrap();
    let ds = build_dataset(&corpus, &c.pairs, &ont, &c.split).unwrap();
    let train: Vec<PairRecord> = ds
        .train
        .iter()
        .map(|p| PairRecord::from_pair(p, &ont).unwrap())
        .collect();
    let vocab = Vocab::build(&train);
    let model = ModelConfig {
        hidden: 8,
        heads: 2,
        ffn: 8,
        layers: 1,
        ..Default::default()
    };
    let objective = ObjectiveConfig {
        total_steps: 2,
        warmup_steps: 1,
        batch_size: 4,
        ..Default::default()
    };
    let mut t = Trainer::new(model, objective, 3, &train, &vocab).unwrap();
    t.run(|_, _| Ok(())).unwrap();
    let ck = dir.join("checkpoint.bin");
    let vp = dir.join("vocab.txt");
    t.checkpoint().save(&ck).unwrap();
    vocab.save(&vp).unwrap();
    (
        CString::new(ck.to_str().unwrap()).unwrap(),
        CString::new(vp.to_str().unwrap()).unwrap(),
        train[0].clone(),
    )
}

#[test]
fn model_round_trip_through_the_c_abi() {
    let dir = tempfile::tempdir().unwrap();
    let (ck, vp, rec) = tiny_model(dir.path());
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(
            tep_model_load(ck.as_ptr(), vp.as_ptr(), &mut model),
            TepStatus::Ok
        );
        assert!(!model.is_null());
        let mut n = 0usize;
        assert_eq!(tep_model_vocab_size(model, &mut n), TepStatus::Ok);
        assert!(n > 4);
        let a = CString::new(rec.earlier.text.clone()).unwrap();
        let b = CString::new(rec.later.text.clone()).unwrap();
        let mut probs = [0f32; 3];
        assert_eq!(
            tep_model_classify(
                model,
                a.as_ptr(),
                b.as_ptr(),
                rec.gap_days,
                probs.as_mut_ptr()
            ),
            TepStatus::Ok
        );
        assert!((probs.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        assert!(probs.iter().all(|p| *p > 0.0));

        assert_eq!(
            tep_model_classify(model, a.as_ptr(), b.as_ptr(), -1.0, probs.as_mut_ptr()),
            TepStatus::Validation
        );
        assert!(last_error().contains("gap_days"));
        assert_eq!(
            tep_model_classify(model, ptr::null(), b.as_ptr(), 1.0, probs.as_mut_ptr()),
            TepStatus::NullPointer
        );
        assert_eq!(
            tep_model_classify(model, a.as_ptr(), b.as_ptr(), 1.0, ptr::null_mut()),
            TepStatus::NullPointer
        );
        tep_model_free(model);
    }
}

#[test]
fn load_failures_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("nope.bin").to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(
            tep_model_load(missing.as_ptr(), missing.as_ptr(), &mut model),
            TepStatus::Io
        );
        assert!(model.is_null());
        assert!(last_error().contains("nope.bin"));

        let garbage = dir.path().join("bad.bin");
        std::fs::write(&garbage, b"not a checkpoint").unwrap();
        let g = CString::new(garbage.to_str().unwrap()).unwrap();
        assert_eq!(
            tep_model_load(g.as_ptr(), g.as_ptr(), &mut model),
            TepStatus::Validation
        );

        let (ck, _, _) = tiny_model(dir.path());
        let short_vocab = dir.path().join("short.txt");
        std::fs::write(&short_vocab, "only\n").unwrap();
        let sv = CString::new(short_vocab.to_str().unwrap()).unwrap();
        assert_eq!(
            tep_model_load(ck.as_ptr(), sv.as_ptr(), &mut model),
            TepStatus::Validation
        );
        assert_eq!(
            tep_model_load(ptr::null(), sv.as_ptr(), &mut model),
            TepStatus::NullPointer
        );
        let bad_utf8 = [0xffu8, 0];
        assert_eq!(
            tep_model_load(bad_utf8.as_ptr().cast(), sv.as_ptr(), &mut model),
            TepStatus::InvalidUtf8
        );
        tep_model_free(ptr::null_mut());
    }
}

#[test]
fn ontology_handles() {
    let mut ont = ptr::null_mut();
    unsafe {
        assert_eq!(tep_ontology_seed(&mut ont), TepStatus::Ok);
        assert!(tep_last_error_message().is_null());
        let mut n = 0usize;
        assert_eq!(tep_ontology_condition_count(ont, &mut n), TepStatus::Ok);
        assert_eq!(n, Ontology::seed().conditions.len());
        tep_ontology_free(ont);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.toml");
        std::fs::write(&p, Ontology::seed_source()).unwrap();
        let c = CString::new(p.to_str().unwrap()).unwrap();
        let mut loaded = ptr::null_mut();
        assert_eq!(tep_ontology_load(c.as_ptr(), &mut loaded), TepStatus::Ok);
        tep_ontology_free(loaded);

        std::fs::write(&p, "this is = = not toml").unwrap();
        assert_eq!(tep_ontology_load(c.as_ptr(), &mut loaded), TepStatus::Parse);
        assert_eq!(
            tep_ontology_condition_count(ptr::null(), &mut n),
            TepStatus::NullPointer
        );
        assert_eq!(tep_ontology_seed(ptr::null_mut()), TepStatus::NullPointer);
    }
    let v = unsafe { CStr::from_ptr(tep_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/tep.h")).unwrap();
    for sym in [
        "tep_last_error_message",
        "tep_version",
        "tep_ontology_seed",
        "tep_ontology_load",
        "tep_ontology_condition_count",
        "tep_ontology_free",
        "tep_model_load",
        "tep_model_vocab_size",
        "tep_model_classify",
        "tep_model_free",
        "TEP_STATUS_PANIC = 8",
        "typedef struct TepModel TepModel",
    ] {
        assert!(header.contains(sym), "{sym} missing from tep.h");
    }
}
