//! The `tep` command line: one binary, one config file, one manifest per
//! output directory.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cohort::{check_corpus_ids, generate_cohort, read_corpus, write_corpus};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, run_ablation, AblationFactor, AblationSpec};
use crate::model::Checkpoint;
use crate::objective::{gradcheck, GradcheckConfig, Trainer};
use crate::ontology::Ontology;
use crate::supervision::{build_dataset, read_pairs, write_dataset, Split};
use crate::textizer::Vocab;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const OUT_ROOT_ENV: &str = "TEP_OUT_ROOT";

#[derive(Debug, Parser)]
#[command(
    name = "tep",
    version,
    about = "Temporal entailment pretraining on synthetic clinical timelines"
)]
pub struct Cli {
    /// Pipeline config (TOML with [cohort] [pairs] [split] [model] [objective] [eval]).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; defaults to `$TEP_OUT_ROOT/<command>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Ontology file; defaults to the bundled seed ontology.
    #[arg(long, global = true)]
    pub ontology: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ontology utilities.
    #[command(subcommand)]
    Ontology(OntologyCmd),
    /// Synthetic cohort generation.
    #[command(subcommand)]
    Cohort(CohortCmd),
    /// Weakly labeled pair datasets.
    #[command(subcommand)]
    Pairs(PairsCmd),
    /// Train an encoder on a pair dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a pair split.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Train and compare ablation variants.
    Ablate(AblateArgs),
    /// Re-hash the outputs listed in a manifest.
    Verify {
        /// Output directory holding manifest.json.
        dir: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum OntologyCmd {
    /// Parse and validate an ontology file.
    Validate {
        /// Ontology file; defaults to the bundled seed ontology.
        path: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum CohortCmd {
    /// Generate a corpus (corpus.jsonl).
    Gen,
}

#[derive(Debug, Subcommand)]
pub enum PairsCmd {
    /// Label, sample and split pairs from a corpus.
    Build {
        #[arg(long)]
        corpus: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with train.jsonl and valid.jsonl.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Vocabulary file; defaults to vocab.txt next to the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Directory with the pair splits.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Perturb one analytic gradient entry (self-test of the checker).
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// rope, contradictions or density.
    #[arg(long)]
    pub factor: String,
    /// Pairs-per-patient levels for the density factor.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub densities: Vec<usize>,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split '{other}'")),
    }
}

/// Provenance record written into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Value,
    pub master_seed: u64,
    /// Input file name -> sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the directory) -> sha256.
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub stats: Value,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))
    }

    /// Re-hashes every listed output; errors on the first mismatch.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (name, want) in &self.outputs {
            let got = sha256_file(&dir.join(name))?;
            if &got != want {
                return Err(Error::Validation(format!("digest mismatch for {name}")));
            }
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

struct Ctx {
    quiet: bool,
    config: PipelineConfig,
    ontology: Ontology,
    ontology_path: Option<PathBuf>,
    out: PathBuf,
    started: u64,
    inputs: BTreeMap<String, String>,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn input(&mut self, label: &str, path: &Path) -> Result<()> {
        self.inputs.insert(label.to_string(), sha256_file(path)?);
        Ok(())
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(&self.out)
    }

    fn write(&self, name: &str, body: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out_dir()?.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn finish(&self, command: &str, outputs: &[&str], stats: Value) -> Result<RunManifest> {
        let dir = self.out_dir()?;
        let mut digests = BTreeMap::new();
        for name in outputs {
            digests.insert(name.to_string(), sha256_file(&dir.join(name))?);
        }
        let manifest = RunManifest {
            tool: "tep".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: serde_json::to_value(&self.config)
                .map_err(|e| Error::Validation(e.to_string()))?,
            master_seed: self.config.master_seed(),
            inputs: self.inputs.clone(),
            outputs: digests,
            started_unix: self.started,
            finished_unix: unix_now(),
            stats,
        };
        let body = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Validation(e.to_string()))?;
        self.write(MANIFEST_FILE, body)?;
        self.say(format!("wrote {}", dir.display()));
        Ok(manifest)
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ontology(_) => "ontology-validate",
        Command::Cohort(_) => "cohort-gen",
        Command::Pairs(_) => "pairs-build",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Gradcheck(_) => "gradcheck",
        Command::Ablate(_) => "ablate",
        Command::Verify { .. } => "verify",
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                print!("{e}");
                return Ok(());
            }
            _ => return Err(Error::Config(e.to_string().trim_end().to_string())),
        },
    };
    execute(cli)
}

pub fn execute(cli: Cli) -> Result<()> {
    let name = command_name(&cli.command);
    let config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    }
    .with_seed(cli.seed);
    let ontology = match (&cli.command, &cli.ontology) {
        (Command::Ontology(OntologyCmd::Validate { path: Some(p) }), _) | (_, Some(p)) => {
            Ontology::load(p)?
        }
        _ => Ontology::seed(),
    };
    let out = cli.out.clone().unwrap_or_else(|| {
        std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("tep-out"))
            .join(name)
    });
    let mut ctx = Ctx {
        quiet: cli.quiet,
        config,
        ontology,
        ontology_path: cli.ontology.clone(),
        out,
        started: unix_now(),
        inputs: BTreeMap::new(),
    };
    if let Some(p) = &cli.config {
        ctx.input("config", p)?;
    }
    if let Some(p) = ctx.ontology_path.clone() {
        ctx.input("ontology", &p)?;
    }

    match cli.command {
        Command::Ontology(OntologyCmd::Validate { path }) => {
            let o = &ctx.ontology;
            let src = path
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "bundled seed ontology".into());
            ctx.say(format!(
                "{src}: ok (version {}, {} systems, {} conditions, {} stages, {} labs)",
                o.version,
                o.organ_systems.len(),
                o.conditions.len(),
                o.stages.len(),
                o.labs.len()
            ));
            Ok(())
        }
        Command::Cohort(CohortCmd::Gen) => cohort_gen(&mut ctx),
        Command::Pairs(PairsCmd::Build { corpus }) => pairs_build(&mut ctx, &corpus),
        Command::Train(a) => train(&mut ctx, &a),
        Command::Eval(a) => eval(&mut ctx, &a),
        Command::Gradcheck(a) => run_gradcheck(&mut ctx, &a),
        Command::Ablate(a) => ablate(&mut ctx, &a),
        Command::Verify { dir } => {
            let m = RunManifest::load(&dir)?;
            m.verify(&dir)?;
            ctx.say(format!(
                "{}: {} outputs verified",
                dir.display(),
                m.outputs.len()
            ));
            Ok(())
        }
    }
}

fn cohort_gen(ctx: &mut Ctx) -> Result<()> {
    ctx.config.cohort.validate(&ctx.ontology)?;
    let corpus = generate_cohort(&ctx.config.cohort, &ctx.ontology)?;
    let path = ctx.out_dir()?.join("corpus.jsonl");
    write_corpus(&corpus, &path)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for tl in &corpus {
        if let Some(a) = tl.archetype {
            *counts.entry(format!("{a:?}").to_lowercase()).or_default() += 1;
        }
    }
    let events: usize = corpus.iter().map(|t| t.events.len()).sum();
    ctx.say(format!(
        "generated {} patients, {events} events",
        corpus.len()
    ));
    ctx.finish(
        "cohort gen",
        &["corpus.jsonl"],
        json!({ "patients": corpus.len(), "events": events, "archetypes": counts }),
    )?;
    Ok(())
}

fn pairs_build(ctx: &mut Ctx, corpus_path: &Path) -> Result<()> {
    ctx.config.pairs.validate()?;
    ctx.config.split.validate()?;
    ctx.input("corpus", corpus_path)?;
    let corpus = read_corpus(corpus_path)?;
    check_corpus_ids(&corpus, &ctx.ontology)?;
    let ds = build_dataset(&corpus, &ctx.config.pairs, &ctx.ontology, &ctx.config.split)?;
    if ds.summary.class_histogram.iter().sum::<usize>() == 0 {
        eprintln!("warning: no window pair satisfies the gap bounds; all splits are empty");
    }
    write_dataset(&ds, &ctx.ontology, ctx.out_dir()?)?;
    let summary =
        serde_json::to_value(&ds.summary).map_err(|e| Error::Validation(e.to_string()))?;
    ctx.write(
        "dataset.json",
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Validation(e.to_string()))?,
    )?;
    ctx.say(format!(
        "pairs: train {} valid {} test {}; classes {:?}",
        ds.train.len(),
        ds.valid.len(),
        ds.test.len(),
        ds.summary.class_histogram
    ));
    let mut outputs: Vec<&str> = Split::ALL.iter().map(|s| s.file_name()).collect();
    outputs.push("dataset.json");
    ctx.finish("pairs build", &outputs, summary)?;
    Ok(())
}

fn read_split(
    ctx: &mut Ctx,
    dir: &Path,
    split: Split,
) -> Result<Vec<crate::supervision::PairRecord>> {
    let path = dir.join(split.file_name());
    if !path.exists() {
        return Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "split file missing"),
        ));
    }
    ctx.input(split.file_name(), &path)?;
    read_pairs(&path)
}

fn train(ctx: &mut Ctx, a: &TrainArgs) -> Result<()> {
    let train = read_split(ctx, &a.pairs, Split::Train)?;
    let valid = read_split(ctx, &a.pairs, Split::Valid)?;
    let seed = ctx.config.master_seed();
    let objective = ctx.config.objective.clone();
    let (mut trainer, vocab) = match &a.resume {
        Some(ck) => {
            ctx.input("resume", ck)?;
            let checkpoint = Checkpoint::load(ck)?;
            let vocab_path = ck.with_file_name("vocab.txt");
            let vocab = Vocab::load(&vocab_path)?;
            ctx.input("resume-vocab", &vocab_path)?;
            (
                Trainer::resume(checkpoint, objective, seed, &train, &vocab)?,
                vocab,
            )
        }
        None => {
            let vocab = Vocab::build(&train);
            (
                Trainer::new(ctx.config.model.clone(), objective, seed, &train, &vocab)?,
                vocab,
            )
        }
    };
    ctx.config.model = trainer.model.clone();
    let dir = ctx.out_dir()?.to_path_buf();
    vocab.save(dir.join("vocab.txt"))?;

    let log_path = dir.join("train_log.jsonl");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(a.resume.is_some())
        .truncate(a.resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let every = ctx.config.objective.checkpoint_every;
    let quiet = ctx.quiet;
    let mut periodic = Vec::new();
    let start_step = trainer.step();
    let mut last = None;
    trainer.run(|rec, t| {
        let line = serde_json::to_string(rec).map_err(|e| Error::Validation(e.to_string()))?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        if every > 0 && rec.step % every == 0 && !t.is_done() {
            let name = format!("ckpt-step{}.bin", rec.step);
            t.checkpoint().save(dir.join(&name))?;
            periodic.push(name);
        }
        if !quiet && (rec.step % 100 == 0 || t.is_done()) {
            eprintln!(
                "step {:>6} lr {:.2e} loss {:.4} (tep {:.4}, order {:.4})",
                rec.step, rec.lr, rec.loss, rec.tep_loss, rec.order_loss
            );
        }
        last = Some(rec.clone());
        Ok(())
    })?;
    drop(log);
    trainer.checkpoint().save(dir.join("checkpoint.bin"))?;

    let mut stats =
        json!({ "start_step": start_step, "steps": trainer.step(), "train_pairs": train.len() });
    if let Some(r) = &last {
        stats["final_loss"] = json!(r.loss);
    }
    let mut outputs: Vec<String> = vec![
        "checkpoint.bin".into(),
        "vocab.txt".into(),
        "train_log.jsonl".into(),
    ];
    if !valid.is_empty() {
        let report = evaluate(
            &trainer.params,
            &trainer.model,
            &valid,
            &vocab,
            &ctx.config.eval,
        )?;
        report.write(&dir, "valid_eval")?;
        ctx.say(format!("validation accuracy {:.4}", report.accuracy()));
        stats["valid_accuracy"] = json!(report.accuracy());
        outputs.extend(["valid_eval.json".into(), "valid_eval.csv".into()]);
    }
    outputs.extend(periodic);
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    ctx.finish("train", &refs, stats)?;
    Ok(())
}

fn eval(ctx: &mut Ctx, a: &EvalArgs) -> Result<()> {
    ctx.input("checkpoint", &a.checkpoint)?;
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let vocab_path = a
        .vocab
        .clone()
        .unwrap_or_else(|| a.checkpoint.with_file_name("vocab.txt"));
    ctx.input("vocab", &vocab_path)?;
    let vocab = Vocab::load(&vocab_path)?;
    if vocab.size() != checkpoint.config.vocab_size {
        return Err(Error::Validation(format!(
            "vocabulary has {} entries but the checkpoint expects {}",
            vocab.size(),
            checkpoint.config.vocab_size
        )));
    }
    let records = read_split(ctx, &a.pairs, a.split)?;
    ctx.config.model = checkpoint.config.clone();
    let report = evaluate(
        &checkpoint.params,
        &checkpoint.config,
        &records,
        &vocab,
        &ctx.config.eval,
    )?;
    report.write(ctx.out_dir()?, "eval")?;
    ctx.say(format!(
        "{:?}: n {} accuracy {:.4} macro-F1 {:.4} MCC {:.4} ECE {:.4}",
        a.split,
        report.classification.n,
        report.accuracy(),
        report.classification.macro_f1,
        report.classification.mcc,
        report.ece
    ));
    ctx.finish(
        "eval",
        &["eval.json", "eval.csv"],
        json!({ "split": format!("{:?}", a.split).to_lowercase(), "checkpoint_step": checkpoint.step, "accuracy": report.accuracy() }),
    )?;
    Ok(())
}

fn run_gradcheck(ctx: &mut Ctx, a: &GradcheckArgs) -> Result<()> {
    let mut cfg = GradcheckConfig {
        corrupt_gradient: a.corrupt_gradient,
        ..Default::default()
    };
    if let Some(s) = ctx.config.seed {
        cfg.seed = s;
    }
    let report = gradcheck(&cfg)?;
    let body =
        serde_json::to_string_pretty(&report).map_err(|e| Error::Validation(e.to_string()))?;
    ctx.write("gradcheck.json", body)?;
    for t in &report.tensors {
        ctx.say(format!(
            "{:<24} n={:<6} max rel {:.3e}",
            t.name, t.scalars, t.max_rel_error
        ));
    }
    let verdict = if report.passed { "PASS" } else { "FAIL" };
    ctx.say(format!(
        "{verdict}: max relative error {:.3e} (tolerance {:.0e})",
        report.max_rel_error, report.tolerance
    ));
    ctx.finish(
        "gradcheck",
        &["gradcheck.json"],
        json!({ "passed": report.passed, "max_rel_error": report.max_rel_error }),
    )?;
    if report.passed {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check failed: max relative error {:.3e} >= {:.0e}",
            report.max_rel_error, report.tolerance
        )))
    }
}

fn ablate(ctx: &mut Ctx, a: &AblateArgs) -> Result<()> {
    let factor: AblationFactor = a.factor.parse()?;
    let spec = AblationSpec {
        factor,
        densities: a.densities.clone(),
    };
    let report = run_ablation(&spec, &ctx.config, &ctx.ontology)?;
    ctx.write("ablation.json", report.to_json()?)?;
    ctx.write("ablation.csv", report.delta_csv()?)?;
    for v in &report.variants {
        ctx.say(format!(
            "{:<28} accuracy {:.4}",
            v.name,
            v.report.accuracy()
        ));
    }
    ctx.finish(
        "ablate",
        &["ablation.json", "ablation.csv"],
        json!({ "factor": spec.factor, "densities": spec.densities, "variants": report.variants.len() }),
    )?;
    Ok(())
}
