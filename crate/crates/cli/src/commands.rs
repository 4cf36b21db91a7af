//! Command implementations.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};

use autotag::baselines::{train_classifier, Bm25Index, ClassifierConfig};
use autotag::biencoder::{
    pretrain_qa, train, BiEncoder, TrainConfig, TrainingMeta, DEFAULT_PRETRAIN_EPOCHS,
    DEFAULT_SCORE_SCALE, DEFAULT_WIDTH,
};
use autotag::corpus::{default_bucket_threshold, Corpus, Split, TAGS_FILE};
use autotag::encoder::{grad_check, EncoderDims, EncoderParams, Pooling};
use autotag::index::{build_index, DenseRanker, TagIndex};
use autotag::metrics::{evaluate, sweep_csv, MetricReport, Ranker};
use autotag::synth::{generate, generate_qa_proxy, SynthConfig, TRUTH_FILE};
use autotag::textproc::Vocabulary;

use crate::manifest::RunManifest;
use crate::settings::{List, Settings, Switch};
use crate::{Cli, Command, ModelArgs};

pub const VOCAB_FILE: &str = "vocab.jsonl";
pub const MODEL_FILE: &str = "model.ckpt";
pub const PRETRAINED_FILE: &str = "pretrained.ckpt";
pub const INDEX_FILE: &str = "index.bin";
pub const LOSS_FILE: &str = "loss.csv";
pub const CLASSIFIER_FILE: &str = "classifier.ckpt";
pub const SWEEP_FILE: &str = "sweep.csv";

pub const STAGE_TRAIN: &str = "train";
pub const STAGE_TRAIN_SINGLE: &str = "train_single_label";
pub const STAGE_PRETRAIN: &str = "pretrain_qa";

pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

macro_rules! named_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name { $($variant),+ }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown value {other:?}, expected one of: {}",
                        [$($text),+].join(", ")
                    )),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }
    };
}

named_enum!(SynthKind { Tagging => "tagging", Qa => "qa" });
named_enum!(Protocol {
    Standard => "standard",
    SingleToMulti => "single-to-multi",
    Buckets => "buckets",
});
named_enum!(Baseline { Bm25 => "bm25", Classifier => "classifier" });

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let started = Instant::now();
    let mut settings = Settings::load(cli.global.config.as_deref())?;
    let seed = settings.get("seed", cli.global.seed, 7u64)?;
    let out = cli.global.out.clone();
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let (name, result) = match &cli.command {
        Command::Synth(a) => ("synth", synth(a, &mut settings, seed, out.as_deref())),
        Command::Pretrain(a) => ("pretrain", pretrain(a, &mut settings, seed, out.as_deref())),
        Command::Train(a) => ("train", train_cmd(a, &mut settings, seed, out.as_deref())),
        Command::Eval(a) => ("eval", eval(a, &mut settings, seed, out.as_deref())),
        Command::Retrieve(a) => ("retrieve", retrieve(a, &mut settings, seed)),
        Command::Gradcheck(a) => ("gradcheck", gradcheck(a, &mut settings, seed)),
        Command::Report(a) => ("report", report(a, out.as_deref())),
    };
    let mut outcome = result?;
    if let Some(dir) = &out {
        outcome.manifest.command = name.to_string();
        outcome.manifest.seed = seed;
        outcome.manifest.config = settings.echo().clone();
        if cli.global.timing {
            outcome.manifest.wall_clock_ms = Some(started.elapsed().as_millis() as u64);
        }
        outcome.manifest.save(dir)?;
    }
    Ok(outcome.code)
}

struct Outcome {
    manifest: RunManifest,
    code: ExitCode,
}

impl Outcome {
    fn ok(manifest: RunManifest) -> Self {
        Outcome {
            manifest,
            code: ExitCode::SUCCESS,
        }
    }
}

fn require_out(out: Option<&Path>) -> Result<&Path> {
    out.context("--out is required")
}

fn synth(a: &crate::SynthArgs, s: &mut Settings, seed: u64, out: Option<&Path>) -> Result<Outcome> {
    let out = require_out(out)?;
    let d = SynthConfig::default();
    let config = SynthConfig {
        n_tags: s.get("tags", a.tags, d.n_tags)?,
        n_contexts: s.get("contexts", a.contexts, d.n_contexts)?,
        vocab_size: s.get("vocab", a.vocab, d.vocab_size)?,
        mean_labels_per_context: s.get("labels", a.labels, d.mean_labels_per_context)?,
        zipf_exponent: s.get("zipf", a.zipf, d.zipf_exponent)?,
        tokens_per_context: s.get("tokens", a.tokens, d.tokens_per_context)?,
        noise_rate: s.get("noise", a.noise, d.noise_rate)?,
        name_salience: s.get("name_salience", a.name_salience, d.name_salience)?,
        zero_shot_tags: s.get("zero_tags", a.zero_tags, d.zero_shot_tags)?,
        seed,
    };
    let kind = s.get("kind", a.kind, SynthKind::Tagging)?;
    let generated = match kind {
        SynthKind::Tagging => generate(&config)?,
        SynthKind::Qa => generate_qa_proxy(&config)?,
    };
    generated.write(out)?;
    let mut manifest = RunManifest::new("synth", seed);
    let mut names = vec![TAGS_FILE.to_string(), TRUTH_FILE.to_string()];
    names.extend(Split::ALL.iter().map(|s| s.file_name()));
    for name in names {
        let path = out.join(&name);
        if path.exists() {
            manifest.output(&name, &std::fs::read(&path)?);
        }
    }
    let c = &generated.corpus;
    println!(
        "wrote {} tags, {} train / {} validation / {} test examples to {}",
        c.tags().len(),
        c.split(Split::Train).len(),
        c.split(Split::Validation).len(),
        c.split(Split::Test).len(),
        out.display()
    );
    Ok(Outcome::ok(manifest))
}

struct ModelSettings {
    width: usize,
    pooling: Pooling,
    score_scale: f64,
    min_freq: usize,
    config: TrainConfig,
}

fn model_settings(
    a: &ModelArgs,
    s: &mut Settings,
    seed: u64,
    epochs: usize,
) -> Result<ModelSettings> {
    let d = TrainConfig::default();
    Ok(ModelSettings {
        width: s.get("width", a.width, DEFAULT_WIDTH)?,
        pooling: s.get("pooling", a.pooling, Pooling::Mean)?,
        score_scale: s.get("score_scale", a.score_scale, DEFAULT_SCORE_SCALE)?,
        min_freq: s.get("min_freq", a.min_freq, 1usize)?,
        config: TrainConfig {
            epochs: s.get("epochs", a.epochs, epochs)?,
            learning_rate: s.get("lr", a.lr, d.learning_rate)?,
            batch_contexts: s.get("batch", a.batch, d.batch_contexts)?,
            seed,
            ..d
        },
    })
}

fn fresh_model(vocab: Vocabulary, m: &ModelSettings, seed: u64) -> Result<BiEncoder> {
    Ok(BiEncoder::new(Arc::new(vocab), m.width, seed)?
        .with_pooling(m.pooling)
        .with_score_scale(m.score_scale)?)
}

fn load_corpus(dir: &Path, manifest: &mut RunManifest) -> Result<Corpus> {
    manifest.input(dir)?;
    Corpus::load_dir(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

fn print_losses(trace: &[f64]) {
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        println!(
            "epoch 1 loss {first:.6}, epoch {} loss {last:.6}",
            trace.len()
        );
    }
}

fn pretrain(
    a: &crate::PretrainArgs,
    s: &mut Settings,
    seed: u64,
    out: Option<&Path>,
) -> Result<Outcome> {
    let out = require_out(out)?;
    let mut manifest = RunManifest::new("pretrain", seed);
    let qa = load_corpus(&a.qa, &mut manifest)?;
    let m = model_settings(&a.model, s, seed, DEFAULT_PRETRAIN_EPOCHS)?;
    let vocab = match &a.data {
        Some(dir) => {
            let data = load_corpus(dir, &mut manifest)?;
            Vocabulary::build_from(&[&qa, &data], m.min_freq)?
        }
        None => Vocabulary::build(&qa, m.min_freq)?,
    };
    let model = fresh_model(vocab, &m, seed)?;
    let outcome = pretrain_qa(model, &qa, &m.config)?;
    print_losses(&outcome.loss_trace);
    manifest.write(out, VOCAB_FILE, &outcome.model.vocab.to_jsonl_bytes())?;
    let bytes = outcome.model.save(
        out.join(PRETRAINED_FILE),
        VOCAB_FILE,
        &outcome.meta(STAGE_PRETRAIN, &m.config),
    )?;
    manifest.output(PRETRAINED_FILE, &bytes);
    manifest.write(out, LOSS_FILE, outcome.loss_csv().as_bytes())?;
    Ok(Outcome::ok(manifest))
}

fn train_cmd(
    a: &crate::TrainArgs,
    s: &mut Settings,
    seed: u64,
    out: Option<&Path>,
) -> Result<Outcome> {
    let out = require_out(out)?;
    let mut manifest = RunManifest::new("train", seed);
    let mut corpus = load_corpus(&a.data, &mut manifest)?;
    let single = s.get("single_label", a.single_label, Switch(false))?.0;
    if single {
        corpus = corpus.to_single_label(seed);
    }
    let d = TrainConfig::default();
    let m = model_settings(&a.model, s, seed, d.epochs)?;
    let config = TrainConfig {
        ceaa: s.get("ceaa", a.ceaa, Switch(d.ceaa))?.0,
        ceaa_negatives: s.get("negatives", a.negatives, d.ceaa_negatives)?,
        ceaa_full_matrix: s
            .get("full_matrix", a.full_matrix, Switch(d.ceaa_full_matrix))?
            .0,
        ..m.config.clone()
    };
    let init: Option<PathBuf> = s
        .get_opt("init", a.init.as_ref().map(|p| p.display().to_string()))?
        .map(PathBuf::from);
    let model = match &init {
        Some(path) => {
            manifest.input(path)?;
            let (model, meta) = BiEncoder::load(path)
                .with_context(|| format!("loading initial checkpoint {}", path.display()))?;
            info!("initialised from {} ({} stage)", path.display(), meta.stage);
            model
        }
        None => fresh_model(Vocabulary::build(&corpus, m.min_freq)?, &m, seed)?,
    };
    let outcome = train(model, &corpus, &config)?;
    print_losses(&outcome.loss_trace);
    let stage = if single {
        STAGE_TRAIN_SINGLE
    } else {
        STAGE_TRAIN
    };
    manifest.write(out, VOCAB_FILE, &outcome.model.vocab.to_jsonl_bytes())?;
    let ckpt = outcome.model.save(
        out.join(MODEL_FILE),
        VOCAB_FILE,
        &outcome.meta(stage, &config),
    )?;
    manifest.output(MODEL_FILE, &ckpt);
    manifest.write(out, LOSS_FILE, outcome.loss_csv().as_bytes())?;
    let index = build_index(&outcome.model, corpus.tags(), autotag::content_hash(&ckpt))?;
    manifest.write(out, INDEX_FILE, &index.to_bytes())?;
    println!("indexed {} tags", index.len());
    Ok(Outcome::ok(manifest))
}

/// Loads a checkpoint and its index, refusing an index built from another
/// checkpoint.
fn load_model_and_index(
    model_path: &Path,
    index_path: Option<&Path>,
    manifest: &mut RunManifest,
) -> Result<(BiEncoder, TrainingMeta, TagIndex)> {
    let ckpt =
        std::fs::read(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    manifest.input(model_path)?;
    let (model, meta) = BiEncoder::load(model_path)
        .with_context(|| format!("loading checkpoint {}", model_path.display()))?;
    let index_path = index_path.map(Path::to_path_buf).unwrap_or_else(|| {
        model_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(INDEX_FILE)
    });
    manifest.input(&index_path)?;
    let index = TagIndex::load(&index_path)
        .with_context(|| format!("loading index {}", index_path.display()))?;
    index
        .check_fresh(&autotag::content_hash(&ckpt))
        .with_context(|| format!("index {} is stale", index_path.display()))?;
    Ok((model, meta, index))
}

fn eval(a: &crate::EvalArgs, s: &mut Settings, seed: u64, out: Option<&Path>) -> Result<Outcome> {
    let out = require_out(out)?;
    let mut manifest = RunManifest::new("eval", seed);
    let corpus = load_corpus(&a.data, &mut manifest)?;
    let (model, meta, index) = load_model_and_index(&a.model, a.index.as_deref(), &mut manifest)?;
    let ks = s.get("k", a.k.clone(), List(vec![1, 3, 5]))?.0;
    let protocol = s.get("protocol", a.protocol, Protocol::Standard)?;
    let baselines = s
        .get("baselines", a.baselines.clone(), List(vec![Baseline::Bm25]))?
        .0;
    let split = s.get("split", a.split, Split::Test)?;

    let train_side = match protocol {
        Protocol::SingleToMulti => {
            if meta.stage != STAGE_TRAIN_SINGLE {
                warn!(
                    "model stage is {:?}; the single-to-multi protocol expects a model trained with --single-label on",
                    meta.stage
                );
            }
            corpus.to_single_label(seed)
        }
        _ => corpus.clone(),
    };
    let buckets = match protocol {
        Protocol::Standard => None,
        _ => {
            let default = default_bucket_threshold(train_side.train().len());
            let threshold = s.get("bucket_threshold", a.bucket_threshold, default)?;
            Some(train_side.bucket_tags(threshold)?)
        }
    };
    let examples = corpus.split(split);
    if examples.is_empty() {
        bail!("split {split} of {} is empty", a.data.display());
    }

    let mut systems: Vec<(String, Box<dyn Ranker + '_>)> = vec![(
        "dense".to_string(),
        Box::new(DenseRanker {
            model: &model,
            index: &index,
        }),
    )];
    for baseline in &baselines {
        match baseline {
            Baseline::Bm25 => {
                systems.push(("bm25".into(), Box::new(Bm25Index::build(corpus.tags())?)))
            }
            Baseline::Classifier => {
                let d = ClassifierConfig::default();
                let config = ClassifierConfig {
                    epochs: s.get("classifier_epochs", a.classifier_epochs, d.epochs)?,
                    learning_rate: s.get("classifier_lr", a.classifier_lr, d.learning_rate)?,
                    seed,
                    ..d
                };
                let dims = EncoderDims {
                    vocab_size: model.vocab.len(),
                    width: model.width(),
                };
                let encoder = EncoderParams::init(seed, dims)?.with_pooling(model.context.pooling);
                let (clf, _) = train_classifier(
                    encoder,
                    model.vocab.clone(),
                    model.pack,
                    &train_side,
                    &config,
                )?;
                manifest.write(out, VOCAB_FILE, &model.vocab.to_jsonl_bytes())?;
                let bytes = clf.save(out.join(CLASSIFIER_FILE), VOCAB_FILE, &config)?;
                manifest.output(CLASSIFIER_FILE, &bytes);
                systems.push(("classifier".into(), Box::new(clf)));
            }
        }
    }

    let mut reports = Vec::new();
    for (name, ranker) in &systems {
        let report = evaluate(
            ranker.as_ref(),
            name,
            split.name(),
            examples,
            &ks,
            buckets.as_ref(),
        )?;
        for w in &report.warnings {
            warn!("{name}: {w}");
        }
        manifest.write(
            out,
            &format!("report.{name}.json"),
            report.to_json().as_bytes(),
        )?;
        print_report(&report);
        reports.push(report);
    }
    manifest.write(out, SWEEP_FILE, sweep_csv(&reports).as_bytes())?;
    Ok(Outcome::ok(manifest))
}

fn print_report(r: &MetricReport) {
    let mut line = format!("{:<10} n={:<5}", r.system, r.n);
    for (name, values) in r.metrics.named() {
        for (k, v) in values {
            line.push_str(&format!(" {name}@{k}={v:.4}"));
        }
    }
    println!("{line}");
    if let Some(buckets) = &r.buckets {
        for (bucket, sub) in buckets {
            let ndcg: Vec<String> = sub
                .metrics
                .ndcg
                .iter()
                .map(|(k, v)| format!("ndcg@{k}={v:.4}"))
                .collect();
            println!("  {bucket:<9} n={:<5} {}", sub.n, ndcg.join(" "));
        }
    }
}

fn retrieve(a: &crate::RetrieveArgs, s: &mut Settings, seed: u64) -> Result<Outcome> {
    let mut manifest = RunManifest::new("retrieve", seed);
    let (model, _, index) = load_model_and_index(&a.model, a.index.as_deref(), &mut manifest)?;
    let texts: BTreeMap<String, String> = match &a.data {
        Some(dir) => load_corpus(dir, &mut manifest)?
            .tags()
            .iter()
            .map(|t| (t.id.clone(), t.text.clone()))
            .collect(),
        None => BTreeMap::new(),
    };
    let query = model.embed_context(&a.query)?;
    let threshold = s.get_opt("threshold", a.threshold)?;
    let hits: Vec<(String, f64)> = match threshold {
        Some(tau) => {
            let keep = index.retrieve_threshold(&query, tau)?;
            let mut all = index.retrieve_topk(&query, index.len())?.hits;
            all.retain(|(id, _)| keep.contains(id));
            all
        }
        None => {
            let k = s.get("k", a.k, 5usize)?;
            index.retrieve_topk(&query, k)?.hits
        }
    };
    for (id, score) in hits {
        let text = texts.get(&id).map(String::as_str).unwrap_or("-");
        println!("{id}\t{text}\t{:.6}", autotag::logistic(score));
    }
    Ok(Outcome::ok(manifest))
}

fn gradcheck(a: &crate::GradcheckArgs, s: &mut Settings, seed: u64) -> Result<Outcome> {
    let n = s.get("seeds", a.seeds, 10u64)?;
    let eps = s.get("eps", a.eps, 1e-5f64)?;
    let mut worst = 0.0f64;
    let mut coords = 0;
    for sd in seed..seed + n {
        let r = grad_check(sd, eps);
        println!(
            "seed {sd}: {} coordinates, max relative error {:.3e}",
            r.coordinates, r.max_rel_error
        );
        worst = worst.max(r.max_rel_error);
        coords += r.coordinates;
    }
    let pass = worst < GRADCHECK_TOLERANCE;
    println!(
        "max relative error {worst:.3e} over {coords} coordinates: {}",
        if pass { "PASS" } else { "FAIL" }
    );
    let manifest = RunManifest::new("gradcheck", seed);
    Ok(Outcome {
        manifest,
        code: if pass {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        },
    })
}

fn report(a: &crate::ReportArgs, out: Option<&Path>) -> Result<Outcome> {
    let out = require_out(out)?;
    let mut manifest = RunManifest::new("report", 0);
    let mut reports = Vec::new();
    for path in &a.reports {
        manifest.input(path)?;
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let r: MetricReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing report {}", path.display()))?;
        reports.push(r);
    }
    manifest.write(out, SWEEP_FILE, sweep_csv(&reports).as_bytes())?;
    println!(
        "merged {} reports into {}",
        reports.len(),
        out.join(SWEEP_FILE).display()
    );
    Ok(Outcome::ok(manifest))
}
