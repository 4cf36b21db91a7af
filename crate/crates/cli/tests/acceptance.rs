//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Failures are reported but only turn into a failing exit status with
//! `ACCEPTANCE_STRICT=1`. `ACCEPTANCE_ONLY=3,8` runs a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use autotag::baselines::{train_classifier, Bm25Index, ClassifierConfig};
use autotag::biencoder::{
    pretrain_qa, train, BiEncoder, TrainConfig, TrainingMeta, DEFAULT_PRETRAIN_EPOCHS,
    DEFAULT_WIDTH,
};
use autotag::corpus::{default_bucket_threshold, Corpus, Example, Split, TagLabel};
use autotag::encoder::{grad_check, Embedding, EncoderDims, EncoderParams};
use autotag::index::{build_index, DenseRanker, TagIndex};
use autotag::metrics::{
    evaluate, ndcg_at_k, r_precision_at_k, recall_at_k, EvalCase, MetricReport,
};
use autotag::synth::{generate, generate_qa_proxy, SynthConfig};
use autotag::textproc::Vocabulary;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PAIRED_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("gradient check", gradient_check),
        ("metric oracle", metric_oracle),
        ("retrieval oracle", retrieval_oracle),
        ("end-to-end synthetic", end_to_end),
        ("cross-encoded augmentation", ceaa_paired),
        ("question/passage transfer", transfer_paired),
        ("single-to-multi generalisation", single_to_multi),
        ("determinism", determinism),
        ("artifact round-trips", round_trips),
    ];
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let (mut run, mut failed) = (0, 0);
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        run += 1;
        let start = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {} {name}: {status} ({}; {:.1}s)",
            i + 1,
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {run} criteria pass", run - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut coords = usize::MAX;
    for seed in 0..10 {
        let r = grad_check(seed, 1e-5);
        worst = worst.max(r.max_rel_error);
        coords = coords.min(r.coordinates);
    }
    let elapsed = start.elapsed();
    verdict(
        worst < 1e-6 && coords >= 100 && elapsed < Duration::from_secs(30),
        format!("max rel error {worst:.2e} over 10 seeds x {coords} coordinates"),
    )
}

fn oracle_recall(gold: &BTreeSet<String>, ranked: &[String], k: usize) -> f64 {
    let top: BTreeSet<&String> = ranked.iter().take(k).collect();
    gold.iter().filter(|g| top.contains(g)).count() as f64 / gold.len() as f64
}

fn oracle_rp(gold: &BTreeSet<String>, ranked: &[String], k: usize) -> f64 {
    let top: BTreeSet<&String> = ranked.iter().take(k).collect();
    let hits = gold.iter().filter(|g| top.contains(g)).count() as f64;
    hits / (gold.len().min(k)) as f64
}

fn oracle_ndcg(gold: &BTreeSet<String>, ranked: &[String], k: usize) -> f64 {
    let rel: Vec<f64> = ranked
        .iter()
        .map(|t| if gold.contains(t) { 1.0 } else { 0.0 })
        .collect();
    let gain = |v: &[f64]| -> f64 {
        v.iter()
            .take(k)
            .enumerate()
            .map(|(i, r)| r * std::f64::consts::LN_2 / ((i + 2) as f64).ln())
            .sum()
    };
    let mut ideal = vec![1.0; gold.len()];
    ideal.resize(ideal.len().max(k), 0.0);
    gain(&rel) / gain(&ideal)
}

fn metric_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let universe: Vec<String> = (0..30).map(|i| format!("t{i:02}")).collect();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=8);
        let mut cases = Vec::new();
        let mut raw = Vec::new();
        for _ in 0..n {
            let mut pool = universe.clone();
            pool.shuffle(&mut rng);
            let gold: BTreeSet<String> = pool.iter().take(rng.gen_range(1..=6)).cloned().collect();
            pool.shuffle(&mut rng);
            let ranked: Vec<String> = pool.into_iter().take(rng.gen_range(1..=30)).collect();
            cases.push(EvalCase::new(gold.clone(), ranked.clone()).unwrap());
            raw.push((gold, ranked));
        }
        let k = rng.gen_range(1..=12);
        let mean = |f: fn(&BTreeSet<String>, &[String], usize) -> f64| {
            raw.iter().map(|(g, r)| f(g, r, k)).sum::<f64>() / n as f64
        };
        worst = worst
            .max((recall_at_k(&cases, k).unwrap() - mean(oracle_recall)).abs())
            .max((r_precision_at_k(&cases, k).unwrap() - mean(oracle_rp)).abs())
            .max((ndcg_at_k(&cases, k).unwrap() - mean(oracle_ndcg)).abs());
    }
    let mut single_exact = true;
    for rank in 1..=10 {
        let ranked: Vec<String> = universe.iter().take(10).cloned().collect();
        let gold = BTreeSet::from([ranked[rank - 1].clone()]);
        let case = EvalCase::new(gold, ranked).unwrap();
        let got = ndcg_at_k(&[case], 10).unwrap();
        single_exact &= got == 1.0 / ((1 + rank) as f64).log2();
    }
    let hand = {
        let ranked = vec!["a".to_string(), "b".to_string()];
        let case = EvalCase::new(BTreeSet::from(["b".to_string()]), ranked).unwrap();
        ndcg_at_k(&[case], 5).unwrap()
    };
    let hand_ok = hand == 1.0 / 3f64.log2() && (hand - 0.630_929_753_571_457_4).abs() < 1e-15;
    verdict(
        worst <= 1e-12 && single_exact && hand_ok,
        format!("max deviation {worst:.1e} on 1000 cases, single-gold exact {single_exact}, rank-2 value {hand:.16}"),
    )
}

fn retrieval_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut prefix_ok = true;
    let mut monotone_ok = true;
    let mut ties_seen = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..40);
        let width = rng.gen_range(1..6);
        // coarse values make tied scores common
        let matrix: Vec<f64> = (0..n * width)
            .map(|_| rng.gen_range(-2..=2) as f64 * 0.5)
            .collect();
        let mut ids: Vec<String> = (0..n).map(|i| format!("tag{i:03}")).collect();
        ids.shuffle(&mut rng);
        let index =
            TagIndex::from_parts(ids.clone(), width, matrix.clone(), 1.0, "x".into()).unwrap();
        let query = Embedding(
            (0..width)
                .map(|_| rng.gen_range(-2..=2) as f64 * 0.5)
                .collect(),
        );
        let mut full: Vec<(String, f64)> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let row = &matrix[i * width..(i + 1) * width];
                (
                    id.clone(),
                    row.iter().zip(&query.0).map(|(a, b)| a * b).sum(),
                )
            })
            .collect();
        full.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let distinct: BTreeSet<u64> = full.iter().map(|(_, s)| s.to_bits()).collect();
        if distinct.len() < n {
            ties_seen += 1;
        }
        let k = rng.gen_range(1..=n + 3);
        let got = index.retrieve_topk(&query, k).unwrap();
        let want: Vec<String> = full.iter().take(k).map(|(id, _)| id.clone()).collect();
        prefix_ok &= got.ids() == want;

        let mut taus: Vec<f64> = (0..4).map(|_| rng.gen_range(0.01..0.99)).collect();
        taus.sort_by(f64::total_cmp);
        let sets: Vec<BTreeSet<String>> = taus
            .iter()
            .map(|&t| index.retrieve_threshold(&query, t).unwrap())
            .collect();
        monotone_ok &= sets.windows(2).all(|w| w[1].is_subset(&w[0]));
    }
    verdict(
        prefix_ok && monotone_ok && ties_seen > 0,
        format!("1000 queries ({ties_seen} with tied scores), prefixes match {prefix_ok}, threshold monotone {monotone_ok}"),
    )
}

fn fresh(vocab: &Arc<Vocabulary>, seed: u64) -> BiEncoder {
    BiEncoder::new(vocab.clone(), DEFAULT_WIDTH, seed).unwrap()
}

fn dense_report(model: &BiEncoder, corpus: &Corpus, buckets_from: Option<&Corpus>) -> MetricReport {
    let index = build_index(model, corpus.tags(), "acceptance").unwrap();
    let buckets = buckets_from.map(|c| {
        c.bucket_tags(default_bucket_threshold(c.train().len()))
            .unwrap()
    });
    evaluate(
        &DenseRanker {
            model,
            index: &index,
        },
        "dense",
        "test",
        corpus.split(Split::Test),
        &[1, 5, 10],
        buckets.as_ref(),
    )
    .unwrap()
}

fn end_to_end() -> Verdict {
    let start = Instant::now();
    let synth = generate(&SynthConfig::default()).unwrap();
    let corpus = &synth.corpus;
    let vocab = Arc::new(Vocabulary::build(corpus, 1).unwrap());
    let config = TrainConfig::default();
    let out = train(fresh(&vocab, config.seed), corpus, &config).unwrap();
    let first = out.loss_trace[0];
    let last = *out.loss_trace.last().unwrap();
    let drop = (first - last) / first;
    let dense = dense_report(&out.model, corpus, None).metrics.recall[&5];
    let bm25 = Bm25Index::build(corpus.tags()).unwrap();
    let lexical = evaluate(&bm25, "bm25", "test", corpus.split(Split::Test), &[5], None)
        .unwrap()
        .metrics
        .recall[&5];
    let elapsed = start.elapsed();
    verdict(
        drop >= 0.5 && dense > lexical && elapsed < Duration::from_secs(180),
        format!(
            "loss {first:.4} -> {last:.4} ({:.0}% drop), test R@5 dense {dense:.4} vs bm25 {lexical:.4}",
            drop * 100.0
        ),
    )
}

/// Mean and standard error of paired differences.
fn paired(deltas: &[f64]) -> (f64, f64) {
    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn paired_verdict(label: &str, with: &[f64], without: &[f64]) -> Verdict {
    let deltas: Vec<f64> = with.iter().zip(without).map(|(a, b)| a - b).collect();
    let (mean, se) = paired(&deltas);
    let means = (
        with.iter().sum::<f64>() / with.len() as f64,
        without.iter().sum::<f64>() / without.len() as f64,
    );
    verdict(
        mean >= -se,
        format!(
            "{label} mean {:.4} with vs {:.4} without over {} paired seeds, delta {mean:+.4} (SE {se:.4})",
            means.0,
            means.1,
            deltas.len()
        ),
    )
}

fn ceaa_paired() -> Verdict {
    let synth = generate(&SynthConfig::default()).unwrap();
    let corpus = &synth.corpus;
    let vocab = Arc::new(Vocabulary::build(corpus, 1).unwrap());
    let (mut on, mut off) = (Vec::new(), Vec::new());
    for seed in PAIRED_SEEDS {
        for (ceaa, sink) in [(false, &mut off), (true, &mut on)] {
            let config = TrainConfig {
                ceaa,
                seed,
                ..TrainConfig::default()
            };
            let out = train(fresh(&vocab, seed), corpus, &config).unwrap();
            sink.push(dense_report(&out.model, corpus, None).metrics.recall[&5]);
        }
    }
    paired_verdict("R@5", &on, &off)
}

fn transfer_paired() -> Verdict {
    let base = SynthConfig::default();
    let synth = generate(&base).unwrap();
    let qa = generate_qa_proxy(&base).unwrap();
    let corpus = &synth.corpus;
    let vocab = Arc::new(Vocabulary::build_from(&[&qa.corpus, corpus], 1).unwrap());
    let few = |model: &BiEncoder| {
        dense_report(model, corpus, Some(corpus)).buckets.unwrap()["few"]
            .metrics
            .ndcg[&5]
    };
    let (mut with, mut without) = (Vec::new(), Vec::new());
    for seed in PAIRED_SEEDS {
        let config = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let scratch = train(fresh(&vocab, seed), corpus, &config).unwrap();
        without.push(few(&scratch.model));
        let pre_config = TrainConfig {
            epochs: DEFAULT_PRETRAIN_EPOCHS,
            ..config.clone()
        };
        let pre = pretrain_qa(fresh(&vocab, seed), &qa.corpus, &pre_config).unwrap();
        let tuned = train(pre.model, corpus, &config).unwrap();
        with.push(few(&tuned.model));
    }
    paired_verdict("few-bucket nDCG@5", &with, &without)
}

fn single_to_multi() -> Verdict {
    let synth = generate(&SynthConfig {
        zero_shot_tags: 10,
        ..SynthConfig::default()
    })
    .unwrap();
    let corpus = &synth.corpus;
    let config = TrainConfig::default();
    let single = corpus.to_single_label(config.seed);
    let vocab = Arc::new(Vocabulary::build(&single, 1).unwrap());
    let out = train(fresh(&vocab, config.seed), &single, &config).unwrap();
    let dense = dense_report(&out.model, corpus, Some(&single));

    let dims = EncoderDims {
        vocab_size: vocab.len(),
        width: DEFAULT_WIDTH,
    };
    let encoder = EncoderParams::init(config.seed, dims).unwrap();
    let (clf, _) = train_classifier(
        encoder,
        vocab,
        out.model.pack,
        &single,
        &ClassifierConfig::default(),
    )
    .unwrap();
    let buckets = single
        .bucket_tags(default_bucket_threshold(single.train().len()))
        .unwrap();
    let cls = evaluate(
        &clf,
        "classifier",
        "test",
        corpus.split(Split::Test),
        &[5, 10],
        Some(&buckets),
    )
    .unwrap();
    let zero = &cls.buckets.as_ref().unwrap()["zero"];
    let zero_recall = zero.metrics.recall[&5].max(zero.metrics.recall[&10]);
    let (d5, d10) = (dense.metrics.ndcg[&5], dense.metrics.ndcg[&10]);
    let (c5, c10) = (cls.metrics.ndcg[&5], cls.metrics.ndcg[&10]);
    verdict(
        d5 > c5 && d10 > c10 && zero_recall == 0.0 && zero.n > 0,
        format!(
            "nDCG@5 dense {d5:.4} vs classifier {c5:.4}, nDCG@10 {d10:.4} vs {c10:.4}, classifier zero-bucket recall {zero_recall} over {} contexts",
            zero.n
        ),
    )
}

fn autotag(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_autotag"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "autotag {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn snapshot(dirs: &[&Path]) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for dir in dirs {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            files.insert(path.display().to_string(), std::fs::read(&path).unwrap());
        }
    }
    files
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run, eval) = (
        tmp.path().join("data"),
        tmp.path().join("run"),
        tmp.path().join("eval"),
    );
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let pipeline = || {
        autotag(&[
            "synth",
            "--zero-tags",
            "5",
            "--seed",
            "11",
            "--out",
            &s(&data),
        ]);
        autotag(&[
            "train",
            "--data",
            &s(&data),
            "--epochs",
            "3",
            "--ceaa",
            "on",
            "--seed",
            "11",
            "--out",
            &s(&run),
        ]);
        autotag(&[
            "eval",
            "--data",
            &s(&data),
            "--model",
            &s(&run.join("model.ckpt")),
            "--protocol",
            "buckets",
            "--baselines",
            "bm25,classifier",
            "--classifier-epochs",
            "3",
            "--seed",
            "11",
            "--out",
            &s(&eval),
        ]);
        snapshot(&[&data, &run, &eval])
    };
    let first = pipeline();
    let second = pipeline();
    let differing: Vec<&String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    let manifests = first
        .keys()
        .filter(|k| k.ends_with("manifest.json"))
        .count();
    verdict(
        differing.is_empty() && first.len() == second.len() && manifests == 3,
        format!(
            "{} files across synth/train/eval ({manifests} manifests), {} differ",
            first.len(),
            differing.len()
        ),
    )
}

fn round_trips() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let synth = generate(&SynthConfig {
        n_tags: 20,
        n_contexts: 300,
        vocab_size: 300,
        ..SynthConfig::default()
    })
    .unwrap();
    let corpus = &synth.corpus;
    let vocab = Arc::new(Vocabulary::build(corpus, 1).unwrap());
    let config = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let out = train(fresh(&vocab, 3), corpus, &config).unwrap();
    let meta: TrainingMeta = out.meta("train", &config);

    std::fs::write(tmp.path().join("vocab.jsonl"), vocab.to_jsonl_bytes()).unwrap();
    let ckpt = tmp.path().join("model.ckpt");
    let bytes = out.model.save(&ckpt, "vocab.jsonl", &meta).unwrap();
    let (loaded, loaded_meta) = BiEncoder::load(&ckpt).unwrap();
    let again = loaded
        .save(tmp.path().join("again.ckpt"), "vocab.jsonl", &loaded_meta)
        .unwrap();
    let ckpt_ok =
        bytes == again && loaded.context == out.model.context && loaded.tag == out.model.tag;

    let index = build_index(&loaded, corpus.tags(), autotag::content_hash(&bytes)).unwrap();
    let ipath = tmp.path().join("index.bin");
    let ibytes = index.save(&ipath).unwrap();
    let reloaded = TagIndex::load(&ipath).unwrap();
    let index_ok = reloaded == index && reloaded.to_bytes() == ibytes;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut corpus_ok = true;
    for trial in 0..50 {
        let tags: Vec<TagLabel> = (0..rng.gen_range(1..6))
            .map(|i| TagLabel {
                id: format!("t{i}"),
                text: odd_text(&mut rng),
            })
            .collect();
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            let examples: Vec<Example> = (0..rng.gen_range(1..5))
                .map(|i| Example {
                    id: format!("{}-{trial}-{i}", split.name()),
                    text: odd_text(&mut rng),
                    gold_tags: vec![tags[rng.gen_range(0..tags.len())].id.clone()],
                })
                .collect();
            splits.insert(split, examples);
        }
        let c = Corpus::new(tags, splits).unwrap();
        let dir = tmp.path().join(format!("corpus{trial}"));
        c.write_dir(&dir).unwrap();
        corpus_ok &= Corpus::load_dir(&dir).unwrap() == c;
    }
    verdict(
        ckpt_ok && index_ok && corpus_ok,
        format!("checkpoint {ckpt_ok}, index {index_ok}, corpus JSONL {corpus_ok} over 50 random corpora"),
    )
}

fn odd_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 8] = [
        "plain",
        "\"quoted\"",
        "tab\there",
        "new\nline",
        "ünïcødé",
        "back\\slash",
        " ",
        "≥ 5",
    ];
    (0..rng.gen_range(1..6))
        .map(|_| PIECES[rng.gen_range(0..PIECES.len())])
        .collect::<Vec<_>>()
        .join(" ")
}
