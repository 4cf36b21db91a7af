//! Comparison systems: Okapi BM25 over tag texts and a closed-set classifier
//! head on top of a context encoder.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::biencoder::AdamConfig;
use crate::checkpoint::{
    decode_params, encode_params, put_f64s, put_str, Container, Reader, SECTION_CLASSIFIER,
    SECTION_CONTEXT, SECTION_META, SECTION_SCALE, SECTION_VOCAB,
};
use crate::corpus::{Corpus, TagLabel};
use crate::encoder::{dot, EncoderParams, ParamGrads};
use crate::error::{Error, Result};
use crate::metrics::Ranker;
use crate::optim::{EncoderAdam, Moments};
use crate::textproc::{words, PackConfig, Vocabulary};

/// Sorts `(id, score)` pairs by descending score then ascending id and keeps
/// the first `k`.
fn top_k(mut scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(crate::rank_order);
    scored.truncate(k);
    scored
}

/// BM25 index whose documents are tag texts.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    ids: Vec<String>,
    term_freqs: Vec<HashMap<String, u32>>,
    doc_lens: Vec<usize>,
    doc_freq: HashMap<String, usize>,
    avg_len: f64,
    pub k1: f64,
    pub b: f64,
}

impl Bm25Index {
    pub const DEFAULT_K1: f64 = 1.2;
    pub const DEFAULT_B: f64 = 0.75;

    pub fn build(tags: &[TagLabel]) -> Result<Self> {
        Self::with_params(tags, Self::DEFAULT_K1, Self::DEFAULT_B)
    }

    pub fn with_params(tags: &[TagLabel], k1: f64, b: f64) -> Result<Self> {
        if tags.is_empty() {
            return Err(Error::InvalidArgument(
                "BM25 index needs at least one tag".into(),
            ));
        }
        let mut term_freqs = Vec::with_capacity(tags.len());
        let mut doc_lens = Vec::with_capacity(tags.len());
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for tag in tags {
            let toks = words(&tag.text);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &toks {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            doc_lens.push(toks.len());
            term_freqs.push(tf);
        }
        let avg_len = doc_lens.iter().sum::<usize>() as f64 / tags.len() as f64;
        if avg_len <= 0.0 {
            return Err(Error::InvalidArgument("tag texts contain no tokens".into()));
        }
        Ok(Bm25Index {
            ids: tags.iter().map(|t| t.id.clone()).collect(),
            term_freqs,
            doc_lens,
            doc_freq,
            avg_len,
            k1,
            b,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `max(0, ln((N - df + 0.5) / (df + 0.5)))`
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        if df == 0.0 {
            return 0.0;
        }
        ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }

    /// Score of every tag for `query`, in index order. Each distinct query
    /// term contributes once.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let terms: BTreeSet<String> = words(query).into_iter().collect();
        let weighted: Vec<(&String, f64)> = terms
            .iter()
            .map(|t| (t, self.idf(t)))
            .filter(|(_, idf)| *idf > 0.0)
            .collect();
        (0..self.ids.len())
            .map(|d| {
                let norm =
                    self.k1 * (1.0 - self.b + self.b * self.doc_lens[d] as f64 / self.avg_len);
                weighted
                    .iter()
                    .map(|(t, idf)| {
                        let tf = self.term_freqs[d].get(*t).copied().unwrap_or(0) as f64;
                        idf * tf * (self.k1 + 1.0) / (tf + norm)
                    })
                    .sum()
            })
            .collect()
    }

    pub fn rank(&self, query: &str, k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(top_k(
            self.ids.iter().cloned().zip(self.scores(query)).collect(),
            k,
        ))
    }
}

impl Ranker for Bm25Index {
    fn rank(&self, text: &str, k: usize) -> Result<Vec<String>> {
        Ok(Bm25Index::rank(self, text, k)?
            .into_iter()
            .map(|(id, _)| id)
            .collect())
    }

    fn candidate_count(&self) -> usize {
        self.ids.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierLoss {
    /// Softmax cross-entropy when every train example has one tag, per-tag
    /// binary cross-entropy otherwise.
    #[default]
    Auto,
    Softmax,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: ClassifierLoss,
    pub adam: AdamConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 10,
            batch_size: 20,
            learning_rate: 1e-3,
            seed: 7,
            loss: ClassifierLoss::Auto,
            adam: AdamConfig::default(),
        }
    }
}

/// Linear layer over the encoder output, one row per label.
///
/// Labels are the tags seen in training, in corpus order; other tags cannot
/// be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub labels: Vec<String>,
    pub width: usize,
    /// `labels × width`, row `j` holds the weights of label `j`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub softmax: bool,
}

impl ClassifierHead {
    pub fn logits(&self, embedding: &[f64]) -> Vec<f64> {
        (0..self.labels.len())
            .map(|j| {
                self.bias[j]
                    + dot(
                        &self.weights[j * self.width..(j + 1) * self.width],
                        embedding,
                    )
            })
            .collect()
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.labels.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.softmax as u32).to_le_bytes());
        for l in &self.labels {
            put_str(&mut out, l);
        }
        put_f64s(&mut out, &self.weights);
        put_f64s(&mut out, &self.bias);
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let n = r.u32()? as usize;
        let width = r.u32()? as usize;
        let softmax = r.u32()? != 0;
        let labels = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let weights = r.f64s(n * width)?;
        let bias = r.f64s(n)?;
        r.finish()?;
        Ok(ClassifierHead {
            labels,
            width,
            weights,
            bias,
            softmax,
        })
    }
}

/// Context encoder plus classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub encoder: EncoderParams,
    pub head: ClassifierHead,
    pub vocab: Arc<Vocabulary>,
    pub pack: PackConfig,
}

impl Classifier {
    pub fn logits(&self, text: &str) -> Result<Vec<f64>> {
        let e = self
            .encoder
            .encode(&self.vocab.pack_single(text, &self.pack))?;
        Ok(self.head.logits(&e.0))
    }

    /// Softmax over the label set.
    pub fn probabilities(&self, text: &str) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(text)?))
    }

    /// Top-`k` labels by logit, ties broken by tag id.
    pub fn rank(&self, text: &str, k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let logits = self.logits(text)?;
        Ok(top_k(
            self.head.labels.iter().cloned().zip(logits).collect(),
            k,
        ))
    }

    pub fn save(
        &self,
        path: impl AsRef<Path>,
        vocab_ref: &str,
        config: &ClassifierConfig,
    ) -> Result<Vec<u8>> {
        let mut c = Container::new();
        let mut vocab = Vec::new();
        put_str(&mut vocab, vocab_ref);
        put_str(
            &mut vocab,
            &crate::content_hash(&self.vocab.to_jsonl_bytes()),
        );
        c.push(SECTION_VOCAB, vocab);
        c.push(SECTION_CONTEXT, encode_params(&self.encoder));
        c.push(SECTION_CLASSIFIER, self.head.to_bytes());
        let mut pack = Vec::new();
        pack.extend_from_slice(&(self.pack.max_len as u32).to_le_bytes());
        pack.extend_from_slice(&(self.pack.context_max as u32).to_le_bytes());
        c.push(SECTION_SCALE, pack);
        c.push(SECTION_META, serde_json::to_vec(config)?);
        c.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let c = Container::load(path)?;
        let mut r = Reader::new(c.require(SECTION_VOCAB)?);
        let vocab_ref = r.string()?;
        let hash = r.string()?;
        r.finish()?;
        let vocab_path = path.parent().unwrap_or(Path::new(".")).join(vocab_ref);
        let bytes = std::fs::read(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?;
        if crate::content_hash(&bytes) != hash {
            return Err(Error::Stale(format!(
                "vocabulary {} changed since the classifier was saved",
                vocab_path.display()
            )));
        }
        let vocab = Arc::new(Vocabulary::load(&vocab_path)?);
        let encoder = decode_params(c.require(SECTION_CONTEXT)?)?;
        let head = ClassifierHead::from_bytes(c.require(SECTION_CLASSIFIER)?)?;
        let mut r = Reader::new(c.require(SECTION_SCALE)?);
        let pack = PackConfig::new(r.u32()? as usize, r.u32()? as usize)?;
        r.finish()?;
        Ok(Classifier {
            encoder,
            head,
            vocab,
            pack,
        })
    }
}

impl Ranker for Classifier {
    fn rank(&self, text: &str, k: usize) -> Result<Vec<String>> {
        Ok(Classifier::rank(self, text, k)?
            .into_iter()
            .map(|(id, _)| id)
            .collect())
    }

    fn candidate_count(&self) -> usize {
        self.head.labels.len()
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Jointly trains `encoder` and a fresh head on the train split.
///
/// Softmax mode spreads the target uniformly over an example's gold tags;
/// binary mode applies a logistic cross-entropy to every label. Losses are
/// averaged over the batch.
pub fn train_classifier(
    encoder: EncoderParams,
    vocab: Arc<Vocabulary>,
    pack: PackConfig,
    corpus: &Corpus,
    config: &ClassifierConfig,
) -> Result<(Classifier, Vec<f64>)> {
    let train = corpus.train();
    if train.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let occurrences = corpus.train_occurrences();
    let labels: Vec<String> = corpus
        .tags()
        .iter()
        .zip(&occurrences)
        .filter(|(_, &c)| c > 0)
        .map(|(t, _)| t.id.clone())
        .collect();
    let label_pos: HashMap<String, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i))
        .collect();
    let softmax_mode = match config.loss {
        ClassifierLoss::Softmax => true,
        ClassifierLoss::Binary => false,
        ClassifierLoss::Auto => train.iter().all(|e| e.gold_tags.len() == 1),
    };
    let width = encoder.dims.width;
    let n_labels = labels.len();
    let mut model = Classifier {
        head: ClassifierHead {
            labels,
            width,
            weights: {
                use rand::Rng;
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
                let s = 1.0 / (width as f64).sqrt();
                (0..n_labels * width)
                    .map(|_| rng.gen_range(-s..s))
                    .collect()
            },
            bias: vec![0.0; n_labels],
            softmax: softmax_mode,
        },
        encoder,
        vocab,
        pack,
    };
    let inputs: Vec<_> = train
        .iter()
        .map(|e| model.vocab.pack_single(&e.text, &pack))
        .collect();
    let targets: Vec<Vec<usize>> = train
        .iter()
        .map(|e| e.gold_tags.iter().map(|g| label_pos[g]).collect())
        .collect();

    let mut enc_adam = EncoderAdam::new(&model.encoder);
    let mut w_adam = Moments::new(model.head.weights.len());
    let mut b_adam = Moments::new(n_labels);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut step = 0u64;
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut enc_grads = ParamGrads::zeros(model.encoder.dims);
            let mut w_grad = vec![0.0; model.head.weights.len()];
            let mut b_grad = vec![0.0; n_labels];
            let inv = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let trace_i = model.encoder.forward(&inputs[i])?;
                let e = &trace_i.out;
                let logits = model.head.logits(e);
                let mut dlogits = vec![0.0; n_labels];
                if softmax_mode {
                    let p = softmax(&logits);
                    let share = 1.0 / targets[i].len() as f64;
                    for j in 0..n_labels {
                        dlogits[j] = p[j];
                    }
                    for &t in &targets[i] {
                        dlogits[t] -= share;
                        batch_loss -= share * p[t].max(1e-300).ln();
                    }
                } else {
                    let gold: BTreeSet<usize> = targets[i].iter().copied().collect();
                    for j in 0..n_labels {
                        let y = if gold.contains(&j) { 1.0 } else { 0.0 };
                        let p = crate::logistic(logits[j]);
                        let pc = p.clamp(1e-12, 1.0 - 1e-12);
                        batch_loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
                        dlogits[j] = p - y;
                    }
                }
                let mut de = vec![0.0; width];
                for j in 0..n_labels {
                    let g = dlogits[j] * inv;
                    b_grad[j] += g;
                    let row = j * width;
                    for b in 0..width {
                        w_grad[row + b] += g * e[b];
                        de[b] += g * model.head.weights[row + b];
                    }
                }
                model.encoder.backward(&trace_i, &de, &mut enc_grads);
            }
            step += 1;
            let lr = config.learning_rate;
            enc_adam.update(&mut model.encoder, &enc_grads, lr, &config.adam, step);
            w_adam.update(&mut model.head.weights, &w_grad, lr, &config.adam, step);
            b_adam.update(&mut model.head.bias, &b_grad, lr, &config.adam, step);
            total += batch_loss * inv;
            batches += 1;
        }
        let mean = total / batches as f64;
        debug!("classifier epoch {} mean loss {:.6}", epoch + 1, mean);
        trace.push(mean);
    }
    Ok((model, trace))
}
