//! Two-tower scoring and training.
//!
//! `score(c, t) = scale · E_C(c) · E_T(t)`. Training batches pair every context
//! with every unique gold tag in the batch (in-batch negatives) under a
//! logistic binary cross-entropy. With cross-encoding augmentation enabled,
//! each context also contributes concatenated `[context; tag]` rows that go
//! through the context tower and are scored only against the tag-tower
//! embedding of `"is relevant"`: one row with a gold tag (label 1) and
//! `ceaa_negatives` rows with non-gold tags (label 0).

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{
    decode_params, encode_params, put_f64s, put_str, Container, Reader, SECTION_CONTEXT,
    SECTION_META, SECTION_SCALE, SECTION_TAG, SECTION_VOCAB,
};
use crate::corpus::{Corpus, Example};
use crate::encoder::{dot, Embedding, EncoderDims, EncoderParams, ParamGrads, Pooling, Trace};
use crate::error::{Error, Result};
use crate::optim::EncoderAdam;
use crate::textproc::{PackConfig, PackedInput, Vocabulary, RELEVANCE_TAG_TEXT};

pub const DEFAULT_WIDTH: usize = 32;

/// Question/passage epochs before tagging fine-tuning.
pub const DEFAULT_PRETRAIN_EPOCHS: usize = 5;

/// Multiplier on the context/tag dot product. Embeddings are tanh outputs,
/// so scores lie in `[-d·scale, d·scale]`.
pub const DEFAULT_SCORE_SCALE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BiEncoder {
    pub context: EncoderParams,
    pub tag: EncoderParams,
    pub vocab: Arc<Vocabulary>,
    pub score_scale: f64,
    pub pack: PackConfig,
}

impl BiEncoder {
    /// Fresh towers seeded from `seed` (context) and `seed + 1` (tag), with
    /// [`DEFAULT_SCORE_SCALE`].
    pub fn new(vocab: Arc<Vocabulary>, width: usize, seed: u64) -> Result<Self> {
        let dims = EncoderDims {
            vocab_size: vocab.len(),
            width,
        };
        Ok(BiEncoder {
            context: EncoderParams::init(seed, dims)?,
            tag: EncoderParams::init(seed.wrapping_add(1), dims)?,
            vocab,
            score_scale: DEFAULT_SCORE_SCALE,
            pack: PackConfig::default(),
        })
    }

    pub fn with_score_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "score_scale {scale} must be positive"
            )));
        }
        self.score_scale = scale;
        Ok(self)
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.context.pooling = pooling;
        self.tag.pooling = pooling;
        self
    }

    pub fn with_pack(mut self, pack: PackConfig) -> Self {
        self.pack = pack;
        self
    }

    pub fn width(&self) -> usize {
        self.context.dims.width
    }

    pub fn pack_single(&self, text: &str) -> PackedInput {
        self.vocab.pack_single(text, &self.pack)
    }

    pub fn pack_concat(&self, context: &str, tag: &str) -> PackedInput {
        self.vocab.pack_concat(context, tag, &self.pack)
    }

    fn check_vocab(&self, input: &PackedInput) -> Result<()> {
        if input.vocab != self.vocab.fingerprint() {
            return Err(Error::VocabMismatch);
        }
        Ok(())
    }

    pub fn encode_context(&self, input: &PackedInput) -> Result<Embedding> {
        self.check_vocab(input)?;
        self.context.encode(input)
    }

    pub fn encode_tag(&self, input: &PackedInput) -> Result<Embedding> {
        self.check_vocab(input)?;
        self.tag.encode(input)
    }

    pub fn embed_context(&self, text: &str) -> Result<Embedding> {
        self.context.encode(&self.pack_single(text))
    }

    pub fn embed_tag(&self, text: &str) -> Result<Embedding> {
        self.tag.encode(&self.pack_single(text))
    }

    /// Scaled dot product of the two towers' embeddings.
    pub fn score(&self, context: &PackedInput, tag: &PackedInput) -> Result<f64> {
        let c = self.encode_context(context)?;
        let t = self.encode_tag(tag)?;
        Ok(self.score_scale * c.dot(&t))
    }

    /// Relevance of the concatenated `[context; tag]` input against the tag
    /// tower's `"is relevant"` embedding.
    pub fn score_ceaa(&self, context_text: &str, tag_text: &str) -> Result<f64> {
        self.score(
            &self.pack_concat(context_text, tag_text),
            &self.pack_single(RELEVANCE_TAG_TEXT),
        )
    }

    /// Writes a checkpoint whose vocabulary is referenced by `vocab_ref`
    /// (resolved relative to the checkpoint's directory on load).
    pub fn save(
        &self,
        path: impl AsRef<Path>,
        vocab_ref: &str,
        meta: &TrainingMeta,
    ) -> Result<Vec<u8>> {
        let mut c = Container::new();
        let mut vocab = Vec::new();
        put_str(&mut vocab, vocab_ref);
        put_str(
            &mut vocab,
            &crate::content_hash(&self.vocab.to_jsonl_bytes()),
        );
        c.push(SECTION_VOCAB, vocab);
        c.push(SECTION_CONTEXT, encode_params(&self.context));
        c.push(SECTION_TAG, encode_params(&self.tag));
        let mut scale = Vec::new();
        put_f64s(&mut scale, &[self.score_scale]);
        scale.extend_from_slice(&(self.pack.max_len as u32).to_le_bytes());
        scale.extend_from_slice(&(self.pack.context_max as u32).to_le_bytes());
        c.push(SECTION_SCALE, scale);
        c.push(SECTION_META, serde_json::to_vec(meta)?);
        c.save(path)
    }

    /// Loads a checkpoint and the vocabulary it references, verifying the
    /// vocabulary's content hash.
    pub fn load(path: impl AsRef<Path>) -> Result<(BiEncoder, TrainingMeta)> {
        let path = path.as_ref();
        let c = Container::load(path)?;
        let mut r = Reader::new(c.require(SECTION_VOCAB)?);
        let vocab_ref = r.string()?;
        let vocab_hash = r.string()?;
        r.finish()?;
        let vocab_path = path.parent().unwrap_or(Path::new(".")).join(&vocab_ref);
        let bytes = std::fs::read(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?;
        if crate::content_hash(&bytes) != vocab_hash {
            return Err(Error::Stale(format!(
                "vocabulary {} does not match the hash recorded in {}",
                vocab_path.display(),
                path.display()
            )));
        }
        let vocab = Arc::new(Vocabulary::load(&vocab_path)?);
        let context = decode_params(c.require(SECTION_CONTEXT)?)?;
        let tag = decode_params(c.require(SECTION_TAG)?)?;
        if context.dims != tag.dims || context.dims.vocab_size != vocab.len() {
            return Err(Error::ShapeMismatch(
                "tower dimensions disagree with each other or the vocabulary".into(),
            ));
        }
        let mut r = Reader::new(c.require(SECTION_SCALE)?);
        let score_scale = r.f64()?;
        let pack = PackConfig::new(r.u32()? as usize, r.u32()? as usize)?;
        r.finish()?;
        let meta = serde_json::from_slice(c.require(SECTION_META)?)?;
        Ok((
            BiEncoder {
                context,
                tag,
                vocab,
                score_scale,
                pack,
            },
            meta,
        ))
    }
}

/// How the summed loss is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    /// Mean over unmasked entries.
    #[default]
    Unmasked,
    /// Sum divided by the number of rows.
    PerRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_contexts: usize,
    pub ceaa: bool,
    pub ceaa_negatives: usize,
    /// Unmask cross terms between augmented rows and ordinary tag columns
    /// (labelled 0) and between plain rows and the relevance column.
    pub ceaa_full_matrix: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub loss_norm: LossNorm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_contexts: 20,
            ceaa: false,
            ceaa_negatives: 5,
            ceaa_full_matrix: false,
            learning_rate: 5e-3,
            epochs: 20,
            seed: 7,
            adam: AdamConfig::default(),
            loss_norm: LossNorm::Unmasked,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_contexts < 2 {
            return Err(Error::InvalidArgument(
                "batch_contexts must be at least 2".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Training metadata stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub stage: String,
    pub config: Option<TrainConfig>,
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

impl TrainingMeta {
    pub fn untrained() -> Self {
        TrainingMeta {
            stage: "init".into(),
            config: None,
            epochs: 0,
            final_loss: None,
        }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    Tag(String),
    /// The literal `"is relevant"` tag.
    Relevance,
}

/// One optimization step's worth of inputs.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    /// `M` plain contexts.
    pub context_inputs: Vec<PackedInput>,
    /// Concatenated rows appended after the plain contexts.
    pub ceaa_rows: Vec<PackedInput>,
    pub columns: Vec<Column>,
    /// `N` tag inputs, aligned with `columns`.
    pub tag_inputs: Vec<PackedInput>,
    /// `M' × N`
    pub labels: Matrix,
    /// `M' × N`; 1 where the pair contributes to the loss.
    pub mask: Matrix,
}

impl TrainingBatch {
    pub fn rows(&self) -> impl Iterator<Item = &PackedInput> {
        self.context_inputs.iter().chain(&self.ceaa_rows)
    }

    pub fn row_count(&self) -> usize {
        self.context_inputs.len() + self.ceaa_rows.len()
    }

    pub fn relevance_column(&self) -> Option<usize> {
        self.columns.iter().position(|c| *c == Column::Relevance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub ceaa: bool,
    pub negatives: usize,
    pub full_matrix: bool,
}

impl From<&TrainConfig> for BatchOptions {
    fn from(cfg: &TrainConfig) -> Self {
        BatchOptions {
            ceaa: cfg.ceaa,
            negatives: cfg.ceaa_negatives,
            full_matrix: cfg.ceaa_full_matrix,
        }
    }
}

/// Assembles a batch from train examples at `indices`.
///
/// Columns are the batch's unique gold tags in corpus tag order, followed by
/// the relevance column when augmentation is on. Negative tags for augmented
/// rows come from the batch's non-gold tags; if there are none, from every
/// non-gold tag in the corpus. When fewer candidates than requested exist
/// they are drawn with replacement.
pub fn build_batch(
    model: &BiEncoder,
    corpus: &Corpus,
    indices: &[usize],
    opts: BatchOptions,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingBatch> {
    let train = corpus.train();
    if let Some(&bad) = indices.iter().find(|&&i| i >= train.len()) {
        return Err(Error::InvalidArgument(format!(
            "example index {bad} outside train split of {}",
            train.len()
        )));
    }
    let distinct: HashSet<usize> = indices.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::BatchTooSmall(distinct.len()));
    }
    let examples: Vec<&Example> = indices.iter().map(|&i| &train[i]).collect();

    let mut tag_positions: Vec<usize> = examples
        .iter()
        .flat_map(|e| e.gold_tags.iter())
        .map(|t| corpus.tag_position(t).expect("validated corpus"))
        .collect();
    tag_positions.sort_unstable();
    tag_positions.dedup();
    let batch_tags: Vec<&str> = tag_positions
        .iter()
        .map(|&p| corpus.tags()[p].id.as_str())
        .collect();

    let mut columns: Vec<Column> = batch_tags
        .iter()
        .map(|t| Column::Tag(t.to_string()))
        .collect();
    let mut tag_inputs: Vec<PackedInput> = tag_positions
        .iter()
        .map(|&p| model.pack_single(&corpus.tags()[p].text))
        .collect();
    let relevance = if opts.ceaa {
        columns.push(Column::Relevance);
        tag_inputs.push(model.pack_single(RELEVANCE_TAG_TEXT));
        Some(columns.len() - 1)
    } else {
        None
    };
    let n_cols = columns.len();

    let context_inputs: Vec<PackedInput> = examples
        .iter()
        .map(|e| model.pack_single(&e.text))
        .collect();
    let mut ceaa_rows = Vec::new();
    // (row label against the relevance column)
    let mut ceaa_labels = Vec::new();
    if opts.ceaa {
        for ex in &examples {
            let gold: HashSet<&str> = ex.gold_tags.iter().map(String::as_str).collect();
            let positive = ex.gold_tags.choose(rng).expect("validated non-empty");
            ceaa_rows.push(model.pack_concat(&ex.text, &corpus.tag(positive).expect("known").text));
            ceaa_labels.push(1.0);

            let mut candidates: Vec<&str> = batch_tags
                .iter()
                .copied()
                .filter(|t| !gold.contains(t))
                .collect();
            if candidates.is_empty() {
                candidates = corpus
                    .tags()
                    .iter()
                    .map(|t| t.id.as_str())
                    .filter(|t| !gold.contains(t))
                    .collect();
            }
            let negatives: Vec<&str> = if candidates.is_empty() {
                Vec::new()
            } else if candidates.len() >= opts.negatives {
                candidates
                    .choose_multiple(rng, opts.negatives)
                    .copied()
                    .collect()
            } else {
                (0..opts.negatives)
                    .map(|_| *candidates.choose(rng).expect("non-empty"))
                    .collect()
            };
            for neg in negatives {
                ceaa_rows.push(model.pack_concat(&ex.text, &corpus.tag(neg).expect("known").text));
                ceaa_labels.push(0.0);
            }
        }
    }

    let m = context_inputs.len();
    let rows = m + ceaa_rows.len();
    let mut labels = Matrix::zeros(rows, n_cols);
    let mut mask = Matrix::zeros(rows, n_cols);
    for (i, ex) in examples.iter().enumerate() {
        for (j, col) in columns.iter().enumerate() {
            match col {
                Column::Tag(id) => {
                    mask.set(i, j, 1.0);
                    if ex.gold_tags.iter().any(|g| g == id) {
                        labels.set(i, j, 1.0);
                    }
                }
                Column::Relevance => {
                    if opts.full_matrix {
                        mask.set(i, j, 1.0);
                    }
                }
            }
        }
    }
    if let Some(rc) = relevance {
        for (r, &y) in ceaa_labels.iter().enumerate() {
            let i = m + r;
            labels.set(i, rc, y);
            if opts.full_matrix {
                for j in 0..n_cols {
                    mask.set(i, j, 1.0);
                }
            } else {
                mask.set(i, rc, 1.0);
            }
        }
    }

    Ok(TrainingBatch {
        context_inputs,
        ceaa_rows,
        columns,
        tag_inputs,
        labels,
        mask,
    })
}

/// Lower/upper clamp applied to probabilities inside the logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

/// Logistic binary cross-entropy over unmasked entries.
///
/// Returns the normalized loss and its gradient with respect to the raw
/// scores; masked entries get exactly zero gradient. The gradient is
/// `(σ(s) - y) / norm`, i.e. the clamp only guards the logarithms.
pub fn bce_loss(
    scores: &Matrix,
    labels: &Matrix,
    mask: &Matrix,
    norm: LossNorm,
) -> Result<(f64, Matrix)> {
    for (name, m) in [("labels", labels), ("mask", mask)] {
        if m.rows != scores.rows || m.cols != scores.cols {
            return Err(Error::ShapeMismatch(format!(
                "{name} is {}x{}, scores are {}x{}",
                m.rows, m.cols, scores.rows, scores.cols
            )));
        }
    }
    let active = mask.data.iter().filter(|&&m| m != 0.0).count();
    if active == 0 {
        return Err(Error::AllMasked);
    }
    let denom = match norm {
        LossNorm::Unmasked => active as f64,
        LossNorm::PerRow => scores.rows as f64,
    };
    let mut total = 0.0;
    let mut grad = Matrix::zeros(scores.rows, scores.cols);
    for idx in 0..scores.data.len() {
        if mask.data[idx] == 0.0 {
            continue;
        }
        let y = labels.data[idx];
        let p = crate::logistic(scores.data[idx]);
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        grad.data[idx] = (p - y) / denom;
    }
    Ok((total / denom, grad))
}

/// Gradients of one batch for both towers.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub loss: f64,
    pub scores: Matrix,
    pub context: ParamGrads,
    pub tag: ParamGrads,
}

/// Forward and backward pass over a batch.
pub fn batch_gradients(
    model: &BiEncoder,
    batch: &TrainingBatch,
    norm: LossNorm,
) -> Result<BatchGradients> {
    let rows: Vec<Trace> = batch
        .rows()
        .map(|x| {
            model.check_vocab(x)?;
            model.context.forward(x)
        })
        .collect::<Result<_>>()?;
    let cols: Vec<Trace> = batch
        .tag_inputs
        .iter()
        .map(|x| {
            model.check_vocab(x)?;
            model.tag.forward(x)
        })
        .collect::<Result<_>>()?;
    let d = model.width();
    let scale = model.score_scale;
    let mut scores = Matrix::zeros(rows.len(), cols.len());
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            scores.set(i, j, scale * dot(&r.out, &c.out));
        }
    }
    let (loss, dscores) = bce_loss(&scores, &batch.labels, &batch.mask, norm)?;

    let mut context = ParamGrads::zeros(model.context.dims);
    let mut upstream = vec![0.0; d];
    for (i, r) in rows.iter().enumerate() {
        upstream.iter_mut().for_each(|u| *u = 0.0);
        let mut any = false;
        for (j, c) in cols.iter().enumerate() {
            let g = dscores.get(i, j);
            if g != 0.0 {
                any = true;
                for (u, t) in upstream.iter_mut().zip(&c.out) {
                    *u += scale * g * t;
                }
            }
        }
        if any {
            model.context.backward(r, &upstream, &mut context);
        }
    }
    let mut tag = ParamGrads::zeros(model.tag.dims);
    for (j, c) in cols.iter().enumerate() {
        upstream.iter_mut().for_each(|u| *u = 0.0);
        let mut any = false;
        for (i, r) in rows.iter().enumerate() {
            let g = dscores.get(i, j);
            if g != 0.0 {
                any = true;
                for (u, x) in upstream.iter_mut().zip(&r.out) {
                    *u += scale * g * x;
                }
            }
        }
        if any {
            model.tag.backward(c, &upstream, &mut tag);
        }
    }
    Ok(BatchGradients {
        loss,
        scores,
        context,
        tag,
    })
}

/// Owns a model and its optimizer state.
pub struct Trainer {
    pub model: BiEncoder,
    pub config: TrainConfig,
    context_state: EncoderAdam,
    tag_state: EncoderAdam,
    step: u64,
}

impl Trainer {
    pub fn new(model: BiEncoder, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            context_state: EncoderAdam::new(&model.context),
            tag_state: EncoderAdam::new(&model.tag),
            model,
            config,
            step: 0,
        })
    }

    /// One Adam update on both towers; returns the batch loss.
    pub fn step(&mut self, batch: &TrainingBatch) -> Result<f64> {
        let grads = batch_gradients(&self.model, batch, self.config.loss_norm)?;
        self.step += 1;
        let lr = self.config.learning_rate;
        self.context_state.update(
            &mut self.model.context,
            &grads.context,
            lr,
            &self.config.adam,
            self.step,
        );
        self.tag_state.update(
            &mut self.model.tag,
            &grads.tag,
            lr,
            &self.config.adam,
            self.step,
        );
        Ok(grads.loss)
    }

    /// Runs `config.epochs` epochs over the train split and returns the mean
    /// batch loss of each epoch.
    pub fn fit(&mut self, corpus: &Corpus) -> Result<Vec<f64>> {
        let n = corpus.train().len();
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let opts = BatchOptions::from(&self.config);
        let mut trace = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let batches = epoch_batches(&order, self.config.batch_contexts);
            for indices in &batches {
                let batch = build_batch(&self.model, corpus, indices, opts, &mut rng)?;
                total += self.step(&batch)?;
            }
            let mean = total / batches.len() as f64;
            debug!("epoch {} mean loss {:.6}", epoch + 1, mean);
            trace.push(mean);
        }
        Ok(trace)
    }
}

/// Chunks `order` into batches; a trailing chunk of one is merged into the
/// previous batch.
fn epoch_batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    batches
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: BiEncoder,
    /// Mean loss per epoch.
    pub loss_trace: Vec<f64>,
}

impl TrainOutcome {
    pub fn meta(&self, stage: &str, config: &TrainConfig) -> TrainingMeta {
        TrainingMeta {
            stage: stage.into(),
            config: Some(config.clone()),
            epochs: self.loss_trace.len(),
            final_loss: self.loss_trace.last().copied(),
        }
    }

    /// `epoch,mean_loss` lines with a header.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for (i, l) in self.loss_trace.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, l));
        }
        out
    }
}

/// Trains both towers with in-batch negatives (plus augmentation rows when
/// `config.ceaa` is set).
pub fn train(model: BiEncoder, corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model, config.clone())?;
    let loss_trace = trainer.fit(corpus)?;
    Ok(TrainOutcome {
        model: trainer.model,
        loss_trace,
    })
}

/// Question/passage matching stage: passages go through the context tower and
/// each passage's single question through the tag tower.
pub fn pretrain_qa(model: BiEncoder, qa: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    if let Some(ex) = qa.train().iter().find(|e| e.gold_tags.len() != 1) {
        return Err(Error::NotSingleQuestion(ex.id.clone()));
    }
    train(model, qa, config)
}
