//! Seeded synthetic corpora.
//!
//! A three-level taxonomy (subject, chapter, topic) is drawn over made-up
//! syllable words. Every level owns a small set of salient terms; a tag is a
//! topic and its text is `subject >> chapter >> topic`, each part being the first
//! (name) term of its level. Contexts pick gold tags by a Zipf law over a shuffled
//! tag order and emit tokens from their gold tags' term sets, mixed with
//! noise words.
//!
//! The taxonomy depends only on the seed and the vocabulary sizes, so a
//! QA-proxy corpus generated with the same config shares its term space with
//! the tagging corpus.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Example, Split, TagLabel};
use crate::error::{Error, Result};

pub const TOPIC_TERMS: usize = 4;
pub const CHAPTER_TERMS: usize = 3;
pub const SUBJECT_TERMS: usize = 3;
/// Smallest noise-word pool accepted.
pub const MIN_NOISE_WORDS: usize = 20;
/// Probability that a non-noise token comes from the topic, chapter and
/// subject level respectively.
pub const LEVEL_WEIGHTS: [f64; 3] = [0.6, 0.25, 0.15];
pub const QUESTION_TERMS: usize = 4;
pub const TRUTH_FILE: &str = "truth.json";

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

const STREAM_CONTEXTS: u64 = 1;
const STREAM_QA: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_tags: usize,
    pub n_contexts: usize,
    pub vocab_size: usize,
    pub mean_labels_per_context: f64,
    pub zipf_exponent: f64,
    pub tokens_per_context: usize,
    pub noise_rate: f64,
    /// Probability that a token drawn from a level is that level's name
    /// word (the one used in tag texts); the other terms share the rest.
    pub name_salience: f64,
    /// Tags that never occur in the train split.
    pub zero_shot_tags: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_tags: 100,
            n_contexts: 2000,
            vocab_size: 2000,
            mean_labels_per_context: 2.5,
            zipf_exponent: 1.0,
            tokens_per_context: 24,
            noise_rate: 0.2,
            name_salience: 0.1,
            zero_shot_tags: 0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn chapters(&self) -> usize {
        ceil_sqrt(self.n_tags)
    }

    pub fn subjects(&self) -> usize {
        ceil_sqrt(self.chapters())
    }

    /// Words reserved for salient terms.
    pub fn salient_words(&self) -> usize {
        self.n_tags * TOPIC_TERMS
            + self.chapters() * CHAPTER_TERMS
            + self.subjects() * SUBJECT_TERMS
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::SynthConfig(m));
        if self.n_tags == 0 || self.vocab_size == 0 || self.tokens_per_context == 0 {
            return fail("n_tags, vocab_size and tokens_per_context must be positive".into());
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return fail(format!("noise_rate {} outside [0, 1)", self.noise_rate));
        }
        if !(0.0..=1.0).contains(&self.name_salience) {
            return fail(format!(
                "name_salience {} outside [0, 1]",
                self.name_salience
            ));
        }
        if !(self.mean_labels_per_context >= 1.0) || !self.mean_labels_per_context.is_finite() {
            return fail(format!(
                "mean_labels_per_context {} must be at least 1",
                self.mean_labels_per_context
            ));
        }
        if !(self.zipf_exponent >= 0.0) || !self.zipf_exponent.is_finite() {
            return fail(format!(
                "zipf_exponent {} must be non-negative",
                self.zipf_exponent
            ));
        }
        let needed = self.salient_words() + MIN_NOISE_WORDS;
        if self.vocab_size < needed {
            return fail(format!(
                "vocab_size {} too small: {} tags need {} salient words plus {} noise words",
                self.vocab_size,
                self.n_tags,
                self.salient_words(),
                MIN_NOISE_WORDS
            ));
        }
        if self.zero_shot_tags >= self.n_tags {
            return fail(format!(
                "zero_shot_tags {} must be below n_tags {}",
                self.zero_shot_tags, self.n_tags
            ));
        }
        if self.zero_shot_tags > self.n_tags - head_size(self.n_tags) {
            return fail(format!(
                "at most {} zero-shot tags possible with {} tags",
                self.n_tags - head_size(self.n_tags),
                self.n_tags
            ));
        }
        Ok(())
    }
}

fn ceil_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r < n {
        r += 1;
    }
    r.max(1)
}

/// Most frequent tags, which are never made zero-shot.
fn head_size(n_tags: usize) -> usize {
    n_tags.div_ceil(10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTruth {
    pub name: String,
    pub terms: Vec<String>,
    /// Index of the parent level entry, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagTruth {
    pub id: String,
    pub text: String,
    pub chapter: usize,
    pub terms: Vec<String>,
    /// 1-based position in the Zipf order.
    pub zipf_rank: usize,
    pub zero_shot: bool,
}

/// Ground-truth term distributions, written next to the corpus for
/// diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub level_weights: [f64; 3],
    pub subjects: Vec<LevelTruth>,
    pub chapters: Vec<LevelTruth>,
    pub tags: Vec<TagTruth>,
    pub noise_words: Vec<String>,
}

impl SynthTruth {
    /// All salient terms of a tag across its three levels.
    pub fn support(&self, tag: usize) -> BTreeSet<&str> {
        let t = &self.tags[tag];
        let chapter = &self.chapters[t.chapter];
        let subject = &self.subjects[chapter.parent.expect("chapters have subjects")];
        t.terms
            .iter()
            .chain(&chapter.terms)
            .chain(&subject.terms)
            .map(String::as_str)
            .collect()
    }

    fn level_terms(&self, tag: usize, level: usize) -> &[String] {
        let t = &self.tags[tag];
        let chapter = &self.chapters[t.chapter];
        match level {
            0 => &t.terms,
            1 => &chapter.terms,
            _ => &self.subjects[chapter.parent.expect("chapters have subjects")].terms,
        }
    }

    /// One token drawn from the level mixture of `tag`.
    fn salient_token(&self, tag: usize, rng: &mut ChaCha8Rng) -> &str {
        let roll: f64 = rng.gen();
        let level = if roll < LEVEL_WEIGHTS[0] {
            0
        } else if roll < LEVEL_WEIGHTS[0] + LEVEL_WEIGHTS[1] {
            1
        } else {
            2
        };
        let terms = self.level_terms(tag, level);
        if rng.gen::<f64>() < self.config.name_salience {
            &terms[0]
        } else {
            terms[1..].choose(rng).expect("levels have several terms")
        }
    }

    fn emit(&self, gold: &[usize], n_tokens: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        (0..n_tokens)
            .map(|_| {
                if rng.gen::<f64>() < self.config.noise_rate {
                    self.noise_words.choose(rng).expect("noise pool").clone()
                } else {
                    let tag = *gold.choose(rng).expect("non-empty gold");
                    self.salient_token(tag, rng).to_string()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub truth: SynthTruth,
}

impl SyntheticCorpus {
    /// Writes the corpus JSONL layout plus the truth sidecar.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.corpus.write_dir(dir)?;
        let path = dir.join(TRUTH_FILE);
        let mut json = serde_json::to_string_pretty(&self.truth)?;
        json.push('\n');
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

fn syllable_words(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = if out.len() < 2000 {
            rng.gen_range(2..=3)
        } else {
            3
        };
        let mut w = String::with_capacity(syllables * 2);
        for _ in 0..syllables {
            w.push(*CONSONANTS.choose(rng).expect("consonants") as char);
            w.push(*VOWELS.choose(rng).expect("vowels") as char);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Builds the taxonomy, Zipf order and zero-shot set from the seed alone.
pub fn taxonomy(config: &SynthConfig) -> Result<SynthTruth> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pool = syllable_words(config.vocab_size, &mut rng).into_iter();
    let mut take = |n: usize| -> Vec<String> { pool.by_ref().take(n).collect() };

    let n_sub = config.subjects();
    let n_chap = config.chapters();
    let subjects: Vec<LevelTruth> = (0..n_sub)
        .map(|_| {
            let terms = take(SUBJECT_TERMS);
            LevelTruth {
                name: terms[0].clone(),
                terms,
                parent: None,
            }
        })
        .collect();
    let chapters: Vec<LevelTruth> = (0..n_chap)
        .map(|c| {
            let terms = take(CHAPTER_TERMS);
            LevelTruth {
                name: terms[0].clone(),
                terms,
                parent: Some(c * n_sub / n_chap),
            }
        })
        .collect();
    let width = config.n_tags.to_string().len().max(3);
    let mut tags: Vec<TagTruth> = (0..config.n_tags)
        .map(|i| {
            let chapter = i * n_chap / config.n_tags;
            let terms = take(TOPIC_TERMS);
            let subject = &subjects[chapters[chapter].parent.expect("set above")];
            let text = format!(
                "{} >> {} >> {}",
                subject.name, chapters[chapter].name, terms[0]
            );
            TagTruth {
                id: format!("t{i:0width$}"),
                text,
                chapter,
                terms,
                zipf_rank: 0,
                zero_shot: false,
            }
        })
        .collect();
    let noise_words: Vec<String> = pool.collect();

    let mut order: Vec<usize> = (0..config.n_tags).collect();
    order.shuffle(&mut rng);
    for (rank, &tag) in order.iter().enumerate() {
        tags[tag].zipf_rank = rank + 1;
    }
    let head = head_size(config.n_tags);
    let tail: Vec<usize> = order[head..].to_vec();
    for &tag in tail.choose_multiple(&mut rng, config.zero_shot_tags) {
        tags[tag].zero_shot = true;
    }

    Ok(SynthTruth {
        config: config.clone(),
        level_weights: LEVEL_WEIGHTS,
        subjects,
        chapters,
        tags,
        noise_words,
    })
}

fn label_count(config: &SynthConfig, rng: &mut ChaCha8Rng) -> usize {
    let extra = config.mean_labels_per_context - 1.0;
    if extra <= 0.0 {
        return 1;
    }
    let p = Poisson::new(extra).expect("positive rate");
    1 + p.sample(rng) as usize
}

/// Samples `n` distinct tags by Zipf rank, skipping `excluded`.
fn sample_gold(
    n: usize,
    by_rank: &[usize],
    excluded: &HashSet<usize>,
    zipf: &Zipf<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let eligible = by_rank.len() - excluded.len();
    let n = n.min(eligible);
    let mut gold = Vec::with_capacity(n);
    let mut attempts = 0;
    while gold.len() < n {
        attempts += 1;
        let tag = if attempts <= 10_000 {
            by_rank[zipf.sample(rng) as usize - 1]
        } else {
            // Heavy skew with many labels: fill from the remaining tags in
            // rank order.
            *by_rank
                .iter()
                .find(|t| !excluded.contains(t) && !gold.contains(*t))
                .expect("enough eligible tags")
        };
        if !excluded.contains(&tag) && !gold.contains(&tag) {
            gold.push(tag);
        }
    }
    gold
}

/// Generates a multi-label tagging corpus split 80/10/10.
pub fn generate(config: &SynthConfig) -> Result<SyntheticCorpus> {
    let truth = taxonomy(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_CONTEXTS);

    let n = config.n_contexts;
    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(&mut rng);
    let n_train = (n as f64 * 0.8).round() as usize;
    let n_val = (n as f64 * 0.1).round() as usize;
    let mut split_of = vec![Split::Test; n];
    for (rank, &i) in positions.iter().enumerate() {
        split_of[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }

    let mut by_rank = vec![0; config.n_tags];
    for (i, t) in truth.tags.iter().enumerate() {
        by_rank[t.zipf_rank - 1] = i;
    }
    let zero_shot: HashSet<usize> = (0..config.n_tags)
        .filter(|&i| truth.tags[i].zero_shot)
        .collect();
    let nothing = HashSet::new();
    let zipf = Zipf::new(config.n_tags as u64, config.zipf_exponent)
        .map_err(|e| Error::SynthConfig(e.to_string()))?;

    let width = n.max(1).to_string().len().max(5);
    let mut splits: BTreeMap<Split, Vec<Example>> = BTreeMap::new();
    for (i, &split) in split_of.iter().enumerate() {
        let excluded = if split == Split::Train {
            &zero_shot
        } else {
            &nothing
        };
        let count = label_count(config, &mut rng);
        let gold = sample_gold(count, &by_rank, excluded, &zipf, &mut rng);
        let tokens = truth.emit(&gold, config.tokens_per_context, &mut rng);
        splits.entry(split).or_default().push(Example {
            id: format!("c{i:0width$}"),
            text: tokens.join(" "),
            gold_tags: gold.iter().map(|&g| truth.tags[g].id.clone()).collect(),
        });
    }

    let tags = truth
        .tags
        .iter()
        .map(|t| TagLabel {
            id: t.id.clone(),
            text: t.text.clone(),
        })
        .collect();
    let corpus = Corpus::new(tags, splits)?;
    Ok(SyntheticCorpus { corpus, truth })
}

/// Passage→question pairs over the same taxonomy, all in the train split.
///
/// Each passage is about one topic, topics cycling through a shuffled order so
/// every tag's terms are covered. The question is up to [`QUESTION_TERMS`]
/// distinct salient terms of the passage, most specific level first (topic,
/// then chapter, then subject), more frequent first within a level.
pub fn generate_qa_proxy(config: &SynthConfig) -> Result<SyntheticCorpus> {
    let truth = taxonomy(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_QA);

    let mut topics: Vec<usize> = (0..config.n_tags).collect();
    topics.shuffle(&mut rng);
    let width = config.n_contexts.max(1).to_string().len().max(5);
    let mut questions = Vec::with_capacity(config.n_contexts);
    let mut passages = Vec::with_capacity(config.n_contexts);
    for i in 0..config.n_contexts {
        let topic = topics[i % topics.len()];
        let tokens = truth.emit(&[topic], config.tokens_per_context, &mut rng);
        let level_of: HashMap<&str, usize> = (0..3)
            .flat_map(|l| {
                truth
                    .level_terms(topic, l)
                    .iter()
                    .map(move |w| (w.as_str(), l))
            })
            .collect();
        // term -> (level, count, first position)
        let mut seen: HashMap<&str, (usize, usize, usize)> = HashMap::new();
        for (pos, tok) in tokens.iter().enumerate() {
            if let Some(&level) = level_of.get(tok.as_str()) {
                seen.entry(tok).or_insert((level, 0, pos)).1 += 1;
            }
        }
        let mut ranked: Vec<(&str, (usize, usize, usize))> = seen.into_iter().collect();
        ranked.sort_by(|a, b| {
            let (x, y) = (a.1, b.1);
            x.0.cmp(&y.0).then(y.1.cmp(&x.1)).then(x.2.cmp(&y.2))
        });
        let mut question: Vec<&str> = ranked
            .iter()
            .take(QUESTION_TERMS)
            .map(|(w, _)| *w)
            .collect();
        if question.is_empty() {
            // All-noise passage: fall back to the topic's own name.
            question.push(&truth.tags[topic].terms[0]);
        }
        let qid = format!("q{i:0width$}");
        questions.push(TagLabel {
            id: qid.clone(),
            text: question.join(" "),
        });
        passages.push(Example {
            id: format!("p{i:0width$}"),
            text: tokens.join(" "),
            gold_tags: vec![qid],
        });
    }
    let corpus = Corpus::new(questions, BTreeMap::from([(Split::Train, passages)]))?;
    Ok(SyntheticCorpus { corpus, truth })
}
