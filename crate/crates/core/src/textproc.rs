//! Word-level tokenization and input packing.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Tag text every augmented (concatenated) input is scored against.
pub const RELEVANCE_TAG_TEXT: &str = "is relevant";

/// Lowercases and splits on anything that is not alphanumeric. Punctuation is
/// a boundary and never a token.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    fingerprint: u64,
}

#[derive(Serialize, Deserialize)]
struct VocabLine {
    token: String,
    id: u32,
}

impl Vocabulary {
    /// Builds from reserved tokens followed by `tokens` in the given order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        let mut ids = HashMap::with_capacity(all.len());
        for (i, tok) in all.iter().enumerate() {
            if ids.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary token {tok:?}"
                )));
            }
        }
        let mut vocab = Vocabulary {
            tokens: all,
            ids,
            fingerprint: 0,
        };
        let digest = crate::content_hash(&vocab.to_jsonl_bytes());
        vocab.fingerprint = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        Ok(vocab)
    }

    /// Train-text tokens with frequency ≥ `min_freq`, plus every tag-text token
    /// and the tokens of [`RELEVANCE_TAG_TEXT`]. Ordered by train frequency
    /// (descending) then lexicographically.
    pub fn build(corpus: &Corpus, min_freq: usize) -> Result<Self> {
        Self::build_from(&[corpus], min_freq)
    }

    /// Like [`Vocabulary::build`] with counts pooled over several corpora, so
    /// a pretraining corpus and the tagging corpus share one vocabulary.
    pub fn build_from(corpora: &[&Corpus], min_freq: usize) -> Result<Self> {
        if min_freq == 0 {
            return Err(Error::InvalidArgument("min_freq must be positive".into()));
        }
        if corpora.iter().all(|c| c.train().is_empty()) {
            return Err(Error::EmptyTrainSplit);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for ex in corpora.iter().flat_map(|c| c.train()) {
            for w in words(&ex.text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut keep: HashMap<String, usize> = counts
            .iter()
            .filter(|(_, &c)| c >= min_freq)
            .map(|(w, &c)| (w.clone(), c))
            .collect();
        let forced = corpora
            .iter()
            .flat_map(|c| c.tags())
            .flat_map(|t| words(&t.text))
            .chain(words(RELEVANCE_TAG_TEXT));
        for w in forced {
            let c = counts.get(&w).copied().unwrap_or(0);
            keep.entry(w).or_insert(c);
        }
        let mut ordered: Vec<(String, usize)> = keep
            .into_iter()
            .filter(|(w, _)| !RESERVED.contains(&w.as_str()))
            .collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Vocabulary::from_tokens(ordered.into_iter().map(|(w, _)| w))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Stable identity derived from the serialized content.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        words(text)
            .iter()
            .map(|w| self.ids.get(w).copied().unwrap_or(UNK))
            .collect()
    }

    /// `[CLS] tokens…`, truncated to `max_len`.
    pub fn pack_single(&self, text: &str, cfg: &PackConfig) -> PackedInput {
        let mut ids = Vec::with_capacity(cfg.max_len.min(64));
        ids.push(CLS);
        ids.extend(self.tokenize(text).into_iter().take(cfg.max_len - 1));
        PackedInput {
            length: ids.len(),
            ids,
            separator_position: None,
            vocab: self.fingerprint,
        }
    }

    /// `[CLS] context… [SEP] tag…`. The context keeps at most `context_max`
    /// tokens; the tag fills what is left under `max_len`.
    pub fn pack_concat(&self, context: &str, tag: &str, cfg: &PackConfig) -> PackedInput {
        let ctx = self.tokenize(context);
        let tag = self.tokenize(tag);
        let ctx_len = ctx.len().min(cfg.context_max);
        let room = cfg.max_len - 2 - ctx_len;
        let mut ids = Vec::with_capacity(2 + ctx_len + tag.len().min(room));
        ids.push(CLS);
        ids.extend_from_slice(&ctx[..ctx_len]);
        let sep = ids.len();
        ids.push(SEP);
        ids.extend(tag.into_iter().take(room));
        PackedInput {
            length: ids.len(),
            ids,
            separator_position: Some(sep),
            vocab: self.fingerprint,
        }
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        for (i, tok) in self.tokens.iter().enumerate() {
            let line = VocabLine {
                token: tok.clone(),
                id: i as u32,
            };
            serde_json::to_writer(&mut buf, &line).expect("in-memory write");
            buf.push(b'\n');
        }
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let lines = crate::corpus::read_jsonl::<VocabLine>(path)?;
        for (i, line) in lines.iter().enumerate() {
            if line.id as usize != i {
                return Err(Error::Format(format!(
                    "vocabulary ids must be dense from 0; line {} has id {}",
                    i + 1,
                    line.id
                )));
            }
            if i < RESERVED.len() && line.token != RESERVED[i] {
                return Err(Error::Format(format!(
                    "reserved id {i} must be {}, found {:?}",
                    RESERVED[i], line.token
                )));
            }
        }
        if lines.len() < RESERVED.len() {
            return Err(Error::Format("vocabulary lacks reserved entries".into()));
        }
        Vocabulary::from_tokens(lines.into_iter().skip(RESERVED.len()).map(|l| l.token))
    }
}

/// Length limits for packed inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackConfig {
    pub max_len: usize,
    /// Context tokens kept in a concatenated input (CLS and SEP excluded).
    pub context_max: usize,
}

impl PackConfig {
    /// BERT-sized limits: 512 positions, 490 of them for context.
    pub const FULL_LENGTH: PackConfig = PackConfig {
        max_len: 512,
        context_max: 490,
    };

    pub fn new(max_len: usize, context_max: usize) -> Result<Self> {
        if max_len < 3 || context_max + 2 > max_len {
            return Err(Error::InvalidArgument(format!(
                "pack limits need max_len >= 3 and context_max <= max_len - 2 (got {max_len}, {context_max})"
            )));
        }
        Ok(PackConfig {
            max_len,
            context_max,
        })
    }
}

impl Default for PackConfig {
    fn default() -> Self {
        PackConfig {
            max_len: 64,
            context_max: 54,
        }
    }
}

/// Token ids ready for an encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedInput {
    pub ids: Vec<u32>,
    /// Non-PAD positions.
    pub length: usize,
    /// Index of `[SEP]` in concatenated inputs.
    pub separator_position: Option<usize>,
    /// Fingerprint of the vocabulary used for packing.
    pub vocab: u64,
}

impl PackedInput {
    /// Right-pads with `[PAD]` up to `len` positions.
    pub fn padded(mut self, len: usize) -> Self {
        if self.ids.len() < len {
            self.ids.resize(len, PAD);
        }
        self
    }
}
