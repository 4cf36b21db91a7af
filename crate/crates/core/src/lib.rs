//! Dense-retrieval auto-tagging.
//!
//! Tags are retrieved rather than classified: a context tower and a tag tower
//! embed text into a shared space and tags are ranked by dot product. Training
//! uses in-batch negatives with a binary cross-entropy objective and can add
//! cross-encoding augmentation rows (context and tag concatenated, scored
//! against the literal tag text `"is relevant"`). The tag tower can be
//! warm-started from a question/passage matching stage.
//!
//! Module map:
//!
//! - [`corpus`]: JSONL datasets, tag vocabulary, frequency buckets
//! - [`textproc`]: word-level tokenizer and input packing
//! - [`encoder`]: one-layer self-attention encoder with analytic gradients
//! - [`biencoder`]: scoring, batch construction, loss, Adam training
//! - [`baselines`]: BM25 over tag text and a closed-set classifier
//! - [`index`]: exhaustive dense tag index
//! - [`metrics`]: R@K, RP@K, nDCG@K and bucketed reports
//! - [`synth`]: seeded synthetic corpora
//! - [`checkpoint`]: binary container shared by all model artifacts

pub mod baselines;
pub mod biencoder;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
mod error;
pub mod index;
pub mod metrics;
mod optim;
pub mod synth;
pub mod textproc;

pub use error::{Error, Result};

/// Hex-encoded SHA-256 of a byte slice.
pub fn content_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Ranking order for `(id, score)` pairs: descending score, then ascending
/// id. Signed zeros compare equal so they fall through to the id.
pub fn rank_order(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    (b.1 + 0.0)
        .total_cmp(&(a.1 + 0.0))
        .then_with(|| a.0.cmp(&b.0))
}

/// Logistic sigmoid.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
