//! Exhaustive dense index over tag-tower embeddings.
//!
//! Index file layout (little-endian): `"TAGI" | version: u32 | n_tags: u32 |
//! width: u32 | score_scale: f64 | provenance (u32 length + utf-8) | tag ids
//! (u32 length + utf-8 each) | n_tags × width f64 matrix`. The provenance is
//! the content hash of the checkpoint the embeddings came from.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::biencoder::BiEncoder;
use crate::checkpoint::{put_f64s, put_str, Reader};
use crate::corpus::TagLabel;
use crate::encoder::{dot, Embedding};
use crate::error::{Error, Result};
use crate::metrics::Ranker;
use crate::rank_order;

pub const INDEX_MAGIC: [u8; 4] = *b"TAGI";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TagIndex {
    ids: Vec<String>,
    width: usize,
    matrix: Vec<f64>,
    score_scale: f64,
    provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query: Embedding,
    /// `(tag id, score)`, best first.
    pub hits: Vec<(String, f64)>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<String> {
        self.hits.iter().map(|(id, _)| id.clone()).collect()
    }
}

/// Embeds every tag text with the tag tower.
pub fn build_index(
    model: &BiEncoder,
    tags: &[TagLabel],
    provenance: impl Into<String>,
) -> Result<TagIndex> {
    if tags.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot index an empty tag list".into(),
        ));
    }
    let width = model.width();
    let mut matrix = Vec::with_capacity(tags.len() * width);
    for tag in tags {
        matrix.extend(model.embed_tag(&tag.text)?.0);
    }
    TagIndex::from_parts(
        tags.iter().map(|t| t.id.clone()).collect(),
        width,
        matrix,
        model.score_scale,
        provenance.into(),
    )
}

impl TagIndex {
    pub fn from_parts(
        ids: Vec<String>,
        width: usize,
        matrix: Vec<f64>,
        score_scale: f64,
        provenance: String,
    ) -> Result<Self> {
        if matrix.len() != ids.len() * width {
            return Err(Error::ShapeMismatch(format!(
                "matrix has {} values for {} tags of width {width}",
                matrix.len(),
                ids.len()
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite tag embedding".into()));
        }
        Ok(TagIndex {
            ids,
            width,
            matrix,
            score_scale,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.width..(i + 1) * self.width]
    }

    /// Scaled scores against every tag, in index order.
    pub fn scores(&self, query: &Embedding) -> Result<Vec<f64>> {
        if query.0.len() != self.width {
            return Err(Error::ShapeMismatch(format!(
                "query width {} != index width {}",
                query.0.len(),
                self.width
            )));
        }
        Ok((0..self.ids.len())
            .map(|i| self.score_scale * dot(self.embedding(i), &query.0))
            .collect())
    }

    /// Exact top-`k` by score, ties broken by ascending tag id.
    pub fn retrieve_topk(&self, query: &Embedding, k: usize) -> Result<RetrievalResult> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let mut hits: Vec<(String, f64)> =
            self.ids.iter().cloned().zip(self.scores(query)?).collect();
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, rank_order);
            hits.truncate(k);
        }
        hits.sort_by(rank_order);
        Ok(RetrievalResult {
            query: query.clone(),
            hits,
        })
    }

    /// Tags whose relevance probability `σ(score)` is at least `tau`.
    pub fn retrieve_threshold(&self, query: &Embedding, tau: f64) -> Result<BTreeSet<String>> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold {tau} outside (0, 1)"
            )));
        }
        // σ(s) ≥ τ  ⇔  s ≥ ln(τ / (1 - τ))
        let logit = (tau / (1.0 - tau)).ln();
        Ok(self
            .ids
            .iter()
            .zip(self.scores(query)?)
            .filter(|(_, s)| *s >= logit)
            .map(|(id, _)| id.clone())
            .collect())
    }

    /// Fails when the index was built from a different checkpoint.
    pub fn check_fresh(&self, checkpoint_hash: &str) -> Result<()> {
        if self.provenance != checkpoint_hash {
            return Err(Error::Stale(format!(
                "index was built from checkpoint {} but the model hashes to {}; \
                 rebuild the index from the current checkpoint",
                short(&self.provenance),
                short(checkpoint_hash)
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.matrix.len() * 8);
        out.extend_from_slice(&INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        put_f64s(&mut out, &[self.score_scale]);
        put_str(&mut out, &self.provenance);
        for id in &self.ids {
            put_str(&mut out, id);
        }
        put_f64s(&mut out, &self.matrix);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != INDEX_MAGIC {
            return Err(Error::Format("bad index magic, expected TAGI".into()));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::Format(format!(
                "unsupported index version {version}"
            )));
        }
        let n = r.u32()? as usize;
        let width = r.u32()? as usize;
        let score_scale = r.f64()?;
        let provenance = r.string()?;
        let ids = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        let matrix = r.f64s(n * width)?;
        r.finish()?;
        TagIndex::from_parts(ids, width, matrix, score_scale, provenance)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<Vec<u8>> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        TagIndex::from_bytes(&bytes)
    }
}

/// Ranks tags for a context with the context tower and a prebuilt index.
pub struct DenseRanker<'a> {
    pub model: &'a BiEncoder,
    pub index: &'a TagIndex,
}

impl Ranker for DenseRanker<'_> {
    fn rank(&self, text: &str, k: usize) -> Result<Vec<String>> {
        let query = self.model.embed_context(text)?;
        Ok(self.index.retrieve_topk(&query, k)?.ids())
    }

    fn candidate_count(&self) -> usize {
        self.index.len()
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(rows: &[[f64; 2]]) -> TagIndex {
        TagIndex::from_parts(
            (0..rows.len()).map(|i| format!("t{i:02}")).collect(),
            2,
            rows.concat(),
            1.0,
            "abc".into(),
        )
        .unwrap()
    }

    #[test]
    fn self_similarity_wins() {
        let idx = index(&[[0.1, 0.2], [0.9, -0.4], [-0.5, 0.5]]);
        let q = Embedding(vec![0.9, -0.4]);
        let r = idx.retrieve_topk(&q, 1).unwrap();
        assert_eq!(r.hits[0].0, "t01");
        let all = idx.retrieve_topk(&q, 10).unwrap();
        assert_eq!(all.hits.len(), 3);
        assert!(idx.retrieve_topk(&q, 0).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let idx = index(&[[1.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]);
        let r = idx.retrieve_topk(&Embedding(vec![1.0, 1.0]), 3).unwrap();
        assert_eq!(r.ids(), vec!["t00", "t02", "t01"]);
    }

    #[test]
    fn threshold_rules() {
        let idx = index(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]]);
        let q = Embedding(vec![0.5, 0.0]);
        let half = idx.retrieve_threshold(&q, 0.5).unwrap();
        assert_eq!(half, BTreeSet::from(["t00".to_string(), "t02".to_string()]));
        assert!(idx.retrieve_threshold(&q, 0.999999).unwrap().is_empty());
        assert!(idx.retrieve_threshold(&q, 1.0).is_err());
        assert!(idx.retrieve_threshold(&q, 0.0).is_err());
    }

    #[test]
    fn file_round_trip_and_staleness() {
        let idx = index(&[[0.25, -0.75], [1.0 / 3.0, 0.0]]);
        let back = TagIndex::from_bytes(&idx.to_bytes()).unwrap();
        assert_eq!(back, idx);
        assert!(back.check_fresh("abc").is_ok());
        assert!(matches!(back.check_fresh("abd"), Err(Error::Stale(_))));
        let mut bad = idx.to_bytes();
        bad[0] = b'X';
        assert!(TagIndex::from_bytes(&bad).is_err());
    }
}
