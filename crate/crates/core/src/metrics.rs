//! Ranking metrics over binary relevance.
//!
//! For a case with gold set of size `R` and `S(K)` gold tags in the top `K`:
//!
//! - recall: `S(K) / R`
//! - R-precision: `S(K) / min(R, K)`
//! - nDCG: `Σ_{k≤K} rel_k / log2(1 + k)` divided by the DCG of an ideal
//!   ranking that places `min(R, K)` gold tags first
//!
//! Each metric is the mean over cases.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Bucket, Example, FrequencyBuckets};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    pub gold: BTreeSet<String>,
    pub ranked: Vec<String>,
}

impl EvalCase {
    pub fn new(gold: BTreeSet<String>, ranked: Vec<String>) -> Result<Self> {
        if gold.is_empty() {
            return Err(Error::InvalidArgument(
                "evaluation case without gold tags".into(),
            ));
        }
        let distinct: BTreeSet<&String> = ranked.iter().collect();
        if distinct.len() != ranked.len() {
            return Err(Error::InvalidArgument("ranking contains duplicates".into()));
        }
        Ok(EvalCase { gold, ranked })
    }

    /// Gold tags within the first `k` ranks.
    pub fn hits_at(&self, k: usize) -> usize {
        self.ranked
            .iter()
            .take(k)
            .filter(|t| self.gold.contains(*t))
            .count()
    }
}

fn mean_over(cases: &[EvalCase], k: usize, per_case: impl Fn(&EvalCase) -> f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if cases.is_empty() {
        return Err(Error::InvalidArgument("no evaluation cases".into()));
    }
    Ok(cases.iter().map(per_case).fold(0.0, |a, b| a + b) / cases.len() as f64)
}

pub fn recall_at_k(cases: &[EvalCase], k: usize) -> Result<f64> {
    mean_over(cases, k, |c| c.hits_at(k) as f64 / c.gold.len() as f64)
}

pub fn r_precision_at_k(cases: &[EvalCase], k: usize) -> Result<f64> {
    mean_over(cases, k, |c| {
        c.hits_at(k) as f64 / c.gold.len().min(k) as f64
    })
}

pub fn ndcg_at_k(cases: &[EvalCase], k: usize) -> Result<f64> {
    mean_over(cases, k, |c| {
        let dcg: f64 = c
            .ranked
            .iter()
            .take(k)
            .enumerate()
            .filter(|(_, t)| c.gold.contains(*t))
            .map(|(i, _)| discount(i + 1))
            .fold(0.0, |a, b| a + b);
        let ideal: f64 = (1..=c.gold.len().min(k))
            .map(discount)
            .fold(0.0, |a, b| a + b);
        dcg / ideal
    })
}

/// `1 / log2(1 + rank)` for a 1-based rank.
#[inline]
fn discount(rank: usize) -> f64 {
    1.0 / ((1 + rank) as f64).log2()
}

/// Anything that produces a ranked tag list for a context.
pub trait Ranker {
    /// Top-`k` tag ids for `text`, best first.
    fn rank(&self, text: &str, k: usize) -> Result<Vec<String>>;

    /// Number of tags this ranker can return.
    fn candidate_count(&self) -> usize;
}

/// Metric values keyed by K.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub recall: BTreeMap<usize, f64>,
    pub rp: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

impl MetricSet {
    pub fn compute(cases: &[EvalCase], ks: &[usize]) -> Result<Self> {
        let mut out = MetricSet::default();
        for &k in ks {
            out.recall.insert(k, recall_at_k(cases, k)?);
            out.rp.insert(k, r_precision_at_k(cases, k)?);
            out.ndcg.insert(k, ndcg_at_k(cases, k)?);
        }
        Ok(out)
    }

    pub fn named(&self) -> [(&'static str, &BTreeMap<usize, f64>); 3] {
        [
            ("recall", &self.recall),
            ("rp", &self.rp),
            ("ndcg", &self.ndcg),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub n: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub system: String,
    pub split: String,
    pub n: usize,
    pub metrics: MetricSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buckets: Option<BTreeMap<String, BucketReport>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable report") + "\n"
    }
}

/// Ranks every example and reports recall, R-precision and nDCG at each K.
///
/// With `buckets`, each bucket's sub-report keeps only the cases whose gold
/// set meets the bucket, with gold restricted to the bucket's tags. K values
/// larger than the ranker's candidate count are clamped and a warning is
/// recorded.
pub fn evaluate(
    ranker: &dyn Ranker,
    system: &str,
    split: &str,
    examples: &[Example],
    ks: &[usize],
    buckets: Option<&FrequencyBuckets>,
) -> Result<MetricReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("K values must be positive".into()));
    }
    let candidates = ranker.candidate_count();
    let mut warnings = Vec::new();
    let max_k = *ks.iter().max().expect("non-empty");
    if max_k > candidates {
        warnings.push(format!(
            "K={max_k} exceeds the {candidates} candidate tags; rankings are clamped"
        ));
    }
    let depth = max_k.min(candidates).max(1);
    let cases = examples
        .iter()
        .map(|ex| {
            EvalCase::new(
                ex.gold_tags.iter().cloned().collect(),
                ranker.rank(&ex.text, depth)?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics = MetricSet::compute(&cases, ks)?;

    let buckets = match buckets {
        None => None,
        Some(b) => {
            let mut out = BTreeMap::new();
            for bucket in Bucket::ALL {
                let members = b.members(bucket);
                let restricted: Vec<EvalCase> = cases
                    .iter()
                    .filter_map(|c| {
                        let gold: BTreeSet<String> =
                            c.gold.intersection(members).cloned().collect();
                        (!gold.is_empty()).then(|| EvalCase {
                            gold,
                            ranked: c.ranked.clone(),
                        })
                    })
                    .collect();
                let metrics = if restricted.is_empty() {
                    MetricSet::default()
                } else {
                    MetricSet::compute(&restricted, ks)?
                };
                out.insert(
                    bucket.name().to_string(),
                    BucketReport {
                        n: restricted.len(),
                        metrics,
                    },
                );
            }
            Some(out)
        }
    };

    Ok(MetricReport {
        system: system.to_string(),
        split: split.to_string(),
        n: cases.len(),
        metrics,
        buckets,
        warnings,
    })
}

/// `metric,K,value,system` rows for K sweeps. Bucket rows use
/// `system:bucket` as the system name.
pub fn sweep_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("metric,K,value,system\n");
    for report in reports {
        let mut emit = |set: &MetricSet, system: &str| {
            for (name, values) in set.named() {
                for (k, v) in values {
                    out.push_str(&format!("{name},{k},{v},{system}\n"));
                }
            }
        };
        emit(&report.metrics, &report.system);
        if let Some(buckets) = &report.buckets {
            for (bucket, sub) in buckets {
                emit(&sub.metrics, &format!("{}:{bucket}", report.system));
            }
        }
    }
    out
}
