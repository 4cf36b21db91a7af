//! Datasets: tag vocabulary, labelled examples, named splits.
//!
//! On disk a corpus is a directory holding `train.jsonl`, `validation.jsonl`,
//! `test.jsonl` (each optional except train) and an optional `tags.jsonl`
//! defining tag texts. Example lines look like
//! `{"id":"q1","text":"Heat flows from hot to cold.","tags":["t3","t7"]}`,
//! tag lines like `{"id":"t3","text":"science >> heat"}`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TAGS_FILE: &str = "tags.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagLabel {
    pub id: String,
    pub text: String,
}

/// A context with its gold tag ids. Tag order is preserved from the source
/// file; duplicates are removed at load time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    #[serde(rename = "tags")]
    pub gold_tags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.name())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }
}

/// Validated, immutable dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    tags: Vec<TagLabel>,
    tag_pos: HashMap<String, usize>,
    splits: BTreeMap<Split, Vec<Example>>,
}

impl Corpus {
    /// Validates and assembles a corpus. Tags referenced by examples but
    /// missing from `tags` are appended with their id as text.
    pub fn new(tags: Vec<TagLabel>, splits: BTreeMap<Split, Vec<Example>>) -> Result<Self> {
        let mut tag_pos = HashMap::with_capacity(tags.len());
        for (i, tag) in tags.iter().enumerate() {
            if tag.text.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "tag {:?} has empty text",
                    tag.id
                )));
            }
            if tag_pos.insert(tag.id.clone(), i).is_some() {
                return Err(Error::DuplicateTag(tag.id.clone()));
            }
        }
        let mut corpus = Corpus {
            tags,
            tag_pos,
            splits: BTreeMap::new(),
        };
        for split in Split::ALL {
            let mut examples = splits.get(&split).cloned().unwrap_or_default();
            let mut seen = HashSet::with_capacity(examples.len());
            for ex in &mut examples {
                if !seen.insert(ex.id.clone()) {
                    return Err(Error::DuplicateExample {
                        split: split.to_string(),
                        id: ex.id.clone(),
                    });
                }
                dedup_in_place(&mut ex.gold_tags);
                if ex.gold_tags.is_empty() {
                    return Err(Error::EmptyTags {
                        split: split.to_string(),
                        id: ex.id.clone(),
                    });
                }
                for tag in &ex.gold_tags {
                    corpus.register_implicit(tag);
                }
            }
            corpus.splits.insert(split, examples);
        }
        Ok(corpus)
    }

    fn register_implicit(&mut self, id: &str) {
        if !self.tag_pos.contains_key(id) {
            self.tag_pos.insert(id.to_string(), self.tags.len());
            self.tags.push(TagLabel {
                id: id.to_string(),
                text: id.to_string(),
            });
        }
    }

    /// Loads a single example file as the train split. A `tags.jsonl` next to
    /// it, if present, supplies tag texts.
    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let train = read_jsonl::<Example>(path)?;
        let tags = match path.parent().map(|p| p.join(TAGS_FILE)) {
            Some(tags_path) if tags_path.is_file() && tags_path != path => {
                read_jsonl::<TagLabel>(&tags_path)?
            }
            _ => Vec::new(),
        };
        Corpus::new(tags, BTreeMap::from([(Split::Train, train)]))
    }

    /// Loads the split layout from a directory. `train.jsonl` is required.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            let path = dir.join(split.file_name());
            if path.is_file() {
                splits.insert(split, read_jsonl::<Example>(&path)?);
            } else if split == Split::Train {
                return Err(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "missing train split"),
                ));
            }
        }
        let tags_path = dir.join(TAGS_FILE);
        let tags = if tags_path.is_file() {
            read_jsonl::<TagLabel>(&tags_path)?
        } else {
            Vec::new()
        };
        Corpus::new(tags, splits)
    }

    /// Writes the directory layout read by [`Corpus::load_dir`]. Empty
    /// validation/test splits are still written as empty files.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(TAGS_FILE), &self.tags)?;
        for (split, examples) in &self.splits {
            write_jsonl(&dir.join(split.file_name()), examples)?;
        }
        Ok(())
    }

    pub fn tags(&self) -> &[TagLabel] {
        &self.tags
    }

    pub fn tag(&self, id: &str) -> Option<&TagLabel> {
        self.tag_pos.get(id).map(|&i| &self.tags[i])
    }

    /// Position of a tag in [`Corpus::tags`].
    pub fn tag_position(&self, id: &str) -> Option<usize> {
        self.tag_pos.get(id).copied()
    }

    pub fn split(&self, split: Split) -> &[Example] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn train(&self) -> &[Example] {
        self.split(Split::Train)
    }

    /// Mean gold-set size over a split, 0 when empty.
    pub fn mean_gold_size(&self, split: Split) -> f64 {
        let examples = self.split(split);
        if examples.is_empty() {
            return 0.0;
        }
        let total: usize = examples.iter().map(|e| e.gold_tags.len()).sum();
        total as f64 / examples.len() as f64
    }

    /// Number of train examples carrying each tag, in vocabulary order.
    pub fn train_occurrences(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.tags.len()];
        for ex in self.train() {
            for tag in &ex.gold_tags {
                counts[self.tag_pos[tag]] += 1;
            }
        }
        counts
    }

    /// Partitions the tag vocabulary by train occurrence: more than
    /// `threshold` is frequent, 1..=threshold is few, 0 is zero.
    pub fn bucket_tags(&self, threshold: usize) -> Result<FrequencyBuckets> {
        if threshold == 0 {
            return Err(Error::InvalidArgument(
                "bucket threshold must be positive".into(),
            ));
        }
        if self.train().is_empty() {
            return Err(Error::EmptyTrainSplit);
        }
        let mut buckets = FrequencyBuckets {
            threshold,
            frequent: BTreeSet::new(),
            few: BTreeSet::new(),
            zero: BTreeSet::new(),
        };
        for (tag, count) in self.tags.iter().zip(self.train_occurrences()) {
            let set = match count {
                0 => &mut buckets.zero,
                c if c > threshold => &mut buckets.frequent,
                _ => &mut buckets.few,
            };
            set.insert(tag.id.clone());
        }
        Ok(buckets)
    }

    /// Keeps one uniformly sampled gold tag per train example. Validation and
    /// test splits are left multi-label.
    pub fn to_single_label(&self, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        if let Some(train) = out.splits.get_mut(&Split::Train) {
            for ex in train.iter_mut() {
                let keep = ex
                    .gold_tags
                    .choose(&mut rng)
                    .expect("validated non-empty")
                    .clone();
                ex.gold_tags = vec![keep];
            }
        }
        out
    }

    /// Replaces one split, revalidating the result.
    pub fn with_split(&self, split: Split, examples: Vec<Example>) -> Result<Corpus> {
        let mut splits = self.splits.clone();
        splits.insert(split, examples);
        Corpus::new(self.tags.clone(), splits)
    }
}

/// Train-frequency partition of the tag vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrequencyBuckets {
    pub threshold: usize,
    pub frequent: BTreeSet<String>,
    pub few: BTreeSet<String>,
    pub zero: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bucket {
    Frequent,
    Few,
    Zero,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Frequent, Bucket::Few, Bucket::Zero];

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Frequent => "frequent",
            Bucket::Few => "few",
            Bucket::Zero => "zero",
        }
    }
}

impl FrequencyBuckets {
    pub fn members(&self, bucket: Bucket) -> &BTreeSet<String> {
        match bucket {
            Bucket::Frequent => &self.frequent,
            Bucket::Few => &self.few,
            Bucket::Zero => &self.zero,
        }
    }

    pub fn bucket_of(&self, tag: &str) -> Option<Bucket> {
        Bucket::ALL
            .into_iter()
            .find(|&b| self.members(b).contains(tag))
    }
}

/// Threshold used when none is given: 50 for corpora with at least 1,000
/// train examples, 5 below that.
pub fn default_bucket_threshold(train_examples: usize) -> usize {
    if train_examples >= 1000 {
        50
    } else {
        5
    }
}

fn dedup_in_place(ids: &mut Vec<String>) {
    let mut seen = HashSet::with_capacity(ids.len());
    ids.retain(|id| seen.insert(id.clone()));
}

/// Reads one JSON object per non-blank line, reporting 1-based line numbers.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: &str, tags: &[&str]) -> Example {
        Example {
            id: id.into(),
            text: format!("text of {id}"),
            gold_tags: tags.iter().map(|t| t.to_string()).collect(),
        }
    }

    fn corpus_with_train(train: Vec<Example>) -> Corpus {
        Corpus::new(Vec::new(), BTreeMap::from([(Split::Train, train)])).unwrap()
    }

    #[test]
    fn loads_three_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        fs::write(
            &path,
            concat!(
                "{\"id\":\"a\",\"text\":\"Heat flows.\",\"tags\":[\"t1\"]}\n",
                "{\"id\":\"b\",\"text\":\"Cold air.\",\"tags\":[\"t1\",\"t2\"]}\n",
                "{\"id\":\"c\",\"text\":\"Water.\",\"tags\":[\"t3\"]}\n",
            ),
        )
        .unwrap();
        let corpus = Corpus::load_jsonl(&path).unwrap();
        assert_eq!(corpus.train().len(), 3);
        assert_eq!(corpus.tags().len(), 3);
    }

    #[test]
    fn missing_tags_key_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        fs::write(
            &path,
            "{\"id\":\"a\",\"text\":\"x\",\"tags\":[\"t1\"]}\n{\"id\":\"b\",\"text\":\"y\"}\n",
        )
        .unwrap();
        match Corpus::load_jsonl(&path) {
            Err(Error::MalformedLine { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("tags"), "{message}");
            }
            other => panic!("expected malformed line error, got {other:?}"),
        }
    }

    #[test]
    fn undefined_tag_gets_id_as_text() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("tags.jsonl"),
            "{\"id\":\"t1\",\"text\":\"science >> heat\"}\n",
        )
        .unwrap();
        let path = dir.path().join("train.jsonl");
        fs::write(
            &path,
            "{\"id\":\"a\",\"text\":\"x\",\"tags\":[\"t1\",\"t9\"]}\n",
        )
        .unwrap();
        let corpus = Corpus::load_jsonl(&path).unwrap();
        assert_eq!(corpus.tag("t1").unwrap().text, "science >> heat");
        assert_eq!(corpus.tag("t9").unwrap().text, "t9");
    }

    #[test]
    fn rejects_duplicates_and_empty_tags() {
        let dup = Corpus::new(
            Vec::new(),
            BTreeMap::from([(Split::Train, vec![ex("a", &["t"]), ex("a", &["u"])])]),
        );
        assert!(matches!(dup, Err(Error::DuplicateExample { .. })));
        let empty = Corpus::new(
            Vec::new(),
            BTreeMap::from([(Split::Train, vec![ex("a", &[])])]),
        );
        assert!(matches!(empty, Err(Error::EmptyTags { .. })));
        // same id across splits is fine
        let ok = Corpus::new(
            Vec::new(),
            BTreeMap::from([
                (Split::Train, vec![ex("a", &["t"])]),
                (Split::Test, vec![ex("a", &["t"])]),
            ]),
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn bucket_boundaries() {
        let mut train: Vec<Example> = (0..51).map(|i| ex(&format!("f{i}"), &["hot"])).collect();
        train.extend((0..50).map(|i| ex(&format!("b{i}"), &["edge"])));
        let tags = vec![TagLabel {
            id: "never".into(),
            text: "never seen".into(),
        }];
        let corpus = Corpus::new(tags, BTreeMap::from([(Split::Train, train)])).unwrap();
        let buckets = corpus.bucket_tags(50).unwrap();
        assert!(buckets.frequent.contains("hot"));
        assert!(buckets.few.contains("edge"));
        assert!(buckets.zero.contains("never"));
        assert!(corpus.bucket_tags(0).is_err());
    }

    #[test]
    fn occurrence_counts_membership_once() {
        let corpus = corpus_with_train(vec![ex("a", &["t", "t", "u"]), ex("b", &["t"])]);
        assert_eq!(corpus.train()[0].gold_tags, vec!["t", "u"]);
        let buckets = corpus.bucket_tags(1).unwrap();
        assert!(buckets.frequent.contains("t"));
        assert!(buckets.few.contains("u"));
    }

    #[test]
    fn single_label_sampling() {
        let train = vec![
            ex("a", &["a"]),
            ex("b", &["a", "b", "c"]),
            ex("c", &["b", "c"]),
        ];
        let test = vec![ex("x", &["a", "b", "c"])];
        let corpus = Corpus::new(
            Vec::new(),
            BTreeMap::from([(Split::Train, train), (Split::Test, test)]),
        )
        .unwrap();
        let single = corpus.to_single_label(11);
        assert_eq!(single.train()[0].gold_tags, vec!["a"]);
        let picked = &single.train()[1].gold_tags;
        assert_eq!(picked.len(), 1);
        assert!(["a", "b", "c"].contains(&picked[0].as_str()));
        assert_eq!(single, corpus.to_single_label(11));
        assert_eq!(single.mean_gold_size(Split::Train), 1.0);
        assert_eq!(single.mean_gold_size(Split::Test), 3.0);
        assert_eq!(single.to_single_label(11), single);
    }

    #[test]
    fn split_names_parse() {
        assert_eq!("validation".parse::<Split>().unwrap(), Split::Validation);
        assert!("holdout".parse::<Split>().is_err());
    }
}
