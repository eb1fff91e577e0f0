//! Corpora, queries, relevance judgments and training pairs, plus their line-oriented file formats.
//!
//! * corpus: JSONL with `_id`, `title`, `text` (BEIR layout)
//! * queries: JSONL with `_id`, `text`
//! * qrels: TSV `query-id<TAB>doc-id<TAB>grade`, optional header line starting with `query`
//! * triplets: JSONL with `query`, `positive`, optional `negative`
//! * STS pairs: JSONL with `sentence1`, `sentence2`, `score` in `[0, 5]`

mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub use synth::{synth_nli_triplets, synth_retrieval_dataset, synth_sts_pairs, SynthDataset};

/// Upper end of the raw STS gold scale; scores are divided by this on ingestion.
pub const STS_SCORE_MAX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "_id")]
    pub id: String,
    pub title: String,
    pub text: String,
}

impl Document {
    /// Text fed to the encoder: title, one space, body.
    pub fn encoder_text(&self) -> String {
        format!("{} {}", self.title, self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(rename = "_id")]
    pub id: String,
    pub text: String,
}

/// Documents in insertion order with an id index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a document; fails on an empty or repeated id.
    pub fn push(&mut self, doc: Document) -> Result<()> {
        if doc.id.is_empty() {
            return Err(Error::InvalidArgument("document id must be non-empty".into()));
        }
        if self.index.contains_key(&doc.id) {
            return Err(Error::DuplicateId {
                id: doc.id,
                line: self.docs.len() + 1,
            });
        }
        self.index.insert(doc.id.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.docs[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.id.as_str())
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.docs)
    }
}

/// query-id → doc-id → grade. Grades are non-negative; `> 0` means relevant.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels(BTreeMap<String, BTreeMap<String, u32>>);

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a judgment, replacing any previous grade for the pair.
    pub fn insert(&mut self, query: impl Into<String>, doc: impl Into<String>, grade: u32) {
        self.0.entry(query.into()).or_default().insert(doc.into(), grade);
    }

    pub fn get(&self, query: &str) -> Option<&BTreeMap<String, u32>> {
        self.0.get(query)
    }

    pub fn grade(&self, query: &str, doc: &str) -> u32 {
        self.0
            .get(query)
            .and_then(|m| m.get(doc))
            .copied()
            .unwrap_or(0)
    }

    pub fn num_queries(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeMap<String, u32>)> {
        self.0.iter()
    }

    /// Number of documents with a positive grade for `query`.
    pub fn num_relevant(&self, query: &str) -> usize {
        self.0
            .get(query)
            .map_or(0, |m| m.values().filter(|&&g| g > 0).count())
    }

    /// Queries whose judgments are all zero; they are kept but skipped by the metrics.
    pub fn flagged_queries(&self) -> Vec<&str> {
        self.0
            .iter()
            .filter(|(_, docs)| docs.values().all(|&g| g == 0))
            .map(|(q, _)| q.as_str())
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("query-id\tcorpus-id\tscore\n");
        for (q, docs) in &self.0 {
            for (d, g) in docs {
                out.push_str(&format!("{q}\t{d}\t{g}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    #[serde(rename = "query")]
    pub anchor: String,
    pub positive: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub negative: Option<String>,
}

pub type TripletSet = Vec<Triplet>;

/// Sentence pair with a gold similarity already rescaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub sentence_a: String,
    pub sentence_b: String,
    pub gold_score: f64,
}

/// STS pairs together with the divisor applied to the raw scores.
#[derive(Debug, Clone, PartialEq)]
pub struct StsDataset {
    pub pairs: Vec<ScoredPair>,
    pub rescale_divisor: f64,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with 1-based line numbers, trailing `\r` removed.
fn lines(input: &str) -> impl Iterator<Item = (usize, &str)> {
    input
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn json_object(line_no: usize, line: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::parse(line_no, "expected a JSON object")),
        Err(e) => Err(Error::parse(line_no, format!("malformed JSON: {e}"))),
    }
}

fn string_field(map: &Map<String, Value>, key: &str, line: usize) -> Result<Option<String>> {
    match map.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(Error::parse(line, format!("field {key} must be a string"))),
    }
}

fn required(map: &Map<String, Value>, key: &str, line: usize) -> Result<String> {
    string_field(map, key, line)?.ok_or_else(|| Error::parse(line, format!("missing field {key}")))
}

pub fn corpus_from_str(input: &str) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    for (line, text) in lines(input) {
        let map = json_object(line, text)?;
        let id = required(&map, "_id", line)?;
        if id.is_empty() {
            return Err(Error::parse(line, "empty _id"));
        }
        let doc = Document {
            title: string_field(&map, "title", line)?.unwrap_or_default(),
            text: required(&map, "text", line)?,
            id,
        };
        if corpus.contains(&doc.id) {
            return Err(Error::DuplicateId { id: doc.id, line });
        }
        corpus.push(doc)?;
    }
    Ok(corpus)
}

pub fn parse_corpus(path: &Path) -> Result<Corpus> {
    corpus_from_str(&read(path)?)
}

pub fn queries_from_str(input: &str) -> Result<Vec<Query>> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for (line, text) in lines(input) {
        let map = json_object(line, text)?;
        let id = required(&map, "_id", line)?;
        if id.is_empty() {
            return Err(Error::parse(line, "empty _id"));
        }
        if seen.insert(id.clone(), line).is_some() {
            return Err(Error::DuplicateId { id, line });
        }
        out.push(Query {
            text: required(&map, "text", line)?,
            id,
        });
    }
    Ok(out)
}

pub fn parse_queries(path: &Path) -> Result<Vec<Query>> {
    queries_from_str(&read(path)?)
}

pub fn qrels_from_str(input: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (line, text) in lines(input) {
        if line == 1 && text.starts_with("query") {
            continue;
        }
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::parse(
                line,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let grade: u32 = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line, format!("grade {:?} is not a non-negative integer", fields[2])))?;
        qrels.insert(fields[0], fields[1], grade);
    }
    Ok(qrels)
}

pub fn parse_qrels(path: &Path) -> Result<Qrels> {
    qrels_from_str(&read(path)?)
}

pub fn triplets_from_str(input: &str) -> Result<TripletSet> {
    let mut out = Vec::new();
    for (line, text) in lines(input) {
        let map = json_object(line, text)?;
        let anchor = required(&map, "query", line)?;
        let positive = required(&map, "positive", line)?;
        let negative = string_field(&map, "negative", line)?;
        if anchor.is_empty() || positive.is_empty() {
            return Err(Error::parse(line, "query and positive must be non-empty"));
        }
        if negative.as_deref() == Some("") {
            return Err(Error::parse(line, "negative, when present, must be non-empty"));
        }
        out.push(Triplet {
            anchor,
            positive,
            negative,
        });
    }
    Ok(out)
}

pub fn parse_triplets(path: &Path) -> Result<TripletSet> {
    triplets_from_str(&read(path)?)
}

pub fn sts_from_str(input: &str) -> Result<StsDataset> {
    let mut pairs = Vec::new();
    for (line, text) in lines(input) {
        let map = json_object(line, text)?;
        let sentence_a = required(&map, "sentence1", line)?;
        let sentence_b = required(&map, "sentence2", line)?;
        let score = map
            .get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::parse(line, "missing field score"))?;
        if !score.is_finite() || !(0.0..=STS_SCORE_MAX).contains(&score) {
            return Err(Error::parse(line, format!("score {score} outside [0, 5]")));
        }
        pairs.push(ScoredPair {
            sentence_a,
            sentence_b,
            gold_score: score / STS_SCORE_MAX,
        });
    }
    Ok(StsDataset {
        pairs,
        rescale_divisor: STS_SCORE_MAX,
    })
}

pub fn parse_sts_pairs(path: &Path) -> Result<StsDataset> {
    sts_from_str(&read(path)?)
}

/// One JSON object per line, each line newline-terminated.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable record"));
        out.push('\n');
    }
    out
}

/// Serializes pairs back to the raw `[0, 5]` STS scale.
pub fn sts_to_jsonl(pairs: &[ScoredPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let v = serde_json::json!({
            "sentence1": p.sentence_a,
            "sentence2": p.sentence_b,
            "score": p.gold_score * STS_SCORE_MAX,
        });
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}
