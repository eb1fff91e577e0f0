//! Deterministic synthetic data for desk-scale experiments.
//!
//! Every topic owns a disjoint keyword vocabulary and a disjoint set of "surface" words, and its
//! documents are split into subtopics of five, each with three entity words of its own. A query
//! is relevant to the documents of one subtopic: it carries two of that subtopic's entity words
//! and one topic keyword, but the surface words of topic `t + 1`, so a purely lexical matcher
//! prefers the wrong topic. Training triplets come from separately sampled queries, pairing each
//! with every relevant document and a negative from the lexically confusable neighbour topic,
//! which is the hard-negative structure of passage-ranking training data.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Document, Qrels, Query, ScoredPair, Triplet, TripletSet, STS_SCORE_MAX};
use crate::error::{Error, Result};

const KEYWORDS_PER_TOPIC: usize = 8;
const SURFACE_PER_TOPIC: usize = 6;
const FILLER_WORDS: usize = 40;
pub const DOCS_PER_SUBTOPIC: usize = 5;
const ENTITIES_PER_SUBTOPIC: usize = 3;
/// Training queries sampled per subtopic for the triplet set.
pub const TRAIN_QUERIES_PER_SUBTOPIC: usize = 2;

const CONSONANTS: &[&str] = &[
    "b", "c", "ç", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "ş", "t", "v", "y", "z",
];
const VOWELS: &[&str] = &["a", "e", "ı", "i", "o", "ö", "u", "ü"];
const SUFFIXES: &[&str] = &["", "", "ler", "lar", "de", "da", "nin", "ın", "i", "yor", "miş", "den"];

// Independent random streams derived from one seed.
const STREAM_VOCAB: u64 = 1;
const STREAM_RETRIEVAL: u64 = 2;
const STREAM_NLI: u64 = 3;
const STREAM_STS: u64 = 4;
const STREAM_ENTITIES: u64 = 5;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Output of [`synth_retrieval_dataset`].
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub corpus: Corpus,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
    pub triplets: TripletSet,
    /// Keyword vocabulary of each topic, in topic order.
    pub topic_keywords: Vec<Vec<String>>,
    /// Surface vocabulary of each topic, in topic order.
    pub topic_surface: Vec<Vec<String>>,
    /// Entity words per topic, per subtopic.
    pub subtopic_entities: Vec<Vec<Vec<String>>>,
    /// Shared filler stems used by every topic.
    pub filler: Vec<String>,
}

struct Vocabulary {
    keywords: Vec<Vec<String>>,
    surface: Vec<Vec<String>>,
    filler: Vec<String>,
    used: BTreeSet<String>,
}

impl Vocabulary {
    fn new(seed: u64, n_topics: usize) -> Self {
        let mut rng = rng_for(seed, STREAM_VOCAB);
        let mut v = Self {
            keywords: Vec::new(),
            surface: Vec::new(),
            filler: Vec::new(),
            used: BTreeSet::new(),
        };
        v.filler = v.fresh(&mut rng, FILLER_WORDS);
        v.keywords = (0..n_topics).map(|_| v.fresh(&mut rng, KEYWORDS_PER_TOPIC)).collect();
        v.surface = (0..n_topics).map(|_| v.fresh(&mut rng, SURFACE_PER_TOPIC)).collect();
        v
    }

    /// `n` new words, none a prefix of (or prefixed by) any word handed out before.
    fn fresh(&mut self, rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let w = pseudo_word(rng);
            // Suffixed filler forms must never coincide with a topic word either.
            if SUFFIXES.iter().all(|s| !self.used.contains(&format!("{w}{s}")))
                && self.used.iter().all(|u| !u.starts_with(&w) && !w.starts_with(u.as_str()))
            {
                self.used.insert(w.clone());
                out.push(w);
            }
        }
        out
    }

    fn filler_word(&self, rng: &mut ChaCha8Rng) -> String {
        let stem = self.filler.choose(rng).expect("non-empty filler");
        let suffix = SUFFIXES.choose(rng).expect("non-empty suffixes");
        format!("{stem}{suffix}")
    }
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(CONSONANTS.choose(rng).unwrap());
        w.push_str(VOWELS.choose(rng).unwrap());
        if rng.gen_bool(0.3) {
            w.push_str(CONSONANTS.choose(rng).unwrap());
        }
    }
    w
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &'a [String], n: usize) -> Vec<&'a String> {
    words.choose_multiple(rng, n).collect()
}

fn sentence(rng: &mut ChaCha8Rng, mut words: Vec<String>) -> String {
    words.shuffle(rng);
    words.join(" ")
}

fn check_counts(counts: &[(&str, usize)]) -> Result<()> {
    for (name, n) in counts {
        if *n < 1 {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
    }
    Ok(())
}

/// Two entity words, one topic keyword, four surface words of the neighbour topic and a filler.
fn query_text(vocab: &Vocabulary, rng: &mut ChaCha8Rng, entities: &[String], topic: usize, decoy: usize) -> String {
    let mut words: Vec<String> = pick(rng, entities, 2).into_iter().cloned().collect();
    words.push(vocab.keywords[topic].choose(rng).unwrap().clone());
    if decoy != topic {
        words.extend(pick(rng, &vocab.surface[decoy], 4).into_iter().cloned());
    }
    words.push(vocab.filler_word(rng));
    sentence(rng, words)
}

/// Builds a topic-structured retrieval dataset.
///
/// Document `i` of a topic belongs to subtopic `i / 5`; query `j` targets subtopic
/// `j % subtopics`, and is relevant (grade 1) to exactly the documents of that subtopic. Fully
/// determined by the arguments.
pub fn synth_retrieval_dataset(
    seed: u64,
    n_topics: usize,
    docs_per_topic: usize,
    queries_per_topic: usize,
) -> Result<SynthDataset> {
    check_counts(&[
        ("n_topics", n_topics),
        ("docs_per_topic", docs_per_topic),
        ("queries_per_topic", queries_per_topic),
    ])?;
    let mut vocab = Vocabulary::new(seed, n_topics);
    let n_sub = docs_per_topic.div_ceil(DOCS_PER_SUBTOPIC);
    let mut entity_rng = rng_for(seed, STREAM_ENTITIES);
    let entities: Vec<Vec<Vec<String>>> = (0..n_topics)
        .map(|_| (0..n_sub).map(|_| vocab.fresh(&mut entity_rng, ENTITIES_PER_SUBTOPIC)).collect())
        .collect();
    let mut rng = rng_for(seed, STREAM_RETRIEVAL);

    let mut corpus = Corpus::new();
    // topic -> subtopic -> corpus positions
    let mut members: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); n_sub]; n_topics];
    for t in 0..n_topics {
        let kw = &vocab.keywords[t];
        for i in 0..docs_per_topic {
            let sub = i / DOCS_PER_SUBTOPIC;
            let title = format!("{} {}", kw.choose(&mut rng).unwrap(), vocab.filler_word(&mut rng));
            let mut words = vec![kw[0].clone()];
            words.extend(pick(&mut rng, &kw[1..], 1).into_iter().cloned());
            words.extend(pick(&mut rng, &entities[t][sub], 2).into_iter().cloned());
            words.extend(pick(&mut rng, &vocab.surface[t], 4).into_iter().cloned());
            words.extend((0..4).map(|_| vocab.filler_word(&mut rng)));
            let text = sentence(&mut rng, words);
            members[t][sub].push(corpus.len());
            corpus.push(Document {
                id: format!("t{t:02}-d{i:04}"),
                title,
                text,
            })?;
        }
    }
    let all_in_topic = |t: usize| -> Vec<usize> { members[t].iter().flatten().copied().collect() };

    let mut queries = Vec::new();
    let mut qrels = Qrels::new();
    for t in 0..n_topics {
        let decoy = (t + 1) % n_topics;
        for j in 0..queries_per_topic {
            let sub = j % n_sub;
            let query = Query {
                id: format!("t{t:02}-q{j:04}"),
                text: query_text(&vocab, &mut rng, &entities[t][sub], t, decoy),
            };
            for &d in &members[t][sub] {
                qrels.insert(query.id.clone(), corpus.documents()[d].id.clone(), 1);
            }
            queries.push(query);
        }
    }

    let mut triplets = Vec::new();
    for t in 0..n_topics {
        let decoy = (t + 1) % n_topics;
        let decoy_docs = all_in_topic(decoy);
        for sub in 0..n_sub {
            for _ in 0..TRAIN_QUERIES_PER_SUBTOPIC {
                let anchor = query_text(&vocab, &mut rng, &entities[t][sub], t, decoy);
                for &d in &members[t][sub] {
                    let negative = (decoy != t).then(|| {
                        let &n = decoy_docs.choose(&mut rng).unwrap();
                        corpus.documents()[n].encoder_text()
                    });
                    triplets.push(Triplet {
                        anchor: anchor.clone(),
                        positive: corpus.documents()[d].encoder_text(),
                        negative,
                    });
                }
            }
        }
    }

    Ok(SynthDataset {
        corpus,
        queries,
        qrels,
        triplets,
        topic_keywords: vocab.keywords,
        topic_surface: vocab.surface,
        subtopic_entities: entities,
        filler: vocab.filler,
    })
}

fn topic_sentence(vocab: &Vocabulary, rng: &mut ChaCha8Rng, topic: usize, n_keywords: usize) -> (String, BTreeSet<String>) {
    let kws: Vec<String> = pick(rng, &vocab.keywords[topic], n_keywords).into_iter().cloned().collect();
    let set = kws.iter().cloned().collect();
    let mut words = kws;
    words.extend((0..3).map(|_| vocab.filler_word(rng)));
    (sentence(rng, words), set)
}

/// NLI-style triples: anchor, an in-topic "entailment" as positive, an out-of-topic
/// "contradiction" as negative (absent when there is a single topic).
pub fn synth_nli_triplets(seed: u64, n_topics: usize, count: usize) -> Result<TripletSet> {
    check_counts(&[("n_topics", n_topics), ("count", count)])?;
    let vocab = Vocabulary::new(seed, n_topics);
    let mut rng = rng_for(seed, STREAM_NLI);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let t = i % n_topics;
        let (anchor, _) = topic_sentence(&vocab, &mut rng, t, 2);
        let (positive, _) = topic_sentence(&vocab, &mut rng, t, 2);
        let negative = (n_topics > 1).then(|| {
            let other = (t + rng.gen_range(1..n_topics)) % n_topics;
            topic_sentence(&vocab, &mut rng, other, 2).0
        });
        out.push(Triplet {
            anchor,
            positive,
            negative,
        });
    }
    Ok(out)
}

/// Scored sentence pairs; gold = keyword-set Jaccard overlap, rescaled to `[0, 1]`.
///
/// `stream_offset` selects an independent sample (e.g. train vs. test) over the same vocabulary.
pub fn synth_sts_pairs(seed: u64, n_topics: usize, count: usize, stream_offset: u64) -> Result<Vec<ScoredPair>> {
    check_counts(&[("n_topics", n_topics), ("count", count)])?;
    let vocab = Vocabulary::new(seed, n_topics);
    let mut rng = rng_for(seed, STREAM_STS + 16 * stream_offset);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let t = i % n_topics;
        let (a, ka) = topic_sentence(&vocab, &mut rng, t, 3);
        let other = if n_topics > 1 && rng.gen_bool(0.4) {
            (t + rng.gen_range(1..n_topics)) % n_topics
        } else {
            t
        };
        let (b, kb) = topic_sentence(&vocab, &mut rng, other, 3);
        let inter = ka.intersection(&kb).count() as f64;
        let union = ka.union(&kb).count() as f64;
        // Two decimals on the raw 0-5 scale, as in published STS files.
        let raw = (STS_SCORE_MAX * inter / union * 100.0).round() / 100.0;
        out.push(ScoredPair {
            sentence_a: a,
            sentence_b: b,
            gold_score: raw / STS_SCORE_MAX,
        });
    }
    Ok(out)
}
