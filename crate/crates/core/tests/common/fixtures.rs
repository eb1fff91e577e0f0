//! The synthetic three-stage setup, built in memory the same way `synth` + `train` build it.

use embedkit::cli::default_plan;
use embedkit::corpus::{synth_nli_triplets, synth_retrieval_dataset, synth_sts_pairs, SynthDataset};
use embedkit::evalkit::DEFAULT_CUTOFFS;
use embedkit::trainer::{EvalSuite, RetrievalSuite, StageData, StagePlan};

pub struct Desk {
    pub data: SynthDataset,
    pub plan: StagePlan,
    pub datasets: Vec<StageData>,
    pub suite: EvalSuite,
}

/// `counts` is (NLI triplets, STS train pairs, STS test pairs).
pub fn desk(seed: u64, topics: usize, docs: usize, queries: usize, dim: usize, counts: (usize, usize, usize)) -> Desk {
    let (nli_count, sts_train, sts_test) = counts;
    let data = synth_retrieval_dataset(seed, topics, docs, queries).unwrap();
    let nli = synth_nli_triplets(seed, topics, nli_count).unwrap();
    let sts_train = synth_sts_pairs(seed, topics, sts_train, 0).unwrap();
    let sts_test = synth_sts_pairs(seed, topics, sts_test, 1).unwrap();
    let plan = default_plan(seed, dim).unwrap();
    let datasets = vec![
        StageData::Triplets(nli),
        StageData::Pairs(sts_train),
        StageData::Triplets(data.triplets.clone()),
    ];
    let suite = EvalSuite {
        retrieval: Some(RetrievalSuite {
            corpus: data.corpus.clone(),
            queries: data.queries.clone(),
            qrels: data.qrels.clone(),
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
        }),
        sts: Some(sts_test),
    };
    Desk { data, plan, datasets, suite }
}

/// CLI default counts: 400 NLI triplets, 400 + 200 STS pairs.
pub const DEFAULT_COUNTS: (usize, usize, usize) = (400, 400, 200);
