//! Randomized oracle comparisons shared by the integration tests and the acceptance run.

use std::collections::BTreeMap;

use embedkit::corpus::Qrels;
use embedkit::evalkit::{ir_metrics, run_from_lists, Metric};
use embedkit::retrieval::{top_k, truncate_renorm, EmbeddingIndex, Hit, Measure, RankedList};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{brute_force_query, full_sort, rng};

#[derive(Debug, Default, Clone)]
pub struct OracleCheck {
    pub instances: usize,
    pub failures: usize,
    pub worst: f64,
    pub first_failure: Option<String>,
}

impl OracleCheck {
    fn fail(&mut self, what: String) {
        self.failures += 1;
        self.first_failure.get_or_insert(what);
    }

    pub fn passed(&self) -> bool {
        self.instances > 0 && self.failures == 0
    }

    pub fn summary(&self) -> String {
        format!(
            "{} instances, {} failures, worst diff {:.1e}{}",
            self.instances,
            self.failures,
            self.worst,
            self.first_failure.as_deref().map(|f| format!(" (first: {f})")).unwrap_or_default()
        )
    }
}

/// `ir_metrics` against the brute-force evaluator on random runs and graded qrels.
pub fn check_metrics(seed: u64, instances: usize) -> OracleCheck {
    let mut r = rng(seed);
    let mut check = OracleCheck::default();
    while check.instances < instances {
        let n_docs = r.gen_range(1..=20);
        let n_queries = r.gen_range(1..=5);
        let docs: Vec<String> = (0..n_docs).map(|i| format!("d{i}")).collect();
        let mut qrels = Qrels::new();
        let mut lists = Vec::new();
        for q in 0..n_queries {
            let qid = format!("q{q}");
            if r.gen_bool(0.9) {
                for d in &docs {
                    if r.gen_bool(0.3) {
                        qrels.insert(qid.clone(), d.clone(), r.gen_range(0..=3));
                    }
                }
            }
            let mut ranked = docs.clone();
            ranked.shuffle(&mut r);
            ranked.truncate(r.gen_range(0..=n_docs));
            let hits = ranked
                .iter()
                .enumerate()
                .map(|(i, d)| Hit { doc_id: d.clone(), score: -(i as f32) })
                .collect();
            lists.push(RankedList { query_id: qid, hits });
        }
        let mut cutoffs: Vec<usize> = (0..r.gen_range(1..=4)).map(|_| r.gen_range(1..=25)).collect();
        cutoffs.sort_unstable();
        cutoffs.dedup();

        let run = run_from_lists(lists.clone());
        let report = ir_metrics(&run, &qrels, &cutoffs).unwrap();
        check.instances += 1;

        let judged: Vec<(Vec<String>, &BTreeMap<String, u32>)> = lists
            .iter()
            .filter_map(|l| {
                let j = qrels.get(&l.query_id)?;
                j.values().any(|&g| g > 0).then(|| (l.doc_ids().map(str::to_owned).collect(), j))
            })
            .collect();
        if report.evaluated_queries != judged.len() || report.skipped_queries != lists.len() - judged.len() {
            check.fail(format!("instance {} query counts", check.instances));
            continue;
        }
        for &k in &cutoffs {
            let mut expected = [0.0; 6];
            for (ranked, j) in &judged {
                for (e, v) in expected.iter_mut().zip(brute_force_query(ranked, j, k)) {
                    *e += v;
                }
            }
            for (m, e) in Metric::ALL.iter().zip(expected) {
                let e = if judged.is_empty() { 0.0 } else { e / judged.len() as f64 };
                let got = report.get(*m, k).unwrap();
                let diff = (got - e).abs();
                check.worst = check.worst.max(diff);
                if !(diff <= 1e-12) {
                    check.fail(format!("instance {} {m}@{k}: {got} vs {e}", check.instances));
                }
            }
        }
    }
    check
}

fn random_unit_f32(r: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

/// `top_k` against a full sort, with duplicated rows to force ties.
pub fn check_topk(seed: u64, instances: usize) -> OracleCheck {
    let mut r = rng(seed);
    let mut check = OracleCheck::default();
    for inst in 0..instances {
        let n = r.gen_range(1..=30);
        let dim = r.gen_range(1..=12);
        let mut rows: Vec<Vec<f32>> = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 && r.gen_bool(0.25) {
                let j = r.gen_range(0..i);
                rows.push(rows[j].clone());
            } else {
                rows.push(random_unit_f32(&mut r, dim));
            }
        }
        let mut ids: Vec<String> = (0..n).map(|i| format!("doc{:03}", i * 7 % 1000)).collect();
        ids.shuffle(&mut r);
        let index = EmbeddingIndex::new(ids.clone(), rows.iter().flatten().copied().collect(), dim).unwrap();
        let query: Vec<f64> = if r.gen_bool(0.2) {
            rows[r.gen_range(0..n)].iter().map(|&x| f64::from(x)).collect()
        } else {
            (0..dim).map(|_| r.gen_range(-2.0..2.0)).collect()
        };
        let measure = Measure::ALL[r.gen_range(0..4)];
        let k = r.gen_range(1..=n + 3);
        check.instances += 1;
        let got = match top_k(&index, "q", &query, k, measure) {
            Ok(l) => l,
            Err(e) => {
                check.fail(format!("instance {inst}: {e}"));
                continue;
            }
        };
        let got: Vec<(String, f32)> = got.hits.into_iter().map(|h| (h.doc_id, h.score)).collect();
        let expected = full_sort(&ids, &rows, &query, measure.name(), k);
        if got != expected {
            check.fail(format!("instance {inst} ({measure}, k={k})"));
        }
    }
    check
}

/// Truncating to `d1` and then `d2` equals truncating straight to `d2`, for vectors and indexes,
/// along the chain `dims` (descending).
pub fn check_containment(seed: u64, dims: &[usize], vectors: usize) -> OracleCheck {
    let mut r = rng(seed);
    let full = dims[0];
    let mut check = OracleCheck::default();
    let rows: Vec<Vec<f32>> = (0..vectors).map(|_| random_unit_f32(&mut r, full)).collect();
    let ids: Vec<String> = (0..vectors).map(|i| format!("d{i}")).collect();
    let index = EmbeddingIndex::new(ids, rows.iter().flatten().copied().collect(), full).unwrap();
    for (a, &d1) in dims.iter().enumerate() {
        for &d2 in &dims[a..] {
            check.instances += 1;
            let direct = index.truncate_renorm(d2).unwrap();
            let twice = index.truncate_renorm(d1).unwrap().truncate_renorm(d2).unwrap();
            let mut worst = direct
                .vectors()
                .iter()
                .zip(twice.vectors())
                .fold(0.0f64, |m, (x, y)| m.max(f64::from((x - y).abs())));
            for row in &rows {
                let v: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
                let once = truncate_renorm(&v, d2).unwrap();
                let two = truncate_renorm(&truncate_renorm(&v, d1).unwrap(), d2).unwrap();
                let norm = once.iter().map(|x| x * x).sum::<f64>().sqrt();
                worst = worst.max((norm - 1.0).abs());
                worst = once.iter().zip(&two).fold(worst, |m, (x, y)| m.max((x - y).abs()));
            }
            check.worst = check.worst.max(worst);
            if !(worst <= 1e-7) {
                check.fail(format!("{d1} -> {d2}: {worst:.2e}"));
            }
        }
    }
    check
}
