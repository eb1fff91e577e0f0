//! Independent reference implementations used by the integration and acceptance tests.
//!
//! The reference functions in this file never call the library's loss, metric or search code;
//! the submodules compare them against it.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use embedkit::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let v: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(v.iter().map(|x| x / n));
    }
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Mean over anchors of `-log softmax(scale * cos)[own positive]`.
pub fn mnrl(anchors: &Matrix, positives: &Matrix, negatives: Option<&Matrix>, scale: f64) -> f64 {
    let mut cands: Vec<&[f64]> = positives.iter_rows().collect();
    if let Some(n) = negatives {
        cands.extend(n.iter_rows());
    }
    let mut total = 0.0;
    for i in 0..anchors.rows() {
        let a = anchors.row(i);
        let denom: f64 = cands.iter().map(|c| (scale * cos(a, c)).exp()).sum();
        total += -((scale * cos(a, positives.row(i))).exp() / denom).ln();
    }
    total / anchors.rows() as f64
}

/// `log(1 + sum over gold_i > gold_j of exp(tau * (cos_j - cos_i)))`.
pub fn cosent(left: &Matrix, right: &Matrix, gold: &[f64], tau: f64) -> f64 {
    let c: Vec<f64> = (0..left.rows()).map(|i| cos(left.row(i), right.row(i))).collect();
    let mut s = 0.0;
    for i in 0..c.len() {
        for j in 0..c.len() {
            if gold[i] > gold[j] {
                s += (tau * (c[j] - c[i])).exp();
            }
        }
    }
    (1.0 + s).ln()
}

/// Leading `k` columns, each row rescaled to unit length.
pub fn prefix_unit(m: &Matrix, k: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = m
        .iter_rows()
        .map(|r| {
            let n = r[..k].iter().map(|x| x * x).sum::<f64>().sqrt();
            r[..k].iter().map(|x| x / n).collect()
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|)`, zero when both are zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Accuracy, precision, recall, MRR, NDCG, MAP of one ranked list at cutoff `k`, computed the
/// long way.
pub fn brute_force_query(ranked: &[String], judged: &BTreeMap<String, u32>, k: usize) -> [f64; 6] {
    let relevant: HashSet<&String> = judged.iter().filter(|(_, &g)| g > 0).map(|(d, _)| d).collect();
    let top: Vec<&String> = ranked.iter().take(k).collect();

    let hits = top.iter().filter(|d| relevant.contains(*d)).count() as f64;
    let accuracy = if hits > 0.0 { 1.0 } else { 0.0 };
    let precision = hits / k as f64;
    let recall = hits / relevant.len() as f64;

    let mut mrr = 0.0;
    for (pos, d) in top.iter().enumerate() {
        if relevant.contains(*d) {
            mrr = 1.0 / (pos as f64 + 1.0);
            break;
        }
    }

    let gain = |d: &String| judged.get(d).copied().unwrap_or(0) as f64;
    let dcg: f64 = top
        .iter()
        .enumerate()
        .map(|(pos, d)| gain(d) / (pos as f64 + 2.0).log2())
        .sum();
    let mut ideal: Vec<f64> = judged.values().map(|&g| g as f64).filter(|&g| g > 0.0).collect();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(pos, g)| g / (pos as f64 + 2.0).log2())
        .sum();
    let ndcg = dcg / idcg;

    let mut ap = 0.0;
    for (pos, d) in top.iter().enumerate() {
        if relevant.contains(*d) {
            let seen = top[..=pos].iter().filter(|x| relevant.contains(**x)).count() as f64;
            ap += seen / (pos as f64 + 1.0);
        }
    }
    let map = ap / (relevant.len().min(k)) as f64;
    [accuracy, precision, recall, mrr, ndcg, map]
}

/// Full sort of every document: `(doc_id, score)` by descending score, then ascending id.
///
/// Scores follow the engine's arithmetic conventions: `f32` dot products summed left to right,
/// distances accumulated in `f64` over `f32` differences.
pub fn full_sort(ids: &[String], rows: &[Vec<f32>], query: &[f64], measure: &str, k: usize) -> Vec<(String, f32)> {
    let q: Vec<f32> = query.iter().map(|&x| x as f32).collect();
    let qn = q.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt() as f32;
    let mut all: Vec<(f32, f32, &String)> = Vec::new();
    for (id, r) in ids.iter().zip(rows) {
        let mut dot = 0.0f32;
        for (a, b) in q.iter().zip(r) {
            dot += a * b;
        }
        let (key, shown) = match measure {
            "dot" => (dot, dot),
            "cosine" => (dot, dot / qn),
            "euclidean" => {
                let mut s = 0.0f64;
                for (a, b) in q.iter().zip(r) {
                    s += ((a - b) as f64).powi(2);
                }
                let v = -(s.sqrt() as f32);
                (v, v)
            }
            "manhattan" => {
                let mut s = 0.0f64;
                for (a, b) in q.iter().zip(r) {
                    s += ((a - b).abs()) as f64;
                }
                let v = -(s as f32);
                (v, v)
            }
            other => panic!("unknown measure {other}"),
        };
        all.push((key, shown, id));
    }
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.2.cmp(b.2)));
    all.into_iter().take(k).map(|(_, s, id)| (id.clone(), s)).collect()
}

// Loss differences L(x + dx) - L(x) evaluated without catastrophic cancellation, so that central
// differences at a fixed step are limited by truncation error only. Every loss depends on the
// embeddings through cosines alone, which are scale invariant, so raw (unnormalized) vectors work.

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `cos(a + da, c + dc) - cos(a, c)`.
pub fn delta_cos(a: &[f64], da: &[f64], c: &[f64], dc: &[f64]) -> f64 {
    let d = dot(da, c) + dot(a, dc) + dot(da, dc);
    if d == 0.0 && da.iter().chain(dc).all(|&x| x == 0.0) {
        return 0.0;
    }
    let a2: Vec<f64> = a.iter().zip(da).map(|(x, y)| x + y).collect();
    let c2: Vec<f64> = c.iter().zip(dc).map(|(x, y)| x + y).collect();
    let (na, nc, na2, nc2) = (norm(a), norm(c), norm(&a2), norm(&c2));
    let dna = (2.0 * dot(a, da) + dot(da, da)) / (na + na2);
    let dnc = (2.0 * dot(c, dc) + dot(dc, dc)) / (nc + nc2);
    let n = na * nc;
    let n2 = na2 * nc2;
    let dn = dna * nc2 + na * dnc;
    (d * n - dot(a, c) * dn) / (n * n2)
}

/// Vectors with a perturbation each.
pub struct Perturbed<'a> {
    pub base: &'a [Vec<f64>],
    pub delta: &'a [Vec<f64>],
}

impl Perturbed<'_> {
    fn prefix(&self, k: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            self.base.iter().map(|v| v[..k].to_vec()).collect(),
            self.delta.iter().map(|v| v[..k].to_vec()).collect(),
        )
    }
}

/// `MNRL(anchors + da, cands + dc) - MNRL(anchors, cands)`; the target of anchor `i` is candidate
/// `i`.
pub fn mnrl_delta(anchors: &Perturbed, cands: &Perturbed, scale: f64) -> f64 {
    let b = anchors.base.len();
    let mut total = 0.0;
    for i in 0..b {
        let s: Vec<f64> = cands.base.iter().map(|c| scale * cos(&anchors.base[i], c)).collect();
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
        let mut acc = 0.0;
        let mut own = 0.0;
        for j in 0..s.len() {
            let dc = delta_cos(&anchors.base[i], &anchors.delta[i], &cands.base[j], &cands.delta[j]);
            acc += (s[j] - m).exp() / z * (scale * dc).exp_m1();
            if j == i {
                own = scale * dc;
            }
        }
        total += acc.ln_1p() - own;
    }
    total / b as f64
}

/// Matryoshka-weighted [`mnrl_delta`] over prefix lengths.
pub fn matryoshka_mnrl_delta(anchors: &Perturbed, cands: &Perturbed, dims: &[usize], weights: &[f64], scale: f64) -> f64 {
    dims.iter()
        .zip(weights)
        .map(|(&k, &w)| {
            let (ab, ad) = anchors.prefix(k);
            let (cb, cd) = cands.prefix(k);
            w * mnrl_delta(
                &Perturbed { base: &ab, delta: &ad },
                &Perturbed { base: &cb, delta: &cd },
                scale,
            )
        })
        .sum()
}

/// `CoSENT(left + dl, right + dr) - CoSENT(left, right)`.
pub fn cosent_delta(left: &Perturbed, right: &Perturbed, gold: &[f64], tau: f64) -> f64 {
    let n = gold.len();
    let c: Vec<f64> = (0..n).map(|i| cos(&left.base[i], &right.base[i])).collect();
    let dc: Vec<f64> = (0..n)
        .map(|i| delta_cos(&left.base[i], &left.delta[i], &right.base[i], &right.delta[i]))
        .collect();
    let mut s = 0.0;
    let mut ds = 0.0;
    for i in 0..n {
        for j in 0..n {
            if gold[i] > gold[j] {
                let e = (tau * (c[j] - c[i])).exp();
                s += e;
                ds += e * (tau * (dc[j] - dc[i])).exp_m1();
            }
        }
    }
    (ds / (1.0 + s)).ln_1p()
}

/// `tanh(z + d) - tanh(z)`.
pub fn delta_tanh(z: f64, d: f64) -> f64 {
    let t = z.tanh();
    let td = d.tanh();
    td * (1.0 - t) * (1.0 + t) / (1.0 + t * td)
}

/// Straight-line forward pass: `(features, pre, hidden, u)` with `u` unnormalized.
pub struct Forward {
    pub features: Vec<(u32, f64)>,
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub u: Vec<f64>,
}

pub fn forward(p: &embedkit::encoder::EncoderParams, text: &str) -> Forward {
    let features = embedkit::encoder::featurize(text, p.vocab()).entries().to_vec();
    let pre: Vec<f64> = (0..p.hidden())
        .map(|r| p.b1()[r] + features.iter().map(|&(v, x)| p.w1(r, v as usize) * x).sum::<f64>())
        .collect();
    let hidden: Vec<f64> = pre.iter().map(|z| z.tanh()).collect();
    let u = (0..p.dim())
        .map(|j| p.b2()[j] + (0..p.hidden()).map(|r| p.w2()[j * p.hidden() + r] * hidden[r]).sum::<f64>())
        .collect();
    Forward { features, pre, hidden, u }
}

/// Change of `u` when the parameter at flat index `index` (W1 row-major, b1, W2, b2) moves by
/// `h`.
pub fn delta_u(p: &embedkit::encoder::EncoderParams, f: &Forward, index: usize, h: f64) -> Vec<f64> {
    let (v, hd, d) = (p.vocab(), p.hidden(), p.dim());
    let mut du = vec![0.0; d];
    let through_hidden = |r: usize, dpre: f64, du: &mut Vec<f64>| {
        let dh = delta_tanh(f.pre[r], dpre);
        for j in 0..d {
            du[j] = p.w2()[j * hd + r] * dh;
        }
    };
    if index < hd * v {
        let (r, bucket) = (index / v, index % v);
        if let Some(&(_, x)) = f.features.iter().find(|&&(b, _)| b as usize == bucket) {
            through_hidden(r, h * x, &mut du);
        }
    } else if index < hd * v + hd {
        through_hidden(index - hd * v, h, &mut du);
    } else if index < hd * v + hd + d * hd {
        let k = index - hd * v - hd;
        du[k / hd] = h * f.hidden[k % hd];
    } else {
        du[index - hd * v - hd - d * hd] = h;
    }
    du
}

pub mod gradcheck;
pub mod suites;
pub mod fixtures;
pub mod clirun;
