//! Finite-difference gradient checks (step 1e-5, float64).

use embedkit::corpus::Triplet;
use embedkit::encoder::{init_params, EncoderParams};
use embedkit::linalg::Matrix;
use embedkit::losses::{
    cached_mnrl_loss, cosent_loss, matryoshka_wrap, mnrl_loss, BatchEmbeddings, MatryoshkaSpec, PairBatch,
};
use rand::Rng;

use super::{
    cosent, cosent_delta, delta_u, forward, matryoshka_mnrl_delta, mnrl, mnrl_delta, rel_err, rng, unit_rows,
    Perturbed,
};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-6;
pub const FLOOR: f64 = 1e-8;

#[derive(Debug, Default, Clone)]
pub struct Check {
    pub checked: usize,
    pub worst: f64,
    /// Largest disagreement between the library's loss value and the reference.
    pub value_err: f64,
}

impl Check {
    fn add(&mut self, analytic: f64, numeric: f64) {
        if analytic.abs() > FLOOR {
            self.checked += 1;
            self.worst = self.worst.max(rel_err(analytic, numeric));
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.worst <= TOL && self.value_err <= 1e-12
    }

    pub fn summary(&self) -> String {
        format!(
            "{} entries with |g| > 1e-8, worst relative error {:.2e}, value error {:.1e}",
            self.checked, self.worst, self.value_err
        )
    }
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

/// Central difference for every entry of every matrix. `delta(groups, deltas)` must return
/// `L(groups + deltas) - L(groups)`.
fn check_entries(
    groups: &[Vec<Vec<f64>>],
    grads: &[Matrix],
    delta: impl Fn(&[Vec<Vec<f64>>]) -> f64,
    check: &mut Check,
) {
    let zeros: Vec<Vec<Vec<f64>>> = groups.iter().map(|g| g.iter().map(|r| vec![0.0; r.len()]).collect()).collect();
    for (m, g) in groups.iter().enumerate() {
        for (i, row) in g.iter().enumerate() {
            for k in 0..row.len() {
                let at = |h: f64| {
                    let mut d = zeros.clone();
                    d[m][i][k] = h;
                    delta(&d)
                };
                let fd = (at(STEP) - at(-STEP)) / (2.0 * STEP);
                check.add(grads[m].row(i)[k], fd);
            }
        }
    }
}

fn cands<'a>(groups: &'a [Vec<Vec<f64>>], deltas: &'a [Vec<Vec<f64>>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let base = groups[1..].iter().flatten().cloned().collect();
    let delta = deltas[1..].iter().flatten().cloned().collect();
    (base, delta)
}

fn random_batch(r: &mut impl Rng, seed_rows: &mut rand_chacha::ChaCha8Rng, negatives: bool) -> Vec<Matrix> {
    let b = r.gen_range(2..=8);
    let mut mats = vec![unit_rows(seed_rows, b, 16), unit_rows(seed_rows, b, 16)];
    if negatives {
        mats.push(unit_rows(seed_rows, b, 16));
    }
    mats
}

pub fn check_mnrl(seed: u64, cases: usize) -> Check {
    let mut r = rng(seed);
    let mut rows_rng = rng(seed + 1000);
    let mut check = Check::default();
    for case in 0..cases {
        let mats = random_batch(&mut r, &mut rows_rng, case % 2 == 0);
        let batch = BatchEmbeddings::new(mats[0].clone(), mats[1].clone(), mats.get(2).cloned()).unwrap();
        let out = mnrl_loss(&batch, 20.0).unwrap();
        check.value_err = check.value_err.max((out.value - mnrl(&mats[0], &mats[1], mats.get(2), 20.0)).abs());
        let groups: Vec<_> = mats.iter().map(rows).collect();
        check_entries(
            &groups,
            &out.grads,
            |d| {
                let (cb, cd) = cands(&groups, d);
                mnrl_delta(
                    &Perturbed { base: &groups[0], delta: &d[0] },
                    &Perturbed { base: &cb, delta: &cd },
                    20.0,
                )
            },
            &mut check,
        );
    }
    check
}

pub fn check_matryoshka_mnrl(seed: u64, cases: usize) -> Check {
    let mut r = rng(seed);
    let mut rows_rng = rng(seed + 1000);
    let spec = MatryoshkaSpec::new(vec![16, 8, 4], vec![1.0, 0.5, 0.25]).unwrap();
    let mut check = Check::default();
    for case in 0..cases {
        let mats = random_batch(&mut r, &mut rows_rng, case % 2 == 1);
        let batch = BatchEmbeddings::new(mats[0].clone(), mats[1].clone(), mats.get(2).cloned()).unwrap();
        let out = matryoshka_wrap(|x| mnrl_loss(x, 20.0), &spec, &batch).unwrap();
        let reference: f64 = spec
            .dims
            .iter()
            .zip(&spec.weights)
            .map(|(&k, &w)| {
                let neg = mats.get(2).map(|n| super::prefix_unit(n, k));
                w * mnrl(&super::prefix_unit(&mats[0], k), &super::prefix_unit(&mats[1], k), neg.as_ref(), 20.0)
            })
            .sum();
        check.value_err = check.value_err.max((out.value - reference).abs());
        let groups: Vec<_> = mats.iter().map(rows).collect();
        check_entries(
            &groups,
            &out.grads,
            |d| {
                let (cb, cd) = cands(&groups, d);
                matryoshka_mnrl_delta(
                    &Perturbed { base: &groups[0], delta: &d[0] },
                    &Perturbed { base: &cb, delta: &cd },
                    &spec.dims,
                    &spec.weights,
                    20.0,
                )
            },
            &mut check,
        );
    }
    check
}

pub fn check_cosent(seed: u64, cases: usize) -> Check {
    let mut r = rng(seed);
    let mut rows_rng = rng(seed + 1000);
    let mut check = Check::default();
    for _ in 0..cases {
        let mats = random_batch(&mut r, &mut rows_rng, false);
        let b = mats[0].rows();
        let gold: Vec<f64> = (0..b).map(|_| f64::from(r.gen_range(0..6u8)) / 5.0).collect();
        let batch = PairBatch::new(mats[0].clone(), mats[1].clone(), gold.clone()).unwrap();
        let out = cosent_loss(&batch, 20.0).unwrap();
        check.value_err = check.value_err.max((out.value - cosent(&mats[0], &mats[1], &gold, 20.0)).abs());
        let groups: Vec<_> = mats.iter().map(rows).collect();
        check_entries(
            &groups,
            &out.grads,
            |d| {
                cosent_delta(
                    &Perturbed { base: &groups[0], delta: &d[0] },
                    &Perturbed { base: &groups[1], delta: &d[1] },
                    &gold,
                    20.0,
                )
            },
            &mut check,
        );
    }
    check
}

pub fn toy_triplets(r: &mut impl Rng, b: usize, negatives: bool) -> Vec<Triplet> {
    const WORDS: &[&str] = &["ev", "okul", "kitap", "deniz", "güneş", "yol", "şehir", "ağaç", "kedi", "masa", "İzmir", "ılık"];
    let mut text = |n: usize| -> String {
        (0..n).map(|_| WORDS[r.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
    };
    (0..b)
        .map(|_| Triplet {
            anchor: text(3),
            positive: text(5),
            negative: negatives.then(|| text(5)),
        })
        .collect()
}

/// MNRL through the encoder, differentiated with respect to every parameter (V=128, H=16, d=16).
pub fn check_encoder(seed: u64, cases: usize) -> Check {
    let mut r = rng(seed);
    let mut check = Check::default();
    for case in 0..cases {
        let b = r.gen_range(2..=8);
        let negatives = case % 2 == 1;
        let params: EncoderParams = init_params(seed * 100 + case as u64, 128, 16, 16).unwrap();
        let triplets = toy_triplets(&mut r, b, negatives);
        let analytic = cached_mnrl_loss(&params, &triplets, b, 20.0).unwrap();

        let fw = |f: &dyn Fn(&Triplet) -> &str| triplets.iter().map(|t| forward(&params, f(t))).collect::<Vec<_>>();
        let anchors = fw(&|t| &t.anchor);
        let mut cand_fw = fw(&|t| &t.positive);
        if negatives {
            cand_fw.extend(fw(&|t| t.negative.as_deref().unwrap()));
        }
        let a_base: Vec<Vec<f64>> = anchors.iter().map(|f| f.u.clone()).collect();
        let c_base: Vec<Vec<f64>> = cand_fw.iter().map(|f| f.u.clone()).collect();
        let reference = {
            let m = |v: &[Vec<f64>]| {
                let unit: Vec<Vec<f64>> = v
                    .iter()
                    .map(|u| {
                        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                        u.iter().map(|x| x / n).collect()
                    })
                    .collect();
                Matrix::from_rows(&unit).unwrap()
            };
            let neg = negatives.then(|| m(&c_base[b..]));
            mnrl(&m(&a_base), &m(&c_base[..b]), neg.as_ref(), 20.0)
        };
        check.value_err = check.value_err.max((analytic.value - reference).abs());

        for i in 0..params.num_params() {
            let at = |h: f64| {
                let ad: Vec<Vec<f64>> = anchors.iter().map(|f| delta_u(&params, f, i, h)).collect();
                let cd: Vec<Vec<f64>> = cand_fw.iter().map(|f| delta_u(&params, f, i, h)).collect();
                mnrl_delta(
                    &Perturbed { base: &a_base, delta: &ad },
                    &Perturbed { base: &c_base, delta: &cd },
                    20.0,
                )
            };
            let fd = (at(STEP) - at(-STEP)) / (2.0 * STEP);
            check.add(analytic.grads.get_flat(i), fd);
        }
    }
    check
}

/// Cached MNRL against encoding the whole batch at once and backpropagating each row directly.
#[derive(Debug, Default, Clone)]
pub struct CacheCheck {
    pub configs: usize,
    pub value_err: f64,
    /// Largest entrywise relative gradient difference.
    pub grad_err: f64,
    pub peak_ok: bool,
}

impl CacheCheck {
    pub fn passed(&self) -> bool {
        self.configs > 0 && self.value_err <= 1e-12 && self.grad_err <= 1e-10 && self.peak_ok
    }

    pub fn summary(&self) -> String {
        format!(
            "{} chunkings, loss diff {:.1e}, worst gradient relative diff {:.1e}",
            self.configs, self.value_err, self.grad_err
        )
    }
}

pub fn uncached_mnrl(params: &EncoderParams, triplets: &[Triplet], scale: f64) -> (f64, embedkit::encoder::EncoderGrads) {
    let encode = |texts: Vec<&str>| -> (Matrix, Vec<embedkit::encoder::EncodeTape>) {
        let (rows, tapes): (Vec<Vec<f64>>, Vec<_>) = texts.into_iter().map(|t| params.encode(t).unwrap()).unzip();
        (Matrix::from_rows(&rows).unwrap(), tapes)
    };
    let (a, ta) = encode(triplets.iter().map(|t| t.anchor.as_str()).collect());
    let (p, tp) = encode(triplets.iter().map(|t| t.positive.as_str()).collect());
    let negs: Vec<&str> = triplets.iter().filter_map(|t| t.negative.as_deref()).collect();
    let (n, tn) = if negs.is_empty() { (None, Vec::new()) } else {
        let (m, t) = encode(negs);
        (Some(m), t)
    };
    let out = mnrl_loss(&BatchEmbeddings::new(a, p, n).unwrap(), scale).unwrap();
    let mut grads = embedkit::encoder::EncoderGrads::zeros(params);
    for (tapes, g) in [ta, tp, tn].iter().zip(&out.grads) {
        for (i, tape) in tapes.iter().enumerate() {
            grads.add_assign(&params.encode_backward(tape, g.row(i)).unwrap());
        }
    }
    (out.value, grads)
}

pub fn check_gradient_cache(seed: u64) -> CacheCheck {
    let mut r = rng(seed);
    let params = init_params(seed, 4096, 32, 16).unwrap();
    let mut check = CacheCheck { peak_ok: true, ..Default::default() };
    for negatives in [true, false] {
        let triplets = toy_triplets(&mut r, 8, negatives);
        let (value, grads) = uncached_mnrl(&params, &triplets, 20.0);
        for chunk in [1, 3, 8] {
            let out = cached_mnrl_loss(&params, &triplets, chunk, 20.0).unwrap();
            check.configs += 1;
            check.peak_ok &= out.peak_live_tapes <= chunk;
            check.value_err = check.value_err.max((out.value - value).abs());
            for i in 0..params.num_params() {
                let (a, b) = (out.grads.get_flat(i), grads.get_flat(i));
                if a != b {
                    check.grad_err = check.grad_err.max(rel_err(a, b));
                }
            }
        }
    }
    check
}
