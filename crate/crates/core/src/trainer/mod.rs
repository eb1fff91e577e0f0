//! Sequential multi-stage training: each stage runs one loss over one dataset with a fresh
//! optimizer, starting from the previous stage's parameters.

mod optim;
mod pipeline;

use std::collections::HashSet;
use std::fmt;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ScoredPair, Triplet};
use crate::encoder::{EncoderGrads, EncoderParams};
use crate::error::{Error, Result, ResultExt};
use crate::losses::{
    cached_triplet_loss, cosent_loss, gradient_cached, matryoshka_wrap, mnrl_loss, stack_grads, LossOutput,
    MatryoshkaSpec, PairBatch, DEFAULT_COSENT_TAU, DEFAULT_MNRL_SCALE,
};

pub use optim::{adamw_step, OptimizerState, OptimizerSummary, BETA1, BETA2, EPSILON};
pub use pipeline::{
    checkpoint_name, run_pipeline, sidecar_name, EvalSnapshot, EvalSuite, PipelineOptions, PipelineReport,
    RetrievalSuite, StageOutcome, StageSidecar,
};

pub const DEFAULT_LEARNING_RATE: f64 = 2e-3;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.01;
pub const DEFAULT_PLAN_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mnrl,
    Cosent,
    CachedMnrl,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mnrl => "mnrl",
            LossKind::Cosent => "cosent",
            LossKind::CachedMnrl => "cached_mnrl",
        }
    }

    /// Whether the loss consumes triplets (otherwise scored pairs).
    pub fn uses_triplets(self) -> bool {
        !matches!(self, LossKind::Cosent)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_lr() -> f64 {
    DEFAULT_LEARNING_RATE
}

fn default_wd() -> f64 {
    DEFAULT_WEIGHT_DECAY
}

fn default_true() -> bool {
    true
}

fn default_plan_seed() -> u64 {
    DEFAULT_PLAN_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    /// Dataset file, relative to the plan file.
    pub dataset: String,
    pub loss: LossKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matryoshka: Option<MatryoshkaSpec>,
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_size: Option<usize>,
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    /// MNRL scale or CoSENT temperature; 20 when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    /// Shuffle seed; the plan seed plus the stage index when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Run the plan's evaluation suites after this stage.
    #[serde(default = "default_true")]
    pub evaluate: bool,
}

impl StageConfig {
    pub fn new(name: &str, dataset: &str, loss: LossKind, batch_size: usize, epochs: usize) -> Self {
        Self {
            name: name.into(),
            dataset: dataset.into(),
            loss,
            matryoshka: None,
            batch_size,
            chunk_size: None,
            epochs,
            learning_rate: DEFAULT_LEARNING_RATE,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            scale: None,
            seed: None,
            evaluate: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("stage {}: {m}", self.name)));
        if self.name.is_empty() {
            return Err(Error::InvalidArgument("stage name must not be empty".into()));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if let Some(s) = self.scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("scale must be positive, got {s}"));
            }
        }
        match (self.loss, self.chunk_size) {
            (LossKind::CachedMnrl, Some(c)) if c < 1 || c > self.batch_size => {
                return bad(format!("chunk_size {c} must be in 1..={}", self.batch_size));
            }
            (LossKind::Mnrl | LossKind::Cosent, Some(_)) => {
                return bad("chunk_size is only valid with cached_mnrl".into());
            }
            _ => {}
        }
        if let Some(spec) = &self.matryoshka {
            spec.validate()?;
        }
        Ok(())
    }

    fn scale_or_default(&self) -> f64 {
        self.scale.unwrap_or(match self.loss {
            LossKind::Cosent => DEFAULT_COSENT_TAU,
            _ => DEFAULT_MNRL_SCALE,
        })
    }
}

/// Paths of the data evaluated after each stage, relative to the plan file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qrels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sts: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoffs: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    #[serde(default = "default_plan_seed")]
    pub seed: u64,
    pub stages: Vec<StageConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl StagePlan {
    pub fn new(seed: u64, stages: Vec<StageConfig>) -> Self {
        Self {
            seed,
            stages,
            eval: EvalConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("stage plan: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidArgument("stage plan has no stages".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.stages {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate stage name {}", s.name)));
            }
            s.validate()?;
        }
        Ok(())
    }

    /// Stage `index` with its seed filled in.
    pub fn resolved_stage(&self, index: usize) -> StageConfig {
        let mut s = self.stages[index].clone();
        s.seed.get_or_insert(self.seed.wrapping_add(index as u64));
        s
    }
}

/// Training examples for one stage.
#[derive(Debug, Clone, PartialEq)]
pub enum StageData {
    Triplets(Vec<Triplet>),
    Pairs(Vec<ScoredPair>),
}

impl StageData {
    pub fn len(&self) -> usize {
        match self {
            StageData::Triplets(t) => t.len(),
            StageData::Pairs(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub loss: LossKind,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub chunk_size: Option<usize>,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub examples: usize,
    /// Mean batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub optimizer: OptimizerSummary,
}

/// Splits a shuffled order into batches. A trailing single triplet without negatives has no
/// in-batch candidate, so it joins the previous batch instead of being dropped.
fn batches(order: &[usize], batch_size: usize, merge_singleton: bool) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if merge_singleton && out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let start = order.len() - batch_size - 1;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

fn batch_gradients(params: &EncoderParams, stage: &StageConfig, data: &StageData, idx: &[usize]) -> Result<(f64, EncoderGrads)> {
    let scale = stage.scale_or_default();
    let spec = stage.matryoshka.as_ref();
    match (stage.loss, data) {
        (LossKind::Mnrl | LossKind::CachedMnrl, StageData::Triplets(all)) => {
            let batch: Vec<Triplet> = idx.iter().map(|&i| all[i].clone()).collect();
            let chunk = match stage.loss {
                LossKind::CachedMnrl => stage.chunk_size.unwrap_or(batch.len()).min(batch.len()),
                _ => batch.len(),
            };
            let out = cached_triplet_loss(params, &batch, chunk, |b| match spec {
                Some(spec) => matryoshka_wrap(|x| mnrl_loss(x, scale), spec, b),
                None => mnrl_loss(b, scale),
            })?;
            Ok((out.value, out.grads))
        }
        (LossKind::Cosent, StageData::Pairs(all)) => {
            let n = idx.len();
            let mut texts: Vec<&str> = idx.iter().map(|&i| all[i].sentence_a.as_str()).collect();
            texts.extend(idx.iter().map(|&i| all[i].sentence_b.as_str()));
            let gold: Vec<f64> = idx.iter().map(|&i| all[i].gold_score).collect();
            let out = gradient_cached(params, &texts, texts.len(), |rows| {
                let batch = PairBatch::new(rows.rows_range(0, n), rows.rows_range(n, 2 * n), gold)?;
                let out: LossOutput = match spec {
                    Some(spec) => matryoshka_wrap(|x| cosent_loss(x, scale), spec, &batch)?,
                    None => cosent_loss(&batch, scale)?,
                };
                Ok((out.value, stack_grads(&out)))
            })?;
            Ok((out.value, out.grads))
        }
        (loss, _) => Err(Error::InvalidArgument(format!(
            "stage {}: loss {loss} needs {}",
            stage.name,
            if loss.uses_triplets() { "triplets" } else { "scored pairs" }
        ))),
    }
}

/// Trains `params` for `stage.epochs` epochs of seeded-shuffled batches with a fresh AdamW state.
pub fn run_stage(params: EncoderParams, stage: &StageConfig, data: &StageData) -> Result<(EncoderParams, StageReport)> {
    stage.validate()?;
    let seed = stage.seed.unwrap_or(DEFAULT_PLAN_SEED);
    let mut params = params;
    let mut state = OptimizerState::new(&params);
    let mut report = StageReport {
        name: stage.name.clone(),
        loss: stage.loss,
        seed,
        epochs: stage.epochs,
        batch_size: stage.batch_size,
        chunk_size: stage.chunk_size,
        learning_rate: stage.learning_rate,
        weight_decay: stage.weight_decay,
        examples: data.len(),
        epoch_losses: Vec::new(),
        optimizer: state.summary(),
    };
    if stage.epochs == 0 {
        return Ok((params, report));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!("stage {}: empty dataset", stage.name)));
    }
    if let Some(spec) = &stage.matryoshka {
        spec.check_dim(params.dim())?;
    }
    let merge_singleton = match data {
        StageData::Triplets(t) => t.iter().all(|t| t.negative.is_none()),
        StageData::Pairs(_) => false,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    for epoch in 0..stage.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let parts = batches(&order, stage.batch_size, merge_singleton);
        for (b, idx) in parts.iter().enumerate() {
            let ctx = || format!("stage {} epoch {epoch} batch {b}", stage.name);
            let (value, grads) = batch_gradients(&params, stage, data, idx).context_with(ctx)?;
            adamw_step(&mut params, &grads, &mut state, stage.learning_rate, stage.weight_decay)
                .context_with(ctx)?;
            total += value;
            step += 1;
        }
        let mean = total / parts.len() as f64;
        debug!("stage {} epoch {epoch}: mean loss {mean:.6} over {} batches", stage.name, parts.len());
        report.epoch_losses.push(mean);
    }
    debug!("stage {}: {step} optimizer steps", stage.name);
    report.optimizer = state.summary();
    Ok((params, report))
}
