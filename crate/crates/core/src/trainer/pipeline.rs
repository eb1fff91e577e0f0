use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::{run_stage, StageData, StagePlan, StageReport};
use crate::corpus::{write_file, Corpus, Qrels, Query, ScoredPair};
use crate::encoder::{write_checkpoint, EncoderParams};
use crate::error::{Error, Result, ResultExt};
use crate::evalkit::{evaluate_retrieval, sts_eval, MetricReport, StsReport};

#[derive(Debug, Clone)]
pub struct RetrievalSuite {
    pub corpus: Corpus,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
    pub cutoffs: Vec<usize>,
}

/// Evaluation data run after each stage. Either part may be absent.
#[derive(Debug, Clone, Default)]
pub struct EvalSuite {
    pub retrieval: Option<RetrievalSuite>,
    pub sts: Option<Vec<ScoredPair>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sts: Option<StsReport>,
}

impl EvalSuite {
    pub fn is_empty(&self) -> bool {
        self.retrieval.is_none() && self.sts.is_none()
    }

    pub fn evaluate(&self, params: &EncoderParams, label: &str) -> Result<EvalSnapshot> {
        let retrieval = match &self.retrieval {
            Some(r) => Some(evaluate_retrieval(params, &r.corpus, &r.queries, &r.qrels, &r.cutoffs)?),
            None => None,
        };
        let sts = match &self.sts {
            Some(pairs) => Some(sts_eval(params, pairs)?),
            None => None,
        };
        Ok(EvalSnapshot {
            label: label.to_owned(),
            retrieval,
            sts,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Where stage checkpoints and sidecars go; nothing is written when unset.
    pub checkpoint_dir: Option<PathBuf>,
    /// Index of the first stage to run; earlier stages are assumed to have produced the
    /// initial parameters.
    pub start_stage: usize,
    /// Also evaluate the initial parameters.
    pub evaluate_initial: bool,
}

/// Written next to each stage checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSidecar {
    pub stage_index: usize,
    pub dataset: String,
    pub checkpoint: String,
    pub report: StageReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage_index: usize,
    pub report: StageReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSnapshot>,
    /// Checkpoint file name inside the checkpoint directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<EvalSnapshot>,
    pub stages: Vec<StageOutcome>,
}

impl PipelineReport {
    pub fn stage(&self, name: &str) -> Option<&StageOutcome> {
        self.stages.iter().find(|s| s.report.name == name)
    }
}

/// `stage-2-sts.te4e` for the second stage named `sts`.
pub fn checkpoint_name(index: usize, name: &str) -> String {
    format!("stage-{}-{name}.te4e", index + 1)
}

pub fn sidecar_name(index: usize, name: &str) -> String {
    format!("stage-{}-{name}.json", index + 1)
}

fn persist(dir: &Path, params: &EncoderParams, sidecar: &StageSidecar) -> Result<()> {
    write_checkpoint(&dir.join(&sidecar.checkpoint), params)?;
    let json = serde_json::to_string_pretty(sidecar).expect("serializable") + "\n";
    write_file(&dir.join(sidecar_name(sidecar.stage_index, &sidecar.report.name)), &json)
}

/// Runs the plan's stages in order from `options.start_stage`, evaluating and checkpointing after
/// each.
///
/// Parameters are rounded to checkpoint precision at every stage boundary, so resuming from a
/// written checkpoint continues exactly as an uninterrupted run would. `datasets[i]` feeds stage
/// `i`.
pub fn run_pipeline(
    initial: EncoderParams,
    plan: &StagePlan,
    datasets: &[StageData],
    suite: &EvalSuite,
    options: &PipelineOptions,
) -> Result<(EncoderParams, PipelineReport)> {
    plan.validate()?;
    if datasets.len() != plan.stages.len() {
        return Err(Error::InvalidArgument(format!(
            "{} datasets for {} stages",
            datasets.len(),
            plan.stages.len()
        )));
    }
    if options.start_stage >= plan.stages.len() {
        return Err(Error::InvalidArgument(format!(
            "start stage {} but the plan has {} stages",
            options.start_stage,
            plan.stages.len()
        )));
    }
    let mut params = initial;
    params.round_to_storage();
    let mut report = PipelineReport {
        initial: None,
        stages: Vec::new(),
    };
    if options.evaluate_initial && !suite.is_empty() {
        report.initial = Some(suite.evaluate(&params, "initial")?);
    }

    for i in options.start_stage..plan.stages.len() {
        let stage = plan.resolved_stage(i);
        let completed = || {
            let done: Vec<&str> = report.stages.iter().map(|s| s.report.name.as_str()).collect();
            format!("stage {} failed (completed: [{}])", stage.name, done.join(", "))
        };
        info!("stage {} ({}): {} examples, {} epochs", stage.name, stage.loss, datasets[i].len(), stage.epochs);
        let (mut next, stage_report) = run_stage(params, &stage, &datasets[i]).context_with(completed)?;
        next.round_to_storage();
        let eval = if stage.evaluate && !suite.is_empty() {
            Some(suite.evaluate(&next, &stage.name).context_with(completed)?)
        } else {
            None
        };
        let checkpoint = match &options.checkpoint_dir {
            Some(dir) => {
                let sidecar = StageSidecar {
                    stage_index: i,
                    dataset: stage.dataset.clone(),
                    checkpoint: checkpoint_name(i, &stage.name),
                    report: stage_report.clone(),
                    eval: eval.clone(),
                };
                persist(dir, &next, &sidecar).context_with(completed)?;
                Some(sidecar.checkpoint)
            }
            None => None,
        };
        report.stages.push(StageOutcome {
            stage_index: i,
            report: stage_report,
            eval,
            checkpoint,
        });
        params = next;
    }
    Ok((params, report))
}
