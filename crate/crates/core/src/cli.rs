//! Command-line front end: synthesize data, train, index, search, evaluate and compare.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use crate::corpus::{
    parse_corpus, parse_qrels, parse_queries, parse_sts_pairs, parse_triplets, sts_to_jsonl, synth_nli_triplets,
    synth_retrieval_dataset, synth_sts_pairs, to_jsonl, write_file,
};
use crate::encoder::{init_params, read_checkpoint, write_checkpoint, DEFAULT_DIM, DEFAULT_HIDDEN, DEFAULT_VOCAB};
use crate::evalkit::{
    compare_reports, compare_sts, evaluate_index, fit_to_index, render_sts_table, sts_eval, Metric, MetricReport,
    StsReport, DEFAULT_CUTOFFS,
};
use crate::losses::MatryoshkaSpec;
use crate::retrieval::{batch_top_k, build_index, read_index, write_index, EmbeddingIndex, Measure};
use crate::trainer::{
    run_pipeline, sidecar_name, EvalConfig, EvalSnapshot, EvalSuite, LossKind, PipelineOptions, PipelineReport,
    RetrievalSuite, StageConfig, StageData, StagePlan, StageSidecar,
};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "embedkit", version, about = "Train and evaluate retrieval embeddings at desk scale")]
struct Cli {
    /// Worker threads for encoding, search and evaluation (results do not depend on it).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic topic-structured dataset and a default stage plan.
    Synth(SynthArgs),
    /// Write an untrained checkpoint.
    Init(InitArgs),
    /// Run a stage plan, writing one checkpoint and report per stage.
    Train(TrainArgs),
    /// Embed a corpus into an index file.
    Index(IndexArgs),
    /// Rank indexed documents for every query in a file.
    Search(SearchArgs),
    /// IR metrics of a checkpoint on queries with relevance judgments.
    EvalRetrieval(EvalRetrievalArgs),
    /// Pearson and Spearman correlations on scored sentence pairs.
    EvalSts(EvalStsArgs),
    /// Compare two metric or STS reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct DimArgs {
    #[arg(long, default_value_t = DEFAULT_VOCAB)]
    vocab: usize,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    topics: usize,
    #[arg(long, default_value_t = 40)]
    docs_per_topic: usize,
    #[arg(long, default_value_t = 8)]
    queries_per_topic: usize,
    #[arg(long, default_value_t = 400)]
    nli_count: usize,
    #[arg(long, default_value_t = 400)]
    sts_train_count: usize,
    #[arg(long, default_value_t = 200)]
    sts_test_count: usize,
    /// Embedding dimension the written plan's Matryoshka prefixes are built for.
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InitArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    dims: DimArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Directory for stage checkpoints and reports.
    #[arg(long)]
    out: PathBuf,
    /// Starting checkpoint; a fresh one from `--seed` and the dimension flags otherwise.
    #[arg(long, conflicts_with = "resume_from")]
    checkpoint: Option<PathBuf>,
    /// Stage checkpoint written by an earlier run; training continues with the stage after it.
    #[arg(long)]
    resume_from: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    dims: DimArgs,
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep only this many leading dimensions (re-normalized).
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    /// Checkpoint used to embed the queries.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    query_file: PathBuf,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, default_value = "cosine")]
    measure: Measure,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("docs").required(true).args(["index", "corpus"]))]
struct EvalRetrievalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    index: Option<PathBuf>,
    /// Build the index on the fly instead of reading one.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_CUTOFFS, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    cutoffs: Vec<usize>,
    #[arg(long, default_value = "cosine")]
    measure: Measure,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalStsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    before: PathBuf,
    #[arg(long)]
    after: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command. Returns the process exit code:
/// 0 on success, 2 on a usage error, 1 on any other failure.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.into())
            .build()
            .context("building thread pool")
            .and_then(|pool| pool.install(|| run(&cli))),
        None => run(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let format = cli.format;
    match &cli.command {
        Command::Synth(a) => synth(a, format),
        Command::Init(a) => {
            let params = init_params(a.seed, a.dims.vocab, a.dims.hidden, a.dims.dim)?;
            write_checkpoint(&a.out, &params)?;
            Ok(())
        }
        Command::Train(a) => train(a, format),
        Command::Index(a) => index(a),
        Command::Search(a) => search(a, format),
        Command::EvalRetrieval(a) => eval_retrieval(a, format),
        Command::EvalSts(a) => {
            require_files(&[&a.checkpoint, &a.pairs])?;
            let params = read_checkpoint(&a.checkpoint)?;
            let pairs = parse_sts_pairs(&a.pairs)?;
            let report = sts_eval(&params, &pairs.pairs)?;
            emit(a.out.as_deref(), format, &report, || render_sts_report(&report))
        }
        Command::Report(a) => report(a, format),
    }
}

fn require_files(paths: &[&Path]) -> anyhow::Result<()> {
    for p in paths {
        if !p.is_file() {
            bail!("{}: no such file", p.display());
        }
    }
    Ok(())
}

/// Writes the JSON or text form to `out`, or to stdout.
fn emit<T: Serialize>(out: Option<&Path>, format: Format, value: &T, text: impl FnOnce() -> String) -> anyhow::Result<()> {
    let body = match format {
        Format::Json => serde_json::to_string_pretty(value)? + "\n",
        Format::Text => text(),
    };
    match out {
        Some(p) => write_file(p, &body)?,
        None => print!("{body}"),
    }
    Ok(())
}

/// Plan written by `synth`: NLI-style triplets with MNRL, STS pairs with CoSENT, then the
/// retrieval triplets with gradient-cached MNRL.
pub fn default_plan(seed: u64, dim: usize) -> crate::Result<StagePlan> {
    let mut nli = StageConfig::new("nli", "nli.jsonl", LossKind::Mnrl, 32, 1);
    nli.matryoshka = Some(MatryoshkaSpec::halvings(dim)?);
    let sts = StageConfig::new("sts", "sts_train.jsonl", LossKind::Cosent, 32, 1);
    let mut retrieval = StageConfig::new("retrieval", "triplets.jsonl", LossKind::CachedMnrl, 64, 2);
    retrieval.chunk_size = Some(16);
    let mut plan = StagePlan::new(seed, vec![nli, sts, retrieval]);
    plan.eval = EvalConfig {
        corpus: Some("corpus.jsonl".into()),
        queries: Some("queries.jsonl".into()),
        qrels: Some("qrels.tsv".into()),
        sts: Some("sts_test.jsonl".into()),
        cutoffs: Some(DEFAULT_CUTOFFS.to_vec()),
    };
    plan.validate()?;
    Ok(plan)
}

#[derive(Serialize)]
struct SynthSummary {
    documents: usize,
    queries: usize,
    qrels: usize,
    triplets: usize,
    nli_triplets: usize,
    sts_train_pairs: usize,
    sts_test_pairs: usize,
}

fn synth(a: &SynthArgs, format: Format) -> anyhow::Result<()> {
    let data = synth_retrieval_dataset(a.seed, a.topics, a.docs_per_topic, a.queries_per_topic)?;
    let nli = synth_nli_triplets(a.seed, a.topics, a.nli_count)?;
    let sts_train = synth_sts_pairs(a.seed, a.topics, a.sts_train_count, 0)?;
    let sts_test = synth_sts_pairs(a.seed, a.topics, a.sts_test_count, 1)?;
    let plan = default_plan(a.seed, a.dim)?;

    fs::create_dir_all(&a.out).with_context(|| format!("{}", a.out.display()))?;
    let files = [
        ("corpus.jsonl", data.corpus.to_jsonl()),
        ("queries.jsonl", to_jsonl(&data.queries)),
        ("qrels.tsv", data.qrels.to_tsv()),
        ("triplets.jsonl", to_jsonl(&data.triplets)),
        ("nli.jsonl", to_jsonl(&nli)),
        ("sts_train.jsonl", sts_to_jsonl(&sts_train)),
        ("sts_test.jsonl", sts_to_jsonl(&sts_test)),
        ("plan.json", plan.to_json() + "\n"),
    ];
    for (name, body) in &files {
        write_file(&a.out.join(name), body)?;
    }
    let summary = SynthSummary {
        documents: data.corpus.len(),
        queries: data.queries.len(),
        qrels: data.qrels.iter().map(|(_, d)| d.len()).sum(),
        triplets: data.triplets.len(),
        nli_triplets: nli.len(),
        sts_train_pairs: sts_train.len(),
        sts_test_pairs: sts_test.len(),
    };
    emit(None, format, &summary, || {
        format!(
            "wrote {} documents, {} queries, {} triplets, {} NLI triplets, {}+{} STS pairs to {}\n",
            summary.documents,
            summary.queries,
            summary.triplets,
            summary.nli_triplets,
            summary.sts_train_pairs,
            summary.sts_test_pairs,
            a.out.display()
        )
    })
}

fn plan_relative(plan_dir: &Path, p: &str) -> PathBuf {
    plan_dir.join(p)
}

fn load_eval_suite(plan_dir: &Path, eval: &EvalConfig) -> anyhow::Result<EvalSuite> {
    let retrieval = match (&eval.corpus, &eval.queries, &eval.qrels) {
        (Some(c), Some(q), Some(r)) => Some(RetrievalSuite {
            corpus: parse_corpus(&plan_relative(plan_dir, c))?,
            queries: parse_queries(&plan_relative(plan_dir, q))?,
            qrels: parse_qrels(&plan_relative(plan_dir, r))?,
            cutoffs: eval.cutoffs.clone().unwrap_or_else(|| DEFAULT_CUTOFFS.to_vec()),
        }),
        (None, None, None) => None,
        _ => bail!("plan eval section needs corpus, queries and qrels together"),
    };
    let sts = match &eval.sts {
        Some(p) => Some(parse_sts_pairs(&plan_relative(plan_dir, p))?.pairs),
        None => None,
    };
    Ok(EvalSuite { retrieval, sts })
}

fn load_stage_data(plan_dir: &Path, stage: &StageConfig) -> anyhow::Result<StageData> {
    let path = plan_relative(plan_dir, &stage.dataset);
    let data = if stage.loss.uses_triplets() {
        StageData::Triplets(parse_triplets(&path)?)
    } else {
        StageData::Pairs(parse_sts_pairs(&path)?.pairs)
    };
    Ok(data)
}

fn read_sidecar(path: &Path) -> anyhow::Result<StageSidecar> {
    let text = fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}", path.display()))
}

const INITIAL_EVAL_FILE: &str = "initial.json";
const PIPELINE_REPORT_FILE: &str = "pipeline.json";

fn train(a: &TrainArgs, format: Format) -> anyhow::Result<()> {
    require_files(&[&a.plan])?;
    if let Some(c) = a.checkpoint.as_ref().or(a.resume_from.as_ref()) {
        require_files(&[c])?;
    }
    let plan_text = fs::read_to_string(&a.plan).with_context(|| format!("{}", a.plan.display()))?;
    let plan = StagePlan::from_json(&plan_text).with_context(|| format!("{}", a.plan.display()))?;
    let plan_dir = a.plan.parent().unwrap_or(Path::new("."));
    let datasets = plan
        .stages
        .iter()
        .map(|s| load_stage_data(plan_dir, s).with_context(|| format!("stage {}", s.name)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let suite = load_eval_suite(plan_dir, &plan.eval)?;
    fs::create_dir_all(&a.out).with_context(|| format!("{}", a.out.display()))?;

    let mut earlier = Vec::new();
    let mut initial_eval = None;
    let (params, start_stage) = match &a.resume_from {
        Some(ckpt) => {
            let sidecar = read_sidecar(&ckpt.with_extension("json"))?;
            let dir = ckpt.parent().unwrap_or(Path::new("."));
            for i in 0..=sidecar.stage_index {
                let name = &plan.stages.get(i).context("checkpoint does not belong to this plan")?.name;
                let s = read_sidecar(&dir.join(sidecar_name(i, name)))?;
                earlier.push(crate::trainer::StageOutcome {
                    stage_index: i,
                    report: s.report,
                    eval: s.eval,
                    checkpoint: Some(s.checkpoint),
                });
            }
            if let Ok(text) = fs::read_to_string(dir.join(INITIAL_EVAL_FILE)) {
                initial_eval = Some(serde_json::from_str::<EvalSnapshot>(&text)?);
            }
            let start = sidecar.stage_index + 1;
            if start >= plan.stages.len() {
                bail!("{} is the last stage's checkpoint; nothing left to train", ckpt.display());
            }
            info!("resuming after stage {}", sidecar.report.name);
            (read_checkpoint(ckpt)?, start)
        }
        None => {
            let params = match &a.checkpoint {
                Some(c) => read_checkpoint(c)?,
                None => init_params(a.seed, a.dims.vocab, a.dims.hidden, a.dims.dim)?,
            };
            (params, 0)
        }
    };

    let options = PipelineOptions {
        checkpoint_dir: Some(a.out.clone()),
        start_stage,
        evaluate_initial: a.resume_from.is_none(),
    };
    let (_, mut report) = run_pipeline(params, &plan, &datasets, &suite, &options)?;
    if let Some(init) = &report.initial {
        write_file(&a.out.join(INITIAL_EVAL_FILE), &(serde_json::to_string_pretty(init)? + "\n"))?;
    } else {
        report.initial = initial_eval;
    }
    earlier.append(&mut report.stages);
    report.stages = earlier;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write_file(&a.out.join(PIPELINE_REPORT_FILE), &json)?;
    emit(None, format, &report, || render_pipeline(&report))
}

fn index(a: &IndexArgs) -> anyhow::Result<()> {
    require_files(&[&a.checkpoint, &a.corpus])?;
    let params = read_checkpoint(&a.checkpoint)?;
    let corpus = parse_corpus(&a.corpus)?;
    let mut index = build_index(&params, &corpus)?;
    if let Some(d) = a.dim {
        index = index.truncate_renorm(d)?;
    }
    write_index(&a.out, &index)?;
    Ok(())
}

fn load_index_for(params_dim: usize, path: &Path) -> anyhow::Result<EmbeddingIndex> {
    let index = read_index(path)?;
    if index.dim() > params_dim {
        bail!("{}: index dimension {} exceeds the checkpoint's {params_dim}", path.display(), index.dim());
    }
    Ok(index)
}

fn search(a: &SearchArgs, format: Format) -> anyhow::Result<()> {
    require_files(&[&a.index, &a.checkpoint, &a.query_file])?;
    let params = read_checkpoint(&a.checkpoint)?;
    let index = load_index_for(params.dim(), &a.index)?;
    let queries = parse_queries(&a.query_file)?;
    let encoded = queries
        .iter()
        .map(|q| {
            let e = params.embed(&q.text).and_then(|e| fit_to_index(e, &index));
            e.map(|e| (q.id.clone(), e)).with_context(|| format!("query {}", q.id))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let k = usize::try_from(a.k).unwrap_or(usize::MAX);
    let lists = batch_top_k(&index, &encoded, k, a.measure)?;
    emit(a.out.as_deref(), format, &lists, || {
        let mut out = String::new();
        for l in &lists {
            for (r, h) in l.hits.iter().enumerate() {
                out.push_str(&format!("{}\t{}\t{}\t{}\n", l.query_id, r + 1, h.doc_id, h.score));
            }
        }
        out
    })
}

fn eval_retrieval(a: &EvalRetrievalArgs, format: Format) -> anyhow::Result<()> {
    require_files(&[&a.checkpoint, &a.queries, &a.qrels])?;
    if let Some(p) = a.index.as_ref().or(a.corpus.as_ref()) {
        require_files(&[p])?;
    }
    let params = read_checkpoint(&a.checkpoint)?;
    let index = match (&a.index, &a.corpus) {
        (Some(p), _) => load_index_for(params.dim(), p)?,
        (None, Some(c)) => build_index(&params, &parse_corpus(c)?)?,
        (None, None) => unreachable!("clap requires one of --index/--corpus"),
    };
    let queries = parse_queries(&a.queries)?;
    let qrels = parse_qrels(&a.qrels)?;
    let report = evaluate_index(&params, &index, &queries, &qrels, &a.cutoffs, a.measure)?;
    emit(a.out.as_deref(), format, &report, || render_metric_report(&report))
}

fn report(a: &ReportArgs, format: Format) -> anyhow::Result<()> {
    require_files(&[&a.before, &a.after])?;
    let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("{}", p.display()));
    let (before, after) = (read(&a.before)?, read(&a.after)?);
    if let (Ok(b), Ok(af)) = (
        serde_json::from_str::<MetricReport>(&before),
        serde_json::from_str::<MetricReport>(&after),
    ) {
        let cmp = compare_reports(&b, &af)?;
        return emit(a.out.as_deref(), format, &cmp, || cmp.render_text());
    }
    if let (Ok(b), Ok(af)) = (
        serde_json::from_str::<StsReport>(&before),
        serde_json::from_str::<StsReport>(&after),
    ) {
        let rows = compare_sts(&b, &af);
        return emit(a.out.as_deref(), format, &rows, || render_sts_table(&rows));
    }
    bail!("--before and --after must both be metric reports or both be STS reports")
}

fn render_metric_report(r: &MetricReport) -> String {
    let mut out = format!("{:<10}", "metric");
    for k in &r.cutoffs {
        out.push_str(&format!(" {:>8}", format!("@{k}")));
    }
    out.push('\n');
    for m in Metric::ALL {
        out.push_str(&format!("{:<10}", m.name()));
        for &k in &r.cutoffs {
            out.push_str(&format!(" {:>8.4}", r.get(m, k).unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "{} queries evaluated, {} skipped\n",
        r.evaluated_queries, r.skipped_queries
    ));
    out
}

fn render_sts_report(r: &StsReport) -> String {
    let mut out = format!("{:<10} {:>9} {:>9}\n", "measure", "pearson", "spearman");
    for (m, c) in &r.measures {
        out.push_str(&format!("{:<10} {:>9.4} {:>9.4}\n", m.name(), c.pearson, c.spearman));
    }
    out.push_str(&format!("{} pairs\n", r.pairs));
    out
}

fn render_snapshot(s: &EvalSnapshot) -> String {
    let mut out = String::new();
    if let Some(r) = &s.retrieval {
        out.push_str(&render_metric_report(r));
    }
    if let Some(r) = &s.sts {
        out.push_str(&render_sts_report(r));
    }
    out
}

fn render_pipeline(r: &PipelineReport) -> String {
    let mut out = String::new();
    if let Some(s) = &r.initial {
        out.push_str("== initial ==\n");
        out.push_str(&render_snapshot(s));
    }
    for s in &r.stages {
        let losses: Vec<String> = s.report.epoch_losses.iter().map(|l| format!("{l:.4}")).collect();
        out.push_str(&format!(
            "== stage {} ({}, {} steps) ==\nepoch losses: [{}]\n",
            s.report.name,
            s.report.loss,
            s.report.optimizer.step,
            losses.join(", ")
        ));
        if let Some(e) = &s.eval {
            out.push_str(&render_snapshot(e));
        }
    }
    out
}
