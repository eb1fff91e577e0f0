//! Drives the `embedkit` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

pub fn embedkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embedkit"))
        .current_dir(dir)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

/// Runs and insists on exit code 0; returns stdout.
pub fn ok(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = embedkit(dir, args);
    assert!(
        out.status.success(),
        "embedkit {args:?} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

pub const SMALL_SYNTH: &[&str] = &[
    "synth", "--seed", "7", "--topics", "3", "--docs-per-topic", "10", "--queries-per-topic", "4",
    "--nli-count", "96", "--sts-train-count", "96", "--sts-test-count", "40", "--dim", "16", "--out", "data",
];
pub const SMALL_DIMS: &[&str] = &["--vocab", "4096", "--hidden", "32", "--dim", "16"];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

/// Every command once, in order, from an empty directory. Returns each command's stdout keyed
/// by a label.
pub fn full_session(dir: &Path, threads: Option<&str>) -> BTreeMap<String, Vec<u8>> {
    let mut outputs = BTreeMap::new();
    let mut step = |label: &str, args: Vec<String>| {
        let mut all: Vec<String> = threads.map(|t| vec!["--threads".to_owned(), t.to_owned()]).unwrap_or_default();
        all.extend(args);
        let refs: Vec<&str> = all.iter().map(String::as_str).collect();
        outputs.insert(label.to_owned(), ok(dir, &refs));
    };
    step("synth", with(SMALL_SYNTH, &[]));
    step("init", with(&["init", "--seed", "7", "--out", "init.te4e"], SMALL_DIMS));
    step("train", with(&["train", "--plan", "data/plan.json", "--out", "run", "--checkpoint", "init.te4e"], &[]));
    step("train-json", with(&["--format", "json", "train", "--plan", "data/plan.json", "--out", "run-json", "--seed", "7"], SMALL_DIMS));
    let last = "run/stage-3-retrieval.te4e";
    step("index", with(&["index", "--checkpoint", last, "--corpus", "data/corpus.jsonl", "--out", "full.te4r"], &[]));
    step("index-8", with(&["index", "--checkpoint", last, "--corpus", "data/corpus.jsonl", "--out", "d8.te4r", "--dim", "8"], &[]));
    step("search", with(&["search", "--index", "full.te4r", "--checkpoint", last, "--query-file", "data/queries.jsonl", "--k", "5"], &[]));
    step("search-json", with(&["--format", "json", "search", "--index", "d8.te4r", "--checkpoint", last, "--query-file", "data/queries.jsonl", "--measure", "euclidean", "--out", "hits.json"], &[]));
    step("eval-before", with(&["--format", "json", "eval-retrieval", "--checkpoint", "init.te4e", "--corpus", "data/corpus.jsonl", "--queries", "data/queries.jsonl", "--qrels", "data/qrels.tsv", "--out", "before.json"], &[]));
    step("eval-after", with(&["--format", "json", "eval-retrieval", "--checkpoint", last, "--index", "full.te4r", "--queries", "data/queries.jsonl", "--qrels", "data/qrels.tsv", "--out", "after.json"], &[]));
    step("eval-text", with(&["eval-retrieval", "--checkpoint", last, "--index", "d8.te4r", "--queries", "data/queries.jsonl", "--qrels", "data/qrels.tsv", "--cutoffs", "1,5,10"], &[]));
    step("sts-before", with(&["--format", "json", "eval-sts", "--checkpoint", "init.te4e", "--pairs", "data/sts_test.jsonl", "--out", "sts-before.json"], &[]));
    step("sts-after", with(&["--format", "json", "eval-sts", "--checkpoint", last, "--pairs", "data/sts_test.jsonl", "--out", "sts-after.json"], &[]));
    step("report", with(&["report", "--before", "before.json", "--after", "after.json"], &[]));
    step("report-sts", with(&["report", "--before", "sts-before.json", "--after", "sts-after.json"], &[]));
    outputs
}

/// Relative path → contents for every file under `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Names of entries that differ between two snapshots, including ones present on one side only.
pub fn differences(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
}

#[derive(Debug, Default)]
pub struct DeterminismCheck {
    pub files: usize,
    pub commands: usize,
    pub differing: Vec<String>,
}

impl DeterminismCheck {
    pub fn passed(&self) -> bool {
        self.files > 0 && self.differing.is_empty()
    }

    pub fn summary(&self) -> String {
        if self.differing.is_empty() {
            format!("{} files and {} command outputs byte-identical across reruns, threads and resume", self.files, self.commands)
        } else {
            format!("differing: {}", self.differing.join(", "))
        }
    }
}

/// Two full sessions (one single-threaded, one on 3 threads), then training resumed from the
/// stage-1 checkpoint into a fresh directory.
pub fn check_determinism() -> DeterminismCheck {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out_a = full_session(a.path(), Some("1"));
    let out_b = full_session(b.path(), Some("3"));
    let (snap_a, snap_b) = (snapshot(a.path()), snapshot(b.path()));
    let mut check = DeterminismCheck {
        files: snap_a.len(),
        commands: out_a.len(),
        differing: differences(&snap_a, &snap_b),
    };
    check.differing.extend(differences(&out_a, &out_b).into_iter().map(|c| format!("stdout of {c}")));

    // resume after stage 1 in a directory that holds only stage 1's outputs
    let c = tempfile::tempdir().unwrap();
    ok(c.path(), SMALL_SYNTH);
    fs::create_dir(c.path().join("run")).unwrap();
    for f in ["stage-1-nli.te4e", "stage-1-nli.json", "initial.json"] {
        fs::copy(a.path().join("run").join(f), c.path().join("run").join(f)).unwrap();
    }
    let resumed = ok(c.path(), &["train", "--plan", "data/plan.json", "--out", "run", "--resume-from", "run/stage-1-nli.te4e"]);
    let run_a: BTreeMap<String, Vec<u8>> = snapshot(&a.path().join("run"));
    let run_c = snapshot(&c.path().join("run"));
    check.differing.extend(differences(&run_a, &run_c).into_iter().map(|f| format!("resumed run/{f}")));
    if resumed != out_a["train"] {
        check.differing.push("stdout of resumed train".into());
    }
    check
}
