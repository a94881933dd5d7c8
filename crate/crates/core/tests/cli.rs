use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mbhc::io::{Artifact, DendrogramFile, FlatFile, LabelingFile};
use tempfile::TempDir;

fn mbhc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbhc"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mbhc(args);
    assert!(
        out.status.success(),
        "mbhc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthesizes structure 1 with `seed` into `dir`, returning (corpus, labels).
fn synth(dir: &Path, seed: &str, docs: &str) -> (PathBuf, PathBuf) {
    let corpus = p(dir, "corpus.tsv");
    let labels = p(dir, "labels.json");
    ok(&[
        "synth",
        "--structure",
        "1",
        "--seed",
        seed,
        "--docs-per-leaf",
        docs,
        "--out-corpus",
        s(&corpus),
        "--out-labels",
        s(&labels),
    ]);
    (corpus, labels)
}

#[test]
fn synth_hierarchy_eval_recovers_two_merges() {
    let dir = TempDir::new().unwrap();
    let (corpus, labels) = synth(dir.path(), "7", "150");
    let tree = p(dir.path(), "tree.json");
    let out = ok(&[
        "hierarchy",
        "--corpus",
        s(&corpus),
        "--out",
        s(&tree),
        "--seed",
        "7",
    ]);
    assert!(out.contains("merges: 2"), "{out}");
    let report = ok(&["eval", "--tree", s(&tree), "--labels", s(&labels)]);
    assert!(report.contains("merges: 2"), "{report}");
    assert!(
        report.contains("depth-1") && report.contains("leaf"),
        "{report}"
    );
    let depth1 = report.lines().find(|l| l.starts_with("depth-1")).unwrap();
    assert!(depth1.ends_with("1.0000"), "{report}");
}

#[test]
fn cluster_then_hierarchy_matches_the_one_shot_run() {
    let dir = TempDir::new().unwrap();
    let (corpus, _) = synth(dir.path(), "3", "60");
    let flat = p(dir.path(), "flat.json");
    let a = p(dir.path(), "a.json");
    let b = p(dir.path(), "b.json");
    let out = ok(&[
        "cluster",
        "--corpus",
        s(&corpus),
        "--out",
        s(&flat),
        "--k-range",
        "2..6",
    ]);
    assert!(out.contains("flat log-ML: -"), "{out}");
    let parsed = FlatFile::read(&flat).unwrap();
    assert_eq!(parsed.config.k_range.max, 6);
    ok(&["hierarchy", "--flat", s(&flat), "--out", s(&a)]);
    ok(&[
        "hierarchy",
        "--corpus",
        s(&corpus),
        "--out",
        s(&b),
        "--k-range",
        "2..6",
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn dendrogram_file_round_trips_and_verifies() {
    let dir = TempDir::new().unwrap();
    let (corpus, _) = synth(dir.path(), "5", "40");
    let tree = p(dir.path(), "tree.json");
    ok(&["hierarchy", "--corpus", s(&corpus), "--out", s(&tree)]);
    let text = fs::read_to_string(&tree).unwrap();
    let file = DendrogramFile::from_json(&text).unwrap();
    file.verify().unwrap();
    assert_eq!(file.to_json().unwrap(), text);
    assert_eq!(
        DendrogramFile::from_json(&file.to_json().unwrap()).unwrap(),
        file
    );
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (corpus, _) = synth(dir.path(), "11", "40");
    let a = p(dir.path(), "a.json");
    let b = p(dir.path(), "b.json");
    ok(&[
        "hierarchy",
        "--corpus",
        s(&corpus),
        "--out",
        s(&a),
        "--seed",
        "4",
    ]);
    ok(&[
        "hierarchy",
        "--corpus",
        s(&corpus),
        "--out",
        s(&b),
        "--seed",
        "4",
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn no_fs_mode_reaches_one_root() {
    let dir = TempDir::new().unwrap();
    let (corpus, _) = synth(dir.path(), "2", "40");
    let tree = p(dir.path(), "tree.json");
    ok(&[
        "hierarchy",
        "--corpus",
        s(&corpus),
        "--out",
        s(&tree),
        "--mode",
        "nofs",
    ]);
    let file = DendrogramFile::read(&tree).unwrap();
    let t = &file.tree;
    assert_eq!(t.n_merges(), t.n_leaves() - 1);
    assert!(!t.node(t.root().unwrap()).unwrap().synthetic);
    assert_eq!(file.config.mode, mbhc::model::MergeMode::NoFs);
}

#[test]
fn cut_and_labels() {
    let dir = TempDir::new().unwrap();
    let (corpus, _) = synth(dir.path(), "7", "60");
    let tree = p(dir.path(), "tree.json");
    let cut = p(dir.path(), "cut.json");
    ok(&[
        "hierarchy",
        "--corpus",
        s(&corpus),
        "--out",
        s(&tree),
        "--seed",
        "7",
    ]);
    ok(&["cut", "--tree", s(&tree), "--k", "2", "--out", s(&cut)]);
    let labeling = LabelingFile::read(&cut).unwrap();
    assert_eq!(labeling.k, 2);
    let mut seen = labeling.labels.clone();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen, vec![0, 1]);
    let out = ok(&["labels", "--tree", s(&tree), "--top", "3"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines
        .iter()
        .all(|l| l.split('\t').nth(2).unwrap().split(' ').count() == 3));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = TempDir::new().unwrap();
    let (corpus, _) = synth(dir.path(), "1", "30");
    let cfg = p(dir.path(), "model.toml");
    fs::write(
        &cfg,
        "k_range = { min = 2, max = 5 }\nrestarts = 2\nseed = 9\n",
    )
    .unwrap();
    let flat = p(dir.path(), "flat.json");
    ok(&[
        "cluster",
        "--corpus",
        s(&corpus),
        "--out",
        s(&flat),
        "--config",
        s(&cfg),
        "--seed",
        "3",
    ]);
    let file = FlatFile::read(&flat).unwrap();
    assert_eq!((file.config.k_range.min, file.config.k_range.max), (2, 5));
    assert_eq!(file.config.restarts, 2);
    assert_eq!(file.config.seed, 3);
}

#[test]
fn jsonl_corpus_with_min_df() {
    let dir = TempDir::new().unwrap();
    let corpus = p(dir.path(), "docs.jsonl");
    let mut text = String::new();
    for i in 0..30 {
        let body = if i % 2 == 0 {
            "apple banana apple cherry"
        } else {
            "delta echo echo foxtrot"
        };
        text += &format!("{{\"id\":\"doc{i}\",\"text\":\"{body} unique{i}\"}}\n");
    }
    fs::write(&corpus, text).unwrap();
    let flat = p(dir.path(), "flat.json");
    ok(&[
        "cluster",
        "--corpus",
        s(&corpus),
        "--out",
        s(&flat),
        "--min-df",
        "2",
        "--k-range",
        "1..3",
    ]);
    let file = FlatFile::read(&flat).unwrap();
    assert_eq!(file.lexicon.len(), 6);
    assert_eq!(file.clustering.k, 2);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let missing = p(dir.path(), "missing.tsv");
    let out = mbhc(&[
        "cluster",
        "--corpus",
        s(&missing),
        "--out",
        s(&p(dir.path(), "x.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let bad = p(dir.path(), "bad.tsv");
    fs::write(&bad, "d1\tcat\t2\nd2\tdog\n").unwrap();
    let out = mbhc(&[
        "cluster",
        "--corpus",
        s(&bad),
        "--out",
        s(&p(dir.path(), "x.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    assert_eq!(mbhc(&["cluster", "--bogus"]).status.code(), Some(1));
    assert_eq!(mbhc(&["--help"]).status.code(), Some(0));

    // A tree whose recorded score was edited fails verification.
    let (corpus, labels) = synth(dir.path(), "4", "30");
    let tree = p(dir.path(), "tree.json");
    ok(&["hierarchy", "--corpus", s(&corpus), "--out", s(&tree)]);
    let mut file = DendrogramFile::read(&tree).unwrap();
    file.final_log_ml += 1.0;
    file.write(&tree).unwrap();
    let out = mbhc(&["eval", "--tree", s(&tree), "--labels", s(&labels)]);
    assert_eq!(out.status.code(), Some(2));
}
