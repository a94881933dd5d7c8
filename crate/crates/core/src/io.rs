//! Corpus ingestion and the JSON artifacts written by the command-line tool.
//!
//! Every artifact carries a `format` tag checked on load.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Labeling;
use crate::flat::FlatClustering;
use crate::likelihood::{log_flat, log_hierarchy};
use crate::model::{
    ClusterStats, Dendrogram, FeatureId, FeaturePartition, Lexicon, ModelConfig, NodeId,
    SparseDocMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    /// Terms appearing in fewer documents are dropped.
    pub min_df: usize,
    pub lowercase: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            min_df: 1,
            lowercase: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One `{"id": ..., "text": ...}` object per line.
    Jsonl,
    /// Tab-separated `doc, term, count` lines.
    Counts,
}

impl CorpusFormat {
    /// `.jsonl` and `.json` files are JSON lines, anything else is counts.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub doc_ids: Vec<String>,
    pub lexicon: Lexicon,
    pub data: SparseDocMatrix,
}

/// Splits on every character that is not alphanumeric.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| {
            if lowercase {
                t.to_lowercase()
            } else {
                t.to_string()
            }
        })
        .collect()
}

/// Documents as term-count lists over a first-seen lexicon, before pruning.
struct RawCorpus {
    doc_ids: Vec<String>,
    lexicon: Lexicon,
    rows: Vec<HashMap<FeatureId, u32>>,
}

impl RawCorpus {
    fn new() -> Self {
        Self {
            doc_ids: Vec::new(),
            lexicon: Lexicon::new(),
            rows: Vec::new(),
        }
    }

    /// Drops rare terms, keeping first-seen order among the survivors.
    fn finish(self, min_df: usize) -> Result<Corpus> {
        if self.doc_ids.is_empty() {
            return Err(Error::input("corpus has no documents"));
        }
        let mut df = vec![0usize; self.lexicon.len()];
        for row in &self.rows {
            for &f in row.keys() {
                df[f as usize] += 1;
            }
        }
        let mut remap = vec![None; df.len()];
        let mut kept = Vec::new();
        for (f, &n) in df.iter().enumerate() {
            if n >= min_df {
                remap[f] = Some(kept.len() as FeatureId);
                kept.push(self.lexicon.terms()[f].clone());
            }
        }
        if kept.is_empty() {
            return Err(Error::input("no terms left after pruning"));
        }
        let rows = self
            .rows
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .filter_map(|(f, c)| remap[f as usize].map(|g| (g, c)))
                    .collect()
            })
            .collect();
        Ok(Corpus {
            doc_ids: self.doc_ids,
            data: SparseDocMatrix::from_rows(kept.len(), rows)?,
            lexicon: Lexicon::from_terms(kept)?,
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlRecord {
    id: String,
    text: String,
}

pub fn ingest_jsonl(reader: impl Read, opts: &IngestOptions) -> Result<Corpus> {
    let mut raw = RawCorpus::new();
    let mut seen = HashMap::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(&line)
            .map_err(|e| Error::input(format!("line {}: {e}", i + 1)))?;
        if seen.insert(rec.id.clone(), i + 1).is_some() {
            return Err(Error::input(format!(
                "line {}: duplicate id {:?}",
                i + 1,
                rec.id
            )));
        }
        let mut row = HashMap::new();
        for tok in tokenize(&rec.text, opts.lowercase) {
            *row.entry(raw.lexicon.insert(tok)).or_insert(0) += 1;
        }
        raw.doc_ids.push(rec.id);
        raw.rows.push(row);
    }
    raw.finish(opts.min_df)
}

/// Repeated `(doc, term)` lines add up. Documents appear in first-seen order.
pub fn ingest_counts(reader: impl Read, opts: &IngestOptions) -> Result<Corpus> {
    let mut raw = RawCorpus::new();
    let mut doc_index: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::input(format!("line {}: {what}", i + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        let [doc, term, count] = fields[..] else {
            return Err(bad("expected doc<TAB>term<TAB>count"));
        };
        let count: u32 = count
            .trim()
            .parse()
            .ok()
            .filter(|&c| c > 0)
            .ok_or_else(|| bad("count must be a positive integer"))?;
        let term = if opts.lowercase {
            term.to_lowercase()
        } else {
            term.to_string()
        };
        if term.is_empty() {
            return Err(bad("empty term"));
        }
        let d = *doc_index.entry(doc.to_string()).or_insert_with(|| {
            raw.doc_ids.push(doc.to_string());
            raw.rows.push(HashMap::new());
            raw.rows.len() - 1
        });
        let f = raw.lexicon.insert(term);
        let cell = raw.rows[d].entry(f).or_insert(0);
        *cell = cell
            .checked_add(count)
            .ok_or_else(|| bad("count overflow"))?;
    }
    raw.finish(opts.min_df)
}

pub fn ingest_path(path: &Path, opts: &IngestOptions) -> Result<Corpus> {
    let file = fs::File::open(path)?;
    match CorpusFormat::from_path(path) {
        CorpusFormat::Jsonl => ingest_jsonl(file, opts),
        CorpusFormat::Counts => ingest_counts(file, opts),
    }
}

/// Writes the counts format; rows with no tokens produce no lines.
pub fn write_counts(corpus: &Corpus, mut out: impl Write) -> Result<()> {
    for (doc, id) in corpus.doc_ids.iter().enumerate() {
        for &(f, c) in corpus.data.row(doc) {
            let term = corpus
                .lexicon
                .term(f)
                .ok_or_else(|| Error::Invariant(format!("feature {f} missing from lexicon")))?;
            writeln!(out, "{id}\t{term}\t{c}")?;
        }
    }
    Ok(())
}

/// A JSON file with a fixed `format` tag.
pub trait Artifact: Serialize + DeserializeOwned {
    const FORMAT: &'static str;

    fn format_tag(&self) -> &str;

    fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    fn from_json(s: &str) -> Result<Self> {
        let v: Self = serde_json::from_str(s)?;
        if v.format_tag() != Self::FORMAT {
            return Err(Error::input(format!(
                "expected format {:?}, found {:?}",
                Self::FORMAT,
                v.format_tag()
            )));
        }
        Ok(v)
    }

    fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

macro_rules! artifact {
    ($ty:ty, $tag:literal) => {
        impl Artifact for $ty {
            const FORMAT: &'static str = $tag;

            fn format_tag(&self) -> &str {
                &self.format
            }
        }
    };
}

/// Output of the flat stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatFile {
    pub format: String,
    pub config: ModelConfig,
    pub lexicon: Lexicon,
    pub doc_ids: Vec<String>,
    pub clustering: FlatClustering,
}
artifact!(FlatFile, "mbhc-flat/1");

impl FlatFile {
    pub fn new(config: ModelConfig, corpus: &Corpus, clustering: FlatClustering) -> Self {
        Self {
            format: Self::FORMAT.into(),
            config,
            lexicon: corpus.lexicon.clone(),
            doc_ids: corpus.doc_ids.clone(),
            clustering,
        }
    }
}

/// Readable digest of one tree node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub id: NodeId,
    pub children: Vec<NodeId>,
    pub local_noise: Vec<String>,
    pub docs: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DendrogramFile {
    pub format: String,
    pub config: ModelConfig,
    pub lexicon: Lexicon,
    pub doc_ids: Vec<String>,
    pub partition: FeaturePartition,
    pub flat_log_ml: f64,
    pub final_log_ml: f64,
    pub summary: Vec<NodeSummary>,
    pub tree: Dendrogram,
}
artifact!(DendrogramFile, "mbhc-dendrogram/1");

impl DendrogramFile {
    pub fn new(
        config: ModelConfig,
        lexicon: Lexicon,
        doc_ids: Vec<String>,
        flat: &FlatClustering,
        tree: Dendrogram,
    ) -> Result<Self> {
        let final_log_ml = log_hierarchy(&tree, &flat.partition, &config)?;
        let summary = summarize(&tree, &lexicon)?;
        Ok(Self {
            format: Self::FORMAT.into(),
            config,
            lexicon,
            doc_ids,
            partition: flat.partition.clone(),
            flat_log_ml: flat.score,
            final_log_ml,
            summary,
            tree,
        })
    }

    /// Recomputes both scores and the node digests from the stored tree and
    /// checks them, along with the tree's structural invariants.
    pub fn verify(&self) -> Result<()> {
        self.tree.check_invariants()?;
        if self.summary != summarize(&self.tree, &self.lexicon)? {
            return Err(Error::Invariant(
                "node summary disagrees with the tree".into(),
            ));
        }
        let leaves: Vec<ClusterStats> = self.tree.nodes()[..self.tree.n_leaves()]
            .iter()
            .map(|n| n.stats.clone())
            .collect();
        let flat = log_flat(&leaves, &self.partition, &self.config)?;
        let fin = log_hierarchy(&self.tree, &self.partition, &self.config)?;
        let traced =
            self.flat_log_ml + self.tree.merge_trace().iter().map(|m| m.delta).sum::<f64>();
        for (name, stored, fresh) in [
            ("flat", self.flat_log_ml, flat),
            ("final", self.final_log_ml, fin),
            ("flat plus merge deltas", traced, fin),
        ] {
            if (stored - fresh).abs() > 1e-9 * stored.abs().max(fresh.abs()).max(1.0) {
                return Err(Error::Invariant(format!(
                    "{name} log-ML {stored} does not match recomputed {fresh}"
                )));
            }
        }
        Ok(())
    }
}

fn summarize(tree: &Dendrogram, lexicon: &Lexicon) -> Result<Vec<NodeSummary>> {
    tree.nodes()
        .iter()
        .map(|n| {
            let local_noise =
                n.local_noise
                    .iter()
                    .map(|&f| {
                        lexicon.term(f).map(str::to_string).ok_or_else(|| {
                            Error::input(format!("feature {f} missing from lexicon"))
                        })
                    })
                    .collect::<Result<_>>()?;
            Ok(NodeSummary {
                id: n.id,
                children: n.children.clone(),
                local_noise,
                docs: n.stats.doc_count(),
                tokens: n.stats.total_tokens(),
            })
        })
        .collect()
}

/// One named labeling of every document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelLevel {
    pub name: String,
    pub labels: Vec<usize>,
}

/// Reference labels, finest level last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsFile {
    pub format: String,
    pub doc_ids: Vec<String>,
    pub levels: Vec<LabelLevel>,
}
artifact!(LabelsFile, "mbhc-labels/1");

impl LabelsFile {
    pub fn new(doc_ids: Vec<String>, levels: Vec<LabelLevel>) -> Result<Self> {
        for l in &levels {
            if l.labels.len() != doc_ids.len() {
                return Err(Error::input(format!(
                    "level {:?} has {} labels for {} documents",
                    l.name,
                    l.labels.len(),
                    doc_ids.len()
                )));
            }
        }
        Ok(Self {
            format: Self::FORMAT.into(),
            doc_ids,
            levels,
        })
    }
}

/// Output of a dendrogram cut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingFile {
    pub format: String,
    pub k: usize,
    pub doc_ids: Vec<String>,
    pub labels: Vec<usize>,
}
artifact!(LabelingFile, "mbhc-labeling/1");

impl LabelingFile {
    pub fn new(doc_ids: Vec<String>, labeling: &Labeling) -> Self {
        Self {
            format: Self::FORMAT.into(),
            k: labeling.k(),
            doc_ids,
            labels: labeling.labels().to_vec(),
        }
    }
}

/// Reads a config from TOML, or JSON when the extension is `.json`.
pub fn load_config(path: &Path) -> Result<ModelConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: ModelConfig = if path.extension().and_then(|e| e.to_str()) == Some("json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text).map_err(|e| Error::input(format!("{}: {e}", path.display())))?
    };
    cfg.validate()?;
    Ok(cfg)
}
