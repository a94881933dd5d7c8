use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mbhc::eval::{cut, node_labels, Labeling};
use mbhc::flat::fit_flat;
use mbhc::io::{
    ingest_path, load_config, write_counts, Artifact, Corpus, DendrogramFile, FlatFile,
    IngestOptions, LabelLevel, LabelingFile, LabelsFile,
};
use mbhc::likelihood::log_flat;
use mbhc::mhac::run_mhac;
use mbhc::model::{KRange, Lexicon, MergeMode, ModelConfig, PrefixRule, Prior};
use mbhc::synth::{generate, structure_1, structure_2, StructureSpec};
use mbhc::{nmi, Error, Result};

#[derive(Parser)]
#[command(
    name = "mbhc",
    version,
    about = "Model-based hierarchical clustering of count data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the flat mixture and write a flat-clustering file.
    Cluster {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        ingest: IngestArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Build the hierarchy from a flat-clustering file, or from a corpus.
    Hierarchy {
        #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
        flat: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        ingest: IngestArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Sample a synthetic corpus and its reference labels.
    Synth {
        /// Built-in structure, 1 or 2.
        #[arg(long, conflicts_with = "spec")]
        structure: Option<u8>,
        /// Structure spec as JSON.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        docs_per_leaf: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Counts-format corpus output.
        #[arg(long)]
        out_corpus: PathBuf,
        #[arg(long)]
        out_labels: PathBuf,
    },
    /// Compare a hierarchy with reference labels, level by level.
    Eval {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Cut a hierarchy into k groups.
    Cut {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the shared terms of every merged node.
    Labels {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
}

#[derive(Args)]
struct IngestArgs {
    /// Drop terms found in fewer documents.
    #[arg(long, default_value_t = 1)]
    min_df: usize,
    /// Keep the case of terms.
    #[arg(long)]
    keep_case: bool,
}

impl IngestArgs {
    fn options(&self) -> IngestOptions {
        IngestOptions {
            min_df: self.min_df,
            lowercase: !self.keep_case,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    FirstDecrease,
    Best,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fs,
    Nofs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct ModelArgs {
    /// TOML (or .json) model config; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k_range: Option<KRange>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Scalar prior on useful-feature distributions.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    prefix_rule: Option<RuleArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    root_noise: Option<Switch>,
}

impl ModelArgs {
    /// Flags over config file over `base`.
    fn resolve(&self, base: ModelConfig) -> Result<ModelConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => base,
        };
        if let Some(k) = self.k_range {
            cfg.k_range = k;
        }
        if let Some(r) = self.restarts {
            cfg.restarts = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = Prior::scalar(a)?;
        }
        if let Some(r) = self.prefix_rule {
            cfg.prefix_rule = match r {
                RuleArg::FirstDecrease => PrefixRule::StopAtFirstDecrease,
                RuleArg::Best => PrefixRule::BestPrefix,
            };
        }
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Fs => MergeMode::Fs,
                ModeArg::Nofs => MergeMode::NoFs,
            };
        }
        if let Some(s) = self.root_noise {
            cfg.root_noise = matches!(s, Switch::On);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_corpus(path: &Path, ingest: &IngestArgs) -> Result<Corpus> {
    ingest_path(path, &ingest.options())
}

fn run_flat(corpus: &Corpus, cfg: &ModelConfig) -> Result<mbhc::FlatClustering> {
    cfg.validate_for(corpus.data.n_features())?;
    fit_flat(&corpus.data, cfg)
}

fn cmd_cluster(corpus: &Path, out: &Path, ingest: &IngestArgs, model: &ModelArgs) -> Result<()> {
    let cfg = model.resolve(ModelConfig::default())?;
    let corpus = load_corpus(corpus, ingest)?;
    let flat = run_flat(&corpus, &cfg)?;
    println!("clusters: {}", flat.k);
    println!("flat log-ML: {:.6}", flat.score);
    FlatFile::new(cfg, &corpus, flat).write(out)
}

fn cmd_hierarchy(
    flat_path: Option<&Path>,
    corpus: Option<&Path>,
    out: &Path,
    ingest: &IngestArgs,
    model: &ModelArgs,
) -> Result<()> {
    let (cfg, lexicon, doc_ids, mut flat) = match (flat_path, corpus) {
        (Some(p), _) => {
            let file = FlatFile::read(p)?;
            let cfg = model.resolve(file.config)?;
            (cfg, file.lexicon, file.doc_ids, file.clustering)
        }
        (None, Some(p)) => {
            let cfg = model.resolve(ModelConfig::default())?;
            let corpus = load_corpus(p, ingest)?;
            let flat = run_flat(&corpus, &cfg)?;
            (cfg, corpus.lexicon, corpus.doc_ids, flat)
        }
        (None, None) => return Err(Error::Input("need --flat or --corpus".into())),
    };
    cfg.validate_for(lexicon.len())?;
    // Hyperparameters may differ from the ones the flat file was scored with.
    flat.score = log_flat(&flat.stats, &flat.partition, &cfg)?;
    let tree = run_mhac(&flat, &cfg)?;
    let file = DendrogramFile::new(cfg, lexicon, doc_ids, &flat, tree)?;
    file.verify()?;
    println!("leaves: {}", file.tree.n_leaves());
    println!("merges: {}", file.tree.n_merges());
    println!("flat log-ML: {:.6}", file.flat_log_ml);
    println!("final log-ML: {:.6}", file.final_log_ml);
    file.write(out)
}

fn synth_corpus(data: mbhc::SparseDocMatrix) -> Result<Corpus> {
    let lexicon = Lexicon::from_terms((0..data.n_features()).map(|f| format!("f{f}")))?;
    Ok(Corpus {
        doc_ids: (0..data.n_docs()).map(|d| format!("d{d}")).collect(),
        lexicon,
        data,
    })
}

fn cmd_synth(
    structure: Option<u8>,
    spec_path: Option<&Path>,
    docs_per_leaf: Option<usize>,
    seed: Option<u64>,
    out_corpus: &Path,
    out_labels: &Path,
) -> Result<()> {
    let mut spec: StructureSpec = match (structure, spec_path) {
        (_, Some(p)) => serde_json::from_str(&fs::read_to_string(p)?)?,
        (None | Some(1), None) => structure_1(500, 0),
        (Some(2), None) => structure_2(500, 0),
        (Some(s), None) => return Err(Error::Input(format!("unknown structure {s}"))),
    };
    if let Some(n) = docs_per_leaf {
        spec.docs_per_leaf = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (data, gt) = generate(&spec)?;
    let corpus = synth_corpus(data)?;
    let mut buf = Vec::new();
    write_counts(&corpus, &mut buf)?;
    fs::write(out_corpus, buf)?;
    let mut levels: Vec<LabelLevel> = gt
        .node_labels
        .iter()
        .enumerate()
        .map(|(d, labels)| LabelLevel {
            name: format!("depth-{}", d + 1),
            labels: labels.clone(),
        })
        .collect();
    levels.push(LabelLevel {
        name: "leaf".into(),
        labels: gt.leaf_labels.clone(),
    });
    LabelsFile::new(corpus.doc_ids, levels)?.write(out_labels)?;
    println!("documents: {}", corpus.data.n_docs());
    Ok(())
}

/// Reads a dendrogram file and re-checks its scores and structure.
fn read_tree(path: &Path) -> Result<DendrogramFile> {
    let file = DendrogramFile::read(path)?;
    file.verify()?;
    Ok(file)
}

fn cmd_eval(tree_path: &Path, labels_path: &Path) -> Result<()> {
    let file = read_tree(tree_path)?;
    let labels = LabelsFile::read(labels_path)?;
    let index: HashMap<&str, usize> = labels
        .doc_ids
        .iter()
        .enumerate()
        .map(|(i, d)| (d.as_str(), i))
        .collect();
    let order: Vec<usize> = file
        .doc_ids
        .iter()
        .map(|d| {
            index
                .get(d.as_str())
                .copied()
                .ok_or_else(|| Error::Input(format!("document {d:?} has no reference label")))
        })
        .collect::<Result<_>>()?;
    let tree = &file.tree;
    println!("{:<12} {:>6} {:>8}", "level", "k", "nmi");
    for level in &labels.levels {
        let truth = Labeling::from_ids(&order.iter().map(|&i| level.labels[i]).collect::<Vec<_>>());
        let k = {
            let mut seen = level.labels.clone();
            seen.sort_unstable();
            seen.dedup();
            seen.len()
        };
        // The finest level is compared with the leaves themselves.
        let k_cut = if level.name == "leaf" {
            tree.n_leaves()
        } else {
            k
        };
        match cut(tree, k_cut.min(tree.n_leaves())) {
            Ok(found) => println!("{:<12} {:>6} {:>8.4}", level.name, k, nmi(&truth, &found)?),
            Err(_) => println!("{:<12} {:>6} {:>8}", level.name, k, "NA"),
        }
    }
    println!("merges: {}", tree.n_merges());
    Ok(())
}

fn cmd_cut(tree_path: &Path, k: usize, out: &Path) -> Result<()> {
    let file = read_tree(tree_path)?;
    let labeling = cut(&file.tree, k)?;
    LabelingFile::new(file.doc_ids, &labeling).write(out)
}

fn cmd_labels(tree_path: &Path, top: usize) -> Result<()> {
    let file = read_tree(tree_path)?;
    for node in file
        .tree
        .nodes()
        .iter()
        .filter(|n| !n.is_leaf() && !n.synthetic)
    {
        let terms = node_labels(&file.tree, node.id, &file.lexicon, top)?;
        println!("{}\t{:?}\t{}", node.id, node.children, terms.join(" "));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Cluster {
            corpus,
            out,
            ingest,
            model,
        } => cmd_cluster(corpus, out, ingest, model),
        Command::Hierarchy {
            flat,
            corpus,
            out,
            ingest,
            model,
        } => cmd_hierarchy(flat.as_deref(), corpus.as_deref(), out, ingest, model),
        Command::Synth {
            structure,
            spec,
            docs_per_leaf,
            seed,
            out_corpus,
            out_labels,
        } => cmd_synth(
            *structure,
            spec.as_deref(),
            *docs_per_leaf,
            *seed,
            out_corpus,
            out_labels,
        ),
        Command::Eval { tree, labels } => cmd_eval(tree, labels),
        Command::Cut { tree, k, out } => cmd_cut(tree, *k, out),
        Command::Labels { tree, top } => cmd_labels(tree, *top),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
