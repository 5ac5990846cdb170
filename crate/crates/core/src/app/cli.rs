use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::adapters::ImageInput;
use crate::app::config::{AppConfig, EXAMPLE_CONFIG};
use crate::app::runtime::Runtime;
use crate::app::{AppError, EXIT_OK};
use crate::domain::{CaseId, Embedding, Label, MemoryEntry};
use crate::eval::{
    correctness, evaluate, join_predictions, load_predictions, load_rules, paired_ttest,
    remap_labels, split, BootstrapSpec, Manifest,
};
use crate::index::load_sidecar;
use crate::orchestrator::ReportDocument;

#[derive(Debug, Parser)]
#[command(name = "evoderm", version, about = "Memory-augmented diagnostic reasoning over skin images")]
pub struct Cli {
    /// TOML configuration file. EVODERM_* variables override its keys.
    #[arg(long, global = true, env = "EVODERM_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Diagnose one image and write the report.
    Diagnose(DiagnoseArgs),
    /// Inspect and evolve the case memory.
    #[command(subcommand)]
    Memory(MemoryCommand),
    /// Manage the handbook knowledge base.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Score predictions against a gold manifest.
    Eval(EvalArgs),
    /// Seeded train/test split of a manifest.
    Split(SplitArgs),
    /// Merge sub-labels into classes with ordered rules.
    Remap(RemapArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Print a commented example configuration.
    ConfigExample,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Image file; a `<image>.meta.json` sidecar is read when present.
    pub image: PathBuf,
    /// Store the case under its final diagnosis (may evolve a guideline).
    #[arg(long)]
    pub confirm: bool,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    /// Skip guideline lookup and case retrieval.
    #[arg(long)]
    pub no_memory: bool,
}

#[derive(Debug, Subcommand)]
pub enum MemoryCommand {
    /// Insert cases from a CSV manifest `case_id,image_path,key_findings,diagnosis`.
    Add {
        #[arg(long)]
        manifest: PathBuf,
        /// Embedding sidecar keyed by image_path; other images go through the extractor.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Top-K most similar stored cases.
    Query {
        #[arg(long, conflicts_with = "embedding", required_unless_present = "embedding")]
        image: Option<PathBuf>,
        /// Comma-separated query vector.
        #[arg(long, allow_hyphen_values = true)]
        embedding: Option<String>,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        json: bool,
    },
    /// Evolve every category (or one) whose pending count reached the threshold.
    Evolve {
        #[arg(long)]
        category: Option<String>,
    },
    /// Guideline version history with refinement deltas.
    Timeline {
        #[arg(long)]
        category: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Dump the store: JSON to stdout, or a checksummed snapshot with --out.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum KbCommand {
    /// Chunk, embed and store a markdown/text file or directory.
    Ingest {
        path: PathBuf,
        /// Skip chunks whose text is already stored.
        #[arg(long)]
        dedupe: bool,
    },
    /// Textbook chunks most related to a disease label.
    Query {
        label: String,
        #[arg(short, long, default_value_t = 3)]
        k: usize,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Gold manifest CSV `sample_id,image_path,label[,sub_label]`.
    #[arg(long)]
    pub gold: PathBuf,
    /// Predictions CSV `sample_id,predicted_label`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Second predictions file for a paired t-test on per-sample correctness.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Bootstrap resamples for percentile intervals (>= 100).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub stratified: bool,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RemapArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON array of {pattern, target, match: "exact" | "substring"}.
    #[arg(long)]
    pub rules: PathBuf,
    #[arg(long)]
    pub drop_unmatched: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overrides `service.bind`.
    #[arg(long)]
    pub bind: Option<String>,
}

/// Parses `args` and runs the command, writing normal output to `out`.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { crate::app::EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), AppError> {
    let load = || AppConfig::load(cli.config.as_deref());
    match cli.command {
        Command::ConfigExample => {
            out.write_all(EXAMPLE_CONFIG.as_bytes())?;
            Ok(())
        }
        Command::Diagnose(a) => cmd_diagnose(load()?, a, out),
        Command::Memory(m) => cmd_memory(load()?, m, out),
        Command::Kb(k) => cmd_kb(load()?, k, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Split(a) => cmd_split(a, out),
        Command::Remap(a) => cmd_remap(a, out),
        Command::Serve(a) => {
            let mut cfg = load()?;
            if let Some(b) = a.bind {
                cfg.service.bind = b;
            }
            crate::app::service::serve_blocking(cfg)
        }
    }
}

fn cmd_diagnose(mut cfg: AppConfig, a: DiagnoseArgs, out: &mut dyn Write) -> Result<(), AppError> {
    if a.no_memory {
        cfg.pipeline.use_memory = false;
    }
    let image = ImageInput::from_path(&a.image)?;
    let rt = Runtime::open(cfg)?;
    let d = rt.diagnose(&image)?;
    let json = ReportDocument::new(&d).to_json();
    match &a.report_out {
        Some(p) => {
            std::fs::write(p, &json)?;
            writeln!(out, "final diagnosis: {}", d.report.final_diagnosis)?;
            writeln!(out, "report written to {}", p.display())?;
        }
        None => out.write_all(json.as_bytes())?,
    }
    if a.confirm {
        let outcome = rt.confirm(&image, &d)?;
        writeln!(out, "case stored: {}", outcome.case_id)?;
        if let Some(v) = outcome.evolved {
            writeln!(out, "guideline evolved: {} v{}", v.category, v.version)?;
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CaseRow {
    case_id: String,
    image_path: String,
    key_findings: String,
    diagnosis: String,
}

fn parse_vector(s: &str) -> Result<Embedding, AppError> {
    let values = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| AppError::Usage(format!("bad embedding: {e}")))?;
    Embedding::new(values).map_err(|e| AppError::Usage(format!("bad embedding: {e}")))
}

fn read_cases(rt: &Runtime, manifest: &Path, sidecar: Option<&Path>) -> Result<Vec<MemoryEntry>, AppError> {
    let vectors: HashMap<String, Embedding> = match sidecar {
        Some(p) => load_sidecar(p)
            .map_err(|e| AppError::Usage(format!("{}: {e}", p.display())))?
            .into_iter()
            .map(|r| (r.image_path.to_string_lossy().into_owned(), r.embedding))
            .collect(),
        None => HashMap::new(),
    };
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::Reader::from_path(manifest).map_err(|e| AppError::Usage(e.to_string()))?;
    let mut entries = Vec::new();
    for row in rdr.deserialize::<CaseRow>() {
        let row = row.map_err(|e| AppError::Usage(format!("{}: {e}", manifest.display())))?;
        let embedding = match vectors.get(&row.image_path) {
            Some(e) => e.clone(),
            None => rt.ports.extractor.extract(&std::fs::read(base.join(&row.image_path))?),
        };
        entries.push(MemoryEntry {
            id: CaseId(row.case_id),
            embedding,
            key_findings: row.key_findings,
            diagnosis: Label::new(row.diagnosis),
            created_at: 0,
        });
    }
    Ok(entries)
}

fn cmd_memory(cfg: AppConfig, m: MemoryCommand, out: &mut dyn Write) -> Result<(), AppError> {
    let rt = Runtime::open(cfg)?;
    let summarizer = rt.ports.summarizer.clone();
    match m {
        MemoryCommand::Add {
            manifest,
            embeddings,
        } => {
            let entries = read_cases(&rt, &manifest, embeddings.as_deref())?;
            let outcomes = rt.store.add_cases(entries, summarizer.as_ref())?;
            writeln!(out, "added {} case(s)", outcomes.len())?;
            for v in outcomes.iter().filter_map(|o| o.evolved.as_ref()) {
                writeln!(out, "guideline evolved: {} v{}", v.category, v.version)?;
            }
        }
        MemoryCommand::Query {
            image,
            embedding,
            k,
            json,
        } => {
            let q = match (image, embedding) {
                (Some(p), _) => rt.ports.extractor.extract(&std::fs::read(p)?),
                (None, Some(s)) => parse_vector(&s)?,
                (None, None) => return Err(AppError::Usage("--image or --embedding is required".into())),
            };
            let hits = rt.store.snapshot().query_similar(&q, k)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&hits).expect("serializable"))?;
            } else {
                writeln!(out, "{:>4}  {:<24}  {:>9}  diagnosis", "rank", "case_id", "score")?;
                for (i, h) in hits.iter().enumerate() {
                    writeln!(out, "{:>4}  {:<24}  {:>9.6}  {}", i + 1, h.case_id, h.score, h.diagnosis)?;
                }
            }
        }
        MemoryCommand::Evolve { category } => {
            let g = rt.store.snapshot();
            let cats: Vec<Label> = match category {
                Some(c) => vec![Label::new(c)],
                None => g.categories().keys().cloned().collect(),
            };
            for c in cats {
                match rt.store.maybe_evolve(&c, summarizer.as_ref())? {
                    Some(v) => writeln!(out, "guideline evolved: {} v{}", v.category, v.version)?,
                    None => writeln!(
                        out,
                        "no evolution: {c} (pending {} < threshold {})",
                        g.pending(&c),
                        g.config().n_thresh
                    )?,
                }
            }
        }
        MemoryCommand::Timeline { category, json } => {
            let g = rt.store.snapshot();
            let cats: Vec<Label> = match category {
                Some(c) => vec![Label::new(c)],
                None => g.categories().keys().cloned().collect(),
            };
            if json {
                let rows: Vec<_> = cats
                    .iter()
                    .map(|c| serde_json::json!({"category": c, "versions": g.guideline_timeline(c)}))
                    .collect();
                writeln!(out, "{}", serde_json::to_string_pretty(&rows).expect("serializable"))?;
            } else {
                writeln!(out, "{:<24}  {:>7}  {:>7}  {:>7}", "category", "version", "delta", "sources")?;
                for c in &cats {
                    for r in g.guideline_timeline(c) {
                        writeln!(
                            out,
                            "{:<24}  {:>7}  {:>7.4}  {:>7}",
                            c.as_str(),
                            r.version,
                            r.refinement_delta,
                            r.source_count
                        )?;
                    }
                }
            }
        }
        MemoryCommand::Export { out: path } => {
            let g = rt.store.snapshot();
            match path {
                Some(p) => {
                    g.save(&p)?;
                    writeln!(out, "snapshot written to {}", p.display())?;
                }
                None => writeln!(out, "{}", g.export_json())?,
            }
        }
    }
    Ok(())
}

fn cmd_kb(cfg: AppConfig, k: KbCommand, out: &mut dyn Write) -> Result<(), AppError> {
    let (_, embedder) = crate::app::build_ports(&cfg)?;
    let mut kb = crate::app::load_kb(&cfg.paths.kb_path, embedder)?;
    match k {
        KbCommand::Ingest { path, dedupe } => {
            kb.dedupe = dedupe;
            let added = if path.is_dir() {
                kb.ingest_dir(&path, &cfg.chunking)?
            } else {
                let text = std::fs::read_to_string(&path)?;
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                kb.ingest(&text, &name, &cfg.chunking)?
            };
            if let Some(parent) = cfg.paths.kb_path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            kb.save(&cfg.paths.kb_path)?;
            writeln!(out, "ingested {added} chunk(s); knowledge base has {}", kb.len())?;
        }
        KbCommand::Query { label, k } => {
            for s in kb.retrieve_prior(&label, k)? {
                writeln!(out, "[{}] {:.6} {}", s.chunk_id, s.score.unwrap_or(0.0), s.text.replace('\n', " "))?;
            }
        }
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), AppError> {
    let gold = Manifest::load(&a.gold)?;
    let labels = gold.label_space();
    let preds = join_predictions(&gold, &load_predictions(&a.pred)?)?;
    let bootstrap = a.bootstrap.map(|resamples| BootstrapSpec {
        resamples,
        seed: a.seed,
        level: a.level,
    });
    let mut report = evaluate(&preds, &labels, bootstrap)?;
    if let Some(other) = &a.compare {
        let other = join_predictions(&gold, &load_predictions(other)?)?;
        crate::eval::confusion_matrix(&other, &labels)?;
        report.comparison = Some(paired_ttest(&correctness(&preds), &correctness(&other))?);
    }
    if a.json {
        out.write_all(report.to_json().as_bytes())?;
    } else {
        out.write_all(report.to_table().as_bytes())?;
    }
    Ok(())
}

fn cmd_split(a: SplitArgs, out: &mut dyn Write) -> Result<(), AppError> {
    let m = Manifest::load(&a.manifest)?;
    let (train, test) = split(&m, a.ratio, a.seed, a.stratified)?;
    train.save(&a.train_out)?;
    test.save(&a.test_out)?;
    writeln!(out, "train {} / test {}", train.len(), test.len())?;
    for (label, n) in train.class_counts() {
        writeln!(out, "  {label}: {n}")?;
    }
    Ok(())
}

fn cmd_remap(a: RemapArgs, out: &mut dyn Write) -> Result<(), AppError> {
    let m = Manifest::load(&a.manifest)?;
    let rules = load_rules(&a.rules)?;
    let r = remap_labels(&m, &rules, a.drop_unmatched);
    r.manifest.save(&a.out)?;
    for (label, n) in &r.counts {
        writeln!(out, "{label}: {n}")?;
    }
    writeln!(out, "dropped: {}", r.dropped)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_lists_subcommands() {
        let help = Cli::command().render_help().to_string();
        for sub in ["diagnose", "memory", "kb", "eval", "serve"] {
            assert!(help.contains(sub), "{sub}");
        }
    }

    #[test]
    fn vector_parsing() {
        assert_eq!(parse_vector("1, -2.5").unwrap().values(), &[1.0, -2.5]);
        assert!(parse_vector("1,x").is_err());
    }
}
