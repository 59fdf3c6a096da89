use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kgwalk_core::eval::Summary;
use kgwalk_core::experiment::{self, GraphCache, LoadedConfig, RunError};
use kgwalk_core::graph::{IngestOptions, IngestReport, KnowledgeGraph};
use kgwalk_core::verbalize::{TemplateTable, Verbalizer};

/// Sentence count of the reference English export.
const REFERENCE_SENTENCES: u64 = 3_423_004;

#[derive(Parser)]
#[command(
    name = "kgwalk",
    version,
    about = "Knowledge-graph walk contexts for multiple-choice QA"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct DumpArgs {
    /// ConceptNet assertions dump (.csv or .csv.gz).
    #[arg(long)]
    dump: PathBuf,
    #[arg(long, default_value = "en")]
    language: String,
    /// Drop parallel edges with identical (subject, relation, object).
    #[arg(long)]
    dedup: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a dump and print ingest counts.
    Ingest {
        #[command(flatten)]
        dump: DumpArgs,
        /// Also write the counts as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write `<triple index>\t<sentence>` lines for the embedder.
    ExportTexts {
        #[command(flatten)]
        dump: DumpArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write `<node id>\t<label>` lines.
        #[arg(long)]
        labels_out: Option<PathBuf>,
    },
    /// Run one or more experiment configs.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
    /// Score a journal against a dataset.
    Score {
        journal: PathBuf,
        dataset: PathBuf,
        /// Write the summary JSON here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate summary files.
    Report {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
    },
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Data(format!("{}: {e}", path.display()))
}

fn load_graph(args: &DumpArgs) -> Result<(KnowledgeGraph, IngestReport), RunError> {
    let mut options = IngestOptions::new(&args.language);
    options.dedup = args.dedup;
    Ok(KnowledgeGraph::ingest_conceptnet(&args.dump, &options)?)
}

fn print_report(report: &IngestReport) {
    println!(
        "nodes {}  triples {}  skipped {}  filtered {}  duplicates {}",
        report.nodes, report.triples, report.skipped, report.filtered, report.duplicates
    );
}

fn ingest(dump: &DumpArgs, out: Option<&Path>) -> Result<(), RunError> {
    let (_, report) = load_graph(dump)?;
    print_report(&report);
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&report).map_err(|e| data_err(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| data_err(path, e))?;
    }
    Ok(())
}

fn export_texts(dump: &DumpArgs, out: &Path, labels_out: Option<&Path>) -> Result<(), RunError> {
    let (graph, report) = load_graph(dump)?;
    print_report(&report);
    let table = TemplateTable::default();
    let verbalizer = Verbalizer::new(&graph, &table);
    let file = File::create(out).map_err(|e| data_err(out, e))?;
    let count = verbalizer.write_text_export(file).map_err(|e| data_err(out, e))?;
    if let Some(path) = labels_out {
        let file = File::create(path).map_err(|e| data_err(path, e))?;
        let n = verbalizer.write_label_export(file).map_err(|e| data_err(path, e))?;
        println!("labels {n} -> {}", path.display());
    }
    let diff = count as i64 - REFERENCE_SENTENCES as i64;
    println!(
        "sentences {count} -> {} (reference {REFERENCE_SENTENCES}, difference {diff:+}; language {}, dedup {})",
        out.display(),
        dump.language,
        dump.dedup
    );
    Ok(())
}

fn run(configs: &[PathBuf]) -> Result<(), RunError> {
    let mut graphs = GraphCache::default();
    for path in configs {
        let loaded = LoadedConfig::load(path)?;
        eprintln!("running {}", path.display());
        let outcome = experiment::run(&loaded, &mut graphs)?;
        let s = &outcome.summary;
        println!(
            "{}\taccuracy {:.4} ({}/{})\terror-flagged {}\tresumed {}\t{}",
            path.display(),
            s.accuracy,
            s.correct,
            s.n,
            s.error_flagged,
            outcome.resumed,
            outcome.output_dir.display()
        );
    }
    Ok(())
}

fn score(journal: &Path, dataset: &Path, out: Option<&Path>) -> Result<(), RunError> {
    let (_, summary) = experiment::score_journal(journal, dataset)?;
    let text = serde_json::to_string_pretty(&summary).map_err(|e| data_err(journal, e))?;
    println!("{text}");
    if let Some(path) = out {
        std::fs::write(path, text + "\n").map_err(|e| data_err(path, e))?;
    }
    Ok(())
}

/// Setting description from the manifest next to a summary, if any.
fn setting_label(summary: &Path) -> String {
    let manifest = summary.with_file_name(experiment::MANIFEST_FILE);
    std::fs::read_to_string(manifest)
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|m| {
            let config = m.get("config")?;
            if let Some(name) = config.get("name").and_then(|n| n.as_str()) {
                return Some(name.to_string());
            }
            let s = config.get("setting")?;
            let mut parts = vec![s.get("regime")?.as_str()?.to_string()];
            for key in ["k", "shape", "relevance", "order"] {
                if let Some(v) = s.get(key) {
                    parts.push(format!(
                        "{key}={}",
                        v.as_str().map_or_else(|| v.to_string(), String::from)
                    ));
                }
            }
            Some(parts.join(" "))
        })
        .unwrap_or_else(|| "-".into())
}

fn report(summaries: &[PathBuf]) -> Result<(), RunError> {
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let w = |e: std::io::Error| RunError::Data(e.to_string());
    writeln!(
        out,
        "summary\tsetting\tn\tcorrect\taccuracy\terror_flagged\tconfig_digest"
    )
    .map_err(w)?;
    for path in summaries {
        let text = std::fs::read_to_string(path).map_err(|e| data_err(path, e))?;
        let s: Summary = serde_json::from_str(&text).map_err(|e| data_err(path, e))?;
        let digest = s.config_digest.as_deref().map_or("-", |d| &d[..d.len().min(12)]);
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.4}\t{}\t{}",
            path.display(),
            setting_label(path),
            s.n,
            s.correct,
            s.accuracy,
            s.error_flagged,
            digest
        )
        .map_err(w)?;
    }
    out.flush().map_err(w)
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
    let result = match &cli.command {
        Command::Ingest { dump, report } => ingest(dump, report.as_deref()),
        Command::ExportTexts { dump, out, labels_out } => export_texts(dump, out, labels_out.as_deref()),
        Command::Run { configs } => run(configs),
        Command::Score { journal, dataset, out } => score(journal, dataset, out.as_deref()),
        Command::Report { summaries } => report(summaries),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
