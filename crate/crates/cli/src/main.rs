use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod overlay;
mod report;
mod run;

use commands::{ClusterArgs, CurateArgs, EvalArgs, ExplainArgs, IngestArgs, TrainArgs};
use config::RunConfig;
use run::Run;

/// Synthetic chest X-ray curation, pneumonia classifier training and
/// external validation.
///
/// Each invocation writes to a fresh `{output-dir}/{run_id}/` with a
/// `run.json` record. The generation provider token is read from the
/// CXRSYNTH_PROVIDER_TOKEN environment variable.
#[derive(Debug, Parser)]
#[command(name = "cxrsynth", version)]
struct Cli {
    /// Run configuration (JSON); defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate, crop, deduplicate and split a synthetic training set.
    Curate(CurateArgs),
    /// Build a manifest for a real corpus or a pre-generated folder.
    Ingest(IngestArgs),
    /// Fine-tune the classifier on a split manifest.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest: AUROC/AUPR with bootstrap CIs and curves.
    Eval(EvalArgs),
    /// K-means and 2-D embeddings of penultimate features.
    Cluster(ClusterArgs),
    /// Grad-CAM maps and overlays for selected records.
    Explain(ExplainArgs),
    /// Consolidate metric reports under a directory into JSON and a markdown table.
    Report {
        /// Directory to scan; defaults to the output directory.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Curate(_) => "curate",
            Command::Ingest(_) => "ingest",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Cluster(_) => "cluster",
            Command::Explain(_) => "explain",
            Command::Report { .. } => "report",
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?.effective(cli.seed, cli.output_dir);
    // command overrides and input checks happen before any output is created
    match &cli.command {
        Command::Curate(a) => commands::apply_curate_overrides(&mut cfg, a),
        Command::Ingest(a) => commands::check_ingest(&cfg, a)?,
        Command::Train(a) => commands::check_train(a)?,
        Command::Eval(a) => commands::check_model_inputs(&a.checkpoint, &a.manifest)?,
        Command::Cluster(a) => commands::check_cluster(a)?,
        Command::Explain(a) => commands::check_model_inputs(&a.checkpoint, &a.manifest)?,
        Command::Report { .. } => {}
    }
    cfg.validate()?;

    let mut run = Run::start(&cfg, cli.command.name())?;
    let outcome = match &cli.command {
        Command::Curate(_) => commands::run_curate(&cfg, &mut run),
        Command::Ingest(a) => commands::run_ingest(&cfg, a, &mut run),
        Command::Train(a) => commands::run_train(&cfg, a, &mut run),
        Command::Eval(a) => commands::run_eval(&cfg, a, &mut run),
        Command::Cluster(a) => commands::run_cluster(&cfg, a, &mut run),
        Command::Explain(a) => commands::run_explain(a, &mut run),
        Command::Report { dir } => run_report(dir.as_ref().unwrap_or(&cfg.paths.output_dir), &mut run),
    };
    let dir = run.finish(&outcome)?;
    outcome?;
    eprintln!("run directory: {}", dir.display());
    Ok(())
}

fn run_report(root: &std::path::Path, run: &mut Run) -> Result<()> {
    let summary = report::collect(root)?;
    let md = report::markdown(&summary);
    run.write_json("summary.json", &summary)?;
    let md_path = run.path("summary.md");
    std::fs::write(&md_path, &md)?;
    run.artifact(&md_path);
    print!("{md}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
