use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use hansaudit_cli::config::PipelineConfig;
use hansaudit_cli::pipeline;
use hansaudit_cli::run::Session;
use hansaudit_core::protocol::Subset;

/// Audit a spoofing countermeasure for shortcut learning with planted
/// dataset biases.
#[derive(Parser)]
#[command(name = "hansaudit", version)]
struct Cli {
    /// Pipeline config (TOML). Built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective config as TOML.
    ShowConfig,
    /// Generate the synthetic corpus.
    SynthData,
    /// Materialize every (intervention, configuration) dataset.
    Perturb,
    /// Train the bona fide and spoof GMMs of every cell.
    Train,
    /// Score every cell's evaluation trials.
    Score,
    /// Compute the EER table.
    Eval,
    /// Fit the score model per intervention.
    Fit,
    /// Write the combined report.
    Report,
    /// All stages in order.
    Run,
    /// Import scores of an external countermeasure as one cell's scores.
    IngestScores {
        /// `utt_id score` lines.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        intervention: String,
        /// Configuration name or indicator.
        #[arg(long)]
        configuration: String,
        /// Protocol with the labels; the corpus protocols by default.
        #[arg(long)]
        protocol: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        subset: Subset,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_toml_string()?);
        return Ok(());
    }
    if let Command::SynthData = cli.command {
        cfg.validate()?;
        let layout = hansaudit_cli::Layout::new(&cfg.output_dir);
        let c = pipeline::with_jobs(cfg.jobs, || pipeline::synth_data(&cfg, &layout))??;
        println!("wrote {} files to {}", c.records.len(), c.audio_dir.display());
        return Ok(());
    }
    let session = Session::open(cfg)?;
    let reports = session.layout.reports_dir();
    match cli.command {
        Command::ShowConfig | Command::SynthData => unreachable!(),
        Command::Perturb => {
            for s in session.perturb()? {
                println!("{}/{}: {} of {} files perturbed", s.intervention, s.config, s.intervened, s.files);
            }
        }
        Command::Train => {
            for t in session.train()? {
                println!(
                    "{}/{}: {} + {} EM iterations{}",
                    t.intervention,
                    t.config,
                    t.bona_trace.len(),
                    t.spoof_trace.len(),
                    if t.reused_baseline { " (baseline models)" } else { "" }
                );
            }
        }
        Command::Score => {
            session.score()?;
            println!("scores written under {}", session.layout.root().join("scores").display());
        }
        Command::Eval => {
            session.eval()?;
            print!("{}", std::fs::read_to_string(reports.join("eer.md"))?);
        }
        Command::Fit => {
            session.fit()?;
            print!("{}", std::fs::read_to_string(reports.join("regression.md"))?);
        }
        Command::Report => {
            let (p, ..) = session.report()?;
            println!("report written to {}", p.display());
        }
        Command::Run => {
            let s = session.run_all()?;
            print!("{}", std::fs::read_to_string(&s.report)?);
        }
        Command::IngestScores {
            scores,
            intervention,
            configuration,
            protocol,
            subset,
        } => {
            let n = session
                .ingest(&scores, protocol.as_deref().map(|p| (p, subset)), &intervention, &configuration)
                .context("ingesting scores")?;
            println!("stored {n} scores for {intervention}/{configuration}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
