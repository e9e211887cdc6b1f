use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dha::adaptation::AdaptMode;
use dha::pipeline::{self, Preset, RunConfig};
use dha::Result;

#[derive(Parser, Debug)]
#[command(name = "dha", version, about = "Discover latent target domains, hallucinate them from labeled source, adapt per domain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (`key = value` lines); defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override `k`: a number of latent domains or `auto`.
    #[arg(long, global = true)]
    k: Option<String>,
    /// Override the adapt mode.
    #[arg(long, global = true)]
    mode: Option<AdaptMode>,
    /// Override `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic benchmark.
    #[command(alias = "generate_data")]
    GenerateData,
    /// Cluster compound images into latent domains.
    Discover,
    /// Train the source-only model and the generator, translate the source set.
    Hallucinate,
    /// Train the segmentation network with the configured adaptation mode.
    Adapt,
    /// Score the adapted network per style and write curves and features.
    Evaluate,
    /// All five stages in order.
    #[command(alias = "run_all")]
    RunAll,
    /// Run an ablation grid and write its comparison table.
    Ablate {
        /// framework_design, k_sweep or adapt_mode.
        preset: Preset,
    },
    /// Print the effective configuration.
    #[command(alias = "show_config")]
    ShowConfig,
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.master_seed = s;
    }
    if let Some(k) = &cli.k {
        c.set("k", k)?;
    }
    if let Some(m) = cli.mode {
        c.mode = m;
    }
    if let Some(o) = &cli.out {
        c.output_dir = o.clone();
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    let stdout = std::io::stdout();
    let out = &mut stdout.lock();
    match &cli.command {
        Command::GenerateData => pipeline::cmd_generate_data(&cfg, out).map(drop),
        Command::Discover => pipeline::cmd_discover(&cfg, out).map(drop),
        Command::Hallucinate => pipeline::cmd_hallucinate(&cfg, out).map(drop),
        Command::Adapt => pipeline::cmd_adapt(&cfg, out).map(drop),
        Command::Evaluate => pipeline::cmd_evaluate(&cfg, out).map(drop),
        Command::RunAll => pipeline::cmd_run_all(&cfg, out).map(drop),
        Command::Ablate { preset } => pipeline::cmd_ablate(&cfg, *preset, out).map(drop),
        Command::ShowConfig => {
            let _ = out.write_all(cfg.to_text().as_bytes());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
