use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use flashdiff_harness::experiments::{run_experiment, run_solve, EXPERIMENTS};
use flashdiff_harness::pipeline;
use flashdiff_harness::report::Stats;
use flashdiff_harness::{run_all, ExperimentConfig, FamilyKind, OutDir, Result};

#[derive(Parser)]
#[command(name = "flashdiff", version, about = "Severity-adaptive latent diffusion for toy inverse problems")]
struct Cli {
    /// TOML config; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for checkpoints and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the toy corpus and corpus_meta.csv.
    GenData,
    /// Train and freeze the autoencoder.
    TrainAe,
    /// Train the latent noise predictor.
    TrainScore,
    /// Fine-tune one severity encoder per degradation family.
    TrainSev,
    /// Solve the test split with the adaptive sampler or a fixed step count.
    Solve(SolveArgs),
    /// Run one experiment, or `all`.
    Experiment { name: String },
    /// Encoder-swap grid (same as `experiment robustness`).
    Robustness,
    /// Every stage and every experiment.
    All,
    /// Print the effective config as TOML.
    ShowConfig,
}

#[derive(Args)]
struct SolveArgs {
    /// gaussian or nonlinear.
    #[arg(long, default_value = "gaussian")]
    family: String,

    /// Start every sample at step k (fixed-start baseline).
    #[arg(long, value_name = "K", conflicts_with = "adaptive")]
    fixed_steps: Option<usize>,

    /// Severity-matched start per sample (default).
    #[arg(long)]
    adaptive: bool,
}

fn print_stats(name: &str, stats: &Stats) {
    println!("[{name}]");
    for (k, v) in stats {
        println!("  {k} = {v}");
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = OutDir::new(&cli.out);
    let started = Instant::now();
    match cli.command {
        Command::GenData => {
            let c = pipeline::gen_data(&cfg, &out)?;
            println!("corpus: {} train, {} val, {} test", c.train.len(), c.val.len(), c.test.len());
        }
        Command::TrainAe => {
            let (_, r) = pipeline::train_ae(&cfg, &out)?;
            println!("autoencoder: val mse {} (threshold {}) digest {}", r.val_mse, r.threshold, r.digest);
        }
        Command::TrainScore => {
            let (_, r) = pipeline::train_score_stage(&cfg, &out)?;
            println!("score: val loss {} -> {}", r.val_loss_initial, r.val_loss_final);
        }
        Command::TrainSev => {
            for (kind, r) in pipeline::train_sev_stage(&cfg, &out)? {
                let first = r.val_loss.first().map(|l| l.total).unwrap_or(f64::NAN);
                let last = r.val_loss.last().map(|l| l.total).unwrap_or(f64::NAN);
                println!("severity[{}]: val loss {first} -> {last}", kind.tag());
            }
        }
        Command::Solve(args) => {
            let kind = FamilyKind::parse(&args.family)?;
            print_stats("solve", &run_solve(&cfg, &out, kind, args.fixed_steps)?);
        }
        Command::Experiment { name } => {
            if name == "all" {
                for n in EXPERIMENTS {
                    print_stats(n, &run_experiment(n, &cfg, &out)?);
                }
            } else {
                print_stats(&name, &run_experiment(&name, &cfg, &out)?);
            }
        }
        Command::Robustness => print_stats("robustness", &run_experiment("robustness", &cfg, &out)?),
        Command::All => {
            run_all(&cfg, &out)?;
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    eprintln!("done in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
