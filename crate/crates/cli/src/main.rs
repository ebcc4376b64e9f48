use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hiprenet_cli::commands::{self, PatchResult};
use hiprenet_cli::{CliError, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "hiprenet", version, about = "Progressive residual training of small networks for high-precision regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); a run manifest works too.
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample training and validation CSVs.
    Generate(Common),
    /// Train one model per seed and write stage reports.
    Train(Common),
    /// Add a local patch around the worst validation point.
    Patch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Training CSV; regenerated from the config when absent.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Validation CSV; regenerated from the config when absent.
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// RMSE and L-infinity error of a model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Only score rows inside this config's eval_domain.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Concatenate per-stage reports of one or more training runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, Vec<u64>, PathBuf)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let seeds = common.seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, seeds, out))
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| CliError::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let (cfg, seeds, out) = load(&common)?;
            let o = commands::cmd_generate(&cfg, seeds[0], &out)?;
            println!("wrote {} and {}", o.train_path.display(), o.val_path.display());
        }
        Command::Train(common) => {
            let (cfg, seeds, out) = load(&common)?;
            let o = commands::cmd_train(&cfg, &seeds, &out)?;
            for s in &o.seeds {
                let l = s.last();
                println!(
                    "seed {}: {} stages, val_rmse {:.4e}, val_linf {:.4e} ({})",
                    s.seed,
                    s.run.model.stages.len(),
                    l.val_rmse,
                    l.val_linf,
                    s.run.stop.name()
                );
            }
            println!("best seed {}; summary in {}", o.best().seed, o.summary_path.display());
        }
        Command::Patch { common, model, train, val } => {
            let (cfg, _, out) = load(&common)?;
            match commands::cmd_patch(&cfg, &model, train.as_deref(), val.as_deref(), &out)? {
                PatchResult::NotNeeded => println!("no patch needed: residuals are already at the degenerate threshold"),
                PatchResult::Patched { before, after, model_path, .. } => println!(
                    "linf {:.4e} -> {:.4e}, rmse {:.4e} -> {:.4e}; wrote {}",
                    before.linf,
                    after.linf,
                    before.rmse,
                    after.rmse,
                    model_path.display()
                ),
            }
        }
        Command::Eval { model, data, config, out } => {
            let domain = match config {
                Some(p) => Some(ExperimentConfig::load(&p)?.eval_domain()?),
                None => None,
            };
            let r = commands::cmd_eval(&model, &data, domain.as_ref())?;
            let text = commands::eval_csv(&r);
            print!("{text}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
                write(dir.join("eval.csv"), &text)?;
            }
        }
        Command::Report { runs, out } => {
            let text = commands::cmd_report(&runs)?;
            match out {
                Some(p) => write(p, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
