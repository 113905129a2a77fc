//! Command-line front end. Exit codes: 0 success, 2 configuration error,
//! 3 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use modalcur::cli::{
    cmd_ablate, cmd_baseline, cmd_eval, cmd_model, cmd_train, exit_code, load_config,
    LevelSelector,
};
use modalcur::eval::EvalOptions;

#[derive(Parser)]
#[command(name = "modalcur", version, about = "Adaptive sensor placement for modal testing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectorArg {
    Train,
    Holdout,
    All,
}

impl From<SelectorArg> for LevelSelector {
    fn from(s: SelectorArg) -> Self {
        match s {
            SelectorArg::Train => LevelSelector::Train,
            SelectorArg::Holdout => LevelSelector::Holdout,
            SelectorArg::All => LevelSelector::All,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the modal model artifact and frequency table.
    Model {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the agent under the dual curriculum.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the run directory's latest checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate the trained policy against the EfI baseline.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        levels: SelectorArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Argmax actions instead of sampling.
        #[arg(long)]
        greedy: bool,
        /// Randomise initial sensor positions per episode.
        #[arg(long)]
        randomise_init: bool,
    },
    /// One training run per edit count, compared in a single table.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Edit counts, e.g. --edits 1,3,5
        #[arg(long, value_delimiter = ',', required = true)]
        edits: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// EfI and exhaustive-oracle baselines per level.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> modalcur::Result<()> {
    match cli.command {
        Command::Model { config, out } => {
            let cfg = load_config(&config, out.as_deref())?;
            let model = cmd_model(&cfg)?;
            println!(
                "wrote model with {} modes ({} candidate nodes) to {}",
                model.n_modes(),
                model.candidate_indices().len(),
                cfg.out_dir.display()
            );
        }
        Command::Train {
            config,
            seed,
            out,
            resume,
        } => {
            let cfg = load_config(&config, out.as_deref())?;
            let result = cmd_train(&cfg, seed, resume)?;
            println!(
                "trained {} updates ({} env steps, {} episodes); checkpoint in {}",
                result.checkpoint.update_idx,
                result.checkpoint.env_steps,
                result.checkpoint.episodes,
                cfg.out_dir.join("train").display()
            );
        }
        Command::Eval {
            config,
            levels,
            seed,
            out,
            greedy,
            randomise_init,
        } => {
            let cfg = load_config(&config, out.as_deref())?;
            let opts = EvalOptions {
                greedy,
                randomise_init,
            };
            let report = cmd_eval(&cfg, levels.into(), seed, opts)?;
            for row in &report.rows {
                println!(
                    "level {} (modes {}-{}): mean det {:.6e} vs EfI {:.6e}, solved rate {:.2}",
                    row.level_index,
                    row.theta_first,
                    row.theta_last,
                    row.mean_det,
                    row.baseline_det,
                    row.solved_rate
                );
            }
        }
        Command::Ablate {
            config,
            edits,
            seed,
            out,
        } => {
            let cfg = load_config(&config, out.as_deref())?;
            let table = cmd_ablate(&cfg, &edits, seed)?;
            println!(
                "ablation over edit counts {:?} across {} levels written to {}",
                table.edit_counts,
                table.rows.len(),
                cfg.out_dir.join("ablate").display()
            );
        }
        Command::Baseline { config, out } => {
            let cfg = load_config(&config, out.as_deref())?;
            let rows = cmd_baseline(&cfg)?;
            for row in &rows {
                let oracle = row
                    .exhaustive_det
                    .map_or("budget exceeded".to_string(), |d| format!("{d:.6e}"));
                println!(
                    "level {} (modes {}-{}): EfI det {:.6e}, exhaustive {}",
                    row.level_index, row.theta_first, row.theta_last, row.efi_det, oracle
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
