//! The `ugan` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ugan_core::eval::{aggregate_runs, render_grid, test_accuracy, GridMode, GridSpec};
use ugan_core::data::{stream_rng, uniform_latent};
use ugan_core::theory::verify_theory;

use crate::config::Config;
use crate::datasets::load_run_data;
use crate::error::{LabError, Result};
use crate::metrics::RunSummary;
use crate::pgm::encode_pgm;
use crate::run::{find_summaries, load_model, run_dir, train_run, Progress, FINAL};

#[derive(Debug, Parser)]
#[command(name = "ugan", version, about = "Four-player semi-supervised GAN laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.seed=3`; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Root directory of run directories.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    pub out_dir: PathBuf,
}

impl ConfigArgs {
    /// The resolved config; profile defaults when no file is given.
    pub fn load(&self) -> Result<Config> {
        match &self.config {
            Some(path) if !path.is_file() => Err(LabError::Usage(format!(
                "config file {} does not exist",
                path.display()
            ))),
            Some(path) => Config::load(path, &self.set),
            None => Config::resolve(Default::default(), &self.set),
        }
    }

    fn run_dir(&self, cfg: &Config) -> PathBuf {
        run_dir(&self.out_dir, cfg, false)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitName {
    Test,
    Valid,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a run (every seed of `train.seeds` when set).
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from `ckpt/last.ckpt` when it exists.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Classifier accuracy of a checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to the run's `ckpt/final.ckpt`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
    /// Run the exact categorical checks of the game's theory.
    VerifyTheory {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a class grid or a latent interpolation of the good generator as PGM.
    GenGrid {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Walk from `--from` to `--to` instead of drawing one latent per row.
        #[arg(long)]
        interpolate: bool,
        /// Comma-separated start latent; drawn from `--seed` when absent.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        to: Option<Vec<f64>>,
        /// Defaults to `grids/class-grid.pgm` or `grids/interpolation.pgm` in the run.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Mean ± sample std of final test accuracies.
    Aggregate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `final.txt` files or directories searched for them; defaults to the run directory.
        paths: Vec<PathBuf>,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("ugan: {e}");
            e.exit_code()
        }
    }
}

fn io_out(e: std::io::Error) -> LabError {
    LabError::io("<stdout>", e)
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Train { cfg, resume, quiet } => {
            let config = cfg.load()?;
            let progress = if quiet { Progress::Quiet } else { Progress::Periodic };
            let runs = train_run(&config, &cfg.out_dir, resume, progress)?;
            for r in &runs {
                writeln!(out, "{}: seed {} test_acc {:.4}", r.dir.display(), r.summary.seed, r.summary.test_acc)
                    .map_err(io_out)?;
            }
            if runs.len() >= 2 {
                let accs: Vec<f64> = runs.iter().map(|r| r.summary.test_acc).collect();
                writeln!(out, "aggregate over {} seeds: {}", runs.len(), aggregate_runs(&accs)?.format_percent())
                    .map_err(io_out)?;
            }
            Ok(0)
        }
        Command::Eval { cfg, checkpoint, split } => {
            let config = cfg.load()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.run_dir(&config).join(FINAL));
            let trainer = load_model(&config, &ckpt)?;
            let data = load_run_data(&config)?;
            let (name, set) = match split {
                SplitName::Test => ("test", &data.test),
                SplitName::Valid => ("valid", &data.valid),
            };
            let acc = test_accuracy(&trainer.model.classifier, set)?;
            writeln!(out, "{name}_acc={acc}").map_err(io_out)?;
            Ok(0)
        }
        Command::VerifyTheory { cfg, trials, seed } => {
            if cfg.config.is_some() || !cfg.set.is_empty() {
                cfg.load()?;
            }
            let report = verify_theory(trials, seed)?;
            let mut failed = 0;
            for c in &report {
                let verdict = if c.passed() { "PASS" } else { "FAIL" };
                failed += usize::from(!c.passed());
                writeln!(
                    out,
                    "{verdict}  {}  residual {:.3e}  tolerance {:.0e}  instances {}",
                    c.name, c.residual, c.tolerance, c.instances
                )
                .map_err(io_out)?;
            }
            writeln!(out, "{} of {} checks passed", report.len() - failed, report.len()).map_err(io_out)?;
            Ok(i32::from(failed > 0))
        }
        Command::GenGrid {
            cfg,
            checkpoint,
            rows,
            seed,
            interpolate,
            from,
            to,
            out: target,
        } => {
            let config = cfg.load()?;
            let dir = cfg.run_dir(&config);
            let ckpt = checkpoint.unwrap_or_else(|| dir.join(FINAL));
            let trainer = load_model(&config, &ckpt)?;
            let latent = trainer.model.latent_dim();
            let mode = if interpolate {
                let drawn = uniform_latent(2, latent, &mut stream_rng(seed, 1));
                GridMode::Interpolation {
                    from: from.unwrap_or_else(|| drawn.row(0).to_vec()),
                    to: to.unwrap_or_else(|| drawn.row(1).to_vec()),
                }
            } else {
                if from.is_some() || to.is_some() {
                    return Err(LabError::Usage("--from/--to need --interpolate".into()));
                }
                GridMode::ClassGrid
            };
            let image = render_grid(&trainer.model.good_gen, &GridSpec { rows, mode, seed })?;
            let default_name = if interpolate { "interpolation.pgm" } else { "class-grid.pgm" };
            let path = target.unwrap_or_else(|| dir.join("grids").join(default_name));
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
            }
            fs::write(&path, encode_pgm(&image)).map_err(|e| LabError::io(&path, e))?;
            writeln!(out, "{} ({}x{})", path.display(), image.width, image.height).map_err(io_out)?;
            Ok(0)
        }
        Command::Aggregate { cfg, paths } => {
            let roots = if paths.is_empty() {
                vec![cfg.run_dir(&cfg.load()?)]
            } else {
                paths
            };
            let mut files = Vec::new();
            for root in &roots {
                files.extend(summaries_under(root)?);
            }
            let accs = files
                .iter()
                .map(|f| RunSummary::read(f).map(|s| s.test_acc))
                .collect::<Result<Vec<f64>>>()?;
            let agg = aggregate_runs(&accs)?;
            writeln!(out, "{} over {} runs", agg.format_percent(), agg.runs).map_err(io_out)?;
            Ok(0)
        }
    }
}

fn summaries_under(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.exists() {
        return Err(LabError::Usage(format!("{} does not exist", root.display())));
    }
    find_summaries(root)
}
