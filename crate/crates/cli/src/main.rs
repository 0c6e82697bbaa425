use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mtnp_cli::config::{load, Overrides, RunConfig};
use mtnp_cli::runner::{run_compare, run_eval, run_gen_data, run_train};
use mtnp_cli::verify::{listing, run_suite, Level};
use mtnp_cli::RunError;

#[derive(Parser)]
#[command(name = "mtnp", version, about = "Multi-task neural process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant per seed and write checkpoints, logs and manifests.
    Train(Common),
    /// Score saved checkpoints, optionally under input corruption.
    Eval(Common),
    /// Train and score every configured variant over every seed.
    Compare(Common),
    /// Run the invariant suite.
    Verify {
        #[arg(long, default_value = "fast")]
        level: Level,
    },
    /// Write generated benchmark datasets as feature tables.
    GenData(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["desk", "paper", "toy"])]
    preset: Option<String>,
    /// Input corruption levels; repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    eta: Vec<f64>,
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, RunError> {
        let flags = Overrides {
            preset: self.preset.clone(),
            seed: self.seed,
            out: self.out.clone(),
            workers: self.workers,
            eta: (!self.eta.is_empty()).then(|| self.eta.clone()),
        };
        load(&self.config, &flags)
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.resolve()?;
            println!("seed\tfinal_loss\tseconds\tdir");
            for s in run_train(&cfg)? {
                println!("{}\t{}\t{:.2}\t{}", s.seed, s.final_loss, s.seconds, s.dir.display());
            }
        }
        Command::Eval(c) => {
            let report = run_eval(&c.resolve()?)?;
            print!("{}", report.table());
        }
        Command::Compare(c) => {
            let report = run_compare(&c.resolve()?)?;
            print!("{}", report.table());
        }
        Command::GenData(c) => {
            for (path, ds) in run_gen_data(&c.resolve()?)? {
                println!("{}\t{} rows", path.display(), ds.rows());
            }
        }
        Command::Verify { level } => {
            let results = run_suite(level);
            print!("{}", listing(&results));
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(RunError::Verify(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
