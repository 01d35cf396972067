use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sgbound_cli::{
    cmd_bound, cmd_check, cmd_dump_trajectory, cmd_hull, cmd_sample, report_error, CliError,
    CliResult, Overrides, Run,
};

#[derive(Parser)]
#[command(
    name = "sgbound",
    version,
    about = "Scaled-graph over-bounds and sampling bounds for reset systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the common quadratic storage function.
    #[arg(long)]
    baseline: bool,
    /// Require the storage function to be positive definite.
    #[arg(long)]
    hard_sg: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Battery seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Certify discs and write region.json, sweep_report.json, region.svg.
    Bound(Common),
    /// Simulate the input battery and write samples.csv.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Also write the time series of these battery members.
        #[arg(long = "dump-trajectory", value_name = "INDEX")]
        dump: Vec<usize>,
    },
    /// Hull the samples and write hull.json, hull.svg.
    Hull {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Check hull inclusion and write certificate.json.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        region: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
    },
}

fn load(c: &Common) -> CliResult<Run> {
    if let Some(k) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::config(format!("threads: {e}")))?;
    }
    let ov = Overrides {
        out: c.out.clone(),
        baseline: c.baseline,
        hard_sg: c.hard_sg,
        seed: c.seed,
    };
    Run::load(&c.config, &ov)
}

fn execute(cmd: &Command) -> CliResult<()> {
    match cmd {
        Command::Bound(c) => {
            let run = load(c)?;
            let b = cmd_bound(&run)?;
            println!(
                "{} discs certified, {} omitted, {} failed -> {}",
                b.report.certified,
                b.report.omitted,
                b.report.failed,
                run.out.display()
            );
        }
        Command::Sample { common, dump } => {
            let run = load(common)?;
            let s = cmd_sample(&run)?;
            for &k in dump {
                cmd_dump_trajectory(&run, k)?;
            }
            println!(
                "{} samples, {} failed ({} zeno) -> {}",
                s.samples.len(),
                s.failures.len(),
                s.zeno,
                run.out.display()
            );
        }
        Command::Hull { common, samples } => {
            let run = load(common)?;
            let h = cmd_hull(&run, samples.as_deref())?;
            println!(
                "hull with {} vertices -> {}",
                h.vertices.len(),
                run.out.display()
            );
        }
        Command::Check {
            common,
            region,
            samples,
        } => {
            let run = load(common)?;
            let c = cmd_check(&run, region.as_deref(), samples.as_deref())?;
            println!(
                "verdict {} ({} samples, {} violations, gap metric {})",
                c.verdict,
                c.sample_count,
                c.violating_samples.len(),
                c.gap_metric
                    .map_or("n/a".to_string(), |g| format!("{g:.4}"))
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let out = match &cli.command {
                Command::Bound(c) => c.out.clone(),
                Command::Sample { common, .. }
                | Command::Hull { common, .. }
                | Command::Check { common, .. } => common.out.clone(),
            };
            eprintln!("{}", report_error(&e, out.as_deref()));
            ExitCode::from(e.exit_code as u8)
        }
    }
}
