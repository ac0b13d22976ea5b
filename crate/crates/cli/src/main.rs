use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lattice_qmc::gaussian::MinimumRateForm;
use lattice_qmc::purity::{purity_sweep, write_sweep_csv};
use lattice_qmc::runner::{self, ensemble_stats, load_run, strong_scattering_warning, EngineKind, RunConfig};
use lattice_qmc::verify::{verify, VerifyOptions};
use lattice_qmc::Error;

/// Quantum trajectories of a lattice gas under cavity photodetection.
#[derive(Debug, Parser)]
#[command(name = "lattice-qmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a seeded ensemble described by a TOML config.
    Run(RunArgs),
    /// Check every closed form against its numerical oracle.
    Verify(VerifyArgs),
    /// Ensemble statistics of a finished run directory.
    Stats(StatsArgs),
    /// Purity of the two-branch state over a grid of |alpha| and phi.
    PuritySweep(SweepArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides the environment and the config.
    #[arg(short, long, env = "LATTICE_QMC_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    engine: Option<EngineArg>,
    #[arg(long)]
    trajectories: Option<u64>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    tau_max: Option<f64>,
    #[arg(long)]
    dtau: Option<f64>,
    #[arg(long)]
    snapshot_every: Option<u64>,
    /// Worker threads (output does not depend on this).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum EngineArg {
    Exact,
    Gaussian,
    Full,
}

impl From<EngineArg> for EngineKind {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Exact => EngineKind::Exact,
            EngineArg::Gaussian => EngineKind::Gaussian,
            EngineArg::Full => EngineKind::Full,
        }
    }
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Check the minimum-mode rate with the 1/sigma^2 denominator instead.
    #[arg(long)]
    inject_printed_minimum: bool,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Directory written by `run`.
    run_dir: PathBuf,
    /// Intervals of the common tau grid.
    #[arg(long, default_value_t = 50)]
    grid_points: usize,
    /// Where to write the CSVs (default: the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Peak deviations are summarized over snapshots with at least this many counts.
    #[arg(long, default_value_t = 20)]
    min_count: u64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 1.0)]
    alpha_max: f64,
    #[arg(long, default_value_t = 40)]
    steps: usize,
    /// Phases phi in radians; defaults to pi/2, pi/4, pi/8.
    #[arg(long, value_delimiter = ',')]
    phi: Vec<f64>,
    /// CSV destination (default: stdout).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Verify(args) => verify_cmd(args),
        Command::Stats(args) => stats(args),
        Command::PuritySweep(args) => sweep(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(args: RunArgs) -> Result<ExitCode, Error> {
    let mut config = RunConfig::from_path(&args.config)?;
    if let Some(dir) = args.output_dir {
        config.output_dir = Some(dir);
    }
    if let Some(e) = args.engine {
        config.engine = e.into();
    }
    if let Some(n) = args.trajectories {
        config.trajectories = n;
    }
    if let Some(s) = args.master_seed {
        config.master_seed = s;
    }
    if let Some(t) = args.tau_max {
        config.tau_max = t;
    }
    if let Some(d) = args.dtau {
        config.dtau = d;
    }
    if let Some(k) = args.snapshot_every {
        config.snapshot_every = k;
    }
    if let Some(w) = args.workers {
        config.workers = Some(w);
    }
    config.validate()?;
    if let Some(warning) = strong_scattering_warning(&config)? {
        eprintln!("warning: {warning}");
    }
    let manifest = runner::run(&config)?;
    let dir = config.output_dir.as_deref().unwrap_or_else(|| "".as_ref());
    println!(
        "{} trajectories ({} engine, {} mode) written to {}",
        manifest.seeds.len(),
        manifest.engine,
        manifest.mode,
        dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(args: VerifyArgs) -> Result<ExitCode, Error> {
    let minimum_form = if args.inject_printed_minimum { MinimumRateForm::Printed } else { MinimumRateForm::Derived };
    let report = verify(VerifyOptions { minimum_form })?;
    print!("{}", report.to_table());
    if let Some(path) = args.json {
        fs::write(path, report.to_json()? + "\n")?;
    }
    if report.passed() {
        println!("all identities pass");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("verification FAILED");
        Ok(ExitCode::from(2))
    }
}

fn stats(args: StatsArgs) -> Result<ExitCode, Error> {
    let (_, records) = load_run(&args.run_dir)?;
    let out = args.out.unwrap_or_else(|| args.run_dir.clone());
    fs::create_dir_all(&out)?;
    if records.is_empty() {
        println!("no trajectories in {}", args.run_dir.display());
        return Ok(ExitCode::SUCCESS);
    }
    let s = ensemble_stats(&records, args.grid_points)?;
    s.write_grid_csv(BufWriter::new(fs::File::create(out.join("stats_grid.csv"))?))?;
    s.write_peaks_csv(BufWriter::new(fs::File::create(out.join("stats_peaks.csv"))?))?;
    println!("trajectories: {}", s.trajectories);
    println!("count rate per unit tau: {:.6} +/- {:.6}", s.count_rate, s.count_rate_stderr);
    match s.max_peak_deviation(args.min_count) {
        Some(d) => println!("largest peak deviation from sqrt(m/tau) with m >= {}: {d:.3} support steps", args.min_count),
        None => println!("no snapshots with m >= {}", args.min_count),
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: SweepArgs) -> Result<ExitCode, Error> {
    use std::f64::consts::PI;
    let phis = if args.phi.is_empty() { vec![PI / 2.0, PI / 4.0, PI / 8.0] } else { args.phi };
    let rows = purity_sweep(args.alpha_max, args.steps, &phis)?;
    match args.output {
        Some(path) => write_sweep_csv(&rows, BufWriter::new(fs::File::create(path)?))?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_sweep_csv(&rows, &mut lock)?;
            lock.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
