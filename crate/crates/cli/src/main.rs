//! `stablab` command-line interface.
//!
//! Exit status: 0 on success, 2 for invalid input or arguments, 3 for
//! numerical failures (non-convergence, singular systems, unavailable
//! Satterthwaite DDF).

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use stablab::benchmark::benchmark_table;
use stablab::data::{parse_dataset, write_table, StabilityDataset, TableRecord};
use stablab::ddf::{DdfMethod, SattEvaluator, Target};
use stablab::lmm::{build_design, fit_reml, ModelSpec, PredictionKind, PredictionRow};
use stablab::rebuild::{rebuild_report, reference_fit};
use stablab::sim::{output_files, run_and_write, Output, SimConfig};
use stablab::workflows::{analyze, conditional_rows, Method, WorkflowConfig};

const SEED_ENV: &str = "STABLAB_SEED";

#[derive(Parser)]
#[command(name = "stablab", version, about = "Random-lot stability shelf-life inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with columns lot,month,value.
    #[arg(long)]
    data: PathBuf,
    /// Lower specification limit.
    #[arg(long, default_value_t = 90.0)]
    lsl: f64,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory; without it the main table is written to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model by bounded REML and report the estimates as JSON.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "ris")]
        model: ModelSpec,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Conditional-mean predictions and confidence limits on a month grid.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "ris")]
        model: ModelSpec,
        #[arg(long, default_value = "contain")]
        ddf: DdfMethod,
        /// Comma-separated months; defaults to the scheduled pulls.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Also emit marginal (population-mean) rows.
        #[arg(long)]
        marginal: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Score a proposed expiry with one of the analysis workflows.
    Decide {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        method: Method,
        #[arg(long, default_value_t = 48.0)]
        tstar: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run the Monte Carlo diagnostics and write their CSV tables.
    Simulate {
        /// JSON file with simulation settings; missing keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "all")]
        which: Output,
        /// Base seed (the STABLAB_SEED environment variable takes precedence).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Known-parameter benchmark probabilities over the simulation grid.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Reconstruct the Satterthwaite DDF for one lot and month.
    RebuildSatt {
        /// Dataset to fit with the random-intercept model; omit with
        /// --reference.
        #[arg(long, required_unless_present = "reference")]
        data: Option<PathBuf>,
        /// Use the balanced 14-lot reference design at the published estimates.
        #[arg(long, conflicts_with = "data")]
        reference: bool,
        #[arg(long)]
        lot: String,
        #[arg(long)]
        month: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 90.0)]
        lsl: f64,
        #[command(flatten)]
        out: OutArgs,
    },
}

/// A failure with its exit status.
struct Failure {
    code: u8,
    msg: String,
}

impl From<stablab::Error> for Failure {
    fn from(e: stablab::Error) -> Self {
        Failure {
            code: if e.is_validation() { 2 } else { 3 },
            msg: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure { code: 2, msg: e.to_string() }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

type CliResult<T> = Result<T, Failure>;

fn load(args: &DataArgs) -> CliResult<StabilityDataset> {
    let f = File::open(&args.data).map_err(|e| invalid(format!("{}: {e}", args.data.display())))?;
    Ok(parse_dataset(f, args.lsl)?)
}

/// Checks that none of `names` exists in `dir` unless `force`, and creates `dir`.
fn prepare_dir(dir: &Path, names: &[&str], force: bool) -> CliResult<()> {
    if !force {
        let taken: Vec<String> = names
            .iter()
            .map(|n| dir.join(n))
            .filter(|p| p.exists())
            .map(|p| p.display().to_string())
            .collect();
        if !taken.is_empty() {
            return Err(invalid(format!("refusing to overwrite {} (use --force)", taken.join(", "))));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn emit_json<T: Serialize>(value: &T, out: &OutArgs, name: &str) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| invalid(e.to_string()))? + "\n";
    match &out.out {
        Some(dir) => {
            prepare_dir(dir, &[name], out.force)?;
            fs::write(dir.join(name), text)?;
        }
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_table<T: TableRecord>(rows: &[T], out: &OutArgs, name: &str) -> CliResult<()> {
    match &out.out {
        Some(dir) => {
            prepare_dir(dir, &[name], out.force)?;
            write_table(rows, BufWriter::new(File::create(dir.join(name))?))?;
        }
        None => write_table(rows, io::stdout().lock())?,
    }
    Ok(())
}

fn parse_grid(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let v: f64 = s.trim().parse().map_err(|_| invalid(format!("bad grid month '{s}'")))?;
            if v.is_finite() && v >= 0.0 {
                Ok(v)
            } else {
                Err(invalid(format!("grid month {v} must be finite and nonnegative")))
            }
        })
        .collect()
}

fn set_jobs(jobs: Option<usize>) -> CliResult<()> {
    if let Some(k) = jobs {
        if k == 0 {
            return Err(invalid("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| invalid(e.to_string()))?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> CliResult<SimConfig> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => SimConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit { data, model, out } => {
            let ds = load(&data)?;
            let fit = fit_reml(&build_design(&ds, model), &ds.values())?;
            emit_json(&fit.summary(), &out, "fit.json")
        }
        Command::Predict {
            data,
            model,
            ddf,
            grid,
            alpha,
            marginal,
            out,
        } => {
            let ds = load(&data)?;
            let fit = fit_reml(&build_design(&ds, model), &ds.values())?;
            let grid = match grid {
                Some(g) => parse_grid(&g)?,
                None => ds.months(),
            };
            let mut rows = conditional_rows(&fit, ddf, &grid, alpha)?;
            if marginal {
                rows.extend(marginal_rows(&fit, ddf, &grid, alpha)?);
            }
            emit_table(&rows, &out, "predictions.csv")
        }
        Command::Decide {
            data,
            method,
            tstar,
            alpha,
            out,
        } => {
            let ds = load(&data)?;
            let cfg = WorkflowConfig {
                t_star: tstar,
                alpha,
                ..WorkflowConfig::default()
            };
            let res = analyze(&ds, method, &cfg)?;
            if let Some(dir) = &out.out {
                prepare_dir(dir, &["decision.json", "margins.csv"], out.force)?;
                let forced = OutArgs {
                    out: Some(dir.clone()),
                    force: true,
                };
                emit_json(&res.decision, &forced, "decision.json")?;
                emit_table(&res.decision.margin_records(), &forced, "margins.csv")
            } else {
                emit_json(&res.decision, &out, "decision.json")
            }
        }
        Command::Simulate {
            config,
            which,
            seed,
            jobs,
            out,
            force,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Ok(s) = std::env::var(SEED_ENV) {
                cfg.seed = s.trim().parse().map_err(|_| invalid(format!("{SEED_ENV}='{s}' is not an unsigned integer")))?;
            }
            set_jobs(jobs)?;
            prepare_dir(&out, &output_files(which), force)?;
            for p in run_and_write(&cfg, which, &out)? {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Benchmark { config, jobs, out } => {
            let cfg = load_config(config.as_deref())?;
            set_jobs(jobs)?;
            emit_table(&benchmark_table(&cfg)?, &out, "benchmark.csv")
        }
        Command::RebuildSatt {
            data,
            reference,
            lot,
            month,
            alpha,
            lsl,
            out,
        } => {
            let fit = if reference {
                reference_fit()?
            } else {
                let path = data.ok_or_else(|| invalid("--data or --reference is required"))?;
                let ds = load(&DataArgs { data: path, lsl })?;
                fit_reml(&build_design(&ds, ModelSpec::Ri), &ds.values())?
            };
            emit_table(&rebuild_report(&fit, &lot, month, alpha)?, &out, "table3_rebuild.csv")
        }
    }
}

fn marginal_rows(fit: &stablab::lmm::FitResult, ddf: DdfMethod, grid: &[f64], alpha: f64) -> CliResult<Vec<PredictionRow>> {
    let sat = match ddf {
        DdfMethod::Sat => Some(SattEvaluator::new(fit)?),
        _ => None,
    };
    grid.iter()
        .map(|&m| {
            let nu = match &sat {
                Some(ev) => ev.report(&Target::marginal(m))?.nu,
                None => stablab::ddf::ddf_report(fit, &Target::marginal(m), ddf)?.nu,
            };
            Ok(stablab::lmm::predict(fit, None, m, PredictionKind::Marginal, alpha, nu)?)
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
