//! Command-line front end.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::gas::{solve_ied, GasError, SlpConfig};
use crate::grid::{batch_solve, build_sed_lp, compute_ptdf, DispatchModel, GridError};
use crate::io::{self, IoError};
use crate::lp::SolverConfig;
use crate::scenarios::{synthesize, ScenarioError, ScenarioMatrix, SynthConfig};
use crate::sparse_fit::FitConfig;
use crate::uq::{compare_reports, sample_training_design, write_curve_csv, MomentPair, SurrogateModel, UqError, UqReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Gas(#[from] GasError),
    #[error(transparent)]
    Uq(#[from] UqError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(e) => e.kind(),
            CliError::Grid(_) => "grid",
            CliError::Gas(_) => "gas",
            CliError::Uq(_) => "uq",
            CliError::Scenario(_) => "scenario",
            CliError::Failed(_) => "failed",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            _ => 1,
        }
    }
}

/// Settings that may come from `--config`; command-line flags take precedence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub train_size: Option<usize>,
    pub variance_keep: f64,
    pub fit: FitConfig,
    pub solver: SolverConfig,
    pub slp: SlpConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            train_size: None,
            variance_keep: 1.0,
            fit: FitConfig::default(),
            solver: SolverConfig::default(),
            slp: SlpConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sedpce", version, about = "Dispatch cost uncertainty via sparse polynomial surrogates")]
struct Cli {
    /// Random seed (training split, synthetic data).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for scenario evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the line-by-bus shift factor matrix.
    Ptdf {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the dispatch for one scenario row.
    Solve {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        /// Zero-based data row.
        #[arg(long, default_value_t = 0)]
        row: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the assembled electric LP in text form.
        #[arg(long)]
        dump_lp: Option<PathBuf>,
    },
    /// Solve every scenario and summarise the cost distribution.
    Mc {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-row costs.
        #[arg(long)]
        costs: Option<PathBuf>,
        /// Only use the first N rows.
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Train a surrogate on a random subset of scenarios.
    Fit {
        #[arg(long)]
        scenarios: PathBuf,
        /// System used to solve training rows and to check scenario labels.
        #[arg(long)]
        system: Option<PathBuf>,
        /// Precomputed per-row costs instead of solving.
        #[arg(long)]
        costs: Option<PathBuf>,
        /// Number of training rows.
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        degree_max: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a surrogate on scenarios.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a report of the predicted distribution.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        report_args: ReportArgs,
    },
    /// Summarise a cost CSV.
    Stats {
        #[arg(long)]
        costs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Relative moment errors and CDF distance between two reports.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic multimodal wind scenarios for a system.
    Synth {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Record zero wall time so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Directory for pdf.csv and cdf.csv.
    #[arg(long)]
    curves: Option<PathBuf>,
}

/// Parse and run; returns the process exit code. Errors go to stderr as one line.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error kind=usage message={}", json!(first));
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error kind={} message={}", e.kind(), json!(e.to_string()));
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg: RunConfig = match &cli.config {
        Some(p) => io::read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::Failed(e.to_string()))?;
    pool.install(|| dispatch(cli.command, cfg))
}

fn provenance(command: &str, cfg: &RunConfig) -> Value {
    json!({
        "tool": "sedpce",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "config": cfg,
    })
}

fn emit(out: Option<&Path>, value: &Value) -> Result<(), CliError> {
    match out {
        Some(p) => io::write_json(p, value)?,
        None => {
            use std::io::Write;
            let text = serde_json::to_string_pretty(value).expect("json value serialises");
            // a closed downstream pipe (e.g. `| head`) is not an error
            if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(io::IoError::Io { path: "<stdout>".into(), source: e }.into());
                }
            }
        }
    }
    Ok(())
}

fn sidecar(path: &Path, prov: &Value) -> Result<(), CliError> {
    let mut name = path.as_os_str().to_owned();
    name.push(".provenance.json");
    io::write_json(Path::new(&name), prov)?;
    Ok(())
}

fn load_inputs(path: &Path, system: Option<&crate::grid::PowerSystem>) -> Result<ScenarioMatrix, CliError> {
    match system {
        Some(s) => Ok(io::load_scenarios(path, s)?),
        None => Ok(io::load_matrix(path)?),
    }
}

fn finish_report(
    values: &[f64],
    failed: usize,
    started: Instant,
    args: &ReportArgs,
    prov: Value,
    analytic: Option<MomentPair>,
    out: &Path,
) -> Result<UqReport, CliError> {
    let wall = if args.no_timing { 0.0 } else { started.elapsed().as_secs_f64() };
    let mut report = UqReport::from_values(values, wall)?;
    report.failed = failed;
    report.analytic = analytic;
    report.provenance = Some(prov);
    report.check()?;
    io::write_json(out, &report)?;
    if let Some(dir) = &args.curves {
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.clone(), source })?;
        for (name, head, y) in [
            ("pdf.csv", ["cost", "density"], &report.pdf.density),
            ("cdf.csv", ["cost", "probability"], &report.cdf.prob),
        ] {
            let p = dir.join(name);
            let f = std::fs::File::create(&p).map_err(|source| IoError::Io { path: p.clone(), source })?;
            write_curve_csv(f, head, &report.pdf.grid, y)?;
        }
    }
    Ok(report)
}

fn solve_costs(
    model: &DispatchModel,
    rows: &[Vec<f64>],
    cfg: &RunConfig,
) -> Result<Vec<Option<f64>>, CliError> {
    use rayon::prelude::*;
    let has_gas = model.system.gas.as_ref().is_some_and(|g| !g.is_empty());
    if has_gas {
        rows.par_iter()
            .map(|r| match solve_ied(model, r, &cfg.solver, &cfg.slp) {
                Ok(s) => Ok(s.dispatch.cost),
                Err(GasError::SlpNonconvergence { .. }) => Ok(None),
                Err(e) => Err(CliError::from(e)),
            })
            .collect()
    } else {
        batch_solve(model, rows, &cfg.solver)
            .into_iter()
            .map(|r| r.map(|o| o.cost).map_err(CliError::from))
            .collect()
    }
}

fn dispatch(command: Command, cfg: RunConfig) -> Result<(), CliError> {
    match command {
        Command::Ptdf { system, out } => {
            let sys = io::load_system(&system)?;
            let ptdf = compute_ptdf(&sys)?;
            let nb = ptdf.bus_ids.len();
            let rows: Vec<&[f64]> = ptdf.factors.chunks(nb).collect();
            let value = json!({
                "line_ids": ptdf.line_ids,
                "bus_ids": ptdf.bus_ids,
                "slack_bus": ptdf.bus_ids[ptdf.slack],
                "factors": rows,
                "provenance": provenance("ptdf", &cfg),
            });
            emit(out.as_deref(), &value)
        }
        Command::Solve { system, scenarios, row, out, dump_lp } => {
            let sys = io::load_system(&system)?;
            let data = io::load_scenarios(&scenarios, &sys)?;
            let wind = data
                .rows
                .get(row)
                .ok_or_else(|| CliError::Usage(format!("row {row} out of range ({} rows)", data.len())))?;
            let model = DispatchModel::new(sys)?;
            if let Some(p) = dump_lp {
                let (lp, _) = build_sed_lp(&model, wind)?;
                std::fs::write(&p, lp.dump()).map_err(|source| IoError::Io { path: p, source })?;
            }
            let sol = solve_ied(&model, wind, &cfg.solver, &cfg.slp)?;
            let value = json!({
                "row": row,
                "solution": sol,
                "provenance": provenance("solve", &cfg),
            });
            emit(out.as_deref(), &value)
        }
        Command::Mc { system, scenarios, out, costs, limit, report } => {
            let started = Instant::now();
            let sys = io::load_system(&system)?;
            let mut data = io::load_scenarios(&scenarios, &sys)?;
            if let Some(n) = limit {
                data.rows.truncate(n);
            }
            let model = DispatchModel::new(sys)?;
            let results = solve_costs(&model, &data.rows, &cfg)?;
            let prov = provenance("mc", &cfg);
            if let Some(p) = &costs {
                io::save_costs(p, &results)?;
                sidecar(p, &prov)?;
            }
            let values: Vec<f64> = results.iter().flatten().copied().collect();
            let failed = results.len() - values.len();
            finish_report(&values, failed, started, &report, prov, None, &out)?;
            Ok(())
        }
        Command::Fit { scenarios, system, costs, train, degree_max, out } => {
            let mut cfg = cfg;
            if let Some(d) = degree_max {
                cfg.fit.degree_max = d;
                cfg.fit.degree_min = cfg.fit.degree_min.min(d);
            }
            let sys = system.as_deref().map(io::load_system).transpose()?;
            let data = load_inputs(&scenarios, sys.as_ref())?;
            let n_train = train.or(cfg.train_size).unwrap_or(data.len());
            let (picked, _) = sample_training_design(data.len(), n_train, cfg.seed)?;
            let outputs: Vec<Option<f64>> = match (&costs, sys) {
                (Some(p), _) => {
                    let all = io::load_costs(p)?;
                    if all.len() != data.len() {
                        return Err(CliError::Usage(format!(
                            "{} costs for {} scenario rows",
                            all.len(),
                            data.len()
                        )));
                    }
                    picked.iter().map(|&i| all[i]).collect()
                }
                (None, Some(s)) => {
                    let model = DispatchModel::new(s)?;
                    let rows: Vec<Vec<f64>> = picked.iter().map(|&i| data.rows[i].clone()).collect();
                    solve_costs(&model, &rows, &cfg)?
                }
                (None, None) => return Err(CliError::Usage("fit needs --system or --costs".into())),
            };
            let mut train_rows = Vec::new();
            let mut y = Vec::new();
            for (&i, c) in picked.iter().zip(&outputs) {
                match c {
                    Some(v) => {
                        train_rows.push(i);
                        y.push(*v);
                    }
                    None => log::warn!("training row {i} has no cost and is skipped"),
                }
            }
            let mut model = SurrogateModel::fit(&data.rows, &train_rows, &y, &cfg.fit, cfg.variance_keep, cfg.seed)?;
            model.provenance.run = Some(provenance("fit", &cfg));
            io::write_json(&out, &model)?;
            Ok(())
        }
        Command::Predict { model, scenarios, out, report, report_args } => {
            let started = Instant::now();
            let m: SurrogateModel = io::read_json(&model)?;
            m.validate()?;
            let data = io::load_matrix(&scenarios)?;
            if data.width() != m.input_dim() {
                return Err(CliError::Usage(format!(
                    "model expects {} columns, scenarios have {}",
                    m.input_dim(),
                    data.width()
                )));
            }
            let values = m.predict(&data.rows)?;
            let prov = provenance("predict", &cfg);
            io::save_costs(&out, &values.iter().map(|&v| Some(v)).collect::<Vec<_>>())?;
            sidecar(&out, &prov)?;
            if let Some(r) = report {
                let (mean, var) = m.analytic_moments();
                let analytic = Some(MomentPair { mean, std: var.sqrt() });
                finish_report(&values, 0, started, &report_args, prov, analytic, &r)?;
            }
            Ok(())
        }
        Command::Stats { costs, out, report } => {
            let started = Instant::now();
            let all = io::load_costs(&costs)?;
            let values: Vec<f64> = all.iter().flatten().copied().collect();
            let failed = all.len() - values.len();
            finish_report(&values, failed, started, &report, provenance("stats", &cfg), None, &out)?;
            Ok(())
        }
        Command::Compare { baseline, candidate, out } => {
            let a: UqReport = io::read_json(&baseline)?;
            let b: UqReport = io::read_json(&candidate)?;
            let c = compare_reports(&a, &b)?;
            let value = json!({
                "mean_error_pct": c.mean_error_pct,
                "std_error_pct": c.std_error_pct,
                "ks_distance": c.ks_distance,
                "provenance": provenance("compare", &cfg),
            });
            emit(out.as_deref(), &value)
        }
        Command::Synth { system, rows, out } => {
            let sys = io::load_system(&system)?;
            let m = synthesize(&sys, rows, &cfg.synth, cfg.seed)?;
            io::save_scenarios(&out, &m)?;
            sidecar(&out, &provenance("synth", &cfg))?;
            Ok(())
        }
    }
}
