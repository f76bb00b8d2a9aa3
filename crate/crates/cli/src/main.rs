use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use eemrelay::channel::realize;
use eemrelay::config::{parse_document, SystemConfig, CONFIG_ENV};
use eemrelay::experiments::{self, builtin_scenario, builtin_scenarios, SweepSpec};
use eemrelay::model::{check_feasibility, Metrics, SnrModel};
use eemrelay::oracle::{brute_force_eem, compare, GridSpec, OracleReport};
use eemrelay::solver::{solve, solve_eem, Algorithm, Solution, Termination};
use eemrelay::Error;

const EXIT_INVALID: u8 = 1;
const EXIT_INNER_LIMIT: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "eemrelay",
    version,
    about = "Energy-efficient power and subcarrier allocation for relay-aided OFDMA"
)]
struct Cli {
    /// Config file (TOML). Defaults to the file named by $EEMRELAY_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set power.xi_bs=3.0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Worker threads for sweeps and oracle runs.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct Instance {
    /// Channel seed (sets `master_seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of users.
    #[arg(long)]
    k: Option<usize>,
    /// Number of subcarriers.
    #[arg(long)]
    n: Option<usize>,
    /// Number of relays.
    #[arg(long)]
    m: Option<usize>,
    /// Transmit budget in dBm.
    #[arg(long = "p-max-dbm", allow_hyphen_values = true)]
    p_max_dbm: Option<f64>,
}

impl Instance {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("master_seed", self.seed.map(|v| v.to_string()));
        push("radio.n_users", self.k.map(|v| v.to_string()));
        push("radio.n_subcarriers", self.n.map(|v| v.to_string()));
        push("radio.n_relays", self.m.map(|v| v.to_string()));
        push("power.p_max_dbm", self.p_max_dbm.map(|v| format!("{v:?}")));
        out
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one channel realization and print the solution as JSON.
    Solve {
        #[command(flatten)]
        instance: Instance,
        /// Maximize spectral efficiency instead of energy efficiency.
        #[arg(long)]
        sem: bool,
        /// Exit with status 2 if the inner loop hits its iteration limit.
        #[arg(long)]
        strict: bool,
        /// Also report metrics under the exact AF SNR expression.
        #[arg(long)]
        exact_snr: bool,
    },
    /// Run a Monte-Carlo sweep and write one CSV row per grid point and algorithm.
    Sweep {
        /// Built-in scenario name (see `scenarios`).
        #[arg(long, conflicts_with = "spec")]
        scenario: Option<String>,
        /// Sweep specification as a JSON file.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Samples per grid point.
        #[arg(long)]
        samples: Option<usize>,
        /// First sample seed.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON mirror of the records.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Compare the solver with exhaustive search on small instances.
    Oracle {
        #[command(flatten)]
        instance: Instance,
        /// Number of consecutive seeds to certify.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Log-spaced power levels per subcarrier.
        #[arg(long, default_value_t = GridSpec::default().power_points)]
        power_points: usize,
        /// AF split levels.
        #[arg(long, default_value_t = GridSpec::default().beta_points)]
        beta_points: usize,
        /// Local refinement rounds.
        #[arg(long, default_value_t = GridSpec::default().refine_rounds)]
        refine_rounds: usize,
    },
    /// Print per-outer-iteration traces as JSON lines.
    Convergence {
        #[command(flatten)]
        instance: Instance,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in sweep scenarios.
    Scenarios,
}

/// Output of `solve`.
#[derive(Serialize)]
struct SolveOutput<'a> {
    #[serde(flatten)]
    solution: &'a Solution<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics_exact_snr: Option<Metrics<f64>>,
}

#[derive(Serialize)]
struct OracleSummary {
    reports: Vec<OracleReport>,
    worst_relative_gap: f64,
    assignments_matched: usize,
}

#[derive(Serialize)]
struct ScenarioInfo<'a> {
    name: &'a str,
    samples: usize,
    points: usize,
    axes: &'a experiments::Axes,
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|s| {
            let (k, v) = s.split_once('=').ok_or_else(|| Error::Validation {
                key: s.clone(),
                reason: "expected KEY=VALUE".into(),
            })?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

/// `base`, then the config file, then `--set` overrides, then dedicated flags.
fn build_config(cli: &Cli, base: SystemConfig, flags: &[(String, String)]) -> Result<SystemConfig> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut cfg = base;
    if let Some(p) = &path {
        let text =
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg = cfg.merged(&parse_document(&text)?)?;
    }
    for (k, v) in parse_overrides(&cli.overrides)?.iter().chain(flags) {
        cfg = cfg.with_override(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn writer(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_solve(
    cli: &Cli,
    instance: &Instance,
    sem: bool,
    strict: bool,
    exact_snr: bool,
) -> Result<ExitCode> {
    let cfg = build_config(cli, SystemConfig::default(), &instance.overrides())?;
    let radio = cfg.radio_config::<f64>();
    let pm = cfg.power_model::<f64>();
    let (_, chan) = realize::<f64>(&cfg, cfg.master_seed)?;
    let algorithm = if sem { Algorithm::Sem } else { Algorithm::Eem };
    let sol = solve(algorithm, &chan, &radio, &pm, &cfg.solver)?;
    let violations = check_feasibility(&sol.allocation, &radio, &pm);
    if !violations.is_empty() {
        return Err(Error::Infeasible(violations).into());
    }
    let metrics_exact_snr = if exact_snr {
        Some(sol.metrics_with(&chan, &radio, &pm, SnrModel::Exact)?)
    } else {
        None
    };
    let mut w = writer(None)?;
    serde_json::to_writer_pretty(
        &mut w,
        &SolveOutput {
            solution: &sol,
            metrics_exact_snr,
        },
    )?;
    writeln!(w)?;
    w.flush()?;
    if strict && sol.trace.termination == Termination::InnerLimit {
        eprintln!("inner loop hit its iteration limit");
        return Ok(ExitCode::from(EXIT_INNER_LIMIT));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_sweep(
    cli: &Cli,
    scenario: Option<&str>,
    spec_path: Option<&Path>,
    samples: Option<usize>,
    seed: Option<u64>,
    out: Option<&Path>,
    json: Option<&Path>,
) -> Result<ExitCode> {
    let mut spec: SweepSpec = match (scenario, spec_path) {
        (Some(name), _) => builtin_scenario(name).ok_or_else(|| Error::Validation {
            key: "scenario".into(),
            reason: format!("unknown scenario `{name}`"),
        })?,
        (None, Some(p)) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?
        }
        (None, None) => bail!(Error::Validation {
            key: "scenario".into(),
            reason: "pass --scenario NAME or --spec FILE".into(),
        }),
    };
    spec.base = build_config(cli, spec.base.clone(), &[])?;
    if let Some(s) = samples {
        spec.samples = s;
    }
    if let Some(s) = seed {
        spec.master_seed = s;
    }
    let records = experiments::run_sweep(&spec)?;
    for r in records.iter().filter(|r| r.flagged) {
        eprintln!(
            "warning: {} of {} samples failed at {:?} ({:?})",
            r.failures,
            r.failures + r.samples,
            r.point,
            r.algorithm
        );
    }
    let mut w = writer(out)?;
    experiments::write_csv(&records, &mut w)?;
    w.flush()?;
    if let Some(p) = json {
        let mut w = writer(Some(p))?;
        experiments::write_json(&records, &mut w)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run_oracle(cli: &Cli, instance: &Instance, seeds: usize, grid: GridSpec) -> Result<ExitCode> {
    let mut base = SystemConfig::default();
    base.radio.n_users = 2;
    base.radio.n_subcarriers = 2;
    base.radio.n_relays = 1;
    let cfg = build_config(cli, base, &instance.overrides())?;
    grid.validate()?;
    let radio = cfg.radio_config::<f64>();
    let pm = cfg.power_model::<f64>();
    let mut reports = Vec::with_capacity(seeds);
    for s in 0..seeds as u64 {
        let seed = cfg.master_seed.wrapping_add(s);
        let (_, chan) = realize::<f64>(&cfg, seed)?;
        let sol = solve_eem(&chan, &radio, &pm, &cfg.solver)?;
        let oracle = brute_force_eem(&chan, &pm, &grid)?;
        reports.push(compare(&sol, &oracle, seed));
    }
    let summary = OracleSummary {
        worst_relative_gap: reports
            .iter()
            .map(|r| r.relative_gap)
            .fold(f64::INFINITY, f64::min),
        assignments_matched: reports.iter().filter(|r| r.assignment_match).count(),
        reports,
    };
    let mut w = writer(None)?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn run_convergence(
    cli: &Cli,
    instance: &Instance,
    seeds: usize,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let base = builtin_scenario("convergence")
        .map(|s| s.base)
        .unwrap_or_default();
    let cfg = build_config(cli, base, &instance.overrides())?;
    let lines = experiments::convergence_traces(&cfg, seeds)?;
    let mut w = writer(out)?;
    for l in &lines {
        serde_json::to_writer(&mut w, l)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn run_scenarios() -> Result<ExitCode> {
    let all = builtin_scenarios();
    let mut w = writer(None)?;
    for s in &all {
        let info = ScenarioInfo {
            name: &s.name,
            samples: s.samples,
            points: s.points().len(),
            axes: &s.axes,
        };
        serde_json::to_writer(&mut w, &info)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!(Error::Validation {
                key: "threads".into(),
                reason: "must be >= 1".into(),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match &cli.command {
        Command::Solve {
            instance,
            sem,
            strict,
            exact_snr,
        } => run_solve(cli, instance, *sem, *strict, *exact_snr),
        Command::Sweep {
            scenario,
            spec,
            samples,
            seed,
            out,
            json,
        } => run_sweep(
            cli,
            scenario.as_deref(),
            spec.as_deref(),
            *samples,
            *seed,
            out.as_deref(),
            json.as_deref(),
        ),
        Command::Oracle {
            instance,
            seeds,
            power_points,
            beta_points,
            refine_rounds,
        } => run_oracle(
            cli,
            instance,
            *seeds,
            GridSpec {
                power_points: *power_points,
                beta_points: *beta_points,
                refine_rounds: *refine_rounds,
            },
        ),
        Command::Convergence {
            instance,
            seeds,
            out,
        } => run_convergence(cli, instance, *seeds, out.as_deref()),
        Command::Scenarios => run_scenarios(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
