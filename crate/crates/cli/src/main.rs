//! `regimefactor` command-line interface.
//!
//! Every command reads a JSON config (`--config`), applies flag overrides,
//! validates the result, writes fixed-name outputs under `--out`, and records
//! a `manifest.json`. Exit code 1 signals invalid input or configuration,
//! exit code 2 a numerical failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regimefactor::breaks::CriticalSimConfig;
use regimefactor::evaluate::{EvaluationConfig, McsStatistic, ModelId};
use regimefactor::indicator::{MsWeighting, Variant};
use regimefactor::panel::{CsvLayout, YearMonth};

use config::{RateTransform, RunConfig};
use output::Output;

#[derive(Debug)]
pub enum ErrorKind {
    Validation,
    Numerical,
}

#[derive(Debug)]
pub struct CliError {
    kind: ErrorKind,
    message: String,
}

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }
}

impl From<regimefactor::Error> for CliError {
    fn from(e: regimefactor::Error) -> Self {
        let kind = if e.is_numerical() {
            ErrorKind::Numerical
        } else {
            ErrorKind::Validation
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "regimefactor", version, about = "Regime-switching factor models for underlying inflation")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: available cores).
    #[arg(long, global = true, env = "REGIMEFACTOR_THREADS")]
    threads: Option<usize>,
    /// Seed for EM starts, bootstraps and simulation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct DataArgs {
    /// Component price indices (CSV).
    #[arg(long)]
    components: Option<PathBuf>,
    /// Layout of the components CSV: wide or long.
    #[arg(long, value_parser = parse_layout)]
    layout: Option<CsvLayout>,
    /// Headline index (CSV, wide).
    #[arg(long)]
    headline: Option<PathBuf>,
    /// Headline column name (default: first series).
    #[arg(long)]
    headline_column: Option<String>,
    /// How index levels become inflation rates.
    #[arg(long, value_enum)]
    transform: Option<RateTransform>,
    /// Number of factors.
    #[arg(long)]
    r: Option<usize>,
}

#[derive(Args, Default)]
struct BreakArgs {
    /// Trimming: minimum regime length as a share of the sample.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Largest break count tested (L).
    #[arg(long)]
    max_breaks: Option<usize>,
    /// Significance level of the break tests.
    #[arg(long)]
    alpha: Option<f64>,
    /// Bartlett bandwidth of the long-run covariance.
    #[arg(long)]
    bandwidth: Option<usize>,
}

#[derive(Args, Default)]
struct EmArgs {
    /// Number of Markov regimes.
    #[arg(long)]
    regimes: Option<usize>,
    /// Random EM starts.
    #[arg(long)]
    n_starts: Option<usize>,
    /// EM iteration cap per start.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Relative log-likelihood tolerance of EM.
    #[arg(long)]
    tol: Option<f64>,
    /// Regime attribution of the MS indicator: argmax or probability.
    #[arg(long, value_parser = parse_weighting)]
    weighting: Option<MsWeighting>,
}

#[derive(Args, Default)]
struct EvalArgs {
    /// Comma-separated models among M1, M2, M3, M4, SC.
    #[arg(long, value_delimiter = ',', value_parser = parse_model)]
    models: Option<Vec<ModelId>>,
    /// First vintage (YYYY-MM).
    #[arg(long)]
    vintage_start: Option<YearMonth>,
    /// Last vintage (YYYY-MM).
    #[arg(long)]
    vintage_end: Option<YearMonth>,
    /// Comma-separated forecast horizons in months.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    /// MCS significance level.
    #[arg(long)]
    mcs_alpha: Option<f64>,
    /// MCS elimination statistic: Tmax or TR.
    #[arg(long, value_parser = parse_statistic)]
    mcs_statistic: Option<McsStatistic>,
    /// Bootstrap replications of the MCS.
    #[arg(long)]
    n_boot: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Read and transform the component panel; write the rate panel.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Principal-component factors of the standardized panel.
    Factors {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Break tests and the optimal break partition.
    Breaks {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        breaks: BreakArgs,
    },
    /// Markov-switching factor model fitted by EM.
    Msfit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        em: EmArgs,
    },
    /// Core-inflation indicator for one variant.
    Indicator {
        #[command(flatten)]
        data: DataArgs,
        /// Baseline, SC or MS.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[command(flatten)]
        breaks: BreakArgs,
        #[command(flatten)]
        em: EmArgs,
    },
    /// Real-time vintages, revisions, forecast errors and the MCS.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        eval: EvalArgs,
        #[command(flatten)]
        breaks: BreakArgs,
        #[command(flatten)]
        em: EmArgs,
    },
    /// Simulate a synthetic panel from a DGP spec.
    Simulate {
        /// DGP spec (JSON).
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Regenerate the break-test critical value table by simulation.
    Critvals {
        /// Grid points of the simulated Brownian paths.
        #[arg(long, default_value_t = CriticalSimConfig::default().t_sim)]
        t_sim: usize,
        /// Replications for sup-F, UDmax and WDmax.
        #[arg(long, default_value_t = CriticalSimConfig::default().reps_multi)]
        reps_multi: usize,
        /// Replications for the sequential test.
        #[arg(long, default_value_t = CriticalSimConfig::default().reps_single)]
        reps_single: usize,
    },
}

fn parse_json_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_layout(s: &str) -> Result<CsvLayout, String> {
    parse_json_enum(&s.to_lowercase())
}

fn parse_weighting(s: &str) -> Result<MsWeighting, String> {
    parse_json_enum(&s.to_lowercase())
}

fn parse_model(s: &str) -> Result<ModelId, String> {
    parse_json_enum(&s.to_uppercase())
}

fn parse_statistic(s: &str) -> Result<McsStatistic, String> {
    match s.to_lowercase().as_str() {
        "tmax" => Ok(McsStatistic::Tmax),
        "tr" => Ok(McsStatistic::TR),
        _ => Err(format!("unknown MCS statistic '{s}' (expected tmax or tr)")),
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    match s.to_lowercase().as_str() {
        "baseline" => Ok(Variant::Baseline),
        "sc" => Ok(Variant::Sc),
        "ms" => Ok(Variant::Ms),
        _ => Err(format!("unknown variant '{s}' (expected baseline, sc or ms)")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl DataArgs {
    fn apply(self, c: &mut RunConfig) {
        if self.components.is_some() {
            c.components = self.components;
        }
        if self.headline.is_some() {
            c.headline = self.headline;
        }
        if self.headline_column.is_some() {
            c.headline_column = self.headline_column;
        }
        set(&mut c.layout, self.layout);
        set(&mut c.transform, self.transform);
        set(&mut c.r, self.r);
    }
}

impl BreakArgs {
    fn apply(self, c: &mut RunConfig) {
        set(&mut c.epsilon, self.epsilon);
        set(&mut c.max_breaks, self.max_breaks);
        set(&mut c.alpha, self.alpha);
        if self.bandwidth.is_some() {
            c.bandwidth = self.bandwidth;
        }
    }
}

impl EmArgs {
    fn apply(self, c: &mut RunConfig) {
        set(&mut c.regimes, self.regimes);
        set(&mut c.em.n_starts, self.n_starts);
        set(&mut c.em.max_iter, self.max_iter);
        set(&mut c.em.tol, self.tol);
        set(&mut c.weighting, self.weighting);
    }
}

impl EvalArgs {
    fn apply(self, c: &mut RunConfig) -> Result<(), CliError> {
        set(&mut c.models, self.models);
        let ev = match (c.evaluation.take(), self.vintage_start, self.vintage_end) {
            (Some(mut ev), s, e) => {
                set(&mut ev.vintage_start, s);
                set(&mut ev.vintage_end, e);
                Some(ev)
            }
            (None, Some(s), Some(e)) => Some(EvaluationConfig::new(s, e)),
            (None, None, None) => None,
            (None, _, _) => {
                return Err(CliError::invalid("--vintage-start and --vintage-end must be given together"));
            }
        };
        c.evaluation = ev.map(|mut ev| {
            set(&mut ev.horizons, self.horizons);
            set(&mut ev.mcs_alpha, self.mcs_alpha);
            set(&mut ev.mcs_statistic, self.mcs_statistic);
            set(&mut ev.bootstrap.n_boot, self.n_boot);
            ev.bootstrap.seed = c.seed;
            ev
        });
        Ok(())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::invalid(format!("cannot configure threads: {e}")))?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    set(&mut cfg.seed, cli.seed);
    let name = match &cli.command {
        Command::Ingest { .. } => "ingest",
        Command::Factors { .. } => "factors",
        Command::Breaks { .. } => "breaks",
        Command::Msfit { .. } => "msfit",
        Command::Indicator { .. } => "indicator",
        Command::Evaluate { .. } => "evaluate",
        Command::Simulate { .. } => "simulate",
        Command::Critvals { .. } => "critvals",
    };
    let mut sim = None;
    match cli.command {
        Command::Ingest { data } | Command::Factors { data } => data.apply(&mut cfg),
        Command::Breaks { data, breaks } => {
            data.apply(&mut cfg);
            breaks.apply(&mut cfg);
        }
        Command::Msfit { data, em } => {
            data.apply(&mut cfg);
            em.apply(&mut cfg);
        }
        Command::Indicator {
            data,
            variant,
            breaks,
            em,
        } => {
            data.apply(&mut cfg);
            set(&mut cfg.variant, variant);
            breaks.apply(&mut cfg);
            em.apply(&mut cfg);
        }
        Command::Evaluate { data, eval, breaks, em } => {
            data.apply(&mut cfg);
            breaks.apply(&mut cfg);
            em.apply(&mut cfg);
            eval.apply(&mut cfg)?;
        }
        Command::Simulate { spec } => {
            if spec.is_some() {
                cfg.spec = spec;
            }
        }
        Command::Critvals {
            t_sim,
            reps_multi,
            reps_single,
        } => {
            sim = Some(CriticalSimConfig {
                t_sim,
                reps_multi,
                reps_single,
                seed: cfg.seed,
            });
        }
    }
    if let Some(ev) = cfg.evaluation.as_mut() {
        ev.bootstrap.seed = cfg.seed;
    }
    cfg.validate()?;

    let mut out = Output::create(&cli.out)?;
    match name {
        "ingest" => commands::ingest(&cfg, &mut out)?,
        "factors" => commands::factors(&cfg, &mut out)?,
        "breaks" => commands::breaks(&cfg, &mut out)?,
        "msfit" => commands::msfit(&cfg, &mut out)?,
        "indicator" => commands::indicator(&cfg, &mut out)?,
        "evaluate" => commands::evaluate(&cfg, &mut out)?,
        "simulate" => commands::simulate(&cfg, &mut out)?,
        _ => commands::critvals(sim.as_ref().expect("critvals settings"), &mut out)?,
    }
    out.finish(name, &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = match e.kind {
                ErrorKind::Validation => (1, "validation"),
                ErrorKind::Numerical => (2, "numerical"),
            };
            let report = serde_json::json!({ "error": kind, "message": e.message });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}
