//! Command-line front end: argument parsing, report persistence and the
//! exit-code contract (0 ok, 2 model error, 3 analysis failure, 4
//! certificate failure).

pub mod commands;
pub mod demos;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use pvass_core::model::{Pvass, SpnOptions};
use pvass_core::sim::RunStats;
use pvass_core::{demo, Error, Result};
use serde_json::json;

use commands::{load_model, load_text, Checkpoints, SimParams};
pub use report::Report;

#[derive(Parser, Debug)]
#[command(name = "pvass", version, about = "Long-run pattern frequencies of probabilistic VASS")]
pub struct Cli {
    /// Directory for the report JSON (and CSV trajectories of `sim`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Record the wall-clock time in the report (breaks byte reproducibility).
    #[arg(long, global = true)]
    pub timestamp: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse and validate a model or net; print diagnostics.
    Validate { file: PathBuf },
    /// Translate a stochastic Petri net into a pVASS.
    TranslateSpn {
        file: PathBuf,
        /// Bounded places to keep as counters.
        #[arg(long, value_delimiter = ',')]
        counter_places: Vec<String>,
        #[arg(long)]
        dimension: Option<usize>,
    },
    /// SCCs, invariant distributions and trends of the underlying chain.
    Chain { file: PathBuf },
    /// One-counter analysis: zones with probabilities and frequency vectors.
    Oc {
        file: PathBuf,
        /// Start configuration, e.g. `p:2`.
        #[arg(long)]
        start: String,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
    },
    /// Two-counter diagnostics: mean payoffs, stability, constants, cases.
    Tc {
        file: PathBuf,
        #[arg(long, default_value_t = pvass_core::tc::DEFAULT_THETA)]
        theta: f64,
        /// Exploration budget for path witnesses and membership checks.
        #[arg(long, default_value_t = pvass_core::tc::DEFAULT_HORIZON)]
        horizon: usize,
    },
    /// Monte Carlo runs with checkpointed pattern frequencies.
    Sim {
        file: PathBuf,
        /// Start configuration, e.g. `s:0,0`.
        #[arg(long)]
        start: String,
        #[arg(long, default_value_t = 100)]
        runs: u64,
        #[arg(long, default_value_t = 100_000)]
        horizon: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// geometric, final or linear:K.
        #[arg(long, default_value = "geometric")]
        checkpoints: Checkpoints,
        /// Prefix excluded from gap statistics (default horizon/10).
        #[arg(long)]
        burn_in: Option<u64>,
        #[arg(long, default_value_t = 0.1)]
        radius: f64,
        /// Also check the height tail bound empirically (two counters only).
        #[arg(long)]
        tail_check: bool,
        #[arg(long, default_value_t = 2000)]
        tail_samples: u64,
    },
    /// Built-in experiments.
    #[command(subcommand)]
    Demo(DemoCommand),
}

#[derive(Subcommand, Debug)]
pub enum DemoCommand {
    /// Two-regime SPN: translation, analysis and limit clusters.
    Fig1 {
        #[arg(long, default_value_t = 2000)]
        runs: u64,
        #[arg(long, default_value_t = 200_000)]
        horizon: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "s:0,0")]
        start: String,
        #[arg(long, default_value_t = 0.1)]
        radius: f64,
        #[arg(long, default_value_t = pvass_core::tc::DEFAULT_THETA)]
        theta: f64,
    },
    /// Three-counter model whose frequencies oscillate.
    ThreeCounter {
        /// Weights P,Q,R of the doubling loops, transfers and joint decrement.
        #[arg(long, default_value = "1,10,100")]
        spn_weights: String,
        #[arg(long, default_value_t = 200)]
        runs: u64,
        #[arg(long, default_value_t = 1_000_000)]
        horizon: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Values of P to sweep besides the given one.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        sweep: Vec<u64>,
        /// Initial value of counter 1.
        #[arg(long, default_value_t = 1000)]
        start: u64,
    },
    /// One-counter family with k absorbing sinks.
    Remark {
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        start: u64,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
    },
}

/// Side products written next to the report.
#[derive(Default)]
pub struct Artifacts {
    pub trajectories: Option<(Pvass, Vec<RunStats>)>,
}

fn read_model(r: &mut Report, file: &Path) -> Result<(Pvass, String)> {
    r.param("file", file.display().to_string());
    let text = load_text(file)?;
    r.input_digest = Some(report::digest(text.as_bytes()));
    Ok((load_model(&text)?, text))
}

fn weights(s: &str) -> Result<(u64, u64, u64)> {
    let v: Vec<u64> = s
        .split(',')
        .map(|t| t.trim().parse::<u64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Model(format!("weights `{s}`: {e}")))?;
    match v[..] {
        [p, q, r] => Ok((p, q, r)),
        _ => Err(Error::Model(format!("weights `{s}` must be P,Q,R"))),
    }
}

fn body(cmd: &Command, r: &mut Report, art: &mut Artifacts) -> Result<()> {
    match cmd {
        Command::Validate { file } => {
            let (m, _) = read_model(r, file)?;
            commands::validate(r, &m)
        }
        Command::TranslateSpn { file, counter_places, dimension } => {
            r.param("file", file.display().to_string());
            r.param("counter_places", counter_places.clone());
            r.param("dimension", json!(dimension));
            let text = load_text(file)?;
            r.input_digest = Some(report::digest(text.as_bytes()));
            let opts = SpnOptions { dimension: *dimension, counter_places: counter_places.clone() };
            commands::translate_spn(r, &text, &opts).map(|_| ())
        }
        Command::Chain { file } => {
            let (m, _) = read_model(r, file)?;
            r.results = commands::chain_results(&m)?;
            Ok(())
        }
        Command::Oc { file, start, eps } => {
            r.param("start", start.clone());
            r.param("eps", report::num(*eps));
            let (m, _) = read_model(r, file)?;
            let c = m.parse_configuration(start)?;
            commands::oc(r, &m, &c, *eps)
        }
        Command::Tc { file, theta, horizon } => {
            r.param("theta", report::num(*theta));
            r.param("horizon", *horizon);
            let (m, _) = read_model(r, file)?;
            commands::tc_results(r, &m, *theta, *horizon).map(|_| ())
        }
        Command::Sim { file, start, runs, horizon, seed, checkpoints, burn_in, radius, tail_check, tail_samples } => {
            let burn = burn_in.unwrap_or(horizon / 10);
            r.param("start", start.clone());
            r.param("runs", *runs);
            r.param("horizon", *horizon);
            r.param("seed", *seed);
            r.param("checkpoints", format!("{checkpoints:?}").to_lowercase());
            r.param("burn_in", burn);
            r.param("radius", report::num(*radius));
            let (m, _) = read_model(r, file)?;
            if *runs == 0 || *horizon == 0 {
                return Err(Error::Model("runs and horizon must be positive".into()));
            }
            let p = SimParams {
                start: m.parse_configuration(start)?,
                runs: *runs,
                horizon: *horizon,
                seed: *seed,
                checkpoints: checkpoints.clone(),
                burn_in: burn,
                radius: *radius,
            };
            let stats = commands::run_batch(&m, &p)?;
            let mut results = commands::sim_results(r, &m, &p, &stats);
            if *tail_check {
                r.param("tail_samples", *tail_samples);
                results["tail_check"] = commands::sim_tail_check(&m, *tail_samples, *seed, pvass_core::tc::DEFAULT_THETA)
                    .unwrap_or_else(|e| json!({"error": e.to_string()}));
            }
            r.results = results;
            art.trajectories = Some((m, stats));
            Ok(())
        }
        Command::Demo(d) => demo_body(d, r),
    }
}

fn demo_body(d: &DemoCommand, r: &mut Report) -> Result<()> {
    match d {
        DemoCommand::Fig1 { runs, horizon, seed, start, radius, theta } => {
            r.input_digest = Some(report::digest(demo::FIG1_PVASS.as_bytes()));
            for (k, v) in [("runs", *runs), ("horizon", *horizon), ("seed", *seed)] {
                r.param(k, v);
            }
            r.param("start", start.clone());
            r.param("radius", report::num(*radius));
            r.param("theta", report::num(*theta));
            let m = demo::fig1();
            let p = demos::Fig1Params {
                sim: SimParams {
                    start: m.parse_configuration(start)?,
                    runs: *runs,
                    horizon: *horizon,
                    seed: *seed,
                    checkpoints: Checkpoints::Final,
                    burn_in: horizon / 10,
                    radius: *radius,
                },
                theta: *theta,
                horizon_search: pvass_core::tc::DEFAULT_HORIZON,
            };
            demos::fig1(r, &p)
        }
        DemoCommand::ThreeCounter { spn_weights, runs, horizon, seed, sweep, start } => {
            let w = weights(spn_weights)?;
            r.input_digest = Some(report::digest(demo::three_counter(w.0, w.1, w.2).to_json().as_bytes()));
            r.param("spn_weights", spn_weights.clone());
            r.param("sweep", sweep.clone());
            for (k, v) in [("runs", *runs), ("horizon", *horizon), ("seed", *seed), ("start", *start)] {
                r.param(k, v);
            }
            if *runs == 0 || *horizon == 0 {
                return Err(Error::Model("runs and horizon must be positive".into()));
            }
            let p = demos::OscParams { weights: w, runs: *runs, horizon: *horizon, seed: *seed, sweep: sweep.clone(), start: *start };
            demos::three_counter(r, &p)
        }
        DemoCommand::Remark { k, start, eps } => {
            r.param("k", *k);
            r.param("start", *start);
            r.param("eps", report::num(*eps));
            if *k > 0 {
                r.input_digest = Some(report::digest(demo::remark(*k).to_json().as_bytes()));
            }
            demos::remark(r, *k, *start, *eps)
        }
    }
}

pub fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Validate { .. } => "validate",
        Command::TranslateSpn { .. } => "translate-spn",
        Command::Chain { .. } => "chain",
        Command::Oc { .. } => "oc",
        Command::Tc { .. } => "tc",
        Command::Sim { .. } => "sim",
        Command::Demo(DemoCommand::Fig1 { .. }) => "demo-fig1",
        Command::Demo(DemoCommand::ThreeCounter { .. }) => "demo-three-counter",
        Command::Demo(DemoCommand::Remark { .. }) => "demo-remark",
    }
}

/// Runs a parsed command; the report carries the status.
pub fn execute(cli: &Cli) -> (Report, Artifacts) {
    let mut r = Report::new(command_name(&cli.command));
    let mut art = Artifacts::default();
    if let Err(e) = body(&cli.command, &mut r, &mut art) {
        r.fail(&e);
    }
    if cli.timestamp {
        let t = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        r.timestamp = Some(format!("{t}"));
    }
    (r, art)
}

/// Writes the report (and trajectories) under `dir`.
pub fn persist(dir: &Path, r: &Report, art: &Artifacts) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    r.write(&dir.join(format!("{}.json", r.command)))?;
    if let Some((m, stats)) = &art.trajectories {
        commands::write_csv(&dir.join("trajectories.csv"), m, stats)?;
    }
    Ok(())
}

/// Full CLI: parse, run, persist, print the report on stdout; returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (r, art) = execute(&cli);
    if let Some(dir) = &cli.out {
        if let Err(e) = persist(dir, &r, &art) {
            eprintln!("pvass: cannot write to {}: {e}", dir.display());
            return 2;
        }
    }
    print!("{}", r.to_canonical());
    if let Some(err) = &r.error {
        eprintln!("pvass: {}: {}", err.kind, err.message);
    }
    r.exit_code()
}
