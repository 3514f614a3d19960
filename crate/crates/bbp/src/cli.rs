//! Command-line front end. Each audit command loads the audit file, applies
//! one operation, saves it, and prints a JSON document on stdout.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use bbp_core::audit::{
    read_interpretations_csv, AuditConfig, AuditError, AuditState, BundleRegistration, SeedPolicy,
};
use bbp_core::planner::{self, PlanError, PlanParams};
use bbp_core::sampler::{write_worksheet_csv, worksheet_rows, SamplingRate};
use bbp_core::simulator::{compare_workload, workload_svg, write_workload_csv, BbpSchedule, SimulationError};
use bbp_core::DiceSeed;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::api::{self, AppState};
use crate::store::{self, StoreError};

#[derive(Debug, Parser)]
#[command(name = "bbp", version, about = "Bernoulli ballot-polling risk-limiting audits")]
pub struct Cli {
    /// Audit document read and written by audit commands.
    #[arg(long, global = true, value_name = "PATH")]
    pub audit_file: Option<PathBuf>,
    /// 20-digit dice seed (central seed on `create`, bundle seed on `bundle add`).
    #[arg(long, global = true, value_name = "DIGITS")]
    pub seed: Option<DiceSeed>,
    /// Risk limit.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Sampling rate (initial round on `create`, next round on `escalate`).
    #[arg(long, global = true)]
    pub rate: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recommend an initial sampling rate.
    Plan(PlanArgs),
    /// Start an audit from a JSON configuration.
    Create(CreateArgs),
    /// Register bundles or record their counts.
    #[command(subcommand)]
    Bundle(BundleCommand),
    /// Issue (or reissue) a bundle's skip sequence for a round.
    Sequence(SequenceArgs),
    /// Apply an interpretation CSV.
    Ingest(IngestArgs),
    /// Compute the risk report for the current round.
    Risk,
    /// Add a sampling round at `--rate` and issue its sequences.
    Escalate,
    /// Simulate BBP and BRAVO workloads.
    Simulate(SimulateArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Reported margin between winner and runner-up.
    #[arg(long)]
    pub margin: f64,
    /// Ballots cast in the contest.
    #[arg(long)]
    pub n_total: u64,
    /// Fraction of ballots with no valid vote for either candidate.
    #[arg(long, default_value_t = 0.0)]
    pub invalid_fraction: f64,
    #[arg(long, default_value_t = 0.9)]
    pub power: f64,
    #[arg(long, default_value_t = 1.0)]
    pub multiplier: f64,
    /// Choose the rate by simulation instead of the ASN heuristic.
    #[arg(long)]
    pub simulate: bool,
    /// Monte Carlo trials for simulation or for the power estimate.
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    #[arg(long, default_value_t = 1)]
    pub sim_seed: u64,
}

#[derive(Debug, Args)]
pub struct CreateArgs {
    /// JSON `AuditConfig`; global flags override its fields.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Replace an existing audit file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum BundleCommand {
    /// Register a bundle; `--seed` is its seed under the per-site policy.
    Add {
        #[arg(long = "id")]
        bundle_id: String,
        #[arg(long = "site")]
        site_id: String,
        /// Ballot count, if already known.
        #[arg(long)]
        count: Option<u64>,
    },
    /// Record a bundle's ballot count after its stack was walked.
    Count {
        #[arg(long = "id")]
        bundle_id: String,
        #[arg(long)]
        count: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SequenceFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct SequenceArgs {
    #[arg(long)]
    pub bundle: String,
    #[arg(long, default_value_t = 0)]
    pub round: u32,
    /// Upper bound on the bundle size when it has not been counted.
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long, value_enum, default_value_t = SequenceFormat::Json)]
    pub format: SequenceFormat,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub csv: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleKind {
    /// Quarter-ASN rounds until confirmation, then a full count.
    Increments,
    /// One round at the 90%-power rate, then a full count.
    Planned,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 10_000)]
    pub n_total: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.55, 0.6, 0.65, 0.7, 0.8, 0.9, 0.99])]
    pub shares: Vec<f64>,
    /// Risk-limit grid; `--alpha` selects a single value.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.1])]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 2000)]
    pub trials: u64,
    #[arg(long, default_value_t = 1)]
    pub sim_seed: u64,
    #[arg(long, value_enum, default_value_t = ScheduleKind::Increments)]
    pub schedule: ScheduleKind,
    /// CSV destination; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Also write an SVG chart of median workload.
    #[arg(long, value_name = "PATH")]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Directory of `<audit_id>.json` documents, loaded at start and kept
    /// up to date.
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Audit(e) => e.code(),
            CliError::Store(StoreError::Audit { source, .. }) => source.code(),
            CliError::Store(_) | CliError::Io { .. } => "io_error",
            CliError::Plan(_) | CliError::Simulation(_) => "validation_error",
            CliError::Usage(_) => "usage_error",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

/// JSON emitted by `plan`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanOutput {
    pub alpha: f64,
    pub margin: f64,
    pub invalid_fraction: f64,
    pub n_total: u64,
    pub asn: f64,
    pub recommended_rate: f64,
    pub method: &'static str,
    pub power_estimate: Option<f64>,
    pub trials: u64,
}

/// What a command produced, for `main` to print.
#[derive(Debug)]
pub enum Output {
    Json(String),
    Text(String),
    Nothing,
}

fn json<T: Serialize>(v: &T) -> Output {
    Output::Json(serde_json::to_string_pretty(v).expect("serializable output"))
}

impl Cli {
    fn audit_file(&self) -> Result<&Path, CliError> {
        self.audit_file
            .as_deref()
            .ok_or_else(|| CliError::Usage("--audit-file is required for this command".into()))
    }

    fn load(&self) -> Result<(PathBuf, AuditState), CliError> {
        let path = self.audit_file()?.to_owned();
        let loaded = store::load(&path)?;
        for w in &loaded.warnings {
            eprintln!("warning: {}: {w}", path.display());
        }
        Ok((path, loaded.state))
    }

    /// Load, apply `f`, save, and print what `f` returned.
    fn update<T: Serialize>(
        &self,
        f: impl FnOnce(&mut AuditState) -> Result<T, AuditError>,
    ) -> Result<Output, CliError> {
        let (path, mut state) = self.load()?;
        let out = f(&mut state)?;
        store::save(&path, &state)?;
        Ok(json(&out))
    }
}

pub fn run(cli: &Cli) -> Result<Output, CliError> {
    match &cli.command {
        Command::Plan(args) => plan(cli, args),
        Command::Create(args) => create(cli, args),
        Command::Bundle(BundleCommand::Add {
            bundle_id,
            site_id,
            count,
        }) => cli.update(|st| {
            let reg = BundleRegistration {
                bundle_id: bundle_id.clone(),
                site_id: site_id.clone(),
                seed: cli.seed.clone(),
                count: *count,
            };
            st.add_bundle(reg).cloned()
        }),
        Command::Bundle(BundleCommand::Count { bundle_id, count }) => {
            cli.update(|st| st.record_bundle_count(bundle_id, *count).cloned())
        }
        Command::Sequence(args) => sequence(cli, args),
        Command::Ingest(args) => {
            let file = fs::File::open(&args.csv).map_err(io_err(&args.csv))?;
            let records = read_interpretations_csv(file)?;
            cli.update(|st| Ok(st.ingest_interpretations(records)))
        }
        Command::Risk => cli.update(AuditState::compute_risk_report),
        Command::Escalate => {
            let p = cli
                .rate
                .ok_or_else(|| CliError::Usage("escalate needs --rate".into()))?;
            cli.update(|st| st.plan_escalation(p))
        }
        Command::Simulate(args) => simulate(cli, args),
        Command::Serve(args) => serve(cli, args),
    }
}

fn plan(cli: &Cli, args: &PlanArgs) -> Result<Output, CliError> {
    let params = PlanParams {
        alpha: cli.alpha.unwrap_or(0.05),
        margin: args.margin,
        invalid_fraction: args.invalid_fraction,
        n_total: args.n_total,
        target_power: args.power,
        asn_multiplier: args.multiplier,
    };
    params.validate()?;
    let asn = planner::asn(params.alpha, params.margin)?;
    // Simulated populations hold only the valid ballots.
    let n_valid = ((1.0 - params.invalid_fraction) * params.n_total as f64).round() as u64;
    let (rate, method) = if args.simulate {
        let r = planner::rate_for_power(
            n_valid,
            params.margin,
            params.alpha,
            params.target_power,
            args.trials,
            args.sim_seed,
        )?;
        (r, "simulated")
    } else {
        (planner::initial_rate(&params)?, "asn")
    };
    let rate = match cli.rate {
        Some(p) => SamplingRate::new(p).map_err(AuditError::from)?,
        None => rate,
    };
    let power_estimate = if args.trials > 0 && n_valid > 0 {
        Some(
            planner::simulate_power(n_valid, params.margin, rate, params.alpha, args.trials, args.sim_seed)?
                .power,
        )
    } else {
        None
    };
    Ok(json(&PlanOutput {
        alpha: params.alpha,
        margin: params.margin,
        invalid_fraction: params.invalid_fraction,
        n_total: params.n_total,
        asn,
        recommended_rate: rate.get(),
        method,
        power_estimate,
        trials: args.trials,
    }))
}

fn create(cli: &Cli, args: &CreateArgs) -> Result<Output, CliError> {
    let path = cli.audit_file()?;
    let text = fs::read(&args.config).map_err(io_err(&args.config))?;
    let mut config: AuditConfig = serde_json::from_slice(&text).map_err(|e| AuditError::Parse {
        offset: 0,
        message: format!("{}: {e}", args.config.display()),
    })?;
    if let Some(a) = cli.alpha {
        config.alpha = a;
    }
    if let Some(p) = cli.rate {
        config.round_rates.rates = vec![SamplingRate::new(p).map_err(AuditError::from)?];
    }
    if let Some(seed) = &cli.seed {
        config.seed_policy = SeedPolicy::Central;
        config.central_seed = Some(seed.clone());
    }
    let state = AuditState::create_audit(config)?;
    if path.exists() && !args.force {
        let existing = store::load(path)?;
        if existing.state.audit_id() == state.audit_id() {
            return Err(AuditError::DuplicateAudit(state.audit_id().to_owned()).into());
        }
        return Err(CliError::Usage(format!(
            "{} already holds audit {}; pass --force to replace it",
            path.display(),
            existing.state.audit_id()
        )));
    }
    store::save(path, &state)?;
    Ok(json(&state))
}

fn sequence(cli: &Cli, args: &SequenceArgs) -> Result<Output, CliError> {
    let (path, mut state) = cli.load()?;
    let issued = state
        .issue_skip_sequence(&args.bundle, args.round, args.horizon)?
        .clone();
    store::save(&path, &state)?;
    match args.format {
        SequenceFormat::Json => Ok(json(&issued)),
        SequenceFormat::Csv => {
            let rows = worksheet_rows(&issued.bundle_id, issued.round, &issued.sequence);
            let mut out = Vec::new();
            write_worksheet_csv(&mut out, &rows).map_err(|e| AuditError::Csv(e.to_string()))?;
            Ok(Output::Text(String::from_utf8(out).expect("CSV is UTF-8")))
        }
    }
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<Output, CliError> {
    let alphas = match cli.alpha {
        Some(a) => vec![a],
        None => args.alphas.clone(),
    };
    let schedule = match args.schedule {
        ScheduleKind::Increments => BbpSchedule::default(),
        ScheduleKind::Planned => BbpSchedule::PlannedRound {
            power: 0.9,
            planning_trials: 500,
        },
    };
    let rows = compare_workload(args.n_total, &args.shares, &alphas, args.trials, args.sim_seed, &schedule)?;
    let mut csv = Vec::new();
    write_workload_csv(&mut csv, &rows).map_err(|e| AuditError::Csv(e.to_string()))?;
    if let Some(plot) = &args.plot {
        fs::write(plot, workload_svg(&rows)).map_err(io_err(plot))?;
    }
    match &args.out {
        Some(path) => {
            fs::write(path, &csv).map_err(io_err(path))?;
            Ok(Output::Nothing)
        }
        None => Ok(Output::Text(String::from_utf8(csv).expect("CSV is UTF-8"))),
    }
}

fn serve(cli: &Cli, args: &ServeArgs) -> Result<Output, CliError> {
    let mut audits = Vec::new();
    if let Some(dir) = &args.data_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        audits.extend(store::load_dir(dir)?.into_iter().map(|l| l.state));
    }
    if cli.audit_file.is_some() {
        audits.push(cli.load()?.1);
    }
    let app = AppState::with_audits(args.data_dir.clone(), audits);
    let rt = tokio::runtime::Runtime::new().map_err(io_err(Path::new(&args.bind)))?;
    rt.block_on(api::serve(app, &args.bind))
        .map_err(io_err(Path::new(&args.bind)))?;
    Ok(Output::Nothing)
}

pub fn print(output: &Output) -> io::Result<()> {
    let mut stdout = io::stdout().lock();
    match output {
        Output::Json(s) => writeln!(stdout, "{s}"),
        Output::Text(s) => write!(stdout, "{s}"),
        Output::Nothing => Ok(()),
    }
}
