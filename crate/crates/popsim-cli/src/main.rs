//! Command-line front end: run simulations, compile reaction networks to
//! protocols, sample endpoint distributions, and benchmark scaling.
//!
//! Exit codes: 0 on success, 2 on flag or input-parse errors, 3 on runtime
//! errors. With a fixed `--seed`, simulation outputs are byte-identical
//! across runs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use popsim::compile::compile;
use popsim::dsl::{emit_protocol_with_header, parse_crn, parse_protocol};
use popsim::scheduler::{run, sample_endpoint, RunSpec, Trajectory};
use popsim::{make_configuration, Configuration, Crn, Error, Method, Protocol, RngStream, TimeModel};

#[derive(Parser)]
#[command(name = "popsim", version, about = "Exact population-protocol and reaction-network simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a protocol or reaction network and emit the trajectory.
    Run(RunArgs),
    /// Compile a reaction network into a continuous-time protocol file.
    Compile(CompileArgs),
    /// Sample the configuration distribution at a fixed time.
    Sample(SampleArgs),
    /// Measure wall-clock runtime across population sizes.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TimeModelArg {
    Discrete,
    Continuous,
}

impl From<TimeModelArg> for TimeModel {
    fn from(v: TimeModelArg) -> Self {
        match v {
            TimeModelArg::Discrete => TimeModel::Discrete,
            TimeModelArg::Continuous => TimeModel::Continuous,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Auto,
    Batch,
    Gillespie,
    Sequential,
}

impl From<MethodArg> for Method {
    fn from(v: MethodArg) -> Self {
        match v {
            MethodArg::Auto => Method::Auto,
            MethodArg::Batch => Method::Batch,
            MethodArg::Gillespie => Method::Gillespie,
            MethodArg::Sequential => Method::Sequential,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct InputArgs {
    /// Protocol file (.pp). Mutually exclusive with --crn.
    #[arg(long, value_name = "FILE", conflicts_with = "crn")]
    protocol: Option<PathBuf>,
    /// Reaction network file (.crn); compiled for the run's population.
    #[arg(long, value_name = "FILE")]
    crn: Option<PathBuf>,
    /// Population size; required with --crn, otherwise inferred from --init.
    #[arg(long)]
    n: Option<u64>,
    /// Volume for reaction-network kinetics (default: the population size).
    #[arg(long)]
    volume: Option<f64>,
    /// Initial configuration, e.g. "A=51,B=49".
    #[arg(long, value_name = "COUNTS")]
    init: String,
    /// RNG seed; defaults to POPSIM_SEED, then OS entropy.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Simulation horizon (network time for --crn, protocol time otherwise).
    #[arg(long)]
    time: f64,
    /// Time between snapshots (default: the horizon, i.e. two snapshots).
    #[arg(long)]
    interval: Option<f64>,
    #[arg(long, value_enum, default_value = "continuous")]
    time_model: TimeModelArg,
    #[arg(long, value_enum, default_value = "auto")]
    method: MethodArg,
    /// Auto-mode switch threshold factor.
    #[arg(long, default_value_t = 2.0)]
    switch_factor: f64,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Output file (default: stdout).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompileArgs {
    /// Reaction network file (.crn).
    #[arg(long, value_name = "FILE")]
    crn: PathBuf,
    /// Population size the protocol is compiled for.
    #[arg(long)]
    n: u64,
    /// Volume (default: n).
    #[arg(long)]
    volume: Option<f64>,
    /// Output file (default: stdout).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Time at which to sample the configuration.
    #[arg(long)]
    at: f64,
    /// Number of independent trials.
    #[arg(long)]
    trials: u64,
    /// State whose count the CSV histogram is over.
    #[arg(long, value_name = "NAME")]
    state: Option<String>,
    #[arg(long, value_enum, default_value = "continuous")]
    time_model: TimeModelArg,
    #[arg(long, value_enum, default_value = "auto")]
    method: MethodArg,
    #[arg(long, default_value_t = 2.0)]
    switch_factor: f64,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Protocol file (.pp).
    #[arg(long, value_name = "FILE")]
    protocol: PathBuf,
    /// Comma-separated population sizes, e.g. "1e4,1e5,1e6".
    #[arg(long, value_name = "LIST")]
    n_list: String,
    /// Simulated duration per run.
    #[arg(long)]
    time: f64,
    /// Repetitions per (n, method) point.
    #[arg(long)]
    reps: u64,
    /// Comma-separated methods to time.
    #[arg(long, default_value = "batch,gillespie")]
    methods: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// Error with the exit code it maps to.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
    fn runtime(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parse(_)
            | Error::UnknownState(_)
            | Error::EmptyPopulation
            | Error::PopulationTooSmall(_)
            | Error::EmptyTransitionSet
            | Error::DiscreteTimeForCompiledCrn(_)
            | Error::NonPositiveVolume(_)
            | Error::NonPositiveInterval(_)
            | Error::NegativeHorizon(_)
            | Error::ConflictingOrderedRules { .. }
            | Error::ProbabilityOverflow { .. } => 2,
            _ => 3,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compile(args) => cmd_compile(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn resolve_seed(flag: Option<u64>) -> RngStream {
    if let Some(seed) = flag {
        return RngStream::new(seed);
    }
    if let Ok(var) = std::env::var("POPSIM_SEED") {
        if let Ok(seed) = var.trim().parse::<u64>() {
            return RngStream::new(seed);
        }
    }
    let rng = RngStream::from_entropy();
    eprintln!("seed: {}", rng.seed());
    rng
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn parse_init(spec: &str) -> Result<Vec<(String, u64)>, CliError> {
    let mut out = Vec::new();
    for piece in spec.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        let (name, count) = piece
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("bad --init entry `{piece}`; expected NAME=COUNT")))?;
        let count: u64 = count
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("bad count in --init entry `{piece}`")))?;
        out.push((name.trim().to_string(), count));
    }
    if out.is_empty() {
        return Err(CliError::usage("--init lists no states"));
    }
    Ok(out)
}

/// Loads the protocol and initial configuration for run/sample commands,
/// compiling the network when the input is a .crn file.
fn load_model(
    input: &InputArgs,
    time_model: TimeModel,
) -> Result<(Protocol, Configuration, Option<Crn>), CliError> {
    let init = parse_init(&input.init)?;
    let init_total: u64 = init.iter().map(|(_, c)| c).sum();
    let init_refs: Vec<(&str, u64)> = init.iter().map(|(n, c)| (n.as_str(), *c)).collect();

    match (&input.protocol, &input.crn) {
        (Some(path), None) => {
            if input.volume.is_some() {
                return Err(CliError::usage("--volume applies only to --crn inputs"));
            }
            if let Some(n) = input.n {
                if n != init_total {
                    return Err(CliError::usage(format!(
                        "--n {n} disagrees with --init total {init_total}"
                    )));
                }
            }
            let proto = parse_protocol(&read_file(path)?)?;
            let cfg = make_configuration(&init_refs, &proto)?;
            if cfg.n() < 2 {
                return Err(CliError::usage(format!(
                    "population too small: pairwise interactions need at least 2 agents, got {}",
                    cfg.n()
                )));
            }
            Ok((proto, cfg, None))
        }
        (None, Some(path)) => {
            if time_model == TimeModel::Discrete {
                return Err(CliError::usage(
                    "discrete time unsupported for CRN inputs; compiled protocols use continuous time",
                ));
            }
            let n = input
                .n
                .ok_or_else(|| CliError::usage("--n is required with --crn"))?;
            if n != init_total {
                return Err(CliError::usage(format!(
                    "--n {n} disagrees with --init total {init_total}"
                )));
            }
            if n < 2 {
                return Err(CliError::usage(format!(
                    "population too small: pairwise interactions need at least 2 agents, got {n}"
                )));
            }
            let volume = input.volume.unwrap_or(n as f64);
            let crn = parse_crn(&read_file(path)?)?.with_volume(volume)?;
            let proto = compile(&crn, n)?;
            let cfg = make_configuration(&init_refs, &proto)?;
            Ok((proto, cfg, Some(crn)))
        }
        (None, None) => Err(CliError::usage("one of --protocol or --crn is required")),
        (Some(_), Some(_)) => unreachable!("clap enforces exclusivity"),
    }
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            std::fs::write(path, content)
                .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        }
        None => {
            std::io::stdout().write_all(content.as_bytes())?;
        }
    }
    Ok(())
}

/// CSV with a `time` column and one column per state, name-sorted.
fn trajectory_csv(proto: &Protocol, traj: &Trajectory) -> String {
    let names = proto.names();
    let order = names.sorted_ids();
    let mut out = String::from("time");
    for &id in &order {
        out.push(',');
        out.push_str(names.name(id));
    }
    out.push('\n');
    for snap in &traj.snapshots {
        out.push_str(&format!("{}", snap.time));
        for &id in &order {
            out.push_str(&format!(",{}", snap.counts[id.index()]));
        }
        out.push('\n');
    }
    out
}

fn trajectory_json(proto: &Protocol, traj: &Trajectory) -> String {
    let names = proto.names();
    let snapshots: Vec<serde_json::Value> = traj
        .snapshots
        .iter()
        .map(|snap| {
            let counts: BTreeMap<&str, u64> = names
                .iter()
                .map(|(id, name)| (name, snap.counts[id.index()]))
                .collect();
            serde_json::json!({ "time": snap.time, "counts": counts })
        })
        .collect();
    let doc = serde_json::json!({
        "metadata": traj.metadata,
        "snapshots": snapshots,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("serializable");
    text.push('\n');
    text
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let time_model: TimeModel = args.time_model.into();
    let (proto, cfg, _) = load_model(&args.input, time_model)?;
    let interval = args.interval.unwrap_or(args.time);
    let spec = RunSpec {
        horizon: args.time,
        interval,
        method: args.method.into(),
        switch_factor: args.switch_factor,
        time_model,
    };
    let mut rng = resolve_seed(args.input.seed);
    let traj = run(&cfg, &proto, &spec, &mut rng)?;
    let content = match args.format {
        FormatArg::Csv => trajectory_csv(&proto, &traj),
        FormatArg::Json => trajectory_json(&proto, &traj),
    };
    write_output(&args.out, &content)
}

fn cmd_compile(args: CompileArgs) -> Result<(), CliError> {
    if args.n < 2 {
        return Err(CliError::usage(format!(
            "population too small: pairwise interactions need at least 2 agents, got {}",
            args.n
        )));
    }
    let volume = args.volume.unwrap_or(args.n as f64);
    let crn = parse_crn(&read_file(&args.crn)?)?.with_volume(volume)?;
    let proto = compile(&crn, args.n)?;
    let text = emit_protocol_with_header(
        &proto,
        &[("n", args.n.to_string()), ("v", format!("{volume}"))],
    );
    write_output(&args.out, &text)
}

fn cmd_sample(args: SampleArgs) -> Result<(), CliError> {
    if args.trials == 0 {
        return Err(CliError::usage("--trials must be at least 1"));
    }
    let time_model: TimeModel = args.time_model.into();
    let (proto, cfg, _) = load_model(&args.input, time_model)?;
    if matches!(args.format, FormatArg::Csv) && args.state.is_none() {
        return Err(CliError::usage("--state is required for CSV histograms"));
    }
    let state_id = match &args.state {
        Some(name) => Some(
            proto
                .names()
                .get(name)
                .ok_or_else(|| CliError::usage(format!("unknown state `{name}`")))?,
        ),
        None => None,
    };
    let rng = resolve_seed(args.input.seed);
    let hist = sample_endpoint(
        &cfg,
        &proto,
        args.at,
        args.trials,
        args.method.into(),
        time_model,
        args.switch_factor,
        &rng,
    )?;
    let content = match args.format {
        FormatArg::Csv => {
            let id = state_id.expect("checked above");
            let mut by_value: BTreeMap<u64, u64> = BTreeMap::new();
            for (counts, k) in &hist {
                *by_value.entry(counts[id.index()]).or_default() += k;
            }
            let mut out = String::from("value,count\n");
            for (value, count) in by_value {
                out.push_str(&format!("{value},{count}\n"));
            }
            out
        }
        FormatArg::Json => {
            let names = proto.names();
            let mut entries: Vec<(Vec<u64>, u64)> = hist.into_iter().collect();
            entries.sort();
            let rows: Vec<serde_json::Value> = entries
                .iter()
                .map(|(counts, k)| {
                    let m: BTreeMap<&str, u64> = names
                        .iter()
                        .map(|(id, name)| (name, counts[id.index()]))
                        .collect();
                    serde_json::json!({ "counts": m, "trials": k })
                })
                .collect();
            let doc = serde_json::json!({
                "seed": rng.seed(),
                "at": args.at,
                "trials": args.trials,
                "histogram": rows,
            });
            let mut text = serde_json::to_string_pretty(&doc).expect("serializable");
            text.push('\n');
            text
        }
    };
    write_output(&args.out, &content)
}

fn parse_n_list(list: &str) -> Result<Vec<u64>, CliError> {
    let mut out = Vec::new();
    for piece in list.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        let value: f64 = piece
            .parse()
            .map_err(|_| CliError::usage(format!("bad population size `{piece}` in --n-list")))?;
        if !(value >= 2.0) || value > 1e18 {
            return Err(CliError::usage(format!("population size `{piece}` out of range")));
        }
        out.push(value.round() as u64);
    }
    if out.is_empty() {
        return Err(CliError::usage("--n-list lists no population sizes"));
    }
    Ok(out)
}

/// Population split evenly over the protocol's states in name order,
/// remainder spread over the first states.
fn uniform_init(proto: &Protocol, n: u64) -> Configuration {
    let q = proto.q() as u64;
    let mut counts = vec![0u64; proto.q()];
    for (i, id) in proto.names().sorted_ids().into_iter().enumerate() {
        counts[id.index()] = n / q + u64::from((i as u64) < n % q);
    }
    Configuration::from_counts(counts)
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    if args.reps == 0 {
        return Err(CliError::usage("--reps must be at least 1"));
    }
    let proto = parse_protocol(&read_file(&args.protocol)?)?;
    if proto.q() == 0 {
        return Err(CliError::usage("protocol has no states"));
    }
    let ns = parse_n_list(&args.n_list)?;
    let methods: Vec<Method> = args
        .methods
        .split(',')
        .map(|s| s.trim().parse::<Method>().map_err(CliError::usage))
        .collect::<Result<_, _>>()?;
    let master = resolve_seed(args.seed);

    let mut out = String::from("n,method,wall_seconds,interactions\n");
    for &n in &ns {
        let cfg = uniform_init(&proto, n);
        for &method in &methods {
            for rep in 0..args.reps {
                let mut rng = master.derive(n ^ rep.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let spec = RunSpec {
                    horizon: args.time,
                    interval: args.time,
                    method,
                    switch_factor: 2.0,
                    time_model: TimeModel::Continuous,
                };
                let started = Instant::now();
                let traj = run(&cfg, &proto, &spec, &mut rng)?;
                let wall = started.elapsed().as_secs_f64();
                let method_name = match method {
                    Method::Auto => "auto",
                    Method::Batch => "batch",
                    Method::Gillespie => "gillespie",
                    Method::Sequential => "sequential",
                };
                out.push_str(&format!(
                    "{n},{method_name},{wall},{}\n",
                    traj.metadata.counters.interactions
                ));
            }
        }
    }
    write_output(&args.out, &out)
}
