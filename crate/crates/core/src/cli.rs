//! Command-line front end: simulate, fit, monitor, benchmark, report and
//! replay.
//!
//! Every command reads one JSON config, writes `manifest.json` into its output
//! directory before doing any work, and can be rerun from that manifest with
//! `replay`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bench::{
    aggregate, compute_metrics, generate_scenario, read_feature_stream, read_results_csv, run_grid, write_failures_csv,
    write_feature_stream, write_figures, write_results_csv, write_summary_csv, ExperimentConfig, Metrics,
    ScenarioConfig,
};
use crate::error::{Error, Result};
use crate::init::InitSearchConfig;
use crate::monitor::{write_decision_log, LabelOracle, Monitor, MonitorConfig};
use crate::phmm::{select_model, ModelParams, ObservationStream};
use crate::sampler::{simulate_sequence, EndpointConstraint};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "phmm-monitor",
    version,
    about = "Active-learning process monitoring with partially hidden Markov models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a stream CSV and its true states.
    Simulate(CommonArgs),
    /// Fit a model to a stream, choosing the state count by AIC.
    Fit(CommonArgs),
    /// Run the active-learning monitor over a stream with a CSV label oracle.
    Monitor(CommonArgs),
    /// Run a benchmark grid and write results, summaries and figures.
    Benchmark(BenchmarkArgs),
    /// Summarize a results CSV and draw its figures.
    Report(CommonArgs),
    /// Rerun a command from the manifest it wrote.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Overrides the replicate count in the config.
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to the manifest's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Simulate,
    Fit,
    Monitor,
    Benchmark,
    Report,
}

/// Record of one invocation. `config` is the fully resolved config, with
/// overrides applied and paths made absolute, so a replay needs nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: CommandKind,
    pub config_path: PathBuf,
    pub root_seed: u64,
    pub output_dir: PathBuf,
    pub version: String,
    pub workers: usize,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Generator settings; the default when neither source is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSource>,
}

/// Draw a sequence from a saved model instead of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    pub path: PathBuf,
    pub length: usize,
    /// 1-based state the sequence must start in.
    #[serde(default)]
    pub start: Option<usize>,
    /// 1-based state the sequence must end in.
    #[serde(default)]
    pub end: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub schema_version: u32,
    pub stream: PathBuf,
    /// Leading rows known to be in control; defaults to the leading run of
    /// `1` labels in the stream.
    #[serde(default)]
    pub t_init: Option<usize>,
    #[serde(default = "one")]
    pub n_min: usize,
    #[serde(default = "three")]
    pub n_max: usize,
    #[serde(default)]
    pub init: InitSearchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorRunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub stream: PathBuf,
    /// States CSV (`t,state`, 1-based) that answers label queries.
    pub oracle: PathBuf,
    #[serde(default)]
    pub t_init: Option<usize>,
    #[serde(default = "three")]
    pub n_classes: usize,
    #[serde(default)]
    pub monitor: MonitorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub schema_version: u32,
    pub results: PathBuf,
}

fn one() -> usize {
    1
}

fn three() -> usize {
    3
}

/// Summary written next to the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorSummary {
    pub steps: usize,
    pub budget_total: usize,
    pub labels_used: usize,
    pub final_states: Option<usize>,
    /// Present when the oracle covers every monitored row.
    pub metrics: Option<Metrics>,
}

/// Process exit code for an error: 2 config, 3 numerical, 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => 2,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Oracle { .. } => 4,
        e if e.is_numerical() => 3,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => invoke(CommandKind::Simulate, &a, 1, None),
        Command::Fit(a) => invoke(CommandKind::Fit, &a, 1, None),
        Command::Monitor(a) => invoke(CommandKind::Monitor, &a, 1, None),
        Command::Report(a) => invoke(CommandKind::Report, &a, 1, None),
        Command::Benchmark(a) => {
            if a.workers == 0 {
                return Err(Error::Config("--workers must be positive".into()));
            }
            invoke(CommandKind::Benchmark, &a.common, a.workers, a.replicates)
        }
        Command::Replay(a) => replay(&a),
    }
}

fn invoke(kind: CommandKind, args: &CommonArgs, workers: usize, replicates: Option<usize>) -> Result<()> {
    let text = fs::read_to_string(&args.config)?;
    let base = match args.config.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut job = Job::parse(kind, &text, &args.config)?;
    job.apply_overrides(args.seed, replicates)?;
    job.resolve_paths(&absolute(&base)?);
    job.validate()?;
    let manifest = RunManifest {
        command: kind,
        config_path: absolute(&args.config)?,
        root_seed: job.seed(),
        output_dir: absolute(&args.out)?,
        version: env!("CARGO_PKG_VERSION").to_string(),
        workers,
        config: job.to_value()?,
    };
    execute(&manifest, &job, &args.out)
}

fn replay(args: &ReplayArgs) -> Result<()> {
    let mut manifest = read_manifest(&args.manifest)?;
    let job = Job::from_value(manifest.command, manifest.config.clone())?;
    job.validate()?;
    if let Some(w) = args.workers {
        manifest.workers = w.max(1);
    }
    let out = args.out.clone().unwrap_or_else(|| manifest.output_dir.clone());
    manifest.output_dir = absolute(&out)?;
    execute(&manifest, &job, &out)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn execute(manifest: &RunManifest, job: &Job, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    write_json(&out.join(MANIFEST_FILE), manifest)?;
    match job {
        Job::Simulate(c) => cmd_simulate(c, out),
        Job::Fit(c) => cmd_fit(c, out),
        Job::Monitor(c) => cmd_monitor(c, out),
        Job::Benchmark(c) => cmd_benchmark(c, out, manifest.workers),
        Job::Report(c) => cmd_report(c, out),
    }
}

enum Job {
    Simulate(SimulateConfig),
    Fit(FitConfig),
    Monitor(MonitorRunConfig),
    Benchmark(BenchmarkConfig),
    Report(ReportConfig),
}

fn parse_config<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn check_schema(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p)?)
}

impl Job {
    fn parse(kind: CommandKind, text: &str, path: &Path) -> Result<Self> {
        Ok(match kind {
            CommandKind::Simulate => Job::Simulate(parse_config(text, path)?),
            CommandKind::Fit => Job::Fit(parse_config(text, path)?),
            CommandKind::Monitor => Job::Monitor(parse_config(text, path)?),
            CommandKind::Benchmark => Job::Benchmark(parse_config(text, path)?),
            CommandKind::Report => Job::Report(parse_config(text, path)?),
        })
    }

    fn from_value(kind: CommandKind, v: serde_json::Value) -> Result<Self> {
        let text = serde_json::to_string(&v)?;
        Self::parse(kind, &text, Path::new(MANIFEST_FILE))
    }

    fn to_value(&self) -> Result<serde_json::Value> {
        Ok(match self {
            Job::Simulate(c) => serde_json::to_value(c)?,
            Job::Fit(c) => serde_json::to_value(c)?,
            Job::Monitor(c) => serde_json::to_value(c)?,
            Job::Benchmark(c) => serde_json::to_value(c)?,
            Job::Report(c) => serde_json::to_value(c)?,
        })
    }

    fn apply_overrides(&mut self, seed: Option<u64>, replicates: Option<usize>) -> Result<()> {
        match self {
            Job::Simulate(c) => c.seed = seed.unwrap_or(c.seed),
            Job::Monitor(c) => c.seed = seed.unwrap_or(c.seed),
            Job::Benchmark(c) => {
                let e = &mut c.experiment;
                e.root_seed = seed.unwrap_or(e.root_seed);
                e.replicates = replicates.unwrap_or(e.replicates);
            }
            Job::Fit(_) | Job::Report(_) => {
                if seed.is_some() {
                    return Err(Error::Config(
                        "this command is deterministic and takes no --seed".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        match self {
            Job::Simulate(c) => {
                if let Some(m) = c.model.as_mut() {
                    resolve(base, &mut m.path);
                }
            }
            Job::Fit(c) => resolve(base, &mut c.stream),
            Job::Monitor(c) => {
                resolve(base, &mut c.stream);
                resolve(base, &mut c.oracle);
            }
            Job::Benchmark(_) => {}
            Job::Report(c) => resolve(base, &mut c.results),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Job::Simulate(c) => {
                check_schema(c.schema_version)?;
                match (&c.scenario, &c.model) {
                    (Some(_), Some(_)) => Err(Error::Config("give either `scenario` or `model`, not both".into())),
                    (Some(s), None) => s.validate(),
                    (None, Some(m)) => {
                        if m.length == 0 {
                            return Err(Error::Config("model.length must be positive".into()));
                        }
                        if m.start == Some(0) || m.end == Some(0) {
                            return Err(Error::Config("model.start and model.end are 1-based".into()));
                        }
                        Ok(())
                    }
                    (None, None) => Ok(()),
                }
            }
            Job::Fit(c) => {
                check_schema(c.schema_version)?;
                if c.n_min == 0 || c.n_min > c.n_max {
                    return Err(Error::Config("need 1 <= n_min <= n_max".into()));
                }
                c.init.validate()
            }
            Job::Monitor(c) => {
                check_schema(c.schema_version)?;
                if c.n_classes == 0 {
                    return Err(Error::Config("n_classes must be positive".into()));
                }
                c.monitor.validate()
            }
            Job::Benchmark(c) => {
                check_schema(c.schema_version)?;
                c.experiment.validate()
            }
            Job::Report(c) => check_schema(c.schema_version),
        }
    }

    fn seed(&self) -> u64 {
        match self {
            Job::Simulate(c) => c.seed,
            Job::Monitor(c) => c.seed,
            Job::Benchmark(c) => c.experiment.root_seed,
            Job::Fit(_) | Job::Report(_) => 0,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_model(path: &Path) -> Result<ModelParams> {
    ModelParams::from_json(&fs::read_to_string(path)?)
}

fn write_model(path: &Path, model: &ModelParams) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(model.to_json()?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes `t,state` rows, both 1-based.
pub fn write_states_csv<W: Write>(out: W, states: &[usize]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["t", "state"])?;
    for (t, s) in states.iter().enumerate() {
        w.write_record([(t + 1).to_string(), (s + 1).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `t,state` CSV into 0-based states indexed by `t − 1`.
pub fn read_states_csv<R: std::io::Read>(input: R) -> Result<Vec<Option<usize>>> {
    #[derive(Deserialize)]
    struct Row {
        t: usize,
        state: usize,
    }
    let mut r = csv::Reader::from_reader(input);
    let mut out: Vec<Option<usize>> = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let row: Row = rec.map_err(|e| Error::invalid(format!("states row {}: {e}", i + 2)))?;
        if row.t == 0 || row.state == 0 {
            return Err(Error::invalid(format!("states row {}: t and state are 1-based", i + 2)));
        }
        if out.len() < row.t {
            out.resize(row.t, None);
        }
        out[row.t - 1] = Some(row.state - 1);
    }
    Ok(out)
}

fn cmd_simulate(c: &SimulateConfig, out: &Path) -> Result<()> {
    let (obs, labels, states) = match &c.model {
        Some(m) => {
            let model = read_model(&m.path)?;
            let constraint = EndpointConstraint {
                start: m.start.map(|s| s - 1),
                end: m.end.map(|s| s - 1),
                length: m.length,
            };
            let (states, obs) = simulate_sequence(&model, constraint, c.seed)?;
            (obs, vec![None; states.len()], states)
        }
        None => {
            let sc = generate_scenario(&c.scenario.clone().unwrap_or_default(), c.seed)?;
            let (ti, ts) = (sc.init.nrows(), sc.stream.nrows());
            let obs = DMatrix::from_fn(ti + ts, sc.dim(), |i, j| {
                if i < ti {
                    sc.init[(i, j)]
                } else {
                    sc.stream[(i - ti, j)]
                }
            });
            let labels = (0..ti + ts).map(|t| (t < ti).then_some(0)).collect();
            let states = std::iter::repeat_n(0, ti)
                .chain(sc.truth.iter().copied())
                .collect::<Vec<_>>();
            (obs, labels, states)
        }
    };
    write_feature_stream(create(&out.join("stream.csv"))?, &obs, &labels)?;
    write_states_csv(create(&out.join("states.csv"))?, &states)
}

fn load_stream(path: &Path, t_init: Option<usize>) -> Result<ObservationStream> {
    let fs_ = read_feature_stream(BufReader::new(File::open(path)?))?;
    let t_init = t_init.unwrap_or_else(|| fs_.leading_in_control());
    let mut labels = fs_.labels.clone();
    for (t, l) in labels.iter_mut().take(t_init).enumerate() {
        match *l {
            Some(s) if s != 0 => {
                return Err(Error::invalid(format!(
                    "row {} is labeled {} but lies in the in-control prefix",
                    t + 1,
                    s + 1
                )))
            }
            _ => *l = Some(0),
        }
    }
    ObservationStream::new(fs_.observations, labels, t_init)
}

fn cmd_fit(c: &FitConfig, out: &Path) -> Result<()> {
    let stream = load_stream(&c.stream, c.t_init)?;
    let sel = select_model(&stream, c.n_min, c.n_max, &c.init)?;
    write_model(&out.join("model.json"), &sel.fit.model)?;

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(&out.join("posterior.csv"))?);
    let gamma = &sel.fit.posterior.gamma;
    let mut header = vec!["t".to_string(), "state".to_string()];
    header.extend((1..=gamma.ncols()).map(|i| format!("gamma_{i}")));
    w.write_record(&header)?;
    for t in 0..gamma.nrows() {
        let row = gamma.row(t);
        let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
        let mut rec = vec![(t + 1).to_string(), (best + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(create(&out.join("selection.csv"))?);
    w.write_record(["n_states", "log_likelihood", "aic", "error"])?;
    for cand in &sel.candidates {
        let rec = match &cand.outcome {
            Ok((ll, aic)) => [
                cand.n_states.to_string(),
                ll.to_string(),
                aic.to_string(),
                String::new(),
            ],
            Err(e) => [cand.n_states.to_string(), String::new(), String::new(), e.clone()],
        };
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

struct CsvOracle<'a> {
    states: &'a [Option<usize>],
    offset: usize,
}

impl LabelOracle for CsvOracle<'_> {
    fn query(&mut self, t: usize) -> Result<usize> {
        let row = self.offset + t;
        self.states.get(row).copied().flatten().ok_or_else(|| Error::Oracle {
            t: row + 1,
            reason: "the oracle file has no state for this row".into(),
        })
    }
}

fn cmd_monitor(c: &MonitorRunConfig, out: &Path) -> Result<()> {
    let stream = load_stream(&c.stream, c.t_init)?;
    let t_init = stream.t_init();
    if t_init == 0 {
        return Err(Error::Config(
            "the stream needs a labeled in-control prefix or an explicit t_init".into(),
        ));
    }
    let obs = stream.observations();
    let init = ObservationStream::with_initial_ic(obs.rows(0, t_init).into_owned(), t_init)?;
    let monitored = obs.rows(t_init, obs.nrows() - t_init).into_owned();
    let states = read_states_csv(BufReader::new(File::open(&c.oracle)?))?;
    let mut oracle = CsvOracle {
        states: &states,
        offset: t_init,
    };
    let res = Monitor::new(c.monitor.clone(), c.n_classes).run(&init, &monitored, &mut oracle, c.seed)?;

    write_decision_log(create(&out.join("decision_log.csv"))?, &res.log, t_init)?;
    let models = out.join("models");
    fs::create_dir_all(&models)?;
    for (t, model) in &res.snapshots {
        write_model(&models.join(format!("model_t{:05}.json", t_init + t + 1)), model)?;
    }
    if let Some(m) = &res.final_model {
        write_model(&out.join("final_model.json"), m)?;
    }
    let truth: Option<Vec<usize>> = (0..monitored.nrows())
        .map(|s| states.get(t_init + s).copied().flatten())
        .collect();
    let metrics = match (&truth, res.aborted.is_none()) {
        (Some(truth), true) => Some(compute_metrics(truth, &res.predictions)?),
        _ => None,
    };
    write_json(
        &out.join("summary.json"),
        &MonitorSummary {
            steps: res.log.len(),
            budget_total: res.budget_total,
            labels_used: res.labeled.len(),
            final_states: res.final_model.as_ref().map(ModelParams::n_states),
            metrics,
        },
    )?;
    match res.aborted {
        Some(reason) => Err(Error::Oracle {
            t: t_init + res.log.len() + 1,
            reason,
        }),
        None => Ok(()),
    }
}

fn cmd_benchmark(c: &BenchmarkConfig, out: &Path, workers: usize) -> Result<()> {
    let res = run_grid(&c.experiment, workers)?;
    let rows = res.rows();
    write_results_csv(create(&out.join("results.csv"))?, &rows)?;
    write_failures_csv(create(&out.join("failures.csv"))?, &res.failures)?;
    if !res.failures.is_empty() {
        eprintln!("warning: {} runs failed; see failures.csv", res.failures.len());
    }
    let cells = aggregate(&rows);
    write_summary_csv(create(&out.join("summary.csv"))?, &cells)?;
    write_figures(&out.join("figures"), &cells)?;
    Ok(())
}

fn cmd_report(c: &ReportConfig, out: &Path) -> Result<()> {
    let rows = read_results_csv(BufReader::new(File::open(&c.results)?))?;
    let cells = aggregate(&rows);
    write_summary_csv(create(&out.join("summary.csv"))?, &cells)?;
    write_figures(&out.join("figures"), &cells)?;
    Ok(())
}
