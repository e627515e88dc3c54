//! Command-line front end: scenario files, named presets, single runs,
//! parameter sweeps and analytic solves, plus the artifacts they write.
//!
//! Every command writes `manifest.json` into its output directory. The
//! manifest carries the resolved scenario, a content hash of it, the seeds
//! and a SHA-256 for every file written, so a rerun can be checked byte for
//! byte.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analytic::{self, PoissonMean, PrefixStart, ProductIndex, SolveOptions};
use crate::domain::*;
use crate::engine::{self, Transmission, TransmissionSink};
use crate::metrics::{ClassSummary, MetricsAccumulator, MetricsError, MetricsReport};
use crate::overlay::generate_overlay;

pub const PRESETS: &[&str] = &["homog600", "hetero600", "reference", "skewed3", "freeriders", "validation"];

/// Metric names emitted per class row of `sweep.csv`.
pub const SWEEP_METRICS: &[&str] =
    &["rate", "miss_ratio", "mean_delay", "p95_delay", "delay_variance", "miss_variance", "convergence_time"];

pub const SWEEP_HEADER: [&str; 6] = ["param", "value", "class", "metric", "mean", "stderr"];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("unknown preset {0:?} (known: {known})", known = PRESETS.join(", "))]
    UnknownPreset(String),
    #[error("{}", format_validation(.0))]
    Invalid(Vec<ValidationError>),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0} sweep point(s) failed; see manifest.json")]
    PointsFailed(usize),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Analytic(#[from] analytic::AnalyticError),
}

impl CliError {
    /// 1 for anything wrong with the input, 2 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            // The solver rejects scenarios outside its model before doing any work.
            CliError::UnknownPreset(_) | CliError::Invalid(_) | CliError::Usage(_) | CliError::Analytic(_) => 1,
            CliError::Io { .. } | CliError::PointsFailed(_) | CliError::Metrics(_) => 2,
        }
    }
}

fn format_validation(errors: &[ValidationError]) -> String {
    errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n")
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn class_table(spec: &[(f64, f64)]) -> Vec<BandwidthClass> {
    spec.iter()
        .enumerate()
        .map(|(i, &(upload_capacity, fraction))| BandwidthClass { id: i as u32 + 1, upload_capacity, fraction })
        .collect()
}

pub fn table1() -> Vec<BandwidthClass> {
    class_table(&[(4.0, 0.15), (1.0, 0.25), (0.384, 0.40), (0.128, 0.20)])
}

pub fn table2() -> Vec<BandwidthClass> {
    class_table(&[(3.5, 0.07), (0.35, 0.66), (0.2, 0.27)])
}

fn six_hundred(classes: Vec<BandwidthClass>) -> Scenario {
    Scenario {
        n: 600,
        edge_probability: EdgeProbability::Complete,
        classes,
        stream: StreamSpec { stream_rate: 1.0, chunk_size: 1.0 },
        source: SourceSpec { upload_capacity: 1.0, policy: SourcePolicy::RandomPeer },
        scheme: SchemeSpec {
            weight_kind: WeightKind::Random,
            awareness_probability: 0.0,
            chunk_policy: ChunkPolicy::LatestUseful,
            epoch_length: None,
            blind_retry: true,
        },
        buffer_deadline: 50.0,
        duration: 2400.0,
        warmup: 300.0,
        seed: 1,
    }
}

fn reference_family(classes: Vec<BandwidthClass>, stream_rate: f64, chunk_size: f64, source_upload: f64) -> Scenario {
    Scenario {
        n: 1000,
        edge_probability: EdgeProbability::Probability(0.05),
        classes,
        stream: StreamSpec { stream_rate, chunk_size },
        source: SourceSpec { upload_capacity: source_upload, policy: SourcePolicy::RandomPeer },
        scheme: SchemeSpec {
            weight_kind: WeightKind::TitForTat,
            awareness_probability: 0.75,
            chunk_policy: ChunkPolicy::LatestUseful,
            epoch_length: Some(10.0),
            blind_retry: true,
        },
        buffer_deadline: 30.0,
        duration: 1200.0,
        warmup: 300.0,
        seed: 1,
    }
}

/// Named scenarios from the experiments this tool reproduces.
pub fn preset(name: &str) -> Result<Scenario, CliError> {
    let s = match name {
        "homog600" => six_hundred(class_table(&[(1.0, 1.0)])),
        // 400 peers at half the source capacity, 200 at twice it.
        "hetero600" => six_hundred(class_table(&[(0.5, 2.0 / 3.0), (2.0, 1.0 / 3.0)])),
        "reference" => reference_family(table1(), 0.9, 0.09, 1.1),
        "skewed3" => reference_family(table2(), 0.5, 0.05, 0.6),
        "freeriders" => {
            let mut classes = table2();
            classes[2].upload_capacity = 0.0;
            reference_family(classes, 0.5, 0.05, 0.6)
        }
        "validation" => Scenario {
            n: 1000,
            edge_probability: EdgeProbability::Complete,
            classes: table1(),
            stream: StreamSpec { stream_rate: 0.9, chunk_size: 0.9 },
            source: SourceSpec { upload_capacity: 0.9, policy: SourcePolicy::RandomPeer },
            scheme: SchemeSpec {
                weight_kind: WeightKind::BandwidthAware,
                awareness_probability: 1.0,
                chunk_policy: ChunkPolicy::LatestBlind,
                epoch_length: None,
                blind_retry: false,
            },
            buffer_deadline: 30.0,
            // 10,001 scored chunks.
            duration: 10_130.0,
            warmup: 100.0,
            seed: 1,
        },
        other => return Err(CliError::UnknownPreset(other.to_string())),
    };
    Ok(s)
}

/// Bandwidth balance of a scenario, with and without the source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Balance {
    pub mean_capacity: f64,
    pub peers_over_rate: f64,
    pub with_source_over_rate: f64,
}

pub fn balance(s: &Scenario) -> Balance {
    let mean = mean_capacity(&s.classes);
    let rate = s.stream.stream_rate;
    Balance {
        mean_capacity: mean,
        peers_over_rate: mean / rate,
        with_source_over_rate: (mean * s.n as f64 + s.source.upload_capacity) / (s.n as f64 * rate),
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Usage(format!("scenario: {e}")))
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_scenario(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn validate(s: Scenario) -> Result<ValidScenario, CliError> {
    validate_scenario(s).map_err(CliError::Invalid)
}

/// Sweepable scenario parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridParam {
    /// Awareness probability W.
    W,
    /// Epoch length T_e in seconds.
    Te,
    /// Source upload capacity in Mbps.
    Us,
    /// Source upload capacity as a multiple of the stream rate.
    UsSr,
    /// Source policy: `rp`, `c<k>` or `aware:<weight>:<W>`.
    Source,
    /// Peer weight kind.
    Weight,
}

impl GridParam {
    pub fn name(self) -> &'static str {
        match self {
            GridParam::W => "w",
            GridParam::Te => "te",
            GridParam::Us => "us",
            GridParam::UsSr => "us-sr",
            GridParam::Source => "source",
            GridParam::Weight => "weight",
        }
    }

    fn parse(name: &str) -> Option<Self> {
        [GridParam::W, GridParam::Te, GridParam::Us, GridParam::UsSr, GridParam::Source, GridParam::Weight]
            .into_iter()
            .find(|p| p.name() == name.to_ascii_lowercase())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub param: GridParam,
    pub values: Vec<String>,
}

impl std::str::FromStr for GridAxis {
    type Err = String;

    /// `param=v1,v2,...`
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let (name, values) = text.split_once('=').ok_or_else(|| format!("grid {text:?}: expected param=v1,v2,..."))?;
        let param = GridParam::parse(name.trim())
            .ok_or_else(|| format!("grid: unknown parameter {name:?} (w, te, us, us-sr, source, weight)"))?;
        let values: Vec<String> =
            values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(format!("grid {text:?}: no values"));
        }
        Ok(GridAxis { param, values })
    }
}

fn parse_weight(text: &str) -> Result<WeightKind, String> {
    serde_json::from_value(serde_json::Value::String(text.to_string()))
        .or(match text {
            "rp" => Ok(WeightKind::Random),
            "ba" => Ok(WeightKind::BandwidthAware),
            "tft" => Ok(WeightKind::TitForTat),
            "md" => Ok(WeightKind::MostDeprived),
            "pd" => Ok(WeightKind::ProportionalDeprived),
            _ => Err(()),
        })
        .map_err(|_| format!("unknown weight kind {text:?}"))
}

fn parse_number(param: GridParam, text: &str) -> Result<f64, String> {
    text.parse::<f64>().map_err(|_| format!("{}: {text:?} is not a number", param.name()))
}

fn parse_source(text: &str) -> Result<SourcePolicy, String> {
    if text == "rp" || text == "random-peer" {
        return Ok(SourcePolicy::RandomPeer);
    }
    if let Some(k) = text.strip_prefix('c') {
        if let Ok(class) = k.parse::<u32>() {
            return Ok(SourcePolicy::ClassTargeted { class });
        }
    }
    if let Some(rest) = text.strip_prefix("aware:") {
        if let Some((kind, w)) = rest.rsplit_once(':') {
            let weight_kind = parse_weight(kind)?;
            let awareness_probability = w.parse().map_err(|_| format!("source: bad W in {text:?}"))?;
            return Ok(SourcePolicy::Aware { weight_kind, awareness_probability });
        }
    }
    Err(format!("source: {text:?} is not rp, c<k> or aware:<weight>:<W>"))
}

/// Sets one grid parameter on a scenario.
pub fn apply_grid(s: &mut Scenario, param: GridParam, value: &str) -> Result<(), String> {
    match param {
        GridParam::W => s.scheme.awareness_probability = parse_number(param, value)?,
        GridParam::Te => s.scheme.epoch_length = Some(parse_number(param, value)?),
        GridParam::Us => s.source.upload_capacity = parse_number(param, value)?,
        GridParam::UsSr => s.source.upload_capacity = parse_number(param, value)? * s.stream.stream_rate,
        GridParam::Source => s.source.policy = parse_source(value)?,
        GridParam::Weight => {
            s.scheme.weight_kind = parse_weight(value)?;
            if s.scheme.weight_kind == WeightKind::TitForTat && s.scheme.epoch_length.is_none() {
                s.scheme.epoch_length = Some(10.0);
            }
        }
    }
    Ok(())
}

/// One grid point: the values of every axis, in axis order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub params: Vec<GridParam>,
    pub values: Vec<String>,
}

impl GridPoint {
    pub fn param_label(&self) -> String {
        self.params.iter().map(|p| p.name()).collect::<Vec<_>>().join(";")
    }

    pub fn value_label(&self) -> String {
        self.values.join(";")
    }

    fn dir_name(&self) -> String {
        let parts: Vec<String> = self
            .params
            .iter()
            .zip(&self.values)
            .map(|(p, v)| format!("{}={}", p.name(), v.replace([':', '/'], "_")))
            .collect();
        if parts.is_empty() {
            "base".to_string()
        } else {
            parts.join("__")
        }
    }
}

/// Cartesian product of the axes, first axis slowest.
pub fn grid_points(axes: &[GridAxis]) -> Vec<GridPoint> {
    let mut points = vec![GridPoint { params: Vec::new(), values: Vec::new() }];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.params.push(axis.param);
                    q.values.push(v.clone());
                    q
                })
            })
            .collect();
    }
    points
}

pub fn point_scenario(base: &Scenario, point: &GridPoint) -> Result<Scenario, String> {
    let mut s = base.clone();
    for (param, value) in point.params.iter().zip(&point.values) {
        apply_grid(&mut s, *param, value)?;
    }
    Ok(s)
}

struct Both<'a> {
    log: &'a mut Vec<Transmission>,
    metrics: &'a mut MetricsAccumulator,
}

impl TransmissionSink for Both<'_> {
    fn record(&mut self, t: &Transmission) {
        self.log.push(*t);
        self.metrics.record(t);
    }
}

pub struct SimulationResult {
    pub report: MetricsReport,
    pub stats: engine::RunStats,
    /// Present only when requested.
    pub log: Option<Vec<Transmission>>,
    pub seconds: f64,
}

/// Builds the overlay and runs one simulation, streaming into the metrics.
pub fn simulate(s: &ValidScenario, keep_log: bool) -> Result<SimulationResult, CliError> {
    let start = Instant::now();
    let sc = s.scenario();
    let overlay = generate_overlay(sc.n, sc.edge_probability, sc.seed);
    for w in overlay.warnings() {
        log::warn!("seed {}: {w}", sc.seed);
    }
    let mut metrics = MetricsAccumulator::new(s);
    let mut log = Vec::new();
    let out = if keep_log {
        engine::run_with_sink(s, &overlay, Both { log: &mut log, metrics: &mut metrics })
    } else {
        engine::run_with_sink(s, &overlay, &mut metrics)
    };
    let report = metrics.finish()?;
    Ok(SimulationResult {
        report,
        stats: out.stats,
        log: keep_log.then_some(log),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs `jobs` on at most `workers` threads, preserving order.
pub fn fan_out<T: Send, R: Send>(workers: usize, jobs: Vec<T>, f: impl Fn(T) -> R + Sync + Send) -> Vec<R> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().expect("thread pool");
    pool.install(|| jobs.into_par_iter().map(f).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub class: String,
    pub metric: &'static str,
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
}

fn summary_rows(param: &str, value: &str, class: String, c: &ClassSummary, convergence: Option<f64>) -> Vec<SweepRow> {
    let metric = |metric, mean, stderr| SweepRow {
        param: param.to_string(),
        value: value.to_string(),
        class: class.clone(),
        metric,
        mean,
        stderr,
    };
    vec![
        metric("rate", Some(c.rate), c.rate_stderr),
        metric("miss_ratio", Some(c.miss_ratio), c.rate_stderr),
        metric("mean_delay", c.mean_delay, c.delay_stderr),
        metric("p95_delay", c.p95_delay, None),
        metric("delay_variance", c.delay_variance, None),
        metric("miss_variance", c.miss_variance, None),
        metric("convergence_time", convergence, None),
    ]
}

/// Long-format rows for one report: the global aggregate then each class.
/// Convergence is only measured on the aggregate.
pub fn sweep_rows(param: &str, value: &str, report: &MetricsReport) -> Vec<SweepRow> {
    let mut rows = summary_rows(param, value, "all".to_string(), &report.global, report.convergence.time);
    for c in &report.classes {
        let id = c.class.map(|k| k.to_string()).unwrap_or_default();
        rows.extend(summary_rows(param, value, id, c, None));
    }
    rows
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    let num = |x: Option<f64>| x.map(|v| format!("{v}")).unwrap_or_default();
    for r in rows {
        w.write_record([&r.param, &r.value, &r.class, r.metric, &num(r.mean), &num(r.stderr)])?;
    }
    w.flush()
}

/// SHA-256 of the scenario's canonical JSON with the seed cleared, so runs
/// differing only in seed share a hash.
pub fn config_hash(s: &Scenario) -> String {
    let mut s = s.clone();
    s.seed = 0;
    let text = serde_json::to_string(&s).expect("scenario serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub label: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointFailure {
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: &'static str,
    pub scenario: Scenario,
    pub config_hash: String,
    pub balance: Balance,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<String>,
    pub files: Vec<ManifestFile>,
    pub timings: Vec<Timing>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<PointFailure>,
}

/// Tracks written files for the manifest.
struct Outputs {
    root: PathBuf,
    files: Vec<ManifestFile>,
}

impl Outputs {
    fn new(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Outputs { root: root.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, rel: &str, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut buf = Vec::new();
        f(&mut buf).map_err(io_err(&path))?;
        let mut file = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        file.write_all(&buf).and_then(|_| file.flush()).map_err(io_err(&path))?;
        self.files.push(ManifestFile { path: rel.to_string(), sha256: hex::encode(Sha256::digest(&buf)) });
        Ok(())
    }

    fn finish(self, mut manifest: RunManifest) -> Result<(), CliError> {
        manifest.files = self.files;
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(io_err(&path))
    }
}

fn write_run(outputs: &mut Outputs, dir: &str, result: &SimulationResult) -> Result<(), CliError> {
    outputs.write(&format!("{dir}/report.json"), |w| result.report.write_json(w))?;
    outputs.write(&format!("{dir}/per_chunk.csv"), |w| result.report.write_per_chunk_csv(w))?;
    outputs.write(&format!("{dir}/cdf.csv"), |w| result.report.write_cdf_csv(w))?;
    if let Some(log) = &result.log {
        outputs.write(&format!("{dir}/log.csv"), |w| engine::write_log_csv(log, w))?;
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "chunkcast", version, about = "Chunk diffusion simulator and mean-field solver for P2P live streaming")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario and print its resolved form.
    Validate(ScenarioArgs),
    /// Simulate a scenario once per seed.
    Run(RunArgs),
    /// Simulate every grid point for every seed.
    Sweep(SweepArgs),
    /// Solve the mean-field recursion.
    Solve(SolveArgs),
    /// Inspect the built-in presets.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum PresetAction {
    List,
    Show { name: String },
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// JSON scenario file.
    #[arg(long, conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Override the simulated duration (s).
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub warmup: Option<f64>,
}

impl ScenarioArgs {
    pub fn resolve(&self) -> Result<Scenario, CliError> {
        let mut s = match (&self.scenario, &self.preset) {
            (Some(path), _) => load_scenario(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => return Err(CliError::Usage("one of --scenario or --preset is required".into())),
        };
        if let Some(d) = self.duration {
            s.duration = d;
        }
        if let Some(w) = self.warmup {
            s.warmup = w;
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Comma-separated seeds; defaults to the scenario's own.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, env = "CHUNKCAST_WORKERS", default_value_t = default_workers())]
    pub workers: usize,
    /// Also write the full transmission log.
    #[arg(long)]
    pub log: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// `param=v1,v2,...`; repeat for a product grid.
    #[arg(long, required = true)]
    pub grid: Vec<GridAxis>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Number of sampled initial conditions |J|.
    #[arg(long, default_value_t = 1000)]
    pub conditions: usize,
    /// End of the exact prefix (s); defaults to T_SR + 1 s.
    #[arg(long)]
    pub t_init: Option<f64>,
    /// Recursion horizon (s); defaults to the buffer deadline.
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 20)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t)]
    pub prefix: PrefixStart,
    #[arg(long, value_enum, default_value_t)]
    pub product: ProductIndex,
    #[arg(long, value_enum, default_value_t)]
    pub poisson: PoissonMean,
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn seeds_or_default(seeds: &[u64], s: &Scenario) -> Vec<u64> {
    if seeds.is_empty() {
        vec![s.seed]
    } else {
        seeds.to_vec()
    }
}

fn with_seed(s: &Scenario, seed: u64) -> Scenario {
    let mut s = s.clone();
    s.seed = seed;
    s
}

fn manifest(command: &str, s: &Scenario, seeds: Vec<u64>, out: &Path) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION"),
        scenario: s.clone(),
        config_hash: config_hash(s),
        balance: balance(s),
        seeds,
        output_dir: out.display().to_string(),
        grid: Vec::new(),
        files: Vec::new(),
        timings: Vec::new(),
        failures: Vec::new(),
    }
}

pub fn run_command(args: &RunArgs) -> Result<(), CliError> {
    let base = args.scenario.resolve()?;
    let seeds = seeds_or_default(&args.seed, &base);
    let valid: Vec<ValidScenario> =
        seeds.iter().map(|&seed| validate(with_seed(&base, seed))).collect::<Result<_, _>>()?;
    let results = fan_out(args.workers, valid, |v| simulate(&v, args.log));

    let mut outputs = Outputs::new(&args.out)?;
    let mut m = manifest("run", &base, seeds.clone(), &args.out);
    for (seed, result) in seeds.iter().zip(results) {
        let result = result?;
        let dir = format!("seed-{seed}");
        write_run(&mut outputs, &dir, &result)?;
        m.timings.push(Timing { label: dir, seconds: result.seconds });
        let g = &result.report.global;
        println!(
            "seed {seed}: {} chunks, rate {:.4}, mean delay {}",
            result.report.scored_chunks,
            g.rate,
            g.mean_delay.map(|d| format!("{d:.3} s")).unwrap_or_else(|| "-".into())
        );
    }
    outputs.finish(m)
}

pub fn sweep_command(args: &SweepArgs) -> Result<(), CliError> {
    let base = args.run.scenario.resolve()?;
    validate(base.clone())?;
    let seeds = seeds_or_default(&args.run.seed, &base);
    let points = grid_points(&args.grid);

    let mut jobs = Vec::new();
    for point in &points {
        let s = point_scenario(&base, point).map_err(CliError::Usage)?;
        for &seed in &seeds {
            jobs.push((point.clone(), seed, validate(with_seed(&s, seed))?));
        }
    }
    let keep_log = args.run.log;
    let results = fan_out(args.run.workers, jobs, |(point, seed, v)| {
        let r = simulate(&v, keep_log);
        (point, seed, r)
    });

    let mut outputs = Outputs::new(&args.run.out)?;
    let mut m = manifest("sweep", &base, seeds, &args.run.out);
    m.grid = args
        .grid
        .iter()
        .map(|a| format!("{}={}", a.param.name(), a.values.join(",")))
        .collect();
    let mut rows = Vec::new();
    for (point, seed, result) in results {
        let dir = format!("{}/seed-{seed}", point.dir_name());
        match result {
            Ok(result) => {
                write_run(&mut outputs, &dir, &result)?;
                let param = format!("{};seed", point.param_label());
                let value = format!("{};{seed}", point.value_label());
                rows.extend(sweep_rows(&param, &value, &result.report));
                m.timings.push(Timing { label: dir, seconds: result.seconds });
            }
            Err(e) => {
                log::error!("{dir}: {e}");
                m.failures.push(PointFailure { label: dir, error: e.to_string() });
            }
        }
    }
    outputs.write("sweep.csv", |w| write_sweep_csv(&rows, w))?;
    let (runs, failed) = (m.timings.len() + m.failures.len(), m.failures.len());
    outputs.finish(m)?;
    println!("{runs} runs, {failed} failed");
    if failed > 0 {
        return Err(CliError::PointsFailed(failed));
    }
    Ok(())
}

pub fn solve_options(args: &SolveArgs, s: &Scenario) -> SolveOptions {
    let t_sr = s.stream.chunk_size / s.stream.stream_rate;
    SolveOptions {
        conditions: args.conditions,
        t_init: args.t_init.unwrap_or(t_sr + 1.0),
        horizon: args.horizon,
        tol: args.tol,
        max_iter: args.max_iter,
        prefix: args.prefix,
        product: args.product,
        poisson: args.poisson,
        keep_history: false,
    }
}

pub fn solve_command(args: &SolveArgs) -> Result<(), CliError> {
    let base = args.scenario.resolve()?;
    let seeds = seeds_or_default(&args.seed, &base);
    let opts = solve_options(args, &base);
    let mut outputs = Outputs::new(&args.out)?;
    let mut m = manifest("solve", &base, seeds.clone(), &args.out);
    for seed in seeds {
        let v = validate(with_seed(&base, seed))?;
        let start = Instant::now();
        let sol = analytic::solve(&v, &opts)?;
        let dir = format!("seed-{seed}");
        outputs.write(&format!("{dir}/prediction.json"), |w| {
            serde_json::to_writer_pretty(&mut *w, &sol.report)?;
            writeln!(w)
        })?;
        if let Some(first) = sol.curves.first() {
            outputs.write(&format!("{dir}/curves.csv"), |w| analytic::write_curve_csv(first, &sol.r_bar, w))?;
        }
        m.timings.push(Timing { label: dir, seconds: start.elapsed().as_secs_f64() });
        let r = &sol.report;
        print!("seed {seed}: converged {} in {} iterations", r.converged, r.iterations);
        for c in &r.classes {
            print!(", C{} rate {:.3}", c.class.unwrap_or(0), c.rate);
        }
        println!();
    }
    outputs.finish(m)
}

struct Shown<'a>(&'a Scenario);

impl fmt::Display for Shown<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = serde_json::to_string_pretty(self.0).map_err(|_| fmt::Error)?;
        writeln!(f, "{text}")?;
        let b = balance(self.0);
        write!(
            f,
            "mean capacity {:.4} Mbps, balance {:.3} SR (peers), {:.3} SR (with source)",
            b.mean_capacity, b.peers_over_rate, b.with_source_over_rate
        )
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate(args) => {
            let s = validate(args.resolve()?)?;
            println!("{}", Shown(s.scenario()));
            Ok(())
        }
        Command::Run(args) => run_command(args),
        Command::Sweep(args) => sweep_command(args),
        Command::Solve(args) => solve_command(args),
        Command::Preset { action: PresetAction::List } => {
            for name in PRESETS {
                println!("{name}");
            }
            Ok(())
        }
        Command::Preset { action: PresetAction::Show { name } } => {
            println!("{}", Shown(&preset(name)?));
            Ok(())
        }
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            let s = preset(name).unwrap();
            validate(s).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn preset_capacities() {
        assert!((mean_capacity(&preset("reference").unwrap().classes) - 1.02).abs() < 0.01);
        assert!((mean_capacity(&preset("skewed3").unwrap().classes) - 0.53).abs() < 0.005);
        let h = preset("homog600").unwrap();
        assert_eq!(h.classes.len(), 1);
        assert_eq!(h.classes[0].fraction, 1.0);
        let v = validate(preset("hetero600").unwrap()).unwrap();
        assert_eq!(v.populations(), &[400, 200]);
        assert_eq!(preset("freeriders").unwrap().classes[2].upload_capacity, 0.0);
    }

    #[test]
    fn unknown_preset_is_a_validation_failure() {
        let e = preset("nope").unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn grid_parses_and_applies() {
        let axis: GridAxis = "us-sr=1,2".parse().unwrap();
        assert_eq!(axis.param, GridParam::UsSr);
        let mut s = preset("reference").unwrap();
        apply_grid(&mut s, axis.param, "2").unwrap();
        assert!((s.source.upload_capacity - 1.8).abs() < 1e-12);
        apply_grid(&mut s, GridParam::Source, "c4").unwrap();
        assert_eq!(s.source.policy, SourcePolicy::ClassTargeted { class: 4 });
        apply_grid(&mut s, GridParam::Source, "aware:bandwidth-aware:0.5").unwrap();
        assert!(matches!(s.source.policy, SourcePolicy::Aware { weight_kind: WeightKind::BandwidthAware, .. }));
        apply_grid(&mut s, GridParam::Weight, "ba").unwrap();
        assert_eq!(s.scheme.weight_kind, WeightKind::BandwidthAware);
        assert!("x=1".parse::<GridAxis>().is_err());
        assert!("w=".parse::<GridAxis>().is_err());
        assert!(apply_grid(&mut s, GridParam::W, "abc").is_err());
    }

    #[test]
    fn grid_product_order() {
        let axes: Vec<GridAxis> = vec!["w=0,1".parse().unwrap(), "te=2,5,10".parse().unwrap()];
        let points = grid_points(&axes);
        assert_eq!(points.len(), 6);
        assert_eq!(points[1].value_label(), "0;5");
        assert_eq!(points[3].value_label(), "1;2");
        assert_eq!(points[0].param_label(), "w;te");
    }

    #[test]
    fn hash_ignores_seed_only() {
        let a = preset("reference").unwrap();
        let mut b = a.clone();
        b.seed = 99;
        assert_eq!(config_hash(&a), config_hash(&b));
        b.warmup += 1.0;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn reference_balance_both_ways() {
        let b = balance(&preset("reference").unwrap());
        assert!((b.peers_over_rate - 1.1436).abs() < 1e-3);
        assert!(b.with_source_over_rate > b.peers_over_rate);
    }
}
