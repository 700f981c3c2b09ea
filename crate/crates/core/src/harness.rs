//! Seeded experiment sweeps with tabular output.
//!
//! A sweep walks `topology × nodes × delta` in configuration order. Trial
//! `t` of point `p` is seeded with `trial_seed(master_seed, p, t)` and
//! splits that seed into independent topology, assignment and protocol
//! streams, so results do not depend on the worker count.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dvb1::{self, Dvb1Params};
use crate::dvb2::{self, Dvb2Params, IdMode};
use crate::engine::{BeeperSensing, TrialResult};
use crate::error::{Error, Result};
use crate::rng::{mix, stream, trial_seed, Stream};
use crate::topology::{
    build, strict_plurality, DiameterMode, Graph, Level, LevelAssignment, TopologyKind,
    TopologySpec,
};

pub const CSV_HEADER: [&str; 13] = [
    "algo",
    "topology",
    "n",
    "k",
    "delta",
    "trials",
    "success_rate",
    "mean_phases",
    "mean_slots",
    "mean_beeps",
    "ci95_lo",
    "ci95_hi",
    "errors",
];

const WILSON_Z: f64 = 1.959964;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    #[default]
    Dvb1,
    Dvb2,
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dvb1" => Ok(Algo::Dvb1),
            "dvb2" => Ok(Algo::Dvb2),
            other => Err(Error::Config(format!("unknown algo `{other}`"))),
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Dvb1 => "dvb1",
            Algo::Dvb2 => "dvb2",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        })
    }
}

/// One sweep. Keys of the text format are the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algo: Algo,
    pub topology: Vec<TopologyKind>,
    pub nodes: Vec<usize>,
    pub levels: usize,
    pub delta: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub c1: f64,
    pub c2: f64,
    pub d_mode: DiameterMode,
    pub id_mode: IdMode,
    /// `None` keeps each algorithm's default cap.
    pub max_phases: Option<u64>,
    /// DVB1 only: score a single corrosion phase instead of a full run.
    pub one_phase: bool,
    pub sensing: BeeperSensing,
    /// Erdős–Rényi edge probability; `None` uses the default.
    pub er_probability: Option<f64>,
    /// Worker threads; `None` uses rayon's default.
    pub workers: Option<usize>,
    pub format: OutputFormat,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algo: Algo::Dvb1,
            topology: vec![TopologyKind::Complete],
            nodes: vec![100],
            levels: 2,
            delta: vec![0.7],
            trials: 1000,
            master_seed: 1,
            c1: dvb1::DEFAULT_C1,
            c2: dvb2::DEFAULT_C2,
            d_mode: DiameterMode::Exact,
            id_mode: IdMode::RandomIds,
            max_phases: None,
            one_phase: false,
            sensing: BeeperSensing::Duplex,
            er_probability: None,
            workers: None,
            format: OutputFormat::Csv,
            output: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_value(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("`{key}` needs at least one value")));
    }
    Ok(items)
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value.trim() {
        "" | "default" | "none" => Ok(None),
        v => parse_value(key, v).map(Some),
    }
}

impl ExperimentConfig {
    /// Sets one field from its text form. Lists are comma separated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "algo" => self.algo = parse_value(key, value)?,
            "topology" => self.topology = parse_list(key, value)?,
            "nodes" => self.nodes = parse_list(key, value)?,
            "levels" => self.levels = parse_value(key, value)?,
            "delta" => self.delta = parse_list(key, value)?,
            "trials" => self.trials = parse_value(key, value)?,
            "master_seed" => self.master_seed = parse_value(key, value)?,
            "c1" => self.c1 = parse_value(key, value)?,
            "c2" => self.c2 = parse_value(key, value)?,
            "d_mode" => self.d_mode = parse_value(key, value)?,
            "id_mode" => self.id_mode = parse_value(key, value)?,
            "max_phases" => self.max_phases = parse_optional(key, value)?,
            "one_phase" => self.one_phase = parse_value(key, value)?,
            "sensing" => self.sensing = parse_value(key, value)?,
            "er_probability" => self.er_probability = parse_optional(key, value)?,
            "workers" => self.workers = parse_optional(key, value)?,
            "format" => self.format = parse_value(key, value)?,
            "output" => {
                self.output = match value.trim() {
                    "" | "-" => None,
                    v => Some(PathBuf::from(v)),
                }
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            config
                .set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.topology.is_empty() || self.nodes.is_empty() || self.delta.is_empty() {
            return Err(Error::Config(
                "topology, nodes and delta must be non-empty".into(),
            ));
        }
        if let Some(&n) = self.nodes.iter().find(|&&n| n == 0) {
            return Err(Error::Config(format!("invalid node count {n}")));
        }
        for &d in &self.delta {
            fractions(self.levels, d)?;
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::Config("c1 and c2 must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.one_phase && self.algo != Algo::Dvb1 {
            return Err(Error::Config("one_phase applies to dvb1 only".into()));
        }
        Ok(())
    }

    /// Sweep points in output order.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &topology in &self.topology {
            for &nodes in &self.nodes {
                for &delta in &self.delta {
                    out.push(SweepPoint {
                        topology,
                        nodes,
                        delta,
                    });
                }
            }
        }
        out
    }

    fn spec(&self, point: &SweepPoint) -> TopologySpec {
        match point.topology.with_nodes(point.nodes) {
            TopologySpec::ErdosRenyi { nodes, .. } => TopologySpec::ErdosRenyi {
                nodes,
                edge_probability: self.er_probability,
            },
            spec => spec,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub topology: TopologyKind,
    pub nodes: usize,
    pub delta: f64,
}

/// Level fractions for `levels` levels at parameter `delta`:
/// `(1−δ, δ)` for two levels, `(2/3−δ, 1/3, δ)` for three.
pub fn fractions(levels: usize, delta: f64) -> Result<Vec<f64>> {
    match levels {
        2 if delta > 0.5 && delta <= 1.0 => Ok(vec![1.0 - delta, delta]),
        2 => Err(Error::Config(format!(
            "binary delta {delta} outside (1/2, 1]"
        ))),
        3 if (0.0..1.0 / 3.0).contains(&delta) => Ok(vec![2.0 / 3.0 - delta, 1.0 / 3.0, delta]),
        3 => Err(Error::Config(format!(
            "ternary delta {delta} outside [0, 1/3)"
        ))),
        k => Err(Error::Config(format!(
            "delta schedules exist for 2 or 3 levels, got {k}; use explicit fractions"
        ))),
    }
}

/// Initial values for `n` nodes from the delta schedule of `levels`.
pub fn make_assignment<R: Rng + ?Sized>(
    n: usize,
    levels: usize,
    delta: f64,
    rng: &mut R,
) -> Result<LevelAssignment> {
    assignment_from_fractions(n, &fractions(levels, delta)?, rng)
}

/// Rounds `fractions · n` down, gives the remainder to the largest fraction
/// and shuffles the levels over the nodes.
pub fn assignment_from_fractions<R: Rng + ?Sized>(
    n: usize,
    fractions: &[f64],
    rng: &mut R,
) -> Result<LevelAssignment> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| !(0.0..=1.0 + 1e-9).contains(&f)) {
        return Err(Error::InvalidParameter(format!(
            "fractions {fractions:?} do not form a distribution"
        )));
    }
    let mut counts: Vec<usize> = fractions
        .iter()
        .map(|&f| (f * n as f64 + 1e-9).floor() as usize)
        .collect();
    let major = (0..fractions.len())
        .max_by(|&a, &b| fractions[a].total_cmp(&fractions[b]).then(b.cmp(&a)))
        .unwrap();
    let assigned: usize = counts.iter().sum();
    counts[major] += n.saturating_sub(assigned);
    if strict_plurality(&counts).is_none() {
        return Err(Error::NoStrictPlurality);
    }
    let mut values: Vec<Level> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(Level::new(k), c))
        .collect();
    values.shuffle(rng);
    LevelAssignment::new(values, fractions.len())
}

/// Wilson score interval for `successes` out of `n` at 95%.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let phat = successes as f64 / nf;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / nf;
    let center = (phat + z2 / (2.0 * nf)) / denom;
    let half = WILSON_Z / denom * (phat * (1.0 - phat) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Outcome of one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSummary {
    pub success: bool,
    pub phases: u64,
    pub slots: u64,
    pub beeps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algo: String,
    pub topology: String,
    pub n: usize,
    pub k: usize,
    pub delta: f64,
    pub trials: usize,
    pub success_rate: f64,
    /// Mean phases until every node held the majority, over successful runs.
    pub mean_phases: f64,
    pub mean_slots: f64,
    pub mean_beeps: f64,
    pub ci95_lo: f64,
    pub ci95_hi: f64,
    pub errors: usize,
}

impl SweepRow {
    /// Copy with every float cut to six significant digits, as emitted.
    pub fn rounded(&self) -> SweepRow {
        let r = |x: f64| round_sig(x, 6);
        SweepRow {
            delta: r(self.delta),
            success_rate: r(self.success_rate),
            mean_phases: r(self.mean_phases),
            mean_slots: r(self.mean_slots),
            mean_beeps: r(self.mean_beeps),
            ci95_lo: r(self.ci95_lo),
            ci95_hi: r(self.ci95_hi),
            ..self.clone()
        }
    }

    /// Standard error of the success rate.
    pub fn std_error(&self) -> f64 {
        let n = (self.trials - self.errors).max(1) as f64;
        (self.success_rate * (1.0 - self.success_rate) / n).sqrt()
    }
}

/// Runs one trial of `config` at `point`.
pub fn run_trial(
    config: &ExperimentConfig,
    point_index: usize,
    trial: usize,
) -> Result<TrialSummary> {
    let point = config.points()[point_index];
    run_trial_at(config, &point, point_index, trial, None)
}

/// Everything a single full run produced, for verbose reporting.
#[derive(Debug, Clone)]
pub struct TrialDetail {
    pub graph: Graph,
    pub initial: LevelAssignment,
    pub result: TrialResult,
}

/// Runs trial `trial` of point `point_index` to completion, optionally
/// logging every slot to `trace`. Always a full run, even with `one_phase`.
pub fn run_trial_detail(
    config: &ExperimentConfig,
    point_index: usize,
    trial: usize,
    trace: Option<&mut dyn Write>,
) -> Result<TrialDetail> {
    config.validate()?;
    let points = config.points();
    let point = points
        .get(point_index)
        .ok_or_else(|| Error::Config(format!("no sweep point {point_index}")))?;
    let seed = trial_seed(config.master_seed, point_index as u64, trial as u64);
    let graph = build(&config.spec(point), &mut stream(seed, Stream::Topology))?;
    let initial = trial_assignment(config, point, &graph, seed)?;
    let result = full_run(config, &graph, &initial, seed, trace)?;
    Ok(TrialDetail {
        graph,
        initial,
        result,
    })
}

fn trial_assignment(
    config: &ExperimentConfig,
    point: &SweepPoint,
    graph: &Graph,
    seed: u64,
) -> Result<LevelAssignment> {
    make_assignment(
        graph.node_count(),
        config.levels,
        point.delta,
        &mut stream(seed, Stream::Assignment),
    )
}

fn protocol_seed(seed: u64) -> u64 {
    mix(seed, 0x5EED, Stream::Protocol as u64)
}

fn dvb1_params(config: &ExperimentConfig, graph: &Graph) -> Dvb1Params {
    Dvb1Params::new(graph, config.levels, config.d_mode)
        .with_c1(config.c1, graph.node_count())
        .with_sensing(config.sensing)
}

fn full_run(
    config: &ExperimentConfig,
    graph: &Graph,
    assignment: &LevelAssignment,
    seed: u64,
    trace: Option<&mut dyn Write>,
) -> Result<TrialResult> {
    let seed = protocol_seed(seed);
    match config.algo {
        Algo::Dvb1 => {
            let params = dvb1_params(config, graph);
            let mut limits = params.default_limits();
            if let Some(cap) = config.max_phases {
                limits.max_phases = cap;
            }
            dvb1::run_with(graph, assignment, params, limits, seed, trace)
        }
        Algo::Dvb2 => {
            let params = Dvb2Params::with_c2(
                graph,
                config.levels,
                config.d_mode,
                config.id_mode,
                config.c2,
            );
            let mut limits = params.default_limits();
            if let Some(cap) = config.max_phases {
                limits.max_phases = cap;
            }
            dvb2::run_with(graph, assignment, params, limits, seed, trace)
        }
    }
}

fn run_trial_at(
    config: &ExperimentConfig,
    point: &SweepPoint,
    point_index: usize,
    trial: usize,
    cached: Option<&Graph>,
) -> Result<TrialSummary> {
    let seed = trial_seed(config.master_seed, point_index as u64, trial as u64);
    let built;
    let graph = match cached {
        Some(g) => g,
        None => {
            built = build(&config.spec(point), &mut stream(seed, Stream::Topology))?;
            &built
        }
    };
    let assignment = trial_assignment(config, point, graph, seed)?;
    if config.algo == Algo::Dvb1 && config.one_phase {
        let params = dvb1_params(config, graph);
        let out = dvb1::run_single_phase(graph, &assignment, params, protocol_seed(seed))?;
        return Ok(TrialSummary {
            success: out.success == Some(true),
            phases: 1,
            slots: out.metrics.slots_elapsed,
            beeps: out.metrics.total_beeps,
        });
    }
    let result = full_run(config, graph, &assignment, seed, None)?;
    Ok(TrialSummary {
        success: result.success == Some(true),
        phases: result.phases_to_consensus(),
        slots: result.metrics.slots_elapsed,
        beeps: result.metrics.total_beeps,
    })
}

fn aggregate(
    config: &ExperimentConfig,
    point: &SweepPoint,
    outcomes: &[Result<TrialSummary>],
) -> SweepRow {
    let ok: Vec<&TrialSummary> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let n = ok.len();
    let successes = ok.iter().filter(|t| t.success).count();
    let mean = |f: fn(&TrialSummary) -> u64| {
        if n == 0 {
            0.0
        } else {
            ok.iter().map(|t| f(t) as f64).sum::<f64>() / n as f64
        }
    };
    // phases count only runs that reached the majority consensus; with no
    // success at all, every completed run is averaged instead
    let phase_pool: Vec<&&TrialSummary> = if successes > 0 {
        ok.iter().filter(|t| t.success).collect()
    } else {
        ok.iter().collect()
    };
    let mean_phases = if phase_pool.is_empty() {
        0.0
    } else {
        phase_pool.iter().map(|t| t.phases as f64).sum::<f64>() / phase_pool.len() as f64
    };
    let (lo, hi) = wilson_interval(successes, n);
    SweepRow {
        algo: config.algo.to_string(),
        topology: point.topology.to_string(),
        n: point.nodes,
        k: config.levels,
        delta: point.delta,
        trials: outcomes.len(),
        success_rate: if n == 0 {
            0.0
        } else {
            successes as f64 / n as f64
        },
        mean_phases,
        mean_slots: mean(|t| t.slots),
        mean_beeps: mean(|t| t.beeps),
        ci95_lo: lo,
        ci95_hi: hi,
        errors: outcomes.len() - n,
    }
}

/// Runs every point of `config`; per-trial failures land in `errors`.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let points = config.points();
    let graphs: Vec<Option<Graph>> = points
        .iter()
        .map(|p| {
            let spec = config.spec(p);
            // a deterministic spec ignores the rng, so one build serves all trials
            spec.is_deterministic()
                .then(|| build(&spec, &mut stream(0, Stream::Topology)).ok())
                .flatten()
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..config.trials).map(move |t| (p, t)))
        .collect();
    let work = || -> Vec<Result<TrialSummary>> {
        jobs.par_iter()
            .map(|&(p, t)| run_trial_at(config, &points[p], p, t, graphs[p].as_ref()))
            .collect()
    };
    let outcomes = match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    Ok(points
        .iter()
        .zip(outcomes.chunks(config.trials))
        .map(|(p, chunk)| aggregate(config, p, chunk))
        .collect())
}

/// `x` rounded to `digits` significant digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    format_sig(x, digits).parse().unwrap_or(x)
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    let digits = digits.max(1) as i32;
    if (-5..digits).contains(&exp) {
        let decimals = (digits - 1 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // rounding can carry into a new digit (9.999995 → 10.00000)
        trim_zeros(&s)
    } else {
        let s = format!("{:.*e}", (digits - 1) as usize, x);
        let (mantissa, e) = s.split_once('e').unwrap();
        format!("{}e{}", trim_zeros(mantissa), e)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// Writes `rows` to `out` in `format`.
pub fn write_rows<W: Write>(rows: &[SweepRow], format: OutputFormat, out: W) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(CSV_HEADER)?;
            for r in rows {
                let f = |x: f64| format_sig(x, 6);
                w.write_record([
                    r.algo.clone(),
                    r.topology.clone(),
                    r.n.to_string(),
                    r.k.to_string(),
                    f(r.delta),
                    r.trials.to_string(),
                    f(r.success_rate),
                    f(r.mean_phases),
                    f(r.mean_slots),
                    f(r.mean_beeps),
                    f(r.ci95_lo),
                    f(r.ci95_hi),
                    r.errors.to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::Csv(e.into()))?;
        }
        OutputFormat::Json => {
            let rounded: Vec<SweepRow> = rows.iter().map(SweepRow::rounded).collect();
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &rounded)?;
            writeln!(out).map_err(|e| Error::Csv(e.into()))?;
        }
    }
    Ok(())
}

/// Writes `rows` to `path`.
pub fn emit(rows: &[SweepRow], format: OutputFormat, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = std::io::BufWriter::new(file);
    write_rows(rows, format, &mut buf).map_err(|e| match e {
        Error::Csv(c) if c.is_io_error() => Error::io(path, std::io::Error::other(c.to_string())),
        other => other,
    })?;
    buf.flush().map_err(|e| Error::io(path, e))
}

/// Reads rows written by [`emit`].
pub fn read_rows(path: &Path, format: OutputFormat) -> Result<Vec<SweepRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        OutputFormat::Csv => {
            let mut r = csv::Reader::from_reader(file);
            Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
        }
        OutputFormat::Json => Ok(serde_json::from_reader(std::io::BufReader::new(file))?),
    }
}
