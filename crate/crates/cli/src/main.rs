use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use beepvote::analysis::{
    default_r_max, lower_bound_closed, lower_bound_two_event, markov_success,
    required_majority_ratio, rounds_until_all_dead, AliveState,
};
use beepvote::harness::{
    emit, make_assignment, round_sig, run_sweep, run_trial_detail, write_rows, ExperimentConfig,
    OutputFormat,
};
use beepvote::rng::{stream, trial_rng, Stream};
use beepvote::topology::{build, spots};
use beepvote::{LevelAssignment, TopologyKind};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "beepvote",
    version,
    about = "Distributed plurality voting in the beeping model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single trial and describe it
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Trial index within the first sweep point
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Write a per-slot log here
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
    },
    /// Run a seeded sweep and write one row per point
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Exact one-phase success probabilities on complete graphs
    Markov {
        #[command(flatten)]
        table: TableArgs,
        /// Per-round survival probability
        #[arg(long, default_value_t = 0.5)]
        survival: f64,
    },
    /// Lower-bound tables for one phase on complete graphs
    Bounds {
        #[command(flatten)]
        table: TableArgs,
        /// Target failure probability for the round count and ratio columns
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
    },
    /// Print the monochrome connected components of an assignment
    Spots {
        #[arg(long, default_value = "mesh2d")]
        topology: TopologyKind,
        #[arg(long, default_value_t = 16)]
        nodes: usize,
        #[arg(long, default_value_t = 2)]
        levels: usize,
        /// Majority fraction for a random assignment
        #[arg(long, default_value_t = 0.7)]
        delta: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Explicit level per node, comma separated (overrides --delta)
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
    },
}

/// Experiment settings; each flag overrides the config file.
#[derive(Args)]
struct ExperimentArgs {
    /// Flat `key = value` config file
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// dvb1 or dvb2
    #[arg(long)]
    algo: Option<String>,
    /// Comma-separated list of complete, mesh2d, erdos_renyi
    #[arg(long)]
    topology: Option<String>,
    /// Comma-separated node counts
    #[arg(long)]
    nodes: Option<String>,
    #[arg(long)]
    levels: Option<String>,
    /// Comma-separated majority fractions
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    /// Master seed
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    c1: Option<String>,
    #[arg(long)]
    c2: Option<String>,
    /// exact or upper_bound_n
    #[arg(long)]
    d_mode: Option<String>,
    /// random or preassigned
    #[arg(long)]
    id_mode: Option<String>,
    /// deaf or duplex
    #[arg(long)]
    sensing: Option<String>,
    #[arg(long)]
    max_phases: Option<String>,
    /// Score a single DVB1 phase per trial
    #[arg(long)]
    one_phase: bool,
    /// Erdős–Rényi edge probability
    #[arg(long)]
    er_probability: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    /// csv or json
    #[arg(long)]
    format: Option<String>,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)?,
            None => ExperimentConfig::default(),
        };
        let overrides = [
            ("algo", &self.algo),
            ("topology", &self.topology),
            ("nodes", &self.nodes),
            ("levels", &self.levels),
            ("delta", &self.delta),
            ("trials", &self.trials),
            ("master_seed", &self.seed),
            ("c1", &self.c1),
            ("c2", &self.c2),
            ("d_mode", &self.d_mode),
            ("id_mode", &self.id_mode),
            ("sensing", &self.sensing),
            ("max_phases", &self.max_phases),
            ("er_probability", &self.er_probability),
            ("workers", &self.workers),
            ("format", &self.format),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v)
                    .with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
        }
        if self.one_phase {
            cfg.one_phase = true;
        }
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TableArgs {
    #[arg(long, value_delimiter = ',', default_value = "100")]
    nodes: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    levels: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.6,0.7,0.8,0.9")]
    delta: Vec<f64>,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

impl TableArgs {
    /// Level counts for every `(n, δ)` pair.
    fn points(&self) -> Result<Vec<(usize, f64, Vec<usize>)>> {
        let mut points = Vec::new();
        for &n in &self.nodes {
            for &delta in &self.delta {
                let a = make_assignment(n, self.levels, delta, &mut trial_rng(0))
                    .with_context(|| format!("n = {n}, delta = {delta}"))?;
                points.push((n, delta, a.counts().to_vec()));
            }
        }
        Ok(points)
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("beepvote: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { exp, trial, trace } => run(&exp, trial, trace.as_deref()),
        Command::Sweep { exp } => sweep(&exp),
        Command::Markov { table, survival } => markov(&table, survival),
        Command::Bounds { table, epsilon } => bounds(&table, epsilon),
        Command::Spots {
            topology,
            nodes,
            levels,
            delta,
            seed,
            values,
        } => print_spots(topology, nodes, levels, delta, seed, values),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn counts_of(values: &[beepvote::Level], levels: usize) -> Vec<usize> {
    let mut counts = vec![0; levels];
    for v in values {
        counts[v.index()] += 1;
    }
    counts
}

#[derive(Serialize)]
struct RunReport<'a> {
    algo: String,
    topology: String,
    n: usize,
    edges: usize,
    diameter: usize,
    initial_counts: Vec<usize>,
    final_counts: Vec<usize>,
    result: &'a beepvote::TrialResult,
}

fn run(exp: &ExperimentArgs, trial: usize, trace: Option<&Path>) -> Result<()> {
    let cfg = exp.config()?;
    let detail = match trace {
        Some(path) => {
            let file =
                File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
            let mut w = BufWriter::new(file);
            let d = run_trial_detail(&cfg, 0, trial, Some(&mut w))?;
            w.flush()
                .with_context(|| format!("writing {}", path.display()))?;
            d
        }
        None => run_trial_detail(&cfg, 0, trial, None)?,
    };
    let point = cfg.points()[0];
    let result = &detail.result;
    let report = RunReport {
        algo: cfg.algo.to_string(),
        topology: point.topology.to_string(),
        n: detail.graph.node_count(),
        edges: detail.graph.edge_count(),
        diameter: detail.graph.diameter(),
        initial_counts: detail.initial.counts().to_vec(),
        final_counts: counts_of(&result.final_values, cfg.levels),
        result,
    };
    let mut out = output(cfg.output.as_deref())?;
    match cfg.format {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut out, &report)?;
            writeln!(out)?;
        }
        OutputFormat::Csv => {
            let m = result.metrics;
            let opt = |x: Option<u64>| x.map_or("-".to_string(), |v| v.to_string());
            writeln!(
                out,
                "{} on {} with {} nodes, {} edges, diameter {}",
                report.algo, report.topology, report.n, report.edges, report.diameter
            )?;
            writeln!(out, "initial counts: {}", join(&report.initial_counts))?;
            writeln!(out, "final counts:   {}", join(&report.final_counts))?;
            writeln!(
                out,
                "status {:?}, success {}, consensus after phase {}",
                result.status,
                result.success.map_or("-".to_string(), |s| s.to_string()),
                opt(result.consensus_phase)
            )?;
            writeln!(
                out,
                "phases {}, slots {}, beeps {}",
                m.phases_elapsed, m.slots_elapsed, m.total_beeps
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn sweep(exp: &ExperimentArgs) -> Result<()> {
    let cfg = exp.config()?;
    let rows = run_sweep(&cfg)?;
    match &cfg.output {
        Some(path) => emit(&rows, cfg.format, path)?,
        None => {
            let mut out = io::stdout().lock();
            write_rows(&rows, cfg.format, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn write_table<T: Serialize>(rows: &[T], format: OutputFormat, path: Option<&Path>) -> Result<()> {
    let mut out = output(path)?;
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut out, rows)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MarkovRow {
    n: usize,
    k: usize,
    delta: f64,
    counts: String,
    majority_win: f64,
    other_win: f64,
    draw: f64,
}

fn markov(table: &TableArgs, survival: f64) -> Result<()> {
    let mut rows = Vec::new();
    for (n, delta, counts) in table.points()? {
        let r = markov_success(&AliveState::new(counts.clone()), survival)?;
        let m = counts
            .iter()
            .enumerate()
            .max_by_key(|&(_, c)| c)
            .map_or(0, |(i, _)| i);
        let win = r.win_prob[m];
        rows.push(MarkovRow {
            n,
            k: table.levels,
            delta,
            counts: join(&counts),
            majority_win: round_sig(win, 6),
            other_win: round_sig(r.win_prob.iter().sum::<f64>() - win, 6),
            draw: round_sig(r.draw_prob, 6),
        });
    }
    write_table(&rows, table.format, table.out.as_deref())
}

#[derive(Serialize)]
struct BoundsRow {
    n: usize,
    k: usize,
    delta: f64,
    n_m: usize,
    n_second: usize,
    two_event: f64,
    closed_form: Option<f64>,
    ratio: Option<f64>,
    required_ratio: f64,
    rounds_all_dead: usize,
}

fn bounds(table: &TableArgs, epsilon: f64) -> Result<()> {
    let required = required_majority_ratio(table.levels, epsilon)?;
    let mut rows = Vec::new();
    for (n, delta, counts) in table.points()? {
        let mut sorted = counts.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let (n_m, n_second) = (sorted[0], sorted.get(1).copied().unwrap_or(0));
        let two_event = lower_bound_two_event(&counts, 0.5, default_r_max(n))?;
        // the closed form needs a runner-up; it is left blank otherwise
        let closed = lower_bound_closed(n_m, n_second, table.levels).ok();
        rows.push(BoundsRow {
            n,
            k: table.levels,
            delta,
            n_m,
            n_second,
            two_event: round_sig(two_event, 6),
            closed_form: closed.map(|x| round_sig(x, 6)),
            ratio: (n_second > 0).then(|| round_sig(n_m as f64 / n_second as f64, 6)),
            required_ratio: round_sig(required, 6),
            rounds_all_dead: rounds_until_all_dead(n, epsilon)?,
        });
    }
    write_table(&rows, table.format, table.out.as_deref())
}

fn print_spots(
    topology: TopologyKind,
    nodes: usize,
    levels: usize,
    delta: f64,
    seed: u64,
    values: Option<Vec<usize>>,
) -> Result<()> {
    let graph = build(
        &topology.with_nodes(nodes),
        &mut stream(seed, Stream::Topology),
    )?;
    let n = graph.node_count();
    let assignment = match values {
        Some(v) => {
            if v.len() != n {
                bail!(
                    "--values has {} entries but the graph has {n} nodes",
                    v.len()
                );
            }
            LevelAssignment::from_indices(&v, levels)?
        }
        None => make_assignment(n, levels, delta, &mut stream(seed, Stream::Assignment))?,
    };
    let parts = spots(&graph, &assignment)?;
    let mut out = io::stdout().lock();
    writeln!(out, "{topology} with {n} nodes: {} spots", parts.len())?;
    writeln!(
        out,
        "levels: {}",
        join(
            &assignment
                .values()
                .iter()
                .map(|l| l.index())
                .collect::<Vec<_>>()
        )
    )?;
    for (i, part) in parts.iter().enumerate() {
        let level = assignment.values()[part[0]].index();
        writeln!(
            out,
            "spot {i}: level {level}, size {}: {}",
            part.len(),
            join(part)
        )?;
    }
    out.flush()?;
    Ok(())
}
