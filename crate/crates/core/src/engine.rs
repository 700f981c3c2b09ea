//! Slot-synchronous beep channel and the trial driver.
//!
//! In every slot each node either beeps or listens. A listener hears a
//! single undifferentiated beep when at least one neighbour beeps; it cannot
//! tell how many did. What a *beeping* node observes is governed by
//! [`BeeperSensing`].
//!
//! The channel works sparsely: a slot costs time proportional to the number
//! of beepers and their degrees, and runs of slots in which nobody beeps are
//! accounted for with [`Channel::skip_silent`] without touching any node.
//! Protocols in this crate only react to hearing a beep, so a silent slot
//! never changes their state.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{trial_rng, TrialRng};
use crate::topology::{Graph, Level, LevelAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotAction {
    Beep,
    Listen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SlotObservation {
    pub heard: bool,
}

/// What a node observes in a slot where it beeps itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeeperSensing {
    /// A beeping node hears nothing.
    #[default]
    Deaf,
    /// A beeping node detects whether at least one neighbour beeped in the
    /// same slot (carrier sensing while transmitting).
    Duplex,
}

impl std::str::FromStr for BeeperSensing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deaf" => Ok(BeeperSensing::Deaf),
            "duplex" => Ok(BeeperSensing::Duplex),
            other => Err(Error::Config(format!("unknown sensing mode `{other}`"))),
        }
    }
}

impl fmt::Display for BeeperSensing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BeeperSensing::Deaf => "deaf",
            BeeperSensing::Duplex => "duplex",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub slots_elapsed: u64,
    pub total_beeps: u64,
    pub phases_elapsed: u64,
}

/// The shared medium for one trial.
///
/// Optional trace output writes one line per node that beeps or hears in a
/// slot: `<slot>\t<node>\t<beep|listen>\t<heard 0|1>`, slots 0-based and
/// nodes 1-based. Listeners that hear nothing are omitted.
pub struct Channel<'a> {
    graph: &'a Graph,
    sensing: BeeperSensing,
    metrics: TrialMetrics,
    stamp: u64,
    beep_mark: Vec<u64>,
    hear_mark: Vec<u64>,
    hearers: Vec<usize>,
    trace: Option<&'a mut dyn Write>,
    trace_error: Option<std::io::Error>,
}

impl fmt::Debug for Channel<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Channel")
            .field("nodes", &self.graph.node_count())
            .field("sensing", &self.sensing)
            .field("metrics", &self.metrics)
            .field("tracing", &self.trace.is_some())
            .finish()
    }
}

impl<'a> Channel<'a> {
    pub fn new(graph: &'a Graph) -> Self {
        let n = graph.node_count();
        Channel {
            graph,
            sensing: BeeperSensing::Deaf,
            metrics: TrialMetrics::default(),
            stamp: 0,
            beep_mark: vec![0; n],
            hear_mark: vec![0; n],
            hearers: Vec::new(),
            trace: None,
            trace_error: None,
        }
    }

    pub fn with_sensing(mut self, sensing: BeeperSensing) -> Self {
        self.sensing = sensing;
        self
    }

    pub fn with_trace(mut self, out: &'a mut dyn Write) -> Self {
        self.trace = Some(out);
        self
    }

    pub fn graph(&self) -> &'a Graph {
        self.graph
    }

    pub fn sensing(&self) -> BeeperSensing {
        self.sensing
    }

    pub fn metrics(&self) -> TrialMetrics {
        self.metrics
    }

    /// Index of the next slot.
    pub fn slot(&self) -> u64 {
        self.metrics.slots_elapsed
    }

    pub(crate) fn record_phase(&mut self) {
        self.metrics.phases_elapsed += 1;
    }

    /// Executes one slot given every node's action.
    pub fn step(&mut self, actions: &[SlotAction]) -> Result<Vec<SlotObservation>> {
        let n = self.graph.node_count();
        if actions.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: actions.len(),
            });
        }
        let beepers: Vec<usize> = actions
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == SlotAction::Beep)
            .map(|(i, _)| i)
            .collect();
        let mut obs = vec![SlotObservation::default(); n];
        for &i in self.step_beepers(&beepers) {
            obs[i].heard = true;
        }
        Ok(obs)
    }

    /// Executes one slot in which exactly `beepers` beep (each listed once)
    /// and everyone else listens. Returns the nodes that hear a beep.
    pub fn step_beepers(&mut self, beepers: &[usize]) -> &[usize] {
        self.stamp += 1;
        let stamp = self.stamp;
        for &b in beepers {
            debug_assert_ne!(self.beep_mark[b], stamp, "node {b} listed twice");
            self.beep_mark[b] = stamp;
        }
        self.hearers.clear();
        let duplex = self.sensing == BeeperSensing::Duplex;
        for &b in beepers {
            for &v in self.graph.neighbors(b) {
                if self.hear_mark[v] != stamp {
                    self.hear_mark[v] = stamp;
                    if duplex || self.beep_mark[v] != stamp {
                        self.hearers.push(v);
                    }
                }
            }
        }
        if self.trace.is_some() {
            self.write_trace(beepers);
        }
        self.metrics.slots_elapsed += 1;
        self.metrics.total_beeps += beepers.len() as u64;
        &self.hearers
    }

    /// Accounts for `slots` slots in which no node beeps.
    pub fn skip_silent(&mut self, slots: u64) {
        self.metrics.slots_elapsed += slots;
    }

    /// Accounts for `slots` slots in which every node beeps. Nobody listens,
    /// so there is nothing to observe.
    pub fn beep_all(&mut self, slots: u64) {
        if self.trace.is_some() {
            let all: Vec<usize> = (0..self.graph.node_count()).collect();
            for _ in 0..slots {
                self.step_beepers(&all);
            }
            return;
        }
        self.metrics.slots_elapsed += slots;
        self.metrics.total_beeps += slots * self.graph.node_count() as u64;
    }

    fn write_trace(&mut self, beepers: &[usize]) {
        let slot = self.metrics.slots_elapsed;
        let stamp = self.stamp;
        let mut lines: Vec<(usize, bool, bool)> = beepers
            .iter()
            .map(|&b| {
                (
                    b,
                    true,
                    self.hear_mark[b] == stamp && self.sensing == BeeperSensing::Duplex,
                )
            })
            .chain(
                self.hearers
                    .iter()
                    .filter(|&&h| self.beep_mark[h] != stamp)
                    .map(|&h| (h, false, true)),
            )
            .collect();
        lines.sort_unstable();
        let Some(out) = self.trace.as_mut() else {
            return;
        };
        if self.trace_error.is_some() {
            return;
        }
        for (node, beeped, heard) in lines {
            let action = if beeped { "beep" } else { "listen" };
            if let Err(e) = writeln!(out, "{slot}\t{}\t{action}\t{}", node + 1, heard as u8) {
                self.trace_error = Some(e);
                return;
            }
        }
    }

    /// Flushes the trace and surfaces the first write error, if any.
    pub fn finish(&mut self) -> Result<()> {
        if let Some(e) = self.trace_error.take() {
            return Err(Error::Trace(e));
        }
        if let Some(out) = self.trace.as_mut() {
            out.flush().map_err(Error::Trace)?;
        }
        Ok(())
    }
}

/// A network-wide protocol driven phase by phase.
///
/// Implementations keep per-node state and let each node decide only from
/// its own state, its observations and the global constants (`K` and the
/// bounds on `N` and `D`). All nodes share the channel's slot counter.
pub trait Protocol {
    /// One-off work before the first phase (ID selection, discovery, ...).
    fn setup(&mut self, _channel: &mut Channel<'_>, _rng: &mut TrialRng) -> Result<()> {
        Ok(())
    }

    /// Runs one phase, including a termination check when one is due.
    fn run_phase(&mut self, channel: &mut Channel<'_>, rng: &mut TrialRng) -> Result<()>;

    /// Whether every node has decided to stop.
    fn is_finished(&self) -> bool;

    /// Current value of every node.
    fn values(&self) -> Vec<Level>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLimits {
    pub slot_budget: u64,
    pub max_phases: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// All nodes stopped after a successful termination check.
    Terminated,
    MaxPhasesExceeded,
    SlotBudgetExhausted,
}

impl RunStatus {
    pub fn is_terminated(self) -> bool {
        self == RunStatus::Terminated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub final_values: Vec<Level>,
    pub status: RunStatus,
    /// `None` when the initial values have no strict plurality.
    pub success: Option<bool>,
    /// First phase after which every node held the same value (0 when the
    /// input was already unanimous).
    pub consensus_phase: Option<u64>,
    pub metrics: TrialMetrics,
}

impl TrialResult {
    /// Phases until consensus, or all phases run when none was reached.
    pub fn phases_to_consensus(&self) -> u64 {
        self.consensus_phase.unwrap_or(self.metrics.phases_elapsed)
    }
}

pub(crate) fn unanimous(values: &[Level]) -> Option<Level> {
    let first = *values.first()?;
    values.iter().all(|&v| v == first).then_some(first)
}

/// Per-trial channel options.
#[derive(Default)]
pub struct RunOptions<'a> {
    pub sensing: BeeperSensing,
    pub trace: Option<&'a mut dyn Write>,
}

impl fmt::Debug for RunOptions<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RunOptions")
            .field("sensing", &self.sensing)
            .field("trace", &self.trace.is_some())
            .finish()
    }
}

/// Drives `protocol` phase by phase until every node has stopped or a limit
/// is hit. The whole trial is a pure function of its inputs and `seed`.
pub fn run<P: Protocol>(
    graph: &Graph,
    initial: &LevelAssignment,
    mut protocol: P,
    limits: RunLimits,
    seed: u64,
    options: RunOptions<'_>,
) -> Result<TrialResult> {
    if initial.len() != graph.node_count() {
        return Err(Error::LengthMismatch {
            expected: graph.node_count(),
            got: initial.len(),
        });
    }
    if limits.slot_budget == 0 || limits.max_phases == 0 {
        return Err(Error::InvalidParameter(
            "run limits must be positive".into(),
        ));
    }
    let mut rng = trial_rng(seed);
    let mut channel = Channel::new(graph).with_sensing(options.sensing);
    if let Some(out) = options.trace {
        channel = channel.with_trace(out);
    }

    let mut consensus_phase = unanimous(initial.values()).map(|_| 0);
    protocol.setup(&mut channel, &mut rng)?;
    let status = loop {
        protocol.run_phase(&mut channel, &mut rng)?;
        channel.record_phase();
        let phases = channel.metrics().phases_elapsed;
        if consensus_phase.is_none() && unanimous(&protocol.values()).is_some() {
            consensus_phase = Some(phases);
        }
        if protocol.is_finished() {
            break RunStatus::Terminated;
        }
        if phases >= limits.max_phases {
            break RunStatus::MaxPhasesExceeded;
        }
        if channel.metrics().slots_elapsed >= limits.slot_budget {
            break RunStatus::SlotBudgetExhausted;
        }
    };
    channel.finish()?;

    let final_values = protocol.values();
    let success = initial
        .plurality()
        .map(|target| status.is_terminated() && final_values.iter().all(|&v| v == target));
    Ok(TrialResult {
        final_values,
        status,
        success,
        consensus_phase,
        metrics: channel.metrics(),
    })
}
