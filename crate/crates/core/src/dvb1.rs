//! DVB1: corrosion of spots plus beep-wave termination detection.
//!
//! A phase is `T` corrosion rounds of `K` slots each. In slot `k` every
//! node that holds `l_k` and is still alive beeps, then dies with
//! probability `1 − p`. At the end of a round a node that heard beeps in
//! exactly one slot `m` adopts `l_m`. Every `check_interval` phases the
//! nodes run [`termination_detection`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    self, unanimous, BeeperSensing, Channel, Protocol, RunLimits, RunOptions, TrialMetrics,
    TrialResult,
};
use crate::error::{Error, Result};
use crate::rng::{trial_rng, TrialRng};
use crate::topology::{DiameterMode, Graph, Level, LevelAssignment};

pub const DEFAULT_C1: f64 = 20.0;
pub const DEFAULT_SURVIVAL: f64 = 0.5;

/// `T = ⌈c1·log₂N⌉`, at least one round.
pub fn rounds_per_phase(nodes: usize, c1: f64) -> usize {
    let t = (c1 * (nodes.max(1) as f64).log2()).ceil();
    (t as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dvb1Params {
    pub levels: usize,
    pub c1: f64,
    /// Corrosion rounds per phase (`T`).
    pub rounds: usize,
    /// Probability that an alive node stays alive after beeping (`p`).
    pub survival: f64,
    /// Diameter the nodes schedule with (exact `D` or `N`).
    pub d_sched: usize,
    /// Phases between termination checks.
    pub check_interval: usize,
    pub sensing: BeeperSensing,
}

impl Dvb1Params {
    /// Defaults for `graph`: `c1 = 20`, `p = 1/2`, checks every `D_sched`
    /// phases, duplex sensing.
    pub fn new(graph: &Graph, levels: usize, d_mode: DiameterMode) -> Self {
        let d_sched = graph.scheduling_diameter(d_mode);
        Dvb1Params {
            levels,
            c1: DEFAULT_C1,
            rounds: rounds_per_phase(graph.node_count(), DEFAULT_C1),
            survival: DEFAULT_SURVIVAL,
            d_sched,
            check_interval: d_sched,
            sensing: BeeperSensing::Duplex,
        }
    }

    /// Replaces `c1` and recomputes `T` for `nodes`.
    pub fn with_c1(mut self, c1: f64, nodes: usize) -> Self {
        self.c1 = c1;
        self.rounds = rounds_per_phase(nodes, c1);
        self
    }

    pub fn with_sensing(mut self, sensing: BeeperSensing) -> Self {
        self.sensing = sensing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if self.rounds < 1 {
            return Err(Error::InvalidParameter("T must be at least 1".into()));
        }
        if !(self.survival > 0.0 && self.survival < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "survival probability {} outside (0, 1)",
                self.survival
            )));
        }
        if self.check_interval < 1 || self.d_sched < 1 {
            return Err(Error::InvalidParameter(
                "check interval and scheduling diameter must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Slots in one corrosion phase, `T·K`.
    pub fn phase_slots(&self) -> u64 {
        (self.rounds * self.levels) as u64
    }

    /// Slots of a termination check that runs all `K − 1` periods.
    pub fn full_check_slots(&self) -> u64 {
        (self.levels.saturating_sub(1) * (self.d_sched + 1)) as u64
    }

    pub fn default_max_phases(&self) -> u64 {
        50 * self.d_sched as u64
    }

    /// Slots of `phases` phases including every termination check due.
    pub fn slots_for_phases(&self, phases: u64) -> u64 {
        let checks = phases / self.check_interval as u64;
        phases * self.phase_slots() + checks * self.full_check_slots()
    }

    /// Phase cap `50·D_sched`; the slot budget is ten times the cost of that
    /// many phases, so it only catches runaway schedules.
    pub fn default_limits(&self) -> RunLimits {
        let max_phases = self.default_max_phases();
        RunLimits {
            slot_budget: 10 * self.slots_for_phases(max_phases).max(1),
            max_phases,
        }
    }
}

/// Snapshot of one node's DVB1 state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dvb1NodeState {
    pub value: Level,
    pub allowed_to_beep: bool,
    pub hear_flags: Vec<bool>,
    pub terminated: bool,
    pub phase_counter: usize,
}

/// DVB1 state of the whole network.
#[derive(Debug, Clone)]
pub struct Dvb1 {
    params: Dvb1Params,
    values: Vec<Level>,
    allowed: Vec<bool>,
    alive: usize,
    /// Row-major `node × level`.
    hear_flags: Vec<bool>,
    terminated: Vec<bool>,
    finished: bool,
    /// Phases since the last check; identical at every node.
    phase_counter: usize,
    beepers: Vec<usize>,
}

impl Dvb1 {
    pub fn new(graph: &Graph, assignment: &LevelAssignment, params: Dvb1Params) -> Result<Self> {
        params.validate()?;
        let n = graph.node_count();
        if assignment.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: assignment.len(),
            });
        }
        if assignment.levels() != params.levels {
            return Err(Error::InvalidParameter(format!(
                "assignment has {} levels, parameters {}",
                assignment.levels(),
                params.levels
            )));
        }
        Ok(Dvb1 {
            params,
            values: assignment.values().to_vec(),
            allowed: vec![true; n],
            alive: n,
            hear_flags: vec![false; n * params.levels],
            terminated: vec![false; n],
            finished: false,
            phase_counter: 0,
            beepers: Vec::with_capacity(n),
        })
    }

    pub fn params(&self) -> &Dvb1Params {
        &self.params
    }

    pub fn current_values(&self) -> &[Level] {
        &self.values
    }

    pub fn alive_count(&self) -> usize {
        self.alive
    }

    pub fn node_state(&self, node: usize) -> Dvb1NodeState {
        let k = self.params.levels;
        Dvb1NodeState {
            value: self.values[node],
            allowed_to_beep: self.allowed[node],
            hear_flags: self.hear_flags[node * k..(node + 1) * k].to_vec(),
            terminated: self.terminated[node],
            phase_counter: self.phase_counter,
        }
    }

    /// Makes every node alive again, as at the start of a phase.
    pub fn revive_all(&mut self) {
        self.allowed.fill(true);
        self.alive = self.allowed.len();
    }

    /// One corrosion round (`K` slots). `survives(node)` is asked right after
    /// `node` beeps; `false` kills it for the rest of the phase.
    pub fn corrosion_round_with(
        &mut self,
        channel: &mut Channel<'_>,
        survives: &mut dyn FnMut(usize) -> bool,
    ) {
        let k_levels = self.params.levels;
        self.hear_flags.fill(false);
        for k in 0..k_levels {
            let level = Level::new(k);
            self.beepers.clear();
            self.beepers.extend(
                (0..self.values.len()).filter(|&i| self.allowed[i] && self.values[i] == level),
            );
            if self.beepers.is_empty() {
                channel.skip_silent(1);
                continue;
            }
            for &h in channel.step_beepers(&self.beepers) {
                self.hear_flags[h * k_levels + k] = true;
            }
            for &b in &self.beepers {
                if !survives(b) {
                    self.allowed[b] = false;
                    self.alive -= 1;
                }
            }
        }
        for (i, flags) in self.hear_flags.chunks_exact(k_levels).enumerate() {
            let mut raised = flags.iter().enumerate().filter(|(_, &f)| f).map(|(m, _)| m);
            if let (Some(m), None) = (raised.next(), raised.next()) {
                self.values[i] = Level::new(m);
            }
        }
    }

    pub fn corrosion_round<R: Rng + ?Sized>(&mut self, channel: &mut Channel<'_>, rng: &mut R) {
        let death = 1.0 - self.params.survival;
        self.corrosion_round_with(channel, &mut |_| rng.random::<f64>() >= death);
    }

    /// A full corrosion phase: everyone revived, then `T` rounds. Once every
    /// node is dead the remaining rounds are silent and change nothing, so
    /// they are only counted.
    pub fn corrosion_phase<R: Rng + ?Sized>(&mut self, channel: &mut Channel<'_>, rng: &mut R) {
        self.revive_all();
        let rounds = self.params.rounds;
        for r in 0..rounds {
            if self.alive == 0 {
                channel.skip_silent(((rounds - r) * self.params.levels) as u64);
                self.hear_flags.fill(false);
                break;
            }
            self.corrosion_round(channel, rng);
        }
    }

    /// Runs a termination check on the current values and stores the flags.
    pub fn check_termination(&mut self, channel: &mut Channel<'_>) -> bool {
        self.terminated = termination_detection(
            channel,
            &self.values,
            self.params.levels,
            self.params.d_sched,
        );
        let done = self.terminated.iter().all(|&t| t);
        debug_assert!(
            done || self.terminated.iter().all(|&t| !t),
            "termination flags disagree"
        );
        done
    }
}

impl Protocol for Dvb1 {
    fn run_phase(&mut self, channel: &mut Channel<'_>, rng: &mut TrialRng) -> Result<()> {
        self.phase_counter += 1;
        self.corrosion_phase(channel, rng);
        if self.phase_counter == self.params.check_interval {
            self.phase_counter = 0;
            self.finished = self.check_termination(channel);
        }
        Ok(())
    }

    fn is_finished(&self) -> bool {
        self.finished
    }

    fn values(&self) -> Vec<Level> {
        self.values.clone()
    }
}

/// Beep-wave termination detection over `values`.
///
/// Up to `K − 1` periods of `d_sched + 1` slots. In the first slot of
/// period `k` the holders of `l_k` beep and any listener holding another
/// value learns that consensus is missing. During the `d_sched` relay slots
/// every node that knows beeps, and a node that hears a relay beep joins in
/// from the next slot. After a period in which anyone learned, everyone
/// stops checking. Returns each node's `terminated` flag; on a connected
/// graph with `d_sched ≥ D` the flags agree and are all `true` exactly when
/// all values are equal.
pub fn termination_detection(
    channel: &mut Channel<'_>,
    values: &[Level],
    levels: usize,
    d_sched: usize,
) -> Vec<bool> {
    let n = values.len();
    let mut terminated = vec![true; n];
    let mut informed = 0usize;
    let mut beepers = Vec::with_capacity(n);
    for k in 0..levels.saturating_sub(1) {
        let level = Level::new(k);
        beepers.clear();
        beepers.extend((0..n).filter(|&i| values[i] == level));
        if beepers.is_empty() {
            channel.skip_silent(1);
        } else {
            for &h in channel.step_beepers(&beepers) {
                // beepers only appear here under duplex sensing; they hold l_k
                if values[h] != level && terminated[h] {
                    terminated[h] = false;
                    informed += 1;
                }
            }
        }
        for d in 0..d_sched {
            let remaining = (d_sched - d) as u64;
            if informed == 0 {
                channel.skip_silent(remaining);
                break;
            }
            if informed == n {
                channel.beep_all(remaining);
                break;
            }
            beepers.clear();
            beepers.extend((0..n).filter(|&i| !terminated[i]));
            let mut newly = Vec::new();
            for &h in channel.step_beepers(&beepers) {
                if terminated[h] {
                    newly.push(h);
                }
            }
            for h in newly {
                terminated[h] = false;
                informed += 1;
            }
        }
        if informed > 0 {
            break;
        }
    }
    terminated
}

/// Runs DVB1 until unanimous termination or a limit.
pub fn run(
    graph: &Graph,
    assignment: &LevelAssignment,
    params: Dvb1Params,
    seed: u64,
    max_phases: Option<u64>,
) -> Result<TrialResult> {
    let mut limits = params.default_limits();
    if let Some(m) = max_phases {
        limits.max_phases = m;
    }
    run_with(graph, assignment, params, limits, seed, None)
}

pub fn run_with(
    graph: &Graph,
    assignment: &LevelAssignment,
    params: Dvb1Params,
    limits: RunLimits,
    seed: u64,
    trace: Option<&mut dyn std::io::Write>,
) -> Result<TrialResult> {
    let protocol = Dvb1::new(graph, assignment, params)?;
    engine::run(
        graph,
        assignment,
        protocol,
        limits,
        seed,
        RunOptions {
            sensing: params.sensing,
            trace,
        },
    )
}

/// Outcome of a single corrosion phase without termination detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseOutcome {
    pub final_values: Vec<Level>,
    /// All nodes hold the initial strict plurality (`None` without one).
    pub success: Option<bool>,
    pub unanimous: bool,
    pub all_dead: bool,
    pub metrics: TrialMetrics,
}

/// Runs exactly one corrosion phase from `assignment`.
pub fn run_single_phase(
    graph: &Graph,
    assignment: &LevelAssignment,
    params: Dvb1Params,
    seed: u64,
) -> Result<PhaseOutcome> {
    let mut protocol = Dvb1::new(graph, assignment, params)?;
    let mut rng = trial_rng(seed);
    let mut channel = Channel::new(graph).with_sensing(params.sensing);
    protocol.corrosion_phase(&mut channel, &mut rng);
    channel.record_phase();
    let final_values = protocol.values.clone();
    let unanimous = unanimous(&final_values);
    Ok(PhaseOutcome {
        success: assignment
            .plurality()
            .map(|target| unanimous == Some(target)),
        unanimous: unanimous.is_some(),
        all_dead: protocol.alive == 0,
        final_values,
        metrics: channel.metrics(),
    })
}
