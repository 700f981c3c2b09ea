//! DVB2: pairwise DMVR interactions encoded in beeps.
//!
//! Nodes pick IDs in `1..=Y`, learn their neighbours' IDs in `Y` slots, and
//! then run phases of
//!
//! | block        | slots  | who beeps                                          |
//! |--------------|--------|----------------------------------------------------|
//! | invitation   | `Y²`   | inviter `j₁` in slot `(j₁, j₂)` for its target `j₂` |
//! | acceptance   | `Y`    | invitee in the slot of its chosen inviter          |
//! | transmission | `2·Y·K`| accepted inviter: value-set bits, then value       |
//! | return       | `2·Y·K`| invitee: inviter's updated set and value           |
//!
//! followed by the shared termination check every `check_interval` phases.
//! Most of these slots are silent; only slots in which somebody beeps are
//! simulated node by node.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dvb1::termination_detection;
use crate::engine::{self, BeeperSensing, Channel, Protocol, RunLimits, RunOptions, TrialResult};
use crate::error::{Error, Result};
use crate::rng::TrialRng;
use crate::topology::{DiameterMode, Graph, Level, LevelAssignment};

pub const DEFAULT_C2: f64 = 20.0;
pub const DEFAULT_INVITE_PROBABILITY: f64 = 0.5;

/// A subset of `{l_1, …, l_64}`.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelSet(u64);

impl LevelSet {
    pub const CAPACITY: usize = 64;
    pub const EMPTY: LevelSet = LevelSet(0);

    pub fn singleton(level: Level) -> Self {
        LevelSet(1 << level.index())
    }

    pub fn contains(self, level: Level) -> bool {
        self.0 >> level.index() & 1 == 1
    }

    pub fn insert(&mut self, level: Level) {
        self.0 |= 1 << level.index();
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: Self) -> Self {
        LevelSet(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        LevelSet(self.0 & other.0)
    }

    /// The element of a singleton.
    pub fn only(self) -> Option<Level> {
        (self.len() == 1).then(|| Level::new(self.0.trailing_zeros() as usize))
    }

    pub fn iter(self) -> impl Iterator<Item = Level> {
        (0..Self::CAPACITY)
            .filter(move |&i| self.0 >> i & 1 == 1)
            .map(Level::new)
    }
}

impl FromIterator<Level> for LevelSet {
    fn from_iter<I: IntoIterator<Item = Level>>(iter: I) -> Self {
        let mut s = LevelSet::EMPTY;
        for l in iter {
            s.insert(l);
        }
        s
    }
}

impl fmt::Debug for LevelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set()
            .entries(self.iter().map(|l| l.to_string()))
            .finish()
    }
}

/// Result of one DMVR interaction between party 1 and party 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmvrOutcome {
    pub set1: LevelSet,
    pub set2: LevelSet,
    pub value1: Level,
    pub value2: Level,
}

/// DMVR rules with the speed-up coin given explicitly: `coin = true` copies
/// party 2's old value to party 1, `false` the other way round.
pub fn dmvr_with_coin(
    set1: LevelSet,
    set2: LevelSet,
    value1: Level,
    value2: Level,
    coin: bool,
) -> DmvrOutcome {
    // consolidation
    let (new1, new2) = if set1.len() <= set2.len() {
        (set1.union(set2), set1.intersection(set2))
    } else {
        (set1.intersection(set2), set1.union(set2))
    };
    let (mut v1, mut v2) = (value1, value2);
    // dissemination
    if let Some(l) = new1.only() {
        v1 = l;
    }
    if let Some(l) = new2.only() {
        v2 = l;
    }
    // speed-up
    if new1.len() > 1 && new2.len() > 1 {
        if coin {
            v1 = value2;
        } else {
            v2 = value1;
        }
    }
    DmvrOutcome {
        set1: new1,
        set2: new2,
        value1: v1,
        value2: v2,
    }
}

/// DMVR rules; the speed-up coin is drawn only when the rule applies.
pub fn dmvr<R: Rng + ?Sized>(
    set1: LevelSet,
    set2: LevelSet,
    value1: Level,
    value2: Level,
    rng: &mut R,
) -> DmvrOutcome {
    let speed_up = {
        let (a, b) = if set1.len() <= set2.len() {
            (set1.union(set2), set1.intersection(set2))
        } else {
            (set1.intersection(set2), set1.union(set2))
        };
        a.len() > 1 && b.len() > 1
    };
    let coin = speed_up && rng.random::<f64>() < 0.5;
    dmvr_with_coin(set1, set2, value1, value2, coin)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdMode {
    /// Each node draws its ID uniformly from `1..=Y`.
    #[default]
    RandomIds,
    /// IDs fixed in advance, distinct within every closed neighbourhood.
    PreassignedUniqueIds,
}

impl std::str::FromStr for IdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "random_ids" => Ok(IdMode::RandomIds),
            "preassigned" | "unique" | "preassigned_unique_ids" => Ok(IdMode::PreassignedUniqueIds),
            other => Err(Error::Config(format!("unknown id_mode `{other}`"))),
        }
    }
}

impl fmt::Display for IdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IdMode::RandomIds => "random",
            IdMode::PreassignedUniqueIds => "preassigned",
        })
    }
}

/// `Y = max(⌈c2·Δ·log₂Δ⌉, Δ + 1)`.
pub fn id_range(c2: f64, max_degree: usize) -> usize {
    let floor = max_degree + 1;
    if max_degree < 2 {
        return floor;
    }
    let d = max_degree as f64;
    ((c2 * d * d.log2()).ceil() as usize).max(floor)
}

/// Greedy IDs such that no two nodes within distance two share one.
pub fn distance_two_ids(graph: &Graph) -> Vec<u32> {
    let n = graph.node_count();
    let mut ids = vec![0u32; n];
    let mut seen = vec![usize::MAX; n + 2];
    for u in 0..n {
        for &v in graph.neighbors(u) {
            if ids[v] != 0 {
                seen[ids[v] as usize] = u;
            }
            for &w in graph.neighbors(v) {
                if ids[w] != 0 {
                    seen[ids[w] as usize] = u;
                }
            }
        }
        ids[u] = (1..).find(|&c| seen[c] != u).unwrap() as u32;
    }
    ids
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dvb2Params {
    pub levels: usize,
    pub c2: f64,
    /// ID range `Y`.
    pub id_range: usize,
    pub invite_probability: f64,
    pub d_sched: usize,
    pub check_interval: usize,
    pub id_mode: IdMode,
}

impl Dvb2Params {
    /// Defaults for `graph`. With preassigned IDs, `Y` grows if the greedy
    /// distance-two assignment needs more IDs than the formula gives.
    pub fn new(graph: &Graph, levels: usize, d_mode: DiameterMode, id_mode: IdMode) -> Self {
        Self::with_c2(graph, levels, d_mode, id_mode, DEFAULT_C2)
    }

    pub fn with_c2(
        graph: &Graph,
        levels: usize,
        d_mode: DiameterMode,
        id_mode: IdMode,
        c2: f64,
    ) -> Self {
        let mut y = id_range(c2, graph.max_degree());
        if id_mode == IdMode::PreassignedUniqueIds {
            let needed = distance_two_ids(graph).into_iter().max().unwrap_or(1) as usize;
            y = y.max(needed);
        }
        let d_sched = graph.scheduling_diameter(d_mode);
        Dvb2Params {
            levels,
            c2,
            id_range: y,
            invite_probability: DEFAULT_INVITE_PROBABILITY,
            d_sched,
            check_interval: d_sched,
            id_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.levels > LevelSet::CAPACITY {
            return Err(Error::InvalidParameter(format!(
                "DVB2 supports 1..={} levels, got {}",
                LevelSet::CAPACITY,
                self.levels
            )));
        }
        if self.id_range < 1 {
            return Err(Error::InvalidParameter("Y must be at least 1".into()));
        }
        if !(self.invite_probability > 0.0 && self.invite_probability < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "invite probability {} outside (0, 1)",
                self.invite_probability
            )));
        }
        if self.check_interval < 1 || self.d_sched < 1 {
            return Err(Error::InvalidParameter(
                "check interval and scheduling diameter must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// `Y² + Y + 4·Y·K`.
    pub fn phase_slots(&self) -> u64 {
        let y = self.id_range as u64;
        let k = self.levels as u64;
        y * y + y + 4 * y * k
    }

    pub fn full_check_slots(&self) -> u64 {
        (self.levels.saturating_sub(1) * (self.d_sched + 1)) as u64
    }

    pub fn slots_for_phases(&self, phases: u64) -> u64 {
        let checks = phases / self.check_interval as u64;
        self.id_range as u64 + phases * self.phase_slots() + checks * self.full_check_slots()
    }

    /// Phase cap `max(50·D_sched, 500)`; slot budget ten times its cost.
    pub fn default_limits(&self) -> RunLimits {
        let max_phases = (50 * self.d_sched as u64).max(500);
        RunLimits {
            slot_budget: 10 * self.slots_for_phases(max_phases),
            max_phases,
        }
    }
}

/// Per-node DVB2 state. Role fields describe the current phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dvb2NodeState {
    pub id: u32,
    /// Sorted, without repeats.
    pub neighbor_ids: Vec<u32>,
    pub value_set: LevelSet,
    /// The DMVR memory, i.e. the node's current vote.
    pub value: Level,
    pub inviter: bool,
    pub invitee_target: Option<u32>,
    pub heard_inviters: Vec<u32>,
    pub chosen_inviter: Option<u32>,
    pub accepted: bool,
    pub terminated: bool,
}

impl Dvb2NodeState {
    fn new(value: Level) -> Self {
        Dvb2NodeState {
            id: 0,
            neighbor_ids: Vec::new(),
            value_set: LevelSet::singleton(value),
            value,
            inviter: false,
            invitee_target: None,
            heard_inviters: Vec::new(),
            chosen_inviter: None,
            accepted: false,
            terminated: false,
        }
    }

    fn reset_roles(&mut self) {
        self.inviter = false;
        self.invitee_target = None;
        self.heard_inviters.clear();
        self.chosen_inviter = None;
        self.accepted = false;
    }

    fn is_invitee(&self) -> bool {
        !self.inviter && self.chosen_inviter.is_some()
    }
}

/// IDs for every node according to `params.id_mode`.
pub fn assign_ids<R: Rng + ?Sized>(graph: &Graph, params: &Dvb2Params, rng: &mut R) -> Vec<u32> {
    match params.id_mode {
        IdMode::RandomIds => (0..graph.node_count())
            .map(|_| rng.random_range(1..=params.id_range as u32))
            .collect(),
        IdMode::PreassignedUniqueIds => distance_two_ids(graph),
    }
}

/// Position inside a block of slots that starts at a fixed channel slot.
struct Block {
    start: u64,
    len: u64,
}

impl Block {
    fn open(channel: &Channel<'_>, len: u64) -> Self {
        Block {
            start: channel.slot(),
            len,
        }
    }

    fn seek(&self, channel: &mut Channel<'_>, offset: u64) {
        let target = self.start + offset;
        debug_assert!(channel.slot() <= target && offset < self.len);
        channel.skip_silent(target - channel.slot());
    }

    fn close(self, channel: &mut Channel<'_>) {
        let end = self.start + self.len;
        debug_assert!(channel.slot() <= end);
        channel.skip_silent(end - channel.slot());
    }
}

/// Runs the beeps of a block: `events` are `(offset, node)` pairs, sorted
/// here; `on_slot(offset, hearers)` is called for every non-silent slot.
fn run_block(
    channel: &mut Channel<'_>,
    len: u64,
    events: &mut [(u64, usize)],
    mut on_slot: impl FnMut(u64, &[usize]),
) {
    events.sort_unstable();
    let block = Block::open(channel, len);
    let mut beepers = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let offset = events[i].0;
        beepers.clear();
        while i < events.len() && events[i].0 == offset {
            beepers.push(events[i].1);
            i += 1;
        }
        block.seek(channel, offset);
        let hearers = channel.step_beepers(&beepers);
        on_slot(offset, hearers);
    }
    block.close(channel);
}

#[derive(Debug, Clone)]
pub struct Dvb2 {
    params: Dvb2Params,
    nodes: Vec<Dvb2NodeState>,
    finished: bool,
    phase_counter: usize,
    received_set: Vec<LevelSet>,
    received_value: Vec<Option<Level>>,
}

impl Dvb2 {
    pub fn new(graph: &Graph, assignment: &LevelAssignment, params: Dvb2Params) -> Result<Self> {
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
        Ok(Dvb2 {
            params,
            nodes: assignment
                .values()
                .iter()
                .map(|&v| Dvb2NodeState::new(v))
                .collect(),
            finished: false,
            phase_counter: 0,
            received_set: vec![LevelSet::EMPTY; n],
            received_value: vec![None; n],
        })
    }

    pub fn params(&self) -> &Dvb2Params {
        &self.params
    }

    pub fn nodes(&self) -> &[Dvb2NodeState] {
        &self.nodes
    }

    pub fn set_ids(&mut self, ids: &[u32]) -> Result<()> {
        if ids.len() != self.nodes.len() {
            return Err(Error::LengthMismatch {
                expected: self.nodes.len(),
                got: ids.len(),
            });
        }
        if let Some(&bad) = ids
            .iter()
            .find(|&&id| id == 0 || id as usize > self.params.id_range)
        {
            return Err(Error::InvalidParameter(format!(
                "id {bad} outside 1..={}",
                self.params.id_range
            )));
        }
        for (node, &id) in self.nodes.iter_mut().zip(ids) {
            node.id = id;
        }
        Ok(())
    }

    /// `Y` slots; the holders of ID `j` beep in slot `j`.
    pub fn discover_neighbor_ids(&mut self, channel: &mut Channel<'_>) {
        let mut events: Vec<(u64, usize)> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id as u64 - 1, i))
            .collect();
        for s in &mut self.nodes {
            s.neighbor_ids.clear();
        }
        let nodes = &mut self.nodes;
        run_block(
            channel,
            self.params.id_range as u64,
            &mut events,
            |offset, hearers| {
                let id = offset as u32 + 1;
                for &h in hearers {
                    if nodes[h].id != id {
                        // slots arrive in increasing order, so the list stays sorted
                        nodes[h].neighbor_ids.push(id);
                    }
                }
            },
        );
    }

    /// One interaction phase with random roles.
    pub fn interaction_phase<R: Rng + ?Sized>(&mut self, channel: &mut Channel<'_>, rng: &mut R) {
        let p = self.params.invite_probability;
        let roles: Vec<bool> = (0..self.nodes.len())
            .map(|_| rng.random::<f64>() < p)
            .collect();
        self.interaction_phase_with_roles(channel, rng, &roles);
    }

    /// One interaction phase with the inviter coins fixed by `roles`.
    pub fn interaction_phase_with_roles<R: Rng + ?Sized>(
        &mut self,
        channel: &mut Channel<'_>,
        rng: &mut R,
        roles: &[bool],
    ) {
        assert_eq!(roles.len(), self.nodes.len(), "one role per node");
        let y = self.params.id_range as u64;
        let k = self.params.levels as u64;
        let n = self.nodes.len();

        for (s, &inviter) in self.nodes.iter_mut().zip(roles) {
            s.reset_roles();
            s.inviter = inviter;
        }
        for s in self.nodes.iter_mut().filter(|s| s.inviter) {
            if !s.neighbor_ids.is_empty() {
                let pick = rng.random_range(0..s.neighbor_ids.len());
                s.invitee_target = Some(s.neighbor_ids[pick]);
            }
        }

        // invitation: Y × Y slots
        let mut events: Vec<(u64, usize)> = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                let target = s.invitee_target?;
                Some(((s.id as u64 - 1) * y + (target as u64 - 1), i))
            })
            .collect();
        let nodes = &mut self.nodes;
        run_block(channel, y * y, &mut events, |offset, hearers| {
            let inviter_id = (offset / y) as u32 + 1;
            let listener_id = (offset % y) as u32 + 1;
            for &h in hearers {
                let s = &mut nodes[h];
                if !s.inviter && s.id == listener_id && s.heard_inviters.last() != Some(&inviter_id)
                {
                    s.heard_inviters.push(inviter_id);
                }
            }
        });

        // acceptance: Y slots
        for s in self
            .nodes
            .iter_mut()
            .filter(|s| !s.inviter && !s.heard_inviters.is_empty())
        {
            let pick = rng.random_range(0..s.heard_inviters.len());
            s.chosen_inviter = Some(s.heard_inviters[pick]);
        }
        let mut events: Vec<(u64, usize)> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_invitee())
            .map(|(i, s)| (s.chosen_inviter.unwrap() as u64 - 1, i))
            .collect();
        let nodes = &mut self.nodes;
        run_block(channel, y, &mut events, |offset, hearers| {
            let id = offset as u32 + 1;
            for &h in hearers {
                let s = &mut nodes[h];
                if s.inviter && s.id == id {
                    s.accepted = true;
                }
            }
        });

        // accepted inviters send value set and value
        let block = 2 * k;
        let mut events = Vec::new();
        for (i, s) in self.nodes.iter().enumerate() {
            if s.inviter && s.accepted {
                let base = (s.id as u64 - 1) * block;
                events.extend(s.value_set.iter().map(|l| (base + l.index() as u64, i)));
                events.push((base + k + s.value.index() as u64, i));
            }
        }
        self.received_set.fill(LevelSet::EMPTY);
        self.received_value.fill(None);
        let (nodes, sets, vals) = (
            &self.nodes,
            &mut self.received_set,
            &mut self.received_value,
        );
        run_block(channel, y * block, &mut events, |offset, hearers| {
            let id = (offset / block) as u32 + 1;
            let sub = offset % block;
            for &h in hearers {
                if nodes[h].is_invitee() && nodes[h].chosen_inviter == Some(id) {
                    if sub < k {
                        sets[h].insert(Level::new(sub as usize));
                    } else {
                        vals[h] = Some(Level::new((sub - k) as usize));
                    }
                }
            }
        });

        // invitees apply DMVR as party 1, the inviter is party 2
        for i in 0..n {
            if !self.nodes[i].is_invitee() {
                continue;
            }
            if let Some(inviter_value) = self.received_value[i] {
                let s = &mut self.nodes[i];
                let out = dmvr(
                    s.value_set,
                    self.received_set[i],
                    s.value,
                    inviter_value,
                    rng,
                );
                s.value_set = out.set1;
                s.value = out.value1;
                self.received_set[i] = out.set2;
                self.received_value[i] = Some(out.value2);
            }
        }

        // invitees send the inviter's new state back
        let mut events = Vec::new();
        for (i, s) in self.nodes.iter().enumerate() {
            if let (true, Some(id)) = (s.is_invitee(), s.chosen_inviter) {
                let base = (id as u64 - 1) * block;
                events.extend(
                    self.received_set[i]
                        .iter()
                        .map(|l| (base + l.index() as u64, i)),
                );
                if let Some(v) = self.received_value[i] {
                    events.push((base + k + v.index() as u64, i));
                }
            }
        }
        for s in self.nodes.iter_mut().filter(|s| s.inviter && s.accepted) {
            s.value_set = LevelSet::EMPTY;
        }
        let nodes = &mut self.nodes;
        run_block(channel, y * block, &mut events, |offset, hearers| {
            let id = (offset / block) as u32 + 1;
            let sub = offset % block;
            for &h in hearers {
                let s = &mut nodes[h];
                if s.inviter && s.accepted && s.id == id {
                    if sub < k {
                        s.value_set.insert(Level::new(sub as usize));
                    } else {
                        s.value = Level::new((sub - k) as usize);
                    }
                }
            }
        });
    }

    pub fn memories(&self) -> Vec<Level> {
        self.nodes.iter().map(|s| s.value).collect()
    }
}

impl Protocol for Dvb2 {
    fn setup(&mut self, channel: &mut Channel<'_>, rng: &mut TrialRng) -> Result<()> {
        let ids = assign_ids(channel.graph(), &self.params, rng);
        self.set_ids(&ids)?;
        self.discover_neighbor_ids(channel);
        Ok(())
    }

    fn run_phase(&mut self, channel: &mut Channel<'_>, rng: &mut TrialRng) -> Result<()> {
        self.phase_counter += 1;
        self.interaction_phase(channel, rng);
        if self.phase_counter == self.params.check_interval {
            self.phase_counter = 0;
            let memories = self.memories();
            let flags =
                termination_detection(channel, &memories, self.params.levels, self.params.d_sched);
            for (s, f) in self.nodes.iter_mut().zip(&flags) {
                s.terminated = *f;
            }
            self.finished = flags.iter().all(|&f| f);
        }
        Ok(())
    }

    fn is_finished(&self) -> bool {
        self.finished
    }

    fn values(&self) -> Vec<Level> {
        self.memories()
    }
}

/// Runs DVB2 until unanimous termination or a limit.
pub fn run(
    graph: &Graph,
    assignment: &LevelAssignment,
    params: Dvb2Params,
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
    params: Dvb2Params,
    limits: RunLimits,
    seed: u64,
    trace: Option<&mut dyn std::io::Write>,
) -> Result<TrialResult> {
    let protocol = Dvb2::new(graph, assignment, params)?;
    engine::run(
        graph,
        assignment,
        protocol,
        limits,
        seed,
        RunOptions {
            sensing: BeeperSensing::Deaf,
            trace,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RunStatus;
    use crate::rng::trial_rng;

    fn set(levels: &[usize]) -> LevelSet {
        levels.iter().map(|&i| Level::new(i)).collect()
    }

    fn l(i: usize) -> Level {
        Level::new(i)
    }

    #[test]
    fn dmvr_identity() {
        let out = dmvr_with_coin(set(&[0]), set(&[0]), l(0), l(0), true);
        assert_eq!(
            (out.set1, out.set2, out.value1, out.value2),
            (set(&[0]), set(&[0]), l(0), l(0))
        );
    }

    #[test]
    fn dmvr_annihilation() {
        let out = dmvr_with_coin(set(&[0]), set(&[1]), l(0), l(1), true);
        assert_eq!(out.set1, set(&[0, 1]));
        assert_eq!(out.set2, LevelSet::EMPTY);
        assert_eq!((out.value1, out.value2), (l(0), l(1)));
    }

    #[test]
    fn dmvr_dissemination() {
        let out = dmvr_with_coin(set(&[0, 1]), set(&[1]), l(0), l(1), false);
        assert_eq!(out.set1, set(&[1]));
        assert_eq!(out.set2, set(&[0, 1]));
        assert_eq!((out.value1, out.value2), (l(1), l(1)));
    }

    #[test]
    fn dmvr_speed_up_copies_old_values() {
        let a = set(&[0, 1, 2]);
        let b = set(&[0, 1]);
        let heads = dmvr_with_coin(a, b, l(2), l(0), true);
        assert_eq!((heads.value1, heads.value2), (l(0), l(0)));
        let tails = dmvr_with_coin(a, b, l(2), l(0), false);
        assert_eq!((tails.value1, tails.value2), (l(2), l(2)));
    }

    #[test]
    fn id_range_formula() {
        assert_eq!(id_range(20.0, 4), 160);
        assert_eq!(id_range(20.0, 1), 2);
        assert_eq!(id_range(20.0, 0), 1);
        assert_eq!(id_range(20.0, 2), 40);
        assert_eq!(id_range(20.0, 99), 13_127);
    }

    #[test]
    fn distance_two_ids_are_locally_unique() {
        for g in [
            Graph::complete(4).unwrap(),
            Graph::mesh(5, 6).unwrap(),
            Graph::star(6).unwrap(),
        ] {
            let ids = distance_two_ids(&g);
            for u in 0..g.node_count() {
                let mut local: Vec<u32> = g.neighbors(u).iter().map(|&v| ids[v]).collect();
                local.push(ids[u]);
                let len = local.len();
                local.sort_unstable();
                local.dedup();
                assert_eq!(local.len(), len, "node {u}");
            }
        }
        let ids = distance_two_ids(&Graph::complete(4).unwrap());
        assert_eq!(ids, vec![1, 2, 3, 4]);
    }

    #[test]
    fn discovery_on_star() {
        let g = Graph::star(3).unwrap();
        let a = LevelAssignment::from_indices(&[0, 0, 1, 1], 2).unwrap();
        let params = Dvb2Params::new(&g, 2, DiameterMode::Exact, IdMode::PreassignedUniqueIds);
        let mut p = Dvb2::new(&g, &a, params).unwrap();
        p.set_ids(&[1, 2, 3, 4]).unwrap();
        let mut ch = Channel::new(&g);
        p.discover_neighbor_ids(&mut ch);
        assert_eq!(p.nodes()[0].neighbor_ids, vec![2, 3, 4]);
        assert_eq!(p.nodes()[1].neighbor_ids, vec![1]);
        assert_eq!(ch.metrics().slots_elapsed, params.id_range as u64);
    }

    #[test]
    fn discovery_merges_colliding_ids() {
        let g = Graph::star(3).unwrap();
        let a = LevelAssignment::from_indices(&[0, 0, 1, 1], 2).unwrap();
        let mut params = Dvb2Params::new(&g, 2, DiameterMode::Exact, IdMode::RandomIds);
        params.id_range = 10;
        let mut p = Dvb2::new(&g, &a, params).unwrap();
        p.set_ids(&[1, 7, 7, 4]).unwrap();
        let mut ch = Channel::new(&g);
        p.discover_neighbor_ids(&mut ch);
        assert_eq!(p.nodes()[0].neighbor_ids, vec![4, 7]);
        assert!(!p.nodes()[0].neighbor_ids.contains(&2));
    }

    fn two_node_setup() -> (Graph, Dvb2) {
        let g = Graph::path(2).unwrap();
        let a = LevelAssignment::from_indices(&[0, 1], 2).unwrap();
        let params = Dvb2Params::new(&g, 2, DiameterMode::Exact, IdMode::PreassignedUniqueIds);
        let mut p = Dvb2::new(&g, &a, params).unwrap();
        p.set_ids(&[1, 2]).unwrap();
        (g, p)
    }

    #[test]
    fn two_node_handshake() {
        let (g, mut p) = two_node_setup();
        let mut ch = Channel::new(&g);
        p.discover_neighbor_ids(&mut ch);
        let before = ch.metrics().slots_elapsed;
        let mut rng = trial_rng(1);
        p.interaction_phase_with_roles(&mut ch, &mut rng, &[true, false]);
        let inviter = &p.nodes()[0];
        let invitee = &p.nodes()[1];
        assert!(inviter.accepted);
        assert_eq!(inviter.invitee_target, Some(2));
        assert_eq!(invitee.heard_inviters, vec![1]);
        assert_eq!(invitee.chosen_inviter, Some(1));
        // invitee {l2} is party 1, inviter {l1} party 2: |V1| <= |V2|
        assert_eq!(invitee.value_set, set(&[0, 1]));
        assert_eq!(inviter.value_set, LevelSet::EMPTY);
        assert_eq!((invitee.value, inviter.value), (l(1), l(0)));
        assert_eq!(
            ch.metrics().slots_elapsed - before,
            p.params().phase_slots()
        );
    }

    #[test]
    fn two_inviters_do_nothing() {
        let (g, mut p) = two_node_setup();
        let mut ch = Channel::new(&g);
        p.discover_neighbor_ids(&mut ch);
        let before: Vec<_> = p.nodes().iter().map(|s| (s.value_set, s.value)).collect();
        p.interaction_phase_with_roles(&mut ch, &mut trial_rng(2), &[true, true]);
        let after: Vec<_> = p.nodes().iter().map(|s| (s.value_set, s.value)).collect();
        assert_eq!(before, after);
        assert!(p.nodes().iter().all(|s| !s.accepted));
    }

    #[test]
    fn consensus_input_terminates() {
        let g = Graph::complete(5).unwrap();
        let a = LevelAssignment::from_indices(&[1; 5], 2).unwrap();
        let params = Dvb2Params::new(&g, 2, DiameterMode::Exact, IdMode::PreassignedUniqueIds);
        let res = run(&g, &a, params, 3, None).unwrap();
        assert_eq!(res.status, RunStatus::Terminated);
        assert_eq!(res.success, Some(true));
        assert_eq!(res.metrics.phases_elapsed, 1);
    }

    #[test]
    fn single_node_terminates() {
        let g = Graph::complete(1).unwrap();
        let a = LevelAssignment::from_indices(&[1], 2).unwrap();
        let params = Dvb2Params::new(&g, 2, DiameterMode::Exact, IdMode::RandomIds);
        let res = run(&g, &a, params, 3, None).unwrap();
        assert_eq!(res.status, RunStatus::Terminated);
        assert_eq!(res.final_values, vec![l(1)]);
    }

    #[test]
    fn small_mesh_reaches_majority() {
        let g = Graph::mesh(3, 3).unwrap();
        let a = LevelAssignment::from_indices(&[0, 1, 0, 1, 0, 0, 1, 0, 1], 2).unwrap();
        let params = Dvb2Params::new(&g, 2, DiameterMode::Exact, IdMode::PreassignedUniqueIds);
        for seed in 0..20 {
            let res = run(&g, &a, params, seed, None).unwrap();
            assert_eq!(res.success, Some(true), "seed {seed}: {res:?}");
        }
    }
}
