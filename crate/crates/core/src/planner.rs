//! Hierarchical behaviour generation: a mission is drawn from the agent's
//! preferences, a finite-state machine picks the next unaccomplished subgoal,
//! and A* over `(cell, heading)` poses produces the primitive actions.
//!
//! When several plans share the optimal cost, one is drawn uniformly: the
//! search records exact costs for every pose on an optimal path, counts the
//! optimal paths reaching each pose, and samples a path backwards weighted by
//! those counts.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::behavior::{mission, Mission, Subgoal, SubgoalAction};
use crate::error::{Error, Result};
use crate::evidence::{language_of_subgoal, observe, AudioMap, AudioToken, Observation, Utterance};
use crate::rng::{self, Rng};
use crate::world::{
    Action, ActionKind, AgentId, Direction, EntityRef, GridPos, Layout, ObjectLocation, Transition, WorldState,
};

/// Probability of each mission being chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MissionPreferences(BTreeMap<String, f64>);

impl MissionPreferences {
    pub fn new(prefs: BTreeMap<String, f64>) -> Result<Self> {
        if prefs.is_empty() {
            return Err(Error::Preferences("no missions".into()));
        }
        for (name, p) in &prefs {
            if !p.is_finite() || *p < 0.0 {
                return Err(Error::Preferences(format!("{name} has mass {p}")));
            }
            mission(name)?;
        }
        let total: f64 = prefs.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Preferences(format!("masses sum to {total}")));
        }
        Ok(MissionPreferences(prefs))
    }

    pub fn single(name: &str) -> Result<Self> {
        Self::new(BTreeMap::from([(name.to_owned(), 1.0)]))
    }

    /// `p` on `own`, `1 - p` on `other`.
    pub fn mixed(own: &str, other: &str, p: f64) -> Result<Self> {
        if own == other {
            return Self::single(own);
        }
        let mut m = BTreeMap::from([(own.to_owned(), p)]);
        if p < 1.0 {
            m.insert(other.to_owned(), 1.0 - p);
        }
        Self::new(m)
    }

    pub fn masses(&self) -> &BTreeMap<String, f64> {
        &self.0
    }

    /// Draw a mission, ignoring `excluded` and renormalising what remains.
    pub fn sample_excluding(&self, rng: &mut Rng, excluded: &[String]) -> Option<&'static Mission> {
        let live: Vec<(&String, f64)> = self
            .0
            .iter()
            .filter(|(n, p)| **p > 0.0 && !excluded.contains(n))
            .map(|(n, p)| (n, *p))
            .collect();
        let total: f64 = live.iter().map(|(_, p)| p).sum();
        if live.is_empty() || total <= 0.0 {
            return None;
        }
        let mut u = rng.random::<f64>() * total;
        for (name, p) in &live {
            if u < *p {
                return mission(name).ok();
            }
            u -= p;
        }
        mission(live.last().expect("non-empty").0).ok()
    }
}

pub fn sample_mission(prefs: &MissionPreferences, seed: u64) -> Result<&'static Mission> {
    prefs
        .sample_excluding(&mut rng::rng(seed), &[])
        .ok_or_else(|| Error::Infeasible("no mission has positive mass".into()))
}

/// What the subgoal FSM wants next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextSubgoal {
    Pursue(usize),
    Done,
    Infeasible(usize),
}

/// Scan the mission from its start.
pub fn next_subgoal(state: &WorldState, m: &Mission) -> NextSubgoal {
    next_subgoal_from(state, m, 0)
}

/// First subgoal at or after `cursor` whose target state does not hold yet.
/// A mission that undoes its own earlier effects (light on, then off) needs
/// the cursor so finished subgoals are not revisited.
pub fn next_subgoal_from(state: &WorldState, m: &Mission, cursor: usize) -> NextSubgoal {
    for (i, g) in m.subgoals.iter().enumerate().skip(cursor) {
        if g.satisfied(state) {
            continue;
        }
        if target_cells(state, g).is_empty() {
            if g.can_skip {
                continue;
            }
            return NextSubgoal::Infeasible(i);
        }
        return NextSubgoal::Pursue(i);
    }
    NextSubgoal::Done
}

/// Cells the agent may face to act on the subgoal's target.
pub fn target_cells(state: &WorldState, g: &Subgoal) -> Vec<GridPos> {
    let layout = state.layout();
    let room_ok = |r| layout.room(r).is_some_and(|room| room.kind == g.room);
    let mut cells = Vec::new();
    match g.action {
        SubgoalAction::Pickup => {
            for o in state.objects() {
                let ObjectLocation::In(f) = o.location else { continue };
                let fv = state.furniture_by_id(f).expect("container exists");
                if Some(o.kind) != g.obj || Some(fv.kind()) != g.fur || !room_ok(fv.slot.room) {
                    continue;
                }
                if fv.kind().spec().openable && !fv.flags.get(crate::codebook::Flag::Open) {
                    continue;
                }
                if g.pos.is_none_or(|p| p == o.pos) {
                    cells.push(o.pos);
                }
            }
        }
        SubgoalAction::Drop => {
            let carrying = state
                .objects()
                .iter()
                .any(|o| Some(o.kind) == g.obj && matches!(o.location, ObjectLocation::CarriedBy(_)));
            if !carrying {
                return cells;
            }
            for f in state.furniture() {
                if !f.kind().spec().receptacle {
                    continue;
                }
                if let Some(p) = g.pos {
                    if !f.slot.rect.contains(p) {
                        continue;
                    }
                } else if Some(f.kind()) != g.fur || !room_ok(f.slot.room) {
                    continue;
                }
                if f.kind().spec().openable && !f.flags.get(crate::codebook::Flag::Open) {
                    continue;
                }
                for p in f.slot.rect.cells() {
                    if g.pos.is_none_or(|q| q == p) && state.object_at(p).is_none() {
                        cells.push(p);
                    }
                }
            }
        }
        SubgoalAction::Toggle | SubgoalAction::Open | SubgoalAction::Close => {
            let (flag, value) = g.state;
            match g.fur {
                Some(kind) => {
                    for f in state.furniture() {
                        if f.kind() == kind && room_ok(f.slot.room) && f.flags.get(flag) != value {
                            cells.extend(f.slot.rect.cells().filter(|p| g.pos.is_none_or(|q| q == *p)));
                        }
                    }
                }
                None => {
                    for o in state.objects() {
                        if Some(o.kind) == g.obj
                            && matches!(o.location, ObjectLocation::In(_))
                            && state.object_room(o).is_some_and(room_ok)
                            && o.flags.get(flag) != value
                        {
                            cells.push(o.pos);
                        }
                    }
                }
            }
        }
    }
    cells.sort();
    cells.dedup();
    cells
}

/// Pose of an agent: cell plus heading.
pub type Pose = (GridPos, Direction);

fn node_index(layout: &Layout, (p, d): Pose) -> usize {
    (usize::from(p.y) * usize::from(layout.width()) + usize::from(p.x)) * 4 + d as usize
}

fn node_pose(layout: &Layout, i: usize) -> Pose {
    let cell = i / 4;
    let w = usize::from(layout.width());
    (
        GridPos::new((cell % w) as u16, (cell / w) as u16),
        Direction::ALL[i % 4],
    )
}

/// Poses one primitive move before `(p, d)`, with the move that leads there.
fn predecessors(layout: &Layout, (p, d): Pose) -> impl Iterator<Item = (Pose, ActionKind)> + '_ {
    let back = p
        .step(d.right().right())
        .filter(|q| layout.walkable(*q))
        .map(|q| ((q, d), ActionKind::Forward));
    [
        Some(((p, d.right()), ActionKind::TurnLeft)),
        Some(((p, d.left()), ActionKind::TurnRight)),
        back,
    ]
    .into_iter()
    .flatten()
}

fn successors(layout: &Layout, (p, d): Pose) -> impl Iterator<Item = Pose> + '_ {
    let fwd = p.step(d).filter(|q| layout.walkable(*q)).map(|q| (q, d));
    [Some((p, d.left())), Some((p, d.right())), fwd].into_iter().flatten()
}

/// Result of a navigation search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Navigation {
    /// Number of primitive moves on an optimal route.
    pub cost: u32,
    pub moves: Vec<ActionKind>,
    pub end: Pose,
    /// How many distinct optimal move sequences exist.
    pub optimal_paths: u128,
}

/// A* from `start` to any pose facing one of `targets`. With `rng`, the
/// returned route is uniform over all optimal routes; without, the first in
/// a fixed order is returned.
pub fn navigate(layout: &Layout, start: Pose, targets: &[GridPos], rng: Option<&mut Rng>) -> Option<Navigation> {
    if targets.is_empty() || !layout.walkable(start.0) {
        return None;
    }
    let is_goal = |(p, d): Pose| p.step(d).is_some_and(|f| targets.contains(&f));
    let h = |p: GridPos| targets.iter().map(|t| p.manhattan(*t).saturating_sub(1)).min().unwrap_or(0);

    let n = usize::from(layout.width()) * usize::from(layout.height()) * 4;
    let mut g = vec![u32::MAX; n];
    let mut closed = vec![false; n];
    let mut order = Vec::new();
    let mut heap = BinaryHeap::new();
    let s = node_index(layout, start);
    g[s] = 0;
    heap.push(Reverse((h(start.0), 0u32, s)));
    let mut best: Option<u32> = None;

    while let Some(Reverse((f, gn, i))) = heap.pop() {
        if best.is_some_and(|c| f > c) {
            break;
        }
        if closed[i] || gn != g[i] {
            continue;
        }
        closed[i] = true;
        order.push(i);
        let pose = node_pose(layout, i);
        if is_goal(pose) {
            best.get_or_insert(gn);
            continue;
        }
        for next in successors(layout, pose) {
            let j = node_index(layout, next);
            let ng = gn + 1;
            if ng < g[j] {
                g[j] = ng;
                heap.push(Reverse((ng + h(next.0), ng, j)));
            }
        }
    }
    let cost = best?;

    // Count optimal routes into each closed pose, in nondecreasing g order.
    let mut count = vec![0u128; n];
    count[s] = 1;
    order.sort_by_key(|&i| g[i]);
    for &i in &order {
        if i == s {
            continue;
        }
        let pose = node_pose(layout, i);
        let mut c = 0u128;
        for (prev, _) in predecessors(layout, pose) {
            let j = node_index(layout, prev);
            if closed[j] && g[j] != u32::MAX && g[j] + 1 == g[i] && !is_goal(prev) {
                c += count[j];
            }
        }
        count[i] = c;
    }

    let goals: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| g[i] == cost && is_goal(node_pose(layout, i)))
        .collect();
    let total: u128 = goals.iter().map(|&i| count[i]).sum();
    let mut rng = rng;
    let mut pick = |options: &[(usize, u128)]| -> usize {
        let sum: u128 = options.iter().map(|o| o.1).sum();
        let mut u = match rng.as_deref_mut() {
            Some(r) => r.random_range(0..sum),
            None => 0,
        };
        for &(i, w) in options {
            if u < w {
                return i;
            }
            u -= w;
        }
        options.last().expect("non-empty").0
    };
    let goal_opts: Vec<(usize, u128)> = goals.iter().map(|&i| (i, count[i])).collect();
    let end = pick(&goal_opts);

    let mut moves = Vec::with_capacity(cost as usize);
    let mut cur = end;
    while cur != s {
        let pose = node_pose(layout, cur);
        let opts: Vec<(usize, u128, ActionKind)> = predecessors(layout, pose)
            .filter_map(|(prev, a)| {
                let j = node_index(layout, prev);
                (closed[j] && g[j] + 1 == g[cur] && count[j] > 0 && !is_goal(prev)).then_some((j, count[j], a))
            })
            .collect();
        let weights: Vec<(usize, u128)> = opts.iter().map(|o| (o.0, o.1)).collect();
        let j = pick(&weights);
        let a = opts.iter().find(|o| o.0 == j).expect("picked option").2;
        moves.push(a);
        cur = j;
    }
    moves.reverse();
    Some(Navigation {
        cost,
        moves,
        end: node_pose(layout, end),
        optimal_paths: total,
    })
}

/// Actions completing `g`: an optimal route to a facing pose, then the
/// manipulation itself.
pub fn plan_subgoal(state: &WorldState, agent: AgentId, g: &Subgoal, rng: &mut Rng) -> Result<Vec<Action>> {
    let pose = state
        .agent(agent)
        .ok_or(Error::World(crate::world::WorldError::UnknownAgent(agent)))?;
    let targets = target_cells(state, g);
    if targets.is_empty() {
        return Err(Error::Infeasible(format!("{}: no target", g.name)));
    }
    let nav = navigate(state.layout(), (pose.pos, pose.dir), &targets, Some(rng))
        .ok_or_else(|| Error::Infeasible(format!("{}: target unreachable", g.name)))?;
    let facing = nav.end.0.step(nav.end.1).expect("goal pose faces a cell");
    let kind = g.action_kind();
    let target = match g.action {
        SubgoalAction::Drop => {
            let carried = pose
                .carrying
                .ok_or_else(|| Error::Infeasible(format!("{}: not carrying", g.name)))?;
            EntityRef::Object(carried)
        }
        SubgoalAction::Pickup => EntityRef::Object(
            state
                .object_at(facing)
                .ok_or_else(|| Error::Infeasible(format!("{}: object vanished", g.name)))?
                .id,
        ),
        _ if g.fur.is_some() => EntityRef::Furniture(
            state
                .layout()
                .furniture_at(facing)
                .ok_or_else(|| Error::Infeasible(format!("{}: furniture vanished", g.name)))?
                .id,
        ),
        _ => EntityRef::Object(
            state
                .object_at(facing)
                .ok_or_else(|| Error::Infeasible(format!("{}: object vanished", g.name)))?
                .id,
        ),
    };
    let mut plan: Vec<Action> = nav.moves.into_iter().map(Action::nav).collect();
    plan.push(Action::on(kind, target));
    Ok(plan)
}

/// One agent's behaviour in an environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub agent: AgentId,
    pub mission: String,
    pub seed: u64,
    /// `T + 1` states.
    pub states: Vec<WorldState>,
    /// `T` actions; `actions[t]` leads from `states[t]` to `states[t + 1]`.
    pub actions: Vec<Action>,
    /// `T + 1` tokens; `audio[t]` is the sound of `actions[t]`, and the final
    /// step is silent.
    pub audio: Vec<AudioToken>,
    /// `T + 1` entries; an utterance on the first step of each subgoal.
    pub language: Vec<Option<Utterance>>,
    /// `T` mission subgoal indices, one per action.
    pub subgoal_index: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observation(&self, t: usize) -> Observation {
        let mut o = observe(&self.states[t], self.actions.get(t), None, &AudioMap::default());
        o.audio = self.audio[t];
        o.language = self.language[t].clone();
        o
    }

    /// Latest utterance revealed at or before step `t`.
    pub fn current_intent(&self, t: usize) -> Option<&Utterance> {
        self.language[..=t.min(self.language.len() - 1)]
            .iter()
            .rev()
            .find_map(|u| u.as_ref())
    }

    /// First step whose state satisfies `q`.
    pub fn first_satisfying(&self, q: &crate::world::StatePredicate) -> Option<usize> {
        self.states.iter().position(|s| q.check(s))
    }

    /// Prefix ending at step `t` (inclusive).
    pub fn truncated(&self, t: usize) -> Trajectory {
        let t = t.min(self.len());
        let mut audio = self.audio[..=t].to_vec();
        audio[t] = AudioToken::Silence;
        Trajectory {
            agent: self.agent,
            mission: self.mission.clone(),
            seed: self.seed,
            states: self.states[..=t].to_vec(),
            actions: self.actions[..t].to_vec(),
            audio,
            language: self.language[..=t].to_vec(),
            subgoal_index: self.subgoal_index[..t].to_vec(),
        }
    }

    /// Recheck the stored transitions and bookkeeping.
    pub fn validate(&self) -> std::result::Result<(), (usize, String)> {
        let t = self.actions.len();
        if self.states.len() != t + 1
            || self.audio.len() != t + 1
            || self.language.len() != t + 1
            || self.subgoal_index.len() != t
        {
            return Err((0, "sequence lengths disagree".into()));
        }
        let map = AudioMap::default();
        for (i, a) in self.actions.iter().enumerate() {
            let (next, tr) = crate::world::apply_action(&self.states[i], self.agent, *a).map_err(|e| (i, e.to_string()))?;
            if tr == Transition::NoOp && a.kind != ActionKind::Idle {
                return Err((i, format!("{a} had no effect")));
            }
            if next != self.states[i + 1] {
                return Err((i, format!("state after {a} does not match")));
            }
            if self.audio[i] != map.token(a.kind) {
                return Err((i, "audio does not match action".into()));
            }
        }
        if self.audio[t] != AudioToken::Silence {
            return Err((t, "final step must be silent".into()));
        }
        Ok(())
    }
}

/// Cap on mission resamples and subgoal steps, guarding against cycles.
const MAX_SUBGOAL_STEPS: usize = 64;

/// Sample a mission and roll it out to completion. `env` must already contain
/// `agent` at its start pose.
pub fn generate_trajectory(env: &WorldState, agent: AgentId, prefs: &MissionPreferences, seed: u64) -> Result<Trajectory> {
    if env.agent(agent).is_none() {
        return Err(crate::world::WorldError::UnknownAgent(agent).into());
    }
    let mut rng = rng::rng(seed);
    let mut excluded = Vec::new();
    let map = AudioMap::default();
    'mission: loop {
        let Some(m) = prefs.sample_excluding(&mut rng, &excluded) else {
            return Err(Error::Infeasible(format!("every mission infeasible for {agent}")));
        };
        let mut state = env.clone();
        let mut states = vec![state.clone()];
        let mut actions = Vec::new();
        let mut audio = Vec::new();
        let mut language = Vec::new();
        let mut subgoal_index = Vec::new();
        let mut cursor = 0;
        for _ in 0..MAX_SUBGOAL_STEPS {
            match next_subgoal_from(&state, m, cursor) {
                NextSubgoal::Done => {
                    audio.push(AudioToken::Silence);
                    language.push(None);
                    return Ok(Trajectory {
                        agent,
                        mission: m.name.clone(),
                        seed,
                        states,
                        actions,
                        audio,
                        language,
                        subgoal_index,
                    });
                }
                NextSubgoal::Infeasible(_) => {
                    excluded.push(m.name.clone());
                    continue 'mission;
                }
                NextSubgoal::Pursue(i) => {
                    cursor = i;
                    let g = &m.subgoals[i];
                    let plan = match plan_subgoal(&state, agent, g, &mut rng) {
                        Ok(p) => p,
                        Err(Error::Infeasible(_)) => {
                            excluded.push(m.name.clone());
                            continue 'mission;
                        }
                        Err(e) => return Err(e),
                    };
                    for (k, a) in plan.into_iter().enumerate() {
                        let tr = state.step(agent, a)?;
                        debug_assert_eq!(tr, Transition::Applied, "planned {a} was a no-op");
                        actions.push(a);
                        audio.push(map.token(a.kind));
                        language.push((k == 0).then(|| language_of_subgoal(g)));
                        subgoal_index.push(i);
                        states.push(state.clone());
                    }
                    if !g.satisfied(&state) {
                        return Err(Error::Infeasible(format!("{} not achieved by its plan", g.name)));
                    }
                }
            }
        }
        return Err(Error::Infeasible(format!("{} did not terminate", m.name)));
    }
}
