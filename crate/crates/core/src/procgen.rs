//! Procedural environments and on-disk datasets.
//!
//! Rooms come from a binary space partition of the grid interior with
//! one-cell walls; a random spanning tree over adjacent rooms receives doors.
//! Required furniture and objects are placed first, then extras drawn from the
//! asset library. Every environment is rejection-sampled until both scenario
//! missions are plannable from random start poses.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::behavior::{Mission, Scenario, MISSION_LIBRARY_VERSION};
use crate::codebook::{
    AssetType, Codebook, Flag, FurnitureType, ObjectType, RoomType, StateFlags, CODEBOOK_VERSION,
};
use crate::error::{Error, Result};
use crate::evidence::{AudioToken, Utterance};
use crate::planner::{generate_trajectory, MissionPreferences, Trajectory};
use crate::rng::{self, Rng};
use crate::world::{
    decode_array, encode_array, to_scene_graph, Action, AgentId, AgentPose, Cell, Direction, Grid, GridPos, Rect,
    WorldBuilder, WorldState, CHANNELS,
};

pub const ENV_CONFIG_VERSION: u32 = 1;
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectReq {
    #[serde(rename = "type")]
    pub kind: ObjectType,
    #[serde(default)]
    pub state: BTreeMap<Flag, bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FurnitureReq {
    #[serde(rename = "type")]
    pub kind: FurnitureType,
    #[serde(default)]
    pub state: BTreeMap<Flag, bool>,
    /// Top-left cell relative to the room's top-left floor cell.
    #[serde(default)]
    pub pos: Option<GridPos>,
    #[serde(default)]
    pub objects: Vec<ObjectReq>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomReq {
    #[serde(rename = "type")]
    pub kind: RoomType,
    #[serde(default)]
    pub furniture: Vec<FurnitureReq>,
}

/// Generator configuration: required rooms with their contents plus optional
/// randomised extras.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub version: u32,
    pub name: String,
    /// Grid size including the outer wall.
    pub width: u16,
    pub height: u16,
    /// Smallest allowed room side, in floor cells.
    #[serde(default = "default_min_room")]
    pub min_room_size: u16,
    #[serde(default)]
    pub num_extra_rooms: u32,
    pub rooms: Vec<RoomReq>,
    #[serde(default)]
    pub num_extra_furniture: u32,
    #[serde(default)]
    pub num_extra_objects: u32,
    /// Rooms agents may start in; empty means any room.
    #[serde(default)]
    pub agent_start_rooms: Vec<RoomType>,
}

fn default_min_room() -> u16 {
    4
}

macro_rules! env_files {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../data/envs/", $name, ".json")))),*]
    };
}

static ENV_FILES: &[(&str, &str)] = env_files!["pillow", "shower", "snack", "plant", "laundry", "sweep"];

impl EnvConfig {
    pub fn from_json(text: &str) -> Result<EnvConfig> {
        let cfg: EnvConfig = serde_json::from_str(text)?;
        if cfg.version != ENV_CONFIG_VERSION {
            return Err(Error::Generation(format!(
                "env config version {} unsupported (expected {ENV_CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    /// Shipped configuration for a scenario id (or `sweep`).
    pub fn builtin(name: &str) -> Result<EnvConfig> {
        let text = ENV_FILES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Generation(format!("no env config named {name:?}")))?;
        EnvConfig::from_json(text)
    }

    fn required_types(&self) -> Vec<AssetType> {
        let mut v = Vec::new();
        for r in &self.rooms {
            for f in &r.furniture {
                v.push(AssetType::Furniture(f.kind));
                v.extend(f.objects.iter().map(|o| AssetType::Object(o.kind)));
            }
        }
        v
    }
}

fn flags_from(state: &BTreeMap<Flag, bool>, allowed: StateFlags, what: &str) -> Result<StateFlags> {
    let mut f = StateFlags::EMPTY;
    for (flag, v) in state {
        if !allowed.get(*flag) || *flag == Flag::Carried {
            return Err(Error::Generation(format!("{what} cannot have state {flag}")));
        }
        f.set(*flag, *v);
    }
    Ok(f)
}

/// Split the interior into `n` rectangles separated by one-cell walls.
fn partition(width: u16, height: u16, n: usize, min: u16, rng: &mut Rng) -> Option<Vec<Rect>> {
    let mut rects = vec![Rect::new(1, 1, width.checked_sub(2)?, height.checked_sub(2)?)];
    if rects[0].w < min || rects[0].h < min {
        return None;
    }
    while rects.len() < n {
        // Split the largest splittable rectangle along its longer side.
        let mut order: Vec<usize> = (0..rects.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(rects[i].area()));
        let mut done = false;
        for i in order {
            let r = rects[i];
            let vertical_first = r.w > r.h || (r.w == r.h && rng.random_bool(0.5));
            for vertical in [vertical_first, !vertical_first] {
                let side = if vertical { r.w } else { r.h };
                if side < 2 * min + 1 {
                    continue;
                }
                let cut = rng.random_range(min..=side - min - 1);
                let (a, b) = if vertical {
                    (Rect::new(r.x, r.y, cut, r.h), Rect::new(r.x + cut + 1, r.y, r.w - cut - 1, r.h))
                } else {
                    (Rect::new(r.x, r.y, r.w, cut), Rect::new(r.x, r.y + cut + 1, r.w, r.h - cut - 1))
                };
                rects[i] = a;
                rects.push(b);
                done = true;
                break;
            }
            if done {
                break;
            }
        }
        if !done {
            return None;
        }
    }
    Some(rects)
}

/// Wall cells that would join rooms `a` and `b`.
fn door_candidates(a: &Rect, b: &Rect) -> Vec<GridPos> {
    let mut out = Vec::new();
    // b right of a, or below a, separated by one wall cell.
    let pairs = [(a, b), (b, a)];
    for (l, r) in pairs {
        if l.x + l.w + 1 == r.x {
            let y0 = l.y.max(r.y);
            let y1 = (l.y + l.h).min(r.y + r.h);
            out.extend((y0..y1).map(|y| GridPos::new(l.x + l.w, y)));
        }
        if l.y + l.h + 1 == r.y {
            let x0 = l.x.max(r.x);
            let x1 = (l.x + l.w).min(r.x + r.w);
            out.extend((x0..x1).map(|x| GridPos::new(x, l.y + l.h)));
        }
    }
    out
}

struct Placer {
    width: u16,
    height: u16,
    occupied: Vec<bool>,
    blocked: Vec<bool>,
}

impl Placer {
    fn idx(&self, p: GridPos) -> usize {
        usize::from(p.y) * usize::from(self.width) + usize::from(p.x)
    }

    /// Footprint fits in `room`, overlaps nothing, and keeps a one-cell gap
    /// (including diagonals) to other furniture and to door approaches.
    fn fits(&self, room: &Rect, r: &Rect) -> bool {
        if r.x < room.x || r.y < room.y || r.x + r.w > room.x + room.w || r.y + r.h > room.y + room.h {
            return false;
        }
        for p in r.cells() {
            if self.blocked[self.idx(p)] {
                return false;
            }
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let q = (i32::from(p.x) + dx, i32::from(p.y) + dy);
                    if q.0 < 0 || q.1 < 0 || q.0 >= i32::from(self.width) || q.1 >= i32::from(self.height) {
                        continue;
                    }
                    let q = GridPos::new(q.0 as u16, q.1 as u16);
                    if self.occupied[self.idx(q)] {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn mark(&mut self, r: &Rect) {
        for p in r.cells() {
            let i = self.idx(p);
            self.occupied[i] = true;
        }
    }
}

fn footprint(kind: FurnitureType, rng: &mut Rng) -> (u16, u16) {
    let (w, h) = kind.spec().size;
    if w != h && rng.random_bool(0.5) {
        (h, w)
    } else {
        (w, h)
    }
}

fn random_rect_in(room: &Rect, (w, h): (u16, u16), rng: &mut Rng) -> Option<Rect> {
    if w > room.w || h > room.h {
        return None;
    }
    let x = rng.random_range(room.x..=room.x + room.w - w);
    let y = rng.random_range(room.y..=room.y + room.h - h);
    Some(Rect::new(x, y, w, h))
}

const PLACEMENT_TRIES: usize = 200;

/// One attempt at building a world from `cfg`. `avoid` lists asset types the
/// extras must not use.
fn try_generate(cfg: &EnvConfig, avoid: &[AssetType], rng: &mut Rng) -> Result<WorldState> {
    let n_rooms = cfg.rooms.len() + cfg.num_extra_rooms as usize;
    if n_rooms == 0 {
        return Err(Error::Generation("config has no rooms".into()));
    }
    let rects = partition(cfg.width, cfg.height, n_rooms, cfg.min_room_size, rng).ok_or_else(|| {
        Error::Generation(format!(
            "{n_rooms} rooms of side >= {} do not fit in {}x{}",
            cfg.min_room_size, cfg.width, cfg.height
        ))
    })?;
    let mut kinds: Vec<RoomType> = cfg.rooms.iter().map(|r| r.kind).collect();
    let mut spare: Vec<RoomType> = RoomType::ALL.into_iter().filter(|k| !kinds.contains(k)).collect();
    spare.shuffle(rng);
    for _ in 0..cfg.num_extra_rooms {
        kinds.push(spare.pop().ok_or_else(|| Error::Generation("too many extra rooms".into()))?);
    }
    let mut slot_of: Vec<usize> = (0..n_rooms).collect();
    slot_of.shuffle(rng);

    let mut b = WorldBuilder::new(cfg.width, cfg.height);
    for (k, kind) in kinds.iter().enumerate() {
        b.room(*kind, rects[slot_of[k]]);
    }

    // Random spanning tree over adjacent rooms.
    let mut edges = Vec::new();
    for i in 0..n_rooms {
        for j in i + 1..n_rooms {
            let c = door_candidates(&rects[i], &rects[j]);
            if !c.is_empty() {
                edges.push((i, j, c));
            }
        }
    }
    edges.shuffle(rng);
    let mut comp: Vec<usize> = (0..n_rooms).collect();
    fn find(c: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while c[r] != r {
            r = c[r];
        }
        c[i] = r;
        r
    }
    let mut doors = Vec::new();
    for (i, j, cands) in &edges {
        let (ri, rj) = (find(&mut comp, *i), find(&mut comp, *j));
        if ri != rj {
            comp[ri] = rj;
            let d = *cands.choose(rng).expect("non-empty");
            b.door(d);
            doors.push(d);
        }
    }
    let root = find(&mut comp, 0);
    if (0..n_rooms).any(|i| find(&mut comp, i) != root) {
        return Err(Error::Generation("rooms not connected".into()));
    }

    let n = usize::from(cfg.width) * usize::from(cfg.height);
    let mut placer = Placer {
        width: cfg.width,
        height: cfg.height,
        occupied: vec![false; n],
        blocked: vec![false; n],
    };
    for d in &doors {
        for dir in Direction::ALL {
            if let Some(p) = d.step(dir) {
                if p.x < cfg.width && p.y < cfg.height {
                    let i = placer.idx(p);
                    placer.blocked[i] = true;
                }
            }
        }
    }

    let room_rect = |k: usize| rects[slot_of[k]];
    let mut placed: Vec<(usize, Rect)> = Vec::new();
    let mut pending_objects = Vec::new();
    for (k, room) in cfg.rooms.iter().enumerate() {
        let rr = room_rect(k);
        for freq in &room.furniture {
            let flags = flags_from(&freq.state, freq.kind.flags_allowed(), freq.kind.name())?;
            let rect = match freq.pos {
                Some(p) => {
                    let (w, h) = freq.kind.spec().size;
                    let r = Rect::new(rr.x + p.x, rr.y + p.y, w, h);
                    if !placer.fits(&rr, &r) {
                        return Err(Error::Generation(format!("{} does not fit at {p}", freq.kind)));
                    }
                    r
                }
                None => (0..PLACEMENT_TRIES)
                    .find_map(|_| {
                        random_rect_in(&rr, footprint(freq.kind, rng), rng).filter(|r| placer.fits(&rr, r))
                    })
                    .ok_or_else(|| Error::Generation(format!("no space for {} in {}", freq.kind, room.kind)))?,
            };
            placer.mark(&rect);
            let fi = b.furniture(freq.kind, rect, flags);
            placed.push((fi, rect));
            for o in &freq.objects {
                let oflags = flags_from(&o.state, o.kind.flags_allowed(), o.kind.name())?;
                pending_objects.push((o.kind, fi, rect, oflags));
            }
        }
    }

    let avoid_fur = |f: FurnitureType| avoid.contains(&AssetType::Furniture(f));
    for _ in 0..cfg.num_extra_furniture {
        let k = rng.random_range(0..n_rooms);
        let rk = kinds[k];
        let options: Vec<FurnitureType> = FurnitureType::all()
            .filter(|f| f.spec().rooms.contains(&rk) && !avoid_fur(*f))
            .collect();
        let Some(&kind) = options.choose(rng) else { continue };
        let rr = room_rect(k);
        if let Some(rect) =
            (0..PLACEMENT_TRIES).find_map(|_| random_rect_in(&rr, footprint(kind, rng), rng).filter(|r| placer.fits(&rr, r)))
        {
            placer.mark(&rect);
            let fi = b.furniture(kind, rect, StateFlags::EMPTY);
            placed.push((fi, rect));
        }
    }

    // Objects go on footprint cells with at least one open neighbour.
    let cells: Vec<Cell> = {
        let probe = b.build()?;
        (0..cfg.height)
            .flat_map(|y| (0..cfg.width).map(move |x| GridPos::new(x, y)))
            .map(|p| probe.layout().cell(p).expect("in bounds"))
            .collect()
    };
    let walkable = |p: GridPos| {
        let i = usize::from(p.y) * usize::from(cfg.width) + usize::from(p.x);
        !placer.occupied[i] && !matches!(cells[i], Cell::Wall)
    };
    let mut used = std::collections::HashSet::new();
    let mut reachable_cell = |rect: &Rect, rng: &mut Rng| -> Option<GridPos> {
        let mut opts: Vec<GridPos> = rect
            .cells()
            .filter(|p| !used.contains(p))
            .filter(|p| Direction::ALL.iter().any(|d| p.step(*d).is_some_and(|q| q.x < cfg.width && q.y < cfg.height && walkable(q))))
            .collect();
        opts.shuffle(rng);
        let p = opts.first().copied()?;
        used.insert(p);
        Some(p)
    };
    for (kind, fi, rect, flags) in pending_objects {
        let p = reachable_cell(&rect, rng)
            .ok_or_else(|| Error::Generation(format!("no reachable cell for {kind}")))?;
        b.object(kind, fi, Some(p), flags);
    }
    let receptacles: Vec<(usize, Rect)> = placed
        .iter()
        .copied()
        .filter(|(fi, _)| b.furniture_kind(*fi).spec().receptacle)
        .collect();
    let extra_objs: Vec<ObjectType> = ObjectType::all()
        .filter(|o| !avoid.contains(&AssetType::Object(*o)))
        .collect();
    for _ in 0..cfg.num_extra_objects {
        let Some(&kind) = extra_objs.choose(rng) else { break };
        let Some(&(fi, rect)) = receptacles.choose(rng) else { break };
        if let Some(p) = reachable_cell(&rect, rng) {
            b.object(kind, fi, Some(p), StateFlags::EMPTY);
        }
    }

    let world = b.build()?;
    if !walkable_connected(&world) {
        return Err(Error::Generation("furniture splits the walkable area".into()));
    }
    Ok(world)
}

fn walkable_connected(w: &WorldState) -> bool {
    let layout = w.layout();
    let all: Vec<GridPos> = (0..w.height())
        .flat_map(|y| (0..w.width()).map(move |x| GridPos::new(x, y)))
        .filter(|p| layout.walkable(*p))
        .collect();
    let Some(&start) = all.first() else { return false };
    let mut seen = std::collections::HashSet::from([start]);
    let mut stack = vec![start];
    while let Some(p) = stack.pop() {
        for d in Direction::ALL {
            if let Some(q) = p.step(d) {
                if layout.walkable(q) && seen.insert(q) {
                    stack.push(q);
                }
            }
        }
    }
    seen.len() == all.len()
}

const GENERATION_RETRIES: usize = 100;

/// Build an environment (without agents) from `cfg`.
pub fn generate_env(cfg: &EnvConfig, seed: u64) -> Result<WorldState> {
    generate_env_avoiding(cfg, &[], seed)
}

fn generate_env_avoiding(cfg: &EnvConfig, avoid: &[AssetType], seed: u64) -> Result<WorldState> {
    let mut avoid = avoid.to_vec();
    avoid.extend(cfg.required_types());
    let mut last = None;
    for attempt in 0..GENERATION_RETRIES {
        let mut r = rng::rng_at(seed, &[attempt as u64]);
        match try_generate(cfg, &avoid, &mut r) {
            Ok(w) => return Ok(w),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Generation("no attempts made".into())))
}

/// Random start pose in one of the config's start rooms.
pub fn random_start(env: &WorldState, cfg: &EnvConfig, rng: &mut Rng) -> Result<AgentPose> {
    let layout = env.layout();
    let cells: Vec<GridPos> = (0..env.height())
        .flat_map(|y| (0..env.width()).map(move |x| GridPos::new(x, y)))
        .filter(|p| layout.walkable(*p) && matches!(layout.cell(*p), Some(Cell::Floor(_))))
        .filter(|p| {
            cfg.agent_start_rooms.is_empty()
                || layout.room_at(*p).is_some_and(|r| cfg.agent_start_rooms.contains(&r.kind))
        })
        .filter(|p| env.agents().values().all(|a| a.pos != *p))
        .collect();
    let pos = *cells
        .choose(rng)
        .ok_or_else(|| Error::Generation("no free start cell".into()))?;
    Ok(AgentPose {
        pos,
        dir: Direction::ALL[rng.random_range(0..4)],
        carrying: None,
    })
}

pub fn with_agent(env: &WorldState, agent: AgentId, pose: AgentPose) -> Result<WorldState> {
    Ok(env.with_agents(BTreeMap::from([(agent, pose)]))?)
}

pub const AGENT_A: AgentId = AgentId(0);
pub const AGENT_B: AgentId = AgentId(1);

/// A paired episode: both agents act, separately, in the same environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: usize,
    pub scenario: String,
    pub env_index: usize,
    pub env_seed: u64,
    pub seed: u64,
    pub a: Trajectory,
    pub b: Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Test,
    TrainIndist,
    TrainProc,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(Split::Test),
            "train-indist" => Ok(Split::TrainIndist),
            "train-proc" => Ok(Split::TrainProc),
            _ => Err(Error::Usage(format!("unknown split {s:?}"))),
        }
    }
}

/// How many environments and paired trajectories to produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub scenario: String,
    pub split: Split,
    pub n_envs: usize,
    pub per_env: usize,
    pub seed: u64,
    /// Preferences of agent A and B; default to their scenario missions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefs_a: Option<MissionPreferences>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefs_b: Option<MissionPreferences>,
}

impl DatasetSpec {
    /// Split sizes: 10 × 50 test pairs, 10 × 500 in-distribution training
    /// pairs in the test environments, 5000 × 1 procedural training pairs.
    pub fn for_split(scenario: &str, split: Split, seed: u64) -> Self {
        let (n_envs, per_env) = match split {
            Split::Test => (10, 50),
            Split::TrainIndist => (10, 500),
            Split::TrainProc => (5000, 1),
        };
        DatasetSpec {
            scenario: scenario.into(),
            split,
            n_envs,
            per_env,
            seed,
            prefs_a: None,
            prefs_b: None,
        }
    }

    pub fn len(&self) -> usize {
        self.n_envs * self.per_env
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Environment seeds. In-distribution training reuses the test
    /// environments of the same base seed.
    pub fn env_seed(&self, env_index: usize) -> u64 {
        let stream = match self.split {
            Split::Test | Split::TrainIndist => 0,
            Split::TrainProc => 1,
        };
        rng::derive(self.seed, &[rng::label(&self.scenario), stream, env_index as u64])
    }

    fn pair_seed(&self, instance: usize) -> u64 {
        let stream = match self.split {
            Split::Test => 10,
            Split::TrainIndist => 11,
            Split::TrainProc => 12,
        };
        rng::derive(self.seed, &[rng::label(&self.scenario), stream, instance as u64])
    }
}

/// Build the environment for one scenario from its env config, making sure
/// both missions are plannable.
pub fn scenario_env(scenario: &Scenario, cfg: &EnvConfig, seed: u64) -> Result<WorldState> {
    let (ma, mb) = scenario.missions();
    let avoid = mission_types(&[ma, mb]);
    for attempt in 0..GENERATION_RETRIES as u64 {
        let s = rng::derive(seed, &[attempt]);
        let env = generate_env_avoiding(cfg, &avoid, s)?;
        if plannable(&env, cfg, &[ma, mb], s) {
            return Ok(env);
        }
    }
    Err(Error::Generation(format!("{}: no environment admits both missions", scenario.id)))
}

fn mission_types(ms: &[&Mission]) -> Vec<AssetType> {
    let mut v = Vec::new();
    for m in ms {
        for g in &m.subgoals {
            v.extend(g.obj.map(AssetType::Object));
            v.extend(g.fur.map(AssetType::Furniture));
        }
    }
    v
}

fn plannable(env: &WorldState, cfg: &EnvConfig, ms: &[&Mission], seed: u64) -> bool {
    let mut r = rng::rng_at(seed, &[0xfea5]);
    ms.iter().all(|m| {
        let Ok(pose) = random_start(env, cfg, &mut r) else { return false };
        let Ok(w) = with_agent(env, AGENT_A, pose) else { return false };
        let prefs = MissionPreferences::single(&m.name).expect("library mission");
        generate_trajectory(&w, AGENT_A, &prefs, seed).is_ok_and(|t| t.mission == m.name)
    })
}

/// Generate one paired instance in `env`.
pub fn generate_pair(
    scenario: &Scenario,
    cfg: &EnvConfig,
    env: &WorldState,
    prefs_a: &MissionPreferences,
    prefs_b: &MissionPreferences,
    seed: u64,
) -> Result<(Trajectory, Trajectory)> {
    let mut r = rng::rng_at(seed, &[0]);
    let _ = scenario;
    let pa = random_start(env, cfg, &mut r)?;
    let pb = random_start(env, cfg, &mut r)?;
    let a = generate_trajectory(&with_agent(env, AGENT_A, pa)?, AGENT_A, prefs_a, rng::derive(seed, &[1]))?;
    let b = generate_trajectory(&with_agent(env, AGENT_B, pb)?, AGENT_B, prefs_b, rng::derive(seed, &[2]))?;
    Ok((a, b))
}

/// Generate a dataset in memory. Instances are independent and generated in
/// parallel when the `parallel` feature is on.
pub fn generate_instances(spec: &DatasetSpec, cfg: &EnvConfig) -> Result<Vec<Instance>> {
    let scenario = crate::behavior::scenario(&spec.scenario)
        .ok_or_else(|| Error::Usage(format!("unknown scenario {:?}", spec.scenario)))?;
    let prefs_a = match &spec.prefs_a {
        Some(p) => p.clone(),
        None => MissionPreferences::single(&scenario.mission_a)?,
    };
    let prefs_b = match &spec.prefs_b {
        Some(p) => p.clone(),
        None => MissionPreferences::single(&scenario.mission_b)?,
    };
    let mode = crate::exec::ExecMode::default();
    let envs: Vec<Result<WorldState>> =
        crate::exec::map_indices(mode, spec.n_envs, |e| scenario_env(&scenario, cfg, spec.env_seed(e)));
    let envs: Vec<WorldState> = envs.into_iter().collect::<Result<_>>()?;
    let results = crate::exec::map_indices(mode, spec.len(), |i| {
        let env_index = i / spec.per_env;
        let seed = spec.pair_seed(i);
        generate_pair(&scenario, cfg, &envs[env_index], &prefs_a, &prefs_b, seed).map(|(a, b)| Instance {
            id: i,
            scenario: scenario.id.clone(),
            env_index,
            env_seed: spec.env_seed(env_index),
            seed,
            a,
            b,
        })
    });
    results.into_iter().collect()
}

// ---- persistence ----

const ARRAY_MAGIC: &[u8; 4] = b"WDGA";

/// Binary array file: magic, codebook version (u32), height, width,
/// channels (u16 each), then row-major little-endian i16 values.
pub fn write_grid(path: &Path, g: &Grid) -> Result<()> {
    let mut buf = Vec::with_capacity(14 + g.data.len() * 2);
    buf.extend_from_slice(ARRAY_MAGIC);
    buf.extend_from_slice(&CODEBOOK_VERSION.to_le_bytes());
    buf.extend_from_slice(&g.height.to_le_bytes());
    buf.extend_from_slice(&g.width.to_le_bytes());
    buf.extend_from_slice(&(CHANNELS as u16).to_le_bytes());
    for v in &g.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_grid(path: &Path) -> Result<Grid> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_owned())
        } else {
            Error::io(path, e)
        }
    })?;
    let bad = |reason: &str| Error::Malformed {
        path: path.to_owned(),
        reason: reason.into(),
    };
    if bytes.len() < 14 || &bytes[..4] != ARRAY_MAGIC {
        return Err(bad("not an array file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CODEBOOK_VERSION {
        return Err(Error::CodebookMismatch {
            expected: CODEBOOK_VERSION,
            found: version,
        });
    }
    let h = u16::from_le_bytes([bytes[8], bytes[9]]);
    let w = u16::from_le_bytes([bytes[10], bytes[11]]);
    let c = u16::from_le_bytes([bytes[12], bytes[13]]);
    if usize::from(c) != CHANNELS {
        return Err(bad("wrong channel count"));
    }
    let body = &bytes[14..];
    if body.len() != usize::from(h) * usize::from(w) * CHANNELS * 2 {
        return Err(bad("truncated array"));
    }
    let data = body.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect();
    Ok(Grid {
        height: h,
        width: w,
        data,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub codebook_version: u32,
    pub agent: AgentId,
    pub mission: String,
    pub seed: u64,
    pub actions: Vec<Action>,
    pub audio: Vec<AudioToken>,
    pub language: Vec<Option<Utterance>>,
    pub subgoal_index: Vec<usize>,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, v)?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_owned())
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_owned(),
        reason: e.to_string(),
    })
}

fn step_name(t: usize) -> String {
    format!("{t:06}")
}

/// Write one trajectory: per-step array (`.bin`) and scene graph (`.json`)
/// plus `log.json`.
pub fn save_trajectory(dir: &Path, t: &Trajectory) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, s) in t.states.iter().enumerate() {
        write_grid(&dir.join(format!("{}.bin", step_name(i))), &encode_array(s))?;
        let sg = dir.join(format!("{}.json", step_name(i)));
        fs::write(&sg, to_scene_graph(s).to_json()).map_err(|e| Error::io(&sg, e))?;
    }
    write_json(
        &dir.join("log.json"),
        &TrajectoryLog {
            codebook_version: CODEBOOK_VERSION,
            agent: t.agent,
            mission: t.mission.clone(),
            seed: t.seed,
            actions: t.actions.clone(),
            audio: t.audio.clone(),
            language: t.language.clone(),
            subgoal_index: t.subgoal_index.clone(),
        },
    )
}

/// Read a trajectory back and re-check every transition.
pub fn load_trajectory(dir: &Path) -> Result<Trajectory> {
    let log: TrajectoryLog = read_json(&dir.join("log.json"))?;
    if log.codebook_version != CODEBOOK_VERSION {
        return Err(Error::CodebookMismatch {
            expected: CODEBOOK_VERSION,
            found: log.codebook_version,
        });
    }
    let mut states = Vec::with_capacity(log.actions.len() + 1);
    for i in 0..=log.actions.len() {
        let path = dir.join(format!("{}.bin", step_name(i)));
        let grid = read_grid(&path)?;
        let state = decode_array(&grid).map_err(|e| Error::TransitionMismatch {
            path: path.clone(),
            step: i,
            reason: e.to_string(),
        })?;
        states.push(state);
    }
    // Share one layout across steps when they agree, as generation does.
    if let Some(first) = states.first().cloned() {
        for s in states.iter_mut().skip(1) {
            if s.layout() == first.layout() {
                *s = WorldState::new(
                    Arc::clone(first.layout_arc()),
                    s.furniture_flags().to_vec(),
                    s.objects().to_vec(),
                    s.agents().clone(),
                )?;
            }
        }
    }
    let t = Trajectory {
        agent: log.agent,
        mission: log.mission,
        seed: log.seed,
        states,
        actions: log.actions,
        audio: log.audio,
        language: log.language,
        subgoal_index: log.subgoal_index,
    };
    t.validate().map_err(|(step, reason)| Error::TransitionMismatch {
        path: dir.to_owned(),
        step,
        reason,
    })?;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub codebook_version: u32,
    pub mission_library_version: u32,
    pub env_config_version: u32,
    pub spec: DatasetSpec,
    pub env_config: EnvConfig,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: usize,
    pub scenario: String,
    pub env_index: usize,
    pub env_seed: u64,
    pub seed: u64,
    pub query: crate::world::StatePredicate,
    pub question: String,
    /// Subdirectory names of agents A and B.
    pub agent_a: String,
    pub agent_b: String,
}

pub fn instance_dir(root: &Path, id: usize) -> PathBuf {
    root.join("instances").join(step_name(id))
}

fn agent_dirs(inst: &Instance) -> (String, String) {
    let a = inst.a.mission.clone();
    let mut b = inst.b.mission.clone();
    if b == a {
        b.push_str("-b");
    }
    (a, b)
}

pub fn save_instance(root: &Path, inst: &Instance, scenario: &Scenario) -> Result<()> {
    let dir = instance_dir(root, inst.id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let (da, db) = agent_dirs(inst);
    save_trajectory(&dir.join(&da), &inst.a)?;
    save_trajectory(&dir.join(&db), &inst.b)?;
    write_json(
        &dir.join("instance.json"),
        &InstanceRecord {
            id: inst.id,
            scenario: inst.scenario.clone(),
            env_index: inst.env_index,
            env_seed: inst.env_seed,
            seed: inst.seed,
            query: scenario.query,
            question: scenario.question.clone(),
            agent_a: da,
            agent_b: db,
        },
    )
}

pub fn load_instance(dir: &Path) -> Result<(InstanceRecord, Instance)> {
    let rec: InstanceRecord = read_json(&dir.join("instance.json"))?;
    let a = load_trajectory(&dir.join(&rec.agent_a))?;
    let b = load_trajectory(&dir.join(&rec.agent_b))?;
    let inst = Instance {
        id: rec.id,
        scenario: rec.scenario.clone(),
        env_index: rec.env_index,
        env_seed: rec.env_seed,
        seed: rec.seed,
        a,
        b,
    };
    Ok((rec, inst))
}

/// Generate and write a whole dataset under `root`.
pub fn generate_dataset(spec: &DatasetSpec, cfg: &EnvConfig, root: &Path) -> Result<Manifest> {
    let scenario = crate::behavior::scenario(&spec.scenario)
        .ok_or_else(|| Error::Usage(format!("unknown scenario {:?}", spec.scenario)))?;
    let instances = generate_instances(spec, cfg)?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let cb = root.join("codebook.json");
    fs::write(&cb, Codebook::current().to_json()).map_err(|e| Error::io(&cb, e))?;
    let errs: Vec<Result<()>> = crate::exec::map_slice(crate::exec::ExecMode::default(), &instances, |inst| {
        save_instance(root, inst, &scenario).map_err(|e| match e {
            Error::Io { path, source } => Error::Generation(format!(
                "instance {}: write {} failed: {source}",
                inst.id,
                path.display()
            )),
            other => other,
        })
    });
    errs.into_iter().collect::<Result<Vec<()>>>()?;
    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        codebook_version: CODEBOOK_VERSION,
        mission_library_version: MISSION_LIBRARY_VERSION,
        env_config_version: ENV_CONFIG_VERSION,
        spec: spec.clone(),
        env_config: cfg.clone(),
        instances: instances.len(),
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(root: &Path) -> Result<Manifest> {
    let m: Manifest = read_json(&root.join("manifest.json"))?;
    if m.codebook_version != CODEBOOK_VERSION {
        return Err(Error::CodebookMismatch {
            expected: CODEBOOK_VERSION,
            found: m.codebook_version,
        });
    }
    Ok(m)
}

/// Load every instance of a dataset, in id order.
pub fn load_dataset(root: &Path) -> Result<(Manifest, Vec<Instance>)> {
    let m = load_manifest(root)?;
    let ids: Vec<usize> = (0..m.instances).collect();
    let loaded = crate::exec::map_slice(crate::exec::ExecMode::default(), &ids, |&i| {
        load_instance(&instance_dir(root, i)).map(|(_, inst)| inst)
    });
    let instances = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((m, instances))
}
