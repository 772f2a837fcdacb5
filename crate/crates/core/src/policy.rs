//! Learned agent models.
//!
//! Each model is a behavioural-cloning table: a digest of what the agent sees
//! (optionally paired with its current subgoal) maps to counts of the action
//! it took. Predictions are ε-smoothed relative frequencies, so every action
//! keeps some mass and unseen keys fall back to uniform. The
//! [`ActionModel`] trait is the seam where a neural model could be swapped in.
//!
//! The visual part of a key is the egocentric `k × k` window of the array
//! encoding: centred on the agent and rotated so that it faces up. The
//! agent's own cell holds whatever it carries, and the faced cell lies inside
//! the window for `k >= 3`, so carried and facing entities are part of the
//! digest.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::Hasher;
use std::path::Path;
use std::str::FromStr;

use fnv::{FnvHashMap, FnvHasher};
use serde::{Deserialize, Serialize};

use crate::behavior::{mission, Subgoal};
use crate::codebook::CODEBOOK_VERSION;
use crate::error::{Error, Result};
use crate::evidence::{AudioMap, AudioToken, Observation};
use crate::planner::Trajectory;
use crate::world::{ActionKind, AgentId, CellSource, Direction, GridPos, CH_AGENT, CH_DIR};

pub type ActionDist = [f64; ActionKind::COUNT];

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_EPSILON: f64 = 0.1;
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Which evidence streams a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "vision")]
    Vision,
    #[serde(rename = "vision+audio")]
    VisionAudio,
    #[serde(rename = "vision+language")]
    VisionLanguage,
    #[serde(rename = "all")]
    All,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Vision, Variant::VisionAudio, Variant::VisionLanguage, Variant::All];

    pub fn uses_audio(self) -> bool {
        matches!(self, Variant::VisionAudio | Variant::All)
    }

    pub fn uses_language(self) -> bool {
        matches!(self, Variant::VisionLanguage | Variant::All)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vision => "vision",
            Variant::VisionAudio => "vision+audio",
            Variant::VisionLanguage => "vision+language",
            Variant::All => "all",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vision" => Ok(Variant::Vision),
            "vision+audio" => Ok(Variant::VisionAudio),
            "vision+language" | "vision+lang" => Ok(Variant::VisionLanguage),
            "all" | "vision+audio+language" => Ok(Variant::All),
            _ => Err(Error::Usage(format!("unknown variant {s:?}"))),
        }
    }
}

/// Digest of one observation context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureKey(pub u64);

/// Hash the `k × k` window centred on `pos`, rotated so the agent faces up,
/// and, when given, a subgoal name. Absolute heading is not part of the key.
/// Out-of-bounds cells hash as a fixed sentinel.
pub fn feature_key<S: CellSource + ?Sized>(
    src: &S,
    pos: GridPos,
    dir: Direction,
    k: usize,
    subgoal: Option<&str>,
) -> FeatureKey {
    let (w, h) = src.dims();
    let r = (k / 2) as i32;
    let (fx, fy) = dir.delta();
    let (rx, ry) = dir.right().delta();
    let mut hasher = FnvHasher::default();
    hasher.write_u8(k as u8);
    for ahead in (-r..=r).rev() {
        for side in -r..=r {
            let x = i32::from(pos.x) + ahead * fx + side * rx;
            let y = i32::from(pos.y) + ahead * fy + side * ry;
            if x < 0 || y < 0 || x >= i32::from(w) || y >= i32::from(h) {
                hasher.write_i16(i16::MIN);
                continue;
            }
            let c = src.channels(GridPos::new(x as u16, y as u16));
            for v in &c[..CH_DIR] {
                hasher.write_i16(*v);
            }
        }
    }
    if let Some(g) = subgoal {
        hasher.write_u8(0xff);
        hasher.write(g.as_bytes());
    }
    FeatureKey(hasher.finish())
}

/// Locate `agent` in an array observation.
fn find_agent<S: CellSource + ?Sized>(src: &S, agent: AgentId) -> Option<(GridPos, Direction)> {
    let (w, h) = src.dims();
    let code = i16::from(agent.0) + 1;
    (0..h)
        .flat_map(|y| (0..w).map(move |x| GridPos::new(x, y)))
        .find_map(|p| {
            let c = src.channels(p);
            (c[CH_AGENT] == code).then(|| Direction::from_code(c[CH_DIR]).map(|d| (p, d))).flatten()
        })
}

/// Anything that yields an action distribution for an agent's view.
pub trait ActionModel: Sync {
    fn variant(&self) -> Variant;

    /// Distribution over action kinds for `agent` in `src`. `subgoal` is
    /// ignored by vision-only variants.
    fn predict_view(&self, src: &dyn CellSource, pos: GridPos, dir: Direction, subgoal: Option<&str>) -> ActionDist;

    /// Sample the subgoal that follows `current`, if the model tracks them.
    fn next_subgoal(&self, current: &str, u: f64) -> Option<&Subgoal>;

    fn subgoal(&self, name: &str) -> Option<&Subgoal>;
}

pub fn uniform() -> ActionDist {
    [1.0 / ActionKind::COUNT as f64; ActionKind::COUNT]
}

/// Bayes update of `prior` with a deterministic audio likelihood. When no
/// prior mass survives, the result is uniform over the actions consistent
/// with the token.
pub fn fuse_audio(prior: &ActionDist, token: AudioToken, map: &AudioMap) -> ActionDist {
    let mut post = [0.0; ActionKind::COUNT];
    let mut total = 0.0;
    for k in ActionKind::ALL {
        let v = map.likelihood(token, k) * prior[k.index()];
        post[k.index()] = v;
        total += v;
    }
    if total > 0.0 {
        post.iter_mut().for_each(|v| *v /= total);
        return post;
    }
    let consistent: Vec<ActionKind> = ActionKind::ALL
        .into_iter()
        .filter(|k| map.likelihood(token, *k) > 0.0)
        .collect();
    if consistent.is_empty() {
        return *prior;
    }
    let mut out = [0.0; ActionKind::COUNT];
    for k in &consistent {
        out[k.index()] = 1.0 / consistent.len() as f64;
    }
    out
}

/// ε-smoothed count table.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub variant: Variant,
    pub k: usize,
    pub epsilon: f64,
    pub codebook_version: u32,
    pub trajectories: usize,
    table: FnvHashMap<FeatureKey, [u32; ActionKind::COUNT]>,
    /// Observed subgoal transitions, by name.
    successors: BTreeMap<String, BTreeMap<String, u32>>,
    subgoals: BTreeMap<String, Subgoal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub k: usize,
    pub epsilon: f64,
}

impl TrainConfig {
    pub fn new(variant: Variant) -> Self {
        TrainConfig {
            variant,
            k: DEFAULT_K,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// One labelled step: the key under which `action` was taken.
fn labelled_steps(t: &Trajectory, cfg: &TrainConfig) -> Result<Vec<(FeatureKey, ActionKind)>> {
    let m = mission(&t.mission)?;
    let mut out = Vec::with_capacity(t.len());
    for (i, a) in t.actions.iter().enumerate() {
        let state = &t.states[i];
        let pose = state
            .agent(t.agent)
            .ok_or(crate::world::WorldError::UnknownAgent(t.agent))?;
        let g = cfg
            .variant
            .uses_language()
            .then(|| m.subgoals[t.subgoal_index[i]].name.as_str());
        out.push((feature_key(state, pose.pos, pose.dir, cfg.k, g), a.kind));
    }
    Ok(out)
}

/// Fit a model. Counts are sums, so the result does not depend on dataset
/// order.
pub fn train(dataset: &[Trajectory], cfg: &TrainConfig) -> Result<PolicyModel> {
    if dataset.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    if cfg.k == 0 || cfg.k % 2 == 0 {
        return Err(Error::Usage(format!("window size must be odd, got {}", cfg.k)));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(Error::Usage(format!("smoothing must be positive, got {}", cfg.epsilon)));
    }
    let mut model = PolicyModel {
        variant: cfg.variant,
        k: cfg.k,
        epsilon: cfg.epsilon,
        codebook_version: CODEBOOK_VERSION,
        trajectories: 0,
        table: FnvHashMap::default(),
        successors: BTreeMap::new(),
        subgoals: BTreeMap::new(),
    };
    let per_traj = crate::exec::map_slice(crate::exec::ExecMode::default(), dataset, |t| labelled_steps(t, cfg));
    for (t, steps) in dataset.iter().zip(per_traj) {
        for (key, kind) in steps? {
            model.table.entry(key).or_insert([0; ActionKind::COUNT])[kind.index()] += 1;
        }
        model.add_subgoals(t)?;
        model.trajectories += 1;
    }
    Ok(model)
}

impl PolicyModel {
    fn add_subgoals(&mut self, t: &Trajectory) -> Result<()> {
        let m = mission(&t.mission)?;
        let mut prev: Option<usize> = None;
        for &i in &t.subgoal_index {
            let g = &m.subgoals[i];
            self.subgoals.entry(g.name.clone()).or_insert_with(|| g.clone());
            if let Some(p) = prev.filter(|p| *p != i) {
                *self
                    .successors
                    .entry(m.subgoals[p].name.clone())
                    .or_default()
                    .entry(g.name.clone())
                    .or_default() += 1;
            }
            prev = Some(i);
        }
        Ok(())
    }

    pub fn keys(&self) -> usize {
        self.table.len()
    }

    pub fn counts(&self, key: FeatureKey) -> Option<&[u32; ActionKind::COUNT]> {
        self.table.get(&key)
    }

    /// Smoothed distribution for a key; uniform when unseen.
    pub fn predict_key(&self, key: FeatureKey) -> ActionDist {
        let Some(c) = self.table.get(&key) else {
            return uniform();
        };
        let n: u32 = c.iter().sum();
        let denom = f64::from(n) + self.epsilon * ActionKind::COUNT as f64;
        let mut d = [0.0; ActionKind::COUNT];
        for (i, v) in c.iter().enumerate() {
            d[i] = (f64::from(*v) + self.epsilon) / denom;
        }
        d
    }

    /// Distribution for `agent` given an array observation and, for
    /// language-conditioned variants, its current subgoal.
    pub fn predict(&self, o: &Observation, agent: AgentId, g: Option<&Subgoal>) -> Result<ActionDist> {
        if self.variant.uses_language() && g.is_none() {
            return Err(Error::Usage(format!("{} model needs a subgoal", self.variant)));
        }
        let Some((pos, dir)) = find_agent(&o.visual, agent) else {
            return Err(crate::world::WorldError::UnknownAgent(agent).into());
        };
        Ok(self.predict_view(&o.visual, pos, dir, g.map(|g| g.name.as_str())))
    }

    /// Fraction of steps where the arg-max prediction equals the action taken.
    pub fn accuracy(&self, held_out: &[Trajectory]) -> Result<f64> {
        let cfg = TrainConfig {
            variant: self.variant,
            k: self.k,
            epsilon: self.epsilon,
        };
        let mut hits = 0usize;
        let mut total = 0usize;
        for t in held_out {
            for (key, kind) in labelled_steps(t, &cfg)? {
                total += 1;
                hits += usize::from(argmax(&self.predict_key(key)) == kind);
            }
        }
        Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&ModelFile::from(self))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<PolicyModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.codebook_version != CODEBOOK_VERSION {
            return Err(Error::CodebookMismatch {
                expected: CODEBOOK_VERSION,
                found: file.codebook_version,
            });
        }
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Malformed {
                path: path.into(),
                reason: format!("model format {} is not {MODEL_FORMAT_VERSION}", file.format_version),
            });
        }
        Ok(file.into())
    }
}

impl ActionModel for PolicyModel {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn predict_view(&self, src: &dyn CellSource, pos: GridPos, dir: Direction, subgoal: Option<&str>) -> ActionDist {
        let g = if self.variant.uses_language() { subgoal } else { None };
        self.predict_key(feature_key(src, pos, dir, self.k, g))
    }

    fn next_subgoal(&self, current: &str, u: f64) -> Option<&Subgoal> {
        let next = self.successors.get(current)?;
        let total: u32 = next.values().sum();
        let mut target = u * f64::from(total);
        for (name, c) in next {
            target -= f64::from(*c);
            if target < 0.0 {
                return self.subgoals.get(name);
            }
        }
        next.keys().last().and_then(|n| self.subgoals.get(n))
    }

    fn subgoal(&self, name: &str) -> Option<&Subgoal> {
        self.subgoals.get(name)
    }
}

pub fn argmax(d: &ActionDist) -> ActionKind {
    let mut best = 0;
    for i in 1..d.len() {
        if d[i] > d[best] {
            best = i;
        }
    }
    ActionKind::ALL[best]
}

/// Per-variant training summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: Variant,
    pub trajectories: usize,
    pub keys: usize,
    /// `None` when no held-out trajectories were given.
    pub held_out_accuracy: Option<f64>,
}

/// Train on `train` and score next-action accuracy on `held_out`.
pub fn train_with_report(train_set: &[Trajectory], held_out: &[Trajectory], cfg: &TrainConfig) -> Result<(PolicyModel, TrainReport)> {
    let model = train(train_set, cfg)?;
    let report = TrainReport {
        variant: cfg.variant,
        trajectories: model.trajectories,
        keys: model.keys(),
        held_out_accuracy: if held_out.is_empty() {
            None
        } else {
            Some(model.accuracy(held_out)?)
        },
    };
    Ok((model, report))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    codebook_version: u32,
    variant: Variant,
    k: usize,
    epsilon: f64,
    trajectories: usize,
    subgoals: Vec<Subgoal>,
    successors: BTreeMap<String, BTreeMap<String, u32>>,
    /// Sorted by key so files are byte-stable.
    table: Vec<(u64, [u32; ActionKind::COUNT])>,
}

impl From<&PolicyModel> for ModelFile {
    fn from(m: &PolicyModel) -> Self {
        let mut table: Vec<_> = m.table.iter().map(|(k, v)| (k.0, *v)).collect();
        table.sort_unstable_by_key(|e| e.0);
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            codebook_version: m.codebook_version,
            variant: m.variant,
            k: m.k,
            epsilon: m.epsilon,
            trajectories: m.trajectories,
            subgoals: m.subgoals.values().cloned().collect(),
            successors: m.successors.clone(),
            table,
        }
    }
}

impl From<ModelFile> for PolicyModel {
    fn from(f: ModelFile) -> Self {
        PolicyModel {
            variant: f.variant,
            k: f.k,
            epsilon: f.epsilon,
            codebook_version: f.codebook_version,
            trajectories: f.trajectories,
            table: f.table.into_iter().map(|(k, v)| (FeatureKey(k), v)).collect(),
            successors: f.successors,
            subgoals: f.subgoals.into_iter().map(|g| (g.name.clone(), g)).collect(),
        }
    }
}

/// A model that ignores its input: handy as the untrained baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedModel {
    pub dist: ActionDist,
}

impl FixedModel {
    pub fn uniform() -> Self {
        FixedModel { dist: uniform() }
    }
}

impl ActionModel for FixedModel {
    fn variant(&self) -> Variant {
        Variant::Vision
    }

    fn predict_view(&self, _: &dyn CellSource, _: GridPos, _: Direction, _: Option<&str>) -> ActionDist {
        self.dist
    }

    fn next_subgoal(&self, _: &str, _: f64) -> Option<&Subgoal> {
        None
    }

    fn subgoal(&self, _: &str) -> Option<&Subgoal> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_examples() {
        let map = AudioMap::default();
        let mut prior = [0.0; ActionKind::COUNT];
        for k in [ActionKind::TurnLeft, ActionKind::TurnRight, ActionKind::Forward, ActionKind::Pickup] {
            prior[k.index()] = 0.25;
        }
        let post = fuse_audio(&prior, AudioToken::Step, &map);
        for k in [ActionKind::TurnLeft, ActionKind::TurnRight, ActionKind::Forward] {
            assert!((post[k.index()] - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(post[ActionKind::Pickup.index()], 0.0);

        let mut half = [0.0; ActionKind::COUNT];
        half[ActionKind::Forward.index()] = 0.5;
        half[ActionKind::Pickup.index()] = 0.5;
        let post = fuse_audio(&half, AudioToken::Pickup, &map);
        assert_eq!(post[ActionKind::Pickup.index()], 1.0);
    }

    #[test]
    fn zero_mass_falls_back_to_consistent_actions() {
        let map = AudioMap::default();
        let mut prior = [0.0; ActionKind::COUNT];
        prior[ActionKind::Pickup.index()] = 1.0;
        let post = fuse_audio(&prior, AudioToken::Step, &map);
        assert!((post[ActionKind::Forward.index()] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(post[ActionKind::Pickup.index()], 0.0);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(serde_json::from_str::<Variant>(&json).unwrap(), v);
        }
        assert_eq!("vision+lang".parse::<Variant>().unwrap(), Variant::VisionLanguage);
    }
}
