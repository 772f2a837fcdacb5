//! Monte Carlo "whodunit" inference.
//!
//! For each agent the engine restarts from its state at the evidence cutoff,
//! samples actions from that agent's learned model and advances the true
//! transition function until the query holds or the horizon runs out. The two
//! hit rates are turned into a verdict with a two-way softmax.
//!
//! Rollout `i` always draws from the sub-seed `derive(seed, [i])`, so
//! estimates do not depend on thread scheduling and competing methods see
//! common random numbers.
//!
//! The LLM baseline lives here too: a prompt renderer over scene graphs, a
//! parser for the numeric answer and a pluggable completion client.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::behavior::{Scenario, Subgoal};
use crate::error::{Error, Result};
use crate::evidence::{AudioMap, AudioToken};
use crate::exec::{self, ExecMode};
use crate::planner::Trajectory;
use crate::policy::{fuse_audio, ActionDist, ActionModel};
use crate::procgen::Instance;
use crate::rng;
use crate::world::{to_scene_graph, ActionKind, AgentId, NodeKind, SceneGraph, StatePredicate, WorldState};

pub const DEFAULT_ROLLOUTS: usize = 100;
pub const DEFAULT_ETA: f64 = 5.0;

/// How many steps a rollout may take.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Horizon {
    /// The same cap for every rollout.
    Fixed { steps: usize },
    /// The steps the agent actually had left in the observed episode, scaled
    /// and padded: `ceil(scale · (T − τ)) + extra`.
    Remaining { scale: f64, extra: usize },
}

impl Horizon {
    pub fn steps(&self, remaining: usize) -> usize {
        match *self {
            Horizon::Fixed { steps } => steps,
            Horizon::Remaining { scale, extra } => (scale * remaining as f64).ceil() as usize + extra,
        }
    }
}

impl Default for Horizon {
    fn default() -> Self {
        Horizon::Remaining { scale: 1.0, extra: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub m: usize,
    pub eta: f64,
    pub horizon: Horizon,
    pub seed: u64,
    #[serde(default)]
    pub exec: ExecMode,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            m: DEFAULT_ROLLOUTS,
            eta: DEFAULT_ETA,
            horizon: Horizon::default(),
            seed: 0,
            exec: ExecMode::default(),
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Usage("rollout count must be at least 1".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Usage(format!("temperature must be positive, got {}", self.eta)));
        }
        if let Horizon::Fixed { steps: 0 } = self.horizon {
            return Err(Error::Usage("horizon cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// What the rollout engine is told about the cutoff step besides the state.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CutoffEvidence {
    /// Sound heard at the cutoff step.
    pub audio: Option<AudioToken>,
    /// Name of the latest announced subgoal.
    pub intent: Option<String>,
}

impl CutoffEvidence {
    pub fn from_trajectory(t: &Trajectory, tau: usize) -> Self {
        CutoffEvidence {
            audio: Some(t.audio[tau]),
            intent: t.current_intent(tau).map(|u| u.subgoal.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reach {
    pub hits: usize,
    pub m: usize,
}

impl Reach {
    pub fn fraction(&self) -> f64 {
        self.hits as f64 / self.m as f64
    }
}

fn sample(d: &ActionDist, u: f64) -> ActionKind {
    let mut acc = 0.0;
    for (i, p) in d.iter().enumerate() {
        acc += p;
        if u < acc {
            return ActionKind::ALL[i];
        }
    }
    ActionKind::ALL[d.iter().rposition(|p| *p > 0.0).unwrap_or(ActionKind::COUNT - 1)]
}

/// Move past subgoals that already hold, following the model's learned
/// successors.
fn advance<'m>(model: &'m dyn ActionModel, state: &WorldState, mut g: Option<&'m Subgoal>, r: &mut rng::Rng) -> Option<&'m Subgoal> {
    for _ in 0..8 {
        match g {
            Some(cur) if cur.satisfied(state) => g = model.next_subgoal(&cur.name, r.random()).or(Some(cur)),
            _ => break,
        }
    }
    g
}

/// One rollout: true if the query holds within `cap` steps.
fn rollout(
    model: &dyn ActionModel,
    start: &WorldState,
    agent: AgentId,
    evidence: &CutoffEvidence,
    q: &StatePredicate,
    cap: usize,
    seed: u64,
) -> bool {
    let map = AudioMap::default();
    let mut r = rng::rng(seed);
    let mut s = start.clone();
    let lang = model.variant().uses_language();
    let mut g = if lang {
        evidence.intent.as_deref().and_then(|n| model.subgoal(n))
    } else {
        None
    };
    for step in 0..cap {
        if lang {
            g = advance(model, &s, g, &mut r);
        }
        let Some(pose) = s.agent(agent) else { return false };
        let mut d = model.predict_view(&s, pose.pos, pose.dir, g.map(|g| g.name.as_str()));
        if step == 0 && model.variant().uses_audio() {
            if let Some(token) = evidence.audio {
                d = fuse_audio(&d, token, &map);
            }
        }
        let kind = sample(&d, r.random());
        if s.step_kind(agent, kind).is_err() {
            return false;
        }
        if q.check(&s) {
            return true;
        }
    }
    false
}

/// Fraction of `cfg.m` rollouts from `state` that reach `q` within `cap`
/// steps. Returns all hits immediately when `q` already holds.
pub fn estimate_reach(
    model: &dyn ActionModel,
    state: &WorldState,
    agent: AgentId,
    evidence: &CutoffEvidence,
    q: &StatePredicate,
    cfg: &RolloutConfig,
    cap: usize,
) -> Reach {
    if q.check(state) {
        return Reach { hits: cfg.m, m: cfg.m };
    }
    let hits = exec::count_indices(cfg.exec, cfg.m, |i| {
        rollout(model, state, agent, evidence, q, cap, rng::derive(cfg.seed, &[i as u64]))
    });
    Reach { hits, m: cfg.m }
}

/// Two-way softmax with temperature `eta`.
pub fn normalize(raw_a: f64, raw_b: f64, eta: f64) -> (f64, f64) {
    let p_a = 1.0 / (1.0 + (eta * (raw_b - raw_a)).exp());
    (p_a, 1.0 - p_a)
}

/// A scored scenario instance. Agent A is the culprit: its trajectory ends at
/// the first step satisfying the query, and B's never satisfies it.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceTrial {
    pub id: String,
    pub scenario: String,
    pub question: String,
    pub query: StatePredicate,
    pub a: Trajectory,
    pub b: Trajectory,
}

impl InferenceTrial {
    pub fn from_instance(inst: &Instance, scenario: &Scenario) -> Result<Self> {
        let t = inst.a.first_satisfying(&scenario.query).ok_or_else(|| {
            Error::Infeasible(format!("instance {}: agent A never reaches {}", inst.id, scenario.query))
        })?;
        let trial = InferenceTrial {
            id: format!("{}-{:06}", scenario.id, inst.id),
            scenario: scenario.id.clone(),
            question: scenario.question.clone(),
            query: scenario.query.clone(),
            a: inst.a.truncated(t),
            b: inst.b.clone(),
        };
        trial.validate()?;
        Ok(trial)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.first_satisfying(&self.query).is_none() {
            return Err(Error::Usage(format!("trial {}: culprit never satisfies the query", self.id)));
        }
        if self.b.first_satisfying(&self.query).is_some() {
            return Err(Error::Usage(format!("trial {}: both agents satisfy the query", self.id)));
        }
        Ok(())
    }

    /// Exchange the two agents' roles.
    pub fn swapped(&self) -> InferenceTrial {
        InferenceTrial {
            a: self.b.clone(),
            b: self.a.clone(),
            ..self.clone()
        }
    }

    /// Cutoff step for a trajectory fraction, rounded down per agent.
    pub fn cutoffs(&self, frac: f64) -> (usize, usize) {
        (cutoff(self.a.len(), frac), cutoff(self.b.len(), frac))
    }
}

pub fn cutoff(len: usize, frac: f64) -> usize {
    ((frac.clamp(0.0, 1.0) * len as f64 + 1e-9).floor() as usize).min(len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub tau_a: usize,
    pub tau_b: usize,
    pub raw_a: f64,
    pub raw_b: f64,
    pub hits_a: usize,
    pub hits_b: usize,
    pub m: usize,
    pub p_a: f64,
    pub p_b: f64,
}

fn agent_reach(model: &dyn ActionModel, t: &Trajectory, tau: usize, q: &StatePredicate, cfg: &RolloutConfig) -> Reach {
    let cap = cfg.horizon.steps(t.len() - tau);
    let evidence = CutoffEvidence::from_trajectory(t, tau);
    estimate_reach(model, &t.states[tau], t.agent, &evidence, q, cfg, cap)
}

/// Verdict with evidence up to the given per-agent cutoff steps.
pub fn run_trial_at(
    trial: &InferenceTrial,
    model_a: &dyn ActionModel,
    model_b: &dyn ActionModel,
    tau_a: usize,
    tau_b: usize,
    cfg: &RolloutConfig,
) -> Result<Verdict> {
    cfg.validate()?;
    if tau_a > trial.a.len() || tau_b > trial.b.len() {
        return Err(Error::Usage(format!(
            "cutoff ({tau_a}, {tau_b}) beyond trajectory lengths ({}, {})",
            trial.a.len(),
            trial.b.len()
        )));
    }
    let ra = agent_reach(model_a, &trial.a, tau_a, &trial.query, cfg);
    let rb = agent_reach(model_b, &trial.b, tau_b, &trial.query, cfg);
    let (p_a, p_b) = normalize(ra.fraction(), rb.fraction(), cfg.eta);
    Ok(Verdict {
        tau_a,
        tau_b,
        raw_a: ra.fraction(),
        raw_b: rb.fraction(),
        hits_a: ra.hits,
        hits_b: rb.hits,
        m: cfg.m,
        p_a,
        p_b,
    })
}

/// Verdict with evidence up to fraction `frac` of each trajectory.
pub fn run_trial(
    trial: &InferenceTrial,
    model_a: &dyn ActionModel,
    model_b: &dyn ActionModel,
    frac: f64,
    cfg: &RolloutConfig,
) -> Result<Verdict> {
    let (ta, tb) = trial.cutoffs(frac);
    run_trial_at(trial, model_a, model_b, ta, tb, cfg)
}

// ---- LLM baseline ----

pub const PROMPT_HEADERS: [&str; 9] = [
    "Instructions:",
    "Initial State of Target Agent:",
    "Current State of Target Agent:",
    "Initial State of Other Agent:",
    "Current State of Other Agent:",
    "Final State:",
    "Question:",
    "Answer Options:",
    "Strictly follow this response format:",
];

fn graph_without_agents(state: &WorldState) -> SceneGraph {
    let mut g = to_scene_graph(state);
    let agents: Vec<String> = g
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Agent)
        .map(|n| n.id.clone())
        .collect();
    g.nodes.retain(|n| n.kind != NodeKind::Agent);
    g.edges.retain(|e| !agents.contains(&e.from) && !agents.contains(&e.to));
    g
}

/// Render the comparison prompt for cutoff fraction `frac`. The target agent
/// is A. The final state is the culprit's last state with both agents
/// removed, so it names no one.
pub fn build_prompt(trial: &InferenceTrial, frac: f64) -> String {
    let (ta, tb) = trial.cutoffs(frac);
    let final_state = trial.a.states.last().expect("trajectory has states");
    let graph = |s: &WorldState| to_scene_graph(s).to_json();
    let mut p = String::new();
    p.push_str("Instructions:\n");
    p.push_str(
        "You will compare two agents, a target agent and an other agent, who acted separately in the same \
         household. Decide which of them more likely produced the final state of the environment described \
         below.\n\n",
    );
    p.push_str(
        "The states shown are sparse snapshots. Many steps between them are hidden, so important moves may \
         be missing from what you see.\n\n",
    );
    p.push_str(&format!("Initial State of Target Agent: {}\n\n", graph(&trial.a.states[0])));
    p.push_str(&format!("Current State of Target Agent: {}\n\n", graph(&trial.a.states[ta])));
    p.push_str(&format!("Initial State of Other Agent: {}\n\n", graph(&trial.b.states[0])));
    p.push_str(&format!("Current State of Other Agent: {}\n\n", graph(&trial.b.states[tb])));
    p.push_str(&format!("Final State: {}\n\n", graph_without_agents(final_state).to_json()));
    p.push_str(
        "Compare how each agent changed the environment between its initial and current states, then use \
         those changes and the final state to answer the question.\n\n",
    );
    p.push_str(&format!("Question: {}\n\n", trial.question));
    p.push_str("Answer Options:\n");
    p.push_str(
        "Provide an integer between 0 - 100 (where 0 = definitely target agent and 100 = definitely other agent)\n\n",
    );
    p.push_str("Strictly follow this response format:\n\n");
    p.push_str("Reasoning: [step-by-step reasoning]\n");
    p.push_str("Answer: [answer as an integer between 0 and 100 here]\n");
    p
}

/// Scene graphs embedded in a prompt, in section order.
pub fn prompt_graphs(prompt: &str) -> Result<Vec<SceneGraph>> {
    PROMPT_HEADERS[1..6]
        .iter()
        .map(|h| {
            let line = prompt
                .lines()
                .find_map(|l| l.strip_prefix(h))
                .ok_or_else(|| Error::Parse(format!("missing section {h}")))?;
            serde_json::from_str(line.trim()).map_err(Error::from)
        })
        .collect()
}

/// Probability the target agent is the culprit, from the integer after the
/// last `Answer:` marker.
pub fn parse_llm_response(text: &str) -> Result<f64> {
    let idx = text
        .rfind("Answer:")
        .ok_or_else(|| Error::Parse("no `Answer:` marker".into()))?;
    let rest = text[idx + "Answer:".len()..].trim_start();
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return Err(Error::Parse(format!("no integer after `Answer:` in {:?}", rest.lines().next().unwrap_or(""))));
    }
    let x: u32 = digits
        .parse()
        .map_err(|_| Error::Parse(format!("answer {digits} out of range")))?;
    if x > 100 {
        return Err(Error::Parse(format!("answer {x} out of range")));
    }
    Ok(1.0 - f64::from(x) / 100.0)
}

/// Source of completions for the LLM baseline.
pub trait LlmClient {
    fn complete(&self, prompt: &str, n: usize, temperature: f64) -> Result<Vec<String>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmVerdict {
    /// Mean over parseable completions.
    pub p_target: f64,
    pub parsed: usize,
    pub discarded: usize,
}

/// Ask for `n` completions and average the parseable answers.
pub fn llm_verdict(client: &dyn LlmClient, trial: &InferenceTrial, frac: f64, n: usize, temperature: f64) -> Result<LlmVerdict> {
    let prompt = build_prompt(trial, frac);
    let completions = client.complete(&prompt, n, temperature)?;
    let parsed: Vec<f64> = completions.iter().filter_map(|c| parse_llm_response(c).ok()).collect();
    if parsed.is_empty() {
        return Err(Error::Parse(format!("none of {} completions had an answer", completions.len())));
    }
    Ok(LlmVerdict {
        p_target: parsed.iter().sum::<f64>() / parsed.len() as f64,
        parsed: parsed.len(),
        discarded: completions.len() - parsed.len(),
    })
}
