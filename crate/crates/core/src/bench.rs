//! Evaluation harness: accuracy-vs-evidence curves and the reports built on
//! them.
//!
//! Accuracy at a checkpoint is the mean probability a method assigns to the
//! true culprit. The reported half width is the plain `σ / √n` with the
//! population standard deviation over trials.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::behavior::{scenario, Scenario};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::inference::{run_trial, InferenceTrial, RolloutConfig};
use crate::planner::{MissionPreferences, Trajectory};
use crate::policy::{train, ActionModel, PolicyModel, TrainConfig, Variant};
use crate::procgen::{generate_instances, DatasetSpec, EnvConfig, Split};
use crate::rng;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const CHECKPOINTS: usize = 11;

pub fn checkpoints() -> [f64; CHECKPOINTS] {
    std::array::from_fn(|i| i as f64 / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub checkpoints: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub half_width: Vec<f64>,
    pub n: usize,
}

impl AccuracyCurve {
    /// Summarise per-trial scores, `scores[trial][checkpoint]`.
    pub fn from_scores(scores: &[Vec<f64>]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Usage("a curve needs at least one trial".into()));
        }
        let n = scores.len();
        let mut accuracy = Vec::with_capacity(CHECKPOINTS);
        let mut half_width = Vec::with_capacity(CHECKPOINTS);
        for c in 0..CHECKPOINTS {
            let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
            let (mean, sd) = mean_sd(&col);
            accuracy.push(mean);
            half_width.push(sd / (n as f64).sqrt());
        }
        Ok(AccuracyCurve {
            checkpoints: checkpoints().to_vec(),
            accuracy,
            half_width,
            n,
        })
    }

    pub fn at(&self, frac: f64) -> Option<f64> {
        self.checkpoints
            .iter()
            .position(|c| (c - frac).abs() < 1e-9)
            .map(|i| self.accuracy[i])
    }
}

/// Mean and population standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Probability of the true culprit for every trial at every checkpoint.
pub fn trial_scores(
    trials: &[InferenceTrial],
    model_a: &dyn ActionModel,
    model_b: &dyn ActionModel,
    cfg: &RolloutConfig,
) -> Result<Vec<Vec<f64>>> {
    let cps = checkpoints();
    let jobs = trials.len() * CHECKPOINTS;
    // Rollouts inside a job stay sequential; parallelism is across jobs.
    let inner = RolloutConfig {
        exec: ExecMode::Sequential,
        ..cfg.clone()
    };
    let flat = exec::map_indices(cfg.exec, jobs, |j| {
        let (t, c) = (j / CHECKPOINTS, j % CHECKPOINTS);
        let trial_cfg = RolloutConfig {
            seed: rng::derive(cfg.seed, &[t as u64, c as u64]),
            ..inner.clone()
        };
        run_trial(&trials[t], model_a, model_b, cps[c], &trial_cfg).map(|v| v.p_a)
    });
    let flat: Vec<f64> = flat.into_iter().collect::<Result<_>>()?;
    Ok(flat.chunks(CHECKPOINTS).map(<[f64]>::to_vec).collect())
}

pub fn accuracy_curve(
    trials: &[InferenceTrial],
    model_a: &dyn ActionModel,
    model_b: &dyn ActionModel,
    cfg: &RolloutConfig,
) -> Result<AccuracyCurve> {
    AccuracyCurve::from_scores(&trial_scores(trials, model_a, model_b, cfg)?)
}

/// Earliest fraction at which the curve reaches `threshold`, interpolating
/// linearly between checkpoints.
pub fn evidence_to_threshold(curve: &AccuracyCurve, threshold: f64) -> Option<f64> {
    let (xs, ys) = (&curve.checkpoints, &curve.accuracy);
    let first = ys.iter().position(|y| *y >= threshold)?;
    if first == 0 {
        return Some(xs[0]);
    }
    let (x0, x1, y0, y1) = (xs[first - 1], xs[first], ys[first - 1], ys[first]);
    Some(x0 + (threshold - y0) / (y1 - y0) * (x1 - x0))
}

/// Mean step at which agent A first satisfies the query, over `n` generated
/// instances.
pub fn horizon_stats(sc: &Scenario, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Usage("need at least one instance".into()));
    }
    let cfg = EnvConfig::builtin(&sc.id)?;
    let spec = DatasetSpec {
        n_envs: n,
        per_env: 1,
        ..DatasetSpec::for_split(&sc.id, Split::TrainProc, seed)
    };
    let insts = generate_instances(&spec, &cfg)?;
    let mut total = 0usize;
    for inst in &insts {
        total += inst
            .a
            .first_satisfying(&sc.query)
            .ok_or_else(|| Error::Infeasible(format!("instance {} never reaches the query", inst.id)))?;
    }
    Ok(total as f64 / n as f64)
}

/// Sizes of a scenario suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    /// Test trials per scenario, one per test environment.
    pub trials: usize,
    /// Training trajectories per agent, spread over the test environments.
    pub train: usize,
    pub envs: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            trials: 10,
            train: 500,
            envs: 10,
            seed: 0,
        }
    }
}

/// Test trials plus in-distribution training data for one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioSuite {
    pub scenario: Scenario,
    pub trials: Vec<InferenceTrial>,
    pub train_a: Vec<Trajectory>,
    pub train_b: Vec<Trajectory>,
}

/// Build a suite. Training agents follow `prefs_a` / `prefs_b` (defaulting to
/// their own missions); test agents always pursue their own missions.
pub fn prepare_suite(
    sc: &Scenario,
    cfg: &SuiteConfig,
    prefs_a: Option<MissionPreferences>,
    prefs_b: Option<MissionPreferences>,
) -> Result<ScenarioSuite> {
    if cfg.trials == 0 || cfg.envs == 0 || cfg.train == 0 {
        return Err(Error::Usage("suite sizes must be positive".into()));
    }
    let env_cfg = EnvConfig::builtin(&sc.id)?;
    let per_env = cfg.trials.div_ceil(cfg.envs);
    let test = DatasetSpec {
        n_envs: cfg.envs,
        per_env,
        ..DatasetSpec::for_split(&sc.id, Split::Test, cfg.seed)
    };
    let insts = generate_instances(&test, &env_cfg)?;
    // Interleave environments so a short suite still covers all of them.
    let mut trials = Vec::with_capacity(cfg.trials);
    for k in 0..per_env {
        for e in 0..cfg.envs {
            if trials.len() < cfg.trials {
                trials.push(InferenceTrial::from_instance(&insts[e * per_env + k], sc)?);
            }
        }
    }
    let train_spec = DatasetSpec {
        n_envs: cfg.envs,
        per_env: cfg.train.div_ceil(cfg.envs),
        prefs_a,
        prefs_b,
        ..DatasetSpec::for_split(&sc.id, Split::TrainIndist, cfg.seed)
    };
    let mut train_insts = generate_instances(&train_spec, &env_cfg)?;
    train_insts.truncate(cfg.train);
    let (train_a, train_b) = train_insts.into_iter().map(|i| (i.a, i.b)).unzip();
    Ok(ScenarioSuite {
        scenario: sc.clone(),
        trials,
        train_a,
        train_b,
    })
}

impl ScenarioSuite {
    pub fn train_models(&self, variant: Variant) -> Result<(PolicyModel, PolicyModel)> {
        let cfg = TrainConfig::new(variant);
        Ok((train(&self.train_a, &cfg)?, train(&self.train_b, &cfg)?))
    }

    pub fn curve(&self, variant: Variant, cfg: &RolloutConfig) -> Result<AccuracyCurve> {
        let (a, b) = self.train_models(variant)?;
        accuracy_curve(&self.trials, &a, &b, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub curve: AccuracyCurve,
    pub evidence_to_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub methods: Vec<MethodResult>,
}

/// Everything needed to regenerate a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub scenarios: Vec<String>,
    pub methods: Vec<Variant>,
    pub suite: SuiteConfig,
    pub rollout: RolloutConfig,
    pub threshold: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            scenarios: crate::behavior::builtin_scenarios().into_iter().map(|s| s.id).collect(),
            methods: Variant::ALL.to_vec(),
            suite: SuiteConfig::default(),
            rollout: RolloutConfig::default(),
            threshold: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub config: BenchConfig,
    pub scenarios: Vec<ScenarioResult>,
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let mut scenarios = Vec::new();
    for id in &cfg.scenarios {
        let sc = scenario(id).ok_or_else(|| Error::Usage(format!("unknown scenario {id:?}")))?;
        let suite = prepare_suite(&sc, &cfg.suite, None, None)?;
        let mut methods = Vec::new();
        for v in &cfg.methods {
            let curve = suite.curve(*v, &cfg.rollout)?;
            methods.push(MethodResult {
                method: v.name().into(),
                evidence_to_threshold: evidence_to_threshold(&curve, cfg.threshold),
                curve,
            });
        }
        scenarios.push(ScenarioResult {
            scenario: id.clone(),
            methods,
        });
    }
    Ok(BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        scenarios,
    })
}

impl BenchReport {
    /// Long-format plot data: one row per scenario, method and checkpoint.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,method,checkpoint,accuracy,half_width,n\n");
        for s in &self.scenarios {
            for m in &s.methods {
                for i in 0..m.curve.checkpoints.len() {
                    let _ = writeln!(
                        out,
                        "{},{},{:.1},{:.6},{:.6},{}",
                        s.scenario, m.method, m.curve.checkpoints[i], m.curve.accuracy[i], m.curve.half_width[i], m.curve.n
                    );
                }
            }
        }
        out
    }
}

/// Curves for agents trained with decreasing preference for their own
/// mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub scenario: String,
    pub method: Variant,
    pub suite: SuiteConfig,
    pub rollout: RolloutConfig,
    pub preferences: Vec<f64>,
    pub curves: Vec<AccuracyCurve>,
}

/// Train each agent on data where it pursues its own mission with
/// probability `p` and the other agent's mission otherwise, then score the
/// same test trials.
pub fn preference_sweep(
    sc: &Scenario,
    prefs: &[f64],
    method: Variant,
    suite: &SuiteConfig,
    cfg: &RolloutConfig,
) -> Result<SweepReport> {
    let mut curves = Vec::with_capacity(prefs.len());
    for &p in prefs {
        let pa = MissionPreferences::mixed(&sc.mission_a, &sc.mission_b, p)?;
        let pb = MissionPreferences::mixed(&sc.mission_b, &sc.mission_a, p)?;
        let s = prepare_suite(sc, suite, Some(pa), Some(pb))?;
        curves.push(s.curve(method, cfg)?);
    }
    Ok(SweepReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: sc.id.clone(),
        method,
        suite: suite.clone(),
        rollout: cfg.clone(),
        preferences: prefs.to_vec(),
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(points: &[(f64, f64)]) -> AccuracyCurve {
        AccuracyCurve {
            checkpoints: points.iter().map(|p| p.0).collect(),
            accuracy: points.iter().map(|p| p.1).collect(),
            half_width: vec![0.0; points.len()],
            n: 1,
        }
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(evidence_to_threshold(&curve(&[(0.0, 0.5), (1.0, 0.5)]), 0.8), None);
        assert_eq!(evidence_to_threshold(&curve(&[(0.0, 0.5), (0.5, 0.8), (1.0, 1.0)]), 0.8), Some(0.5));
        let t = evidence_to_threshold(&curve(&[(0.4, 0.7), (0.5, 0.9)]), 0.8).unwrap();
        assert!((t - 0.45).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_grid() {
        let c = checkpoints();
        assert_eq!(c.len(), 11);
        assert_eq!(c[0], 0.0);
        assert_eq!(c[10], 1.0);
        assert!((c[3] - 0.3).abs() < 1e-15);
    }
}
