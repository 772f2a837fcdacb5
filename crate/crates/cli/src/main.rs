//! `whodunit`: generate datasets, train agent models, run inference and the
//! benchmark, and host the study server.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use whodunit_core::bench::{self, BenchConfig, SuiteConfig};
use whodunit_core::behavior::{builtin_scenarios, scenario, sweep_scenario, Scenario};
use whodunit_core::exec::ExecMode;
use whodunit_core::inference::{build_prompt, run_trial, Horizon, InferenceTrial, RolloutConfig};
use whodunit_core::policy::{train_with_report, PolicyModel, TrainConfig, Variant};
use whodunit_core::procgen::{generate_dataset, load_dataset, load_instance, DatasetSpec, EnvConfig, Split};

#[derive(Parser)]
#[command(name = "whodunit", version, about = "Long-horizon whodunit inference benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct RolloutArgs {
    /// Rollouts per estimate.
    #[arg(long, default_value_t = 100)]
    m: usize,
    /// Softmax temperature.
    #[arg(long, default_value_t = 5.0)]
    eta: f64,
    /// `remaining[:SCALE[:EXTRA]]` or `fixed:STEPS`.
    #[arg(long, default_value = "remaining")]
    horizon: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
}

impl RolloutArgs {
    fn config(&self) -> Result<RolloutConfig> {
        let parts: Vec<&str> = self.horizon.split(':').collect();
        let horizon = match parts.as_slice() {
            ["remaining"] => Horizon::Remaining { scale: 1.0, extra: 0 },
            ["remaining", s] => Horizon::Remaining {
                scale: s.parse()?,
                extra: 0,
            },
            ["remaining", s, e] => Horizon::Remaining {
                scale: s.parse()?,
                extra: e.parse()?,
            },
            ["fixed", n] => Horizon::Fixed { steps: n.parse()? },
            _ => bail!("bad horizon {:?}", self.horizon),
        };
        let cfg = RolloutConfig {
            m: self.m,
            eta: self.eta,
            horizon,
            seed: self.seed,
            exec: if self.sequential {
                ExecMode::Sequential
            } else {
                ExecMode::Parallel
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset of paired trajectories.
    Generate {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_envs: Option<usize>,
        #[arg(long)]
        per_env: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an agent model on one agent's trajectories in a dataset.
    Train {
        #[arg(long, default_value = "vision")]
        variant: Variant,
        #[arg(long)]
        data: PathBuf,
        /// Which agent's trajectories to learn from.
        #[arg(long, default_value = "a")]
        agent: String,
        #[arg(long, default_value_t = whodunit_core::policy::DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = whodunit_core::policy::DEFAULT_EPSILON)]
        epsilon: f64,
        /// Dataset scored for held-out next-action accuracy.
        #[arg(long)]
        held_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one stored instance at an evidence fraction.
    Infer {
        /// Instance directory (contains instance.json).
        #[arg(long)]
        trial: PathBuf,
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau_frac: f64,
        #[command(flatten)]
        rollout: RolloutArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the LLM prompt for a stored instance.
    Prompt {
        #[arg(long)]
        trial: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau_frac: f64,
    },
    /// Accuracy curves for the simulation baselines.
    Bench {
        /// `full` (10 trials, 500 training trajectories) or `quick`.
        #[arg(long, default_value = "full")]
        suite: String,
        #[arg(long, value_delimiter = ',', default_value = "vision,vision+audio,vision+language,all")]
        methods: Vec<Variant>,
        #[arg(long, value_delimiter = ',')]
        scenarios: Option<Vec<String>>,
        #[command(flatten)]
        rollout: RolloutArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write long-format plot data.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Mean steps until the culprit first satisfies the query.
    Horizon {
        #[arg(long, value_delimiter = ',')]
        scenarios: Option<Vec<String>>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Vary how strongly each agent prefers its own mission.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.8,0.6")]
        prefs: Vec<f64>,
        #[arg(long, default_value = "vision")]
        method: Variant,
        #[command(flatten)]
        rollout: RolloutArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the study server.
    Serve {
        /// A dataset directory or a directory of datasets.
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Response log; defaults to SUITE/study-log.jsonl.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?).with_context(|| format!("writing {}", path.display()))
}

fn find_scenario(id: &str) -> Result<Scenario> {
    scenario(id).with_context(|| format!("unknown scenario {id:?}"))
}

fn load_trial(dir: &Path) -> Result<InferenceTrial> {
    let (rec, inst) = load_instance(dir)?;
    let sc = find_scenario(&rec.scenario)?;
    Ok(InferenceTrial::from_instance(&inst, &sc)?)
}

fn suite_config(name: &str, seed: u64) -> Result<SuiteConfig> {
    let base = SuiteConfig {
        seed,
        ..SuiteConfig::default()
    };
    match name {
        "full" => Ok(base),
        "quick" => Ok(SuiteConfig {
            trials: 4,
            train: 100,
            envs: 4,
            ..base
        }),
        other => bail!("unknown suite {other:?}; use full or quick"),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Generate {
            scenario: id,
            split,
            seed,
            n_envs,
            per_env,
            out,
        } => {
            let base = DatasetSpec::for_split(&id, split, seed);
            let spec = DatasetSpec {
                n_envs: n_envs.unwrap_or(base.n_envs),
                per_env: per_env.unwrap_or(base.per_env),
                ..base
            };
            let cfg = EnvConfig::builtin(&id)?;
            let m = generate_dataset(&spec, &cfg, &out)?;
            println!("wrote {} instances to {}", m.instances, out.display());
        }
        Cmd::Train {
            variant,
            data,
            agent,
            k,
            epsilon,
            held_out,
            out,
        } => {
            let pick = |dir: &Path| -> Result<Vec<_>> {
                let (_, insts) = load_dataset(dir)?;
                Ok(match agent.as_str() {
                    "a" => insts.into_iter().map(|i| i.a).collect(),
                    "b" => insts.into_iter().map(|i| i.b).collect(),
                    other => bail!("agent must be a or b, got {other:?}"),
                })
            };
            let train_set = pick(&data)?;
            let held = match &held_out {
                Some(d) => pick(d)?,
                None => Vec::new(),
            };
            let cfg = TrainConfig { variant, k, epsilon };
            let (model, report) = train_with_report(&train_set, &held, &cfg)?;
            model.save(&out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Infer {
            trial,
            model_a,
            model_b,
            tau_frac,
            rollout,
            out,
        } => {
            let t = load_trial(&trial)?;
            let a = PolicyModel::load(&model_a)?;
            let b = PolicyModel::load(&model_b)?;
            let v = run_trial(&t, &a, &b, tau_frac, &rollout.config()?)?;
            match out {
                Some(p) => write_json(&p, &v)?,
                None => println!("{}", serde_json::to_string_pretty(&v)?),
            }
        }
        Cmd::Prompt { trial, tau_frac } => {
            print!("{}", build_prompt(&load_trial(&trial)?, tau_frac));
        }
        Cmd::Bench {
            suite,
            methods,
            scenarios,
            rollout,
            out,
            csv,
        } => {
            let rollout = rollout.config()?;
            let cfg = BenchConfig {
                scenarios: scenarios.unwrap_or_else(|| builtin_scenarios().into_iter().map(|s| s.id).collect()),
                methods,
                suite: suite_config(&suite, rollout.seed)?,
                rollout,
                threshold: 0.8,
            };
            let report = bench::run_bench(&cfg)?;
            write_json(&out, &report)?;
            if let Some(p) = csv {
                std::fs::write(&p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
            }
            for s in &report.scenarios {
                for m in &s.methods {
                    let e = m.evidence_to_threshold.map_or("never".to_string(), |e| format!("{e:.2}"));
                    println!("{:8} {:16} evidence to 0.8: {e}", s.scenario, m.method);
                }
            }
        }
        Cmd::Horizon { scenarios, n, seed } => {
            let ids = scenarios.unwrap_or_else(|| builtin_scenarios().into_iter().map(|s| s.id).collect());
            for id in ids {
                let sc = find_scenario(&id)?;
                let h = bench::horizon_stats(&sc, n, seed)?;
                println!("{id:8} {h:6.1}  (reference {})", sc.avg_horizon_ref);
            }
        }
        Cmd::Sweep {
            prefs,
            method,
            rollout,
            out,
        } => {
            let rollout = rollout.config()?;
            let suite = SuiteConfig {
                seed: rollout.seed,
                ..SuiteConfig::default()
            };
            let report = bench::preference_sweep(&sweep_scenario(), &prefs, method, &suite, &rollout)?;
            write_json(&out, &report)?;
            for (p, c) in report.preferences.iter().zip(&report.curves) {
                println!("preference {p:.1}: accuracy at 40% = {:.3}", c.at(0.4).unwrap_or(f64::NAN));
            }
        }
        Cmd::Serve { suite, port, log } => {
            let s = whodunit_study::Suite::load(&suite)?;
            let log = log.unwrap_or_else(|| suite.join("study-log.jsonl"));
            let store = whodunit_study::Store::open(&log)?;
            let state = whodunit_study::AppState::new(s, store);
            let addr = SocketAddr::from(([127, 0, 0, 1], port));
            println!("serving {} on http://{addr} (log {})", suite.display(), log.display());
            tokio::runtime::Runtime::new()?.block_on(whodunit_study::serve(state, addr))?;
        }
    }
    Ok(())
}
