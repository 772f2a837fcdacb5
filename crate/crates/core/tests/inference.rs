use std::cell::Cell;

use proptest::prelude::*;
use whodunit_core::behavior::scenario;
use whodunit_core::exec::ExecMode;
use whodunit_core::inference::{
    build_prompt, cutoff, llm_verdict, normalize, parse_llm_response, prompt_graphs, run_trial, run_trial_at, Horizon,
    InferenceTrial, LlmClient, RolloutConfig,
};
use whodunit_core::policy::{train, FixedModel, TrainConfig, Variant};
use whodunit_core::procgen::{generate_instances, DatasetSpec, EnvConfig, Split};
use whodunit_core::world::{to_scene_graph, ActionKind, NodeKind};

fn trials(sc: &str, seed: u64, n: usize) -> Vec<InferenceTrial> {
    let s = scenario(sc).unwrap();
    let spec = DatasetSpec {
        n_envs: n,
        per_env: 1,
        ..DatasetSpec::for_split(sc, Split::Test, seed)
    };
    generate_instances(&spec, &EnvConfig::builtin(sc).unwrap())
        .unwrap()
        .iter()
        .map(|i| InferenceTrial::from_instance(i, &s).unwrap())
        .collect()
}

fn idle() -> FixedModel {
    let mut dist = [0.0; ActionKind::COUNT];
    dist[ActionKind::Idle.index()] = 1.0;
    FixedModel { dist }
}

proptest! {
    #[test]
    fn softmax_is_a_monotone_distribution(a in 0.0f64..=1.0, b in 0.0f64..=1.0, d in 0.0f64..0.5, eta in 0.1f64..20.0) {
        let (pa, pb) = normalize(a, b, eta);
        prop_assert!((pa + pb - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&pa));
        let (qb, qa) = normalize(b, a, eta);
        prop_assert!((pa - qa).abs() < 1e-12 && (pb - qb).abs() < 1e-12);
        prop_assert!(normalize((a + d).min(1.0), b, eta).0 >= pa - 1e-12);
        prop_assert!((normalize(a, a, eta).0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cutoffs_are_floored_and_monotone(len in 0usize..200, f in 0.0f64..=1.0, g in 0.0f64..=1.0) {
        let (lo, hi) = if f <= g { (f, g) } else { (g, f) };
        prop_assert!(cutoff(len, lo) <= cutoff(len, hi));
        prop_assert!(cutoff(len, hi) <= len);
        prop_assert_eq!(cutoff(len, 1.0), len);
        prop_assert_eq!(cutoff(len, 0.0), 0);
        prop_assert_eq!(cutoff(len, lo), (lo * len as f64 + 1e-9).floor() as usize);
    }
}

#[test]
fn swapping_agents_and_models_mirrors_the_verdict() {
    let t = &trials("shower", 2, 1)[0];
    let ma = train(std::slice::from_ref(&t.a), &TrainConfig::new(Variant::Vision)).unwrap();
    let mb = train(std::slice::from_ref(&t.b), &TrainConfig::new(Variant::Vision)).unwrap();
    let cfg = RolloutConfig::default();
    for frac in [0.0, 0.3, 0.7] {
        let v = run_trial(t, &ma, &mb, frac, &cfg).unwrap();
        let w = run_trial(&t.swapped(), &mb, &ma, frac, &cfg).unwrap();
        assert_eq!((v.raw_a, v.raw_b), (w.raw_b, w.raw_a));
        assert!((v.p_a - w.p_b).abs() < 1e-12);
    }
}

#[test]
fn an_idle_model_never_reaches_the_query() {
    for t in trials("pillow", 0, 3) {
        let cfg = RolloutConfig::default();
        let v = run_trial(&t, &idle(), &idle(), 0.5, &cfg).unwrap();
        assert_eq!((v.hits_a, v.hits_b), (0, 0));
        assert_eq!(v.p_a, 0.5);
        let end = run_trial(&t, &idle(), &idle(), 1.0, &cfg).unwrap();
        assert_eq!(end.hits_a, cfg.m, "the culprit's final state already satisfies the query");
        assert!((end.p_a - 1.0 / (1.0 + (-5.0f64).exp())).abs() < 1e-12);
    }
}

#[test]
fn untrained_models_cannot_tell_agents_apart_at_the_start() {
    let u = FixedModel::uniform();
    let cfg = RolloutConfig::default();
    let ts = trials("laundry", 1, 5);
    let mean = ts
        .iter()
        .map(|t| run_trial(t, &u, &u, 0.0, &cfg).unwrap().p_a)
        .sum::<f64>()
        / ts.len() as f64;
    assert!((0.4..=0.6).contains(&mean), "mean P(A) {mean:.3}");
}

#[test]
fn execution_mode_does_not_change_results() {
    let t = &trials("snack", 4, 1)[0];
    let ma = train(std::slice::from_ref(&t.a), &TrainConfig::new(Variant::All)).unwrap();
    let mb = train(std::slice::from_ref(&t.b), &TrainConfig::new(Variant::All)).unwrap();
    let par = RolloutConfig::default();
    let seq = RolloutConfig {
        exec: ExecMode::Sequential,
        ..par.clone()
    };
    for frac in [0.2, 0.5] {
        assert_eq!(run_trial(t, &ma, &mb, frac, &par).unwrap(), run_trial(t, &ma, &mb, frac, &seq).unwrap());
    }
}

#[test]
fn bad_configs_and_cutoffs_are_rejected() {
    let t = &trials("pillow", 0, 1)[0];
    let u = FixedModel::uniform();
    let ok = RolloutConfig::default();
    assert!(run_trial_at(t, &u, &u, t.a.len() + 1, 0, &ok).is_err());
    assert!(run_trial(t, &u, &u, 0.5, &RolloutConfig { m: 0, ..ok.clone() }).is_err());
    assert!(run_trial(t, &u, &u, 0.5, &RolloutConfig { eta: 0.0, ..ok.clone() }).is_err());
    let fixed0 = RolloutConfig {
        horizon: Horizon::Fixed { steps: 0 },
        ..ok
    };
    assert!(run_trial(t, &u, &u, 0.5, &fixed0).is_err());
}

#[test]
fn prompts_are_deterministic_and_embed_the_right_states() {
    let t = &trials("snack", 0, 1)[0];
    let p = build_prompt(t, 0.4);
    assert_eq!(p, build_prompt(t, 0.4));
    let (ta, tb) = t.cutoffs(0.4);
    let g = prompt_graphs(&p).unwrap();
    assert_eq!(g.len(), 5);
    assert_eq!(g[0], to_scene_graph(&t.a.states[0]));
    assert_eq!(g[1], to_scene_graph(&t.a.states[ta]));
    assert_eq!(g[2], to_scene_graph(&t.b.states[0]));
    assert_eq!(g[3], to_scene_graph(&t.b.states[tb]));
    assert!(g[4].nodes.iter().all(|n| n.kind != NodeKind::Agent), "final state names an agent");
    assert!(!g[4].nodes.is_empty());
    assert!(p.contains(&t.question));
    assert_ne!(p, build_prompt(t, 0.9));
}

#[test]
fn response_parsing() {
    assert_eq!(parse_llm_response("Answer: 25").unwrap(), 0.75);
    assert_eq!(parse_llm_response("Answer: 10\nwait.\nAnswer: 40").unwrap(), 0.6);
    assert!(parse_llm_response("Answer: 101").is_err());
    assert!(parse_llm_response("I think the target agent").is_err());
    assert!(parse_llm_response("Answer: maybe").is_err());
}

struct Canned {
    replies: Vec<String>,
    calls: Cell<usize>,
}

impl LlmClient for Canned {
    fn complete(&self, prompt: &str, n: usize, _temperature: f64) -> whodunit_core::Result<Vec<String>> {
        assert!(prompt.starts_with("Instructions:"));
        self.calls.set(self.calls.get() + 1);
        Ok(self.replies.iter().take(n).cloned().collect())
    }
}

#[test]
fn llm_verdict_averages_parseable_answers() {
    let t = &trials("plant", 0, 1)[0];
    let client = Canned {
        replies: vec!["Answer: 20".into(), "no idea".into(), "Reasoning: x\nAnswer: 60".into()],
        calls: Cell::new(0),
    };
    let v = llm_verdict(&client, t, 0.5, 3, 0.7).unwrap();
    assert!((v.p_target - 0.6).abs() < 1e-12);
    assert_eq!((v.parsed, v.discarded), (2, 1));
    assert_eq!(client.calls.get(), 1);
    let hopeless = Canned {
        replies: vec!["?".into()],
        calls: Cell::new(0),
    };
    assert!(llm_verdict(&hopeless, t, 0.5, 1, 0.7).is_err());
}
