use std::collections::HashMap;
use std::sync::OnceLock;

use proptest::prelude::*;
use whodunit_core::behavior::mission;
use whodunit_core::evidence::{AudioMap, AudioToken};
use whodunit_core::planner::{navigate, target_cells, Trajectory};
use whodunit_core::rng;
use whodunit_core::policy::{
    argmax, feature_key, fuse_audio, train, uniform, ActionDist, FeatureKey, PolicyModel, TrainConfig, Variant,
};
use whodunit_core::procgen::{generate_instances, DatasetSpec, EnvConfig, Split};
use whodunit_core::world::{encode_array, Action, ActionKind};

fn data(split: Split, seed: u64, n: usize) -> Vec<Trajectory> {
    let spec = DatasetSpec {
        n_envs: 4,
        per_env: n / 4,
        ..DatasetSpec::for_split("snack", split, seed)
    };
    generate_instances(&spec, &EnvConfig::builtin("snack").unwrap())
        .unwrap()
        .into_iter()
        .map(|i| i.a)
        .collect()
}

fn training() -> &'static Vec<Trajectory> {
    static T: OnceLock<Vec<Trajectory>> = OnceLock::new();
    T.get_or_init(|| data(Split::TrainIndist, 0, 40))
}

/// Count table rebuilt from array observations rather than symbolic states.
fn tally(dataset: &[Trajectory], cfg: &TrainConfig) -> HashMap<FeatureKey, [u32; ActionKind::COUNT]> {
    let mut out: HashMap<FeatureKey, [u32; ActionKind::COUNT]> = HashMap::new();
    for t in dataset {
        let m = mission(&t.mission).unwrap();
        for (i, a) in t.actions.iter().enumerate() {
            let pose = t.states[i].agent(t.agent).unwrap();
            let g = cfg
                .variant
                .uses_language()
                .then(|| m.subgoals[t.subgoal_index[i]].name.as_str());
            let key = feature_key(&encode_array(&t.states[i]), pose.pos, pose.dir, cfg.k, g);
            out.entry(key).or_default()[a.kind.index()] += 1;
        }
    }
    out
}

#[test]
fn counts_match_an_independent_tally() {
    for v in [Variant::Vision, Variant::VisionLanguage] {
        let cfg = TrainConfig::new(v);
        let model = train(training(), &cfg).unwrap();
        let expect = tally(training(), &cfg);
        assert_eq!(model.keys(), expect.len(), "{v}");
        for (key, counts) in &expect {
            assert_eq!(model.counts(*key), Some(counts));
            let n: u32 = counts.iter().sum();
            let d = model.predict_key(*key);
            for (i, c) in counts.iter().enumerate() {
                let want = (f64::from(*c) + cfg.epsilon) / (f64::from(n) + 10.0 * cfg.epsilon);
                assert!((d[i] - want).abs() < 1e-12);
            }
        }
        assert_eq!(model.trajectories, training().len());
    }
}

#[test]
fn unseen_keys_predict_uniform() {
    let model = train(training(), &TrainConfig::new(Variant::Vision)).unwrap();
    let probe = (0..).map(FeatureKey).find(|k| model.counts(*k).is_none()).unwrap();
    assert_eq!(model.predict_key(probe), uniform());
}

#[test]
fn training_ignores_dataset_order() {
    let cfg = TrainConfig::new(Variant::All);
    let mut rev = training().clone();
    rev.reverse();
    assert_eq!(train(training(), &cfg).unwrap(), train(&rev, &cfg).unwrap());
}

#[test]
fn training_rejects_bad_configs() {
    let ok = TrainConfig::new(Variant::Vision);
    assert!(train(&[], &ok).is_err());
    assert!(train(training(), &TrainConfig { k: 4, ..ok.clone() }).is_err());
    assert!(train(training(), &TrainConfig { epsilon: 0.0, ..ok }).is_err());
}

#[test]
fn language_variants_need_a_subgoal_and_vision_ignores_it() {
    let t = &training()[0];
    let o = t.observation(0);
    let g = &mission(&t.mission).unwrap().subgoals[t.subgoal_index[0]];
    let lang = train(training(), &TrainConfig::new(Variant::VisionLanguage)).unwrap();
    assert!(lang.predict(&o, t.agent, None).is_err());
    assert!(lang.predict(&o, t.agent, Some(g)).is_ok());
    let vis = train(training(), &TrainConfig::new(Variant::Vision)).unwrap();
    assert_eq!(vis.predict(&o, t.agent, None).unwrap(), vis.predict(&o, t.agent, Some(g)).unwrap());
}

/// The action the tie-free planner takes in `t.states[i]`.
fn deterministic_action(t: &Trajectory, i: usize) -> ActionKind {
    let g = &mission(&t.mission).unwrap().subgoals[t.subgoal_index[i]];
    let s = &t.states[i];
    let pose = s.agent(t.agent).unwrap();
    let nav = navigate(s.layout(), (pose.pos, pose.dir), &target_cells(s, g), None).unwrap();
    nav.moves.first().copied().unwrap_or(g.action_kind())
}

#[test]
fn models_reproduce_a_deterministic_planner_on_training_states() {
    let relabelled: Vec<Trajectory> = training()
        .iter()
        .map(|t| {
            let mut t = t.clone();
            for i in 0..t.actions.len() {
                t.actions[i] = Action::nav(deterministic_action(&t, i));
            }
            t
        })
        .collect();
    let steps: Vec<(usize, usize)> = relabelled
        .iter()
        .enumerate()
        .flat_map(|(j, t)| (0..t.len()).map(move |i| (j, i)))
        .collect();
    let mut r = rng::rng(3);
    let probes: Vec<(usize, usize)> = (0..1000).map(|_| steps[r.random_range(0..steps.len())]).collect();
    for v in [Variant::Vision, Variant::VisionLanguage] {
        let model = train(&relabelled, &TrainConfig::new(v)).unwrap();
        let hits = probes
            .iter()
            .filter(|(j, i)| {
                let t = &relabelled[*j];
                let g = &mission(&t.mission).unwrap().subgoals[t.subgoal_index[*i]];
                let d = model.predict(&t.observation(*i), t.agent, Some(g)).unwrap();
                argmax(&d) == t.actions[*i].kind
            })
            .count();
        assert!(hits >= 950, "{v}: {hits}/1000 probes agree");
    }
}

#[test]
fn subgoal_conditioning_helps_held_out_prediction() {
    let held = data(Split::Test, 0, 8);
    let vis = train(training(), &TrainConfig::new(Variant::Vision)).unwrap().accuracy(&held).unwrap();
    let lang = train(training(), &TrainConfig::new(Variant::VisionLanguage))
        .unwrap()
        .accuracy(&held)
        .unwrap();
    assert!(lang >= vis, "vision+language {lang:.3} < vision {vis:.3}");
}

#[test]
fn models_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    for v in Variant::ALL {
        let model = train(training(), &TrainConfig::new(v)).unwrap();
        model.save(&p).unwrap();
        assert_eq!(PolicyModel::load(&p).unwrap(), model);
    }
    let text = std::fs::read_to_string(&p).unwrap().replacen("\"format_version\":1", "\"format_version\":99", 1);
    std::fs::write(&p, text).unwrap();
    assert!(PolicyModel::load(&p).is_err());
    std::fs::write(&p, "[]").unwrap();
    assert!(PolicyModel::load(&p).is_err());
}

fn dist() -> impl Strategy<Value = ActionDist> {
    prop::array::uniform10(0.0f64..1.0).prop_filter_map("needs mass", |raw| {
        let s: f64 = raw.iter().sum();
        (s > 1e-6).then(|| raw.map(|x| x / s))
    })
}

proptest! {
    #[test]
    fn fusion_is_a_normalised_idempotent_restriction(prior in dist(), t in 0usize..AudioToken::ALL.len()) {
        let map = AudioMap::default();
        let token = AudioToken::ALL[t];
        let post = fuse_audio(&prior, token, &map);
        prop_assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for k in ActionKind::ALL {
            if map.token(k) != token {
                prop_assert_eq!(post[k.index()], 0.0);
            }
        }
        let again = fuse_audio(&post, token, &map);
        for i in 0..ActionKind::COUNT {
            prop_assert!((again[i] - post[i]).abs() < 1e-12);
        }
        // Relative odds among consistent actions are preserved.
        let consistent: Vec<_> = ActionKind::ALL.into_iter().filter(|k| map.token(*k) == token).collect();
        let mass: f64 = consistent.iter().map(|k| prior[k.index()]).sum();
        if mass > 0.0 {
            for k in consistent {
                prop_assert!((post[k.index()] - prior[k.index()] / mass).abs() < 1e-9);
            }
        }
    }
}
