use std::collections::BTreeSet;

use whodunit_core::behavior::scenario;
use whodunit_core::procgen::{
    generate_dataset, generate_instances, load_dataset, load_manifest, read_grid, write_grid, DatasetSpec, EnvConfig,
    Split,
};
use whodunit_core::world::encode_array;

fn small(sc: &str, split: Split, seed: u64) -> DatasetSpec {
    DatasetSpec {
        n_envs: 3,
        per_env: 2,
        ..DatasetSpec::for_split(sc, split, seed)
    }
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let cfg = EnvConfig::builtin("laundry").unwrap();
    let a = generate_instances(&small("laundry", Split::Test, 1), &cfg).unwrap();
    let b = generate_instances(&small("laundry", Split::Test, 1), &cfg).unwrap();
    let c = generate_instances(&small("laundry", Split::Test, 2), &cfg).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), 6);
}

#[test]
fn in_distribution_training_shares_test_environments_only() {
    let test = small("snack", Split::Test, 0);
    let indist = small("snack", Split::TrainIndist, 0);
    let proc_ = small("snack", Split::TrainProc, 0);
    let seeds = |s: &DatasetSpec| (0..s.n_envs).map(|i| s.env_seed(i)).collect::<BTreeSet<_>>();
    assert_eq!(seeds(&test), seeds(&indist));
    assert!(seeds(&test).is_disjoint(&seeds(&proc_)));

    let cfg = EnvConfig::builtin("snack").unwrap();
    let t = generate_instances(&test, &cfg).unwrap();
    let i = generate_instances(&indist, &cfg).unwrap();
    let pairs = |v: &[whodunit_core::procgen::Instance]| {
        v.iter().map(|x| (x.a.seed, x.b.seed)).collect::<BTreeSet<_>>()
    };
    assert!(pairs(&t).is_disjoint(&pairs(&i)), "training episodes repeat test episodes");
}

#[test]
fn both_agents_start_in_the_same_environment() {
    let cfg = EnvConfig::builtin("plant").unwrap();
    for inst in generate_instances(&small("plant", Split::Test, 3), &cfg).unwrap() {
        let (a, b) = (&inst.a.states[0], &inst.b.states[0]);
        assert_eq!(a.layout(), b.layout());
        assert_eq!(a.objects(), b.objects());
        assert_eq!(a.furniture_flags(), b.furniture_flags());
        let sc = scenario("plant").unwrap();
        assert_eq!(inst.a.mission, sc.mission_a);
        assert_eq!(inst.b.mission, sc.mission_b);
    }
}

#[test]
fn datasets_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small("pillow", Split::Test, 8);
    let cfg = EnvConfig::builtin("pillow").unwrap();
    let manifest = generate_dataset(&spec, &cfg, dir.path()).unwrap();
    assert_eq!(manifest.instances, spec.len());
    assert_eq!(load_manifest(dir.path()).unwrap(), manifest);
    let (m, loaded) = load_dataset(dir.path()).unwrap();
    assert_eq!(m, manifest);
    assert_eq!(loaded, generate_instances(&spec, &cfg).unwrap());
}

#[test]
fn grids_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small("shower", Split::Test, 0);
    let inst = &generate_instances(&spec, &EnvConfig::builtin("shower").unwrap()).unwrap()[0];
    for (i, s) in inst.a.states.iter().enumerate().step_by(5) {
        let p = dir.path().join(format!("{i}.bin"));
        let g = encode_array(s);
        write_grid(&p, &g).unwrap();
        assert_eq!(read_grid(&p).unwrap(), g);
    }
    std::fs::write(dir.path().join("bad.bin"), b"nope").unwrap();
    assert!(read_grid(&dir.path().join("bad.bin")).is_err());
}

#[test]
fn env_configs_parse_and_reject_garbage() {
    for id in ["pillow", "shower", "snack", "plant", "laundry"] {
        let cfg = EnvConfig::builtin(id).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(EnvConfig::from_json(&text).unwrap(), cfg);
    }
    assert!(EnvConfig::builtin("nowhere").is_err());
    assert!(EnvConfig::from_json("{").is_err());
}
