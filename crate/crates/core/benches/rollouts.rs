//! Sequential against rayon-parallel execution for the two hot paths: one
//! reach estimate and a full accuracy curve.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use whodunit_core::behavior::scenario;
use whodunit_core::bench::{accuracy_curve, prepare_suite, SuiteConfig};
use whodunit_core::exec::ExecMode;
use whodunit_core::inference::{estimate_reach, CutoffEvidence, RolloutConfig};
use whodunit_core::policy::Variant;

fn modes(c: &mut Criterion) {
    let sc = scenario("snack").expect("builtin scenario");
    let cfg = SuiteConfig {
        trials: 6,
        train: 120,
        envs: 6,
        seed: 0,
    };
    let suite = prepare_suite(&sc, &cfg, None, None).expect("suite");
    let (ma, mb) = suite.train_models(Variant::All).expect("models");
    let trial = &suite.trials[0];
    let evidence = CutoffEvidence::from_trajectory(&trial.a, 0);

    let mut g = c.benchmark_group("estimate_reach");
    for mode in [ExecMode::Sequential, ExecMode::Parallel] {
        let rc = RolloutConfig {
            m: 400,
            exec: mode,
            ..RolloutConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &rc, |b, rc| {
            b.iter(|| estimate_reach(&ma, &trial.a.states[0], trial.a.agent, &evidence, &trial.query, rc, trial.a.len()))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("accuracy_curve");
    g.sample_size(10);
    for mode in [ExecMode::Sequential, ExecMode::Parallel] {
        let rc = RolloutConfig {
            exec: mode,
            ..RolloutConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &rc, |b, rc| {
            b.iter(|| accuracy_curve(&suite.trials, &ma, &mb, rc).expect("curve"))
        });
    }
    g.finish();
}

criterion_group!(benches, modes);
criterion_main!(benches);
