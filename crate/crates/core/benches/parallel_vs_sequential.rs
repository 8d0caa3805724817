//! Sequential against rayon execution for the two data-parallel hot spots:
//! summing per-beam doses for one plan, and scoring a batch of random trials.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gantry::agents::random_plan;
use gantry::dose::{sum_plan_dose, BeamDoseCache};
use gantry::par::{map_indexed, Execution};
use gantry::phantom::{generate_prostate, ProstateSpec};
use gantry::{EnvConfig, Environment, Plan};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn plan_dose(c: &mut Criterion) {
    let phantom = generate_prostate(&ProstateSpec::default()).unwrap();
    let cfg = EnvConfig::default();
    let plan = Plan::from_angles(&[0.0, 72.0, 144.0, 216.0, 288.0], 5).unwrap();
    let mut group = c.benchmark_group("plan_dose_5_beams");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sum_plan_dose(&phantom, &plan, &cfg.engine, exec).unwrap())
        });
    }
    group.finish();
}

fn trial_batch(c: &mut Criterion) {
    let phantom = Arc::new(generate_prostate(&ProstateSpec::default()).unwrap());
    let cfg = EnvConfig::default();
    let cache = Arc::new(BeamDoseCache::new(Arc::clone(&phantom), cfg.engine.clone()).unwrap());
    let bins: Vec<f64> = (0..cfg.angle_bins).map(|b| cfg.bin_angle(b)).collect();
    cache.precompute(&bins, Execution::Parallel).unwrap();
    let mut group = c.benchmark_group("random_trials_64");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                map_indexed(exec, 64, |i| {
                    let env = Environment::with_cache(Arc::clone(&cache), cfg.clone()).unwrap();
                    let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
                    env.evaluate_plan(&random_plan(&cfg, &mut rng)).unwrap().reward.total
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, plan_dose, trial_batch);
criterion_main!(benches);
