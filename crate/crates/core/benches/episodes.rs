use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use harness_core::bench::{eval_suite, harness_config, Bench};
use harness_core::controller::Models;
use harness_core::model::RunConfig;
use harness_core::nn::{MlpParams, MlpSpec};
use harness_core::par::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn episodes(c: &mut Criterion) {
    let run = RunConfig::test_profile();
    let cfg = harness_config("emm_only", &run).unwrap();
    let models = Models::default();
    let mut group = c.benchmark_group("episode_grid");
    group.sample_size(10);
    for (name, exec) in MODES {
        let bench = Bench::new(run.clone(), &eval_suite(), exec).unwrap();
        group.bench_function(BenchmarkId::new(name, "3x40"), |b| {
            b.iter(|| bench.summaries(&cfg, &models, &[0, 1, 2], 40, false).unwrap())
        });
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let spec = MlpSpec::new(120, &[128, 64, 32], 0.1);
    let params = MlpParams::init(&spec, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs: Vec<Vec<f64>> = (0..256).map(|_| (0..120).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let batch: Vec<(&[f64], f64)> = xs.iter().enumerate().map(|(i, x)| (x.as_slice(), (i % 5 == 0) as u8 as f64)).collect();
    let mut group = c.benchmark_group("loss_and_grad");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, "batch256"), |b| {
            b.iter(|| params.loss_and_grad(&batch, 4.0, Some(3), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, episodes, gradients);
criterion_main!(benches);
