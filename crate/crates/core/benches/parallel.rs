use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempcov::corex::CorexWeights;
use tempcov::synthetic::{generate, ScenarioKind, ScenarioParams};
use tempcov::tcorex::tcorex_objective_and_gradient;
use tempcov::{Execution, FitConfig};

fn objective(c: &mut Criterion) {
    let mut group = c.benchmark_group("objective_and_gradient");
    group.sample_size(20);
    for p in [128usize, 512] {
        let params = ScenarioParams {
            val_size: 1,
            test_size: 1,
            ..ScenarioParams::new(ScenarioKind::Sudden, p, 8, 16, 10, 1)
        };
        let data = generate(params).unwrap().train_set().unwrap().standardize(0.5, 1e-9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let weights: Vec<_> = (0..10).map(|_| CorexWeights::random(8, p, &mut rng)).collect();
        for exec in [Execution::Sequential, Execution::Parallel] {
            let config = FitConfig { lambda: 0.3, execution: exec, ..FitConfig::default() };
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), p), &p, |b, _| {
                b.iter(|| tcorex_objective_and_gradient(&weights, &data, &config, 0.36, 7).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, objective);
criterion_main!(benches);
