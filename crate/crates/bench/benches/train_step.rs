use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dermgan_core::codec::{synth_samples, to_model_space};
use dermgan_core::objectives::batch;
use dermgan_core::{Generator, NetConfig, RngState, TrainConfig, Trainer};

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for (size, disc) in [(32, 1), (64, 1), (64, 6)] {
        let data: Vec<_> = synth_samples(1, size as u32, 0).iter().map(to_model_space).collect();
        let (x, y) = batch(&data, &[0]).unwrap();
        let mut trainer = Trainer::new(NetConfig::new(size, disc).unwrap(), TrainConfig::default()).unwrap();
        group.bench_with_input(BenchmarkId::new(format!("disc{disc}"), size), &(), |bench, _| {
            bench.iter(|| trainer.train_step(&x, &y).unwrap())
        });
    }
    group.finish();
}

fn generator_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("generator_predict");
    group.sample_size(10);
    for size in [64, 256] {
        let (g, params) = Generator::build(NetConfig::new(size, 1).unwrap(), &mut RngState::new(0)).unwrap();
        let data: Vec<_> = synth_samples(1, size as u32, 0).iter().map(to_model_space).collect();
        let (x, _) = batch(&data, &[0]).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(size), &(), |bench, _| {
            bench.iter(|| g.predict(&params, &x, &mut RngState::new(1)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, train_step, generator_forward);
criterion_main!(benches);
