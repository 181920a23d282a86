use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ipcnet::datagen::{gen_dataset, Family, ShapeSpec};
use ipcnet::geometry::CenterMode;
use ipcnet::model::{ModelKind, SegModel};
use ipcnet::par::{self, Execution};
use ipcnet::training::{cloud_pass, evaluate, TrainConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn batch_gradients(c: &mut Criterion) {
    let clouds = gen_dataset(
        &ShapeSpec::new(Family::Rocket),
        8,
        512,
        1,
        CenterMode::Midpoint,
        Execution::Sequential,
    )
    .unwrap();
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    for kind in [ModelKind::PointNet, ModelKind::IpcNet] {
        let cfg = TrainConfig {
            model: kind,
            ..TrainConfig::default()
        };
        let model = SegModel::build(&cfg.architecture(3), 0).unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(kind.to_string(), name), &exec, |b, &exec| {
                b.iter(|| par::map(exec, &clouds, |cl| cloud_pass(&model, cl, 0.001, true).unwrap()))
            });
        }
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let clouds = gen_dataset(
        &ShapeSpec::new(Family::Rocket),
        16,
        512,
        2,
        CenterMode::Midpoint,
        Execution::Sequential,
    )
    .unwrap();
    let model = SegModel::build(&TrainConfig::default().architecture(3), 0).unwrap();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate(&model, &clouds, 0.001, exec).unwrap())
        });
    }
    group.finish();
}

fn dataset_generation(c: &mut Criterion) {
    let spec = ShapeSpec::new(Family::Motorbike);
    let mut group = c.benchmark_group("gen_dataset");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| gen_dataset(&spec, 32, 2048, 3, CenterMode::Midpoint, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradients, evaluation, dataset_generation);
criterion_main!(benches);
