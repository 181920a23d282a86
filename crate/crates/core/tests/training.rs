mod common;

use common::{rand_cloud, tiny_model};
use ipcnet::datagen::{gen_dataset, Family, ShapeSpec};
use ipcnet::geometry::{CenterMode, LabeledPointCloud};
use ipcnet::model::ModelKind;
use ipcnet::par::Execution;
use ipcnet::rng::SplitMix64;
use ipcnet::training::{cloud_pass, evaluate, split_dataset, split_indices, train, train_split, TrainConfig};
use ipcnet::Error;
use proptest::prelude::*;

fn rockets(count: usize, points: usize, seed: u64) -> Vec<LabeledPointCloud> {
    gen_dataset(
        &ShapeSpec::new(Family::Rocket),
        count,
        points,
        seed,
        CenterMode::Midpoint,
        Execution::Sequential,
    )
    .unwrap()
}

fn quick(model: ModelKind, points: usize) -> TrainConfig {
    TrainConfig {
        model,
        epochs: 3,
        batch_size: 2,
        points,
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn overfits_a_single_cloud() {
    let cloud = rockets(1, 256, 3);
    let mut cfg = quick(ModelKind::PointNet, 256);
    cfg.epochs = 200;
    cfg.batch_size = 1;
    cfg.adam.learning_rate = 0.01;
    let run = train_split(&cloud, &[], &cfg, Execution::Sequential).unwrap();
    let best = run.history.iter().map(|e| e.train.accuracy).fold(0.0, f64::max);
    assert!(best >= 99.0, "best train accuracy {best}");
    let eval = evaluate(&run.model, &cloud, cfg.lambda_reg, Execution::Sequential).unwrap();
    assert!(eval.metrics.accuracy >= 99.0, "eval accuracy {}", eval.metrics.accuracy);
}

#[test]
fn same_seed_same_run() {
    let data = rockets(10, 128, 4);
    for kind in [ModelKind::PointNet, ModelKind::IpcNet] {
        let cfg = quick(kind, 128);
        let a = train(&data, &cfg, Execution::Sequential).unwrap();
        let b = train(&data, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        assert_eq!(a.final_model, b.final_model);
        assert_eq!(a.metrics_csv(), b.metrics_csv());
    }
}

#[test]
fn loss_decomposes_into_cross_entropy_and_regularizer() {
    let data = rockets(6, 128, 5);
    let mut cfg = quick(ModelKind::PointNet, 128);
    cfg.lambda_reg = 0.37;
    let run = train(&data, &cfg, Execution::Sequential).unwrap();
    for e in &run.history {
        for m in std::iter::once(e.train).chain(e.test) {
            assert!((m.loss - (m.cross_entropy + cfg.lambda_reg * m.regularizer)).abs() < 1e-12);
        }
    }
    for cloud in &data {
        let p = cloud_pass(&run.model, cloud, 0.37, false).unwrap();
        assert!(p.regularizer > 0.0);
        assert!((p.loss - (p.cross_entropy + 0.37 * p.regularizer)).abs() < 1e-12);
        let z = cloud_pass(&run.model, cloud, 0.0, false).unwrap();
        assert_eq!(z.loss, z.cross_entropy);
    }
}

#[test]
fn evaluation_contracts() {
    let model = tiny_model(ModelKind::PointNet, 64, 3, 1);
    assert!(matches!(
        evaluate(&model, &[], 0.001, Execution::Sequential),
        Err(Error::Empty(_))
    ));
    let mut rng = SplitMix64::new(8);
    let wrong = rand_cloud(&mut rng, 64, 4);
    assert!(matches!(
        evaluate(&model, &[wrong], 0.001, Execution::Sequential),
        Err(Error::ClassMismatch { .. })
    ));
}

#[test]
fn constant_predictor_scores_half_on_balanced_labels() {
    let mut model = tiny_model(ModelKind::PointNet, 1000, 2, 1);
    model
        .params_mut()
        .get_mut("head.out.weight")
        .unwrap()
        .data_mut()
        .fill(0.0);
    model
        .params_mut()
        .get_mut("head.out.bias")
        .unwrap()
        .data_mut()
        .copy_from_slice(&[1.0, 0.0]);
    let mut rng = SplitMix64::new(9);
    let clouds: Vec<LabeledPointCloud> = (0..4).map(|_| rand_cloud(&mut rng, 1000, 2)).collect();
    let eval = evaluate(&model, &clouds, 0.0, Execution::Sequential).unwrap();
    for c in &eval.per_cloud {
        assert!(c.predictions.iter().all(|&p| p == 0));
    }
    assert!(
        (eval.metrics.accuracy - 50.0).abs() < 3.0,
        "accuracy {}",
        eval.metrics.accuracy
    );
}

#[test]
fn rocket_sized_split() {
    let (train, test) = split_indices(75, 0.8, 1).unwrap();
    assert_eq!((train.len(), test.len()), (60, 15));
    let (a, b) = split_indices(10, 0.5, 3).unwrap();
    assert_eq!((a.len(), b.len()), (5, 5));
    let items: Vec<usize> = (0..75).collect();
    assert_eq!(
        split_dataset(&items, 0.8, 9).unwrap(),
        split_dataset(&items, 0.8, 9).unwrap()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn splits_are_disjoint_and_complete(seed in any::<u64>(), n in 2usize..200, f in 0.05f64..0.95) {
        match split_indices(n, f, seed) {
            Ok((train, test)) => {
                prop_assert!(!train.is_empty() && !test.is_empty());
                let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
            Err(e) => prop_assert!(matches!(e, Error::Config { .. }), "{e}"),
        }
    }
}
