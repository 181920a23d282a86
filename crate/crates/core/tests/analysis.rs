mod common;

use common::{rand_cloud, rand_tensor, tiny_model};
use ipcnet::analysis::{
    field_view_projection, heatmap_from_weights, kernel_activation_map, kernel_vectors, miou, redundancy_heatmap,
    redundancy_score, Axis,
};
use ipcnet::geometry::LabeledPointCloud;
use ipcnet::model::ModelKind;
use ipcnet::rng::SplitMix64;
use ipcnet::tensor::Tensor;
use proptest::prelude::*;

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn heatmap_matches_pairwise_oracle() {
    let mut rng = SplitMix64::new(41);
    let w = rand_tensor(&mut rng, &[5, 8], -1.0, 1.0);
    let cols: Vec<Vec<f64>> = (0..8).map(|k| (0..5).map(|r| w.at2(r, k)).collect()).collect();
    assert_eq!(kernel_vectors(&w), cols);
    let h = heatmap_from_weights("layer", &w).unwrap();
    let mut order = h.order.clone();
    order.sort_unstable();
    assert_eq!(order, (0..8).collect::<Vec<_>>());
    for i in 0..8 {
        for j in 0..8 {
            let d = euclid(&cols[h.order[i]], &cols[h.order[j]]);
            assert!((h.at(i, j) - d).abs() < 1e-12);
            assert_eq!(h.at(i, j), h.at(j, i));
        }
        assert_eq!(h.at(i, i), 0.0);
    }
    assert!(h.row_sums().windows(2).all(|p| p[0] <= p[1]));
    let oracle: f64 = (0..8)
        .flat_map(|i| (0..8).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .map(|(i, j)| euclid(&cols[i], &cols[j]))
        .sum::<f64>()
        / 56.0;
    assert!((redundancy_score(&h) - oracle).abs() < 1e-12);
}

#[test]
fn heatmap_trivial_cases() {
    let same = Tensor::from_rows(&[vec![0.3, 0.3, 0.3], vec![-1.0, -1.0, -1.0]]).unwrap();
    let h = heatmap_from_weights("same", &same).unwrap();
    assert!(h.distances.iter().all(|&d| d == 0.0));
    assert_eq!(redundancy_score(&h), 0.0);
    let pair = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0]]).unwrap();
    let h = heatmap_from_weights("pair", &pair).unwrap();
    assert_eq!(h.at(0, 1), 1.0);
    assert_eq!(redundancy_score(&h), 1.0);
}

#[test]
fn heatmap_files_agree_with_matrix() {
    let model = tiny_model(ModelKind::IpcNet, 64, 3, 2);
    let h = redundancy_heatmap(&model, "head.0").unwrap();
    let dir = tempfile::tempdir().unwrap();
    h.write(dir.path(), "head0").unwrap();
    let csv = std::fs::read_to_string(dir.path().join("head0.csv")).unwrap();
    let parsed: Vec<f64> = csv
        .lines()
        .flat_map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()))
        .collect();
    assert_eq!(parsed, h.distances);
    let pgm = std::fs::read(dir.path().join("head0.pgm")).unwrap();
    let header = format!("P5\n{0} {0}\n255\n", h.size);
    assert!(pgm.starts_with(header.as_bytes()));
    assert_eq!(pgm.len(), header.len() + h.size * h.size);
    let order = std::fs::read_to_string(dir.path().join("head0_order.csv")).unwrap();
    assert_eq!(
        order
            .trim()
            .split(',')
            .map(|c| c.parse().unwrap())
            .collect::<Vec<usize>>(),
        h.order
    );
    assert!(redundancy_heatmap(&model, "missing").is_err());
}

#[test]
fn projections_copy_columns() {
    let mut rng = SplitMix64::new(42);
    let model = tiny_model(ModelKind::PointNet, 30, 3, 3);
    let mut cloud = rand_cloud(&mut rng, 30, 3);
    for p in &mut cloud.points {
        p[2] = 0.0;
    }
    let cloud = LabeledPointCloud::new(cloud.points, cloud.labels, 3).unwrap();
    let map = kernel_activation_map(&model, &cloud, "local.0", 1).unwrap();
    assert!(map.activations.iter().all(|&a| a >= 0.0));
    let xy = field_view_projection(&map, (Axis::X, Axis::Y)).unwrap();
    assert_eq!(xy.rows.len(), 30);
    for (r, (p, a)) in xy.rows.iter().zip(cloud.points.iter().zip(&map.activations)) {
        assert_eq!(r, &[p[0], p[1], *a]);
    }
    let zx = field_view_projection(&map, (Axis::Z, Axis::X)).unwrap();
    assert!(zx.rows.iter().all(|r| r[0] == 0.0));
    assert!(zx.to_csv().starts_with("z,x,activation\n"));
    let mut silent = map.clone();
    silent.activations.fill(0.0);
    let proj = field_view_projection(&silent, (Axis::X, Axis::Z)).unwrap();
    assert!(proj.rows.iter().all(|r| r[2] == 0.0));
    assert!(silent.activated().all(|on| !on));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn miou_is_bounded_and_order_free(seed in any::<u64>(), n in 1usize..80, k in 1usize..6) {
        let mut rng = SplitMix64::new(seed);
        let truth: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let m = miou(&pred, &truth, k).unwrap();
        prop_assert!((0.0..=100.0).contains(&m));
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let tp: Vec<usize> = perm.iter().map(|&i| truth[i]).collect();
        let pp: Vec<usize> = perm.iter().map(|&i| pred[i]).collect();
        prop_assert_eq!(miou(&pp, &tp, k).unwrap(), m);
        prop_assert_eq!(miou(&truth, &truth, k).unwrap(), 100.0);
    }

    #[test]
    fn heatmap_entries_are_a_permutation(seed in any::<u64>(), k in 2usize..10, d in 1usize..6) {
        let mut rng = SplitMix64::new(seed);
        let w = rand_tensor(&mut rng, &[d, k], -1.0, 1.0);
        let h = heatmap_from_weights("w", &w).unwrap();
        let cols = kernel_vectors(&w);
        let mut raw: Vec<f64> = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| euclid(&cols[i], &cols[j])).collect();
        let mut shown = h.distances.clone();
        raw.sort_by(f64::total_cmp);
        shown.sort_by(f64::total_cmp);
        for (a, b) in raw.iter().zip(&shown) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
