use ipcnet::datagen::{gen_dataset, gen_shape, read_dataset, write_dataset, Family, ShapeSpec};
use ipcnet::geometry::CenterMode;
use ipcnet::par::Execution;
use ipcnet::training::split_dataset;

#[test]
fn every_cloud_is_unit_normalized() {
    for family in Family::ALL {
        let clouds = gen_dataset(
            &ShapeSpec::new(family),
            6,
            512,
            11,
            CenterMode::Midpoint,
            Execution::Sequential,
        )
        .unwrap();
        for c in &clouds {
            assert!((c.max_norm() - 1.0).abs() <= 1e-9, "{family}: {}", c.max_norm());
            assert_eq!(c.class_count, family.class_count());
            assert!(c.labels.iter().all(|&l| l < family.class_count()));
        }
    }
}

#[test]
fn rocket_parts_each_cover_two_percent() {
    let clouds = gen_dataset(
        &ShapeSpec::new(Family::Rocket),
        10,
        2048,
        12,
        CenterMode::Midpoint,
        Execution::Sequential,
    )
    .unwrap();
    for c in &clouds {
        let mut hist = [0usize; 3];
        for &l in &c.labels {
            hist[l] += 1;
        }
        for h in hist {
            assert!(h as f64 / 2048.0 >= 0.02, "{hist:?}");
        }
    }
}

#[test]
fn rocket_family_splits_sixty_fifteen() {
    let clouds = gen_dataset(
        &ShapeSpec::new(Family::Rocket),
        75,
        64,
        13,
        CenterMode::Midpoint,
        Execution::Parallel,
    )
    .unwrap();
    assert_eq!(clouds.len(), 75);
    let (train, test) = split_dataset(&clouds, 0.8, 13).unwrap();
    assert_eq!((train.len(), test.len()), (60, 15));
}

#[test]
fn generation_ignores_execution_mode() {
    let spec = ShapeSpec::new(Family::Motorbike);
    let a = gen_dataset(&spec, 5, 256, 14, CenterMode::Midpoint, Execution::Sequential).unwrap();
    let b = gen_dataset(&spec, 5, 256, 14, CenterMode::Midpoint, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(gen_shape(&spec, 3).unwrap(), gen_shape(&spec, 3).unwrap());
}

#[test]
fn write_then_read_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let rockets = gen_dataset(
        &ShapeSpec::new(Family::Rocket),
        4,
        128,
        15,
        CenterMode::Midpoint,
        Execution::Sequential,
    )
    .unwrap();
    let cars = gen_dataset(
        &ShapeSpec::new(Family::Car),
        3,
        128,
        16,
        CenterMode::Midpoint,
        Execution::Sequential,
    )
    .unwrap();
    write_dataset(dir.path(), "rocket", &rockets).unwrap();
    write_dataset(dir.path(), "car", &cars).unwrap();
    let back = read_dataset(dir.path(), "rocket", 3, 0).unwrap();
    assert_eq!(back.iter().map(|n| n.cloud.clone()).collect::<Vec<_>>(), rockets);
    assert_eq!(back[2].name, "0002");
    let back = read_dataset(dir.path(), "car", 3, 0).unwrap();
    assert_eq!(back.iter().map(|n| n.cloud.clone()).collect::<Vec<_>>(), cars);
}

#[test]
fn reads_directories_without_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let clouds = gen_dataset(
        &ShapeSpec::new(Family::Aircraft),
        2,
        64,
        17,
        CenterMode::Midpoint,
        Execution::Sequential,
    )
    .unwrap();
    let fam = dir.path().join("aircraft");
    std::fs::create_dir_all(fam.join("points")).unwrap();
    std::fs::create_dir_all(fam.join("points_label")).unwrap();
    for (i, c) in clouds.iter().enumerate() {
        let one_based: Vec<usize> = c.labels.iter().map(|l| l + 1).collect();
        ipcnet::geometry::write_pts(&fam.join(format!("points/s{i}.pts")), &c.points).unwrap();
        ipcnet::geometry::write_seg(&fam.join(format!("points_label/s{i}.seg")), &one_based).unwrap();
    }
    let back = read_dataset(dir.path(), "aircraft", 4, 1).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[1].name, "s1");
    assert_eq!(back[1].cloud, clouds[1]);
}
