use super::mesh::Point3;
use crate::error::{Error, Result};

/// How the centering offset is computed from the bounding box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CenterMode {
    /// `(max + min) / 2` per axis.
    #[default]
    Midpoint,
    /// `(max - min) / 2` per axis, exactly as the formula is usually printed.
    /// Only centers shapes whose minimum corner sits at the origin.
    LiteralHalfExtent,
}

pub fn bbox_center(points: &[Point3], mode: CenterMode) -> Result<Point3> {
    let first = points.first().ok_or(Error::Empty("point cloud"))?;
    let mut lo = *first;
    let mut hi = *first;
    for p in points {
        for j in 0..3 {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    let mut c = [0.0; 3];
    for j in 0..3 {
        c[j] = match mode {
            CenterMode::Midpoint => (hi[j] + lo[j]) * 0.5,
            CenterMode::LiteralHalfExtent => (hi[j] - lo[j]) * 0.5,
        };
    }
    Ok(c)
}

/// Centers the cloud and scales it so the farthest point is at distance 1.
pub fn unit_sphere_normalize(points: &[Point3], mode: CenterMode) -> Result<Vec<Point3>> {
    let c = bbox_center(points, mode)?;
    let radius = points
        .iter()
        .map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    if radius <= 0.0 || !radius.is_finite() {
        return Err(Error::Degenerate(format!(
            "cannot normalize cloud with radius {radius}"
        )));
    }
    Ok(points
        .iter()
        .map(|p| [(p[0] - c[0]) / radius, (p[1] - c[1]) / radius, (p[2] - c[2]) / radius])
        .collect())
}

pub fn max_norm(points: &[Point3]) -> f64 {
    points
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_cloud(seed: u64, n: usize) -> Vec<Point3> {
        let mut r = SplitMix64::new(seed);
        (0..n)
            .map(|_| [r.uniform(-3.0, 5.0), r.uniform(-1.0, 1.0), r.uniform(0.0, 2.0)])
            .collect()
    }

    #[test]
    fn center_examples() {
        let cube: Vec<Point3> = (0..8)
            .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
            .collect();
        assert_eq!(bbox_center(&cube, CenterMode::Midpoint).unwrap(), [0.5; 3]);
        assert_eq!(
            bbox_center(&[[1.5, -2.0, 3.0]], CenterMode::Midpoint).unwrap(),
            [1.5, -2.0, 3.0]
        );
        assert!(bbox_center(&[], CenterMode::Midpoint).is_err());

        let shifted: Vec<Point3> = cube.iter().map(|p| [p[0] + 2.0, p[1], p[2]]).collect();
        // Literal variant reports the half extent, independent of position.
        assert_eq!(bbox_center(&shifted, CenterMode::LiteralHalfExtent).unwrap(), [0.5; 3]);
    }

    #[test]
    fn center_follows_translation() {
        let cloud = random_cloud(1, 50);
        let t = [0.25, -4.0, 8.0];
        let moved: Vec<Point3> = cloud.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect();
        let a = bbox_center(&cloud, CenterMode::Midpoint).unwrap();
        let b = bbox_center(&moved, CenterMode::Midpoint).unwrap();
        for j in 0..3 {
            assert!((b[j] - a[j] - t[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair() {
        let out = unit_sphere_normalize(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]], CenterMode::Midpoint).unwrap();
        assert_eq!(out, vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn coincident_points_are_degenerate() {
        assert!(matches!(
            unit_sphere_normalize(&[[1.0, 1.0, 1.0]; 4], CenterMode::Midpoint),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn unit_radius_idempotent_and_similarity_invariant() {
        for seed in 0..20 {
            let cloud = random_cloud(seed, 64);
            let once = unit_sphere_normalize(&cloud, CenterMode::Midpoint).unwrap();
            assert!((max_norm(&once) - 1.0).abs() < 1e-12);
            let twice = unit_sphere_normalize(&once, CenterMode::Midpoint).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                for j in 0..3 {
                    assert!((a[j] - b[j]).abs() < 1e-12);
                }
            }
            let (s, t) = (3.7, [10.0, -2.0, 0.5]);
            let moved: Vec<Point3> = cloud
                .iter()
                .map(|p| [s * p[0] + t[0], s * p[1] + t[1], s * p[2] + t[2]])
                .collect();
            let other = unit_sphere_normalize(&moved, CenterMode::Midpoint).unwrap();
            for (a, b) in once.iter().zip(&other) {
                for j in 0..3 {
                    assert!((a[j] - b[j]).abs() < 1e-9);
                }
            }
        }
    }
}
