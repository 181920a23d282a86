use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::mesh::{parse_labels, Point3};
use super::normalize::{max_norm, unit_sphere_normalize, CenterMode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPointCloud {
    pub points: Vec<Point3>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledPointCloud {
    pub fn new(points: Vec<Point3>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("point cloud"));
        }
        if points.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: class_count,
            });
        }
        Ok(LabeledPointCloud {
            points,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_class_count(self, class_count: usize) -> Result<Self> {
        Self::new(self.points, self.labels, class_count)
    }

    pub fn normalized(&self, mode: CenterMode) -> Result<Self> {
        Ok(LabeledPointCloud {
            points: unit_sphere_normalize(&self.points, mode)?,
            labels: self.labels.clone(),
            class_count: self.class_count,
        })
    }

    pub fn max_norm(&self) -> f64 {
        max_norm(&self.points)
    }

    /// Points as an `N×3` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.points.iter().flat_map(|p| p.iter().copied()).collect();
        Tensor::new([self.points.len(), 3], data).expect("N×3 by construction")
    }

    /// Writes `<stem>.pts` (x y z, 17 significant digits) and `<stem>.seg`.
    pub fn write_pts_seg(&self, pts: &Path, seg: &Path) -> Result<()> {
        write_pts(pts, &self.points)?;
        write_seg(seg, &self.labels)
    }

    pub fn read_pts_seg(pts: &Path, seg: &Path, class_count: usize, label_base: usize) -> Result<Self> {
        let points = read_pts(pts)?;
        let raw = super::mesh::read_labels(seg)?;
        let labels = raw
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                l.checked_sub(label_base)
                    .ok_or_else(|| Error::parse(seg, i + 1, format!("label {l} below base {label_base}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points, labels, class_count)
    }
}

/// Shortest decimal form with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_pts(path: &Path, points: &[Point3]) -> Result<()> {
    let mut s = String::with_capacity(points.len() * 72);
    for p in points {
        let _ = writeln!(s, "{} {} {}", fmt_real(p[0]), fmt_real(p[1]), fmt_real(p[2]));
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_seg(path: &Path, labels: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        let _ = writeln!(s, "{l}");
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_pts(path: &Path) -> Result<Vec<Point3>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let xs = l
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::parse(path, i + 1, format!("bad number `{t}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            match xs[..] {
                [x, y, z, ..] => Ok([x, y, z]),
                _ => Err(Error::parse(path, i + 1, "expected three coordinates")),
            }
        })
        .collect()
}

pub fn read_seg(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    parse_labels(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    #[test]
    fn validates_labels_and_lengths() {
        assert!(LabeledPointCloud::new(vec![], vec![], 2).is_err());
        assert!(LabeledPointCloud::new(vec![[0.0; 3]], vec![2], 2).is_err());
        assert!(LabeledPointCloud::new(vec![[0.0; 3]], vec![0, 1], 2).is_err());
    }

    #[test]
    fn shapenet_style_one_based_labels() {
        let dir = tempfile::tempdir().unwrap();
        let (pts, seg) = (dir.path().join("a.pts"), dir.path().join("a.seg"));
        fs::write(&pts, "0 0 0\n1 1 1\n").unwrap();
        fs::write(&seg, "1\n3\n").unwrap();
        let c = LabeledPointCloud::read_pts_seg(&pts, &seg, 3, 1).unwrap();
        assert_eq!(c.labels, vec![0, 2]);
        assert!(LabeledPointCloud::read_pts_seg(&pts, &seg, 3, 0).is_err());
    }

    proptest! {
        #[test]
        fn pts_seg_round_trip_is_bitwise(seed in any::<u64>(), n in 1usize..40) {
            let mut r = SplitMix64::new(seed);
            let points: Vec<Point3> = (0..n)
                .map(|_| [r.uniform(-1.0, 1.0), r.uniform(-1e-7, 1e-7), r.uniform(-1e6, 1e6)])
                .collect();
            let labels: Vec<usize> = (0..n).map(|_| r.below(5)).collect();
            let cloud = LabeledPointCloud::new(points, labels, 5).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let (pts, seg) = (dir.path().join("c.pts"), dir.path().join("c.seg"));
            cloud.write_pts_seg(&pts, &seg).unwrap();
            let back = LabeledPointCloud::read_pts_seg(&pts, &seg, 5, 0).unwrap();
            prop_assert_eq!(back, cloud);
        }
    }
}
