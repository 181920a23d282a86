use super::cloud::LabeledPointCloud;
use super::mesh::{cross, norm, sub, Point3, TriangleMesh};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub fn triangle_area(t: &[Point3; 3]) -> f64 {
    0.5 * norm(cross(sub(t[1], t[0]), sub(t[2], t[0])))
}

/// `12·√3·area / perimeter²`: 1 for an equilateral triangle, 0 when collinear,
/// independent of scale.
pub fn equilaterality_ratio(t: &[Point3; 3]) -> Result<f64> {
    let perimeter = norm(sub(t[1], t[0])) + norm(sub(t[2], t[1])) + norm(sub(t[0], t[2]));
    if perimeter <= 0.0 {
        return Err(Error::Degenerate("triangle with zero perimeter".into()));
    }
    let ratio = 12.0 * 3f64.sqrt() * triangle_area(t) / (perimeter * perimeter);
    Ok(ratio.min(1.0))
}

/// Per-face sampling weight (area × equilaterality) and its running sum.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingWeights {
    pub weights: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl SamplingWeights {
    pub fn from_mesh(mesh: &TriangleMesh) -> Result<Self> {
        let weights = (0..mesh.faces.len())
            .map(|f| {
                let t = mesh.triangle(f);
                Ok(match equilaterality_ratio(&t) {
                    Ok(r) => triangle_area(&t) * r,
                    Err(Error::Degenerate(_)) => 0.0,
                    Err(e) => return Err(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_weights(weights)
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        if acc.is_nan() || acc <= 0.0 {
            return Err(Error::Degenerate("no face with positive sampling weight".into()));
        }
        Ok(SamplingWeights { weights, cumulative })
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().expect("non-empty by construction")
    }

    /// Face whose cumulative interval contains `u·total`, for `u` in `[0, 1)`.
    pub fn select(&self, u: f64) -> usize {
        let target = u * self.total();
        self.cumulative
            .partition_point(|&c| c <= target)
            .min(self.cumulative.len() - 1)
    }
}

/// Barycentric weights of `(a, b, c)` for the draw `(r1, r2)`: `r1` sets the
/// distance from `a` towards the opposite edge, `r2` the position along it.
pub fn barycentric(r1: f64, r2: f64) -> [f64; 3] {
    let s = r1.sqrt();
    [1.0 - s, s * (1.0 - r2), s * r2]
}

/// `P = (1 − √r1)·a + √r1(1 − r2)·b + √r1·r2·c`
pub fn point_in_triangle(t: &[Point3; 3], r1: f64, r2: f64) -> Point3 {
    let [wa, wb, wc] = barycentric(r1, r2);
    let mut p = [0.0; 3];
    for (j, pj) in p.iter_mut().enumerate() {
        *pj = wa * t[0][j] + wb * t[1][j] + wc * t[2][j];
    }
    p
}

/// Draws `n` labeled surface points. Each sample consumes three uniforms in
/// order: face selector, `r1`, `r2`.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<LabeledPointCloud> {
    if n == 0 {
        return Err(Error::Empty("sample count"));
    }
    let weights = SamplingWeights::from_mesh(mesh)?;
    let mut rng = SplitMix64::new(seed);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let face = weights.select(rng.next_f64());
        let r1 = rng.next_f64();
        let r2 = rng.next_f64();
        points.push(point_in_triangle(&mesh.triangle(face), r1, r2));
        labels.push(mesh.face_label(face));
    }
    let class_count = labels.iter().max().map_or(1, |m| m + 1);
    LabeledPointCloud::new(points, labels, class_count)
}
