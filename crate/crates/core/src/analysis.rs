//! Segmentation metrics and kernel-analysis instruments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{fmt_real, LabeledPointCloud, Point3};
use crate::model::SegModel;
use crate::tensor::{Graph, Tensor};

/// Mean intersection-over-union in percent. Classes absent from both the
/// prediction and the ground truth score 1.
pub fn miou(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "prediction has {} labels, ground truth {}",
            pred.len(),
            truth.len()
        )));
    }
    if classes == 0 {
        return Err(Error::Empty("class count"));
    }
    let mut inter = vec![0usize; classes];
    let mut union = vec![0usize; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        for label in [p, t] {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
        }
        if p == t {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[t] += 1;
        }
    }
    let total: f64 = inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| if u == 0 { 1.0 } else { i as f64 / u as f64 })
        .sum();
    Ok(100.0 * total / classes as f64)
}

/// Percentage of points whose predicted label equals the truth.
pub fn point_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "prediction has {} labels, ground truth {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("label list"));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / pred.len() as f64)
}

/// One kernel's per-point output for one cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelActivationMap {
    pub layer: String,
    pub kernel: usize,
    pub points: Vec<Point3>,
    pub activations: Vec<f64>,
}

impl KernelActivationMap {
    pub fn activated(&self) -> impl Iterator<Item = bool> + '_ {
        self.activations.iter().map(|&a| a > 0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,z,activation\n");
        for (p, a) in self.points.iter().zip(&self.activations) {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                fmt_real(p[0]),
                fmt_real(p[1]),
                fmt_real(p[2]),
                fmt_real(*a)
            );
        }
        out
    }
}

/// Runs a forward pass and returns column `kernel` of the per-point output
/// of `layer` (post-activation where the layer has one).
pub fn kernel_activation_map(
    model: &SegModel,
    cloud: &LabeledPointCloud,
    layer: &str,
    kernel: usize,
) -> Result<KernelActivationMap> {
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g, false);
    let x = g.constant(cloud.to_tensor());
    let fwd = model.forward(&mut g, &bound, x)?;
    let var = fwd
        .taps
        .get(layer)
        .ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
    let t = g.value(var);
    let (rows, cols) = t.dims2()?;
    if rows != cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "layer `{layer}` has {rows} rows, not one per point ({})",
            cloud.len()
        )));
    }
    if kernel >= cols {
        return Err(Error::UnknownKernel {
            layer: layer.to_string(),
            index: kernel,
            count: cols,
        });
    }
    Ok(KernelActivationMap {
        layer: layer.to_string(),
        kernel,
        points: cloud.points.clone(),
        activations: (0..rows).map(|i| t.at2(i, kernel)).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        ["x", "y", "z"][self.index()]
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(Error::config("axes", format!("unknown axis `{s}`"))),
        }
    }
}

/// Two chosen coordinates of every point plus its activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub axes: (Axis, Axis),
    pub rows: Vec<[f64; 3]>,
}

impl Projection {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{},activation\n", self.axes.0.name(), self.axes.1.name());
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", fmt_real(r[0]), fmt_real(r[1]), fmt_real(r[2]));
        }
        out
    }
}

pub fn field_view_projection(map: &KernelActivationMap, axes: (Axis, Axis)) -> Result<Projection> {
    if axes.0 == axes.1 {
        return Err(Error::config("axes", "projection axes must differ"));
    }
    let rows = map
        .points
        .iter()
        .zip(&map.activations)
        .map(|(p, &a)| [p[axes.0.index()], p[axes.1.index()], a])
        .collect();
    Ok(Projection { axes, rows })
}

/// Pairwise kernel distances, already reordered.
#[derive(Clone, Debug, PartialEq)]
pub struct RedundancyHeatmap {
    pub layer: String,
    /// `K×K`, row-major, in display order.
    pub distances: Vec<f64>,
    pub size: usize,
    /// `order[r]` is the original kernel index shown at row/column `r`.
    pub order: Vec<usize>,
}

impl RedundancyHeatmap {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.size + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.distances.chunks_exact(self.size).map(|r| r.iter().sum()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.distances.chunks_exact(self.size) {
            let cells: Vec<String> = row.iter().map(|&d| fmt_real(d)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn order_csv(&self) -> String {
        let cells: Vec<String> = self.order.iter().map(ToString::to_string).collect();
        format!("{}\n", cells.join(","))
    }

    /// Binary 8-bit PGM: smallest distance white, largest black.
    pub fn to_pgm(&self) -> Vec<u8> {
        let lo = self.distances.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out = format!("P5\n{} {}\n255\n", self.size, self.size).into_bytes();
        out.extend(self.distances.iter().map(|&d| {
            let t = if hi > lo { (d - lo) / (hi - lo) } else { 0.0 };
            (255.0 - (255.0 * t).round()) as u8
        }));
        out
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        fs::write(dir.join(format!("{stem}.pgm")), self.to_pgm())?;
        fs::write(dir.join(format!("{stem}_order.csv")), self.order_csv())?;
        Ok(())
    }
}

/// Kernel `j` of a weight tensor is every entry whose last index is `j`:
/// a column of a dense `in×out` matrix or an output slice of a conv kernel.
pub fn kernel_vectors(weight: &Tensor) -> Vec<Vec<f64>> {
    let k = *weight.shape().last().expect("tensor has at least one axis");
    let mut vectors = vec![Vec::with_capacity(weight.len() / k); k];
    for (i, &v) in weight.data().iter().enumerate() {
        vectors[i % k].push(v);
    }
    vectors
}

pub fn heatmap_from_weights(layer: &str, weight: &Tensor) -> Result<RedundancyHeatmap> {
    let kernels = kernel_vectors(weight);
    let k = kernels.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "layer `{layer}` has {k} kernel; need at least 2"
        )));
    }
    let mut raw = vec![0.0; k * k];
    for i in 0..k {
        for j in i + 1..k {
            let d = kernels[i]
                .iter()
                .zip(&kernels[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            raw[i * k + j] = d;
            raw[j * k + i] = d;
        }
    }
    let sums: Vec<f64> = raw.chunks_exact(k).map(|r| r.iter().sum()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sums[a].total_cmp(&sums[b]).then(a.cmp(&b)));
    let distances = order
        .iter()
        .flat_map(|&i| order.iter().map(move |&j| (i, j)))
        .map(|(i, j)| raw[i * k + j])
        .collect();
    Ok(RedundancyHeatmap {
        layer: layer.to_string(),
        distances,
        size: k,
        order,
    })
}

/// Heatmap over the kernels of `layer`, using its incoming weights (bias excluded).
pub fn redundancy_heatmap(model: &SegModel, layer: &str) -> Result<RedundancyHeatmap> {
    let weight = model
        .params()
        .get(&format!("{layer}.weight"))
        .ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
    heatmap_from_weights(layer, weight)
}

/// Mean off-diagonal distance.
pub fn redundancy_score(heatmap: &RedundancyHeatmap) -> f64 {
    let k = heatmap.size;
    let total: f64 = heatmap.distances.iter().sum();
    total / (k * k - k) as f64
}
