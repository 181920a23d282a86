#![allow(dead_code)]

use ipcnet::geometry::LabeledPointCloud;
use ipcnet::ipcnet::{InterPointConfig, InterPointLayer};
use ipcnet::model::{Architecture, ModelKind, SegModel};
use ipcnet::pointnet::{PointNetConfig, TNetConfig};
use ipcnet::rng::SplitMix64;
use ipcnet::tensor::{Graph, Tensor, Var};
use ipcnet::Result;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-3;

pub fn rand_tensor(rng: &mut SplitMix64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

pub fn rand_cloud(rng: &mut SplitMix64, n: usize, classes: usize) -> LabeledPointCloud {
    let points = (0..n)
        .map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)])
        .collect();
    let labels = (0..n).map(|_| rng.below(classes)).collect();
    LabeledPointCloud::new(points, labels, classes).unwrap()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct FdStats {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
}

impl FdStats {
    pub fn merge(&mut self, other: FdStats) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.max_rel = self.max_rel.max(other.max_rel);
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

type Build<'a> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a;

fn eval(inputs: &[Tensor], f: &Build) -> (f64, u64) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    (g.value(out).data()[0], g.branch_signature())
}

/// Compares the tape gradient of the scalar `f(inputs)` against central
/// differences at up to `per_input` random coordinates of every input.
/// Coordinates where a ±h step flips a ReLU gate or a max-pool winner are
/// skipped, since the derivative does not exist there.
pub fn fd_check(rng: &mut SplitMix64, inputs: &[Tensor], per_input: usize, f: &Build) -> FdStats {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    let base = g.branch_signature();
    let mut grads = g.backward(out).unwrap();
    let mut stats = FdStats::default();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .take(*v)
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        let n = inputs[i].len();
        let coords: Vec<usize> = if n <= per_input {
            (0..n).collect()
        } else {
            (0..per_input).map(|_| rng.below(n)).collect()
        };
        for c in coords {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[c] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[c] -= FD_STEP;
            let (fp, sp) = eval(&plus, f);
            let (fm, sm) = eval(&minus, f);
            if sp != base || sm != base {
                stats.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            stats.max_rel = stats.max_rel.max(rel_err(analytic.data()[c], numeric));
            stats.checked += 1;
        }
    }
    stats
}

pub fn tiny_pointnet(classes: usize) -> PointNetConfig {
    let tnet = TNetConfig {
        point_widths: vec![4, 6],
        fc_widths: vec![5],
    };
    PointNetConfig {
        input_tnet: Some(tnet.clone()),
        feature_tnet: Some(tnet),
        local_widths: vec![5, 4],
        global_widths: vec![6, 8],
        head_widths: vec![6],
        num_classes: classes,
    }
}

/// Reference layer sequence with narrow channels, sized for 64 points.
pub fn shrunk_interpoint(width: usize) -> InterPointConfig {
    let conv = |name: &str, out, k, w, s| InterPointLayer::Conv {
        name: name.into(),
        out_channels: out,
        kernel: (k, w),
        stride: (s, 1),
    };
    InterPointConfig {
        layers: vec![
            conv("extract", 6, 1, width, 1),
            InterPointLayer::MaxPool {
                name: "zero_removal".into(),
                kernel: (2, 1),
                stride: (2, 1),
            },
            conv("downsample1", 4, 3, 1, 2),
            conv("downsample2", 3, 3, 1, 2),
            conv("downsample3", 2, 2, 1, 2),
        ],
    }
}

pub fn tiny_model(kind: ModelKind, points: usize, classes: usize, seed: u64) -> SegModel {
    let pn = tiny_pointnet(classes);
    let mut arch = Architecture::new(kind, pn.clone(), points);
    if kind == ModelKind::IpcNet {
        arch.interpoint = Some(shrunk_interpoint(pn.local_width()));
    }
    SegModel::build(&arch, seed).unwrap()
}
