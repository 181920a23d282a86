//! PointNet segmentation network: input transform, shared per-point MLPs,
//! feature transform, max-pooled global feature and a per-point head fed
//! with local and global features side by side.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Bound, Graph, ParamSet, Tensor, Var};

/// Layout of a transform network predicting a `d×d` matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TNetConfig {
    /// Shared per-point layer widths, ending in the pooled width.
    pub point_widths: Vec<usize>,
    /// Fully connected widths applied to the pooled vector.
    pub fc_widths: Vec<usize>,
}

impl TNetConfig {
    pub fn paper() -> Self {
        TNetConfig {
            point_widths: vec![64, 128, 1024],
            fc_widths: vec![512, 256],
        }
    }

    pub fn toy() -> Self {
        TNetConfig {
            point_widths: vec![16, 32, 64],
            fc_widths: vec![32, 16],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointNetConfig {
    pub input_tnet: Option<TNetConfig>,
    pub feature_tnet: Option<TNetConfig>,
    /// Per-point widths before the feature transform; the last one is the
    /// local feature width.
    pub local_widths: Vec<usize>,
    /// Per-point widths after the feature transform; the last one is the
    /// global feature width.
    pub global_widths: Vec<usize>,
    /// Hidden widths of the segmentation head.
    pub head_widths: Vec<usize>,
    pub num_classes: usize,
}

impl PointNetConfig {
    /// 64-64 | 64-128-1024 trunk with a 512-256-128 head.
    pub fn paper(num_classes: usize) -> Self {
        PointNetConfig {
            input_tnet: Some(TNetConfig::paper()),
            feature_tnet: Some(TNetConfig::paper()),
            local_widths: vec![64, 64],
            global_widths: vec![64, 128, 1024],
            head_widths: vec![512, 256, 128],
            num_classes,
        }
    }

    /// Shrunk widths for desk-scale training runs.
    pub fn toy(num_classes: usize) -> Self {
        PointNetConfig {
            input_tnet: Some(TNetConfig::toy()),
            feature_tnet: Some(TNetConfig::toy()),
            local_widths: vec![32, 32],
            global_widths: vec![32, 64, 128],
            head_widths: vec![64, 32, 16],
            num_classes,
        }
    }

    pub fn local_width(&self) -> usize {
        *self.local_widths.last().expect("validated")
    }

    pub fn global_width(&self) -> usize {
        *self.global_widths.last().expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("local_widths", &self.local_widths),
            ("global_widths", &self.global_widths),
        ];
        for (key, widths) in lists {
            if widths.is_empty() || widths.contains(&0) {
                return Err(Error::config(key, "needs at least one positive width"));
            }
        }
        if self.head_widths.contains(&0) {
            return Err(Error::config("head_widths", "widths must be positive"));
        }
        for (key, tnet) in [("input_tnet", &self.input_tnet), ("feature_tnet", &self.feature_tnet)] {
            if let Some(t) = tnet {
                if t.point_widths.is_empty() || t.point_widths.contains(&0) || t.fc_widths.contains(&0) {
                    return Err(Error::config(key, "needs positive per-point widths"));
                }
            }
        }
        if self.num_classes < 2 {
            return Err(Error::config("classes", "need at least two classes"));
        }
        Ok(())
    }
}

/// Per-point layer outputs recorded during a forward pass, by layer id.
#[derive(Debug, Default)]
pub struct Taps {
    entries: Vec<(String, Var)>,
}

impl Taps {
    pub fn push(&mut self, layer: impl Into<String>, var: Var) {
        self.entries.push((layer.into(), var));
    }

    pub fn get(&self, layer: &str) -> Option<Var> {
        self.entries.iter().find(|(l, _)| l == layer).map(|&(_, v)| v)
    }

    pub fn layers(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(l, _)| l.as_str())
    }
}

/// Graph handles produced by one forward pass.
#[derive(Debug)]
pub struct SegForward {
    pub logits: Var,
    pub input_matrix: Option<Var>,
    pub feature_matrix: Option<Var>,
    pub local: Var,
    pub global: Var,
    pub taps: Taps,
}

/// Handles for the shared trunk, before the head.
#[derive(Debug)]
pub struct Trunk {
    pub input_matrix: Option<Var>,
    pub feature_matrix: Option<Var>,
    /// `N×local_width`, after the feature transform.
    pub local: Var,
    /// `1×global_width`.
    pub global: Var,
    pub taps: Taps,
}

pub(crate) fn init_dense(params: &mut ParamSet, seed: u64, name: &str, fan_in: usize, fan_out: usize) {
    let weight_name = format!("{name}.weight");
    let mut rng = SplitMix64::stream(seed, &weight_name);
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect();
    params.insert(weight_name, Tensor::new([fan_in, fan_out], data).expect("sized above"));
    params.insert(format!("{name}.bias"), Tensor::zeros([fan_out]));
}

fn init_tnet(params: &mut ParamSet, seed: u64, prefix: &str, cfg: &TNetConfig, d: usize) {
    let mut width = d;
    for (i, &w) in cfg.point_widths.iter().enumerate() {
        init_dense(params, seed, &format!("{prefix}.mlp.{i}"), width, w);
        width = w;
    }
    for (i, &w) in cfg.fc_widths.iter().enumerate() {
        init_dense(params, seed, &format!("{prefix}.fc.{i}"), width, w);
        width = w;
    }
    params.insert(format!("{prefix}.out.weight"), Tensor::zeros([width, d * d]));
    params.insert(
        format!("{prefix}.out.bias"),
        Tensor::eye(d).reshaped([d * d]).expect("d·d values"),
    );
}

/// `x·W + b`, followed by ReLU when `relu` is set.
pub(crate) fn dense(g: &mut Graph, bound: &Bound, name: &str, x: Var, relu: bool) -> Result<Var> {
    let w = bound.get(&format!("{name}.weight"))?;
    let b = bound.get(&format!("{name}.bias"))?;
    let y = g.matmul(x, w)?;
    let y = g.add_row(y, b)?;
    Ok(if relu { g.relu(y) } else { y })
}

/// Per-channel max over the rows of an `N×C` matrix, returned as `1×C`.
pub fn max_over_points(g: &mut Graph, x: Var) -> Result<Var> {
    let (n, c) = match g.shape(x) {
        &[n, c] => (n, c),
        s => {
            return Err(Error::InvalidShape {
                op: "max_over_points",
                shape: s.to_vec(),
                reason: "expected N×C".into(),
            })
        }
    };
    let m = g.reshape(x, [n, 1, c])?;
    let pooled = g.maxpool(m, (n, 1), (1, 1))?;
    g.reshape(pooled, [1, c])
}

/// Runs a transform network on `x` (`N×d`) and returns `(matrix, x·matrix)`.
fn apply_tnet(
    g: &mut Graph,
    bound: &Bound,
    prefix: &str,
    cfg: &TNetConfig,
    x: Var,
    taps: &mut Taps,
) -> Result<(Var, Var)> {
    let d = g.shape(x)[1];
    let mut h = x;
    for i in 0..cfg.point_widths.len() {
        let name = format!("{prefix}.mlp.{i}");
        h = dense(g, bound, &name, h, true)?;
        taps.push(name, h);
    }
    let mut v = max_over_points(g, h)?;
    for i in 0..cfg.fc_widths.len() {
        v = dense(g, bound, &format!("{prefix}.fc.{i}"), v, true)?;
    }
    let flat = dense(g, bound, &format!("{prefix}.out"), v, false)?;
    let matrix = g.reshape(flat, [d, d])?;
    let transformed = g.matmul(x, matrix)?;
    Ok((matrix, transformed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointNetSegModel {
    pub config: PointNetConfig,
    pub params: ParamSet,
    /// Width of additional per-point features appended to the head input.
    pub extra_head_inputs: usize,
}

impl PointNetSegModel {
    pub fn new(config: PointNetConfig, seed: u64) -> Result<Self> {
        Self::with_extra_head_inputs(config, 0, seed)
    }

    /// Each parameter is drawn from its own named stream, so removing a
    /// sub-network leaves every other initial value unchanged.
    pub fn with_extra_head_inputs(config: PointNetConfig, extra: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        if let Some(t) = &config.input_tnet {
            init_tnet(&mut params, seed, "input_tnet", t, 3);
        }
        let mut width = 3;
        for (i, &w) in config.local_widths.iter().enumerate() {
            init_dense(&mut params, seed, &format!("local.{i}"), width, w);
            width = w;
        }
        if let Some(t) = &config.feature_tnet {
            init_tnet(&mut params, seed, "feature_tnet", t, width);
        }
        for (i, &w) in config.global_widths.iter().enumerate() {
            init_dense(&mut params, seed, &format!("global.{i}"), width, w);
            width = w;
        }
        let mut width = config.local_width() + config.global_width() + extra;
        for (i, &w) in config.head_widths.iter().enumerate() {
            init_dense(&mut params, seed, &format!("head.{i}"), width, w);
            width = w;
        }
        init_dense(&mut params, seed, "head.out", width, config.num_classes);
        Ok(PointNetSegModel {
            config,
            params,
            extra_head_inputs: extra,
        })
    }

    pub fn head_input_width(&self) -> usize {
        self.config.local_width() + self.config.global_width() + self.extra_head_inputs
    }

    /// Input transform, local MLPs, feature transform, global MLPs, max pool.
    pub fn trunk(&self, g: &mut Graph, bound: &Bound, points: Var) -> Result<Trunk> {
        match g.shape(points) {
            &[n, 3] if n >= 1 => {}
            s => {
                return Err(Error::InvalidShape {
                    op: "segment",
                    shape: s.to_vec(),
                    reason: "expected N×3 points".into(),
                })
            }
        }
        let mut taps = Taps::default();
        let mut x = points;
        let mut input_matrix = None;
        if let Some(t) = &self.config.input_tnet {
            let (m, y) = apply_tnet(g, bound, "input_tnet", t, x, &mut taps)?;
            input_matrix = Some(m);
            x = y;
        }
        for i in 0..self.config.local_widths.len() {
            let name = format!("local.{i}");
            x = dense(g, bound, &name, x, true)?;
            taps.push(name, x);
        }
        let mut feature_matrix = None;
        if let Some(t) = &self.config.feature_tnet {
            let (m, y) = apply_tnet(g, bound, "feature_tnet", t, x, &mut taps)?;
            feature_matrix = Some(m);
            x = y;
            taps.push("feature_transform", x);
        }
        let local = x;
        for i in 0..self.config.global_widths.len() {
            let name = format!("global.{i}");
            x = dense(g, bound, &name, x, true)?;
            taps.push(name, x);
        }
        let global = max_over_points(g, x)?;
        Ok(Trunk {
            input_matrix,
            feature_matrix,
            local,
            global,
            taps,
        })
    }

    /// Hidden head layers followed by the logit layer.
    pub fn head(&self, g: &mut Graph, bound: &Bound, features: Var, taps: &mut Taps) -> Result<Var> {
        let width = g.shape(features)[1];
        if width != self.head_input_width() {
            return Err(Error::ShapeMismatch {
                op: "head",
                left: g.shape(features).to_vec(),
                right: vec![self.head_input_width()],
            });
        }
        let mut h = features;
        for i in 0..self.config.head_widths.len() {
            let name = format!("head.{i}");
            h = dense(g, bound, &name, h, true)?;
            taps.push(name, h);
        }
        dense(g, bound, "head.out", h, false)
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, points: Var) -> Result<SegForward> {
        let mut trunk = self.trunk(g, bound, points)?;
        let n = g.shape(points)[0];
        let tiled = g.tile_rows(trunk.global, n)?;
        let features = g.concat(&[trunk.local, tiled], 1)?;
        let logits = self.head(g, bound, features, &mut trunk.taps)?;
        Ok(SegForward {
            logits,
            input_matrix: trunk.input_matrix,
            feature_matrix: trunk.feature_matrix,
            local: trunk.local,
            global: trunk.global,
            taps: trunk.taps,
        })
    }
}

/// `‖I − A·Aᵀ‖²_F` as a differentiable scalar.
pub fn l_reg(g: &mut Graph, a: Var) -> Result<Var> {
    let d = match g.shape(a) {
        &[r, c] if r == c => r,
        s => {
            return Err(Error::InvalidShape {
                op: "l_reg",
                shape: s.to_vec(),
                reason: "expected a square matrix".into(),
            })
        }
    };
    let at = g.transpose(a)?;
    let aat = g.matmul(a, at)?;
    let eye = g.constant(Tensor::eye(d));
    let diff = g.sub(eye, aat)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.sum(sq))
}

pub fn l_reg_value(a: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.constant(a.clone());
    let r = l_reg(&mut g, v)?;
    Ok(g.value(r).data()[0])
}

/// Per-channel maximum over points of an `N×C` feature matrix.
pub fn global_feature(features: &Tensor) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let v = g.constant(features.clone());
    let m = max_over_points(&mut g, v)?;
    Ok(g.value(m).data().to_vec())
}

/// Outputs of an untracked forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub logits: Tensor,
    pub input_matrix: Option<Tensor>,
    pub feature_matrix: Option<Tensor>,
}

/// Stand-alone transform evaluation at dimension `d`: returns the predicted
/// matrix and `x·matrix`. Parameters are read from `params` under `prefix`.
pub fn apply_transform(params: &ParamSet, prefix: &str, cfg: &TNetConfig, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let (m, y) = apply_tnet(&mut g, &bound, prefix, cfg, xv, &mut Taps::default())?;
    Ok((g.value(m).clone(), g.value(y).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(classes: usize) -> PointNetConfig {
        PointNetConfig {
            input_tnet: Some(TNetConfig {
                point_widths: vec![4, 6],
                fc_widths: vec![5],
            }),
            feature_tnet: Some(TNetConfig {
                point_widths: vec![4, 6],
                fc_widths: vec![5],
            }),
            local_widths: vec![5, 4],
            global_widths: vec![6, 8],
            head_widths: vec![7],
            num_classes: classes,
        }
    }

    #[test]
    fn widths_concatenate_to_head_input() {
        let m = PointNetSegModel::new(PointNetConfig::paper(4), 0).unwrap();
        assert_eq!(m.head_input_width(), 1088);
        assert_eq!(m.params.get("head.0.weight").unwrap().shape(), &[1088, 512]);
        assert_eq!(m.params.get("feature_tnet.out.bias").unwrap().len(), 64 * 64);
    }

    #[test]
    fn l_reg_examples() {
        assert_eq!(l_reg_value(&Tensor::eye(5)).unwrap(), 0.0);
        let two = Tensor::new([3, 3], vec![2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(l_reg_value(&two).unwrap(), 27.0);
        assert!(l_reg_value(&Tensor::zeros([2, 3])).is_err());
    }

    #[test]
    fn untrained_transform_is_identity() {
        let m = PointNetSegModel::new(tiny(3), 11).unwrap();
        let x = Tensor::new([4, 3], (0..12).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap();
        let (mat, y) = apply_transform(&m.params, "input_tnet", m.config.input_tnet.as_ref().unwrap(), &x).unwrap();
        assert_eq!(mat, Tensor::eye(3));
        assert_eq!(y, x);
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut c = tiny(3);
        c.local_widths.clear();
        assert!(PointNetSegModel::new(c, 0).is_err());
        assert!(PointNetSegModel::new(tiny(1), 0).is_err());
    }
}
