use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ipcnet::{InterPointConfig, IpcNetSegModel};
use crate::pointnet::{l_reg, PointNetConfig, PointNetSegModel, SegForward, Segmentation, TNetConfig};
use crate::tensor::{Bound, Graph, ParamSet, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    PointNet,
    IpcNet,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::PointNet => "pointnet",
            ModelKind::IpcNet => "ipcnet",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointnet" => Ok(ModelKind::PointNet),
            "ipcnet" => Ok(ModelKind::IpcNet),
            other => Err(Error::config(
                "model",
                format!("expected pointnet or ipcnet, got `{other}`"),
            )),
        }
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub kind: ModelKind,
    pub pointnet: PointNetConfig,
    /// Inter-point chain, already scaled for `num_points`.
    pub interpoint: Option<InterPointConfig>,
    pub num_points: usize,
}

fn widths_text(w: &[usize]) -> String {
    w.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub(crate) fn parse_widths(key: &str, text: &str) -> Result<Vec<usize>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| Error::config(key, format!("`{t}`: {e}")))
        })
        .collect()
}

impl Architecture {
    pub fn new(kind: ModelKind, pointnet: PointNetConfig, num_points: usize) -> Self {
        let interpoint = (kind == ModelKind::IpcNet)
            .then(|| InterPointConfig::with_activation_width(pointnet.local_width()).scaled_for(num_points));
        Architecture {
            kind,
            pointnet,
            interpoint,
            num_points,
        }
    }

    /// Canonical `key=value` lines, sorted by key.
    pub fn to_text(&self) -> String {
        let mut kv = BTreeMap::new();
        let p = &self.pointnet;
        kv.insert("model", self.kind.to_string());
        kv.insert("classes", p.num_classes.to_string());
        kv.insert("points", self.num_points.to_string());
        kv.insert("local_widths", widths_text(&p.local_widths));
        kv.insert("global_widths", widths_text(&p.global_widths));
        kv.insert("head_widths", widths_text(&p.head_widths));
        for (key, t) in [("input_tnet", &p.input_tnet), ("feature_tnet", &p.feature_tnet)] {
            match t {
                Some(t) => {
                    kv.insert(
                        key,
                        format!("{}|{}", widths_text(&t.point_widths), widths_text(&t.fc_widths)),
                    );
                }
                None => {
                    kv.insert(key, "none".into());
                }
            }
        }
        if let Some(ipc) = &self.interpoint {
            kv.insert("ipc_layers", ipc.to_text());
        }
        kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_once('=')
                    .ok_or_else(|| Error::Checkpoint(format!("bad config line `{l}`")))
            })
            .collect::<Result<_>>()?;
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::config(k, "missing"));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|e| Error::config(k, format!("{e}"))) };
        let tnet = |k: &str| -> Result<Option<TNetConfig>> {
            let v = get(k)?;
            if v == "none" {
                return Ok(None);
            }
            let (a, b) = v.split_once('|').ok_or_else(|| Error::config(k, "expected `mlp|fc`"))?;
            Ok(Some(TNetConfig {
                point_widths: parse_widths(k, a)?,
                fc_widths: parse_widths(k, b)?,
            }))
        };
        let kind: ModelKind = get("model")?.parse()?;
        let pointnet = PointNetConfig {
            input_tnet: tnet("input_tnet")?,
            feature_tnet: tnet("feature_tnet")?,
            local_widths: parse_widths("local_widths", get("local_widths")?)?,
            global_widths: parse_widths("global_widths", get("global_widths")?)?,
            head_widths: parse_widths("head_widths", get("head_widths")?)?,
            num_classes: num("classes")?,
        };
        let interpoint = match kind {
            ModelKind::IpcNet => Some(InterPointConfig::parse(get("ipc_layers")?)?),
            ModelKind::PointNet => None,
        };
        Ok(Architecture {
            kind,
            pointnet,
            interpoint,
            num_points: num("points")?,
        })
    }
}

/// Either segmentation network behind one interface.
#[derive(Clone, Debug, PartialEq)]
pub enum SegModel {
    PointNet(PointNetSegModel),
    IpcNet(IpcNetSegModel),
}

/// Scalar loss handles: `total = cross_entropy + lambda · regularizer`.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub cross_entropy: Var,
    pub regularizer: Option<Var>,
}

impl SegModel {
    pub fn build(arch: &Architecture, seed: u64) -> Result<Self> {
        Ok(match arch.kind {
            ModelKind::PointNet => SegModel::PointNet(PointNetSegModel::new(arch.pointnet.clone(), seed)?),
            ModelKind::IpcNet => {
                let ipc = arch
                    .interpoint
                    .clone()
                    .ok_or_else(|| Error::config("ipc_layers", "missing for ipcnet"))?;
                SegModel::IpcNet(IpcNetSegModel::new(arch.pointnet.clone(), ipc, arch.num_points, seed)?)
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            SegModel::PointNet(_) => ModelKind::PointNet,
            SegModel::IpcNet(_) => ModelKind::IpcNet,
        }
    }

    pub fn pointnet(&self) -> &PointNetSegModel {
        match self {
            SegModel::PointNet(m) => m,
            SegModel::IpcNet(m) => &m.pointnet,
        }
    }

    pub fn architecture(&self, num_points: usize) -> Architecture {
        match self {
            SegModel::PointNet(m) => Architecture {
                kind: ModelKind::PointNet,
                pointnet: m.config.clone(),
                interpoint: None,
                num_points,
            },
            SegModel::IpcNet(m) => Architecture {
                kind: ModelKind::IpcNet,
                pointnet: m.pointnet.config.clone(),
                interpoint: Some(m.interpoint.clone()),
                num_points: m.num_points,
            },
        }
    }

    pub fn num_classes(&self) -> usize {
        self.pointnet().config.num_classes
    }

    pub fn params(&self) -> &ParamSet {
        &self.pointnet().params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            SegModel::PointNet(m) => &mut m.params,
            SegModel::IpcNet(m) => &mut m.pointnet.params,
        }
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, points: Var) -> Result<SegForward> {
        match self {
            SegModel::PointNet(m) => m.forward(g, bound, points),
            SegModel::IpcNet(m) => m.forward(g, bound, points),
        }
    }

    /// Cross-entropy plus `lambda` times the feature-transform regularizer.
    pub fn loss(&self, g: &mut Graph, fwd: &SegForward, labels: &[usize], lambda: f64) -> Result<LossVars> {
        let ce = g.cross_entropy(fwd.logits, labels)?;
        let (total, regularizer) = match fwd.feature_matrix {
            Some(a) => {
                let reg = l_reg(g, a)?;
                let weighted = g.scale(reg, lambda);
                (g.add(ce, weighted)?, Some(reg))
            }
            None => (ce, None),
        };
        Ok(LossVars {
            total,
            cross_entropy: ce,
            regularizer,
        })
    }

    /// Untracked forward pass on an `N×3` point tensor.
    pub fn segment(&self, points: &Tensor) -> Result<Segmentation> {
        let mut g = Graph::new();
        let bound = self.params().bind(&mut g, false);
        let x = g.constant(points.clone());
        let fwd = self.forward(&mut g, &bound, x)?;
        Ok(Segmentation {
            logits: g.value(fwd.logits).clone(),
            input_matrix: fwd.input_matrix.map(|v| g.value(v).clone()),
            feature_matrix: fwd.feature_matrix.map(|v| g.value(v).clone()),
        })
    }

    /// Arg-max class per point.
    pub fn predict(&self, points: &Tensor) -> Result<Vec<usize>> {
        let seg = self.segment(points)?;
        Ok(argmax_rows(&seg.logits))
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
