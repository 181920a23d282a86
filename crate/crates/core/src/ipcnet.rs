//! Inter-point convolutional features.
//!
//! The 64-channel activations after the feature transform are read as a map
//! whose first axis is the point index. A pointwise feature-extraction conv
//! mixes channels, a max pool compresses runs of mostly-zero activations,
//! and three strided convolutions downsample along the point axis. The final
//! map is flattened and appended, like the global feature, to every point's
//! head input.
//!
//! The chain reads points in index order, so unlike the global feature the
//! inter-point vector is not invariant to point permutations.

use std::fmt;

use crate::error::{Error, Result};
use crate::pointnet::{PointNetConfig, PointNetSegModel, SegForward};
use crate::rng::SplitMix64;
use crate::tensor::kernels::window_extent;
use crate::tensor::{Bound, Graph, ParamSet, Tensor, Var};

/// Point count at which the reference layer sizes apply unscaled.
pub const REFERENCE_POINTS: usize = 2048;

/// Head input width stated for the reference configuration.
pub const REFERENCE_CONCAT_WIDTH: usize = 1392;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InterPointLayer {
    /// Convolution with a `kernel.0 × kernel.1` window followed by ReLU.
    Conv {
        name: String,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    MaxPool {
        name: String,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
}

impl InterPointLayer {
    pub fn name(&self) -> &str {
        match self {
            InterPointLayer::Conv { name, .. } | InterPointLayer::MaxPool { name, .. } => name,
        }
    }

    fn window(&self) -> ((usize, usize), (usize, usize)) {
        match self {
            InterPointLayer::Conv { kernel, stride, .. } | InterPointLayer::MaxPool { kernel, stride, .. } => {
                (*kernel, *stride)
            }
        }
    }
}

impl fmt::Display for InterPointLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterPointLayer::Conv {
                name,
                out_channels,
                kernel,
                stride,
            } => write!(
                f,
                "conv:{name}:{out_channels}:{}x{}:{}x{}",
                kernel.0, kernel.1, stride.0, stride.1
            ),
            InterPointLayer::MaxPool { name, kernel, stride } => {
                write!(f, "pool:{name}:{}x{}:{}x{}", kernel.0, kernel.1, stride.0, stride.1)
            }
        }
    }
}

/// Ordered inter-point layers. The first layer is the feature-extraction
/// conv, whose kernel spans the whole activation width; the flattened output
/// of the last layer is concatenated with local and global features.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterPointConfig {
    pub layers: Vec<InterPointLayer>,
}

impl InterPointConfig {
    /// Feature extraction 64 @ 1×64, zero removal pool 10×1 / 10, then
    /// downsampling convs 32 @ 6×1 / 5, 16 @ 4×1 / 3 and 8 @ 3×1 / 2.
    pub fn reference() -> Self {
        Self::with_activation_width(64)
    }

    /// Reference layout with the extraction kernel spanning `width` channels.
    pub fn with_activation_width(width: usize) -> Self {
        let conv = |name: &str, out, k, s| InterPointLayer::Conv {
            name: name.into(),
            out_channels: out,
            kernel: (k, if name == "extract" { width } else { 1 }),
            stride: (s, 1),
        };
        InterPointConfig {
            layers: vec![
                conv("extract", 64, 1, 1),
                InterPointLayer::MaxPool {
                    name: "zero_removal".into(),
                    kernel: (10, 1),
                    stride: (10, 1),
                },
                conv("downsample1", 32, 6, 5),
                conv("downsample2", 16, 4, 3),
                conv("downsample3", 8, 3, 2),
            ],
        }
    }

    /// Shrinks every point-axis window after the extraction layer for clouds
    /// smaller than [`REFERENCE_POINTS`]: each kernel and stride becomes
    /// `max(2, ceil(size · points / 2048))`. Larger clouds keep the sizes.
    pub fn scaled_for(&self, points: usize) -> Self {
        if points >= REFERENCE_POINTS {
            return self.clone();
        }
        let scale = |v: usize| ((v * points).div_ceil(REFERENCE_POINTS)).max(2);
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| match layer.clone() {
                l if i == 0 => l,
                InterPointLayer::Conv {
                    name,
                    out_channels,
                    kernel,
                    stride,
                } => InterPointLayer::Conv {
                    name,
                    out_channels,
                    kernel: (scale(kernel.0), kernel.1),
                    stride: (scale(stride.0), stride.1),
                },
                InterPointLayer::MaxPool { name, kernel, stride } => InterPointLayer::MaxPool {
                    name,
                    kernel: (scale(kernel.0), kernel.1),
                    stride: (scale(stride.0), stride.1),
                },
            })
            .collect();
        InterPointConfig { layers }
    }

    pub fn extraction_width(&self) -> Result<usize> {
        match self.layers.first() {
            Some(InterPointLayer::Conv {
                kernel: (1, w),
                stride: (1, 1),
                ..
            }) => Ok(*w),
            _ => Err(Error::config(
                "ipc_layers",
                "first layer must be a 1×C feature-extraction conv with unit stride",
            )),
        }
    }

    /// `(layer, point-axis extent, channels)` after each layer, for `points` inputs.
    pub fn extents(&self, points: usize) -> Result<Vec<(String, usize, usize)>> {
        let width = self.extraction_width()?;
        let mut extent = points;
        let mut w = width;
        let mut channels = 1;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let ((kh, kw), (sh, sw)) = layer.window();
            let too_short = || Error::ChainTooShort {
                layer: layer.name().to_string(),
                extent,
            };
            let h = window_extent(extent, kh, sh).ok_or_else(too_short)?;
            w = window_extent(w, kw, sw).ok_or_else(too_short)?;
            if w != 1 {
                return Err(Error::config(
                    "ipc_layers",
                    format!("layer `{}` leaves width {w}", layer.name()),
                ));
            }
            if let InterPointLayer::Conv { out_channels, .. } = layer {
                channels = *out_channels;
            }
            extent = h;
            out.push((layer.name().to_string(), extent, channels));
        }
        Ok(out)
    }

    /// Length of the flattened inter-point feature vector.
    pub fn flat_len(&self, points: usize) -> Result<usize> {
        let ext = self.extents(points)?;
        let (_, e, c) = ext.last().ok_or_else(|| Error::config("ipc_layers", "no layers"))?;
        Ok(e * c)
    }

    /// Canonical text form, `;`-separated layer descriptors.
    pub fn to_text(&self) -> String {
        self.layers
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::config("ipc_layers", msg);
        let pair = |s: &str| -> Result<(usize, usize)> {
            let (a, b) = s
                .split_once('x')
                .ok_or_else(|| bad(format!("expected AxB, got `{s}`")))?;
            let p = |t: &str| t.parse::<usize>().map_err(|e| bad(format!("`{t}`: {e}")));
            Ok((p(a)?, p(b)?))
        };
        let layers = text
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|desc| {
                let parts: Vec<&str> = desc.trim().split(':').collect();
                match parts[..] {
                    ["conv", name, out, k, s] => Ok(InterPointLayer::Conv {
                        name: name.into(),
                        out_channels: out.parse().map_err(|e| bad(format!("`{out}`: {e}")))?,
                        kernel: pair(k)?,
                        stride: pair(s)?,
                    }),
                    ["pool", name, k, s] => Ok(InterPointLayer::MaxPool {
                        name: name.into(),
                        kernel: pair(k)?,
                        stride: pair(s)?,
                    }),
                    _ => Err(bad(format!("bad layer descriptor `{desc}`"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = InterPointConfig { layers };
        cfg.extraction_width()?;
        Ok(cfg)
    }

    fn init_params(&self, params: &mut ParamSet, seed: u64) -> Result<()> {
        let mut c_in = 1;
        for layer in &self.layers {
            if let InterPointLayer::Conv {
                name,
                out_channels,
                kernel,
                ..
            } = layer
            {
                let fan_in = kernel.0 * kernel.1 * c_in;
                let weight_name = format!("ipc.{name}.weight");
                let mut rng = SplitMix64::stream(seed, &weight_name);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..fan_in * out_channels).map(|_| rng.uniform(-bound, bound)).collect();
                params.insert(
                    weight_name,
                    Tensor::new([kernel.0, kernel.1, c_in, *out_channels], data)?,
                );
                params.insert(format!("ipc.{name}.bias"), Tensor::zeros([*out_channels]));
                c_in = *out_channels;
            }
        }
        Ok(())
    }
}

/// Warning text when the reference chain's computed head width differs from
/// the stated 1392 channels; `None` for other configurations or when they agree.
pub fn reference_width_discrepancy(
    cfg: &InterPointConfig,
    local: usize,
    global: usize,
    points: usize,
) -> Option<String> {
    if *cfg != InterPointConfig::reference() || points != REFERENCE_POINTS {
        return None;
    }
    let flat = cfg.flat_len(points).ok()?;
    let width = local + global + flat;
    (width != REFERENCE_CONCAT_WIDTH).then(|| {
        format!(
            "reference inter-point chain at N = {points} flattens to {flat} values, giving a head input of \
             {width} channels instead of the stated {REFERENCE_CONCAT_WIDTH}; using the computed width"
        )
    })
}

/// Applies the inter-point chain to `N×C` activations and returns the
/// flattened `1×L` feature. Every layer's output extent is checked against
/// the configured shape arithmetic.
pub fn interpoint_features(
    g: &mut Graph,
    bound: &Bound,
    cfg: &InterPointConfig,
    activations: Var,
    taps: Option<&mut crate::pointnet::Taps>,
) -> Result<Var> {
    let (n, c) = match g.shape(activations) {
        &[n, c] => (n, c),
        s => {
            return Err(Error::InvalidShape {
                op: "interpoint_features",
                shape: s.to_vec(),
                reason: "expected N×C activations".into(),
            })
        }
    };
    let expected = cfg.extents(n)?;
    if cfg.extraction_width()? != c {
        return Err(Error::ShapeMismatch {
            op: "interpoint_features",
            left: vec![n, c],
            right: vec![n, cfg.extraction_width()?],
        });
    }
    let mut taps = taps;
    let mut x = g.reshape(activations, [n, c, 1])?;
    for (layer, (name, extent, channels)) in cfg.layers.iter().zip(&expected) {
        x = match layer {
            InterPointLayer::Conv { stride, .. } => {
                let w = bound.get(&format!("ipc.{name}.weight"))?;
                let b = bound.get(&format!("ipc.{name}.bias"))?;
                let y = g.conv_valid(x, w, b, *stride)?;
                g.relu(y)
            }
            InterPointLayer::MaxPool { kernel, stride, .. } => g.maxpool(x, *kernel, *stride)?,
        };
        let got = g.shape(x).to_vec();
        if got != [*extent, 1, *channels] {
            return Err(Error::ShapeMismatch {
                op: "interpoint_features",
                left: got,
                right: vec![*extent, 1, *channels],
            });
        }
        if let Some(t) = taps.as_deref_mut() {
            if matches!(layer, InterPointLayer::Conv { .. }) {
                let flat = g.reshape(x, [*extent, *channels])?;
                t.push(format!("ipc.{name}"), flat);
            }
        }
    }
    let (_, extent, channels) = expected.last().expect("non-empty chain");
    g.reshape(x, [1, extent * channels])
}

/// `[local | global | interpoint]` for every point row.
pub fn concat_features(g: &mut Graph, local: Var, global: Var, interpoint: Var) -> Result<Var> {
    let n = g.shape(local)[0];
    let gt = g.tile_rows(global, n)?;
    let it = g.tile_rows(interpoint, n)?;
    g.concat(&[local, gt, it], 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IpcNetSegModel {
    /// Shared PointNet trunk and head; its parameter set also holds the
    /// `ipc.*` inter-point parameters.
    pub pointnet: PointNetSegModel,
    pub interpoint: InterPointConfig,
    pub num_points: usize,
}

impl IpcNetSegModel {
    pub fn new(config: PointNetConfig, interpoint: InterPointConfig, num_points: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let width = interpoint.extraction_width()?;
        if width != config.local_width() {
            return Err(Error::config(
                "ipc_layers",
                format!(
                    "extraction kernel spans {width} channels, local width is {}",
                    config.local_width()
                ),
            ));
        }
        let flat = interpoint.flat_len(num_points)?;
        if let Some(msg) =
            reference_width_discrepancy(&interpoint, config.local_width(), config.global_width(), num_points)
        {
            log::warn!("{msg}");
        }
        let mut pointnet = PointNetSegModel::with_extra_head_inputs(config, flat, seed)?;
        interpoint.init_params(&mut pointnet.params, seed)?;
        Ok(IpcNetSegModel {
            pointnet,
            interpoint,
            num_points,
        })
    }

    pub fn interpoint_len(&self) -> usize {
        self.pointnet.extra_head_inputs
    }

    pub fn head_input_width(&self) -> usize {
        self.pointnet.head_input_width()
    }

    pub fn forward(&self, g: &mut Graph, bound: &Bound, points: Var) -> Result<SegForward> {
        let n = g.shape(points)[0];
        if n != self.num_points {
            return Err(Error::InvalidArgument(format!(
                "model built for {} points, got {n}",
                self.num_points
            )));
        }
        let mut trunk = self.pointnet.trunk(g, bound, points)?;
        let ipc = interpoint_features(g, bound, &self.interpoint, trunk.local, Some(&mut trunk.taps))?;
        let features = concat_features(g, trunk.local, trunk.global, ipc)?;
        let width = g.shape(features)[1];
        if width != self.head_input_width() {
            return Err(Error::ShapeMismatch {
                op: "ipc_segment",
                left: vec![n, width],
                right: vec![n, self.head_input_width()],
            });
        }
        let logits = self.pointnet.head(g, bound, features, &mut trunk.taps)?;
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_chain_extents() {
        let cfg = InterPointConfig::reference();
        let ext: Vec<usize> = cfg.extents(2048).unwrap().iter().map(|e| e.1).collect();
        assert_eq!(ext, vec![2048, 204, 40, 13, 6]);
        assert_eq!(cfg.flat_len(2048).unwrap(), 48);
    }

    #[test]
    fn chain_too_short_names_layer() {
        let err = InterPointConfig::reference().extents(100).unwrap_err();
        match err {
            Error::ChainTooShort { layer, .. } => assert_eq!(layer, "downsample2"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn scaling_rule() {
        let cfg = InterPointConfig::reference().scaled_for(512);
        let windows: Vec<_> = cfg.layers.iter().map(|l| l.window()).collect();
        assert_eq!(windows[0], ((1, 64), (1, 1)));
        assert_eq!(windows[1], ((3, 1), (3, 1)));
        assert_eq!(windows[2], ((2, 1), (2, 1)));
        assert_eq!(windows[3], ((2, 1), (2, 1)));
        assert_eq!(windows[4], ((2, 1), (2, 1)));
        let ext: Vec<usize> = cfg.extents(512).unwrap().iter().map(|e| e.1).collect();
        assert_eq!(ext, vec![512, 170, 85, 42, 21]);

        let small = InterPointConfig::reference().scaled_for(64);
        let ext: Vec<usize> = small.extents(64).unwrap().iter().map(|e| e.1).collect();
        assert_eq!(ext, vec![64, 32, 16, 8, 4]);
        assert_eq!(
            InterPointConfig::reference().scaled_for(4096),
            InterPointConfig::reference()
        );
    }

    #[test]
    fn text_round_trip() {
        let cfg = InterPointConfig::reference().scaled_for(300);
        assert_eq!(InterPointConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(InterPointConfig::parse("pool:a:2x1:2x1").is_err());
        assert!(InterPointConfig::parse("conv:a:4:1x64").is_err());
    }

    #[test]
    fn discrepancy_reported_only_for_reference() {
        let msg = reference_width_discrepancy(&InterPointConfig::reference(), 64, 1024, 2048).unwrap();
        assert!(msg.contains("1136") && msg.contains("1392"), "{msg}");
        assert!(reference_width_discrepancy(&InterPointConfig::reference().scaled_for(512), 64, 1024, 512).is_none());
    }
}
