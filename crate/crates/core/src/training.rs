//! Training and evaluation loops.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::analysis::{miou, point_accuracy};
use crate::error::{Error, Result};
use crate::geometry::{fmt_real, LabeledPointCloud};
use crate::model::{argmax_rows, parse_widths, Architecture, ModelKind, SegModel};
use crate::par::{self, Execution};
use crate::pointnet::PointNetConfig;
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{AdamConfig, AdamState, Graph, ParamSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Preset {
    #[default]
    Toy,
    Paper,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Toy => "toy",
            Preset::Paper => "paper",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::config("preset", format!("expected toy or paper, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lambda_reg: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub points: usize,
    pub preset: Preset,
    pub local_widths: Option<Vec<usize>>,
    pub global_widths: Option<Vec<usize>>,
    pub head_widths: Option<Vec<usize>>,
    /// Select the final epoch instead of the best test accuracy.
    pub strict_holdout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::IpcNet,
            epochs: 150,
            batch_size: 8,
            adam: AdamConfig::default(),
            lambda_reg: 0.001,
            seed: 0,
            train_fraction: 0.8,
            points: 512,
            preset: Preset::Toy,
            local_widths: None,
            global_widths: None,
            head_widths: None,
            strict_holdout: false,
        }
    }
}

/// Config-file and flag keys, in the order they are printed.
pub const CONFIG_KEYS: &[&str] = &[
    "model",
    "epochs",
    "batch_size",
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "lambda_reg",
    "seed",
    "train_fraction",
    "points",
    "preset",
    "local_widths",
    "global_widths",
    "head_widths",
    "strict_holdout",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::config(key, format!("`{value}`: {e}")))
}

fn widths_or_default(w: &Option<Vec<usize>>) -> String {
    w.as_ref()
        .map(|w| w.iter().map(ToString::to_string).collect::<Vec<_>>().join(","))
        .unwrap_or_else(|| "default".into())
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let widths = |v: &str| -> Result<Option<Vec<usize>>> {
            if v.trim() == "default" {
                Ok(None)
            } else {
                parse_widths(key, v).map(Some)
            }
        };
        match key {
            "model" => self.model = value.trim().parse()?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.adam.learning_rate = parse_value(key, value)?,
            "beta1" => self.adam.beta1 = parse_value(key, value)?,
            "beta2" => self.adam.beta2 = parse_value(key, value)?,
            "epsilon" => self.adam.epsilon = parse_value(key, value)?,
            "lambda_reg" => self.lambda_reg = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "train_fraction" => self.train_fraction = parse_value(key, value)?,
            "points" => self.points = parse_value(key, value)?,
            "preset" => self.preset = value.trim().parse()?,
            "local_widths" => self.local_widths = widths(value)?,
            "global_widths" => self.global_widths = widths(value)?,
            "head_widths" => self.head_widths = widths(value)?,
            "strict_holdout" => self.strict_holdout = parse_value(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "model" => self.model.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => self.adam.learning_rate.to_string(),
            "beta1" => self.adam.beta1.to_string(),
            "beta2" => self.adam.beta2.to_string(),
            "epsilon" => self.adam.epsilon.to_string(),
            "lambda_reg" => self.lambda_reg.to_string(),
            "seed" => self.seed.to_string(),
            "train_fraction" => self.train_fraction.to_string(),
            "points" => self.points.to_string(),
            "preset" => self.preset.to_string(),
            "local_widths" => widths_or_default(&self.local_widths),
            "global_widths" => widths_or_default(&self.global_widths),
            "head_widths" => widths_or_default(&self.head_widths),
            "strict_holdout" => self.strict_holdout.to_string(),
            _ => return None,
        })
    }

    /// `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", i + 1), "expected key=value"))?;
            out.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("points", self.points),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction", "must lie in (0, 1)"));
        }
        if self.adam.learning_rate.is_nan() || self.adam.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        for (key, b) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key, "must lie in [0, 1)"));
            }
        }
        if self.adam.epsilon.is_nan() || self.adam.epsilon <= 0.0 {
            return Err(Error::config("epsilon", "must be positive"));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::config("lambda_reg", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn network(&self, classes: usize) -> PointNetConfig {
        let mut cfg = match self.preset {
            Preset::Toy => PointNetConfig::toy(classes),
            Preset::Paper => PointNetConfig::paper(classes),
        };
        if let Some(w) = &self.local_widths {
            cfg.local_widths = w.clone();
        }
        if let Some(w) = &self.global_widths {
            cfg.global_widths = w.clone();
        }
        if let Some(w) = &self.head_widths {
            cfg.head_widths = w.clone();
        }
        cfg
    }

    pub fn architecture(&self, classes: usize) -> Architecture {
        Architecture::new(self.model, self.network(classes), self.points)
    }
}

/// Shuffles indices `0..n` with the seed and splits at `round(fraction·n)`.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config("train_fraction", "must lie in (0, 1)"));
    }
    let cut = (fraction * n as f64).round() as usize;
    if cut == 0 || cut == n {
        return Err(Error::config(
            "train_fraction",
            format!("{fraction} of {n} clouds leaves one side empty"),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    SplitMix64::stream(seed, "split").shuffle(&mut idx);
    let test = idx.split_off(cut);
    Ok((idx, test))
}

pub fn split_dataset<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (train, test) = split_indices(items.len(), fraction, seed)?;
    Ok((
        train.iter().map(|&i| items[i].clone()).collect(),
        test.iter().map(|&i| items[i].clone()).collect(),
    ))
}

/// Averages over the clouds of one split; accuracy and mIoU are percentages.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplitMetrics {
    pub loss: f64,
    pub cross_entropy: f64,
    pub regularizer: f64,
    pub accuracy: f64,
    pub miou: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train: SplitMetrics,
    pub test: Option<SplitMetrics>,
}

/// One cloud's forward (and optionally backward) pass.
#[derive(Clone, Debug)]
pub struct CloudPass {
    pub loss: f64,
    pub cross_entropy: f64,
    pub regularizer: f64,
    pub predictions: Vec<usize>,
    pub grads: Option<ParamSet>,
}

pub fn cloud_pass(model: &SegModel, cloud: &LabeledPointCloud, lambda: f64, with_grads: bool) -> Result<CloudPass> {
    if cloud.class_count != model.num_classes() {
        return Err(Error::ClassMismatch {
            expected: model.num_classes(),
            found: cloud.class_count,
        });
    }
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g, with_grads);
    let x = g.constant(cloud.to_tensor());
    let fwd = model.forward(&mut g, &bound, x)?;
    let loss = model.loss(&mut g, &fwd, &cloud.labels, lambda)?;
    let grads = if with_grads {
        let mut grads = g.backward(loss.total)?;
        Some(model.params().collect_grads(&bound, &mut grads))
    } else {
        None
    };
    Ok(CloudPass {
        loss: g.value(loss.total).data()[0],
        cross_entropy: g.value(loss.cross_entropy).data()[0],
        regularizer: loss.regularizer.map_or(0.0, |r| g.value(r).data()[0]),
        predictions: argmax_rows(g.value(fwd.logits)),
        grads,
    })
}

fn summarize(passes: &[CloudPass], clouds: &[&LabeledPointCloud]) -> Result<SplitMetrics> {
    let n = passes.len() as f64;
    let mut m = SplitMetrics::default();
    for (p, c) in passes.iter().zip(clouds) {
        m.loss += p.loss;
        m.cross_entropy += p.cross_entropy;
        m.regularizer += p.regularizer;
        m.accuracy += point_accuracy(&p.predictions, &c.labels)?;
        m.miou += miou(&p.predictions, &c.labels, c.class_count)?;
    }
    m.loss /= n;
    m.cross_entropy /= n;
    m.regularizer /= n;
    m.accuracy /= n;
    m.miou /= n;
    Ok(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CloudMetrics {
    pub accuracy: f64,
    pub miou: f64,
    pub predictions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub per_cloud: Vec<CloudMetrics>,
    pub metrics: SplitMetrics,
}

/// Forward passes only; loss uses `lambda` for the regularizer weight.
pub fn evaluate(model: &SegModel, clouds: &[LabeledPointCloud], lambda: f64, exec: Execution) -> Result<Evaluation> {
    if clouds.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let passes = par::map(exec, clouds, |c| cloud_pass(model, c, lambda, false))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&LabeledPointCloud> = clouds.iter().collect();
    let metrics = summarize(&passes, &refs)?;
    let per_cloud = passes
        .into_iter()
        .zip(clouds)
        .map(|(p, c)| {
            Ok(CloudMetrics {
                accuracy: point_accuracy(&p.predictions, &c.labels)?,
                miou: miou(&p.predictions, &c.labels, c.class_count)?,
                predictions: p.predictions,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Evaluation { per_cloud, metrics })
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub history: Vec<EpochMetrics>,
    pub epoch_seconds: Vec<f64>,
    /// 1-based epoch whose parameters `model` holds.
    pub selected_epoch: usize,
    pub model: SegModel,
    pub final_model: SegModel,
}

impl TrainRun {
    /// `epoch,split,loss,accuracy,miou`, one row per split per epoch.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,accuracy,miou\n");
        for e in &self.history {
            let rows = [("train", Some(e.train)), ("test", e.test)];
            for (split, m) in rows {
                if let Some(m) = m {
                    out.push_str(&format!(
                        "{},{split},{},{},{}\n",
                        e.epoch,
                        fmt_real(m.loss),
                        fmt_real(m.accuracy),
                        fmt_real(m.miou)
                    ));
                }
            }
        }
        out
    }

    pub fn final_test(&self) -> Option<SplitMetrics> {
        self.history.last().and_then(|e| e.test)
    }

    /// First epoch whose test accuracy reaches `threshold` percent.
    pub fn epochs_to_test_accuracy(&self, threshold: f64) -> Option<usize> {
        self.history
            .iter()
            .find(|e| e.test.is_some_and(|t| t.accuracy >= threshold))
            .map(|e| e.epoch)
    }
}

fn check_dataset(clouds: &[LabeledPointCloud], config: &TrainConfig, classes: usize) -> Result<()> {
    for (i, c) in clouds.iter().enumerate() {
        if c.len() != config.points {
            return Err(Error::InvalidArgument(format!(
                "cloud {i} has {} points, config expects {}",
                c.len(),
                config.points
            )));
        }
        if c.class_count != classes {
            return Err(Error::ClassMismatch {
                expected: classes,
                found: c.class_count,
            });
        }
    }
    Ok(())
}

/// Splits `dataset` by `config.train_fraction` and trains.
pub fn train(dataset: &[LabeledPointCloud], config: &TrainConfig, exec: Execution) -> Result<TrainRun> {
    let (tr, te) = split_dataset(dataset, config.train_fraction, config.seed)?;
    train_split(&tr, &te, config, exec)
}

/// Adam on mean cross-entropy + λ·l_reg over mini-batches of independent
/// clouds. `test` may be empty, in which case the final epoch is selected.
pub fn train_split(
    train: &[LabeledPointCloud],
    test: &[LabeledPointCloud],
    config: &TrainConfig,
    exec: Execution,
) -> Result<TrainRun> {
    config.validate()?;
    let classes = train.first().ok_or(Error::Empty("training set"))?.class_count;
    check_dataset(train, config, classes)?;
    check_dataset(test, config, classes)?;

    let arch = config.architecture(classes);
    let mut model = SegModel::build(&arch, derive_seed(config.seed, "init"))?;
    let mut adam = AdamState::new(config.adam, model.params());
    let mut order_rng = SplitMix64::stream(config.seed, "batches");
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut epoch_seconds = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, SegModel)> = None;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order_rng.shuffle(&mut order);
        let mut passes = Vec::with_capacity(train.len());
        let mut seen = Vec::with_capacity(train.len());
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let clouds: Vec<&LabeledPointCloud> = batch.iter().map(|&i| &train[i]).collect();
            let results = par::map(exec, &clouds, |c| cloud_pass(&model, c, config.lambda_reg, true));
            let mut sum = model.params().zeros_like();
            for r in results {
                let mut pass = r?;
                if !pass.loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
                }
                sum.add_scaled(pass.grads.as_ref().expect("requested"), 1.0 / clouds.len() as f64)?;
                pass.grads = None;
                passes.push(pass);
            }
            adam.step(model.params_mut(), &sum)?;
            seen.extend(clouds);
        }
        let train_metrics = summarize(&passes, &seen)?;
        let test_metrics = if test.is_empty() {
            None
        } else {
            Some(evaluate(&model, test, config.lambda_reg, exec)?.metrics)
        };
        epoch_seconds.push(start.elapsed().as_secs_f64());
        log::info!(
            "{} epoch {epoch}: train loss {:.5} (ce {:.5}, reg {:.5}) acc {:.2}{}",
            config.model,
            train_metrics.loss,
            train_metrics.cross_entropy,
            train_metrics.regularizer,
            train_metrics.accuracy,
            test_metrics.map_or(String::new(), |t| format!(
                ", test acc {:.2} miou {:.2}",
                t.accuracy, t.miou
            ))
        );
        if let Some(t) = test_metrics {
            if !config.strict_holdout && best.as_ref().is_none_or(|(acc, _, _)| t.accuracy > *acc) {
                best = Some((t.accuracy, epoch, model.clone()));
            }
        }
        history.push(EpochMetrics {
            epoch,
            train: train_metrics,
            test: test_metrics,
        });
    }

    let (selected_epoch, selected) = match best {
        Some((_, e, m)) => (e, m),
        None => (config.epochs, model.clone()),
    };
    Ok(TrainRun {
        config: config.clone(),
        history,
        epoch_seconds,
        selected_epoch,
        model: selected,
        final_model: model,
    })
}

/// Trains PointNet and IPC-Net on the same split with the same seed.
pub fn compare(
    train: &[LabeledPointCloud],
    test: &[LabeledPointCloud],
    config: &TrainConfig,
    exec: Execution,
) -> Result<(TrainRun, TrainRun)> {
    let pn = TrainConfig {
        model: ModelKind::PointNet,
        ..config.clone()
    };
    let ipc = TrainConfig {
        model: ModelKind::IpcNet,
        ..config.clone()
    };
    let (a, b) = par::join(
        exec,
        || train_split(train, test, &pn, exec),
        || train_split(train, test, &ipc, exec),
    );
    Ok((a?, b?))
}

/// Side-by-side per-epoch test metrics of two runs.
pub fn comparison_csv(pointnet: &TrainRun, ipcnet: &TrainRun) -> String {
    let mut out = String::from(
        "epoch,pointnet_train_loss,pointnet_test_accuracy,pointnet_test_miou,ipcnet_train_loss,ipcnet_test_accuracy,ipcnet_test_miou\n",
    );
    for (a, b) in pointnet.history.iter().zip(&ipcnet.history) {
        let t = |e: &EpochMetrics| e.test.unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            a.epoch,
            fmt_real(a.train.loss),
            fmt_real(t(a).accuracy),
            fmt_real(t(a).miou),
            fmt_real(b.train.loss),
            fmt_real(t(b).accuracy),
            fmt_real(t(b).miou),
        ));
    }
    out
}
