use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ipcnet::analysis::{field_view_projection, kernel_activation_map, redundancy_heatmap, redundancy_score, Axis};
use ipcnet::checkpoint::Checkpoint;
use ipcnet::datagen::{gen_dataset, read_dataset, write_dataset, Family, NamedCloud, ShapeSpec};
use ipcnet::geometry::{
    fmt_real, read_pts, sample_surface, unit_sphere_normalize, write_seg, CenterMode, LabeledPointCloud, TriangleMesh,
};
use ipcnet::par::Execution;
use ipcnet::training::{
    compare, comparison_csv, evaluate, split_dataset, train_split, TrainConfig, TrainRun, CONFIG_KEYS,
};
use ipcnet::Error;

#[derive(Parser)]
#[command(
    name = "ipcnet",
    version,
    about = "Point-cloud part segmentation with PointNet and IPC-Net"
)]
struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    GenData(GenDataArgs),
    /// Sample a labeled point cloud from a mesh (.off or .obj, labels in <mesh>.flab).
    Sample(SampleArgs),
    /// Train one model and write a checkpoint and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write predicted labels.
    Eval(EvalArgs),
    /// Train PointNet and IPC-Net on the same split and compare.
    Compare(CompareArgs),
    /// Export per-point kernel activations and 2D projections.
    Kernels(KernelArgs),
    /// Export the kernel-distance heatmap of one layer.
    Heatmap(HeatmapArgs),
}

#[derive(Args)]
struct Normalization {
    /// Center with half the bounding-box extent instead of its midpoint.
    #[arg(long)]
    literal_eq3: bool,
}

impl Normalization {
    fn mode(&self) -> CenterMode {
        if self.literal_eq3 {
            CenterMode::LiteralHalfExtent
        } else {
            CenterMode::Midpoint
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value = "rocket")]
    family: String,
    #[arg(long, default_value_t = 75)]
    count: usize,
    #[arg(long, default_value_t = 512)]
    points: usize,
    /// Defaults to $IPCNET_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    norm: Normalization,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long, default_value_t = 2048)]
    points: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    norm: Normalization,
}

/// Training keys; each flag overrides the config-file key of the same name.
#[derive(Args, Default)]
struct TrainFlags {
    /// Flat `key=value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    lambda_reg: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    train_fraction: Option<String>,
    #[arg(long)]
    points: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    local_widths: Option<String>,
    #[arg(long)]
    global_widths: Option<String>,
    #[arg(long)]
    head_widths: Option<String>,
    #[arg(long)]
    strict_holdout: Option<String>,
}

impl TrainFlags {
    fn flag(&self, key: &str) -> Option<&String> {
        match key {
            "model" => self.model.as_ref(),
            "epochs" => self.epochs.as_ref(),
            "batch_size" => self.batch_size.as_ref(),
            "learning_rate" => self.learning_rate.as_ref(),
            "beta1" => self.beta1.as_ref(),
            "beta2" => self.beta2.as_ref(),
            "epsilon" => self.epsilon.as_ref(),
            "lambda_reg" => self.lambda_reg.as_ref(),
            "seed" => self.seed.as_ref(),
            "train_fraction" => self.train_fraction.as_ref(),
            "points" => self.points.as_ref(),
            "preset" => self.preset.as_ref(),
            "local_widths" => self.local_widths.as_ref(),
            "global_widths" => self.global_widths.as_ref(),
            "head_widths" => self.head_widths.as_ref(),
            "strict_holdout" => self.strict_holdout.as_ref(),
            _ => None,
        }
    }

    /// Defaults, then `$IPCNET_SEED`, then the config file, then flags.
    fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut cfg = TrainConfig {
            seed: env_seed()?,
            ..TrainConfig::default()
        };
        if let Some(path) = &self.config {
            let text = read_input(path)?;
            for (k, v) in TrainConfig::parse_kv(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for key in CONFIG_KEYS {
            if let Some(v) = self.flag(key) {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DataArgs {
    /// Dataset root containing `<family>/points` and `<family>/labels`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "rocket")]
    family: String,
    /// Class count; defaults to the family's label count.
    #[arg(long)]
    classes: Option<usize>,
    /// Subtracted from stored labels (1 for annotated-ShapeNet files).
    #[arg(long, default_value_t = 0)]
    label_base: usize,
}

impl DataArgs {
    fn classes(&self) -> Result<usize, CliError> {
        match self.classes {
            Some(k) => Ok(k),
            None => Ok(self.family.parse::<Family>()?.class_count()),
        }
    }

    fn load(&self) -> Result<Vec<NamedCloud>, CliError> {
        if !self.data.is_dir() {
            return Err(CliError::usage(format!(
                "--data: no directory at {}",
                self.data.display()
            )));
        }
        read_dataset(&self.data, &self.family, self.classes()?, self.label_base)
            .map_err(|e| CliError::usage(e.to_string()))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Existing dataset root; when absent a synthetic family is generated.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "rocket")]
    family: String,
    #[arg(long, default_value_t = 75)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    label_base: usize,
    /// Hidden layer whose kernel redundancy is reported for both models.
    #[arg(long)]
    layer: Option<String>,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// `.pts` file with one point per line.
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    layer: String,
    /// Kernel indices, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    kernel: Vec<usize>,
    /// Two distinct axes from x, y, z.
    #[arg(long, value_delimiter = ',', default_value = "x,y")]
    axes: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    layer: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError {
            code: 2,
            msg: msg.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. }
            | Error::Parse { .. }
            | Error::ClassMismatch { .. }
            | Error::UnknownLayer(_)
            | Error::UnknownKernel { .. } => 2,
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 1,
        };
        CliError {
            code,
            msg: e.to_string(),
        }
    }
}

fn env_seed() -> Result<u64, CliError> {
    match std::env::var("IPCNET_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|e| CliError::usage(format!("IPCNET_SEED: `{v}`: {e}"))),
        Err(_) => Ok(0),
    }
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn print_config(command: &str, pairs: &[(&str, String)]) {
    println!("[{command}]");
    for (k, v) in pairs {
        println!("{k}={v}");
    }
}

fn print_train_config(command: &str, cfg: &TrainConfig, extra: &[(&str, String)]) {
    let mut pairs: Vec<(&str, String)> = extra.to_vec();
    pairs.extend(CONFIG_KEYS.iter().map(|k| (*k, cfg.get(k).expect("listed key"))));
    print_config(command, &pairs);
}

fn io<T>(r: std::io::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError {
        code: 1,
        msg: e.to_string(),
    })
}

fn gen_data(a: &GenDataArgs, exec: Execution) -> Result<(), CliError> {
    let family: Family = a.family.parse()?;
    let seed = a.seed.map_or_else(env_seed, Ok)?;
    print_config(
        "gen-data",
        &[
            ("family", family.to_string()),
            ("count", a.count.to_string()),
            ("points", a.points.to_string()),
            ("seed", seed.to_string()),
            ("literal_eq3", a.norm.literal_eq3.to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    let clouds = gen_dataset(&ShapeSpec::new(family), a.count, a.points, seed, a.norm.mode(), exec)?;
    write_dataset(&a.out, family.name(), &clouds)?;
    println!(
        "wrote {} clouds to {}",
        clouds.len(),
        a.out.join(family.name()).display()
    );
    Ok(())
}

fn sample(a: &SampleArgs) -> Result<(), CliError> {
    let seed = a.seed.map_or_else(env_seed, Ok)?;
    print_config(
        "sample",
        &[
            ("mesh", a.mesh.display().to_string()),
            ("points", a.points.to_string()),
            ("seed", seed.to_string()),
            ("literal_eq3", a.norm.literal_eq3.to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    if !a.mesh.is_file() {
        return Err(CliError::usage(format!("--mesh: no file at {}", a.mesh.display())));
    }
    let mut mesh = TriangleMesh::load(&a.mesh)?;
    mesh.vertices = unit_sphere_normalize(&mesh.vertices, a.norm.mode())?;
    let cloud = sample_surface(&mesh, a.points, seed)?.normalized(a.norm.mode())?;
    let stem = a.mesh.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud");
    io(fs::create_dir_all(&a.out))?;
    cloud.write_pts_seg(&a.out.join(format!("{stem}.pts")), &a.out.join(format!("{stem}.seg")))?;
    println!(
        "wrote {} points to {}",
        cloud.len(),
        a.out.join(format!("{stem}.pts")).display()
    );
    Ok(())
}

fn clouds_of(named: Vec<NamedCloud>) -> Vec<LabeledPointCloud> {
    named.into_iter().map(|n| n.cloud).collect()
}

fn write_run(run: &TrainRun, dir: &Path, classes_meta: &[(&str, String)]) -> Result<(), CliError> {
    io(fs::create_dir_all(dir))?;
    io(fs::write(dir.join("metrics.csv"), run.metrics_csv()))?;
    io(fs::write(dir.join("config.txt"), run.config.to_text()))?;
    let mut ck = Checkpoint::new(run.model.clone(), run.config.points);
    ck.meta.insert("selected_epoch".into(), run.selected_epoch.to_string());
    for (k, v) in classes_meta {
        ck.meta.insert((*k).into(), v.clone());
    }
    for key in CONFIG_KEYS {
        ck.meta
            .insert(format!("train.{key}"), run.config.get(key).expect("listed key"));
    }
    ck.save(&dir.join("checkpoint.ckpt"))?;
    Ok(())
}

fn train_cmd(a: &TrainArgs, exec: Execution) -> Result<(), CliError> {
    let cfg = a.flags.resolve()?;
    print_train_config(
        "train",
        &cfg,
        &[
            ("data", a.data.data.display().to_string()),
            ("family", a.data.family.clone()),
            ("out", a.out.display().to_string()),
        ],
    );
    let clouds = clouds_of(a.data.load()?);
    let (tr, te) = split_dataset(&clouds, cfg.train_fraction, cfg.seed)?;
    let run = train_split(&tr, &te, &cfg, exec)?;
    write_run(&run, &a.out, &[("family", a.data.family.clone())])?;
    let last = run.history.last().expect("epochs > 0");
    println!(
        "{}: final train accuracy {:.2}%, test accuracy {:.2}%, selected epoch {}",
        cfg.model,
        last.train.accuracy,
        last.test.map_or(f64::NAN, |t| t.accuracy),
        run.selected_epoch
    );
    Ok(())
}

fn eval_cmd(a: &EvalArgs, exec: Execution) -> Result<(), CliError> {
    print_config(
        "eval",
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("data", a.data.data.display().to_string()),
            ("family", a.data.family.clone()),
            ("label_base", a.data.label_base.to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    if !a.checkpoint.is_file() {
        return Err(CliError::usage(format!(
            "--checkpoint: no file at {}",
            a.checkpoint.display()
        )));
    }
    let ck = Checkpoint::load(&a.checkpoint)?;
    let named = a.data.load()?;
    let names: Vec<String> = named.iter().map(|n| n.name.clone()).collect();
    let clouds = clouds_of(named);
    let lambda = ck
        .meta
        .get("train.lambda_reg")
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.0);
    let ev = evaluate(&ck.model, &clouds, lambda, exec)?;
    io(fs::create_dir_all(&a.out))?;
    let mut table = String::from("cloud,accuracy,miou\n");
    for (name, m) in names.iter().zip(&ev.per_cloud) {
        write_seg(&a.out.join(format!("{name}.seg")), &m.predictions)?;
        let _ = writeln!(table, "{name},{},{}", fmt_real(m.accuracy), fmt_real(m.miou));
    }
    io(fs::write(a.out.join("eval.csv"), table))?;
    println!(
        "{} clouds: accuracy {:.2}%, mIoU {:.2}%",
        clouds.len(),
        ev.metrics.accuracy,
        ev.metrics.miou
    );
    Ok(())
}

fn compare_cmd(a: &CompareArgs, exec: Execution) -> Result<(), CliError> {
    let cfg = a.flags.resolve()?;
    print_train_config(
        "compare",
        &cfg,
        &[
            (
                "data",
                a.data.as_ref().map_or("generated".into(), |d| d.display().to_string()),
            ),
            ("family", a.family.clone()),
            ("count", a.count.to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    let family: Family = a.family.parse()?;
    let clouds = match &a.data {
        Some(root) => {
            let args = DataArgs {
                data: root.clone(),
                family: a.family.clone(),
                classes: None,
                label_base: a.label_base,
            };
            clouds_of(args.load()?)
        }
        None => gen_dataset(
            &ShapeSpec::new(family),
            a.count,
            cfg.points,
            cfg.seed,
            CenterMode::Midpoint,
            exec,
        )?,
    };
    let (tr, te) = split_dataset(&clouds, cfg.train_fraction, cfg.seed)?;
    let (pn, ipc) = compare(&tr, &te, &cfg, exec)?;
    write_run(&pn, &a.out.join("pointnet"), &[("family", a.family.clone())])?;
    write_run(&ipc, &a.out.join("ipcnet"), &[("family", a.family.clone())])?;
    io(fs::write(a.out.join("pointnet_metrics.csv"), pn.metrics_csv()))?;
    io(fs::write(a.out.join("ipcnet_metrics.csv"), ipc.metrics_csv()))?;
    io(fs::write(a.out.join("comparison.csv"), comparison_csv(&pn, &ipc)))?;

    let layer = a.layer.clone().unwrap_or_else(|| {
        format!(
            "head.{}",
            cfg.network(family.class_count()).head_widths.len().saturating_sub(1)
        )
    });
    let pn_red = redundancy_score(&redundancy_heatmap(&pn.final_model, &layer)?);
    let ipc_red = redundancy_score(&redundancy_heatmap(&ipc.final_model, &layer)?);
    let acc = |r: &TrainRun| r.final_test().map_or(f64::NAN, |t| t.accuracy);
    let summary = format!(
        "train {} / test {} clouds; final test accuracy: pointnet {:.4}%, ipcnet {:.4}%; \
         redundancy_score({layer}): pointnet {}, ipcnet {}\n",
        tr.len(),
        te.len(),
        acc(&pn),
        acc(&ipc),
        fmt_real(pn_red),
        fmt_real(ipc_red)
    );
    io(fs::write(a.out.join("summary.txt"), &summary))?;
    print!("{summary}");
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::usage(format!("--checkpoint: no file at {}", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn kernels_cmd(a: &KernelArgs) -> Result<(), CliError> {
    let kernels: Vec<String> = a.kernel.iter().map(ToString::to_string).collect();
    print_config(
        "kernels",
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("cloud", a.cloud.display().to_string()),
            ("layer", a.layer.clone()),
            ("kernel", kernels.join(",")),
            ("axes", a.axes.join(",")),
            ("out", a.out.display().to_string()),
        ],
    );
    let axes = match &a.axes[..] {
        [x, y] => (x.parse::<Axis>()?, y.parse::<Axis>()?),
        _ => return Err(CliError::usage("--axes: expected two axes such as x,y")),
    };
    let ck = load_checkpoint(&a.checkpoint)?;
    if !a.cloud.is_file() {
        return Err(CliError::usage(format!("--cloud: no file at {}", a.cloud.display())));
    }
    let points = read_pts(&a.cloud)?;
    let n = points.len();
    let cloud = LabeledPointCloud::new(points, vec![0; n], ck.model.num_classes())?;
    io(fs::create_dir_all(&a.out))?;
    let [ax, ay] = [&a.axes[0], &a.axes[1]];
    for &k in &a.kernel {
        let map = kernel_activation_map(&ck.model, &cloud, &a.layer, k)?;
        let proj = field_view_projection(&map, axes)?;
        let stem = format!("{}_k{k}", a.layer);
        io(fs::write(a.out.join(format!("{stem}.csv")), map.to_csv()))?;
        io(fs::write(a.out.join(format!("{stem}_{ax}{ay}.csv")), proj.to_csv()))?;
        let active = map.activated().filter(|&b| b).count();
        println!("{stem}: {active}/{n} points activated");
    }
    Ok(())
}

fn heatmap_cmd(a: &HeatmapArgs) -> Result<(), CliError> {
    print_config(
        "heatmap",
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("layer", a.layer.clone()),
            ("out", a.out.display().to_string()),
        ],
    );
    let ck = load_checkpoint(&a.checkpoint)?;
    let h = redundancy_heatmap(&ck.model, &a.layer)?;
    h.write(&a.out, &format!("{}_heatmap", a.layer))?;
    println!(
        "{}: {} kernels, redundancy_score {}",
        a.layer,
        h.size,
        fmt_real(redundancy_score(&h))
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match &cli.command {
        Command::GenData(a) => gen_data(a, exec),
        Command::Sample(a) => sample(a),
        Command::Train(a) => train_cmd(a, exec),
        Command::Eval(a) => eval_cmd(a, exec),
        Command::Compare(a) => compare_cmd(a, exec),
        Command::Kernels(a) => kernels_cmd(a),
        Command::Heatmap(a) => heatmap_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
