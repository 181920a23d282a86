//! Procedural labeled shapes standing in for the annotated part datasets,
//! plus the on-disk dataset layout:
//!
//! ```text
//! <root>/manifest.txt                 "<family>/points/0000.pts <family>/labels/0000.seg" per line
//! <root>/<family>/points/0000.pts
//! <root>/<family>/labels/0000.seg
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{
    sample_surface, unit_sphere_normalize, CenterMode, LabeledPointCloud, Point3, SamplingWeights, TriangleMesh,
};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, SplitMix64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Rocket,
    Aircraft,
    Car,
    Motorbike,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Aircraft, Family::Car, Family::Motorbike, Family::Rocket];

    pub fn labels(self) -> &'static [&'static str] {
        match self {
            Family::Rocket => &["Body", "Nose", "Fin"],
            Family::Aircraft => &["Body", "Engine", "Tail", "Wing"],
            Family::Car => &["Body", "Hood", "Wheel"],
            Family::Motorbike => &["Body", "Handle", "Gas-tank", "Seat", "Wheel"],
        }
    }

    pub fn class_count(self) -> usize {
        self.labels().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Rocket => "rocket",
            Family::Aircraft => "aircraft",
            Family::Car => "car",
            Family::Motorbike => "motorbike",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::config("family", format!("unknown family `{s}`")))
    }
}

/// Family plus the uniform ranges each geometric parameter is drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec {
    pub family: Family,
    pub ranges: BTreeMap<&'static str, (f64, f64)>,
}

impl ShapeSpec {
    pub fn new(family: Family) -> Self {
        let ranges: &[(&str, (f64, f64))] = match family {
            Family::Rocket => &[
                ("body_radius", (0.12, 0.2)),
                ("body_length", (1.2, 2.0)),
                ("nose_length", (0.3, 0.6)),
                ("fin_span", (0.2, 0.4)),
                ("fin_height", (0.35, 0.6)),
                ("fin_sweep", (0.0, 0.2)),
            ],
            Family::Aircraft => &[
                ("body_radius", (0.1, 0.16)),
                ("body_length", (1.6, 2.2)),
                ("wing_span", (0.8, 1.2)),
                ("wing_chord", (0.25, 0.4)),
                ("engine_radius", (0.05, 0.08)),
                ("engine_length", (0.25, 0.4)),
                ("tail_height", (0.25, 0.4)),
            ],
            Family::Car => &[
                ("body_length", (1.4, 1.9)),
                ("body_width", (0.6, 0.8)),
                ("body_height", (0.3, 0.45)),
                ("hood_length", (0.35, 0.55)),
                ("wheel_radius", (0.14, 0.2)),
            ],
            Family::Motorbike => &[
                ("wheel_radius", (0.25, 0.35)),
                ("wheelbase", (1.1, 1.5)),
                ("frame_height", (0.45, 0.6)),
                ("tank_length", (0.3, 0.45)),
                ("seat_length", (0.3, 0.45)),
                ("handle_width", (0.5, 0.7)),
            ],
        };
        ShapeSpec {
            family,
            ranges: ranges.iter().copied().collect(),
        }
    }

    fn draw(&self, rng: &mut SplitMix64, name: &str) -> f64 {
        let (lo, hi) = self
            .ranges
            .get(name)
            .copied()
            .unwrap_or_else(|| panic!("no range for `{name}`"));
        rng.uniform(lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        let reference = ShapeSpec::new(self.family);
        for key in reference.ranges.keys() {
            match self.ranges.get(key) {
                Some(&(lo, hi)) if lo >= 0.0 && hi >= lo && hi.is_finite() => {}
                Some(r) => return Err(Error::config(*key, format!("invalid range {r:?}"))),
                None => return Err(Error::config(*key, "missing range")),
            }
        }
        Ok(())
    }
}

/// Target triangle edge length before normalization.
const EDGE: f64 = 0.08;

/// Minimum share of the sampling weight every part must receive.
const MIN_PART_SHARE: f64 = 0.03;

const MAX_DRAWS: usize = 16;

#[derive(Default)]
struct MeshBuilder {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
    labels: Vec<usize>,
}

fn lerp(a: Point3, b: Point3, t: f64) -> Point3 {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scaled(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn divisions(length: f64) -> usize {
    ((length / EDGE).ceil() as usize).max(1)
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dist(a: Point3, b: Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Unit direction from `a` to `b` and its length.
fn direction(a: Point3, b: Point3) -> (Point3, f64) {
    let len = dist(a, b);
    (scaled([b[0] - a[0], b[1] - a[1], b[2] - a[2]], 1.0 / len), len)
}

/// Unit vectors orthogonal to `axis` (assumed unit) and to each other.
fn frame(axis: Point3) -> (Point3, Point3) {
    let helper = if axis[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let c = cross(axis, helper);
    let e1 = scaled(c, 1.0 / dist(c, [0.0; 3]));
    (e1, cross(axis, e1))
}

impl MeshBuilder {
    /// Triangulates a `(rows+1)×(cols+1)` vertex grid given by `at(s, t)`,
    /// `s, t ∈ [0, 1]`. With `wrap`, column `cols` is identified with column 0.
    fn grid(&mut self, rows: usize, cols: usize, wrap: bool, label: usize, at: impl Fn(f64, f64) -> Point3) {
        let base = self.vertices.len();
        let stored_cols = if wrap { cols } else { cols + 1 };
        for r in 0..=rows {
            for c in 0..stored_cols {
                self.vertices.push(at(r as f64 / rows as f64, c as f64 / cols as f64));
            }
        }
        let idx = |r: usize, c: usize| base + r * stored_cols + if wrap { c % cols } else { c };
        for r in 0..rows {
            for c in 0..cols {
                let (a, b, d, e) = (idx(r, c), idx(r, c + 1), idx(r + 1, c), idx(r + 1, c + 1));
                self.faces.push([a, b, e]);
                self.faces.push([a, e, d]);
                self.labels.extend([label, label]);
            }
        }
    }

    /// Open tube from `p0` to `p1`.
    fn cylinder(&mut self, p0: Point3, p1: Point3, radius: f64, label: usize) {
        let (dir, length) = direction(p0, p1);
        let (e1, e2) = frame(dir);
        let segments = divisions(2.0 * std::f64::consts::PI * radius).max(8);
        self.grid(divisions(length), segments, true, label, |s, t| {
            let a = 2.0 * std::f64::consts::PI * t;
            let ring = add(scaled(e1, radius * a.cos()), scaled(e2, radius * a.sin()));
            add(lerp(p0, p1, s), ring)
        });
    }

    /// Disc of `radius` centred at `center`, facing `axis`.
    fn disc(&mut self, center: Point3, axis: Point3, radius: f64, label: usize) {
        let (e1, e2) = frame(axis);
        let segments = divisions(2.0 * std::f64::consts::PI * radius).max(8);
        // Rows start slightly off-centre so the innermost ring is not collapsed to a point.
        self.grid(divisions(radius), segments, true, label, |s, t| {
            let a = 2.0 * std::f64::consts::PI * t;
            let r = radius * (0.05 + 0.95 * s);
            add(center, add(scaled(e1, r * a.cos()), scaled(e2, r * a.sin())))
        });
    }

    /// Closed wheel-like drum: tube plus both end discs.
    fn drum(&mut self, p0: Point3, p1: Point3, radius: f64, label: usize) {
        self.cylinder(p0, p1, radius, label);
        let (dir, _) = direction(p0, p1);
        self.disc(p0, dir, radius, label);
        self.disc(p1, dir, radius, label);
    }

    /// Cone surface from a base circle to an apex, truncated just short of
    /// the tip to keep triangles non-degenerate.
    fn cone(&mut self, base: Point3, apex: Point3, radius: f64, label: usize) {
        let (dir, length) = direction(base, apex);
        let (e1, e2) = frame(dir);
        let segments = divisions(2.0 * std::f64::consts::PI * radius).max(8);
        let slant = (length * length + radius * radius).sqrt();
        self.grid(divisions(slant), segments, true, label, |s, t| {
            let a = 2.0 * std::f64::consts::PI * t;
            let s = s * 0.97;
            let r = radius * (1.0 - s);
            add(
                lerp(base, apex, s),
                add(scaled(e1, r * a.cos()), scaled(e2, r * a.sin())),
            )
        });
    }

    /// Bilinear patch through four corners, in order around the boundary.
    fn quad(&mut self, c00: Point3, c10: Point3, c11: Point3, c01: Point3, label: usize) {
        let rows = divisions(dist(c00, c01).max(dist(c10, c11)));
        let cols = divisions(dist(c00, c10).max(dist(c01, c11)));
        self.grid(rows, cols, false, label, |s, t| {
            lerp(lerp(c00, c10, t), lerp(c01, c11, t), s)
        });
    }

    /// Axis-aligned box surface.
    fn cuboid(&mut self, center: Point3, half: Point3, label: usize) {
        let corner = |sx: f64, sy: f64, sz: f64| {
            [
                center[0] + sx * half[0],
                center[1] + sy * half[1],
                center[2] + sz * half[2],
            ]
        };
        let c = |i: usize| {
            let s = |bit: usize| if i >> bit & 1 == 1 { 1.0 } else { -1.0 };
            corner(s(0), s(1), s(2))
        };
        for (a, b, d, e) in [
            (0, 1, 3, 2),
            (4, 5, 7, 6),
            (0, 1, 5, 4),
            (2, 3, 7, 6),
            (0, 2, 6, 4),
            (1, 3, 7, 5),
        ] {
            self.quad(c(a), c(b), c(d), c(e), label);
        }
    }

    fn finish(self) -> Result<TriangleMesh> {
        TriangleMesh::new(self.vertices, self.faces, Some(self.labels))
    }
}

fn rocket(spec: &ShapeSpec, rng: &mut SplitMix64) -> MeshBuilder {
    let mut m = MeshBuilder::default();
    let r = spec.draw(rng, "body_radius");
    let len = spec.draw(rng, "body_length");
    let nose = spec.draw(rng, "nose_length");
    let span = spec.draw(rng, "fin_span");
    let fin_h = spec.draw(rng, "fin_height");
    let sweep = spec.draw(rng, "fin_sweep");
    let fins = 3 + rng.below(2);
    let phase = rng.uniform(0.0, std::f64::consts::TAU);

    m.cylinder([0.0, 0.0, 0.0], [0.0, 0.0, len], r, 0);
    m.cone([0.0, 0.0, len], [0.0, 0.0, len + nose], r, 1);
    for i in 0..fins {
        let a = phase + std::f64::consts::TAU * i as f64 / fins as f64;
        let (c, s) = (a.cos(), a.sin());
        let at = |radial: f64, z: f64| [c * radial, s * radial, z];
        // Trapezoid: root along the body, tip swept upward.
        m.quad(
            at(r, 0.0),
            at(r + span, sweep),
            at(r + span, sweep + 0.4 * fin_h),
            at(r, fin_h),
            2,
        );
    }
    m
}

fn aircraft(spec: &ShapeSpec, rng: &mut SplitMix64) -> MeshBuilder {
    let mut m = MeshBuilder::default();
    let r = spec.draw(rng, "body_radius");
    let len = spec.draw(rng, "body_length");
    let span = spec.draw(rng, "wing_span");
    let chord = spec.draw(rng, "wing_chord");
    let er = spec.draw(rng, "engine_radius");
    let el = spec.draw(rng, "engine_length");
    let th = spec.draw(rng, "tail_height");
    let wing_x = rng.uniform(0.4, 0.55) * len;

    m.cylinder([0.0, 0.0, 0.0], [len, 0.0, 0.0], r, 0);
    m.cone([len, 0.0, 0.0], [len + 2.0 * r, 0.0, 0.0], r, 0);
    for side in [-1.0, 1.0] {
        m.quad(
            [wing_x, side * r, 0.0],
            [wing_x + chord, side * r, 0.0],
            [wing_x + 0.5 * chord + 0.2, side * span, 0.0],
            [wing_x + 0.2, side * span, 0.0],
            3,
        );
        let ey = side * (r + 0.45 * (span - r));
        let ez = -(er + 0.02);
        m.drum([wing_x - 0.3 * el, ey, ez], [wing_x + 0.7 * el, ey, ez], er, 1);
        // Horizontal stabilizer.
        m.quad(
            [0.0, side * r, 0.0],
            [0.3, side * r, 0.0],
            [0.3, side * (r + 0.35 * th + 0.1), 0.0],
            [0.1, side * (r + 0.35 * th + 0.1), 0.0],
            2,
        );
    }
    m.quad(
        [0.0, 0.0, r],
        [0.35, 0.0, r],
        [0.2, 0.0, r + th],
        [0.05, 0.0, r + th],
        2,
    );
    m
}

fn car(spec: &ShapeSpec, rng: &mut SplitMix64) -> MeshBuilder {
    let mut m = MeshBuilder::default();
    let len = spec.draw(rng, "body_length");
    let w = spec.draw(rng, "body_width");
    let h = spec.draw(rng, "body_height");
    let hood = spec.draw(rng, "hood_length");
    let wr = spec.draw(rng, "wheel_radius");
    let cabin = len - hood;

    // Cabin block behind the hood, lower hood block in front.
    m.cuboid([cabin / 2.0, 0.0, wr + h], [cabin / 2.0, w / 2.0, h / 2.0 + 0.1], 0);
    m.cuboid(
        [cabin + hood / 2.0, 0.0, wr + 0.5 * h],
        [hood / 2.0, w / 2.0, h / 4.0 + 0.05],
        1,
    );
    for x in [0.2 * len, 0.85 * len] {
        for side in [-1.0, 1.0] {
            let y0 = side * (w / 2.0 + 0.01);
            m.drum([x, y0, wr], [x, y0 + side * 0.12, wr], wr, 2);
        }
    }
    m
}

fn motorbike(spec: &ShapeSpec, rng: &mut SplitMix64) -> MeshBuilder {
    let mut m = MeshBuilder::default();
    let wr = spec.draw(rng, "wheel_radius");
    let base = spec.draw(rng, "wheelbase");
    let fh = spec.draw(rng, "frame_height");
    let tank = spec.draw(rng, "tank_length");
    let seat = spec.draw(rng, "seat_length");
    let hw = spec.draw(rng, "handle_width");
    let top = wr + fh;

    for x in [0.0, base] {
        m.drum([x, -0.06, wr], [x, 0.06, wr], wr, 4);
    }
    // Frame: down tube and engine block.
    m.cylinder([base - 0.1, 0.0, top], [0.35 * base, 0.0, wr * 0.9], 0.05, 0);
    m.cuboid([0.5 * base, 0.0, wr + 0.1], [0.18, 0.1, 0.12], 0);
    m.cylinder([0.0, 0.0, wr], [0.45 * base, 0.0, wr + 0.1], 0.04, 0);
    let tank_x = base - 0.15 - tank / 2.0;
    m.cuboid([tank_x, 0.0, top], [tank / 2.0, 0.12, 0.09], 2);
    let seat_x = tank_x - tank / 2.0 - seat / 2.0;
    m.cuboid([seat_x, 0.0, top - 0.02], [seat / 2.0, 0.11, 0.04], 3);
    m.cylinder(
        [base - 0.05, -hw / 2.0, top + 0.2],
        [base - 0.05, hw / 2.0, top + 0.2],
        0.06,
        1,
    );
    m.cylinder([base, 0.0, wr], [base - 0.05, 0.0, top + 0.2], 0.035, 0);
    m
}

fn part_shares(mesh: &TriangleMesh, classes: usize) -> Result<Vec<f64>> {
    let w = SamplingWeights::from_mesh(mesh)?;
    let mut shares = vec![0.0; classes];
    for (f, &wf) in w.weights.iter().enumerate() {
        shares[mesh.face_label(f)] += wf / w.total();
    }
    Ok(shares)
}

/// Builds one labeled mesh. Parameter draws that leave a part with too little
/// surface are redrawn, up to a fixed number of attempts.
pub fn gen_shape(spec: &ShapeSpec, seed: u64) -> Result<TriangleMesh> {
    spec.validate()?;
    let mut rng = SplitMix64::stream(seed, spec.family.name());
    let classes = spec.family.class_count();
    for _ in 0..MAX_DRAWS {
        let builder = match spec.family {
            Family::Rocket => rocket(spec, &mut rng),
            Family::Aircraft => aircraft(spec, &mut rng),
            Family::Car => car(spec, &mut rng),
            Family::Motorbike => motorbike(spec, &mut rng),
        };
        let mesh = builder.finish()?;
        if part_shares(&mesh, classes)?.iter().all(|&s| s >= MIN_PART_SHARE) {
            return Ok(mesh);
        }
    }
    Err(Error::Degenerate(format!(
        "no valid {} shape after {MAX_DRAWS} draws",
        spec.family
    )))
}

/// Generates, normalizes and samples `count` shapes. Per-shape seeds are
/// derived from `seed` and the shape index, so any prefix of the dataset is
/// independent of `count`.
pub fn gen_dataset(
    spec: &ShapeSpec,
    count: usize,
    points: usize,
    seed: u64,
    center: CenterMode,
    exec: Execution,
) -> Result<Vec<LabeledPointCloud>> {
    if count == 0 {
        return Err(Error::Empty("dataset size"));
    }
    let indices: Vec<usize> = (0..count).collect();
    par::map(exec, &indices, |&i| {
        let mut mesh = gen_shape(spec, derive_seed(seed, &format!("shape/{i}")))?;
        mesh.vertices = unit_sphere_normalize(&mesh.vertices, center)?;
        let cloud = sample_surface(&mesh, points, derive_seed(seed, &format!("sample/{i}")))?;
        cloud.normalized(center)?.with_class_count(spec.family.class_count())
    })
    .into_iter()
    .collect()
}

/// Writes clouds under `<root>/<family>/{points,labels}` and replaces the
/// family's entries in `<root>/manifest.txt`, keeping other families.
pub fn write_dataset(root: &Path, family: &str, clouds: &[LabeledPointCloud]) -> Result<()> {
    let points_dir = root.join(family).join("points");
    let labels_dir = root.join(family).join("labels");
    fs::create_dir_all(&points_dir)?;
    fs::create_dir_all(&labels_dir)?;
    let manifest_path = root.join("manifest.txt");
    let prefix = format!("{family}/");
    let mut manifest = String::new();
    if manifest_path.exists() {
        for line in fs::read_to_string(&manifest_path)?.lines() {
            if !line.starts_with(&prefix) && !line.trim().is_empty() {
                manifest.push_str(line);
                manifest.push('\n');
            }
        }
    }
    for (i, cloud) in clouds.iter().enumerate() {
        let stem = format!("{i:04}");
        cloud.write_pts_seg(
            &points_dir.join(format!("{stem}.pts")),
            &labels_dir.join(format!("{stem}.seg")),
        )?;
        manifest.push_str(&format!("{family}/points/{stem}.pts {family}/labels/{stem}.seg\n"));
    }
    fs::write(manifest_path, manifest)?;
    Ok(())
}

/// A cloud read from disk together with its stem (file name without extension).
#[derive(Clone, Debug, PartialEq)]
pub struct NamedCloud {
    pub name: String,
    pub cloud: LabeledPointCloud,
}

/// Reads `<root>/<family>`. Uses `manifest.txt` entries for the family when
/// present; otherwise pairs `points/*.pts` with `labels/*.seg` or, for the
/// annotated-ShapeNet layout, `points_label/*.seg`. `label_base` is
/// subtracted from every stored label.
pub fn read_dataset(root: &Path, family: &str, class_count: usize, label_base: usize) -> Result<Vec<NamedCloud>> {
    let pairs = dataset_pairs(root, family)?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no point clouds for `{family}` under {}",
            root.display()
        )));
    }
    pairs
        .into_iter()
        .map(|(pts, seg)| {
            let name = pts.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let cloud = LabeledPointCloud::read_pts_seg(&pts, &seg, class_count, label_base)?;
            Ok(NamedCloud { name, cloud })
        })
        .collect()
}

fn dataset_pairs(root: &Path, family: &str) -> Result<Vec<(PathBuf, PathBuf)>> {
    let manifest = root.join("manifest.txt");
    if manifest.exists() {
        let text = fs::read_to_string(&manifest)?;
        let prefix = format!("{family}/");
        return text
            .lines()
            .enumerate()
            .filter(|(_, l)| l.starts_with(&prefix))
            .map(|(i, l)| match l.split_whitespace().collect::<Vec<_>>()[..] {
                [p, s] => Ok((root.join(p), root.join(s))),
                _ => Err(Error::parse(&manifest, i + 1, "expected `<pts> <seg>`")),
            })
            .collect();
    }
    let dir = root.join(family);
    let labels = ["labels", "points_label"]
        .iter()
        .map(|d| dir.join(d))
        .find(|d| d.is_dir())
        .ok_or_else(|| Error::InvalidArgument(format!("no labels directory under {}", dir.display())))?;
    let mut pts: Vec<PathBuf> = fs::read_dir(dir.join("points"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pts"))
        .collect();
    pts.sort();
    Ok(pts
        .into_iter()
        .map(|p| {
            let seg = labels.join(p.with_extension("seg").file_name().expect("file"));
            (p, seg)
        })
        .collect())
}
