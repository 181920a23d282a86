use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
    /// Part label per face, when known.
    pub face_labels: Option<Vec<usize>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>, face_labels: Option<Vec<usize>>) -> Result<Self> {
        let mesh = TriangleMesh {
            vertices,
            faces,
            face_labels,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidArgument(format!("face {i} references a vertex >= {nv}")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidArgument(format!("face {i} repeats a vertex index")));
            }
        }
        if let Some(labels) = &self.face_labels {
            if labels.len() != self.faces.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} face labels for {} faces",
                    labels.len(),
                    self.faces.len()
                )));
            }
        }
        Ok(())
    }

    pub fn triangle(&self, face: usize) -> [Point3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_label(&self, face: usize) -> usize {
        self.face_labels.as_ref().map_or(0, |l| l[face])
    }

    /// Reads an ASCII OFF or OBJ file, chosen by extension. A `<mesh>.flab`
    /// sidecar, when present, supplies one label per face.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        let (vertices, faces) = match ext.as_str() {
            "off" => parse_off(&text, path)?,
            "obj" => parse_obj(&text, path)?,
            other => return Err(Error::InvalidArgument(format!("unsupported mesh extension `{other}`"))),
        };
        let sidecar = label_sidecar(path);
        let face_labels = if sidecar.exists() {
            Some(read_labels(&sidecar)?)
        } else {
            None
        };
        Self::new(vertices, faces, face_labels)
    }
}

pub fn label_sidecar(mesh: &Path) -> PathBuf {
    let mut name = mesh.as_os_str().to_owned();
    name.push(".flab");
    PathBuf::from(name)
}

/// One non-negative integer per non-empty line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    parse_labels(&text, path)
}

pub(crate) fn parse_labels(text: &str, path: &Path) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| Error::parse(path, i + 1, format!("bad label `{}`: {e}", l.trim())))
        })
        .collect()
}

fn parse_f64(tok: &str, path: &Path, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|e| Error::parse(path, line, format!("bad number `{tok}`: {e}")))
}

fn parse_off(text: &str, path: &Path) -> Result<(Vec<Point3>, Vec<[usize; 3]>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hl, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    // Some writers put the counts on the header line itself ("OFF3 2 0").
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| Error::parse(path, hl, "missing OFF header"))?
        .trim();
    let (cl, counts) = if rest.is_empty() {
        lines.next().ok_or_else(|| Error::parse(path, hl, "missing counts"))?
    } else {
        (hl, rest)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|e| Error::parse(path, cl, format!("bad count: {e}")))
        })
        .collect::<Result<_>>()?;
    let (nv, nf) = match counts[..] {
        [nv, nf, ..] => (nv, nf),
        _ => return Err(Error::parse(path, cl, "expected vertex and face counts")),
    };

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::parse(path, cl, "truncated vertex list"))?;
        let xs: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|t| parse_f64(t, path, ln))
            .collect::<Result<_>>()?;
        if xs.len() != 3 {
            return Err(Error::parse(path, ln, "vertex needs three coordinates"));
        }
        vertices.push([xs[0], xs[1], xs[2]]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::parse(path, cl, "truncated face list"))?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|e| Error::parse(path, ln, format!("bad index: {e}")))
            })
            .collect::<Result<_>>()?;
        match idx[..] {
            [3, a, b, c, ..] => faces.push([a, b, c]),
            [n, ..] => {
                return Err(Error::parse(
                    path,
                    ln,
                    format!("only triangles are supported, got {n}-gon"),
                ))
            }
            [] => return Err(Error::parse(path, ln, "empty face")),
        }
    }
    Ok((vertices, faces))
}

fn parse_obj(text: &str, path: &Path) -> Result<(Vec<Point3>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let mut toks = line.split('#').next().unwrap_or("").split_whitespace();
        match toks.next() {
            Some("v") => {
                let xs: Vec<f64> = toks.take(3).map(|t| parse_f64(t, path, ln)).collect::<Result<_>>()?;
                if xs.len() != 3 {
                    return Err(Error::parse(path, ln, "vertex needs three coordinates"));
                }
                vertices.push([xs[0], xs[1], xs[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = toks
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let raw: i64 = head
                            .parse()
                            .map_err(|e| Error::parse(path, ln, format!("bad index `{t}`: {e}")))?;
                        // OBJ indices are 1-based; negatives count back from the end.
                        let resolved = if raw > 0 { raw - 1 } else { vertices.len() as i64 + raw };
                        usize::try_from(resolved)
                            .map_err(|_| Error::parse(path, ln, format!("index `{t}` out of range")))
                    })
                    .collect::<Result<_>>()?;
                match idx[..] {
                    [a, b, c] => faces.push([a, b, c]),
                    _ => {
                        return Err(Error::parse(
                            path,
                            ln,
                            format!("only triangles are supported, got {} vertices", idx.len()),
                        ))
                    }
                }
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Point3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}
