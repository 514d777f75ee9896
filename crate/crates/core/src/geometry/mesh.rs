use std::path::Path;

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::invalid(
                    "faces",
                    format!("face {fi} references vertex {bad}, mesh has {}", vertices.len()),
                ));
            }
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("vertices", "vertex coordinates must be finite"));
        }
        Ok(TriangleMesh { vertices, faces })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cx = u[1] * v[2] - u[2] * v[1];
        let cy = u[2] * v[0] - u[0] * v[2];
        let cz = u[0] * v[1] - u[1] * v[0];
        0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Parse the `v`/`f` subset of Wavefront OBJ. Indices are 1-based (negative
    /// indices count back from the last vertex); polygons are fan-triangulated
    /// and every other statement is ignored.
    pub fn from_obj_str(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let mut toks = line.split_whitespace();
            match toks.next() {
                Some("v") => {
                    let mut p = [0.0f64; 3];
                    for slot in p.iter_mut() {
                        let tok = toks.next().ok_or_else(|| {
                            Error::parse(format!("line {}: vertex needs 3 coordinates", lineno + 1))
                        })?;
                        *slot = tok.parse().map_err(|_| {
                            Error::parse(format!("line {}: bad coordinate `{tok}`", lineno + 1))
                        })?;
                    }
                    vertices.push(p);
                }
                Some("f") => {
                    let mut poly = Vec::new();
                    for tok in toks {
                        let head = tok.split('/').next().unwrap_or("");
                        let idx: i64 = head.parse().map_err(|_| {
                            Error::parse(format!("line {}: bad face index `{tok}`", lineno + 1))
                        })?;
                        let resolved = match idx {
                            0 => None,
                            i if i > 0 => Some(i as usize - 1),
                            i => (vertices.len() as i64 + i).try_into().ok(),
                        };
                        poly.push(resolved.ok_or_else(|| {
                            Error::parse(format!("line {}: face index {idx} out of range", lineno + 1))
                        })?);
                    }
                    if poly.len() < 3 {
                        return Err(Error::parse(format!(
                            "line {}: face needs at least 3 vertices",
                            lineno + 1
                        )));
                    }
                    for w in 1..poly.len() - 1 {
                        faces.push([poly[0], poly[w], poly[w + 1]]);
                    }
                }
                _ => {}
            }
        }
        TriangleMesh::new(vertices, faces).map_err(|e| match e {
            Error::InvalidArgument { message, .. } => Error::parse(message),
            other => other,
        })
    }

    pub fn read_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_obj_str(&text)
    }

    pub fn to_obj_string(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            s.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
        }
        for f in &self.faces {
            s.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
        }
        s
    }
}

/// Area-weighted face choice followed by a uniform barycentric sample.
pub fn sample_mesh<R: Rng + ?Sized>(mesh: &TriangleMesh, n: usize, rng: &mut R) -> Result<PointCloud> {
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
    if !areas.iter().any(|&a| a > 0.0) {
        return Err(Error::invalid("mesh", "mesh has no face with positive area"));
    }
    let pick = WeightedIndex::new(&areas).map_err(|e| Error::invalid("mesh", e.to_string()))?;
    let mut points = Array2::<f32>::zeros((n, 3));
    for i in 0..n {
        let f = pick.sample(rng);
        let [a, b, c] = mesh.faces[f].map(|v| mesh.vertices[v]);
        let r1: f64 = rng.random::<f64>().sqrt();
        let r2: f64 = rng.random();
        let wa = 1.0 - r1;
        let wb = r1 * (1.0 - r2);
        let wc = r1 * r2;
        for k in 0..3 {
            points[[i, k]] = (wa * a[k] + wb * b[k] + wc * c[k]) as f32;
        }
    }
    PointCloud::new(points)
}
