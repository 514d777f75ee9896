//! Geometric kernels shared by training, manipulation and evaluation.

mod knn;
mod mesh;

pub use knn::{knn, NeighborGraph};
pub use mesh::{sample_mesh, TriangleMesh};

use ndarray::Array2;

use crate::error::{Error, Result};

/// An `N x 3` point set with optional per-point part labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f32>,
    labels: Option<Vec<u16>>,
}

impl PointCloud {
    pub fn new(points: Array2<f32>) -> Result<Self> {
        if points.ncols() != 3 {
            return Err(Error::invalid(
                "points",
                format!("expected 3 columns, got {}", points.ncols()),
            ));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("points", "coordinates must be finite"));
        }
        Ok(PointCloud {
            points,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::invalid(
                "labels",
                format!("expected {} labels, got {}", self.len(), labels.len()),
            ));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn points(&self) -> &Array2<f32> {
        &self.points
    }

    pub fn labels(&self) -> Option<&[u16]> {
        self.labels.as_deref()
    }

    pub fn take_labels(&mut self) -> Option<Vec<u16>> {
        self.labels.take()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn into_points(self) -> Array2<f32> {
        self.points
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0f64; 3];
        for row in self.points.rows() {
            for k in 0..3 {
                c[k] += row[k] as f64;
            }
        }
        let n = self.len().max(1) as f64;
        c.map(|v| v / n)
    }
}

/// Symmetric Chamfer distance with the squared-distance convention: mean
/// squared nearest-neighbor distance from `a` to `b` plus the same from `b`
/// to `a`.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("cloud", "chamfer distance needs non-empty clouds"));
    }
    Ok(chamfer_points(a.points(), b.points()))
}

/// Tag written next to every reported Chamfer-based value.
pub const CHAMFER_CONVENTION: &str = "chamfer:squared-l2,mean-per-direction,two-sided-sum";

pub(crate) fn chamfer_points(a: &Array2<f32>, b: &Array2<f32>) -> f64 {
    let bs: Vec<[f64; 3]> = b
        .rows()
        .into_iter()
        .map(|r| [r[0] as f64, r[1] as f64, r[2] as f64])
        .collect();
    let mut min_b = vec![f64::INFINITY; bs.len()];
    let mut sum_a = 0.0f64;
    for r in a.rows() {
        let p = [r[0] as f64, r[1] as f64, r[2] as f64];
        let mut best = f64::INFINITY;
        for (q, mb) in bs.iter().zip(min_b.iter_mut()) {
            let dx = p[0] - q[0];
            let dy = p[1] - q[1];
            let dz = p[2] - q[2];
            let d = dx * dx + dy * dy + dz * dz;
            if d < best {
                best = d;
            }
            if d < *mb {
                *mb = d;
            }
        }
        sum_a += best;
    }
    let sum_b: f64 = min_b.iter().sum();
    sum_a / a.nrows() as f64 + sum_b / b.nrows() as f64
}

/// Move the centroid to the origin and scale so the farthest point has norm
/// one. Clouds whose points all coincide are only translated.
pub fn normalize_unit_ball(cloud: &PointCloud) -> PointCloud {
    let c = cloud.centroid();
    let mut max_norm = 0.0f64;
    for row in cloud.points.rows() {
        let n2: f64 = (0..3).map(|k| (row[k] as f64 - c[k]).powi(2)).sum();
        max_norm = max_norm.max(n2.sqrt());
    }
    let scale = if max_norm > 0.0 { 1.0 / max_norm } else { 1.0 };
    let points = Array2::from_shape_fn(cloud.points.dim(), |(i, k)| {
        ((cloud.points[[i, k]] as f64 - c[k]) * scale) as f32
    });
    PointCloud {
        points,
        labels: cloud.labels.clone(),
    }
}
