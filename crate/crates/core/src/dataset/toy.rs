//! Procedural shape families for small, self-contained experiments.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, RepoEntry, ShapeRepository};
use crate::error::{Error, Result};
use crate::geometry::{normalize_unit_ball, sample_mesh, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyFamily {
    /// Axis-aligned ellipsoid with random semi-axes.
    Ellipsoid,
    /// Flat slab on four legs pointing down the z axis.
    LeggedBox,
}

impl ToyFamily {
    pub const ALL: [ToyFamily; 2] = [ToyFamily::Ellipsoid, ToyFamily::LeggedBox];

    pub fn as_str(self) -> &'static str {
        match self {
            ToyFamily::Ellipsoid => "ellipsoid",
            ToyFamily::LeggedBox => "legged_box",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ellipsoid" => Ok(ToyFamily::Ellipsoid),
            "legged_box" | "legged-box" => Ok(ToyFamily::LeggedBox),
            other => Err(Error::invalid("family", format!("unknown toy family `{other}`"))),
        }
    }

    pub fn mesh<R: Rng + ?Sized>(self, rng: &mut R) -> TriangleMesh {
        match self {
            ToyFamily::Ellipsoid => {
                let a = rng.random_range(0.5..1.0);
                let b = rng.random_range(0.5..1.0);
                let c = rng.random_range(0.3..1.0);
                ellipsoid_mesh([a, b, c], 24, 12)
            }
            ToyFamily::LeggedBox => {
                let wx = rng.random_range(0.6..1.0);
                let wy = rng.random_range(0.4..0.8);
                let t = rng.random_range(0.06..0.16);
                let leg_len = rng.random_range(0.5..1.0);
                let leg = rng.random_range(0.05..0.1);
                legged_box_mesh([wx, wy, t], leg_len, leg)
            }
        }
    }
}

pub fn ellipsoid_mesh(axes: [f64; 3], slices: usize, stacks: usize) -> TriangleMesh {
    let mut vertices = vec![[0.0, 0.0, axes[2]]];
    for i in 1..stacks {
        let theta = PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let phi = 2.0 * PI * j as f64 / slices as f64;
            vertices.push([
                axes[0] * theta.sin() * phi.cos(),
                axes[1] * theta.sin() * phi.sin(),
                axes[2] * theta.cos(),
            ]);
        }
    }
    vertices.push([0.0, 0.0, -axes[2]]);
    let south = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + (j % slices);
    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(1, j), ring(1, j + 1)]);
        faces.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            faces.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            faces.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    TriangleMesh::new(vertices, faces).expect("indices in range by construction")
}

fn push_box(vertices: &mut Vec<[f64; 3]>, faces: &mut Vec<[usize; 3]>, lo: [f64; 3], hi: [f64; 3]) {
    let base = vertices.len();
    for k in 0..8 {
        vertices.push([
            if k & 1 == 0 { lo[0] } else { hi[0] },
            if k & 2 == 0 { lo[1] } else { hi[1] },
            if k & 4 == 0 { lo[2] } else { hi[2] },
        ]);
    }
    const QUADS: [[usize; 4]; 6] = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    for q in QUADS {
        faces.push([base + q[0], base + q[1], base + q[2]]);
        faces.push([base + q[0], base + q[2], base + q[3]]);
    }
}

/// Slab with half extents `half` centred at the origin plus four square legs
/// of half-width `leg` hanging `leg_len` below it.
pub fn legged_box_mesh(half: [f64; 3], leg_len: f64, leg: f64) -> TriangleMesh {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    push_box(&mut vertices, &mut faces, [-half[0], -half[1], -half[2]], [half[0], half[1], half[2]]);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            let cx = sx * (half[0] - leg);
            let cy = sy * (half[1] - leg);
            push_box(
                &mut vertices,
                &mut faces,
                [cx - leg, cy - leg, -half[2] - leg_len],
                [cx + leg, cy + leg, -half[2]],
            );
        }
    }
    TriangleMesh::new(vertices, faces).expect("indices in range by construction")
}

/// `count` shapes cycling through `families`, each sampled to `n` points
/// and normalized to the unit ball. Shape `i` is seeded from its id.
pub fn make_toy_repository(families: &[ToyFamily], count: usize, n: usize, seed: u64) -> Result<ShapeRepository> {
    if count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    if families.is_empty() {
        return Err(Error::invalid("families", "at least one family is required"));
    }
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let family = families[i % families.len()];
        let id = format!("{}-{:03}", family.as_str(), i);
        let shape_seed = derive_seed(seed, &id);
        let mut rng = ChaCha8Rng::seed_from_u64(shape_seed);
        let mesh = family.mesh(&mut rng);
        let cloud = normalize_unit_ball(&sample_mesh(&mesh, n, &mut rng)?);
        entries.push(RepoEntry {
            id,
            cloud,
            source: Some(format!("toy:{}", family.as_str())),
            seed: shape_seed,
        });
    }
    ShapeRepository::new("toy", entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_shapes_four_per_family() {
        let repo = make_toy_repository(&ToyFamily::ALL, 8, 256, 1).unwrap();
        assert_eq!(repo.len(), 8);
        let ell = repo.ids().filter(|id| id.starts_with("ellipsoid")).count();
        assert_eq!(ell, 4);
        assert_eq!(repo.ids().next().unwrap(), "ellipsoid-000");
        for e in repo.entries() {
            assert_eq!(e.cloud.len(), 256);
        }
        repo.check_normalized().unwrap();
    }

    #[test]
    fn same_seed_same_repository() {
        let a = make_toy_repository(&ToyFamily::ALL, 4, 128, 5).unwrap();
        let b = make_toy_repository(&ToyFamily::ALL, 4, 128, 5).unwrap();
        assert_eq!(a, b);
        let c = make_toy_repository(&ToyFamily::ALL, 4, 128, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn meshes_are_closed_surfaces_with_expected_area() {
        let m = legged_box_mesh([1.0, 0.5, 0.1], 0.8, 0.05);
        let slab = 2.0 * (2.0 * 1.0 + 2.0 * 0.2 + 1.0 * 0.2) * 1.0;
        let legs = 4.0 * (4.0 * 0.1 * 0.8 + 2.0 * 0.01);
        assert!((m.total_area() - (slab + legs)).abs() < 1e-9);
        let e = ellipsoid_mesh([1.0, 1.0, 1.0], 48, 24);
        assert!((e.total_area() - 4.0 * PI).abs() / (4.0 * PI) < 0.02);
    }

    #[test]
    fn legs_point_down() {
        let repo = make_toy_repository(&[ToyFamily::LeggedBox], 1, 512, 2).unwrap();
        let pts = repo.entries()[0].cloud.points();
        let below = pts.column(2).iter().filter(|&&z| z < -0.2).count();
        let above = pts.column(2).iter().filter(|&&z| z > 0.6).count();
        assert!(below > 50);
        assert_eq!(above, 0);
    }
}
