//! The fixed global prior and the per-point latent codes packed onto it.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the point scaffold the generator is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    #[default]
    Sphere,
    /// Surface of the axis-aligned cube inscribed in the unit ball.
    Cube,
}

impl PriorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PriorKind::Sphere => "sphere",
            PriorKind::Cube => "cube",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(PriorKind::Sphere),
            "cube" => Ok(PriorKind::Cube),
            other => Err(Error::invalid("prior", format!("unknown prior kind `{other}`"))),
        }
    }
}

/// The prior point set `S`. Row `i` is the anchor of sphere index `i`; that
/// index is the identity every correspondence-based operation works with.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoints {
    coords: Array2<f32>,
    seed: u64,
    kind: PriorKind,
}

impl SpherePoints {
    pub fn coords(&self) -> &Array2<f32> {
        &self.coords
    }

    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    /// True when `other` was built from the same `(kind, n, seed)`.
    pub fn same_prior(&self, other: &SpherePoints) -> bool {
        self.kind == other.kind && self.seed == other.seed && self.n() == other.n()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fibonacci spiral lattice on the unit sphere. The seed only rotates the
/// lattice about the z axis.
pub fn sample_sphere(n: usize, seed: u64) -> Result<SpherePoints> {
    if n == 0 {
        return Err(Error::invalid("n", "sphere point count must be at least 1"));
    }
    let offset = 2.0 * PI * ((splitmix64(seed) >> 11) as f64 / (1u64 << 53) as f64);
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    let mut coords = Array2::<f32>::zeros((n, 3));
    for i in 0..n {
        let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let theta = golden_angle * i as f64 + offset;
        let (x, y) = (r * theta.cos(), r * theta.sin());
        let norm = (x * x + y * y + z * z).sqrt();
        coords[[i, 0]] = (x / norm) as f32;
        coords[[i, 1]] = (y / norm) as f32;
        coords[[i, 2]] = (z / norm) as f32;
    }
    Ok(SpherePoints {
        coords,
        seed,
        kind: PriorKind::Sphere,
    })
}

/// Uniform random points on the surface of the cube inscribed in the unit
/// ball, deterministic in `seed`.
pub fn sample_cube(n: usize, seed: u64) -> Result<SpherePoints> {
    if n == 0 {
        return Err(Error::invalid("n", "cube point count must be at least 1"));
    }
    let half = 1.0 / 3f64.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Array2::<f32>::zeros((n, 3));
    for i in 0..n {
        let face: usize = rng.random_range(0..6);
        let u: f64 = rng.random_range(-half..half);
        let v: f64 = rng.random_range(-half..half);
        let axis = face / 2;
        let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
        let mut p = [0.0f64; 3];
        p[axis] = sign * half;
        p[(axis + 1) % 3] = u;
        p[(axis + 2) % 3] = v;
        for c in 0..3 {
            coords[[i, c]] = p[c] as f32;
        }
    }
    Ok(SpherePoints {
        coords,
        seed,
        kind: PriorKind::Cube,
    })
}

pub fn sample_prior(kind: PriorKind, n: usize, seed: u64) -> Result<SpherePoints> {
    match kind {
        PriorKind::Sphere => sample_sphere(n, seed),
        PriorKind::Cube => sample_cube(n, seed),
    }
}

/// A `d`-dimensional latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(Array1<f32>);

impl LatentCode {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("z", "latent code must have at least one entry"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("z", "latent code entries must be finite"));
        }
        Ok(LatentCode(Array1::from(values)))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> ArrayView1<'_, f32> {
        self.0.view()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.to_vec()
    }
}

/// `d` independent standard-normal draws.
pub fn sample_code<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<LatentCode> {
    if d == 0 {
        return Err(Error::invalid("d", "latent dimension must be at least 1"));
    }
    let values: Vec<f32> = (0..d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Ok(LatentCode(Array1::from(values)))
}

/// The generator input: the prior points with one latent row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorLatentMatrix {
    sphere: SpherePoints,
    codes: Array2<f32>,
}

impl PriorLatentMatrix {
    pub fn sphere(&self) -> &SpherePoints {
        &self.sphere
    }

    pub fn codes(&self) -> &Array2<f32> {
        &self.codes
    }

    pub fn into_codes(self) -> Array2<f32> {
        self.codes
    }

    pub fn latent_dim(&self) -> usize {
        self.codes.ncols()
    }
}

/// Attach the same code to every prior point.
pub fn pack_uniform(sphere: &SpherePoints, z: &LatentCode) -> PriorLatentMatrix {
    let n = sphere.n();
    let codes = z.0.broadcast((n, z.dim())).expect("row broadcast").to_owned();
    PriorLatentMatrix {
        sphere: sphere.clone(),
        codes,
    }
}

/// Attach an explicit code row to each prior point.
pub fn pack_perpoint(sphere: &SpherePoints, codes: Array2<f32>) -> Result<PriorLatentMatrix> {
    if codes.nrows() != sphere.n() {
        return Err(Error::invalid(
            "codes",
            format!("expected {} rows, got {}", sphere.n(), codes.nrows()),
        ));
    }
    if codes.ncols() == 0 {
        return Err(Error::invalid("codes", "latent dimension must be at least 1"));
    }
    if codes.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("codes", "latent rows must be finite"));
    }
    Ok(PriorLatentMatrix {
        sphere: sphere.clone(),
        codes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nn_distances(s: &SpherePoints) -> Vec<f64> {
        let c = s.coords();
        (0..s.n())
            .map(|i| {
                (0..s.n())
                    .filter(|&j| j != i)
                    .map(|j| {
                        (0..3)
                            .map(|k| (c[[i, k]] as f64 - c[[j, k]] as f64).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn single_point_has_unit_norm() {
        let s = sample_sphere(1, 0).unwrap();
        let r = s.coords().row(0);
        let norm = r.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn default_size_rows_are_unit_norm() {
        let s = sample_sphere(2048, 0).unwrap();
        assert_eq!(s.n(), 2048);
        for row in s.coords().rows() {
            let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "norm {norm}");
        }
    }

    #[test]
    fn min_great_circle_separation_n100() {
        let s = sample_sphere(100, 0).unwrap();
        let c = s.coords();
        let mut min_angle = f64::INFINITY;
        for i in 0..100 {
            for j in (i + 1)..100 {
                let dot: f64 = (0..3).map(|k| c[[i, k]] as f64 * c[[j, k]] as f64).sum();
                min_angle = min_angle.min(dot.clamp(-1.0, 1.0).acos());
            }
        }
        let bound = 0.9 * (4.0 * PI / 100.0).sqrt() * (PI / 4.0);
        assert!(min_angle >= bound, "{min_angle} < {bound}");
    }

    #[test]
    fn quasi_uniform_spacing() {
        for n in [16, 37, 100, 512, 1000] {
            let d = nn_distances(&sample_sphere(n, 3).unwrap());
            let max = d.iter().cloned().fold(0.0, f64::max);
            let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min > 0.0);
            assert!(max / min < 2.5, "n={n}: ratio {}", max / min);
        }
    }

    #[test]
    fn sphere_is_deterministic_and_seed_rotates() {
        let a = sample_sphere(64, 11).unwrap();
        let b = sample_sphere(64, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_sphere(64, 12).unwrap();
        assert_ne!(a.coords(), c.coords());
        // z coordinates do not depend on the seed
        assert_eq!(a.coords().column(2), c.coords().column(2));
    }

    #[test]
    fn zero_points_rejected() {
        assert!(matches!(
            sample_sphere(0, 0),
            Err(Error::InvalidArgument { .. })
        ));
        assert!(sample_cube(0, 0).is_err());
    }

    #[test]
    fn cube_points_lie_on_cube_surface() {
        let half = 1.0 / 3f32.sqrt();
        let s = sample_cube(500, 4).unwrap();
        assert_eq!(s.kind(), PriorKind::Cube);
        for row in s.coords().rows() {
            let m = row.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            assert!((m - half).abs() < 1e-6);
        }
        assert_eq!(s, sample_cube(500, 4).unwrap());
    }

    #[test]
    fn sample_code_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        let draws = 100_000 / 128 + 1;
        let mut count = 0usize;
        for _ in 0..draws {
            let z = sample_code(128, &mut rng).unwrap();
            for v in z.values() {
                sum += *v as f64;
                sq += (*v as f64).powi(2);
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = sq / count as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn sample_code_is_deterministic() {
        let a = sample_code(16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_code(16, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let one = sample_code(1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(one.dim(), 1);
        assert!(one.values()[0].is_finite());
        assert!(sample_code(0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn pack_uniform_tiles_rows() {
        let s = sample_sphere(4, 0).unwrap();
        let z = LatentCode::new(vec![0.5, -1.2]).unwrap();
        let m = pack_uniform(&s, &z);
        assert_eq!(m.codes().dim(), (4, 2));
        for row in m.codes().rows() {
            assert_eq!(row.to_vec(), vec![0.5f32, -1.2f32]);
        }
        let big = pack_uniform(
            &sample_sphere(2048, 0).unwrap(),
            &sample_code(128, &mut ChaCha8Rng::seed_from_u64(1)).unwrap(),
        );
        assert_eq!(big.codes().dim(), (2048, 128));
    }

    #[test]
    fn pack_perpoint_matches_uniform_and_checks_rows() {
        let s = sample_sphere(4, 0).unwrap();
        let z = LatentCode::new(vec![0.5, -1.2]).unwrap();
        let rows = Array2::from_shape_fn((4, 2), |(_, j)| z.values()[j]);
        assert_eq!(pack_perpoint(&s, rows).unwrap(), pack_uniform(&s, &z));

        let s2 = sample_sphere(2, 0).unwrap();
        let codes = ndarray::array![[1.0f32, 2.0], [3.0, 4.0]];
        let m = pack_perpoint(&s2, codes.clone()).unwrap();
        assert_eq!(m.codes(), &codes);

        let err = pack_perpoint(&s, Array2::zeros((3, 2))).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument { field: "codes", .. }));
    }
}
