//! Set-level generation metrics and nearest-shape retrieval.

mod features;

pub use features::{class_of, ExtractorConfig, ExtractorKind, FeatureExtractor};

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::ShapeRepository;
use crate::error::{Error, Result};
use crate::geometry::{chamfer, PointCloud, CHAMFER_CONVENTION};

pub const DEFAULT_RETRIEVAL_K: usize = 5;
/// Added to both covariances before the matrix square root.
pub const FPD_RIDGE: f64 = 1e-6;
/// Displayed MMD is the raw value times this.
pub const MMD_DISPLAY_SCALE: f64 = 1e3;

fn non_empty(name: &'static str, set: &[PointCloud]) -> Result<()> {
    if set.is_empty() {
        return Err(Error::invalid(name, "set must not be empty"));
    }
    Ok(())
}

/// `d[i][j] = chamfer(gen[i], reference[j])`.
pub fn chamfer_matrix(gen: &[PointCloud], reference: &[PointCloud]) -> Result<Array2<f64>> {
    let mut d = Array2::zeros((gen.len(), reference.len()));
    for (i, g) in gen.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            d[[i, j]] = chamfer(g, r)?;
        }
    }
    Ok(d)
}

fn mmd_from(d: &Array2<f64>) -> f64 {
    let total: f64 = d
        .columns()
        .into_iter()
        .map(|col| col.iter().cloned().fold(f64::INFINITY, f64::min))
        .sum();
    total / d.ncols() as f64
}

fn cov_from(d: &Array2<f64>) -> f64 {
    let mut matched = vec![false; d.ncols()];
    for row in d.rows() {
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v < row[best] {
                best = j;
            }
        }
        matched[best] = true;
    }
    matched.iter().filter(|&&m| m).count() as f64 / d.ncols() as f64
}

/// Mean over reference shapes of the Chamfer distance to the closest
/// generated shape.
pub fn mmd(gen: &[PointCloud], reference: &[PointCloud]) -> Result<f64> {
    non_empty("gen", gen)?;
    non_empty("reference", reference)?;
    Ok(mmd_from(&chamfer_matrix(gen, reference)?))
}

/// Fraction of reference shapes that are the nearest neighbour of at least
/// one generated shape. Ties go to the lower reference index.
pub fn cov(gen: &[PointCloud], reference: &[PointCloud]) -> Result<f64> {
    non_empty("gen", gen)?;
    non_empty("reference", reference)?;
    Ok(cov_from(&chamfer_matrix(gen, reference)?))
}

fn gaussian_fit(x: &Array2<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, d) = x.dim();
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = DMatrix::from_fn(n, d, |i, j| x[[i, j]] - mean[j]);
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    for k in 0..d {
        cov[(k, k)] += FPD_RIDGE;
    }
    (DMatrix::from_fn(d, 1, |j, _| mean[j]), cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two feature matrices (rows are
/// samples): `|μa-μb|² + Tr(Σa + Σb - 2 (Σa^½ Σb Σa^½)^½)`, clamped at 0.
pub fn frechet_distance(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.nrows() < 2 || b.nrows() < 2 {
        return Err(Error::invalid("features", "each set needs at least 2 samples"));
    }
    if a.ncols() != b.ncols() || a.ncols() == 0 {
        return Err(Error::invalid(
            "features",
            format!("feature widths {} and {} must match and be non-zero", a.ncols(), b.ncols()),
        ));
    }
    let (mu_a, cov_a) = gaussian_fit(a);
    let (mu_b, cov_b) = gaussian_fit(b);
    let diff = (&mu_a - &mu_b).norm_squared();
    let sa = sym_sqrt(&cov_a);
    let inner = sym_sqrt(&(&sa * &cov_b * &sa));
    let value = diff + cov_a.trace() + cov_b.trace() - 2.0 * inner.trace();
    Ok(value.max(0.0))
}

pub fn fpd(gen: &[PointCloud], reference: &[PointCloud], fx: &FeatureExtractor) -> Result<f64> {
    frechet_distance(&fx.feature_matrix(gen)?, &fx.feature_matrix(reference)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub id: String,
    pub distance: f64,
}

/// The `k` repository shapes closest to `query` by Chamfer distance,
/// ascending, ties broken by id.
pub fn retrieve_nearest(query: &PointCloud, repo: &ShapeRepository, k: usize) -> Result<Vec<RetrievalHit>> {
    if k == 0 || k > repo.len() {
        return Err(Error::invalid("k", format!("must be in 1..={}, got {k}", repo.len())));
    }
    let mut hits = repo
        .entries()
        .iter()
        .map(|e| {
            Ok(RetrievalHit {
                id: e.id.clone(),
                distance: chamfer(query, &e.cloud)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    hits.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    hits.truncate(k);
    Ok(hits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mmd,
    Cov,
    Fpd,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mmd, Metric::Cov, Metric::Fpd];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mmd" => Ok(Metric::Mmd),
            "cov" => Ok(Metric::Cov),
            "fpd" => Ok(Metric::Fpd),
            other => Err(Error::invalid("metrics", format!("unknown metric `{other}`"))),
        }
    }

    /// Comma-separated list such as `mmd,cov`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let m = Metric::parse(part)?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::invalid("metrics", "no metric requested"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Raw MMD in squared-Chamfer units.
    pub mmd: Option<f64>,
    /// `mmd * 1e3`, the unit used in result tables.
    pub mmd_e3: Option<f64>,
    pub cov: Option<f64>,
    pub fpd: Option<f64>,
    pub gen_size: usize,
    pub ref_size: usize,
    pub distance_convention: String,
    pub extractor_hash: Option<String>,
    pub extractor_kind: Option<ExtractorKind>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    /// Header for [`MetricsReport::table_row`].
    pub const TABLE_HEADER: &'static str = "gen_size,ref_size,mmd_e3,cov_pct,fpd,extractor_hash";

    /// One CSV row; missing metrics are left blank.
    pub fn table_row(&self) -> String {
        let f = |v: Option<f64>, scale: f64| v.map(|x| format!("{:.4}", x * scale)).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.gen_size,
            self.ref_size,
            f(self.mmd, MMD_DISPLAY_SCALE),
            f(self.cov, 100.0),
            f(self.fpd, 1.0),
            self.extractor_hash.as_deref().unwrap_or("")
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sets: gen={} ref={}", self.gen_size, self.ref_size)?;
        if let (Some(raw), Some(e3)) = (self.mmd, self.mmd_e3) {
            writeln!(f, "mmd: {e3:.4} x1e-3 (raw {raw:.6e})")?;
        }
        if let Some(c) = self.cov {
            writeln!(f, "cov: {:.2}%", c * 100.0)?;
        }
        if let Some(v) = self.fpd {
            writeln!(f, "fpd: {v:.4}")?;
        }
        write!(f, "convention: {}", self.distance_convention)?;
        if let Some(h) = &self.extractor_hash {
            write!(f, "\nextractor: {h}")?;
        }
        Ok(())
    }
}

/// Compute the requested metrics. `fx` is required when FPD is requested.
pub fn evaluate(
    gen: &[PointCloud],
    reference: &[PointCloud],
    metrics: &[Metric],
    fx: Option<&FeatureExtractor>,
) -> Result<MetricsReport> {
    non_empty("gen", gen)?;
    non_empty("reference", reference)?;
    let wants = |m| metrics.contains(&m);
    let d = if wants(Metric::Mmd) || wants(Metric::Cov) {
        Some(chamfer_matrix(gen, reference)?)
    } else {
        None
    };
    let mmd = d.as_ref().filter(|_| wants(Metric::Mmd)).map(mmd_from);
    let cov = d.as_ref().filter(|_| wants(Metric::Cov)).map(cov_from);
    let (fpd_value, fx_used) = if wants(Metric::Fpd) {
        let fx = fx.ok_or_else(|| Error::invalid("extractor", "fpd needs a feature extractor"))?;
        (Some(fpd(gen, reference, fx)?), Some(fx))
    } else {
        (None, None)
    };
    Ok(MetricsReport {
        mmd,
        mmd_e3: mmd.map(|v| v * MMD_DISPLAY_SCALE),
        cov,
        fpd: fpd_value,
        gen_size: gen.len(),
        ref_size: reference.len(),
        distance_convention: CHAMFER_CONVENTION.to_string(),
        extractor_hash: fx_used.map(|f| f.hash().to_string()),
        extractor_kind: fx_used.map(|f| f.kind().clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_toy_repository, RepoEntry, ToyFamily};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_clouds(count: usize, n: usize, seed: u64) -> Vec<PointCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| PointCloud::new(Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0f32..1.0))).unwrap())
            .collect()
    }

    #[test]
    fn self_match_and_singletons() {
        let x = random_clouds(5, 32, 0);
        assert_eq!(mmd(&x, &x).unwrap(), 0.0);
        assert_eq!(cov(&x, &x).unwrap(), 1.0);
        let a = random_clouds(1, 16, 1);
        let b = random_clouds(1, 16, 2);
        assert_eq!(mmd(&b, &a).unwrap(), chamfer(&a[0], &b[0]).unwrap());
        assert_eq!(cov(&x[..1], &x[1..]).unwrap(), 0.25);
        assert!(mmd(&[], &x).is_err());
        assert!(cov(&x, &[]).is_err());
    }

    #[test]
    fn order_invariance() {
        let g = random_clouds(4, 24, 3);
        let r = random_clouds(5, 24, 4);
        let mut g2 = g.clone();
        g2.reverse();
        let mut r2 = r.clone();
        r2.rotate_left(2);
        assert!((mmd(&g, &r).unwrap() - mmd(&g2, &r2).unwrap()).abs() < 1e-12);
        assert_eq!(cov(&g, &r).unwrap(), cov(&g2, &r2).unwrap());
    }

    #[test]
    fn frechet_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((200, 4), |_| StandardNormal.sample(&mut rng));
        assert!(frechet_distance(&x, &x).unwrap() <= 1e-6);
        let shifted = x.mapv(|v: f64| v + 1.0);
        assert!((frechet_distance(&x, &shifted).unwrap() - 4.0).abs() < 1e-6);
        assert!(frechet_distance(&x.slice(ndarray::s![..1, ..]).to_owned(), &x).is_err());
        let narrow = x.slice(ndarray::s![.., ..2]).to_owned();
        assert!(frechet_distance(&x, &narrow).is_err());
    }

    #[test]
    fn frechet_scaled_covariance_closed_form() {
        // N(0, I) vs N(0, 4I) in 2-D: Tr(I + 4I - 2*2I) = 2.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Array2::from_shape_fn((20_000, 2), |_| StandardNormal.sample(&mut rng));
        let b = Array2::from_shape_fn((20_000, 2), |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            2.0 * v
        });
        assert!((frechet_distance(&a, &b).unwrap() - 2.0).abs() < 0.1);
    }

    #[test]
    fn retrieval_orders_and_validates() {
        let repo = make_toy_repository(&ToyFamily::ALL, 6, 64, 0).unwrap();
        let q = &repo.entries()[3].cloud;
        let hits = retrieve_nearest(q, &repo, DEFAULT_RETRIEVAL_K).unwrap();
        assert_eq!(hits.len(), 5);
        assert_eq!(hits[0].id, repo.entries()[3].id);
        assert_eq!(hits[0].distance, 0.0);
        assert!(hits.windows(2).all(|w| w[0].distance <= w[1].distance));
        assert!(retrieve_nearest(q, &repo, 7).is_err());
        assert!(retrieve_nearest(q, &repo, 0).is_err());
    }

    #[test]
    fn retrieval_ties_break_by_id() {
        let cloud = random_clouds(1, 8, 5).remove(0);
        let entries = ["b", "a", "c"]
            .iter()
            .map(|id| RepoEntry {
                id: id.to_string(),
                cloud: cloud.clone(),
                source: None,
                seed: 0,
            })
            .collect();
        let repo = ShapeRepository::new("t", entries).unwrap();
        let ids: Vec<String> = retrieve_nearest(&cloud, &repo, 3).unwrap().into_iter().map(|h| h.id).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
    }

    #[test]
    fn report_contents() {
        let x = random_clouds(4, 16, 6);
        let y = random_clouds(3, 16, 7);
        let fx = FeatureExtractor::random(&ExtractorConfig::default()).unwrap();
        let r = evaluate(&x, &y, &Metric::ALL, Some(&fx)).unwrap();
        assert_eq!((r.gen_size, r.ref_size), (4, 3));
        assert_eq!(r.mmd_e3.unwrap(), r.mmd.unwrap() * 1e3);
        assert_eq!(r.extractor_hash.as_deref(), Some(fx.hash()));
        assert!(r.fpd.unwrap() >= 0.0);
        let json = r.to_json();
        assert!(json.contains("distance_convention") && json.contains(CHAMFER_CONVENTION));
        assert_eq!(r.table_row().split(',').count(), MetricsReport::TABLE_HEADER.split(',').count());
        let partial = evaluate(&x, &y, &[Metric::Cov], None).unwrap();
        assert!(partial.mmd.is_none() && partial.fpd.is_none() && partial.cov.is_some());
        assert!(evaluate(&x, &y, &[Metric::Fpd], None).is_err());
    }

    #[test]
    fn metric_lists() {
        assert_eq!(Metric::parse_list("mmd, COV,mmd").unwrap(), vec![Metric::Mmd, Metric::Cov]);
        assert!(Metric::parse_list("emd").is_err());
        assert!(Metric::parse_list("").is_err());
    }
}
