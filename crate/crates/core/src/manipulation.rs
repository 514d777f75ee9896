//! Editing through the fixed point correspondence: every operation works on
//! latent rows indexed by prior point, so a selection made once applies to
//! every generated shape.

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::sphere::{LatentCode, SpherePoints};

/// Sorted, duplicate-free prior point indices below `n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMask {
    n: usize,
    indices: Vec<usize>,
}

impl SelectionMask {
    /// Sorts and deduplicates `indices`; any index `>= n` is rejected.
    pub fn new(n: usize, mut indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::invalid("mask", format!("index {bad} out of range for N={n}")));
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(SelectionMask { n, indices })
    }

    pub fn empty(n: usize) -> Self {
        SelectionMask { n, indices: Vec::new() }
    }

    pub fn all(n: usize) -> Self {
        SelectionMask {
            n,
            indices: (0..n).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.n {
            return Err(Error::invalid(
                "mask",
                format!("mask is for N={}, codes have {rows} rows", self.n),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditMode {
    /// One new code shared by every selected row.
    #[default]
    Shared,
    /// An independent new code per selected row.
    PerPoint,
}

/// Replace the selected rows with `new_code`; other rows are untouched.
pub fn edit_part(codes: &Array2<f32>, mask: &SelectionMask, new_code: &LatentCode) -> Result<Array2<f32>> {
    mask.check_rows(codes.nrows())?;
    if new_code.dim() != codes.ncols() {
        return Err(Error::invalid(
            "new_code",
            format!("code has {} dims, matrix has {}", new_code.dim(), codes.ncols()),
        ));
    }
    let mut out = codes.clone();
    for &i in mask.indices() {
        out.row_mut(i).assign(&new_code.values());
    }
    Ok(out)
}

/// Resample the selected rows from the standard normal prior.
pub fn edit_part_random<R: Rng + ?Sized>(
    codes: &Array2<f32>,
    mask: &SelectionMask,
    mode: EditMode,
    rng: &mut R,
) -> Result<Array2<f32>> {
    mask.check_rows(codes.nrows())?;
    let d = codes.ncols();
    let mut draw = || -> Vec<f32> { (0..d).map(|_| StandardNormal.sample(rng)).collect() };
    match mode {
        EditMode::Shared => edit_part(codes, mask, &LatentCode::new(draw())?),
        EditMode::PerPoint => {
            let mut out = codes.clone();
            for &i in mask.indices() {
                let row = draw();
                out.row_mut(i).assign(&ndarray::ArrayView1::from(&row[..]));
            }
            Ok(out)
        }
    }
}

fn check_alpha(alpha: f64, extrapolate: bool) -> Result<()> {
    if !alpha.is_finite() || (!extrapolate && !(0.0..=1.0).contains(&alpha)) {
        return Err(Error::invalid("alpha", format!("{alpha} is outside [0, 1]")));
    }
    Ok(())
}

/// `(1-α)·a + α·b`, returning the endpoints exactly at α ∈ {0, 1}.
fn blend(a: f32, b: f32, alpha: f64) -> f32 {
    if alpha == 0.0 {
        a
    } else if alpha == 1.0 {
        b
    } else {
        ((1.0 - alpha) * a as f64 + alpha * b as f64) as f32
    }
}

pub fn interp_shape(z_a: &LatentCode, z_b: &LatentCode, alpha: f64) -> Result<LatentCode> {
    interp_shape_with(z_a, z_b, alpha, false)
}

/// As [`interp_shape`], optionally allowing α outside `[0, 1]`.
pub fn interp_shape_with(z_a: &LatentCode, z_b: &LatentCode, alpha: f64, extrapolate: bool) -> Result<LatentCode> {
    check_alpha(alpha, extrapolate)?;
    if z_a.dim() != z_b.dim() {
        return Err(Error::invalid(
            "z_b",
            format!("dimension {} differs from {}", z_b.dim(), z_a.dim()),
        ));
    }
    let v = z_a
        .values()
        .iter()
        .zip(z_b.values().iter())
        .map(|(&a, &b)| blend(a, b, alpha))
        .collect();
    LatentCode::new(v)
}

/// Blend only the selected rows; the rest are `codes_a` rows unchanged.
pub fn interp_part(codes_a: &Array2<f32>, codes_b: &Array2<f32>, mask: &SelectionMask, alpha: f64) -> Result<Array2<f32>> {
    check_alpha(alpha, false)?;
    if codes_a.dim() != codes_b.dim() {
        return Err(Error::invalid(
            "codes_b",
            format!("shape {:?} differs from {:?}", codes_b.dim(), codes_a.dim()),
        ));
    }
    mask.check_rows(codes_a.nrows())?;
    let mut out = codes_a.clone();
    for &i in mask.indices() {
        Zip::from(out.row_mut(i))
            .and(codes_b.row(i))
            .for_each(|o, &b| *o = blend(*o, b, alpha));
    }
    Ok(out)
}

/// Assemble rows from several sources by disjoint masks. Rows covered by no
/// mask come from the first source.
pub fn compose_parts(sources: &[(&Array2<f32>, &SelectionMask)]) -> Result<Array2<f32>> {
    let (first, _) = sources
        .first()
        .ok_or_else(|| Error::invalid("sources", "at least one source is required"))?;
    let n = first.nrows();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (s, (codes, mask)) in sources.iter().enumerate() {
        if codes.dim() != first.dim() {
            return Err(Error::invalid(
                "sources",
                format!("source {s} has shape {:?}, expected {:?}", codes.dim(), first.dim()),
            ));
        }
        mask.check_rows(n)?;
    }
    let mut conflict: Option<usize> = None;
    for (s, (_, mask)) in sources.iter().enumerate() {
        for &i in mask.indices() {
            if owner[i].is_some() {
                conflict = Some(conflict.map_or(i, |c| c.min(i)));
            } else {
                owner[i] = Some(s);
            }
        }
    }
    if let Some(index) = conflict {
        return Err(Error::OverlappingMasks { index });
    }
    let mut out = (*first).clone();
    for (i, o) in owner.iter().enumerate() {
        if let Some(s) = *o {
            out.row_mut(i).assign(&sources[s].0.row(i));
        }
    }
    Ok(out)
}

/// Copy labels from `labeled` onto every target by point index.
pub fn transfer_labels(labeled: &PointCloud, targets: &[PointCloud]) -> Result<Vec<PointCloud>> {
    let labels = labeled
        .labels()
        .ok_or_else(|| Error::invalid("labeled", "source cloud carries no labels"))?;
    targets
        .iter()
        .enumerate()
        .map(|(t, target)| {
            if target.len() != labeled.len() {
                return Err(Error::invalid(
                    "targets",
                    format!("target {t} has {} points, source has {}", target.len(), labeled.len()),
                ));
            }
            target.clone().with_labels(labels.to_vec())
        })
        .collect()
}

/// RGB per prior point: `coord * 0.5 + 0.5`.
pub fn correspondence_colors(sphere: &SpherePoints) -> Array2<f32> {
    sphere.coords().mapv(|v| v * 0.5 + 0.5)
}
