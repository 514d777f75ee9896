use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Added to the per-point standard deviation before dividing.
pub const ADAIN_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdainCache<T> {
    /// normalized features
    xhat: Array2<T>,
    /// per-row population std
    std: Array1<T>,
}

impl<T> AdainCache<T> {
    pub fn normalized(&self) -> &Array2<T> {
        &self.xhat
    }
}

/// Adaptive instance normalization with statistics taken per point over the
/// channel axis: `scale(i) * (x(i) - mean(x(i))) / (std(x(i)) + eps) + bias(i)`.
pub fn adain<T: Scalar>(
    x: ArrayView2<'_, T>,
    scale: ArrayView2<'_, T>,
    bias: ArrayView2<'_, T>,
) -> Result<(Array2<T>, AdainCache<T>)> {
    if scale.dim() != x.dim() || bias.dim() != x.dim() {
        return Err(Error::invalid(
            "style",
            format!(
                "style shapes {:?}/{:?} must match features {:?}",
                scale.dim(),
                bias.dim(),
                x.dim()
            ),
        ));
    }
    let (n, c) = x.dim();
    let eps = T::of(ADAIN_EPS);
    let inv_c = T::one() / T::of(c as f64);
    let mut xhat = Array2::zeros((n, c));
    let mut std = Array1::zeros(n);
    let mut out = Array2::zeros((n, c));
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_c;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_c;
        let s = var.sqrt();
        std[i] = s;
        let inv = T::one() / (s + eps);
        for j in 0..c {
            let h = (row[j] - mean) * inv;
            xhat[[i, j]] = h;
            out[[i, j]] = scale[[i, j]] * h + bias[[i, j]];
        }
    }
    Ok((out, AdainCache { xhat, std }))
}

/// Returns `(d_x, d_scale, d_bias)` for upstream gradient `g`.
pub fn adain_backward<T: Scalar>(
    cache: &AdainCache<T>,
    scale: ArrayView2<'_, T>,
    g: ArrayView2<'_, T>,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let (n, c) = g.dim();
    let eps = T::of(ADAIN_EPS);
    let inv_c = T::one() / T::of(c as f64);
    let g_scale = &g * &cache.xhat;
    let g_bias = g.to_owned();
    let mut g_x = Array2::zeros((n, c));
    for i in 0..n {
        let s = cache.std[i];
        let inv = T::one() / (s + eps);
        let mut mean_gh = T::zero();
        let mut mean_ghx = T::zero();
        for j in 0..c {
            let gh = g[[i, j]] * scale[[i, j]];
            mean_gh = mean_gh + gh;
            mean_ghx = mean_ghx + gh * cache.xhat[[i, j]];
        }
        mean_gh = mean_gh * inv_c;
        mean_ghx = mean_ghx * inv_c;
        // the std term vanishes for constant rows, where xhat is identically 0
        let std_term = if s > T::zero() { mean_ghx / s } else { T::zero() };
        for j in 0..c {
            let gh = g[[i, j]] * scale[[i, j]];
            g_x[[i, j]] = (gh - mean_gh) * inv - cache.xhat[[i, j]] * std_term;
        }
    }
    (g_x, g_scale, g_bias)
}
