//! Layers with explicit forward/backward passes.
//!
//! Every layer is generic over [`Scalar`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference checks. Parameter gradients
//! are accumulated into a value of the layer's own type.

mod adain;
mod adam;
mod dense;
pub mod gradcheck;
mod graph_attention;

pub use adain::{adain, adain_backward, AdainCache, ADAIN_EPS};
pub use adam::{Adam, AdamConfig};
pub use dense::{max_pool_rows, max_pool_rows_backward, Dense};
pub use graph_attention::{Attention, GamCache, GraphAttention};

use ndarray::{Array2, ArrayView2, Zip};

use crate::scalar::{Scalar, LEAKY_SLOPE};

/// Ordered access to the learnable tensors of a network. The order is stable
/// and shared between a parameter set and its gradient accumulator.
pub trait Parameters<T> {
    fn named_tensors(&self) -> Vec<(String, &Array2<T>)>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>>;

    fn zero(&mut self)
    where
        T: Scalar,
    {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

pub(crate) fn prefixed<'a, T>(
    prefix: &str,
    items: Vec<(String, &'a Array2<T>)>,
) -> Vec<(String, &'a Array2<T>)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

pub fn leaky_relu<T: Scalar>(x: &mut Array2<T>) {
    let slope = T::of(LEAKY_SLOPE);
    x.mapv_inplace(|v| if v > T::zero() { v } else { v * slope });
}

pub fn leaky_relu_of<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let mut y = x.clone();
    leaky_relu(&mut y);
    y
}

/// Gradient through a LeakyReLU given its pre-activation input.
pub fn leaky_relu_backward<T: Scalar>(pre: ArrayView2<'_, T>, grad: &mut Array2<T>) {
    let slope = T::of(LEAKY_SLOPE);
    Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= T::zero() {
            *g = *g * slope;
        }
    });
}
