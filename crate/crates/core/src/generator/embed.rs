use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::nn::{leaky_relu_backward, leaky_relu_of, prefixed, Dense, Parameters};
use crate::scalar::Scalar;

/// Two-layer shared perceptron from `(sphere coordinate, latent code)` rows
/// to the style feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEmbed<T> {
    pub first: Dense<T>,
    pub second: Dense<T>,
}

#[derive(Debug, Clone)]
pub struct EmbedCache<T> {
    input: Array2<T>,
    first_pre: Array2<T>,
    first: Array2<T>,
    second_pre: Array2<T>,
}

impl<T: Scalar> FeatureEmbed<T> {
    pub fn init<R: Rng + ?Sized>(latent_dim: usize, hidden: usize, width: usize, rng: &mut R) -> Self {
        FeatureEmbed {
            first: Dense::init(3 + latent_dim, hidden, rng),
            second: Dense::init(hidden, width, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        FeatureEmbed {
            first: self.first.zeros_like(),
            second: self.second.zeros_like(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> FeatureEmbed<U> {
        FeatureEmbed {
            first: self.first.cast(),
            second: self.second.cast(),
        }
    }

    pub fn forward(&self, sphere: ArrayView2<'_, T>, codes: ArrayView2<'_, T>) -> (Array2<T>, EmbedCache<T>) {
        let input = concatenate(Axis(1), &[sphere, codes]).expect("matching row counts");
        let first_pre = self.first.forward(input.view());
        let first = leaky_relu_of(&first_pre);
        let second_pre = self.second.forward(first.view());
        let out = leaky_relu_of(&second_pre);
        (
            out,
            EmbedCache {
                input,
                first_pre,
                first,
                second_pre,
            },
        )
    }

    /// Returns the gradient with respect to the code rows.
    pub fn backward(&self, cache: &EmbedCache<T>, g: ArrayView2<'_, T>, grad: &mut FeatureEmbed<T>) -> Array2<T> {
        let mut g2 = g.to_owned();
        leaky_relu_backward(cache.second_pre.view(), &mut g2);
        let mut g1 = self.second.backward(cache.first.view(), g2.view(), &mut grad.second);
        leaky_relu_backward(cache.first_pre.view(), &mut g1);
        let g_in = self.first.backward(cache.input.view(), g1.view(), &mut grad.first);
        g_in.slice(s![.., 3..]).to_owned()
    }
}

impl<T> Parameters<T> for FeatureEmbed<T> {
    fn named_tensors(&self) -> Vec<(String, &Array2<T>)> {
        let mut v = prefixed("first", self.first.named_tensors());
        v.extend(prefixed("second", self.second.named_tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut v = self.first.tensors_mut();
        v.extend(self.second.tensors_mut());
        v
    }
}

/// Single affine layer emitting `2C` channels per point, split into the
/// AdaIN scale (first half) and bias (second half).
#[derive(Debug, Clone, PartialEq)]
pub struct StyleEmbed<T> {
    pub layer: Dense<T>,
}

impl<T: Scalar> StyleEmbed<T> {
    /// The scale half starts around one so the first AdaIN passes features
    /// through at unit gain.
    pub fn init<R: Rng + ?Sized>(fe_width: usize, target_width: usize, rng: &mut R) -> Self {
        let mut layer = Dense::init(fe_width, 2 * target_width, rng);
        for j in 0..target_width {
            layer.bias[[0, j]] = T::one();
            layer.bias[[0, target_width + j]] = T::zero();
        }
        StyleEmbed { layer }
    }

    pub fn zeros_like(&self) -> Self {
        StyleEmbed {
            layer: self.layer.zeros_like(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> StyleEmbed<U> {
        StyleEmbed {
            layer: self.layer.cast(),
        }
    }

    pub fn target_width(&self) -> usize {
        self.layer.fan_out() / 2
    }

    /// Returns `(scale, bias)`, each `N x C`.
    pub fn forward(&self, fe: ArrayView2<'_, T>) -> (Array2<T>, Array2<T>) {
        let y = self.layer.forward(fe);
        let c = self.target_width();
        (y.slice(s![.., ..c]).to_owned(), y.slice(s![.., c..]).to_owned())
    }

    pub fn backward(
        &self,
        fe: ArrayView2<'_, T>,
        g_scale: ArrayView2<'_, T>,
        g_bias: ArrayView2<'_, T>,
        grad: &mut StyleEmbed<T>,
    ) -> Array2<T> {
        let g = concatenate(Axis(1), &[g_scale, g_bias]).expect("matching row counts");
        self.layer.backward(fe, g.view(), &mut grad.layer)
    }
}

impl<T> Parameters<T> for StyleEmbed<T> {
    fn named_tensors(&self) -> Vec<(String, &Array2<T>)> {
        self.layer.named_tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        self.layer.tensors_mut()
    }
}
