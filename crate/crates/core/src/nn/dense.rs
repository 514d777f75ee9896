use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::Parameters;
use crate::scalar::Scalar;

/// Row-wise affine map `x W + b`, i.e. a shared per-point perceptron layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `in x out`
    pub weight: Array2<T>,
    /// `1 x out`
    pub bias: Array2<T>,
}

impl<T: Scalar> Dense<T> {
    /// Uniform init in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Dense {
            weight: Array2::from_shape_fn((fan_in, fan_out), |_| {
                T::of(rng.random_range(-bound..bound))
            }),
            bias: Array2::from_shape_fn((1, fan_out), |_| T::of(rng.random_range(-bound..bound))),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array2::zeros((1, fan_out)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Dense::zeros(self.fan_in(), self.fan_out())
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn cast<U: Scalar>(&self) -> Dense<U> {
        Dense {
            weight: self.weight.mapv(|v| U::of(v.as_f64())),
            bias: self.bias.mapv(|v| U::of(v.as_f64())),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to `x`.
    pub fn backward(&self, x: ArrayView2<'_, T>, g: ArrayView2<'_, T>, grad: &mut Dense<T>) -> Array2<T> {
        self.backward_params(x, g, grad);
        g.dot(&self.weight.t())
    }

    pub fn backward_params(&self, x: ArrayView2<'_, T>, g: ArrayView2<'_, T>, grad: &mut Dense<T>) {
        grad.weight += &x.t().dot(&g);
        grad.bias += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
}

impl<T> Parameters<T> for Dense<T> {
    fn named_tensors(&self) -> Vec<(String, &Array2<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Channel-wise max over rows. Returns the pooled vector and, per channel,
/// the winning row (first on ties).
pub fn max_pool_rows<T: Scalar>(x: ArrayView2<'_, T>) -> (Array1<T>, Vec<usize>) {
    let c = x.ncols();
    let mut best = Array1::from_elem(c, T::neg_infinity());
    let mut arg = vec![0usize; c];
    for (i, row) in x.rows().into_iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = i;
            }
        }
    }
    (best, arg)
}

pub fn max_pool_rows_backward<T: Scalar>(g: &Array1<T>, arg: &[usize], rows: usize) -> Array2<T> {
    let mut out = Array2::zeros((rows, g.len()));
    for (j, &i) in arg.iter().enumerate() {
        out[[i, j]] = out[[i, j]] + g[j];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradients, GradCheck};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Dense::<f64>::init(5, 4, &mut rng);
        let x = Array2::from_shape_fn((7, 5), |_| rng.random_range(-1.0..1.0));
        let r = Array2::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0));
        let report = check_gradients(
            &layer,
            &x,
            |p: &Dense<f64>, x: &Array2<f64>| (p.forward(x.view()) * &r).sum(),
            |p: &Dense<f64>, x: &Array2<f64>, grad: &mut Dense<f64>| p.backward(x.view(), r.view(), grad),
        );
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        let _: &GradCheck = &report;
    }

    #[test]
    fn max_pool_routes_to_argmax() {
        let x = ndarray::array![[1.0f64, 5.0], [3.0, 2.0], [3.0, 7.0]];
        let (m, arg) = max_pool_rows(x.view());
        assert_eq!(m.to_vec(), vec![3.0, 7.0]);
        assert_eq!(arg, vec![1, 2]);
        let g = max_pool_rows_backward(&ndarray::array![1.0, 2.0], &arg, 3);
        assert_eq!(g, ndarray::array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]]);
    }
}
