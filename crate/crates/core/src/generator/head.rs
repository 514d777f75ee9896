use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::nn::{
    leaky_relu_backward, leaky_relu_of, max_pool_rows, max_pool_rows_backward, prefixed, Dense,
    Parameters,
};
use crate::scalar::Scalar;

/// PointNet-style coordinate regression: lift per-point features, max-pool a
/// global vector, concatenate it back onto every input row and regress
/// `tanh`-bounded coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordRegressor<T> {
    pub lift: Dense<T>,
    /// The first layer consumes `[features | global]`; the last emits 3.
    pub layers: Vec<Dense<T>>,
}

#[derive(Debug, Clone)]
pub struct HeadCache<T> {
    input: Array2<T>,
    lift_pre: Array2<T>,
    lift_argmax: Vec<usize>,
    global: Array1<T>,
    pre: Vec<Array2<T>>,
    post: Vec<Array2<T>>,
}

impl<T: Scalar> CoordRegressor<T> {
    pub fn init<R: Rng + ?Sized>(c_in: usize, global: usize, widths: &[usize], rng: &mut R) -> Self {
        let lift = Dense::init(c_in, global, rng);
        let mut layers = Vec::new();
        let mut fan_in = c_in + global;
        for &w in widths.iter().chain(std::iter::once(&3)) {
            layers.push(Dense::init(fan_in, w, rng));
            fan_in = w;
        }
        CoordRegressor { lift, layers }
    }

    pub fn zeros_like(&self) -> Self {
        CoordRegressor {
            lift: self.lift.zeros_like(),
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> CoordRegressor<U> {
        CoordRegressor {
            lift: self.lift.cast(),
            layers: self.layers.iter().map(Dense::cast).collect(),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> (Array2<T>, HeadCache<T>) {
        let c = x.ncols();
        let lift_pre = self.lift.forward(x);
        let lifted = leaky_relu_of(&lift_pre);
        let (global, lift_argmax) = max_pool_rows(lifted.view());

        let first = &self.layers[0];
        let w_local = first.weight.slice(s![..c, ..]);
        let w_global = first.weight.slice(s![c.., ..]);
        let shift = global.dot(&w_global) + first.bias.row(0);
        let mut h = x.dot(&w_local);
        h += &shift;

        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<T>> = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            if idx > 0 {
                h = layer.forward(post[idx - 1].view());
            }
            let act = if idx == last {
                h.mapv(|v| v.tanh())
            } else {
                leaky_relu_of(&h)
            };
            pre.push(h.clone());
            post.push(act);
        }
        let out = post[last].clone();
        (
            out,
            HeadCache {
                input: x.to_owned(),
                lift_pre,
                lift_argmax,
                global,
                pre,
                post,
            },
        )
    }

    pub fn backward(&self, cache: &HeadCache<T>, g: ArrayView2<'_, T>, grad: &mut CoordRegressor<T>) -> Array2<T> {
        let last = self.layers.len() - 1;
        let c = cache.input.ncols();
        let mut gh = g.to_owned();
        for idx in (0..self.layers.len()).rev() {
            if idx == last {
                gh.zip_mut_with(&cache.post[idx], |g, &y| *g = *g * (T::one() - y * y));
            } else {
                leaky_relu_backward(cache.pre[idx].view(), &mut gh);
            }
            if idx > 0 {
                gh = self.layers[idx].backward(cache.post[idx - 1].view(), gh.view(), &mut grad.layers[idx]);
            }
        }
        // first layer over [input | duplicated global]
        let first = &self.layers[0];
        let col = gh.sum_axis(Axis(0));
        {
            let gfirst = &mut grad.layers[0];
            let mut top = gfirst.weight.slice_mut(s![..c, ..]);
            top += &cache.input.t().dot(&gh);
            let outer = cache
                .global
                .view()
                .insert_axis(Axis(1))
                .dot(&col.view().insert_axis(Axis(0)));
            let mut bottom = gfirst.weight.slice_mut(s![c.., ..]);
            bottom += &outer;
            gfirst.bias += &col.view().insert_axis(Axis(0));
        }
        let mut gx = gh.dot(&first.weight.slice(s![..c, ..]).t());
        let g_global = first.weight.slice(s![c.., ..]).dot(&col);
        let mut g_lift = max_pool_rows_backward(&g_global, &cache.lift_argmax, cache.input.nrows());
        leaky_relu_backward(cache.lift_pre.view(), &mut g_lift);
        gx += &self.lift.backward(cache.input.view(), g_lift.view(), &mut grad.lift);
        gx
    }
}

impl<T> Parameters<T> for CoordRegressor<T> {
    fn named_tensors(&self) -> Vec<(String, &Array2<T>)> {
        let mut v = prefixed("lift", self.lift.named_tensors());
        for (i, l) in self.layers.iter().enumerate() {
            v.extend(prefixed(&format!("layer{i}"), l.named_tensors()));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut v = self.lift.tensors_mut();
        for l in &mut self.layers {
            v.extend(l.tensors_mut());
        }
        v
    }
}
