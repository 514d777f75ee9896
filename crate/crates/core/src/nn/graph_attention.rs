//! Graph attention module: an EdgeConv-style neighborhood convolution whose
//! per-edge features are reweighted by regressed attention weights and then
//! aggregated with a learned linear combination over the neighbor axis.
//!
//! Edges are laid out row-major as `e = i * K + k`, where `k` is the
//! neighbor's rank in the kNN graph of point `i`.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{leaky_relu_backward, leaky_relu_of, prefixed, Dense, Parameters};
use crate::error::{Error, Result};
use crate::geometry::{knn, NeighborGraph};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    /// edge feature `(x_i, x_j - x_i)` to hidden
    pub hidden: Dense<T>,
    /// hidden to per-channel logits
    pub logits: Dense<T>,
    /// `K x C_out` weights of the 1xK aggregation
    pub aggregate: Array2<T>,
    /// `1 x C_out`
    pub aggregate_bias: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphAttention<T> {
    pub k: usize,
    /// edge feature `(x_i, x_j - x_i)` to hidden
    pub hidden: Dense<T>,
    /// hidden to `C_out`
    pub output: Dense<T>,
    /// `None` falls back to plain EdgeConv (max over neighbors).
    pub attention: Option<Attention<T>>,
}

#[derive(Debug, Clone)]
struct AttentionCache<T> {
    hidden_pre: Array2<T>,
    hidden: Array2<T>,
    weights: Array2<T>,
    out_pre: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct GamCache<T> {
    graph: NeighborGraph,
    hidden_pre: Array2<T>,
    hidden: Array2<T>,
    edge_pre: Array2<T>,
    edge: Array2<T>,
    attention: Option<AttentionCache<T>>,
    argmax: Vec<usize>,
}

impl<T> GamCache<T> {
    pub fn graph(&self) -> &NeighborGraph {
        &self.graph
    }

    /// Softmax-normalized attention weights, `(N*K) x C_out`.
    pub fn attention_weights(&self) -> Option<&Array2<T>> {
        self.attention.as_ref().map(|a| &a.weights)
    }
}

/// First edge layer without materializing edge features:
/// `[x_i, x_j - x_i] W + b = x_i (W_a - W_b) + b + x_j W_b`.
fn edge_layer<T: Scalar>(dense: &Dense<T>, x: ArrayView2<'_, T>, graph: &NeighborGraph) -> Array2<T> {
    let c = x.ncols();
    let wa = dense.weight.slice(s![..c, ..]);
    let wb = dense.weight.slice(s![c.., ..]);
    let center = &wa - &wb;
    let mut p = x.dot(&center);
    p += &dense.bias;
    let q = x.dot(&wb);
    let (n, k, h) = (x.nrows(), graph.k(), dense.fan_out());
    let mut out = Array2::zeros((n * k, h));
    {
        let dst = out.as_slice_mut().expect("standard layout");
        let ps = p.as_slice().expect("standard layout");
        let qs = q.as_slice().expect("standard layout");
        for i in 0..n {
            let pi = &ps[i * h..(i + 1) * h];
            for (kk, &j) in graph.row(i).iter().enumerate() {
                let qj = &qs[j * h..(j + 1) * h];
                let e = i * k + kk;
                for ((d, &a), &b) in dst[e * h..(e + 1) * h].iter_mut().zip(pi).zip(qj) {
                    *d = a + b;
                }
            }
        }
    }
    out
}

fn edge_layer_backward<T: Scalar>(
    dense: &Dense<T>,
    x: ArrayView2<'_, T>,
    graph: &NeighborGraph,
    g: &Array2<T>,
    grad: &mut Dense<T>,
) -> Array2<T> {
    let c = x.ncols();
    let (n, k, h) = (x.nrows(), graph.k(), dense.fan_out());
    let mut gp = Array2::<T>::zeros((n, h));
    let mut gq = Array2::<T>::zeros((n, h));
    {
        let gs = g.as_slice().expect("standard layout");
        let gps = gp.as_slice_mut().expect("standard layout");
        let gqs = gq.as_slice_mut().expect("standard layout");
        for i in 0..n {
            for (kk, &j) in graph.row(i).iter().enumerate() {
                let e = i * k + kk;
                let ge = &gs[e * h..(e + 1) * h];
                for (d, &v) in gps[i * h..(i + 1) * h].iter_mut().zip(ge) {
                    *d = *d + v;
                }
                for (d, &v) in gqs[j * h..(j + 1) * h].iter_mut().zip(ge) {
                    *d = *d + v;
                }
            }
        }
    }
    let wa = dense.weight.slice(s![..c, ..]);
    let wb = dense.weight.slice(s![c.., ..]);
    let center = &wa - &wb;
    let g_center = x.t().dot(&gp);
    let g_neighbor = x.t().dot(&gq);
    {
        let mut top = grad.weight.slice_mut(s![..c, ..]);
        top += &g_center;
    }
    {
        let mut bottom = grad.weight.slice_mut(s![c.., ..]);
        bottom += &(&g_neighbor - &g_center);
    }
    grad.bias += &gp.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut gx = gp.dot(&center.t());
    gx += &gq.dot(&wb.t());
    gx
}

impl<T: Scalar> GraphAttention<T> {
    pub fn init<R: Rng + ?Sized>(
        c_in: usize,
        hidden: usize,
        c_out: usize,
        k: usize,
        use_attention: bool,
        rng: &mut R,
    ) -> Self {
        let hidden_layer = Dense::init(2 * c_in, hidden, rng);
        let output = Dense::init(hidden, c_out, rng);
        let attention = use_attention.then(|| Attention {
            hidden: Dense::init(2 * c_in, hidden, rng),
            logits: Dense::init(hidden, c_out, rng),
            aggregate: Array2::from_shape_fn((k, c_out), |_| T::of(1.0 + rng.random_range(-0.1..0.1))),
            aggregate_bias: Array2::zeros((1, c_out)),
        });
        GraphAttention {
            k,
            hidden: hidden_layer,
            output,
            attention,
        }
    }

    pub fn zeros_like(&self) -> Self {
        GraphAttention {
            k: self.k,
            hidden: self.hidden.zeros_like(),
            output: self.output.zeros_like(),
            attention: self.attention.as_ref().map(|a| Attention {
                hidden: a.hidden.zeros_like(),
                logits: a.logits.zeros_like(),
                aggregate: Array2::zeros(a.aggregate.dim()),
                aggregate_bias: Array2::zeros(a.aggregate_bias.dim()),
            }),
        }
    }

    pub fn cast<U: Scalar>(&self) -> GraphAttention<U> {
        GraphAttention {
            k: self.k,
            hidden: self.hidden.cast(),
            output: self.output.cast(),
            attention: self.attention.as_ref().map(|a| Attention {
                hidden: a.hidden.cast(),
                logits: a.logits.cast(),
                aggregate: a.aggregate.mapv(|v| U::of(v.as_f64())),
                aggregate_bias: a.aggregate_bias.mapv(|v| U::of(v.as_f64())),
            }),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.hidden.fan_in() / 2
    }

    pub fn out_channels(&self) -> usize {
        self.output.fan_out()
    }

    /// Build the kNN graph in the input feature space, then run the module.
    pub fn forward_knn(&self, x: ArrayView2<'_, T>) -> Result<(Array2<T>, GamCache<T>)> {
        let graph = knn(x, self.k)?;
        self.forward(x, graph)
    }

    pub fn forward(&self, x: ArrayView2<'_, T>, graph: NeighborGraph) -> Result<(Array2<T>, GamCache<T>)> {
        let n = x.nrows();
        if x.ncols() != self.in_channels() {
            return Err(Error::invalid(
                "features",
                format!("expected {} channels, got {}", self.in_channels(), x.ncols()),
            ));
        }
        if graph.len() != n || graph.k() != self.k {
            return Err(Error::invalid(
                "graph",
                format!(
                    "graph is {}x{}, module expects {}x{}",
                    graph.len(),
                    graph.k(),
                    n,
                    self.k
                ),
            ));
        }
        let k = self.k;
        let c = self.out_channels();

        let hidden_pre = edge_layer(&self.hidden, x, &graph);
        let hidden = leaky_relu_of(&hidden_pre);
        let edge_pre = self.output.forward(hidden.view());
        let edge = leaky_relu_of(&edge_pre);

        let mut out = Array2::<T>::zeros((n, c));
        let mut argmax = Vec::new();
        let attention = match &self.attention {
            Some(att) => {
                let a_pre = edge_layer(&att.hidden, x, &graph);
                let a_hidden = leaky_relu_of(&a_pre);
                let mut weights = att.logits.forward(a_hidden.view());
                softmax_over_neighbors(&mut weights, n, k);
                let mut out_pre = att.aggregate_bias.broadcast((n, c)).expect("bias row").to_owned();
                for i in 0..n {
                    for kk in 0..k {
                        let e = i * k + kk;
                        for ch in 0..c {
                            out_pre[[i, ch]] = out_pre[[i, ch]]
                                + att.aggregate[[kk, ch]] * weights[[e, ch]] * edge[[e, ch]];
                        }
                    }
                }
                out = leaky_relu_of(&out_pre);
                Some(AttentionCache {
                    hidden_pre: a_pre,
                    hidden: a_hidden,
                    weights,
                    out_pre,
                })
            }
            None => {
                argmax = vec![0usize; n * c];
                for i in 0..n {
                    for ch in 0..c {
                        let mut best = edge[[i * k, ch]];
                        let mut arg = 0;
                        for kk in 1..k {
                            let v = edge[[i * k + kk, ch]];
                            if v > best {
                                best = v;
                                arg = kk;
                            }
                        }
                        out[[i, ch]] = best;
                        argmax[i * c + ch] = arg;
                    }
                }
                None
            }
        };
        Ok((
            out,
            GamCache {
                graph,
                hidden_pre,
                hidden,
                edge_pre,
                edge,
                attention,
                argmax,
            },
        ))
    }

    /// Accumulate parameter gradients and return `d/dx`. The neighbor graph
    /// is treated as a constant.
    pub fn backward(
        &self,
        x: ArrayView2<'_, T>,
        cache: &GamCache<T>,
        g: ArrayView2<'_, T>,
        grad: &mut GraphAttention<T>,
    ) -> Array2<T> {
        let n = x.nrows();
        let k = self.k;
        let c = self.out_channels();
        let mut g_edge = Array2::<T>::zeros((n * k, c));
        let mut gx = Array2::<T>::zeros(x.dim());

        match (&self.attention, &cache.attention, &mut grad.attention) {
            (Some(att), Some(ac), Some(att_grad)) => {
                let mut g_pre = g.to_owned();
                leaky_relu_backward(ac.out_pre.view(), &mut g_pre);
                att_grad.aggregate_bias += &g_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
                let mut g_w = Array2::<T>::zeros((n * k, c));
                for i in 0..n {
                    for kk in 0..k {
                        let e = i * k + kk;
                        for ch in 0..c {
                            let w = ac.weights[[e, ch]];
                            let f = cache.edge[[e, ch]];
                            let go = g_pre[[i, ch]];
                            att_grad.aggregate[[kk, ch]] = att_grad.aggregate[[kk, ch]] + go * w * f;
                            let g_fw = go * att.aggregate[[kk, ch]];
                            g_edge[[e, ch]] = g_fw * w;
                            g_w[[e, ch]] = g_fw * f;
                        }
                    }
                }
                // softmax backward along the neighbor axis
                let mut g_logits = Array2::<T>::zeros((n * k, c));
                for i in 0..n {
                    for ch in 0..c {
                        let mut dot = T::zero();
                        for kk in 0..k {
                            let e = i * k + kk;
                            dot = dot + ac.weights[[e, ch]] * g_w[[e, ch]];
                        }
                        for kk in 0..k {
                            let e = i * k + kk;
                            g_logits[[e, ch]] = ac.weights[[e, ch]] * (g_w[[e, ch]] - dot);
                        }
                    }
                }
                let mut g_ah = att.logits.backward(ac.hidden.view(), g_logits.view(), &mut att_grad.logits);
                leaky_relu_backward(ac.hidden_pre.view(), &mut g_ah);
                gx += &edge_layer_backward(&att.hidden, x, &cache.graph, &g_ah, &mut att_grad.hidden);
            }
            (None, None, None) => {
                for i in 0..n {
                    for ch in 0..c {
                        let kk = cache.argmax[i * c + ch];
                        g_edge[[i * k + kk, ch]] = g[[i, ch]];
                    }
                }
            }
            _ => panic!("graph attention gradient set does not match the module layout"),
        }

        leaky_relu_backward(cache.edge_pre.view(), &mut g_edge);
        let mut g_hidden = self.output.backward(cache.hidden.view(), g_edge.view(), &mut grad.output);
        leaky_relu_backward(cache.hidden_pre.view(), &mut g_hidden);
        gx += &edge_layer_backward(&self.hidden, x, &cache.graph, &g_hidden, &mut grad.hidden);
        gx
    }
}

fn softmax_over_neighbors<T: Scalar>(logits: &mut Array2<T>, n: usize, k: usize) {
    let c = logits.ncols();
    for i in 0..n {
        let mut block = logits.slice_mut(s![i * k..(i + 1) * k, ..]);
        for ch in 0..c {
            let mut col = block.column_mut(ch);
            let m = col.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
            col.mapv_inplace(|v| (v - m).exp());
            let sum = col.sum();
            col.mapv_inplace(|v| v / sum);
        }
    }
}

impl<T> Parameters<T> for GraphAttention<T> {
    fn named_tensors(&self) -> Vec<(String, &Array2<T>)> {
        let mut v = prefixed("hidden", self.hidden.named_tensors());
        v.extend(prefixed("output", self.output.named_tensors()));
        if let Some(a) = &self.attention {
            v.extend(prefixed("attention.hidden", a.hidden.named_tensors()));
            v.extend(prefixed("attention.logits", a.logits.named_tensors()));
            v.push(("attention.aggregate".into(), &a.aggregate));
            v.push(("attention.aggregate_bias".into(), &a.aggregate_bias));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut v = self.hidden.tensors_mut();
        v.extend(self.output.tensors_mut());
        if let Some(a) = &mut self.attention {
            v.extend(a.hidden.tensors_mut());
            v.extend(a.logits.tensors_mut());
            v.push(&mut a.aggregate);
            v.push(&mut a.aggregate_bias);
        }
        v
    }
}
