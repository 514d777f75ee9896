//! Dual-head point cloud discriminator: one realism score per shape and one
//! per point. Scores are raw (no squashing) for the least-squares objectives.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    leaky_relu_backward, leaky_relu_of, max_pool_rows, max_pool_rows_backward, prefixed, Dense, Parameters,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorArch {
    pub backbone: Vec<usize>,
    pub shape_hidden: Vec<usize>,
    pub point_hidden: Vec<usize>,
    pub use_point_score: bool,
}

impl Default for DiscriminatorArch {
    fn default() -> Self {
        DiscriminatorArch {
            backbone: vec![64, 128, 256],
            shape_hidden: vec![128],
            point_hidden: vec![128],
            use_point_score: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorScores<T = f32> {
    pub shape_score: T,
    /// Empty when the point head is disabled.
    pub point_scores: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    pub arch: DiscriminatorArch,
    pub n_points: usize,
    pub backbone: Vec<Dense<T>>,
    /// Last layer emits the scalar shape score.
    pub shape_head: Vec<Dense<T>>,
    /// First layer consumes `[point feature | global]`; last emits one score.
    pub point_head: Option<Vec<Dense<T>>>,
}

pub struct DiscriminatorCache<T> {
    input: Array2<T>,
    backbone_pre: Vec<Array2<T>>,
    backbone_post: Vec<Array2<T>>,
    argmax: Vec<usize>,
    global: Array1<T>,
    shape_pre: Vec<Array2<T>>,
    shape_post: Vec<Array2<T>>,
    point_pre: Vec<Array2<T>>,
    point_post: Vec<Array2<T>>,
}

fn mlp_init<T: Scalar, R: Rng + ?Sized>(fan_in: usize, widths: &[usize], out: usize, rng: &mut R) -> Vec<Dense<T>> {
    let mut layers = Vec::new();
    let mut f = fan_in;
    for &w in widths.iter().chain(std::iter::once(&out)) {
        layers.push(Dense::init(f, w, rng));
        f = w;
    }
    layers
}

/// Runs `layers` after an already computed first pre-activation. Hidden
/// layers use LeakyReLU; the last is linear.
fn mlp_tail<T: Scalar>(layers: &[Dense<T>], first_pre: Array2<T>) -> (Vec<Array2<T>>, Vec<Array2<T>>) {
    let last = layers.len() - 1;
    let mut pre = vec![first_pre];
    let mut post: Vec<Array2<T>> = Vec::with_capacity(layers.len());
    for idx in 0..layers.len() {
        if idx > 0 {
            pre.push(layers[idx].forward(post[idx - 1].view()));
        }
        let act = if idx == last {
            pre[idx].clone()
        } else {
            leaky_relu_of(&pre[idx])
        };
        post.push(act);
    }
    (pre, post)
}

/// Backpropagates through layers `1..` and the first activation. Returns the
/// gradient with respect to the first pre-activation.
fn mlp_tail_backward<T: Scalar>(
    layers: &[Dense<T>],
    pre: &[Array2<T>],
    post: &[Array2<T>],
    g: Array2<T>,
    grads: &mut [Dense<T>],
) -> Array2<T> {
    let last = layers.len() - 1;
    let mut gh = g;
    for idx in (0..layers.len()).rev() {
        if idx != last {
            leaky_relu_backward(pre[idx].view(), &mut gh);
        }
        if idx > 0 {
            gh = layers[idx].backward(post[idx - 1].view(), gh.view(), &mut grads[idx]);
        }
    }
    gh
}

impl<T: Scalar> Discriminator<T> {
    pub fn init<R: Rng + ?Sized>(arch: DiscriminatorArch, n_points: usize, rng: &mut R) -> Result<Self> {
        if arch.backbone.is_empty() {
            return Err(Error::invalid("backbone", "at least one backbone layer is required"));
        }
        let backbone = mlp_init(3, &arch.backbone[..arch.backbone.len() - 1], arch.backbone[arch.backbone.len() - 1], rng);
        let feat = *arch.backbone.last().expect("non-empty");
        let shape_head = mlp_init(feat, &arch.shape_hidden, 1, rng);
        let point_head = arch
            .use_point_score
            .then(|| mlp_init(2 * feat, &arch.point_hidden, 1, rng));
        Ok(Discriminator {
            arch,
            n_points,
            backbone,
            shape_head,
            point_head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |v: &Vec<Dense<T>>| v.iter().map(Dense::zeros_like).collect::<Vec<_>>();
        Discriminator {
            arch: self.arch.clone(),
            n_points: self.n_points,
            backbone: z(&self.backbone),
            shape_head: z(&self.shape_head),
            point_head: self.point_head.as_ref().map(z),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Discriminator<U> {
        let c = |v: &Vec<Dense<T>>| v.iter().map(Dense::cast).collect::<Vec<_>>();
        Discriminator {
            arch: self.arch.clone(),
            n_points: self.n_points,
            backbone: c(&self.backbone),
            shape_head: c(&self.shape_head),
            point_head: self.point_head.as_ref().map(c),
        }
    }

    pub fn forward(&self, cloud: ArrayView2<'_, T>) -> Result<(DiscriminatorScores<T>, DiscriminatorCache<T>)> {
        if cloud.dim() != (self.n_points, 3) {
            return Err(Error::invalid(
                "cloud",
                format!("expected {}x3 points, got {:?}", self.n_points, cloud.dim()),
            ));
        }
        let mut backbone_pre = Vec::with_capacity(self.backbone.len());
        let mut backbone_post: Vec<Array2<T>> = Vec::with_capacity(self.backbone.len());
        for (idx, layer) in self.backbone.iter().enumerate() {
            let x = if idx == 0 { cloud } else { backbone_post[idx - 1].view() };
            let pre = layer.forward(x);
            backbone_post.push(leaky_relu_of(&pre));
            backbone_pre.push(pre);
        }
        let feat = backbone_post.last().expect("non-empty backbone");
        let (global, argmax) = max_pool_rows(feat.view());

        let g_row = global.view().insert_axis(Axis(0));
        let (shape_pre, shape_post) = mlp_tail(&self.shape_head, self.shape_head[0].forward(g_row));
        let shape_score = shape_post.last().expect("non-empty head")[[0, 0]];

        let (point_pre, point_post, point_scores) = match &self.point_head {
            Some(head) => {
                let c = feat.ncols();
                let first = &head[0];
                let shift = global.dot(&first.weight.slice(s![c.., ..])) + first.bias.row(0);
                let mut h = feat.dot(&first.weight.slice(s![..c, ..]));
                h += &shift;
                let (pre, post) = mlp_tail(head, h);
                let scores = post.last().expect("non-empty head").column(0).to_owned();
                (pre, post, scores)
            }
            None => (Vec::new(), Vec::new(), Array1::zeros(0)),
        };
        Ok((
            DiscriminatorScores {
                shape_score,
                point_scores,
            },
            DiscriminatorCache {
                input: cloud.to_owned(),
                backbone_pre,
                backbone_post,
                argmax,
                global,
                shape_pre,
                shape_post,
                point_pre,
                point_post,
            },
        ))
    }

    pub fn discriminate(&self, cloud: ArrayView2<'_, T>) -> Result<DiscriminatorScores<T>> {
        Ok(self.forward(cloud)?.0)
    }

    /// Accumulates parameter gradients for upstream score gradients and
    /// returns the gradient with respect to the input cloud.
    pub fn backward(
        &self,
        cache: &DiscriminatorCache<T>,
        upstream: &DiscriminatorScores<T>,
        grad: &mut Discriminator<T>,
    ) -> Array2<T> {
        let feat = cache.backbone_post.last().expect("non-empty backbone");
        let (n, c) = feat.dim();

        // shape head
        let g_out = Array2::from_elem((1, 1), upstream.shape_score);
        let g_first = mlp_tail_backward(
            &self.shape_head,
            &cache.shape_pre,
            &cache.shape_post,
            g_out,
            &mut grad.shape_head,
        );
        let g_row = cache.global.view().insert_axis(Axis(0));
        let g_global_row = self.shape_head[0].backward(g_row, g_first.view(), &mut grad.shape_head[0]);
        let mut g_global = g_global_row.row(0).to_owned();
        let mut g_feat = Array2::<T>::zeros((n, c));

        // point head
        if let (Some(head), Some(ghead)) = (&self.point_head, grad.point_head.as_mut()) {
            if upstream.point_scores.len() == n {
                let g_out = upstream.point_scores.view().insert_axis(Axis(1)).to_owned();
                let gh = mlp_tail_backward(head, &cache.point_pre, &cache.point_post, g_out, ghead);
                let col = gh.sum_axis(Axis(0));
                let gfirst = &mut ghead[0];
                {
                    let mut top = gfirst.weight.slice_mut(s![..c, ..]);
                    top += &feat.t().dot(&gh);
                }
                {
                    let outer = cache
                        .global
                        .view()
                        .insert_axis(Axis(1))
                        .dot(&col.view().insert_axis(Axis(0)));
                    let mut bottom = gfirst.weight.slice_mut(s![c.., ..]);
                    bottom += &outer;
                }
                gfirst.bias += &col.view().insert_axis(Axis(0));
                g_feat += &gh.dot(&head[0].weight.slice(s![..c, ..]).t());
                g_global += &head[0].weight.slice(s![c.., ..]).dot(&col);
            }
        }

        g_feat += &max_pool_rows_backward(&g_global, &cache.argmax, n);

        let mut gh = g_feat;
        for idx in (0..self.backbone.len()).rev() {
            leaky_relu_backward(cache.backbone_pre[idx].view(), &mut gh);
            let x = if idx == 0 {
                cache.input.view()
            } else {
                cache.backbone_post[idx - 1].view()
            };
            gh = self.backbone[idx].backward(x, gh.view(), &mut grad.backbone[idx]);
        }
        gh
    }
}

impl Discriminator<f32> {
    pub fn discriminate_cloud(&self, cloud: &crate::geometry::PointCloud) -> Result<DiscriminatorScores> {
        self.discriminate(cloud.points().view())
    }
}

impl<T> Parameters<T> for Discriminator<T> {
    fn named_tensors(&self) -> Vec<(String, &Array2<T>)> {
        let mut v = Vec::new();
        for (i, l) in self.backbone.iter().enumerate() {
            v.extend(prefixed(&format!("backbone{i}"), l.named_tensors()));
        }
        for (i, l) in self.shape_head.iter().enumerate() {
            v.extend(prefixed(&format!("shape{i}"), l.named_tensors()));
        }
        if let Some(head) = &self.point_head {
            for (i, l) in head.iter().enumerate() {
                v.extend(prefixed(&format!("point{i}"), l.named_tensors()));
            }
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut v = Vec::new();
        for l in &mut self.backbone {
            v.extend(l.tensors_mut());
        }
        for l in &mut self.shape_head {
            v.extend(l.tensors_mut());
        }
        if let Some(head) = &mut self.point_head {
            for l in head {
                v.extend(l.tensors_mut());
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use crate::scalar::LEAKY_SLOPE;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> DiscriminatorArch {
        DiscriminatorArch {
            backbone: vec![4, 6],
            shape_hidden: vec![5],
            point_hidden: vec![4],
            use_point_score: true,
        }
    }

    fn lrelu(v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            v * LEAKY_SLOPE
        }
    }

    fn apply(layer: &Dense<f64>, x: &[f64], act: bool) -> Vec<f64> {
        (0..layer.fan_out())
            .map(|o| {
                let mut v = layer.bias[[0, o]];
                for (t, a) in x.iter().enumerate() {
                    v += a * layer.weight[[t, o]];
                }
                if act {
                    lrelu(v)
                } else {
                    v
                }
            })
            .collect()
    }

    fn run(layers: &[Dense<f64>], x: Vec<f64>, last_linear: bool) -> Vec<f64> {
        let mut cur = x;
        for (i, l) in layers.iter().enumerate() {
            cur = apply(l, &cur, !(last_linear && i + 1 == layers.len()));
        }
        cur
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Discriminator::<f64>::init(tiny(), 8, &mut rng).unwrap();
        let x = Array2::from_shape_fn((8, 3), |_| rng.random_range(-1.0..1.0));
        let scores = d.discriminate(x.view()).unwrap();
        let feats: Vec<Vec<f64>> = (0..8).map(|i| run(&d.backbone, x.row(i).to_vec(), false)).collect();
        let global: Vec<f64> = (0..6)
            .map(|c| feats.iter().map(|f| f[c]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let shape = run(&d.shape_head, global.clone(), true)[0];
        assert!((shape - scores.shape_score).abs() < 1e-6);
        let head = d.point_head.as_ref().unwrap();
        for i in 0..8 {
            let mut input = feats[i].clone();
            input.extend(&global);
            let p = run(head, input, true)[0];
            assert!((p - scores.point_scores[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn default_widths_and_dual_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Discriminator::<f32>::init(DiscriminatorArch::default(), 2048, &mut rng).unwrap();
        let x = Array2::from_shape_fn((2048, 3), |_| rng.random_range(-1.0f32..1.0));
        let s = d.discriminate(x.view()).unwrap();
        assert_eq!(s.point_scores.len(), 2048);
        assert!(s.shape_score.is_finite());
    }

    #[test]
    fn permutation_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Discriminator::<f32>::init(DiscriminatorArch::default(), 128, &mut rng).unwrap();
        let x = Array2::from_shape_fn((128, 3), |_| rng.random_range(-1.0f32..1.0));
        let perm: Vec<usize> = (0..128).map(|i| (i * 53 + 7) % 128).collect();
        let xp = Array2::from_shape_fn((128, 3), |(i, c)| x[[perm[i], c]]);
        let a = d.discriminate(x.view()).unwrap();
        let b = d.discriminate(xp.view()).unwrap();
        assert!((a.shape_score - b.shape_score).abs() < 1e-5);
        for i in 0..128 {
            assert!((b.point_scores[i] - a.point_scores[perm[i]]).abs() < 1e-5);
        }
    }

    #[test]
    fn size_mismatch_is_invalid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Discriminator::<f32>::init(tiny(), 8, &mut rng).unwrap();
        let x = Array2::<f32>::zeros((9, 3));
        assert!(matches!(d.discriminate(x.view()), Err(Error::InvalidArgument { .. })));
    }

    #[test]
    fn without_point_head_scores_are_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let arch = DiscriminatorArch {
            use_point_score: false,
            ..tiny()
        };
        let d = Discriminator::<f32>::init(arch, 8, &mut rng).unwrap();
        let s = d.discriminate(Array2::<f32>::zeros((8, 3)).view()).unwrap();
        assert!(s.point_scores.is_empty());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for use_point_score in [true, false] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let arch = DiscriminatorArch {
                use_point_score,
                ..tiny()
            };
            let d = Discriminator::<f64>::init(arch, 12, &mut rng).unwrap();
            let x = Array2::from_shape_fn((12, 3), |_| rng.random_range(-1.0..1.0));
            let ws = 0.7;
            let wp = Array1::from_shape_fn(if use_point_score { 12 } else { 0 }, |_| rng.random_range(-1.0..1.0));
            let up = DiscriminatorScores {
                shape_score: ws,
                point_scores: wp.clone(),
            };
            let report = check_gradients(
                &d,
                &x,
                |p, x| {
                    let s = p.discriminate(x.view()).unwrap();
                    ws * s.shape_score + s.point_scores.dot(&wp)
                },
                |p, x, g| {
                    let (_, cache) = p.forward(x.view()).unwrap();
                    p.backward(&cache, &up, g)
                },
            );
            assert!(report.max_rel_error < 1e-4, "point head {use_point_score}: {report:?}");
        }
    }
}
