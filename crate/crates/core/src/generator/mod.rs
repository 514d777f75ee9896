//! The generator network.
//!
//! Pipeline per shape: a graph attention module over the prior points, AdaIN
//! with styles embedded from the prior latent matrix, a second graph
//! attention module (graph rebuilt in feature space), a second AdaIN, then
//! coordinate regression.

mod embed;
mod head;

pub use embed::{EmbedCache, FeatureEmbed, StyleEmbed};
pub use head::{CoordRegressor, HeadCache};

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{knn, PointCloud};
use crate::nn::{adain, adain_backward, prefixed, AdainCache, GamCache, GraphAttention, Parameters};
use crate::scalar::Scalar;
use crate::sphere::{PriorKind, PriorLatentMatrix};

/// Identity of the prior point set a generator was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub n: usize,
    pub seed: u64,
}

/// Channel plan and ablation switches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorArch {
    pub latent_dim: usize,
    pub k: usize,
    pub embed_hidden: usize,
    pub embed_width: usize,
    pub gam1_hidden: usize,
    pub gam1_out: usize,
    pub gam2_hidden: usize,
    pub gam2_out: usize,
    pub global_width: usize,
    pub head_widths: Vec<usize>,
    pub use_attention: bool,
    pub use_adain: bool,
}

impl Default for GeneratorArch {
    fn default() -> Self {
        GeneratorArch {
            latent_dim: 128,
            k: 20,
            embed_hidden: 128,
            embed_width: 128,
            gam1_hidden: 64,
            gam1_out: 64,
            gam2_hidden: 128,
            gam2_out: 128,
            global_width: 512,
            head_widths: vec![256, 64],
            use_attention: true,
            use_adain: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub arch: GeneratorArch,
    pub prior: PriorSpec,
    pub embed: FeatureEmbed<T>,
    pub style1: Option<StyleEmbed<T>>,
    pub style2: Option<StyleEmbed<T>>,
    pub gam1: GraphAttention<T>,
    pub gam2: GraphAttention<T>,
    pub head: CoordRegressor<T>,
}

struct GamTrace<T> {
    output: Array2<T>,
    cache: GamCache<T>,
}

struct AdainTrace<T> {
    scale: Array2<T>,
    cache: AdainCache<T>,
}

struct SampleTrace<T> {
    fe: Array2<T>,
    embed: EmbedCache<T>,
    /// first graph module, only when it consumes the latent features
    gam1: Option<GamTrace<T>>,
    adain1: Option<AdainTrace<T>>,
    fa1: Array2<T>,
    gam2: GamCache<T>,
    adain2: Option<AdainTrace<T>>,
    head: HeadCache<T>,
}

/// Everything the backward pass needs from one batched forward pass.
pub struct GeneratorTrace<T> {
    sphere: Array2<T>,
    shared_gam1: Option<GamTrace<T>>,
    samples: Vec<SampleTrace<T>>,
}

impl<T: Scalar> Generator<T> {
    pub fn init<R: Rng + ?Sized>(arch: GeneratorArch, prior: PriorSpec, rng: &mut R) -> Result<Self> {
        if arch.k == 0 || arch.k >= prior.n {
            return Err(Error::invalid(
                "k",
                format!("neighborhood size {} must be in [1, {})", arch.k, prior.n),
            ));
        }
        if arch.latent_dim == 0 {
            return Err(Error::invalid("latent_dim", "must be at least 1"));
        }
        let embed = FeatureEmbed::init(arch.latent_dim, arch.embed_hidden, arch.embed_width, rng);
        let gam1_in = if arch.use_adain { 3 } else { arch.embed_width };
        let gam1 = GraphAttention::init(gam1_in, arch.gam1_hidden, arch.gam1_out, arch.k, arch.use_attention, rng);
        let gam2 = GraphAttention::init(
            arch.gam1_out,
            arch.gam2_hidden,
            arch.gam2_out,
            arch.k,
            arch.use_attention,
            rng,
        );
        let (style1, style2) = if arch.use_adain {
            (
                Some(StyleEmbed::init(arch.embed_width, arch.gam1_out, rng)),
                Some(StyleEmbed::init(arch.embed_width, arch.gam2_out, rng)),
            )
        } else {
            (None, None)
        };
        let head = CoordRegressor::init(arch.gam2_out, arch.global_width, &arch.head_widths, rng);
        Ok(Generator {
            arch,
            prior,
            embed,
            style1,
            style2,
            gam1,
            gam2,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Generator {
            arch: self.arch.clone(),
            prior: self.prior,
            embed: self.embed.zeros_like(),
            style1: self.style1.as_ref().map(StyleEmbed::zeros_like),
            style2: self.style2.as_ref().map(StyleEmbed::zeros_like),
            gam1: self.gam1.zeros_like(),
            gam2: self.gam2.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            arch: self.arch.clone(),
            prior: self.prior,
            embed: self.embed.cast(),
            style1: self.style1.as_ref().map(StyleEmbed::cast),
            style2: self.style2.as_ref().map(StyleEmbed::cast),
            gam1: self.gam1.cast(),
            gam2: self.gam2.cast(),
            head: self.head.cast(),
        }
    }

    fn check_inputs(&self, sphere: ArrayView2<'_, T>, codes: &[ArrayView2<'_, T>]) -> Result<()> {
        if sphere.ncols() != 3 || sphere.nrows() != self.prior.n {
            return Err(Error::CheckpointMismatch(format!(
                "prior has shape {:?}, generator expects {}x3",
                sphere.dim(),
                self.prior.n
            )));
        }
        for c in codes {
            if c.dim() != (self.prior.n, self.arch.latent_dim) {
                return Err(Error::invalid(
                    "codes",
                    format!(
                        "latent matrix is {:?}, expected ({}, {})",
                        c.dim(),
                        self.prior.n,
                        self.arch.latent_dim
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Generate one cloud per latent matrix. All samples share `sphere`.
    pub fn forward_batch(
        &self,
        sphere: ArrayView2<'_, T>,
        codes: &[ArrayView2<'_, T>],
    ) -> Result<(Vec<Array2<T>>, GeneratorTrace<T>)> {
        self.check_inputs(sphere, codes)?;
        let sphere_graph = knn(sphere, self.arch.k)?;

        // with AdaIN the first module sees only the prior, so it is shared
        let shared_gam1 = if self.arch.use_adain {
            let (output, cache) = self.gam1.forward(sphere, sphere_graph.clone())?;
            Some(GamTrace { output, cache })
        } else {
            None
        };

        let mut outputs = Vec::with_capacity(codes.len());
        let mut samples = Vec::with_capacity(codes.len());
        for z in codes {
            let (fe, embed) = self.embed.forward(sphere, *z);
            let (fa1, gam1, adain1) = match (&shared_gam1, &self.style1) {
                (Some(shared), Some(style)) => {
                    let (scale, bias) = style.forward(fe.view());
                    let (fa1, cache) = adain(shared.output.view(), scale.view(), bias.view())?;
                    (fa1, None, Some(AdainTrace { scale, cache }))
                }
                _ => {
                    let (output, cache) = self.gam1.forward(fe.view(), sphere_graph.clone())?;
                    (output.clone(), Some(GamTrace { output, cache }), None)
                }
            };
            let (fg2, gam2) = self.gam2.forward_knn(fa1.view())?;
            let (fa2, adain2) = match &self.style2 {
                Some(style) => {
                    let (scale, bias) = style.forward(fe.view());
                    let (fa2, cache) = adain(fg2.view(), scale.view(), bias.view())?;
                    (fa2, Some(AdainTrace { scale, cache }))
                }
                None => (fg2, None),
            };
            let (points, head) = self.head.forward(fa2.view());
            outputs.push(points);
            samples.push(SampleTrace {
                fe,
                embed,
                gam1,
                adain1,
                fa1,
                gam2,
                adain2,
                head,
            });
        }
        Ok((
            outputs,
            GeneratorTrace {
                sphere: sphere.to_owned(),
                shared_gam1,
                samples,
            },
        ))
    }

    /// Accumulate parameter gradients for upstream gradients on each output
    /// cloud. Returns the gradients with respect to each latent matrix.
    pub fn backward_batch(
        &self,
        trace: &GeneratorTrace<T>,
        grad_outputs: &[Array2<T>],
        grad: &mut Generator<T>,
    ) -> Vec<Array2<T>> {
        assert_eq!(grad_outputs.len(), trace.samples.len(), "one gradient per generated cloud");
        let mut g_shared: Option<Array2<T>> = trace
            .shared_gam1
            .as_ref()
            .map(|s| Array2::zeros(s.output.dim()));
        let mut g_codes = Vec::with_capacity(grad_outputs.len());
        for (sample, g_out) in trace.samples.iter().zip(grad_outputs) {
            let g_fa2 = self.head.backward(&sample.head, g_out.view(), &mut grad.head);
            let mut g_fe = Array2::<T>::zeros(sample.fe.dim());
            let g_fg2 = match (&sample.adain2, &self.style2, &mut grad.style2) {
                (Some(tr), Some(style), Some(gs)) => {
                    let (gx, g_scale, g_bias) = adain_backward(&tr.cache, tr.scale.view(), g_fa2.view());
                    g_fe += &style.backward(sample.fe.view(), g_scale.view(), g_bias.view(), gs);
                    gx
                }
                _ => g_fa2,
            };
            let g_fa1 = self.gam2.backward(sample.fa1.view(), &sample.gam2, g_fg2.view(), &mut grad.gam2);
            match (&sample.adain1, &self.style1, &mut grad.style1, &sample.gam1) {
                (Some(tr), Some(style), Some(gs), _) => {
                    let (gx, g_scale, g_bias) = adain_backward(&tr.cache, tr.scale.view(), g_fa1.view());
                    g_fe += &style.backward(sample.fe.view(), g_scale.view(), g_bias.view(), gs);
                    if let Some(acc) = g_shared.as_mut() {
                        *acc += &gx;
                    }
                }
                (_, _, _, Some(gam1)) => {
                    g_fe += &self.gam1.backward(sample.fe.view(), &gam1.cache, g_fa1.view(), &mut grad.gam1);
                }
                _ => unreachable!("trace layout matches generator layout"),
            }
            g_codes.push(self.embed.backward(&sample.embed, g_fe.view(), &mut grad.embed));
        }
        if let (Some(shared), Some(g)) = (&trace.shared_gam1, g_shared) {
            self.gam1.backward(trace.sphere.view(), &shared.cache, g.view(), &mut grad.gam1);
        }
        g_codes
    }

    pub fn forward(&self, sphere: ArrayView2<'_, T>, codes: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let (mut out, _) = self.forward_batch(sphere, &[codes])?;
        Ok(out.pop().expect("one output"))
    }
}

impl Generator<f32> {
    /// Generate a point cloud from a prior latent matrix built on the same
    /// prior this generator was trained with.
    pub fn generate(&self, m: &PriorLatentMatrix) -> Result<PointCloud> {
        let s = m.sphere();
        if s.kind() != self.prior.kind || s.n() != self.prior.n || s.seed() != self.prior.seed {
            return Err(Error::CheckpointMismatch(format!(
                "latent matrix built on {} prior (n={}, seed={}), generator trained on {} (n={}, seed={})",
                s.kind().as_str(),
                s.n(),
                s.seed(),
                self.prior.kind.as_str(),
                self.prior.n,
                self.prior.seed
            )));
        }
        let points = self.forward(s.coords().view(), m.codes().view())?;
        PointCloud::new(points)
    }
}

/// Free-function form of [`Generator::generate`].
pub fn generate(params: &Generator<f32>, m: &PriorLatentMatrix) -> Result<PointCloud> {
    params.generate(m)
}

impl<T> Parameters<T> for Generator<T> {
    fn named_tensors(&self) -> Vec<(String, &Array2<T>)> {
        let mut v = prefixed("embed", self.embed.named_tensors());
        if let Some(s) = &self.style1 {
            v.extend(prefixed("style1", s.named_tensors()));
        }
        if let Some(s) = &self.style2 {
            v.extend(prefixed("style2", s.named_tensors()));
        }
        v.extend(prefixed("gam1", self.gam1.named_tensors()));
        v.extend(prefixed("gam2", self.gam2.named_tensors()));
        v.extend(prefixed("head", self.head.named_tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut v = self.embed.tensors_mut();
        if let Some(s) = &mut self.style1 {
            v.extend(s.tensors_mut());
        }
        if let Some(s) = &mut self.style2 {
            v.extend(s.tensors_mut());
        }
        v.extend(self.gam1.tensors_mut());
        v.extend(self.gam2.tensors_mut());
        v.extend(self.head.tensors_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check;
    use crate::sphere::{pack_perpoint, pack_uniform, sample_code, sample_sphere};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch(use_attention: bool, use_adain: bool) -> GeneratorArch {
        GeneratorArch {
            latent_dim: 3,
            k: 3,
            embed_hidden: 5,
            embed_width: 4,
            gam1_hidden: 4,
            gam1_out: 4,
            gam2_hidden: 5,
            gam2_out: 4,
            global_width: 6,
            head_widths: vec![5],
            use_attention,
            use_adain,
        }
    }

    fn small_arch() -> GeneratorArch {
        GeneratorArch {
            latent_dim: 16,
            k: 8,
            embed_hidden: 32,
            embed_width: 32,
            gam1_hidden: 16,
            gam1_out: 16,
            gam2_hidden: 32,
            gam2_out: 32,
            global_width: 64,
            head_widths: vec![32, 16],
            use_attention: true,
            use_adain: true,
        }
    }

    fn prior(n: usize) -> PriorSpec {
        PriorSpec {
            kind: PriorKind::Sphere,
            n,
            seed: 0,
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Generator::<f32>::init(small_arch(), prior(128), &mut rng).unwrap();
        let s = sample_sphere(128, 0).unwrap();
        let m = pack_uniform(&s, &sample_code(16, &mut rng).unwrap());
        let a = g.generate(&m).unwrap();
        let b = g.generate(&m).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points().dim(), (128, 3));
        assert!(a.points().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn sphere_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::<f32>::init(small_arch(), prior(128), &mut rng).unwrap();
        let z = sample_code(16, &mut rng).unwrap();
        let other_seed = pack_uniform(&sample_sphere(128, 5).unwrap(), &z);
        assert!(matches!(g.generate(&other_seed), Err(Error::CheckpointMismatch(_))));
        let other_n = pack_uniform(&sample_sphere(64, 0).unwrap(), &z);
        assert!(matches!(g.generate(&other_n), Err(Error::CheckpointMismatch(_))));
    }

    #[test]
    fn joint_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Generator::<f32>::init(small_arch(), prior(128), &mut rng).unwrap();
        let s = sample_sphere(128, 0).unwrap();
        let codes = Array2::from_shape_fn((128, 16), |_| rng.random_range(-1.0f32..1.0));
        let out = g.forward(s.coords().view(), codes.view()).unwrap();
        let perm: Vec<usize> = (0..128).map(|i| (i * 37 + 11) % 128).collect();
        let sp = Array2::from_shape_fn((128, 3), |(i, c)| s.coords()[[perm[i], c]]);
        let cp = Array2::from_shape_fn((128, 16), |(i, c)| codes[[perm[i], c]]);
        let outp = g.forward(sp.view(), cp.view()).unwrap();
        for i in 0..128 {
            for c in 0..3 {
                assert!((outp[[i, c]] - out[[perm[i], c]]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn batch_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Generator::<f32>::init(small_arch(), prior(64), &mut rng).unwrap();
        let s = sample_sphere(64, 0).unwrap();
        let c1 = Array2::from_shape_fn((64, 16), |_| rng.random_range(-1.0f32..1.0));
        let c2 = Array2::from_shape_fn((64, 16), |_| rng.random_range(-1.0f32..1.0));
        let (batch, _) = g.forward_batch(s.coords().view(), &[c1.view(), c2.view()]).unwrap();
        assert_eq!(batch[0], g.forward(s.coords().view(), c1.view()).unwrap());
        assert_eq!(batch[1], g.forward(s.coords().view(), c2.view()).unwrap());
    }

    #[test]
    fn perpoint_equal_rows_match_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Generator::<f32>::init(small_arch(), prior(64), &mut rng).unwrap();
        let s = sample_sphere(64, 0).unwrap();
        let z = sample_code(16, &mut rng).unwrap();
        let u = pack_uniform(&s, &z);
        let p = pack_perpoint(&s, u.codes().clone()).unwrap();
        assert_eq!(g.generate(&u).unwrap(), g.generate(&p).unwrap());
    }

    #[test]
    fn full_pipeline_gradients() {
        for (att, ada) in [(true, true), (false, true), (true, false)] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let g = Generator::<f64>::init(tiny_arch(att, ada), prior(10), &mut rng).unwrap();
            let s = sample_sphere(10, 0).unwrap().coords().mapv(|v| v as f64);
            let z1 = Array2::from_shape_fn((10, 3), |_| rng.random_range(-1.0..1.0));
            let z2 = Array2::from_shape_fn((10, 3), |_| rng.random_range(-1.0..1.0));
            let r1 = Array2::from_shape_fn((10, 3), |_| rng.random_range(-1.0..1.0));
            let r2 = Array2::from_shape_fn((10, 3), |_| rng.random_range(-1.0..1.0));
            let (_, trace) = g.forward_batch(s.view(), &[z1.view(), z2.view()]).unwrap();
            let mut grad = g.zeros_like();
            let gz = g.backward_batch(&trace, &[r1.clone(), r2.clone()], &mut grad);
            let mut analytic: Vec<Array2<f64>> =
                grad.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
            analytic.extend(gz);
            let state = (g.clone(), z1.clone(), z2.clone());
            let report = check(
                &state,
                |st: &mut (Generator<f64>, Array2<f64>, Array2<f64>)| {
                    let mut v = st.0.tensors_mut();
                    v.push(&mut st.1);
                    v.push(&mut st.2);
                    v
                },
                |st| {
                    let (outs, _) = st.0.forward_batch(s.view(), &[st.1.view(), st.2.view()]).unwrap();
                    (&outs[0] * &r1).sum() + (&outs[1] * &r2).sum()
                },
                &analytic,
            );
            assert!(report.max_rel_error < 1e-4, "att={att} adain={ada}: {report:?}");
        }
    }
}
