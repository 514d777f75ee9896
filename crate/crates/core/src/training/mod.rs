//! Alternating least-squares adversarial training.

mod checkpoint;
mod loss;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use loss::{loss_discriminator, loss_discriminator_grad, loss_generator, loss_generator_grad};

use log::{debug, info};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::digest::hash_array;
use crate::discriminator::{Discriminator, DiscriminatorArch, DiscriminatorScores};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorArch, GeneratorTrace, PriorSpec};
use crate::geometry::PointCloud;
use crate::nn::{Adam, AdamConfig, Parameters};
use crate::sphere::{sample_prior, PriorKind, SpherePoints};

/// Generator channel widths, independent of the ablation switches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorWidths {
    pub embed_hidden: usize,
    pub embed_width: usize,
    pub gam1_hidden: usize,
    pub gam1_out: usize,
    pub gam2_hidden: usize,
    pub gam2_out: usize,
    pub global_width: usize,
    pub head: Vec<usize>,
}

impl Default for GeneratorWidths {
    fn default() -> Self {
        let a = GeneratorArch::default();
        GeneratorWidths {
            embed_hidden: a.embed_hidden,
            embed_width: a.embed_width,
            gam1_hidden: a.gam1_hidden,
            gam1_out: a.gam1_out,
            gam2_hidden: a.gam2_hidden,
            gam2_out: a.gam2_out,
            global_width: a.global_width,
            head: a.head_widths,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorWidths {
    pub backbone: Vec<usize>,
    pub shape_hidden: Vec<usize>,
    pub point_hidden: Vec<usize>,
}

impl Default for DiscriminatorWidths {
    fn default() -> Self {
        let a = DiscriminatorArch::default();
        DiscriminatorWidths {
            backbone: a.backbone,
            shape_hidden: a.shape_hidden,
            point_hidden: a.point_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub n_points: usize,
    pub latent_dim: usize,
    pub k: usize,
    pub lambda: f64,
    pub beta: f64,
    pub learning_rate: f64,
    /// Discriminator rate when it differs from `learning_rate`.
    pub discriminator_learning_rate: Option<f64>,
    pub epochs: u64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub sphere_seed: u64,
    pub prior_kind: PriorKind,
    pub use_attention: bool,
    pub use_adain: bool,
    pub use_point_score: bool,
    /// Seeds weight init, shuffling and latent sampling.
    pub seed: u64,
    /// Stops early after this many iterations when set.
    pub max_iterations: Option<u64>,
    /// Emit a checkpoint to observers every this many iterations (0: never).
    pub checkpoint_every: u64,
    pub generator_widths: GeneratorWidths,
    pub discriminator_widths: DiscriminatorWidths,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            n_points: 2048,
            latent_dim: 128,
            k: 20,
            lambda: 1.0,
            beta: 1.0,
            learning_rate: 1e-4,
            discriminator_learning_rate: None,
            epochs: 300,
            batch_size: 32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            sphere_seed: 0,
            prior_kind: PriorKind::Sphere,
            use_attention: true,
            use_adain: true,
            use_point_score: true,
            seed: 0,
            max_iterations: None,
            checkpoint_every: 0,
            generator_widths: GeneratorWidths::default(),
            discriminator_widths: DiscriminatorWidths::default(),
        }
    }
}

impl TrainingConfig {
    /// Reduced widths for CPU runs on small repositories.
    pub fn desk() -> Self {
        TrainingConfig {
            n_points: 512,
            latent_dim: 32,
            k: 10,
            batch_size: 8,
            adam_beta1: 0.5,
            generator_widths: GeneratorWidths {
                embed_hidden: 32,
                embed_width: 32,
                gam1_hidden: 16,
                gam1_out: 16,
                gam2_hidden: 32,
                gam2_out: 32,
                global_width: 64,
                head: vec![64, 32],
            },
            discriminator_widths: DiscriminatorWidths {
                backbone: vec![32, 64, 128],
                shape_hidden: vec![64],
                point_hidden: vec![64],
            },
            ..TrainingConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lambda) {
            return Err(Error::invalid("lambda", "must be finite and >= 0"));
        }
        if !finite_nonneg(self.beta) {
            return Err(Error::invalid("beta", "must be finite and >= 0"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be > 0"));
        }
        if let Some(lr) = self.discriminator_learning_rate {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::invalid("discriminator_learning_rate", "must be > 0"));
            }
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent_dim", "must be >= 1"));
        }
        if self.k == 0 || self.k >= self.n_points {
            return Err(Error::invalid("k", "must be in [1, n_points)"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("adam_beta", "moment decay rates must be in [0, 1)"));
        }
        if self.discriminator_widths.backbone.is_empty() {
            return Err(Error::invalid("discriminator_widths", "backbone needs at least one layer"));
        }
        Ok(())
    }

    pub fn prior_spec(&self) -> PriorSpec {
        PriorSpec {
            kind: self.prior_kind,
            n: self.n_points,
            seed: self.sphere_seed,
        }
    }

    pub fn generator_arch(&self) -> GeneratorArch {
        let w = &self.generator_widths;
        GeneratorArch {
            latent_dim: self.latent_dim,
            k: self.k,
            embed_hidden: w.embed_hidden,
            embed_width: w.embed_width,
            gam1_hidden: w.gam1_hidden,
            gam1_out: w.gam1_out,
            gam2_hidden: w.gam2_hidden,
            gam2_out: w.gam2_out,
            global_width: w.global_width,
            head_widths: w.head.clone(),
            use_attention: self.use_attention,
            use_adain: self.use_adain,
        }
    }

    pub fn discriminator_arch(&self) -> DiscriminatorArch {
        let w = &self.discriminator_widths;
        DiscriminatorArch {
            backbone: w.backbone.clone(),
            shape_hidden: w.shape_hidden.clone(),
            point_hidden: w.point_hidden.clone(),
            use_point_score: self.use_point_score,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn discriminator_adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.discriminator_learning_rate.unwrap_or(self.learning_rate),
            ..self.adam()
        }
    }

    pub fn iterations_per_epoch(&self, repository_len: usize) -> u64 {
        repository_len.div_ceil(self.batch_size) as u64
    }

    pub fn total_iterations(&self, repository_len: usize) -> u64 {
        let full = self.epochs * self.iterations_per_epoch(repository_len);
        self.max_iterations.map_or(full, |m| m.min(full))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub iteration: u64,
    pub epoch: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    /// Hash of the latent codes sampled this iteration.
    pub latent_hash: String,
    pub sphere_hash: String,
    /// Consecutive iterations (ending here) with a collapsed discriminator loss.
    pub collapse_run: u64,
}

/// Discriminator losses below this count toward a collapse run.
pub const COLLAPSE_THRESHOLD: f64 = 1e-6;

/// Receives telemetry and periodic checkpoints from [`train`].
pub trait TrainingObserver {
    fn on_iteration(&mut self, _stats: &IterationStats) {}

    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct Silent;

impl TrainingObserver for Silent {}

/// Collects every [`IterationStats`].
#[derive(Debug, Default)]
pub struct History {
    pub stats: Vec<IterationStats>,
}

impl TrainingObserver for History {
    fn on_iteration(&mut self, stats: &IterationStats) {
        self.stats.push(stats.clone());
    }
}

/// Explicit training state, one alternating step at a time.
pub struct Trainer {
    config: TrainingConfig,
    sphere: SpherePoints,
    sphere_hash: String,
    generator: Generator<f32>,
    discriminator: Discriminator<f32>,
    opt_g: Adam<f32>,
    opt_d: Adam<f32>,
    rng: ChaCha8Rng,
    repository: Vec<Array2<f32>>,
    order: Vec<usize>,
    cursor: usize,
    iteration: u64,
    epoch: u64,
    collapse_run: u64,
}

fn mean_grads<P: Parameters<f32>>(grad: &mut P, count: usize) {
    let inv = 1.0 / count as f32;
    for t in grad.tensors_mut() {
        t.mapv_inplace(|v| v * inv);
    }
}

impl Trainer {
    pub fn new(config: TrainingConfig, repository: &[PointCloud]) -> Result<Self> {
        config.validate()?;
        if repository.is_empty() {
            return Err(Error::invalid("repository", "no training shapes"));
        }
        for (i, c) in repository.iter().enumerate() {
            if c.len() != config.n_points {
                return Err(Error::invalid(
                    "repository",
                    format!("shape {i} has {} points, config expects {}", c.len(), config.n_points),
                ));
            }
        }
        let sphere = sample_prior(config.prior_kind, config.n_points, config.sphere_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = Generator::init(config.generator_arch(), config.prior_spec(), &mut rng)?;
        let discriminator = Discriminator::init(config.discriminator_arch(), config.n_points, &mut rng)?;
        let opt_g = Adam::new(config.adam(), &generator);
        let opt_d = Adam::new(config.discriminator_adam(), &discriminator);
        let order: Vec<usize> = (0..repository.len()).collect();
        Ok(Trainer {
            sphere_hash: hash_array(sphere.coords()),
            sphere,
            generator,
            discriminator,
            opt_g,
            opt_d,
            rng,
            repository: repository.iter().map(|c| c.points().clone()).collect(),
            order,
            cursor: usize::MAX,
            iteration: 0,
            epoch: 0,
            collapse_run: 0,
            config,
        })
    }

    /// Resume from a checkpoint. Optimizer moments restart from zero.
    pub fn resume(checkpoint: Checkpoint, repository: &[PointCloud]) -> Result<Self> {
        let mut t = Trainer::new(checkpoint.config.clone(), repository)?;
        t.opt_g = Adam::new(t.config.adam(), &checkpoint.generator);
        t.opt_d = Adam::new(t.config.discriminator_adam(), &checkpoint.discriminator);
        t.generator = checkpoint.generator;
        t.discriminator = checkpoint.discriminator;
        t.iteration = checkpoint.iteration;
        t.rng = ChaCha8Rng::seed_from_u64(t.config.seed ^ checkpoint.iteration.rotate_left(32));
        Ok(t)
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn sphere(&self) -> &SpherePoints {
        &self.sphere
    }

    pub fn generator(&self) -> &Generator<f32> {
        &self.generator
    }

    pub fn discriminator(&self) -> &Discriminator<f32> {
        &self.discriminator
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            iteration: self.iteration,
        }
    }

    fn next_real_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
            if self.iteration > 0 {
                self.epoch += 1;
            }
        }
        let end = (self.cursor + self.config.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }

    /// One shape-level code per sample, broadcast over all points.
    fn sample_codes(&mut self, count: usize) -> Vec<Array2<f32>> {
        let (n, d) = (self.config.n_points, self.config.latent_dim);
        (0..count)
            .map(|_| {
                let z: Vec<f32> = (0..d).map(|_| StandardNormal.sample(&mut self.rng)).collect();
                let row = ndarray::ArrayView1::from(&z[..]);
                row.insert_axis(Axis(0)).broadcast((n, d)).expect("broadcast").to_owned()
            })
            .collect()
    }

    /// One discriminator update on paired fake and real clouds. Returns the
    /// mean loss over the batch.
    pub fn discriminator_step(&mut self, fakes: &[Array2<f32>], reals: &[&Array2<f32>]) -> Result<f64> {
        assert_eq!(fakes.len(), reals.len(), "paired batches");
        let lambda = self.config.lambda;
        let mut grad = self.discriminator.zeros_like();
        let mut total = 0.0;
        for (fake, real) in fakes.iter().zip(reals) {
            let (sf, cf) = self.discriminator.forward(fake.view())?;
            let (sr, cr) = self.discriminator.forward(real.view())?;
            total += loss_discriminator(&sf, &sr, lambda)?;
            let (gf, gr) = loss_discriminator_grad(&sf, &sr, lambda)?;
            self.discriminator.backward(&cf, &gf, &mut grad);
            self.discriminator.backward(&cr, &gr, &mut grad);
        }
        mean_grads(&mut grad, fakes.len());
        self.opt_d.update(&mut self.discriminator, &grad);
        Ok(total / fakes.len() as f64)
    }

    /// One generator update through the current (frozen) discriminator,
    /// reusing a forward trace. Returns the mean loss over the batch.
    pub fn generator_step(&mut self, trace: &GeneratorTrace<f32>, fakes: &[Array2<f32>]) -> Result<f64> {
        let beta = self.config.beta;
        let mut scratch = self.discriminator.zeros_like();
        let mut g_outputs = Vec::with_capacity(fakes.len());
        let mut loss_g = 0.0;
        for fake in fakes {
            let (s, cache) = self.discriminator.forward(fake.view())?;
            loss_g += loss_generator(&s, beta);
            let up: DiscriminatorScores<f32> = loss_generator_grad(&s, beta);
            g_outputs.push(self.discriminator.backward(&cache, &up, &mut scratch));
        }
        let count = fakes.len();
        loss_g /= count as f64;
        let mut grad = self.generator.zeros_like();
        self.generator.backward_batch(trace, &g_outputs, &mut grad);
        mean_grads(&mut grad, count);
        self.opt_g.update(&mut self.generator, &grad);

        Ok(loss_g)
    }

    /// Generate a batch with fresh codes, keeping the backward trace.
    pub fn generate_batch(&mut self, count: usize) -> Result<(Vec<Array2<f32>>, GeneratorTrace<f32>)> {
        let codes = self.sample_codes(count);
        let views: Vec<_> = codes.iter().map(|c| c.view()).collect();
        self.generator.forward_batch(self.sphere.coords().view(), &views)
    }

    /// One full alternating iteration: a discriminator step on a generated
    /// and a real batch, then a generator step through the updated
    /// discriminator.
    pub fn step(&mut self) -> Result<IterationStats> {
        let batch = self.next_real_batch();
        let codes = self.sample_codes(batch.len());
        let latent_hash = {
            let stacked = ndarray::concatenate(Axis(0), &codes.iter().map(|c| c.view()).collect::<Vec<_>>())
                .expect("equal widths");
            hash_array(&stacked)
        };
        let sphere = self.sphere.coords().clone();
        let views: Vec<_> = codes.iter().map(|c| c.view()).collect();
        let (fakes, trace) = self.generator.forward_batch(sphere.view(), &views)?;

        let reals: Vec<Array2<f32>> = batch.iter().map(|&i| self.repository[i].clone()).collect();
        let real_refs: Vec<&Array2<f32>> = reals.iter().collect();
        let loss_d = self.discriminator_step(&fakes, &real_refs)?;

        let loss_g = self.generator_step(&trace, &fakes)?;

        self.iteration += 1;
        if loss_d < COLLAPSE_THRESHOLD {
            self.collapse_run += 1;
        } else {
            self.collapse_run = 0;
        }
        if !loss_d.is_finite() || !loss_g.is_finite() {
            return Err(Error::invalid(
                "training",
                format!("non-finite loss at iteration {}: D={loss_d} G={loss_g}", self.iteration),
            ));
        }
        Ok(IterationStats {
            iteration: self.iteration,
            epoch: self.epoch,
            loss_d,
            loss_g,
            latent_hash,
            sphere_hash: self.sphere_hash.clone(),
            collapse_run: self.collapse_run,
        })
    }
}

/// Train from scratch until the configured epochs (or iteration cap) elapse.
pub fn train(
    config: TrainingConfig,
    repository: &[PointCloud],
    observer: &mut dyn TrainingObserver,
) -> Result<Checkpoint> {
    let total = config.total_iterations(repository.len());
    let every = config.checkpoint_every;
    let mut trainer = Trainer::new(config, repository)?;
    info!(
        "training {} iterations on {} shapes (N={}, d={})",
        total,
        repository.len(),
        trainer.config.n_points,
        trainer.config.latent_dim
    );
    while trainer.iteration < total {
        let stats = trainer.step()?;
        if stats.iteration % 50 == 0 {
            debug!(
                "iter {} epoch {} loss_d {:.5} loss_g {:.5}",
                stats.iteration, stats.epoch, stats.loss_d, stats.loss_g
            );
        }
        observer.on_iteration(&stats);
        if every > 0 && stats.iteration % every == 0 {
            observer.on_checkpoint(&trainer.checkpoint())?;
        }
    }
    Ok(trainer.checkpoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::hash_parameters;
    use crate::sphere::sample_sphere;
    use rand::Rng;

    fn tiny_config() -> TrainingConfig {
        TrainingConfig {
            n_points: 32,
            latent_dim: 4,
            k: 4,
            batch_size: 2,
            epochs: 2,
            learning_rate: 1e-3,
            generator_widths: GeneratorWidths {
                embed_hidden: 8,
                embed_width: 8,
                gam1_hidden: 4,
                gam1_out: 4,
                gam2_hidden: 8,
                gam2_out: 8,
                global_width: 8,
                head: vec![8],
            },
            discriminator_widths: DiscriminatorWidths {
                backbone: vec![8, 16],
                shape_hidden: vec![8],
                point_hidden: vec![8],
            },
            ..TrainingConfig::default()
        }
    }

    fn tiny_repo(count: usize) -> Vec<PointCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..count)
            .map(|_| {
                let s = sample_sphere(32, rng.random()).unwrap();
                let scale: f32 = rng.random_range(0.5..1.0);
                PointCloud::new(s.coords().mapv(|v| v * scale)).unwrap()
            })
            .collect()
    }

    #[test]
    fn defaults_follow_reference_settings() {
        let c = TrainingConfig::default();
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.epochs, 300);
        assert_eq!(c.k, 20);
        assert_eq!(c.n_points, 2048);
        assert_eq!(c.latent_dim, 128);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for c in [
            TrainingConfig { lambda: -1.0, ..tiny_config() },
            TrainingConfig { beta: f64::NAN, ..tiny_config() },
            TrainingConfig { learning_rate: 0.0, ..tiny_config() },
            TrainingConfig { epochs: 0, ..tiny_config() },
            TrainingConfig { k: 32, ..tiny_config() },
        ] {
            assert!(matches!(c.validate(), Err(Error::InvalidArgument { .. })));
        }
    }

    #[test]
    fn wrong_point_count_rejected_before_training() {
        let mut repo = tiny_repo(2);
        repo.push(PointCloud::new(Array2::zeros((31, 3))).unwrap());
        assert!(matches!(
            train(tiny_config(), &repo, &mut Silent),
            Err(Error::InvalidArgument { .. })
        ));
    }

    #[test]
    fn runs_epochs_with_changing_latents_and_fixed_sphere() {
        let repo = tiny_repo(3);
        let mut hist = History::default();
        let ck = train(tiny_config(), &repo, &mut hist).unwrap();
        assert_eq!(hist.stats.len(), 4);
        assert_eq!(ck.iteration, 4);
        for w in hist.stats.windows(2) {
            assert_ne!(w[0].latent_hash, w[1].latent_hash);
            assert_eq!(w[0].sphere_hash, w[1].sphere_hash);
        }
        assert!(hist.stats.iter().all(|s| s.loss_d.is_finite() && s.loss_g.is_finite()));
        assert_eq!(hist.stats.last().unwrap().epoch, 1);
    }

    #[test]
    fn steps_touch_only_their_network() {
        let repo = tiny_repo(2);
        let mut t = Trainer::new(tiny_config(), &repo).unwrap();
        let g_before = hash_parameters(t.generator());
        let d_before = hash_parameters(t.discriminator());
        let (fakes, trace) = t.generate_batch(1).unwrap();
        let real = repo[0].points().clone();
        t.discriminator_step(&fakes, &[&real]).unwrap();
        assert_eq!(hash_parameters(t.generator()), g_before);
        let d_after = hash_parameters(t.discriminator());
        assert_ne!(d_after, d_before);
        t.generator_step(&trace, &fakes).unwrap();
        assert_eq!(hash_parameters(t.discriminator()), d_after);
        assert_ne!(hash_parameters(t.generator()), g_before);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let repo = tiny_repo(2);
        let a = train(tiny_config(), &repo, &mut Silent).unwrap();
        let b = train(tiny_config(), &repo, &mut Silent).unwrap();
        assert_eq!(hash_parameters(&a.generator), hash_parameters(&b.generator));
        assert_eq!(hash_parameters(&a.discriminator), hash_parameters(&b.discriminator));
    }
}
