//! Frozen point encoder used for the feature-space distance.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{RepoEntry, ShapeRepository};
use crate::digest::hash_parameters;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{
    leaky_relu_backward, leaky_relu_of, max_pool_rows, max_pool_rows_backward, prefixed, Adam, AdamConfig, Dense,
    Parameters,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    /// Per-point layer widths; the last one is the feature dimension.
    pub widths: Vec<usize>,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            widths: vec![64, 128, 32],
            seed: 0,
            epochs: 40,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ExtractorKind {
    /// Seeded random weights; used when fewer than two classes exist.
    Random,
    /// Trained as a classifier over these class names, then frozen.
    Trained { classes: Vec<String> },
}

/// Per-point MLP followed by a channel max-pool. Parameters never change
/// after construction, and `hash` identifies them.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    layers: Vec<Dense<f32>>,
    kind: ExtractorKind,
    hash: String,
}

struct Encoder {
    layers: Vec<Dense<f32>>,
    classifier: Dense<f32>,
}

impl Parameters<f32> for Encoder {
    fn named_tensors(&self) -> Vec<(String, &Array2<f32>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(prefixed(&format!("layer{i}"), l.named_tensors()));
        }
        out.extend(prefixed("classifier", self.classifier.named_tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f32>> {
        let mut out = Vec::new();
        for l in self.layers.iter_mut() {
            out.extend(l.tensors_mut());
        }
        out.extend(self.classifier.tensors_mut());
        out
    }
}

struct LayersRef<'a>(&'a [Dense<f32>]);

impl Parameters<f32> for LayersRef<'_> {
    fn named_tensors(&self) -> Vec<(String, &Array2<f32>)> {
        let mut out = Vec::new();
        for (i, l) in self.0.iter().enumerate() {
            out.extend(prefixed(&format!("layer{i}"), l.named_tensors()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f32>> {
        Vec::new()
    }
}

/// Hidden layers use LeakyReLU, the last is linear; then max over points.
fn encode(layers: &[Dense<f32>], points: &Array2<f32>) -> (Vec<Array2<f32>>, Vec<Array2<f32>>, Array1<f32>, Vec<usize>) {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pres = Vec::with_capacity(layers.len());
    let mut x = points.clone();
    for (i, l) in layers.iter().enumerate() {
        let pre = l.forward(x.view());
        inputs.push(x);
        x = if i + 1 < layers.len() { leaky_relu_of(&pre) } else { pre.clone() };
        pres.push(pre);
    }
    let (pooled, arg) = max_pool_rows(x.view());
    (inputs, pres, pooled, arg)
}

fn softmax_ce_grad(logits: &Array1<f32>, target: usize) -> (f64, Array1<f32>) {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&v| ((v - max) as f64).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = -(exps[target] / z).ln();
    let grad = Array1::from_iter(
        exps.iter()
            .enumerate()
            .map(|(i, e)| (e / z - if i == target { 1.0 } else { 0.0 }) as f32),
    );
    (loss, grad)
}

/// Class name for an entry: a `toy:<family>` source tag, else the leading
/// directory of the id, else the repository category.
pub fn class_of(entry: &RepoEntry, category: &str) -> String {
    if let Some(tag) = entry.source.as_deref().and_then(|s| s.strip_prefix("toy:")) {
        return tag.to_string();
    }
    match entry.id.split_once('/') {
        Some((head, _)) => head.to_string(),
        None => category.to_string(),
    }
}

impl FeatureExtractor {
    pub fn random(config: &ExtractorConfig) -> Result<Self> {
        let layers = Self::init_layers(config)?;
        Ok(Self::freeze(layers, ExtractorKind::Random))
    }

    /// Train on a classification proxy over the repository's classes and
    /// freeze. Falls back to [`FeatureExtractor::random`] with one class.
    pub fn for_repository(repo: &ShapeRepository, config: &ExtractorConfig) -> Result<Self> {
        let mut by_class: BTreeMap<String, Vec<&PointCloud>> = BTreeMap::new();
        for e in repo.entries() {
            by_class.entry(class_of(e, repo.category())).or_default().push(&e.cloud);
        }
        if by_class.len() < 2 {
            return Self::random(config);
        }
        let classes: Vec<String> = by_class.keys().cloned().collect();
        let samples: Vec<(&PointCloud, usize)> = by_class
            .values()
            .enumerate()
            .flat_map(|(c, clouds)| clouds.iter().map(move |cl| (*cl, c)))
            .collect();
        Self::train(&samples, classes, config)
    }

    /// Train on explicit `(cloud, class index)` pairs.
    pub fn train(samples: &[(&PointCloud, usize)], classes: Vec<String>, config: &ExtractorConfig) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("samples", "no training clouds"));
        }
        if let Some((_, c)) = samples.iter().find(|(_, c)| *c >= classes.len()) {
            return Err(Error::invalid("samples", format!("class index {c} out of range")));
        }
        let layers = Self::init_layers(config)?;
        let feat = *config.widths.last().expect("validated non-empty");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_fea7);
        let mut enc = Encoder {
            classifier: Dense::init(feat, classes.len(), &mut rng),
            layers,
        };
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: config.learning_rate,
                ..AdamConfig::default()
            },
            &enc,
        );
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut grad = Encoder {
                layers: enc.layers.iter().map(Dense::zeros_like).collect(),
                classifier: enc.classifier.zeros_like(),
            };
            for &s in &order {
                let (cloud, target) = samples[s];
                let (inputs, pres, pooled, arg) = encode(&enc.layers, cloud.points());
                let pooled2 = pooled.clone().insert_axis(Axis(0));
                let logits = enc.classifier.forward(pooled2.view()).index_axis_move(Axis(0), 0);
                let (_, g_logits) = softmax_ce_grad(&logits, target);
                let g_logits = (g_logits / samples.len() as f32).insert_axis(Axis(0));
                let g_pooled = enc
                    .classifier
                    .backward(pooled2.view(), g_logits.view(), &mut grad.classifier)
                    .index_axis_move(Axis(0), 0);
                let mut g = max_pool_rows_backward(&g_pooled, &arg, cloud.len());
                for i in (0..enc.layers.len()).rev() {
                    if i + 1 < enc.layers.len() {
                        leaky_relu_backward(pres[i].view(), &mut g);
                    }
                    g = enc.layers[i].backward(inputs[i].view(), g.view(), &mut grad.layers[i]);
                }
            }
            adam.update(&mut enc, &grad);
        }
        Ok(Self::freeze(enc.layers, ExtractorKind::Trained { classes }))
    }

    fn init_layers(config: &ExtractorConfig) -> Result<Vec<Dense<f32>>> {
        if config.widths.is_empty() || config.widths.contains(&0) {
            return Err(Error::invalid("widths", "need at least one non-zero layer width"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fan_in = 3;
        let mut layers = Vec::new();
        for &w in &config.widths {
            layers.push(Dense::init(fan_in, w, &mut rng));
            fan_in = w;
        }
        Ok(layers)
    }

    fn freeze(layers: Vec<Dense<f32>>, kind: ExtractorKind) -> Self {
        let hash = hash_parameters(&LayersRef(&layers));
        FeatureExtractor { layers, kind, hash }
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn kind(&self) -> &ExtractorKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn features(&self, cloud: &PointCloud) -> Result<Array1<f64>> {
        if cloud.is_empty() {
            return Err(Error::invalid("cloud", "cannot encode an empty cloud"));
        }
        let (_, _, pooled, _) = encode(&self.layers, cloud.points());
        Ok(pooled.mapv(f64::from))
    }

    /// One row per cloud.
    pub fn feature_matrix(&self, clouds: &[PointCloud]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((clouds.len(), self.dim()));
        for (i, c) in clouds.iter().enumerate() {
            out.row_mut(i).assign(&self.features(c)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_toy_repository, ToyFamily};

    #[test]
    fn random_is_seeded_and_hashed() {
        let cfg = ExtractorConfig::default();
        let a = FeatureExtractor::random(&cfg).unwrap();
        let b = FeatureExtractor::random(&cfg).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = FeatureExtractor::random(&ExtractorConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.dim(), 32);
    }

    #[test]
    fn features_are_permutation_invariant() {
        let repo = make_toy_repository(&ToyFamily::ALL, 1, 64, 0).unwrap();
        let cloud = &repo.entries()[0].cloud;
        let rev = PointCloud::new(cloud.points().slice(ndarray::s![..;-1, ..]).to_owned()).unwrap();
        let fx = FeatureExtractor::random(&ExtractorConfig::default()).unwrap();
        assert_eq!(fx.features(cloud).unwrap(), fx.features(&rev).unwrap());
    }

    #[test]
    fn trained_extractor_separates_toy_families() {
        let repo = make_toy_repository(&ToyFamily::ALL, 8, 128, 3).unwrap();
        let cfg = ExtractorConfig::default();
        let fx = FeatureExtractor::for_repository(&repo, &cfg).unwrap();
        assert_eq!(
            fx.kind(),
            &ExtractorKind::Trained {
                classes: vec!["ellipsoid".into(), "legged_box".into()]
            }
        );
        let rnd = FeatureExtractor::random(&cfg).unwrap();
        assert_ne!(fx.hash(), rnd.hash());
        let again = FeatureExtractor::for_repository(&repo, &cfg).unwrap();
        assert_eq!(fx.hash(), again.hash());
    }

    #[test]
    fn single_class_falls_back_to_random() {
        let repo = make_toy_repository(&[ToyFamily::Ellipsoid], 3, 64, 0).unwrap();
        let fx = FeatureExtractor::for_repository(&repo, &ExtractorConfig::default()).unwrap();
        assert_eq!(fx.kind(), &ExtractorKind::Random);
    }

    #[test]
    fn softmax_gradient_matches_finite_difference() {
        let logits = Array1::from(vec![0.3f32, -1.2, 0.8]);
        let (_, g) = softmax_ce_grad(&logits, 1);
        for i in 0..3 {
            let mut up = logits.clone();
            up[i] += 1e-3;
            let mut dn = logits.clone();
            dn[i] -= 1e-3;
            let fd = (softmax_ce_grad(&up, 1).0 - softmax_ce_grad(&dn, 1).0) / 2e-3;
            assert!((fd - g[i] as f64).abs() < 1e-3);
        }
    }
}
