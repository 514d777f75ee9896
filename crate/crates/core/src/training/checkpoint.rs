//! Single-file checkpoint container. Layout (all integers little-endian):
//!
//! ```text
//! "SPCK" | u32 version | u32 manifest_len | manifest (UTF-8 key=value lines)
//! u32 tensor_count | per tensor: u32 name_len | name | u32 rows | u32 cols | rows*cols f32
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainingConfig;
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::nn::Parameters;
use crate::dataset::derive_seed;
use crate::geometry::PointCloud;
use crate::sphere::{pack_uniform, sample_code, sample_prior, LatentCode, SpherePoints};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub iteration: u64,
}

impl Checkpoint {
    /// The fixed prior the generator was trained with.
    pub fn sphere(&self) -> Result<SpherePoints> {
        sample_prior(self.config.prior_kind, self.config.n_points, self.config.sphere_seed)
    }

    pub fn n_points(&self) -> usize {
        self.config.n_points
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn expect_points(&self, n: usize) -> Result<()> {
        if n != self.config.n_points {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint was trained with N={}, requested N={n}",
                self.config.n_points
            )));
        }
        Ok(())
    }

    /// Latent code for generated shape `index` under `seed`. Each index has
    /// its own stream, so shape `i` does not depend on how many are drawn.
    pub fn shape_code(&self, seed: u64, index: usize) -> Result<LatentCode> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("shape-{index}")));
        sample_code(self.config.latent_dim, &mut rng)
    }

    /// `count` shapes from uniform latent codes.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<PointCloud>> {
        let sphere = self.sphere()?;
        (0..count)
            .map(|i| self.generator.generate(&pack_uniform(&sphere, &self.shape_code(seed, i)?)))
            .collect()
    }

    /// Manifest entries in file order.
    pub fn manifest(&self) -> Vec<(String, String)> {
        let mut m = vec![
            ("format_version".to_string(), CHECKPOINT_VERSION.to_string()),
            ("iteration".to_string(), self.iteration.to_string()),
            ("sphere_n".to_string(), self.generator.prior.n.to_string()),
            ("sphere_seed".to_string(), self.generator.prior.seed.to_string()),
            ("prior_kind".to_string(), self.generator.prior.kind.as_str().to_string()),
            ("discriminator_n".to_string(), self.discriminator.n_points.to_string()),
        ];
        let value = serde_json::to_value(&self.config).expect("config serializes");
        if let serde_json::Value::Object(map) = value {
            for (k, v) in map {
                m.push((format!("config.{k}"), v.to_string()));
            }
        }
        m
    }

    fn tensors(&self) -> Vec<(String, &Array2<f32>)> {
        let mut v: Vec<(String, &Array2<f32>)> = self
            .generator
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (format!("generator.{n}"), t))
            .collect();
        v.extend(
            self.discriminator
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (format!("discriminator.{n}"), t)),
        );
        v
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let manifest: String = self.manifest().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        let tensors = self.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::parse("not a checkpoint: bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::parse("manifest is not UTF-8"))?;
        let manifest = parse_manifest(text)?;
        let config = config_from_manifest(&manifest)?;
        config
            .validate()
            .map_err(|e| Error::parse(format!("manifest config invalid: {e}")))?;

        let get_u64 = |key: &str| -> Result<u64> {
            manifest
                .get(key)
                .ok_or_else(|| Error::parse(format!("manifest missing {key}")))?
                .parse()
                .map_err(|_| Error::parse(format!("manifest {key} is not an integer")))
        };
        let iteration = get_u64("iteration")?;
        let sphere_n = get_u64("sphere_n")? as usize;
        let sphere_seed = get_u64("sphere_seed")?;
        let disc_n = get_u64("discriminator_n")? as usize;
        let kind = manifest
            .get("prior_kind")
            .ok_or_else(|| Error::parse("manifest missing prior_kind"))?;
        if sphere_n != config.n_points || disc_n != config.n_points {
            return Err(Error::CheckpointMismatch(format!(
                "declared n_points {} disagrees with stored prior size {sphere_n} / discriminator size {disc_n}",
                config.n_points
            )));
        }
        if sphere_seed != config.sphere_seed || kind != config.prior_kind.as_str() {
            return Err(Error::CheckpointMismatch("prior description disagrees with config".into()));
        }

        let count = r.u32()? as usize;
        let mut stored = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::parse("tensor name is not UTF-8"))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let elems = rows
                .checked_mul(cols)
                .and_then(|e| e.checked_mul(4))
                .ok_or_else(|| Error::parse("tensor size overflow"))?;
            let raw = r.take(elems)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Array2::from_shape_vec((rows, cols), data).expect("sized above");
            if stored.insert(name.clone(), t).is_some() {
                return Err(Error::parse(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::parse("trailing bytes after tensors"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut generator = Generator::init(config.generator_arch(), config.prior_spec(), &mut rng)?;
        let mut discriminator = Discriminator::init(config.discriminator_arch(), config.n_points, &mut rng)?;
        fill("generator", &mut generator, &mut stored)?;
        fill("discriminator", &mut discriminator, &mut stored)?;
        if let Some(extra) = stored.keys().next() {
            return Err(Error::CheckpointMismatch(format!("unexpected tensor {extra}")));
        }
        Ok(Checkpoint {
            config,
            generator,
            discriminator,
            iteration,
        })
    }
}

fn fill<P: Parameters<f32>>(prefix: &str, params: &mut P, stored: &mut BTreeMap<String, Array2<f32>>) -> Result<()> {
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(params.tensors_mut()) {
        let key = format!("{prefix}.{name}");
        let t = stored
            .remove(&key)
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {key}")))?;
        if t.dim() != slot.dim() {
            return Err(Error::CheckpointMismatch(format!(
                "tensor {key} has shape {:?}, architecture expects {:?}",
                t.dim(),
                slot.dim()
            )));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(format!("tensor {key} contains non-finite values")));
        }
        *slot = t;
    }
    Ok(())
}

fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(format!("manifest line {} has no '='", i + 1)))?;
        if m.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::parse(format!("duplicate manifest key {k}")));
        }
    }
    Ok(m)
}

fn config_from_manifest(m: &BTreeMap<String, String>) -> Result<TrainingConfig> {
    let mut obj = serde_json::Map::new();
    for (k, v) in m {
        if let Some(field) = k.strip_prefix("config.") {
            let value: serde_json::Value =
                serde_json::from_str(v).map_err(|e| Error::parse(format!("manifest {k}: {e}")))?;
            obj.insert(field.to_string(), value);
        }
    }
    if obj.is_empty() {
        return Err(Error::parse("manifest has no config entries"));
    }
    serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| Error::parse(format!("manifest config: {e}")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::parse("checkpoint truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Write atomically via a sibling temporary file.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("spck.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&ckpt.to_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
