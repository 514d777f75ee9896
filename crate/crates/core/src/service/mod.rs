//! In-memory editing sessions over read-only checkpoints, plus an HTTP
//! front end in [`http`].

pub mod http;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, encode_cloud};
use crate::digest::hash_array;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::geometry::PointCloud;
use crate::manipulation::{
    compose_parts, correspondence_colors, edit_part_random, interp_part, EditMode, SelectionMask,
};
use crate::sphere::{pack_perpoint, pack_uniform, sample_code, SpherePoints};
use crate::training::Checkpoint;

/// A loaded checkpoint shared by every session that references it.
pub struct LoadedModel {
    generator: Generator<f32>,
    sphere: SpherePoints,
    colors: Vec<f32>,
}

impl LoadedModel {
    pub fn new(ckpt: &Checkpoint) -> Result<Self> {
        let sphere = ckpt.sphere()?;
        let colors = correspondence_colors(&sphere).iter().copied().collect();
        Ok(LoadedModel {
            generator: ckpt.generator.clone(),
            sphere,
            colors,
        })
    }

    pub fn n(&self) -> usize {
        self.sphere.n()
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.arch.latent_dim
    }

    fn generate(&self, codes: &Array2<f32>) -> Result<PointCloud> {
        self.generator.generate(&pack_perpoint(&self.sphere, codes.clone())?)
    }
}

#[derive(Debug, Clone)]
struct Session {
    checkpoint: String,
    codes: Array2<f32>,
    selection: SelectionMask,
    version: u64,
    saved: BTreeMap<String, Array2<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub checkpoint: String,
    pub n: usize,
    pub latent_dim: usize,
    pub version: u64,
    pub saved_states: Vec<String>,
}

/// Generated cloud for the session's current codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudPayload {
    pub session: String,
    pub version: u64,
    pub n: usize,
    /// Row-major `N x 3`.
    pub points: Vec<f32>,
    /// Row-major `N x 3` RGB in `[0, 1]`, fixed per prior point.
    pub colors: Vec<f32>,
    pub selection: Vec<usize>,
    /// Hash of the current latent rows.
    pub latent_hash: String,
}

/// Where a code matrix comes from: another live session, or a state saved
/// in the acting session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeSource {
    Session(String),
    State(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposeSource {
    /// `None` selects the acting session's current codes.
    pub from: Option<CodeSource>,
    pub indices: Vec<usize>,
}

pub struct SessionManager {
    seed: u64,
    created: u64,
    models: HashMap<String, Arc<LoadedModel>>,
    sessions: HashMap<String, Session>,
    closed: HashSet<String>,
}

impl SessionManager {
    /// Session ids and default latent draws are derived from `seed`, so a
    /// replayed call sequence reproduces every payload.
    pub fn new(seed: u64) -> Self {
        SessionManager {
            seed,
            created: 0,
            models: HashMap::new(),
            sessions: HashMap::new(),
            closed: HashSet::new(),
        }
    }

    pub fn add_checkpoint(&mut self, id: impl Into<String>, ckpt: &Checkpoint) -> Result<()> {
        self.models.insert(id.into(), Arc::new(LoadedModel::new(ckpt)?));
        Ok(())
    }

    pub fn checkpoint_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.models.keys().cloned().collect();
        ids.sort();
        ids
    }

    fn model(&self, id: &str) -> Result<&Arc<LoadedModel>> {
        self.models
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("checkpoint `{id}`")))
    }

    fn session(&self, id: &str) -> Result<&Session> {
        match self.sessions.get(id) {
            Some(s) => Ok(s),
            None if self.closed.contains(id) => Err(Error::Gone(format!("session `{id}` was closed"))),
            None => Err(Error::NotFound(format!("session `{id}`"))),
        }
    }

    fn session_mut(&mut self, id: &str, expected: Option<u64>) -> Result<&mut Session> {
        self.session(id)?;
        let s = self.sessions.get_mut(id).expect("checked above");
        if let Some(v) = expected {
            if v != s.version {
                return Err(Error::VersionConflict {
                    expected: v,
                    current: s.version,
                });
            }
        }
        Ok(s)
    }

    /// Fresh session holding one uniform latent code. `seed` defaults to a
    /// value derived from the manager seed and the new id.
    pub fn create_session(&mut self, checkpoint: &str, seed: Option<u64>) -> Result<SessionInfo> {
        let model = Arc::clone(self.model(checkpoint)?);
        let id = loop {
            self.created += 1;
            let raw = derive_seed(self.seed, &format!("session-{}", self.created));
            let id = format!("sess-{:08x}", raw as u32);
            if !self.sessions.contains_key(&id) && !self.closed.contains(&id) {
                break id;
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or_else(|| derive_seed(self.seed, &id)));
        let z = sample_code(model.latent_dim(), &mut rng)?;
        let codes = pack_uniform(&model.sphere, &z).into_codes();
        self.sessions.insert(
            id.clone(),
            Session {
                checkpoint: checkpoint.to_string(),
                codes,
                selection: SelectionMask::empty(model.n()),
                version: 0,
                saved: BTreeMap::new(),
            },
        );
        self.info(&id)
    }

    pub fn info(&self, id: &str) -> Result<SessionInfo> {
        let s = self.session(id)?;
        let model = self.model(&s.checkpoint)?;
        Ok(SessionInfo {
            id: id.to_string(),
            checkpoint: s.checkpoint.clone(),
            n: model.n(),
            latent_dim: model.latent_dim(),
            version: s.version,
            saved_states: s.saved.keys().cloned().collect(),
        })
    }

    pub fn close_session(&mut self, id: &str) -> Result<()> {
        self.session(id)?;
        self.sessions.remove(id);
        self.closed.insert(id.to_string());
        Ok(())
    }

    pub fn codes(&self, id: &str) -> Result<&Array2<f32>> {
        Ok(&self.session(id)?.codes)
    }

    pub fn generate(&self, id: &str) -> Result<CloudPayload> {
        let s = self.session(id)?;
        let model = self.model(&s.checkpoint)?;
        let cloud = model.generate(&s.codes)?;
        Ok(CloudPayload {
            session: id.to_string(),
            version: s.version,
            n: model.n(),
            points: cloud.points().iter().copied().collect(),
            colors: model.colors.clone(),
            selection: s.selection.indices().to_vec(),
            latent_hash: hash_array(&s.codes),
        })
    }

    pub fn export_sppc(&self, id: &str) -> Result<Vec<u8>> {
        let s = self.session(id)?;
        Ok(encode_cloud(&self.model(&s.checkpoint)?.generate(&s.codes)?))
    }

    fn mask_for(&self, id: &str, indices: Option<Vec<usize>>) -> Result<SelectionMask> {
        let s = self.session(id)?;
        match indices {
            Some(ix) => SelectionMask::new(s.codes.nrows(), ix),
            None => Ok(s.selection.clone()),
        }
    }

    fn resolve(&self, id: &str, source: &CodeSource) -> Result<Array2<f32>> {
        let me = self.session(id)?;
        let codes = match source {
            CodeSource::Session(other) => {
                let o = self.session(other)?;
                if o.checkpoint != me.checkpoint {
                    return Err(Error::invalid(
                        "source",
                        format!("session `{other}` uses checkpoint `{}`, not `{}`", o.checkpoint, me.checkpoint),
                    ));
                }
                o.codes.clone()
            }
            CodeSource::State(name) => me
                .saved
                .get(name)
                .cloned()
                .ok_or_else(|| Error::NotFound(format!("saved state `{name}`")))?,
        };
        Ok(codes)
    }

    fn commit(&mut self, id: &str, expected: Option<u64>, codes: Option<Array2<f32>>, selection: Option<SelectionMask>) -> Result<CloudPayload> {
        let s = self.session_mut(id, expected)?;
        if let Some(c) = codes {
            s.codes = c;
        }
        if let Some(m) = selection {
            s.selection = m;
        }
        s.version += 1;
        self.generate(id)
    }

    pub fn select(&mut self, id: &str, expected: Option<u64>, indices: Vec<usize>) -> Result<CloudPayload> {
        self.session_mut(id, expected)?;
        let mask = self.mask_for(id, Some(indices))?;
        self.commit(id, expected, None, Some(mask))
    }

    /// Resample the masked rows (default: the current selection).
    pub fn edit(
        &mut self,
        id: &str,
        expected: Option<u64>,
        mode: EditMode,
        seed: u64,
        indices: Option<Vec<usize>>,
    ) -> Result<CloudPayload> {
        self.session_mut(id, expected)?;
        let mask = self.mask_for(id, indices)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes = edit_part_random(&self.session(id)?.codes, &mask, mode, &mut rng)?;
        self.commit(id, expected, Some(codes), None)
    }

    /// Blend from `base` (default: current codes) towards `target` on the
    /// masked rows (default: every row).
    pub fn interpolate(
        &mut self,
        id: &str,
        expected: Option<u64>,
        base: Option<&CodeSource>,
        target: &CodeSource,
        indices: Option<Vec<usize>>,
        alpha: f64,
    ) -> Result<CloudPayload> {
        self.session_mut(id, expected)?;
        let n = self.session(id)?.codes.nrows();
        let mask = match indices {
            Some(ix) => SelectionMask::new(n, ix)?,
            None => SelectionMask::all(n),
        };
        let a = match base {
            Some(src) => self.resolve(id, src)?,
            None => self.session(id)?.codes.clone(),
        };
        let b = self.resolve(id, target)?;
        let codes = interp_part(&a, &b, &mask, alpha)?;
        self.commit(id, expected, Some(codes), None)
    }

    /// Assemble rows from several sources. Overlapping masks are reported
    /// as [`Error::OverlappingMasks`].
    pub fn compose(&mut self, id: &str, expected: Option<u64>, sources: &[ComposeSource]) -> Result<CloudPayload> {
        self.session_mut(id, expected)?;
        let n = self.session(id)?.codes.nrows();
        let mut owned = Vec::with_capacity(sources.len());
        for src in sources {
            let codes = match &src.from {
                Some(s) => self.resolve(id, s)?,
                None => self.session(id)?.codes.clone(),
            };
            owned.push((codes, SelectionMask::new(n, src.indices.clone())?));
        }
        let refs: Vec<(&Array2<f32>, &SelectionMask)> = owned.iter().map(|(c, m)| (c, m)).collect();
        let codes = compose_parts(&refs)?;
        self.commit(id, expected, Some(codes), None)
    }

    pub fn save_state(&mut self, id: &str, name: &str) -> Result<SessionInfo> {
        if name.is_empty() {
            return Err(Error::invalid("name", "state name must not be empty"));
        }
        let s = self.session_mut(id, None)?;
        s.saved.insert(name.to_string(), s.codes.clone());
        self.info(id)
    }

    pub fn load_state(&mut self, id: &str, expected: Option<u64>, name: &str) -> Result<CloudPayload> {
        self.session_mut(id, expected)?;
        let codes = self.resolve(id, &CodeSource::State(name.to_string()))?;
        self.commit(id, expected, Some(codes), None)
    }
}
