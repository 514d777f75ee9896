//! Shape repositories: mesh ingestion, cloud files and procedural data.

mod sppc;
mod toy;

pub use sppc::{decode_cloud, encode_cloud, load_cloud, save_cloud, LABEL_MAGIC, SPPC_MAGIC, SPPC_VERSION};
pub use toy::{ellipsoid_mesh, legged_box_mesh, make_toy_repository, ToyFamily};

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::digest::hash_bytes;
use crate::error::{Error, Result};
use crate::geometry::{normalize_unit_ball, sample_mesh, PointCloud, TriangleMesh};

pub const MANIFEST_FILE: &str = "repository.json";
pub const NORMALIZATION: &str = "centroid_max_norm";

/// Per-item seed from a master seed and a stable id, so adding items never
/// perturbs the others.
pub fn derive_seed(master: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes([d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepoEntry {
    pub id: String,
    pub cloud: PointCloud,
    /// Source mesh path or generator tag.
    pub source: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeRepository {
    category: String,
    entries: Vec<RepoEntry>,
}

impl ShapeRepository {
    /// Ids must be unique and all clouds must share one point count.
    pub fn new(category: impl Into<String>, entries: Vec<RepoEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::invalid("entries", format!("duplicate id `{}`", e.id)));
            }
        }
        if let Some(first) = entries.first() {
            if let Some(bad) = entries.iter().find(|e| e.cloud.len() != first.cloud.len()) {
                return Err(Error::invalid(
                    "entries",
                    format!(
                        "`{}` has {} points, `{}` has {}",
                        bad.id,
                        bad.cloud.len(),
                        first.id,
                        first.cloud.len()
                    ),
                ));
            }
        }
        Ok(ShapeRepository {
            category: category.into(),
            entries,
        })
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn entries(&self) -> &[RepoEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn clouds(&self) -> Vec<PointCloud> {
        self.entries.iter().map(|e| e.cloud.clone()).collect()
    }

    pub fn n_points(&self) -> Option<usize> {
        self.entries.first().map(|e| e.cloud.len())
    }

    /// Every cloud has max norm `1 ± 1e-6` about the origin.
    pub fn check_normalized(&self) -> Result<()> {
        for e in &self.entries {
            let max = e
                .cloud
                .points()
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            if (max - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(
                    "repository",
                    format!("`{}` has max norm {max}, expected 1", e.id),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub seed: u64,
    pub source: Option<String>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepositoryManifest {
    pub category: String,
    pub n_points: usize,
    pub normalization: String,
    pub entries: Vec<ManifestEntry>,
}

fn file_name_for(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    format!("{safe}.sppc")
}

/// Write one SPPC file per entry plus a manifest listing ids, seeds and
/// content hashes. Output is byte-identical for identical repositories.
pub fn save_repository(repo: &ShapeRepository, dir: &Path) -> Result<RepositoryManifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(repo.len());
    let mut used = HashSet::new();
    for e in repo.entries() {
        let mut file = file_name_for(&e.id);
        if !used.insert(file.clone()) {
            file = format!("{}-{}.sppc", file.trim_end_matches(".sppc"), &hash_bytes(e.id.as_bytes())[..8]);
            used.insert(file.clone());
        }
        let bytes = encode_cloud(&e.cloud);
        fs::write(dir.join(&file), &bytes)?;
        entries.push(ManifestEntry {
            id: e.id.clone(),
            file,
            seed: e.seed,
            source: e.source.clone(),
            sha256: hash_bytes(&bytes),
        });
    }
    let manifest = RepositoryManifest {
        category: repo.category().to_string(),
        n_points: repo.n_points().unwrap_or(0),
        normalization: NORMALIZATION.to_string(),
        entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::parse(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(manifest)
}

/// Load a repository directory. With a manifest, entries follow it and file
/// hashes are verified; otherwise every `.sppc` file is loaded in name order
/// with its stem as id.
pub fn load_repository(dir: &Path) -> Result<ShapeRepository> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path)?;
        let manifest: RepositoryManifest =
            serde_json::from_str(&text).map_err(|e| Error::parse(format!("{}: {e}", manifest_path.display())))?;
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for m in manifest.entries {
            let bytes = fs::read(dir.join(&m.file))?;
            if hash_bytes(&bytes) != m.sha256 {
                return Err(Error::parse(format!("{} does not match its manifest hash", m.file)));
            }
            entries.push(RepoEntry {
                id: m.id,
                cloud: decode_cloud(&bytes)?,
                source: m.source,
                seed: m.seed,
            });
        }
        return ShapeRepository::new(manifest.category, entries);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sppc"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::NotFound(format!("no .sppc files in {}", dir.display())));
    }
    let mut entries = Vec::with_capacity(files.len());
    for p in files {
        entries.push(RepoEntry {
            id: p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            cloud: load_cloud(&p)?,
            source: Some(p.display().to_string()),
            seed: 0,
        });
    }
    let category = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ShapeRepository::new(category, entries)
}

fn collect_meshes(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_meshes(root, &path, out)?;
        } else if path
            .extension()
            .is_some_and(|x| x.eq_ignore_ascii_case("obj"))
        {
            let rel = path.strip_prefix(root).unwrap_or(&path).with_extension("");
            let id = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.push((id, path));
        }
    }
    Ok(())
}

/// Sample `n` points from every OBJ mesh below `mesh_dir` and normalize each
/// cloud to the unit ball. Unreadable or degenerate meshes are skipped with a
/// warning.
pub fn ingest(mesh_dir: &Path, n: usize, seed: u64) -> Result<ShapeRepository> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let mut meshes = Vec::new();
    collect_meshes(mesh_dir, mesh_dir, &mut meshes)?;
    meshes.sort();
    let mut entries = Vec::new();
    for (id, path) in meshes {
        let shape_seed = derive_seed(seed, &id);
        let mut rng = ChaCha8Rng::seed_from_u64(shape_seed);
        let sampled = TriangleMesh::read_obj(&path).and_then(|m| sample_mesh(&m, n, &mut rng));
        match sampled {
            Ok(cloud) => entries.push(RepoEntry {
                id,
                cloud: normalize_unit_ball(&cloud),
                source: Some(path.display().to_string()),
                seed: shape_seed,
            }),
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    if entries.is_empty() {
        return Err(Error::invalid(
            "mesh_dir",
            format!("no readable meshes under {}", mesh_dir.display()),
        ));
    }
    let category = mesh_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ShapeRepository::new(category, entries)
}
