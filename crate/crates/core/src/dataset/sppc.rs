//! SPPC point cloud files.
//!
//! ```text
//! "SPPC" | u32 version=1 | u32 n | u32 dims | n*dims f32
//! optional: "LBLS" | u32 n | n u16
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub const SPPC_MAGIC: &[u8; 4] = b"SPPC";
pub const SPPC_VERSION: u32 = 1;
pub const LABEL_MAGIC: &[u8; 4] = b"LBLS";

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let pts = cloud.points();
    let mut out = Vec::with_capacity(16 + pts.len() * 4);
    out.extend_from_slice(SPPC_MAGIC);
    out.extend_from_slice(&SPPC_VERSION.to_le_bytes());
    out.extend_from_slice(&(pts.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    for v in pts.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = cloud.labels() {
        out.extend_from_slice(LABEL_MAGIC);
        out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

fn read_u32(bytes: &[u8], pos: usize) -> Result<u32> {
    bytes
        .get(pos..pos + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse("SPPC truncated"))
}

pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.get(..4) != Some(SPPC_MAGIC.as_slice()) {
        return Err(Error::parse("not an SPPC file: bad magic"));
    }
    let version = read_u32(bytes, 4)?;
    if version != SPPC_VERSION {
        return Err(Error::parse(format!("unsupported SPPC version {version}")));
    }
    let n = read_u32(bytes, 8)? as usize;
    let dims = read_u32(bytes, 12)? as usize;
    if dims != 3 {
        return Err(Error::parse(format!("SPPC dims {dims}, only 3 is supported")));
    }
    let data_len = n
        .checked_mul(dims * 4)
        .ok_or_else(|| Error::parse("SPPC size overflow"))?;
    let end = 16usize
        .checked_add(data_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::parse("SPPC truncated"))?;
    let data: Vec<f32> = bytes[16..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let points = Array2::from_shape_vec((n, dims), data).expect("sized above");
    let mut cloud = PointCloud::new(points).map_err(|e| Error::parse(format!("SPPC payload: {e}")))?;
    let rest = &bytes[end..];
    if rest.is_empty() {
        return Ok(cloud);
    }
    if rest.get(..4) != Some(LABEL_MAGIC.as_slice()) {
        return Err(Error::parse("unknown chunk after SPPC points"));
    }
    let count = read_u32(rest, 4)? as usize;
    if count != n {
        return Err(Error::parse(format!("label chunk has {count} labels for {n} points")));
    }
    if rest.len() != 8 + 2 * count {
        return Err(Error::parse("label chunk size mismatch"));
    }
    let labels = rest[8..].chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    cloud = cloud.with_labels(labels)?;
    Ok(cloud)
}

pub fn save_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    fs::write(path, encode_cloud(cloud))?;
    Ok(())
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    decode_cloud(&fs::read(path)?)
}
