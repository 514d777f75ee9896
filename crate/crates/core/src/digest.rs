//! Content hashes for tensors and parameter sets.

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::nn::Parameters;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_bytes(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

/// SHA-256 over the shape and little-endian element bytes.
pub fn hash_array(a: &Array2<f32>) -> String {
    let mut h = Sha256::new();
    update_array(&mut h, a);
    hex(&h.finalize())
}

fn update_array(h: &mut Sha256, a: &Array2<f32>) {
    h.update((a.nrows() as u64).to_le_bytes());
    h.update((a.ncols() as u64).to_le_bytes());
    for v in a.iter() {
        h.update(v.to_le_bytes());
    }
}

/// Hash of every named tensor, in layout order.
pub fn hash_parameters<P: Parameters<f32>>(params: &P) -> String {
    let mut h = Sha256::new();
    for (name, t) in params.named_tensors() {
        h.update(name.as_bytes());
        update_array(&mut h, t);
    }
    hex(&h.finalize())
}
