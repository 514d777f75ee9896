use std::cmp::Ordering;

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Exact k-nearest-neighbor graph. Row `i` lists its `k` neighbors in
/// ascending distance; the point itself is never listed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    indices: Vec<usize>,
    k: usize,
}

impl NeighborGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn as_flat(&self) -> &[usize] {
        &self.indices
    }
}

/// Brute-force kNN over the rows of `features` using exact squared Euclidean
/// distances. Ties go to the lower index.
pub fn knn<T: Scalar>(features: ArrayView2<'_, T>, k: usize) -> Result<NeighborGraph> {
    let n = features.nrows();
    if k == 0 {
        return Err(Error::invalid("k", "neighborhood size must be at least 1"));
    }
    if k >= n {
        return Err(Error::invalid(
            "k",
            format!("neighborhood size {k} must be smaller than point count {n}"),
        ));
    }
    let c = features.ncols();
    let owned;
    let flat: &[T] = match features.as_slice() {
        Some(s) => s,
        None => {
            owned = features.to_owned();
            owned.as_slice().expect("standard layout")
        }
    };

    let mut indices = Vec::with_capacity(n * k);
    let mut cand: Vec<(T, usize)> = Vec::with_capacity(n);
    let by_dist = |a: &(T, usize), b: &(T, usize)| match a.0.partial_cmp(&b.0) {
        Some(Ordering::Equal) | None => a.1.cmp(&b.1),
        Some(o) => o,
    };
    for i in 0..n {
        let fi = &flat[i * c..(i + 1) * c];
        cand.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            let fj = &flat[j * c..(j + 1) * c];
            let mut d = T::zero();
            for (a, b) in fi.iter().zip(fj) {
                let t = *a - *b;
                d = d + t * t;
            }
            cand.push((d, j));
        }
        cand.select_nth_unstable_by(k - 1, by_dist);
        let head = &mut cand[..k];
        head.sort_unstable_by(by_dist);
        indices.extend(head.iter().map(|&(_, j)| j));
    }
    Ok(NeighborGraph { indices, k })
}
