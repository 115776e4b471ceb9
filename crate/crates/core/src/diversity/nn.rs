use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use super::{DiversityError, EmbeddingVector};

const BLOCK: usize = 64;

/// Maps an f64 to a u64 whose unsigned order matches the float order.
fn ordered(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn unordered(u: u64) -> f64 {
    if u >> 63 == 1 {
        f64::from_bits(u & !(1 << 63))
    } else {
        f64::from_bits(!u)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

/// L2-normalized copy of the vectors as one row-major matrix.
fn normalized(vectors: &[EmbeddingVector]) -> Result<(Vec<f64>, usize), DiversityError> {
    let d = vectors[0].len();
    let mut m = Vec::with_capacity(vectors.len() * d);
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != d {
            return Err(DiversityError::DimensionMismatch {
                index: i,
                expected: d,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(DiversityError::NonFinite(i));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(DiversityError::ZeroVector(i));
        }
        m.extend(v.iter().map(|x| x / norm));
    }
    Ok((m, d))
}

/// Cosine similarity of each vector to its nearest other vector.
///
/// Exact: every pair is compared once, in square blocks, and each dot product
/// updates the running maximum of both rows.
pub fn nn_similarity(vectors: &[EmbeddingVector]) -> Result<Vec<f64>, DiversityError> {
    let n = vectors.len();
    if n < 2 {
        return Err(DiversityError::TooFewItems(n));
    }
    let (m, d) = normalized(vectors)?;
    let best: Vec<AtomicU64> = (0..n).map(|_| AtomicU64::new(ordered(f64::NEG_INFINITY))).collect();
    let row = |i: usize| &m[i * d..(i + 1) * d];
    let blocks = n.div_ceil(BLOCK);

    (0..blocks).into_par_iter().for_each(|bi| {
        let r0 = bi * BLOCK;
        let r1 = (r0 + BLOCK).min(n);
        let mut local = vec![f64::NEG_INFINITY; r1 - r0];
        let mut col_best = vec![f64::NEG_INFINITY; BLOCK];
        for bj in bi..blocks {
            let c0 = bj * BLOCK;
            let c1 = (c0 + BLOCK).min(n);
            col_best[..c1 - c0].fill(f64::NEG_INFINITY);
            for i in r0..r1 {
                let a = row(i);
                let start = if bi == bj { i + 1 } else { c0 };
                for j in start..c1 {
                    let s = dot(a, row(j));
                    if s > local[i - r0] {
                        local[i - r0] = s;
                    }
                    if s > col_best[j - c0] {
                        col_best[j - c0] = s;
                    }
                }
            }
            for (k, &s) in col_best[..c1 - c0].iter().enumerate() {
                best[c0 + k].fetch_max(ordered(s), Ordering::Relaxed);
            }
        }
        for (k, &s) in local.iter().enumerate() {
            best[r0 + k].fetch_max(ordered(s), Ordering::Relaxed);
        }
    });

    Ok(best.into_iter().map(|b| unordered(b.into_inner())).collect())
}
