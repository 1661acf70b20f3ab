//! Descriptor comparison: best circular shift, L1 distance and row-wise
//! cosine verification.

use crate::error::{Error, Result};
use crate::spectrum::FrescoDescriptor;

/// Outcome of comparing a query descriptor against a candidate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchScore {
    /// Mean absolute difference after the best shift.
    pub d_l1: f64,
    /// Row-wise cosine distance after the best shift, in `[0, 2]`.
    pub d_r: f64,
    /// Column shift applied to the candidate, in `[0, sectors/2)`.
    pub best_shift: usize,
}

/// Column `j` of the output is column `(j - k) mod sectors` of the input.
pub fn circular_shift(d: &FrescoDescriptor, k: i64) -> FrescoDescriptor {
    let n = d.sectors() as i64;
    d.map_data(|i, j| d.get(i, (j as i64 - k).rem_euclid(n) as usize))
}

fn check_dims(q: &FrescoDescriptor, c: &FrescoDescriptor) -> Result<()> {
    if q.rings() != c.rings() || q.sectors() != c.sectors() {
        return Err(Error::param(
            "descriptor",
            format!(
                "dimension mismatch: {}x{} vs {}x{}",
                q.rings(),
                q.sectors(),
                c.rings(),
                c.sectors()
            ),
        ));
    }
    Ok(())
}

/// Scans shifts `0..sectors/2` and returns `(best_shift, d_l1)`. Ties go to
/// the smallest shift.
pub fn best_shift_l1(q: &FrescoDescriptor, c: &FrescoDescriptor) -> Result<(usize, f64)> {
    check_dims(q, c)?;
    let (rings, n) = (q.rings(), q.sectors());
    let mut best = (0usize, f64::INFINITY);
    for shift in 0..(n / 2).max(1) {
        let mut total = 0.0f64;
        'rows: for i in 0..rings {
            let (qr, cr) = (q.row(i), c.row(i));
            // column j of the shifted candidate is column j - shift
            for (j, &qv) in qr.iter().enumerate() {
                let src = (j + n - shift) % n;
                total += (qv as f64 - cr[src] as f64).abs();
            }
            if total > best.1 {
                break 'rows;
            }
        }
        if total < best.1 {
            best = (shift, total);
        }
    }
    Ok((best.0, best.1 / (rings * n) as f64))
}

/// `1 - mean_i cos(row_i(q), row_i(c))`. Rows with zero norm count as
/// similarity 0.
pub fn row_cosine(q: &FrescoDescriptor, c_shifted: &FrescoDescriptor) -> Result<f64> {
    check_dims(q, c_shifted)?;
    let mut sim = 0.0;
    for i in 0..q.rings() {
        let (a, b) = (q.row(i), c_shifted.row(i));
        let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
        for (&x, &y) in a.iter().zip(b) {
            let (x, y) = (x as f64, y as f64);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        if na > 0.0 && nb > 0.0 {
            sim += (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
        }
    }
    Ok((1.0 - sim / q.rings() as f64).clamp(0.0, 2.0))
}

/// Full comparison: best shift, L1 distance, then cosine verification of the
/// shifted candidate.
pub fn compare(q: &FrescoDescriptor, c: &FrescoDescriptor) -> Result<MatchScore> {
    let (best_shift, d_l1) = best_shift_l1(q, c)?;
    let d_r = row_cosine(q, &circular_shift(c, best_shift as i64))?;
    Ok(MatchScore {
        d_l1,
        d_r,
        best_shift,
    })
}
