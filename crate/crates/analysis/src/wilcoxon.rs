//! Wilcoxon signed-rank test, normal approximation.
//!
//! Zero differences are dropped, tied |d| get averaged ranks, and the
//! variance carries the usual tie correction. No continuity correction.
//! Z is signed: positive when x tends to exceed y.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

pub const MIN_NONZERO: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Rank sum of positive differences.
    pub w_plus: f64,
    pub w_minus: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub z: f64,
    pub p: f64,
}

impl Wilcoxon {
    /// The conventional reported statistic, min(W+, W-).
    pub fn w(&self) -> f64 {
        self.w_plus.min(self.w_minus)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WilcoxonError {
    #[error("paired samples differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("only {0} non-zero differences; the normal approximation needs at least {MIN_NONZERO}")]
    TooFew(usize),
}

/// Average ranks (1-based) of `v`, plus the tie sizes.
pub fn rank_average(v: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<Wilcoxon, WilcoxonError> {
    if x.len() != y.len() {
        return Err(WilcoxonError::Length(x.len(), y.len()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|&d| d != 0.0).collect();
    let n = d.len();
    if n < MIN_NONZERO {
        return Err(WilcoxonError::TooFew(n));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = rank_average(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let nf = n as f64;
    let total = nf * (nf + 1.0) / 2.0;
    let mean = total / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let z = (w_plus - mean) / var.sqrt();
    let p = 2.0 * Normal::standard().sf(z.abs());
    Ok(Wilcoxon {
        w_plus,
        w_minus: total - w_plus,
        n,
        z,
        p: p.clamp(0.0, 1.0),
    })
}
