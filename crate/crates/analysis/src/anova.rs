//! Two-way repeated-measures ANOVA (both factors within subjects).
//!
//! Each effect is tested against its own subject interaction:
//! A against A×S, B against B×S, A×B against A×B×S. Sphericity is checked
//! with Mauchly's test on orthonormal Helmert contrasts and reported; the
//! Greenhouse-Geisser correction is only applied when asked for.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};
use thiserror::Error;

use crate::ttest::paired_t;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("need at least 2 participants, got {0}")]
    TooFewSubjects(usize),
    #[error("factor {0} needs at least 2 levels")]
    TooFewLevels(char),
    #[error("participant {subject} has {got} cells, expected {expected}")]
    Unbalanced { subject: usize, got: usize, expected: usize },
    #[error("missing cell: participant {subject}, A{a}, B{b}")]
    Missing { subject: usize, a: usize, b: usize },
    #[error("non-finite value at participant {subject}, A{a}, B{b}")]
    NonFinite { subject: usize, a: usize, b: usize },
}

/// Balanced participant × A × B table.
#[derive(Debug, Clone, PartialEq)]
pub struct RmDesign {
    n: usize,
    a: usize,
    b: usize,
    y: Vec<f64>,
}

impl RmDesign {
    /// `values[subject][a][b]`.
    pub fn new(values: &[Vec<Vec<f64>>]) -> Result<Self, DesignError> {
        let n = values.len();
        if n < 2 {
            return Err(DesignError::TooFewSubjects(n));
        }
        let a = values[0].len();
        let b = values[0].first().map_or(0, Vec::len);
        if a < 2 {
            return Err(DesignError::TooFewLevels('A'));
        }
        if b < 2 {
            return Err(DesignError::TooFewLevels('B'));
        }
        let mut y = Vec::with_capacity(n * a * b);
        for (s, rows) in values.iter().enumerate() {
            let got: usize = rows.iter().map(Vec::len).sum();
            if rows.len() != a || rows.iter().any(|r| r.len() != b) {
                return Err(DesignError::Unbalanced {
                    subject: s,
                    got,
                    expected: a * b,
                });
            }
            for (i, row) in rows.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(DesignError::NonFinite { subject: s, a: i, b: j });
                    }
                    y.push(v);
                }
            }
        }
        Ok(RmDesign { n, a, b, y })
    }

    /// Builds from sparse cells; every (subject, a, b) must appear.
    pub fn from_cells(n: usize, a: usize, b: usize, cells: &[(usize, usize, usize, f64)]) -> Result<Self, DesignError> {
        let mut grid = vec![vec![vec![None; b]; a]; n];
        for &(s, i, j, v) in cells {
            if s < n && i < a && j < b {
                grid[s][i][j] = Some(v);
            }
        }
        let mut values = Vec::with_capacity(n);
        for (s, rows) in grid.into_iter().enumerate() {
            let mut out = Vec::with_capacity(a);
            for (i, row) in rows.into_iter().enumerate() {
                let mut r = Vec::with_capacity(b);
                for (j, v) in row.into_iter().enumerate() {
                    r.push(v.ok_or(DesignError::Missing { subject: s, a: i, b: j })?);
                }
                out.push(r);
            }
            values.push(out);
        }
        RmDesign::new(&values)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.a, self.b)
    }

    pub fn get(&self, s: usize, i: usize, j: usize) -> f64 {
        self.y[(s * self.a + i) * self.b + j]
    }

    /// Per-subject means of each A level (averaged over B).
    pub fn marginal_a(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.a, |s, i| {
            (0..self.b).map(|j| self.get(s, i, j)).sum::<f64>() / self.b as f64
        })
    }

    pub fn marginal_b(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.b, |s, j| {
            (0..self.a).map(|i| self.get(s, i, j)).sum::<f64>() / self.a as f64
        })
    }

    fn cells(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.a * self.b, |s, c| self.y[s * self.a * self.b + c])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectTest {
    pub ss: f64,
    pub df: f64,
    pub ss_error: f64,
    pub df_error: f64,
    pub f: f64,
    pub p: f64,
    pub partial_eta_sq: f64,
    /// Greenhouse-Geisser (epsilon, corrected p), when requested.
    pub gg: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mauchly {
    pub w: f64,
    pub chi_sq: f64,
    pub df: f64,
    pub p: f64,
    pub gg_epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pairwise {
    pub i: usize,
    pub j: usize,
    pub t: f64,
    pub p: f64,
    pub p_bonferroni: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmAnova {
    pub subjects: usize,
    pub levels: (usize, usize),
    pub ss_total: f64,
    pub ss_subjects: f64,
    pub a: EffectTest,
    pub b: EffectTest,
    pub ab: EffectTest,
    /// `None` when the effect has a single contrast (sphericity holds
    /// trivially) or too few participants to estimate the covariance.
    pub mauchly_a: Option<Mauchly>,
    pub mauchly_b: Option<Mauchly>,
    pub mauchly_ab: Option<Mauchly>,
    pub posthoc_a: Vec<Pairwise>,
    pub posthoc_b: Vec<Pairwise>,
}

impl RmAnova {
    /// Sum of every component; equals `ss_total` up to rounding.
    pub fn ss_components(&self) -> f64 {
        self.ss_subjects + self.a.ss + self.a.ss_error + self.b.ss + self.b.ss_error + self.ab.ss + self.ab.ss_error
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnovaOptions {
    pub greenhouse_geisser: bool,
}

/// Upper tail of F(d1, d2). Sums of squares below `1e-12 * scale` count as
/// zero (cancellation noise); 0/0 reads as F = 0.
pub(crate) fn f_test(ss: f64, df: f64, ss_err: f64, df_err: f64, scale: f64) -> (f64, f64) {
    let ms = ss / df;
    let ms_err = ss_err / df_err;
    let tiny = 1e-12 * scale;
    if ss <= tiny {
        return (0.0, 1.0);
    }
    if ss_err <= tiny {
        return (f64::INFINITY, 0.0);
    }
    let f = ms / ms_err;
    let dist = FisherSnedecor::new(df, df_err).expect("positive degrees of freedom");
    (f, dist.sf(f).clamp(0.0, 1.0))
}

fn effect(ss: f64, df: f64, ss_err: f64, df_err: f64, scale: f64, eps: Option<f64>) -> EffectTest {
    let (f, p) = f_test(ss, df, ss_err, df_err, scale);
    let np2 = if ss + ss_err > 0.0 { ss / (ss + ss_err) } else { 0.0 };
    let gg = eps.map(|e| {
        let p_gg = if f.is_finite() && f > 0.0 {
            FisherSnedecor::new(df * e, df_err * e)
                .map(|d| d.sf(f).clamp(0.0, 1.0))
                .unwrap_or(p)
        } else {
            p
        };
        (e, p_gg)
    });
    EffectTest {
        ss,
        df,
        ss_error: ss_err,
        df_error: df_err,
        f,
        p,
        partial_eta_sq: np2,
        gg,
    }
}

/// Orthonormal Helmert contrasts, `k × (k-1)`.
pub fn helmert(k: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(k, k - 1);
    for j in 1..k {
        let norm = ((j * (j + 1)) as f64).sqrt();
        for i in 0..j {
            c[(i, j - 1)] = 1.0 / norm;
        }
        c[(j, j - 1)] = -(j as f64) / norm;
    }
    c
}

fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    centered.transpose() * &centered / (n as f64 - 1.0)
}

/// Greenhouse-Geisser epsilon from the contrast covariance.
fn gg_epsilon(s: &DMatrix<f64>) -> f64 {
    let p = s.nrows() as f64;
    let tr = s.trace();
    let tr2 = (s * s).trace();
    if tr2 <= 0.0 {
        return 1.0;
    }
    (tr * tr / (p * tr2)).clamp(1.0 / p, 1.0)
}

/// Mauchly's test on `x` (subjects × levels) projected onto `contrasts`.
pub fn mauchly(x: &DMatrix<f64>, contrasts: &DMatrix<f64>) -> Option<Mauchly> {
    let p = contrasts.ncols();
    let n = x.nrows();
    if p < 2 || n <= p {
        return None;
    }
    let s = covariance(&(x * contrasts));
    let tr = s.trace();
    if tr <= 0.0 {
        return None;
    }
    let pf = p as f64;
    let w = (s.determinant() / (tr / pf).powi(p as i32)).clamp(0.0, 1.0);
    let d = n as f64 - 1.0;
    let f = (2.0 * pf * pf + pf + 2.0) / (6.0 * pf * d);
    let df = pf * (pf + 1.0) / 2.0 - 1.0;
    let chi_sq = -(1.0 - f) * d * w.ln();
    let p_val = if chi_sq.is_finite() {
        ChiSquared::new(df).map(|c| c.sf(chi_sq.max(0.0))).unwrap_or(f64::NAN)
    } else {
        0.0
    };
    Some(Mauchly {
        w,
        chi_sq,
        df,
        p: p_val.clamp(0.0, 1.0),
        gg_epsilon: gg_epsilon(&s),
    })
}

fn contrast_epsilon(x: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    if c.ncols() < 2 || x.nrows() < 2 {
        return 1.0;
    }
    gg_epsilon(&covariance(&(x * c)))
}

/// Bonferroni-corrected paired t-tests between every pair of columns.
pub fn bonferroni_pairwise(x: &DMatrix<f64>) -> Vec<Pairwise> {
    let k = x.ncols();
    let m = (k * (k - 1) / 2) as f64;
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let xi: Vec<f64> = x.column(i).iter().copied().collect();
            let xj: Vec<f64> = x.column(j).iter().copied().collect();
            let r = paired_t(&xi, &xj);
            out.push(Pairwise {
                i,
                j,
                t: r.t,
                p: r.p,
                p_bonferroni: (r.p * m).min(1.0),
            });
        }
    }
    out
}

pub fn rm_anova_2way(d: &RmDesign, opts: AnovaOptions) -> RmAnova {
    let (n, a, b) = d.shape();
    let (nf, af, bf) = (n as f64, a as f64, b as f64);
    let g = d.y.iter().sum::<f64>() / d.y.len() as f64;

    let mean_s: Vec<f64> = (0..n)
        .map(|s| d.y[s * a * b..(s + 1) * a * b].iter().sum::<f64>() / (af * bf))
        .collect();
    let ma = d.marginal_a();
    let mb = d.marginal_b();
    let mean_a: Vec<f64> = (0..a).map(|i| ma.column(i).mean()).collect();
    let mean_b: Vec<f64> = (0..b).map(|j| mb.column(j).mean()).collect();
    let mean_ab = |i: usize, j: usize| (0..n).map(|s| d.get(s, i, j)).sum::<f64>() / nf;

    let sq = |v: f64| v * v;
    let ss_total: f64 = d.y.iter().map(|&v| sq(v - g)).sum();
    let ss_s = af * bf * mean_s.iter().map(|&m| sq(m - g)).sum::<f64>();
    let ss_a = nf * bf * mean_a.iter().map(|&m| sq(m - g)).sum::<f64>();
    let ss_b = nf * af * mean_b.iter().map(|&m| sq(m - g)).sum::<f64>();
    let mut ss_ab = 0.0;
    for i in 0..a {
        for j in 0..b {
            ss_ab += sq(mean_ab(i, j) - mean_a[i] - mean_b[j] + g);
        }
    }
    ss_ab *= nf;
    let mut ss_as = 0.0;
    let mut ss_bs = 0.0;
    let mut ss_abs = 0.0;
    for s in 0..n {
        for i in 0..a {
            ss_as += sq(ma[(s, i)] - mean_s[s] - mean_a[i] + g);
        }
        for j in 0..b {
            ss_bs += sq(mb[(s, j)] - mean_s[s] - mean_b[j] + g);
        }
        for i in 0..a {
            for j in 0..b {
                ss_abs += sq(d.get(s, i, j) - ma[(s, i)] - mb[(s, j)] - mean_ab(i, j)
                    + mean_s[s]
                    + mean_a[i]
                    + mean_b[j]
                    - g);
            }
        }
    }
    ss_as *= bf;
    ss_bs *= af;

    let ca = helmert(a);
    let cb = helmert(b);
    let cab = ca.kronecker(&cb);
    let cells = d.cells();
    let eps = |x: &DMatrix<f64>, c: &DMatrix<f64>| opts.greenhouse_geisser.then(|| contrast_epsilon(x, c));

    RmAnova {
        subjects: n,
        levels: (a, b),
        ss_total,
        ss_subjects: ss_s,
        a: effect(ss_a, af - 1.0, ss_as, (af - 1.0) * (nf - 1.0), ss_total, eps(&ma, &ca)),
        b: effect(ss_b, bf - 1.0, ss_bs, (bf - 1.0) * (nf - 1.0), ss_total, eps(&mb, &cb)),
        ab: effect(
            ss_ab,
            (af - 1.0) * (bf - 1.0),
            ss_abs,
            (af - 1.0) * (bf - 1.0) * (nf - 1.0),
            ss_total,
            eps(&cells, &cab),
        ),
        mauchly_a: mauchly(&ma, &ca),
        mauchly_b: mauchly(&mb, &cb),
        mauchly_ab: mauchly(&cells, &cab),
        posthoc_a: bonferroni_pairwise(&ma),
        posthoc_b: bonferroni_pairwise(&mb),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(f: impl Fn(usize, usize, usize) -> f64, n: usize, a: usize, b: usize) -> RmDesign {
        let v: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|s| (0..a).map(|i| (0..b).map(|j| f(s, i, j)).collect()).collect())
            .collect();
        RmDesign::new(&v).unwrap()
    }

    #[test]
    fn helmert_is_orthonormal_and_sums_to_zero() {
        for k in 2..7 {
            let c = helmert(k);
            let eye = c.transpose() * &c;
            assert!((eye - DMatrix::identity(k - 1, k - 1)).abs().max() < 1e-12);
            for col in c.column_iter() {
                assert!(col.sum().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_across_a_gives_f_zero() {
        let d = design(|s, _, j| (s * 3 + j * 7) as f64 + 0.25 * (s as f64).sin(), 6, 3, 2);
        let r = rm_anova_2way(&d, AnovaOptions::default());
        assert_eq!(r.a.f, 0.0);
        assert_eq!(r.a.p, 1.0);
        assert!(r.b.f > 0.0);
    }

    #[test]
    fn identical_levels_give_bonferroni_one() {
        let d = design(
            |s, i, j| {
                let base = (s as f64 * 1.7).cos() * 10.0 + j as f64;
                if i == 2 {
                    base + (s as f64).sin() * 4.0
                } else {
                    base
                }
            },
            8,
            3,
            2,
        );
        let r = rm_anova_2way(&d, AnovaOptions::default());
        let p01 = r.posthoc_a.iter().find(|p| (p.i, p.j) == (0, 1)).unwrap();
        assert_eq!(p01.p_bonferroni, 1.0);
        for p in &r.posthoc_a {
            assert!(p.p_bonferroni >= p.p);
        }
    }

    #[test]
    fn design_errors() {
        assert_eq!(RmDesign::new(&[vec![vec![1.0, 2.0]; 3]]), Err(DesignError::TooFewSubjects(1)));
        let ragged = vec![vec![vec![1.0, 2.0]; 3], vec![vec![1.0, 2.0], vec![1.0], vec![1.0, 2.0]]];
        assert!(matches!(RmDesign::new(&ragged), Err(DesignError::Unbalanced { subject: 1, .. })));
        let cells = [(0, 0, 0, 1.0), (0, 0, 1, 1.0), (1, 0, 0, 1.0)];
        assert!(matches!(RmDesign::from_cells(2, 1, 2, &cells), Err(DesignError::Missing { .. }) | Err(DesignError::TooFewLevels('A'))));
        assert_eq!(
            RmDesign::from_cells(2, 2, 2, &cells),
            Err(DesignError::Missing { subject: 0, a: 1, b: 0 })
        );
    }

    #[test]
    fn gg_flag_only_adds_correction() {
        let d = design(|s, i, j| ((s * 31 + i * 17 + j * 5) % 11) as f64 + 4.0 * i as f64, 7, 3, 2);
        let plain = rm_anova_2way(&d, AnovaOptions::default());
        let gg = rm_anova_2way(&d, AnovaOptions { greenhouse_geisser: true });
        assert_eq!(plain.a.f, gg.a.f);
        assert!(plain.a.gg.is_none());
        let (e, p) = gg.a.gg.unwrap();
        assert!((0.5..=1.0).contains(&e));
        // F > 1 here, so fewer degrees of freedom can only raise p
        assert!(gg.a.f > 1.0 && p >= gg.a.p - 1e-15);
        assert_eq!(gg.b.gg.unwrap().0, 1.0);
    }
}
