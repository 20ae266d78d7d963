//! Student / Welch t-tests, two-tailed.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variance {
    /// Equal-variance (Student) test.
    #[default]
    Pooled,
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TTestError {
    #[error("each sample needs at least 2 values (got {0} and {1})")]
    TooFew(usize, usize),
    #[error("both samples have zero variance; the t statistic is undefined")]
    ZeroVariance,
}

pub(crate) fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

pub(crate) fn two_tailed(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if !t.is_finite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

pub fn unpaired_t(x: &[f64], y: &[f64], variance: Variance) -> Result<TTest, TTestError> {
    if x.len() < 2 || y.len() < 2 {
        return Err(TTestError::TooFew(x.len(), y.len()));
    }
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    let (se2, df) = match variance {
        Variance::Pooled => {
            let df = nx + ny - 2.0;
            let sp = ((nx - 1.0) * vx + (ny - 1.0) * vy) / df;
            (sp * (1.0 / nx + 1.0 / ny), df)
        }
        Variance::Welch => {
            let (a, b) = (vx / nx, vy / ny);
            let df = (a + b) * (a + b) / (a * a / (nx - 1.0) + b * b / (ny - 1.0));
            (a + b, df)
        }
    };
    if se2 <= 0.0 {
        return Err(TTestError::ZeroVariance);
    }
    let t = (mx - my) / se2.sqrt();
    Ok(TTest {
        t,
        df,
        p: two_tailed(t, df),
    })
}

/// Paired t on `x - y`. Zero differences everywhere give t = 0, p = 1;
/// constant non-zero differences give an infinite t and p = 0.
pub fn paired_t(x: &[f64], y: &[f64]) -> TTest {
    assert_eq!(x.len(), y.len(), "paired samples differ in length");
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let df = d.len() as f64 - 1.0;
    let (m, v) = mean_var(&d);
    let t = if m == 0.0 {
        0.0
    } else if v <= 0.0 {
        f64::INFINITY.copysign(m)
    } else {
        m / (v / d.len() as f64).sqrt()
    };
    TTest {
        t,
        df,
        p: two_tailed(t, df),
    }
}
