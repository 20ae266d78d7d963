//! Exact floating-point accumulation.
//!
//! Charge integration must report exactly zero for charge-balanced pulses, so
//! sums are kept as a list of non-overlapping partials (Shewchuk) and rounded
//! once at the end.

/// Running sum with no intermediate rounding error.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let mut x = value;
        let mut kept = 0;
        for i in 0..self.partials.len() {
            let mut y = self.partials[i];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        self.partials.truncate(kept);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    /// Correctly rounded value of the accumulated sum.
    pub fn value(&self) -> f64 {
        let mut iter = self.partials.iter().rev();
        let Some(&first) = iter.next() else {
            return 0.0;
        };
        let mut hi = first;
        let rest: Vec<f64> = iter.copied().collect();
        for (idx, &y) in rest.iter().enumerate() {
            let x = hi;
            hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                // Half-way case: round using the sign of the next partial.
                if let Some(&next) = rest.get(idx + 1) {
                    if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
                        let y2 = lo * 2.0;
                        let x2 = hi + y2;
                        if y2 == x2 - hi {
                            hi = x2;
                        }
                    }
                }
                break;
            }
        }
        hi
    }
}

impl Extend<f64> for ExactSum {
    fn extend<T: IntoIterator<Item = f64>>(&mut self, iter: T) {
        for v in iter {
            self.add(v);
        }
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<T: IntoIterator<Item = f64>>(iter: T) -> Self {
        let mut s = ExactSum::new();
        s.extend(iter);
        s
    }
}

/// Exactly rounded sum of a slice.
pub fn exact_sum(values: &[f64]) -> f64 {
    values.iter().copied().collect::<ExactSum>().value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correctly_rounded_where_naive_drifts() {
        let v = vec![0.1; 10];
        assert_eq!(exact_sum(&v), 1.0);
        assert_ne!(v.iter().sum::<f64>(), 1.0);
        // the residue of ten 0.1s against 1.0 is kept, not lost
        let mut w = v.clone();
        w.push(-1.0);
        assert_eq!(exact_sum(&w), 5.551115123125783e-17);
    }

    #[test]
    fn empty_is_zero() {
        assert_eq!(exact_sum(&[]), 0.0);
    }

    #[test]
    fn large_and_small_terms() {
        let v = [1e100, 1.0, -1e100];
        assert_eq!(exact_sum(&v), 1.0);
    }

    #[test]
    fn merge_matches_single_pass() {
        let a: ExactSum = [0.2; 400].into_iter().collect();
        let b: ExactSum = [-1.6; 50].into_iter().collect();
        let mut m = a.clone();
        m.merge(&b);
        assert_eq!(m.value(), 0.0);
    }
}
