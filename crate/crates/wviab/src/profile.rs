//! Right-continuous step functions of time.

use crate::error::{Error, Result};

/// `values[0]` on `(-∞, breaks[0])`, `values[k]` on `[breaks[k-1], breaks[k])`,
/// `values[last]` on `[breaks[last], ∞)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breaks.len() + 1 {
            return Err(Error::Precondition(format!(
                "step function needs {} values for {} breaks, got {}",
                breaks.len() + 1,
                breaks.len(),
                values.len()
            )));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) || breaks.iter().any(|b| !b.is_finite()) {
            return Err(Error::Precondition("step breaks must be finite and strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("step values must be finite".into()));
        }
        Ok(Self { breaks, values })
    }

    pub fn constant(c: f64) -> Self {
        Self { breaks: Vec::new(), values: vec![c] }
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = self.breaks.partition_point(|&b| b <= t);
        self.values[k]
    }

    /// Pieces `(start, end, value)` restricted to `[a, b]`.
    pub fn pieces(&self, a: f64, b: f64) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        if !(a < b) {
            return out;
        }
        let mut start = a;
        let mut k = self.breaks.partition_point(|&x| x <= a);
        while start < b {
            let end = self.breaks.get(k).copied().unwrap_or(f64::INFINITY).min(b);
            out.push((start, end, self.values[k]));
            start = end;
            k += 1;
        }
        out
    }

    /// `∫_a^b f`, with sign flipped when `b < a`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.integral(b, a);
        }
        self.pieces(a, b).iter().map(|(s, e, v)| (e - s) * v).sum()
    }

    pub fn max_on(&self, a: f64, b: f64) -> f64 {
        if !(a < b) {
            return self.at(a);
        }
        self.pieces(a, b).iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn combine(&self, other: &Self, op: impl Fn(f64, f64) -> f64) -> Self {
        let mut breaks: Vec<f64> = self.breaks.iter().chain(&other.breaks).copied().collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut values = Vec::with_capacity(breaks.len() + 1);
        let first = breaks.first().map(|b| b - 1.0).unwrap_or(0.0);
        values.push(op(self.at(first), other.at(first)));
        for &b in &breaks {
            values.push(op(self.at(b), other.at(b)));
        }
        Self { breaks, values }
    }

    pub fn max(&self, other: &Self) -> Self {
        self.combine(other, f64::max)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a + b)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { breaks: self.breaks.clone(), values: self.values.iter().map(|v| v * k).collect() }
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self { breaks: self.breaks.clone(), values: self.values.iter().map(|v| v + c).collect() }
    }

    /// `sup { ∫_A f : A ⊆ [a, b], |A| ≤ len }` for `f ≥ 0`: fill the largest
    /// values first.
    pub fn sup_integral_over_length(&self, a: f64, b: f64, len: f64) -> f64 {
        let mut pieces = self.pieces(a, b);
        pieces.sort_by(|p, q| q.2.total_cmp(&p.2));
        let mut left = len.max(0.0);
        let mut total = 0.0;
        for (s, e, v) in pieces {
            if left <= 0.0 {
                break;
            }
            let take = (e - s).min(left);
            total += take * v.max(0.0);
            left -= take;
        }
        total
    }

    /// Largest `len` with `sup_integral_over_length(a, b, len) ≤ budget`,
    /// capped at `b − a`.
    pub fn max_length_within_budget(&self, a: f64, b: f64, budget: f64) -> f64 {
        let mut pieces = self.pieces(a, b);
        pieces.sort_by(|p, q| q.2.total_cmp(&p.2));
        let mut left = budget;
        let mut len = 0.0;
        for (s, e, v) in pieces {
            let v = v.max(0.0);
            let w = e - s;
            if v * w <= left {
                left -= v * w;
                len += w;
            } else {
                return len + left / v;
            }
        }
        len
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_and_integral() {
        let f = StepFunction::new(vec![1.0, 2.0], vec![1.0, 3.0, 0.5]).unwrap();
        assert_eq!(f.at(0.5), 1.0);
        assert_eq!(f.at(1.0), 3.0);
        assert_eq!(f.at(2.5), 0.5);
        assert!((f.integral(0.0, 3.0) - 4.5).abs() < 1e-15);
        assert!((f.integral(3.0, 0.0) + 4.5).abs() < 1e-15);
        assert!((f.integral(1.5, 1.75) - 0.75).abs() < 1e-15);
        assert_eq!(f.max_on(0.0, 1.0), 1.0);
        assert_eq!(f.max_on(0.0, 1.5), 3.0);
    }

    #[test]
    fn rejects_bad_shape() {
        assert!(StepFunction::new(vec![1.0], vec![1.0]).is_err());
        assert!(StepFunction::new(vec![2.0, 1.0], vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn combinations() {
        let f = StepFunction::new(vec![1.0], vec![1.0, 3.0]).unwrap();
        let g = StepFunction::new(vec![2.0], vec![2.0, 0.0]).unwrap();
        let h = f.max(&g);
        assert_eq!((h.at(0.0), h.at(1.5), h.at(3.0)), (2.0, 3.0, 3.0));
        let s = f.add(&g);
        assert_eq!((s.at(0.0), s.at(1.5), s.at(3.0)), (3.0, 5.0, 3.0));
    }

    #[test]
    fn rearrangement_bounds() {
        let f = StepFunction::new(vec![1.0], vec![1.0, 3.0]).unwrap();
        assert!((f.sup_integral_over_length(0.0, 2.0, 0.5) - 1.5).abs() < 1e-15);
        assert!((f.sup_integral_over_length(0.0, 2.0, 1.5) - 3.5).abs() < 1e-15);
        assert!((f.max_length_within_budget(0.0, 2.0, 3.5) - 1.5).abs() < 1e-15);
        assert!((f.max_length_within_budget(0.0, 2.0, 100.0) - 2.0).abs() < 1e-15);
    }
}
