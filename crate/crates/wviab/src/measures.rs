//! Finitely supported probability measures on R^d.

use crate::error::{Error, Result};

const WEIGHT_TOL: f64 = 1e-12;
const RENORMALIZE_TOL: f64 = 1e-9;

/// A weighted particle cloud. Atoms keep their order and are never merged.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

impl DiscreteMeasure {
    /// Builds a measure from row points and weights.
    ///
    /// Weights must be positive. A total mass off by at most 1e-9 is
    /// renormalized; anything larger is rejected.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidMeasure("empty point list".into()))?;
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, weights)
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>, mut weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("empty point list".into()));
        }
        if coords.len() != dim * weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates do not match {} atoms of dimension {dim}",
                coords.len(),
                weights.len()
            )));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite coordinate {c}")));
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMeasure(format!("weight {i} is {w}, must be positive")));
        }
        let total: f64 = weights.iter().sum();
        let drift = (total - 1.0).abs();
        if drift > RENORMALIZE_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, expected 1")));
        }
        if drift > WEIGHT_TOL {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(Self { dim, coords, weights })
    }

    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::from_flat(x.len(), x.to_vec(), vec![1.0])
    }

    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len().max(1);
        Self::new(points, vec![1.0 / n as f64; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn first_moment(&self) -> f64 {
        self.points().zip(&self.weights).map(|(x, w)| w * norm(x)).sum()
    }

    pub fn barycenter(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.dim];
        for (x, w) in self.points().zip(&self.weights) {
            b.iter_mut().zip(x).for_each(|(bk, xk)| *bk += w * xk);
        }
        b
    }

    pub fn max_norm(&self) -> f64 {
        self.points().map(norm).fold(0.0, f64::max)
    }

    /// Image measure under `f`; weights are copied verbatim.
    pub fn pushforward<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let mut coords = Vec::with_capacity(self.coords.len());
        for x in self.points() {
            let y = f(x);
            if y.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, found: y.len() });
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidResult(format!("non-finite image of {x:?}")));
            }
            coords.extend(y);
        }
        Ok(Self { dim: self.dim, coords, weights: self.weights.clone() })
    }

    pub fn translate(&self, c: &[f64]) -> Result<Self> {
        if c.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: c.len() });
        }
        self.pushforward(|x| x.iter().zip(c).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, k: f64) -> Result<Self> {
        self.pushforward(|x| x.iter().map(|a| a * k).collect())
    }

    /// Replaces coordinates in place; used by integrators that own the state.
    pub(crate) fn with_coords(&self, coords: Vec<f64>) -> Self {
        debug_assert_eq!(coords.len(), self.coords.len());
        Self { dim: self.dim, coords, weights: self.weights.clone() }
    }

    pub fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        Ok(())
    }

    /// CSV block with header `w,x1,...,xd`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("w");
        for k in 1..=self.dim {
            out.push_str(&format!(",x{k}"));
        }
        out.push('\n');
        for (x, w) in self.points().zip(&self.weights) {
            out.push_str(&fmt17(*w));
            for v in x {
                out.push(',');
                out.push_str(&fmt17(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::InvalidMeasure("empty CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"w") || cols.len() < 2 {
            return Err(Error::InvalidMeasure(format!("bad header `{header}`")));
        }
        for (k, c) in cols.iter().enumerate().skip(1) {
            if *c != format!("x{k}") {
                return Err(Error::InvalidMeasure(format!("bad header column `{c}`")));
            }
        }
        let dim = cols.len() - 1;
        let mut weights = Vec::new();
        let mut coords = Vec::new();
        for (row, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidMeasure(format!("row {}: {e}", row + 1)))?;
            if vals.len() != dim + 1 {
                return Err(Error::InvalidMeasure(format!(
                    "row {} has {} fields, expected {}",
                    row + 1,
                    vals.len(),
                    dim + 1
                )));
            }
            weights.push(vals[0]);
            coords.extend_from_slice(&vals[1..]);
        }
        Self::from_flat(dim, coords, weights)
    }
}

pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(seed: u64, n: usize, d: usize) -> DiscreteMeasure {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        DiscreteMeasure::new(pts, raw.iter().map(|w| w / s).collect()).unwrap()
    }

    #[test]
    fn moment_examples() {
        assert_eq!(DiscreteMeasure::dirac(&[0.0]).unwrap().first_moment(), 0.0);
        let m = DiscreteMeasure::new(vec![vec![3.0, 4.0], vec![0.0, 0.0]], vec![0.5, 0.5]).unwrap();
        assert!((m.first_moment() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn moment_and_barycenter_match_direct_sums() {
        let m = cloud(3, 32, 3);
        let mut mom = 0.0;
        let mut bar = [0.0; 3];
        for i in 0..m.len() {
            let p = m.point(i);
            mom += m.weights()[i] * (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            for k in 0..3 {
                bar[k] += m.weights()[i] * p[k];
            }
        }
        assert!((m.first_moment() - mom).abs() < 1e-12);
        for k in 0..3 {
            assert!((m.barycenter()[k] - bar[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn barycenter_examples() {
        assert_eq!(DiscreteMeasure::dirac(&[2.0, -1.0]).unwrap().barycenter(), vec![2.0, -1.0]);
        let m = DiscreteMeasure::new(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        assert_eq!(m.barycenter(), vec![0.0]);
    }

    #[test]
    fn construction_rules() {
        assert!(DiscreteMeasure::new(vec![], vec![]).is_err());
        assert!(DiscreteMeasure::new(vec![vec![0.0]], vec![0.0]).is_err());
        assert!(DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.4]).is_err());
        assert!(DiscreteMeasure::new(vec![vec![f64::NAN]], vec![1.0]).is_err());
        assert!(DiscreteMeasure::new(vec![vec![0.0], vec![1.0, 2.0]], vec![0.5, 0.5]).is_err());
        let m = DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5 + 5e-10]).unwrap();
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pushforward_examples() {
        let m = cloud(5, 8, 2);
        assert_eq!(m.pushforward(|x| x.to_vec()).unwrap(), m);
        let d = DiscreteMeasure::dirac(&[1.0]).unwrap();
        let h = 0.25;
        let out = d.pushforward(|x| vec![x[0] + h * (2.0 * x[0])]).unwrap();
        assert_eq!(out.point(0), &[1.5]);
        assert!(d.pushforward(|_| vec![f64::INFINITY]).is_err());
        let merged = DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5])
            .unwrap()
            .pushforward(|_| vec![3.0])
            .unwrap();
        assert_eq!(merged.len(), 2);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = cloud(11, 17, 3);
        let back = DiscreteMeasure::from_csv(&m.to_csv()).unwrap();
        assert_eq!(back, m);
        assert!(m.to_csv().starts_with("w,x1,x2,x3\n"));
    }

    #[test]
    fn csv_rejects_bad_input() {
        assert!(DiscreteMeasure::from_csv("w,y1\n1,0\n").is_err());
        assert!(DiscreteMeasure::from_csv("w,x1\n1,0,3\n").is_err());
        assert!(DiscreteMeasure::from_csv("w,x1\n0.9,0\n").is_err());
    }

    proptest! {
        #[test]
        fn translation_moves_moment_by_at_most_shift(seed in 0u64..1000, c in prop::collection::vec(-3.0f64..3.0, 2)) {
            let m = cloud(seed, 6, 2);
            let t = m.translate(&c).unwrap();
            prop_assert!((t.first_moment() - m.first_moment()).abs() <= norm(&c) + 1e-12);
            prop_assert_eq!(t.weights(), m.weights());
        }

        #[test]
        fn moment_is_absolutely_homogeneous(seed in 0u64..1000, k in -4.0f64..4.0) {
            let m = cloud(seed, 5, 3);
            let s = m.scale(k).unwrap();
            prop_assert!((s.first_moment() - k.abs() * m.first_moment()).abs() <= 1e-12 * (1.0 + m.first_moment()));
        }
    }
}
