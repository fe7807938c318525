//! Vector fields with analytic Lipschitz and growth bounds.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::measures::norm;
use crate::profile::StepFunction;

const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    /// `x ↦ A x + b`, `A` row-major `d × d`.
    Affine { matrix: Vec<f64>, offset: Vec<f64> },
    /// `x ↦ a x / sqrt(s² + |x|²)`.
    SaturatedRadial { amplitude: f64, scale: f64 },
    Constant { value: Vec<f64> },
    ConvexCombo { children: Vec<VectorField>, weights: Vec<f64> },
    Sum { children: Vec<VectorField> },
}

/// A field together with `lip_bound` (Lipschitz constant) and
/// `sublinear_bound` (`s` with `|v(x)| ≤ s (1 + |x|)`).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    kind: FieldKind,
    dim: usize,
    lip: f64,
    sublinear: f64,
}

fn spectral_norm(matrix: &[f64], d: usize) -> f64 {
    let a = DMatrix::from_row_slice(d, d, matrix);
    let s = a.singular_values().max();
    // Relative pad absorbs the SVD's round-off so the bound stays an upper bound.
    s * (1.0 + 1e-12) + 1e-300
}

impl VectorField {
    pub fn affine(matrix: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let d = offset.len();
        if d == 0 || matrix.len() != d * d {
            return Err(Error::Precondition(format!(
                "affine field needs a {d}x{d} matrix, got {} entries",
                matrix.len()
            )));
        }
        if matrix.iter().chain(&offset).any(|v| !v.is_finite()) {
            return Err(Error::Precondition("affine field has non-finite entries".into()));
        }
        let lip = if matrix.iter().all(|&a| a == 0.0) { 0.0 } else { spectral_norm(&matrix, d) };
        let sublinear = lip.max(norm(&offset));
        Ok(Self { kind: FieldKind::Affine { matrix, offset }, dim: d, lip, sublinear })
    }

    pub fn identity(d: usize) -> Self {
        let mut m = vec![0.0; d * d];
        (0..d).for_each(|k| m[k * d + k] = 1.0);
        Self::affine(m, vec![0.0; d]).expect("identity is valid")
    }

    pub fn saturated_radial(dim: usize, amplitude: f64, scale: f64) -> Result<Self> {
        if dim == 0 || !(scale > 0.0) || !amplitude.is_finite() || !scale.is_finite() {
            return Err(Error::Precondition("saturated radial field needs scale > 0".into()));
        }
        // Jacobian eigenvalues are a s²/(s²+r²)^{3/2} and a/(s²+r²)^{1/2}.
        let lip = amplitude.abs() / scale;
        Ok(Self { kind: FieldKind::SaturatedRadial { amplitude, scale }, dim, lip, sublinear: amplitude.abs() })
    }

    pub fn constant(value: Vec<f64>) -> Result<Self> {
        if value.is_empty() || value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("constant field needs finite components".into()));
        }
        let s = norm(&value);
        Ok(Self { dim: value.len(), kind: FieldKind::Constant { value }, lip: 0.0, sublinear: s })
    }

    pub fn zero(d: usize) -> Self {
        Self::constant(vec![0.0; d]).expect("zero is valid")
    }

    pub fn sum(children: Vec<VectorField>) -> Result<Self> {
        let dim = common_dim(&children)?;
        if children.len() == 1 {
            return Ok(children.into_iter().next().expect("one child"));
        }
        let lip = children.iter().map(|c| c.lip).sum();
        let sublinear = children.iter().map(|c| c.sublinear).sum();
        Ok(Self { kind: FieldKind::Sum { children }, dim, lip, sublinear })
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lip_bound(&self) -> f64 {
        self.lip
    }

    pub fn sublinear_bound(&self) -> f64 {
        self.sublinear
    }

    /// `max(lip_bound, sublinear_bound)`, the field's contribution to M(t).
    pub fn bound(&self) -> f64 {
        self.lip.max(self.sublinear)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        let mut out = vec![0.0; self.dim];
        self.eval_add(x, 1.0, &mut out);
        Ok(out)
    }

    /// `out += k · v(x)`; no dimension checks.
    pub fn eval_add(&self, x: &[f64], k: f64, out: &mut [f64]) {
        match &self.kind {
            FieldKind::Affine { matrix, offset } => {
                let d = self.dim;
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &matrix[i * d..(i + 1) * d];
                    let ax: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                    *o += k * (ax + offset[i]);
                }
            }
            FieldKind::SaturatedRadial { amplitude, scale } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let f = amplitude / (scale * scale + r2).sqrt();
                out.iter_mut().zip(x).for_each(|(o, xi)| *o += k * f * xi);
            }
            FieldKind::Constant { value } => {
                out.iter_mut().zip(value).for_each(|(o, c)| *o += k * c);
            }
            FieldKind::ConvexCombo { children, weights } => {
                for (c, w) in children.iter().zip(weights) {
                    c.eval_add(x, k * w, out);
                }
            }
            FieldKind::Sum { children } => {
                for c in children {
                    c.eval_add(x, k, out);
                }
            }
        }
    }
}

fn common_dim(fields: &[VectorField]) -> Result<usize> {
    let d = fields
        .first()
        .map(VectorField::dim)
        .ok_or_else(|| Error::Precondition("empty field list".into()))?;
    if let Some(f) = fields.iter().find(|f| f.dim != d) {
        return Err(Error::DimensionMismatch { expected: d, found: f.dim });
    }
    Ok(d)
}

pub fn check_simplex(weights: &[f64]) -> Result<()> {
    if weights.is_empty() || weights.iter().any(|w| !(*w >= -SIMPLEX_TOL) || !w.is_finite()) {
        return Err(Error::Precondition(format!("weights {weights:?} are not on the simplex")));
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Precondition(format!("weights sum to {s}, expected 1")));
    }
    Ok(())
}

/// Pointwise convex combination. Zero-weight children are dropped and a
/// single surviving child is returned unchanged.
pub fn convex_combine(fields: &[VectorField], weights: &[f64]) -> Result<VectorField> {
    let dim = common_dim(fields)?;
    if fields.len() != weights.len() {
        return Err(Error::Precondition(format!(
            "{} fields but {} weights",
            fields.len(),
            weights.len()
        )));
    }
    check_simplex(weights)?;
    let kept: Vec<(VectorField, f64)> = fields
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(f, w)| (f.clone(), *w))
        .collect();
    if kept.len() == 1 {
        return Ok(kept.into_iter().next().expect("one child").0);
    }
    let lip = kept.iter().map(|(f, w)| w * f.lip).sum();
    let sublinear = kept.iter().map(|(f, w)| w * f.sublinear).sum();
    let (children, weights) = kept.into_iter().unzip();
    Ok(VectorField { kind: FieldKind::ConvexCombo { children, weights }, dim, lip, sublinear })
}

/// Piecewise-constant-in-time field on `[start, end]`; pieces are half-open.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeField {
    knots: Vec<f64>,
    fields: Vec<VectorField>,
}

impl TimeField {
    /// `knots` has one more entry than `fields`; piece `k` is `[knots[k], knots[k+1])`.
    pub fn new(knots: Vec<f64>, fields: Vec<VectorField>) -> Result<Self> {
        if fields.is_empty() || knots.len() != fields.len() + 1 {
            return Err(Error::Precondition("time field needs n pieces and n + 1 knots".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) || knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::Precondition("time field knots must be strictly increasing".into()));
        }
        common_dim(&fields)?;
        Ok(Self { knots, fields })
    }

    pub fn constant(field: VectorField, start: f64, end: f64) -> Result<Self> {
        Self::new(vec![start, end], vec![field])
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn end(&self) -> f64 {
        *self.knots.last().expect("nonempty")
    }

    pub fn dim(&self) -> usize {
        self.fields[0].dim()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn piece_index(&self, t: f64) -> usize {
        let k = self.knots.partition_point(|&b| b <= t);
        k.saturating_sub(1).min(self.fields.len() - 1)
    }

    pub fn at(&self, t: f64) -> &VectorField {
        &self.fields[self.piece_index(t)]
    }

    /// M(t) = max(lip, sublinear) per piece, extended flat outside.
    pub fn bound_profile(&self) -> StepFunction {
        let breaks = self.knots[1..self.knots.len() - 1].to_vec();
        let values = self.fields.iter().map(VectorField::bound).collect();
        StepFunction::new(breaks, values).expect("knots are increasing")
    }

    /// Adjacent pieces carrying equal fields are merged.
    fn merged(&self) -> Self {
        let mut knots = vec![self.knots[0]];
        let mut fields: Vec<VectorField> = Vec::new();
        for (k, f) in self.fields.iter().enumerate() {
            if fields.last() == Some(f) {
                *knots.last_mut().expect("nonempty") = self.knots[k + 1];
            } else {
                fields.push(f.clone());
                knots.push(self.knots[k + 1]);
            }
        }
        Self { knots, fields }
    }

    /// Concatenates `other` after `self`; the end of `self` must equal the
    /// start of `other`.
    pub fn append(&mut self, other: &TimeField) -> Result<()> {
        if (self.end() - other.start()).abs() > 1e-12 {
            return Err(Error::Precondition("time fields are not contiguous".into()));
        }
        let last = self.knots.len() - 1;
        self.knots[last] = other.start();
        self.knots.extend_from_slice(&other.knots[1..]);
        self.fields.extend(other.fields.iter().cloned());
        Ok(())
    }
}

/// `(1/h) ∫_τ^{τ+h} v(s) ds` as a finite convex combination.
pub fn time_average(tf: &TimeField, tau: f64, h: f64) -> Result<VectorField> {
    if !(h > 0.0) {
        return Err(Error::Precondition(format!("averaging window h = {h} must be positive")));
    }
    let slack = 1e-12 * (1.0 + tf.end().abs());
    if tau < tf.start() - slack || tau + h > tf.end() + slack {
        return Err(Error::Precondition(format!(
            "window [{tau}, {}] leaves the working interval [{}, {}]",
            tau + h,
            tf.start(),
            tf.end()
        )));
    }
    let tf = tf.merged();
    let (a, b) = (tau, tau + h);
    let mut fields = Vec::new();
    let mut lengths = Vec::new();
    for (k, f) in tf.fields.iter().enumerate() {
        let lo = if k == 0 { a } else { tf.knots[k].max(a) };
        let hi = if k + 1 == tf.fields.len() { b } else { tf.knots[k + 1].min(b) };
        if hi > lo {
            fields.push(f.clone());
            lengths.push(hi - lo);
        }
    }
    if fields.len() == 1 {
        return Ok(fields.pop().expect("one piece"));
    }
    let total: f64 = lengths.iter().sum();
    let weights: Vec<f64> = lengths.iter().map(|l| l / total).collect();
    convex_combine(&fields, &weights)
}

/// `max_x |f(x) − g(x)|` over the probes: a lower bound on the sup distance.
pub fn d_sup_probe(f: &VectorField, g: &VectorField, probes: &[Vec<f64>]) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::Precondition("empty probe set".into()));
    }
    let mut best: f64 = 0.0;
    for x in probes {
        let a = f.eval(x)?;
        let b = g.eval(x)?;
        let d: f64 = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        best = best.max(d);
    }
    Ok(best)
}

/// Largest difference quotient `|f(x) − f(y)| / |x − y|` over the pairs.
pub fn lipschitz_probe(f: &VectorField, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut best: f64 = 0.0;
    for (x, y) in pairs {
        let dx = crate::measures::dist(x, y);
        if dx > 0.0 {
            best = best.max(crate::measures::dist(&f.eval(x)?, &f.eval(y)?) / dx);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_affine(rng: &mut impl Rng, d: usize) -> VectorField {
        let m = (0..d * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        VectorField::affine(m, b).unwrap()
    }

    fn random_points(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-4.0..4.0)).collect()).collect()
    }

    #[test]
    fn eval_examples() {
        let id = VectorField::identity(2);
        assert_eq!(id.eval(&[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);
        let c = VectorField::constant(vec![3.0, 1.0]).unwrap();
        assert_eq!(c.eval(&[9.0, 9.0]).unwrap(), vec![3.0, 1.0]);
        assert!(c.eval(&[1.0]).is_err());
        let g = VectorField::saturated_radial(2, 2.0, 1.0).unwrap();
        let combo = convex_combine(&[id.clone(), g.clone()], &[0.5, 0.5]).unwrap();
        let x = [0.3, -1.2];
        let direct: Vec<f64> = id.eval(&x).unwrap().iter().zip(g.eval(&x).unwrap()).map(|(a, b)| (a + b) / 2.0).collect();
        let got = combo.eval(&x).unwrap();
        for k in 0..2 {
            assert!((got[k] - direct[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_rules() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let f = random_affine(&mut rng, 2);
        let g = random_affine(&mut rng, 2);
        assert_eq!(convex_combine(&[f.clone(), g.clone()], &[1.0, 0.0]).unwrap(), f);
        let same = convex_combine(&[f.clone(), f.clone()], &[0.3, 0.7]).unwrap();
        let probes = random_points(&mut rng, 20, 2);
        assert!(d_sup_probe(&same, &f, &probes).unwrap() < 1e-12);
        assert!(convex_combine(&[f.clone(), g.clone()], &[0.6, 0.6]).is_err());
        assert!(convex_combine(&[f, g], &[1.2, -0.2]).is_err());
    }

    #[test]
    fn combo_lipschitz_probe_below_metadata() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let fs = vec![
            random_affine(&mut rng, 3),
            VectorField::saturated_radial(3, -1.5, 0.4).unwrap(),
            VectorField::constant(vec![1.0, 2.0, 3.0]).unwrap(),
        ];
        let combo = convex_combine(&fs, &[0.2, 0.5, 0.3]).unwrap();
        let pairs: Vec<_> = (0..100)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
                (x, y)
            })
            .collect();
        let est = lipschitz_probe(&combo, &pairs).unwrap();
        let declared: f64 = 0.2 * fs[0].lip_bound() + 0.5 * fs[1].lip_bound() + 0.3 * fs[2].lip_bound();
        assert!((combo.lip_bound() - declared).abs() < 1e-12);
        assert!(est <= declared + 1e-9);
    }

    #[test]
    fn time_average_examples() {
        let f = VectorField::constant(vec![1.0]).unwrap();
        let g = VectorField::identity(1);
        let tf = TimeField::constant(g.clone(), 0.0, 2.0).unwrap();
        assert_eq!(time_average(&tf, 0.5, 1.0).unwrap(), g);

        let two = TimeField::new(vec![0.0, 1.0, 2.0], vec![f.clone(), g.clone()]).unwrap();
        match time_average(&two, 0.0, 2.0).unwrap().kind() {
            FieldKind::ConvexCombo { weights, children } => {
                assert_eq!(weights, &vec![0.5, 0.5]);
                assert_eq!(children, &vec![f.clone(), g.clone()]);
            }
            other => panic!("unexpected {other:?}"),
        }

        let uneven = TimeField::new(vec![0.0, 1.0, 4.0], vec![f.clone(), g.clone()]).unwrap();
        let avg = time_average(&uneven, 0.0, 4.0).unwrap();
        // Midpoint quadrature on a fine grid matches the piecewise average.
        for x in [-1.0, 0.0, 2.5] {
            let n = 4000;
            let mut q = 0.0;
            for k in 0..n {
                let t = (k as f64 + 0.5) * 4.0 / n as f64;
                q += uneven.at(t).eval(&[x]).unwrap()[0] * 4.0 / n as f64;
            }
            assert!((avg.eval(&[x]).unwrap()[0] - q / 4.0).abs() < 1e-12);
        }
        assert!(time_average(&uneven, 0.0, 0.0).is_err());
        assert!(time_average(&uneven, 3.0, 2.0).is_err());
    }

    #[test]
    fn splitting_a_piece_leaves_average_unchanged() {
        let f = VectorField::constant(vec![1.0]).unwrap();
        let g = VectorField::identity(1);
        let a = TimeField::new(vec![0.0, 0.7, 2.0], vec![f.clone(), g.clone()]).unwrap();
        let b = TimeField::new(vec![0.0, 0.3, 0.7, 1.1, 2.0], vec![f.clone(), f, g.clone(), g]).unwrap();
        assert_eq!(time_average(&a, 0.1, 1.6).unwrap(), time_average(&b, 0.1, 1.6).unwrap());
    }

    #[test]
    fn dsup_examples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let probes = random_points(&mut rng, 30, 2);
        let c = VectorField::constant(vec![3.0, 4.0]).unwrap();
        assert_eq!(d_sup_probe(&c, &c, &probes).unwrap(), 0.0);
        assert!((d_sup_probe(&c, &VectorField::zero(2), &probes).unwrap() - 5.0).abs() < 1e-15);
        assert!(d_sup_probe(&c, &c, &[]).is_err());
        let f = random_affine(&mut rng, 2);
        let g = random_affine(&mut rng, 2);
        let (FieldKind::Affine { matrix: a, offset: b }, FieldKind::Affine { matrix: c2, offset: e }) = (f.kind(), g.kind()) else {
            unreachable!()
        };
        let mut expect: f64 = 0.0;
        for x in &probes {
            let r0 = (a[0] - c2[0]) * x[0] + (a[1] - c2[1]) * x[1] + (b[0] - e[0]);
            let r1 = (a[2] - c2[2]) * x[0] + (a[3] - c2[3]) * x[1] + (b[1] - e[1]);
            expect = expect.max((r0 * r0 + r1 * r1).sqrt());
        }
        assert!((d_sup_probe(&f, &g, &probes).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn bounds_hold_on_probe_grid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let fields = vec![
            random_affine(&mut rng, 2),
            VectorField::saturated_radial(2, 3.0, 0.5).unwrap(),
            VectorField::constant(vec![-1.0, 0.5]).unwrap(),
        ];
        for f in &fields {
            for _ in 0..200 {
                let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
                let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
                let fx = f.eval(&x).unwrap();
                assert!(norm(&fx) <= f.sublinear_bound() * (1.0 + norm(&x)) + 1e-9);
                let dq = crate::measures::dist(&fx, &f.eval(&y).unwrap()) / crate::measures::dist(&x, &y);
                assert!(dq <= f.lip_bound() + 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn dsup_triangle(seed in 0u64..5000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let probes = random_points(&mut rng, 10, 2);
            let f = random_affine(&mut rng, 2);
            let g = random_affine(&mut rng, 2);
            let h = VectorField::saturated_radial(2, rng.random_range(-2.0..2.0), 1.0).unwrap();
            let fg = d_sup_probe(&f, &g, &probes).unwrap();
            let fh = d_sup_probe(&f, &h, &probes).unwrap();
            let hg = d_sup_probe(&h, &g, &probes).unwrap();
            prop_assert!(fg <= fh + hg + 1e-12);
        }

        #[test]
        fn combo_eval_is_weighted_sum(seed in 0u64..5000, w in 0.0f64..1.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f = random_affine(&mut rng, 2);
            let g = VectorField::saturated_radial(2, 1.0, 0.7).unwrap();
            let combo = convex_combine(&[f.clone(), g.clone()], &[w, 1.0 - w]).unwrap();
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let a = f.eval(&x).unwrap();
            let b = g.eval(&x).unwrap();
            let c = combo.eval(&x).unwrap();
            for k in 0..2 {
                prop_assert!((c[k] - (w * a[k] + (1.0 - w) * b[k])).abs() < 1e-12);
            }
        }

        #[test]
        fn time_average_is_linear(seed in 0u64..5000, tau in 0.0f64..1.0, h in 0.01f64..1.0) {
            // Averaging a time field whose pieces are a·f_k + b·g_k equals
            // a·avg(f) + b·avg(g) pointwise.
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let fs: Vec<_> = (0..3).map(|_| random_affine(&mut rng, 1)).collect();
            let gs: Vec<_> = (0..3).map(|_| random_affine(&mut rng, 1)).collect();
            let hs: Vec<_> = fs.iter().zip(&gs).map(|(f, g)| convex_combine(&[f.clone(), g.clone()], &[0.25, 0.75]).unwrap()).collect();
            let knots = vec![0.0, 0.6, 1.3, 2.0];
            let tf = TimeField::new(knots.clone(), fs).unwrap();
            let tg = TimeField::new(knots.clone(), gs).unwrap();
            let th = TimeField::new(knots, hs).unwrap();
            let x = [rng.random_range(-2.0..2.0)];
            let lhs = time_average(&th, tau, h).unwrap().eval(&x).unwrap()[0];
            let rhs = 0.25 * time_average(&tf, tau, h).unwrap().eval(&x).unwrap()[0]
                + 0.75 * time_average(&tg, tau, h).unwrap().eval(&x).unwrap()[0];
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
