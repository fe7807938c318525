//! Time-dependent constraint tubes `Q(t)`, distance oracles and
//! graphical-derivative rate probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{flow_measure, flow_solve, StepPolicy, Trajectory};
use crate::error::{Error, Result};
use crate::fields::{TimeField, VectorField};
use crate::measures::{fmt17, norm, DiscreteMeasure};
use crate::profile::StepFunction;
use crate::transport::{dist_to_finite_set, interpolate, w1, w1_exact, TransportPlan};

/// Center of an anchor ball.
#[derive(Debug, Clone, PartialEq)]
pub enum AnchorPath {
    /// `a(t) = (Φ_{(t_0, t)})♯ initial` for the flow of `field`.
    Flow { field: TimeField, cache: Trajectory },
    /// `a(t) = initial + Σ_k coeffs[k] t^k`.
    Translation { initial: DiscreteMeasure, coeffs: Vec<Vec<f64>> },
}

impl AnchorPath {
    pub fn flow(initial: DiscreteMeasure, field: TimeField) -> Result<Self> {
        let cache = flow_solve(&field, &initial, field.start(), field.end(), &StepPolicy::default())?;
        Ok(Self::Flow { field, cache })
    }

    pub fn translation(initial: DiscreteMeasure, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(c) = coeffs.iter().find(|c| c.len() != initial.dim()) {
            return Err(Error::DimensionMismatch { expected: initial.dim(), found: c.len() });
        }
        Ok(Self::Translation { initial, coeffs })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Flow { field, .. } => field.dim(),
            Self::Translation { initial, .. } => initial.dim(),
        }
    }

    pub fn at(&self, t: f64) -> Result<DiscreteMeasure> {
        match self {
            Self::Flow { field, cache } => {
                let k = cache.node_at_or_before(t);
                let tk = cache.times[k];
                if t - tk <= 1e-12 {
                    return Ok(cache.measures[k].clone());
                }
                flow_measure(field, &cache.measures[k], tk, t, &StepPolicy::default())
            }
            Self::Translation { initial, coeffs } => {
                let mut shift = vec![0.0; initial.dim()];
                let mut p = 1.0;
                for c in coeffs {
                    shift.iter_mut().zip(c).for_each(|(s, ci)| *s += ci * p);
                    p *= t;
                }
                initial.translate(&shift)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TubeKind {
    AnchorBall { anchor: AnchorPath, radius: StepFunction },
    MomentCap { cap: StepFunction },
    /// Node candidate lists with equal counts; candidate `i` at node `k` is
    /// joined to candidate `i` at node `k + 1` by an optimal-plan geodesic.
    Sampled { times: Vec<f64>, candidates: Vec<Vec<DiscreteMeasure>>, plans: Vec<Vec<TransportPlan>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintTube {
    kind: TubeKind,
    /// Declared left absolute-continuity modulus `M_Q`.
    modulus: StepFunction,
    start: f64,
    end: f64,
}

impl ConstraintTube {
    pub fn anchor_ball(anchor: AnchorPath, radius: StepFunction, modulus: StepFunction, start: f64, end: f64) -> Result<Self> {
        if radius.min_value() < 0.0 {
            return Err(Error::Precondition("anchor radius must be >= 0".into()));
        }
        if let AnchorPath::Flow { field, .. } = &anchor {
            if field.start() > start + 1e-12 || field.end() < end - 1e-12 {
                return Err(Error::Precondition("anchor field does not cover the horizon".into()));
            }
        }
        Self::build(TubeKind::AnchorBall { anchor, radius }, modulus, start, end)
    }

    pub fn moment_cap(cap: StepFunction, modulus: StepFunction, start: f64, end: f64) -> Result<Self> {
        if !(cap.min_value() > 0.0) {
            return Err(Error::Precondition("moment cap must be > 0".into()));
        }
        Self::build(TubeKind::MomentCap { cap }, modulus, start, end)
    }

    /// The horizon is `[times[0], times[last]]`.
    pub fn sampled(times: Vec<f64>, candidates: Vec<Vec<DiscreteMeasure>>, modulus: StepFunction) -> Result<Self> {
        if times.is_empty() || times.len() != candidates.len() {
            return Err(Error::Precondition("sampled tube needs one candidate list per node".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Precondition("sampled tube node times must be strictly increasing".into()));
        }
        let count = candidates[0].len();
        if count == 0 || candidates.iter().any(|c| c.len() != count) {
            return Err(Error::Precondition("sampled tube nodes need equal, nonzero candidate counts".into()));
        }
        let dim = candidates[0][0].dim();
        if let Some(m) = candidates.iter().flatten().find(|m| m.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: m.dim() });
        }
        let plans = candidates
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| Ok(w1_exact(a, b)?.1)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let (start, end) = (times[0], *times.last().expect("nonempty"));
        Self::build(TubeKind::Sampled { times, candidates, plans }, modulus, start, end)
    }

    fn build(kind: TubeKind, modulus: StepFunction, start: f64, end: f64) -> Result<Self> {
        if !(start <= end) {
            return Err(Error::Precondition(format!("empty horizon [{start}, {end}]")));
        }
        if modulus.min_value() < 0.0 {
            return Err(Error::Precondition("modulus must be >= 0".into()));
        }
        Ok(Self { kind, modulus, start, end })
    }

    pub fn kind(&self) -> &TubeKind {
        &self.kind
    }

    pub fn modulus(&self) -> &StepFunction {
        &self.modulus
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * (1.0 + self.end.abs());
        if t < self.start - slack || t > self.end + slack {
            return Err(Error::Precondition(format!("time {t} outside horizon [{}, {}]", self.start, self.end)));
        }
        Ok(())
    }

    /// Candidates of a sampled tube at `t`.
    pub fn members_at(&self, t: f64) -> Result<Vec<DiscreteMeasure>> {
        self.check_time(t)?;
        let TubeKind::Sampled { times, candidates, plans } = &self.kind else {
            return Err(Error::Precondition("members_at needs a sampled tube".into()));
        };
        let k = times.partition_point(|&s| s <= t).saturating_sub(1);
        if k + 1 >= times.len() || t <= times[k] {
            return Ok(candidates[k].clone());
        }
        let theta = (t - times[k]) / (times[k + 1] - times[k]);
        plans[k].iter().map(|p| interpolate(p, theta)).collect()
    }

    /// `W1(μ; Q(t))` and a member of `Q(t)` attaining it.
    pub fn tube_dist(&self, t: f64, mu: &DiscreteMeasure) -> Result<(f64, DiscreteMeasure)> {
        self.check_time(t)?;
        match &self.kind {
            TubeKind::AnchorBall { anchor, radius } => {
                let a = anchor.at(t)?;
                let (w, plan) = w1_exact(mu, &a)?;
                let r = radius.at(t);
                if w <= r {
                    return Ok((0.0, mu.clone()));
                }
                Ok((w - r, interpolate(&plan, (w - r) / w)?))
            }
            TubeKind::MomentCap { cap } => {
                let m = mu.first_moment();
                let c = cap.at(t);
                if m <= c {
                    return Ok((0.0, mu.clone()));
                }
                Ok((m - c, mu.scale(c / m)?))
            }
            TubeKind::Sampled { .. } => {
                let members = self.members_at(t)?;
                let (d, k) = dist_to_finite_set(mu, &members)?;
                Ok((d, members[k].clone()))
            }
        }
    }

    pub fn dist(&self, t: f64, mu: &DiscreteMeasure) -> Result<f64> {
        Ok(self.tube_dist(t, mu)?.0)
    }

    /// Sampled members of `Q(s)` near `center`, before the ball filter.
    fn member_candidates(&self, s: f64, t: f64, center: &DiscreteMeasure, r: f64, sample: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DiscreteMeasure>> {
        let d = center.dim();
        let mut out = Vec::new();
        let random_dir = |rng: &mut ChaCha8Rng| loop {
            let u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm(&u);
            if n > 1e-12 {
                break u.into_iter().map(|x| x / n).collect::<Vec<f64>>();
            }
        };
        if let TubeKind::Sampled { .. } = self.kind {
            return self.members_at(s);
        }
        out.push(self.tube_dist(s, center)?.1);
        for _ in 0..sample {
            let u = random_dir(rng);
            let len = r * rng.random::<f64>();
            let shifted = center.translate(&u.iter().map(|x| x * len).collect::<Vec<_>>())?;
            out.push(self.tube_dist(s, &shifted)?.1);
        }
        match &self.kind {
            TubeKind::AnchorBall { anchor, radius } => {
                let a = anchor.at(s)?;
                let rho = radius.at(s);
                out.push(a.clone());
                if rho > 0.0 {
                    let mut dirs: Vec<Vec<f64>> = Vec::new();
                    for k in 0..d {
                        for sign in [1.0, -1.0] {
                            let mut e = vec![0.0; d];
                            e[k] = sign;
                            dirs.push(e);
                        }
                    }
                    let motion: Vec<f64> = anchor.at(t)?.barycenter().iter().zip(a.barycenter()).map(|(x, y)| y - x).collect();
                    let mn = norm(&motion);
                    if mn > 1e-15 {
                        dirs.push(motion.iter().map(|x| x / mn).collect());
                    }
                    for _ in 0..sample {
                        dirs.push(random_dir(rng));
                    }
                    for u in dirs {
                        out.push(a.translate(&u.iter().map(|x| x * rho).collect::<Vec<_>>())?);
                    }
                }
            }
            TubeKind::MomentCap { cap } => {
                let c = cap.at(s);
                let m = center.first_moment();
                for k in 0..=sample.max(1) {
                    let f = k as f64 / sample.max(1) as f64;
                    if m > 0.0 {
                        out.push(center.scale((c / m).min(1.0) * f)?);
                    }
                }
            }
            TubeKind::Sampled { .. } => unreachable!(),
        }
        Ok(out)
    }
}

/// Sampled `sup { W1(m; Q(t)) : m ∈ Q(s) ∩ B(center, r) }`; 0 when the
/// sampled intersection is empty.
pub fn one_sided_hausdorff(q: &ConstraintTube, s: f64, t: f64, center: &DiscreteMeasure, r: f64, sample: usize, seed: u64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::Precondition(format!("radius {r} must be >= 0")));
    }
    if s > t {
        return Err(Error::Precondition(format!("need s <= t, got {s} > {t}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for m in q.member_candidates(s, t, center, r, sample, &mut rng)? {
        if w1(&m, center)? <= r + 1e-12 {
            best = best.max(q.dist(t, &m)?);
        }
    }
    Ok(best)
}

/// Evidence for `ξ ∈ DQ(τ|ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateProbe {
    pub hs: Vec<f64>,
    pub rates: Vec<f64>,
    pub min_rate: f64,
    pub argmin_h: f64,
}

impl RateProbe {
    /// Header `h,rate`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,rate\n");
        for (h, r) in self.hs.iter().zip(&self.rates) {
            out.push_str(&format!("{},{}\n", fmt17(*h), fmt17(*r)));
        }
        out
    }
}

/// `h_0 β^k` for `k = 0..=K`.
pub fn geometric_grid(h0: f64, beta: f64, k: usize) -> Result<Vec<f64>> {
    if !(h0 > 0.0) || !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Precondition("grid needs h0 > 0 and beta in (0, 1)".into()));
    }
    Ok((0..=k).map(|i| h0 * beta.powi(i as i32)).collect())
}

/// Default grid: `h_0 = 0.1 (T − τ)`, `β = ½`, `K = 12`.
pub fn default_grid(tau: f64, end: f64) -> Result<Vec<f64>> {
    geometric_grid(0.1 * (end - tau), 0.5, 12)
}

/// Membership tolerance `1e-3 (1 + 𝓜_1(ν))`.
pub fn probe_tolerance(nu: &DiscreteMeasure) -> f64 {
    1e-3 * (1.0 + nu.first_moment())
}

pub(crate) fn check_grid(q_end: f64, tau: f64, hs: &[f64]) -> Result<()> {
    if hs.is_empty() {
        return Err(Error::Precondition("empty h grid".into()));
    }
    if hs.windows(2).any(|w| !(w[0] > w[1])) || !(hs[hs.len() - 1] > 0.0) {
        return Err(Error::Precondition("h grid must be positive and strictly decreasing".into()));
    }
    if tau + hs[0] > q_end + 1e-12 * (1.0 + q_end.abs()) {
        return Err(Error::Precondition(format!("h0 = {} exceeds the remaining horizon", hs[0])));
    }
    Ok(())
}

/// `(1/h) W1((Id + hξ)♯ν ; Q(τ + h))` on `hs`; the minimum stands in for the liminf.
pub fn rate_probe(q: &ConstraintTube, tau: f64, nu: &DiscreteMeasure, xi: &VectorField, hs: &[f64]) -> Result<RateProbe> {
    check_grid(q.end(), tau, hs)?;
    if xi.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: nu.dim(), found: xi.dim() });
    }
    let mut rates = Vec::with_capacity(hs.len());
    for &h in hs {
        let pushed = nu.pushforward(|x| {
            let mut y = x.to_vec();
            xi.eval_add(x, h, &mut y);
            y
        })?;
        rates.push(q.dist((tau + h).min(q.end()), &pushed)? / h);
    }
    let mut k = 0;
    for i in 1..rates.len() {
        if rates[i] < rates[k] {
            k = i;
        }
    }
    Ok(RateProbe { min_rate: rates[k], argmin_h: hs[k], hs: hs.to_vec(), rates })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulusRow {
    pub s: f64,
    pub t: f64,
    pub measured: f64,
    /// `∫_s^t M_Q`.
    pub declared: f64,
    /// `(1 + 2c_T)∫_s^t M` when a reference is supplied.
    pub reference: Option<f64>,
    pub declared_violation: bool,
    pub reference_violation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulusTable {
    pub rows: Vec<ModulusRow>,
}

impl ModulusTable {
    pub fn declared_violations(&self) -> usize {
        self.rows.iter().filter(|r| r.declared_violation).count()
    }

    pub fn reference_violations(&self) -> usize {
        self.rows.iter().filter(|r| r.reference_violation).count()
    }
}

/// Reference bound for tubes traced by solutions: `(c_T, M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulusReference {
    pub c_t: f64,
    pub m: StepFunction,
}

/// Measured one-sided semidistances against declared and reference budgets,
/// with tolerance `1e-6 (1 + budget)`.
pub fn ac_modulus_diag(
    q: &ConstraintTube,
    pairs: &[(f64, f64)],
    center: &DiscreteMeasure,
    r: f64,
    sample: usize,
    seed: u64,
    reference: Option<&ModulusReference>,
) -> Result<ModulusTable> {
    if pairs.is_empty() {
        return Err(Error::Precondition("empty (s, t) grid".into()));
    }
    let tol = |b: f64| 1e-6 * (1.0 + b);
    let mut rows = Vec::with_capacity(pairs.len());
    for (k, &(s, t)) in pairs.iter().enumerate() {
        let measured = one_sided_hausdorff(q, s, t, center, r, sample, seed.wrapping_add(k as u64))?;
        let declared = q.modulus().integral(s, t);
        let reference = reference.map(|rf| (1.0 + 2.0 * rf.c_t) * rf.m.integral(s, t));
        rows.push(ModulusRow {
            s,
            t,
            measured,
            declared,
            reference,
            declared_violation: measured > declared + tol(declared),
            reference_violation: reference.is_some_and(|b| measured > b + tol(b)),
        });
    }
    Ok(ModulusTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn dirac(x: f64) -> DiscreteMeasure {
        DiscreteMeasure::dirac(&[x]).unwrap()
    }

    fn line_tube(coeffs: Vec<Vec<f64>>, radius: f64) -> ConstraintTube {
        ConstraintTube::anchor_ball(
            AnchorPath::translation(dirac(0.0), coeffs).unwrap(),
            StepFunction::constant(radius),
            StepFunction::constant(1.0),
            0.0,
            1.0,
        )
        .unwrap()
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
        let pts = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        DiscreteMeasure::new(pts, raw.iter().map(|w| w / s).collect()).unwrap()
    }

    #[test]
    fn moment_cap_example() {
        let q = ConstraintTube::moment_cap(StepFunction::constant(1.0), StepFunction::constant(0.0), 0.0, 1.0).unwrap();
        let (v, w) = q.tube_dist(0.5, &dirac(2.0)).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!(w, dirac(1.0));
        assert!(q.tube_dist(1.5, &dirac(2.0)).is_err());
    }

    #[test]
    fn anchor_member_has_zero_distance() {
        let q = line_tube(vec![vec![0.0], vec![1.0]], 0.0);
        let a = dirac(0.3);
        assert_eq!(q.dist(0.3, &a).unwrap(), 0.0);
    }

    #[test]
    fn sampled_member_is_its_own_witness() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c: Vec<Vec<DiscreteMeasure>> = (0..3).map(|_| (0..2).map(|_| cloud(&mut rng, 3, 2)).collect()).collect();
        let q = ConstraintTube::sampled(vec![0.0, 0.5, 1.0], c.clone(), StepFunction::constant(1.0)).unwrap();
        let (v, w) = q.tube_dist(0.5, &c[1][1]).unwrap();
        assert!(v < 1e-12);
        assert!(w1(&w, &c[1][1]).unwrap() < 1e-12);
    }

    #[test]
    fn witnesses_are_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let anchor = AnchorPath::flow(
            cloud(&mut rng, 3, 2),
            TimeField::constant(VectorField::affine(vec![0.0, -1.0, 1.0, 0.0], vec![0.1, 0.0]).unwrap(), 0.0, 1.0).unwrap(),
        )
        .unwrap();
        let ball = ConstraintTube::anchor_ball(anchor, StepFunction::constant(0.3), StepFunction::constant(2.0), 0.0, 1.0).unwrap();
        let cap = ConstraintTube::moment_cap(StepFunction::constant(0.5), StepFunction::constant(0.0), 0.0, 1.0).unwrap();
        let c: Vec<Vec<DiscreteMeasure>> = (0..2).map(|_| (0..3).map(|_| cloud(&mut rng, 2, 2)).collect()).collect();
        let sampled = ConstraintTube::sampled(vec![0.0, 1.0], c, StepFunction::constant(3.0)).unwrap();
        for q in [&ball, &cap, &sampled] {
            for _ in 0..10 {
                let mu = cloud(&mut rng, 4, 2);
                let t = rng.random_range(0.0..1.0);
                let (_, w) = q.tube_dist(t, &mu).unwrap();
                assert!(q.dist(t, &w).unwrap() < 1e-9);
            }
        }
    }

    #[test]
    fn hausdorff_examples() {
        let q = line_tube(vec![vec![0.0]], 0.5);
        assert!(one_sided_hausdorff(&q, 0.2, 0.8, &dirac(0.0), 1.0, 16, 3).unwrap() < 1e-9);
        let moving = ConstraintTube::anchor_ball(
            AnchorPath::translation(DiscreteMeasure::dirac(&[0.0, 0.0]).unwrap(), vec![vec![0.0, 0.0], vec![0.6, -0.8]]).unwrap(),
            StepFunction::constant(0.5),
            StepFunction::constant(1.0),
            0.0,
            1.0,
        )
        .unwrap();
        let h = one_sided_hausdorff(&moving, 0.0, 0.5, &DiscreteMeasure::dirac(&[0.0, 0.0]).unwrap(), 1.0, 16, 4).unwrap();
        assert!((h - 0.5).abs() < 1e-6, "{h}");
        assert_eq!(one_sided_hausdorff(&q, 0.0, 1.0, &dirac(50.0), 1.0, 16, 5).unwrap(), 0.0);
        assert!(one_sided_hausdorff(&q, 0.0, 1.0, &dirac(0.0), -1.0, 16, 5).is_err());
    }

    #[test]
    fn rate_examples() {
        let q = line_tube(vec![vec![0.0], vec![1.0]], 0.0);
        let hs = default_grid(0.0, 1.0).unwrap();
        let one = VectorField::constant(vec![1.0]).unwrap();
        let p = rate_probe(&q, 0.0, &dirac(0.0), &one, &hs).unwrap();
        assert!(p.rates.iter().all(|&r| r < 1e-12));
        let p = rate_probe(&q, 0.0, &dirac(0.0), &VectorField::zero(1), &hs).unwrap();
        assert!(p.rates.iter().all(|&r| (r - 1.0).abs() < 1e-12));

        let quad = line_tube(vec![vec![0.0], vec![0.0], vec![1.0]], 0.0);
        let p = rate_probe(&quad, 0.0, &dirac(0.0), &VectorField::zero(1), &hs).unwrap();
        for (h, r) in p.hs.iter().zip(&p.rates) {
            assert!((r - h).abs() < 1e-12);
        }
        assert!((p.min_rate - 0.1 * 0.5f64.powi(12)).abs() < 1e-15);
        assert!(rate_probe(&quad, 0.0, &dirac(0.0), &VectorField::zero(1), &[]).is_err());
        assert!(rate_probe(&quad, 0.0, &dirac(0.0), &VectorField::zero(1), &[0.1, 0.2]).is_err());
    }

    #[test]
    fn static_member_has_zero_rates() {
        let q = ConstraintTube::moment_cap(StepFunction::constant(2.0), StepFunction::constant(0.0), 0.0, 1.0).unwrap();
        let p = rate_probe(&q, 0.3, &dirac(1.5), &VectorField::zero(1), &default_grid(0.3, 1.0).unwrap()).unwrap();
        assert!(p.rates.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn modulus_diag_examples() {
        let q = line_tube(vec![vec![0.0]], 0.5);
        let pairs = [(0.0, 0.5), (0.2, 0.9)];
        let t = ac_modulus_diag(&q, &pairs, &dirac(0.0), 1.0, 8, 1, None).unwrap();
        assert!(t.rows.iter().all(|r| r.measured < 1e-12));

        let tf = TimeField::constant(VectorField::identity(1), 0.0, 1.0).unwrap();
        let mu0 = dirac(1.0);
        let traced = ConstraintTube::anchor_ball(
            AnchorPath::flow(mu0.clone(), tf.clone()).unwrap(),
            StepFunction::constant(0.0),
            StepFunction::constant(1f64.exp()),
            0.0,
            1.0,
        )
        .unwrap();
        let m = tf.bound_profile();
        let rf = ModulusReference { c_t: crate::dynamics::c_t(mu0.first_moment(), m.integral(0.0, 1.0)), m };
        let pairs: Vec<(f64, f64)> = (0..5).map(|k| (k as f64 * 0.2, k as f64 * 0.2 + 0.2)).collect();
        let t = ac_modulus_diag(&traced, &pairs, &mu0, 5.0, 8, 2, Some(&rf)).unwrap();
        assert_eq!(t.reference_violations(), 0);
        assert_eq!(t.declared_violations(), 0);

        let jump = ConstraintTube::sampled(
            vec![0.0, 0.5, 0.501, 1.0],
            vec![vec![dirac(0.0)], vec![dirac(0.0)], vec![dirac(1.0)], vec![dirac(1.0)]],
            StepFunction::constant(1.0),
        )
        .unwrap();
        let pairs = [(0.0, 0.5), (0.5, 0.501), (0.501, 1.0)];
        let t = ac_modulus_diag(&jump, &pairs, &dirac(0.0), 2.0, 4, 3, None).unwrap();
        let flags: Vec<bool> = t.rows.iter().map(|r| r.declared_violation).collect();
        assert_eq!(flags, vec![false, true, false]);
        assert!(ac_modulus_diag(&jump, &[], &dirac(0.0), 2.0, 4, 3, None).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn tube_dist_is_one_lipschitz(seed in 0u64..100_000, t in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ball = ConstraintTube::anchor_ball(
                AnchorPath::translation(cloud(&mut rng, 3, 2), vec![vec![0.0, 0.0], vec![1.0, 0.5]]).unwrap(),
                StepFunction::constant(0.4),
                StepFunction::constant(2.0),
                0.0,
                1.0,
            ).unwrap();
            let cap = ConstraintTube::moment_cap(StepFunction::constant(0.7), StepFunction::constant(0.0), 0.0, 1.0).unwrap();
            let a = cloud(&mut rng, 4, 2);
            let b = cloud(&mut rng, 3, 2);
            let d = w1(&a, &b).unwrap();
            for q in [&ball, &cap] {
                prop_assert!((q.dist(t, &a).unwrap() - q.dist(t, &b).unwrap()).abs() <= d + 1e-9);
            }
        }

        #[test]
        fn moment_cap_matches_contraction_search(seed in 0u64..100_000, cap in 0.05f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mu = cloud(&mut rng, 4, 2);
            let q = ConstraintTube::moment_cap(StepFunction::constant(cap), StepFunction::constant(0.0), 0.0, 1.0).unwrap();
            let m = mu.first_moment();
            let kmax = (cap / m).min(1.0);
            let mut best = f64::INFINITY;
            for i in 0..=40 {
                let k = kmax * i as f64 / 40.0;
                best = best.min(w1(&mu, &mu.scale(k).unwrap()).unwrap());
            }
            prop_assert!((q.dist(0.5, &mu).unwrap() - best).abs() <= 1e-8);
        }
    }
}
