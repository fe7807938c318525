//! Characteristic-flow solutions of continuity equations and inclusions.
//!
//! Every atom is advanced with classical RK4. The time grid contains all
//! knots of the fields involved, and each knot-to-knot segment is split
//! uniformly so that every step carries at most `m_budget` of `∫M`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{check_simplex, convex_combine, time_average, TimeField, VectorField};
use crate::measures::{fmt17, norm, DiscreteMeasure};
use crate::profile::StepFunction;
use crate::transport::w1;

pub const BLOW_UP: f64 = 1e9;

/// Substep control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPolicy {
    /// Upper bound on `∫M` over a single RK4 step.
    pub m_budget: f64,
    /// Upper bound on the step length.
    pub max_step: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self { m_budget: 0.025, max_step: f64::INFINITY }
    }
}

/// `c_T = 2 (𝓜_1(μ_0) + ∫M) exp(2 ∫M)`.
pub fn c_t(moment0: f64, int_m: f64) -> f64 {
    2.0 * (moment0 + int_m) * (2.0 * int_m).exp()
}

/// Summary statistics through which generators see the measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Stats {
    pub barycenter: Vec<f64>,
    pub moment: f64,
}

impl Stats {
    pub fn of(mu: &DiscreteMeasure) -> Self {
        Self { barycenter: mu.barycenter(), moment: mu.first_moment() }
    }

    fn of_coords(dim: usize, coords: &[f64], weights: &[f64]) -> Self {
        let mut barycenter = vec![0.0; dim];
        let mut moment = 0.0;
        for (x, w) in coords.chunks_exact(dim).zip(weights) {
            barycenter.iter_mut().zip(x).for_each(|(b, xi)| *b += w * xi);
            moment += w * norm(x);
        }
        Self { barycenter, moment }
    }
}

/// `g(t, μ)(x) = base(t)(x) + κ (bary(μ) − x) + 𝓜_1(μ) e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub base: TimeField,
    pub barycenter_gain: f64,
    pub moment_push: Vec<f64>,
}

impl Generator {
    pub fn new(base: TimeField, barycenter_gain: f64, moment_push: Vec<f64>) -> Result<Self> {
        if !(barycenter_gain >= 0.0) || !barycenter_gain.is_finite() {
            return Err(Error::Precondition("barycenter gain must be finite and >= 0".into()));
        }
        if moment_push.len() != base.dim() || moment_push.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("moment push must be a finite vector of the field dimension".into()));
        }
        Ok(Self { base, barycenter_gain, moment_push })
    }

    /// A measure-independent generator.
    pub fn plain(base: TimeField) -> Self {
        let d = base.dim();
        Self { base, barycenter_gain: 0.0, moment_push: vec![0.0; d] }
    }

    pub fn is_measure_independent(&self) -> bool {
        self.barycenter_gain == 0.0 && self.moment_push.iter().all(|v| *v == 0.0)
    }

    pub fn field_at(&self, t: f64, stats: &Stats) -> VectorField {
        let base = self.base.at(t).clone();
        if self.is_measure_independent() {
            return base;
        }
        let d = self.base.dim();
        let k = self.barycenter_gain;
        let mut parts = vec![base];
        if k != 0.0 || self.moment_push.iter().any(|v| *v != 0.0) {
            let mut a = vec![0.0; d * d];
            (0..d).for_each(|i| a[i * d + i] = -k);
            let b = (0..d).map(|i| k * stats.barycenter[i] + stats.moment * self.moment_push[i]).collect();
            parts.push(VectorField::affine(a, b).expect("finite coupling"));
        }
        VectorField::sum(parts).expect("same dimension")
    }

    /// Per-piece `(M, L)` values on the base knots.
    fn bound_profiles(&self) -> (StepFunction, StepFunction) {
        let k = self.barycenter_gain;
        let e = norm(&self.moment_push);
        let knots = self.base.knots();
        let breaks = knots[1..knots.len() - 1].to_vec();
        let m = self
            .base
            .fields()
            .iter()
            .map(|f| (f.lip_bound() + k).max(f.sublinear_bound() + k + e))
            .collect();
        let l = vec![k + e; self.base.fields().len()];
        (
            StepFunction::new(breaks.clone(), m).expect("knots increasing"),
            StepFunction::new(breaks, l).expect("knots increasing"),
        )
    }
}

/// Convex hull of finitely many generators, with bound profiles M and L.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySet {
    generators: Vec<Generator>,
    m_profile: StepFunction,
    l_profile: StepFunction,
}

impl VelocitySet {
    /// Profiles are computed from the generators' analytic bounds.
    pub fn new(generators: Vec<Generator>) -> Result<Self> {
        let first = generators.first().ok_or_else(|| Error::Precondition("empty generator list".into()))?;
        let d = first.base.dim();
        if let Some(g) = generators.iter().find(|g| g.base.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: g.base.dim() });
        }
        let (mut m, mut l) = first.bound_profiles();
        for g in &generators[1..] {
            let (gm, gl) = g.bound_profiles();
            m = m.max(&gm);
            l = l.max(&gl);
        }
        Ok(Self { generators, m_profile: m, l_profile: l })
    }

    /// Replaces the profiles with declared ones, which must dominate the
    /// analytic bounds.
    pub fn with_profiles(mut self, m: StepFunction, l: StepFunction) -> Result<Self> {
        let mut knots: Vec<f64> = self.m_profile.breaks().iter().chain(self.l_profile.breaks()).chain(m.breaks()).chain(l.breaks()).copied().collect();
        knots.push(self.start());
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        for &t in &knots {
            if m.at(t) < self.m_profile.at(t) - 1e-12 {
                return Err(Error::Precondition(format!(
                    "declared M({t}) = {} is below the analytic bound {}",
                    m.at(t),
                    self.m_profile.at(t)
                )));
            }
            if l.at(t) < self.l_profile.at(t) - 1e-12 {
                return Err(Error::Precondition(format!(
                    "declared L({t}) = {} is below the analytic bound {}",
                    l.at(t),
                    self.l_profile.at(t)
                )));
            }
        }
        self.m_profile = m;
        self.l_profile = l;
        Ok(self)
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.generators[0].base.dim()
    }

    pub fn start(&self) -> f64 {
        self.generators.iter().map(|g| g.base.start()).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn end(&self) -> f64 {
        self.generators.iter().map(|g| g.base.end()).fold(f64::INFINITY, f64::min)
    }

    pub fn m_profile(&self) -> &StepFunction {
        &self.m_profile
    }

    pub fn l_profile(&self) -> &StepFunction {
        &self.l_profile
    }

    pub fn is_measure_independent(&self) -> bool {
        self.generators.iter().all(Generator::is_measure_independent)
    }

    /// All generator knots inside `(a, b)`.
    pub fn knots_in(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .generators
            .iter()
            .flat_map(|g| g.base.knots().iter().copied())
            .filter(|&t| t > a && t < b)
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// `g_λ(t, μ) = Σ λ_j g_j(t, μ)`.
    pub fn select(&self, lambda: &[f64], t: f64, stats: &Stats) -> Result<VectorField> {
        let fields: Vec<VectorField> = self.generators.iter().map(|g| g.field_at(t, stats)).collect();
        convex_combine(&fields, lambda)
    }
}

/// Piecewise-constant simplex weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    knots: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

impl Schedule {
    pub fn new(knots: Vec<f64>, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || knots.len() != weights.len() + 1 {
            return Err(Error::Precondition("schedule needs n pieces and n + 1 knots".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Precondition("schedule knots must be strictly increasing".into()));
        }
        let k = weights[0].len();
        for w in &weights {
            if w.len() != k {
                return Err(Error::Precondition("schedule pieces have different lengths".into()));
            }
            check_simplex(w)?;
        }
        Ok(Self { knots, weights })
    }

    pub fn constant(lambda: Vec<f64>, start: f64, end: f64) -> Result<Self> {
        Self::new(vec![start, end], vec![lambda])
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn end(&self) -> f64 {
        *self.knots.last().expect("nonempty")
    }

    pub fn at(&self, t: f64) -> &[f64] {
        let k = self.knots.partition_point(|&b| b <= t).saturating_sub(1).min(self.weights.len() - 1);
        &self.weights[k]
    }
}

/// A solution sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub measures: Vec<DiscreteMeasure>,
    /// Applied velocities. For measure-dependent generators each step
    /// records the field frozen at the step's initial statistics.
    pub selection: TimeField,
    /// `∫M` over the step ending at each node (0 at the first node).
    pub step_budget: Vec<f64>,
    pub moments: Vec<f64>,
}

impl Trajectory {
    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    pub fn last(&self) -> &DiscreteMeasure {
        self.measures.last().expect("nonempty")
    }

    /// Measure at the last node with time ≤ `t`.
    pub fn node_at_or_before(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t + 1e-12).saturating_sub(1)
    }

    /// Header `t,node_index,w,x1..xd`; `node_index` is the time-node index
    /// and atoms follow in their fixed order.
    pub fn to_csv(&self) -> String {
        let d = self.measures[0].dim();
        let mut out = String::from("t,node_index,w");
        for k in 1..=d {
            out.push_str(&format!(",x{k}"));
        }
        out.push('\n');
        for (k, (t, mu)) in self.times.iter().zip(&self.measures).enumerate() {
            for (x, w) in mu.points().zip(mu.weights()) {
                out.push_str(&format!("{},{k},{}", fmt17(*t), fmt17(*w)));
                for v in x {
                    out.push(',');
                    out.push_str(&fmt17(*v));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Concatenates `next`, which must start where `self` ends.
    pub fn extend(&mut self, next: Trajectory) -> Result<()> {
        if (self.end() - next.start()).abs() > 1e-12 {
            return Err(Error::Precondition("trajectories are not contiguous".into()));
        }
        self.selection.append(&next.selection)?;
        self.times.extend(next.times.into_iter().skip(1));
        self.measures.extend(next.measures.into_iter().skip(1));
        self.step_budget.extend(next.step_budget.into_iter().skip(1));
        self.moments.extend(next.moments.into_iter().skip(1));
        Ok(())
    }
}

/// Grid over `[a, b]` containing `knots`, with per-step `∫M ≤ m_budget`.
pub fn step_grid(a: f64, b: f64, knots: &[f64], m: &StepFunction, policy: &StepPolicy) -> Vec<f64> {
    let mut cuts: Vec<f64> = knots.iter().copied().chain(m.breaks().iter().copied()).filter(|&t| t > a && t < b).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = vec![a];
    edges.extend(cuts);
    edges.push(b);
    let mut grid = vec![a];
    for w in edges.windows(2) {
        let (s, e) = (w[0], w[1]);
        let by_m = (m.integral(s, e) / policy.m_budget).ceil();
        let by_len = ((e - s) / policy.max_step).ceil();
        let k = by_m.max(by_len).max(1.0) as usize;
        for i in 1..k {
            grid.push(s + (e - s) * i as f64 / k as f64);
        }
        grid.push(e);
    }
    grid
}

/// One RK4 step for all atoms. `vel(t_stage, coords, out)` fills velocities.
fn rk4_step<F>(coords: &[f64], t0: f64, h: f64, vel: &mut F) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = coords.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    vel(t0, coords, &mut k1)?;
    for i in 0..n {
        tmp[i] = coords[i] + 0.5 * h * k1[i];
    }
    vel(t0 + 0.5 * h, &tmp, &mut k2)?;
    for i in 0..n {
        tmp[i] = coords[i] + 0.5 * h * k2[i];
    }
    vel(t0 + 0.5 * h, &tmp, &mut k3)?;
    for i in 0..n {
        tmp[i] = coords[i] + h * k3[i];
    }
    vel(t0 + h, &tmp, &mut k4)?;
    Ok((0..n).map(|i| coords[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

fn check_blow_up(dim: usize, coords: &[f64], t: f64) -> Result<()> {
    if coords.chunks_exact(dim).any(|x| !(norm(x) <= BLOW_UP)) {
        return Err(Error::Divergence { time: t, limit: BLOW_UP });
    }
    Ok(())
}

fn field_eval_all(f: &VectorField, dim: usize, coords: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (x, o) in coords.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
        f.eval_add(x, 1.0, o);
    }
}

/// Final measure of the flow of `tf` from `t0` to `t1`, without bookkeeping.
pub fn flow_measure(tf: &TimeField, mu: &DiscreteMeasure, t0: f64, t1: f64, policy: &StepPolicy) -> Result<DiscreteMeasure> {
    if t1 == t0 {
        return Ok(mu.clone());
    }
    Ok(flow_solve(tf, mu, t0, t1, policy)?.last().clone())
}

fn check_window(start: f64, end: f64, tau: f64, t_end: f64) -> Result<()> {
    if !(tau < t_end) {
        return Err(Error::Precondition(format!("need tau < t_end, got {tau} and {t_end}")));
    }
    let slack = 1e-12 * (1.0 + end.abs().max(start.abs()));
    if tau < start - slack || t_end > end + slack {
        return Err(Error::Precondition(format!("[{tau}, {t_end}] leaves the working interval [{start}, {end}]")));
    }
    Ok(())
}

/// Flow of the continuity equation driven by `tf`, from `mu0` at `tau`.
pub fn flow_solve(tf: &TimeField, mu0: &DiscreteMeasure, tau: f64, t_end: f64, policy: &StepPolicy) -> Result<Trajectory> {
    check_window(tf.start(), tf.end(), tau, t_end)?;
    if tf.dim() != mu0.dim() {
        return Err(Error::DimensionMismatch { expected: tf.dim(), found: mu0.dim() });
    }
    let m = tf.bound_profile();
    let grid = step_grid(tau, t_end, tf.knots(), &m, policy);
    let dim = mu0.dim();
    let mut coords = mu0.coords().to_vec();
    let mut measures = vec![mu0.clone()];
    let mut step_budget = vec![0.0];
    let mut moments = vec![mu0.first_moment()];
    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let f = tf.at(0.5 * (t0 + t1));
        let mut vel = |_: f64, c: &[f64], out: &mut [f64]| {
            field_eval_all(f, dim, c, out);
            Ok(())
        };
        coords = rk4_step(&coords, t0, t1 - t0, &mut vel)?;
        check_blow_up(dim, &coords, t1)?;
        let mu = mu0.with_coords(coords.clone());
        moments.push(mu.first_moment());
        measures.push(mu);
        step_budget.push(m.integral(t0, t1));
    }
    Ok(Trajectory { times: grid, measures, selection: tf.clone(), step_budget, moments })
}

/// Solution of the inclusion for the selection `v(t) = g_{λ(t)}(t, μ(t))`.
pub fn inclusion_solve(
    v: &VelocitySet,
    schedule: &Schedule,
    mu0: &DiscreteMeasure,
    tau: f64,
    t_end: f64,
    policy: &StepPolicy,
) -> Result<Trajectory> {
    check_window(v.start(), v.end(), tau, t_end)?;
    check_window(schedule.start(), schedule.end(), tau, t_end)?;
    if v.dim() != mu0.dim() {
        return Err(Error::DimensionMismatch { expected: v.dim(), found: mu0.dim() });
    }
    if schedule.weights()[0].len() != v.len() {
        return Err(Error::Precondition(format!(
            "schedule has {} weights for {} generators",
            schedule.weights()[0].len(),
            v.len()
        )));
    }
    let mut knots = v.knots_in(tau, t_end);
    knots.extend(schedule.knots().iter().copied());
    let grid = step_grid(tau, t_end, &knots, v.m_profile(), policy);
    let dim = mu0.dim();
    let weights = mu0.weights();
    let independent = v.is_measure_independent();
    let mut coords = mu0.coords().to_vec();
    let mut measures = vec![mu0.clone()];
    let mut step_budget = vec![0.0];
    let mut moments = vec![mu0.first_moment()];
    let mut fields = Vec::with_capacity(grid.len() - 1);
    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let mid = 0.5 * (t0 + t1);
        let lambda = schedule.at(mid);
        let frozen = v.select(lambda, mid, &Stats::of_coords(dim, &coords, weights))?;
        let mut vel = |_: f64, c: &[f64], out: &mut [f64]| {
            if independent {
                field_eval_all(&frozen, dim, c, out);
            } else {
                let f = v.select(lambda, mid, &Stats::of_coords(dim, c, weights))?;
                field_eval_all(&f, dim, c, out);
            }
            Ok(())
        };
        coords = rk4_step(&coords, t0, t1 - t0, &mut vel)?;
        check_blow_up(dim, &coords, t1)?;
        let mu = mu0.with_coords(coords.clone());
        moments.push(mu.first_moment());
        measures.push(mu);
        step_budget.push(v.m_profile().integral(t0, t1));
        fields.push(frozen);
    }
    let selection = TimeField::new(grid.clone(), fields)?;
    Ok(Trajectory { times: grid, measures, selection, step_budget, moments })
}

/// A random schedule with `pieces` equal-length pieces. Each piece is a
/// uniformly chosen vertex with probability ½, otherwise a flat-Dirichlet
/// point of the simplex.
pub fn random_schedule(k: usize, tau: f64, t_end: f64, pieces: usize, rng: &mut impl Rng) -> Result<Schedule> {
    let pieces = pieces.max(1);
    let knots: Vec<f64> = (0..=pieces).map(|i| tau + (t_end - tau) * i as f64 / pieces as f64).collect();
    let mut weights = Vec::with_capacity(pieces);
    for _ in 0..pieces {
        let mut lam = vec![0.0; k];
        if rng.random_bool(0.5) {
            lam[rng.random_range(0..k)] = 1.0;
        } else {
            let e: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
            let s: f64 = e.iter().sum();
            lam.iter_mut().zip(&e).for_each(|(l, x)| *l = x / s);
        }
        weights.push(lam);
    }
    Schedule::new(knots, weights)
}

/// Deterministic per-sample generator: seed `seed + index`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index))
}

/// Trajectories for `n` random schedules, in index order.
pub fn reachable_trajectories(
    v: &VelocitySet,
    mu0: &DiscreteMeasure,
    tau: f64,
    t_end: f64,
    n: usize,
    seed: u64,
    pieces: usize,
    policy: &StepPolicy,
) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::Precondition("need at least one sample".into()));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let sched = random_schedule(v.len(), tau, t_end, pieces, &mut rng)?;
            inclusion_solve(v, &sched, mu0, tau, t_end, policy)
        })
        .collect()
}

/// Terminal measures of `n` random-schedule solutions.
pub fn reachable_sample(
    v: &VelocitySet,
    mu0: &DiscreteMeasure,
    tau: f64,
    t_end: f64,
    n: usize,
    seed: u64,
    pieces: usize,
) -> Result<Vec<DiscreteMeasure>> {
    Ok(reachable_trajectories(v, mu0, tau, t_end, n, seed, pieces, &StepPolicy::default())?
        .into_iter()
        .map(|t| t.last().clone())
        .collect())
}

/// One row of the estimate monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRow {
    pub t: f64,
    pub moment: f64,
    pub w1_increment: f64,
    pub budget: f64,
    pub moment_slack: f64,
    pub increment_slack: f64,
    /// `(1 + 2c_T)∫_{t_0}^{t} M − W1(μ(t_0), μ(t))`.
    pub cumulative_slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorReport {
    pub c_t: f64,
    pub rows: Vec<MonitorRow>,
    pub violations: usize,
}

impl MonitorReport {
    /// Header `t,moment,w1_increment,budget`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,moment,w1_increment,budget\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", fmt17(r.t), fmt17(r.moment), fmt17(r.w1_increment), fmt17(r.budget)));
        }
        out
    }
}

/// Checks the moment bound `𝓜_1 ≤ c_T` and the increment bound
/// `W1(μ(s), μ(t)) ≤ (1 + 2c_T)∫_s^t M` on consecutive nodes and from the
/// first node.
pub fn estimate_monitor(traj: &Trajectory, m: &StepFunction, moment0: f64) -> Result<MonitorReport> {
    let t0 = traj.start();
    let ct = c_t(moment0, m.integral(t0, traj.end()));
    let factor = 1.0 + 2.0 * ct;
    let tol = |scale: f64| 1e-6 * (1.0 + scale);
    let mut rows = Vec::with_capacity(traj.times.len());
    let mut violations = 0;
    for k in 0..traj.times.len() {
        let t = traj.times[k];
        let moment = traj.measures[k].first_moment();
        let (inc, budget) = if k == 0 {
            (0.0, 0.0)
        } else {
            let b = factor * m.integral(traj.times[k - 1], t);
            (w1(&traj.measures[k - 1], &traj.measures[k])?, b)
        };
        let cum_budget = factor * m.integral(t0, t);
        let cum = if k == 0 { 0.0 } else { w1(&traj.measures[0], &traj.measures[k])? };
        let row = MonitorRow {
            t,
            moment,
            w1_increment: inc,
            budget,
            moment_slack: ct - moment,
            increment_slack: budget - inc,
            cumulative_slack: cum_budget - cum,
        };
        if row.moment_slack < -tol(ct) || row.increment_slack < -tol(budget) || row.cumulative_slack < -tol(cum_budget) {
            violations += 1;
        }
        rows.push(row);
    }
    Ok(MonitorReport { c_t: ct, rows, violations })
}

/// `lhs = W1(μ(τ+h), (Id + ∫_τ^{τ+h} v)♯μ_τ)` and
/// `bound = (1 + C_T)(1 + 𝓜_1(μ_τ)) (∫_τ^{τ+h} M)²` with
/// `C_T = exp(∫M)` over the working interval of `tf`.
pub fn second_order_defect(tf: &TimeField, mu0: &DiscreteMeasure, tau: f64, h: f64, policy: &StepPolicy) -> Result<(f64, f64)> {
    if !(h > 0.0) {
        return Err(Error::Precondition(format!("h = {h} must be positive")));
    }
    let flowed = flow_measure(tf, mu0, tau, tau + h, policy)?;
    let avg = time_average(tf, tau, h)?;
    let pushed = mu0.pushforward(|x| {
        let mut y = x.to_vec();
        avg.eval_add(x, h, &mut y);
        y
    })?;
    let lhs = w1(&flowed, &pushed)?;
    let m = tf.bound_profile();
    let int_m = m.integral(tau, tau + h);
    let c_big = m.integral(tf.start(), tf.end()).exp();
    let bound = (1.0 + c_big) * (1.0 + mu0.first_moment()) * int_m * int_m;
    Ok((lhs, bound))
}
