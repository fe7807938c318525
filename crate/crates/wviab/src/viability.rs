//! Viability probes and the two constructive schemes.
//!
//! `lipschitz_construct` follows a uniform mesh and picks tangent
//! velocities by pointwise probing. `usc_construct` builds an admissible
//! triple greedily: geodesic pieces across the declared bad set, flowed
//! pieces with integral-probe selections elsewhere.

use rayon::prelude::*;

use crate::constraints::{check_grid, default_grid, probe_tolerance, rate_probe, AnchorPath, ConstraintTube, RateProbe, TubeKind};
use crate::dynamics::{c_t, flow_measure, flow_solve, inclusion_solve, random_schedule, sample_rng, Schedule, Stats, StepPolicy, Trajectory, VelocitySet};
use crate::error::{Error, Result};
use crate::fields::{time_average, TimeField, VectorField};
use crate::measures::{fmt17, DiscreteMeasure};
use crate::profile::StepFunction;
use crate::transport::{glue_combine, interpolate, w1, w1_exact, TransportPlan};

/// Simplex search resolutions and the failure threshold factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub coarse: usize,
    pub fine: usize,
    /// A probe fails when its rate exceeds `failure_factor · tol`.
    pub failure_factor: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { coarse: 8, fine: 32, failure_factor: 10.0 }
    }
}

/// Compositions of `res` into `k` parts as weights, `e_1` first, then
/// lexicographically decreasing.
pub fn simplex_grid(k: usize, res: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for a in (0..=left).rev() {
            prefix.push(a);
            rec(k - 1, left - a, prefix, out);
            prefix.pop();
        }
    }
    let mut raw = Vec::new();
    if k > 0 && res > 0 {
        rec(k, res, &mut Vec::new(), &mut raw);
    }
    raw.into_iter().map(|c| c.into_iter().map(|a| a as f64 / res as f64).collect()).collect()
}

/// Points of the `fine` grid within `radius` of `center` in every coordinate.
fn refinement_grid(center: &[f64], fine: usize, radius: f64) -> Vec<Vec<f64>> {
    simplex_grid(center.len(), fine)
        .into_iter()
        .filter(|l| l.iter().zip(center).all(|(a, b)| (a - b).abs() <= radius + 1e-12))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseResult {
    pub lambda: Vec<f64>,
    pub rate: f64,
    pub probe: RateProbe,
}

/// Minimizes the rate of `g_λ(τ, ν)` over the coarse simplex grid, then
/// over the fine grid around the incumbent. Ties keep the earlier candidate.
pub fn pointwise_probe(
    v: &VelocitySet,
    q: &ConstraintTube,
    tau: f64,
    nu: &DiscreteMeasure,
    hs: &[f64],
    search: &SearchOptions,
) -> Result<PointwiseResult> {
    if v.is_empty() {
        return Err(Error::Precondition("empty generator list".into()));
    }
    check_grid(q.end(), tau, hs)?;
    let slack = search.failure_factor * probe_tolerance(nu);
    let d0 = q.dist(tau, nu)?;
    if d0 > slack {
        return Err(Error::Precondition(format!("nu is {d0} away from Q({tau}), above the slack {slack}")));
    }
    let stats = Stats::of(nu);
    let eval = |lam: &[f64]| -> Result<RateProbe> {
        let f = v.select(lam, tau, &stats)?;
        rate_probe(q, tau, nu, &f, hs)
    };
    let mut best: Option<PointwiseResult> = None;
    let consider = |lam: Vec<f64>, best: &mut Option<PointwiseResult>| -> Result<()> {
        let probe = eval(&lam)?;
        if best.as_ref().is_none_or(|b| probe.min_rate < b.rate) {
            *best = Some(PointwiseResult { rate: probe.min_rate, lambda: lam, probe });
        }
        Ok(())
    };
    for lam in simplex_grid(v.len(), search.coarse) {
        consider(lam, &mut best)?;
    }
    let center = best.as_ref().expect("nonempty grid").lambda.clone();
    for lam in refinement_grid(&center, search.fine, 1.0 / search.coarse as f64) {
        consider(lam, &mut best)?;
    }
    Ok(best.expect("nonempty grid"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralResult {
    pub h: f64,
    /// One or two weight vectors over `[τ, τ + h]`.
    pub schedule: Schedule,
    /// Measure whose statistics feed the generators (within `r` of ν).
    pub input: DiscreteMeasure,
    /// Selection on `[τ, τ + h]`.
    pub selection: TimeField,
    pub rate: f64,
}

/// Piecewise selection `s ↦ g_{λ(s)}(s, input)` on `[τ, τ + h]`.
fn build_selection(v: &VelocitySet, sched: &Schedule, stats: &Stats) -> Result<TimeField> {
    let (a, b) = (sched.start(), sched.end());
    let mut knots: Vec<f64> = sched.knots().to_vec();
    knots.extend(v.knots_in(a, b));
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let fields = knots
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            v.select(sched.at(mid), mid, stats)
        })
        .collect::<Result<Vec<_>>>()?;
    TimeField::new(knots, fields)
}

fn two_piece(tau: f64, h: f64, a: &[f64], b: Option<&[f64]>) -> Result<Schedule> {
    match b {
        None => Schedule::constant(a.to_vec(), tau, tau + h),
        Some(b) => Schedule::new(vec![tau, tau + 0.5 * h, tau + h], vec![a.to_vec(), b.to_vec()]),
    }
}

/// Statistic inputs within `r` of ν: ν and its translates by `±r e_k`.
fn perturbations(v: &VelocitySet, nu: &DiscreteMeasure, r: f64) -> Result<Vec<DiscreteMeasure>> {
    let mut out = vec![nu.clone()];
    if v.is_measure_independent() {
        return Ok(out);
    }
    for k in 0..nu.dim() {
        for sign in [1.0, -1.0] {
            let mut c = vec![0.0; nu.dim()];
            c[k] = sign * r;
            out.push(nu.translate(&c)?);
        }
    }
    Ok(out)
}

/// Searches one- or two-piece schedules with generator inputs in the
/// `r`-ball surrogate; the tested direction is the time average of the
/// scheduled selection.
pub fn integral_probe(
    v: &VelocitySet,
    q: &ConstraintTube,
    tau: f64,
    nu: &DiscreteMeasure,
    r: f64,
    hs: &[f64],
    pieces: usize,
    search: &SearchOptions,
) -> Result<IntegralResult> {
    if !(r > 0.0) {
        return Err(Error::Precondition(format!("radius r = {r} must be positive")));
    }
    if v.is_empty() {
        return Err(Error::Precondition("empty generator list".into()));
    }
    if !(1..=2).contains(&pieces) {
        return Err(Error::Precondition("schedules have 1 or 2 pieces".into()));
    }
    check_grid(q.end(), tau, hs)?;
    let inputs = perturbations(v, nu, r)?;
    let eval = |h: f64, input: &DiscreteMeasure, a: &[f64], b: Option<&[f64]>| -> Result<IntegralResult> {
        let sched = two_piece(tau, h, a, b)?;
        let sel = build_selection(v, &sched, &Stats::of(input))?;
        let xi = time_average(&sel, tau, h)?;
        let pushed = nu.pushforward(|x| {
            let mut y = x.to_vec();
            xi.eval_add(x, h, &mut y);
            y
        })?;
        let rate = q.dist((tau + h).min(q.end()), &pushed)? / h;
        Ok(IntegralResult { h, schedule: sched, input: input.clone(), selection: sel, rate })
    };
    let better = |c: &IntegralResult, best: &Option<IntegralResult>| best.as_ref().is_none_or(|b| c.rate < b.rate);
    let coarse = simplex_grid(v.len(), search.coarse);
    let mut best: Option<IntegralResult> = None;
    for &h in hs {
        for input in &inputs {
            for a in &coarse {
                if pieces == 1 {
                    let c = eval(h, input, a, None)?;
                    if better(&c, &best) {
                        best = Some(c);
                    }
                    continue;
                }
                for b in &coarse {
                    let c = eval(h, input, a, Some(b))?;
                    if better(&c, &best) {
                        best = Some(c);
                    }
                }
            }
        }
    }
    // Coordinate-wise refinement of the incumbent's pieces.
    let radius = 1.0 / search.coarse as f64;
    let mut inc = best.expect("nonempty search");
    for piece in 0..pieces {
        let weights = inc.schedule.weights().to_vec();
        for lam in refinement_grid(&weights[piece], search.fine, radius) {
            let (a, b) = if pieces == 1 {
                (lam.clone(), None)
            } else if piece == 0 {
                (lam.clone(), Some(weights[1].clone()))
            } else {
                (weights[0].clone(), Some(lam.clone()))
            };
            let c = eval(inc.h, &inc.input.clone(), &a, b.as_deref())?;
            if c.rate < inc.rate {
                inc = c;
            }
        }
    }
    Ok(inc)
}

/// Output of the uniform-mesh scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzRun {
    pub trajectory: Trajectory,
    pub nodes: Vec<f64>,
    /// `W1(μ(t_k); Q(t_k))` at each mesh node.
    pub defects: Vec<f64>,
    pub lambdas: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
    pub schedule: Schedule,
}

impl LipschitzRun {
    pub fn max_defect(&self) -> f64 {
        self.defects.iter().cloned().fold(0.0, f64::max)
    }

    /// Header `t_k,defect`.
    pub fn defects_csv(&self) -> String {
        let mut out = String::from("t_k,defect\n");
        for (t, d) in self.nodes.iter().zip(&self.defects) {
            out.push_str(&format!("{},{}\n", fmt17(*t), fmt17(*d)));
        }
        out
    }
}

/// Mesh `t_k = τ + (T − τ)k/n`. At each node the current measure is
/// projected onto the tube, the pointwise probe picks weights there, and the
/// inclusion is integrated with those weights up to the next node.
pub fn lipschitz_construct(
    v: &VelocitySet,
    q: &ConstraintTube,
    tau: f64,
    mu_tau: &DiscreteMeasure,
    n: usize,
    search: &SearchOptions,
    policy: &StepPolicy,
) -> Result<LipschitzRun> {
    if n == 0 {
        return Err(Error::Precondition("mesh size n must be >= 1".into()));
    }
    let end = q.end();
    if !(tau < end) {
        return Err(Error::Precondition(format!("need tau < T, got {tau} and {end}")));
    }
    let tol = probe_tolerance(mu_tau);
    let d0 = q.dist(tau, mu_tau)?;
    if d0 > tol {
        return Err(Error::Precondition(format!("initial measure is {d0} away from Q({tau})")));
    }
    let nodes: Vec<f64> = (0..=n).map(|k| if k == n { end } else { tau + (end - tau) * k as f64 / n as f64 }).collect();
    let mut traj: Option<Trajectory> = None;
    let mut current = mu_tau.clone();
    let mut defects = Vec::with_capacity(n + 1);
    let mut lambdas = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    for k in 0..n {
        let (t0, t1) = (nodes[k], nodes[k + 1]);
        let (defect, nu) = q.tube_dist(t0, &current)?;
        defects.push(defect);
        let hs = default_grid(t0, end)?;
        let probe = pointwise_probe(v, q, t0, &nu, &hs, search)?;
        let threshold = search.failure_factor * probe_tolerance(&nu);
        if probe.rate > threshold {
            return Err(Error::Infeasible { time: t0, rate: probe.rate, threshold });
        }
        let sched = Schedule::constant(probe.lambda.clone(), t0, t1)?;
        let piece = inclusion_solve(v, &sched, &current, t0, t1, policy)?;
        current = piece.last().clone();
        match traj.as_mut() {
            None => traj = Some(piece),
            Some(tr) => tr.extend(piece)?,
        }
        lambdas.push(probe.lambda);
        rates.push(probe.rate);
    }
    defects.push(q.dist(end, &current)?);
    let schedule = Schedule::new(nodes.clone(), lambdas.clone())?;
    Ok(LipschitzRun { trajectory: traj.expect("n >= 1"), nodes, defects, lambdas, rates, schedule })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallOptions {
    pub samples: usize,
    pub seed: u64,
    pub pieces: usize,
    /// Defaults to `1e-3 (1 + 𝓜_1(μ_τ))`.
    pub slack: Option<f64>,
    /// Additional candidate schedules.
    pub extra: Vec<Schedule>,
    /// Adds the schedule of `lipschitz_construct` with this mesh when it succeeds.
    pub lipschitz_mesh: Option<usize>,
}

impl Default for GronwallOptions {
    fn default() -> Self {
        Self { samples: 32, seed: 0, pieces: 4, slack: None, extra: Vec::new(), lipschitz_mesh: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallReport {
    pub times: Vec<f64>,
    pub g: Vec<f64>,
    pub bound: Vec<f64>,
    pub slack: f64,
    pub violations: Vec<bool>,
    pub candidates: usize,
}

impl GronwallReport {
    /// Negative as soon as any time violates the envelope.
    pub fn viable(&self) -> bool {
        !self.violations.iter().any(|&v| v)
    }

    /// Header `t,g,bound`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,g,bound\n");
        for ((t, g), b) in self.times.iter().zip(&self.g).zip(&self.bound) {
            out.push_str(&format!("{},{},{}\n", fmt17(*t), fmt17(*g), fmt17(*b)));
        }
        out
    }
}

/// Measures of one schedule at the grid times, by chained solves.
fn solve_on_grid(v: &VelocitySet, sched: &Schedule, mu: &DiscreteMeasure, grid: &[f64], policy: &StepPolicy) -> Result<Vec<DiscreteMeasure>> {
    let mut out = vec![mu.clone()];
    for w in grid.windows(2) {
        let next = inclusion_solve(v, sched, out.last().expect("nonempty"), w[0], w[1], policy)?;
        out.push(next.last().clone());
    }
    Ok(out)
}

/// `g(t) = min` over candidate solutions of `W1(μ(t); Q(t))`, checked
/// against `g(τ) exp(∫_τ^t (1 + M + L)) + slack`. Candidates: constant
/// vertex schedules, the barycentric schedule, random schedules and any
/// extra schedules.
pub fn gronwall_track(
    v: &VelocitySet,
    q: &ConstraintTube,
    mu_tau: &DiscreteMeasure,
    grid: &[f64],
    opts: &GronwallOptions,
) -> Result<GronwallReport> {
    if opts.samples == 0 {
        return Err(Error::Precondition("need at least one sample".into()));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Precondition("time grid needs at least two increasing times".into()));
    }
    let (tau, end) = (grid[0], *grid.last().expect("nonempty"));
    let k = v.len();
    let policy = StepPolicy::default();
    let mut scheds = Vec::new();
    for j in 0..k {
        let mut e = vec![0.0; k];
        e[j] = 1.0;
        scheds.push(Schedule::constant(e, tau, end)?);
    }
    scheds.push(Schedule::constant(vec![1.0 / k as f64; k], tau, end)?);
    for i in 0..opts.samples as u64 {
        scheds.push(random_schedule(k, tau, end, opts.pieces, &mut sample_rng(opts.seed, i))?);
    }
    scheds.extend(opts.extra.iter().cloned());
    if let Some(n) = opts.lipschitz_mesh {
        if let Ok(run) = lipschitz_construct(v, q, tau, mu_tau, n, &SearchOptions::default(), &policy) {
            scheds.push(run.schedule);
        }
    }
    let paths = scheds
        .par_iter()
        .map(|s| solve_on_grid(v, s, mu_tau, grid, &policy))
        .collect::<Vec<Result<Vec<DiscreteMeasure>>>>();
    let mut g = vec![f64::INFINITY; grid.len()];
    let mut candidates = 0;
    for path in paths {
        // Diverging candidates are simply not admissible witnesses.
        let Ok(path) = path else { continue };
        candidates += 1;
        for (i, m) in path.iter().enumerate() {
            g[i] = g[i].min(q.dist(grid[i], m)?);
        }
    }
    if candidates == 0 {
        return Err(Error::Precondition("every candidate diverged".into()));
    }
    let slack = opts.slack.unwrap_or_else(|| probe_tolerance(mu_tau));
    let rate = v.m_profile().add(v.l_profile()).shifted(1.0);
    let bound: Vec<f64> = grid.iter().map(|&t| g[0] * rate.integral(tau, t).exp() + slack).collect();
    let violations = g.iter().zip(&bound).map(|(a, b)| a > b).collect();
    Ok(GronwallReport { times: grid.to_vec(), g, bound, slack, violations, candidates })
}

/// Constants of the USC construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UscConstants {
    pub int_m: f64,
    pub c_t: f64,
    pub r_t: f64,
    pub eps0: f64,
}

/// `c_T`, `r_T = 4(1 + c_T)(1 + ∫M) + T exp(∫M)` and
/// `ε_0 = min(1/r_T, sup{ℓ : ∫_A M_Q ≤ 𝓜_1(μ_0) whenever |A| ≤ ℓ})`.
pub fn usc_constants(v: &VelocitySet, q: &ConstraintTube, mu0: &DiscreteMeasure) -> UscConstants {
    let (t0, end) = (q.start(), q.end());
    let int_m = v.m_profile().integral(t0, end);
    let ct = c_t(mu0.first_moment(), int_m);
    let r_t = 4.0 * (1.0 + ct) * (1.0 + int_m) + (end - t0) * int_m.exp();
    let abs = q.modulus().max_length_within_budget(t0, end, mu0.first_moment());
    UscConstants { int_m, c_t: ct, r_t, eps0: (1.0 / r_t).min(abs) }
}

/// Default bad set: intervals of width `ε/K` centered at the `K` interior
/// breakpoints of the generators, of M, of `M_Q` and of a flowed anchor.
pub fn default_bad_set(v: &VelocitySet, q: &ConstraintTube, eps: f64) -> Vec<(f64, f64)> {
    let (a, b) = (q.start(), q.end());
    let mut pts = v.knots_in(a, b);
    pts.extend(v.m_profile().breaks().iter().copied());
    pts.extend(q.modulus().breaks().iter().copied());
    if let TubeKind::AnchorBall { anchor: AnchorPath::Flow { field, .. }, radius } = q.kind() {
        pts.extend(field.knots().iter().copied());
        pts.extend(radius.breaks().iter().copied());
    }
    pts.retain(|&t| t > a && t < b);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    if pts.is_empty() {
        return Vec::new();
    }
    let w = eps / pts.len() as f64;
    normalize_bad_set(pts.iter().map(|&t| ((t - 0.5 * w).max(a), (t + 0.5 * w).min(b))).collect())
}

/// Sorted, merged, nonempty intervals.
fn normalize_bad_set(mut set: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    set.retain(|(a, b)| b > a);
    set.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in set {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntervalKind {
    Good { selection: TimeField, input: DiscreteMeasure, schedule: Schedule },
    /// Geodesic with parameter `∫_a^t M_Q / ∫_a^b M_Q` (linear when the
    /// integral vanishes).
    Bad { plan: TransportPlan },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UscInterval {
    pub a: f64,
    pub b: f64,
    pub kind: IntervalKind,
    /// Node range `[first, last]` in the curve.
    pub first: usize,
    pub last: usize,
}

impl UscInterval {
    pub fn is_good(&self) -> bool {
        matches!(self.kind, IntervalKind::Good { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UscTriple {
    pub tau: f64,
    pub intervals: Vec<UscInterval>,
    pub times: Vec<f64>,
    pub measures: Vec<DiscreteMeasure>,
    pub eps: f64,
    pub constants: UscConstants,
    pub bad_set: Vec<(f64, f64)>,
}

fn geodesic_theta(mq: &StepFunction, a: f64, b: f64, t: f64) -> f64 {
    let total = mq.integral(a, b);
    let th = if total > 0.0 { mq.integral(a, t) / total } else { (t - a) / (b - a) };
    th.clamp(0.0, 1.0)
}

impl UscTriple {
    /// `μ(t)` for any `t ∈ [0, τ]`.
    pub fn curve_at(&self, t: f64, q: &ConstraintTube) -> Result<DiscreteMeasure> {
        let i = self.intervals.partition_point(|iv| iv.a <= t).saturating_sub(1);
        let iv = &self.intervals[i];
        if t >= iv.b {
            return Ok(self.measures[iv.last].clone());
        }
        match &iv.kind {
            IntervalKind::Good { selection, .. } => {
                let k = iv.first + self.times[iv.first..=iv.last].partition_point(|&s| s <= t).saturating_sub(1);
                flow_measure(selection, &self.measures[k], self.times[k], t, &StepPolicy::default())
            }
            IntervalKind::Bad { plan } => interpolate(plan, geodesic_theta(q.modulus(), iv.a, iv.b, t)),
        }
    }

    pub fn node_defects(&self, q: &ConstraintTube) -> Result<Vec<f64>> {
        self.times.iter().zip(&self.measures).map(|(&t, m)| q.dist(t, m)).collect()
    }

    /// Checks every PT property, the global feasibility estimate and the
    /// node-to-node regularity estimate on the stored nodes.
    pub fn validate(&self, v: &VelocitySet, q: &ConstraintTube) -> Result<UscValidation> {
        let mut failures = Vec::new();
        let tol = |scale: f64| 1e-8 * (1.0 + scale);
        let t0 = q.start();
        let m = v.m_profile();
        let mq = q.modulus();
        let c = self.constants;
        let eps = self.eps;
        let mu0 = &self.measures[0];
        let moment0 = mu0.first_moment();

        // (i)
        if self.intervals.is_empty() || self.intervals[0].a != t0 {
            failures.push("PT(i): intervals do not start at 0".to_string());
        }
        for w in self.intervals.windows(2) {
            if w[0].b != w[1].a {
                failures.push(format!("PT(i): gap or overlap at {}", w[0].b));
            }
        }
        if self.intervals.last().map(|iv| iv.b) != Some(self.tau) {
            failures.push("PT(i): union does not end at tau".to_string());
        }
        for iv in &self.intervals {
            if !(iv.a < iv.b) || iv.b - iv.a > eps * (1.0 + 1e-12) {
                failures.push(format!("PT(i): interval [{}, {}) has bad length", iv.a, iv.b));
            }
        }

        // (ii)
        for (&t, mu) in self.times.iter().zip(&self.measures) {
            let im = m.integral(t0, t);
            let mb = 2.0 * (moment0 + im) * (2.0 * im).exp();
            if mu.first_moment() > mb + tol(mb) {
                failures.push(format!("PT(ii): moment bound fails at {t}"));
            }
            let wb = 2.0 * (1.0 + c.c_t) * (1.0 + im);
            if w1(mu0, mu)? > wb + tol(wb) {
                failures.push(format!("PT(ii): distance from mu_0 fails at {t}"));
            }
        }
        for iv in &self.intervals {
            let b = iv.b;
            let bound = (b - t0) * m.integral(t0, b).exp() * eps;
            if q.dist(b, &self.measures[iv.last])? > bound + tol(bound) {
                failures.push(format!("PT(ii): endpoint defect fails at {b}"));
            }
        }

        // (iii) and (iv)
        for iv in &self.intervals {
            let nodes = iv.first..=iv.last;
            match &iv.kind {
                IntervalKind::Good { input, .. } => {
                    if in_bad_set(&self.bad_set, iv.a) {
                        failures.push(format!("PT(iii): good interval starts in the bad set at {}", iv.a));
                    }
                    for i in nodes.clone() {
                        let d = w1(input, &self.measures[i])?;
                        if d > c.r_t * eps + tol(c.r_t * eps) {
                            failures.push(format!("PT(iii): selection input is {d} away at {}", self.times[i]));
                        }
                        for j in i + 1..=iv.last {
                            let b = 2.0 * (1.0 + c.c_t) * m.integral(self.times[i], self.times[j]);
                            if w1(&self.measures[i], &self.measures[j])? > b + tol(b) {
                                failures.push(format!("PT(iii): AC bound fails on [{}, {}]", self.times[i], self.times[j]));
                            }
                        }
                    }
                }
                IntervalKind::Bad { .. } => {
                    if !self.bad_set.iter().any(|&(a, b)| iv.a >= a - 1e-12 && iv.b <= b + 1e-12) {
                        failures.push(format!("PT(iv): bad interval [{}, {}) leaves the bad set", iv.a, iv.b));
                    }
                    for i in nodes.clone() {
                        for j in i + 1..=iv.last {
                            let b = mq.integral(self.times[i], self.times[j]);
                            if w1(&self.measures[i], &self.measures[j])? > b + tol(b) {
                                failures.push(format!("PT(iv): modulus fails on [{}, {}]", self.times[i], self.times[j]));
                            }
                        }
                    }
                }
            }
        }

        // Global feasibility estimate at nodes t ≥ ε.
        let big = m.scaled(2.0 * (1.0 + c.c_t)).max(mq);
        for (&t, mu) in self.times.iter().zip(&self.measures) {
            if t - t0 < eps {
                continue;
            }
            let bound = 2.0 * big.integral(t - eps, t) + (t - t0) * m.integral(t0, t).exp() * eps;
            if q.dist(t, mu)? > bound + tol(bound) {
                failures.push(format!("feasibility estimate fails at {t}"));
            }
        }

        // Regularity estimate (b) on consecutive nodes and from the start.
        let split = |s: f64, t: f64| -> (f64, f64) {
            let mut good = 0.0;
            let mut bad = 0.0;
            for iv in &self.intervals {
                let (lo, hi) = (iv.a.max(s), iv.b.min(t));
                if hi > lo {
                    if iv.is_good() {
                        good += m.integral(lo, hi);
                    } else {
                        bad += mq.integral(lo, hi);
                    }
                }
            }
            (good, bad)
        };
        let mut pairs: Vec<(usize, usize)> = (1..self.times.len()).map(|j| (j - 1, j)).collect();
        pairs.extend((2..self.times.len()).map(|j| (0, j)));
        for (i, j) in pairs {
            let (g, b) = split(self.times[i], self.times[j]);
            let bound = 2.0 * (1.0 + c.c_t) * g + b;
            if w1(&self.measures[i], &self.measures[j])? > bound + tol(bound) {
                failures.push(format!("regularity estimate fails on [{}, {}]", self.times[i], self.times[j]));
            }
        }
        Ok(UscValidation { failures })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UscValidation {
    pub failures: Vec<String>,
}

impl UscValidation {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn in_bad_set(set: &[(f64, f64)], t: f64) -> bool {
    set.iter().any(|&(a, b)| t >= a && t < b)
}

/// Sub-nodes per geodesic interval.
const GEODESIC_NODES: usize = 4;

/// Greedy left-to-right construction of an admissible triple on `[0, T]`.
pub fn usc_construct(
    v: &VelocitySet,
    q: &ConstraintTube,
    mu0: &DiscreteMeasure,
    eps: f64,
    bad_set: Option<Vec<(f64, f64)>>,
    search: &SearchOptions,
) -> Result<UscTriple> {
    let constants = usc_constants(v, q, mu0);
    if !(eps > 0.0 && eps < constants.eps0) {
        return Err(Error::Precondition(format!("eps = {eps} must lie in (0, eps0 = {})", constants.eps0)));
    }
    let d0 = q.dist(q.start(), mu0)?;
    if d0 > 1e-9 * (1.0 + mu0.first_moment()) {
        return Err(Error::Precondition(format!("mu_0 is {d0} away from Q(0)")));
    }
    let bad_set = normalize_bad_set(bad_set.unwrap_or_else(|| default_bad_set(v, q, eps)));
    let (t0, end) = (q.start(), q.end());
    let floor = 1e-6 * (end - t0);
    let m = v.m_profile();
    let policy = StepPolicy::default();
    let mut times = vec![t0];
    let mut measures = vec![mu0.clone()];
    let mut intervals: Vec<UscInterval> = Vec::new();
    let mut tau = t0;
    let near = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + y.abs());
    while tau < end && !near(tau, end) {
        let current = measures.last().expect("nonempty").clone();
        let first = measures.len() - 1;
        let bad = bad_set.iter().find(|&&(a, b)| tau >= a - 1e-12 && tau < b - 1e-12).copied();
        if let Some((_, bad_end)) = bad {
            let mut sigma = (tau + eps).min(bad_end).min(end);
            if near(sigma, end) {
                sigma = end;
            }
            let (_, alpha) = {
                let (_, proj) = q.tube_dist(tau, &current)?;
                w1_exact(&current, &proj)?
            };
            let (_, mu_sigma) = q.tube_dist(sigma, alpha.target())?;
            let (_, beta) = w1_exact(alpha.target(), &mu_sigma)?;
            let star = glue_combine(&alpha, &beta)?;
            let (_, plan) = w1_exact(&current, &star)?;
            for k in 1..=GEODESIC_NODES {
                let t = if k == GEODESIC_NODES { sigma } else { tau + (sigma - tau) * k as f64 / GEODESIC_NODES as f64 };
                times.push(t);
                measures.push(interpolate(&plan, geodesic_theta(q.modulus(), tau, sigma, t))?);
            }
            intervals.push(UscInterval { a: tau, b: sigma, kind: IntervalKind::Bad { plan }, first, last: measures.len() - 1 });
            tau = sigma;
            continue;
        }
        let next_bad = bad_set.iter().map(|&(a, _)| a).filter(|&a| a > tau + 1e-12).fold(end, f64::min);
        let mut h = eps.min(next_bad - tau).min(end - tau);
        let (_, proj) = q.tube_dist(tau, &current)?;
        loop {
            if h < floor {
                return Err(Error::ConstructionFailure {
                    time: tau,
                    reason: format!("step halving fell below {floor} without meeting the endpoint defect bound"),
                });
            }
            let b = if near(tau + h, end) { end } else { tau + h };
            let hh = b - tau;
            let probe = integral_probe(v, q, tau, &proj, eps, &[hh], 2, search)?;
            let piece = flow_solve(&probe.selection, &current, tau, b, &policy)?;
            let allowed = (b - t0) * m.integral(t0, b).exp() * eps;
            if q.dist(b, piece.last())? <= allowed {
                times.extend(piece.times.iter().skip(1));
                measures.extend(piece.measures.into_iter().skip(1));
                intervals.push(UscInterval {
                    a: tau,
                    b,
                    kind: IntervalKind::Good { selection: probe.selection, input: probe.input, schedule: probe.schedule },
                    first,
                    last: measures.len() - 1,
                });
                tau = b;
                break;
            }
            h *= 0.5;
        }
    }
    let triple = UscTriple { tau: end, intervals, times, measures, eps, constants, bad_set };
    let report = triple.validate(v, q)?;
    if !report.passed() {
        return Err(Error::InvalidResult(format!("admissible triple failed validation: {}", report.failures.join("; "))));
    }
    Ok(triple)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRow {
    pub n_prev: usize,
    pub n: usize,
    /// Sup over the grid of `W1(μ_prev(t), μ_n(t))`.
    pub sup_w1: f64,
    pub defect_prev: f64,
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UscSequence {
    pub ns: Vec<usize>,
    pub eps: Vec<f64>,
    pub triples: Vec<UscTriple>,
    /// Sup over the grid of `W1(μ_n(t); Q(t))`, per triple.
    pub sup_defects: Vec<f64>,
    pub rows: Vec<SequenceRow>,
}

/// `ε_n = min(1/(r_T n), δ_n)` with `δ_n` the largest length on which
/// `max{2(1 + c_T)M, M_Q}` integrates to at most `1/n`.
pub fn sequence_eps(v: &VelocitySet, q: &ConstraintTube, c: &UscConstants, n: usize) -> f64 {
    let big = v.m_profile().scaled(2.0 * (1.0 + c.c_t)).max(q.modulus());
    let delta = big.max_length_within_budget(q.start(), q.end(), 1.0 / n as f64);
    (1.0 / (c.r_t * n as f64)).min(delta)
}

pub fn usc_sequence(
    v: &VelocitySet,
    q: &ConstraintTube,
    mu0: &DiscreteMeasure,
    ns: &[usize],
    bad_set: Option<Vec<(f64, f64)>>,
    grid_points: usize,
    search: &SearchOptions,
) -> Result<UscSequence> {
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::Precondition("n range must be nonempty with n >= 1".into()));
    }
    let c = usc_constants(v, q, mu0);
    let (t0, end) = (q.start(), q.end());
    let gp = grid_points.max(2);
    let grid: Vec<f64> = (0..gp).map(|k| if k + 1 == gp { end } else { t0 + (end - t0) * k as f64 / (gp - 1) as f64 }).collect();
    let mut eps = Vec::new();
    let mut triples = Vec::new();
    let mut curves: Vec<Vec<DiscreteMeasure>> = Vec::new();
    let mut sup_defects = Vec::new();
    for &n in ns {
        let e = sequence_eps(v, q, &c, n);
        let triple = usc_construct(v, q, mu0, e, bad_set.clone(), search).map_err(|err| match err {
            Error::ConstructionFailure { time, reason } => Error::ConstructionFailure { time, reason: format!("n = {n}: {reason}") },
            other => other,
        })?;
        let curve = grid.iter().map(|&t| triple.curve_at(t, q)).collect::<Result<Vec<_>>>()?;
        let defect = grid.iter().zip(&curve).map(|(&t, m)| q.dist(t, m)).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
        eps.push(e);
        sup_defects.push(defect);
        curves.push(curve);
        triples.push(triple);
    }
    let mut rows = Vec::new();
    for k in 1..ns.len() {
        let sup_w1 = curves[k - 1]
            .iter()
            .zip(&curves[k])
            .map(|(a, b)| w1(a, b))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        rows.push(SequenceRow { n_prev: ns[k - 1], n: ns[k], sup_w1, defect_prev: sup_defects[k - 1], defect: sup_defects[k] });
    }
    Ok(UscSequence { ns: ns.to_vec(), eps, triples, sup_defects, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub hs: Vec<f64>,
    /// `(W1 − h (ξ − ζ) s_0)/h` per `h`.
    pub rates: Vec<f64>,
    pub rate: f64,
    pub upper_check: bool,
}

/// `W1 gap = RHS − LHS` of the first estimate for
/// `W1((Id + hξ)♯μ, (Id + hζ)♯ν) − W1(μ, ν)`, with `s(z) = z/|z|` and
/// `s(0) = s0`. Nonnegative when the estimate holds.
pub fn superdiff_upper_gap(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    xi: &VectorField,
    zeta: &VectorField,
    s0: &[f64],
    h: f64,
) -> Result<f64> {
    mu.check_dim(nu)?;
    if crate::measures::norm(s0) > 1.0 + 1e-15 || s0.len() != mu.dim() {
        return Err(Error::Precondition("s0 must lie in the closed unit ball".into()));
    }
    let (base, gamma) = w1_exact(mu, nu)?;
    let push = |m: &DiscreteMeasure, f: &VectorField| {
        m.pushforward(|x| {
            let mut y = x.to_vec();
            f.eval_add(x, h, &mut y);
            y
        })
    };
    let lhs = w1(&push(mu, xi)?, &push(nu, zeta)?)? - base;
    let mut inner = 0.0;
    let mut abs = 0.0;
    for e in gamma.entries() {
        let (x, y) = (mu.point(e.i), nu.point(e.j));
        let diff: Vec<f64> = xi.eval(x)?.iter().zip(zeta.eval(y)?).map(|(a, b)| a - b).collect();
        let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let nz = crate::measures::norm(&z);
        let s: Vec<f64> = if nz > 0.0 { z.iter().map(|c| c / nz).collect() } else { s0.to_vec() };
        inner += e.mass * diff.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>();
        abs += e.mass * crate::measures::norm(&diff);
    }
    Ok(h * inner + 2.0 * h * abs - lhs)
}

/// `μ = ν = δ_0` in 1D with constant directions `ξ`, `ζ`. The rate is the
/// minimum over `h = 2^{-k}` of the measured expression; the upper estimate
/// is checked for `h > 0`.
pub fn superdiff_counterexample(xi: f64, zeta: f64, s0: f64) -> Result<Counterexample> {
    if !(s0.abs() <= 1.0) {
        return Err(Error::Precondition(format!("|s0| = {} exceeds 1", s0.abs())));
    }
    let dirac = DiscreteMeasure::dirac(&[0.0])?;
    let fx = VectorField::constant(vec![xi])?;
    let fz = VectorField::constant(vec![zeta])?;
    let hs: Vec<f64> = (0..=20).map(|k| 2f64.powi(-k)).collect();
    let mut rates = Vec::with_capacity(hs.len());
    let mut upper_check = true;
    for &h in &hs {
        let a = dirac.translate(&[h * xi])?;
        let b = dirac.translate(&[h * zeta])?;
        let wd = w1(&a, &b)?;
        rates.push((wd - h * (xi - zeta) * s0) / h);
        if superdiff_upper_gap(&dirac, &dirac, &fx, &fz, &[s0], h)? < -1e-12 {
            upper_check = false;
        }
    }
    let rate = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(Counterexample { hs, rates, rate, upper_check })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Generator;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn dirac(x: f64) -> DiscreteMeasure {
        DiscreteMeasure::dirac(&[x]).unwrap()
    }

    fn constant(c: f64, a: f64, b: f64) -> Generator {
        Generator::plain(TimeField::constant(VectorField::constant(vec![c]).unwrap(), a, b).unwrap())
    }

    fn translating_tube(x0: f64, speed: f64, radius: f64, modulus: f64) -> ConstraintTube {
        ConstraintTube::anchor_ball(
            AnchorPath::translation(dirac(x0), vec![vec![0.0], vec![speed]]).unwrap(),
            StepFunction::constant(radius),
            StepFunction::constant(modulus),
            0.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn simplex_grid_order() {
        let g = simplex_grid(2, 2);
        assert_eq!(g, vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]]);
        assert_eq!(simplex_grid(3, 8).len(), 45);
        assert_eq!(simplex_grid(3, 8)[0], vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn pointwise_tangency() {
        let g1 = Generator::plain(TimeField::constant(VectorField::affine(vec![0.5], vec![0.2]).unwrap(), 0.0, 1.0).unwrap());
        let v = VelocitySet::new(vec![g1.clone(), constant(-1.0, 0.0, 1.0)]).unwrap();
        let anchor = AnchorPath::flow(dirac(1.0), g1.base.clone()).unwrap();
        let q = ConstraintTube::anchor_ball(anchor, StepFunction::constant(0.0), StepFunction::constant(2.0), 0.0, 1.0).unwrap();
        let nu = match q.kind() {
            TubeKind::AnchorBall { anchor, .. } => anchor.at(0.3).unwrap(),
            _ => unreachable!(),
        };
        let r = pointwise_probe(&v, &q, 0.3, &nu, &default_grid(0.3, 1.0).unwrap(), &SearchOptions::default()).unwrap();
        assert_eq!(r.lambda, vec![1.0, 0.0]);
        assert!(r.rate <= 1e-2);
    }

    #[test]
    fn pointwise_opposite_motion() {
        let c = 0.8;
        let v = VelocitySet::new(vec![constant(c, 0.0, 1.0)]).unwrap();
        let q = translating_tube(0.0, -c, 0.0, c);
        let hs = default_grid(0.0, 1.0).unwrap();
        let r = pointwise_probe(&v, &q, 0.0, &dirac(0.0), &hs, &SearchOptions::default()).unwrap();
        assert!(r.rate >= 2.0 * c - probe_tolerance(&dirac(0.0)));
        let direct = rate_probe(&q, 0.0, &dirac(0.0), &VectorField::constant(vec![c]).unwrap(), &hs).unwrap();
        assert_eq!(r.probe, direct);
        assert!(pointwise_probe(&v, &q, 0.0, &dirac(5.0), &hs, &SearchOptions::default()).is_err());
    }

    #[test]
    fn refinement_never_worsens() {
        let v = VelocitySet::new(vec![constant(1.0, 0.0, 1.0), constant(0.0, 0.0, 1.0)]).unwrap();
        let q = translating_tube(0.0, 0.3, 0.0, 1.0);
        let hs = default_grid(0.0, 1.0).unwrap();
        let coarse = SearchOptions { fine: 8, ..SearchOptions::default() };
        let a = pointwise_probe(&v, &q, 0.0, &dirac(0.0), &hs, &coarse).unwrap();
        let b = pointwise_probe(&v, &q, 0.0, &dirac(0.0), &hs, &SearchOptions::default()).unwrap();
        assert!(b.rate <= a.rate);
        assert!(b.rate < a.rate, "0.3 is closer to 10/32 than to 2/8");
    }

    #[test]
    fn integral_reduces_to_pointwise_for_static_sets() {
        let v = VelocitySet::new(vec![constant(1.0, 0.0, 1.0), constant(-1.0, 0.0, 1.0)]).unwrap();
        let q = translating_tube(0.0, 0.5, 0.0, 1.0);
        let hs = default_grid(0.0, 1.0).unwrap();
        let p = pointwise_probe(&v, &q, 0.0, &dirac(0.0), &hs, &SearchOptions::default()).unwrap();
        let i = integral_probe(&v, &q, 0.0, &dirac(0.0), 0.3, &hs, 2, &SearchOptions::default()).unwrap();
        assert!((p.rate - i.rate).abs() <= probe_tolerance(&dirac(0.0)));
        assert!(integral_probe(&v, &q, 0.0, &dirac(0.0), 0.3, &[], 2, &SearchOptions::default()).is_err());
        assert!(integral_probe(&v, &q, 0.0, &dirac(0.0), 0.0, &hs, 2, &SearchOptions::default()).is_err());
    }

    #[test]
    fn two_pieces_beat_one_for_switching_sets() {
        let g1 = Generator::plain(
            TimeField::new(
                vec![0.0, 0.5, 1.0],
                vec![VectorField::constant(vec![1.0]).unwrap(), VectorField::constant(vec![-1.0]).unwrap()],
            )
            .unwrap(),
        );
        let v = VelocitySet::new(vec![g1, constant(0.0, 0.0, 1.0)]).unwrap();
        let q = translating_tube(0.0, 0.5, 0.0, 1.0);
        let two = integral_probe(&v, &q, 0.0, &dirac(0.0), 0.1, &[1.0], 2, &SearchOptions::default()).unwrap();
        let one = integral_probe(&v, &q, 0.0, &dirac(0.0), 0.1, &[1.0], 1, &SearchOptions::default()).unwrap();
        assert!(two.rate <= 1e-2);
        assert!(one.rate >= two.rate + 0.4);
    }

    fn tangency() -> (VelocitySet, ConstraintTube, DiscreteMeasure) {
        let g1 = Generator::plain(
            TimeField::constant(VectorField::affine(vec![0.1, -1.0, 1.0, 0.1], vec![0.2, 0.0]).unwrap(), 0.0, 1.0).unwrap(),
        );
        let g2 = Generator::plain(TimeField::constant(VectorField::saturated_radial(2, 1.0, 0.5).unwrap(), 0.0, 1.0).unwrap());
        let mu0 = DiscreteMeasure::uniform(vec![vec![1.0, 0.0], vec![0.0, 1.5], vec![-0.5, -0.5]]).unwrap();
        let anchor = AnchorPath::flow(mu0.clone(), g1.base.clone()).unwrap();
        let q = ConstraintTube::anchor_ball(anchor, StepFunction::constant(0.0), StepFunction::constant(3.0), 0.0, 1.0).unwrap();
        (VelocitySet::new(vec![g1, g2]).unwrap(), q, mu0)
    }

    #[test]
    fn lipschitz_tangency_is_exact() {
        let (v, q, mu0) = tangency();
        let run = lipschitz_construct(&v, &q, 0.0, &mu0, 8, &SearchOptions::default(), &StepPolicy::default()).unwrap();
        assert!(run.max_defect() <= 1e-6, "{}", run.max_defect());
        assert!(run.lambdas.iter().all(|l| l == &vec![1.0, 0.0]));
        assert!(lipschitz_construct(&v, &q, 0.0, &mu0, 0, &SearchOptions::default(), &StepPolicy::default()).is_err());
    }

    #[test]
    fn lipschitz_reports_infeasibility() {
        let v = VelocitySet::new(vec![constant(1.0, 0.0, 1.0), constant(0.0, 0.0, 1.0)]).unwrap();
        let q = translating_tube(1.0, 2.0, 0.0, 2.0);
        let err = lipschitz_construct(&v, &q, 0.0, &dirac(1.0), 4, &SearchOptions::default(), &StepPolicy::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible { time, .. } if time == 0.0));
    }

    #[test]
    fn gronwall_examples() {
        let v = VelocitySet::new(vec![constant(1.0, 0.0, 1.0), constant(-1.0, 0.0, 1.0)]).unwrap();
        let cap = ConstraintTube::moment_cap(StepFunction::constant(5.0), StepFunction::constant(0.0), 0.0, 1.0).unwrap();
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let opts = GronwallOptions { samples: 8, seed: 1, ..GronwallOptions::default() };
        let rep = gronwall_track(&v, &cap, &dirac(0.0), &grid, &opts).unwrap();
        assert!(rep.viable());
        assert!(rep.g.iter().all(|&g| g == 0.0));

        let fast = translating_tube(0.0, 2.0, 0.0, 2.0);
        let rep = gronwall_track(&v, &fast, &dirac(0.0), &grid, &opts).unwrap();
        assert!(!rep.viable());
        assert!(rep.g.last().unwrap() > &0.9);
        assert!(gronwall_track(&v, &fast, &dirac(0.0), &grid, &GronwallOptions { samples: 0, ..opts }).is_err());
    }

    #[test]
    fn gronwall_on_tangency() {
        let (v, q, mu0) = tangency();
        let grid: Vec<f64> = (0..=8).map(|k| k as f64 / 8.0).collect();
        let opts = GronwallOptions { samples: 4, seed: 3, lipschitz_mesh: Some(8), ..GronwallOptions::default() };
        let rep = gronwall_track(&v, &q, &mu0, &grid, &opts).unwrap();
        assert!(rep.viable());
        assert!(rep.g.iter().all(|&g| g < 1e-6));
    }

    fn flow_tube() -> (VelocitySet, ConstraintTube, DiscreteMeasure) {
        let g = Generator::plain(TimeField::constant(VectorField::affine(vec![0.5], vec![0.0]).unwrap(), 0.0, 1.0).unwrap());
        let mu0 = DiscreteMeasure::uniform(vec![vec![1.0], vec![2.0]]).unwrap();
        let anchor = AnchorPath::flow(mu0.clone(), g.base.clone()).unwrap();
        let q = ConstraintTube::anchor_ball(anchor, StepFunction::constant(0.0), StepFunction::constant(1.5), 0.0, 1.0).unwrap();
        (VelocitySet::new(vec![g]).unwrap(), q, mu0)
    }

    #[test]
    fn usc_flow_equality_scenario() {
        let (v, q, mu0) = flow_tube();
        let c = usc_constants(&v, &q, &mu0);
        let eps = 0.5 * c.eps0;
        let t = usc_construct(&v, &q, &mu0, eps, None, &SearchOptions::default()).unwrap();
        assert!(t.intervals.iter().all(UscInterval::is_good));
        for iv in &t.intervals {
            let bound = iv.b * v.m_profile().integral(0.0, iv.b).exp() * eps;
            assert!(q.dist(iv.b, &t.measures[iv.last]).unwrap() <= bound);
        }
        assert!(usc_construct(&v, &q, &mu0, c.eps0, None, &SearchOptions::default()).is_err());
    }

    #[test]
    fn usc_all_bad_is_geodesic_chain() {
        let (v, q, mu0) = flow_tube();
        let c = usc_constants(&v, &q, &mu0);
        let eps = 0.5 * c.eps0;
        let t = usc_construct(&v, &q, &mu0, eps, Some(vec![(0.0, 1.0)]), &SearchOptions::default()).unwrap();
        assert!(t.intervals.iter().all(|iv| !iv.is_good()));
        assert!(t.validate(&v, &q).unwrap().passed());
    }

    #[test]
    fn constants_example() {
        assert!((c_t(1.0, 1.0) - 4.0 * 1f64.exp().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn counterexample_cases() {
        let c = superdiff_counterexample(1.0, 0.0, 0.0).unwrap();
        assert!((c.rate - 1.0).abs() < 1e-6);
        assert!(c.upper_check);
        assert_eq!(superdiff_counterexample(0.7, 0.7, 0.3).unwrap().rate, 0.0);
        assert!(superdiff_counterexample(0.7, 0.7, 1.3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn counterexample_matches_closed_form(xi in -3.0f64..3.0, zeta in -3.0f64..3.0, s0 in -1.0f64..1.0) {
            let c = superdiff_counterexample(xi, zeta, s0).unwrap();
            let d = xi - zeta;
            prop_assert!((c.rate - d * (d.signum() - s0)).abs() < 1e-6 || d == 0.0);
            prop_assert!(c.upper_check);
        }

        #[test]
        fn upper_estimate_on_dirac_pairs(seed in 0u64..100_000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = 2;
            let p = |rng: &mut rand_chacha::ChaCha8Rng| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
            let mu = DiscreteMeasure::dirac(&p(&mut rng)).unwrap();
            let nu = DiscreteMeasure::dirac(&p(&mut rng)).unwrap();
            let xi = VectorField::constant(p(&mut rng)).unwrap();
            let zeta = VectorField::affine((0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect(), p(&mut rng)).unwrap();
            let s0 = [0.6, -0.3];
            let h = rng.random_range(1e-4..1.0);
            prop_assert!(superdiff_upper_gap(&mu, &nu, &xi, &zeta, &s0, h).unwrap() >= -1e-12);
        }
    }
}
