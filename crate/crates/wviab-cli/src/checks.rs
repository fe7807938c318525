//! Oracle cross-checks shared by `verify` and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wviab::dynamics::{estimate_monitor, second_order_defect, StepPolicy, Trajectory};
use wviab::fields::{TimeField, VectorField};
use wviab::measures::{fmt17, norm};
use wviab::oracle::{certify_plan, duality_estimate_excess, loglog_slope, pushforward_estimate_excess, w1_1d_quantile, w1_permutation};
use wviab::profile::StepFunction;
use wviab::transport::{w1, w1_exact};
use wviab::viability::{superdiff_counterexample, superdiff_upper_gap};
use wviab::{DiscreteMeasure, Result};

use crate::seeds::derive;

/// One row of a check table.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub instances: usize,
    /// Largest observed error or violation; compare against `tolerance`.
    pub max_error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

/// Header `check,instances,max_error,tolerance,pass`.
pub fn checks_csv(checks: &[Check]) -> String {
    let mut out = String::from("check,instances,max_error,tolerance,pass\n");
    for c in checks {
        out.push_str(&format!("{},{},{},{},{}\n", c.name, c.instances, fmt17(c.max_error), fmt17(c.tolerance), c.passed()));
    }
    out
}

pub fn random_measure(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
    let pts = (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    DiscreteMeasure::new(pts, raw.iter().map(|w| w / s).collect()).expect("valid random measure")
}

fn random_uniform(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
    DiscreteMeasure::uniform((0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect())
        .expect("valid random measure")
}

fn random_field(rng: &mut ChaCha8Rng, d: usize) -> VectorField {
    let v = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
    match rng.random_range(0..3) {
        0 => VectorField::affine(v(rng, d * d), v(rng, d)).expect("valid affine"),
        1 => VectorField::saturated_radial(d, rng.random_range(-2.0..2.0), rng.random_range(0.1..2.0)).expect("valid radial"),
        _ => VectorField::constant(v(rng, d)).expect("valid constant"),
    }
}

/// `w1_exact` against the quantile oracle on random 1D instances, `n ≤ 64`.
pub fn quantile_agreement(seed: u64, instances: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "verify.quantile"));
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (n, m) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let mu = random_measure(&mut rng, n, 1);
        let nu = random_measure(&mut rng, m, 1);
        worst = worst.max((w1(&mu, &nu)? - w1_1d_quantile(&mu, &nu)?).abs());
    }
    Ok(Check { name: "w1_vs_quantile".into(), instances, max_error: worst, tolerance: 1e-8 })
}

/// `w1_exact` against exhaustive assignment, uniform weights, `n ≤ 6`, `d ≤ 3`.
pub fn permutation_agreement(seed: u64, instances: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "verify.permutation"));
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (n, d) = (rng.random_range(1..=6), rng.random_range(1..=3));
        let mu = random_uniform(&mut rng, n, d);
        let nu = random_uniform(&mut rng, n, d);
        worst = worst.max((w1(&mu, &nu)? - w1_permutation(&mu, &nu)?).abs());
    }
    Ok(Check { name: "w1_vs_permutation".into(), instances, max_error: worst, tolerance: 1e-9 })
}

/// Complementary-slackness certificates of solver plans.
pub fn plan_certificates(seed: u64, instances: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "verify.certificates"));
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let d = rng.random_range(1..=3);
        let (n, m) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let mu = random_measure(&mut rng, n, d);
        let nu = random_measure(&mut rng, m, d);
        let (_, plan) = w1_exact(&mu, &nu)?;
        worst = worst.max(certify_plan(&mu, &nu, &plan)?.violation);
    }
    Ok(Check { name: "plan_certificates".into(), instances, max_error: worst, tolerance: 1e-8 })
}

/// Pushforward and duality estimates on random instances; reports the
/// largest excess (0 when all hold strictly).
pub fn wasserstein_estimates(seed: u64, instances: usize) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "verify.estimates"));
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let d = rng.random_range(1..=3);
        let (n, m) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let mu = random_measure(&mut rng, n, d);
        let nu = random_measure(&mut rng, m, d);
        let (xi, zeta, phi) = (random_field(&mut rng, d), random_field(&mut rng, d), random_field(&mut rng, d));
        worst = worst.max(pushforward_estimate_excess(&mu, &nu, &xi, &zeta, &phi)?);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        worst = worst.max(duality_estimate_excess(&mu, &nu, &a, rng.random_range(-2.0..2.0), &b)?);
    }
    Ok(Check { name: "wasserstein_estimates".into(), instances, max_error: worst.max(0.0), tolerance: 1e-9 })
}

/// Second-order defect of the flow of `v(x) = x` from `δ_1` over
/// `h = 2^{-3} .. 2^{-10}`: bound, log-log slope and closed form
/// `e^h − 1 − h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderReport {
    pub rows: Vec<(f64, f64, f64)>,
    pub slope: f64,
    pub bound_violations: usize,
    pub closed_form_error: f64,
}

pub fn second_order_linear() -> Result<SecondOrderReport> {
    let tf = TimeField::constant(VectorField::identity(1), 0.0, 1.0)?;
    let mu = DiscreteMeasure::dirac(&[1.0])?;
    let mut rows = Vec::new();
    let mut violations = 0;
    let mut closed: f64 = 0.0;
    for k in 3..=10 {
        let h = 2f64.powi(-k);
        let (lhs, bound) = second_order_defect(&tf, &mu, 0.0, h, &StepPolicy::default())?;
        if lhs > bound {
            violations += 1;
        }
        closed = closed.max((lhs - (h.exp() - 1.0 - h).abs()).abs());
        rows.push((h, lhs, bound));
    }
    let slope = loglog_slope(&rows.iter().map(|r| (r.0, r.1)).collect::<Vec<_>>())?;
    Ok(SecondOrderReport { rows, slope, bound_violations: violations, closed_form_error: closed })
}

/// Scalar cases `(ξ, ζ, s0)`: drawn from the seed unless given.
pub fn counterexample_cases(seed: u64, n: usize) -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "counterexample.cases"));
    (0..n)
        .map(|_| (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)))
        .collect()
}

/// Rows `(ξ, ζ, s0, measured, closed form, upper estimate ok)`.
pub fn counterexample_rows(cases: &[(f64, f64, f64)]) -> Result<Vec<(f64, f64, f64, f64, f64, bool)>> {
    cases
        .iter()
        .map(|&(xi, zeta, s0)| {
            let c = superdiff_counterexample(xi, zeta, s0)?;
            let d = xi - zeta;
            let closed = if d == 0.0 { 0.0 } else { d * (d.signum() - s0) };
            Ok((xi, zeta, s0, c.rate, closed, c.upper_check))
        })
        .collect()
}

/// Gaps (RHS − LHS) of the upper estimate on random Dirac pairs with
/// constant `ξ`, affine `ζ` and `s0` in the unit ball.
pub fn dirac_pair_gaps(seed: u64, draws: usize, d: usize) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, "counterexample.draws"));
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws {
        let p = |rng: &mut ChaCha8Rng| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let mu = DiscreteMeasure::dirac(&p(&mut rng))?;
        let nu = DiscreteMeasure::dirac(&p(&mut rng))?;
        let xi = VectorField::constant(p(&mut rng))?;
        let zeta = VectorField::affine((0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect(), p(&mut rng))?;
        let raw = p(&mut rng);
        let scale = rng.random_range(0.0..1.0) / norm(&raw).max(1e-12);
        let s0: Vec<f64> = raw.iter().map(|x| x * scale).collect();
        let h = rng.random_range(1e-4..1.0);
        out.push(superdiff_upper_gap(&mu, &nu, &xi, &zeta, &s0, h)?);
    }
    Ok(out)
}

/// Moment and increment monitors over trajectories; returns the violation count.
pub fn monitor_violations(trajs: &[Trajectory], m: &StepFunction, moment0: f64) -> Result<usize> {
    let mut total = 0;
    for t in trajs {
        total += estimate_monitor(t, m, moment0)?.violations;
    }
    Ok(total)
}

/// Everything `verify` runs that needs no scenario data.
pub fn oracle_suite(seed: u64) -> Result<Vec<Check>> {
    let mut checks = vec![
        quantile_agreement(seed, 200)?,
        permutation_agreement(seed, 100)?,
        plan_certificates(seed, 100)?,
        wasserstein_estimates(seed, 500)?,
    ];
    let so = second_order_linear()?;
    checks.push(Check { name: "second_order_bound".into(), instances: so.rows.len(), max_error: so.bound_violations as f64, tolerance: 0.0 });
    checks.push(Check { name: "second_order_slope_deficit".into(), instances: so.rows.len(), max_error: (1.9 - so.slope).max(0.0), tolerance: 0.0 });
    checks.push(Check { name: "second_order_closed_form".into(), instances: so.rows.len(), max_error: so.closed_form_error, tolerance: 1e-8 });
    let rows = counterexample_rows(&counterexample_cases(seed, 20))?;
    let err = rows.iter().map(|r| (r.3 - r.4).abs()).fold(0.0, f64::max);
    checks.push(Check { name: "counterexample_rate".into(), instances: rows.len(), max_error: err, tolerance: 1e-6 });
    let gaps = dirac_pair_gaps(seed, 200, 2)?;
    let worst = gaps.iter().map(|g| (-g).max(0.0)).fold(0.0, f64::max);
    checks.push(Check { name: "superdiff_upper_estimate".into(), instances: gaps.len(), max_error: worst, tolerance: 1e-12 });
    Ok(checks)
}
