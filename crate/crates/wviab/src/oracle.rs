//! Slow, independent references for cross-checking the production paths.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::measures::{dist, norm, DiscreteMeasure};
use crate::transport::{w1, TransportPlan};

/// Dual potentials recovered from a plan's support.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Largest of: positive part of `u_i + v_j − c_ij` over all pairs, and
    /// `|u_i + v_j − c_ij|` over support pairs.
    pub violation: f64,
    /// Support graph was disconnected; potentials were aligned across
    /// components by a shortest-path pass.
    pub partial: bool,
}

impl Certificate {
    pub fn passes(&self) -> bool {
        self.violation <= 1e-8
    }
}

/// 1D W1 as `∫|F − G|` over the merged atom positions.
pub fn w1_1d_quantile(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    for m in [mu, nu] {
        if m.dim() != 1 {
            return Err(Error::Precondition(format!("quantile oracle needs d = 1, got {}", m.dim())));
        }
    }
    let mut events: Vec<(f64, f64)> = mu
        .points()
        .zip(mu.weights())
        .map(|(x, w)| (x[0], *w))
        .chain(nu.points().zip(nu.weights()).map(|(y, w)| (y[0], -*w)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut diff = 0.0;
    for pair in events.windows(2) {
        diff += pair[0].1;
        total += diff.abs() * (pair[1].0 - pair[0].0);
    }
    Ok(total)
}

/// Exhaustive assignment search for uniform weights and equal counts.
pub fn w1_permutation(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    mu.check_dim(nu)?;
    let n = mu.len();
    if n != nu.len() || n > 6 {
        return Err(Error::Precondition(format!(
            "permutation oracle needs equal counts n <= 6, got {} and {}",
            n,
            nu.len()
        )));
    }
    let uniform = 1.0 / n as f64;
    if mu.weights().iter().chain(nu.weights()).any(|w| (w - uniform).abs() > 1e-12) {
        return Err(Error::Precondition("permutation oracle needs uniform weights".into()));
    }
    let best = (0..n)
        .permutations(n)
        .map(|p| p.iter().enumerate().map(|(i, &j)| dist(mu.point(i), nu.point(j))).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    Ok(best * uniform)
}

/// Complementary-slackness certificate for `plan`.
pub fn certify_plan(mu: &DiscreteMeasure, nu: &DiscreteMeasure, plan: &TransportPlan) -> Result<Certificate> {
    mu.check_dim(nu)?;
    let (n, m) = (mu.len(), nu.len());
    let cost = |i: usize, j: usize| dist(mu.point(i), nu.point(j));
    let support: Vec<(usize, usize)> = plan
        .entries()
        .iter()
        .filter(|e| e.mass > 0.0)
        .map(|e| (e.i, e.j))
        .collect();

    // Nodes 0..n are rows, n..n+m columns. Potentials along support edges.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + m];
    for &(i, j) in &support {
        adj[i].push(n + j);
        adj[n + j].push(i);
    }
    let mut pot = vec![f64::NAN; n + m];
    let mut comp = vec![usize::MAX; n + m];
    let mut ncomp = 0;
    for root in 0..n + m {
        if comp[root] != usize::MAX {
            continue;
        }
        pot[root] = 0.0;
        comp[root] = ncomp;
        let mut stack = vec![root];
        while let Some(a) = stack.pop() {
            for &b in &adj[a] {
                if comp[b] == usize::MAX {
                    comp[b] = ncomp;
                    let (i, j) = if a < n { (a, b - n) } else { (b, a - n) };
                    pot[b] = cost(i, j) - pot[a];
                    stack.push(b);
                }
            }
        }
        ncomp += 1;
    }
    let mut u = pot[..n].to_vec();
    let mut v = pot[n..].to_vec();

    // Shift s_K per component: u += s_K on rows, v -= s_K on columns.
    // Constraint s_K − s_L ≤ c_ij − u_i − v_j for i in K, j in L.
    if ncomp > 1 {
        let mut w = vec![f64::INFINITY; ncomp * ncomp];
        for i in 0..n {
            for j in 0..m {
                let (k, l) = (comp[i], comp[n + j]);
                let slack = cost(i, j) - u[i] - v[j];
                let cell = &mut w[l * ncomp + k];
                *cell = cell.min(slack);
            }
        }
        let mut s = vec![0.0; ncomp];
        for _ in 0..ncomp {
            let mut changed = false;
            for l in 0..ncomp {
                for k in (0..ncomp).filter(|&k| k != l) {
                    let cand = s[l] + w[l * ncomp + k];
                    if cand < s[k] {
                        s[k] = cand;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        for i in 0..n {
            u[i] += s[comp[i]];
        }
        for j in 0..m {
            v[j] -= s[comp[n + j]];
        }
    }

    let mut violation: f64 = 0.0;
    for i in 0..n {
        for j in 0..m {
            violation = violation.max(u[i] + v[j] - cost(i, j));
        }
    }
    for &(i, j) in &support {
        violation = violation.max((u[i] + v[j] - cost(i, j)).abs());
    }
    Ok(Certificate { u, v, violation, partial: ncomp > 1 })
}

/// Largest excess of `W1(ξ♯μ, ζ♯μ) ≤ Σ_i w_i |ξ(x_i) − ζ(x_i)|` and
/// `W1(φ♯μ, φ♯ν) ≤ Lip(φ) W1(μ, ν)`. Nonpositive when both hold.
pub fn pushforward_estimate_excess(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    xi: &VectorField,
    zeta: &VectorField,
    phi: &VectorField,
) -> Result<f64> {
    mu.check_dim(nu)?;
    let push = |m: &DiscreteMeasure, f: &VectorField| m.pushforward(|x| f.eval(x).expect("dimension checked"));
    for f in [xi, zeta, phi] {
        if f.dim() != mu.dim() {
            return Err(Error::DimensionMismatch { expected: mu.dim(), found: f.dim() });
        }
    }
    let mut rhs = 0.0;
    for (x, w) in mu.points().zip(mu.weights()) {
        rhs += w * dist(&xi.eval(x)?, &zeta.eval(x)?);
    }
    let first = w1(&push(mu, xi)?, &push(mu, zeta)?)? - rhs;
    let second = w1(&push(mu, phi)?, &push(nu, phi)?)? - phi.lip_bound() * w1(mu, nu)?;
    Ok(first.max(second))
}

/// Excess of `|∫f d(μ − ν)| ≤ Lip(f) W1(μ, ν)` for `f(x) = ⟨a, x⟩ + c |x − b|`,
/// whose Lipschitz constant is at most `|a| + |c|`.
pub fn duality_estimate_excess(mu: &DiscreteMeasure, nu: &DiscreteMeasure, a: &[f64], c: f64, b: &[f64]) -> Result<f64> {
    mu.check_dim(nu)?;
    if a.len() != mu.dim() || b.len() != mu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), found: a.len().max(b.len()) });
    }
    let f = |x: &[f64]| a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + c * dist(x, b);
    let integral = |m: &DiscreteMeasure| m.points().zip(m.weights()).map(|(x, w)| w * f(x)).sum::<f64>();
    let lip = norm(a) + c.abs();
    Ok((integral(mu) - integral(nu)).abs() - lip * w1(mu, nu)?)
}

/// Least-squares slope of `ln value` against `ln h`.
pub fn loglog_slope(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::Precondition("need at least 3 pairs".into()));
    }
    if pairs.iter().any(|&(h, v)| !(h > 0.0) || !(v > 0.0)) {
        return Err(Error::Precondition("log-log slope needs positive pairs".into()));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Precondition("all h values equal".into()));
    }
    Ok(sxy / sxx)
}
