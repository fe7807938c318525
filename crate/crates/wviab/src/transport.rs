//! Exact W1 between discrete measures via the transportation simplex.
//!
//! The basis is a spanning tree of the bipartite atom graph with
//! `n + m - 1` cells (degenerate zero-flow cells included). Dual
//! potentials are recomputed from the tree every pivot. Entering arc is
//! the lowest-index arc with negative reduced cost and the leaving arc is
//! the lowest-index blocking arc, which rules out cycling.

use crate::error::{Error, Result};
use crate::measures::{dist, DiscreteMeasure};

const DENSE_LIMIT: usize = 1_000_000;
const MARGINAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

/// A coupling between two discrete measures.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    entries: Vec<PlanEntry>,
    cost: f64,
}

impl TransportPlan {
    /// Validates marginals and recomputes the cost.
    pub fn new(source: DiscreteMeasure, target: DiscreteMeasure, mut entries: Vec<PlanEntry>) -> Result<Self> {
        source.check_dim(&target)?;
        let (n, m) = (source.len(), target.len());
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; m];
        for e in &entries {
            if e.i >= n || e.j >= m {
                return Err(Error::Precondition(format!("plan entry ({}, {}) out of range", e.i, e.j)));
            }
            if !(e.mass >= 0.0) || !e.mass.is_finite() {
                return Err(Error::Precondition(format!("plan entry ({}, {}) has mass {}", e.i, e.j, e.mass)));
            }
            rows[e.i] += e.mass;
            cols[e.j] += e.mass;
        }
        for (k, (r, w)) in rows.iter().zip(source.weights()).enumerate() {
            if (r - w).abs() > MARGINAL_TOL {
                return Err(Error::Precondition(format!("row {k} sums to {r}, source weight {w}")));
            }
        }
        for (k, (c, w)) in cols.iter().zip(target.weights()).enumerate() {
            if (c - w).abs() > MARGINAL_TOL {
                return Err(Error::Precondition(format!("column {k} sums to {c}, target weight {w}")));
            }
        }
        entries.sort_by_key(|e| (e.i, e.j));
        let cost = entries
            .iter()
            .map(|e| e.mass * dist(source.point(e.i), target.point(e.j)))
            .sum();
        Ok(Self { source, target, entries, cost })
    }

    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    pub fn target(&self) -> &DiscreteMeasure {
        &self.target
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Identity coupling of a measure with itself.
    pub fn identity(mu: &DiscreteMeasure) -> Self {
        let entries = mu
            .weights()
            .iter()
            .enumerate()
            .map(|(i, &mass)| PlanEntry { i, j: i, mass })
            .collect();
        Self { source: mu.clone(), target: mu.clone(), entries, cost: 0.0 }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,mass\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.i, e.j, crate::measures::fmt17(e.mass)));
        }
        out
    }
}

enum Costs<'a> {
    Dense(Vec<f64>, usize),
    Streamed(&'a DiscreteMeasure, &'a DiscreteMeasure),
}

impl Costs<'_> {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        match self {
            Costs::Dense(c, m) => c[i * m + j],
            Costs::Streamed(a, b) => dist(a.point(i), b.point(j)),
        }
    }
}

/// Exact W1 and an optimal plan.
pub fn w1_exact(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(f64, TransportPlan)> {
    mu.check_dim(nu)?;
    let (n, m) = (mu.len(), nu.len());
    let costs = if n * m <= DENSE_LIMIT {
        let mut c = Vec::with_capacity(n * m);
        for x in mu.points() {
            c.extend(nu.points().map(|y| dist(x, y)));
        }
        Costs::Dense(c, m)
    } else {
        Costs::Streamed(mu, nu)
    };
    let cells = solve(mu.weights(), nu.weights(), &costs)?;
    let entries = cells.into_iter().map(|(i, j, mass)| PlanEntry { i, j, mass }).collect();
    let plan = TransportPlan::new(mu.clone(), nu.clone(), entries)?;
    Ok((plan.cost(), plan))
}

/// W1 value only.
pub fn w1(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    if mu.len() == 1 || nu.len() == 1 {
        // Only one coupling exists.
        mu.check_dim(nu)?;
        let mut c = 0.0;
        for (x, a) in mu.points().zip(mu.weights()) {
            for (y, b) in nu.points().zip(nu.weights()) {
                c += a * b * dist(x, y);
            }
        }
        return Ok(c);
    }
    w1_exact(mu, nu).map(|(c, _)| c)
}

struct Tree {
    n: usize,
    m: usize,
    cells: Vec<(usize, usize, f64)>,
    adj: Vec<Vec<usize>>,
}

impl Tree {
    fn node_of_row(i: usize) -> usize {
        i
    }

    fn node_of_col(&self, j: usize) -> usize {
        self.n + j
    }

    fn link(&mut self, slot: usize) {
        let (i, j, _) = self.cells[slot];
        let cj = self.node_of_col(j);
        self.adj[Self::node_of_row(i)].push(slot);
        self.adj[cj].push(slot);
    }

    fn unlink(&mut self, slot: usize) {
        let (i, j, _) = self.cells[slot];
        let cj = self.node_of_col(j);
        self.adj[Self::node_of_row(i)].retain(|&s| s != slot);
        self.adj[cj].retain(|&s| s != slot);
    }

    fn other(&self, slot: usize, node: usize) -> usize {
        let (i, j, _) = self.cells[slot];
        if node == i {
            self.n + j
        } else {
            i
        }
    }

    fn potentials(&self, costs: &Costs) -> (Vec<f64>, Vec<f64>) {
        let total = self.n + self.m;
        let mut pot = vec![f64::NAN; total];
        let mut stack = vec![0usize];
        pot[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &slot in &self.adj[node] {
                let next = self.other(slot, node);
                if pot[next].is_nan() {
                    let (i, j, _) = self.cells[slot];
                    // u_i + v_j = c_ij
                    pot[next] = costs.at(i, j) - pot[node];
                    stack.push(next);
                }
            }
        }
        let v = pot.split_off(self.n);
        (pot, v)
    }

    /// Slots on the tree path from `from` to `to`, in walking order.
    fn path(&self, from: usize, to: usize) -> Vec<usize> {
        let total = self.n + self.m;
        let mut parent: Vec<Option<usize>> = vec![None; total];
        let mut seen = vec![false; total];
        let mut stack = vec![to];
        seen[to] = true;
        while let Some(node) = stack.pop() {
            if node == from {
                break;
            }
            for &slot in &self.adj[node] {
                let next = self.other(slot, node);
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some(slot);
                    stack.push(next);
                }
            }
        }
        let mut out = Vec::new();
        let mut node = from;
        while node != to {
            let slot = parent[node].expect("basis is a spanning tree");
            out.push(slot);
            node = self.other(slot, node);
        }
        out
    }
}

fn solve(a: &[f64], b: &[f64], costs: &Costs) -> Result<Vec<(usize, usize, f64)>> {
    let (n, m) = (a.len(), b.len());
    let mut tree = Tree { n, m, cells: Vec::with_capacity(n + m - 1), adj: vec![Vec::new(); n + m] };
    let mut basic = vec![false; n * m];

    // North-west corner start: exactly n + m - 1 cells.
    let (mut r, mut c) = (a.to_vec(), b.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let f = r[i].min(c[j]).max(0.0);
        tree.cells.push((i, j, f));
        basic[i * m + j] = true;
        r[i] -= f;
        c[j] -= f;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if j == m - 1 || (i < n - 1 && r[i] <= c[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }
    for slot in 0..tree.cells.len() {
        tree.link(slot);
    }

    let mut cmax: f64 = 0.0;
    for i in 0..n {
        for j in 0..m {
            cmax = cmax.max(costs.at(i, j));
        }
    }
    let tol = 1e-12 * cmax.max(1e-300);
    let max_pivots = (20 * n * m).max(100_000);

    for _ in 0..max_pivots {
        let (u, v) = tree.potentials(costs);
        let entering = (0..n * m).find(|&k| {
            !basic[k] && costs.at(k / m, k % m) - u[k / m] - v[k % m] < -tol
        });
        let Some(k) = entering else {
            let mut out = tree.cells;
            out.sort_by_key(|&(i, j, _)| (i, j));
            return Ok(out);
        };
        let (ei, ej) = (k / m, k % m);
        // Cycle: entering arc (+), then the tree path from column ej back to
        // row ei, alternating -, +, ..., -.
        let path = tree.path(tree.node_of_col(ej), ei);
        let mut theta = f64::INFINITY;
        for &slot in path.iter().step_by(2) {
            theta = theta.min(tree.cells[slot].2);
        }
        let leaving = path
            .iter()
            .step_by(2)
            .copied()
            .filter(|&slot| tree.cells[slot].2 == theta)
            .min_by_key(|&slot| tree.cells[slot].0 * m + tree.cells[slot].1)
            .expect("cycle has a blocking arc");
        for (pos, &slot) in path.iter().enumerate() {
            let f = &mut tree.cells[slot].2;
            if pos % 2 == 0 {
                *f = (*f - theta).max(0.0);
            } else {
                *f += theta;
            }
        }
        let (li, lj, _) = tree.cells[leaving];
        tree.unlink(leaving);
        basic[li * m + lj] = false;
        tree.cells[leaving] = (ei, ej, theta);
        basic[k] = true;
        tree.link(leaving);
    }
    Err(Error::SolverNonConvergence { iterations: max_pivots })
}

/// `min_k W1(mu, candidates[k])`, ties to the smallest index.
pub fn dist_to_finite_set(mu: &DiscreteMeasure, candidates: &[DiscreteMeasure]) -> Result<(f64, usize)> {
    if candidates.is_empty() {
        return Err(Error::Precondition("empty candidate list".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (k, c) in candidates.iter().enumerate() {
        let d = w1(mu, c)?;
        if d < best.0 {
            best = (d, k);
        }
    }
    Ok(best)
}

/// Displacement interpolation `(π1 + s(π2 − π1))♯γ`.
pub fn interpolate(plan: &TransportPlan, s: f64) -> Result<DiscreteMeasure> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Precondition(format!("interpolation parameter {s} outside [0, 1]")));
    }
    let d = plan.source.dim();
    let mut coords = Vec::with_capacity(plan.entries.len() * d);
    let mut weights = Vec::with_capacity(plan.entries.len());
    for e in plan.entries.iter().filter(|e| e.mass > 0.0) {
        let x = plan.source.point(e.i);
        let y = plan.target.point(e.j);
        coords.extend(x.iter().zip(y).map(|(a, b)| a + s * (b - a)));
        weights.push(e.mass);
    }
    DiscreteMeasure::from_flat(d, coords, weights)
}

/// Glues `alpha` (μ → m) and `beta` (m → σ) and returns `(π1 + π3 − π2)♯η`.
pub fn glue_combine(alpha: &TransportPlan, beta: &TransportPlan) -> Result<DiscreteMeasure> {
    let mid_a = alpha.target();
    let mid_b = beta.source();
    mid_a.check_dim(mid_b)?;
    if mid_a.len() != mid_b.len() {
        return Err(Error::Precondition("middle marginals have different atom counts".into()));
    }
    for k in 0..mid_a.len() {
        let dw = (mid_a.weights()[k] - mid_b.weights()[k]).abs();
        if dw > MARGINAL_TOL || dist(mid_a.point(k), mid_b.point(k)) > MARGINAL_TOL {
            return Err(Error::Precondition(format!("middle marginals disagree at atom {k}")));
        }
    }
    let d = mid_a.dim();
    let mut by_mid_a: Vec<Vec<&PlanEntry>> = vec![Vec::new(); mid_a.len()];
    for e in &alpha.entries {
        by_mid_a[e.j].push(e);
    }
    let mut by_mid_b: Vec<Vec<&PlanEntry>> = vec![Vec::new(); mid_b.len()];
    for e in &beta.entries {
        by_mid_b[e.i].push(e);
    }
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for y in 0..mid_a.len() {
        let my = mid_a.weights()[y];
        let py = mid_a.point(y);
        for ea in by_mid_a[y].iter().filter(|e| e.mass > 0.0) {
            let x = alpha.source().point(ea.i);
            for eb in by_mid_b[y].iter().filter(|e| e.mass > 0.0) {
                let z = beta.target().point(eb.j);
                let eta = ea.mass * eb.mass / my;
                if eta > 0.0 {
                    coords.extend((0..d).map(|k| x[k] + z[k] - py[k]));
                    weights.push(eta);
                }
            }
        }
    }
    DiscreteMeasure::from_flat(d, coords, weights)
}
