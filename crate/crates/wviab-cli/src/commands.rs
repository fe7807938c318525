//! Subcommand implementations. Each writes its CSV artifacts into the output
//! directory and returns a short summary for stdout.

use std::fmt;
use std::fs;
use std::path::Path;

use wviab::constraints::{geometric_grid, probe_tolerance, ConstraintTube};
use wviab::dynamics::{estimate_monitor, inclusion_solve, reachable_trajectories, Schedule, StepPolicy};
use wviab::measures::fmt17;
use wviab::transport::w1_exact;
use wviab::viability::{
    gronwall_track, integral_probe, lipschitz_construct, pointwise_probe, usc_construct, usc_sequence, GronwallOptions,
    IntervalKind, SearchOptions, UscTriple,
};
use wviab::{DiscreteMeasure, Error};

use crate::checks::{checks_csv, counterexample_cases, counterexample_rows, dirac_pair_gaps, monitor_violations, oracle_suite, Check};
use crate::scenario::{ConfigError, Scenario};
use crate::seeds::derive;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Probe,
    ConstructLipschitz,
    ConstructUsc,
    Gronwall,
    Counterexample,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Probe => "probe",
            Self::ConstructLipschitz => "construct-lipschitz",
            Self::ConstructUsc => "construct-usc",
            Self::Gronwall => "gronwall",
            Self::Counterexample => "counterexample",
            Self::Verify => "verify",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    /// Infeasibility, divergence, construction failure or a failed check.
    Negative(String),
    Io(String),
    Internal(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Negative(_) => 3,
            Self::Io(_) | Self::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(e) => write!(f, "config error: {e}"),
            Self::Negative(m) => write!(f, "{m}"),
            Self::Io(m) => write!(f, "io error: {m}"),
            Self::Internal(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Infeasible { .. } | Error::Divergence { .. } | Error::ConstructionFailure { .. } => Self::Negative(e.to_string()),
            Error::Precondition(m) => Self::Config(ConfigError { key: "scenario".into(), message: m }),
            other => Self::Internal(other),
        }
    }
}

type CmdResult = Result<String, CliError>;

fn write(out: &Path, name: &str, content: &str) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let path = out.join(name);
    fs::write(&path, content).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Writes `report.txt` and turns the message into a negative verdict.
fn negative(out: &Path, message: String) -> CliError {
    if let Err(e) = write(out, "report.txt", &format!("{message}\n")) {
        return e;
    }
    CliError::Negative(message)
}

fn lib<T>(out: &Path, r: wviab::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match CliError::from(e) {
        CliError::Negative(m) => negative(out, m),
        other => other,
    })
}

fn search(s: &Scenario) -> SearchOptions {
    SearchOptions { coarse: s.algorithm.coarse, fine: s.algorithm.fine, failure_factor: s.algorithm.failure_factor }
}

fn uniform_grid(a: f64, b: f64, points: usize) -> Vec<f64> {
    (0..points).map(|k| if k + 1 == points { b } else { a + (b - a) * k as f64 / (points - 1) as f64 }).collect()
}

fn header(prefix: &str, d: usize) -> String {
    let mut h = String::from(prefix);
    (1..=d).for_each(|k| h.push_str(&format!(",x{k}")));
    h.push('\n');
    h
}

fn atoms(out: &mut String, prefix: &str, m: &DiscreteMeasure) {
    for (x, w) in m.points().zip(m.weights()) {
        out.push_str(prefix);
        out.push_str(&fmt17(*w));
        x.iter().for_each(|c| out.push_str(&format!(",{}", fmt17(*c))));
        out.push('\n');
    }
}

/// `wviab w1`: prints the cost at 12 significant digits; writes `plan.csv`
/// when an output directory is given.
pub fn run_w1(a: &Path, b: &Path, out: Option<&Path>) -> CmdResult {
    let read = |p: &Path| -> Result<DiscreteMeasure, CliError> {
        let text = fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        DiscreteMeasure::from_csv(&text)
            .map_err(|e| CliError::Config(ConfigError { key: p.display().to_string(), message: e.to_string() }))
    };
    let (mu, nu) = (read(a)?, read(b)?);
    let (cost, plan) = w1_exact(&mu, &nu)?;
    if let Some(dir) = out {
        write(dir, "plan.csv", &plan.to_csv())?;
    }
    Ok(format!("{cost:.11e}"))
}

pub fn dispatch(cmd: Command, s: &Scenario, out: &Path) -> CmdResult {
    match cmd {
        Command::Simulate => simulate(s, out),
        Command::Probe => probe(s, out),
        Command::ConstructLipschitz => construct_lipschitz(s, out),
        Command::ConstructUsc => construct_usc(s, out),
        Command::Gronwall => gronwall(s, out),
        Command::Counterexample => counterexample(s, out),
        Command::Verify => verify(s, out),
    }
}

fn simulate(s: &Scenario, out: &Path) -> CmdResult {
    let v = s.velocity_set()?;
    let policy = StepPolicy::default();
    let sched = match s.schedules.first() {
        Some(sc) => sc.clone(),
        None => Schedule::constant(vec![1.0 / v.len() as f64; v.len()], s.start, s.horizon)?,
    };
    let mu0 = &s.measure.measure;
    let traj = lib(out, inclusion_solve(&v, &sched, mu0, s.start, s.horizon, &policy))?;
    let monitor = estimate_monitor(&traj, v.m_profile(), mu0.first_moment())?;
    write(out, "trajectory.csv", &traj.to_csv())?;
    write(out, "monitor.csv", &monitor.to_csv())?;
    let a = &s.algorithm;
    let seed = derive(s.seed, "simulate.reachable");
    let trajs = lib(out, reachable_trajectories(&v, mu0, s.start, s.horizon, a.samples, seed, a.pieces, &policy))?;
    let mut csv = header("sample,w", s.dimension);
    for (i, t) in trajs.iter().enumerate() {
        atoms(&mut csv, &format!("{i},"), t.last());
    }
    write(out, "reachable.csv", &csv)?;
    let violations = monitor.violations + monitor_violations(&trajs, v.m_profile(), mu0.first_moment())?;
    if violations > 0 {
        return Err(negative(out, format!("estimate monitor reported {violations} violations")));
    }
    Ok(format!("simulated {} + {} trajectories, monitors clean", 1, trajs.len()))
}

fn probe_grid(s: &Scenario, tau: f64) -> Result<Vec<f64>, CliError> {
    let a = &s.algorithm;
    let h0 = a.probe_h0.unwrap_or(0.1 * (s.horizon - tau));
    Ok(geometric_grid(h0, a.probe_beta, a.probe_levels)?)
}

fn probe(s: &Scenario, out: &Path) -> CmdResult {
    let v = s.velocity_set()?;
    let q = s.tube()?;
    let tau = s.algorithm.probe_time.unwrap_or(s.start);
    if !(tau >= s.start && tau < s.horizon) {
        return Err(ConfigError { key: "algorithm.probe_time".into(), message: "must lie in [start, horizon)".into() }.into());
    }
    let (_, nu) = q.tube_dist(tau, &s.measure.measure)?;
    let hs = probe_grid(s, tau)?;
    let opts = search(s);
    let p = lib(out, pointwise_probe(&v, &q, tau, &nu, &hs, &opts))?;
    let i = lib(out, integral_probe(&v, &q, tau, &nu, s.algorithm.integral_radius, &hs, 2, &opts))?;
    let threshold = opts.failure_factor * probe_tolerance(&nu);
    write(out, "probe.csv", &p.probe.to_csv())?;
    let mut summary = String::from("kind,h,rate,threshold\n");
    summary.push_str(&format!("pointwise,{},{},{}\n", fmt17(p.probe.argmin_h), fmt17(p.rate), fmt17(threshold)));
    summary.push_str(&format!("integral,{},{},{}\n", fmt17(i.h), fmt17(i.rate), fmt17(threshold)));
    write(out, "probe_summary.csv", &summary)?;
    let lam = p.lambda.iter().map(|l| format!("{l}")).collect::<Vec<_>>().join(",");
    if p.rate > threshold {
        return Err(negative(out, format!("no tangent velocity at t = {tau}: best rate {:e} above {:e}", p.rate, threshold)));
    }
    Ok(format!("lambda = [{lam}], rate = {:e}, integral rate = {:e}", p.rate, i.rate))
}

fn construct_lipschitz(s: &Scenario, out: &Path) -> CmdResult {
    let v = s.velocity_set()?;
    let q = s.tube()?;
    let run = lib(out, lipschitz_construct(&v, &q, s.start, &s.measure.measure, s.algorithm.mesh, &search(s), &StepPolicy::default()))?;
    write(out, "defects.csv", &run.defects_csv())?;
    write(out, "trajectory.csv", &run.trajectory.to_csv())?;
    let mut sched = String::from("t_start,t_end");
    (1..=v.len()).for_each(|k| sched.push_str(&format!(",lambda{k}")));
    sched.push('\n');
    for (k, lam) in run.lambdas.iter().enumerate() {
        sched.push_str(&format!("{},{}", fmt17(run.nodes[k]), fmt17(run.nodes[k + 1])));
        lam.iter().for_each(|l| sched.push_str(&format!(",{}", fmt17(*l))));
        sched.push('\n');
    }
    write(out, "schedule.csv", &sched)?;
    Ok(format!("mesh n = {}, max defect = {:e}", s.algorithm.mesh, run.max_defect()))
}

/// Sup over the grid of `W1(μ(t); Q(t))`.
fn sup_defect(t: &UscTriple, q: &ConstraintTube, grid: &[f64]) -> wviab::Result<f64> {
    let mut worst: f64 = 0.0;
    for &g in grid {
        worst = worst.max(q.dist(g, &t.curve_at(g, q)?)?);
    }
    Ok(worst)
}

fn construct_usc(s: &Scenario, out: &Path) -> CmdResult {
    let v = s.velocity_set()?;
    let q = s.tube()?;
    let a = &s.algorithm;
    let mu0 = &s.measure.measure;
    let grid = uniform_grid(s.start, s.horizon, a.grid_points.max(2));
    let (labels, triples, defects, rows) = match a.eps {
        Some(eps) => {
            let t = lib(out, usc_construct(&v, &q, mu0, eps, a.bad_set.clone(), &search(s)))?;
            let d = sup_defect(&t, &q, &grid)?;
            (vec![0], vec![t], vec![d], Vec::new())
        }
        None => {
            let seq = lib(out, usc_sequence(&v, &q, mu0, &a.usc_ns, a.bad_set.clone(), a.grid_points, &search(s)))?;
            (seq.ns.clone(), seq.triples, seq.sup_defects, seq.rows)
        }
    };
    let mut intervals = String::from("n,eps,a,b,kind\n");
    let mut nodes = header("n,t,node_index,w", s.dimension);
    let mut sup = String::from("n,eps,sup_defect\n");
    for ((n, t), d) in labels.iter().zip(&triples).zip(&defects) {
        for iv in &t.intervals {
            let kind = match iv.kind {
                IntervalKind::Good { .. } => "good",
                IntervalKind::Bad { .. } => "bad",
            };
            intervals.push_str(&format!("{n},{},{},{},{kind}\n", fmt17(t.eps), fmt17(iv.a), fmt17(iv.b)));
        }
        for (k, (tk, m)) in t.times.iter().zip(&t.measures).enumerate() {
            atoms(&mut nodes, &format!("{n},{},{k},", fmt17(*tk)), m);
        }
        sup.push_str(&format!("{n},{},{}\n", fmt17(t.eps), fmt17(*d)));
    }
    let mut seq = String::from("n_prev,n,sup_w1,defect_prev,defect\n");
    for r in &rows {
        seq.push_str(&format!("{},{},{},{},{}\n", r.n_prev, r.n, fmt17(r.sup_w1), fmt17(r.defect_prev), fmt17(r.defect)));
    }
    write(out, "usc_intervals.csv", &intervals)?;
    write(out, "usc_nodes.csv", &nodes)?;
    write(out, "usc_defects.csv", &sup)?;
    write(out, "usc_sequence.csv", &seq)?;
    let summary = labels.iter().zip(&defects).map(|(n, d)| format!("n = {n}: sup defect {d:e}")).collect::<Vec<_>>().join("; ");
    Ok(format!("{} admissible triples validated; {summary}", triples.len()))
}

fn gronwall(s: &Scenario, out: &Path) -> CmdResult {
    let v = s.velocity_set()?;
    let q = s.tube()?;
    let a = &s.algorithm;
    let grid = uniform_grid(s.start, s.horizon, a.gronwall_points);
    let opts = GronwallOptions {
        samples: a.samples,
        seed: derive(s.seed, "gronwall.samples"),
        pieces: a.pieces,
        slack: a.slack,
        extra: s.schedules.clone(),
        lipschitz_mesh: a.gronwall_mesh,
    };
    let rep = lib(out, gronwall_track(&v, &q, &s.measure.measure, &grid, &opts))?;
    write(out, "gronwall.csv", &rep.to_csv())?;
    if !rep.viable() {
        let t = rep.times[rep.violations.iter().position(|&x| x).expect("some violation")];
        return Err(negative(out, format!("not viable: envelope violated first at t = {t} ({} candidates)", rep.candidates)));
    }
    Ok(format!("viable: g stays under the envelope ({} candidates)", rep.candidates))
}

fn counterexample(s: &Scenario, out: &Path) -> CmdResult {
    let cases: Vec<(f64, f64, f64)> = if s.counterexample.cases.is_empty() {
        counterexample_cases(s.seed, 20)
    } else {
        s.counterexample.cases.iter().map(|c| (c.xi, c.zeta, c.s0)).collect()
    };
    let rows = counterexample_rows(&cases)?;
    let mut csv = String::from("xi,zeta,s0,rate,closed_form,upper_ok\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{},{}\n", fmt17(r.0), fmt17(r.1), fmt17(r.2), fmt17(r.3), fmt17(r.4), r.5));
    }
    write(out, "counterexample.csv", &csv)?;
    let gaps = dirac_pair_gaps(s.seed, s.counterexample.draws, s.dimension)?;
    let mut draws = String::from("draw,gap\n");
    gaps.iter().enumerate().for_each(|(i, g)| draws.push_str(&format!("{i},{}\n", fmt17(*g))));
    write(out, "superdiff_draws.csv", &draws)?;
    let mismatch = rows.iter().filter(|r| (r.3 - r.4).abs() > 1e-6 || !r.5).count();
    let broken = gaps.iter().filter(|g| **g < -1e-12).count();
    if mismatch + broken > 0 {
        return Err(negative(out, format!("{mismatch} case mismatches, {broken} upper-estimate violations")));
    }
    Ok(format!("{} cases match the closed form; {} draws respect the upper estimate", rows.len(), gaps.len()))
}

fn verify(s: &Scenario, out: &Path) -> CmdResult {
    let mut checks = oracle_suite(s.seed)?;
    if !s.generators.is_empty() {
        let v = s.velocity_set()?;
        let mu0 = &s.measure.measure;
        let a = &s.algorithm;
        let trajs = lib(
            out,
            reachable_trajectories(&v, mu0, s.start, s.horizon, a.samples, derive(s.seed, "verify.monitor"), a.pieces, &StepPolicy::default()),
        )?;
        let n = monitor_violations(&trajs, v.m_profile(), mu0.first_moment())?;
        checks.push(Check { name: "estimate_monitor".into(), instances: trajs.len(), max_error: n as f64, tolerance: 0.0 });
    }
    write(out, "verify.csv", &checks_csv(&checks))?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(negative(out, format!("checks failed: {}", failed.join(", "))));
    }
    Ok(format!("{} checks passed", checks.len()))
}
