use proptest::prelude::*;
use wviab::constraints::{ac_modulus_diag, default_grid, probe_tolerance, rate_probe, AnchorPath, ConstraintTube, ModulusReference};
use wviab::dynamics::{c_t, inclusion_solve, random_schedule, sample_rng, Generator, Stats, StepPolicy, VelocitySet};
use wviab::fields::{TimeField, VectorField};
use wviab::profile::StepFunction;
use wviab::viability::{
    lipschitz_construct, usc_constants, usc_construct, usc_sequence, Counterexample, IntervalKind, SearchOptions,
};
use wviab::{DiscreteMeasure, Error};

fn dirac(x: f64) -> DiscreteMeasure {
    DiscreteMeasure::dirac(&[x]).unwrap()
}

fn constant(c: f64) -> Generator {
    Generator::plain(TimeField::constant(VectorField::constant(vec![c]).unwrap(), 0.0, 1.0).unwrap())
}

fn speeds_one_zero() -> VelocitySet {
    VelocitySet::new(vec![constant(1.0), constant(0.0)]).unwrap()
}

fn radius_tube() -> ConstraintTube {
    let drift = TimeField::constant(VectorField::affine(vec![0.5], vec![0.0]).unwrap(), 0.0, 1.0).unwrap();
    let anchor = AnchorPath::flow(dirac(1.0), drift).unwrap();
    ConstraintTube::anchor_ball(anchor, StepFunction::constant(0.2), StepFunction::constant(1.0), 0.0, 1.0).unwrap()
}

fn kinked_tube(modulus: f64) -> ConstraintTube {
    let field = TimeField::new(
        vec![0.0, 0.5, 1.0],
        vec![VectorField::constant(vec![0.5]).unwrap(), VectorField::constant(vec![0.75]).unwrap()],
    )
    .unwrap();
    let anchor = AnchorPath::flow(dirac(1.0), field).unwrap();
    ConstraintTube::anchor_ball(anchor, StepFunction::constant(0.0), StepFunction::constant(modulus), 0.0, 1.0).unwrap()
}

#[test]
fn boundary_start_defect_halves_with_the_mesh() {
    let (v, q) = (speeds_one_zero(), radius_tube());
    let defects: Vec<f64> = [8, 16, 32, 64]
        .iter()
        .map(|&n| lipschitz_construct(&v, &q, 0.0, &dirac(1.2), n, &SearchOptions::default(), &StepPolicy::default()).unwrap().max_defect())
        .collect();
    for w in defects.windows(2) {
        assert!(w[1] / w[0] <= 0.7, "{defects:?}");
    }
}

#[test]
fn constructed_solution_has_zero_rates_along_itself() {
    let g1 = Generator::plain(TimeField::constant(VectorField::affine(vec![0.0, -1.0, 1.0, 0.0], vec![0.1, 0.0]).unwrap(), 0.0, 1.0).unwrap());
    let g2 = Generator::plain(TimeField::constant(VectorField::zero(2), 0.0, 1.0).unwrap());
    let mu0 = DiscreteMeasure::uniform(vec![vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
    let q = ConstraintTube::anchor_ball(
        AnchorPath::flow(mu0.clone(), g1.base.clone()).unwrap(),
        StepFunction::constant(0.0),
        StepFunction::constant(3.0),
        0.0,
        1.0,
    )
    .unwrap();
    let v = VelocitySet::new(vec![g1, g2]).unwrap();
    let run = lipschitz_construct(&v, &q, 0.0, &mu0, 8, &SearchOptions::default(), &StepPolicy::default()).unwrap();
    for (k, lam) in run.lambdas.iter().enumerate() {
        let t = run.nodes[k];
        let mu = &run.trajectory.measures[run.trajectory.node_at_or_before(t)];
        let f = v.select(lam, t, &Stats::of(mu)).unwrap();
        let p = rate_probe(&q, t, mu, &f, &default_grid(t, 1.0).unwrap()).unwrap();
        assert!(p.min_rate <= probe_tolerance(mu), "t = {t}: {}", p.min_rate);
    }
}

#[test]
fn usc_sequence_on_kinked_anchor() {
    let (v, q) = (speeds_one_zero(), kinked_tube(0.75));
    let seq = usc_sequence(&v, &q, &dirac(1.0), &[4, 8, 16], None, 41, &SearchOptions::default()).unwrap();
    for w in seq.sup_defects.windows(2) {
        assert!(w[1] < w[0], "{:?}", seq.sup_defects);
    }
    for t in &seq.triples {
        assert!(t.validate(&v, &q).unwrap().passed());
        let bad: Vec<_> = t.intervals.iter().filter(|iv| matches!(iv.kind, IntervalKind::Bad { .. })).collect();
        assert_eq!(bad.len(), 1);
        assert!(bad[0].a < 0.5 && bad[0].b > 0.5);
    }
    assert_eq!(seq.rows.len(), 2);
}

#[test]
fn usc_rejects_eps_outside_range_and_names_n_on_failure() {
    let v = speeds_one_zero();
    let q = kinked_tube(0.75);
    let c = usc_constants(&v, &q, &dirac(1.0));
    assert!((c.c_t - 4.0 * 1f64.exp().powi(2)).abs() < 1e-9);
    assert!(matches!(usc_construct(&v, &q, &dirac(1.0), 2.0 * c.eps0, None, &SearchOptions::default()), Err(Error::Precondition(_))));
    let fast = ConstraintTube::anchor_ball(
        AnchorPath::translation(dirac(1.0), vec![vec![0.0], vec![2.0]]).unwrap(),
        StepFunction::constant(0.0),
        StepFunction::constant(2.0),
        0.0,
        1.0,
    )
    .unwrap();
    match usc_sequence(&v, &fast, &dirac(1.0), &[4], None, 11, &SearchOptions::default()) {
        Err(Error::ConstructionFailure { time, reason }) => {
            assert_eq!(time, 0.0);
            assert!(reason.starts_with("n = 4"));
        }
        other => panic!("expected a construction failure, got {other:?}"),
    }
}

#[test]
fn declared_bad_set_is_honored() {
    let (v, q) = (speeds_one_zero(), kinked_tube(0.75));
    let c = usc_constants(&v, &q, &dirac(1.0));
    let eps = 0.5 * c.eps0;
    let t = usc_construct(&v, &q, &dirac(1.0), eps, Some(vec![(0.4, 0.6)]), &SearchOptions::default()).unwrap();
    for iv in &t.intervals {
        let inside = iv.a >= 0.4 - 1e-12 && iv.b <= 0.6 + 1e-12;
        assert_eq!(inside, !iv.is_good(), "[{}, {})", iv.a, iv.b);
    }
}

#[test]
fn traced_tube_moduli_respect_the_solution_bound() {
    let g1 = Generator::new(
        TimeField::constant(VectorField::affine(vec![0.0, -1.0, 1.0, 0.0], vec![0.0, 0.0]).unwrap(), 0.0, 1.0).unwrap(),
        0.5,
        vec![0.0, 0.0],
    )
    .unwrap();
    let g2 = Generator::new(TimeField::constant(VectorField::saturated_radial(2, -0.5, 1.0).unwrap(), 0.0, 1.0).unwrap(), 0.0, vec![0.1, 0.0])
        .unwrap();
    let v = VelocitySet::new(vec![g1, g2]).unwrap();
    let mu0 = DiscreteMeasure::uniform(vec![vec![1.0, 0.0], vec![-0.5, 0.5], vec![0.0, -1.0]]).unwrap();
    let times: Vec<f64> = (0..=8).map(|k| k as f64 / 8.0).collect();
    let mut candidates = vec![Vec::new(); times.len()];
    for i in 0..12 {
        let sched = random_schedule(2, 0.0, 1.0, 3, &mut sample_rng(9, i)).unwrap();
        let mut cur = mu0.clone();
        candidates[0].push(cur.clone());
        for k in 1..times.len() {
            cur = inclusion_solve(&v, &sched, &cur, times[k - 1], times[k], &StepPolicy::default()).unwrap().last().clone();
            candidates[k].push(cur.clone());
        }
    }
    let q = ConstraintTube::sampled(times.clone(), candidates, StepFunction::constant(0.0)).unwrap();
    let pairs: Vec<(f64, f64)> = times.iter().enumerate().flat_map(|(i, &s)| times[i + 1..].iter().map(move |&t| (s, t))).collect();
    let reference = ModulusReference { c_t: c_t(mu0.first_moment(), v.m_profile().integral(0.0, 1.0)), m: v.m_profile().clone() };
    let table = ac_modulus_diag(&q, &pairs, &mu0, 100.0, 4, 1, Some(&reference)).unwrap();
    assert_eq!(table.reference_violations(), 0);
    assert!(table.rows.iter().any(|r| r.measured > 0.0));
}

#[test]
fn counterexample_struct_is_reported_per_h() {
    let c: Counterexample = wviab::viability::superdiff_counterexample(2.0, 0.5, -0.25).unwrap();
    assert_eq!(c.hs.len(), c.rates.len());
    assert!((c.rate - 1.5 * 1.25).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    // Zero-radius tubes are only reachable when the anchor speed sits on the
    // fine simplex lattice.
    fn usc_triples_satisfy_every_invariant(a in 0u32..=32, b in 0u32..=32, frac in 0.2f64..0.9) {
        let (speed, second) = (a as f64 / 32.0, b as f64 / 32.0);
        let field = TimeField::new(
            vec![0.0, 0.5, 1.0],
            vec![VectorField::constant(vec![speed]).unwrap(), VectorField::constant(vec![second]).unwrap()],
        )
        .unwrap();
        let q = ConstraintTube::anchor_ball(
            AnchorPath::flow(dirac(1.0), field).unwrap(),
            StepFunction::constant(0.0),
            StepFunction::constant(speed.max(second)),
            0.0,
            1.0,
        )
        .unwrap();
        let v = speeds_one_zero();
        let c = usc_constants(&v, &q, &dirac(1.0));
        let t = usc_construct(&v, &q, &dirac(1.0), frac * c.eps0, None, &SearchOptions::default()).unwrap();
        prop_assert!(t.validate(&v, &q).unwrap().passed());
        prop_assert_eq!(t.intervals.first().unwrap().a, 0.0);
        prop_assert_eq!(t.intervals.last().unwrap().b, 1.0);
    }
}
