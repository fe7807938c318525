//! Scenario files: TOML with dotted keys and `[[...]]` tables.
//!
//! Parsing walks the document by hand so every error can name the full key
//! path, and so unknown keys are rejected.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use toml::{Table, Value};
use wviab::constraints::{AnchorPath, ConstraintTube};
use wviab::dynamics::{Generator, Schedule, VelocitySet};
use wviab::fields::{FieldKind, TimeField, VectorField};
use wviab::profile::StepFunction;
use wviab::DiscreteMeasure;

/// A validation failure at `key`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(key: impl Into<String>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { key: key.into(), message: message.into() })
}

/// Inline or file-backed measure. `file` is kept as written so the
/// canonical form reproduces it.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSource {
    pub file: Option<String>,
    pub measure: DiscreteMeasure,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnchorSpec {
    Flow { initial: Option<MeasureSource>, field: TimeField },
    Translation { initial: Option<MeasureSource>, coeffs: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TubeSpec {
    AnchorBall { radius: StepFunction, anchor: AnchorSpec },
    MomentCap { cap: StepFunction },
    /// Nodes CSV with header `t,candidate,w,x1..xd`.
    Sampled { file: String, times: Vec<f64>, candidates: Vec<Vec<DiscreteMeasure>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TubeDecl {
    pub spec: TubeSpec,
    pub modulus: StepFunction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Algorithm {
    pub mesh: usize,
    pub usc_ns: Vec<usize>,
    pub eps: Option<f64>,
    pub bad_set: Option<Vec<(f64, f64)>>,
    pub grid_points: usize,
    pub coarse: usize,
    pub fine: usize,
    pub failure_factor: f64,
    pub probe_time: Option<f64>,
    pub probe_h0: Option<f64>,
    pub probe_beta: f64,
    pub probe_levels: usize,
    pub integral_radius: f64,
    pub samples: usize,
    pub pieces: usize,
    pub gronwall_points: usize,
    pub gronwall_mesh: Option<usize>,
    pub slack: Option<f64>,
}

impl Default for Algorithm {
    fn default() -> Self {
        Self {
            mesh: 32,
            usc_ns: vec![4, 8, 16],
            eps: None,
            bad_set: None,
            grid_points: 41,
            coarse: 8,
            fine: 32,
            failure_factor: 10.0,
            probe_time: None,
            probe_h0: None,
            probe_beta: 0.5,
            probe_levels: 12,
            integral_radius: 0.1,
            samples: 32,
            pieces: 4,
            gronwall_points: 11,
            gronwall_mesh: None,
            slack: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub xi: f64,
    pub zeta: f64,
    pub s0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleSpec {
    /// Explicit cases; empty means 20 cases drawn from the seed.
    pub cases: Vec<CaseSpec>,
    pub draws: usize,
}

impl Default for CounterexampleSpec {
    fn default() -> Self {
        Self { cases: Vec::new(), draws: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub dimension: usize,
    pub start: f64,
    pub horizon: f64,
    pub measure: MeasureSource,
    pub generators: Vec<Generator>,
    /// Declared `(M, L)` profiles.
    pub bounds: Option<(StepFunction, StepFunction)>,
    pub tube: Option<TubeDecl>,
    pub algorithm: Algorithm,
    pub schedules: Vec<Schedule>,
    pub counterexample: CounterexampleSpec,
}

impl Scenario {
    pub fn velocity_set(&self) -> Result<VelocitySet, ConfigError> {
        if self.generators.is_empty() {
            return err("generator", "at least one [[generator]] is required here");
        }
        let v = VelocitySet::new(self.generators.clone()).or_else(|e| err("generator", e.to_string()))?;
        match &self.bounds {
            None => Ok(v),
            Some((m, l)) => v.with_profiles(m.clone(), l.clone()).or_else(|e| err("bounds", e.to_string())),
        }
    }

    pub fn tube(&self) -> Result<ConstraintTube, ConfigError> {
        let Some(decl) = &self.tube else {
            return err("tube", "a [tube] section is required here");
        };
        let (a, b) = (self.start, self.horizon);
        let built = match &decl.spec {
            TubeSpec::AnchorBall { radius, anchor } => {
                let path = match anchor {
                    AnchorSpec::Flow { initial, field } => {
                        let init = initial.as_ref().unwrap_or(&self.measure).measure.clone();
                        AnchorPath::flow(init, field.clone())
                    }
                    AnchorSpec::Translation { initial, coeffs } => {
                        let init = initial.as_ref().unwrap_or(&self.measure).measure.clone();
                        AnchorPath::translation(init, coeffs.clone())
                    }
                };
                let path = path.or_else(|e| err("tube.anchor", e.to_string()))?;
                ConstraintTube::anchor_ball(path, radius.clone(), decl.modulus.clone(), a, b)
            }
            TubeSpec::MomentCap { cap } => ConstraintTube::moment_cap(cap.clone(), decl.modulus.clone(), a, b),
            TubeSpec::Sampled { times, candidates, .. } => {
                ConstraintTube::sampled(times.clone(), candidates.clone(), decl.modulus.clone())
            }
        };
        built.or_else(|e| err("tube", e.to_string()))
    }
}

/// Reader over one table that records which keys were consumed.
struct Section<'a> {
    path: String,
    table: &'a Table,
    seen: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(path: impl Into<String>, table: &'a Table) -> Self {
        Self { path: path.into(), table, seen: BTreeSet::new() }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn get(&mut self, k: &str) -> Option<&'a Value> {
        self.seen.insert(k.to_string());
        self.table.get(k)
    }

    fn f64(&mut self, k: &str) -> Result<Option<f64>, ConfigError> {
        let key = self.key(k);
        self.get(k).map(|v| as_f64(v, &key)).transpose()
    }

    fn req_f64(&mut self, k: &str) -> Result<f64, ConfigError> {
        let key = self.key(k);
        self.f64(k)?.ok_or(ConfigError { key, message: "missing required number".into() })
    }

    fn uint(&mut self, k: &str) -> Result<Option<u64>, ConfigError> {
        let key = self.key(k);
        match self.get(k) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => err(key, "expected a nonnegative integer"),
        }
    }

    fn string(&mut self, k: &str) -> Result<Option<String>, ConfigError> {
        let key = self.key(k);
        match self.get(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => err(key, "expected a string"),
        }
    }

    fn vec(&mut self, k: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let key = self.key(k);
        self.get(k).map(|v| as_vec(v, &key)).transpose()
    }

    fn mat(&mut self, k: &str) -> Result<Option<Vec<Vec<f64>>>, ConfigError> {
        let key = self.key(k);
        match self.get(k) {
            None => Ok(None),
            Some(Value::Array(rows)) => rows
                .iter()
                .enumerate()
                .map(|(i, r)| as_vec(r, &format!("{key}[{i}]")))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => err(key, "expected an array of arrays"),
        }
    }

    /// A number (constant) or `{ breaks = [...], values = [...] }`.
    fn step(&mut self, k: &str) -> Result<Option<StepFunction>, ConfigError> {
        let key = self.key(k);
        match self.get(k) {
            None => Ok(None),
            Some(Value::Table(t)) => {
                let mut s = Section::new(key.clone(), t);
                let breaks = s.vec("breaks")?.unwrap_or_default();
                let values = s.vec("values")?.ok_or(ConfigError { key: s.key("values"), message: "missing".into() })?;
                s.finish()?;
                StepFunction::new(breaks, values).map(Some).or_else(|e| err(key, e.to_string()))
            }
            Some(v) => Ok(Some(StepFunction::constant(as_f64(v, &key)?))),
        }
    }

    fn sub(&mut self, k: &str) -> Result<Option<Section<'a>>, ConfigError> {
        let key = self.key(k);
        match self.get(k) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(Section::new(key, t))),
            Some(_) => err(key, "expected a table"),
        }
    }

    fn tables(&mut self, k: &str) -> Result<Vec<Section<'a>>, ConfigError> {
        let key = self.key(k);
        match self.get(k) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Value::Table(t) => Ok(Section::new(format!("{key}[{i}]"), t)),
                    _ => err(format!("{key}[{i}]"), "expected a table"),
                })
                .collect(),
            Some(_) => err(key, "expected an array of tables"),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        for k in self.table.keys() {
            if !self.seen.contains(k) {
                return err(self.key(k), "unknown key");
            }
        }
        Ok(())
    }
}

fn as_f64(v: &Value, key: &str) -> Result<f64, ConfigError> {
    let x = match v {
        Value::Float(f) => *f,
        Value::Integer(i) => *i as f64,
        _ => return err(key, "expected a number"),
    };
    if !x.is_finite() {
        return err(key, "must be finite");
    }
    Ok(x)
}

fn as_vec(v: &Value, key: &str) -> Result<Vec<f64>, ConfigError> {
    match v {
        Value::Array(items) => items.iter().enumerate().map(|(i, x)| as_f64(x, &format!("{key}[{i}]"))).collect(),
        _ => err(key, "expected an array of numbers"),
    }
}

fn read_text(base: &Path, file: &str, key: &str) -> Result<String, ConfigError> {
    let path = base.join(file);
    std::fs::read_to_string(&path).or_else(|e| err(key, format!("cannot read {}: {e}", path.display())))
}

/// `file = "..."` or `points = [[...]]` with `weights = [...]`.
fn parse_measure(mut s: Section, base: &Path, dim: usize) -> Result<MeasureSource, ConfigError> {
    let file = s.string("file")?;
    let points = s.mat("points")?;
    let weights = s.vec("weights")?;
    let wkey = s.key("weights");
    let fkey = s.key("file");
    let pkey = s.key("points");
    s.finish()?;
    let (pts, ws) = match (&file, points, weights) {
        (Some(f), None, None) => {
            let text = read_text(base, f, &fkey)?;
            let m = DiscreteMeasure::from_csv(&text).or_else(|e| {
                let key = if e.to_string().contains("weight") { wkey.clone() } else { fkey.clone() };
                err(key, format!("{e} (in {f})"))
            })?;
            let pts = m.points().map(<[f64]>::to_vec).collect();
            (pts, m.weights().to_vec())
        }
        (None, Some(p), Some(w)) => (p, w),
        (None, Some(p), None) => {
            let n = p.len().max(1) as f64;
            let w = vec![1.0 / n; p.len()];
            (p, w)
        }
        (None, None, _) => return err(pkey, "a measure needs `file` or `points`"),
        (Some(_), _, _) => return err(fkey, "`file` excludes inline `points` and `weights`"),
    };
    if ws.len() != pts.len() {
        return err(wkey, format!("{} weights for {} points", ws.len(), pts.len()));
    }
    if let Some(i) = pts.iter().position(|p| p.len() != dim) {
        return err(format!("{pkey}[{i}]"), format!("expected {dim} coordinates"));
    }
    if let Some(i) = ws.iter().position(|w| !(*w > 0.0)) {
        return err(format!("{wkey}[{i}]"), "weights must be positive");
    }
    let total: f64 = ws.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return err(wkey, format!("weights sum to {total}, expected 1"));
    }
    let measure = DiscreteMeasure::new(pts, ws).or_else(|e| err(wkey, e.to_string()))?;
    Ok(MeasureSource { file, measure })
}

fn parse_field(mut s: Section, dim: usize) -> Result<VectorField, ConfigError> {
    let kind = s.string("kind")?.ok_or(ConfigError { key: s.key("kind"), message: "missing field kind".into() })?;
    let kkey = s.key("kind");
    let built = match kind.as_str() {
        "affine" => {
            let mkey = s.key("matrix");
            let matrix = s.vec("matrix")?.ok_or(ConfigError { key: mkey.clone(), message: "missing".into() })?;
            let offset = s.vec("offset")?.unwrap_or_else(|| vec![0.0; dim]);
            if matrix.len() != dim * dim {
                return err(mkey, format!("expected {} entries (row-major {dim}x{dim})", dim * dim));
            }
            if offset.len() != dim {
                return err(s.key("offset"), format!("expected {dim} entries"));
            }
            VectorField::affine(matrix, offset)
        }
        "identity" => Ok(VectorField::identity(dim)),
        "zero" => Ok(VectorField::zero(dim)),
        "constant" => {
            let vkey = s.key("value");
            let value = s.vec("value")?.ok_or(ConfigError { key: vkey.clone(), message: "missing".into() })?;
            if value.len() != dim {
                return err(vkey, format!("expected {dim} entries"));
            }
            VectorField::constant(value)
        }
        "saturated_radial" => {
            let amplitude = s.req_f64("amplitude")?;
            let scale = s.req_f64("scale")?;
            if !(scale > 0.0) {
                return err(s.key("scale"), "must be positive");
            }
            VectorField::saturated_radial(dim, amplitude, scale)
        }
        other => return err(kkey, format!("unknown field kind `{other}`")),
    };
    let key = s.path.clone();
    s.finish()?;
    built.or_else(|e| err(key, e.to_string()))
}

/// `knots` (default `[start, horizon]`) plus one `[[...field]]` per piece.
fn parse_time_field(s: &mut Section, start: f64, horizon: f64, dim: usize) -> Result<TimeField, ConfigError> {
    let kkey = s.key("knots");
    let knots = s.vec("knots")?.unwrap_or_else(|| vec![start, horizon]);
    let fkey = s.key("field");
    let fields = s.tables("field")?.into_iter().map(|f| parse_field(f, dim)).collect::<Result<Vec<_>, _>>()?;
    if fields.is_empty() {
        return err(fkey, "at least one field piece is required");
    }
    if knots.len() != fields.len() + 1 {
        return err(kkey, format!("{} knots for {} field pieces", knots.len(), fields.len()));
    }
    if knots[0] > start || knots[knots.len() - 1] < horizon {
        return err(kkey, format!("knots must cover [{start}, {horizon}]"));
    }
    TimeField::new(knots, fields).or_else(|e| err(kkey, e.to_string()))
}

fn parse_generator(mut s: Section, start: f64, horizon: f64, dim: usize) -> Result<Generator, ConfigError> {
    let base = parse_time_field(&mut s, start, horizon, dim)?;
    let gkey = s.key("barycenter_gain");
    let gain = s.f64("barycenter_gain")?.unwrap_or(0.0);
    let pkey = s.key("moment_push");
    let push = s.vec("moment_push")?.unwrap_or_else(|| vec![0.0; dim]);
    s.finish()?;
    if !(gain >= 0.0) {
        return err(gkey, "must be >= 0");
    }
    if push.len() != dim {
        return err(pkey, format!("expected {dim} entries"));
    }
    Generator::new(base, gain, push).or_else(|e| err(gkey, e.to_string()))
}

fn parse_nodes(base: &Path, file: &str, key: &str, dim: usize) -> Result<(Vec<f64>, Vec<Vec<DiscreteMeasure>>), ConfigError> {
    let text = read_text(base, file, key)?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let mut expect = String::from("t,candidate,w");
    (1..=dim).for_each(|k| expect.push_str(&format!(",x{k}")));
    if lines.next().map(|h| h.replace(' ', "")) != Some(expect.clone()) {
        return err(key, format!("nodes file must start with header `{expect}`"));
    }
    // (t, candidate) -> atoms, in file order.
    let mut groups: Vec<(f64, usize, Vec<Vec<f64>>, Vec<f64>)> = Vec::new();
    for (row, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .or_else(|e| err(key, format!("row {}: {e}", row + 1)))?;
        if vals.len() != dim + 3 || vals[1] < 0.0 || vals[1].fract() != 0.0 {
            return err(key, format!("row {} is malformed", row + 1));
        }
        let (t, c) = (vals[0], vals[1] as usize);
        match groups.last_mut() {
            Some(g) if g.0 == t && g.1 == c => {
                g.2.push(vals[3..].to_vec());
                g.3.push(vals[2]);
            }
            _ => groups.push((t, c, vec![vals[3..].to_vec()], vec![vals[2]])),
        }
    }
    let mut times: Vec<f64> = Vec::new();
    let mut candidates: Vec<Vec<DiscreteMeasure>> = Vec::new();
    for (t, c, pts, ws) in groups {
        if times.last() != Some(&t) {
            if times.last().is_some_and(|&last| !(t > last)) {
                return err(key, format!("node times must increase (at t = {t})"));
            }
            times.push(t);
            candidates.push(Vec::new());
        }
        let slot = candidates.last_mut().expect("pushed above");
        if c != slot.len() {
            return err(key, format!("candidates at t = {t} must be numbered 0, 1, ... in order"));
        }
        slot.push(DiscreteMeasure::new(pts, ws).or_else(|e| err(key, format!("t = {t}, candidate {c}: {e}")))?);
    }
    if times.is_empty() {
        return err(key, "nodes file has no rows");
    }
    Ok((times, candidates))
}

fn parse_tube(mut s: Section, base: &Path, start: f64, horizon: f64, dim: usize) -> Result<TubeDecl, ConfigError> {
    let kkey = s.key("kind");
    let kind = s.string("kind")?.ok_or(ConfigError { key: kkey.clone(), message: "missing tube kind".into() })?;
    let modulus = s.step("modulus")?.ok_or(ConfigError { key: s.key("modulus"), message: "missing tube modulus".into() })?;
    if modulus.values().iter().any(|v| *v < 0.0) {
        return err(s.key("modulus"), "modulus must be nonnegative");
    }
    let spec = match kind.as_str() {
        "anchor_ball" => {
            let rkey = s.key("radius");
            let radius = s.step("radius")?.ok_or(ConfigError { key: rkey.clone(), message: "missing".into() })?;
            if radius.values().iter().any(|v| *v < 0.0) {
                return err(rkey, "radius must be nonnegative");
            }
            let akey = s.key("anchor");
            let mut a = s.sub("anchor")?.ok_or(ConfigError { key: akey, message: "missing anchor".into() })?;
            let motion = a.string("motion")?.unwrap_or_else(|| "flow".into());
            let initial = a.sub("measure")?.map(|m| parse_measure(m, base, dim)).transpose()?;
            let anchor = match motion.as_str() {
                "flow" => AnchorSpec::Flow { initial, field: parse_time_field(&mut a, start, horizon, dim)? },
                "translation" => {
                    let ckey = a.key("coeffs");
                    let coeffs = a.mat("coeffs")?.ok_or(ConfigError { key: ckey.clone(), message: "missing".into() })?;
                    if coeffs.iter().any(|c| c.len() != dim) {
                        return err(ckey, format!("each coefficient needs {dim} entries"));
                    }
                    AnchorSpec::Translation { initial, coeffs }
                }
                other => return err(a.key("motion"), format!("unknown anchor motion `{other}`")),
            };
            a.finish()?;
            TubeSpec::AnchorBall { radius, anchor }
        }
        "moment_cap" => {
            let ckey = s.key("cap");
            let cap = s.step("cap")?.ok_or(ConfigError { key: ckey.clone(), message: "missing".into() })?;
            if cap.values().iter().any(|v| *v < 0.0) {
                return err(ckey, "cap must be nonnegative");
            }
            TubeSpec::MomentCap { cap }
        }
        "sampled" => {
            let nkey = s.key("nodes");
            let mut n = s.sub("nodes")?.ok_or(ConfigError { key: nkey.clone(), message: "missing nodes table".into() })?;
            let fkey = n.key("file");
            let file = n.string("file")?.ok_or(ConfigError { key: fkey.clone(), message: "missing".into() })?;
            n.finish()?;
            let (times, candidates) = parse_nodes(base, &file, &fkey, dim)?;
            TubeSpec::Sampled { file, times, candidates }
        }
        other => return err(kkey, format!("unknown tube kind `{other}`")),
    };
    s.finish()?;
    Ok(TubeDecl { spec, modulus })
}

fn parse_algorithm(mut s: Section) -> Result<Algorithm, ConfigError> {
    let d = Algorithm::default();
    let positive = |s: &mut Section, k: &str, dflt: usize| -> Result<usize, ConfigError> {
        let key = s.key(k);
        match s.uint(k)? {
            None => Ok(dflt),
            Some(0) => err(key, "must be >= 1"),
            Some(v) => Ok(v as usize),
        }
    };
    let mesh = positive(&mut s, "mesh", d.mesh)?;
    let grid_points = positive(&mut s, "grid_points", d.grid_points)?;
    let coarse = positive(&mut s, "coarse", d.coarse)?;
    let fine = positive(&mut s, "fine", d.fine)?;
    let probe_levels = positive(&mut s, "probe_levels", d.probe_levels)?;
    let samples = positive(&mut s, "samples", d.samples)?;
    let pieces = positive(&mut s, "pieces", d.pieces)?;
    let gronwall_points = positive(&mut s, "gronwall_points", d.gronwall_points)?;
    if gronwall_points < 2 {
        return err(s.key("gronwall_points"), "must be >= 2");
    }
    let gm_key = s.key("gronwall_mesh");
    let gronwall_mesh = match s.uint("gronwall_mesh")? {
        Some(0) => return err(gm_key, "must be >= 1"),
        other => other.map(|v| v as usize),
    };
    let nkey = s.key("usc_ns");
    let usc_ns = match s.vec("usc_ns")? {
        None => d.usc_ns,
        Some(v) => {
            if v.is_empty() || v.iter().any(|x| !(*x >= 1.0) || x.fract() != 0.0) {
                return err(nkey, "expected a nonempty list of integers >= 1");
            }
            v.into_iter().map(|x| x as usize).collect()
        }
    };
    let ekey = s.key("eps");
    let eps = s.f64("eps")?;
    if eps.is_some_and(|e| !(e > 0.0)) {
        return err(ekey, "must be positive");
    }
    let bkey = s.key("bad_set");
    let bad_set = match s.mat("bad_set")? {
        None => None,
        Some(rows) => {
            if rows.iter().any(|r| r.len() != 2 || !(r[0] < r[1])) {
                return err(bkey, "expected [[a, b], ...] with a < b");
            }
            Some(rows.into_iter().map(|r| (r[0], r[1])).collect())
        }
    };
    let fkey = s.key("failure_factor");
    let failure_factor = s.f64("failure_factor")?.unwrap_or(d.failure_factor);
    if !(failure_factor > 0.0) {
        return err(fkey, "must be positive");
    }
    let probe_time = s.f64("probe_time")?;
    let hkey = s.key("probe_h0");
    let probe_h0 = s.f64("probe_h0")?;
    if probe_h0.is_some_and(|h| !(h > 0.0)) {
        return err(hkey, "must be positive");
    }
    let bkey = s.key("probe_beta");
    let probe_beta = s.f64("probe_beta")?.unwrap_or(d.probe_beta);
    if !(probe_beta > 0.0 && probe_beta < 1.0) {
        return err(bkey, "must lie in (0, 1)");
    }
    let rkey = s.key("integral_radius");
    let integral_radius = s.f64("integral_radius")?.unwrap_or(d.integral_radius);
    if !(integral_radius > 0.0) {
        return err(rkey, "must be positive");
    }
    let skey = s.key("slack");
    let slack = s.f64("slack")?;
    if slack.is_some_and(|x| x < 0.0) {
        return err(skey, "must be nonnegative");
    }
    s.finish()?;
    Ok(Algorithm {
        mesh,
        usc_ns,
        eps,
        bad_set,
        grid_points,
        coarse,
        fine,
        failure_factor,
        probe_time,
        probe_h0,
        probe_beta,
        probe_levels,
        integral_radius,
        samples,
        pieces,
        gronwall_points,
        gronwall_mesh,
        slack,
    })
}

fn parse_schedule(mut s: Section, k: usize) -> Result<Schedule, ConfigError> {
    let kkey = s.key("knots");
    let knots = s.vec("knots")?.ok_or(ConfigError { key: kkey.clone(), message: "missing".into() })?;
    let wkey = s.key("weights");
    let weights = s.mat("weights")?.ok_or(ConfigError { key: wkey.clone(), message: "missing".into() })?;
    s.finish()?;
    if weights.iter().any(|w| w.len() != k) {
        return err(wkey, format!("each weight vector needs {k} entries (one per generator)"));
    }
    Schedule::new(knots, weights).or_else(|e| err(wkey, e.to_string()))
}

fn parse_counterexample(mut s: Section) -> Result<CounterexampleSpec, ConfigError> {
    let cases = s
        .tables("case")?
        .into_iter()
        .map(|mut c| {
            let case = CaseSpec { xi: c.req_f64("xi")?, zeta: c.req_f64("zeta")?, s0: c.req_f64("s0")? };
            if case.s0.abs() > 1.0 {
                return err(c.key("s0"), "|s0| must be <= 1");
            }
            c.finish()?;
            Ok(case)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let dkey = s.key("draws");
    let draws = s.uint("draws")?.unwrap_or(200) as usize;
    if draws == 0 {
        return err(dkey, "must be >= 1");
    }
    s.finish()?;
    Ok(CounterexampleSpec { cases, draws })
}

/// Parses scenario text; relative file references resolve against `base`.
pub fn parse_str(text: &str, base: &Path) -> Result<Scenario, ConfigError> {
    let doc: Table = text.parse().or_else(|e: toml::de::Error| err("<document>", e.to_string()))?;
    let mut s = Section::new("", &doc);
    let seed = s.uint("seed")?.unwrap_or(0);
    let dkey = s.key("dimension");
    let dimension = s.uint("dimension")?.ok_or(ConfigError { key: dkey.clone(), message: "missing".into() })? as usize;
    if dimension == 0 {
        return err(dkey, "must be >= 1");
    }
    let start = s.f64("start")?.unwrap_or(0.0);
    let hkey = s.key("horizon");
    let horizon = s.req_f64("horizon")?;
    if !(horizon > start) {
        return err(hkey, format!("must exceed start = {start}"));
    }
    let mkey = s.key("measure");
    let measure = parse_measure(s.sub("measure")?.ok_or(ConfigError { key: mkey, message: "missing".into() })?, base, dimension)?;
    let generators = s
        .tables("generator")?
        .into_iter()
        .map(|g| parse_generator(g, start, horizon, dimension))
        .collect::<Result<Vec<_>, _>>()?;
    let bounds = match s.sub("bounds")? {
        None => None,
        Some(mut b) => {
            let m = b.step("m")?.ok_or(ConfigError { key: b.key("m"), message: "missing".into() })?;
            let l = b.step("l")?.ok_or(ConfigError { key: b.key("l"), message: "missing".into() })?;
            for (k, f) in [("m", &m), ("l", &l)] {
                if f.values().iter().any(|v| *v < 0.0) {
                    return err(b.key(k), "bound profiles must be nonnegative");
                }
            }
            b.finish()?;
            Some((m, l))
        }
    };
    let tube = s.sub("tube")?.map(|t| parse_tube(t, base, start, horizon, dimension)).transpose()?;
    let algorithm = s.sub("algorithm")?.map(parse_algorithm).transpose()?.unwrap_or_default();
    let schedules = s
        .tables("schedule")?
        .into_iter()
        .map(|sc| parse_schedule(sc, generators.len()))
        .collect::<Result<Vec<_>, _>>()?;
    let counterexample = s.sub("counterexample")?.map(parse_counterexample).transpose()?.unwrap_or_default();
    s.finish()?;
    let scenario = Scenario { seed, dimension, start, horizon, measure, generators, bounds, tube, algorithm, schedules, counterexample };
    // Cross-field checks.
    if scenario.bounds.is_some() {
        if scenario.generators.is_empty() {
            return err("bounds", "declared without generators");
        }
        scenario.velocity_set()?;
    }
    if scenario.tube.is_some() {
        scenario.tube()?;
    }
    Ok(scenario)
}

pub fn parse_file(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).or_else(|e| err("<file>", format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    parse_str(&text, &base)
}

fn arr(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| Value::Float(*x)).collect())
}

fn mat(rows: &[Vec<f64>]) -> Value {
    Value::Array(rows.iter().map(|r| arr(r)).collect())
}

fn step_value(f: &StepFunction) -> Value {
    if f.breaks().is_empty() {
        return Value::Float(f.values()[0]);
    }
    let mut t = Table::new();
    t.insert("breaks".into(), arr(f.breaks()));
    t.insert("values".into(), arr(f.values()));
    Value::Table(t)
}

fn measure_table(m: &MeasureSource) -> Table {
    let mut t = Table::new();
    match &m.file {
        Some(f) => {
            t.insert("file".into(), Value::String(f.clone()));
        }
        None => {
            let pts: Vec<Vec<f64>> = m.measure.points().map(<[f64]>::to_vec).collect();
            t.insert("points".into(), mat(&pts));
            t.insert("weights".into(), arr(m.measure.weights()));
        }
    }
    t
}

fn field_table(f: &VectorField) -> Table {
    let mut t = Table::new();
    match f.kind() {
        FieldKind::Affine { matrix, offset } => {
            t.insert("kind".into(), Value::String("affine".into()));
            t.insert("matrix".into(), arr(matrix));
            t.insert("offset".into(), arr(offset));
        }
        FieldKind::SaturatedRadial { amplitude, scale } => {
            t.insert("kind".into(), Value::String("saturated_radial".into()));
            t.insert("amplitude".into(), Value::Float(*amplitude));
            t.insert("scale".into(), Value::Float(*scale));
        }
        FieldKind::Constant { value } => {
            t.insert("kind".into(), Value::String("constant".into()));
            t.insert("value".into(), arr(value));
        }
        FieldKind::ConvexCombo { .. } | FieldKind::Sum { .. } => unreachable!("scenario fields are primitive"),
    }
    t
}

fn time_field_into(t: &mut Table, tf: &TimeField) {
    t.insert("knots".into(), arr(tf.knots()));
    t.insert("field".into(), Value::Array(tf.fields().iter().map(|f| Value::Table(field_table(f))).collect()));
}

/// Canonical form: every default made explicit, keys in a fixed order.
pub fn emit(s: &Scenario) -> String {
    let mut doc = Table::new();
    doc.insert("seed".into(), Value::Integer(s.seed as i64));
    doc.insert("dimension".into(), Value::Integer(s.dimension as i64));
    doc.insert("start".into(), Value::Float(s.start));
    doc.insert("horizon".into(), Value::Float(s.horizon));
    doc.insert("measure".into(), Value::Table(measure_table(&s.measure)));
    if !s.generators.is_empty() {
        let gens = s
            .generators
            .iter()
            .map(|g| {
                let mut t = Table::new();
                time_field_into(&mut t, &g.base);
                t.insert("barycenter_gain".into(), Value::Float(g.barycenter_gain));
                t.insert("moment_push".into(), arr(&g.moment_push));
                Value::Table(t)
            })
            .collect();
        doc.insert("generator".into(), Value::Array(gens));
    }
    if let Some((m, l)) = &s.bounds {
        let mut t = Table::new();
        t.insert("m".into(), step_value(m));
        t.insert("l".into(), step_value(l));
        doc.insert("bounds".into(), Value::Table(t));
    }
    if let Some(decl) = &s.tube {
        let mut t = Table::new();
        t.insert("modulus".into(), step_value(&decl.modulus));
        match &decl.spec {
            TubeSpec::AnchorBall { radius, anchor } => {
                t.insert("kind".into(), Value::String("anchor_ball".into()));
                t.insert("radius".into(), step_value(radius));
                let mut a = Table::new();
                let initial = match anchor {
                    AnchorSpec::Flow { initial, field } => {
                        a.insert("motion".into(), Value::String("flow".into()));
                        time_field_into(&mut a, field);
                        initial
                    }
                    AnchorSpec::Translation { initial, coeffs } => {
                        a.insert("motion".into(), Value::String("translation".into()));
                        a.insert("coeffs".into(), mat(coeffs));
                        initial
                    }
                };
                if let Some(m) = initial {
                    a.insert("measure".into(), Value::Table(measure_table(m)));
                }
                t.insert("anchor".into(), Value::Table(a));
            }
            TubeSpec::MomentCap { cap } => {
                t.insert("kind".into(), Value::String("moment_cap".into()));
                t.insert("cap".into(), step_value(cap));
            }
            TubeSpec::Sampled { file, .. } => {
                t.insert("kind".into(), Value::String("sampled".into()));
                let mut n = Table::new();
                n.insert("file".into(), Value::String(file.clone()));
                t.insert("nodes".into(), Value::Table(n));
            }
        }
        doc.insert("tube".into(), Value::Table(t));
    }
    let a = &s.algorithm;
    let mut t = Table::new();
    let int = |v: usize| Value::Integer(v as i64);
    t.insert("mesh".into(), int(a.mesh));
    t.insert("usc_ns".into(), Value::Array(a.usc_ns.iter().map(|&n| int(n)).collect()));
    if let Some(e) = a.eps {
        t.insert("eps".into(), Value::Float(e));
    }
    if let Some(b) = &a.bad_set {
        t.insert("bad_set".into(), mat(&b.iter().map(|&(x, y)| vec![x, y]).collect::<Vec<_>>()));
    }
    t.insert("grid_points".into(), int(a.grid_points));
    t.insert("coarse".into(), int(a.coarse));
    t.insert("fine".into(), int(a.fine));
    t.insert("failure_factor".into(), Value::Float(a.failure_factor));
    if let Some(p) = a.probe_time {
        t.insert("probe_time".into(), Value::Float(p));
    }
    if let Some(h) = a.probe_h0 {
        t.insert("probe_h0".into(), Value::Float(h));
    }
    t.insert("probe_beta".into(), Value::Float(a.probe_beta));
    t.insert("probe_levels".into(), int(a.probe_levels));
    t.insert("integral_radius".into(), Value::Float(a.integral_radius));
    t.insert("samples".into(), int(a.samples));
    t.insert("pieces".into(), int(a.pieces));
    t.insert("gronwall_points".into(), int(a.gronwall_points));
    if let Some(m) = a.gronwall_mesh {
        t.insert("gronwall_mesh".into(), int(m));
    }
    if let Some(x) = a.slack {
        t.insert("slack".into(), Value::Float(x));
    }
    doc.insert("algorithm".into(), Value::Table(t));
    if !s.schedules.is_empty() {
        let items = s
            .schedules
            .iter()
            .map(|sc| {
                let mut t = Table::new();
                t.insert("knots".into(), arr(sc.knots()));
                t.insert("weights".into(), mat(sc.weights()));
                Value::Table(t)
            })
            .collect();
        doc.insert("schedule".into(), Value::Array(items));
    }
    let mut c = Table::new();
    c.insert("draws".into(), int(s.counterexample.draws));
    if !s.counterexample.cases.is_empty() {
        let items = s
            .counterexample
            .cases
            .iter()
            .map(|k| {
                let mut t = Table::new();
                t.insert("xi".into(), Value::Float(k.xi));
                t.insert("zeta".into(), Value::Float(k.zeta));
                t.insert("s0".into(), Value::Float(k.s0));
                Value::Table(t)
            })
            .collect();
        c.insert("case".into(), Value::Array(items));
    }
    doc.insert("counterexample".into(), Value::Table(c));
    toml::to_string(&doc).expect("tables always serialize")
}
