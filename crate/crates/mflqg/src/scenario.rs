//! TOML scenario files.
//!
//! ```toml
//! [problem]
//! horizon = 1.0
//! steps = 1000            # or dt = 0.001
//! interpolation = "piecewise-constant"   # or "piecewise-linear"
//! n = 1                   # state; also m, k, r, r_tilde (all default 1)
//!
//! [init]
//! mu0 = 1.0
//!
//! [dynamics]
//! a = 0.03                          # scalar, broadcast to every entry
//! b = [1.0, 0.0]                    # row-major entries
//! c = [[0.04, 0.0], [0.0, 0.04]]    # rows
//! bbar = { times = [0.0, 1.0], values = [0.0, 0.02] }   # knot table
//!
//! [bsde]
//! gammatilde = [0.5, 0.0]  # one entry per noise column, or one value for all
//!
//! [sim]
//! paths = 20000
//! seed = 42
//! ```
//!
//! Sections `init`, `dynamics`, `bsde`, `observation` and `cost` take the
//! coefficient keys of the problem model; absent keys are zero. Knot tables
//! are read at the grid knots with the problem's interpolation rule and held
//! constant outside their time range. Writing a scenario and reading it back
//! reproduces every coefficient bit for bit.

use std::path::Path;

use mflqg_core::cost::{Kappa, Quadrature};
use mflqg_core::path::CoefficientPath;
use mflqg_core::problem::{key_spec, KeyKind, KEYS};
use mflqg_core::reference::al_problem;
use mflqg_core::{DMatrix, Dims, Interpolation, MFLQProblem, TimeGrid};
use toml::{Table, Value};

/// Embedded asset-liability scenario.
pub const AL_SCENARIO: &str = include_str!("../scenarios/al.toml");

const SECTIONS: &[&str] = &["problem", "init", "dynamics", "bsde", "observation", "cost", "sim"];

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] mflqg_core::Error),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// Monte Carlo settings carried by a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub paths: usize,
    pub seed: u64,
    /// Paths written to `paths.csv`.
    pub record: usize,
    pub kappa: Kappa,
    pub quadrature: Quadrature,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { paths: 20000, seed: 42, record: 100, kappa: Kappa::Half, quadrature: Quadrature::Simpson }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub problem: MFLQProblem,
    pub sim: SimConfig,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let doc: Table = text.parse()?;
        for key in doc.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                return Err(invalid(format!("unknown section [{key}]")));
            }
        }
        let problem = parse_problem(&doc)?;
        let sim = match doc.get("sim") {
            Some(v) => parse_sim(table(v, "sim")?)?,
            None => SimConfig::default(),
        };
        Ok(Self { problem, sim })
    }

    /// The embedded asset-liability scenario.
    pub fn asset_liability() -> Self {
        Self::parse(AL_SCENARIO).expect("embedded scenario parses")
    }

    /// Same scenario on a grid of step `dt` (coefficients resampled).
    pub fn with_dt(&self, dt: f64) -> Result<Self, ScenarioError> {
        let grid = TimeGrid::with_step(self.problem.grid.horizon(), dt)?;
        Ok(Self { problem: self.problem.regrid(grid)?, sim: self.sim.clone() })
    }

    pub fn to_toml(&self) -> String {
        let mut doc = Table::new();
        let p = &self.problem;
        let mut head = Table::new();
        head.insert("horizon".into(), Value::Float(p.grid.horizon()));
        head.insert("steps".into(), Value::Integer(p.grid.steps() as i64));
        let interp = match p.interpolation {
            Interpolation::PiecewiseConstantLeft => "piecewise-constant",
            Interpolation::PiecewiseLinear => "piecewise-linear",
        };
        head.insert("interpolation".into(), Value::String(interp.into()));
        let d = p.dims;
        for (k, v) in [("n", d.state), ("m", d.value), ("k", d.control), ("r", d.state_noise), ("r_tilde", d.obs_noise)] {
            head.insert(k.into(), Value::Integer(v as i64));
        }
        doc.insert("problem".into(), Value::Table(head));
        for spec in KEYS {
            let value = match spec.kind {
                KeyKind::Constant => {
                    let m = p.constant(spec.key).expect("constant key");
                    if m.iter().all(|v| v.to_bits() == 0) {
                        continue;
                    }
                    matrix_value(m)
                }
                KeyKind::Path => {
                    let path = p.path(spec.key).expect("path key");
                    if is_zero(path) {
                        continue;
                    }
                    path_value(path, &p.grid)
                }
                KeyKind::FamilyW | KeyKind::FamilyWTilde => {
                    let fam = p.family(spec.key).expect("family key");
                    if fam.iter().all(is_zero) {
                        continue;
                    }
                    Value::Array(fam.iter().map(|q| path_value(q, &p.grid)).collect())
                }
            };
            let section = doc
                .entry(spec.section)
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .expect("section table");
            section.insert(spec.key.into(), value);
        }
        let s = &self.sim;
        let mut sim = Table::new();
        sim.insert("paths".into(), Value::Integer(s.paths as i64));
        // TOML integers are signed; seeds above i64::MAX are written as strings.
        sim.insert(
            "seed".into(),
            i64::try_from(s.seed).map(Value::Integer).unwrap_or_else(|_| Value::String(s.seed.to_string())),
        );
        sim.insert("record".into(), Value::Integer(s.record as i64));
        let kappa = match s.kappa {
            Kappa::Half => "half",
            Kappa::One => "one",
        };
        sim.insert("kappa".into(), Value::String(kappa.into()));
        let quad = match s.quadrature {
            Quadrature::Simpson => "simpson",
            Quadrature::Trapezoid => "trapezoid",
        };
        sim.insert("quadrature".into(), Value::String(quad.into()));
        doc.insert("sim".into(), Value::Table(sim));
        toml::to_string(&doc).expect("scenario serializes")
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_toml())
    }

    /// Whether the problem is the asset-liability example on its own grid.
    pub fn is_asset_liability(&self) -> bool {
        al_problem(self.problem.grid.steps())
            .map(|al| al.grid == self.problem.grid && al == self.problem)
            .unwrap_or(false)
    }
}

fn table<'a>(v: &'a Value, what: &str) -> Result<&'a Table, ScenarioError> {
    v.as_table().ok_or_else(|| invalid(format!("[{what}] must be a table")))
}

fn number(v: &Value, what: &str) -> Result<f64, ScenarioError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(invalid(format!("{what}: expected a number"))),
    }
}

fn count(t: &Table, key: &str, default: usize) -> Result<usize, ScenarioError> {
    match t.get(key) {
        None => Ok(default),
        Some(Value::Integer(i)) if *i >= 1 => Ok(*i as usize),
        Some(_) => Err(invalid(format!("problem.{key} must be a positive integer"))),
    }
}

fn parse_problem(doc: &Table) -> Result<MFLQProblem, ScenarioError> {
    let head = table(doc.get("problem").ok_or_else(|| invalid("missing [problem] section"))?, "problem")?;
    for key in head.keys() {
        if !["horizon", "steps", "dt", "interpolation", "n", "m", "k", "r", "r_tilde"].contains(&key.as_str()) {
            return Err(invalid(format!("unknown key problem.{key}")));
        }
    }
    let horizon = number(head.get("horizon").ok_or_else(|| invalid("problem.horizon is required"))?, "problem.horizon")?;
    let grid = match (head.get("steps"), head.get("dt")) {
        (Some(_), Some(_)) => return Err(invalid("give problem.steps or problem.dt, not both")),
        (Some(_), None) => TimeGrid::new(horizon, count(head, "steps", 0)?)?,
        (None, Some(dt)) => TimeGrid::with_step(horizon, number(dt, "problem.dt")?)?,
        (None, None) => return Err(invalid("problem.steps or problem.dt is required")),
    };
    let interpolation = match head.get("interpolation").map(|v| v.as_str()) {
        None | Some(Some("piecewise-constant")) => Interpolation::PiecewiseConstantLeft,
        Some(Some("piecewise-linear")) => Interpolation::PiecewiseLinear,
        _ => return Err(invalid("problem.interpolation must be \"piecewise-constant\" or \"piecewise-linear\"")),
    };
    let dims = Dims {
        state: count(head, "n", 1)?,
        value: count(head, "m", 1)?,
        control: count(head, "k", 1)?,
        state_noise: count(head, "r", 1)?,
        obs_noise: count(head, "r_tilde", 1)?,
    };
    let mut p = MFLQProblem::zeros(dims, grid, interpolation)?;
    for section in ["init", "dynamics", "bsde", "observation", "cost"] {
        let Some(v) = doc.get(section) else { continue };
        for (key, value) in table(v, section)? {
            let spec = key_spec(key)
                .filter(|s| s.section == section)
                .ok_or_else(|| invalid(format!("unknown key {section}.{key}")))?;
            let (rows, cols) = p.shape_of(key).expect("known key");
            let what = format!("{section}.{key}");
            match spec.kind {
                KeyKind::Constant => p.set_const(key, matrix(value, rows, cols, &what)?)?,
                KeyKind::Path => p.set_path(key, path(value, rows, cols, &p.grid, interpolation, &what)?)?,
                KeyKind::FamilyW | KeyKind::FamilyWTilde => {
                    let len = p.family_len(key).expect("family key");
                    let members = match value {
                        Value::Array(items) if items.len() == len => items
                            .iter()
                            .enumerate()
                            .map(|(j, it)| path(it, rows, cols, &p.grid, interpolation, &format!("{what}[{j}]")))
                            .collect::<Result<Vec<_>, _>>()?,
                        other => {
                            let one = path(other, rows, cols, &p.grid, interpolation, &what)?;
                            vec![one; len]
                        }
                    };
                    p.set_family(key, members)?;
                }
            }
        }
    }
    Ok(p)
}

/// Number, row-major list, or list of rows.
fn matrix(v: &Value, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>, ScenarioError> {
    match v {
        Value::Float(_) | Value::Integer(_) => Ok(DMatrix::from_element(rows, cols, number(v, what)?)),
        Value::Array(items) if items.iter().all(|i| i.is_array()) => {
            if items.len() != rows {
                return Err(invalid(format!("{what}: expected {rows} rows, got {}", items.len())));
            }
            let mut flat = Vec::with_capacity(rows * cols);
            for row in items {
                let row = row.as_array().expect("checked");
                if row.len() != cols {
                    return Err(invalid(format!("{what}: expected rows of {cols} entries, got {}", row.len())));
                }
                for x in row {
                    flat.push(number(x, what)?);
                }
            }
            Ok(DMatrix::from_row_slice(rows, cols, &flat))
        }
        Value::Array(items) => {
            if items.len() != rows * cols {
                return Err(invalid(format!(
                    "{what}: expected {} row-major entries for a {rows}x{cols} matrix, got {}",
                    rows * cols,
                    items.len()
                )));
            }
            let flat = items.iter().map(|x| number(x, what)).collect::<Result<Vec<_>, _>>()?;
            Ok(DMatrix::from_row_slice(rows, cols, &flat))
        }
        _ => Err(invalid(format!("{what}: expected a number or a list"))),
    }
}

fn path(
    v: &Value,
    rows: usize,
    cols: usize,
    grid: &TimeGrid,
    interpolation: Interpolation,
    what: &str,
) -> Result<CoefficientPath, ScenarioError> {
    let Value::Table(t) = v else {
        return Ok(CoefficientPath::constant(matrix(v, rows, cols, what)?, grid.knots(), interpolation));
    };
    for key in t.keys() {
        if key != "times" && key != "values" {
            return Err(invalid(format!("{what}: unknown knot-table key `{key}`")));
        }
    }
    let times = t
        .get("times")
        .and_then(|x| x.as_array())
        .ok_or_else(|| invalid(format!("{what}: knot table needs a `times` list")))?
        .iter()
        .map(|x| number(x, what))
        .collect::<Result<Vec<_>, _>>()?;
    let values = t
        .get("values")
        .and_then(|x| x.as_array())
        .ok_or_else(|| invalid(format!("{what}: knot table needs a `values` list")))?
        .iter()
        .map(|x| matrix(x, rows, cols, what))
        .collect::<Result<Vec<_>, _>>()?;
    if times.is_empty() || times.len() != values.len() {
        return Err(invalid(format!("{what}: `times` and `values` must be non-empty and of equal length")));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(format!("{what}: `times` must be strictly increasing")));
    }
    let samples = grid.times().map(|t| sample_table(&times, &values, t, interpolation)).collect();
    Ok(CoefficientPath::from_samples(what, samples, interpolation)?)
}

/// Table value at `t`; exact at table times.
fn sample_table(times: &[f64], values: &[DMatrix<f64>], t: f64, interpolation: Interpolation) -> DMatrix<f64> {
    let j = times.partition_point(|s| *s <= t);
    if j == 0 {
        return values[0].clone();
    }
    let lo = j - 1;
    if times[lo] == t || j == times.len() {
        return values[lo].clone();
    }
    match interpolation {
        Interpolation::PiecewiseConstantLeft => values[lo].clone(),
        Interpolation::PiecewiseLinear => {
            let w = (t - times[lo]) / (times[j] - times[lo]);
            &values[lo] + (&values[j] - &values[lo]) * w
        }
    }
}

/// Bitwise zero everywhere (a stored −0.0 is kept in the file).
fn is_zero(p: &CoefficientPath) -> bool {
    p.samples().iter().all(|m| m.iter().all(|v| v.to_bits() == 0))
}

fn matrix_value(m: &DMatrix<f64>) -> Value {
    let first = m[(0, 0)];
    if m.iter().all(|v| v.to_bits() == first.to_bits()) {
        return Value::Float(first);
    }
    let mut flat = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            flat.push(Value::Float(m[(r, c)]));
        }
    }
    Value::Array(flat)
}

fn path_value(p: &CoefficientPath, grid: &TimeGrid) -> Value {
    let s = p.samples();
    if s.iter().all(|m| m.iter().zip(s[0].iter()).all(|(a, b)| a.to_bits() == b.to_bits())) {
        return matrix_value(&s[0]);
    }
    let mut t = Table::new();
    t.insert("times".into(), Value::Array(grid.times().map(Value::Float).collect()));
    t.insert("values".into(), Value::Array(s.iter().map(matrix_value).collect()));
    Value::Table(t)
}

fn parse_sim(t: &Table) -> Result<SimConfig, ScenarioError> {
    let mut s = SimConfig::default();
    for (key, v) in t {
        match key.as_str() {
            "paths" => s.paths = positive(v, "sim.paths")?,
            "record" => {
                s.record = match v {
                    Value::Integer(i) if *i >= 0 => *i as usize,
                    _ => return Err(invalid("sim.record must be a non-negative integer")),
                }
            }
            "seed" => {
                s.seed = match v {
                    Value::Integer(i) if *i >= 0 => *i as u64,
                    Value::String(txt) => txt.parse().map_err(|_| invalid("sim.seed must be a 64-bit unsigned integer"))?,
                    _ => return Err(invalid("sim.seed must be a 64-bit unsigned integer")),
                }
            }
            "kappa" => {
                s.kappa = match v.as_str() {
                    Some("half") => Kappa::Half,
                    Some("one") => Kappa::One,
                    _ => return Err(invalid("sim.kappa must be \"half\" or \"one\"")),
                }
            }
            "quadrature" => {
                s.quadrature = match v.as_str() {
                    Some("simpson") => Quadrature::Simpson,
                    Some("trapezoid") => Quadrature::Trapezoid,
                    _ => return Err(invalid("sim.quadrature must be \"simpson\" or \"trapezoid\"")),
                }
            }
            other => return Err(invalid(format!("unknown key sim.{other}"))),
        }
    }
    Ok(s)
}

fn positive(v: &Value, what: &str) -> Result<usize, ScenarioError> {
    match v {
        Value::Integer(i) if *i >= 1 => Ok(*i as usize),
        _ => Err(invalid(format!("{what} must be a positive integer"))),
    }
}
