//! Coefficient set of the partially observed mean-field LQ problem.
//!
//! State `dx = (a x + ā Ex + b v + b̄) dt + c dw`, observation
//! `dY = (f x + f̄ Ex + g) dt + h dw̃`, a linear mean-field BSDE for the
//! recursive utility `y`, and the quadratic cost
//!
//! ```text
//! J = ½ E{ ∫ [⟨Ax,x⟩ + ⟨ĀEx,Ex⟩ + ⟨Bv,v⟩ + 2⟨Dx,v⟩ + 2⟨D̄Ex,v⟩
//!            + 2⟨F̃,x⟩ + 2⟨F̄̃,Ex⟩ + 2⟨G̃,v⟩] dt
//!        + ⟨Hx_T,x_T⟩ + ⟨H̄Ex_T,Ex_T⟩ + 2⟨L̃,x_T⟩ + 2⟨L̄̃,Ex_T⟩
//!        + ⟨My_0,y_0⟩ + 2⟨N,y_0⟩ }.
//! ```
//!
//! Every coefficient is addressable by its scenario key (`a`, `abar`, ...),
//! which is how the file loader and serializer walk the problem.

use alloc::string::ToString;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::path::{CoefficientPath, Interpolation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// n
    pub state: usize,
    /// m
    pub value: usize,
    /// k
    pub control: usize,
    /// r
    pub state_noise: usize,
    /// r̃
    pub obs_noise: usize,
}

impl Dims {
    pub fn scalar() -> Self {
        Self { state: 1, value: 1, control: 1, state_noise: 1, obs_noise: 1 }
    }

    fn check(&self) -> Result<()> {
        let all = [self.state, self.value, self.control, self.state_noise, self.obs_noise];
        if all.iter().any(|d| *d == 0) {
            return Err(Error::Domain("all dimensions must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Law of `ξ = x_0`: Gaussian with mean μ0 and covariance σ0.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLaw {
    pub mean: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    /// a
    pub drift: CoefficientPath,
    /// ā
    pub mean_drift: CoefficientPath,
    /// b
    pub control_gain: CoefficientPath,
    /// b̄
    pub offset: CoefficientPath,
    /// c
    pub diffusion: CoefficientPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bsde {
    /// α
    pub state_coupling: CoefficientPath,
    /// ᾱ
    pub mean_state_coupling: CoefficientPath,
    /// β
    pub value_coupling: CoefficientPath,
    /// β̄
    pub mean_value_coupling: CoefficientPath,
    /// γ, one entry per column of w
    pub z_coupling: Vec<CoefficientPath>,
    /// γ̄
    pub mean_z_coupling: Vec<CoefficientPath>,
    /// γ̃, one entry per column of w̃
    pub ztilde_coupling: Vec<CoefficientPath>,
    /// γ̄̃
    pub mean_ztilde_coupling: Vec<CoefficientPath>,
    /// ψ
    pub control_coupling: CoefficientPath,
    /// ψ̄
    pub offset: CoefficientPath,
    /// ρ
    pub terminal: DMatrix<f64>,
    /// ρ̄
    pub mean_terminal: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// f
    pub sensor: CoefficientPath,
    /// f̄
    pub mean_sensor: CoefficientPath,
    /// g
    pub offset: CoefficientPath,
    /// h
    pub noise: CoefficientPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cost {
    /// A
    pub state: CoefficientPath,
    /// Ā
    pub state_mean: CoefficientPath,
    /// B
    pub control: CoefficientPath,
    /// D
    pub cross: CoefficientPath,
    /// D̄
    pub cross_mean: CoefficientPath,
    /// F̃
    pub state_linear: CoefficientPath,
    /// F̄̃
    pub state_mean_linear: CoefficientPath,
    /// G̃
    pub control_linear: CoefficientPath,
    /// H
    pub terminal: DMatrix<f64>,
    /// H̄
    pub terminal_mean: DMatrix<f64>,
    /// L̃
    pub terminal_linear: DMatrix<f64>,
    /// L̄̃
    pub terminal_mean_linear: DMatrix<f64>,
    /// M
    pub utility_quadratic: DMatrix<f64>,
    /// N
    pub utility_linear: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MFLQProblem {
    pub dims: Dims,
    pub grid: TimeGrid,
    pub interpolation: Interpolation,
    pub init: InitialLaw,
    pub dynamics: Dynamics,
    pub bsde: Bsde,
    pub observation: Observation,
    pub cost: Cost,
}

/// How a coefficient is stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyKind {
    /// Sampled at every knot.
    Path,
    /// Time-independent.
    Constant,
    /// One path per noise column of w (`NoiseW`) or w̃ (`NoiseWTilde`).
    FamilyW,
    FamilyWTilde,
}

/// Scenario key, its section and its storage kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeySpec {
    pub section: &'static str,
    pub key: &'static str,
    pub symbol: &'static str,
    pub kind: KeyKind,
}

const fn spec(section: &'static str, key: &'static str, symbol: &'static str, kind: KeyKind) -> KeySpec {
    KeySpec { section, key, symbol, kind }
}

/// Every coefficient key in file order.
pub const KEYS: &[KeySpec] = &[
    spec("init", "mu0", "μ0", KeyKind::Constant),
    spec("init", "sigma0", "σ0", KeyKind::Constant),
    spec("dynamics", "a", "a", KeyKind::Path),
    spec("dynamics", "abar", "ā", KeyKind::Path),
    spec("dynamics", "b", "b", KeyKind::Path),
    spec("dynamics", "bbar", "b̄", KeyKind::Path),
    spec("dynamics", "c", "c", KeyKind::Path),
    spec("bsde", "alpha", "α", KeyKind::Path),
    spec("bsde", "alphabar", "ᾱ", KeyKind::Path),
    spec("bsde", "beta", "β", KeyKind::Path),
    spec("bsde", "betabar", "β̄", KeyKind::Path),
    spec("bsde", "gamma", "γ", KeyKind::FamilyW),
    spec("bsde", "gammabar", "γ̄", KeyKind::FamilyW),
    spec("bsde", "gammatilde", "γ̃", KeyKind::FamilyWTilde),
    spec("bsde", "gammabartilde", "γ̄̃", KeyKind::FamilyWTilde),
    spec("bsde", "psi", "ψ", KeyKind::Path),
    spec("bsde", "psibar", "ψ̄", KeyKind::Path),
    spec("bsde", "rho", "ρ", KeyKind::Constant),
    spec("bsde", "rhobar", "ρ̄", KeyKind::Constant),
    spec("observation", "f", "f", KeyKind::Path),
    spec("observation", "fbar", "f̄", KeyKind::Path),
    spec("observation", "g", "g", KeyKind::Path),
    spec("observation", "h", "h", KeyKind::Path),
    spec("cost", "A", "A", KeyKind::Path),
    spec("cost", "Abar", "Ā", KeyKind::Path),
    spec("cost", "B", "B", KeyKind::Path),
    spec("cost", "D", "D", KeyKind::Path),
    spec("cost", "Dbar", "D̄", KeyKind::Path),
    spec("cost", "Ftilde", "F̃", KeyKind::Path),
    spec("cost", "Fbartilde", "F̄̃", KeyKind::Path),
    spec("cost", "Gtilde", "G̃", KeyKind::Path),
    spec("cost", "H", "H", KeyKind::Constant),
    spec("cost", "Hbar", "H̄", KeyKind::Constant),
    spec("cost", "Ltilde", "L̃", KeyKind::Constant),
    spec("cost", "Lbartilde", "L̄̃", KeyKind::Constant),
    spec("cost", "M", "M", KeyKind::Constant),
    spec("cost", "N", "N", KeyKind::Constant),
];

pub fn key_spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|s| s.key == key)
}

fn unknown(key: &str) -> Error {
    Error::Domain(alloc::format!("unknown coefficient key `{key}`"))
}

impl MFLQProblem {
    /// Problem with every coefficient zero. `B` and `h` must still be set
    /// before validation passes.
    pub fn zeros(dims: Dims, grid: TimeGrid, interpolation: Interpolation) -> Result<Self> {
        dims.check()?;
        let knots = grid.knots();
        let Dims { state: n, value: m, control: k, state_noise: r, obs_noise: rt } = dims;
        let z = |rows, cols| {
            CoefficientPath::constant(DMatrix::zeros(rows, cols), knots, interpolation)
        };
        let fam = |count, rows| (0..count).map(|_| z(rows, rows)).collect::<Vec<_>>();
        Ok(Self {
            dims,
            grid,
            interpolation,
            init: InitialLaw { mean: DMatrix::zeros(n, 1), covariance: DMatrix::zeros(n, n) },
            dynamics: Dynamics {
                drift: z(n, n),
                mean_drift: z(n, n),
                control_gain: z(n, k),
                offset: z(n, 1),
                diffusion: z(n, r),
            },
            bsde: Bsde {
                state_coupling: z(m, n),
                mean_state_coupling: z(m, n),
                value_coupling: z(m, m),
                mean_value_coupling: z(m, m),
                z_coupling: fam(r, m),
                mean_z_coupling: fam(r, m),
                ztilde_coupling: fam(rt, m),
                mean_ztilde_coupling: fam(rt, m),
                control_coupling: z(m, k),
                offset: z(m, 1),
                terminal: DMatrix::zeros(m, n),
                mean_terminal: DMatrix::zeros(m, n),
            },
            observation: Observation {
                sensor: z(rt, n),
                mean_sensor: z(rt, n),
                offset: z(rt, 1),
                noise: z(rt, rt),
            },
            cost: Cost {
                state: z(n, n),
                state_mean: z(n, n),
                control: z(k, k),
                cross: z(k, n),
                cross_mean: z(k, n),
                state_linear: z(n, 1),
                state_mean_linear: z(n, 1),
                control_linear: z(k, 1),
                terminal: DMatrix::zeros(n, n),
                terminal_mean: DMatrix::zeros(n, n),
                terminal_linear: DMatrix::zeros(n, 1),
                terminal_mean_linear: DMatrix::zeros(n, 1),
                utility_quadratic: DMatrix::zeros(m, m),
                utility_linear: DMatrix::zeros(m, 1),
            },
        })
    }

    /// Expected `(rows, cols)` for a key.
    pub fn shape_of(&self, key: &str) -> Option<(usize, usize)> {
        let Dims { state: n, value: m, control: k, state_noise: r, obs_noise: rt } = self.dims;
        Some(match key {
            "mu0" => (n, 1),
            "sigma0" => (n, n),
            "a" | "abar" => (n, n),
            "b" => (n, k),
            "bbar" => (n, 1),
            "c" => (n, r),
            "alpha" | "alphabar" => (m, n),
            "beta" | "betabar" => (m, m),
            "gamma" | "gammabar" | "gammatilde" | "gammabartilde" => (m, m),
            "psi" => (m, k),
            "psibar" => (m, 1),
            "rho" | "rhobar" => (m, n),
            "f" | "fbar" => (rt, n),
            "g" => (rt, 1),
            "h" => (rt, rt),
            "A" | "Abar" => (n, n),
            "B" => (k, k),
            "D" | "Dbar" => (k, n),
            "Ftilde" | "Fbartilde" => (n, 1),
            "Gtilde" => (k, 1),
            "H" | "Hbar" => (n, n),
            "Ltilde" | "Lbartilde" => (n, 1),
            "M" => (m, m),
            "N" => (m, 1),
            _ => return None,
        })
    }

    /// Number of entries for a family key.
    pub fn family_len(&self, key: &str) -> Option<usize> {
        match key_spec(key)?.kind {
            KeyKind::FamilyW => Some(self.dims.state_noise),
            KeyKind::FamilyWTilde => Some(self.dims.obs_noise),
            _ => None,
        }
    }

    pub fn path(&self, key: &str) -> Option<&CoefficientPath> {
        Some(match key {
            "a" => &self.dynamics.drift,
            "abar" => &self.dynamics.mean_drift,
            "b" => &self.dynamics.control_gain,
            "bbar" => &self.dynamics.offset,
            "c" => &self.dynamics.diffusion,
            "alpha" => &self.bsde.state_coupling,
            "alphabar" => &self.bsde.mean_state_coupling,
            "beta" => &self.bsde.value_coupling,
            "betabar" => &self.bsde.mean_value_coupling,
            "psi" => &self.bsde.control_coupling,
            "psibar" => &self.bsde.offset,
            "f" => &self.observation.sensor,
            "fbar" => &self.observation.mean_sensor,
            "g" => &self.observation.offset,
            "h" => &self.observation.noise,
            "A" => &self.cost.state,
            "Abar" => &self.cost.state_mean,
            "B" => &self.cost.control,
            "D" => &self.cost.cross,
            "Dbar" => &self.cost.cross_mean,
            "Ftilde" => &self.cost.state_linear,
            "Fbartilde" => &self.cost.state_mean_linear,
            "Gtilde" => &self.cost.control_linear,
            _ => return None,
        })
    }

    fn path_mut(&mut self, key: &str) -> Option<&mut CoefficientPath> {
        Some(match key {
            "a" => &mut self.dynamics.drift,
            "abar" => &mut self.dynamics.mean_drift,
            "b" => &mut self.dynamics.control_gain,
            "bbar" => &mut self.dynamics.offset,
            "c" => &mut self.dynamics.diffusion,
            "alpha" => &mut self.bsde.state_coupling,
            "alphabar" => &mut self.bsde.mean_state_coupling,
            "beta" => &mut self.bsde.value_coupling,
            "betabar" => &mut self.bsde.mean_value_coupling,
            "psi" => &mut self.bsde.control_coupling,
            "psibar" => &mut self.bsde.offset,
            "f" => &mut self.observation.sensor,
            "fbar" => &mut self.observation.mean_sensor,
            "g" => &mut self.observation.offset,
            "h" => &mut self.observation.noise,
            "A" => &mut self.cost.state,
            "Abar" => &mut self.cost.state_mean,
            "B" => &mut self.cost.control,
            "D" => &mut self.cost.cross,
            "Dbar" => &mut self.cost.cross_mean,
            "Ftilde" => &mut self.cost.state_linear,
            "Fbartilde" => &mut self.cost.state_mean_linear,
            "Gtilde" => &mut self.cost.control_linear,
            _ => return None,
        })
    }

    pub fn family(&self, key: &str) -> Option<&[CoefficientPath]> {
        Some(match key {
            "gamma" => &self.bsde.z_coupling,
            "gammabar" => &self.bsde.mean_z_coupling,
            "gammatilde" => &self.bsde.ztilde_coupling,
            "gammabartilde" => &self.bsde.mean_ztilde_coupling,
            _ => return None,
        })
    }

    fn family_mut(&mut self, key: &str) -> Option<&mut Vec<CoefficientPath>> {
        Some(match key {
            "gamma" => &mut self.bsde.z_coupling,
            "gammabar" => &mut self.bsde.mean_z_coupling,
            "gammatilde" => &mut self.bsde.ztilde_coupling,
            "gammabartilde" => &mut self.bsde.mean_ztilde_coupling,
            _ => return None,
        })
    }

    pub fn constant(&self, key: &str) -> Option<&DMatrix<f64>> {
        Some(match key {
            "mu0" => &self.init.mean,
            "sigma0" => &self.init.covariance,
            "rho" => &self.bsde.terminal,
            "rhobar" => &self.bsde.mean_terminal,
            "H" => &self.cost.terminal,
            "Hbar" => &self.cost.terminal_mean,
            "Ltilde" => &self.cost.terminal_linear,
            "Lbartilde" => &self.cost.terminal_mean_linear,
            "M" => &self.cost.utility_quadratic,
            "N" => &self.cost.utility_linear,
            _ => return None,
        })
    }

    fn constant_mut(&mut self, key: &str) -> Option<&mut DMatrix<f64>> {
        Some(match key {
            "mu0" => &mut self.init.mean,
            "sigma0" => &mut self.init.covariance,
            "rho" => &mut self.bsde.terminal,
            "rhobar" => &mut self.bsde.mean_terminal,
            "H" => &mut self.cost.terminal,
            "Hbar" => &mut self.cost.terminal_mean,
            "Ltilde" => &mut self.cost.terminal_linear,
            "Lbartilde" => &mut self.cost.terminal_mean_linear,
            "M" => &mut self.cost.utility_quadratic,
            "N" => &mut self.cost.utility_linear,
            _ => return None,
        })
    }

    fn check_shape(&self, key: &str, rows: usize, cols: usize) -> Result<()> {
        let (er, ec) = self.shape_of(key).ok_or_else(|| unknown(key))?;
        if (er, ec) != (rows, cols) {
            return Err(Error::DimensionMismatch {
                key: key.to_string(),
                expected_rows: er,
                expected_cols: ec,
                rows,
                cols,
            });
        }
        Ok(())
    }

    fn check_path(&self, key: &str, path: &CoefficientPath) -> Result<()> {
        self.check_shape(key, path.rows(), path.cols())?;
        if path.len() != self.grid.knots() {
            return Err(Error::SampleCount {
                key: key.to_string(),
                expected: self.grid.knots(),
                got: path.len(),
            });
        }
        Ok(())
    }

    /// Replaces a time-dependent coefficient.
    pub fn set_path(&mut self, key: &str, path: CoefficientPath) -> Result<()> {
        if self.path(key).is_none() {
            return Err(unknown(key));
        }
        self.check_path(key, &path)?;
        *self.path_mut(key).expect("checked") = path;
        Ok(())
    }

    /// Sets a path or constant key to the same value at every knot.
    pub fn set_const(&mut self, key: &str, value: DMatrix<f64>) -> Result<()> {
        self.check_shape(key, value.nrows(), value.ncols())?;
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { key: key.to_string(), knot: 0 });
        }
        if let Some(c) = self.constant_mut(key) {
            *c = value;
            return Ok(());
        }
        let path = CoefficientPath::constant(value, self.grid.knots(), self.interpolation);
        match self.path_mut(key) {
            Some(p) => {
                *p = path;
                Ok(())
            }
            None => {
                // A family key with a single constant applies to column 0 only
                // when there is exactly one column.
                let len = self.family_len(key).ok_or_else(|| unknown(key))?;
                if len != 1 {
                    return Err(Error::SampleCount { key: key.to_string(), expected: len, got: 1 });
                }
                self.family_mut(key).expect("family")[0] = path;
                Ok(())
            }
        }
    }

    /// Sets all columns of a γ-family key.
    pub fn set_family(&mut self, key: &str, paths: Vec<CoefficientPath>) -> Result<()> {
        let len = self.family_len(key).ok_or_else(|| unknown(key))?;
        if paths.len() != len {
            return Err(Error::SampleCount { key: key.to_string(), expected: len, got: paths.len() });
        }
        for p in &paths {
            self.check_path(key, p)?;
        }
        *self.family_mut(key).expect("family") = paths;
        Ok(())
    }

    /// Scalar convenience: `set_const(key, [[v]])` broadcast to the key's shape.
    pub fn set_scalar(&mut self, key: &str, v: f64) -> Result<()> {
        let (r, c) = self.shape_of(key).ok_or_else(|| unknown(key))?;
        self.set_const(key, DMatrix::from_element(r, c, v))
    }

    /// Copy of the problem on another grid; time-dependent coefficients are
    /// resampled with their own interpolation rule.
    pub fn regrid(&self, grid: TimeGrid) -> Result<Self> {
        let mut out = self.clone();
        out.grid = grid;
        let old = self.grid;
        let resample = |p: &CoefficientPath| -> CoefficientPath {
            let samples = (0..grid.knots())
                .map(|i| {
                    let sp = old.locate(grid.time(i)).expect("inside horizon");
                    p.at(sp)
                })
                .collect();
            CoefficientPath::from_samples("regrid", samples, p.interpolation()).expect("finite")
        };
        for spec in KEYS {
            match spec.kind {
                KeyKind::Path => {
                    let p = resample(self.path(spec.key).expect("path key"));
                    *out.path_mut(spec.key).expect("path key") = p;
                }
                KeyKind::FamilyW | KeyKind::FamilyWTilde => {
                    let ps = self.family(spec.key).expect("family").iter().map(resample).collect();
                    *out.family_mut(spec.key).expect("family") = ps;
                }
                KeyKind::Constant => {}
            }
        }
        Ok(out)
    }
}
