//! Grid-sampled matrix-valued functions of time.
//!
//! [`CoefficientPath`] holds problem data sampled at the knots.
//! [`DensePath`] holds derived quantities at the start, midpoint and end of
//! every step, which is what the RK4 stepper and the path simulators consume.

use alloc::string::ToString;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::StepPoint;

/// How a knot-sampled coefficient is read between knots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    /// Value on `[t_i, t_{i+1})` is the sample at `t_i`.
    #[default]
    PiecewiseConstantLeft,
    PiecewiseLinear,
}

/// Matrix coefficient sampled at every grid knot.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPath {
    rows: usize,
    cols: usize,
    samples: Vec<DMatrix<f64>>,
    interpolation: Interpolation,
}

impl CoefficientPath {
    pub fn constant(value: DMatrix<f64>, knots: usize, interpolation: Interpolation) -> Self {
        Self {
            rows: value.nrows(),
            cols: value.ncols(),
            samples: alloc::vec![value; knots],
            interpolation,
        }
    }

    pub fn zeros(rows: usize, cols: usize, knots: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols), knots, Interpolation::default())
    }

    /// Builds a path from explicit samples; all samples must share a shape and be finite.
    pub fn from_samples(
        key: &str,
        samples: Vec<DMatrix<f64>>,
        interpolation: Interpolation,
    ) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::SampleCount {
            key: key.to_string(),
            expected: 1,
            got: 0,
        })?;
        let (rows, cols) = first.shape();
        for (i, s) in samples.iter().enumerate() {
            if s.shape() != (rows, cols) {
                return Err(Error::DimensionMismatch {
                    key: key.to_string(),
                    expected_rows: rows,
                    expected_cols: cols,
                    rows: s.nrows(),
                    cols: s.ncols(),
                });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { key: key.to_string(), knot: i });
            }
        }
        Ok(Self { rows, cols, samples, interpolation })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn samples(&self) -> &[DMatrix<f64>] {
        &self.samples
    }

    pub fn knot(&self, i: usize) -> &DMatrix<f64> {
        &self.samples[i]
    }

    /// Value inside step `sp.step`. Piecewise-constant paths return the
    /// left sample on the whole closed step, including `frac == 1`.
    pub fn at(&self, sp: StepPoint) -> DMatrix<f64> {
        match self.interpolation {
            Interpolation::PiecewiseConstantLeft => self.samples[sp.step].clone(),
            Interpolation::PiecewiseLinear => {
                if sp.frac == 0.0 {
                    self.samples[sp.step].clone()
                } else if sp.frac == 1.0 {
                    self.samples[sp.step + 1].clone()
                } else {
                    &self.samples[sp.step] * (1.0 - sp.frac) + &self.samples[sp.step + 1] * sp.frac
                }
            }
        }
    }

    /// Largest absolute entry over all samples.
    pub fn max_abs(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|m| m.iter())
            .fold(0.0_f64, |acc, v| acc.max(libm::fabs(*v)))
    }

    pub fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        let samples: Vec<_> = self.samples.iter().map(f).collect();
        let (rows, cols) = samples[0].shape();
        Self { rows, cols, samples, interpolation: self.interpolation }
    }
}

/// Derived path sampled at the start, midpoint and end of every step.
///
/// For continuous solutions `end[i] == start[i + 1]`; for quantities built
/// from piecewise-constant data the two may differ.
#[derive(Debug, Clone, PartialEq)]
pub struct DensePath {
    start: Vec<DMatrix<f64>>,
    mid: Vec<DMatrix<f64>>,
    end: Vec<DMatrix<f64>>,
}

impl DensePath {
    pub fn new(start: Vec<DMatrix<f64>>, mid: Vec<DMatrix<f64>>, end: Vec<DMatrix<f64>>) -> Self {
        assert!(!start.is_empty() && start.len() == mid.len() && mid.len() == end.len());
        Self { start, mid, end }
    }

    /// Evaluates `f` at every step's start, midpoint and end.
    pub fn tabulate(steps: usize, mut f: impl FnMut(StepPoint) -> DMatrix<f64>) -> Self {
        let mut start = Vec::with_capacity(steps);
        let mut mid = Vec::with_capacity(steps);
        let mut end = Vec::with_capacity(steps);
        for i in 0..steps {
            start.push(f(StepPoint::start(i)));
            mid.push(f(StepPoint::mid(i)));
            end.push(f(StepPoint::end(i)));
        }
        Self { start, mid, end }
    }

    /// Continuous knot solution with cubic Hermite midpoints built from the
    /// one-sided derivatives at both ends of each step.
    pub fn hermite(
        values: Vec<DMatrix<f64>>,
        d_start: &[DMatrix<f64>],
        d_end: &[DMatrix<f64>],
        dt: f64,
    ) -> Self {
        let steps = values.len() - 1;
        let mut mid = Vec::with_capacity(steps);
        for i in 0..steps {
            let m = (&values[i] + &values[i + 1]) * 0.5 + (&d_start[i] - &d_end[i]) * (dt / 8.0);
            mid.push(m);
        }
        let start = values[..steps].to_vec();
        let end = values[1..].to_vec();
        Self { start, mid, end }
    }

    /// Constant-in-time path over `steps` steps.
    pub fn constant(value: DMatrix<f64>, steps: usize) -> Self {
        Self {
            start: alloc::vec![value.clone(); steps],
            mid: alloc::vec![value.clone(); steps],
            end: alloc::vec![value; steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.start.len()
    }

    pub fn knots(&self) -> usize {
        self.start.len() + 1
    }

    pub fn shape(&self) -> (usize, usize) {
        self.start[0].shape()
    }

    /// Right-continuous knot value; the last knot is the end of the last step.
    pub fn knot(&self, i: usize) -> &DMatrix<f64> {
        if i < self.start.len() {
            &self.start[i]
        } else {
            &self.end[self.start.len() - 1]
        }
    }

    pub fn knot_values(&self) -> Vec<DMatrix<f64>> {
        (0..self.knots()).map(|i| self.knot(i).clone()).collect()
    }

    pub fn last(&self) -> &DMatrix<f64> {
        &self.end[self.end.len() - 1]
    }

    pub fn first(&self) -> &DMatrix<f64> {
        &self.start[0]
    }

    /// Exact at `frac` in {0, 1/2, 1}; quadratic through the three samples otherwise.
    pub fn at(&self, sp: StepPoint) -> DMatrix<f64> {
        let i = sp.step;
        if sp.frac == 0.0 {
            self.start[i].clone()
        } else if sp.frac == 0.5 {
            self.mid[i].clone()
        } else if sp.frac == 1.0 {
            self.end[i].clone()
        } else {
            let s = sp.frac;
            let l0 = 2.0 * (s - 0.5) * (s - 1.0);
            let l1 = -4.0 * s * (s - 1.0);
            let l2 = 2.0 * s * (s - 0.5);
            &self.start[i] * l0 + &self.mid[i] * l1 + &self.end[i] * l2
        }
    }

    /// Pointwise combination of two paths on the same grid.
    pub fn zip_with(
        &self,
        other: &DensePath,
        f: impl Fn(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>,
    ) -> Self {
        let join = |a: &[DMatrix<f64>], b: &[DMatrix<f64>]| -> Vec<DMatrix<f64>> {
            a.iter().zip(b).map(|(x, y)| f(x, y)).collect()
        };
        Self {
            start: join(&self.start, &other.start),
            mid: join(&self.mid, &other.mid),
            end: join(&self.end, &other.end),
        }
    }

    pub fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Self {
            start: self.start.iter().map(&f).collect(),
            mid: self.mid.iter().map(&f).collect(),
            end: self.end.iter().map(&f).collect(),
        }
    }

    /// Largest absolute entry over all samples.
    pub fn max_abs(&self) -> f64 {
        self.start
            .iter()
            .chain(&self.mid)
            .chain(&self.end)
            .flat_map(|m| m.iter())
            .fold(0.0_f64, |acc, v| acc.max(libm::fabs(*v)))
    }
}
