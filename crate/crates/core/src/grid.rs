use alloc::format;

use crate::error::{Error, Result};

/// Uniform grid `t_i = i * T / N` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

/// A location inside step `step`, `frac` in `[0, 1]` measured from `t_step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPoint {
    pub step: usize,
    pub frac: f64,
}

impl StepPoint {
    pub const fn start(step: usize) -> Self {
        Self { step, frac: 0.0 }
    }

    pub const fn mid(step: usize) -> Self {
        Self { step, frac: 0.5 }
    }

    pub const fn end(step: usize) -> Self {
        Self { step, frac: 1.0 }
    }

    pub fn time(&self, grid: &TimeGrid) -> f64 {
        grid.time(self.step) + self.frac * grid.step()
    }
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 steps, got {steps}")));
        }
        Ok(Self { horizon, steps })
    }

    /// Grid with step `dt`; `dt` must divide the horizon to within 1e-12.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidGrid(format!("step must be positive, got {dt}")));
        }
        let ratio = horizon / dt;
        let steps = libm::round(ratio);
        if libm::fabs(steps * dt - horizon) > 1e-12 {
            return Err(Error::InvalidGrid(format!(
                "step {dt} does not divide horizon {horizon}"
            )));
        }
        Self::new(horizon, steps as usize)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn knots(&self) -> usize {
        self.steps + 1
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Exact at both endpoints: `time(0) == 0`, `time(N) == T`.
    pub fn time(&self, i: usize) -> f64 {
        self.horizon * (i as f64) / (self.steps as f64)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.knots()).map(move |i| self.time(i))
    }

    /// Step containing `t`; the right endpoint maps to `(N-1, 1.0)`.
    pub fn locate(&self, t: f64) -> Result<StepPoint> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::OutOfHorizon { t, horizon: self.horizon });
        }
        let pos = t / self.step();
        let mut step = libm::floor(pos) as usize;
        if step >= self.steps {
            step = self.steps - 1;
        }
        let frac = ((t - self.time(step)) / self.step()).clamp(0.0, 1.0);
        Ok(StepPoint { step, frac })
    }

    /// Knot index if `t` coincides with a grid point to within 1e-12 of a step.
    pub fn knot_of(&self, t: f64) -> Option<usize> {
        let pos = t / self.step();
        let i = libm::round(pos);
        if i >= 0.0 && (i as usize) <= self.steps && libm::fabs(pos - i) < 1e-12 {
            Some(i as usize)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_exact_and_increasing() {
        let g = TimeGrid::new(1.0, 1000).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(1000), 1.0);
        let ts: alloc::vec::Vec<f64> = g.times().collect();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_degenerate() {
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::with_step(1.0, 0.3).is_err());
        assert_eq!(TimeGrid::with_step(1.0, 1.0 / 256.0).unwrap().steps(), 256);
    }

    #[test]
    fn locate_endpoints() {
        let g = TimeGrid::new(2.0, 4).unwrap();
        assert_eq!(g.locate(0.0).unwrap(), StepPoint::start(0));
        assert_eq!(g.locate(2.0).unwrap(), StepPoint::end(3));
        let sp = g.locate(0.75).unwrap();
        assert_eq!(sp.step, 1);
        assert!((sp.frac - 0.5).abs() < 1e-15);
        assert!(g.locate(2.1).is_err());
        assert_eq!(g.knot_of(1.5), Some(3));
        assert_eq!(g.knot_of(1.4), None);
    }
}
