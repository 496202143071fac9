//! Uniform time grids and nodal functions on them.

use crate::error::{invalid, Error, Result};

/// Uniform grid `t_i = i * T / (n - 1)` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    nodes: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, nodes: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("horizon", format!("must be finite and > 0, got {horizon}")));
        }
        if nodes < 2 {
            return Err(invalid("nodes", format!("need at least 2 nodes, got {nodes}")));
        }
        Ok(Self { horizon, nodes })
    }

    /// Grid with step `dt` reaching `horizon` (rounded to the nearest whole number of steps).
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("dt", format!("must be finite and > 0, got {dt}")));
        }
        let steps = (horizon / dt).round().max(1.0) as usize;
        Self::new(horizon, steps + 1)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.nodes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / (self.nodes - 1) as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i + 1 == self.nodes {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nodes).map(|i| self.time(i)).collect()
    }

    /// Index of the node nearest to `t` (clamped to the grid).
    pub fn index_of(&self, t: f64) -> usize {
        let i = (t / self.dt()).round();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.nodes - 1)
        }
    }

    /// Grid made of the first `nodes` nodes of this one.
    pub fn prefix(&self, nodes: usize) -> Result<Self> {
        if nodes > self.nodes {
            return Err(Error::GridMismatch(format!(
                "prefix of {nodes} nodes requested from a grid of {}",
                self.nodes
            )));
        }
        Self::new(self.time(nodes - 1), nodes)
    }

    /// Every `factor`-th node; requires `(n - 1)` divisible by `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !(self.nodes - 1).is_multiple_of(factor) {
            return Err(Error::GridMismatch(format!(
                "cannot coarsen {} intervals by {factor}",
                self.nodes - 1
            )));
        }
        Self::new(self.horizon, (self.nodes - 1) / factor + 1)
    }
}

/// Nodal values of a function on a [`TimeGrid`], interpreted as its
/// piecewise-linear interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.time(i))).collect();
        Self { grid, values }
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self, context: &'static str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { context, index }),
            None => Ok(()),
        }
    }

    /// Values in reverse order, i.e. the function `t -> f(T - t)`.
    pub fn reflect(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self {
            grid: self.grid,
            values,
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(self.grid.time(i), v))
            .collect();
        Self {
            grid: self.grid,
            values,
        }
    }

    /// Restriction to the first `nodes` nodes.
    pub fn prefix(&self, nodes: usize) -> Result<Self> {
        let grid = self.grid.prefix(nodes)?;
        Ok(Self {
            grid,
            values: self.values[..nodes].to_vec(),
        })
    }

    /// Restriction to nodes `start..=end`, re-based so the first node is at time 0.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end >= self.len() {
            return Err(Error::GridMismatch(format!(
                "window {start}..={end} outside 0..{}",
                self.len()
            )));
        }
        let grid = TimeGrid::new(self.grid.time(end) - self.grid.time(start), end - start + 1)?;
        Ok(Self {
            grid,
            values: self.values[start..=end].to_vec(),
        })
    }

    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        Ok(Self {
            grid,
            values: self.values.iter().step_by(factor).copied().collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Trapezoidal integral over the whole grid.
    pub fn trapezoid(&self) -> f64 {
        let dt = self.dt();
        let n = self.values.len();
        let inner: f64 = self.values[1..n - 1].iter().sum();
        dt * (inner + 0.5 * (self.values[0] + self.values[n - 1]))
    }

    /// Running trapezoidal integral `∫_0^{t_i} f`.
    pub fn cumulative_trapezoid(&self) -> Vec<f64> {
        let dt = self.dt();
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.values.windows(2) {
            acc += 0.5 * dt * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }
}
