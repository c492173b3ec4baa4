use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoagError, Result};

/// Uniform midpoint discretization of the mass half-line `[0, m_max]`.
///
/// Cell `k` covers `[k h, (k+1) h)` and carries the node `m_k = (k + 1/2) h`.
/// Two grids are the same grid when both `m_max` and `n_cells` agree bit for
/// bit; every binary field operation checks this.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MassGrid {
    m_max: f64,
    n_cells: usize,
}

impl MassGrid {
    pub fn new(m_max: f64, n_cells: usize) -> Result<Self> {
        if !(m_max.is_finite() && m_max > 0.0) {
            return Err(CoagError::InvalidConfig(format!(
                "grid upper mass must be positive and finite, got {m_max}"
            )));
        }
        if n_cells == 0 {
            return Err(CoagError::InvalidConfig("grid needs at least one cell".into()));
        }
        Ok(Self { m_max, n_cells })
    }

    /// Parses `"m_max:n_cells"`, e.g. `"40:2000"`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (m, n) = spec
            .split_once(':')
            .ok_or_else(|| CoagError::Parse(format!("grid spec `{spec}` is not `m_max:n_cells`")))?;
        let m_max: f64 = m
            .trim()
            .parse()
            .map_err(|_| CoagError::Parse(format!("bad grid upper mass `{m}`")))?;
        let n_cells: usize = n
            .trim()
            .parse()
            .map_err(|_| CoagError::Parse(format!("bad grid cell count `{n}`")))?;
        Self::new(m_max, n_cells)
    }

    #[inline]
    pub fn m_max(&self) -> f64 {
        self.m_max
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Cell width.
    #[inline]
    pub fn h(&self) -> f64 {
        self.m_max / self.n_cells as f64
    }

    /// Midpoint of cell `k`.
    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.h()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_cells).map(|k| self.node(k)).collect()
    }

    /// Index of the cell containing `m`, or `None` outside `[0, m_max)`.
    #[inline]
    pub fn cell_of(&self, m: f64) -> Option<usize> {
        if !(m >= 0.0) || m >= self.m_max {
            return None;
        }
        let k = (m / self.h()) as usize;
        // m / h can round up to n_cells for m just below m_max
        Some(k.min(self.n_cells - 1))
    }

    /// Quadrature weight of every node (midpoint rule).
    #[inline]
    pub fn weight(&self) -> f64 {
        self.h()
    }

    /// Same grid with `factor` times as many cells.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.m_max, self.n_cells * factor.max(1))
    }

    pub fn same_as(&self, other: &MassGrid) -> bool {
        self.m_max.to_bits() == other.m_max.to_bits() && self.n_cells == other.n_cells
    }

    pub(crate) fn ensure_same(&self, other: &MassGrid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(CoagError::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            })
        }
    }
}

impl PartialEq for MassGrid {
    fn eq(&self, other: &Self) -> bool {
        self.same_as(other)
    }
}

impl fmt::Display for MassGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.m_max, self.n_cells)
    }
}

/// The fixed quadrature rule used throughout: midpoint on cells.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureRule {
    grid: MassGrid,
}

impl QuadratureRule {
    pub fn midpoint(grid: MassGrid) -> Self {
        Self { grid }
    }

    pub fn weight(&self) -> f64 {
        self.grid.h()
    }

    /// `sum_k w * values[k]`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weight() * values.iter().sum::<f64>()
    }

    /// `sum_k w * m_k * values[k]`.
    pub fn first_moment(&self, values: &[f64]) -> f64 {
        let g = self.grid;
        g.h() * values.iter().enumerate().map(|(k, v)| g.node(k) * v).sum::<f64>()
    }
}
