use crate::error::{CoagError, Result};
use crate::model::grid::MassGrid;

/// Default cap on tensor order for full tensor products.
pub const DEFAULT_J_MAX_TENSOR: usize = 3;

/// Default cap on the number of stored entries of a single field.
pub const DEFAULT_TENSOR_BUDGET: u128 = 200_000_000;

/// A `j`-dimensional tensor of density values on a [`MassGrid`].
///
/// Values are stored row-major: the last coordinate varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: MassGrid,
    order: usize,
    values: Vec<f64>,
}

pub(crate) fn tensor_len(n_cells: usize, order: usize) -> Result<usize> {
    let entries = (n_cells as u128).pow(order as u32);
    if entries > DEFAULT_TENSOR_BUDGET {
        return Err(CoagError::TensorBudget { entries, budget: DEFAULT_TENSOR_BUDGET });
    }
    Ok(entries as usize)
}

impl Field {
    pub fn zeros(grid: MassGrid, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(CoagError::InvalidConfig("field order must be at least 1".into()));
        }
        let len = tensor_len(grid.n_cells(), order)?;
        Ok(Self { grid, order, values: vec![0.0; len] })
    }

    pub fn from_values(grid: MassGrid, order: usize, values: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return Err(CoagError::InvalidConfig("field order must be at least 1".into()));
        }
        let len = tensor_len(grid.n_cells(), order)?;
        if values.len() != len {
            return Err(CoagError::InvalidConfig(format!(
                "order-{order} field on {grid} needs {len} values, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(CoagError::InvalidConfig(format!("non-finite field value {bad}")));
        }
        Ok(Self { grid, order, values })
    }

    /// Order-1 field sampled at the cell midpoints.
    pub fn from_fn(grid: MassGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n_cells()).map(|k| f(grid.node(k))).collect();
        Self { grid, order: 1, values }
    }

    /// Order-1 field of exact cell averages, given an antiderivative `big_f`.
    pub fn from_cell_integrals(grid: MassGrid, big_f: impl Fn(f64) -> f64) -> Self {
        let h = grid.h();
        let values = (0..grid.n_cells())
            .map(|k| {
                let lo = k as f64 * h;
                (big_f(lo + h) - big_f(lo)) / h
            })
            .collect();
        Self { grid, order: 1, values }
    }

    pub fn constant(grid: MassGrid, order: usize, value: f64) -> Result<Self> {
        let mut f = Self::zeros(grid, order)?;
        f.values.iter_mut().for_each(|v| *v = value);
        Ok(f)
    }

    #[inline]
    pub fn grid(&self) -> &MassGrid {
        &self.grid
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at a multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.order);
        let n = self.grid.n_cells();
        let flat = index.iter().fold(0usize, |acc, &k| acc * n + k);
        self.values[flat]
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Cell volume `h^j`.
    pub fn cell_volume(&self) -> f64 {
        self.grid.h().powi(self.order as i32)
    }

    /// Discrete L1 norm `h^j * sum |v|`.
    pub fn l1_norm(&self) -> f64 {
        self.cell_volume() * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Discrete integral `h^j * sum v` (signed).
    pub fn integral(&self) -> f64 {
        self.cell_volume() * self.values.iter().sum::<f64>()
    }

    pub fn ensure_compatible(&self, other: &Field) -> Result<()> {
        self.grid.ensure_same(&other.grid)?;
        if self.order != other.order {
            return Err(CoagError::OrderMismatch { left: self.order, right: other.order });
        }
        Ok(())
    }

    /// L1 norm of the entrywise difference.
    pub fn l1_distance(&self, other: &Field) -> Result<f64> {
        self.ensure_compatible(other)?;
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(self.cell_volume() * s)
    }

    /// Largest absolute entrywise difference.
    pub fn sup_distance(&self, other: &Field) -> Result<f64> {
        self.ensure_compatible(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn scaled(&self, factor: f64) -> Field {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, other: &Field, factor: f64) -> Result<Field> {
        self.ensure_compatible(other)?;
        let mut out = self.clone();
        out.axpy(factor, other);
        Ok(out)
    }

    /// In place `self += a * x`; caller guarantees compatibility.
    pub(crate) fn axpy(&mut self, a: f64, x: &Field) {
        debug_assert!(self.grid.same_as(&x.grid) && self.order == x.order);
        for (y, xv) in self.values.iter_mut().zip(&x.values) {
            *y += a * xv;
        }
    }

    /// Integrates out the last `count` coordinates.
    pub fn marginal_last(&self, count: usize) -> Result<Field> {
        if count == 0 {
            return Ok(self.clone());
        }
        if count >= self.order {
            return Err(CoagError::InvalidConfig(format!(
                "cannot integrate {count} coordinates out of an order-{} field",
                self.order
            )));
        }
        let n = self.grid.n_cells();
        let inner = n.pow(count as u32);
        let w = self.grid.h().powi(count as i32);
        let values = self
            .values
            .chunks_exact(inner)
            .map(|c| w * c.iter().sum::<f64>())
            .collect();
        Ok(Field { grid: self.grid, order: self.order - count, values })
    }

    /// Mass density `h * sum m_k f_k` of an order-1 field.
    pub fn first_moment(&self) -> f64 {
        debug_assert_eq!(self.order, 1);
        let g = self.grid;
        g.h() * self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| g.node(k) * v)
            .sum::<f64>()
    }

    /// Largest deviation `|f(..a..b..) - f(..b..a..)|` over swaps of the
    /// coordinate pair `(p, q)`.
    pub fn symmetry_defect(&self, p: usize, q: usize) -> f64 {
        assert!(p < self.order && q < self.order);
        if p == q {
            return 0.0;
        }
        let n = self.grid.n_cells();
        let mut idx = vec![0usize; self.order];
        let mut worst = 0.0f64;
        for (flat, &v) in self.values.iter().enumerate() {
            let mut rem = flat;
            for d in (0..self.order).rev() {
                idx[d] = rem % n;
                rem /= n;
            }
            idx.swap(p, q);
            worst = worst.max((v - self.at(&idx)).abs());
        }
        worst
    }

    /// Aggregates an order-1 field onto a grid with `factor` times fewer
    /// cells, averaging the fine values inside each coarse cell.
    pub fn coarsen_average(&self, factor: usize) -> Result<Field> {
        if self.order != 1 {
            return Err(CoagError::InvalidConfig("coarsening is defined for order-1 fields".into()));
        }
        let n = self.grid.n_cells();
        if factor == 0 || n % factor != 0 {
            return Err(CoagError::InvalidConfig(format!(
                "cannot coarsen {n} cells by a factor of {factor}"
            )));
        }
        let grid = MassGrid::new(self.grid.m_max(), n / factor)?;
        let values = self
            .values
            .chunks_exact(factor)
            .map(|c| c.iter().sum::<f64>() / factor as f64)
            .collect();
        Ok(Field { grid, order: 1, values })
    }
}

/// `j`-fold tensor power of an order-1 field, with the default order cap.
pub fn tensor_product(f: &Field, j: usize) -> Result<Field> {
    tensor_product_with_limit(f, j, DEFAULT_J_MAX_TENSOR)
}

/// `values[k1..kj] = prod f[ki]`, rejecting `j > limit`.
pub fn tensor_product_with_limit(f: &Field, j: usize, limit: usize) -> Result<Field> {
    if f.order != 1 {
        return Err(CoagError::OrderMismatch { left: f.order, right: 1 });
    }
    if j == 0 {
        return Err(CoagError::InvalidConfig("tensor power must be at least 1".into()));
    }
    if j > limit {
        return Err(CoagError::TensorOrderExceeded { order: j, limit });
    }
    tensor_len(f.grid.n_cells(), j)?;
    let mut values = f.values.clone();
    for _ in 1..j {
        let mut next = Vec::with_capacity(values.len() * f.values.len());
        for &a in &values {
            next.extend(f.values.iter().map(|&b| a * b));
        }
        values = next;
    }
    Ok(Field { grid: f.grid, order: j, values })
}

/// Outer product of two fields of arbitrary orders.
pub fn outer_product(a: &Field, b: &Field) -> Result<Field> {
    a.grid.ensure_same(&b.grid)?;
    let order = a.order + b.order;
    tensor_len(a.grid.n_cells(), order)?;
    let mut values = Vec::with_capacity(a.values.len() * b.values.len());
    for &x in &a.values {
        values.extend(b.values.iter().map(|&y| x * y));
    }
    Ok(Field { grid: a.grid, order, values })
}
