//! Lower-triangular convolution on the midpoint grid.
//!
//! A pair of cells `(i, i')` carries mass `m_i + m_i' = (i + i' + 1) h`,
//! which sits on the boundary between cells `i + i'` and `i + i' + 1`.
//! The merged density is split evenly between those two cells, so every
//! pair that stays inside the grid conserves both number and mass exactly.
//! Whatever falls past `m_max` is reported as leak.

use crate::error::Result;
use crate::model::field::Field;

/// Result of a convolution together with its truncation losses.
#[derive(Debug, Clone)]
pub struct Convolution {
    pub field: Field,
    /// Discrete integral of the product density that left the grid.
    pub number_leak: f64,
    /// Discrete first moment of the product density that left the grid.
    pub mass_leak: f64,
}

/// `h * sum a[i] * b[i]` style dot product with independent accumulators so
/// the compiler can keep several lanes busy.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Anti-diagonal sums `c[s] = sum_{i + i' = s} a[i] b[i']` for `s < n`.
pub(crate) fn diagonal_sums(a: &[f64], b: &[f64], c: &mut [f64]) {
    let n = a.len();
    debug_assert!(b.len() == n && c.len() == n);
    let rev: Vec<f64> = b.iter().rev().copied().collect();
    for (s, cs) in c.iter_mut().enumerate() {
        *cs = dot(&a[..=s], &rev[n - 1 - s..]);
    }
}

/// Same as [`diagonal_sums`] with `b = a`, using the symmetry of the pairs.
pub(crate) fn self_diagonal_sums(a: &[f64], c: &mut [f64]) {
    let n = a.len();
    debug_assert_eq!(c.len(), n);
    let rev: Vec<f64> = a.iter().rev().copied().collect();
    for (s, cs) in c.iter_mut().enumerate() {
        let half = (s + 1) / 2;
        let start = n - 1 - s;
        let mut v = 2.0 * dot(&a[..half], &rev[start..start + half]);
        if s % 2 == 0 {
            v += a[s / 2] * a[s / 2];
        }
        *cs = v;
    }
}

/// Writes the split-pair convolution `out[k] = (h/2) (c[k-1] + c[k])`.
pub(crate) fn split_diagonals(c: &[f64], h: f64, out: &mut [f64]) {
    let half = 0.5 * h;
    let mut prev = 0.0;
    for (o, &cs) in out.iter_mut().zip(c) {
        *o = half * (prev + cs);
        prev = cs;
    }
}

/// Number and mass that the split convolution of `a` and `b` pushes beyond
/// the last cell, given the diagonal sums `c`.
pub(crate) fn split_leaks(a: &[f64], b: &[f64], c: &[f64], h: f64) -> (f64, f64) {
    let n = c.len();
    let (sa, ia) = sums(a);
    let (sb, ib) = sums(b);
    let inside_pairs: f64 = c[..n - 1].iter().sum();
    let last = c[n - 1];
    let number = h * h * (sa * sb - inside_pairs - 0.5 * last);
    let inside_mass: f64 = c[..n - 1]
        .iter()
        .enumerate()
        .map(|(s, cs)| (s + 1) as f64 * cs)
        .sum();
    let total_mass = ia * sb + sa * ib + sa * sb;
    let mass = h * h * h * (total_mass - inside_mass - 0.5 * (n as f64 - 0.5) * last);
    (number, mass)
}

fn sums(a: &[f64]) -> (f64, f64) {
    a.iter()
        .enumerate()
        .fold((0.0, 0.0), |(s, i), (k, v)| (s + v, i + k as f64 * v))
}

/// Approximates `int_0^m f(m - mu) g(mu) dmu` at every node.
pub fn convolve_lower(f: &Field, g: &Field) -> Result<Field> {
    Ok(convolve_lower_with_leak(f, g)?.field)
}

pub fn convolve_lower_with_leak(f: &Field, g: &Field) -> Result<Convolution> {
    f.grid().ensure_same(g.grid())?;
    for x in [f, g] {
        if x.order() != 1 {
            return Err(crate::error::CoagError::OrderMismatch { left: x.order(), right: 1 });
        }
    }
    let n = f.grid().n_cells();
    let h = f.grid().h();
    let mut c = vec![0.0; n];
    if std::ptr::eq(f, g) || f.values() == g.values() {
        self_diagonal_sums(f.values(), &mut c);
    } else {
        diagonal_sums(f.values(), g.values(), &mut c);
    }
    let (number_leak, mass_leak) = split_leaks(f.values(), g.values(), &c, h);
    let mut out = vec![0.0; n];
    split_diagonals(&c, h, &mut out);
    let field = Field::from_values(*f.grid(), 1, out)?;
    Ok(Convolution { field, number_leak, mass_leak })
}
