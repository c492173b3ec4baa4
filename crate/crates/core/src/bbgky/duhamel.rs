//! Truncated series for the rescaled limit hierarchy
//! `d/dt g_k = W_k[g_{k+1}]`, `g_k(0) = (rho0 f0)^{(x)k}`.
//!
//! Every term `W_j o ... o W_{j+n-1}[f0^{(x)(j+n)}]` is a combination of
//! symmetrized products `T(p)` of the split-convolution powers `u_q` of `f0`,
//! indexed by multisets `p` of positive integers. `W` maps `T(p)` exactly onto
//! such products (merging two parts or dropping one), so the series is kept
//! symbolically and only the final order-`j` combination is put on the grid.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{CoagError, Result};
use crate::model::field::tensor_len;
use crate::model::{convolve_lower, tensor_product, Field, MassGrid};
use crate::smoluchowski;

pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-6;
/// Series terms kept in each restart window.
pub const DEFAULT_WINDOW_TERMS: usize = 8;
/// Largest total depth `j + n_max` of the symbolic expansion.
pub const MAX_SERIES_DEPTH: usize = 120;

/// `2^{j-1} rho0^j sum_{n > n_max} (3 rho0 t)^n`; infinite when `3 rho0 t >= 1`.
pub fn tail_bound(j: usize, rho0: f64, t: f64, n_max: usize) -> f64 {
    let x = 3.0 * rho0 * t;
    if x >= 1.0 {
        return f64::INFINITY;
    }
    2f64.powi(j as i32 - 1) * rho0.powi(j as i32) * x.powi(n_max as i32 + 1) / (1.0 - x)
}

/// Smallest `n_max` whose tail bound is below `tolerance`.
pub fn default_n_max(j: usize, rho0: f64, t: f64, tolerance: f64) -> Option<usize> {
    if 3.0 * rho0 * t >= 1.0 {
        return None;
    }
    (0..=MAX_SERIES_DEPTH).find(|&n| tail_bound(j, rho0, t, n) < tolerance)
}

/// Restart window length `1 / (6 rho0)`.
pub fn window_length(rho0: f64) -> f64 {
    1.0 / (6.0 * rho0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HierarchyTruncation {
    pub j: usize,
    pub n_max: usize,
    pub rho0: f64,
    pub t_validity: f64,
    pub tail_bound: f64,
}

impl HierarchyTruncation {
    pub fn new(j: usize, n_max: usize, rho0: f64, t_validity: f64) -> Result<Self> {
        if j == 0 {
            return Err(CoagError::InvalidConfig("series order must be at least 1".into()));
        }
        if !(rho0.is_finite() && rho0 > 0.0) {
            return Err(CoagError::InvalidConfig(format!("density must be positive, got {rho0}")));
        }
        if !(t_validity.is_finite() && t_validity >= 0.0) {
            return Err(CoagError::InvalidConfig(format!("invalid time horizon {t_validity}")));
        }
        if j + n_max > MAX_SERIES_DEPTH {
            return Err(CoagError::Budget(format!("series depth {} exceeds {MAX_SERIES_DEPTH}", j + n_max)));
        }
        Ok(Self { j, n_max, rho0, t_validity, tail_bound: tail_bound(j, rho0, t_validity, n_max) })
    }

    /// Uses the smallest depth meeting `tolerance` on `[0, t_validity]`.
    pub fn with_tolerance(j: usize, rho0: f64, t_validity: f64, tolerance: f64) -> Result<Self> {
        let n_max = default_n_max(j, rho0, t_validity, tolerance).ok_or(CoagError::TailBound {
            bound: tail_bound(j, rho0, t_validity, MAX_SERIES_DEPTH.saturating_sub(j)),
            tolerance,
        })?;
        Self::new(j, n_max, rho0, t_validity)
    }

    pub fn check(&self, tolerance: f64) -> Result<()> {
        if self.tail_bound < tolerance {
            Ok(())
        } else {
            Err(CoagError::TailBound { bound: self.tail_bound, tolerance })
        }
    }
}

/// Truncated series on the grid.
#[derive(Debug, Clone)]
pub struct SeriesEvaluation {
    pub t: f64,
    /// Total number of series terms (summed over restart windows).
    pub n_max: usize,
    pub tail_bound: f64,
    pub field: Field,
}

/// `g_j(t)` from a single window.
pub fn duhamel_series(trunc: &HierarchyTruncation, f0: &Field, t: f64) -> Result<SeriesEvaluation> {
    check_f0(f0)?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(CoagError::InvalidConfig(format!("invalid time {t}")));
    }
    let coeffs = window_coefficients(&[(t, trunc.n_max)]);
    let basis = PowerBasis::new(f0, trunc.j + trunc.n_max)?;
    let terms = horner(trunc.j, &coeffs, trunc.rho0, &basis.s)?;
    Ok(SeriesEvaluation {
        t,
        n_max: trunc.n_max,
        tail_bound: tail_bound(trunc.j, trunc.rho0, t, trunc.n_max),
        field: basis.materialize(trunc.j, &terms)?,
    })
}

/// Restarted series up to `t_end`, in equal windows no longer than
/// `1 / (6 rho0)` with `window_terms` terms each. One evaluation per window
/// end; the reported tail bound is the sum of the per-window bounds.
pub fn duhamel_windowed(
    j: usize,
    f0: &Field,
    rho0: f64,
    t_end: f64,
    window_terms: usize,
) -> Result<Vec<SeriesEvaluation>> {
    check_f0(f0)?;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(CoagError::InvalidConfig(format!("invalid end time {t_end}")));
    }
    HierarchyTruncation::new(j, window_terms, rho0, 0.0)?;
    let windows = ((t_end / window_length(rho0)) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let width = t_end / windows as f64;
    let depth = j + windows * window_terms;
    if depth > MAX_SERIES_DEPTH {
        return Err(CoagError::Budget(format!("series depth {depth} exceeds {MAX_SERIES_DEPTH}")));
    }
    let basis = PowerBasis::new(f0, depth)?;
    let per_window = tail_bound(j, rho0, width, window_terms);
    (1..=windows)
        .map(|w| {
            let coeffs = window_coefficients(&vec![(width, window_terms); w]);
            let terms = horner(j, &coeffs, rho0, &basis.s)?;
            Ok(SeriesEvaluation {
                t: width * w as f64,
                n_max: w * window_terms,
                tail_bound: per_window * w as f64,
                field: basis.materialize(j, &terms)?,
            })
        })
        .collect()
}

fn check_f0(f0: &Field) -> Result<()> {
    if f0.order() != 1 {
        return Err(CoagError::OrderMismatch { left: f0.order(), right: 1 });
    }
    Ok(())
}

/// Coefficients of `prod_w sum_{i <= n_w} (s_w z)^i / i!`.
fn window_coefficients(windows: &[(f64, usize)]) -> Vec<f64> {
    let mut c = vec![1.0];
    for &(s, n) in windows {
        let mut taylor = vec![1.0; n + 1];
        for i in 1..=n {
            taylor[i] = taylor[i - 1] * s / i as f64;
        }
        let mut next = vec![0.0; c.len() + n];
        for (a, &ca) in c.iter().enumerate() {
            for (b, &tb) in taylor.iter().enumerate() {
                next[a + b] += ca * tb;
            }
        }
        c = next;
    }
    c
}

/// Sorted parts of a multiset.
type Parts = Vec<u8>;

/// `sum_n coeffs[n] rho0^{j+n} W_j o ... o W_{j+n-1}[T(1^{j+n})]` as a
/// combination of order-`j` products, via Horner's scheme.
fn horner(j: usize, coeffs: &[f64], rho0: f64, s: &[f64]) -> Result<Vec<(Parts, f64)>> {
    let top = j + coeffs.len() - 1;
    if top > MAX_SERIES_DEPTH || top > u8::MAX as usize {
        return Err(CoagError::Budget(format!("series depth {top} exceeds {MAX_SERIES_DEPTH}")));
    }
    let mut level = vec![(vec![1u8; top], coeffs[top - j] * rho0.powi(top as i32))];
    for k in (j..top).rev() {
        let mut next = apply_w(&level, s);
        *next.entry(vec![1u8; k]).or_insert(0.0) += coeffs[k - j] * rho0.powi(k as i32);
        level = next.into_iter().collect();
        level.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    }
    Ok(level)
}

/// `W_{L-1}` on a combination of order-`L` products: for each distinct part
/// `q` (last coordinate) with remainder `r`,
/// `mult(q)/L * [1/2 sum_v mult_r(v) T(r, v -> v+q) - (L-1) s_q T(r)]`.
fn apply_w(level: &[(Parts, f64)], s: &[f64]) -> HashMap<Parts, f64> {
    let mut out: HashMap<Parts, f64> = HashMap::new();
    for (p, c) in level {
        let len = p.len();
        let mut i = 0;
        while i < len {
            let q = p[i];
            let mult_q = run_length(p, i);
            let a = c * mult_q as f64 / len as f64;
            let mut r = p.clone();
            r.remove(i);
            *out.entry(r.clone()).or_insert(0.0) -= a * (len - 1) as f64 * s[q as usize - 1];
            let mut k = 0;
            while k < r.len() {
                let v = r[k];
                let mult_v = run_length(&r, k);
                let mut merged = r.clone();
                merged.remove(k);
                let pos = merged.partition_point(|&x| x <= v + q);
                merged.insert(pos, v + q);
                *out.entry(merged).or_insert(0.0) += 0.5 * a * mult_v as f64;
                k += mult_v;
            }
            i += mult_q;
        }
    }
    out
}

fn run_length(p: &[u8], start: usize) -> usize {
    p[start..].iter().take_while(|&&x| x == p[start]).count()
}

/// Split-convolution powers `u_q = f0 * ... * f0` and their integrals.
struct PowerBasis {
    grid: MassGrid,
    u: Vec<Field>,
    s: Vec<f64>,
}

impl PowerBasis {
    fn new(f0: &Field, depth: usize) -> Result<Self> {
        let mut u = vec![f0.clone()];
        while u.len() < depth {
            let next = convolve_lower(u.last().expect("nonempty"), f0)?;
            u.push(next);
        }
        let s = u.iter().map(Field::integral).collect();
        Ok(Self { grid: *f0.grid(), u, s })
    }

    /// `sum_p c_p T(p)` on the grid, contracting one coordinate at a time.
    fn materialize(&self, j: usize, terms: &[(Parts, f64)]) -> Result<Field> {
        let n = self.grid.n_cells();
        tensor_len(n, j)?;
        let k = terms.iter().flat_map(|(p, _)| p.iter()).copied().max().unwrap_or(1) as usize;
        let mut coef = vec![0.0; tensor_len(k, j)?];
        for (p, c) in terms {
            let perms = distinct_permutations(p);
            let share = c / perms.len() as f64;
            for perm in perms {
                let idx = perm.iter().fold(0, |acc, &q| acc * k + q as usize - 1);
                coef[idx] += share;
            }
        }
        // layout (a, K, b) -> (a, n, b) for each coordinate in turn
        let mut cur = coef;
        for axis in 0..j {
            let a = n.pow(axis as u32);
            let b = k.pow((j - axis - 1) as u32);
            let mut out = vec![0.0; a * n * b];
            for x in 0..a {
                for q in 0..k {
                    let row = &cur[(x * k + q) * b..(x * k + q + 1) * b];
                    if row.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    for (y, &w) in self.u[q].values().iter().enumerate() {
                        let o = &mut out[(x * n + y) * b..(x * n + y + 1) * b];
                        for (dst, &src) in o.iter_mut().zip(row) {
                            *dst += w * src;
                        }
                    }
                }
            }
            cur = out;
        }
        Field::from_values(self.grid, j, cur)
    }
}

fn distinct_permutations(p: &[u8]) -> Vec<Parts> {
    let mut cur = p.to_vec();
    let mut all = vec![cur.clone()];
    // lexicographic successor of a sorted multiset
    loop {
        let Some(i) = (1..cur.len()).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return all;
        };
        let pivot = i - 1;
        let swap = (i..cur.len()).rev().find(|&k| cur[k] > cur[pivot]).expect("successor exists");
        cur.swap(pivot, swap);
        cur[i..].reverse();
        all.push(cur.clone());
    }
}

/// One line of the hierarchy report.
#[derive(Debug, Clone, Serialize)]
pub struct HierarchyReportRow {
    pub j: usize,
    pub n_max: usize,
    pub t: f64,
    pub tail_bound: f64,
    pub l1_vs_pde: f64,
    pub l1_vs_product: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HierarchyReportConfig {
    pub rho0: f64,
    pub j_max: usize,
    pub times: Vec<f64>,
    /// Fixed single-window depth; `None` picks the default per time.
    pub n_max: Option<usize>,
    pub tail_tolerance: f64,
    pub window_terms: usize,
    pub pde_dt: f64,
}

impl HierarchyReportConfig {
    pub fn new(rho0: f64, j_max: usize, times: Vec<f64>) -> Self {
        Self {
            rho0,
            j_max,
            times,
            n_max: None,
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
            window_terms: DEFAULT_WINDOW_TERMS,
            pde_dt: (1e-3f64).min(0.05 / rho0),
        }
    }
}

/// Series against the PDE and against products of `g_1`. Times with
/// `3 rho0 t < 1` use one window, later ones restart in windows.
pub fn hierarchy_report(f0: &Field, config: &HierarchyReportConfig) -> Result<Vec<HierarchyReportRow>> {
    check_f0(f0)?;
    if config.j_max == 0 {
        return Err(CoagError::InvalidConfig("j_max must be at least 1".into()));
    }
    let rho = config.rho0;
    let start = f0.scaled(rho);
    let pde = smoluchowski::solve_exact(&start, config.pde_dt, &config.times)?;
    let mut rows = Vec::new();
    for (state, &t) in pde.states.iter().zip(&config.times) {
        let f = &state.f;
        let mut g1: Option<Field> = None;
        for j in 1..=config.j_max {
            let eval = evaluate(j, f0, config, t)?;
            let l1_vs_pde = eval.field.l1_distance(&tensor_product(f, j)?)?;
            let l1_vs_product = match &g1 {
                None => 0.0,
                Some(g) => eval.field.l1_distance(&tensor_product(g, j)?)?,
            };
            rows.push(HierarchyReportRow { j, n_max: eval.n_max, t, tail_bound: eval.tail_bound, l1_vs_pde, l1_vs_product });
            if j == 1 {
                g1 = Some(eval.field);
            }
        }
    }
    Ok(rows)
}

fn evaluate(j: usize, f0: &Field, config: &HierarchyReportConfig, t: f64) -> Result<SeriesEvaluation> {
    let rho = config.rho0;
    if t == 0.0 || 3.0 * rho * t < 1.0 {
        let trunc = match config.n_max {
            Some(n) => HierarchyTruncation::new(j, n, rho, t)?,
            None => HierarchyTruncation::with_tolerance(j, rho, t, config.tail_tolerance)?,
        };
        duhamel_series(&trunc, f0, t)
    } else {
        let mut evals = duhamel_windowed(j, f0, rho, t, config.window_terms)?;
        Ok(evals.pop().expect("at least one window"))
    }
}

pub fn write_hierarchy_report_csv<W: Write>(rows: &[HierarchyReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
