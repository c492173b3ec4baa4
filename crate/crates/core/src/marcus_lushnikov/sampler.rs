use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Open01};
use serde::{Deserialize, Serialize};

use crate::error::{CoagError, Result};
use crate::model::{Field, MassGrid};

/// Description of the initial one-particle mass density `f0`, normalized so
/// that `int f0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum F0Spec {
    /// `f0(m) = e^{-m / mean} / mean`.
    Exponential { mean: f64 },
    /// Piecewise-constant density on `[edges[i], edges[i+1])`; rescaled to
    /// unit integral.
    Tabulated { edges: Vec<f64>, density: Vec<f64> },
}

impl Default for F0Spec {
    fn default() -> Self {
        F0Spec::Exponential { mean: 1.0 }
    }
}

impl F0Spec {
    /// Parses `exp`, `exp:MEAN` or `file:PATH` (CSV with `m_lo,m_hi,density`).
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "exp" {
            return Ok(F0Spec::default());
        }
        if let Some(mean) = text.strip_prefix("exp:") {
            let mean: f64 = mean
                .parse()
                .map_err(|_| CoagError::InvalidSampler(format!("bad exponential mean `{mean}`")))?;
            let spec = F0Spec::Exponential { mean };
            spec.validate()?;
            return Ok(spec);
        }
        if let Some(path) = text.strip_prefix("file:") {
            return Self::from_csv(Path::new(path));
        }
        Err(CoagError::InvalidSampler(format!(
            "unknown initial density `{text}` (expected exp, exp:MEAN or file:PATH)"
        )))
    }

    /// Reads a table with columns `m_lo,m_hi,density`; consecutive rows must
    /// share edges.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut edges = Vec::new();
        let mut density = Vec::new();
        for row in reader.records() {
            let row = row?;
            if row.len() != 3 {
                return Err(CoagError::InvalidSampler("table rows need m_lo,m_hi,density".into()));
            }
            let num = |i: usize| -> Result<f64> {
                row[i]
                    .trim()
                    .parse()
                    .map_err(|_| CoagError::InvalidSampler(format!("bad number `{}`", &row[i])))
            };
            let (lo, hi, d) = (num(0)?, num(1)?, num(2)?);
            match edges.last() {
                None => edges.push(lo),
                Some(&prev) if prev != lo => {
                    return Err(CoagError::InvalidSampler(format!(
                        "table bins are not contiguous at {prev} / {lo}"
                    )))
                }
                Some(_) => {}
            }
            edges.push(hi);
            density.push(d);
        }
        let spec = F0Spec::Tabulated { edges, density };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            F0Spec::Exponential { mean } => {
                if !(mean.is_finite() && *mean > 0.0) {
                    return Err(CoagError::InvalidSampler(format!("exponential mean must be positive, got {mean}")));
                }
            }
            F0Spec::Tabulated { edges, density } => {
                if density.is_empty() || edges.len() != density.len() + 1 {
                    return Err(CoagError::InvalidSampler("table needs n bins and n + 1 edges".into()));
                }
                if edges.iter().any(|e| !e.is_finite()) || edges[0] < 0.0 {
                    return Err(CoagError::InvalidSampler("edges must be finite and nonnegative".into()));
                }
                if edges.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(CoagError::InvalidSampler("edges must be strictly increasing".into()));
                }
                if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                    return Err(CoagError::InvalidSampler("densities must be finite and nonnegative".into()));
                }
                let total: f64 = density.iter().zip(edges.windows(2)).map(|(d, w)| d * (w[1] - w[0])).sum();
                if !(total > 0.0) {
                    return Err(CoagError::InvalidSampler("table has zero total mass".into()));
                }
            }
        }
        Ok(())
    }

    pub fn sampler(&self) -> Result<F0Sampler> {
        self.validate()?;
        Ok(match self {
            F0Spec::Exponential { mean } => F0Sampler::Exponential { mean: *mean },
            F0Spec::Tabulated { edges, density } => {
                let mut cdf = Vec::with_capacity(density.len() + 1);
                cdf.push(0.0);
                let mut acc = 0.0;
                for (d, w) in density.iter().zip(edges.windows(2)) {
                    acc += d * (w[1] - w[0]);
                    cdf.push(acc);
                }
                for c in cdf.iter_mut() {
                    *c /= acc;
                }
                F0Sampler::Tabulated { edges: edges.clone(), cdf }
            }
        })
    }

    /// Mean particle mass under `f0`.
    pub fn mean(&self) -> f64 {
        match self {
            F0Spec::Exponential { mean } => *mean,
            F0Spec::Tabulated { edges, density } => {
                let (mut z, mut m) = (0.0, 0.0);
                for (d, w) in density.iter().zip(edges.windows(2)) {
                    z += d * (w[1] - w[0]);
                    m += d * 0.5 * (w[1] * w[1] - w[0] * w[0]);
                }
                m / z
            }
        }
    }

    /// `int_0^m f0`, the cumulative distribution function.
    pub fn cdf(&self, m: f64) -> f64 {
        match self {
            F0Spec::Exponential { mean } => {
                if m <= 0.0 {
                    0.0
                } else {
                    -(-m / mean).exp_m1()
                }
            }
            F0Spec::Tabulated { edges, density } => {
                let (mut z, mut below) = (0.0, 0.0);
                for (d, w) in density.iter().zip(edges.windows(2)) {
                    z += d * (w[1] - w[0]);
                    below += d * (m.clamp(w[0], w[1]) - w[0]);
                }
                below / z
            }
        }
    }

    /// Exact cell averages of `f0` on `grid`.
    pub fn cell_average(&self, grid: MassGrid) -> Field {
        Field::from_cell_integrals(grid, |m| self.cdf(m))
    }
}

/// Inverse-CDF sampler built from an [`F0Spec`].
#[derive(Debug, Clone)]
pub enum F0Sampler {
    Exponential { mean: f64 },
    Tabulated { edges: Vec<f64>, cdf: Vec<f64> },
}

impl F0Sampler {
    /// Maps `u` in `(0, 1)` to a mass; the result is strictly positive.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let m = match self {
            F0Sampler::Exponential { mean } => -mean * u.ln(),
            F0Sampler::Tabulated { edges, cdf } => {
                // first bin whose upper cumulative value reaches u
                let i = cdf[1..].partition_point(|&c| c < u).min(edges.len() - 2);
                let width = cdf[i + 1] - cdf[i];
                let frac = if width > 0.0 { (u - cdf[i]) / width } else { 0.5 };
                edges[i] + frac.clamp(0.0, 1.0) * (edges[i + 1] - edges[i])
            }
        };
        m.max(f64::MIN_POSITIVE)
    }
}

impl Distribution<f64> for F0Sampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = Open01.sample(rng);
        self.inverse_cdf(u)
    }
}
