//! Exact laws for the particle count of the constant-kernel system.
//!
//! Integrating the master equations over all masses leaves the pure death
//! chain `N -> N - 1` with rate `lambda_N = N (N - 1) / (2V)`.

use std::io::Write;

use serde::Serialize;
use statrs::function::factorial::ln_factorial;

use crate::dd::Dd;
use crate::error::{CoagError, Result};
use crate::ode::{integrate, Tolerance};

/// Death rate out of state `N`.
#[inline]
pub fn death_rate(n: usize, volume: f64) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / (2.0 * volume)
}

/// Law of the particle count at time `t`; `probs[N - 1] = P(t, N)`.
#[derive(Debug, Clone, Serialize)]
pub struct NumberLaw {
    pub t: f64,
    pub probs: Vec<f64>,
}

impl NumberLaw {
    pub fn n0(&self) -> usize {
        self.probs.len()
    }

    /// `P(t, N)`, zero outside `1..=N0`.
    pub fn p(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.probs.get(n - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `E[N (N-1) ... (N-j+1)]` from the law.
    pub fn factorial_moment(&self, j: usize) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| falling(i + 1, j) * p)
            .sum()
    }
}

/// `n (n-1) ... (n-j+1)`, zero when `j > n`.
pub fn falling(n: usize, j: usize) -> f64 {
    if j > n {
        return 0.0;
    }
    (0..j).map(|i| (n - i) as f64).product()
}

fn check(n0: usize, volume: f64) -> Result<()> {
    if n0 == 0 {
        return Err(CoagError::InvalidConfig("N0 must be at least 1".into()));
    }
    if !(volume > 0.0 && volume.is_finite()) {
        return Err(CoagError::InvalidConfig(format!("volume must be positive, got {volume}")));
    }
    Ok(())
}

/// Number laws at several nondecreasing times, from one integration.
pub fn death_chain_laws(n0: usize, volume: f64, times: &[f64]) -> Result<Vec<NumberLaw>> {
    check(n0, volume)?;
    let mut y0 = vec![0.0; n0];
    y0[n0 - 1] = 1.0;
    let rates: Vec<f64> = (1..=n0 + 1).map(|n| death_rate(n, volume)).collect();
    let rhs = |_: f64, p: &[f64], d: &mut [f64]| {
        for i in 0..n0 {
            let inflow = if i + 1 < n0 { rates[i + 1] * p[i + 1] } else { 0.0 };
            d[i] = inflow - rates[i] * p[i];
        }
    };
    let (ys, _) = integrate(rhs, 0.0, &y0, times, Tolerance::default())?;
    Ok(times
        .iter()
        .zip(ys)
        .map(|(&t, mut probs)| {
            // negative round-off below the integration tolerance
            probs.iter_mut().for_each(|p| *p = p.max(0.0));
            NumberLaw { t, probs }
        })
        .collect())
}

pub fn death_chain_pn(n0: usize, volume: f64, t: f64) -> Result<NumberLaw> {
    Ok(death_chain_laws(n0, volume, &[t])?.remove(0))
}

/// Mean and variance of the particle count.
pub fn long_time_diagnostics(law: &NumberLaw) -> (f64, f64) {
    let total = law.total();
    let mean = law
        .probs
        .iter()
        .enumerate()
        .map(|(i, p)| (i + 1) as f64 * p)
        .sum::<f64>()
        / total;
    let var = law
        .probs
        .iter()
        .enumerate()
        .map(|(i, p)| ((i + 1) as f64 - mean).powi(2) * p)
        .sum::<f64>()
        / total;
    (mean, var)
}

/// Factorial moments `M_j`, `j = 1..=N0`, stored as `ln S_j` with
/// `S_j = M_j / N0^j`.
#[derive(Debug, Clone, Serialize)]
pub struct FactorialMoments {
    pub t: f64,
    pub n0: usize,
    pub ln_scaled: Vec<f64>,
}

/// Above this many particles moments are only formed through logarithms.
pub const LOG_SPACE_THRESHOLD: usize = 20;

impl FactorialMoments {
    /// `ln M_j`, `-inf` when the moment vanishes.
    pub fn ln_m(&self, j: usize) -> f64 {
        if j == 0 {
            return 0.0;
        }
        match self.ln_scaled.get(j - 1) {
            Some(&u) => j as f64 * (self.n0 as f64).ln() + u,
            None => f64::NEG_INFINITY,
        }
    }

    /// `S_j = M_j / N0^j`.
    pub fn scaled(&self, j: usize) -> f64 {
        match self.ln_scaled.get(j.wrapping_sub(1)) {
            Some(&u) => u.exp(),
            None => 0.0,
        }
    }

    /// `M_j`; zero for `j > N0`. May be `inf` if it exceeds `f64`.
    pub fn m(&self, j: usize) -> f64 {
        if j == 0 {
            return 1.0;
        }
        if j > self.n0 {
            return 0.0;
        }
        if self.n0 <= LOG_SPACE_THRESHOLD {
            self.scaled(j) * (self.n0 as f64).powi(j as i32)
        } else {
            self.ln_m(j).exp()
        }
    }

    /// `M_j / V^j`.
    pub fn m_per_volume(&self, j: usize, volume: f64) -> f64 {
        if j > self.n0 {
            return 0.0;
        }
        (self.ln_scaled[j - 1] + j as f64 * (self.n0 as f64 / volume).ln()).exp()
    }
}

/// Integrates `dM_j/dt = -(j/2V) M_{j+1} - (j(j-1)/2V) M_j` with
/// `M_j(0) = N0!/(N0-j)!` at several nondecreasing times.
///
/// The unknowns are `S_j = M_j / N0^j`. When `N0 / V * t` is large the map
/// from initial to final moments amplifies perturbations by many orders of
/// magnitude (the final values come out of heavy cancellation), so the
/// system is propagated in double-double arithmetic with a Taylor series
/// on steps where `|h A| <= 1`, truncated below `1e-34`.
pub fn factorial_moment_laws(n0: usize, volume: f64, times: &[f64]) -> Result<Vec<FactorialMoments>> {
    check(n0, volume)?;
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(CoagError::InvalidConfig("times must be finite, nonnegative and nondecreasing".into()));
    }
    let nf = Dd::from(n0 as f64);
    let two_v = Dd::from(2.0 * volume);
    let mut s = Vec::with_capacity(n0);
    let mut acc = Dd::ONE;
    for j in 1..=n0 {
        acc = acc * (Dd::ONE - Dd::from((j - 1) as f64) / nf);
        s.push(acc);
    }
    let couple: Vec<Dd> = (1..=n0).map(|j| Dd::from(j as f64) * nf / two_v).collect();
    let decay: Vec<Dd> = (1..=n0)
        .map(|j| Dd::from((j * (j - 1)) as f64) / two_v)
        .collect();
    let norm = (0..n0)
        .map(|i| couple[i].hi + decay[i].hi)
        .fold(0.0, f64::max);
    let inv: Vec<Dd> = (0..=MAX_TAYLOR_TERMS).map(|n| Dd::ONE / Dd::from(n.max(1) as f64)).collect();

    let mut out = Vec::with_capacity(times.len());
    let mut t_now = 0.0;
    let mut term = vec![Dd::ZERO; n0];
    let mut next = vec![Dd::ZERO; n0];
    for &t in times {
        let span = t - t_now;
        if span > 0.0 {
            let steps = (span * norm).ceil().max(1.0) as usize;
            let h = Dd::from(span) / Dd::from(steps as f64);
            let hc: Vec<Dd> = couple.iter().map(|&c| -(h * c)).collect();
            let hd: Vec<Dd> = decay.iter().map(|&d| -(h * d)).collect();
            for _ in 0..steps {
                term.copy_from_slice(&s);
                for inv_k in &inv[1..] {
                    let mut biggest = 0.0f64;
                    for i in 0..n0 {
                        let up = if i + 1 < n0 { hc[i] * term[i + 1] } else { Dd::ZERO };
                        let v = (up + hd[i] * term[i]) * *inv_k;
                        biggest = biggest.max(v.hi.abs());
                        next[i] = v;
                    }
                    std::mem::swap(&mut term, &mut next);
                    for (si, ti) in s.iter_mut().zip(&term) {
                        *si = *si + *ti;
                    }
                    if biggest <= 1e-34 * s[0].hi.abs() {
                        break;
                    }
                }
                // below this the split products lose precision; such moments
                // can only lower the ones beneath them by a negligible amount
                for v in s.iter_mut().filter(|v| v.hi.abs() < FLUSH_BELOW) {
                    *v = Dd::ZERO;
                }
            }
            t_now = t;
        }
        let ln_scaled = s
            .iter()
            .map(|v| if v.hi > 0.0 { v.hi.ln() + (v.lo / v.hi).ln_1p() } else { f64::NEG_INFINITY })
            .collect();
        out.push(FactorialMoments { t, n0, ln_scaled });
    }
    Ok(out)
}

const MAX_TAYLOR_TERMS: usize = 80;
const FLUSH_BELOW: f64 = 1e-250;

pub fn factorial_moment_ode(n0: usize, volume: f64, t: f64) -> Result<FactorialMoments> {
    Ok(factorial_moment_laws(n0, volume, &[t])?.remove(0))
}

/// `e^{-j(j-1)t/(2V)} N0^j`.
pub fn decay_bound(n0: usize, volume: f64, t: f64, j: usize) -> f64 {
    ln_decay_bound(n0, volume, t, j).exp()
}

pub fn ln_decay_bound(n0: usize, volume: f64, t: f64, j: usize) -> f64 {
    -death_rate(j, volume) * t + j as f64 * (n0 as f64).ln()
}

/// `2^{j-1} N0! (t/V)^{N0-j} sum_{N=0}^{N0-j} 2^N t^{-N} V^N / N!`,
/// summed term by term in log space so `t = 0` stays finite.
pub fn combinatorial_bound(n0: usize, volume: f64, t: f64, j: usize) -> Result<f64> {
    Ok(ln_combinatorial_bound(n0, volume, t, j)?.exp())
}

pub fn ln_combinatorial_bound(n0: usize, volume: f64, t: f64, j: usize) -> Result<f64> {
    check(n0, volume)?;
    if j == 0 || j > n0 {
        return Err(CoagError::InvalidConfig(format!("need 1 <= j <= N0, got j = {j}, N0 = {n0}")));
    }
    if !(t >= 0.0) {
        return Err(CoagError::InvalidConfig(format!("time must be nonnegative, got {t}")));
    }
    let ln2 = std::f64::consts::LN_2;
    let base = (j - 1) as f64 * ln2 + ln_factorial(n0 as u64);
    let ln_ratio = (t / volume).ln();
    let top = n0 - j;
    let terms: Vec<f64> = (0..=top)
        .filter_map(|n| {
            let power = (top - n) as f64;
            let tpart = if power == 0.0 {
                0.0
            } else if t == 0.0 {
                return None;
            } else {
                power * ln_ratio
            };
            Some(base + tpart + n as f64 * ln2 - ln_factorial(n as u64))
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + terms.iter().map(|x| (x - max).exp()).sum::<f64>().ln())
}

/// CSV with columns `t,N,P`.
pub fn write_number_laws_csv<W: Write>(laws: &[NumberLaw], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "N", "P"])?;
    for law in laws {
        for (i, p) in law.probs.iter().enumerate() {
            w.write_record([law.t.to_string(), (i + 1).to_string(), p.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV with columns `t,j,M_j,bound_decay,bound_combinatorial` for `j = 1..=j_max`.
pub fn write_moments_csv<W: Write>(moments: &[FactorialMoments], volume: f64, j_max: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "j", "M_j", "bound_decay", "bound_combinatorial"])?;
    for fm in moments {
        for j in 1..=j_max.min(fm.n0) {
            let comb = combinatorial_bound(fm.n0, volume, fm.t, j)?;
            w.write_record([
                fm.t.to_string(),
                j.to_string(),
                fm.m(j).to_string(),
                decay_bound(fm.n0, volume, fm.t, j).to_string(),
                comb.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
