//! Adaptive Dormand-Prince 5(4) integrator for small nonstiff systems.

use crate::error::{CoagError, Result};

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rtol: 1e-12, atol: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Stats {
    pub accepted: u64,
    pub rejected: u64,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights equal the last row of A (first-same-as-last)
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = rhs(t, y)` from `t0` and returns `y` at each of the
/// nondecreasing `outputs` (all `>= t0`). Steps are clipped to land exactly
/// on every output time.
pub fn integrate<F>(mut rhs: F, t0: f64, y0: &[f64], outputs: &[f64], tol: Tolerance) -> Result<(Vec<Vec<f64>>, Stats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if outputs.iter().any(|&t| !(t >= t0) || !t.is_finite()) || outputs.windows(2).any(|w| w[1] < w[0]) {
        return Err(CoagError::InvalidConfig("output times must be finite, nondecreasing and not before the start".into()));
    }
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut stats = Stats::default();
    let mut out = Vec::with_capacity(outputs.len());

    rhs(t, &y, &mut k[0]);
    let mut h = initial_step(&y, &k[0], tol, outputs.last().map_or(1.0, |&e| e - t0));

    for &t_out in outputs {
        while t < t_out {
            let mut step = h.min(t_out - t);
            let last = step >= t_out - t;
            if last {
                step = t_out - t;
            }
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (r, kr) in k.iter().take(s).enumerate() {
                        acc += step * A[s][r] * kr[i];
                    }
                    tmp[i] = acc;
                }
                if s == 6 {
                    y_new.copy_from_slice(&tmp);
                }
                let (_, tail) = k.split_at_mut(s);
                rhs(t + C[s] * step, &tmp, &mut tail[0]);
            }
            let mut err = 0.0f64;
            for i in 0..n {
                let mut e = 0.0;
                for (r, kr) in k.iter().enumerate() {
                    e += E[r] * kr[i];
                }
                let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
                let q = step * e / sc;
                err += q * q;
            }
            let err = (err / n.max(1) as f64).sqrt();
            if err <= 1.0 {
                t = if last { t_out } else { t + step };
                y.copy_from_slice(&y_new);
                let (first, rest) = k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                stats.accepted += 1;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // keep the unclipped step size when the step was shortened to hit an output
                h = if last { h.max(step * fac) } else { step * fac };
            } else {
                stats.rejected += 1;
                h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                if h < 1e-14 * t.abs().max(1.0) {
                    return Err(CoagError::InvalidConfig(format!("step size underflow at t = {t}")));
                }
            }
        }
        out.push(y.clone());
    }
    Ok((out, stats))
}

fn initial_step(y: &[f64], f: &[f64], tol: Tolerance, span: f64) -> f64 {
    let n = y.len().max(1) as f64;
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for (yi, fi) in y.iter().zip(f) {
        let sc = tol.atol + tol.rtol * yi.abs();
        d0 += (yi / sc).powi(2);
        d1 += (fi / sc).powi(2);
    }
    let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(span.max(1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let (ys, stats) = integrate(|_, y, d| d[0] = -y[0], 0.0, &[1.0], &[0.5, 1.0, 3.0], Tolerance::default()).unwrap();
        for (y, t) in ys.iter().zip([0.5f64, 1.0, 3.0]) {
            assert!((y[0] - (-t).exp()).abs() < 1e-11);
        }
        assert!(stats.accepted > 0);
    }

    #[test]
    fn harmonic_oscillator() {
        let (ys, _) = integrate(
            |_, y, d| {
                d[0] = y[1];
                d[1] = -y[0];
            },
            0.0,
            &[1.0, 0.0],
            &[std::f64::consts::PI],
            Tolerance::default(),
        )
        .unwrap();
        assert!((ys[0][0] + 1.0).abs() < 1e-10);
        assert!(ys[0][1].abs() < 1e-10);
    }

    #[test]
    fn repeated_and_initial_outputs() {
        let (ys, _) = integrate(|t, _, d| d[0] = t, 0.0, &[0.0], &[0.0, 2.0, 2.0], Tolerance::default()).unwrap();
        assert_eq!(ys[0][0], 0.0);
        assert!((ys[1][0] - 2.0).abs() < 1e-12);
        assert_eq!(ys[1], ys[2]);
        assert!(integrate(|_, _, _| {}, 1.0, &[0.0], &[0.5], Tolerance::default()).is_err());
    }
}
