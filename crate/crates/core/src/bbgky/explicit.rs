use statrs::function::factorial::factorial;

use super::operators::gain_operator;
use crate::error::{CoagError, Result};
use crate::model::field::tensor_len;
use crate::model::Field;
use crate::moments::death_rate;

/// Largest `N0` handled with full tensors.
pub const MAX_EXPLICIT_N0: usize = 5;
/// Default number of time substeps per unit time.
pub const DEFAULT_SUBSTEPS: usize = 200;

/// Mass distribution functions `P_N`, `N = 1..=N0`, at one time.
#[derive(Debug, Clone)]
pub struct FiniteSystemState {
    pub n0: usize,
    pub volume: f64,
    pub t: f64,
    /// `p[N - 1]` has order `N`.
    pub p: Vec<Field>,
}

impl FiniteSystemState {
    /// `P_N`, or `None` for `N = 0` and `N > N0` (where it vanishes).
    pub fn p_n(&self, n: usize) -> Option<&Field> {
        n.checked_sub(1).and_then(|i| self.p.get(i))
    }

    /// `(1/N!) int P_N`, the probability of holding `N` particles.
    pub fn probability(&self, n: usize) -> f64 {
        self.p_n(n).map_or(0.0, |p| p.integral() / factorial(n as u64))
    }

    pub fn total_probability(&self) -> f64 {
        (1..=self.n0).map(|n| self.probability(n)).sum()
    }
}

/// Computes `P_N(t)` for all `N` from `P_{N0}(0) = p0` and `P_N(0) = 0`
/// otherwise, using
/// `P_N(t) = e^{-l_N t} P_N(0) + int_0^t e^{-l_N (t-s)} G_N[P_{N+1}(s)] ds`
/// with the trapezoid rule on a uniform substep grid. `P_{N0}` is exact.
pub fn explicit_pn_solution(p0: &Field, volume: f64, t: f64) -> Result<FiniteSystemState> {
    Ok(explicit_pn_trajectory(p0, volume, &[t], DEFAULT_SUBSTEPS)?.remove(0))
}

/// States at each requested time. Times are snapped to the substep grid of
/// width `1 / substeps_per_unit`.
pub fn explicit_pn_trajectory(
    p0: &Field,
    volume: f64,
    times: &[f64],
    substeps_per_unit: usize,
) -> Result<Vec<FiniteSystemState>> {
    let n0 = p0.order();
    if n0 > MAX_EXPLICIT_N0 {
        return Err(CoagError::TensorOrderExceeded { order: n0, limit: MAX_EXPLICIT_N0 });
    }
    tensor_len(p0.grid().n_cells(), n0)?;
    if !(volume.is_finite() && volume > 0.0) {
        return Err(CoagError::InvalidConfig(format!("volume must be positive, got {volume}")));
    }
    if !p0.is_nonnegative() {
        return Err(CoagError::InvalidConfig("initial distribution must be nonnegative".into()));
    }
    if substeps_per_unit == 0 {
        return Err(CoagError::InvalidConfig("need at least one substep per unit time".into()));
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(CoagError::InvalidConfig("times must be finite, nonnegative and nondecreasing".into()));
    }
    let dt = 1.0 / substeps_per_unit as f64;
    let grid = *p0.grid();
    let rates: Vec<f64> = (1..=n0).map(|n| death_rate(n, volume)).collect();

    // p[N-1] and the gain feeding it at the previous substep
    let mut p: Vec<Field> = (1..=n0)
        .map(|n| if n == n0 { Ok(p0.clone()) } else { Field::zeros(grid, n) })
        .collect::<Result<_>>()?;
    let mut prev_gain: Vec<Field> = (1..n0)
        .map(|n| Ok(gain_operator(&p[n], volume)?.field))
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(times.len());
    let mut step = 0u64;
    for &t in times {
        let target = (t / dt).round() as u64;
        while step < target {
            step += 1;
            let s = step as f64 * dt;
            p[n0 - 1] = p0.scaled((-rates[n0 - 1] * s).exp());
            for n in (1..n0).rev() {
                let decay = (-rates[n - 1] * dt).exp();
                let gain = gain_operator(&p[n], volume)?.field;
                let mut next = p[n - 1].scaled(decay);
                next.axpy(0.5 * dt * decay, &prev_gain[n - 1]);
                next.axpy(0.5 * dt, &gain);
                p[n - 1] = next;
                prev_gain[n - 1] = gain;
            }
        }
        out.push(FiniteSystemState { n0, volume, t: step as f64 * dt, p: p.clone() });
    }
    Ok(out)
}

/// `f_j = sum_{N=j}^{N0} 1/(N-j)! int P_N` over the last `N - j` masses.
/// Zero when `j > N0`.
pub fn correlation_from_pn(state: &FiniteSystemState, j: usize) -> Result<Field> {
    if j == 0 {
        return Err(CoagError::InvalidConfig("correlation order must be at least 1".into()));
    }
    let grid = *state.p[0].grid();
    let mut f = Field::zeros(grid, j)?;
    for n in j..=state.n0 {
        let marginal = state.p[n - 1].marginal_last(n - j)?;
        f.axpy(1.0 / factorial((n - j) as u64), &marginal);
    }
    Ok(f)
}

/// Sup norm of the discrete hierarchy residual
/// `df_j/dt - G_j[f_{j+1}] + j(j-1)/(2V) f_j + (j/V) int f_{j+1}`,
/// with `df_j/dt` from the centred difference of `before` and `after`.
pub fn hierarchy_residual(
    before: &FiniteSystemState,
    at: &FiniteSystemState,
    after: &FiniteSystemState,
    j: usize,
) -> Result<f64> {
    let v = at.volume;
    let span = after.t - before.t;
    if !(span > 0.0) {
        return Err(CoagError::InvalidConfig("residual needs two distinct times".into()));
    }
    let fa = correlation_from_pn(after, j)?;
    let fb = correlation_from_pn(before, j)?;
    let fj = correlation_from_pn(at, j)?;
    let fj1 = correlation_from_pn(at, j + 1)?;
    let gain = gain_operator(&fj1, v)?.field;
    let marginal = fj1.marginal_last(1)?;
    let loss = death_rate(j, v);
    let res = (0..fj.values().len())
        .map(|i| {
            let dfdt = (fa.values()[i] - fb.values()[i]) / span;
            (dfdt - gain.values()[i] + loss * fj.values()[i] + j as f64 / v * marginal.values()[i]).abs()
        })
        .fold(0.0, f64::max);
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marcus_lushnikov::F0Spec;
    use crate::model::{tensor_product_with_limit, MassGrid};
    use crate::moments::death_chain_pn;

    fn initial(n0: usize, grid: MassGrid) -> Field {
        let f0 = F0Spec::default().cell_average(grid);
        tensor_product_with_limit(&f0, n0, n0).unwrap().scaled(factorial(n0 as u64))
    }

    #[test]
    fn top_level_decays_exactly() {
        let g = MassGrid::new(10.0, 12).unwrap();
        let p0 = initial(3, g);
        let s = explicit_pn_solution(&p0, 1.0, 0.5).unwrap();
        let want = p0.scaled((-1.5f64).exp());
        assert!(s.p_n(3).unwrap().sup_distance(&want).unwrap() < 1e-14);
        assert!(s.p_n(4).is_none());
        assert_eq!(s.probability(4), 0.0);
    }

    #[test]
    fn probabilities_follow_the_death_chain() {
        let g = MassGrid::new(10.0, 30).unwrap();
        let s = explicit_pn_solution(&initial(3, g), 1.0, 0.5).unwrap();
        let law = death_chain_pn(3, 1.0, 0.5).unwrap();
        for n in 1..=3 {
            assert!((s.probability(n) - law.p(n)).abs() < 2e-3);
        }
        let f3 = correlation_from_pn(&s, 3).unwrap();
        assert_eq!(&f3, s.p_n(3).unwrap());
        assert!(correlation_from_pn(&s, 4).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn initial_correlations_factorize() {
        let g = MassGrid::new(10.0, 20).unwrap();
        let s = explicit_pn_solution(&initial(3, g), 1.0, 0.0).unwrap();
        let f0 = F0Spec::default().cell_average(g);
        for j in 1..=3 {
            let fj = correlation_from_pn(&s, j).unwrap();
            // the truncated grid carries mass 1 - e^{-10} per marginalized coordinate
            let scale = factorial(3) / factorial((3 - j) as u64) * f0.integral().powi(3 - j as i32);
            let want = tensor_product_with_limit(&f0, j, 3).unwrap().scaled(scale);
            assert!(fj.sup_distance(&want).unwrap() < 1e-12);
        }
    }

    #[test]
    fn rejects_large_systems() {
        let g = MassGrid::new(10.0, 2).unwrap();
        let p0 = Field::zeros(g, 6).unwrap();
        assert!(matches!(explicit_pn_solution(&p0, 1.0, 0.1), Err(CoagError::TensorOrderExceeded { .. })));
    }
}
