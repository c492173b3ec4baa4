//! Constant-kernel Smoluchowski equation
//! `df/dt = 1/2 (f * f) - n f`, `n = int f`, on the midpoint grid.

use std::io::Write;

use serde::Serialize;

use crate::error::{CoagError, Result};
use crate::model::convolution::{self_diagonal_sums, split_diagonals, split_leaks};
use crate::model::{convolve_lower, Field, MassGrid};

/// Largest admissible `dt * n` for the explicit integrator.
pub const STABILITY_BOUND: f64 = 0.1;

/// Macroscopic state: concentration density plus its first two moments.
#[derive(Debug, Clone)]
pub struct MacroState {
    pub t: f64,
    pub f: Field,
    /// Number density `int f`.
    pub n: f64,
    /// Mass density `int m f`.
    pub mass: f64,
    /// Mass that has left `[0, m_max]` so far.
    pub mass_leak: f64,
}

impl MacroState {
    pub fn new(f: Field) -> Result<Self> {
        Self::at(0.0, f, 0.0)
    }

    fn at(t: f64, f: Field, mass_leak: f64) -> Result<Self> {
        if f.order() != 1 {
            return Err(CoagError::OrderMismatch { left: f.order(), right: 1 });
        }
        if !f.is_nonnegative() {
            return Err(CoagError::InvalidConfig("concentration must be nonnegative".into()));
        }
        let n = f.l1_norm();
        let mass = f.first_moment();
        Ok(Self { t, f, n, mass, mass_leak })
    }
}

/// Reusable RK4 workspace for one grid.
#[derive(Debug)]
pub struct Integrator {
    grid: MassGrid,
    diag: Vec<f64>,
    conv: Vec<f64>,
    stage: Vec<f64>,
    k: [Vec<f64>; 4],
    clamp_events: u64,
}

impl Integrator {
    pub fn new(grid: MassGrid) -> Self {
        let n = grid.n_cells();
        Self {
            grid,
            diag: vec![0.0; n],
            conv: vec![0.0; n],
            stage: vec![0.0; n],
            k: std::array::from_fn(|_| vec![0.0; n]),
            clamp_events: 0,
        }
    }

    /// Number of times the positivity guard had to act.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    /// Writes the right-hand side into `out` and returns the rate at which
    /// mass leaves the grid.
    fn rhs(grid: MassGrid, f: &[f64], diag: &mut [f64], conv: &mut [f64], out: &mut [f64]) -> f64 {
        let h = grid.h();
        self_diagonal_sums(f, diag);
        split_diagonals(diag, h, conv);
        let (_, leak) = split_leaks(f, f, diag, h);
        let n = h * f.iter().sum::<f64>();
        for ((o, c), v) in out.iter_mut().zip(conv.iter()).zip(f) {
            *o = 0.5 * c - n * v;
        }
        0.5 * leak
    }

    /// One classical RK4 step, in place. Returns the mass leaked during it.
    pub fn step_values(&mut self, f: &mut [f64], dt: f64) -> Result<f64> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CoagError::InvalidConfig(format!("time step must be positive, got {dt}")));
        }
        let g = self.grid;
        let n = g.h() * f.iter().sum::<f64>();
        if dt * n > STABILITY_BOUND {
            return Err(CoagError::Stability { dt, product: dt * n, bound: STABILITY_BOUND });
        }
        let Self { diag, conv, stage, k, .. } = self;
        let [k1, k2, k3, k4] = k;
        let l1 = Self::rhs(g, f, diag, conv, k1);
        for ((s, v), d) in stage.iter_mut().zip(f.iter()).zip(k1.iter()) {
            *s = v + 0.5 * dt * d;
        }
        let l2 = Self::rhs(g, stage, diag, conv, k2);
        for ((s, v), d) in stage.iter_mut().zip(f.iter()).zip(k2.iter()) {
            *s = v + 0.5 * dt * d;
        }
        let l3 = Self::rhs(g, stage, diag, conv, k3);
        for ((s, v), d) in stage.iter_mut().zip(f.iter()).zip(k3.iter()) {
            *s = v + dt * d;
        }
        let l4 = Self::rhs(g, stage, diag, conv, k4);
        let w = dt / 6.0;
        for (i, v) in f.iter_mut().enumerate() {
            *v += w * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if *v < 0.0 {
                *v = 0.0;
                self.clamp_events += 1;
            }
        }
        Ok(w * (l1 + 2.0 * l2 + 2.0 * l3 + l4))
    }
}

/// Advances `state` by one RK4 step of length `dt`.
pub fn step(state: &MacroState, dt: f64) -> Result<MacroState> {
    let mut integ = Integrator::new(*state.f.grid());
    let mut values = state.f.values().to_vec();
    let leak = integ.step_values(&mut values, dt)?;
    if integ.clamp_events() > 0 {
        return Err(CoagError::InvalidConfig("positivity guard triggered".into()));
    }
    let f = Field::from_values(*state.f.grid(), 1, values)?;
    MacroState::at(state.t + dt, f, state.mass_leak + leak)
}

/// States at the requested output times plus integrator diagnostics.
#[derive(Debug, Clone)]
pub struct Solution {
    pub states: Vec<MacroState>,
    pub clamp_events: u64,
    pub dt: f64,
}

/// Integrates from `f0` landing exactly on every output time: each interval
/// between outputs is split into equal steps no longer than `max_dt`.
pub fn solve_exact(f0: &Field, max_dt: f64, output_times: &[f64]) -> Result<Solution> {
    let initial = MacroState::new(f0.clone())?;
    if !(max_dt > 0.0 && max_dt.is_finite()) {
        return Err(CoagError::InvalidConfig(format!("time step must be positive, got {max_dt}")));
    }
    if output_times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(CoagError::InvalidConfig("output times must be finite and nonnegative".into()));
    }
    if output_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(CoagError::InvalidConfig("output times must be nondecreasing".into()));
    }
    let grid = *f0.grid();
    let mut integ = Integrator::new(grid);
    let mut values = f0.values().to_vec();
    let mut leak = 0.0;
    let mut now = 0.0;
    let mut states = Vec::with_capacity(output_times.len());
    for &t_out in output_times {
        if t_out > now {
            let steps = ((t_out - now) / max_dt * (1.0 - 1e-12)).ceil().max(1.0);
            let dt = (t_out - now) / steps;
            for _ in 0..steps as u64 {
                leak += integ.step_values(&mut values, dt)?;
            }
            now = t_out;
        }
        if now == 0.0 {
            states.push(initial.clone());
        } else {
            let f = Field::from_values(grid, 1, values.clone())?;
            states.push(MacroState::at(now, f, leak)?);
        }
    }
    Ok(Solution { states, clamp_events: integ.clamp_events(), dt: max_dt })
}

/// Integrates from `f0` with a fixed step, reporting the state at the step
/// nearest to each requested time. Output times must be nondecreasing.
pub fn solve_at(f0: &Field, dt: f64, output_times: &[f64]) -> Result<Solution> {
    let initial = MacroState::new(f0.clone())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CoagError::InvalidConfig(format!("time step must be positive, got {dt}")));
    }
    if output_times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(CoagError::InvalidConfig("output times must be finite and nonnegative".into()));
    }
    if output_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(CoagError::InvalidConfig("output times must be nondecreasing".into()));
    }
    let grid = *f0.grid();
    let mut integ = Integrator::new(grid);
    let mut values = f0.values().to_vec();
    let mut leak = 0.0;
    let mut steps_done = 0u64;
    let mut states = Vec::with_capacity(output_times.len());
    for &t_out in output_times {
        let target = (t_out / dt).round() as u64;
        while steps_done < target {
            leak += integ.step_values(&mut values, dt)?;
            steps_done += 1;
        }
        if steps_done == 0 {
            states.push(initial.clone());
        } else {
            let f = Field::from_values(grid, 1, values.clone())?;
            states.push(MacroState::at(steps_done as f64 * dt, f, leak)?);
        }
    }
    Ok(Solution { states, clamp_events: integ.clamp_events(), dt })
}

/// Solution at `t_end` only.
pub fn solve(f0: &Field, t_end: f64, dt: f64) -> Result<Solution> {
    solve_at(f0, dt, &[t_end])
}

/// Total number density `rho0 / (1 + rho0 t / 2)`.
pub fn number_density(rho0: f64, t: f64) -> f64 {
    rho0 / (1.0 + 0.5 * rho0 * t)
}

/// `(n^2 / rho0) exp(-n m / rho0)` with `n = number_density(rho0, t)`,
/// sampled at the nodes. Solves the equation for `f0 = rho0 e^{-m}`.
pub fn exponential_solution(rho0: f64, t: f64, grid: MassGrid) -> Field {
    let n = number_density(rho0, t);
    let a = n * n / rho0;
    let b = n / rho0;
    Field::from_fn(grid, |m| a * (-b * m).exp())
}

/// Cell averages of the same closed form.
pub fn exponential_cell_average(rho0: f64, t: f64, grid: MassGrid) -> Field {
    let n = number_density(rho0, t);
    let b = n / rho0;
    Field::from_cell_integrals(grid, |m| -n * (-b * m).exp())
}

/// How a closed-form candidate is put on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Nodes,
    CellAverage,
}

pub fn exponential_on_grid(rho0: f64, t: f64, grid: MassGrid, sampling: Sampling) -> Field {
    match sampling {
        Sampling::Nodes => exponential_solution(rho0, t, grid),
        Sampling::CellAverage => exponential_cell_average(rho0, t, grid),
    }
}

/// Sup norm of `df/dt - 1/2 f*f + n f` for the closed form, with the time
/// derivative taken by a centred difference of half-width `delta`.
pub fn closed_form_residual(rho0: f64, t: f64, grid: MassGrid, sampling: Sampling, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= t) {
        return Err(CoagError::InvalidConfig(format!(
            "difference half-width {delta} must be in (0, t]"
        )));
    }
    let f = exponential_on_grid(rho0, t, grid, sampling);
    let fp = exponential_on_grid(rho0, t + delta, grid, sampling);
    let fm = exponential_on_grid(rho0, t - delta, grid, sampling);
    let gain = convolve_lower(&f, &f)?;
    let n = f.l1_norm();
    let res = (0..grid.n_cells())
        .map(|k| {
            let dfdt = (fp.values()[k] - fm.values()[k]) / (2.0 * delta);
            (dfdt - 0.5 * gain.values()[k] + n * f.values()[k]).abs()
        })
        .fold(0.0, f64::max);
    Ok(res)
}

/// Residual gate for using the closed form as a reference.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClosedFormGate {
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const CLOSED_FORM_TOLERANCE: f64 = 1e-3;

pub fn closed_form_gate(rho0: f64, t: f64, grid: MassGrid, sampling: Sampling) -> Result<ClosedFormGate> {
    let delta = 1e-4f64.min(t);
    let residual = closed_form_residual(rho0, t, grid, sampling, delta)?;
    Ok(ClosedFormGate {
        residual,
        tolerance: CLOSED_FORM_TOLERANCE,
        passed: residual < CLOSED_FORM_TOLERANCE,
    })
}

/// CSV with columns `t,n,M,mass_leak`.
pub fn write_states_csv<W: Write>(states: &[MacroState], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "n", "M", "mass_leak"])?;
    for s in states {
        w.write_record([s.t.to_string(), s.n.to_string(), s.mass.to_string(), s.mass_leak.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_field(grid: MassGrid, rho0: f64) -> Field {
        Field::from_fn(grid, |m| rho0 * (-m).exp())
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let g = MassGrid::new(10.0, 50).unwrap();
        let s = MacroState::new(Field::zeros(g, 1).unwrap()).unwrap();
        let next = step(&s, 0.01).unwrap();
        assert!(next.f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_step_matches_moment_law() {
        let g = MassGrid::new(40.0, 4000).unwrap();
        let s = MacroState::new(exp_field(g, 1.0)).unwrap();
        let next = step(&s, 1e-3).unwrap();
        let dn = s.n - next.n;
        let want = 0.5 * s.n * s.n * 1e-3;
        assert!((dn - want).abs() < 1e-6, "dn {dn} want {want}");
        assert!((next.mass - s.mass).abs() <= next.mass_leak + 1e-10);
    }

    #[test]
    fn stability_is_enforced() {
        let g = MassGrid::new(10.0, 50).unwrap();
        let s = MacroState::new(exp_field(g, 1.0)).unwrap();
        assert!(matches!(step(&s, 0.5), Err(CoagError::Stability { .. })));
    }

    #[test]
    fn t_end_zero_returns_initial() {
        let g = MassGrid::new(10.0, 50).unwrap();
        let f0 = exp_field(g, 1.0);
        let sol = solve(&f0, 0.0, 0.01).unwrap();
        assert_eq!(sol.states.len(), 1);
        assert_eq!(sol.states[0].f, f0);
        assert_eq!(sol.states[0].t, 0.0);
    }

    #[test]
    fn closed_form_basics() {
        let g = MassGrid::new(40.0, 4000).unwrap();
        let f = exponential_solution(1.0, 0.0, g);
        assert!(f.sup_distance(&exp_field(g, 1.0)).unwrap() < 1e-15);
        assert_eq!(number_density(1.0, 0.0), 1.0);
        assert_eq!(number_density(1.0, 2.0), 0.5);
        assert_eq!(number_density(2.0, 1.0), 1.0);
        for t in [0.5, 1.0, 3.0] {
            let avg = exponential_cell_average(1.0, t, g);
            let n = number_density(1.0, t);
            // exact up to the tail beyond m_max
            assert!((avg.l1_norm() - n * (1.0 - (-n * 40.0).exp())).abs() < 1e-12);
            assert!((avg.first_moment() - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn rk4_is_fourth_order_in_time() {
        let g = MassGrid::new(20.0, 200).unwrap();
        let f0 = exp_field(g, 1.0);
        let n_at = |dt: f64| solve(&f0, 1.0, dt).unwrap().states[0].n;
        let reference = n_at(0.0125);
        let e1 = (n_at(0.1) - reference).abs();
        let e2 = (n_at(0.05) - reference).abs();
        let ratio = e1 / e2;
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn csv_layout() {
        let g = MassGrid::new(10.0, 20).unwrap();
        let sol = solve_at(&exp_field(g, 1.0), 0.05, &[0.0, 0.1]).unwrap();
        let mut buf = Vec::new();
        write_states_csv(&sol.states, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,n,M,mass_leak\n0,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn exact_times_are_hit() {
        let g = MassGrid::new(20.0, 200).unwrap();
        let sol = solve_exact(&exp_field(g, 1.0), 0.01, &[0.0, 1.0 / 6.0, 1.0 / 6.0, 0.5]).unwrap();
        assert_eq!(sol.states[1].t, 1.0 / 6.0);
        assert_eq!(sol.states[3].t, 0.5);
        assert_eq!(sol.states[1].f, sol.states[2].f);
        let n0 = sol.states[0].n;
        // pairs merging beyond m_max = 20 remove about 1e-7
        assert!((sol.states[3].n - number_density(n0, 0.5)).abs() < 1e-6);
        assert_eq!(sol.clamp_events, 0);
    }
}
