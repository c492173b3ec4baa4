use rand::Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampler::{F0Sampler, F0Spec};
use super::state::ParticleState;
use super::{dynamics_rng, initial_rng};
use crate::error::{CoagError, Result};
use crate::model::MassGrid;

pub const DEFAULT_BATCHES: usize = 50;
pub const DEFAULT_PARTICLE_BUDGET: u64 = 1_000_000_000;
pub const DEFAULT_HISTOGRAM_BUDGET: u64 = 50_000_000;
/// Highest mass-histogram order the ensemble will accumulate.
pub const MAX_HISTOGRAM_ORDER: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n0: usize,
    pub volume: f64,
    pub replicas: usize,
    pub seed: u64,
    pub f0: F0Spec,
    pub output_times: Vec<f64>,
    /// Grid for the mass histograms.
    pub hist_grid: MassGrid,
    /// Mass histograms are kept for orders `1..=hist_order`.
    pub hist_order: usize,
    /// Replicas are reduced in this many contiguous batches.
    pub batches: usize,
    pub particle_budget: u64,
    pub histogram_budget: u64,
}

impl EnsembleConfig {
    pub fn new(n0: usize, volume: f64, replicas: usize, seed: u64, output_times: Vec<f64>) -> Self {
        Self {
            n0,
            volume,
            replicas,
            seed,
            f0: F0Spec::default(),
            output_times,
            hist_grid: MassGrid::new(40.0, 80).expect("valid default grid"),
            hist_order: 0,
            batches: DEFAULT_BATCHES,
            particle_budget: DEFAULT_PARTICLE_BUDGET,
            histogram_budget: DEFAULT_HISTOGRAM_BUDGET,
        }
    }

    pub fn with_histograms(mut self, grid: MassGrid, order: usize) -> Self {
        self.hist_grid = grid;
        self.hist_order = order;
        self
    }

    pub fn with_f0(mut self, f0: F0Spec) -> Self {
        self.f0 = f0;
        self
    }

    pub fn effective_batches(&self) -> usize {
        self.batches.clamp(1, self.replicas.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n0 == 0 {
            return Err(CoagError::InvalidConfig("N0 must be at least 1".into()));
        }
        if !(self.volume.is_finite() && self.volume > 0.0) {
            return Err(CoagError::InvalidConfig(format!("volume must be positive, got {}", self.volume)));
        }
        if self.replicas == 0 {
            return Err(CoagError::InvalidConfig("need at least one replica".into()));
        }
        if self.output_times.is_empty() {
            return Err(CoagError::InvalidConfig("need at least one output time".into()));
        }
        if self.output_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(CoagError::InvalidConfig("output times must be finite and nonnegative".into()));
        }
        if self.output_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(CoagError::InvalidConfig("output times must be nondecreasing".into()));
        }
        if self.hist_order > MAX_HISTOGRAM_ORDER {
            return Err(CoagError::TensorOrderExceeded { order: self.hist_order, limit: MAX_HISTOGRAM_ORDER });
        }
        MassGrid::new(self.hist_grid.m_max(), self.hist_grid.n_cells())?;
        self.f0.validate()?;
        let particles = self.replicas as u128 * self.n0 as u128;
        if particles > self.particle_budget as u128 {
            return Err(CoagError::Budget(format!(
                "{} replicas of {} particles exceed the particle budget {}",
                self.replicas, self.n0, self.particle_budget
            )));
        }
        let k = self.hist_grid.n_cells() as u128;
        let per_time: u128 = (1..=self.hist_order as u32).map(|j| k.pow(j)).sum();
        let entries = per_time * self.effective_batches() as u128 * self.output_times.len() as u128;
        if entries > self.histogram_budget as u128 {
            return Err(CoagError::Budget(format!(
                "{entries} histogram entries exceed the budget {}",
                self.histogram_budget
            )));
        }
        Ok(())
    }
}

/// Integer statistics of one batch of replicas at one output time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub replicas: u64,
    /// `number_hist[N]` counts replicas holding `N` particles.
    pub number_hist: Vec<u64>,
    /// `mass_hist[j-1]` counts ordered `j`-tuples of distinct particles per
    /// cell tuple, flattened row-major.
    pub mass_hist: Vec<Vec<u64>>,
    /// Particles at or beyond the histogram grid's upper mass.
    pub overflow: u64,
}

impl BatchStats {
    fn new(n0: usize, cells: usize, order: usize) -> Self {
        Self {
            replicas: 0,
            number_hist: vec![0; n0 + 1],
            mass_hist: (1..=order as u32).map(|j| vec![0; cells.pow(j)]).collect(),
            overflow: 0,
        }
    }

    fn add(&mut self, other: &BatchStats) {
        self.replicas += other.replicas;
        self.overflow += other.overflow;
        for (a, b) in self.number_hist.iter_mut().zip(&other.number_hist) {
            *a += b;
        }
        for (ha, hb) in self.mass_hist.iter_mut().zip(&other.mass_hist) {
            for (a, b) in ha.iter_mut().zip(hb) {
                *a += b;
            }
        }
    }
}

/// Statistics at one output time, kept per batch for resampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSummary {
    pub t: f64,
    pub batches: Vec<BatchStats>,
}

impl TimeSummary {
    /// Totals over all batches.
    pub fn total(&self) -> BatchStats {
        let mut it = self.batches.iter();
        let mut acc = it.next().expect("at least one batch").clone();
        for b in it {
            acc.add(b);
        }
        acc
    }

    /// Totals over a multiset of batch indices.
    pub fn total_of(&self, picks: &[usize]) -> BatchStats {
        let mut acc = self.batches[picks[0]].clone();
        for &i in &picks[1..] {
            acc.add(&self.batches[i]);
        }
        acc
    }

    pub fn replicas(&self) -> u64 {
        self.batches.iter().map(|b| b.replicas).sum()
    }

    pub fn number_hist(&self) -> Vec<u64> {
        self.total().number_hist
    }
}

/// Empirical factorial moment `E[N (N-1) ... (N-j+1)]` of a number histogram.
pub fn factorial_moment_of(hist: &[u64], j: usize) -> f64 {
    let r: u64 = hist.iter().sum();
    let s: f64 = hist
        .iter()
        .enumerate()
        .map(|(n, &c)| crate::moments::falling(n, j) * c as f64)
        .sum();
    s / r as f64
}

/// Mean and variance of the particle count.
pub fn mean_var_of(hist: &[u64]) -> (f64, f64) {
    let r = hist.iter().sum::<u64>() as f64;
    let mean = hist.iter().enumerate().map(|(n, &c)| n as f64 * c as f64).sum::<f64>() / r;
    let var = hist
        .iter()
        .enumerate()
        .map(|(n, &c)| (n as f64 - mean).powi(2) * c as f64)
        .sum::<f64>()
        / r;
    (mean, var)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub config: EnsembleConfig,
    pub times: Vec<TimeSummary>,
}

impl EnsembleSummary {
    pub fn factorial_moment(&self, time_index: usize, j: usize) -> f64 {
        factorial_moment_of(&self.times[time_index].number_hist(), j)
    }

    pub fn mean_var(&self, time_index: usize) -> (f64, f64) {
        mean_var_of(&self.times[time_index].number_hist())
    }
}

/// `N0` i.i.d. masses from `f0`, drawn from the replica's initial stream.
pub fn sample_initial(config: &EnsembleConfig, replica_index: usize) -> Result<ParticleState> {
    if replica_index >= config.replicas {
        return Err(CoagError::InvalidConfig(format!(
            "replica index {replica_index} out of range for {} replicas",
            config.replicas
        )));
    }
    let sampler = config.f0.sampler()?;
    sample_with(&sampler, config, replica_index)
}

fn sample_with(sampler: &F0Sampler, config: &EnsembleConfig, replica_index: usize) -> Result<ParticleState> {
    let mut rng = initial_rng(config.seed, replica_index as u64);
    let masses = sampler.sample_iter(&mut rng).take(config.n0).collect();
    ParticleState::new(masses, config.volume)
}

/// Scratch space for binning one replica.
struct Binner {
    counts: Vec<u64>,
    touched: Vec<usize>,
}

impl Binner {
    fn record(&mut self, state: &ParticleState, grid: &MassGrid, order: usize, into: &mut BatchStats) {
        into.number_hist[state.len()] += 1;
        if order == 0 {
            return;
        }
        for &m in state.masses() {
            match grid.cell_of(m) {
                Some(c) => {
                    if self.counts[c] == 0 {
                        self.touched.push(c);
                    }
                    self.counts[c] += 1;
                }
                None => into.overflow += 1,
            }
        }
        self.touched.sort_unstable();
        let k = grid.n_cells();
        let occ: Vec<(usize, u64)> = self.touched.iter().map(|&c| (c, self.counts[c])).collect();
        for &(a, ca) in &occ {
            into.mass_hist[0][a] += ca;
        }
        if order >= 2 {
            for &(a, ca) in &occ {
                for &(b, cb) in &occ {
                    let pairs = ca * (cb - (a == b) as u64);
                    into.mass_hist[1][a * k + b] += pairs;
                }
            }
        }
        if order >= 3 {
            for &(a, ca) in &occ {
                for &(b, cb) in &occ {
                    let p2 = ca * (cb - (a == b) as u64);
                    if p2 == 0 {
                        continue;
                    }
                    for &(c, cc) in &occ {
                        let dup = (c == a) as u64 + (c == b) as u64;
                        if cc > dup {
                            into.mass_hist[2][(a * k + b) * k + c] += p2 * (cc - dup);
                        }
                    }
                }
            }
        }
        for &c in &self.touched {
            self.counts[c] = 0;
        }
        self.touched.clear();
    }
}

fn run_batch(config: &EnsembleConfig, sampler: &F0Sampler, range: std::ops::Range<usize>) -> Result<Vec<BatchStats>> {
    let k = config.hist_grid.n_cells();
    let mut stats: Vec<BatchStats> = config
        .output_times
        .iter()
        .map(|_| BatchStats::new(config.n0, k, config.hist_order))
        .collect();
    let mut binner = Binner { counts: vec![0; k], touched: Vec::new() };
    for r in range {
        let mut state = sample_with(sampler, config, r)?;
        let mut rng = dynamics_rng(config.seed, r as u64);
        for (slot, &t) in stats.iter_mut().zip(&config.output_times) {
            state.advance_to(t, &mut rng);
            slot.replicas += 1;
            binner.record(&state, &config.hist_grid, config.hist_order, slot);
        }
    }
    Ok(stats)
}

/// Simulates all replicas through every output time. Batches run in
/// parallel; the result does not depend on scheduling because every replica
/// owns its random streams and all statistics are integer counts.
pub fn run_ensemble(config: &EnsembleConfig) -> Result<EnsembleSummary> {
    config.validate()?;
    let sampler = config.f0.sampler()?;
    let b = config.effective_batches();
    let r = config.replicas;
    let per_batch: Vec<Vec<BatchStats>> = (0..b)
        .into_par_iter()
        .map(|i| run_batch(config, &sampler, (i * r / b)..((i + 1) * r / b)))
        .collect::<Result<_>>()?;
    let times = config
        .output_times
        .iter()
        .enumerate()
        .map(|(ti, &t)| TimeSummary {
            t,
            batches: per_batch.iter().map(|bs| bs[ti].clone()).collect(),
        })
        .collect();
    Ok(EnsembleSummary { config: config.clone(), times })
}

/// Standard deviation of a statistic of the number histogram over
/// replica-level bootstrap resamples.
pub fn bootstrap_number_sd<F>(hist: &[u64], resamples: usize, seed: u64, stat: F) -> Result<f64>
where
    F: Fn(&[u64]) -> f64,
{
    let weights: Vec<f64> = hist.iter().map(|&c| c as f64).collect();
    let r: u64 = hist.iter().sum();
    let alias = rand_distr::weighted::WeightedAliasIndex::new(weights)
        .map_err(|e| CoagError::InvalidConfig(format!("cannot resample histogram: {e}")))?;
    let mut rng = super::bootstrap_rng(seed);
    let mut values = Vec::with_capacity(resamples);
    let mut h = vec![0u64; hist.len()];
    for _ in 0..resamples {
        h.iter_mut().for_each(|c| *c = 0);
        for _ in 0..r {
            h[alias.sample(&mut rng)] += 1;
        }
        values.push(stat(&h));
    }
    Ok(sample_sd(&values))
}

/// Standard deviation of a statistic over batch-level bootstrap resamples.
/// `stat` receives the multiset of picked batch indices.
pub fn bootstrap_batches_sd<F>(n_batches: usize, resamples: usize, seed: u64, mut stat: F) -> f64
where
    F: FnMut(&[usize]) -> f64,
{
    let mut rng = super::bootstrap_rng(seed);
    let mut picks = vec![0usize; n_batches];
    let values: Vec<f64> = (0..resamples)
        .map(|_| {
            picks.iter_mut().for_each(|p| *p = rng.random_range(0..n_batches));
            stat(&picks)
        })
        .collect();
    sample_sd(&values)
}

pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(replicas: usize, times: Vec<f64>) -> EnsembleConfig {
        EnsembleConfig::new(6, 2.0, replicas, 11, times).with_histograms(MassGrid::new(8.0, 8).unwrap(), 3)
    }

    #[test]
    fn single_replica_at_time_zero() {
        let s = run_ensemble(&EnsembleConfig::new(10, 1.0, 1, 3, vec![0.0])).unwrap();
        let h = s.times[0].number_hist();
        assert_eq!(h[10], 1);
        assert_eq!(h.iter().sum::<u64>(), 1);
    }

    #[test]
    fn histograms_are_consistent() {
        let cfg = small(200, vec![0.0, 0.3, 1.0]);
        let s = run_ensemble(&cfg).unwrap();
        for ts in &s.times {
            let tot = ts.total();
            assert_eq!(tot.replicas, 200);
            assert_eq!(tot.number_hist.iter().sum::<u64>(), 200);
            let particles: u64 = tot.number_hist.iter().enumerate().map(|(n, c)| n as u64 * c).sum();
            let m1: u64 = tot.mass_hist[0].iter().sum::<u64>() + tot.overflow;
            assert_eq!(m1, particles);
            let pairs: u64 = tot.mass_hist[1].iter().sum();
            let m2 = factorial_moment_of(&tot.number_hist, 2) * 200.0;
            if tot.overflow == 0 {
                assert_eq!(pairs as f64, m2);
                let triples: u64 = tot.mass_hist[2].iter().sum();
                assert_eq!(triples as f64, factorial_moment_of(&tot.number_hist, 3) * 200.0);
            }
        }
    }

    #[test]
    fn pair_histogram_is_symmetric() {
        let s = run_ensemble(&small(100, vec![0.5])).unwrap();
        let h = &s.times[0].total().mass_hist[1];
        for a in 0..8 {
            for b in 0..8 {
                assert_eq!(h[a * 8 + b], h[b * 8 + a]);
            }
        }
    }

    #[test]
    fn deterministic_and_batch_layout_only_groups() {
        let cfg = small(123, vec![0.2, 0.7]);
        let a = run_ensemble(&cfg).unwrap();
        let b = run_ensemble(&cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.batches = 7;
        let c = run_ensemble(&other).unwrap();
        for (x, y) in a.times.iter().zip(&c.times) {
            assert_eq!(x.total(), y.total());
        }
    }

    #[test]
    fn guards() {
        let mut cfg = small(10, vec![0.0]);
        cfg.particle_budget = 59;
        assert!(matches!(run_ensemble(&cfg), Err(CoagError::Budget(_))));
        let mut cfg = small(10, vec![0.0]);
        cfg.histogram_budget = 100;
        assert!(matches!(run_ensemble(&cfg), Err(CoagError::Budget(_))));
        let mut cfg = small(10, vec![1.0, 0.5]);
        assert!(run_ensemble(&cfg).is_err());
        cfg.output_times = vec![0.0];
        cfg.hist_order = 4;
        assert!(run_ensemble(&cfg).is_err());
        assert!(sample_initial(&cfg, 10).is_err());
    }

    #[test]
    fn initial_sample_is_reproducible() {
        let cfg = small(5, vec![0.0]);
        let a = sample_initial(&cfg, 2).unwrap();
        let b = sample_initial(&cfg, 2).unwrap();
        let c = sample_initial(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 6);
        assert!(a.masses().iter().all(|&m| m > 0.0));
    }

    #[test]
    fn bootstrap_sd_of_mean() {
        let mut hist = vec![0u64; 3];
        hist[1] = 500;
        hist[2] = 500;
        let sd = bootstrap_number_sd(&hist, 400, 1, |h| mean_var_of(h).0).unwrap();
        // exact standard error 0.5 / sqrt(1000)
        assert!((sd / (0.5 / 1000f64.sqrt()) - 1.0).abs() < 0.2, "sd {sd}");
    }
}
