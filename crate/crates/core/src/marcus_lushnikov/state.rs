use rand::Rng;
use rand_distr::Exp1;

use crate::error::{CoagError, Result};

/// One replica of the coalescing system.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    masses: Vec<f64>,
    t: f64,
    volume: f64,
    total_mass: f64,
}

impl ParticleState {
    pub fn new(masses: Vec<f64>, volume: f64) -> Result<Self> {
        if masses.is_empty() {
            return Err(CoagError::InvalidConfig("a replica needs at least one particle".into()));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(CoagError::InvalidConfig("particle masses must be positive and finite".into()));
        }
        if !(volume.is_finite() && volume > 0.0) {
            return Err(CoagError::InvalidConfig(format!("volume must be positive, got {volume}")));
        }
        let total_mass = masses.iter().sum();
        Ok(Self { masses, t: 0.0, volume, total_mass })
    }

    #[inline]
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    #[inline]
    pub fn t(&self) -> f64 {
        self.t
    }

    #[inline]
    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Sum of the initial masses; merging never changes it.
    #[inline]
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Total coalescence rate `N (N - 1) / (2V)`.
    #[inline]
    pub fn rate(&self) -> f64 {
        let n = self.masses.len() as f64;
        n * (n - 1.0) / (2.0 * self.volume)
    }

    /// Runs the jump process up to `t_target` and returns the number of
    /// merges. Each unordered pair fires at rate `1/V`. An exponential
    /// waiting time that overshoots `t_target` is discarded; by memorylessness
    /// the next call may redraw it without bias.
    pub fn advance_to<R: Rng + ?Sized>(&mut self, t_target: f64, rng: &mut R) -> usize {
        debug_assert!(t_target >= self.t);
        let mut merges = 0;
        while self.masses.len() >= 2 {
            let wait: f64 = rng.sample::<f64, _>(Exp1) / self.rate();
            if self.t + wait > t_target {
                break;
            }
            self.t += wait;
            self.merge_random_pair(rng);
            merges += 1;
        }
        self.t = self.t.max(t_target);
        merges
    }

    fn merge_random_pair<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.masses.len();
        let i = rng.random_range(0..n);
        let j = loop {
            let j = rng.random_range(0..n);
            if j != i {
                break j;
            }
        };
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let m = self.masses.swap_remove(hi);
        self.masses[lo] += m;
    }
}
