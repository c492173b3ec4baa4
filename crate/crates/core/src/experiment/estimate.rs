use crate::error::{CoagError, Result};
use crate::marcus_lushnikov::{BatchStats, EnsembleSummary};
use crate::model::{Field, MassGrid};

/// Empirical `f_j / V^j`: ordered `j`-tuples of distinct particles per cell
/// tuple, averaged over replicas and divided by `(V h)^j`.
pub fn correlation_from_counts(stats: &BatchStats, grid: MassGrid, volume: f64, j: usize) -> Result<Field> {
    let hist = j
        .checked_sub(1)
        .and_then(|i| stats.mass_hist.get(i))
        .ok_or(CoagError::MissingOrder(j))?;
    if stats.replicas == 0 {
        return Err(CoagError::InvalidConfig("no replicas to average".into()));
    }
    let scale = 1.0 / (stats.replicas as f64 * (volume * grid.h()).powi(j as i32));
    Field::from_values(grid, j, hist.iter().map(|&c| c as f64 * scale).collect())
}

/// `correlation_from_counts` over all replicas at one output time.
pub fn estimate_correlation(summary: &EnsembleSummary, time_index: usize, j: usize) -> Result<Field> {
    let ts = summary
        .times
        .get(time_index)
        .ok_or_else(|| CoagError::InvalidConfig(format!("no output time with index {time_index}")))?;
    let cfg = &summary.config;
    correlation_from_counts(&ts.total(), cfg.hist_grid, cfg.volume, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marcus_lushnikov::{run_ensemble, EnsembleConfig};

    #[test]
    fn direct_count() {
        let g = MassGrid::new(4.0, 4).unwrap();
        let stats = BatchStats { replicas: 1, number_hist: vec![0, 0, 1], mass_hist: vec![vec![1, 1, 0, 0]], overflow: 0 };
        let f = correlation_from_counts(&stats, g, 1.0, 1).unwrap();
        assert_eq!(f.values(), &[1.0, 1.0, 0.0, 0.0]);
        assert!(matches!(correlation_from_counts(&stats, g, 1.0, 2), Err(CoagError::MissingOrder(2))));
    }

    #[test]
    fn norms_are_scaled_factorial_moments() {
        let cfg = EnsembleConfig::new(30, 20.0, 200, 3, vec![0.0, 1.0]).with_histograms(MassGrid::new(60.0, 30).unwrap(), 2);
        let s = run_ensemble(&cfg).unwrap();
        for ti in 0..2 {
            for j in 1..=2 {
                let f = estimate_correlation(&s, ti, j).unwrap();
                let want = s.factorial_moment(ti, j) / 20f64.powi(j as i32);
                assert!((f.integral() - want).abs() < 1e-12 * want);
            }
        }
    }
}
