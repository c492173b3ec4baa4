use coag_core::bbgky::{
    correlation_from_pn, duhamel_series, explicit_pn_trajectory, hierarchy_residual, HierarchyTruncation,
    DEFAULT_SUBSTEPS,
};
use coag_core::marcus_lushnikov::F0Spec;
use coag_core::model::{tensor_product_with_limit, Field, MassGrid};
use coag_core::moments::death_chain_pn;
use coag_core::smoluchowski::solve_exact;

fn three_particles(grid: MassGrid) -> Field {
    let f0 = F0Spec::default().cell_average(grid);
    // P_N is normalized so that its integral over masses is N! times the probability
    tensor_product_with_limit(&f0, 3, 3).unwrap().scaled(6.0)
}

#[test]
fn finite_system_satisfies_the_hierarchy() {
    let grid = MassGrid::new(10.0, 40).unwrap();
    let states = explicit_pn_trajectory(&three_particles(grid), 1.0, &[0.24, 0.25, 0.26], DEFAULT_SUBSTEPS).unwrap();
    for j in 1..=2 {
        let r = hierarchy_residual(&states[0], &states[1], &states[2], j).unwrap();
        assert!(r < 5e-3, "j = {j}: residual {r}");
    }
}

#[test]
fn pn_stays_symmetric() {
    let grid = MassGrid::new(10.0, 30).unwrap();
    let states = explicit_pn_trajectory(&three_particles(grid), 2.0, &[0.5], DEFAULT_SUBSTEPS).unwrap();
    let s = &states[0];
    for n in 2..=3 {
        let p = s.p_n(n).unwrap();
        let scale = p.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for a in 0..n {
            for b in a + 1..n {
                assert!(p.symmetry_defect(a, b) <= 1e-12 * scale, "N = {n}, swap ({a}, {b})");
            }
        }
    }
}

#[test]
fn finite_system_number_law_and_first_correlation() {
    let grid = MassGrid::new(10.0, 40).unwrap();
    let s = &explicit_pn_trajectory(&three_particles(grid), 1.0, &[0.5], DEFAULT_SUBSTEPS).unwrap()[0];
    let law = death_chain_pn(3, 1.0, 0.5).unwrap();
    let mass = F0Spec::default().cell_average(grid).integral();
    for n in 1..=3 {
        // grid truncation removes a factor of the resolved mass per particle
        let want = law.p(n) * mass.powi(n as i32);
        assert!((s.probability(n) - want).abs() < 2e-3, "N = {n}");
    }
    let f1 = correlation_from_pn(s, 1).unwrap();
    let mean: f64 = (1..=3).map(|n| n as f64 * s.probability(n)).sum();
    assert!((f1.integral() - mean).abs() < 1e-12 * mean);
}

#[test]
fn short_series_tracks_the_pde() {
    let grid = MassGrid::new(40.0, 2000).unwrap();
    let f0 = F0Spec::default().cell_average(grid);
    let trunc = HierarchyTruncation::new(1, 12, 1.0, 0.25).unwrap();
    let g = duhamel_series(&trunc, &f0, 0.25).unwrap();
    let pde = solve_exact(&f0, 1e-3, &[0.25]).unwrap();
    let d = g.field.l1_distance(&pde.states[0].f).unwrap();
    assert!(d < 5e-3, "{d}");
    assert!(d <= g.tail_bound + 1e-12, "distance {d} above tail bound {}", g.tail_bound);
}

