use crate::error::{CoagError, Result};
use crate::model::field::tensor_len;
use crate::model::Field;

/// `sum_l` of the split convolution of coordinate `l` against the last
/// coordinate, for `l = 1..N`, together with the number of merged pairs that
/// left the grid (as a discrete integral).
pub(crate) fn pair_gain(q: &Field) -> Result<(Field, f64)> {
    let order = q.order();
    if order < 2 {
        return Err(CoagError::InvalidConfig("the gain operator needs a field of order at least 2".into()));
    }
    let grid = *q.grid();
    let n = grid.n_cells();
    let h = grid.h();
    let out_order = order - 1;
    let out_len = tensor_len(n, out_order)?;
    let mut out = vec![0.0; out_len];
    let vals = q.values();
    let mut diag = vec![0.0; n];
    let mut leak_pairs = 0.0;

    for l in 0..out_order {
        // output index = (outer, k_l, inner); input adds the last coordinate
        let inner = n.pow((out_order - 1 - l) as u32);
        let outer = n.pow(l as u32);
        for o in 0..outer {
            for r in 0..inner {
                diag.iter_mut().for_each(|c| *c = 0.0);
                let mut total = 0.0;
                for i in 0..n {
                    let base = ((o * n + i) * inner + r) * n;
                    let row = &vals[base..base + n];
                    total += row.iter().sum::<f64>();
                    for (c, v) in diag[i..].iter_mut().zip(row) {
                        *c += v;
                    }
                }
                let inside: f64 = diag[..n - 1].iter().sum::<f64>() + 0.5 * diag[n - 1];
                leak_pairs += total - inside;
                let mut prev = 0.0;
                for (k, &c) in diag.iter().enumerate() {
                    out[(o * n + k) * inner + r] += 0.5 * h * (prev + c);
                    prev = c;
                }
            }
        }
    }
    let leak = leak_pairs * h.powi(order as i32);
    Ok((Field::from_values(grid, out_order, out)?, leak))
}

/// Gain operator `G_N[Q]` with its truncation leak.
#[derive(Debug, Clone)]
pub struct Gain {
    pub field: Field,
    /// Discrete integral of the gain that fell beyond `m_max`.
    pub leak: f64,
}

/// `G_N[Q](m_1..m_N) = 1/(2V) sum_l int_0^{m_l} Q(.., m_l - mu, .., mu) dmu`
/// for `Q` of order `N + 1`.
pub fn gain_operator(q: &Field, volume: f64) -> Result<Gain> {
    check_volume(volume)?;
    let (g, leak) = pair_gain(q)?;
    let s = 1.0 / (2.0 * volume);
    Ok(Gain { field: g.scaled(s), leak: leak * s })
}

/// `W_j[phi] = V G_j[phi] - j int phi(.., mu) dmu` for `phi` of order `j + 1`.
pub fn w_operator(phi: &Field, j: usize) -> Result<Field> {
    if phi.order() != j + 1 {
        return Err(CoagError::OrderMismatch { left: phi.order(), right: j + 1 });
    }
    let (g, _) = pair_gain(phi)?;
    let marginal = phi.marginal_last(1)?;
    let mut out = g.scaled(0.5);
    out.axpy(-(j as f64), &marginal);
    Ok(out)
}

fn check_volume(volume: f64) -> Result<()> {
    if !(volume.is_finite() && volume > 0.0) {
        return Err(CoagError::InvalidConfig(format!("volume must be positive, got {volume}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{convolve_lower, tensor_product, MassGrid};
    use proptest::prelude::*;

    #[test]
    fn zero_maps_to_zero() {
        let g = MassGrid::new(4.0, 6).unwrap();
        let z = Field::zeros(g, 3).unwrap();
        let out = gain_operator(&z, 2.0).unwrap();
        assert_eq!(out.field.order(), 2);
        assert!(out.field.values().iter().all(|&v| v == 0.0));
        assert!(w_operator(&z, 2).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn order_two_is_half_the_convolution() {
        let g = MassGrid::new(40.0, 800).unwrap();
        let f = Field::from_fn(g, |m| (-m).exp());
        let q = tensor_product(&f, 2).unwrap();
        let out = gain_operator(&q, 1.0).unwrap().field;
        let conv = convolve_lower(&f, &f).unwrap();
        assert!(out.sup_distance(&conv.scaled(0.5)).unwrap() < 1e-13);
        let err = (0..800)
            .map(|k| (out.values()[k] - 0.5 * g.node(k) * (-g.node(k)).exp()).abs())
            .fold(0.0, f64::max);
        assert!(err < 5.0 * g.h());
        let w = w_operator(&q, 1).unwrap();
        let want = Field::from_fn(g, |m| 0.5 * m * (-m).exp() - (-m).exp());
        assert!(w.sup_distance(&want).unwrap() < 5.0 * g.h());
    }

    #[test]
    fn matches_brute_force_on_order_three() {
        let g = MassGrid::new(3.0, 5).unwrap();
        let vals: Vec<f64> = (0..125).map(|i| ((i * 37 % 17) as f64) / 7.0).collect();
        let q = Field::from_values(g, 3, vals).unwrap();
        let out = gain_operator(&q, 0.5).unwrap().field;
        let h = g.h();
        for a in 0..5 {
            for b in 0..5 {
                let mut want = 0.0;
                // coordinate 0 against the last
                for i in 0..5 {
                    for ip in 0..5 {
                        let w = if i + ip == a { 0.5 } else if i + ip + 1 == a { 0.5 } else { 0.0 };
                        want += w * h * q.at(&[i, b, ip]);
                    }
                }
                for i in 0..5 {
                    for ip in 0..5 {
                        let w = if i + ip == b { 0.5 } else if i + ip + 1 == b { 0.5 } else { 0.0 };
                        want += w * h * q.at(&[a, i, ip]);
                    }
                }
                want /= 2.0 * 0.5;
                assert!((out.at(&[a, b]) - want).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn norm_identity_up_to_leak(vals in prop::collection::vec(0.0f64..1.0, 216), v in 0.1f64..10.0) {
            let g = MassGrid::new(2.0, 6).unwrap();
            let q = Field::from_values(g, 3, vals).unwrap();
            let out = gain_operator(&q, v).unwrap();
            let want = 2.0 / (2.0 * v) * q.l1_norm();
            prop_assert!((out.field.l1_norm() + out.leak - want).abs() <= 1e-12 * want);
        }

        #[test]
        fn gain_preserves_symmetry(vals in prop::collection::vec(0.0f64..1.0, 6)) {
            let g = MassGrid::new(2.0, 6).unwrap();
            let f = Field::from_values(g, 1, vals).unwrap();
            let q = tensor_product(&f, 3).unwrap();
            let out = gain_operator(&q, 1.0).unwrap().field;
            prop_assert!(out.symmetry_defect(0, 1) < 1e-14);
        }
    }
}
