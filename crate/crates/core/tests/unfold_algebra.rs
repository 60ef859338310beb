use homoglab::mesh::{MacroGrid, SpaceTimeField};
use homoglab::unfold::{average, integral_identity_defect, norm_identity, unfold, EpsilonGeometry, UnfoldedField};
use proptest::prelude::*;

// h = 1/32, τ = 1/64; L and T are not multiples of ε so Λ_ε is non-empty.
fn geometry(eps: f64) -> EpsilonGeometry {
    let grid = MacroGrid::new(1, 36, 36, 36.0 / 32.0, 36.0 / 64.0).unwrap();
    EpsilonGeometry::new(eps, 1.0, grid).unwrap()
}

fn field(g: &EpsilonGeometry, vals: &[f64]) -> SpaceTimeField {
    let mut w = SpaceTimeField::zeros(g.grid, 1);
    let n = w.values.len();
    w.values.copy_from_slice(&vals[..n]);
    w
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

const N: usize = 36 * 36;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unfolding_is_linear_and_multiplicative(
        a in prop::collection::vec(-2.0f64..2.0, N),
        b in prop::collection::vec(-2.0f64..2.0, N),
        alpha in -3.0f64..3.0,
        eps_pick in 0usize..2,
    ) {
        let g = geometry([0.25, 0.125][eps_pick]);
        let (wa, wb) = (field(&g, &a), field(&g, &b));
        let ta = unfold(&wa, &g).unwrap();
        let tb = unfold(&wb, &g).unwrap();
        let comb: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + y).collect();
        let lhs = unfold(&field(&g, &comb), &g).unwrap();
        let rhs = ta.zip_with(&tb, |x, y| alpha * x + y).unwrap();
        prop_assert!(rel(&lhs.values, &rhs.values) <= 1e-12);

        let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let lhs = unfold(&field(&g, &prod), &g).unwrap();
        let rhs = ta.zip_with(&tb, |x, y| x * y).unwrap();
        prop_assert!(rel(&lhs.values, &rhs.values) <= 1e-12);

        let pow: Vec<f64> = a.iter().map(|x| x.abs().powf(1.7)).collect();
        let lhs = unfold(&field(&g, &pow), &g).unwrap();
        let rhs = ta.map(|x| x.abs().powf(1.7));
        prop_assert!(rel(&lhs.values, &rhs.values) <= 1e-12);
    }

    #[test]
    fn integral_and_norm_identities(a in prop::collection::vec(-2.0f64..2.0, N), eps_pick in 0usize..2) {
        let g = geometry([0.25, 0.125][eps_pick]);
        let w = field(&g, &a);
        let scale: f64 = a.iter().map(|x| x.abs()).sum::<f64>() * g.grid.h() * g.grid.tau();
        prop_assert!(integral_identity_defect(&w, &g).unwrap() <= 1e-12 * scale.max(1e-300));
        prop_assert!(norm_identity(&w, &g).unwrap().relative_defect() <= 1e-12);
    }

    #[test]
    fn averaging_is_adjoint_and_left_inverse(
        a in prop::collection::vec(-2.0f64..2.0, N),
        psi_vals in prop::collection::vec(-2.0f64..2.0, 4096),
        eps_pick in 0usize..2,
    ) {
        let g = geometry([0.25, 0.125][eps_pick]);
        let w = field(&g, &a);
        let t = unfold(&w, &g).unwrap();
        let mut psi = UnfoldedField::zeros(&g, 1);
        let n = psi.values.len();
        prop_assert!(n <= psi_vals.len());
        psi.values.copy_from_slice(&psi_vals[..n]);

        let lhs: f64 = t.values.iter().zip(&psi.values).map(|(x, y)| x * y).sum::<f64>() * g.unfolded_weight();
        let u = average(&psi, &g).unwrap();
        let rhs: f64 = w.values.iter().zip(&u.values).map(|(x, y)| x * y).sum::<f64>() * g.grid.h() * g.grid.tau();
        let scale: f64 = w.values.iter().zip(&u.values).map(|(x, y)| (x * y).abs()).sum::<f64>() * g.grid.h() * g.grid.tau();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1e-300));

        let back = average(&t, &g).unwrap();
        for (i, (b, orig)) in back.values.iter().zip(&w.values).enumerate() {
            let expect = if g.lambda_mask[i] { 0.0 } else { *orig };
            prop_assert_eq!(*b, expect);
        }
    }
}

#[test]
fn boundary_layer_is_nonempty_on_this_grid() {
    for eps in [0.25, 0.125] {
        let g = geometry(eps);
        assert!(g.lambda_mask.iter().any(|&b| b));
        assert!(g.lambda_mask.iter().any(|&b| !b));
        assert!(g.lambda_measure() > 0.0);
    }
}
