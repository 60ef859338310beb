mod common;

use homoglab::linalg::{solve_spd, Constraint, CsrMatrix, SolverConfig};
use homoglab::mesh::{SpatialGrid, StiffnessAssembler, Topology};
use homoglab::Tensor;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn to_dense(a: &CsrMatrix) -> DMatrix<f64> {
    let n = a.n();
    DMatrix::from_fn(n, n, |i, j| a.get(i, j))
}

#[test]
fn dirichlet_laplacian_matches_dense_oracle() {
    let coeffs: Vec<f64> = (0..24).map(|c| 1.0 + 0.5 * ((c as f64) * 0.7).sin()).collect();
    let grid = SpatialGrid {
        dim: 1,
        n: 24,
        length: 1.0,
        periodic: false,
    };
    let topo = Topology::new(grid);
    let asm = StiffnessAssembler::new(&topo).unwrap();
    let k = asm.assemble(&|c| Tensor::scalar(1, coeffs[c]));
    let dense = common::dense_stiffness_1d(&coeffs);
    assert!((to_dense(&k) - &dense).abs().max() < 1e-12);

    let b: Vec<f64> = (0..k.n()).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
    let cfg = SolverConfig {
        tolerance: 1e-13,
        ..SolverConfig::default()
    };
    let x = solve_spd(&k, &b, &cfg, Constraint::None).unwrap().x;
    let oracle = dense.cholesky().unwrap().solve(&DVector::from_vec(b));
    for (a, o) in x.iter().zip(oracle.iter()) {
        assert!((a - o).abs() < 1e-9 * o.abs().max(1.0));
    }
}

#[test]
fn periodic_laplacian_solution_matches_pseudoinverse() {
    let grid = SpatialGrid {
        dim: 2,
        n: 6,
        length: 1.0,
        periodic: true,
    };
    let topo = Topology::new(grid);
    let asm = StiffnessAssembler::new(&topo).unwrap();
    let k = asm.assemble(&|c| Tensor::from_row_major(2, &[2.0 + (c % 3) as f64, 0.3, 0.3, 1.0]));
    let n = k.n();
    let b: Vec<f64> = (0..n).map(|i| ((i as f64) * 1.3).cos()).collect();
    let cfg = SolverConfig {
        tolerance: 1e-13,
        ..SolverConfig::default()
    };
    let x = solve_spd(&k, &b, &cfg, Constraint::ZeroMean).unwrap().x;
    let mean_b = b.iter().sum::<f64>() / n as f64;
    let bp = DVector::from_iterator(n, b.iter().map(|v| v - mean_b));
    let pinv = to_dense(&k).pseudo_inverse(1e-10).unwrap();
    let oracle = pinv * bp;
    let mean_x = x.iter().sum::<f64>() / n as f64;
    assert!(mean_x.abs() < 1e-12);
    for (a, o) in x.iter().zip(oracle.iter()) {
        assert!((a - o).abs() < 1e-8, "{a} vs {o}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stiffness_is_symmetric_and_annihilates_constants(vals in prop::collection::vec(0.5f64..3.0, 32)) {
        let grid = SpatialGrid { dim: 2, n: 4, length: 2.0, periodic: true };
        let topo = Topology::new(grid);
        let asm = StiffnessAssembler::new(&topo).unwrap();
        let k = asm.assemble(&|c| Tensor::scalar(2, vals[c]));
        prop_assert!(k.symmetry_defect() < 1e-14);
        let ones = vec![1.0; k.n()];
        let y = k.mul_vec(&ones);
        prop_assert!(y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn cg_residual_is_small_for_random_spd(diag in prop::collection::vec(1.0f64..5.0, 20), b in prop::collection::vec(-1.0f64..1.0, 20)) {
        let mut trips = Vec::new();
        for i in 0..20 {
            trips.push((i, i, diag[i] + 2.0));
            if i + 1 < 20 {
                trips.push((i, i + 1, -0.9));
                trips.push((i + 1, i, -0.9));
            }
        }
        let a = CsrMatrix::from_triplets(20, &trips, true).unwrap();
        let sol = solve_spd(&a, &b, &SolverConfig { tolerance: 1e-12, ..SolverConfig::default() }, Constraint::None).unwrap();
        let oracle = to_dense(&a).lu().solve(&DVector::from_vec(b.clone())).unwrap();
        for (x, o) in sol.x.iter().zip(oracle.iter()) {
            prop_assert!((x - o).abs() < 1e-9);
        }
    }
}
