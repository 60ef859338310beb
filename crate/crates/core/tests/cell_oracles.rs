mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use homoglab::cell::{solve_cell, CriticalTable, HomogenizedTensor, PeriodicConfig, Regime};
use homoglab::coeff::CoefficientField;
use homoglab::mesh::CellGrid;

fn family(name: &str, dim: usize) -> CoefficientField {
    CoefficientField::from_name(name, dim, &BTreeMap::new()).unwrap()
}

fn ahom(regime: Regime, name: &str, cg: CellGrid, param: Option<f64>) -> f64 {
    let f = family(name, cg.dim);
    solve_cell(regime, &f, cg, param, &PeriodicConfig::default())
        .unwrap()
        .homogenized_matrix(&f)
        .get(0, 0)
}

#[test]
fn layered_subcritical_is_the_harmonic_mean() {
    let got = ahom(Regime::Subcritical, "layered", CellGrid::new(1, 256, 4).unwrap(), None);
    assert!((got - 3f64.sqrt() / 4.0).abs() < 1e-3, "{got}");
    let discrete = common::harmonic_mean(&|y| (2.0 + (2.0 * PI * y).sin()) / 4.0, 256);
    assert!((got - discrete).abs() < 1e-12);
}

#[test]
fn coupled_family_regimes() {
    let cg = CellGrid::new(1, 64, 64).unwrap();
    let sup = ahom(Regime::Supercritical, "coupled", cg, None);
    assert!((sup - 0.5).abs() < 1e-6, "{sup}");
    let sub = ahom(Regime::Subcritical, "coupled", cg, None);
    let oracle = common::simpson(&|s| (4.0 - (2.0 * PI * s).sin().powi(2)).sqrt() / 4.0, 0.0, 1.0, 1e-13);
    assert!(sub < 0.5);
    assert!((sub - oracle).abs() < 1e-3, "{sub} vs {oracle}");
}

#[test]
fn two_dimensional_layers_keep_the_arithmetic_mean_along_the_layers() {
    let cg = CellGrid::new(2, 16, 2).unwrap();
    let f = family("layered", 2);
    let t = solve_cell(Regime::Subcritical, &f, cg, None, &PeriodicConfig::default())
        .unwrap()
        .homogenized_matrix(&f);
    assert!((t.get(1, 1) - 0.5).abs() < 1e-9, "{t:?}");
    assert!((t.get(0, 0) - 3f64.sqrt() / 4.0).abs() < 1e-3, "{t:?}");
    assert!(t.symmetry_defect() < 1e-12);
}

#[test]
fn critical_solver_matches_monolithic_space_time_oracle() {
    let cg = CellGrid::new(1, 32, 32).unwrap();
    let p: f64 = 0.5;
    let c = 1f64.powf(1.0 - p) / p;
    let f = family("coupled", 1);
    let sol = solve_cell(Regime::CriticalFde, &f, cg, Some(c), &PeriodicConfig::default()).unwrap();
    let got = sol.homogenized_matrix(&f).get(0, 0);
    let oracle = common::monolithic_critical_1d(&|y, s| (2.0 + (2.0 * PI * y).sin() * (2.0 * PI * s).sin()) / 4.0, 32, 32, c);
    assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
    assert!(sol.max_contraction() < 1.0);
    assert!(sol.max_period_defect() < 1e-8);

    let kappa = 2.0;
    let pme = solve_cell(Regime::CriticalPme, &f, cg, Some(kappa), &PeriodicConfig::default()).unwrap();
    let got = pme.homogenized_matrix(&f).get(0, 0);
    let oracle = common::monolithic_critical_1d(&|y, s| (2.0 + (2.0 * PI * y).sin() * (2.0 * PI * s).sin()) / 4.0, 32, 32, 1.0 / kappa);
    assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
}

#[test]
fn critical_with_s_independent_coefficient_is_elliptic() {
    let cg = CellGrid::new(1, 32, 16).unwrap();
    let elliptic = ahom(Regime::Subcritical, "layered", cg, None);
    for (regime, q) in [(Regime::CriticalFde, 2.0), (Regime::CriticalPme, 0.7)] {
        let got = ahom(regime, "layered", cg, Some(q));
        assert!((got - elliptic).abs() < 1e-6, "{regime:?}: {got} vs {elliptic}");
    }
}

#[test]
fn critical_table_limits_and_zero_branch() {
    let cg = CellGrid::new(1, 16, 16).unwrap();
    let f = family("coupled", 1);
    let cfg = PeriodicConfig::default();
    let t = CriticalTable::build(Regime::CriticalPme, &f, cg, 2.0, 1.0, &cfg).unwrap();
    // κ → 0 is the supercritical limit, the zero branch is ⟨a⟩
    let sup = solve_cell(Regime::Supercritical, &f, cg, None, &cfg).unwrap().homogenized_matrix(&f);
    assert!(t.tensors[0].max_abs_diff(&sup) < 1e-12);
    assert!((t.lookup(0.0).get(0, 0) - 0.5).abs() < 1e-12);
    assert!(t.lookup(5.0) == t.lookup(1.0));
    let direct = t.solve_direct(0.63).unwrap();
    assert!(direct.max_abs_diff(&t.lookup(0.63)) < 1e-3);
    for tensor in &t.tensors {
        assert!(tensor.rayleigh_range().0 >= f.lambda - 1e-12);
    }
}

#[test]
fn homogenized_tensor_regime_dispatch() {
    let cg = CellGrid::new(1, 16, 8).unwrap();
    let f = family("product", 1);
    let h = HomogenizedTensor::compute(Regime::Subcritical, &f, cg, 1.0, None, &PeriodicConfig::default()).unwrap();
    assert_eq!(h.regime(), Regime::Subcritical);
    assert!(HomogenizedTensor::compute(Regime::CriticalFde, &f, cg, 0.5, None, &PeriodicConfig::default()).is_err());
}
