use std::f64::consts::PI;

use homoglab::diffusion::{energy_balance, solve_eps, solve_hom, Data, ProblemSpec, StepperConfig};
use homoglab::mesh::{l2_norm, Centering, Field, MacroGrid};
use homoglab::coeff::CoefficientField;
use homoglab::{Error, Tensor};

fn final_error(spec: &ProblemSpec, exact: impl Fn([f64; 2], f64) -> f64) -> f64 {
    let traj = solve_hom(spec, &Tensor::identity(spec.grid.dim), &StepperConfig::default()).unwrap();
    let sg = spec.grid.spatial();
    let t = spec.grid.horizon;
    let u = traj.u.last().unwrap();
    let ex = Field::from_fn(sg, Centering::Node, |x| exact(x, t)).unwrap();
    let diff: Vec<f64> = u.iter().zip(&ex.values).map(|(a, b)| a - b).collect();
    l2_norm(&Field::new(sg, Centering::Node, diff).unwrap(), None).unwrap()
}

#[test]
fn linear_heat_matches_exponential_decay() {
    for (nx, nt) in [(16, 16), (32, 32), (32, 128)] {
        let grid = MacroGrid::new(1, nx, nt, 1.0, 0.1).unwrap();
        let spec = ProblemSpec {
            p: 1.0,
            r: 1.0,
            epsilon: None,
            grid,
            initial: Data::closed("sin(pi x)", |x, _| (PI * x[0]).sin()),
            forcing: Data::Zero,
        };
        let err = final_error(&spec, |x, t| (-PI * PI * t).exp() * (PI * x[0]).sin());
        let bound = 5.0 * (grid.h().powi(2) + grid.tau());
        assert!(err <= bound, "nx = {nx}: {err} > {bound}");
    }
}

fn pme_spec(nx: usize) -> ProblemSpec {
    // u = e^{-t} sin(πx), v = u², f = u_t − v_xx
    let grid = MacroGrid::new(1, nx, nx * nx / 4, 1.0, 0.25).unwrap();
    ProblemSpec {
        p: 2.0,
        r: 1.0,
        epsilon: None,
        grid,
        initial: Data::closed("sin(pi x)", |x, _| (PI * x[0]).sin()),
        forcing: Data::closed("manufactured", |x, t| {
            -(-t).exp() * (PI * x[0]).sin() - (-2.0 * t).exp() * 2.0 * PI * PI * (2.0 * PI * x[0]).cos()
        }),
    }
}

#[test]
fn manufactured_porous_medium_converges_at_second_order_in_space() {
    let exact = |x: [f64; 2], t: f64| (-t).exp() * (PI * x[0]).sin();
    let e1 = final_error(&pme_spec(16), exact);
    let e2 = final_error(&pme_spec(32), exact);
    let order = (e1 / e2).log2();
    assert!(order >= 1.5, "errors {e1}, {e2}, order {order}");
}

#[test]
fn energy_balance_improves_with_time_step() {
    let mut defects = Vec::new();
    for nt in [16, 64] {
        let grid = MacroGrid::new(1, 32, nt, 1.0, 0.1).unwrap();
        let spec = ProblemSpec {
            p: 2.0,
            r: 1.0,
            epsilon: None,
            grid,
            initial: Data::closed("sin(pi x)", |x, _| (PI * x[0]).sin()),
            forcing: Data::Zero,
        };
        let a = Tensor::identity(1);
        let traj = solve_hom(&spec, &a, &StepperConfig::default()).unwrap();
        defects.push(energy_balance(&traj, &a).unwrap().relative_defect());
    }
    assert!(defects[1] < defects[0], "{defects:?}");
}

#[test]
fn unresolved_epsilon_is_rejected_with_the_resolution_rule() {
    let grid = MacroGrid::new(1, 16, 16, 1.0, 0.1).unwrap();
    let spec = ProblemSpec {
        p: 1.0,
        r: 1.0,
        epsilon: Some(0.125),
        grid,
        initial: Data::Zero,
        forcing: Data::Zero,
    };
    let f = CoefficientField::identity(1);
    match solve_eps(&spec, &f, &StepperConfig::default()) {
        Err(Error::Config(msg)) => assert!(msg.contains("h ≤"), "{msg}"),
        other => panic!("expected a configuration error, got {other:?}"),
    }
}

#[test]
fn fast_diffusion_keeps_sign_and_decays() {
    let grid = MacroGrid::new(1, 32, 40, 1.0, 0.05).unwrap();
    let spec = ProblemSpec {
        p: 0.5,
        r: 1.0,
        epsilon: None,
        grid,
        initial: Data::closed("sin(pi x)", |x, _| (PI * x[0]).sin()),
        forcing: Data::Zero,
    };
    let traj = solve_hom(&spec, &Tensor::identity(1), &StepperConfig::default()).unwrap();
    let mass = |u: &[f64]| u.iter().sum::<f64>();
    assert!(traj.u.iter().flatten().all(|u| *u >= -1e-12));
    assert!(mass(traj.u.last().unwrap()) < mass(&traj.u[0]));
    assert!(traj.residuals.iter().all(|r| *r <= 1e-9));
}
