//! Acceptance gate: runs the eight criteria and prints one line each.
//! Exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use homoglab::cell::{solve_cell, solve_cp_critical_pme, CriticalTable, PeriodicConfig, Regime, TableWeights};
use homoglab::coeff::CoefficientField;
use homoglab::corrector::{run_study, CorrectorReport, StudyConfig};
use homoglab::diffusion::{solve_hom, Data, ProblemSpec, StepperConfig};
use homoglab::mesh::{l2_norm, CellGrid, Centering, Field, MacroGrid, SpaceTimeField};
use homoglab::unfold::{average, integral_identity_defect, norm_identity, unfold, EpsilonGeometry, UnfoldedField};
use homoglab::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn family(name: &str) -> CoefficientField {
    CoefficientField::from_name(name, 1, &BTreeMap::new()).unwrap()
}

fn study(name: &str, fam: &str, p: f64, r: f64, epsilons: Vec<f64>, initial: Data) -> StudyConfig {
    StudyConfig {
        name: name.into(),
        p,
        r,
        dim: 1,
        domain_length: 1.0,
        horizon: 0.25,
        epsilons,
        cells_per_period: 16,
        steps_per_period: 16,
        coefficient: family(fam),
        initial,
        forcing: Data::Zero,
        stepper: StepperConfig::default(),
        periodic: PeriodicConfig::default(),
        compare_regimes: Vec::new(),
        spot_checks: 5,
        seed: 2024,
    }
}

fn sine() -> Data {
    Data::closed("sin(pi x)", |x, _| (PI * x[0]).sin())
}

fn layered_linear() -> StudyConfig {
    study("layered-linear", "layered", 1.0, 1.0, vec![0.25, 0.125, 0.0625], sine())
}

fn critical_pme() -> StudyConfig {
    study(
        "critical-pme",
        "coupled",
        2.0,
        2.0,
        vec![0.25, 0.125],
        Data::closed("max(sin(2 pi x), 0)", |x, _| (2.0 * PI * x[0]).sin().max(0.0)),
    )
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn rel_max(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn unfolding_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    // partial cover in space and time so Λ_ε is non-empty
    let grid = MacroGrid::new(1, 36, 36, 36.0 / 32.0, 36.0 / 64.0).unwrap();
    for eps in [0.25, 0.125] {
        let g = EpsilonGeometry::new(eps, 1.0, grid).unwrap();
        for _ in 0..20 {
            let mut w = SpaceTimeField::zeros(grid, 1);
            let mut v = SpaceTimeField::zeros(grid, 1);
            w.values.iter_mut().for_each(|x| *x = rng.gen_range(-2.0..2.0));
            v.values.iter_mut().for_each(|x| *x = rng.gen_range(-2.0..2.0));
            let alpha: f64 = rng.gen_range(-3.0..3.0);
            let (tw, tv) = (unfold(&w, &g).unwrap(), unfold(&v, &g).unwrap());
            let map = |f: &dyn Fn(f64, f64) -> f64| {
                let mut out = w.clone();
                for (o, b) in out.values.iter_mut().zip(&v.values) {
                    *o = f(*o, *b);
                }
                unfold(&out, &g).unwrap()
            };
            let lin = map(&|a, b| alpha * a + b);
            worst = worst.max(rel_max(&lin.values, &tw.zip_with(&tv, |a, b| alpha * a + b).unwrap().values));
            let prod = map(&|a, b| a * b);
            worst = worst.max(rel_max(&prod.values, &tw.zip_with(&tv, |a, b| a * b).unwrap().values));
            let pow = map(&|a, _| a.abs().powf(2.5));
            worst = worst.max(rel_max(&pow.values, &tw.map(|a| a.abs().powf(2.5)).values));

            let scale = w.values.iter().map(|x| x.abs()).sum::<f64>() * grid.h() * grid.tau();
            worst = worst.max(integral_identity_defect(&w, &g).unwrap() / scale);
            worst = worst.max(norm_identity(&w, &g).unwrap().relative_defect());

            let mut psi = UnfoldedField::zeros(&g, 1);
            psi.values.iter_mut().for_each(|x| *x = rng.gen_range(-2.0..2.0));
            let lhs: f64 = tw.values.iter().zip(&psi.values).map(|(a, b)| a * b).sum::<f64>() * g.unfolded_weight();
            let u = average(&psi, &g).unwrap();
            let terms: Vec<f64> = w.values.iter().zip(&u.values).map(|(a, b)| a * b).collect();
            let rhs = terms.iter().sum::<f64>() * grid.h() * grid.tau();
            let scale = terms.iter().map(|t| t.abs()).sum::<f64>() * grid.h() * grid.tau();
            worst = worst.max((lhs - rhs).abs() / scale);

            let back = average(&tw, &g).unwrap();
            let expect: Vec<f64> = w
                .values
                .iter()
                .zip(&g.lambda_mask)
                .map(|(x, &lam)| if lam { 0.0 } else { *x })
                .collect();
            worst = worst.max(rel_max(&back.values, &expect));
        }
    }
    outcome(worst <= 1e-12, format!("max relative defect {worst:.2e}"))
}

fn homogenized_matrix_oracles() -> Outcome {
    let cfg = PeriodicConfig::default();
    let layered = family("layered");
    let a1 = solve_cell(Regime::Subcritical, &layered, CellGrid::new(1, 256, 4).unwrap(), None, &cfg)
        .unwrap()
        .homogenized_matrix(&layered)
        .get(0, 0);
    let coupled = family("coupled");
    let cg = CellGrid::new(1, 64, 64).unwrap();
    let sup = solve_cell(Regime::Supercritical, &coupled, cg, None, &cfg).unwrap().homogenized_matrix(&coupled).get(0, 0);
    let sub = solve_cell(Regime::Subcritical, &coupled, cg, None, &cfg).unwrap().homogenized_matrix(&coupled).get(0, 0);
    let oracle = common::simpson(&|s| (4.0 - (2.0 * PI * s).sin().powi(2)).sqrt() / 4.0, 0.0, 1.0, 1e-13);
    let pass = approx::abs_diff_eq!(a1, 3f64.sqrt() / 4.0, epsilon = 1e-3)
        && approx::abs_diff_eq!(sup, 0.5, epsilon = 1e-6)
        && sub < 0.5
        && approx::abs_diff_eq!(sub, oracle, epsilon = 1e-3);
    outcome(
        pass,
        format!("layered {a1:.6} (√3/4 = {:.6}), coupled sup {sup:.8}, sub {sub:.6} vs quadrature {oracle:.6}", 3f64.sqrt() / 4.0),
    )
}

fn critical_cell_solver() -> Outcome {
    let cfg = PeriodicConfig::default();
    let layered = family("layered");
    let cg = CellGrid::new(1, 32, 16).unwrap();
    let elliptic = solve_cell(Regime::Subcritical, &layered, cg, None, &cfg).unwrap().homogenized_matrix(&layered).get(0, 0);
    let mut reduce: f64 = 0.0;
    for (regime, q) in [(Regime::CriticalFde, 2.0), (Regime::CriticalPme, 0.7)] {
        let got = solve_cell(regime, &layered, cg, Some(q), &cfg).unwrap().homogenized_matrix(&layered).get(0, 0);
        reduce = reduce.max((got - elliptic).abs());
    }
    let coupled = family("coupled");
    let cg = CellGrid::new(1, 32, 32).unwrap();
    let c = 2.0; // |u₀|^{1−p}/p at u₀ = 1, p = 1/2
    let sol = solve_cell(Regime::CriticalFde, &coupled, cg, Some(c), &cfg).unwrap();
    let got = sol.homogenized_matrix(&coupled).get(0, 0);
    let oracle = common::monolithic_critical_1d(&|y, s| (2.0 + (2.0 * PI * y).sin() * (2.0 * PI * s).sin()) / 4.0, 32, 32, c);
    let mono = (got - oracle).abs();
    let table = CriticalTable::build(Regime::CriticalPme, &coupled, CellGrid::new(1, 16, 16).unwrap(), 2.0, 1.0, &cfg).unwrap();
    let contraction = sol.max_contraction().max(table.max_contraction());
    outcome(
        reduce <= 1e-6 && mono <= 1e-6 && contraction < 1.0,
        format!("s-independent reduction {reduce:.1e}, monolithic oracle {mono:.1e}, max contraction {contraction:.3}"),
    )
}

fn final_l2_error(spec: &ProblemSpec, exact: impl Fn([f64; 2], f64) -> f64) -> f64 {
    let traj = solve_hom(spec, &Tensor::identity(1), &StepperConfig::default()).unwrap();
    let sg = spec.grid.spatial();
    let ex = Field::from_fn(sg, Centering::Node, |x| exact(x, spec.grid.horizon)).unwrap();
    let diff = traj.u.last().unwrap().iter().zip(&ex.values).map(|(a, b)| a - b).collect();
    l2_norm(&Field::new(sg, Centering::Node, diff).unwrap(), None).unwrap()
}

fn solver_verification() -> Outcome {
    let grid = MacroGrid::new(1, 32, 32, 1.0, 0.1).unwrap();
    let heat = ProblemSpec {
        p: 1.0,
        r: 1.0,
        epsilon: None,
        grid,
        initial: sine(),
        forcing: Data::Zero,
    };
    let heat_err = final_l2_error(&heat, |x, t| (-PI * PI * t).exp() * (PI * x[0]).sin());
    let heat_bound = 5.0 * (grid.h().powi(2) + grid.tau());
    let pme = |nx: usize| ProblemSpec {
        p: 2.0,
        r: 1.0,
        epsilon: None,
        grid: MacroGrid::new(1, nx, nx * nx / 4, 1.0, 0.25).unwrap(),
        initial: sine(),
        forcing: Data::closed("manufactured", |x, t| {
            -(-t).exp() * (PI * x[0]).sin() - (-2.0 * t).exp() * 2.0 * PI * PI * (2.0 * PI * x[0]).cos()
        }),
    };
    let exact = |x: [f64; 2], t: f64| (-t).exp() * (PI * x[0]).sin();
    let (e1, e2) = (final_l2_error(&pme(16), exact), final_l2_error(&pme(32), exact));
    let order = (e1 / e2).log2();
    outcome(
        heat_err <= heat_bound && order >= 1.5,
        format!("heat error {heat_err:.2e} ≤ {heat_bound:.2e}; PME errors {e1:.2e} → {e2:.2e}, order {order:.2}"),
    )
}

fn metric(report: &CorrectorReport, f: impl Fn(&homoglab::corrector::CorrectorMetrics) -> f64) -> Vec<f64> {
    report.completed().map(|(_, m)| f(m)).collect()
}

fn corrector_convergence(report: &CorrectorReport) -> Outcome {
    let grad = metric(report, |m| m.e_grad);
    let naive = metric(report, |m| m.e_naive);
    let complete = grad.len() == 3;
    let pass = complete && strictly_decreasing(&grad) && grad[2] < 0.5 * grad[0] && naive[2] > 0.5 * naive[0];
    outcome(pass, format!("E_grad {grad:.4?}, E_naive {naive:.4?}"))
}

fn domination(reports: &[CorrectorReport]) -> Outcome {
    let mut failures = Vec::new();
    let mut worst_c: f64 = 0.0;
    for r in reports {
        failures.extend(r.domination_failures().into_iter().map(|f| format!("{}: {f}", r.name)));
        worst_c = worst_c.max(metric(r, |m| m.dt_constant).into_iter().fold(0.0, f64::max));
    }
    let runs: usize = reports.iter().map(|r| r.completed().count()).sum();
    outcome(
        failures.is_empty() && runs > 0,
        format!("{runs} ε-runs over {} studies, largest C = {worst_c:.2e}{}", reports.len(), if failures.is_empty() { String::new() } else { format!("; {failures:?}") }),
    )
}

fn critical_pme_end_to_end(report: &CorrectorReport) -> Outcome {
    let grad = metric(report, |m| m.e_grad);
    let rayleigh = metric(report, |m| m.min_rayleigh_hom).into_iter().fold(f64::INFINITY, f64::min).min(report.cell.min_rayleigh);
    let zero_cells: usize = report.completed().map(|(_, m)| m.zero_branch_cells).sum();
    let f = family("coupled");
    let cg = CellGrid::new(1, 16, 16).unwrap();
    let eta = report.cell.table.as_ref().map_or(f64::NAN, |t| t.eta);
    let below = solve_cp_critical_pme(&f, cg, 0.5 * eta, 2.0, 0, eta, &PeriodicConfig::default()).unwrap();
    let phi_zero = below.grad.iter().flatten().all(|g| g[0] == 0.0 && g[1] == 0.0);
    let table = CriticalTable::build(Regime::CriticalPme, &f, cg, 2.0, 1.0, &PeriodicConfig::default()).unwrap();
    let zero_weight = table.weights(0.5 * table.eta) == TableWeights::Zero;
    let pass = grad.len() == 2
        && report.runs.iter().all(|r| r.ok)
        && rayleigh >= report.lambda - 1e-6
        && strictly_decreasing(&grad)
        && zero_cells > 0
        && phi_zero
        && zero_weight;
    outcome(
        pass,
        format!("E_grad {grad:.4?}, min Rayleigh {rayleigh:.4} (λ = {}), zero-branch cells {zero_cells}", report.lambda),
    )
}

fn energy_defect(report: &CorrectorReport) -> Outcome {
    let d = metric(report, |m| m.energy.defect);
    outcome(d.len() == 3 && strictly_decreasing(&d), format!("energy defect {:?}", d.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>()))
}

fn report(n: usize, label: &str, budget: Duration, run: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = run();
    let took = start.elapsed();
    let pass = o.pass && took <= budget;
    println!(
        "criterion {n} ({label}): {} in {:.2} s (budget {} s): {}",
        if pass { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        budget.as_secs(),
        o.detail
    );
    pass
}

fn main() {
    let mins = |m: u64| Duration::from_secs(60 * m);
    let mut all = true;
    all &= report(1, "unfolding operator algebra", Duration::from_secs(10), unfolding_algebra);
    all &= report(2, "homogenized matrix oracles", Duration::from_secs(5), homogenized_matrix_oracles);
    all &= report(3, "critical cell solver", Duration::from_secs(60), critical_cell_solver);
    all &= report(4, "oscillating-problem solver", mins(2), solver_verification);

    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let linear = single.install(|| run_study(&layered_linear()));
    let linear_time = start.elapsed();
    let linear = linear.expect("layered-linear study");
    all &= report(5, "corrector convergence, layered linear", mins(10), || {
        let mut o = corrector_convergence(&linear);
        o.detail += &format!(", study {:.2} s single-threaded", linear_time.as_secs_f64());
        o.pass &= linear_time <= mins(10);
        o
    });

    let start = Instant::now();
    let pme = run_study(&critical_pme());
    let pme_time = start.elapsed();
    let mut studies = vec![linear.clone()];
    let extra = [
        study("layered-fde", "layered", 0.5, 1.0, vec![0.25, 0.125], sine()),
        study("supercritical", "product", 2.0, 3.0, vec![0.5, 0.25], sine()),
        study("critical-fde", "coupled", 0.5, 2.0, vec![0.25, 0.125], sine()),
        study("coupled-gap", "coupled", 1.0, 1.0, vec![0.25, 0.125], sine()),
    ];
    for cfg in &extra {
        studies.push(run_study(cfg).expect("study"));
    }
    if let Ok(r) = &pme {
        studies.push(r.clone());
    }
    all &= report(6, "flux and time-derivative domination", mins(20), || domination(&studies));
    all &= report(7, "critical porous-medium end to end", mins(20), || match &pme {
        Ok(r) => {
            let mut o = critical_pme_end_to_end(r);
            o.detail += &format!(", study {:.2} s", pme_time.as_secs_f64());
            o.pass &= pme_time <= mins(20);
            o
        }
        Err(e) => outcome(false, format!("study failed: {e}")),
    });
    all &= report(8, "energy defect decreasing", Duration::from_secs(1), || energy_defect(&linear));

    if !all {
        eprintln!("acceptance: at least one criterion failed");
        std::process::exit(1);
    }
    println!("acceptance: all 8 criteria passed");
}
