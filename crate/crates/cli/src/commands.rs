use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use homoglab::cell::{solve_cell, PeriodicConfig, Regime};
use homoglab::coeff::{CoefficientField, Tabulated};
use homoglab::corrector::{dump_unfolded_gradient, run_study, study_tensor, CorrectorFields, CorrectorReport};
use homoglab::diffusion::{solve_eps, solve_hom, ProblemSpec};
use homoglab::mesh::CellGrid;
use homoglab::unfold::EpsilonGeometry;
use homoglab::Tensor;
use serde::Serialize;

use crate::config::{self, InvalidInput, RunConfig};
use crate::{CellArgs, Cli, CoeffArgs, Command, CorrectorArgs, SolveArgs, SourceArgs, StudyArgs};

pub fn dispatch(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    match cli.command {
        Command::ValidateCoeff(args) => validate_coeff(&args),
        Command::SolveEps(args) => solve(&args, threads, true),
        Command::SolveHom(args) => solve(&args, threads, false),
        Command::Cell(args) => cell(&args, threads),
        Command::Ahom(args) => ahom(&args, threads),
        Command::Correctors(args) => correctors(&args, threads),
        Command::Study(args) => study(&args, threads),
        Command::Scenarios { show } => {
            match show {
                Some(name) => print!("{}", config::scenario_text(&name)?),
                None => config::scenario_names().for_each(|n| println!("{n}")),
            }
            Ok(())
        }
    }
}

/// Sizes the rayon pool: HOMOGLAB_THREADS, then `--threads`, then the
/// configuration.
fn init_threads(flag: Option<usize>, configured: Option<usize>) -> Result<()> {
    let env = match std::env::var("HOMOGLAB_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| InvalidInput(format!("HOMOGLAB_THREADS must be a positive integer, got '{v}'")))?,
        ),
        Err(_) => None,
    };
    if flag == Some(0) {
        bail!(InvalidInput("--threads must be positive".into()));
    }
    if let Some(n) = env.or(flag).or(configured) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn load(source: &SourceArgs) -> Result<RunConfig> {
    Ok(match (&source.scenario, &source.config) {
        (Some(name), _) => config::load_scenario(name)?,
        (None, Some(path)) => config::load_file(path)?,
        (None, None) => bail!(InvalidInput("give --scenario or --config".into())),
    })
}

fn output_dir(source: &SourceArgs, cfg: &RunConfig) -> PathBuf {
    source
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| Path::new("out").join(&cfg.study.name))
}

fn coefficient(args: &CoeffArgs) -> Result<CoefficientField> {
    match (&args.coeff, &args.file) {
        (Some(name), _) => {
            let mut params = BTreeMap::new();
            for p in &args.params {
                let (k, v) = p
                    .split_once('=')
                    .ok_or_else(|| InvalidInput(format!("--param expects NAME=VALUE, got '{p}'")))?;
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| InvalidInput(format!("--param {k}: '{v}' is not a number")))?;
                params.insert(k.trim().to_string(), v);
            }
            Ok(CoefficientField::from_name(name, args.dim, &params)?)
        }
        (None, Some(path)) => {
            if !args.params.is_empty() {
                bail!(InvalidInput("--param only applies to named families".into()));
            }
            let table = Tabulated::from_csv(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(CoefficientField::from_table(table))
        }
        (None, None) => bail!(InvalidInput("give --coeff or --file".into())),
    }
}

fn validate_coeff(args: &CoeffArgs) -> Result<()> {
    let field = coefficient(args)?;
    let report = field.validate(args.resolution)?;
    println!("{}", field.describe());
    println!("{}", report.summary());
    if !report.passed {
        bail!(InvalidInput(format!(
            "coefficient rejected: symmetry defect {:.3e}, periodicity defect {:.3e}, Rayleigh range [{:.6e}, {:.6e}] vs bounds [{:.6e}, {:.6e}]",
            report.max_symmetry_defect,
            report.max_periodicity_defect,
            report.min_rayleigh,
            report.max_rayleigh,
            report.lambda,
            report.upper
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CellDiagnostics {
    coefficient: String,
    regime: String,
    parameter: Option<f64>,
    ny: usize,
    ns: usize,
    matrix: Tensor,
    gradient_bound: f64,
    max_period_defect: f64,
    max_contraction: f64,
    flux_orthogonality: f64,
    flux_orthogonality_symmetric: f64,
}

fn cell_diagnostics(args: &CellArgs, threads: Option<usize>) -> Result<CellDiagnostics> {
    init_threads(threads, None)?;
    let field = coefficient(&args.coeff)?;
    let regime = Regime::from_name(&args.regime)?;
    if regime.is_critical() && args.parameter.is_none() {
        bail!(InvalidInput(format!("regime {} needs --parameter", regime.name())));
    }
    let cg = CellGrid::new(field.dim, args.ny, args.ns)?;
    let sol = solve_cell(regime, &field, cg, args.parameter, &PeriodicConfig::default())?;
    let (ortho, ortho_sym) = sol.flux_orthogonality(&field);
    Ok(CellDiagnostics {
        coefficient: field.describe(),
        regime: regime.name().to_string(),
        parameter: sol.parameter,
        ny: cg.ny,
        ns: cg.ns,
        matrix: sol.homogenized_matrix(&field),
        gradient_bound: sol.gradient_bound(),
        max_period_defect: sol.max_period_defect(),
        max_contraction: sol.max_contraction(),
        flux_orthogonality: ortho,
        flux_orthogonality_symmetric: ortho_sym,
    })
}

fn print_matrix(m: &Tensor) {
    if m.dim == 1 {
        println!("a_hom = {:.10}", m.get(0, 0));
    } else {
        println!("a_hom =");
        for i in 0..m.dim {
            let row: Vec<String> = (0..m.dim).map(|j| format!("{:>14.10}", m.get(i, j))).collect();
            println!("  [{}]", row.join(", "));
        }
    }
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn ahom(args: &CellArgs, threads: Option<usize>) -> Result<()> {
    let d = cell_diagnostics(args, threads)?;
    print_matrix(&d.matrix);
    if let Some(dir) = &args.out {
        write_json(dir, "ahom.json", &d.matrix)?;
    }
    Ok(())
}

fn cell(args: &CellArgs, threads: Option<usize>) -> Result<()> {
    let d = cell_diagnostics(args, threads)?;
    println!("{} in the {} regime on a {}x{} cell grid", d.coefficient, d.regime, d.ny, d.ns);
    print_matrix(&d.matrix);
    println!("gradient bound        {:.6e}", d.gradient_bound);
    println!("period defect         {:.3e}", d.max_period_defect);
    println!("max contraction       {:.4}", d.max_contraction);
    println!("flux orthogonality    {:.3e} (symmetric {:.3e})", d.flux_orthogonality, d.flux_orthogonality_symmetric);
    if let Some(dir) = &args.out {
        write_json(dir, "cell.json", &d)?;
    }
    Ok(())
}

fn pick_epsilon(cfg: &RunConfig, eps: Option<f64>) -> Result<f64> {
    let eps = eps.unwrap_or(cfg.study.epsilons[0]);
    let grid = cfg.study.grid_for(eps)?;
    EpsilonGeometry::new(eps, cfg.study.r, grid)?;
    Ok(eps)
}

fn problem(cfg: &RunConfig, eps: f64, oscillating: bool) -> Result<ProblemSpec> {
    let s = &cfg.study;
    Ok(ProblemSpec {
        p: s.p,
        r: s.r,
        epsilon: oscillating.then_some(eps),
        grid: s.grid_for(eps)?,
        initial: s.initial.clone(),
        forcing: s.forcing.clone(),
    })
}

fn solve(args: &SolveArgs, threads: Option<usize>, oscillating: bool) -> Result<()> {
    let cfg = load(&args.source)?;
    init_threads(threads, cfg.threads)?;
    let eps = pick_epsilon(&cfg, args.epsilon)?;
    let spec = problem(&cfg, eps, oscillating)?;
    let traj = if oscillating {
        solve_eps(&spec, &cfg.study.coefficient, &cfg.study.stepper)?
    } else {
        let (tensor, _) = study_tensor(&cfg.study)?;
        solve_hom(&spec, &tensor, &cfg.study.stepper)?
    };
    let dir = output_dir(&args.source, &cfg).join(if oscillating { "eps" } else { "hom" });
    traj.export(&dir)?;
    println!(
        "{} problem, ε = {eps}: {} nodes, {} steps, {} Newton iterations, max residual {:.3e}; written to {}",
        if oscillating { "oscillating" } else { "homogenized" },
        traj.grid.spatial().node_count(),
        traj.grid.nt,
        traj.newton_iterations.iter().sum::<usize>(),
        traj.residuals.iter().copied().fold(0.0, f64::max),
        dir.display()
    );
    Ok(())
}

fn print_report(report: &CorrectorReport) {
    println!("{} ({} regime, {})", report.name, report.regime, report.coefficient);
    if let Some(m) = &report.cell.matrix {
        print_matrix(m);
    }
    for c in &report.comparison {
        println!("{} tensor: {:?}", c.regime, c.matrix.row_major());
    }
    println!(
        "{:>10} {:>6} {:>6} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "epsilon", "nx", "nt", "E_grad", "E_flux", "E_dt", "E_naive", "energy"
    );
    for run in &report.runs {
        match &run.metrics {
            Some(m) => println!(
                "{:>10} {:>6} {:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
                run.epsilon, run.nx, run.nt, m.e_grad, m.e_flux, m.e_dt, m.e_naive, m.energy.defect
            ),
            None => println!(
                "{:>10} {:>6} {:>6} failed: {}",
                run.epsilon,
                run.nx,
                run.nt,
                run.error.as_deref().unwrap_or("unknown error")
            ),
        }
    }
}

/// Writes the report, prints it and turns failures into an error.
fn finish(report: &CorrectorReport, dir: &Path) -> Result<()> {
    report.write(dir)?;
    print_report(report);
    println!("report written to {}", dir.display());
    let failed: Vec<String> = report
        .runs
        .iter()
        .filter(|r| !r.ok)
        .map(|r| format!("ε = {}", r.epsilon))
        .collect();
    if !failed.is_empty() {
        bail!("solver failed for {}", failed.join(", "));
    }
    report.check_entries()?;
    let dom = report.domination_failures();
    if !dom.is_empty() {
        bail!(InvalidInput(format!("domination check failed: {}", dom.join("; "))));
    }
    Ok(())
}

fn correctors(args: &CorrectorArgs, threads: Option<usize>) -> Result<()> {
    let mut cfg = load(&args.source)?;
    init_threads(threads, cfg.threads)?;
    let eps = pick_epsilon(&cfg, args.epsilon)?;
    cfg.study.epsilons = vec![eps];
    let dir = output_dir(&args.source, &cfg);
    let report = run_study(&cfg.study)?;
    if args.dump {
        let s = &cfg.study;
        let (tensor, _) = study_tensor(s)?;
        let eps_traj = solve_eps(&problem(&cfg, eps, true)?, &s.coefficient, &s.stepper)?;
        let hom_traj = solve_hom(&problem(&cfg, eps, false)?, &tensor, &s.stepper)?;
        let g = EpsilonGeometry::new(eps, s.r, s.grid_for(eps)?)?;
        let fields = CorrectorFields::assemble(&eps_traj, &hom_traj, &tensor, &s.coefficient, &g)?;
        eps_traj.export(&dir.join("eps"))?;
        hom_traj.export(&dir.join("hom"))?;
        dump_unfolded_gradient(&fields, &dir.join("unfolded_gradient.bin"))?;
    }
    finish(&report, &dir)
}

fn study(args: &StudyArgs, threads: Option<usize>) -> Result<()> {
    let cfg = load(&args.source)?;
    init_threads(threads, cfg.threads)?;
    let dir = output_dir(&args.source, &cfg);
    let report = run_study(&cfg.study)?;
    finish(&report, &dir)
}
