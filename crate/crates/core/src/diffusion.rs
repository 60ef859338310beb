//! Backward-Euler / Newton solver for
//!
//! ```text
//! ∂_t u = div(A ∇|u|^{p−1}u) + f   in Ω×I,   |u|^{p−1}u = 0 on ∂Ω
//! ```
//!
//! with lumped P1 elements. The Newton unknown is the Kirchhoff variable
//! `v = |u|^{p−1}u`; `u = β(v) = |v|^{1/p−1}v` is eliminated nodewise, so
//! the Jacobian `diag(m β'(v)/τ) + K` is symmetric positive definite for
//! every `p > 0`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::coeff::CoefficientField;
use crate::linalg::{self, Constraint, CsrMatrix, SolverConfig};
use crate::mesh::{MacroGrid, StiffnessAssembler, Topology};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// `u ↦ |u|^{p−1}u`.
pub fn power_nonlinearity(u: f64, p: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u.abs().powf(p - 1.0) * u
    }
}

/// `v ↦ |v|^{1/p−1}v`, the inverse of [`power_nonlinearity`].
pub fn inverse_power(v: f64, p: f64) -> f64 {
    power_nonlinearity(v, 1.0 / p)
}

/// A closed-form function of `(x, t)` with a printable description.
#[derive(Clone)]
pub struct ClosedForm {
    pub description: String,
    f: Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>,
}

impl ClosedForm {
    pub fn new(description: impl Into<String>, f: impl Fn([f64; 2], f64) -> f64 + Send + Sync + 'static) -> Self {
        ClosedForm {
            description: description.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, x: [f64; 2], t: f64) -> f64 {
        (self.f)(x, t)
    }
}

impl fmt::Debug for ClosedForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ClosedForm({})", self.description)
    }
}

/// Initial data or forcing.
#[derive(Debug, Clone)]
pub enum Data {
    Zero,
    Closed(ClosedForm),
    /// Nodal values per time level `0..=nt` (a single level for initial
    /// data).
    Tabulated(Vec<Vec<f64>>),
}

impl Data {
    pub fn closed(description: impl Into<String>, f: impl Fn([f64; 2], f64) -> f64 + Send + Sync + 'static) -> Self {
        Data::Closed(ClosedForm::new(description, f))
    }

    pub fn describe(&self) -> String {
        match self {
            Data::Zero => "0".into(),
            Data::Closed(c) => c.description.clone(),
            Data::Tabulated(levels) => format!("tabulated ({} levels)", levels.len()),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Data::Zero)
    }

    pub(crate) fn nodal(&self, grid: &MacroGrid, level: usize, t: f64) -> Result<Vec<f64>> {
        let sg = grid.spatial();
        let n = sg.node_count();
        let vals = match self {
            Data::Zero => vec![0.0; n],
            Data::Closed(c) => (0..n).map(|i| c.eval(sg.node_coords(i), t)).collect(),
            Data::Tabulated(levels) => {
                let lv = levels
                    .get(level)
                    .or(if levels.len() == 1 { levels.first() } else { None })
                    .ok_or_else(|| Error::Alignment(format!("tabulated data has no level {level}")))?;
                if lv.len() != n {
                    return Err(Error::Alignment(format!("tabulated level has {} values, grid has {n} nodes", lv.len())));
                }
                lv.clone()
            }
        };
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite data value at node {i}, t = {t}")));
        }
        Ok(vals)
    }
}

/// Parameters of one run of the oscillating or the homogenized problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub p: f64,
    pub r: f64,
    /// `None` for the homogenized problem.
    pub epsilon: Option<f64>,
    pub grid: MacroGrid,
    pub initial: Data,
    pub forcing: Data,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::Config(format!("p must be positive, got {}", self.p)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Config(format!("r must be positive, got {}", self.r)));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("epsilon must be positive, got {e}")));
            }
        }
        Ok(())
    }

    pub fn describe(&self) -> SpecEcho {
        SpecEcho {
            p: self.p,
            r: self.r,
            epsilon: self.epsilon,
            grid: self.grid,
            initial: self.initial.describe(),
            forcing: self.forcing.describe(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpecEcho {
    pub p: f64,
    pub r: f64,
    pub epsilon: Option<f64>,
    pub grid: MacroGrid,
    pub initial: String,
    pub forcing: String,
}

#[derive(Debug, Clone, Copy)]
pub struct StepperConfig {
    pub newton_tolerance: f64,
    pub max_newton: usize,
    /// Clamp for `β'`: values are kept inside `[δ, 1/δ]`.
    pub delta: f64,
    pub max_halvings: usize,
    pub linear: SolverConfig,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            newton_tolerance: 1e-9,
            max_newton: 50,
            delta: 1e-8,
            max_halvings: 30,
            linear: SolverConfig {
                tolerance: 1e-12,
                ..SolverConfig::default()
            },
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tolerance > 0.0) || self.max_newton == 0 {
            return Err(Error::Config("Newton tolerance and iteration cap must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1e-2) {
            return Err(Error::Config(format!("derivative clamp δ = {} must lie in (0, 1e-2)", self.delta)));
        }
        self.linear.validate()
    }
}

/// Supplies the diffusion tensor on every cell for a step `(t0, t1]`.
pub trait CoefficientProvider: Sync {
    fn cell_tensors(&self, topo: &Topology, t0: f64, t1: f64, u_prev: &[f64]) -> Result<Vec<Tensor>>;

    /// True when the tensors depend neither on time nor on the solution.
    fn is_static(&self) -> bool {
        false
    }
}

impl CoefficientProvider for Tensor {
    fn cell_tensors(&self, topo: &Topology, _: f64, _: f64, _: &[f64]) -> Result<Vec<Tensor>> {
        Ok(vec![*self; topo.cell_count()])
    }

    fn is_static(&self) -> bool {
        true
    }
}

/// `a(x/ε, t/ε^r)` on the macro grid, evaluated at cell centroids and at
/// the midpoint of the time step.
#[derive(Debug, Clone)]
pub struct OscillatingCoefficient<'a> {
    pub field: &'a CoefficientField,
    pub epsilon: f64,
    pub r: f64,
}

/// `k` if `x` is within `1e-9` relative of the positive integer `k`.
pub(crate) fn as_integer(x: f64) -> Option<usize> {
    let k = x.round();
    if k >= 1.0 && (x - k).abs() <= 1e-9 * k {
        Some(k as usize)
    } else {
        None
    }
}

impl<'a> OscillatingCoefficient<'a> {
    pub fn new(field: &'a CoefficientField, epsilon: f64, r: f64) -> Self {
        OscillatingCoefficient { field, epsilon, r }
    }

    /// Micro coordinate of the centroid of macro cell `c`. On grids with
    /// `ε/h = m` integer the result is computed from integer indices and
    /// equals the centroid of the matching cell of the `m`-cell grid.
    pub fn micro_point(&self, topo: &Topology, c: usize) -> [f64; 2] {
        let g = topo.grid;
        match as_integer(self.epsilon / g.h()) {
            Some(m) => {
                let (sq, kind) = g.cell_position(c);
                let off = g.centroid_offset(kind);
                let mut y = [0.0; 2];
                for d in 0..g.dim {
                    y[d] = ((sq[d] % m) as f64 + off) / m as f64;
                }
                y
            }
            None => {
                let x = g.cell_centroid(c);
                [x[0] / self.epsilon, x[1] / self.epsilon]
            }
        }
    }

    /// Micro time of the step `(t0, t1]`: its midpoint in units of `ε^r`.
    /// When the step is one of `ms` equal slabs of a micro period the
    /// slab midpoint `(j + ½)/ms` is returned exactly.
    pub fn micro_time(&self, t0: f64, t1: f64) -> f64 {
        let period = self.epsilon.powf(self.r);
        let dt = t1 - t0;
        if let Some(ms) = as_integer(period / dt) {
            let j = (t0 / dt).round();
            if (t0 / dt - j).abs() < 1e-6 {
                return ((j as usize % ms) as f64 + 0.5) / ms as f64;
            }
        }
        let s = 0.5 * (t0 + t1) / period;
        s - s.floor()
    }
}

impl CoefficientProvider for OscillatingCoefficient<'_> {
    fn cell_tensors(&self, topo: &Topology, t0: f64, t1: f64, _: &[f64]) -> Result<Vec<Tensor>> {
        let s = self.micro_time(t0, t1);
        Ok((0..topo.cell_count())
            .map(|c| self.field.sample(self.micro_point(topo, c), s))
            .collect())
    }

    fn is_static(&self) -> bool {
        self.field.is_s_independent()
    }
}

/// Time levels of a solve.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub grid: MacroGrid,
    pub p: f64,
    pub spec: SpecEcho,
    /// Nodal `u` at levels `0..=nt`.
    pub u: Vec<Vec<f64>>,
    /// Nodal `v = |u|^{p−1}u` at levels `0..=nt`.
    pub v: Vec<Vec<f64>>,
    /// Final scaled Newton residual of every step `1..=nt`.
    pub residuals: Vec<f64>,
    pub newton_iterations: Vec<usize>,
    /// Steps that were retried as two half steps.
    pub refined_steps: Vec<usize>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        (0..=self.grid.nt).map(|n| self.grid.time(n)).collect()
    }

    /// Writes `step_NNNNN.csv` (coordinates, u, v) per level and
    /// `manifest.json`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let sg = self.grid.spatial();
        for n in 0..=self.grid.nt {
            let mut w = csv::Writer::from_path(dir.join(format!("step_{n:05}.csv")))?;
            match sg.dim {
                1 => w.write_record(["x", "u", "v"])?,
                _ => w.write_record(["x", "y", "u", "v"])?,
            }
            for i in 0..sg.node_count() {
                let x = sg.node_coords(i);
                let mut row = vec![x[0].to_string()];
                if sg.dim == 2 {
                    row.push(x[1].to_string());
                }
                row.push(self.u[n][i].to_string());
                row.push(self.v[n][i].to_string());
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            spec: &'a SpecEcho,
            times: Vec<f64>,
            residuals: &'a [f64],
            newton_iterations: &'a [usize],
            refined_steps: &'a [usize],
        }
        let manifest = Manifest {
            spec: &self.spec,
            times: self.times(),
            residuals: &self.residuals,
            newton_iterations: &self.newton_iterations,
            refined_steps: &self.refined_steps,
        };
        let mut f = std::fs::File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

struct StepOutcome {
    v: Vec<f64>,
    residual: f64,
    iterations: usize,
}

/// Nonlinear stepping core shared by the oscillating and homogenized runs.
pub struct Stepper<'a> {
    p: f64,
    grid: MacroGrid,
    asm: StiffnessAssembler,
    mass: Vec<f64>,
    provider: &'a dyn CoefficientProvider,
    cfg: StepperConfig,
    cached: Option<CsrMatrix>,
}

impl<'a> Stepper<'a> {
    pub fn new(p: f64, grid: MacroGrid, provider: &'a dyn CoefficientProvider, cfg: StepperConfig) -> Result<Self> {
        cfg.validate()?;
        let topo = Topology::new(grid.spatial());
        let asm = StiffnessAssembler::new(&topo)?;
        let mass = asm.dofs().restrict(topo.node_mass());
        Ok(Stepper {
            p,
            grid,
            asm,
            mass,
            provider,
            cfg,
            cached: None,
        })
    }

    pub fn topology(&self) -> &Topology {
        self.asm.topology()
    }

    fn stiffness(&mut self, t0: f64, t1: f64, u_prev: &[f64]) -> Result<CsrMatrix> {
        if let Some(k) = &self.cached {
            return Ok(k.clone());
        }
        let tensors = self.provider.cell_tensors(self.asm.topology(), t0, t1, u_prev)?;
        let k = self.asm.assemble(&|c| tensors[c]);
        if self.provider.is_static() {
            self.cached = Some(k.clone());
        }
        Ok(k)
    }

    fn residual(&self, k: &CsrMatrix, v: &[f64], u_prev: &[f64], f: &[f64], tau: f64, out: &mut [f64]) -> f64 {
        k.mul_vec_into(v, out);
        let mut norm: f64 = 0.0;
        for i in 0..v.len() {
            let m = self.mass[i];
            out[i] += m * (inverse_power(v[i], self.p) - u_prev[i]) / tau - m * f[i];
            norm = norm.max(out[i].abs() * tau / m);
        }
        norm
    }

    fn beta_prime(&self, v: f64) -> f64 {
        let d = self.cfg.delta;
        let q = 1.0 / self.p;
        let raw = if v == 0.0 {
            if q > 1.0 {
                0.0
            } else if q < 1.0 {
                f64::INFINITY
            } else {
                1.0
            }
        } else {
            q * v.abs().powf(q - 1.0)
        };
        raw.clamp(d, 1.0 / d)
    }

    /// One backward-Euler step from nodal `u_prev` at `t0` to `t1`;
    /// `level` selects tabulated forcing.
    fn step(&mut self, u_prev_nodal: &[f64], t0: f64, t1: f64, forcing: &[f64]) -> Result<StepOutcome> {
        let tau = t1 - t0;
        let k = self.stiffness(t0, t1, u_prev_nodal)?;
        let dofs = self.asm.dofs().clone();
        let u_prev = dofs.restrict(u_prev_nodal);
        let f = dofs.restrict(forcing);
        let n = u_prev.len();
        let mut v: Vec<f64> = u_prev.iter().map(|&u| power_nonlinearity(u, self.p)).collect();
        let mut r = vec![0.0; n];
        let mut norm = self.residual(&k, &v, &u_prev, &f, tau, &mut r);
        let mut iterations = 0;
        let mut trial = vec![0.0; n];
        let mut r_trial = vec![0.0; n];
        while norm > self.cfg.newton_tolerance {
            if iterations == self.cfg.max_newton {
                return Err(Error::StepFailure {
                    time: t1,
                    residual: norm,
                    iterations,
                });
            }
            iterations += 1;
            let mut jac = k.clone();
            let diag: Vec<f64> = (0..n).map(|i| self.mass[i] * self.beta_prime(v[i]) / tau).collect();
            jac.add_diagonal(&diag);
            let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
            let dv = linalg::solve_spd(&jac, &rhs, &self.cfg.linear, Constraint::None)?.x;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..=self.cfg.max_halvings {
                for i in 0..n {
                    trial[i] = v[i] + lambda * dv[i];
                }
                let tn = self.residual(&k, &trial, &u_prev, &f, tau, &mut r_trial);
                if tn.is_finite() && tn < norm {
                    std::mem::swap(&mut v, &mut trial);
                    std::mem::swap(&mut r, &mut r_trial);
                    norm = tn;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                return Err(Error::StepFailure {
                    time: t1,
                    residual: norm,
                    iterations,
                });
            }
        }
        Ok(StepOutcome {
            v: dofs.extend(&v),
            residual: norm,
            iterations,
        })
    }

    /// Marches `initial` through all levels of the grid. A failed step is
    /// retried once as two half steps; a second failure aborts.
    pub fn run(&mut self, spec: &ProblemSpec) -> Result<Trajectory> {
        spec.validate()?;
        let grid = self.grid;
        let topo_boundary: Vec<usize> = self.asm.topology().boundary_nodes().collect();
        let mut u0 = spec.initial.nodal(&grid, 0, 0.0)?;
        for &b in &topo_boundary {
            u0[b] = 0.0;
        }
        let v0: Vec<f64> = u0.iter().map(|&u| power_nonlinearity(u, self.p)).collect();
        let mut traj = Trajectory {
            grid,
            p: self.p,
            spec: spec.describe(),
            u: vec![u0],
            v: vec![v0],
            residuals: Vec::with_capacity(grid.nt),
            newton_iterations: Vec::with_capacity(grid.nt),
            refined_steps: Vec::new(),
        };
        for n in 1..=grid.nt {
            let (t0, t1) = (grid.time(n - 1), grid.time(n));
            let forcing = spec.forcing.nodal(&grid, n, t1)?;
            let u_prev = traj.u[n - 1].clone();
            let out = match self.step(&u_prev, t0, t1, &forcing) {
                Ok(o) => o,
                Err(Error::StepFailure { .. }) => {
                    traj.refined_steps.push(n);
                    let tm = 0.5 * (t0 + t1);
                    let f_half = match &spec.forcing {
                        Data::Tabulated(_) => forcing.clone(),
                        other => other.nodal(&grid, n, tm)?,
                    };
                    self.cached = None;
                    let first = self.step(&u_prev, t0, tm, &f_half)?;
                    let u_mid: Vec<f64> = first.v.iter().map(|&v| inverse_power(v, self.p)).collect();
                    self.cached = None;
                    let second = self.step(&u_mid, tm, t1, &forcing)?;
                    self.cached = None;
                    StepOutcome {
                        v: second.v,
                        residual: first.residual.max(second.residual),
                        iterations: first.iterations + second.iterations,
                    }
                }
                Err(e) => return Err(e),
            };
            let u: Vec<f64> = out.v.iter().map(|&v| inverse_power(v, self.p)).collect();
            traj.u.push(u);
            traj.v.push(out.v);
            traj.residuals.push(out.residual);
            traj.newton_iterations.push(out.iterations);
        }
        Ok(traj)
    }
}

/// Solves the oscillating problem with coefficient `a(x/ε, t/ε^r)`.
///
/// The grid must resolve the oscillations: `h ≤ ε/8` and `τ ≤ ε^r/8`.
pub fn solve_eps(spec: &ProblemSpec, field: &CoefficientField, cfg: &StepperConfig) -> Result<Trajectory> {
    spec.validate()?;
    let eps = spec
        .epsilon
        .ok_or_else(|| Error::Config("solve_eps needs a finite epsilon".into()))?;
    if field.dim != spec.grid.dim {
        return Err(Error::Config(format!(
            "coefficient is {}-dimensional, grid is {}-dimensional",
            field.dim, spec.grid.dim
        )));
    }
    let h_max = eps / 8.0;
    let tau_max = eps.powf(spec.r) / 8.0;
    let slack = 1.0 + 1e-9;
    if spec.grid.h() > h_max * slack || spec.grid.tau() > tau_max * slack {
        return Err(Error::Config(format!(
            "grid does not resolve ε = {eps}: need h ≤ {h_max:.6e} and τ ≤ {tau_max:.6e}, have h = {:.6e}, τ = {:.6e}",
            spec.grid.h(),
            spec.grid.tau()
        )));
    }
    let provider = OscillatingCoefficient::new(field, eps, spec.r);
    Stepper::new(spec.p, spec.grid, &provider, *cfg)?.run(spec)
}

/// Solves the homogenized problem with the given tensor provider.
pub fn solve_hom(spec: &ProblemSpec, tensor: &dyn CoefficientProvider, cfg: &StepperConfig) -> Result<Trajectory> {
    spec.validate()?;
    Stepper::new(spec.p, spec.grid, tensor, *cfg)?.run(spec)
}

/// Discrete energy balance for `f ≡ 0`: dissipation `Σ_n τ v^n·K_n v^n`
/// against the storage drop `Σ_i m_i (|u⁰_i|^{p+1} − |u^N_i|^{p+1})/(p+1)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyBalance {
    pub dissipation: f64,
    pub storage_drop: f64,
}

impl EnergyBalance {
    pub fn relative_defect(&self) -> f64 {
        (self.dissipation - self.storage_drop).abs() / self.storage_drop.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn energy_balance(traj: &Trajectory, provider: &dyn CoefficientProvider) -> Result<EnergyBalance> {
    let grid = traj.grid;
    let topo = Topology::new(grid.spatial());
    let tau = grid.tau();
    let p = traj.p;
    let mut dissipation = 0.0;
    for n in 1..=grid.nt {
        let tensors = provider.cell_tensors(&topo, grid.time(n - 1), grid.time(n), &traj.u[n - 1])?;
        for (c, a) in tensors.iter().enumerate() {
            let g = topo.cell_gradient(&traj.v[n], c);
            dissipation += tau * topo.measure() * a.quad(g);
        }
    }
    let storage = |u: &[f64]| -> f64 {
        u.iter()
            .zip(topo.node_mass())
            .map(|(u, m)| m * u.abs().powf(p + 1.0))
            .sum::<f64>()
            / (p + 1.0)
    };
    Ok(EnergyBalance {
        dissipation,
        storage_drop: storage(&traj.u[0]) - storage(&traj.u[grid.nt]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn power_nonlinearity_basics() {
        assert_eq!(power_nonlinearity(0.0, 0.5), 0.0);
        assert_eq!(power_nonlinearity(-2.0, 2.0), -4.0);
        for p in [0.5, 1.0, 2.0, 3.0] {
            for u in [-3.0, -1.0, 0.5, 2.0] {
                let back = inverse_power(power_nonlinearity(u, p), p);
                assert!((back - u).abs() <= 1e-12 * u.abs());
            }
        }
    }

    fn heat_spec(nx: usize, nt: usize) -> ProblemSpec {
        ProblemSpec {
            p: 1.0,
            r: 1.0,
            epsilon: None,
            grid: MacroGrid::new(1, nx, nt, 1.0, 0.1).unwrap(),
            initial: Data::closed("sin(pi x)", |x, _| (PI * x[0]).sin()),
            forcing: Data::Zero,
        }
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let spec = ProblemSpec {
            initial: Data::Zero,
            ..heat_spec(8, 4)
        };
        let t = solve_hom(&spec, &Tensor::identity(1), &StepperConfig::default()).unwrap();
        assert!(t.u.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_heat_norm_decreases_and_boundary_vanishes() {
        let spec = heat_spec(32, 20);
        let t = solve_hom(&spec, &Tensor::identity(1), &StepperConfig::default()).unwrap();
        let topo = Topology::new(spec.grid.spatial());
        let norm = |u: &[f64]| u.iter().zip(topo.node_mass()).map(|(u, m)| m * u * u).sum::<f64>();
        for n in 1..t.u.len() {
            assert!(norm(&t.u[n]) <= norm(&t.u[n - 1]));
            for b in topo.boundary_nodes() {
                assert_eq!(t.v[n][b], 0.0);
            }
        }
        assert!(t.residuals.iter().all(|&r| r <= 1e-9));
    }

    #[test]
    fn unresolved_grid_is_rejected() {
        let spec = ProblemSpec {
            epsilon: Some(0.25),
            ..heat_spec(8, 4)
        };
        let err = solve_eps(&spec, &CoefficientField::identity(1), &StepperConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("h ≤")));
    }

    #[test]
    fn micro_point_matches_cell_grid_centroid() {
        let field = CoefficientField::identity(2);
        let osc = OscillatingCoefficient::new(&field, 0.25, 1.0);
        let topo = Topology::new(MacroGrid::new(2, 16, 4, 1.0, 1.0).unwrap().spatial());
        let cg = crate::mesh::CellGrid::new(2, 4, 1).unwrap().spatial();
        // fine cell in square (5, 6) = ε-cell (1,1), micro square (1,2)
        let c = topo.grid.cell_index([5, 6], 1);
        let micro = cg.cell_index([1, 2], 1);
        let u = cg.cell_centroid_units(micro);
        assert_eq!(osc.micro_point(&topo, c), [u[0] / 4.0, u[1] / 4.0]);
        assert_eq!(osc.micro_time(0.75, 1.0), 0.5);
    }

    #[test]
    fn energy_balance_is_first_order_consistent() {
        let spec = ProblemSpec {
            p: 2.0,
            ..heat_spec(32, 200)
        };
        let a = Tensor::identity(1);
        let t = solve_hom(&spec, &a, &StepperConfig::default()).unwrap();
        let e = energy_balance(&t, &a).unwrap();
        assert!(e.dissipation <= e.storage_drop * (1.0 + 1e-9));
        assert!(e.relative_defect() < 0.05);
    }
}
