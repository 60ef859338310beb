//! Corrector functionals and the ε-sweep study.
//!
//! For each ε the oscillating and the homogenized problem are solved on the
//! same fine grid (so gradients subtract cell by cell) and the corrector
//!
//! ```text
//! corr = Σ_k U_ε(∂_k v₀) U_ε(∇_yΦ_k)
//! ```
//!
//! is assembled on the cells of `Ω̂_ε×Î_ε` (zero on `Λ_ε`). `∂_k v₀` is the
//! cell gradient averaged over the ε-cell. In the critical regime `∇_yΦ_k`
//! depends on `|u₀|` through table weights, which are averaged over the
//! ε-cell as well.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{CellSolution, HomogenizedTensor, PeriodicConfig, Regime, SpotCheck, TableWeights};
use crate::coeff::CoefficientField;
use crate::diffusion::{
    as_integer, energy_balance, solve_eps, solve_hom, CoefficientProvider, Data, OscillatingCoefficient, ProblemSpec,
    StepperConfig, Trajectory,
};
use crate::mesh::{self, CellGrid, DirichletRiesz, MacroGrid, SpaceTimeField, Topology};
use crate::tensor::Tensor;
use crate::unfold::{self, EpsilonGeometry, SeparableTest};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

type Vec2 = [f64; 2];

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

fn sq(a: Vec2) -> f64 {
    a[0] * a[0] + a[1] * a[1]
}

/// Cell problem samples and per-cell interpolation weights into them.
struct CellBasis<'a> {
    samples: Vec<&'a CellSolution>,
    table: Option<&'a crate::cell::CriticalTable>,
}

impl<'a> CellBasis<'a> {
    fn new(tensor: &'a HomogenizedTensor) -> Self {
        match tensor {
            HomogenizedTensor::Constant { solution, .. } => CellBasis {
                samples: vec![solution],
                table: None,
            },
            HomogenizedTensor::Critical(t) => CellBasis {
                samples: t.samples.iter().collect(),
                table: Some(t),
            },
        }
    }

    /// At most two `(sample, weight)` pairs; the zero branch has none.
    fn weights(&self, u_abs: f64) -> [(usize, f64); 2] {
        match self.table {
            None => [(0, 1.0), (0, 0.0)],
            Some(t) => match t.weights(u_abs) {
                TableWeights::Zero => [(0, 0.0), (0, 0.0)],
                TableWeights::Blend { lo, w_lo, hi, w_hi } => [(lo, w_lo), (hi, w_hi)],
            },
        }
    }

    fn check(&self, g: &EpsilonGeometry) -> Result<()> {
        for s in &self.samples {
            if s.grid.dim != g.dim() || s.grid.ny != g.m || (s.slabs() != 1 && s.slabs() != g.ms) {
                return Err(Error::Alignment(format!(
                    "cell grid ny = {}, ns = {} does not match ε/h = {}, ε^r/τ = {}",
                    s.grid.ny, s.grid.ns, g.m, g.ms
                )));
            }
        }
        Ok(())
    }

    fn grad(&self, w: &[(usize, f64)], k: usize, l: usize, j: usize) -> Vec2 {
        let mut out = [0.0; 2];
        for &(i, wi) in w {
            if wi != 0.0 {
                let gk = self.samples[i].grad(k, l, j);
                out[0] += wi * gk[0];
                out[1] += wi * gk[1];
            }
        }
        out
    }
}

/// Cell-by-slab quantities shared by all functionals of one ε.
pub struct CorrectorFields {
    pub geometry: EpsilonGeometry,
    topo: Topology,
    /// `∇v_ε`, `∇v₀`, `a_ε`, `a_hom`, `corr`, and the pointwise
    /// `∇_y z(x,t,x/ε,t/ε^r)`; index `slab·cells + cell`.
    pub grad_eps: Vec<Vec2>,
    pub grad_hom: Vec<Vec2>,
    pub a_eps: Vec<Tensor>,
    pub a_hom: Vec<Tensor>,
    pub corr: Vec<Vec2>,
    pub grad_z: Vec<Vec2>,
    /// Cells on the zero branch of the critical PME table.
    pub zero_branch_cells: usize,
    lambda_bound: f64,
}

impl CorrectorFields {
    /// Assembles all fields. `eps` and `hom` must live on the geometry's
    /// grid and the cell solutions on the grid induced by it.
    pub fn assemble(
        eps: &Trajectory,
        hom: &Trajectory,
        tensor: &HomogenizedTensor,
        field: &CoefficientField,
        g: &EpsilonGeometry,
    ) -> Result<Self> {
        if eps.grid != g.grid || hom.grid != g.grid {
            return Err(Error::Alignment("trajectories must live on the geometry's grid".into()));
        }
        let expected = Regime::classify(eps.p, g.r)?;
        if tensor.regime() != expected {
            return Err(Error::Config(format!(
                "cell solution is {} but (p, r) = ({}, {}) is {}",
                tensor.regime().name(),
                eps.p,
                g.r,
                expected.name()
            )));
        }
        if field.dim != g.dim() {
            return Err(Error::Config("coefficient dimension differs from the grid".into()));
        }
        let basis = CellBasis::new(tensor);
        basis.check(g)?;
        let grid = g.grid;
        let topo = Topology::new(grid.spatial());
        let cells = topo.cell_count();
        let nt = grid.nt;
        let dim = g.dim();
        let osc = OscillatingCoefficient::new(field, g.epsilon, g.r);
        let total = nt * cells;
        let mut grad_eps = Vec::with_capacity(total);
        let mut grad_hom = Vec::with_capacity(total);
        let mut a_eps = Vec::with_capacity(total);
        let mut a_hom = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for n in 0..nt {
            let (t0, t1) = (grid.time(n), grid.time(n + 1));
            a_eps.extend(osc.cell_tensors(&topo, t0, t1, &eps.u[n])?);
            a_hom.extend(tensor.cell_tensors(&topo, t0, t1, &hom.u[n])?);
            for c in 0..cells {
                grad_eps.push(topo.cell_gradient(&eps.v[n + 1], c));
                grad_hom.push(topo.cell_gradient(&hom.v[n + 1], c));
                weights.push(basis.weights(topo.cell_mean(&hom.u[n], c).abs()));
            }
        }
        let zero_branch_cells = if basis.table.is_some() {
            weights.iter().filter(|w| w[0].1 == 0.0 && w[1].1 == 0.0).count()
        } else {
            0
        };

        let mut grad_z = vec![[0.0; 2]; total];
        for n in 0..nt {
            let Some((_, l)) = g.split_slab(n) else { continue };
            for c in 0..cells {
                let Some((_, j)) = g.split_cell(c) else { continue };
                let i = n * cells + c;
                let mut z = [0.0; 2];
                for k in 0..dim {
                    let gk = basis.grad(&weights[i], k, l, j);
                    z[0] += grad_hom[i][k] * gk[0];
                    z[1] += grad_hom[i][k] * gk[1];
                }
                grad_z[i] = z;
            }
        }

        let mut corr = vec![[0.0; 2]; total];
        let nmicro = g.micro_cells();
        let count = (nmicro * g.ms) as f64;
        let mut wbar = vec![0.0; basis.samples.len()];
        for zeta in 0..g.theta_count {
            for xi in 0..g.xi_total() {
                let mut mean_grad = [0.0; 2];
                wbar.iter_mut().for_each(|w| *w = 0.0);
                for l in 0..g.ms {
                    let n = zeta * g.ms + l;
                    for j in 0..nmicro {
                        let i = n * cells + g.fine_cell(xi, j);
                        mean_grad = add(mean_grad, grad_hom[i]);
                        for &(s, w) in &weights[i] {
                            wbar[s] += w;
                        }
                    }
                }
                let mean_grad = [mean_grad[0] / count, mean_grad[1] / count];
                let wavg: Vec<(usize, f64)> = wbar
                    .iter()
                    .enumerate()
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(s, &w)| (s, w / count))
                    .collect();
                for l in 0..g.ms {
                    let n = zeta * g.ms + l;
                    for j in 0..nmicro {
                        let mut v = [0.0; 2];
                        for k in 0..dim {
                            let gk = basis.grad(&wavg, k, l, j);
                            v[0] += mean_grad[k] * gk[0];
                            v[1] += mean_grad[k] * gk[1];
                        }
                        corr[n * cells + g.fine_cell(xi, j)] = v;
                    }
                }
            }
        }

        Ok(CorrectorFields {
            geometry: g.clone(),
            topo,
            grad_eps,
            grad_hom,
            a_eps,
            a_hom,
            corr,
            grad_z,
            zero_branch_cells,
            lambda_bound: field.upper,
        })
    }

    fn weight(&self) -> f64 {
        self.topo.measure() * self.geometry.grid.tau()
    }

    fn norm_of(&self, f: impl Fn(usize) -> Vec2) -> f64 {
        let s: f64 = (0..self.grad_eps.len()).map(|i| sq(f(i))).sum();
        (s * self.weight()).sqrt()
    }

    /// `∇v_ε − ∇v₀ − corr` per cell.
    pub fn discrepancy(&self, i: usize) -> Vec2 {
        sub(sub(self.grad_eps[i], self.grad_hom[i]), self.corr[i])
    }

    /// `a_ε∇v_ε − j_hom − [a_ε(∇v₀ + corr) − j_hom]`, evaluated as written.
    fn flux_discrepancy(&self, i: usize) -> Vec2 {
        let j_hom = self.a_hom[i].apply(self.grad_hom[i]);
        let j_eps = self.a_eps[i].apply(self.grad_eps[i]);
        sub(sub(j_eps, j_hom), self.corrected_flux(i))
    }

    /// `a_ε(∇v₀ + corr) − j_hom`.
    fn corrected_flux(&self, i: usize) -> Vec2 {
        let j_hom = self.a_hom[i].apply(self.grad_hom[i]);
        sub(self.a_eps[i].apply(add(self.grad_hom[i], self.corr[i])), j_hom)
    }

    pub fn gradient_error(&self) -> f64 {
        self.norm_of(|i| self.discrepancy(i))
    }

    pub fn flux_error(&self) -> f64 {
        self.norm_of(|i| self.flux_discrepancy(i))
    }

    pub fn naive_error(&self) -> f64 {
        self.norm_of(|i| sub(self.grad_eps[i], self.grad_hom[i]))
    }

    pub fn corrector_norm(&self) -> f64 {
        self.norm_of(|i| self.corr[i])
    }

    /// Upper bound `Λ` of the coefficient.
    pub fn upper(&self) -> f64 {
        self.lambda_bound
    }

    /// `(‖a_ε(∇v₀ + ∇_y z) − j_hom‖, ‖a_ε(∇_y z − corr)‖)` with `∇_y z`
    /// evaluated pointwise at `(x/ε, t/ε^r)`.
    pub fn split_terms(&self) -> (f64, f64) {
        let local = self.norm_of(|i| {
            let j_hom = self.a_hom[i].apply(self.grad_hom[i]);
            sub(self.a_eps[i].apply(add(self.grad_hom[i], self.grad_z[i])), j_hom)
        });
        let averaging = self.norm_of(|i| self.a_eps[i].apply(sub(self.grad_z[i], self.corr[i])));
        (local, averaging)
    }

    /// `|∬ a_ε∇v_ε·∇v_ε − ∬ a_hom∇v₀·∇v₀|` together with both integrals.
    pub fn energy(&self) -> EnergyDefect {
        let w = self.weight();
        let eps: f64 = (0..self.grad_eps.len()).map(|i| self.a_eps[i].quad(self.grad_eps[i])).sum::<f64>() * w;
        let hom: f64 = (0..self.grad_hom.len()).map(|i| self.a_hom[i].quad(self.grad_hom[i])).sum::<f64>() * w;
        EnergyDefect {
            eps,
            hom,
            defect: (eps - hom).abs(),
        }
    }

    /// `L²(0,T;H⁻¹)` norm of `Δ_τu_ε − Δ_τu₀ − div[a_ε(∇v₀ + corr) − j_hom]`
    /// with the divergence taken weakly; each slice is measured by
    /// [`DirichletRiesz`].
    pub fn dt_error(&self, eps: &Trajectory, hom: &Trajectory) -> Result<f64> {
        let grid = self.geometry.grid;
        let tau = grid.tau();
        let cells = self.topo.cell_count();
        let riesz = DirichletRiesz::new(grid.spatial())?;
        let mass = self.topo.node_mass();
        let mut acc = 0.0;
        for n in 0..grid.nt {
            let mut b = self.topo.gradient_transpose(&|c| self.corrected_flux(n * cells + c));
            for (i, bi) in b.iter_mut().enumerate() {
                let du = (eps.u[n + 1][i] - eps.u[n][i]) - (hom.u[n + 1][i] - hom.u[n][i]);
                *bi += mass[i] * du / tau;
            }
            acc += tau * riesz.norm_of_load(&b)?.powi(2);
        }
        Ok(acc.sqrt())
    }

    /// `∇v_ε` as a two-component (or one-component) space-time field.
    pub fn gradient_field(&self, which: &[Vec2]) -> SpaceTimeField {
        let dim = self.geometry.dim();
        let mut out = SpaceTimeField::zeros(self.geometry.grid, dim);
        for (i, g) in which.iter().enumerate() {
            out.values[i * dim..(i + 1) * dim].copy_from_slice(&g[..dim]);
        }
        out
    }

    /// `‖T_ε(∇v_ε) − (∇v₀ + ∇_y z)‖` against the two-scale limit sampled at
    /// the fine cells of each ε-cell.
    pub fn unfolding_defect(&self, tensor: &HomogenizedTensor, hom: &Trajectory) -> Result<unfold::UnfoldingDefect> {
        let g = &self.geometry;
        let basis = CellBasis::new(tensor);
        let cells = self.topo.cell_count();
        let dim = g.dim();
        let weights: Vec<[(usize, f64); 2]> = (0..g.grid.nt)
            .flat_map(|n| (0..cells).map(move |c| (n, c)))
            .map(|(n, c)| basis.weights(self.topo.cell_mean(&hom.u[n], c).abs()))
            .collect();
        let limit = |sigma: usize, rho: usize, j: usize, l: usize, comp: usize| -> f64 {
            let i = rho * cells + sigma;
            let mut v = self.grad_hom[i][comp];
            for k in 0..dim {
                v += self.grad_hom[i][k] * basis.grad(&weights[i], k, l, j)[comp];
            }
            v
        };
        unfold::unfolding_defect(&self.gradient_field(&self.grad_eps), &limit, g)
    }

    /// `(∬ ∂_1v_ε Ψ_ε, ∬∬ (∂_1v₀ + ∂_{y_1}z) Ψ)` for the separable test.
    pub fn pairing(&self, tensor: &HomogenizedTensor, hom: &Trajectory, test: &SeparableTest) -> Result<(f64, f64)> {
        let g = &self.geometry;
        let basis = CellBasis::new(tensor);
        let cells = self.topo.cell_count();
        let dim = g.dim();
        let eps_side = unfold::two_scale_pairing(&self.gradient_field(&self.grad_eps), test, g)?;
        let limit = |sigma: usize, rho: usize, j: usize, l: usize| -> f64 {
            let i = rho * cells + sigma;
            let w = basis.weights(self.topo.cell_mean(&hom.u[rho], sigma).abs());
            let mut v = self.grad_hom[i][0];
            for k in 0..dim {
                v += self.grad_hom[i][k] * basis.grad(&w, k, l, j)[0];
            }
            v
        };
        let limit_side = unfold::limit_pairing(&limit, test, g)?;
        Ok((eps_side, limit_side))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDefect {
    pub eps: f64,
    pub hom: f64,
    pub defect: f64,
}

pub fn gradient_corrector_error(
    eps: &Trajectory,
    hom: &Trajectory,
    tensor: &HomogenizedTensor,
    field: &CoefficientField,
    g: &EpsilonGeometry,
) -> Result<f64> {
    Ok(CorrectorFields::assemble(eps, hom, tensor, field, g)?.gradient_error())
}

pub fn flux_corrector_error(
    eps: &Trajectory,
    hom: &Trajectory,
    tensor: &HomogenizedTensor,
    field: &CoefficientField,
    g: &EpsilonGeometry,
) -> Result<f64> {
    Ok(CorrectorFields::assemble(eps, hom, tensor, field, g)?.flux_error())
}

pub fn dt_corrector_error(
    eps: &Trajectory,
    hom: &Trajectory,
    tensor: &HomogenizedTensor,
    field: &CoefficientField,
    g: &EpsilonGeometry,
) -> Result<f64> {
    CorrectorFields::assemble(eps, hom, tensor, field, g)?.dt_error(eps, hom)
}

/// `‖∇v_ε − ∇v₀‖_{L²}`; needs no cell solution.
pub fn naive_gradient_error(eps: &Trajectory, hom: &Trajectory) -> Result<f64> {
    if eps.grid != hom.grid {
        return Err(Error::Alignment("trajectories live on different grids".into()));
    }
    let topo = Topology::new(eps.grid.spatial());
    let mut acc = 0.0;
    for n in 1..=eps.grid.nt {
        for c in 0..topo.cell_count() {
            acc += sq(sub(topo.cell_gradient(&eps.v[n], c), topo.cell_gradient(&hom.v[n], c)));
        }
    }
    Ok((acc * topo.measure() * eps.grid.tau()).sqrt())
}

pub fn energy_defect(
    eps: &Trajectory,
    hom: &Trajectory,
    tensor: &HomogenizedTensor,
    field: &CoefficientField,
    g: &EpsilonGeometry,
) -> Result<EnergyDefect> {
    Ok(CorrectorFields::assemble(eps, hom, tensor, field, g)?.energy())
}

/// Inputs of an ε-sweep.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub name: String,
    pub p: f64,
    pub r: f64,
    pub dim: usize,
    pub domain_length: f64,
    pub horizon: f64,
    /// Strictly decreasing.
    pub epsilons: Vec<f64>,
    /// Fine cells per ε-period and axis (`ε/h`).
    pub cells_per_period: usize,
    /// Fine steps per ε^r-period (`ε^r/τ`).
    pub steps_per_period: usize,
    pub coefficient: CoefficientField,
    pub initial: Data,
    pub forcing: Data,
    pub stepper: StepperConfig,
    pub periodic: PeriodicConfig,
    /// Extra regimes whose tensor is reported next to the study's own.
    pub compare_regimes: Vec<Regime>,
    /// Table spot checks per ε (critical regimes).
    pub spot_checks: usize,
    pub seed: u64,
}

impl StudyConfig {
    pub fn regime(&self) -> Result<Regime> {
        Regime::classify(self.p, self.r)
    }

    /// Fine grid for one ε.
    pub fn grid_for(&self, eps: f64) -> Result<MacroGrid> {
        let nx = as_integer(self.domain_length * self.cells_per_period as f64 / eps);
        let nt = as_integer(self.horizon * self.steps_per_period as f64 / eps.powf(self.r));
        match (nx, nt) {
            (Some(nx), Some(nt)) => MacroGrid::new(self.dim, nx, nt, self.domain_length, self.horizon),
            _ => Err(Error::Config(format!(
                "ε = {eps} is not aligned: L·m/ε = {} and T·ms/ε^r = {} must be integers",
                self.domain_length * self.cells_per_period as f64 / eps,
                self.horizon * self.steps_per_period as f64 / eps.powf(self.r)
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.regime()?;
        if self.dim != self.coefficient.dim {
            return Err(Error::Config(format!(
                "study is {}-dimensional but the coefficient is {}-dimensional",
                self.dim, self.coefficient.dim
            )));
        }
        if self.epsilons.is_empty() {
            return Err(Error::Config("epsilon list is empty".into()));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(format!("epsilon list {:?} is not strictly decreasing", self.epsilons)));
        }
        if self.cells_per_period < 8 || self.steps_per_period < 8 {
            return Err(Error::Config(format!(
                "need at least 8 cells and 8 steps per period, have {} and {}",
                self.cells_per_period, self.steps_per_period
            )));
        }
        if matches!(self.initial, Data::Tabulated(_)) || matches!(self.forcing, Data::Tabulated(_)) {
            return Err(Error::Config("studies need closed-form data (grids change with ε)".into()));
        }
        for &e in &self.epsilons {
            EpsilonGeometry::new(e, self.r, self.grid_for(e)?)?;
        }
        self.stepper.validate()
    }

    fn spec(&self, grid: MacroGrid, eps: Option<f64>) -> ProblemSpec {
        ProblemSpec {
            p: self.p,
            r: self.r,
            epsilon: eps,
            grid,
            initial: self.initial.clone(),
            forcing: self.forcing.clone(),
        }
    }

    /// Bound on `|u₀|` used for the critical table: the largest nodal
    /// `|u⁰|` on the finest grid.
    fn u_max(&self) -> Result<f64> {
        let eps = *self.epsilons.last().unwrap();
        let grid = self.grid_for(eps)?;
        let u0 = self.initial.nodal(&grid, 0, 0.0)?;
        let m = u0.iter().fold(0.0f64, |a, u| a.max(u.abs()));
        Ok(if m > 0.0 { m } else { 1.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSummary {
    pub parameter_max: f64,
    pub eta: f64,
    pub tensors: Vec<Tensor>,
    pub zero_tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub ny: usize,
    pub ns: usize,
    pub matrix: Option<Tensor>,
    pub table: Option<TableSummary>,
    pub min_rayleigh: f64,
    pub max_symmetry_defect: f64,
    pub gradient_bound: f64,
    pub max_period_defect: f64,
    pub max_contraction: f64,
    pub flux_orthogonality: f64,
    pub flux_orthogonality_symmetric: f64,
}

impl CellSummary {
    pub fn of(tensor: &HomogenizedTensor, field: &CoefficientField, cg: CellGrid) -> Self {
        let (matrix, table, sols): (_, _, Vec<&CellSolution>) = match tensor {
            HomogenizedTensor::Constant { matrix, solution, .. } => (Some(*matrix), None, vec![solution]),
            HomogenizedTensor::Critical(t) => (
                None,
                Some(TableSummary {
                    parameter_max: t.parameter_max,
                    eta: t.eta,
                    tensors: t.tensors.clone(),
                    zero_tensor: t.zero_tensor,
                }),
                t.samples.iter().collect(),
            ),
        };
        let tensors: Vec<Tensor> = match (&matrix, &table) {
            (Some(m), _) => vec![*m],
            (_, Some(t)) => t.tensors.iter().copied().chain([t.zero_tensor]).collect(),
            _ => Vec::new(),
        };
        let ortho: Vec<(f64, f64)> = sols.iter().map(|s| s.flux_orthogonality(field)).collect();
        CellSummary {
            ny: cg.ny,
            ns: cg.ns,
            matrix,
            table,
            min_rayleigh: tensors.iter().map(|t| t.rayleigh_range().0).fold(f64::INFINITY, f64::min),
            max_symmetry_defect: tensors.iter().map(Tensor::symmetry_defect).fold(0.0, f64::max),
            gradient_bound: sols.iter().map(|s| s.gradient_bound()).fold(0.0, f64::max),
            max_period_defect: sols.iter().map(|s| s.max_period_defect()).fold(0.0, f64::max),
            max_contraction: sols.iter().map(|s| s.max_contraction()).fold(0.0, f64::max),
            flux_orthogonality: ortho.iter().map(|o| o.0).fold(0.0, f64::max),
            flux_orthogonality_symmetric: ortho.iter().map(|o| o.1).fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeTensor {
    pub regime: String,
    pub matrix: Tensor,
}

/// Everything computed for one ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorMetrics {
    pub e_grad: f64,
    pub e_flux: f64,
    pub e_dt: f64,
    /// `max(0, E_dt − E_flux)/τ`, the constant in `E_dt ≤ E_flux + C·τ`.
    pub dt_constant: f64,
    pub e_naive: f64,
    pub corrector_norm: f64,
    pub energy: EnergyDefect,
    pub split_local: f64,
    pub split_averaging: f64,
    pub unfolding_defect: f64,
    pub lambda_mass: f64,
    pub pairing_eps: f64,
    pub pairing_limit: f64,
    pub pairing_defect: f64,
    pub energy_balance_eps: f64,
    pub newton_iterations_eps: usize,
    pub newton_iterations_hom: usize,
    pub max_residual_eps: f64,
    pub max_residual_hom: f64,
    pub refined_steps_eps: usize,
    pub refined_steps_hom: usize,
    pub zero_branch_cells: usize,
    pub min_rayleigh_hom: f64,
    pub spot_check: Option<SpotCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRun {
    pub epsilon: f64,
    pub nx: usize,
    pub nt: usize,
    pub h: f64,
    pub tau: f64,
    pub ok: bool,
    pub error: Option<String>,
    pub metrics: Option<CorrectorMetrics>,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorReport {
    pub schema_version: u32,
    pub name: String,
    pub p: f64,
    pub r: f64,
    pub regime: String,
    pub dim: usize,
    pub coefficient: String,
    pub lambda: f64,
    pub upper: f64,
    pub cells_per_period: usize,
    pub steps_per_period: usize,
    pub cell: CellSummary,
    pub comparison: Vec<RegimeTensor>,
    pub runs: Vec<EpsilonRun>,
}

impl CorrectorReport {
    pub fn completed(&self) -> impl Iterator<Item = (&EpsilonRun, &CorrectorMetrics)> {
        self.runs.iter().filter_map(|r| r.metrics.as_ref().map(|m| (r, m)))
    }

    /// Per-ε domination checks `E_flux ≤ Λ·E_grad + 1e-12` and
    /// `E_dt ≤ E_flux + C·τ`; returns the failures.
    pub fn domination_failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (run, m) in self.completed() {
            if m.e_flux > self.upper * m.e_grad + 1e-12 {
                out.push(format!("ε = {}: E_flux {} > Λ·E_grad {}", run.epsilon, m.e_flux, self.upper * m.e_grad));
            }
            if m.e_dt > m.e_flux + m.dt_constant * run.tau * (1.0 + 1e-12) + 1e-15 {
                out.push(format!("ε = {}: E_dt {} > E_flux + C·τ", run.epsilon, m.e_dt));
            }
        }
        out
    }

    pub fn check_entries(&self) -> Result<()> {
        for (run, m) in self.completed() {
            let vals = [
                m.e_grad,
                m.e_flux,
                m.e_dt,
                m.dt_constant,
                m.e_naive,
                m.energy.defect,
                m.unfolding_defect,
                m.pairing_defect,
            ];
            if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Validation(format!("ε = {}: report entry negative or not finite", run.epsilon)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: CorrectorReport = serde_json::from_str(s)?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!("unsupported report schema version {}", r.schema_version)));
        }
        Ok(r)
    }

    /// `ε` against the functionals, one row per ε; failed runs have empty
    /// cells.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "epsilon",
            "ok",
            "e_grad",
            "e_flux",
            "e_dt",
            "e_naive",
            "energy_defect",
            "corrector_norm",
            "split_local",
            "split_averaging",
            "unfolding_defect",
            "pairing_defect",
        ])?;
        for run in &self.runs {
            let mut row = vec![run.epsilon.to_string(), run.ok.to_string()];
            match &run.metrics {
                Some(m) => row.extend(
                    [
                        m.e_grad,
                        m.e_flux,
                        m.e_dt,
                        m.e_naive,
                        m.energy.defect,
                        m.corrector_norm,
                        m.split_local,
                        m.split_averaging,
                        m.unfolding_defect,
                        m.pairing_defect,
                    ]
                    .iter()
                    .map(f64::to_string),
                ),
                None => row.extend(std::iter::repeat_n(String::new(), 10)),
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        self.write_csv(&dir.join("report.csv"))
    }
}

/// Cell problems of a study, solved once for all ε.
pub fn study_tensor(cfg: &StudyConfig) -> Result<(HomogenizedTensor, CellGrid)> {
    let regime = cfg.regime()?;
    let cg = CellGrid::new(cfg.dim, cfg.cells_per_period, cfg.steps_per_period)?;
    let u_max = if regime.is_critical() { Some(cfg.u_max()?) } else { None };
    let tensor = HomogenizedTensor::compute(regime, &cfg.coefficient, cg, cfg.p, u_max, &cfg.periodic)?;
    Ok((tensor, cg))
}

fn pairing_test(length: f64, dim: usize) -> SeparableTest {
    use std::f64::consts::PI;
    SeparableTest::new(
        move |x| (0..dim).map(|d| x[d] / length * (PI * x[d] / length).sin()).product(),
        |_| 1.0,
        |y| (2.0 * PI * y[0]).sin() + (2.0 * PI * y[0]).cos(),
        |_| 1.0,
    )
}

/// Solves both problems at one ε and evaluates every functional.
pub fn run_epsilon(cfg: &StudyConfig, tensor: &HomogenizedTensor, eps: f64) -> Result<CorrectorMetrics> {
    let grid = cfg.grid_for(eps)?;
    let g = EpsilonGeometry::new(eps, cfg.r, grid)?;
    let traj_eps = solve_eps(&cfg.spec(grid, Some(eps)), &cfg.coefficient, &cfg.stepper)?;
    let traj_hom = solve_hom(&cfg.spec(grid, None), tensor, &cfg.stepper)?;
    let fields = CorrectorFields::assemble(&traj_eps, &traj_hom, tensor, &cfg.coefficient, &g)?;
    let e_grad = fields.gradient_error();
    let e_flux = fields.flux_error();
    let e_dt = fields.dt_error(&traj_eps, &traj_hom)?;
    let (split_local, split_averaging) = fields.split_terms();
    let unfolding = fields.unfolding_defect(tensor, &traj_hom)?;
    let (pairing_eps, pairing_limit) = fields.pairing(tensor, &traj_hom, &pairing_test(cfg.domain_length, cfg.dim))?;
    let balance = energy_balance(&traj_eps, &OscillatingCoefficient::new(&cfg.coefficient, eps, cfg.r))?;
    let spot_check = match tensor {
        HomogenizedTensor::Critical(_) if cfg.spot_checks > 0 => Some(tensor.spot_check(&traj_hom, cfg.spot_checks, cfg.seed)?),
        _ => None,
    };
    let metrics = CorrectorMetrics {
        e_grad,
        e_flux,
        e_dt,
        dt_constant: (e_dt - e_flux).max(0.0) / grid.tau(),
        e_naive: fields.naive_error(),
        corrector_norm: fields.corrector_norm(),
        energy: fields.energy(),
        split_local,
        split_averaging,
        unfolding_defect: unfolding.norm,
        lambda_mass: unfolding.lambda_mass,
        pairing_eps,
        pairing_limit,
        pairing_defect: (pairing_eps - pairing_limit).abs(),
        energy_balance_eps: if cfg.forcing.is_zero() { balance.relative_defect() } else { 0.0 },
        newton_iterations_eps: traj_eps.newton_iterations.iter().sum(),
        newton_iterations_hom: traj_hom.newton_iterations.iter().sum(),
        max_residual_eps: traj_eps.residuals.iter().copied().fold(0.0, f64::max),
        max_residual_hom: traj_hom.residuals.iter().copied().fold(0.0, f64::max),
        refined_steps_eps: traj_eps.refined_steps.len(),
        refined_steps_hom: traj_hom.refined_steps.len(),
        zero_branch_cells: fields.zero_branch_cells,
        min_rayleigh_hom: fields
            .a_hom
            .iter()
            .map(|t| t.rayleigh_range().0)
            .fold(f64::INFINITY, f64::min),
        spot_check,
    };
    Ok(metrics)
}

/// Runs the whole ε-sweep. Cell problems are solved once; per-ε failures
/// are recorded and the remaining ε still run.
pub fn run_study(cfg: &StudyConfig) -> Result<CorrectorReport> {
    cfg.validate()?;
    let regime = cfg.regime()?;
    let (tensor, cg) = study_tensor(cfg)?;
    let u_ref = cfg.u_max()?;
    let comparison = cfg
        .compare_regimes
        .iter()
        .map(|&reg| -> Result<RegimeTensor> {
            let t = HomogenizedTensor::compute(reg, &cfg.coefficient, cg, cfg.p, Some(u_ref), &cfg.periodic)?;
            Ok(RegimeTensor {
                regime: reg.name().to_string(),
                matrix: t.at(u_ref),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<EpsilonRun> = cfg
        .epsilons
        .par_iter()
        .map(|&eps| {
            let start = Instant::now();
            let grid = cfg.grid_for(eps).ok();
            let result = run_epsilon(cfg, &tensor, eps);
            let (ok, error, metrics) = match result {
                Ok(m) => (true, None, Some(m)),
                Err(e) => (false, Some(e.to_string()), None),
            };
            EpsilonRun {
                epsilon: eps,
                nx: grid.map_or(0, |g| g.nx),
                nt: grid.map_or(0, |g| g.nt),
                h: grid.map_or(0.0, |g| g.h()),
                tau: grid.map_or(0.0, |g| g.tau()),
                ok,
                error,
                metrics,
                runtime_seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    Ok(CorrectorReport {
        schema_version: SCHEMA_VERSION,
        name: cfg.name.clone(),
        p: cfg.p,
        r: cfg.r,
        regime: regime.name().to_string(),
        dim: cfg.dim,
        coefficient: cfg.coefficient.describe(),
        lambda: cfg.coefficient.lambda,
        upper: cfg.coefficient.upper,
        cells_per_period: cfg.cells_per_period,
        steps_per_period: cfg.steps_per_period,
        cell: CellSummary::of(&tensor, &cfg.coefficient, cg),
        comparison,
        runs,
    })
}

/// Writes the unfolded `∇v_ε` of one ε as a binary dump.
pub fn dump_unfolded_gradient(fields: &CorrectorFields, path: &Path) -> Result<()> {
    let w = fields.gradient_field(&fields.grad_eps);
    unfold::unfold(&w, &fields.geometry)?.write_binary(path)
}

/// `‖w‖_{L²}` of a space-time field, restricted to `Ω̂_ε×Î_ε`.
pub fn covered_norm(w: &SpaceTimeField, g: &EpsilonGeometry) -> Result<f64> {
    let mask: Vec<bool> = g.lambda_mask.iter().map(|b| !b).collect();
    mesh::l2_norm_space_time(w, Some(&mask))
}
