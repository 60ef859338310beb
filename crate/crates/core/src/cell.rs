//! Cell problems on `□×J` and the homogenized tensor.
//!
//! | regime        | `(p, r)`            | corrector problem                                   |
//! |---------------|---------------------|-----------------------------------------------------|
//! | subcritical   | `r < 2`             | `−div_y(a(y,s)[∇Φ + e_k]) = 0`, `s` a parameter     |
//! | critical FDE  | `r = 2`, `p < 1`    | `c ∂_sΦ = div_y(a[∇Φ + e_k])`, `c = |u₀|^{1−p}/p`    |
//! | critical PME  | `r = 2`, `p ≥ 1`    | `∂_sΨ = div_y(a[κ∇Ψ + e_k])`, `Φ = κΨ`, `κ = p|u₀|^{p−1}` |
//! | supercritical | `r > 2`             | `−div_y(ā(y)[∇Φ + e_k]) = 0`, `ā = ∫a ds`           |
//!
//! Both critical problems are solved in the common form
//! `cap · ∂_sΦ = div_y(a[∇Φ + e_k])` (with `cap = 1/κ` for the porous
//! medium case) by backward Euler in `s` and fixed-point iteration of the
//! period map.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::{CoefficientField, CoefficientSliceY};
use crate::diffusion::{CoefficientProvider, Trajectory};
use crate::linalg::{self, Constraint, CsrMatrix, SolverConfig};
use crate::mesh::{CellGrid, StiffnessAssembler, Topology};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    Subcritical,
    CriticalFde,
    CriticalPme,
    Supercritical,
}

impl Regime {
    /// `p = 1` at `r = 2` is routed to the porous-medium branch, where
    /// `κ = 1` gives the linear parabolic cell problem.
    pub fn classify(p: f64, r: f64) -> Result<Regime> {
        if !(p > 0.0 && r > 0.0 && p.is_finite() && r.is_finite()) {
            return Err(Error::Config(format!("p and r must be positive (p = {p}, r = {r})")));
        }
        Ok(if (r - 2.0).abs() < 1e-12 {
            if p < 1.0 {
                Regime::CriticalFde
            } else {
                Regime::CriticalPme
            }
        } else if r < 2.0 {
            Regime::Subcritical
        } else {
            Regime::Supercritical
        })
    }

    pub fn is_critical(self) -> bool {
        matches!(self, Regime::CriticalFde | Regime::CriticalPme)
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Subcritical => "subcritical",
            Regime::CriticalFde => "critical-fde",
            Regime::CriticalPme => "critical-pme",
            Regime::Supercritical => "supercritical",
        }
    }

    pub fn from_name(name: &str) -> Result<Regime> {
        match name {
            "subcritical" => Ok(Regime::Subcritical),
            "critical-fde" => Ok(Regime::CriticalFde),
            "critical-pme" => Ok(Regime::CriticalPme),
            "supercritical" => Ok(Regime::Supercritical),
            _ => Err(Error::Config(format!(
                "unknown regime '{name}' (subcritical, critical-fde, critical-pme, supercritical)"
            ))),
        }
    }
}

/// Settings of the periodic-in-`s` solver.
#[derive(Debug, Clone, Copy)]
pub struct PeriodicConfig {
    /// Stop when `‖Φ(1) − Φ(0)‖ ≤ tolerance · max(1, ‖Φ(0)‖)`.
    pub tolerance: f64,
    pub max_periods: usize,
    /// Extrapolate along the dominant mode once the contraction ratio has
    /// settled.
    pub accelerate: bool,
    pub linear: SolverConfig,
}

impl Default for PeriodicConfig {
    fn default() -> Self {
        PeriodicConfig {
            tolerance: 1e-9,
            max_periods: 200,
            accelerate: true,
            linear: SolverConfig {
                tolerance: 1e-12,
                ..SolverConfig::default()
            },
        }
    }
}

/// Corrector for one direction `e_k`.
#[derive(Debug, Clone)]
pub struct Corrector {
    pub k: usize,
    /// Nodal `Φ_k` per `s`-slab (one slab if `s`-independent).
    pub phi: Vec<Vec<f64>>,
    /// `∇_yΦ_k` per slab and cell.
    pub grad: Vec<Vec<[f64; 2]>>,
    /// `Ψ_k = Φ_k/κ` (porous-medium branch away from `u₀ = 0`).
    pub psi: Option<Vec<Vec<f64>>>,
    pub periods: usize,
    pub period_defect: f64,
    /// `‖d_{m+1}‖/‖d_m‖` for consecutive plain period-map applications,
    /// `d_m = Φ^{(m)}(1) − Φ^{(m)}(0)`.
    pub contraction: Vec<f64>,
}

impl Corrector {
    fn zero(k: usize, topo: &Topology) -> Self {
        Corrector {
            k,
            phi: vec![vec![0.0; topo.node_count()]],
            grad: vec![vec![[0.0; 2]; topo.cell_count()]],
            psi: None,
            periods: 0,
            period_defect: 0.0,
            contraction: Vec::new(),
        }
    }

    pub fn slabs(&self) -> usize {
        self.phi.len()
    }

    /// `‖∇_yΦ_k‖_{L²(□×J)}`.
    pub fn gradient_norm(&self, topo: &Topology) -> f64 {
        let w = topo.measure() / self.slabs() as f64;
        let s: f64 = self
            .grad
            .iter()
            .flatten()
            .map(|g| g[0] * g[0] + g[1] * g[1])
            .sum();
        (w * s).sqrt()
    }
}

/// Correctors for every direction in one regime (at one `|u₀|` sample in
/// the critical regimes).
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub regime: Regime,
    pub grid: CellGrid,
    /// The critical parameter (`κ` or `c`) the solution was computed at.
    pub parameter: Option<f64>,
    pub correctors: Vec<Corrector>,
}

impl CellSolution {
    pub fn slabs(&self) -> usize {
        self.correctors.iter().map(Corrector::slabs).max().unwrap_or(1)
    }

    /// `∇_yΦ_k` on micro cell `cell` at `s`-slab `slab` of the cell grid.
    #[inline]
    pub fn grad(&self, k: usize, slab: usize, cell: usize) -> [f64; 2] {
        let c = &self.correctors[k];
        let j = if c.slabs() == 1 { 0 } else { slab };
        c.grad[j][cell]
    }

    /// Largest `‖∇_yΦ_k‖_{L²(□×J)}` over `k`.
    pub fn gradient_bound(&self) -> f64 {
        let topo = Topology::new(self.grid.spatial());
        self.correctors
            .iter()
            .map(|c| c.gradient_norm(&topo))
            .fold(0.0, f64::max)
    }

    pub fn max_period_defect(&self) -> f64 {
        self.correctors.iter().map(|c| c.period_defect).fold(0.0, f64::max)
    }

    pub fn max_contraction(&self) -> f64 {
        self.correctors
            .iter()
            .flat_map(|c| c.contraction.iter().copied())
            .fold(0.0, f64::max)
    }

    /// `a_hom e_k = ∫_J ∫_□ a(∇_yΦ_k + e_k)` by midpoint quadrature on the
    /// cell grid.
    pub fn homogenized_matrix(&self, field: &CoefficientField) -> Tensor {
        let quad = CellQuadrature::new(field, self.grid);
        let dim = self.grid.dim;
        let mut m = Tensor::zeros(dim);
        let w = quad.topo.measure() / self.grid.ns as f64;
        for k in 0..dim {
            let mut col = [0.0; 2];
            for j in 0..self.grid.ns {
                for c in 0..quad.topo.cell_count() {
                    let mut g = self.grad(k, j, c);
                    g[k] += 1.0;
                    let f = quad.tensor(j, c).apply(g);
                    col[0] += w * f[0];
                    col[1] += w * f[1];
                }
            }
            for i in 0..dim {
                m.m[i][k] = col[i];
            }
        }
        m
    }

    /// `max_{j,k} |∫∫ a(∇_yΦ_k + e_k)·∇_yΦ_j|`, and the same for the
    /// symmetrized form `(j,k) + (k,j)`.
    pub fn flux_orthogonality(&self, field: &CoefficientField) -> (f64, f64) {
        let quad = CellQuadrature::new(field, self.grid);
        let dim = self.grid.dim;
        let w = quad.topo.measure() / self.grid.ns as f64;
        let mut b = [[0.0; 2]; 2];
        for (k, row) in b.iter_mut().enumerate().take(dim) {
            for (jdir, entry) in row.iter_mut().enumerate().take(dim) {
                let mut acc = 0.0;
                for j in 0..self.grid.ns {
                    for c in 0..quad.topo.cell_count() {
                        let mut g = self.grad(k, j, c);
                        g[k] += 1.0;
                        let f = quad.tensor(j, c).apply(g);
                        let gj = self.grad(jdir, j, c);
                        acc += w * (f[0] * gj[0] + f[1] * gj[1]);
                    }
                }
                *entry = acc;
            }
        }
        let mut full: f64 = 0.0;
        let mut sym: f64 = 0.0;
        for k in 0..dim {
            for j in 0..dim {
                full = full.max(b[k][j].abs());
                sym = sym.max((b[k][j] + b[j][k]).abs());
            }
        }
        (full, sym)
    }
}

/// Coefficient samples `a(y_c, s_j)` at micro centroids and slab
/// midpoints.
struct CellQuadrature {
    topo: Topology,
    tensors: Vec<Vec<Tensor>>,
}

impl CellQuadrature {
    fn new(field: &CoefficientField, cg: CellGrid) -> Self {
        let topo = Topology::new(cg.spatial());
        let slabs = if field.is_s_independent() { 1 } else { cg.ns };
        let tensors = (0..slabs)
            .map(|j| {
                let s = (j as f64 + 0.5) / cg.ns as f64;
                (0..topo.cell_count())
                    .map(|c| field.sample(micro_centroid(&cg, c), s))
                    .collect()
            })
            .collect();
        CellQuadrature { topo, tensors }
    }

    #[inline]
    fn tensor(&self, slab: usize, cell: usize) -> &Tensor {
        let j = if self.tensors.len() == 1 { 0 } else { slab };
        &self.tensors[j][cell]
    }
}

/// Centroid of micro cell `c` in `□` coordinates.
pub fn micro_centroid(cg: &CellGrid, c: usize) -> [f64; 2] {
    let g = cg.spatial();
    let (sq, kind) = g.cell_position(c);
    let off = g.centroid_offset(kind);
    let mut y = [0.0; 2];
    for d in 0..cg.dim {
        y[d] = (sq[d] as f64 + off) / cg.ny as f64;
    }
    y
}

fn check_grid(field: &CoefficientField, cg: &CellGrid) -> Result<()> {
    if field.dim != cg.dim {
        return Err(Error::Config(format!(
            "coefficient is {}-dimensional, cell grid is {}-dimensional",
            field.dim, cg.dim
        )));
    }
    if cg.ny < 2 {
        return Err(Error::Config("cell grid needs ny >= 2".into()));
    }
    Ok(())
}

fn check_direction(k: usize, dim: usize) -> Result<()> {
    if k >= dim {
        return Err(Error::Config(format!("direction {k} out of range for dim {dim}")));
    }
    Ok(())
}

/// Load `F_a = ∫ A e_k·∇φ_a` for cellwise tensors.
fn direction_load(topo: &Topology, tensors: &[Tensor], k: usize) -> Vec<f64> {
    topo.gradient_transpose(&|c| {
        let mut e = [0.0; 2];
        e[k] = 1.0;
        tensors[c].apply(e)
    })
}

fn gradients(topo: &Topology, phi: &[f64]) -> Vec<[f64; 2]> {
    (0..topo.cell_count()).map(|c| topo.cell_gradient(phi, c)).collect()
}

fn elliptic_with(topo: &Topology, asm: &StiffnessAssembler, tensors: &[Tensor], k: usize) -> Result<(Vec<f64>, Vec<[f64; 2]>)> {
    let kmat = asm.assemble(&|c| tensors[c]);
    let rhs: Vec<f64> = direction_load(topo, tensors, k).iter().map(|v| -v).collect();
    let cfg = SolverConfig {
        tolerance: 1e-12,
        ..SolverConfig::default()
    };
    let phi = linalg::solve_spd(&kmat, &rhs, &cfg, Constraint::ZeroMean)?.x;
    let grad = gradients(topo, &phi);
    Ok((phi, grad))
}

/// Periodic `−div_y(a(y)[∇Φ_k + e_k]) = 0` with zero mean.
pub fn solve_cp_elliptic(slice: &CoefficientSliceY, cg: CellGrid, k: usize) -> Result<Corrector> {
    if slice.dim() != cg.dim {
        return Err(Error::Config("coefficient slice and cell grid dimensions differ".into()));
    }
    check_direction(k, cg.dim)?;
    let topo = Topology::new(cg.spatial());
    let asm = StiffnessAssembler::new(&topo)?;
    let tensors: Vec<Tensor> = (0..topo.cell_count()).map(|c| slice.sample(micro_centroid(&cg, c))).collect();
    let (phi, grad) = elliptic_with(&topo, &asm, &tensors, k)?;
    Ok(Corrector {
        k,
        phi: vec![phi],
        grad: vec![grad],
        psi: None,
        periods: 0,
        period_defect: 0.0,
        contraction: Vec::new(),
    })
}

/// One elliptic solve per `s`-slab midpoint.
pub fn solve_cp_subcritical(field: &CoefficientField, cg: CellGrid, k: usize) -> Result<Corrector> {
    check_grid(field, &cg)?;
    check_direction(k, cg.dim)?;
    if field.is_s_independent() {
        return solve_cp_elliptic(&CoefficientSliceY::frozen(field, 0.5), cg, k);
    }
    let topo = Topology::new(cg.spatial());
    let asm = StiffnessAssembler::new(&topo)?;
    let quad = CellQuadrature::new(field, cg);
    let slabs = (0..cg.ns)
        .map(|j| elliptic_with(&topo, &asm, &quad.tensors[j], k))
        .collect::<Result<Vec<_>>>()?;
    let (phi, grad) = slabs.into_iter().unzip();
    Ok(Corrector {
        k,
        phi,
        grad,
        psi: None,
        periods: 0,
        period_defect: 0.0,
        contraction: Vec::new(),
    })
}

/// Elliptic solve against the midpoint `s`-average of `a`.
pub fn solve_cp_supercritical(field: &CoefficientField, cg: CellGrid, k: usize) -> Result<Corrector> {
    check_grid(field, &cg)?;
    solve_cp_elliptic(&field.time_average(cg.ns)?, cg, k)
}

fn l2_mass(m: &[f64], v: &[f64]) -> f64 {
    m.iter().zip(v).map(|(m, x)| m * x * x).sum::<f64>().sqrt()
}

fn remove_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}

/// `cap ∂_sΦ = div_y(a[∇Φ + e_k])`, `s`-periodic, by period-map iteration
/// from `warm` (nodal initial state at `s = 0`).
pub fn solve_periodic(
    field: &CoefficientField,
    cg: CellGrid,
    cap: f64,
    k: usize,
    warm: Option<&[f64]>,
    cfg: &PeriodicConfig,
) -> Result<Corrector> {
    check_grid(field, &cg)?;
    check_direction(k, cg.dim)?;
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(Error::Config(format!("capacity must be positive and finite, got {cap}")));
    }
    let topo = Topology::new(cg.spatial());
    let asm = StiffnessAssembler::new(&topo)?;
    let quad = CellQuadrature::new(field, cg);
    let ds = cg.ds();
    let md: Vec<f64> = topo.node_mass().iter().map(|m| cap * m / ds).collect();
    let systems: Vec<(CsrMatrix, Vec<f64>)> = quad
        .tensors
        .iter()
        .map(|t| {
            let mut a = asm.assemble(&|c| t[c]);
            a.add_diagonal(&md);
            (a, direction_load(&topo, t, k))
        })
        .collect();
    let sys = |j: usize| &systems[if systems.len() == 1 { 0 } else { j }];
    let nn = topo.node_count();
    let march = |w0: &[f64], store: Option<&mut Vec<Vec<f64>>>| -> Result<Vec<f64>> {
        let mut w = w0.to_vec();
        let mut store = store;
        for j in 0..cg.ns {
            let (a, f) = sys(j);
            let rhs: Vec<f64> = (0..nn).map(|i| md[i] * w[i] - f[i]).collect();
            let mut next = linalg::solve_spd_from(a, &rhs, Some(&w), &cfg.linear, Constraint::None)?.x;
            remove_mean(&mut next);
            if let Some(s) = store.as_deref_mut() {
                s.push(next.clone());
            }
            w = next;
        }
        Ok(w)
    };
    let mass = topo.node_mass();
    let mut x = match warm {
        Some(w) if w.len() == nn => w.to_vec(),
        Some(_) => return Err(Error::Alignment("warm start has the wrong length".into())),
        None => vec![0.0; nn],
    };
    remove_mean(&mut x);
    let mut contraction = Vec::new();
    let mut prev_defect: Option<f64> = None;
    let mut prev_ratio: Option<f64> = None;
    let mut periods = 0;
    loop {
        let y = march(&x, None)?;
        periods += 1;
        let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let defect = l2_mass(mass, &d);
        let scale = l2_mass(mass, &y).max(1.0);
        let ratio = prev_defect.map(|p| if p > 0.0 { defect / p } else { 0.0 });
        if let Some(r) = ratio {
            contraction.push(r);
        }
        if defect <= cfg.tolerance * scale {
            x = y;
            break;
        }
        if periods >= cfg.max_periods {
            return Err(Error::PeriodMap {
                periods,
                defect,
                contraction: ratio.unwrap_or(f64::NAN),
            });
        }
        let settled = match (ratio, prev_ratio) {
            (Some(r), Some(q)) => r > 0.5 && r < 1.0 && (r - q).abs() < 0.02 * r,
            _ => false,
        };
        if cfg.accelerate && settled {
            let r = ratio.unwrap();
            let gain = r / (1.0 - r);
            x = y.iter().zip(&d).map(|(yi, di)| yi + gain * di).collect();
            remove_mean(&mut x);
            // the next defect is not a plain successor of this one
            prev_defect = None;
            prev_ratio = None;
        } else {
            x = y;
            prev_defect = Some(defect);
            prev_ratio = ratio;
        }
    }
    // final pass stores the periodic orbit; its start is the converged state
    let mut orbit = Vec::with_capacity(cg.ns);
    let end = march(&x, Some(&mut orbit))?;
    let d: Vec<f64> = end.iter().zip(&x).map(|(a, b)| a - b).collect();
    let period_defect = l2_mass(mass, &d);
    let grad = orbit.iter().map(|w| gradients(&topo, w)).collect();
    Ok(Corrector {
        k,
        phi: orbit,
        grad,
        psi: None,
        periods: periods + 1,
        period_defect,
        contraction,
    })
}

/// Critical fast-diffusion corrector at `u₀ = u0_value ≠ 0`, `0 < p < 1`.
pub fn solve_cp_critical_fde(
    field: &CoefficientField,
    cg: CellGrid,
    u0_value: f64,
    p: f64,
    k: usize,
    cfg: &PeriodicConfig,
) -> Result<Corrector> {
    if u0_value == 0.0 || !u0_value.is_finite() {
        return Err(Error::Config("fast-diffusion cell problem needs u0 != 0".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("fast-diffusion branch needs 0 < p < 1, got {p}")));
    }
    let cap = u0_value.abs().powf(1.0 - p) / p;
    let warm = solve_cp_subcritical(field, cg, k)?;
    solve_periodic(field, cg, cap, k, warm.phi.last().map(|v| v.as_slice()), cfg)
}

/// Critical porous-medium corrector at `u₀ = u0_value`, `p ≥ 1`.
///
/// `|u0_value| ≤ eta` selects the zero branch `Φ_k ≡ 0`.
pub fn solve_cp_critical_pme(
    field: &CoefficientField,
    cg: CellGrid,
    u0_value: f64,
    p: f64,
    k: usize,
    eta: f64,
    cfg: &PeriodicConfig,
) -> Result<Corrector> {
    check_grid(field, &cg)?;
    check_direction(k, cg.dim)?;
    if p < 1.0 {
        return Err(Error::Config(format!("porous-medium branch needs p >= 1, got {p}")));
    }
    if u0_value.abs() <= eta {
        return Ok(Corrector::zero(k, &Topology::new(cg.spatial())));
    }
    let kappa = p * u0_value.abs().powf(p - 1.0);
    let warm = solve_cp_supercritical(field, cg, k)?;
    let mut c = solve_periodic(field, cg, 1.0 / kappa, k, Some(&warm.phi[0]), cfg)?;
    c.psi = Some(c.phi.iter().map(|w| w.iter().map(|x| x / kappa).collect()).collect());
    Ok(c)
}

/// All directions of one regime; critical regimes take the table
/// parameter (`κ` for PME, `c` for FDE, zero meaning the `|u₀| → 0`
/// limit).
pub fn solve_cell(regime: Regime, field: &CoefficientField, cg: CellGrid, parameter: Option<f64>, cfg: &PeriodicConfig) -> Result<CellSolution> {
    check_grid(field, &cg)?;
    let dirs: Vec<usize> = (0..cg.dim).collect();
    let correctors = dirs
        .par_iter()
        .map(|&k| match (regime, parameter) {
            (Regime::Subcritical, _) => solve_cp_subcritical(field, cg, k),
            (Regime::Supercritical, _) => solve_cp_supercritical(field, cg, k),
            (Regime::CriticalPme, Some(kappa)) if kappa == 0.0 => solve_cp_supercritical(field, cg, k),
            (Regime::CriticalPme, Some(kappa)) => {
                let warm = solve_cp_supercritical(field, cg, k)?;
                solve_periodic(field, cg, 1.0 / kappa, k, Some(&warm.phi[0]), cfg)
            }
            (Regime::CriticalFde, Some(c)) if c == 0.0 => solve_cp_subcritical(field, cg, k),
            (Regime::CriticalFde, Some(c)) => {
                let warm = solve_cp_subcritical(field, cg, k)?;
                solve_periodic(field, cg, c, k, warm.phi.last().map(|v| v.as_slice()), cfg)
            }
            (_, None) => Err(Error::Config("critical cell problems need a parameter".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CellSolution {
        regime,
        grid: cg,
        parameter,
        correctors,
    })
}

/// Arithmetic mean `⟨a⟩` over `□×J` (midpoint rule on the cell grid).
pub fn arithmetic_mean(field: &CoefficientField, cg: CellGrid) -> Tensor {
    let quad = CellQuadrature::new(field, cg);
    let w = quad.topo.measure() / cg.ns as f64;
    let mut m = Tensor::zeros(cg.dim);
    for j in 0..cg.ns {
        for c in 0..quad.topo.cell_count() {
            m = m.axpy(w, quad.tensor(j, c));
        }
    }
    m
}

/// Critical-regime tensor: cell solutions tabulated on a uniform grid of
/// the parameter `κ = p|u₀|^{p−1}` (PME) or `c = |u₀|^{1−p}/p` (FDE),
/// linear interpolation in between.
#[derive(Debug, Clone)]
pub struct CriticalTable {
    pub regime: Regime,
    pub p: f64,
    /// Absolute zero-branch threshold on `|u₀|`.
    pub eta: f64,
    pub parameter_max: f64,
    pub samples: Vec<CellSolution>,
    pub tensors: Vec<Tensor>,
    /// Tensor used on the zero branch (`Φ = 0`): `⟨a⟩`.
    pub zero_tensor: Tensor,
    field: CoefficientField,
    cfg: PeriodicConfig,
}

/// Interpolation weights into a [`CriticalTable`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TableWeights {
    Zero,
    Blend { lo: usize, w_lo: f64, hi: usize, w_hi: f64 },
}

impl CriticalTable {
    pub const SAMPLES: usize = 32;

    /// Builds the table for `|u₀| ≤ u_max`. Larger values are clamped to
    /// the last sample.
    pub fn build(regime: Regime, field: &CoefficientField, cg: CellGrid, p: f64, u_max: f64, cfg: &PeriodicConfig) -> Result<Self> {
        if !regime.is_critical() {
            return Err(Error::Config("critical table requested for a non-critical regime".into()));
        }
        if !(u_max > 0.0 && u_max.is_finite()) {
            return Err(Error::Config(format!("critical table needs max |u0| > 0, got {u_max}")));
        }
        let mut table = CriticalTable {
            regime,
            p,
            eta: 1e-7 * u_max,
            parameter_max: 0.0,
            samples: Vec::new(),
            tensors: Vec::new(),
            zero_tensor: arithmetic_mean(field, cg),
            field: field.clone(),
            cfg: *cfg,
        };
        table.parameter_max = table.parameter(u_max);
        let n = Self::SAMPLES;
        let params: Vec<f64> = (0..n).map(|i| table.parameter_max * i as f64 / (n - 1) as f64).collect();
        let samples = params
            .par_iter()
            .map(|&q| solve_cell(regime, field, cg, Some(q), cfg))
            .collect::<Result<Vec<_>>>()?;
        table.tensors = samples.iter().map(|s| s.homogenized_matrix(field)).collect();
        table.samples = samples;
        Ok(table)
    }

    /// Table parameter of `|u₀|`.
    pub fn parameter(&self, u0_abs: f64) -> f64 {
        match self.regime {
            Regime::CriticalPme => self.p * u0_abs.powf(self.p - 1.0),
            _ => u0_abs.powf(1.0 - self.p) / self.p,
        }
    }

    pub fn weights(&self, u0_abs: f64) -> TableWeights {
        if self.regime == Regime::CriticalPme && u0_abs <= self.eta {
            return TableWeights::Zero;
        }
        let n = self.samples.len();
        let q = self.parameter(u0_abs).min(self.parameter_max);
        let x = q / self.parameter_max * (n - 1) as f64;
        let lo = (x.floor() as usize).min(n - 2);
        let w_hi = x - lo as f64;
        TableWeights::Blend {
            lo,
            w_lo: 1.0 - w_hi,
            hi: lo + 1,
            w_hi,
        }
    }

    pub fn lookup(&self, u0_abs: f64) -> Tensor {
        match self.weights(u0_abs) {
            TableWeights::Zero => self.zero_tensor,
            TableWeights::Blend { lo, w_lo, hi, w_hi } => self.tensors[lo].scale(w_lo).axpy(w_hi, &self.tensors[hi]),
        }
    }

    /// Solves the cell problem at `|u₀|` directly (no table).
    pub fn solve_direct(&self, u0_abs: f64) -> Result<Tensor> {
        if self.regime == Regime::CriticalPme && u0_abs <= self.eta {
            return Ok(self.zero_tensor);
        }
        let cg = self.samples[0].grid;
        let sol = solve_cell(self.regime, &self.field, cg, Some(self.parameter(u0_abs)), &self.cfg)?;
        Ok(sol.homogenized_matrix(&self.field))
    }

    pub fn max_period_defect(&self) -> f64 {
        self.samples.iter().map(CellSolution::max_period_defect).fold(0.0, f64::max)
    }

    pub fn max_contraction(&self) -> f64 {
        self.samples.iter().map(CellSolution::max_contraction).fold(0.0, f64::max)
    }

    pub fn gradient_bound(&self) -> f64 {
        self.samples.iter().map(CellSolution::gradient_bound).fold(0.0, f64::max)
    }
}

/// The homogenized matrix: constant for `r ≠ 2`, a function of `|u₀|`
/// at `r = 2`.
#[derive(Debug, Clone)]
pub enum HomogenizedTensor {
    Constant {
        regime: Regime,
        matrix: Tensor,
        solution: CellSolution,
    },
    Critical(Box<CriticalTable>),
}

impl HomogenizedTensor {
    /// Solves the cell problems of `regime` and assembles the tensor.
    /// `u_max` bounds `|u₀|` (critical regimes only).
    pub fn compute(regime: Regime, field: &CoefficientField, cg: CellGrid, p: f64, u_max: Option<f64>, cfg: &PeriodicConfig) -> Result<Self> {
        if regime.is_critical() {
            let u_max = u_max.ok_or_else(|| Error::Config("critical regime needs the range of |u0|".into()))?;
            Ok(HomogenizedTensor::Critical(Box::new(CriticalTable::build(regime, field, cg, p, u_max, cfg)?)))
        } else {
            let solution = solve_cell(regime, field, cg, None, cfg)?;
            Ok(HomogenizedTensor::Constant {
                regime,
                matrix: solution.homogenized_matrix(field),
                solution,
            })
        }
    }

    pub fn regime(&self) -> Regime {
        match self {
            HomogenizedTensor::Constant { regime, .. } => *regime,
            HomogenizedTensor::Critical(t) => t.regime,
        }
    }

    pub fn at(&self, u0_abs: f64) -> Tensor {
        match self {
            HomogenizedTensor::Constant { matrix, .. } => *matrix,
            HomogenizedTensor::Critical(t) => t.lookup(u0_abs),
        }
    }

    /// Nodal tensor field of a homogenized trajectory at levels `1..=nt`,
    /// each level using the lagged `|u₀|` of the level before.
    pub fn node_field(&self, traj: &Trajectory) -> NodeTensorField {
        let nt = traj.grid.nt;
        let mut tensors = Vec::with_capacity(nt);
        let mut zero_branch = Vec::with_capacity(nt);
        for n in 1..=nt {
            let u = &traj.u[n - 1];
            tensors.push(u.iter().map(|x| self.at(x.abs())).collect());
            zero_branch.push(
                u.iter()
                    .map(|x| match self {
                        HomogenizedTensor::Critical(t) => t.weights(x.abs()) == TableWeights::Zero,
                        _ => false,
                    })
                    .collect(),
            );
        }
        NodeTensorField { tensors, zero_branch }
    }

    /// Re-solves the cell problem at `count` random nodes (seeded) of the
    /// trajectory and compares with the table; returns the largest
    /// relative difference. Constant tensors return 0.
    pub fn spot_check(&self, traj: &Trajectory, count: usize, seed: u64) -> Result<SpotCheck> {
        let HomogenizedTensor::Critical(table) = self else {
            return Ok(SpotCheck::default());
        };
        let mut candidates = Vec::new();
        for n in 0..traj.grid.nt {
            for (i, u) in traj.u[n].iter().enumerate() {
                if u.abs() > table.eta {
                    candidates.push((n, i));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks: Vec<(usize, usize)> = candidates.choose_multiple(&mut rng, count).copied().collect();
        let results = picks
            .par_iter()
            .map(|&(n, i)| -> Result<f64> {
                let u = traj.u[n][i].abs();
                let direct = table.solve_direct(u)?;
                let looked = table.lookup(u);
                Ok(direct.max_abs_diff(&looked) / direct.max_abs().max(f64::MIN_POSITIVE))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SpotCheck {
            nodes: picks.len(),
            max_relative_difference: results.into_iter().fold(0.0, f64::max),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpotCheck {
    pub nodes: usize,
    pub max_relative_difference: f64,
}

/// Homogenized tensors on the macro nodes, per time level.
#[derive(Debug, Clone)]
pub struct NodeTensorField {
    pub tensors: Vec<Vec<Tensor>>,
    pub zero_branch: Vec<Vec<bool>>,
}

impl NodeTensorField {
    pub fn min_rayleigh(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|t| t.rayleigh_range().0)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_symmetry_defect(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(Tensor::symmetry_defect)
            .fold(0.0, f64::max)
    }

    pub fn zero_branch_count(&self) -> usize {
        self.zero_branch.iter().flatten().filter(|&&z| z).count()
    }
}

impl CoefficientProvider for HomogenizedTensor {
    fn cell_tensors(&self, topo: &Topology, _: f64, _: f64, u_prev: &[f64]) -> Result<Vec<Tensor>> {
        Ok(match self {
            HomogenizedTensor::Constant { matrix, .. } => vec![*matrix; topo.cell_count()],
            HomogenizedTensor::Critical(t) => (0..topo.cell_count())
                .map(|c| t.lookup(topo.cell_mean(u_prev, c).abs()))
                .collect(),
        })
    }

    fn is_static(&self) -> bool {
        matches!(self, HomogenizedTensor::Constant { .. })
    }
}
