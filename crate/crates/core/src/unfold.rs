//! Discrete space-time unfolding `T_ε` and averaging `U_ε`.
//!
//! Fields on `Ω×I` are cell-centred and piecewise constant in time (one
//! value per cell and time slab). When `ε/h = m` and `ε^r/τ = ms` are
//! integers, every ε-cell `ε(ξ+□) × ε^r(ζ+J)` is tiled by exactly `m^dim`
//! squares and `ms` slabs of the fine grid, which are in turn the cells of
//! an `m`-cell periodic grid on `□` and an `ms`-step grid on `J`. Unfolding
//! is then a re-indexing of samples and every identity between `T_ε`,
//! `U_ε` and the integrals holds up to rounding.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::diffusion::as_integer;
use crate::mesh::{self, BinaryHeader, CellGrid, MacroGrid, SpaceTimeField, SpatialGrid, KIND_UNFOLDED};
use crate::{Error, Result};

/// ε-cell bookkeeping for one `(ε, r)` on a macro grid.
#[derive(Debug, Clone)]
pub struct EpsilonGeometry {
    pub epsilon: f64,
    pub r: f64,
    pub grid: MacroGrid,
    /// Fine cells per ε-period and axis (`ε/h`).
    pub m: usize,
    /// Fine steps per ε^r-period (`ε^r/τ`).
    pub ms: usize,
    /// `Ξ_ε = {0, …, xi_count−1}^dim`.
    pub xi_count: usize,
    /// `Θ_ε = {0, …, theta_count−1}`.
    pub theta_count: usize,
    /// `Ω̂_ε = (0, omega_hat)^dim`.
    pub omega_hat: f64,
    /// `Î_ε = (0, i_hat)`.
    pub i_hat: f64,
    /// `true` for the (slab, cell) entries in `Λ_ε`.
    pub lambda_mask: Vec<bool>,
    // fine cell -> (flattened ξ, micro cell), None outside Ω̂
    spatial_map: Vec<Option<(usize, usize)>>,
    // (flattened ξ, micro cell) -> fine cell
    inverse_map: Vec<usize>,
}

/// Count of integers `k ≥ 0` with `period·(k+1) ≤ length`.
fn enumerate_periods(period: f64, length: f64) -> usize {
    let mut k = 0usize;
    while period * (k as f64 + 1.0) <= length * (1.0 + 1e-12) {
        k += 1;
    }
    k
}

impl EpsilonGeometry {
    pub fn new(epsilon: f64, r: f64, grid: MacroGrid) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite() && r > 0.0 && r.is_finite()) {
            return Err(Error::Config(format!("need ε > 0 and r > 0 (ε = {epsilon}, r = {r})")));
        }
        let h = grid.h();
        let tau = grid.tau();
        let period = epsilon.powf(r);
        let (Some(m), Some(ms)) = (as_integer(epsilon / h), as_integer(period / tau)) else {
            let admissible: Vec<String> = (1..=grid.nx)
                .map(|k| k as f64 * h)
                .filter(|e| as_integer(e.powf(r) / tau).is_some())
                .take(8)
                .map(|e| format!("{e}"))
                .collect();
            return Err(Error::Config(format!(
                "ε = {epsilon} is not aligned with h = {h}, τ = {tau} (need ε/h and ε^r/τ integer); admissible ε: {}",
                if admissible.is_empty() {
                    "none on this grid".to_string()
                } else {
                    admissible.join(", ")
                }
            )));
        };
        let xi_count = enumerate_periods(epsilon, grid.domain_length);
        let theta_count = enumerate_periods(period, grid.horizon);
        let sg = grid.spatial();
        let cells = sg.cell_count();
        let cg = CellGrid::new(grid.dim, m.max(2), ms)?.spatial();
        let covered = xi_count * m;
        let xi_per = xi_count;
        let mut spatial_map = vec![None; cells];
        let xi_total = xi_count.pow(grid.dim as u32);
        let micro_cells = micro_cell_count(grid.dim, m);
        let mut inverse_map = vec![usize::MAX; xi_total * micro_cells];
        for (c, slot) in spatial_map.iter_mut().enumerate() {
            let (sq, kind) = sg.cell_position(c);
            let inside = (0..grid.dim).all(|d| sq[d] < covered);
            if !inside {
                continue;
            }
            let xi = [sq[0] / m, sq[1] / m];
            let j = [sq[0] % m, sq[1] % m];
            let xi_flat = if grid.dim == 1 { xi[0] } else { xi[1] * xi_per + xi[0] };
            let micro = if m >= 2 {
                cg.cell_index(j, kind)
            } else {
                // m = 1: one square per ε-cell
                if grid.dim == 1 {
                    0
                } else {
                    kind
                }
            };
            *slot = Some((xi_flat, micro));
            inverse_map[xi_flat * micro_cells + micro] = c;
        }
        let slab_cover = theta_count * ms;
        let mut lambda_mask = vec![true; grid.nt * cells];
        for slab in 0..grid.nt.min(slab_cover) {
            for c in 0..cells {
                lambda_mask[slab * cells + c] = spatial_map[c].is_none();
            }
        }
        Ok(EpsilonGeometry {
            epsilon,
            r,
            grid,
            m,
            ms,
            xi_count,
            theta_count,
            omega_hat: epsilon * xi_count as f64,
            i_hat: period * theta_count as f64,
            lambda_mask,
            spatial_map,
            inverse_map,
        })
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    /// Number of ε-cells `|Ξ_ε|`.
    pub fn xi_total(&self) -> usize {
        self.xi_count.pow(self.grid.dim as u32)
    }

    /// Micro cells per ε-cell (cells of the `m`-cell grid on `□`).
    pub fn micro_cells(&self) -> usize {
        micro_cell_count(self.grid.dim, self.m)
    }

    /// The cell grid on `□×J` induced by the fine grid.
    pub fn cell_grid(&self) -> Result<CellGrid> {
        CellGrid::new(self.grid.dim, self.m, self.ms)
    }

    /// `(ξ, micro cell)` of a fine cell, `None` outside `Ω̂_ε`.
    #[inline]
    pub fn split_cell(&self, c: usize) -> Option<(usize, usize)> {
        self.spatial_map[c]
    }

    #[inline]
    pub fn fine_cell(&self, xi: usize, micro: usize) -> usize {
        self.inverse_map[xi * self.micro_cells() + micro]
    }

    /// `(ζ, l)` of a fine slab, `None` outside `Î_ε`.
    #[inline]
    pub fn split_slab(&self, n: usize) -> Option<(usize, usize)> {
        if n < self.theta_count * self.ms {
            Some((n / self.ms, n % self.ms))
        } else {
            None
        }
    }

    pub fn in_lambda(&self, slab: usize, cell: usize) -> bool {
        self.lambda_mask[slab * self.grid.spatial().cell_count() + cell]
    }

    /// Measure of `Λ_ε`.
    pub fn lambda_measure(&self) -> f64 {
        let sg = self.grid.spatial();
        self.lambda_mask.iter().filter(|&&b| b).count() as f64 * sg.cell_measure() * self.grid.tau()
    }

    fn check(&self, w: &SpaceTimeField) -> Result<()> {
        if w.grid != self.grid {
            return Err(Error::Alignment("field grid differs from the geometry's grid".into()));
        }
        Ok(())
    }

    /// Quadrature weight of one `(ξ, ζ, l, j)` entry of an unfolded field:
    /// ε-cell measure times micro cell measure.
    pub fn unfolded_weight(&self) -> f64 {
        let dim = self.grid.dim as i32;
        let micro = SpatialGrid {
            dim: self.grid.dim,
            n: self.m,
            length: 1.0,
            periodic: true,
        }
        .cell_measure();
        self.epsilon.powi(dim) * self.epsilon.powf(self.r) * micro / self.ms as f64
    }
}

fn micro_cell_count(dim: usize, m: usize) -> usize {
    match dim {
        1 => m,
        _ => 2 * m * m,
    }
}

/// `T_ε(w)` stored as `values[(((ζ·|Ξ| + ξ)·ms + l)·cells + j)·ncomp + comp]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedField {
    pub epsilon: f64,
    pub r: f64,
    pub dim: usize,
    pub xi_total: usize,
    pub theta_count: usize,
    pub ms: usize,
    pub micro_cells: usize,
    pub ncomp: usize,
    pub values: Vec<f64>,
}

impl UnfoldedField {
    pub fn zeros(g: &EpsilonGeometry, ncomp: usize) -> Self {
        let n = g.theta_count * g.xi_total() * g.ms * g.micro_cells() * ncomp;
        UnfoldedField {
            epsilon: g.epsilon,
            r: g.r,
            dim: g.dim(),
            xi_total: g.xi_total(),
            theta_count: g.theta_count,
            ms: g.ms,
            micro_cells: g.micro_cells(),
            ncomp,
            values: vec![0.0; n],
        }
    }

    #[inline]
    pub fn index(&self, zeta: usize, xi: usize, l: usize, j: usize) -> usize {
        (((zeta * self.xi_total + xi) * self.ms + l) * self.micro_cells + j) * self.ncomp
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        UnfoldedField {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.values.len() != other.values.len() || self.ncomp != other.ncomp {
            return Err(Error::Alignment("unfolded fields have different layouts".into()));
        }
        Ok(UnfoldedField {
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
            ..self.clone()
        })
    }

    /// `∫∫_{Ω×I} ∫∫_{□×J}` of the entries of component `comp` (using `g`
    /// for the weights).
    pub fn integral(&self, g: &EpsilonGeometry, comp: usize) -> f64 {
        let w = g.unfolded_weight();
        self.values.iter().skip(comp).step_by(self.ncomp).sum::<f64>() * w
    }

    pub fn norm_squared(&self, g: &EpsilonGeometry) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * g.unfolded_weight()
    }

    /// Binary dump: mesh header with kind "unfolded", `n_axis = |Ξ|`,
    /// `n_slices = |Θ|`, metadata `[ε, r, ms, micro cells, ncomp]`.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let header = BinaryHeader {
            dim: self.dim as u8,
            kind: KIND_UNFOLDED,
            n_axis: self.xi_total as u32,
            n_slices: self.theta_count as u32,
        };
        let meta = [
            self.epsilon,
            self.r,
            self.ms as f64,
            self.micro_cells as f64,
            self.ncomp as f64,
        ];
        mesh::write_binary(path, header, &meta, &self.values)
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let (h, meta, values) = mesh::read_binary(path)?;
        if h.kind != KIND_UNFOLDED || meta.len() != 5 {
            return Err(Error::Format("not an unfolded-field dump".into()));
        }
        let f = UnfoldedField {
            epsilon: meta[0],
            r: meta[1],
            dim: h.dim as usize,
            xi_total: h.n_axis as usize,
            theta_count: h.n_slices as usize,
            ms: meta[2] as usize,
            micro_cells: meta[3] as usize,
            ncomp: meta[4] as usize,
            values,
        };
        if f.values.len() != f.theta_count * f.xi_total * f.ms * f.micro_cells * f.ncomp {
            return Err(Error::Format("unfolded payload length does not match its header".into()));
        }
        Ok(f)
    }
}

/// `T_ε(w)(x,t,y,s) = w(ε⌊x/ε⌋ + εy, ε^r⌊t/ε^r⌋ + ε^r s)` on `Ω̂_ε×Î_ε`,
/// zero on `Λ_ε`.
pub fn unfold(w: &SpaceTimeField, g: &EpsilonGeometry) -> Result<UnfoldedField> {
    g.check(w)?;
    let mut out = UnfoldedField::zeros(g, w.ncomp);
    for zeta in 0..g.theta_count {
        for xi in 0..g.xi_total() {
            for l in 0..g.ms {
                let slab = zeta * g.ms + l;
                for j in 0..g.micro_cells() {
                    let c = g.fine_cell(xi, j);
                    let src = w.index(slab, c);
                    let dst = out.index(zeta, xi, l, j);
                    out.values[dst..dst + w.ncomp].copy_from_slice(&w.values[src..src + w.ncomp]);
                }
            }
        }
    }
    Ok(out)
}

/// `U_ε(Ψ)` for an unfolded-layout `Ψ` (macro dependence through the
/// ε-cell only, so the macro mean is the entry itself).
pub fn average(psi: &UnfoldedField, g: &EpsilonGeometry) -> Result<SpaceTimeField> {
    if psi.xi_total != g.xi_total() || psi.ms != g.ms || psi.micro_cells != g.micro_cells() || psi.theta_count != g.theta_count {
        return Err(Error::Alignment("unfolded field does not match the geometry".into()));
    }
    let mut out = SpaceTimeField::zeros(g.grid, psi.ncomp);
    let cells = g.grid.spatial().cell_count();
    for slab in 0..g.grid.nt {
        let Some((zeta, l)) = g.split_slab(slab) else { continue };
        for c in 0..cells {
            let Some((xi, j)) = g.split_cell(c) else { continue };
            let src = psi.index(zeta, xi, l, j);
            let dst = out.index(slab, c);
            out.values[dst..dst + psi.ncomp].copy_from_slice(&psi.values[src..src + psi.ncomp]);
        }
    }
    Ok(out)
}

/// `U_ε(Ψ)` for `Ψ(σ, ρ, j, l)` given on (fine cell, fine slab) macro
/// arguments and (micro cell, micro slab) micro arguments: the arithmetic
/// mean over the fine cells of the ε-cell, evaluated at the micro indices
/// of the target cell.
pub fn average_fn(g: &EpsilonGeometry, psi: &(dyn Fn(usize, usize, usize, usize) -> f64 + Sync)) -> SpaceTimeField {
    let mut out = SpaceTimeField::zeros(g.grid, 1);
    let cells = g.grid.spatial().cell_count();
    let nmicro = g.micro_cells();
    let count = (nmicro * g.ms) as f64;
    for zeta in 0..g.theta_count {
        for xi in 0..g.xi_total() {
            for l in 0..g.ms {
                for j in 0..nmicro {
                    let mut acc = 0.0;
                    for rho_l in 0..g.ms {
                        let rho = zeta * g.ms + rho_l;
                        for sj in 0..nmicro {
                            acc += psi(g.fine_cell(xi, sj), rho, j, l);
                        }
                    }
                    let c = g.fine_cell(xi, j);
                    let slab = zeta * g.ms + l;
                    out.values[slab * cells + c] = acc / count;
                }
            }
        }
    }
    out
}

/// `|∬_{Ω̂×Î} w − ∬∬ T_ε(w)|` for component 0.
pub fn integral_identity_defect(w: &SpaceTimeField, g: &EpsilonGeometry) -> Result<f64> {
    let t = unfold(w, g)?;
    let sg = g.grid.spatial();
    let cells = sg.cell_count();
    let mut direct = 0.0;
    for slab in 0..g.grid.nt {
        for c in 0..cells {
            if !g.lambda_mask[slab * cells + c] {
                direct += w.get(slab, c, 0);
            }
        }
    }
    direct *= sg.cell_measure() * g.grid.tau();
    Ok((direct - t.integral(g, 0)).abs())
}

/// Terms of the norm identity `‖T_ε w‖² + ∬_{Λ_ε}|w|² = ‖w‖²`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NormIdentity {
    pub unfolded: f64,
    pub lambda_mass: f64,
    pub full: f64,
}

impl NormIdentity {
    pub fn relative_defect(&self) -> f64 {
        (self.unfolded + self.lambda_mass - self.full).abs() / self.full.max(f64::MIN_POSITIVE)
    }
}

pub fn norm_identity(w: &SpaceTimeField, g: &EpsilonGeometry) -> Result<NormIdentity> {
    let t = unfold(w, g)?;
    let full = mesh::l2_norm_space_time(w, None)?.powi(2);
    let lambda_mass = mesh::l2_norm_space_time(w, Some(&g.lambda_mask))?.powi(2);
    Ok(NormIdentity {
        unfolded: t.norm_squared(g),
        lambda_mass,
        full,
    })
}

type Scalar1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type ScalarX = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

/// `Ψ(x,t,y,s) = φ(x)ψ(t)b(y)c(s)` with `b`, `c` periodic.
#[derive(Clone)]
pub struct SeparableTest {
    pub phi: ScalarX,
    pub psi: Scalar1,
    pub b: ScalarX,
    pub c: Scalar1,
}

impl SeparableTest {
    pub fn new(
        phi: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        psi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        b: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        c: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        SeparableTest {
            phi: Arc::new(phi),
            psi: Arc::new(psi),
            b: Arc::new(b),
            c: Arc::new(c),
        }
    }
}

/// `∬ v(x,t) Ψ(x, t, x/ε, t/ε^r)` by the midpoint rule on the fine grid
/// (component 0 of `v`).
pub fn two_scale_pairing(v: &SpaceTimeField, test: &SeparableTest, g: &EpsilonGeometry) -> Result<f64> {
    g.check(v)?;
    let sg = g.grid.spatial();
    let tau = g.grid.tau();
    let period = g.epsilon.powf(g.r);
    let mut acc = 0.0;
    for slab in 0..g.grid.nt {
        let t = (slab as f64 + 0.5) * tau;
        let tw = (test.psi)(t) * (test.c)(t / period);
        for c in 0..sg.cell_count() {
            let x = sg.cell_centroid(c);
            let y = [x[0] / g.epsilon, x[1] / g.epsilon];
            acc += v.get(slab, c, 0) * (test.phi)(x) * (test.b)(y) * tw;
        }
    }
    Ok(acc * sg.cell_measure() * tau)
}

/// `∬∬ V Ψ` over `Ω̂_ε×Î_ε×□×J` for a two-scale limit given on indices
/// `V(fine cell, fine slab, micro cell, micro slab)`, midpoint rule on the
/// fine grid and on the induced cell grid.
pub fn limit_pairing(
    limit: &(dyn Fn(usize, usize, usize, usize) -> f64 + Sync),
    test: &SeparableTest,
    g: &EpsilonGeometry,
) -> Result<f64> {
    let sg = g.grid.spatial();
    let tau = g.grid.tau();
    let nmicro = g.micro_cells();
    let micro = SpatialGrid {
        dim: g.dim(),
        n: g.m,
        length: 1.0,
        periodic: true,
    };
    let ys: Vec<f64> = (0..nmicro).map(|j| (test.b)(micro.cell_centroid(j))).collect();
    let ss: Vec<f64> = (0..g.ms).map(|l| (test.c)((l as f64 + 0.5) / g.ms as f64)).collect();
    let mut acc = 0.0;
    for slab in 0..g.grid.nt {
        if g.split_slab(slab).is_none() {
            continue;
        }
        let t = (slab as f64 + 0.5) * tau;
        for c in 0..sg.cell_count() {
            if g.split_cell(c).is_none() {
                continue;
            }
            let macro_w = (test.phi)(sg.cell_centroid(c)) * (test.psi)(t);
            let mut inner = 0.0;
            for (l, cs) in ss.iter().enumerate() {
                for (j, by) in ys.iter().enumerate() {
                    inner += limit(c, slab, j, l) * by * cs;
                }
            }
            acc += macro_w * inner / (nmicro * g.ms) as f64;
        }
    }
    Ok(acc * sg.cell_measure() * tau)
}

/// `‖T_ε(v_ε) − V‖_{L²(Ω×I×□×J)}` and the `Λ_ε` mass of `v_ε`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct UnfoldingDefect {
    pub norm: f64,
    pub lambda_mass: f64,
}

/// `limit(fine cell, fine slab, micro cell, micro slab, comp)` is the
/// two-scale limit sampled at macro arguments inside the ε-cell; it is
/// compared against the unfolded entries of the same ε-cell, and its macro
/// argument ranges over every fine cell of that ε-cell.
pub fn unfolding_defect(
    v_eps: &SpaceTimeField,
    limit: &(dyn Fn(usize, usize, usize, usize, usize) -> f64 + Sync),
    g: &EpsilonGeometry,
) -> Result<UnfoldingDefect> {
    g.check(v_eps)?;
    let t = unfold(v_eps, g)?;
    let nmicro = g.micro_cells();
    let sg = g.grid.spatial();
    let fine_w = sg.cell_measure() * g.grid.tau();
    let micro_w = 1.0 / (nmicro * g.ms) as f64;
    let mut acc = 0.0;
    for zeta in 0..g.theta_count {
        for xi in 0..g.xi_total() {
            for rho_l in 0..g.ms {
                let rho = zeta * g.ms + rho_l;
                for sj in 0..nmicro {
                    let sigma = g.fine_cell(xi, sj);
                    for l in 0..g.ms {
                        for j in 0..nmicro {
                            let base = t.index(zeta, xi, l, j);
                            for comp in 0..v_eps.ncomp {
                                let d = t.values[base + comp] - limit(sigma, rho, j, l, comp);
                                acc += d * d;
                            }
                        }
                    }
                }
            }
        }
    }
    let lambda_mass = mesh::l2_norm_space_time(v_eps, Some(&g.lambda_mask))?.powi(2);
    Ok(UnfoldingDefect {
        norm: (acc * fine_w * micro_w).sqrt(),
        lambda_mass,
    })
}
