use crate::linalg::{self, Constraint, CsrMatrix, SolverConfig};
use crate::tensor::Tensor;
use crate::{Error, Result};

use super::topology::{StiffnessAssembler, Topology};
use super::{Centering, Field, MacroGrid, SpaceTimeField, SpatialGrid, VectorField};

fn check_region(region: Option<&[bool]>, cells: usize) -> Result<()> {
    if let Some(mask) = region {
        if mask.len() != cells {
            return Err(Error::Alignment(format!(
                "region mask has {} cells, grid has {cells}",
                mask.len()
            )));
        }
    }
    Ok(())
}

/// Cellwise gradient of a node-centred field.
pub fn gradient(f: &Field) -> Result<VectorField> {
    if f.centering != Centering::Node {
        return Err(Error::Alignment("gradient needs a node-centred field".into()));
    }
    let topo = Topology::new(f.grid);
    let dim = f.grid.dim;
    let mut comps = vec![vec![0.0; topo.cell_count()]; dim];
    for c in 0..topo.cell_count() {
        let g = topo.cell_gradient(&f.values, c);
        for d in 0..dim {
            comps[d][c] = g[d];
        }
    }
    VectorField::new(f.grid, comps)
}

/// Midpoint-rule L² norm over all cells, or over the cells flagged in
/// `region`. Node fields are evaluated at cell centroids.
pub fn l2_norm(f: &Field, region: Option<&[bool]>) -> Result<f64> {
    let cells = f.grid.cell_count();
    check_region(region, cells)?;
    let topo = Topology::new(f.grid);
    let mut s = 0.0;
    for c in 0..cells {
        if region.is_some_and(|m| !m[c]) {
            continue;
        }
        let v = f.cell_value(&topo, c);
        s += v * v;
    }
    Ok((s * f.grid.cell_measure()).sqrt())
}

pub fn l2_norm_vector(f: &VectorField, region: Option<&[bool]>) -> Result<f64> {
    let cells = f.grid.cell_count();
    check_region(region, cells)?;
    let mut s = 0.0;
    for c in 0..cells {
        if region.is_some_and(|m| !m[c]) {
            continue;
        }
        for comp in &f.components {
            s += comp[c] * comp[c];
        }
    }
    Ok((s * f.grid.cell_measure()).sqrt())
}

/// L² norm over `Ω×I` of a cell-centred space-time field (all components),
/// optionally restricted to the (slab, cell) entries flagged in `region`.
pub fn l2_norm_space_time(f: &SpaceTimeField, region: Option<&[bool]>) -> Result<f64> {
    let cells = f.cells();
    check_region(region, cells * f.grid.nt)?;
    let mut s = 0.0;
    for slab in 0..f.grid.nt {
        for c in 0..cells {
            if region.is_some_and(|m| !m[slab * cells + c]) {
                continue;
            }
            let base = f.index(slab, c);
            for v in &f.values[base..base + f.ncomp] {
                s += v * v;
            }
        }
    }
    Ok((s * f.grid.spatial().cell_measure() * f.grid.tau()).sqrt())
}

/// Nodal functional `w ↦ ⟨div φ, w⟩ = −∫ φ·∇w` of a cellwise vector field.
pub fn weak_divergence(phi: &VectorField) -> Vec<f64> {
    let topo = Topology::new(phi.grid);
    let mut b = topo.gradient_transpose(&|c| phi.at(c));
    for v in b.iter_mut() {
        *v = -*v;
    }
    b
}

/// Discrete Riesz map of `H¹₀` on a Dirichlet grid.
#[derive(Debug, Clone)]
pub struct DirichletRiesz {
    asm: StiffnessAssembler,
    laplacian: CsrMatrix,
    cfg: SolverConfig,
}

impl DirichletRiesz {
    pub fn new(grid: SpatialGrid) -> Result<Self> {
        if grid.periodic {
            return Err(Error::Alignment("dual norm needs a Dirichlet grid".into()));
        }
        let topo = Topology::new(grid);
        let asm = StiffnessAssembler::new(&topo)?;
        let laplacian = asm.assemble(&|_| Tensor::identity(grid.dim));
        Ok(DirichletRiesz {
            asm,
            laplacian,
            cfg: SolverConfig {
                tolerance: 1e-12,
                ..SolverConfig::default()
            },
        })
    }

    pub fn grid(&self) -> SpatialGrid {
        self.asm.topology().grid
    }

    /// `sup_w ⟨b, w⟩ / ‖∇w‖` for a nodal load vector `b`; boundary entries
    /// of `b` are ignored.
    pub fn norm_of_load(&self, b: &[f64]) -> Result<f64> {
        let rhs = self.asm.dofs().restrict(b);
        if rhs.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        let sol = linalg::solve_spd(&self.laplacian, &rhs, &self.cfg, Constraint::None)?;
        Ok(linalg::dot(&rhs, &sol.x).max(0.0).sqrt())
    }

    /// H⁻¹ norm of a scalar field, paired through the lumped mass.
    pub fn norm(&self, g: &Field) -> Result<f64> {
        if g.grid != self.grid() {
            return Err(Error::Alignment("field grid differs from the Riesz grid".into()));
        }
        let topo = self.asm.topology();
        let b: Vec<f64> = match g.centering {
            Centering::Node => g.values.iter().zip(topo.node_mass()).map(|(v, m)| v * m).collect(),
            Centering::Cell => {
                let mut b = vec![0.0; topo.node_count()];
                let share = topo.measure() / topo.nv() as f64;
                for (c, &v) in g.values.iter().enumerate() {
                    for &a in topo.cell_nodes(c) {
                        b[a] += share * v;
                    }
                }
                b
            }
        };
        self.norm_of_load(&b)
    }
}

/// H⁻¹(Ω) norm of a field on the spatial slice of `macro_grid`.
pub fn h_minus1_norm(g: &Field, macro_grid: &MacroGrid) -> Result<f64> {
    DirichletRiesz::new(macro_grid.spatial())?.norm(g)
}

/// `L²(I; H⁻¹(Ω))` norm of slices `g^n`, `n = 1..=nt`.
pub fn h_minus1_norm_series(slices: &[Field], macro_grid: &MacroGrid) -> Result<f64> {
    if slices.len() != macro_grid.nt {
        return Err(Error::Alignment(format!(
            "{} slices for {} time steps",
            slices.len(),
            macro_grid.nt
        )));
    }
    let riesz = DirichletRiesz::new(macro_grid.spatial())?;
    let mut s = 0.0;
    for g in slices {
        let n = riesz.norm(g)?;
        s += n * n;
    }
    Ok((s * macro_grid.tau()).sqrt())
}

/// Dual norm of a nodal load vector on the spatial slice of `macro_grid`.
pub fn dual_norm_of_load(b: &[f64], macro_grid: &MacroGrid) -> Result<f64> {
    DirichletRiesz::new(macro_grid.spatial())?.norm_of_load(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(n: usize) -> MacroGrid {
        MacroGrid::new(1, n, 1, 1.0, 1.0).unwrap()
    }

    #[test]
    fn constant_and_zero_fields() {
        let g = line(8).spatial();
        let one = Field::constant(g, Centering::Cell, 1.0).unwrap();
        assert!((l2_norm(&one, None).unwrap() - 1.0).abs() < 1e-15);
        let zero = Field::constant(g, Centering::Node, 0.0).unwrap();
        assert_eq!(l2_norm(&zero, None).unwrap(), 0.0);
        assert_eq!(h_minus1_norm(&zero, &line(8)).unwrap(), 0.0);
    }

    #[test]
    fn region_mask_must_align() {
        let g = line(8).spatial();
        let one = Field::constant(g, Centering::Cell, 1.0).unwrap();
        assert!(matches!(l2_norm(&one, Some(&[true; 3])), Err(Error::Alignment(_))));
        let mut mask = vec![false; 8];
        mask[..4].fill(true);
        assert!((l2_norm(&one, Some(&mask)).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn linear_function_norm_converges() {
        let g = line(512).spatial();
        let f = Field::from_fn(g, Centering::Node, |x| x[0]).unwrap();
        let n = l2_norm(&f, None).unwrap();
        assert!((n - 1.0 / 3f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn sine_dual_norm() {
        let m = line(256);
        let f = Field::from_fn(m.spatial(), Centering::Node, |x| (PI * x[0]).sin()).unwrap();
        let n = h_minus1_norm(&f, &m).unwrap();
        assert!((n - 1.0 / (PI * 2f64.sqrt())).abs() < 1e-4);
    }

    #[test]
    fn gradient_needs_nodes() {
        let g = line(4).spatial();
        let f = Field::constant(g, Centering::Cell, 1.0).unwrap();
        assert!(gradient(&f).is_err());
    }
}
