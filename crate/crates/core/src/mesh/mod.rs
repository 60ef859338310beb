//! Structured grids on the macro box `Ω×I = (0,L)^dim × (0,T)` and on the
//! periodic cell `□×J = (0,1)^dim × (0,1)`, together with the fields living
//! on them.
//!
//! Spatial grids are uniform. In 2D every square is split along the
//! `(i+1,j)–(i,j+1)` diagonal into two triangles, so discrete functions are
//! conforming piecewise-linear and their gradients are constant per cell.
//! "Cell" therefore means an interval in 1D and a triangle in 2D.

mod io;
mod norms;
mod topology;

pub use io::{
    read_binary, read_field_binary, read_field_csv, write_binary, write_field_binary, write_field_csv,
    BinaryHeader, KIND_CELL, KIND_NODE, KIND_UNFOLDED, KIND_VECTOR, MAGIC,
};
pub use norms::{
    dual_norm_of_load, gradient, h_minus1_norm, h_minus1_norm_series, l2_norm, l2_norm_space_time,
    l2_norm_vector, weak_divergence, DirichletRiesz,
};
pub use topology::{Cell, DofMap, StiffnessAssembler, Topology};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Spatial part of a grid: `n` cells per axis over `(0, length)^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub periodic: bool,
}

impl SpatialGrid {
    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn node_count(&self) -> usize {
        let per_axis = if self.periodic { self.n } else { self.n + 1 };
        per_axis.pow(self.dim as u32)
    }

    pub fn cell_count(&self) -> usize {
        match self.dim {
            1 => self.n,
            _ => 2 * self.n * self.n,
        }
    }

    /// Measure of one cell (interval length or triangle area).
    pub fn cell_measure(&self) -> f64 {
        let h = self.h();
        match self.dim {
            1 => h,
            _ => 0.5 * h * h,
        }
    }

    pub fn nodes_per_axis(&self) -> usize {
        if self.periodic {
            self.n
        } else {
            self.n + 1
        }
    }

    /// Coordinates of node `idx`.
    pub fn node_coords(&self, idx: usize) -> [f64; 2] {
        let per = self.nodes_per_axis();
        let h = self.h();
        match self.dim {
            1 => [idx as f64 * h, 0.0],
            _ => [(idx % per) as f64 * h, (idx / per) as f64 * h],
        }
    }

    /// Square (or interval) index and local triangle kind of cell `c`.
    pub fn cell_position(&self, c: usize) -> ([usize; 2], usize) {
        match self.dim {
            1 => ([c, 0], 0),
            _ => {
                let sq = c / 2;
                ([sq % self.n, sq / self.n], c % 2)
            }
        }
    }

    pub fn cell_index(&self, square: [usize; 2], kind: usize) -> usize {
        match self.dim {
            1 => square[0],
            _ => 2 * (square[1] * self.n + square[0]) + kind,
        }
    }

    /// Centroid of cell `c` in grid units (multiply by `h` for physical).
    pub fn cell_centroid_units(&self, c: usize) -> [f64; 2] {
        let (sq, kind) = self.cell_position(c);
        let off = self.centroid_offset(kind);
        match self.dim {
            1 => [sq[0] as f64 + off, 0.0],
            _ => [sq[0] as f64 + off, sq[1] as f64 + off],
        }
    }

    /// Offset of a cell centroid from its square's lower corner, per axis,
    /// in grid units.
    pub fn centroid_offset(&self, kind: usize) -> f64 {
        match (self.dim, kind) {
            (1, _) => 0.5,
            (_, 0) => 1.0 / 3.0,
            _ => 2.0 / 3.0,
        }
    }

    pub fn cell_centroid(&self, c: usize) -> [f64; 2] {
        let u = self.cell_centroid_units(c);
        let h = self.h();
        [u[0] * h, u[1] * h]
    }

    /// Cell containing the point `y` given in grid units, `0 ≤ y_k < n`.
    /// Half-open convention on square boundaries.
    pub fn locate_units(&self, y: [f64; 2]) -> usize {
        let clamp = |v: f64| -> usize { (v.floor().max(0.0) as usize).min(self.n - 1) };
        match self.dim {
            1 => clamp(y[0]),
            _ => {
                let ix = clamp(y[0]);
                let iy = clamp(y[1]);
                let fx = y[0] - ix as f64;
                let fy = y[1] - iy as f64;
                let kind = if fx + fy < 1.0 { 0 } else { 1 };
                self.cell_index([ix, iy], kind)
            }
        }
    }
}

/// Macroscopic space-time grid on `(0,L)^dim × (0,T)` with Dirichlet box
/// boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroGrid {
    pub dim: usize,
    pub nx: usize,
    pub nt: usize,
    pub domain_length: f64,
    pub horizon: f64,
}

impl MacroGrid {
    pub fn new(dim: usize, nx: usize, nt: usize, domain_length: f64, horizon: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("dim must be 1 or 2, got {dim}")));
        }
        if nx < 2 {
            return Err(Error::Config(format!("nx must be at least 2, got {nx}")));
        }
        if nt < 1 {
            return Err(Error::Config("nt must be at least 1".into()));
        }
        if !(domain_length > 0.0 && domain_length.is_finite()) {
            return Err(Error::Config(format!("domain length must be positive, got {domain_length}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        Ok(MacroGrid {
            dim,
            nx,
            nt,
            domain_length,
            horizon,
        })
    }

    pub fn h(&self) -> f64 {
        self.domain_length / self.nx as f64
    }

    pub fn tau(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    /// Time of level `n`, `0 ≤ n ≤ nt`.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.nt {
            self.horizon
        } else {
            n as f64 * self.tau()
        }
    }

    pub fn spatial(&self) -> SpatialGrid {
        SpatialGrid {
            dim: self.dim,
            n: self.nx,
            length: self.domain_length,
            periodic: false,
        }
    }
}

/// Periodic cell grid on `□×J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGrid {
    pub dim: usize,
    pub ny: usize,
    pub ns: usize,
}

impl CellGrid {
    pub fn new(dim: usize, ny: usize, ns: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("dim must be 1 or 2, got {dim}")));
        }
        if ny < 2 {
            return Err(Error::Config(format!("cell grid needs ny >= 2, got {ny}")));
        }
        if ns < 1 {
            return Err(Error::Config("cell grid needs ns >= 1".into()));
        }
        Ok(CellGrid { dim, ny, ns })
    }

    pub fn spatial(&self) -> SpatialGrid {
        SpatialGrid {
            dim: self.dim,
            n: self.ny,
            length: 1.0,
            periodic: true,
        }
    }

    pub fn ds(&self) -> f64 {
        1.0 / self.ns as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Centering {
    Node,
    Cell,
}

/// Scalar samples on a spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: SpatialGrid,
    pub centering: Centering,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: SpatialGrid, centering: Centering, values: Vec<f64>) -> Result<Self> {
        let expected = match centering {
            Centering::Node => grid.node_count(),
            Centering::Cell => grid.cell_count(),
        };
        if values.len() != expected {
            return Err(Error::Alignment(format!(
                "field has {} values, grid expects {expected}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite field value at index {i}")));
        }
        Ok(Field {
            grid,
            centering,
            values,
        })
    }

    pub fn from_fn(grid: SpatialGrid, centering: Centering, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = match centering {
            Centering::Node => (0..grid.node_count()).map(|i| f(grid.node_coords(i))).collect(),
            Centering::Cell => (0..grid.cell_count()).map(|c| f(grid.cell_centroid(c))).collect(),
        };
        Self::new(grid, centering, values)
    }

    pub fn constant(grid: SpatialGrid, centering: Centering, c: f64) -> Result<Self> {
        Self::from_fn(grid, centering, |_| c)
    }

    /// Value on cell `c`: the stored value for cell fields, the centroid
    /// interpolant (vertex mean) for node fields.
    pub fn cell_value(&self, topo: &Topology, c: usize) -> f64 {
        match self.centering {
            Centering::Cell => self.values[c],
            Centering::Node => topo.cell_mean(&self.values, c),
        }
    }
}

/// Piecewise-constant vector field, one `dim`-vector per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: SpatialGrid,
    pub components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: SpatialGrid, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim {
            return Err(Error::Alignment(format!(
                "{} components for a {}-dimensional grid",
                components.len(),
                grid.dim
            )));
        }
        for comp in &components {
            if comp.len() != grid.cell_count() {
                return Err(Error::Alignment("vector component length mismatch".into()));
            }
            if comp.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("non-finite vector component".into()));
            }
        }
        Ok(VectorField { grid, components })
    }

    pub fn at(&self, c: usize) -> [f64; 2] {
        let mut v = [0.0; 2];
        for (k, comp) in self.components.iter().enumerate() {
            v[k] = comp[c];
        }
        v
    }
}

/// Cell-centred space-time field: `ncomp` values per (time slab, cell).
///
/// Slab `n ∈ 1..=nt` covers `(t_{n−1}, t_n]`; storage index `n−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub grid: MacroGrid,
    pub ncomp: usize,
    pub values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: MacroGrid, ncomp: usize) -> Self {
        let n = grid.nt * grid.spatial().cell_count() * ncomp;
        SpaceTimeField {
            grid,
            ncomp,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: MacroGrid, f: impl Fn([f64; 2], f64) -> f64) -> Self {
        let sg = grid.spatial();
        let tau = grid.tau();
        let mut out = Self::zeros(grid, 1);
        let nc = sg.cell_count();
        for slab in 0..grid.nt {
            let t = (slab as f64 + 0.5) * tau;
            for c in 0..nc {
                out.values[slab * nc + c] = f(sg.cell_centroid(c), t);
            }
        }
        out
    }

    pub fn cells(&self) -> usize {
        self.grid.spatial().cell_count()
    }

    #[inline]
    pub fn index(&self, slab: usize, cell: usize) -> usize {
        (slab * self.cells() + cell) * self.ncomp
    }

    #[inline]
    pub fn get(&self, slab: usize, cell: usize, comp: usize) -> f64 {
        self.values[self.index(slab, cell) + comp]
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite space-time value".into()));
        }
        Ok(())
    }
}
