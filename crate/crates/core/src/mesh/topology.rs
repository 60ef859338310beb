use crate::linalg::CsrMatrix;
use crate::tensor::Tensor;
use crate::Result;

use super::SpatialGrid;

/// One simplex of the grid: vertex node indices and local triangle kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub nodes: [usize; 3],
    pub kind: usize,
}

/// Connectivity, lumped masses and boundary flags of a [`SpatialGrid`].
#[derive(Debug, Clone)]
pub struct Topology {
    pub grid: SpatialGrid,
    cells: Vec<Cell>,
    node_mass: Vec<f64>,
    boundary: Vec<bool>,
    // grad_weights[kind][d][local vertex], already divided by h
    grad_weights: [[[f64; 3]; 2]; 2],
}

impl Topology {
    pub fn new(grid: SpatialGrid) -> Self {
        let n = grid.n;
        let per = grid.nodes_per_axis();
        let wrap = |i: usize| if grid.periodic { i % n } else { i };
        let node = |ix: usize, iy: usize| wrap(iy) * per + wrap(ix);
        let mut cells = Vec::with_capacity(grid.cell_count());
        match grid.dim {
            1 => {
                for i in 0..n {
                    cells.push(Cell {
                        nodes: [wrap(i), wrap(i + 1), 0],
                        kind: 0,
                    });
                }
            }
            _ => {
                for iy in 0..n {
                    for ix in 0..n {
                        cells.push(Cell {
                            nodes: [node(ix, iy), node(ix + 1, iy), node(ix, iy + 1)],
                            kind: 0,
                        });
                        cells.push(Cell {
                            nodes: [node(ix + 1, iy + 1), node(ix, iy + 1), node(ix + 1, iy)],
                            kind: 1,
                        });
                    }
                }
            }
        }
        let nv = grid.dim + 1;
        let share = grid.cell_measure() / nv as f64;
        let mut node_mass = vec![0.0; grid.node_count()];
        for cell in &cells {
            for &a in &cell.nodes[..nv] {
                node_mass[a] += share;
            }
        }
        let boundary = (0..grid.node_count())
            .map(|i| {
                if grid.periodic {
                    return false;
                }
                let ix = i % per;
                let iy = i / per;
                let edge = |k: usize| k == 0 || k == n;
                match grid.dim {
                    1 => edge(i),
                    _ => edge(ix) || edge(iy),
                }
            })
            .collect();
        let ih = 1.0 / grid.h();
        let grad_weights = match grid.dim {
            1 => [[[-ih, ih, 0.0], [0.0; 3]], [[0.0; 3]; 2]],
            _ => [
                [[-ih, ih, 0.0], [-ih, 0.0, ih]],
                [[ih, -ih, 0.0], [ih, 0.0, -ih]],
            ],
        };
        Topology {
            grid,
            cells,
            node_mass,
            boundary,
            grad_weights,
        }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    /// Vertices per cell.
    pub fn nv(&self) -> usize {
        self.grid.dim + 1
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_mass.len()
    }

    pub fn cell(&self, c: usize) -> &Cell {
        &self.cells[c]
    }

    pub fn cell_nodes(&self, c: usize) -> &[usize] {
        &self.cells[c].nodes[..self.nv()]
    }

    pub fn measure(&self) -> f64 {
        self.grid.cell_measure()
    }

    /// Lumped (row-sum) mass of every node.
    pub fn node_mass(&self) -> &[f64] {
        &self.node_mass
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.boundary.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    /// Gradient weights of the local basis functions of a cell of `kind`:
    /// `∇φ_a = (w[0][a], w[1][a])`.
    pub fn grad_weights(&self, kind: usize) -> &[[f64; 3]; 2] {
        &self.grad_weights[kind]
    }

    /// Constant gradient of the P1 interpolant of `values` on cell `c`.
    #[inline]
    pub fn cell_gradient(&self, values: &[f64], c: usize) -> [f64; 2] {
        let cell = &self.cells[c];
        let w = &self.grad_weights[cell.kind];
        let mut g = [0.0; 2];
        for (d, gd) in g.iter_mut().enumerate().take(self.grid.dim) {
            for a in 0..self.nv() {
                *gd += w[d][a] * values[cell.nodes[a]];
            }
        }
        g
    }

    /// Vertex mean of `values` on cell `c` (value of the P1 interpolant at
    /// the centroid).
    #[inline]
    pub fn cell_mean(&self, values: &[f64], c: usize) -> f64 {
        let nodes = self.cell_nodes(c);
        nodes.iter().map(|&a| values[a]).sum::<f64>() / nodes.len() as f64
    }

    /// Nodal vector `b_a = Σ_c |c| X_c·∇φ_a`, i.e. the functional
    /// `w ↦ ∫ X·∇w` for a cellwise-constant vector field `X`.
    pub fn gradient_transpose(&self, x: &dyn Fn(usize) -> [f64; 2]) -> Vec<f64> {
        let mut b = vec![0.0; self.node_count()];
        let meas = self.measure();
        for (c, cell) in self.cells.iter().enumerate() {
            let xc = x(c);
            let w = &self.grad_weights[cell.kind];
            for a in 0..self.nv() {
                let mut s = 0.0;
                for d in 0..self.grid.dim {
                    s += xc[d] * w[d][a];
                }
                b[cell.nodes[a]] += meas * s;
            }
        }
        b
    }

    /// Degrees of freedom: interior nodes for Dirichlet grids, every node
    /// for periodic grids.
    pub fn dofs(&self) -> DofMap {
        let mut node_to_dof = vec![None; self.node_count()];
        let mut dof_to_node = Vec::new();
        for (i, slot) in node_to_dof.iter_mut().enumerate() {
            if !self.boundary[i] {
                *slot = Some(dof_to_node.len());
                dof_to_node.push(i);
            }
        }
        DofMap {
            node_to_dof,
            dof_to_node,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DofMap {
    pub node_to_dof: Vec<Option<usize>>,
    pub dof_to_node: Vec<usize>,
}

impl DofMap {
    pub fn len(&self) -> usize {
        self.dof_to_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dof_to_node.is_empty()
    }

    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        self.dof_to_node.iter().map(|&i| nodal[i]).collect()
    }

    /// Nodal vector with `dofs` on the free nodes and zero elsewhere.
    pub fn extend(&self, dofs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.node_to_dof.len()];
        for (k, &i) in self.dof_to_node.iter().enumerate() {
            out[i] = dofs[k];
        }
        out
    }
}

/// Stiffness matrix assembly on a fixed sparsity pattern.
///
/// The pattern and the scatter positions are computed once; each call to
/// [`StiffnessAssembler::assemble`] only refills the values.
#[derive(Debug, Clone)]
pub struct StiffnessAssembler {
    topo: Topology,
    dofs: DofMap,
    pattern: CsrMatrix,
    // per cell, per (a, b) local pair: CSR position or usize::MAX
    scatter: Vec<[usize; 9]>,
}

impl StiffnessAssembler {
    pub fn new(topo: &Topology) -> Result<Self> {
        let dofs = topo.dofs();
        let nv = topo.nv();
        let mut triplets = Vec::new();
        for c in 0..topo.cell_count() {
            let nodes = topo.cell_nodes(c);
            for &a in nodes {
                for &b in nodes {
                    if let (Some(i), Some(j)) = (dofs.node_to_dof[a], dofs.node_to_dof[b]) {
                        triplets.push((i, j, 0.0));
                    }
                }
            }
        }
        // isolated dofs cannot occur on grids with n >= 2, but keep the
        // diagonal stored so that add_diagonal always works
        for i in 0..dofs.len() {
            triplets.push((i, i, 0.0));
        }
        let pattern = CsrMatrix::from_triplets(dofs.len(), &triplets, true)?;
        let mut scatter = vec![[usize::MAX; 9]; topo.cell_count()];
        for (c, slots) in scatter.iter_mut().enumerate() {
            let nodes = topo.cell_nodes(c);
            for a in 0..nv {
                for b in 0..nv {
                    if let (Some(i), Some(j)) = (dofs.node_to_dof[nodes[a]], dofs.node_to_dof[nodes[b]]) {
                        let lo = pattern.row_ptr()[i];
                        let hi = pattern.row_ptr()[i + 1];
                        let k = pattern.col_idx()[lo..hi].binary_search(&j).expect("pattern entry");
                        slots[a * 3 + b] = lo + k;
                    }
                }
            }
        }
        Ok(StiffnessAssembler {
            topo: topo.clone(),
            dofs,
            pattern,
            scatter,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    /// `K_ij = Σ_c |c| ∇φ_j·A_c ∇φ_i` restricted to the free dofs.
    pub fn assemble(&self, tensor: &(dyn Fn(usize) -> Tensor + Sync)) -> CsrMatrix {
        let mut k = self.pattern.clone();
        let vals = k.values_mut();
        let topo = &self.topo;
        let nv = topo.nv();
        let dim = topo.dim();
        let meas = topo.measure();
        for c in 0..topo.cell_count() {
            let a_c = tensor(c);
            let w = topo.grad_weights(topo.cell(c).kind);
            let slots = &self.scatter[c];
            for a in 0..nv {
                let ga = [w[0][a], w[1][a]];
                let aga = a_c.apply(ga);
                for b in a..nv {
                    let mut s = 0.0;
                    for d in 0..dim {
                        s += aga[d] * w[d][b];
                    }
                    let v = meas * s;
                    let pab = slots[a * 3 + b];
                    if pab != usize::MAX {
                        vals[pab] += v;
                    }
                    if b != a {
                        let pba = slots[b * 3 + a];
                        if pba != usize::MAX {
                            vals[pba] += v;
                        }
                    }
                }
            }
        }
        k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::CellGrid;

    fn grid(dim: usize, n: usize, periodic: bool) -> SpatialGrid {
        SpatialGrid {
            dim,
            n,
            length: 1.0,
            periodic,
        }
    }

    #[test]
    fn lumped_mass_sums_to_domain_measure() {
        for dim in [1, 2] {
            for periodic in [false, true] {
                let t = Topology::new(grid(dim, 6, periodic));
                let total: f64 = t.node_mass().iter().sum();
                assert!((total - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_of_linear_function_is_exact() {
        let g = grid(2, 5, false);
        let t = Topology::new(g);
        let vals: Vec<f64> = (0..g.node_count())
            .map(|i| {
                let x = g.node_coords(i);
                3.0 * x[0] - 2.0 * x[1] + 1.0
            })
            .collect();
        for c in 0..t.cell_count() {
            let gr = t.cell_gradient(&vals, c);
            assert!((gr[0] - 3.0).abs() < 1e-12 && (gr[1] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_stiffness_annihilates_constants() {
        let t = Topology::new(CellGrid::new(2, 6, 1).unwrap().spatial());
        let asm = StiffnessAssembler::new(&t).unwrap();
        let k = asm.assemble(&|c| Tensor::scalar(2, 1.0 + c as f64 * 0.01));
        let y = k.mul_vec(&vec![1.0; k.n()]);
        assert!(y.iter().all(|v| v.abs() < 1e-12));
        assert!(k.symmetry_defect() < 1e-14);
    }

    #[test]
    fn dirichlet_laplacian_1d_matches_stencil() {
        let t = Topology::new(grid(1, 4, false));
        let asm = StiffnessAssembler::new(&t).unwrap();
        let k = asm.assemble(&|_| Tensor::identity(1));
        assert_eq!(k.n(), 3);
        assert!((k.get(0, 0) - 8.0).abs() < 1e-12);
        assert!((k.get(0, 1) + 4.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_transpose_is_adjoint_of_gradient() {
        let g = grid(2, 4, false);
        let t = Topology::new(g);
        let w: Vec<f64> = (0..g.node_count()).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = |c: usize| [(c as f64).cos(), (c as f64 * 0.5).sin()];
        let b = t.gradient_transpose(&x);
        let lhs: f64 = b.iter().zip(&w).map(|(a, b)| a * b).sum();
        let rhs: f64 = (0..t.cell_count())
            .map(|c| {
                let gr = t.cell_gradient(&w, c);
                let xc = x(c);
                t.measure() * (xc[0] * gr[0] + xc[1] * gr[1])
            })
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
