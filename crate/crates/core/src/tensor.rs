use serde::{Deserialize, Serialize};

/// A `dim×dim` real matrix with `dim ∈ {1, 2}`, stored in a fixed 2×2 block.
///
/// Entries outside the leading `dim×dim` block are kept at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub dim: usize,
    pub m: [[f64; 2]; 2],
}

impl Tensor {
    pub fn zeros(dim: usize) -> Self {
        debug_assert!(dim == 1 || dim == 2);
        Tensor {
            dim,
            m: [[0.0; 2]; 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    pub fn scalar(dim: usize, c: f64) -> Self {
        let mut t = Self::zeros(dim);
        for k in 0..dim {
            t.m[k][k] = c;
        }
        t
    }

    /// Builds from row-major entries; `entries.len()` must be `dim*dim`.
    pub fn from_row_major(dim: usize, entries: &[f64]) -> Self {
        assert_eq!(entries.len(), dim * dim);
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                t.m[i][j] = entries[i * dim + j];
            }
        }
        t
    }

    pub fn row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim * self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.push(self.m[i][j]);
            }
        }
        out
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    #[inline]
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.m[0][0] * v[0] + self.m[0][1] * v[1],
            self.m[1][0] * v[0] + self.m[1][1] * v[1],
        ]
    }

    #[inline]
    pub fn quad(&self, v: [f64; 2]) -> f64 {
        let w = self.apply(v);
        w[0] * v[0] + w[1] * v[1]
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut t = *self;
        for row in t.m.iter_mut() {
            for x in row.iter_mut() {
                *x *= c;
            }
        }
        t
    }

    pub fn add(&self, other: &Tensor) -> Self {
        let mut t = *self;
        for i in 0..2 {
            for j in 0..2 {
                t.m[i][j] += other.m[i][j];
            }
        }
        t
    }

    /// `self + c·other`
    pub fn axpy(&self, c: f64, other: &Tensor) -> Self {
        self.add(&other.scale(c))
    }

    pub fn transpose(&self) -> Self {
        let mut t = *self;
        t.m[0][1] = self.m[1][0];
        t.m[1][0] = self.m[0][1];
        t
    }

    /// Largest `|a_ij − a_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        (self.m[0][1] - self.m[1][0]).abs()
    }

    /// Extreme Rayleigh quotients `min/max ξ·Aξ / |ξ|²`, i.e. the eigenvalue
    /// range of the symmetric part.
    pub fn rayleigh_range(&self) -> (f64, f64) {
        if self.dim == 1 {
            return (self.m[0][0], self.m[0][0]);
        }
        let a = self.m[0][0];
        let d = self.m[1][1];
        let b = 0.5 * (self.m[0][1] + self.m[1][0]);
        let mean = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
        (mean - rad, mean + rad)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((self.m[i][j] - other.m[i][j]).abs());
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().flatten().fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rayleigh_range_of_diagonal_and_rotated() {
        let t = Tensor::from_row_major(2, &[2.0, 0.0, 0.0, 0.5]);
        assert_eq!(t.rayleigh_range(), (0.5, 2.0));
        // eigenvalues 1 and 3
        let r = Tensor::from_row_major(2, &[2.0, 1.0, 1.0, 2.0]);
        let (lo, hi) = r.rayleigh_range();
        assert!((lo - 1.0).abs() < 1e-15 && (hi - 3.0).abs() < 1e-15);
    }

    #[test]
    fn symmetry_defect_detects_asymmetry() {
        let t = Tensor::from_row_major(2, &[1.0, 0.2, 0.0, 1.0]);
        assert!((t.symmetry_defect() - 0.2).abs() < 1e-15);
        assert_eq!(Tensor::identity(2).symmetry_defect(), 0.0);
    }
}
