//! Sparse LU for the `(q, Phi)` evaluation systems. Each row of `I - P` has
//! a few dozen entries at most, so a sparse factorization stays cheap long
//! after dense blocks stop being practical.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

/// Square sparse system assembled from `(row, col, value)` entries.
/// Repeated positions are summed.
#[derive(Debug, Clone, Default)]
pub struct SparseSystem {
    n: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl SparseSystem {
    pub fn new(n: usize) -> Self {
        SparseSystem { n, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.n && col < self.n);
        if val != 0.0 {
            self.entries.push(Triplet::new(row, col, val));
        }
    }

    pub fn factor(&self) -> Result<Factored> {
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &self.entries)
            .map_err(|e| Error::Singular(format!("sparse assembly failed: {e:?}")))?;
        let lu = m
            .sp_lu()
            .map_err(|e| Error::Singular(format!("sparse LU failed: {e:?}")))?;
        Ok(Factored { lu, n: self.n })
    }

    /// Dense copy, for tests.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n, self.n);
        for t in &self.entries {
            d[(t.row, t.col)] += t.val;
        }
        d
    }
}

pub struct Factored {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl Factored {
    /// Solve `M X = B` for column-major `rhs` of `n x cols`.
    pub fn solve(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.run(rhs, false)
    }

    /// Solve `M^T X = B`.
    pub fn solve_transpose(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.run(rhs, true)
    }

    fn run(&self, rhs: &[Vec<f64>], transpose: bool) -> Result<Vec<Vec<f64>>> {
        if rhs.iter().any(|c| c.len() != self.n) {
            return Err(Error::invalid("right-hand side has the wrong length"));
        }
        let b = Mat::from_fn(self.n, rhs.len(), |r, c| rhs[c][r]);
        let x = if transpose { self.lu.solve_transpose(&b) } else { self.lu.solve(&b) };
        let out: Vec<Vec<f64>> = (0..rhs.len())
            .map(|c| (0..self.n).map(|r| x[(r, c)]).collect())
            .collect();
        if out.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite solution".into()));
        }
        Ok(out)
    }
}
