//! Row-compressed sparse operators and Dirichlet constraint application.

use crate::error::{Error, Result};
use crate::mesh::{Constraint, DofMap};

/// CSR matrix with the constraint metadata the solvers need.
///
/// Column indices are sorted and unique within each row. The `symmetric`
/// flag is set by the assembler only for bilinear forms that are symmetric
/// by construction; [`SparseOperator::values_symmetric`] can verify it.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub symmetric: bool,
    /// Constraint of the space the operator acts on.
    pub constraint: Constraint,
    /// DOFs turned into scaled-identity rows by [`apply_dirichlet`].
    pub dirichlet_rows: Vec<usize>,
    /// Lumped-mass weights defining the zero-mean functional for
    /// operators on [`Constraint::ZeroMean`] spaces.
    pub zero_mean_weights: Option<Vec<f64>>,
}

impl SparseOperator {
    pub fn from_pattern(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        cols: Vec<usize>,
        constraint: Constraint,
    ) -> SparseOperator {
        debug_assert_eq!(row_ptr.len(), nrows + 1);
        let nnz = *row_ptr.last().unwrap_or(&0);
        debug_assert_eq!(cols.len(), nnz);
        SparseOperator {
            nrows,
            ncols,
            row_ptr,
            cols,
            vals: vec![0.0; nnz],
            symmetric: false,
            constraint,
            dirichlet_rows: Vec::new(),
            zero_mean_weights: None,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// y = A x.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] = acc;
        }
    }

    /// y += s * (A x).
    pub fn apply_add_scaled(&self, x: &[f64], s: f64, y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] += s * acc;
        }
    }

    /// Euclidean norm of b - A x, without allocating.
    pub fn residual_norm(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut sum = 0.0;
        for i in 0..self.nrows {
            let mut acc = b[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc -= self.vals[k] * x[self.cols[k]];
            }
            sum += acc * acc;
        }
        sum.sqrt()
    }

    /// Position of entry (i, j) in the value array, if present.
    pub fn value_index(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.cols[lo..hi].binary_search(&j).ok().map(|p| lo + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.value_index(i, j).map(|k| self.vals[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    /// Verify the symmetry flag against the stored values.
    pub fn values_symmetric(&self, rel_tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let scale = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                if (self.vals[k] - self.get(j, i)).abs() > rel_tol * scale {
                    return false;
                }
            }
        }
        true
    }

    /// Dense copy for small test oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[i][self.cols[k]] = self.vals[k];
            }
        }
        d
    }

    /// Linear combination of operators sharing one sparsity pattern.
    /// Metadata (constraint, weights) is taken from the first term.
    pub fn linear_combination(terms: &[(f64, &SparseOperator)]) -> Result<SparseOperator> {
        let (_, first) = terms.first().ok_or_else(|| {
            Error::Shape("linear combination of zero operators".to_string())
        })?;
        let mut out = (*first).clone();
        out.vals.iter_mut().for_each(|v| *v = 0.0);
        let mut symmetric = true;
        for (s, op) in terms {
            if op.row_ptr != first.row_ptr || op.cols != first.cols {
                return Err(Error::Shape(
                    "operators in a linear combination must share their pattern".to_string(),
                ));
            }
            symmetric &= op.symmetric;
            for (o, v) in out.vals.iter_mut().zip(&op.vals) {
                *o += s * v;
            }
        }
        out.symmetric = symmetric;
        Ok(out)
    }
}

/// Impose fixed values on DOFs whose nodes lie on the mesh boundary.
///
/// Each constrained row is replaced by a scaled identity row, keeping the
/// magnitude of its original diagonal so conditioning does not degrade;
/// the matching columns are eliminated into the right-hand side, which
/// preserves symmetry. `dofs` are global DOF indices of `dofmap`'s layout
/// (component-major for vector fields).
pub fn apply_dirichlet(
    op: &mut SparseOperator,
    rhs: &mut [f64],
    dofmap: &DofMap,
    dofs: &[usize],
    values: &[f64],
) -> Result<()> {
    if op.nrows != op.ncols || op.nrows != dofmap.num_dofs() || rhs.len() != op.nrows {
        return Err(Error::Shape(format!(
            "constraint application needs a square operator matching the dof map: \
             op is {}x{}, rhs {}, dof map {}",
            op.nrows,
            op.ncols,
            rhs.len(),
            dofmap.num_dofs()
        )));
    }
    if dofs.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} constrained dofs but {} values",
            dofs.len(),
            values.len()
        )));
    }

    let n = op.nrows;
    let mut fixed = vec![false; n];
    let mut fixed_value = vec![0.0; n];
    for (&dof, &v) in dofs.iter().zip(values) {
        if dof >= n {
            return Err(Error::IndexOutOfRange { what: "dof", index: dof, len: n });
        }
        let node = dof % dofmap.num_nodes;
        if dofmap.boundary.binary_search(&node).is_err() {
            return Err(Error::Constraint(format!(
                "dof {dof} (node {node}) is not a boundary node"
            )));
        }
        fixed[dof] = true;
        fixed_value[dof] = v;
    }

    // Original diagonal magnitudes before any modification.
    let mut diag_mag = vec![0.0; n];
    for dof in 0..n {
        if fixed[dof] {
            let d = op.get(dof, dof).abs();
            diag_mag[dof] = if d > 0.0 { d } else { 1.0 };
        }
    }

    // Eliminate constrained columns out of the free rows.
    for i in 0..n {
        if fixed[i] {
            continue;
        }
        for k in op.row_ptr[i]..op.row_ptr[i + 1] {
            let j = op.cols[k];
            if fixed[j] {
                rhs[i] -= op.vals[k] * fixed_value[j];
                op.vals[k] = 0.0;
            }
        }
    }

    // Replace constrained rows by scaled identity.
    for i in 0..n {
        if !fixed[i] {
            continue;
        }
        for k in op.row_ptr[i]..op.row_ptr[i + 1] {
            op.vals[k] = if op.cols[k] == i { diag_mag[i] } else { 0.0 };
        }
        rhs[i] = diag_mag[i] * fixed_value[i];
    }

    let mut rows: Vec<usize> = dofs.to_vec();
    rows.sort_unstable();
    rows.dedup();
    op.dirichlet_rows = rows;
    Ok(())
}
