//! Iterative solvers for the assembled sparse systems.
//!
//! Three Krylov methods cover the scheme's needs: conjugate gradients for
//! the symmetric positive (semi-)definite solves (momentum, pressure,
//! electric potential, mass projections), BiCGStab and restarted GMRES
//! for the nonsymmetric coupled transport system. Preconditioning is
//! Jacobi or symmetric Gauss-Seidel (SSOR with unit relaxation), both
//! applied matrix-free from the CSR data.
//!
//! Singular zero-mean systems (pure Neumann pressure and potential
//! solves) are handled by projection: the right-hand side is made
//! compatible by removing its constant component, iterates are kept clean
//! of nullspace drift, and the final solution is shifted to exact
//! weighted zero mean. For the symmetric operators assembled here the
//! constant vector spans both the kernel and the orthogonal complement of
//! the range, so these projections do not perturb the residual.
//!
//! Convergence is declared on the true residual |b - A x| <= max(rel *
//! |b|, abs), re-verified by an explicit matrix-vector product whenever a
//! recurrence residual first passes the test. Breakdown and iteration
//! exhaustion return the best iterate with `converged = false`; callers
//! decide whether that is fatal.

use crate::error::{Error, Result};
use crate::fem::SparseOperator;
use crate::mesh::Constraint;

/// Krylov method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Cg,
    BiCgStab,
    Gmres { restart: usize },
}

/// Preconditioner selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precond {
    None,
    Diagonal,
    Ssor,
}

/// Tolerances and limits for one solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveSpec {
    pub method: Method,
    pub precond: Precond,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iters: usize,
}

impl Default for SolveSpec {
    fn default() -> Self {
        SolveSpec {
            method: Method::Cg,
            precond: Precond::Ssor,
            rel_tol: 1e-8,
            abs_tol: 0.0,
            max_iters: 2000,
        }
    }
}

/// Outcome of one solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final true residual relative to |b| (absolute when |b| = 0).
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Shift `x` so its weighted mean vanishes: `x -= (w . x / w . 1) 1`.
/// Returns the subtracted mean.
pub fn project_zero_mean(x: &mut [f64], weights: &[f64]) -> Result<f64> {
    if x.len() != weights.len() {
        return Err(Error::Shape(format!(
            "field length {} != weight length {}",
            x.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidValue(format!(
            "zero-mean projection needs positive total weight, got {total}"
        )));
    }
    let mean = dot(x, weights) / total;
    for v in x.iter_mut() {
        *v -= mean;
    }
    Ok(mean)
}

fn subtract_euclidean_mean(x: &mut [f64]) {
    let mean: f64 = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v -= mean;
    }
}

struct Prec<'a> {
    kind: Precond,
    op: &'a SparseOperator,
    inv_diag: Vec<f64>,
}

impl<'a> Prec<'a> {
    fn build(kind: Precond, op: &'a SparseOperator) -> Result<Prec<'a>> {
        let inv_diag = match kind {
            Precond::None => Vec::new(),
            Precond::Diagonal | Precond::Ssor => {
                let d = op.diagonal();
                let mut inv = Vec::with_capacity(d.len());
                for (i, v) in d.iter().enumerate() {
                    if *v == 0.0 || !v.is_finite() {
                        return Err(Error::InvalidValue(format!(
                            "preconditioner needs a nonzero finite diagonal; row {i} has {v}"
                        )));
                    }
                    inv.push(1.0 / v);
                }
                inv
            }
        };
        Ok(Prec { kind, op, inv_diag })
    }

    /// z = M^-1 r.
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self.kind {
            Precond::None => z.copy_from_slice(r),
            Precond::Diagonal => {
                for i in 0..r.len() {
                    z[i] = r[i] * self.inv_diag[i];
                }
            }
            Precond::Ssor => {
                // M = (D + L) D^-1 (D + U) with unit relaxation.
                let op = self.op;
                let n = r.len();
                // Forward sweep: (D + L) y = r.
                for i in 0..n {
                    let mut s = r[i];
                    for k in op.row_ptr[i]..op.row_ptr[i + 1] {
                        let j = op.cols[k];
                        if j < i {
                            s -= op.vals[k] * z[j];
                        }
                    }
                    z[i] = s * self.inv_diag[i];
                }
                // Scale: v = D y (kept in place as z * d), then backward
                // sweep (D + U) z = v.
                for i in (0..n).rev() {
                    let mut s = z[i] / self.inv_diag[i];
                    for k in op.row_ptr[i]..op.row_ptr[i + 1] {
                        let j = op.cols[k];
                        if j > i {
                            s -= op.vals[k] * z[j];
                        }
                    }
                    z[i] = s * self.inv_diag[i];
                }
            }
        }
    }
}

/// Solve `A x = b` with the requested method, starting from `x0` (zeros
/// when absent). Zero-mean constrained operators are projected as
/// described in the module docs.
pub fn solve(
    op: &SparseOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    spec: &SolveSpec,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = op.nrows;
    if op.ncols != n {
        return Err(Error::Shape(format!(
            "solver needs a square operator, got {} x {}",
            op.nrows, op.ncols
        )));
    }
    if b.len() != n {
        return Err(Error::Shape(format!(
            "right-hand side length {} != system size {n}",
            b.len()
        )));
    }
    if let Some(x0) = x0 {
        if x0.len() != n {
            return Err(Error::Shape(format!(
                "initial guess length {} != system size {n}",
                x0.len()
            )));
        }
    }

    let zero_mean = op.constraint == Constraint::ZeroMean;
    let mut rhs = b.to_vec();
    if zero_mean {
        subtract_euclidean_mean(&mut rhs);
    }
    let bnorm = norm2(&rhs);
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok((
            x,
            SolveReport { iterations: 0, residual: 0.0, converged: true },
        ));
    }
    if zero_mean {
        subtract_euclidean_mean(&mut x);
    }
    let tol = (spec.rel_tol * bnorm).max(spec.abs_tol);

    let prec = Prec::build(spec.precond, op)?;
    let (iterations, converged) = match spec.method {
        Method::Cg => cg(op, &rhs, &mut x, &prec, tol, spec.max_iters, zero_mean),
        Method::BiCgStab => bicgstab(op, &rhs, &mut x, &prec, tol, spec.max_iters, zero_mean),
        Method::Gmres { restart } => {
            gmres(op, &rhs, &mut x, &prec, tol, spec.max_iters, restart.max(1), zero_mean)
        }
    };

    if zero_mean {
        match &op.zero_mean_weights {
            Some(w) => {
                project_zero_mean(&mut x, w)?;
            }
            None => subtract_euclidean_mean(&mut x),
        }
    }
    let residual = op.residual_norm(&x, &rhs) / bnorm;
    Ok((x, SolveReport { iterations, residual, converged }))
}

/// True-residual convergence check shared by the methods: cheap
/// recurrence check first, confirmed against an explicit residual.
fn true_converged(op: &SparseOperator, x: &[f64], b: &[f64], tol: f64) -> bool {
    op.residual_norm(x, b) <= tol
}

fn cg(
    op: &SparseOperator,
    b: &[f64],
    x: &mut [f64],
    prec: &Prec,
    tol: f64,
    max_iters: usize,
    zero_mean: bool,
) -> (usize, bool) {
    let n = b.len();
    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if norm2(&r) <= tol {
        return (0, true);
    }
    let mut z = vec![0.0; n];
    prec.apply(&r, &mut z);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iters {
        op.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if pq == 0.0 || !pq.is_finite() {
            return (it, false);
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        if zero_mean {
            subtract_euclidean_mean(x);
        }
        if norm2(&r) <= tol && true_converged(op, x, b, tol) {
            return (it, true);
        }
        prec.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        if rz == 0.0 || !rz_new.is_finite() {
            return (it, false);
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (max_iters, false)
}

#[allow(clippy::too_many_arguments)]
fn bicgstab(
    op: &SparseOperator,
    b: &[f64],
    x: &mut [f64],
    prec: &Prec,
    tol: f64,
    max_iters: usize,
    zero_mean: bool,
) -> (usize, bool) {
    let n = b.len();
    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if norm2(&r) <= tol {
        return (0, true);
    }
    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iters {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 || !rho_new.is_finite() {
            return (it, false);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        prec.apply(&p, &mut p_hat);
        op.apply(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv.abs() < 1e-300 || !rv.is_finite() {
            return (it, false);
        }
        alpha = rho / rv;
        // s = r - alpha v (reuse r).
        for i in 0..n {
            r[i] -= alpha * v[i];
        }
        if norm2(&r) <= tol {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            if zero_mean {
                subtract_euclidean_mean(x);
            }
            if true_converged(op, x, b, tol) {
                return (it, true);
            }
            // Confirmation failed: undo the half step and continue.
            for i in 0..n {
                x[i] -= alpha * p_hat[i];
            }
        }
        prec.apply(&r, &mut s_hat);
        op.apply(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 || !tt.is_finite() {
            return (it, false);
        }
        omega = dot(&t, &r) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] -= omega * t[i];
        }
        if zero_mean {
            subtract_euclidean_mean(x);
        }
        if norm2(&r) <= tol && true_converged(op, x, b, tol) {
            return (it, true);
        }
        if omega == 0.0 {
            return (it, false);
        }
    }
    (max_iters, false)
}

#[allow(clippy::too_many_arguments)]
fn gmres(
    op: &SparseOperator,
    b: &[f64],
    x: &mut [f64],
    prec: &Prec,
    tol: f64,
    max_iters: usize,
    restart: usize,
    zero_mean: bool,
) -> (usize, bool) {
    // Right-preconditioned GMRES(m): minimize |b - A M^-1 u| over the
    // Krylov space of A M^-1, then x += M^-1 V y. The residual handled by
    // the rotations is the true residual of the original system.
    let n = b.len();
    let mut total_iters = 0usize;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    loop {
        op.apply(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm2(&r);
        if beta <= tol {
            return (total_iters, true);
        }
        if total_iters >= max_iters {
            return (total_iters, false);
        }

        let m = restart;
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        let mut stagnated = false;

        for j in 0..m {
            if total_iters >= max_iters {
                break;
            }
            total_iters += 1;
            prec.apply(&basis[j], &mut z);
            op.apply(&z, &mut w);
            // Modified Gram-Schmidt.
            for (i, vi) in basis.iter().enumerate() {
                h[i][j] = dot(&w, vi);
                for l in 0..n {
                    w[l] -= h[i][j] * vi[l];
                }
            }
            h[j + 1][j] = norm2(&w);
            // Apply accumulated rotations to the new column.
            for i in 0..j {
                let tmp = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = tmp;
            }
            let denom = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            if denom == 0.0 || !denom.is_finite() {
                stagnated = true;
                k_used = j;
                break;
            }
            cs[j] = h[j][j] / denom;
            sn[j] = h[j + 1][j] / denom;
            h[j][j] = denom;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            k_used = j + 1;
            let lucky = h[j + 1][j] == 0.0;
            if g[j + 1].abs() <= tol || lucky {
                break;
            }
            basis.push(w.iter().map(|v| v / h[j + 1][j]).collect());
        }

        if k_used > 0 {
            // Back substitution for y, then x += M^-1 (V y).
            let mut y = vec![0.0f64; k_used];
            for i in (0..k_used).rev() {
                let mut s = g[i];
                for j in i + 1..k_used {
                    s -= h[i][j] * y[j];
                }
                y[i] = s / h[i][i];
            }
            let mut update = vec![0.0; n];
            for (j, yj) in y.iter().enumerate() {
                for l in 0..n {
                    update[l] += yj * basis[j][l];
                }
            }
            prec.apply(&update, &mut z);
            for l in 0..n {
                x[l] += z[l];
            }
            if zero_mean {
                subtract_euclidean_mean(x);
            }
        }
        if true_converged(op, x, b, tol) {
            return (total_iters, true);
        }
        if total_iters >= max_iters || stagnated || k_used == 0 {
            return (total_iters, false);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::sparse::dense;
    use crate::fem::{apply_dirichlet, Assembler, Coeff, NodalField};
    use crate::mesh::{build_mesh, Constraint, DofMap, StructuredMesh};
    use approx::assert_relative_eq;

    fn unit_square(cells: usize) -> StructuredMesh {
        build_mesh(2, [0.0; 3], [1.0, 1.0, 0.0], [cells, cells, 0]).unwrap()
    }

    fn spec(method: Method, precond: Precond, rel: f64) -> SolveSpec {
        SolveSpec { method, precond, rel_tol: rel, abs_tol: 0.0, max_iters: 5000 }
    }

    #[test]
    fn identity_system_converges_immediately() {
        let n = 7;
        let row_ptr: Vec<usize> = (0..=n).collect();
        let cols: Vec<usize> = (0..n).collect();
        let mut op = SparseOperator::from_pattern(n, n, row_ptr, cols, Constraint::None);
        op.vals.iter_mut().for_each(|v| *v = 1.0);
        op.symmetric = true;
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        for method in [Method::Cg, Method::BiCgStab, Method::Gmres { restart: 5 }] {
            let (x, rep) = solve(&op, &b, None, &spec(method, Precond::None, 1e-12)).unwrap();
            assert!(rep.converged);
            assert!(rep.iterations <= 1, "{method:?} took {}", rep.iterations);
            for i in 0..n {
                assert_relative_eq!(x[i], b[i], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn zero_rhs_returns_zero_without_iterating() {
        let mesh = unit_square(3);
        let asm = Assembler::new(&mesh);
        let dofmap = DofMap::scalar(&mesh, Constraint::None);
        let m = asm.mass(&dofmap, Coeff::Const(1.0)).unwrap();
        let b = vec![0.0; mesh.num_nodes()];
        let (x, rep) = solve(&m, &b, None, &SolveSpec::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
        assert!(x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dirichlet_poisson_matches_dense_elimination() {
        let mesh = unit_square(4);
        let asm = Assembler::new(&mesh);
        let dofmap = DofMap::scalar(&mesh, Constraint::DirichletBoundary);
        let mut k = asm.stiffness(&dofmap, Coeff::Const(1.0)).unwrap();
        // Unit load against each test function.
        let mut b = asm.lumped.clone();
        let bnodes = mesh.boundary_nodes();
        let zeros = vec![0.0; bnodes.len()];
        apply_dirichlet(&mut k, &mut b, &dofmap, &bnodes, &zeros).unwrap();

        let dense_x = dense::solve(k.to_dense(), b.clone());
        for method in [Method::Cg, Method::BiCgStab, Method::Gmres { restart: 20 }] {
            for precond in [Precond::None, Precond::Diagonal, Precond::Ssor] {
                let (x, rep) = solve(&k, &b, None, &spec(method, precond, 1e-12)).unwrap();
                assert!(rep.converged, "{method:?}/{precond:?}");
                assert!(rep.residual <= 1e-11);
                for i in 0..x.len() {
                    assert_relative_eq!(x[i], dense_x[i], max_relative = 1e-8, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_mean_neumann_solve_matches_dense_lagrange_solution() {
        let mesh = unit_square(2);
        let asm = Assembler::new(&mesh);
        let dofmap = DofMap::scalar(&mesh, Constraint::ZeroMean);
        let k = asm.stiffness(&dofmap, Coeff::Const(1.0)).unwrap();
        assert!(k.zero_mean_weights.is_some());

        // Compatible rhs: K x* for a chosen x*.
        let xstar = NodalField::scalar_from_fn(&mesh, |p| p[0] * p[0] - p[1]);
        let n = mesh.num_nodes();
        let mut b = vec![0.0; n];
        k.apply(&xstar.data, &mut b);

        let w = asm.lumped.clone();
        let dense_x = dense::solve_zero_mean(&k.to_dense(), &b, &w);
        let (x, rep) = solve(&k, &b, None, &spec(Method::Cg, Precond::Ssor, 1e-13)).unwrap();
        assert!(rep.converged);
        // Weighted mean is exactly projected out.
        let wx: f64 = w.iter().zip(&x).map(|(a, c)| a * c).sum();
        assert!(wx.abs() < 1e-13, "weighted mean {wx}");
        for i in 0..n {
            assert_relative_eq!(x[i], dense_x[i], max_relative = 1e-7, epsilon = 1e-10);
        }
    }

    #[test]
    fn nonsymmetric_transport_system_solved_by_bicgstab_and_gmres() {
        let mesh = unit_square(3);
        let asm = Assembler::new(&mesh);
        let smap = DofMap::scalar(&mesh, Constraint::None);
        let n = mesh.num_nodes();
        let m = asm.mass(&smap, Coeff::Const(1.0)).unwrap();
        let k = asm.stiffness(&smap, Coeff::Const(0.05)).unwrap();
        // Nonsymmetric single-component advection block assembled by hand
        // on the scalar pattern: M + K + drift * (upwind-ish shift).
        let mut a = asm.scalar_op(Constraint::None);
        for i in 0..a.vals.len() {
            a.vals[i] = m.vals[i] + k.vals[i];
        }
        // Break symmetry deterministically.
        for row in 0..n {
            for idx in a.row_ptr[row]..a.row_ptr[row + 1] {
                let col = a.cols[idx];
                if col > row {
                    a.vals[idx] += 0.01 * ((row % 3) as f64 - 1.0);
                }
            }
        }
        a.symmetric = false;
        let b: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let dense_x = dense::solve(a.to_dense(), b.clone());
        for method in [Method::BiCgStab, Method::Gmres { restart: 25 }] {
            for precond in [Precond::Diagonal, Precond::Ssor] {
                let (x, rep) = solve(&a, &b, None, &spec(method, precond, 1e-12)).unwrap();
                assert!(rep.converged, "{method:?}/{precond:?}: {rep:?}");
                for i in 0..n {
                    assert_relative_eq!(x[i], dense_x[i], max_relative = 1e-7, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn cg_residual_decreases_monotonically_on_the_mass_matrix() {
        let mesh = unit_square(4);
        let asm = Assembler::new(&mesh);
        let dofmap = DofMap::scalar(&mesh, Constraint::None);
        let m = asm.mass(&dofmap, Coeff::Const(1.0)).unwrap();
        let n = mesh.num_nodes();
        let b: Vec<f64> = (0..n).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let mut last = f64::INFINITY;
        for iters in 1..=20 {
            let s = SolveSpec {
                method: Method::Cg,
                precond: Precond::Diagonal,
                rel_tol: 1e-30,
                abs_tol: 0.0,
                max_iters: iters,
            };
            let (_, rep) = solve(&m, &b, None, &s).unwrap();
            assert!(
                rep.residual <= last * (1.0 + 1e-12),
                "residual rose from {last} to {} at {iters} iterations",
                rep.residual
            );
            last = rep.residual;
        }
        assert!(last < 1e-8, "mass solve should be nearly converged, at {last}");
    }

    #[test]
    fn solves_are_bit_deterministic() {
        let mesh = unit_square(3);
        let asm = Assembler::new(&mesh);
        let dofmap = DofMap::scalar(&mesh, Constraint::None);
        let m = asm.mass(&dofmap, Coeff::Const(1.0)).unwrap();
        let n = mesh.num_nodes();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let s = spec(Method::Cg, Precond::Ssor, 1e-12);
        let (x1, r1) = solve(&m, &b, None, &s).unwrap();
        let (x2, r2) = solve(&m, &b, None, &s).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(r1.iterations, r2.iterations);
        assert_eq!(r1.residual.to_bits(), r2.residual.to_bits());
    }

    #[test]
    fn project_zero_mean_examples() {
        let mesh = unit_square(2);
        let asm = Assembler::new(&mesh);
        let mut x = NodalField::scalar_from_fn(&mesh, |p| p[0]).data;
        let mean = project_zero_mean(&mut x, &asm.lumped).unwrap();
        // The linear field x has exact weighted mean 1/2 on the unit
        // square; node 0 sits at the origin.
        assert_relative_eq!(mean, 0.5, max_relative = 1e-14);
        assert_relative_eq!(x[0], -0.5, max_relative = 1e-14);

        // Idempotent.
        let before = x.clone();
        let mean2 = project_zero_mean(&mut x, &asm.lumped).unwrap();
        assert!(mean2.abs() < 1e-15);
        for (a, b) in x.iter().zip(&before) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }

        // Zero weights rejected.
        let zeros = vec![0.0; x.len()];
        assert!(project_zero_mean(&mut x, &zeros).is_err());
        // Length mismatch rejected.
        assert!(project_zero_mean(&mut x, &asm.lumped[..3]).is_err());
    }

    #[test]
    fn shape_errors_are_reported() {
        let mesh = unit_square(2);
        let asm = Assembler::new(&mesh);
        let dofmap = DofMap::scalar(&mesh, Constraint::None);
        let m = asm.mass(&dofmap, Coeff::Const(1.0)).unwrap();
        let bad = vec![1.0; 3];
        assert!(solve(&m, &bad, None, &SolveSpec::default()).is_err());
        let b = vec![1.0; mesh.num_nodes()];
        assert!(solve(&m, &b, Some(&bad), &SolveSpec::default()).is_err());
    }
}
