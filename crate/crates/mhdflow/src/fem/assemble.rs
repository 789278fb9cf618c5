//! Global assembly of bilinear forms on structured Q1 grids.
//!
//! Sparsity patterns come straight from the structured node stencil (the
//! 3^dim index neighborhood), and per-cell scatter tables map element
//! entries to CSR value slots, so repeated assembly performs no searches
//! and no hashing. Cells are visited in index order with fixed inner
//! loops, making every assembly bit-deterministic.
//!
//! Kernels provided (w, v are test/trial functions, c a scalar coefficient
//! interpolated from nodes or constant):
//!
//! ```text
//! mass            (c v, w)
//! stiffness       (c grad v, grad w)            c > 0 enforced
//! viscous stress  (2 c D(v), D(w))              D = symmetric gradient
//! convection      ((a . grad) v, w)             a = rho u - flux, frozen
//! divergence      (div v, w)                    vector -> scalar coupling
//! gradient        (q, div w)                    scalar -> vector coupling
//! ```
//!
//! Vector operators use the component-major DOF layout of
//! [`crate::mesh::DofMap`]; the viscous form couples components (full
//! block pattern), mass and convection are block-diagonal.

use crate::error::{Error, Result};
use crate::fem::sparse::SparseOperator;
use crate::fem::{gauss_2pt, shape_eval, NodalField};
use crate::mesh::{Constraint, DofMap, StructuredMesh};

/// Scalar coefficient of a bilinear form: a constant or a nodal field
/// interpolated at quadrature points.
#[derive(Clone, Copy)]
pub enum Coeff<'a> {
    Const(f64),
    Nodal(&'a NodalField),
}

impl Coeff<'_> {
    fn check(&self, num_nodes: usize) -> Result<()> {
        match self {
            Coeff::Const(c) => {
                if c.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidValue(format!("non-finite coefficient {c}")))
                }
            }
            Coeff::Nodal(f) => f.check_shape(1, num_nodes),
        }
    }
}

/// Everything known at one quadrature point of one cell.
pub struct QuadData<'a> {
    pub mesh: &'a StructuredMesh,
    pub cell: usize,
    /// Global node indices of the cell corners (tensor order).
    pub nodes: &'a [usize],
    /// Shape function values at this point.
    pub shapes: &'a [f64],
    /// Physical-coordinate shape gradients at this point.
    pub grads: &'a [[f64; 3]],
    /// Quadrature weight times Jacobian determinant.
    pub wdet: f64,
}

impl QuadData<'_> {
    pub fn coord(&self) -> [f64; 3] {
        let mut x = [0.0; 3];
        for (a, &node) in self.nodes.iter().enumerate() {
            let xn = self.mesh.node_coord(node);
            for ax in 0..self.mesh.dim {
                x[ax] += self.shapes[a] * xn[ax];
            }
        }
        x
    }

    pub fn interp_scalar(&self, f: &NodalField) -> f64 {
        let mut v = 0.0;
        for (a, &node) in self.nodes.iter().enumerate() {
            v += self.shapes[a] * f.data[node];
        }
        v
    }

    pub fn grad_scalar(&self, f: &NodalField) -> [f64; 3] {
        let mut g = [0.0; 3];
        for (a, &node) in self.nodes.iter().enumerate() {
            let fa = f.data[node];
            for ax in 0..self.mesh.dim {
                g[ax] += fa * self.grads[a][ax];
            }
        }
        g
    }

    pub fn interp_vector(&self, f: &NodalField) -> [f64; 3] {
        let n = f.num_nodes;
        let mut v = [0.0; 3];
        for (a, &node) in self.nodes.iter().enumerate() {
            for c in 0..f.arity {
                v[c] += self.shapes[a] * f.data[c * n + node];
            }
        }
        v
    }

    /// Gradient of a vector field: `out[c][ax] = d u_c / d x_ax`.
    pub fn grad_vector(&self, f: &NodalField) -> [[f64; 3]; 3] {
        let n = f.num_nodes;
        let mut g = [[0.0; 3]; 3];
        for (a, &node) in self.nodes.iter().enumerate() {
            for c in 0..f.arity {
                let fa = f.data[c * n + node];
                for ax in 0..self.mesh.dim {
                    g[c][ax] += fa * self.grads[a][ax];
                }
            }
        }
        g
    }
}

/// Precomputed tables for one mesh: tabulated shapes, sparsity pattern,
/// scatter maps, and lumped mass weights.
pub struct Assembler {
    pub mesh: StructuredMesh,
    npc: usize,
    nq: usize,
    shapes: Vec<Vec<f64>>,
    grads: Vec<Vec<[f64; 3]>>,
    wdet: f64,
    srow_ptr: Vec<usize>,
    scols: Vec<usize>,
    row_len: Vec<usize>,
    snnz: usize,
    cell_nodes_tab: Vec<u32>,
    scatter: Vec<u32>,
    /// Lumped mass weights: `w_i = integral of basis function i`.
    pub lumped: Vec<f64>,
}

impl Assembler {
    pub fn new(mesh: &StructuredMesh) -> Assembler {
        let dim = mesh.dim;
        let npc = mesh.nodes_per_cell();
        let quad = gauss_2pt(dim);
        let nq = quad.points.len();

        let mut shapes = Vec::with_capacity(nq);
        let mut grads = Vec::with_capacity(nq);
        for q in 0..nq {
            let (vals, ref_grads) = shape_eval(dim, quad.points[q]);
            let mut phys = vec![[0.0; 3]; npc];
            for a in 0..npc {
                for ax in 0..dim {
                    phys[a][ax] = ref_grads[a][ax] * 2.0 / mesh.h[ax];
                }
            }
            shapes.push(vals);
            grads.push(phys);
        }
        let wdet = mesh.cell_volume() / (1usize << dim) as f64;

        // Scalar stencil pattern in ascending column order.
        let n = mesh.num_nodes();
        let mut srow_ptr = Vec::with_capacity(n + 1);
        let mut scols = Vec::new();
        srow_ptr.push(0);
        let zrange = if dim == 3 { -1i64..=1 } else { 0i64..=0 };
        for node in 0..n {
            let mi = mesh.node_multi(node);
            for dz in zrange.clone() {
                let z = mi[2] as i64 + dz;
                if dim == 3 && (z < 0 || z > mesh.cells[2] as i64) {
                    continue;
                }
                for dy in -1i64..=1 {
                    let y = mi[1] as i64 + dy;
                    if y < 0 || y > mesh.cells[1] as i64 {
                        continue;
                    }
                    for dx in -1i64..=1 {
                        let x = mi[0] as i64 + dx;
                        if x < 0 || x > mesh.cells[0] as i64 {
                            continue;
                        }
                        scols.push(mesh.node_index([x as usize, y as usize, z as usize]));
                    }
                }
            }
            srow_ptr.push(scols.len());
        }
        let snnz = scols.len();
        let row_len: Vec<usize> = (0..n).map(|i| srow_ptr[i + 1] - srow_ptr[i]).collect();

        // Cell gather and scatter tables.
        let ncells = mesh.num_cells();
        let mut cell_nodes_tab = vec![0u32; ncells * npc];
        let mut scatter = vec![0u32; ncells * npc * npc];
        let mut corner = [0usize; 8];
        for cell in 0..ncells {
            mesh.cell_nodes_into(cell, &mut corner);
            for a in 0..npc {
                cell_nodes_tab[cell * npc + a] = corner[a] as u32;
            }
            for a in 0..npc {
                let i = corner[a];
                let lo = srow_ptr[i];
                let hi = srow_ptr[i + 1];
                for b in 0..npc {
                    let j = corner[b];
                    let pos = scols[lo..hi]
                        .binary_search(&j)
                        .expect("cell neighbor missing from stencil");
                    scatter[(cell * npc + a) * npc + b] = (lo + pos) as u32;
                }
            }
        }

        // Lumped weights by the same quadrature as everything else.
        let mut lumped = vec![0.0; n];
        for cell in 0..ncells {
            for q in 0..nq {
                for a in 0..npc {
                    lumped[cell_nodes_tab[cell * npc + a] as usize] += wdet * shapes[q][a];
                }
            }
        }

        Assembler {
            mesh: mesh.clone(),
            npc,
            nq,
            shapes,
            grads,
            wdet,
            srow_ptr,
            scols,
            row_len,
            snnz,
            cell_nodes_tab,
            scatter,
            lumped,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    pub fn domain_volume(&self) -> f64 {
        self.mesh.cell_volume() * self.mesh.num_cells() as f64
    }

    fn nodes_of(&self, cell: usize) -> [usize; 8] {
        let mut out = [0usize; 8];
        for a in 0..self.npc {
            out[a] = self.cell_nodes_tab[cell * self.npc + a] as usize;
        }
        out
    }

    /// Visit every quadrature point of every cell in deterministic order.
    pub fn for_each_quad(&self, mut f: impl FnMut(&QuadData)) {
        let npc = self.npc;
        for cell in 0..self.mesh.num_cells() {
            let nodes = self.nodes_of(cell);
            for q in 0..self.nq {
                f(&QuadData {
                    mesh: &self.mesh,
                    cell,
                    nodes: &nodes[..npc],
                    shapes: &self.shapes[q],
                    grads: &self.grads[q],
                    wdet: self.wdet,
                });
            }
        }
    }

    // ----- pattern constructors -------------------------------------------

    /// Zero operator on the scalar stencil pattern.
    pub fn scalar_op(&self, constraint: Constraint) -> SparseOperator {
        let n = self.num_nodes();
        let mut op = SparseOperator::from_pattern(
            n,
            n,
            self.srow_ptr.clone(),
            self.scols.clone(),
            constraint,
        );
        if constraint == Constraint::ZeroMean {
            op.zero_mean_weights = Some(self.lumped.clone());
        }
        op
    }

    /// Zero operator with full m-by-m component blocks (component-major).
    pub fn block_op(&self, m: usize, constraint: Constraint) -> SparseOperator {
        let n = self.num_nodes();
        let mut row_ptr = Vec::with_capacity(m * n + 1);
        let mut cols = Vec::with_capacity(m * m * self.snnz);
        row_ptr.push(0);
        for _a in 0..m {
            for i in 0..n {
                for b in 0..m {
                    for k in self.srow_ptr[i]..self.srow_ptr[i + 1] {
                        cols.push(b * n + self.scols[k]);
                    }
                }
                row_ptr.push(cols.len());
            }
        }
        SparseOperator::from_pattern(m * n, m * n, row_ptr, cols, constraint)
    }

    /// Zero operator with diagonal component blocks only.
    pub fn block_diag_op(&self, m: usize, constraint: Constraint) -> SparseOperator {
        let n = self.num_nodes();
        let mut row_ptr = Vec::with_capacity(m * n + 1);
        let mut cols = Vec::with_capacity(m * self.snnz);
        row_ptr.push(0);
        for a in 0..m {
            for i in 0..n {
                for k in self.srow_ptr[i]..self.srow_ptr[i + 1] {
                    cols.push(a * n + self.scols[k]);
                }
                row_ptr.push(cols.len());
            }
        }
        SparseOperator::from_pattern(m * n, m * n, row_ptr, cols, constraint)
    }

    /// Zero operator mapping the vector space to the scalar space.
    pub fn div_op_pattern(&self) -> SparseOperator {
        let n = self.num_nodes();
        let m = self.mesh.dim;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(m * self.snnz);
        row_ptr.push(0);
        for i in 0..n {
            for b in 0..m {
                for k in self.srow_ptr[i]..self.srow_ptr[i + 1] {
                    cols.push(b * n + self.scols[k]);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseOperator::from_pattern(n, m * n, row_ptr, cols, Constraint::None)
    }

    /// Zero operator mapping the scalar space to the vector space.
    pub fn grad_op_pattern(&self) -> SparseOperator {
        let n = self.num_nodes();
        let m = self.mesh.dim;
        let mut row_ptr = Vec::with_capacity(m * n + 1);
        let mut cols = Vec::with_capacity(m * self.snnz);
        row_ptr.push(0);
        for _a in 0..m {
            for i in 0..n {
                for k in self.srow_ptr[i]..self.srow_ptr[i + 1] {
                    cols.push(self.scols[k]);
                }
                row_ptr.push(cols.len());
            }
        }
        SparseOperator::from_pattern(m * n, n, row_ptr, cols, Constraint::None)
    }

    // ----- scatter index helpers ------------------------------------------

    #[inline]
    fn svidx(&self, cell: usize, a: usize, b: usize) -> usize {
        self.scatter[(cell * self.npc + a) * self.npc + b] as usize
    }

    /// Value index in a full block operator for component pair (ca, cb)
    /// at the scalar slot of (cell, a, b).
    #[inline]
    fn bvidx(&self, m: usize, cell: usize, a: usize, b: usize, ca: usize, cb: usize) -> usize {
        let sv = self.svidx(cell, a, b);
        let i = self.cell_nodes_tab[cell * self.npc + a] as usize;
        let base = self.srow_ptr[i];
        ca * m * self.snnz + m * base + cb * self.row_len[i] + (sv - base)
    }

    // ----- matrix kernels ---------------------------------------------------

    fn gather_coeff(&self, coeff: &Coeff, cell: usize, out: &mut [f64; 8]) {
        match coeff {
            Coeff::Const(c) => out[..self.npc].fill(*c),
            Coeff::Nodal(f) => {
                for a in 0..self.npc {
                    out[a] = f.data[self.cell_nodes_tab[cell * self.npc + a] as usize];
                }
            }
        }
    }

    /// Assemble `(c v, w)` into `op` (scalar pattern or vector block
    /// pattern from [`Assembler::block_op`], matching `dofmap.arity`).
    pub fn mass_into(
        &self,
        dofmap: &DofMap,
        coeff: Coeff,
        op: &mut SparseOperator,
    ) -> Result<()> {
        self.check_dofmap(dofmap)?;
        coeff.check(self.num_nodes())?;
        let m = dofmap.arity;
        let expected = if m == 1 { self.snnz } else { m * m * self.snnz };
        if op.nnz() != expected || op.nrows != m * self.num_nodes() {
            return Err(Error::Shape("mass operator pattern mismatch".to_string()));
        }
        op.vals.iter_mut().for_each(|v| *v = 0.0);
        op.symmetric = true;

        let npc = self.npc;
        let mut cval = [0.0; 8];
        let mut elem = [0.0; 64];
        for cell in 0..self.mesh.num_cells() {
            self.gather_coeff(&coeff, cell, &mut cval);
            elem[..npc * npc].fill(0.0);
            for q in 0..self.nq {
                let sh = &self.shapes[q];
                let mut cq = 0.0;
                for a in 0..npc {
                    cq += sh[a] * cval[a];
                }
                let w = self.wdet * cq;
                for a in 0..npc {
                    let wa = w * sh[a];
                    for b in 0..npc {
                        elem[a * npc + b] += wa * sh[b];
                    }
                }
            }
            if m == 1 {
                for a in 0..npc {
                    for b in 0..npc {
                        op.vals[self.svidx(cell, a, b)] += elem[a * npc + b];
                    }
                }
            } else {
                for a in 0..npc {
                    for b in 0..npc {
                        let v = elem[a * npc + b];
                        for c in 0..m {
                            op.vals[self.bvidx(m, cell, a, b, c, c)] += v;
                        }
                    }
                }
            }
        }
        if dofmap.constraint == Constraint::ZeroMean && op.zero_mean_weights.is_none() {
            op.zero_mean_weights = Some(self.lumped.clone());
        }
        Ok(())
    }

    pub fn mass(&self, dofmap: &DofMap, coeff: Coeff) -> Result<SparseOperator> {
        let mut op = if dofmap.arity == 1 {
            self.scalar_op(dofmap.constraint)
        } else {
            self.block_op(dofmap.arity, dofmap.constraint)
        };
        self.mass_into(dofmap, coeff, &mut op)?;
        Ok(op)
    }

    /// Assemble `(c grad v, grad w)` on the scalar space; `c` must be
    /// positive at every node of every cell (hence at every quadrature
    /// point).
    pub fn stiffness_into(
        &self,
        dofmap: &DofMap,
        coeff: Coeff,
        op: &mut SparseOperator,
    ) -> Result<()> {
        self.check_dofmap(dofmap)?;
        coeff.check(self.num_nodes())?;
        if dofmap.arity != 1 {
            return Err(Error::Shape("stiffness kernel is scalar".to_string()));
        }
        if op.nnz() != self.snnz {
            return Err(Error::Shape("stiffness operator pattern mismatch".to_string()));
        }
        op.vals.iter_mut().for_each(|v| *v = 0.0);
        op.symmetric = true;

        let dim = self.mesh.dim;
        let npc = self.npc;
        let mut cval = [0.0; 8];
        let mut elem = [0.0; 64];
        for cell in 0..self.mesh.num_cells() {
            self.gather_coeff(&coeff, cell, &mut cval);
            for a in 0..npc {
                if !(cval[a] > 0.0) {
                    return Err(Error::Assembly(format!(
                        "non-positive diffusion coefficient {} in cell {cell}",
                        cval[a]
                    )));
                }
            }
            elem[..npc * npc].fill(0.0);
            for q in 0..self.nq {
                let sh = &self.shapes[q];
                let gr = &self.grads[q];
                let mut cq = 0.0;
                for a in 0..npc {
                    cq += sh[a] * cval[a];
                }
                if !(cq > 0.0) {
                    return Err(Error::Assembly(format!(
                        "non-positive diffusion coefficient {cq} at quadrature point of cell {cell}"
                    )));
                }
                let w = self.wdet * cq;
                for a in 0..npc {
                    for b in 0..npc {
                        let mut dot = 0.0;
                        for ax in 0..dim {
                            dot += gr[a][ax] * gr[b][ax];
                        }
                        elem[a * npc + b] += w * dot;
                    }
                }
            }
            for a in 0..npc {
                for b in 0..npc {
                    op.vals[self.svidx(cell, a, b)] += elem[a * npc + b];
                }
            }
        }
        if dofmap.constraint == Constraint::ZeroMean && op.zero_mean_weights.is_none() {
            op.zero_mean_weights = Some(self.lumped.clone());
        }
        Ok(())
    }

    pub fn stiffness(&self, dofmap: &DofMap, coeff: Coeff) -> Result<SparseOperator> {
        let mut op = self.scalar_op(dofmap.constraint);
        self.stiffness_into(dofmap, coeff, &mut op)?;
        Ok(op)
    }

    /// Assemble `(2 c D(v), D(w))` (full component coupling) into a block
    /// operator.
    pub fn viscous_stress_into(
        &self,
        dofmap: &DofMap,
        coeff: Coeff,
        op: &mut SparseOperator,
    ) -> Result<()> {
        self.check_dofmap(dofmap)?;
        coeff.check(self.num_nodes())?;
        let m = dofmap.arity;
        if m != self.mesh.dim {
            return Err(Error::Shape("viscous kernel needs the vector space".to_string()));
        }
        if op.nnz() != m * m * self.snnz {
            return Err(Error::Shape("viscous operator pattern mismatch".to_string()));
        }
        op.vals.iter_mut().for_each(|v| *v = 0.0);
        op.symmetric = true;
        self.add_viscous(dofmap, coeff, 1.0, op)
    }

    fn add_viscous(
        &self,
        _dofmap: &DofMap,
        coeff: Coeff,
        scale: f64,
        op: &mut SparseOperator,
    ) -> Result<()> {
        let dim = self.mesh.dim;
        let m = dim;
        let npc = self.npc;
        let mut cval = [0.0; 8];
        // elem[(a*npc+b) * m*m + ca*m + cb]
        let mut elem = vec![0.0; npc * npc * m * m];
        for cell in 0..self.mesh.num_cells() {
            self.gather_coeff(&coeff, cell, &mut cval);
            elem.iter_mut().for_each(|v| *v = 0.0);
            for q in 0..self.nq {
                let sh = &self.shapes[q];
                let gr = &self.grads[q];
                let mut cq = 0.0;
                for a in 0..npc {
                    cq += sh[a] * cval[a];
                }
                let w = self.wdet * cq * scale;
                for a in 0..npc {
                    for b in 0..npc {
                        let mut dot = 0.0;
                        for ax in 0..dim {
                            dot += gr[a][ax] * gr[b][ax];
                        }
                        let base = (a * npc + b) * m * m;
                        for ca in 0..m {
                            for cb in 0..m {
                                let mut v = gr[b][ca] * gr[a][cb];
                                if ca == cb {
                                    v += dot;
                                }
                                elem[base + ca * m + cb] += w * v;
                            }
                        }
                    }
                }
            }
            for a in 0..npc {
                for b in 0..npc {
                    let base = (a * npc + b) * m * m;
                    for ca in 0..m {
                        for cb in 0..m {
                            op.vals[self.bvidx(m, cell, a, b, ca, cb)] +=
                                elem[base + ca * m + cb];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Fused momentum matrix: `mass_coef (rho v, w) + visc_coef (2 eta D(v), D(w))`.
    pub fn momentum_matrix_into(
        &self,
        dofmap: &DofMap,
        rho: &NodalField,
        eta: &NodalField,
        mass_coef: f64,
        visc_coef: f64,
        op: &mut SparseOperator,
    ) -> Result<()> {
        self.check_dofmap(dofmap)?;
        rho.check_shape(1, self.num_nodes())?;
        eta.check_shape(1, self.num_nodes())?;
        let m = dofmap.arity;
        if m != self.mesh.dim || op.nnz() != m * m * self.snnz {
            return Err(Error::Shape("momentum operator pattern mismatch".to_string()));
        }
        op.vals.iter_mut().for_each(|v| *v = 0.0);
        op.symmetric = true;

        let dim = self.mesh.dim;
        let npc = self.npc;
        let mut rval = [0.0; 8];
        let mut eval = [0.0; 8];
        let mut elem = vec![0.0; npc * npc * m * m];
        for cell in 0..self.mesh.num_cells() {
            self.gather_coeff(&Coeff::Nodal(rho), cell, &mut rval);
            self.gather_coeff(&Coeff::Nodal(eta), cell, &mut eval);
            elem.iter_mut().for_each(|v| *v = 0.0);
            for q in 0..self.nq {
                let sh = &self.shapes[q];
                let gr = &self.grads[q];
                let mut rq = 0.0;
                let mut eq = 0.0;
                for a in 0..npc {
                    rq += sh[a] * rval[a];
                    eq += sh[a] * eval[a];
                }
                let wm = self.wdet * mass_coef * rq;
                let wv = self.wdet * visc_coef * eq;
                for a in 0..npc {
                    for b in 0..npc {
                        let mut dot = 0.0;
                        for ax in 0..dim {
                            dot += gr[a][ax] * gr[b][ax];
                        }
                        let mab = wm * sh[a] * sh[b];
                        let base = (a * npc + b) * m * m;
                        for ca in 0..m {
                            for cb in 0..m {
                                let mut v = wv * gr[b][ca] * gr[a][cb];
                                if ca == cb {
                                    v += wv * dot + mab;
                                }
                                elem[base + ca * m + cb] += v;
                            }
                        }
                    }
                }
            }
            for a in 0..npc {
                for b in 0..npc {
                    let base = (a * npc + b) * m * m;
                    for ca in 0..m {
                        for cb in 0..m {
                            op.vals[self.bvidx(m, cell, a, b, ca, cb)] +=
                                elem[base + ca * m + cb];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Assemble the frozen-advection convection form
    /// `((rho u - flux) . grad v, w)` component-wise into a block-diagonal
    /// operator on the vector space.
    pub fn convection_into(
        &self,
        dofmap: &DofMap,
        rho: &NodalField,
        velocity: &NodalField,
        flux: &NodalField,
        op: &mut SparseOperator,
    ) -> Result<()> {
        self.check_dofmap(dofmap)?;
        let n = self.num_nodes();
        rho.check_shape(1, n)?;
        let m = dofmap.arity;
        if m != self.mesh.dim {
            return Err(Error::Shape("convection kernel needs the vector space".to_string()));
        }
        velocity.check_shape(m, n)?;
        flux.check_shape(m, n)?;
        if op.nnz() != m * self.snnz {
            return Err(Error::Shape("convection operator pattern mismatch".to_string()));
        }
        op.vals.iter_mut().for_each(|v| *v = 0.0);
        op.symmetric = false;

        let npc = self.npc;
        let mut rval = [0.0; 8];
        let mut uval = [[0.0; 8]; 3];
        let mut fval = [[0.0; 8]; 3];
        let mut elem = [0.0; 64];
        for cell in 0..self.mesh.num_cells() {
            self.gather_coeff(&Coeff::Nodal(rho), cell, &mut rval);
            for c in 0..m {
                for a in 0..npc {
                    let node = self.cell_nodes_tab[cell * npc + a] as usize;
                    uval[c][a] = velocity.data[c * n + node];
                    fval[c][a] = flux.data[c * n + node];
                }
            }
            elem[..npc * npc].fill(0.0);
            for q in 0..self.nq {
                let sh = &self.shapes[q];
                let gr = &self.grads[q];
                let mut rq = 0.0;
                for a in 0..npc {
                    rq += sh[a] * rval[a];
                }
                let mut adv = [0.0; 3];
                for c in 0..m {
                    let mut uq = 0.0;
                    let mut fq = 0.0;
                    for a in 0..npc {
                        uq += sh[a] * uval[c][a];
                        fq += sh[a] * fval[c][a];
                    }
                    adv[c] = rq * uq - fq;
                }
                for b in 0..npc {
                    let mut conv = 0.0;
                    for c in 0..m {
                        conv += adv[c] * gr[b][c];
                    }
                    let wc = self.wdet * conv;
                    for a in 0..npc {
                        elem[a * npc + b] += wc * sh[a];
                    }
                }
            }
            for a in 0..npc {
                for b in 0..npc {
                    let sv = self.svidx(cell, a, b);
                    let v = elem[a * npc + b];
                    for c in 0..m {
                        op.vals[c * self.snnz + sv] += v;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn convection(
        &self,
        dofmap: &DofMap,
        rho: &NodalField,
        velocity: &NodalField,
        flux: &NodalField,
    ) -> Result<SparseOperator> {
        let mut op = self.block_diag_op(dofmap.arity, dofmap.constraint);
        self.convection_into(dofmap, rho, velocity, flux, &mut op)?;
        Ok(op)
    }

    /// `(div v, w)`: rows scalar test functions, columns vector DOFs.
    pub fn divergence(&self) -> SparseOperator {
        let mut op = self.div_op_pattern();
        let m = self.mesh.dim;
        let npc = self.npc;
        for cell in 0..self.mesh.num_cells() {
            for q in 0..self.nq {
                let sh = &self.shapes[q];
                let gr = &self.grads[q];
                for a in 0..npc {
                    let i = self.cell_nodes_tab[cell * npc + a] as usize;
                    let base_i = self.srow_ptr[i];
                    let li = self.row_len[i];
                    let w = self.wdet * sh[a];
                    for b in 0..npc {
                        let sv = self.svidx(cell, a, b);
                        for c in 0..m {
                            op.vals[m * base_i + c * li + (sv - base_i)] += w * gr[b][c];
                        }
                    }
                }
            }
        }
        op
    }

    /// `(q, div w)`: rows vector test functions, columns scalar DOFs.
    pub fn gradient(&self) -> SparseOperator {
        let mut op = self.grad_op_pattern();
        let m = self.mesh.dim;
        let npc = self.npc;
        for cell in 0..self.mesh.num_cells() {
            for q in 0..self.nq {
                let sh = &self.shapes[q];
                let gr = &self.grads[q];
                for a in 0..npc {
                    for b in 0..npc {
                        let sv = self.svidx(cell, a, b);
                        let w = self.wdet * sh[b];
                        for c in 0..m {
                            op.vals[c * self.snnz + sv] += w * gr[a][c];
                        }
                    }
                }
            }
        }
        op
    }

    /// Compose a 2-field block operator from scalar-pattern pieces:
    /// `out[(r, i), (c, j)] = sum_k coef_k * ops_k[i, j]` for each block
    /// (r, c) in `blocks`. Used for the coupled transport system.
    pub fn block2_from_scalar(
        &self,
        blocks: [[&[(f64, &SparseOperator)]; 2]; 2],
    ) -> Result<SparseOperator> {
        let n = self.num_nodes();
        let mut out = self.block_op(2, Constraint::None);
        for (r, row_blocks) in blocks.iter().enumerate() {
            for (c, terms) in row_blocks.iter().enumerate() {
                for (coef, src) in terms.iter() {
                    if src.row_ptr != self.srow_ptr || src.cols != self.scols {
                        return Err(Error::Shape(
                            "block composition needs scalar-pattern operators".to_string(),
                        ));
                    }
                    for i in 0..n {
                        let base = self.srow_ptr[i];
                        let li = self.row_len[i];
                        for k in base..self.srow_ptr[i + 1] {
                            out.vals[r * 2 * self.snnz + 2 * base + c * li + (k - base)] +=
                                coef * src.vals[k];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn check_dofmap(&self, dofmap: &DofMap) -> Result<()> {
        if dofmap.num_nodes != self.num_nodes() {
            return Err(Error::Shape(format!(
                "dof map covers {} nodes, mesh has {}",
                dofmap.num_nodes,
                self.num_nodes()
            )));
        }
        Ok(())
    }
}

/// One-off assembly of `(c v, w)`; see [`Assembler::mass_into`].
pub fn assemble_mass(
    mesh: &StructuredMesh,
    dofmap: &DofMap,
    coeff: Coeff,
) -> Result<SparseOperator> {
    Assembler::new(mesh).mass(dofmap, coeff)
}

/// One-off assembly of `(c grad v, grad w)`; see [`Assembler::stiffness_into`].
pub fn assemble_stiffness(
    mesh: &StructuredMesh,
    dofmap: &DofMap,
    coeff: Coeff,
) -> Result<SparseOperator> {
    Assembler::new(mesh).stiffness(dofmap, coeff)
}

/// One-off assembly of the frozen-advection convection operator; see
/// [`Assembler::convection_into`].
pub fn assemble_convection(
    mesh: &StructuredMesh,
    dofmap: &DofMap,
    rho: &NodalField,
    velocity: &NodalField,
    flux: &NodalField,
) -> Result<SparseOperator> {
    Assembler::new(mesh).convection(dofmap, rho, velocity, flux)
}
