//! Q1 finite elements: multilinear shape functions, tensor Gauss
//! quadrature, and nodal field storage.
//!
//! All integrals use the 2-point Gauss rule per axis, which integrates
//! products of two Q1 functions exactly on axis-aligned cells (degree 3
//! per axis). Nonlinear integrands (the cubic double-well term, property
//! fields times velocities) are evaluated at the same points from the Q1
//! interpolants; the resulting quadrature error is part of the scheme.

pub mod assemble;
pub mod sparse;

pub use assemble::{
    assemble_convection, assemble_mass, assemble_stiffness, Assembler, Coeff, QuadData,
};
pub use sparse::{apply_dirichlet, SparseOperator};

use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;

/// Gauss points and weights on the reference cell [-1, 1]^dim.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// The 2-point tensor Gauss rule (4 points in 2D, 8 in 3D), exact for
/// polynomials of degree <= 3 per axis.
pub fn gauss_2pt(dim: usize) -> Quadrature {
    let g = 1.0 / 3.0f64.sqrt();
    let n = 1usize << dim;
    let mut points = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for idx in 0..n {
        let mut p = [0.0; 3];
        for ax in 0..dim {
            p[ax] = if (idx >> ax) & 1 == 1 { g } else { -g };
        }
        points.push(p);
        weights.push(1.0);
    }
    Quadrature { points, weights }
}

/// Values and reference-coordinate gradients of the 2^dim multilinear
/// shape functions at a point of [-1, 1]^dim.
///
/// Shape `a` (bit pattern over axes) is the product of 1D factors
/// `(1 + s * xi) / 2` with `s = +1` when bit `ax` of `a` is set, `-1`
/// otherwise; it equals 1 at corner `a` and 0 at the others, matching the
/// corner ordering of [`StructuredMesh::cell_nodes`].
pub fn shape_eval(dim: usize, xi: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let n = 1usize << dim;
    let mut values = vec![0.0; n];
    let mut grads = vec![[0.0; 3]; n];
    for a in 0..n {
        let mut factors = [1.0; 3];
        let mut dfactors = [0.0; 3];
        for ax in 0..dim {
            let s = if (a >> ax) & 1 == 1 { 1.0 } else { -1.0 };
            factors[ax] = 0.5 * (1.0 + s * xi[ax]);
            dfactors[ax] = 0.5 * s;
        }
        let mut v = 1.0;
        for ax in 0..dim {
            v *= factors[ax];
        }
        values[a] = v;
        for ax in 0..dim {
            let mut d = dfactors[ax];
            for other in 0..dim {
                if other != ax {
                    d *= factors[other];
                }
            }
            grads[a][ax] = d;
        }
    }
    (values, grads)
}

/// Nodal coefficient vector of a scalar or vector Q1 field.
///
/// Vector fields are component-major: component `c` of node `i` lives at
/// `data[c * num_nodes + i]`, mirroring the DOF layout of
/// [`crate::mesh::DofMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    pub arity: usize,
    pub num_nodes: usize,
    pub data: Vec<f64>,
}

impl NodalField {
    pub fn zeros(arity: usize, num_nodes: usize) -> NodalField {
        NodalField { arity, num_nodes, data: vec![0.0; arity * num_nodes] }
    }

    pub fn constant(arity: usize, num_nodes: usize, value: f64) -> NodalField {
        NodalField { arity, num_nodes, data: vec![value; arity * num_nodes] }
    }

    /// Scalar field sampled from a coordinate function.
    pub fn scalar_from_fn(mesh: &StructuredMesh, mut f: impl FnMut([f64; 3]) -> f64) -> NodalField {
        let n = mesh.num_nodes();
        let mut data = Vec::with_capacity(n);
        for node in 0..n {
            data.push(f(mesh.node_coord(node)));
        }
        NodalField { arity: 1, num_nodes: n, data }
    }

    /// Vector field (arity = mesh dimension) sampled from a coordinate
    /// function returning one value per component.
    pub fn vector_from_fn(
        mesh: &StructuredMesh,
        mut f: impl FnMut([f64; 3]) -> [f64; 3],
    ) -> NodalField {
        let n = mesh.num_nodes();
        let dim = mesh.dim;
        let mut field = NodalField::zeros(dim, n);
        for node in 0..n {
            let v = f(mesh.node_coord(node));
            for c in 0..dim {
                field.data[c * n + node] = v[c];
            }
        }
        field
    }

    pub fn get(&self, comp: usize, node: usize) -> f64 {
        self.data[comp * self.num_nodes + node]
    }

    pub fn set(&mut self, comp: usize, node: usize, value: f64) {
        self.data[comp * self.num_nodes + node] = value;
    }

    /// One component as a contiguous slice.
    pub fn comp(&self, c: usize) -> &[f64] {
        &self.data[c * self.num_nodes..(c + 1) * self.num_nodes]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.num_nodes..(c + 1) * self.num_nodes]
    }

    pub fn check_shape(&self, arity: usize, num_nodes: usize) -> Result<()> {
        if self.arity != arity || self.num_nodes != num_nodes {
            return Err(Error::Shape(format!(
                "field has arity {} on {} nodes, expected arity {} on {} nodes",
                self.arity, self.num_nodes, arity, num_nodes
            )));
        }
        if self.data.len() != self.arity * self.num_nodes {
            return Err(Error::Shape(format!(
                "field data length {} != arity {} x nodes {}",
                self.data.len(),
                self.arity,
                self.num_nodes
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadrature_weights_sum_to_reference_volume() {
        for dim in [2, 3] {
            let q = gauss_2pt(dim);
            assert_eq!(q.points.len(), 1 << dim);
            let total: f64 = q.weights.iter().sum();
            assert_relative_eq!(total, (1usize << dim) as f64, max_relative = 1e-15);
        }
    }

    #[test]
    fn quadrature_is_exact_for_cubics_per_axis() {
        // p(x, y) = (x^3 + 2x^2 - x + 1)(y^3 - y + 2) integrates over
        // [-1,1]^2 to (4/3 + 4) * ... : compute the two 1D factors exactly.
        // Odd powers drop; int x^2 = 2/3, int 1 = 2.
        let f1 = |x: f64| x.powi(3) + 2.0 * x * x - x + 1.0;
        let f2 = |y: f64| y.powi(3) - y + 2.0;
        let exact1 = 2.0 * (2.0 / 3.0) + 2.0; // 2*(2/3) from 2x^2, 2 from 1
        let exact2 = 4.0; // 2 * 2
        let q = gauss_2pt(2);
        let mut total = 0.0;
        for (p, w) in q.points.iter().zip(&q.weights) {
            total += w * f1(p[0]) * f2(p[1]);
        }
        assert_relative_eq!(total, exact1 * exact2, max_relative = 1e-14);
    }

    #[test]
    fn shapes_partition_unity_and_interpolate_corners() {
        for dim in [2usize, 3] {
            let n = 1usize << dim;
            // Partition of unity at an arbitrary interior point.
            let (vals, grads) = shape_eval(dim, [0.3, -0.7, 0.2]);
            assert_relative_eq!(vals.iter().sum::<f64>(), 1.0, max_relative = 1e-15);
            for ax in 0..dim {
                let dsum: f64 = grads.iter().map(|g| g[ax]).sum();
                assert!(dsum.abs() < 1e-15, "gradient of the constant must vanish");
            }
            // Center point: all equal.
            let (cv, _) = shape_eval(dim, [0.0; 3]);
            for v in &cv {
                assert_relative_eq!(*v, 1.0 / n as f64, max_relative = 1e-15);
            }
            // Kronecker property at corners.
            for corner in 0..n {
                let mut xi = [0.0; 3];
                for ax in 0..dim {
                    xi[ax] = if (corner >> ax) & 1 == 1 { 1.0 } else { -1.0 };
                }
                let (v, _) = shape_eval(dim, xi);
                for (a, &va) in v.iter().enumerate() {
                    let expect = if a == corner { 1.0 } else { 0.0 };
                    assert_relative_eq!(va, expect, max_relative = 1e-15, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn nodal_field_layout_is_component_major() {
        let mesh = crate::mesh::build_mesh(2, [0.0; 3], [1.0, 1.0, 0.0], [2, 2, 0]).unwrap();
        let f = NodalField::vector_from_fn(&mesh, |x| [x[0], 10.0 * x[1], 0.0]);
        assert_eq!(f.data.len(), 2 * 9);
        assert_relative_eq!(f.get(0, 1), 0.5);
        assert_relative_eq!(f.get(1, 3), 5.0);
        assert_eq!(f.comp(1).len(), 9);
        assert!(f.check_shape(2, 9).is_ok());
        assert!(f.check_shape(1, 9).is_err());
    }
}
