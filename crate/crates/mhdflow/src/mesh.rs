//! Uniform tensor-product grids on axis-aligned boxes.
//!
//! Nodes and cells are ordered lexicographically with the x index running
//! fastest, so node (i, j, k) on an nx-by-ny-by-nz cell grid has index
//! `i + (nx+1) * (j + (ny+1) * k)`. Every query is pure arithmetic on that
//! ordering, which keeps the whole pipeline bit-reproducible. 2D meshes are
//! quadrilateral grids (the third axis is unused); 3D meshes are hexahedral.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMesh {
    /// Spatial dimension, 2 or 3.
    pub dim: usize,
    /// Lower box corner; entries at index >= dim are 0.
    pub box_min: [f64; 3],
    /// Upper box corner; entries at index >= dim are 0.
    pub box_max: [f64; 3],
    /// Cells per axis; entries at index >= dim are 0 and unused.
    pub cells: [usize; 3],
    /// Grid spacing per axis.
    pub h: [f64; 3],
}

/// Build a mesh over `[box_min, box_max]` with the given cell counts.
///
/// Requires 2 <= dim <= 3, at least 2 cells per axis, and a nondegenerate
/// box.
pub fn build_mesh(dim: usize, box_min: [f64; 3], box_max: [f64; 3], cells: [usize; 3]) -> Result<StructuredMesh> {
    if dim != 2 && dim != 3 {
        return Err(Error::Mesh(format!("dimension must be 2 or 3, got {dim}")));
    }
    let mut h = [0.0; 3];
    let mut bmin = [0.0; 3];
    let mut bmax = [0.0; 3];
    let mut c = [0usize; 3];
    for ax in 0..dim {
        let len = box_max[ax] - box_min[ax];
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::Mesh(format!(
                "degenerate box on axis {ax}: [{}, {}]",
                box_min[ax], box_max[ax]
            )));
        }
        if cells[ax] < 2 {
            return Err(Error::Mesh(format!(
                "need at least 2 cells per axis, got {} on axis {ax}",
                cells[ax]
            )));
        }
        bmin[ax] = box_min[ax];
        bmax[ax] = box_max[ax];
        c[ax] = cells[ax];
        h[ax] = len / cells[ax] as f64;
    }
    Ok(StructuredMesh { dim, box_min: bmin, box_max: bmax, cells: c, h })
}

impl StructuredMesh {
    pub fn nodes_per_axis(&self, ax: usize) -> usize {
        self.cells[ax] + 1
    }

    pub fn num_nodes(&self) -> usize {
        (0..self.dim).map(|ax| self.nodes_per_axis(ax)).product()
    }

    pub fn num_cells(&self) -> usize {
        (0..self.dim).map(|ax| self.cells[ax]).product()
    }

    /// Nodes per cell: 4 quadrilateral corners or 8 hexahedron corners.
    pub fn nodes_per_cell(&self) -> usize {
        1 << self.dim
    }

    /// Cell volume (area in 2D); uniform across the mesh.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|ax| self.h[ax]).product()
    }

    pub fn node_index(&self, mi: [usize; 3]) -> usize {
        let nx = self.nodes_per_axis(0);
        if self.dim == 2 {
            mi[0] + nx * mi[1]
        } else {
            mi[0] + nx * (mi[1] + self.nodes_per_axis(1) * mi[2])
        }
    }

    pub fn node_multi(&self, node: usize) -> [usize; 3] {
        let nx = self.nodes_per_axis(0);
        if self.dim == 2 {
            [node % nx, node / nx, 0]
        } else {
            let ny = self.nodes_per_axis(1);
            [node % nx, (node / nx) % ny, node / (nx * ny)]
        }
    }

    pub fn node_coord(&self, node: usize) -> [f64; 3] {
        let mi = self.node_multi(node);
        let mut x = [0.0; 3];
        for ax in 0..self.dim {
            x[ax] = self.box_min[ax] + mi[ax] as f64 * self.h[ax];
        }
        x
    }

    pub fn cell_index(&self, mi: [usize; 3]) -> usize {
        if self.dim == 2 {
            mi[0] + self.cells[0] * mi[1]
        } else {
            mi[0] + self.cells[0] * (mi[1] + self.cells[1] * mi[2])
        }
    }

    pub fn cell_multi(&self, cell: usize) -> [usize; 3] {
        let cx = self.cells[0];
        if self.dim == 2 {
            [cell % cx, cell / cx, 0]
        } else {
            let cy = self.cells[1];
            [cell % cx, (cell / cx) % cy, cell / (cx * cy)]
        }
    }

    /// Corner nodes of a cell in tensor order: local index
    /// `a0 + 2 a1 + 4 a2` maps to the corner offset (a0, a1, a2). This is
    /// the same ordering the multilinear shape functions use.
    pub fn cell_nodes(&self, cell: usize) -> Result<Vec<usize>> {
        if cell >= self.num_cells() {
            return Err(Error::IndexOutOfRange {
                what: "cell",
                index: cell,
                len: self.num_cells(),
            });
        }
        let mut out = [0usize; 8];
        let n = self.cell_nodes_into(cell, &mut out);
        Ok(out[..n].to_vec())
    }

    /// Allocation-free variant of [`cell_nodes`](Self::cell_nodes) for
    /// assembly loops; returns the number of corners written.
    pub fn cell_nodes_into(&self, cell: usize, out: &mut [usize; 8]) -> usize {
        let cm = self.cell_multi(cell);
        let npc = self.nodes_per_cell();
        for local in 0..npc {
            let mi = [
                cm[0] + (local & 1),
                cm[1] + ((local >> 1) & 1),
                cm[2] + ((local >> 2) & 1),
            ];
            out[local] = self.node_index(mi);
        }
        npc
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let mi = self.node_multi(node);
        (0..self.dim).any(|ax| mi[ax] == 0 || mi[ax] == self.cells[ax])
    }

    /// All boundary nodes in ascending order.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&n| self.is_boundary_node(n)).collect()
    }
}

/// Constraint attached to a discrete field's space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// Field pinned to prescribed values on every boundary node.
    DirichletBoundary,
    /// Field determined up to a constant; fixed by zero weighted mean.
    ZeroMean,
    /// Unconstrained.
    None,
}

/// Degree-of-freedom layout of a scalar or vector Q1 field.
///
/// Vector fields are stored component-major: the global index of component
/// `c` at node `i` is `c * num_nodes + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    /// 1 for scalars, `dim` for velocity-like fields.
    pub arity: usize,
    pub num_nodes: usize,
    pub constraint: Constraint,
    /// Ascending node indices on the box faces.
    pub boundary: Vec<usize>,
}

impl DofMap {
    pub fn scalar(mesh: &StructuredMesh, constraint: Constraint) -> DofMap {
        DofMap {
            arity: 1,
            num_nodes: mesh.num_nodes(),
            constraint,
            boundary: mesh.boundary_nodes(),
        }
    }

    pub fn vector(mesh: &StructuredMesh, constraint: Constraint) -> DofMap {
        DofMap {
            arity: mesh.dim,
            num_nodes: mesh.num_nodes(),
            constraint,
            boundary: mesh.boundary_nodes(),
        }
    }

    pub fn num_dofs(&self) -> usize {
        self.arity * self.num_nodes
    }

    pub fn dof(&self, comp: usize, node: usize) -> usize {
        comp * self.num_nodes + node
    }
}
