//! Cartesian meshes of the unit interval / unit square.
//!
//! Nodes and elements are numbered lexicographically with the first axis
//! running fastest. In 1D the second multi-index component is always zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform mesh of `[0,1]^dim` with `cells` elements per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CartesianMesh {
    dim: usize,
    cells: usize,
}

/// Vertex indices of one element, lexicographically ordered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ElementNodes {
    nodes: [usize; 4],
    len: usize,
}

impl ElementNodes {
    pub fn as_slice(&self) -> &[usize] {
        &self.nodes[..self.len]
    }
}

impl std::ops::Deref for ElementNodes {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        self.as_slice()
    }
}

/// Position of a node inside the interior or boundary sublist.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeSlot {
    Interior(usize),
    Boundary(usize),
}

/// Partition of the node set into interior and boundary nodes, both in
/// lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeClasses {
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    slots: Vec<NodeSlot>,
}

impl NodeClasses {
    pub fn slot(&self, node: usize) -> NodeSlot {
        self.slots[node]
    }

    pub fn interior_position(&self, node: usize) -> Option<usize> {
        match self.slots[node] {
            NodeSlot::Interior(k) => Some(k),
            NodeSlot::Boundary(_) => None,
        }
    }

    pub fn boundary_position(&self, node: usize) -> Option<usize> {
        match self.slots[node] {
            NodeSlot::Boundary(k) => Some(k),
            NodeSlot::Interior(_) => None,
        }
    }
}

/// Axis-aligned block of elements, inclusive bounds per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementBox {
    pub lo: [usize; 2],
    pub hi: [usize; 2],
}

impl ElementBox {
    pub fn contains(&self, multi: [usize; 2]) -> bool {
        (0..2).all(|a| self.lo[a] <= multi[a] && multi[a] <= self.hi[a])
    }

    pub fn element_count(&self) -> usize {
        (self.hi[0] - self.lo[0] + 1) * (self.hi[1] - self.lo[1] + 1)
    }

    /// Elements of the box in lexicographic order.
    pub fn elements(&self, mesh: &CartesianMesh) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.element_count());
        for j in self.lo[1]..=self.hi[1] {
            for i in self.lo[0]..=self.hi[0] {
                out.push(mesh.element_index([i, j]));
            }
        }
        out
    }

    /// Grow by `layers` elements in every direction, clipped to the mesh.
    pub fn grow(&self, mesh: &CartesianMesh, layers: usize) -> ElementBox {
        let mut out = *self;
        for a in 0..mesh.dim {
            out.lo[a] = self.lo[a].saturating_sub(layers);
            out.hi[a] = (self.hi[a] + layers).min(mesh.cells - 1);
        }
        out
    }

    pub fn overlaps(&self, other: &ElementBox) -> bool {
        (0..2).all(|a| self.lo[a] <= other.hi[a] && other.lo[a] <= self.hi[a])
    }
}

/// Region from which a neighborhood is grown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Seed {
    Nodes(Vec<usize>),
    Elements(Vec<usize>),
}

impl CartesianMesh {
    pub fn new(dim: usize, cells_per_axis: usize) -> Result<Self> {
        if dim == 3 {
            return Err(Error::InvalidMesh("three-dimensional meshes are not supported".into()));
        }
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidMesh(format!("dimension {dim} is not 1 or 2")));
        }
        if cells_per_axis < 2 || !cells_per_axis.is_power_of_two() {
            return Err(Error::InvalidMesh(format!(
                "cells per axis must be a power of two >= 2, got {cells_per_axis}"
            )));
        }
        Ok(Self { dim, cells: cells_per_axis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.cells + 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis().pow(self.dim as u32)
    }

    pub fn element_count(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn vertices_per_element(&self) -> usize {
        1 << self.dim
    }

    /// Element side length.
    pub fn side(&self) -> f64 {
        1.0 / self.cells as f64
    }

    /// Element diameter `H`.
    pub fn mesh_size(&self) -> f64 {
        self.side() * (self.dim as f64).sqrt()
    }

    pub fn node_index(&self, multi: [usize; 2]) -> usize {
        multi[0] + multi[1] * self.nodes_per_axis()
    }

    pub fn node_multi(&self, node: usize) -> [usize; 2] {
        let n = self.nodes_per_axis();
        [node % n, node / n]
    }

    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let [i, j] = self.node_multi(node);
        [i as f64 * self.side(), j as f64 * self.side()]
    }

    pub fn element_index(&self, multi: [usize; 2]) -> usize {
        multi[0] + multi[1] * self.cells
    }

    pub fn element_multi(&self, element: usize) -> [usize; 2] {
        [element % self.cells, element / self.cells]
    }

    pub fn element_nodes(&self, element: usize) -> ElementNodes {
        let [i, j] = self.element_multi(element);
        let n0 = self.node_index([i, j]);
        if self.dim == 1 {
            ElementNodes { nodes: [n0, n0 + 1, 0, 0], len: 2 }
        } else {
            let n2 = n0 + self.nodes_per_axis();
            ElementNodes { nodes: [n0, n0 + 1, n2, n2 + 1], len: 4 }
        }
    }

    /// Lower-left corner of an element.
    pub fn element_origin(&self, element: usize) -> [f64; 2] {
        let [i, j] = self.element_multi(element);
        [i as f64 * self.side(), j as f64 * self.side()]
    }

    pub fn element_center(&self, element: usize) -> [f64; 2] {
        let [x, y] = self.element_origin(element);
        let h = 0.5 * self.side();
        if self.dim == 1 {
            [x + h, 0.0]
        } else {
            [x + h, y + h]
        }
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let multi = self.node_multi(node);
        (0..self.dim).any(|a| multi[a] == 0 || multi[a] == self.cells)
    }

    pub fn classify_nodes(&self) -> NodeClasses {
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        let slots = (0..self.node_count())
            .map(|node| {
                if self.is_boundary_node(node) {
                    boundary.push(node);
                    NodeSlot::Boundary(boundary.len() - 1)
                } else {
                    interior.push(node);
                    NodeSlot::Interior(interior.len() - 1)
                }
            })
            .collect();
        NodeClasses { interior, boundary, slots }
    }

    /// Elements adjacent to a node.
    pub fn node_elements(&self, node: usize) -> Vec<usize> {
        let multi = self.node_multi(node);
        let mut lo = [0usize; 2];
        let mut hi = [0usize; 2];
        for a in 0..self.dim {
            lo[a] = multi[a].saturating_sub(1);
            hi[a] = multi[a].min(self.cells - 1);
        }
        ElementBox { lo, hi }.elements(self)
    }

    pub fn element_box(&self, element: usize) -> ElementBox {
        let m = self.element_multi(element);
        ElementBox { lo: m, hi: m }
    }

    /// `N^ell(T)`: the element plus `ell` layers of surrounding elements.
    pub fn element_patch(&self, element: usize, ell: usize) -> ElementBox {
        self.element_box(element).grow(self, ell)
    }

    /// Element neighborhood `N^ell(seed)`.
    ///
    /// `N^0` of a node set is every element whose closure contains one of the
    /// nodes; `N^0` of an element set is the set itself. Each further layer adds
    /// all elements sharing a vertex with the current set.
    pub fn neighborhood(&self, seed: &Seed, ell: usize) -> Vec<usize> {
        let mut inside = vec![false; self.element_count()];
        match seed {
            Seed::Nodes(nodes) => {
                for &z in nodes {
                    for e in self.node_elements(z) {
                        inside[e] = true;
                    }
                }
            }
            Seed::Elements(elements) => {
                for &e in elements {
                    inside[e] = true;
                }
            }
        }
        for _ in 0..ell {
            let mut touched = vec![false; self.node_count()];
            for (e, &flag) in inside.iter().enumerate() {
                if flag {
                    for &z in self.element_nodes(e).iter() {
                        touched[z] = true;
                    }
                }
            }
            for (e, flag) in inside.iter_mut().enumerate() {
                if !*flag {
                    *flag = self.element_nodes(e).iter().any(|&z| touched[z]);
                }
            }
        }
        inside
            .iter()
            .enumerate()
            .filter_map(|(e, &f)| f.then_some(e))
            .collect()
    }
}

/// Coarse/fine correspondence of two nested meshes.
#[derive(Clone, Debug, PartialEq)]
pub struct NestingMap {
    pub coarse: CartesianMesh,
    pub fine: CartesianMesh,
    ratio: usize,
    coarse_to_fine: Vec<usize>,
    fine_parent: Vec<usize>,
}

impl NestingMap {
    pub fn new(coarse: CartesianMesh, fine: CartesianMesh) -> Result<Self> {
        if coarse.dim != fine.dim {
            return Err(Error::NonNested(format!(
                "dimensions differ ({} vs {})",
                coarse.dim, fine.dim
            )));
        }
        if fine.cells < coarse.cells || !fine.cells.is_multiple_of(coarse.cells) {
            return Err(Error::NonNested(format!(
                "{} fine cells are not a refinement of {} coarse cells",
                fine.cells, coarse.cells
            )));
        }
        let ratio = fine.cells / coarse.cells;
        let coarse_to_fine = (0..coarse.node_count())
            .map(|i| {
                let [a, b] = coarse.node_multi(i);
                fine.node_index([a * ratio, b * ratio])
            })
            .collect();
        let fine_parent = (0..fine.element_count())
            .map(|e| {
                let [a, b] = fine.element_multi(e);
                coarse.element_index([a / ratio, b / ratio])
            })
            .collect();
        Ok(Self { coarse, fine, ratio, coarse_to_fine, fine_parent })
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn fine_node_of(&self, coarse_node: usize) -> usize {
        self.coarse_to_fine[coarse_node]
    }

    pub fn coarse_to_fine(&self) -> &[usize] {
        &self.coarse_to_fine
    }

    pub fn parent_of(&self, fine_element: usize) -> usize {
        self.fine_parent[fine_element]
    }

    /// Fine elements inside a block of coarse elements, lexicographic.
    pub fn fine_elements_in(&self, coarse_box: &ElementBox) -> Vec<usize> {
        self.fine_box(coarse_box).elements(&self.fine)
    }

    pub fn fine_box(&self, coarse_box: &ElementBox) -> ElementBox {
        let r = self.ratio;
        let mut lo = [0; 2];
        let mut hi = [0; 2];
        for a in 0..self.coarse.dim {
            lo[a] = coarse_box.lo[a] * r;
            hi[a] = coarse_box.hi[a] * r + r - 1;
        }
        ElementBox { lo, hi }
    }

    /// Fine nodes strictly inside the closed region covered by `coarse_box`,
    /// lexicographic.
    pub fn fine_interior_nodes(&self, coarse_box: &ElementBox) -> Vec<usize> {
        let fb = self.fine_box(coarse_box);
        let range = |a: usize| {
            if a < self.coarse.dim {
                (fb.lo[a] + 1)..(fb.hi[a] + 1)
            } else {
                0..1
            }
        };
        let mut out = Vec::new();
        for j in range(1) {
            for i in range(0) {
                out.push(self.fine.node_index([i, j]));
            }
        }
        out
    }
}
