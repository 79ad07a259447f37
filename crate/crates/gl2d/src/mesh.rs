//! Nested uniform triangulations of the unit square and reference-triangle quadrature.
//!
//! Every mesh is a structured right-triangle mesh: the square is divided into n x n
//! cells and each cell is split by the diagonal running from its lower-left to its
//! upper-right corner. Nodes are ordered lexicographically by (y, x) grid index, so
//! a mesh is fully determined by `n` and refinement is exact: the nodes of a mesh
//! appear verbatim (bitwise) among the nodes of its refinement.

use crate::{Error, Result};

/// Triangulation of the unit square into `2 n^2` right triangles.
///
/// Immutable after construction; all derived geometry (Jacobian determinants,
/// physical hat-function gradients) is precomputed.
#[derive(Debug, Clone)]
pub struct Mesh2D {
    n: usize,
    level: u32,
    coords: Vec<[f64; 2]>,
    tris: Vec<[usize; 3]>,
    boundary: Vec<usize>,
    parent_map: Option<Vec<usize>>,
    dets: Vec<f64>,
    grads: Vec<[[f64; 2]; 3]>,
}

impl Mesh2D {
    /// Builds the level-0 uniform mesh with `n` cells per side.
    ///
    /// Rejects `n = 0`. Node `(i, j)` sits at `(i/n, j/n)` with index `j*(n+1) + i`;
    /// cell `(i, j)` produces the lower triangle `(a, b, c)` and the upper triangle
    /// `(a, c, d)` where `a..d` walk the cell corners counterclockwise from `(i, j)`.
    pub fn build_uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("mesh subdivisions n must be >= 1".into()));
        }
        let np = n + 1;
        let nf = n as f64;
        let mut coords = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                coords.push([i as f64 / nf, j as f64 / nf]);
            }
        }
        let mut tris = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let a = j * np + i;
                let b = a + 1;
                let c = a + np + 1;
                let d = a + np;
                tris.push([a, b, c]);
                tris.push([a, c, d]);
            }
        }
        let mut boundary = Vec::with_capacity(4 * n);
        for (idx, &[x, y]) in coords.iter().enumerate() {
            if x == 0.0 || x == 1.0 || y == 0.0 || y == 1.0 {
                boundary.push(idx);
            }
        }
        let (dets, grads) = geometry(&coords, &tris);
        Ok(Mesh2D { n, level: 0, coords, tris, boundary, parent_map: None, dets, grads })
    }

    /// Returns the mesh with `n` doubled, one refinement level up.
    ///
    /// Each triangle is the union of exactly four children; `parent_map` records,
    /// per child triangle, the index of its parent in `self`.
    pub fn refine(&self) -> Mesh2D {
        let n2 = 2 * self.n;
        let mut fine =
            Mesh2D::build_uniform(n2).expect("doubling a valid subdivision count stays valid");
        let mut parent = Vec::with_capacity(2 * n2 * n2);
        for jf in 0..n2 {
            for i_f in 0..n2 {
                for half in 0..2 {
                    let coarse_half = match (i_f % 2, jf % 2) {
                        // The child diagonal lies on the parent diagonal: halves persist.
                        (0, 0) | (1, 1) => half,
                        // South-east quarter sits entirely under the parent diagonal.
                        (1, 0) => 0,
                        // North-west quarter sits entirely above it.
                        _ => 1,
                    };
                    parent.push(2 * ((jf / 2) * self.n + i_f / 2) + coarse_half);
                }
            }
        }
        fine.level = self.level + 1;
        fine.parent_map = Some(parent);
        fine
    }

    /// Cells per side.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Refinement level (0 for meshes from [`Mesh2D::build_uniform`]).
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Mesh size `h = 1/n`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.tris.len()
    }

    /// Node coordinates in canonical (y, x)-lexicographic order.
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// Counterclockwise node-index triples.
    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.tris
    }

    /// Indices of nodes on the boundary of the square, ascending.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    /// Per-triangle parent indices on the previous level; `None` at level 0.
    pub fn parent_map(&self) -> Option<&[usize]> {
        self.parent_map.as_deref()
    }

    /// Jacobian determinants (twice the triangle area), one per triangle.
    pub fn dets(&self) -> &[f64] {
        &self.dets
    }

    /// Physical gradients of the three P1 hat functions, one `[grad; 3]` per triangle.
    pub fn grads(&self) -> &[[[f64; 2]; 3]] {
        &self.grads
    }

    /// True when `self` arises from `coarse` by `k >= 0` uniform refinements.
    pub fn is_refinement_of(&self, coarse: &Mesh2D) -> bool {
        let (mut m, n) = (self.n, coarse.n);
        while m > n {
            if m % 2 != 0 {
                return false;
            }
            m /= 2;
        }
        m == n
    }
}

fn geometry(coords: &[[f64; 2]], tris: &[[usize; 3]]) -> (Vec<f64>, Vec<[[f64; 2]; 3]>) {
    let mut dets = Vec::with_capacity(tris.len());
    let mut grads = Vec::with_capacity(tris.len());
    for t in tris {
        let p0 = coords[t[0]];
        let p1 = coords[t[1]];
        let p2 = coords[t[2]];
        let e1 = [p1[0] - p0[0], p1[1] - p0[1]];
        let e2 = [p2[0] - p0[0], p2[1] - p0[1]];
        let det = e1[0] * e2[1] - e1[1] * e2[0];
        // Physical hat gradients are the rows of the inverse Jacobian (for the
        // two non-origin vertices); the origin hat closes the partition of unity.
        let g1 = [e2[1] / det, -e2[0] / det];
        let g2 = [-e1[1] / det, e1[0] / det];
        let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
        dets.push(det);
        grads.push([g0, g1, g2]);
    }
    (dets, grads)
}

/// Quadrature rule on the reference triangle `{x, y >= 0, x + y <= 1}`.
///
/// Points are barycentric triples; weights are positive and sum to the reference
/// area 1/2, so an integral over a physical triangle is `det * sum(w_q * f(x_q))`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    degree: u32,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Returns a rule exact for bivariate polynomials up to `degree`.
    ///
    /// Supported degrees: 1 (centroid), 2 (three interior points), 5 (seven points).
    pub fn for_degree(degree: u32) -> Result<Self> {
        let (points, weights): (Vec<[f64; 3]>, Vec<f64>) = match degree {
            1 => {
                let c = 1.0 / 3.0;
                (vec![[c, c, c]], vec![0.5])
            }
            2 => {
                let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
                (vec![[a, b, b], [b, a, b], [b, b, a]], vec![1.0 / 6.0; 3])
            }
            5 => {
                let c = 1.0 / 3.0;
                let s15 = 15.0_f64.sqrt();
                let a1 = (6.0 - s15) / 21.0;
                let a2 = (6.0 + s15) / 21.0;
                let w1 = (155.0 - s15) / 2400.0;
                let w2 = (155.0 + s15) / 2400.0;
                let mut points = vec![[c, c, c]];
                let mut weights = vec![9.0 / 80.0];
                for a in [a1, a2] {
                    let b = 1.0 - 2.0 * a;
                    points.extend_from_slice(&[[b, a, a], [a, b, a], [a, a, b]]);
                }
                weights.extend_from_slice(&[w1, w1, w1, w2, w2, w2]);
                (points, weights)
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "unsupported quadrature degree {other}; supported: 1, 2, 5"
                )))
            }
        };
        Ok(QuadratureRule { degree, points, weights })
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Barycentric coordinates of the quadrature points.
    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Weights, summing to 1/2.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Convenience constructor, see [`QuadratureRule::for_degree`].
pub fn quadrature(degree: u32) -> Result<QuadratureRule> {
    QuadratureRule::for_degree(degree)
}
