//! Simplicial mesh core shared by torus grids and Dirichlet meshes.
//!
//! Elements are simplices with piecewise-linear (P1) nodal bases. Each
//! element caches its geometric vertex coordinates (which, on the torus,
//! may differ from the stored node coordinates by a periodic offset), the
//! gradients of its nodal basis functions, its volume, and its centroid.

use crate::vect::Vect;

#[derive(Clone, Debug)]
pub struct Element {
    /// Node indices for assembly; only the first dim+1 entries are used.
    pub nodes: [usize; 4],
    /// Geometric vertex positions, including periodic offsets on the torus.
    pub coords: [Vect; 4],
    /// Gradient of the nodal basis function attached to each vertex.
    pub grads: [Vect; 4],
    pub vol: f64,
    pub centroid: Vect,
}

impl Element {
    /// Build an element from vertex positions, computing P1 basis gradients.
    pub fn from_vertices(nodes: &[usize], coords: &[Vect]) -> Element {
        let dim = coords.len() - 1;
        let mut e = Element {
            nodes: [0; 4],
            coords: [Vect::zeros(dim); 4],
            grads: [Vect::zeros(dim); 4],
            vol: 0.0,
            centroid: Vect::zeros(dim),
        };
        e.nodes[..nodes.len()].copy_from_slice(nodes);
        e.coords[..coords.len()].copy_from_slice(coords);
        // edge matrix D with columns x_i - x_0, i = 1..dim
        let x0 = coords[0];
        let mut c = x0;
        for v in &coords[1..] {
            c += *v;
        }
        e.centroid = c.scale(1.0 / (dim as f64 + 1.0));
        match dim {
            2 => {
                let d1 = coords[1] - x0;
                let d2 = coords[2] - x0;
                let det = d1[0] * d2[1] - d1[1] * d2[0];
                e.vol = det.abs() / 2.0;
                let inv = 1.0 / det;
                // rows of D^{-1} are the gradients of lambda_1, lambda_2
                e.grads[1] = Vect::new2(d2[1] * inv, -d2[0] * inv);
                e.grads[2] = Vect::new2(-d1[1] * inv, d1[0] * inv);
                e.grads[0] = -(e.grads[1] + e.grads[2]);
            }
            3 => {
                let d1 = coords[1] - x0;
                let d2 = coords[2] - x0;
                let d3 = coords[3] - x0;
                let cross = |a: &Vect, b: &Vect| {
                    Vect::new3(
                        a[1] * b[2] - a[2] * b[1],
                        a[2] * b[0] - a[0] * b[2],
                        a[0] * b[1] - a[1] * b[0],
                    )
                };
                let c23 = cross(&d2, &d3);
                let det = d1.dot(&c23);
                e.vol = det.abs() / 6.0;
                let inv = 1.0 / det;
                e.grads[1] = c23.scale(inv);
                e.grads[2] = cross(&d3, &d1).scale(inv);
                e.grads[3] = cross(&d1, &d2).scale(inv);
                e.grads[0] = -(e.grads[1] + e.grads[2] + e.grads[3]);
            }
            _ => panic!("unsupported dimension {dim}"),
        }
        e
    }

    pub fn vertex_count(&self) -> usize {
        self.centroid.dim() + 1
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub dim: usize,
    pub points: Vec<Vect>,
    pub elements: Vec<Element>,
    /// Sorted node indices on the Dirichlet boundary; empty for the torus.
    pub boundary_nodes: Vec<usize>,
    pub volume: f64,
    /// Largest pairwise distance in the mesh, used by the maximal ladder.
    pub diameter: f64,
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        self.points.len()
    }

    pub fn is_boundary(&self) -> Vec<bool> {
        let mut b = vec![false; self.points.len()];
        for &i in &self.boundary_nodes {
            b[i] = true;
        }
        b
    }

    /// Bounding box of the node coordinates.
    pub fn bounding_box(&self) -> (Vect, Vect) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points {
            for i in 0..self.dim {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        (lo, hi)
    }
}
