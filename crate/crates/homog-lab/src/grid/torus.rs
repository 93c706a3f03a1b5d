//! Periodic grids on the unit torus Y = (0,1)^n.
//!
//! Nodes sit at i/N and opposite faces are identified by index arithmetic
//! (modular reduction of the multi-index), never by floating-point
//! comparison of coordinates. Cells are split into Kuhn simplices: one
//! simplex per permutation of the axes, which triangulates consistently
//! across cell faces in both 2D and 3D.

use crate::error::{Error, Result};
use crate::grid::mesh::{Element, Mesh};
use crate::grid::Field;
use crate::vect::Vect;

#[derive(Clone, Debug)]
pub struct TorusGrid {
    pub n: usize,
    pub cells: usize,
    pub mesh: Mesh,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    match n {
        2 => vec![vec![0, 1], vec![1, 0]],
        3 => vec![
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![1, 0, 2],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0],
        ],
        _ => panic!("unsupported dimension {n}"),
    }
}

impl TorusGrid {
    pub fn new(n: usize, cells: usize) -> Result<TorusGrid> {
        if !(n == 2 || n == 3) {
            return Err(Error::invalid(format!("torus dimension must be 2 or 3, got {n}")));
        }
        if cells < 4 {
            return Err(Error::invalid(format!("torus needs at least 4 cells per side, got {cells}")));
        }
        let nn = cells.pow(n as u32);
        let h = 1.0 / cells as f64;
        let mut points = Vec::with_capacity(nn);
        for idx in 0..nn {
            let iv = Self::unravel(idx, n, cells);
            let mut p = Vect::zeros(n);
            for d in 0..n {
                p[d] = iv[d] as f64 * h;
            }
            points.push(p);
        }
        let perms = permutations(n);
        let mut elements = Vec::with_capacity(nn * perms.len());
        for cell in 0..nn {
            let base = Self::unravel(cell, n, cells);
            for perm in &perms {
                let mut offs = vec![vec![0usize; n]];
                for &ax in perm {
                    let mut next = offs.last().unwrap().clone();
                    next[ax] += 1;
                    offs.push(next);
                }
                let mut nodes = Vec::with_capacity(n + 1);
                let mut coords = Vec::with_capacity(n + 1);
                for off in &offs {
                    let mut iv = [0usize; 3];
                    let mut p = Vect::zeros(n);
                    for d in 0..n {
                        iv[d] = (base[d] + off[d]) % cells;
                        // geometric coordinate keeps the unwrapped offset so
                        // boundary-straddling simplices stay non-degenerate
                        p[d] = (base[d] + off[d]) as f64 * h;
                    }
                    nodes.push(Self::ravel(&iv[..n], cells));
                    coords.push(p);
                }
                elements.push(Element::from_vertices(&nodes, &coords));
            }
        }
        let mesh = Mesh {
            dim: n,
            points,
            elements,
            boundary_nodes: Vec::new(),
            volume: 1.0,
            diameter: (n as f64).sqrt(),
        };
        Ok(TorusGrid { n, cells, mesh })
    }

    pub fn unravel(idx: usize, n: usize, cells: usize) -> [usize; 3] {
        let mut iv = [0usize; 3];
        let mut r = idx;
        for d in 0..n {
            iv[d] = r % cells;
            r /= cells;
        }
        iv
    }

    pub fn ravel(iv: &[usize], cells: usize) -> usize {
        let mut idx = 0;
        for d in (0..iv.len()).rev() {
            idx = idx * cells + iv[d];
        }
        idx
    }

    pub fn node_count(&self) -> usize {
        self.mesh.node_count()
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }

    /// Cell multi-index and in-cell fractional coordinates of a point,
    /// reduced periodically to [0,1)^n.
    fn locate(&self, y: &Vect) -> ([usize; 3], [f64; 3]) {
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for d in 0..self.n {
            let t = y[d].rem_euclid(1.0) * self.cells as f64;
            let mut i = t.floor() as usize;
            let mut fr = t - i as f64;
            if i >= self.cells {
                i = 0;
                fr = 0.0;
            }
            base[d] = i;
            frac[d] = fr;
        }
        (base, frac)
    }

    /// Axes ordered by descending in-cell fraction: the Kuhn simplex
    /// containing the point adds axes in exactly this order. Ties break by
    /// axis index for determinism.
    fn kuhn_order(&self, frac: &[f64; 3]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| frac[b].partial_cmp(&frac[a]).unwrap().then(a.cmp(&b)));
        order
    }

    /// Index of the mesh element containing y (periodic).
    pub fn element_at(&self, y: &Vect) -> usize {
        let (base, frac) = self.locate(y);
        let order = self.kuhn_order(&frac);
        let perms = permutations(self.n);
        let pidx = perms.iter().position(|p| p[..] == order[..]).unwrap();
        let cell = Self::ravel(&base[..self.n], self.cells);
        cell * perms.len() + pidx
    }

    /// Periodic P1 interpolation of a scalar nodal field at y, using the
    /// Kuhn-simplex barycentric weights. Exact at grid nodes.
    pub fn interp_scalar(&self, f: &Field, y: &Vect) -> f64 {
        debug_assert_eq!(f.rank, 1);
        let (base, frac) = self.locate(y);
        let order = self.kuhn_order(&frac);
        let mut iv = base;
        let mut val = (1.0 - frac[order[0]]) * f.values[Self::ravel(&iv[..self.n], self.cells)];
        for (k, &ax) in order.iter().enumerate() {
            iv[ax] = (iv[ax] + 1) % self.cells;
            let w = if k + 1 < self.n { frac[ax] - frac[order[k + 1]] } else { frac[ax] };
            val += w * f.values[Self::ravel(&iv[..self.n], self.cells)];
        }
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volumes_tile_the_torus() {
        for (n, cells) in [(2usize, 8usize), (3, 4)] {
            let g = TorusGrid::new(n, cells).unwrap();
            let total: f64 = g.mesh.elements.iter().map(|e| e.vol).sum();
            assert!((total - 1.0).abs() < 1e-12, "n={n} total={total}");
            assert_eq!(g.node_count(), cells.pow(n as u32));
            let per_cell = if n == 2 { 2 } else { 6 };
            assert_eq!(g.mesh.elements.len(), cells.pow(n as u32) * per_cell);
        }
    }

    #[test]
    fn periodic_identification_by_index() {
        let g = TorusGrid::new(2, 8).unwrap();
        // elements in the last column reference first-column nodes
        let wrapped = g.mesh.elements.iter().any(|e| {
            let idxs = &e.nodes[..3];
            idxs.iter().any(|&i| TorusGrid::unravel(i, 2, 8)[0] == 0)
                && idxs.iter().any(|&i| TorusGrid::unravel(i, 2, 8)[0] == 7)
        });
        assert!(wrapped);
        assert!(g.mesh.boundary_nodes.is_empty());
    }

    #[test]
    fn ravel_roundtrip() {
        let cells = 5;
        for idx in 0..cells * cells * cells {
            let iv = TorusGrid::unravel(idx, 3, cells);
            assert_eq!(TorusGrid::ravel(&iv, cells), idx);
        }
    }

    #[test]
    fn point_location_and_interpolation() {
        use std::sync::Arc;
        for (n, cells) in [(2usize, 8usize), (3, 4)] {
            let g = TorusGrid::new(n, cells).unwrap();
            let mesh = Arc::new(g.mesh.clone());
            let f = Field::nodal_scalar(&mesh, |p| {
                (2.0 * std::f64::consts::PI * p[0]).sin() + 0.3 * p[1]
            });
            // interpolation is exact at grid nodes, including shifts by
            // whole periods
            for (i, p) in mesh.points.iter().enumerate().step_by(3) {
                let mut q = *p;
                q[0] += 2.0;
                assert!((g.interp_scalar(&f, &q) - f.values[i]).abs() < 1e-12);
            }
            // centroids locate to their own element, and P1 interpolation
            // there is the vertex mean
            for (e, el) in mesh.elements.iter().enumerate().step_by(7) {
                assert_eq!(g.element_at(&el.centroid), e, "n={n} e={e}");
                let mean: f64 =
                    el.nodes[..n + 1].iter().map(|&i| f.values[i]).sum::<f64>() / (n + 1) as f64;
                assert!((g.interp_scalar(&f, &el.centroid) - mean).abs() < 1e-12);
            }
        }
    }
}
