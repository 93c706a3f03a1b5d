//! Discretization substrate: meshes, nodal fields, norms, regions, and the
//! truncated maximal function.

pub mod dirichlet;
pub mod io;
pub mod maximal;
pub mod mesh;
pub mod torus;

pub use dirichlet::{DirichletMesh, DomainShape};
pub use maximal::truncated_maximal;
pub use mesh::{Element, Mesh};
pub use torus::TorusGrid;

use crate::error::{Error, Result};
use crate::par;
use crate::vect::Vect;
use std::sync::Arc;

/// Where a field's degrees of freedom live.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldLoc {
    Nodal,
    PerElement,
}

/// Scalar or vector field on a mesh. Nodal fields are piecewise-linear;
/// per-element fields are piecewise-constant (gradients, fluxes).
#[derive(Clone, Debug)]
pub struct Field {
    pub mesh: Arc<Mesh>,
    pub rank: usize,
    pub loc: FieldLoc,
    /// Entity-major layout: values[entity * rank + component].
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(mesh: &Arc<Mesh>, rank: usize, loc: FieldLoc) -> Field {
        let n = match loc {
            FieldLoc::Nodal => mesh.node_count(),
            FieldLoc::PerElement => mesh.elements.len(),
        };
        Field { mesh: Arc::clone(mesh), rank, loc, values: vec![0.0; n * rank] }
    }

    pub fn nodal_scalar(mesh: &Arc<Mesh>, f: impl Fn(&Vect) -> f64 + Sync) -> Field {
        let mut out = Field::zeros(mesh, 1, FieldLoc::Nodal);
        let pts = &mesh.points;
        par::fill_indexed(&mut out.values, |i| f(&pts[i]));
        out
    }

    pub fn entity_count(&self) -> usize {
        self.values.len() / self.rank
    }

    pub fn get(&self, entity: usize, comp: usize) -> f64 {
        self.values[entity * self.rank + comp]
    }

    pub fn set(&mut self, entity: usize, comp: usize, v: f64) {
        self.values[entity * self.rank + comp] = v;
    }

    pub fn vect_at(&self, entity: usize) -> Vect {
        let mut v = Vect::zeros(self.rank);
        for c in 0..self.rank {
            v[c] = self.get(entity, c);
        }
        v
    }

    /// Value of component `comp` at the centroid of element `e`: the vertex
    /// mean for P1 nodal fields, the stored value for per-element fields.
    pub fn centroid_value(&self, e: usize, comp: usize) -> f64 {
        match self.loc {
            FieldLoc::PerElement => self.get(e, comp),
            FieldLoc::Nodal => {
                let el = &self.mesh.elements[e];
                let nv = el.vertex_count();
                let mut s = 0.0;
                for v in 0..nv {
                    s += self.get(el.nodes[v], comp);
                }
                s / nv as f64
            }
        }
    }

    /// Euclidean magnitude across components at the centroid of element `e`.
    pub fn centroid_magnitude(&self, e: usize) -> f64 {
        let mut s = 0.0;
        for c in 0..self.rank {
            let v = self.centroid_value(e, c);
            s += v * v;
        }
        s.sqrt()
    }
}

/// Subset of the mesh over which norms and means are taken. Elements belong
/// to a region iff their centroid does.
#[derive(Clone, Copy, Debug)]
pub enum Region {
    All,
    Ball { center: Vect, radius: f64 },
    Rect { lo: Vect, hi: Vect },
}

impl Region {
    pub fn contains(&self, p: &Vect) -> bool {
        match self {
            Region::All => true,
            Region::Ball { center, radius } => (*p - *center).norm() <= *radius,
            Region::Rect { lo, hi } => {
                (0..p.dim()).all(|i| p[i] >= lo[i] && p[i] <= hi[i])
            }
        }
    }
}

/// Exact gradient of the piecewise-linear interpolant, per element.
pub fn gradient(f: &Field) -> Field {
    assert_eq!(f.rank, 1, "gradient takes a scalar nodal field");
    assert_eq!(f.loc, FieldLoc::Nodal);
    let mesh = &f.mesh;
    let dim = mesh.dim;
    let mut out = Field::zeros(mesh, dim, FieldLoc::PerElement);
    let vals = &f.values;
    let elems = &mesh.elements;
    let slots: Vec<f64> = par::map_indexed(elems.len() * dim, |k| {
        let (e, c) = (k / dim, k % dim);
        let el = &elems[e];
        let mut g = 0.0;
        for v in 0..el.vertex_count() {
            g += el.grads[v][c] * vals[el.nodes[v]];
        }
        g
    });
    out.values = slots;
    out
}

/// Midpoint-quadrature L^q norm of |f| over `region`; volume-averaged when
/// `averaged` is set.
pub fn lq_norm(f: &Field, q: f64, region: &Region, averaged: bool) -> Result<f64> {
    if q < 1.0 {
        return Err(Error::invalid(format!("q must be >= 1, got {q}")));
    }
    let elems = &f.mesh.elements;
    let int = par::sum_indexed(elems.len(), |e| {
        let el = &elems[e];
        if region.contains(&el.centroid) {
            el.vol * f.centroid_magnitude(e).powf(q)
        } else {
            0.0
        }
    });
    let vol = par::sum_indexed(elems.len(), |e| {
        let el = &elems[e];
        if region.contains(&el.centroid) {
            el.vol
        } else {
            0.0
        }
    });
    if vol <= 0.0 {
        return Err(Error::invalid("region contains no element centroid"));
    }
    let base = if averaged { int / vol } else { int };
    Ok(base.powf(1.0 / q))
}

/// Volume average of a scalar field over a region.
pub fn mean(f: &Field, region: &Region) -> Result<f64> {
    assert_eq!(f.rank, 1);
    let elems = &f.mesh.elements;
    let int = par::sum_indexed(elems.len(), |e| {
        let el = &elems[e];
        if region.contains(&el.centroid) {
            el.vol * f.centroid_value(e, 0)
        } else {
            0.0
        }
    });
    let vol = par::sum_indexed(elems.len(), |e| {
        let el = &elems[e];
        if region.contains(&el.centroid) {
            el.vol
        } else {
            0.0
        }
    });
    if vol <= 0.0 {
        return Err(Error::invalid("region contains no element centroid"));
    }
    Ok(int / vol)
}

/// Lumped L^2 projection of a per-element field onto nodes: each node takes
/// the volume-weighted average of its incident element values.
pub fn project_to_nodes(f: &Field) -> Field {
    assert_eq!(f.loc, FieldLoc::PerElement);
    let mesh = &f.mesh;
    let n = mesh.node_count();
    let rank = f.rank;
    let mut weight = vec![0.0f64; n];
    let mut acc = vec![0.0f64; n * rank];
    for (e, el) in mesh.elements.iter().enumerate() {
        let nv = el.vertex_count();
        let w = el.vol / nv as f64;
        for v in 0..nv {
            let i = el.nodes[v];
            weight[i] += w;
            for c in 0..rank {
                acc[i * rank + c] += w * f.get(e, c);
            }
        }
    }
    for i in 0..n {
        if weight[i] > 0.0 {
            for c in 0..rank {
                acc[i * rank + c] /= weight[i];
            }
        }
    }
    Field { mesh: Arc::clone(mesh), rank, loc: FieldLoc::Nodal, values: acc }
}

/// f minus its volume average over `region`.
pub fn mean_zero(f: &Field, region: &Region) -> Result<Field> {
    let m = mean(f, region)?;
    let mut out = f.clone();
    for v in &mut out.values {
        *v -= m;
    }
    Ok(out)
}

/// Per-component volume average of a vector field over a region.
pub fn mean_vect(f: &Field, region: &Region) -> Result<Vect> {
    let elems = &f.mesh.elements;
    let mut out = Vect::zeros(f.rank);
    let mut vol = 0.0;
    for (e, el) in elems.iter().enumerate() {
        if region.contains(&el.centroid) {
            vol += el.vol;
            for c in 0..f.rank {
                out[c] += el.vol * f.centroid_value(e, c);
            }
        }
    }
    if vol <= 0.0 {
        return Err(Error::invalid("region contains no element centroid"));
    }
    Ok(out.scale(1.0 / vol))
}
