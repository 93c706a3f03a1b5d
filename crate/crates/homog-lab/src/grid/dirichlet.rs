//! Dirichlet meshes on squares and disks (2D).
//!
//! Squares use a structured grid with the same Kuhn split as the torus, so
//! oscillating-coefficient solves can align element boundaries with the
//! periodic microstructure. Disks use a smooth square-to-disk map that
//! sends the reference square boundary exactly onto the circle.

use crate::error::{Error, Result};
use crate::grid::mesh::{Element, Mesh};
use crate::vect::Vect;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DomainShape {
    Square { center: [f64; 2], half_width: f64 },
    Disk { center: [f64; 2], radius: f64 },
}

impl DomainShape {
    pub fn contains(&self, p: &Vect) -> bool {
        match self {
            DomainShape::Square { center, half_width } => {
                (p[0] - center[0]).abs() <= *half_width && (p[1] - center[1]).abs() <= *half_width
            }
            DomainShape::Disk { center, radius } => {
                let d = Vect::new2(p[0] - center[0], p[1] - center[1]);
                d.norm() <= *radius
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            DomainShape::Square { half_width, .. } => 2.0 * half_width * 2f64.sqrt(),
            DomainShape::Disk { radius, .. } => 2.0 * radius,
        }
    }

    /// Radius of the largest inscribed ball.
    pub fn inradius(&self) -> f64 {
        match self {
            DomainShape::Square { half_width, .. } => *half_width,
            DomainShape::Disk { radius, .. } => *radius,
        }
    }

    pub fn center(&self) -> Vect {
        match self {
            DomainShape::Square { center, .. } | DomainShape::Disk { center, .. } => {
                Vect::new2(center[0], center[1])
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct DirichletMesh {
    pub domain: DomainShape,
    pub subdivisions: usize,
    pub mesh: Mesh,
}

impl DirichletMesh {
    /// Structured mesh with `m` cells per side of the reference square.
    pub fn new(domain: DomainShape, m: usize) -> Result<DirichletMesh> {
        if m < 2 {
            return Err(Error::invalid(format!("need at least 2 subdivisions, got {m}")));
        }
        let np = m + 1;
        let mut points = Vec::with_capacity(np * np);
        let mut boundary_nodes = Vec::new();
        for j in 0..np {
            for i in 0..np {
                // reference coordinates in [-1, 1]^2
                let u = 2.0 * i as f64 / m as f64 - 1.0;
                let v = 2.0 * j as f64 / m as f64 - 1.0;
                let p = match domain {
                    DomainShape::Square { center, half_width } => {
                        Vect::new2(center[0] + half_width * u, center[1] + half_width * v)
                    }
                    DomainShape::Disk { center, radius } => {
                        // (u,v) -> (u sqrt(1 - v^2/2), v sqrt(1 - u^2/2))
                        // maps the square boundary exactly onto the unit circle
                        let x = u * (1.0 - v * v / 2.0).sqrt();
                        let y = v * (1.0 - u * u / 2.0).sqrt();
                        Vect::new2(center[0] + radius * x, center[1] + radius * y)
                    }
                };
                if i == 0 || i == m || j == 0 || j == m {
                    boundary_nodes.push(points.len());
                }
                points.push(p);
            }
        }
        let idx = |i: usize, j: usize| j * np + i;
        let mut elements = Vec::with_capacity(2 * m * m);
        for j in 0..m {
            for i in 0..m {
                let v00 = idx(i, j);
                let v10 = idx(i + 1, j);
                let v01 = idx(i, j + 1);
                let v11 = idx(i + 1, j + 1);
                for tri in [[v00, v10, v11], [v00, v11, v01]] {
                    let coords = [points[tri[0]], points[tri[1]], points[tri[2]]];
                    elements.push(Element::from_vertices(&tri, &coords));
                }
            }
        }
        let volume: f64 = elements.iter().map(|e| e.vol).sum();
        let mesh = Mesh {
            dim: 2,
            points,
            elements,
            boundary_nodes,
            volume,
            diameter: domain.diameter(),
        };
        Ok(DirichletMesh { domain, subdivisions: m, mesh })
    }

    /// Representative element size.
    pub fn h(&self) -> f64 {
        self.domain.diameter() / 2f64.sqrt() / self.subdivisions as f64
    }
}
