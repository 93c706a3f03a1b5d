//! Truncated maximal function M_eps on mesh fields.
//!
//! M_eps(f)(x) approximates sup over rho >= eps of the average of
//! f * 1_support over B_rho(x). The supremum is discretized to a geometric
//! radius ladder rho_k = eps * 1.25^k truncated at the mesh diameter; ball
//! membership of an element is decided by its centroid; the denominator is
//! the covered element volume, so near the domain boundary the average is
//! over the intersection of the ball with the mesh.

use crate::error::{Error, Result};
use crate::grid::{Field, FieldLoc, Region};
use crate::par;

/// Radius ladder eps * 1.25^k, stopping at the first entry >= diameter.
pub fn radius_ladder(eps: f64, diameter: f64) -> Vec<f64> {
    let mut out = vec![eps];
    let mut r = eps;
    while r < diameter {
        r *= 1.25;
        out.push(r);
    }
    out
}

/// Per-element data consumed by both evaluation paths: centroid, volume,
/// centroid value, and whether the centroid lies in the support region.
fn element_data(f: &Field, support_region: &Region) -> Vec<(crate::vect::Vect, f64, f64, bool)> {
    f.mesh
        .elements
        .iter()
        .enumerate()
        .map(|(e, el)| {
            (el.centroid, el.vol, f.centroid_value(e, 0), support_region.contains(&el.centroid))
        })
        .collect()
}

/// One horizontal row of element centroids with uniform x-spacing, carrying
/// prefix sums of the volumes and the supported volume-weighted values.
struct Row {
    y: f64,
    x0: f64,
    dx: f64,
    /// pref_vol[i] = sum of vol over the first i centroids in the row.
    pref_vol: Vec<f64>,
    /// pref_num[i] = sum of vol * val over the first i supported centroids.
    pref_num: Vec<f64>,
}

/// Row decomposition of a 2d mesh whose element centroids fall on uniformly
/// spaced horizontal lines (structured square meshes do; mapped disk meshes
/// and 3d meshes do not, and return None so the caller falls back to the
/// direct per-element scan).
struct RowTable {
    rows: Vec<Row>,
    /// Centroid bounding box, used to stop the ladder once a ball covers it.
    lo: [f64; 2],
    hi: [f64; 2],
}

fn build_row_table(data: &[(crate::vect::Vect, f64, f64, bool)], diameter: f64) -> Option<RowTable> {
    if data.is_empty() || data[0].0.dim() != 2 {
        return None;
    }
    let tol = 1e-9 * diameter.max(1.0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| {
        (data[a].0[1], data[a].0[0])
            .partial_cmp(&(data[b].0[1], data[b].0[0]))
            .unwrap()
    });
    let mut rows = Vec::new();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    let mut start = 0;
    while start < order.len() {
        let y = data[order[start]].0[1];
        let mut end = start + 1;
        while end < order.len() && data[order[end]].0[1] - y <= tol {
            end += 1;
        }
        let members = &order[start..end];
        let x0 = data[members[0]].0[0];
        let xn = data[*members.last().unwrap()].0[0];
        let dx = if members.len() > 1 { (xn - x0) / (members.len() - 1) as f64 } else { 1.0 };
        if dx <= 0.0 && members.len() > 1 {
            return None;
        }
        let mut pref_vol = Vec::with_capacity(members.len() + 1);
        let mut pref_num = Vec::with_capacity(members.len() + 1);
        pref_vol.push(0.0);
        pref_num.push(0.0);
        for (i, &e) in members.iter().enumerate() {
            let (c, vol, val, in_support) = data[e];
            // reject rows that are not uniformly spaced
            if (c[0] - (x0 + i as f64 * dx)).abs() > tol {
                return None;
            }
            lo[0] = lo[0].min(c[0]);
            lo[1] = lo[1].min(c[1]);
            hi[0] = hi[0].max(c[0]);
            hi[1] = hi[1].max(c[1]);
            pref_vol.push(pref_vol[i] + vol);
            pref_num.push(pref_num[i] + if in_support { vol * val } else { 0.0 });
        }
        rows.push(Row { y, x0, dx, pref_vol, pref_num });
        start = end;
    }
    // a genuine row structure has O(sqrt(elements)) rows; anything denser
    // would make the row scan slower than the direct path
    if rows.len() * rows.len() > 16 * data.len() + 64 {
        return None;
    }
    Some(RowTable { rows, lo, hi })
}

impl RowTable {
    /// Sum of (vol, vol * val * 1_support) over centroids within distance rho
    /// of x, via one prefix-sum segment per intersected row.
    fn ball_sums(&self, x: &crate::vect::Vect, rho: f64) -> (f64, f64) {
        let (mut ns, mut ds) = (0.0, 0.0);
        let first = self.rows.partition_point(|r| r.y < x[1] - rho);
        for row in &self.rows[first..] {
            let dy = row.y - x[1];
            if dy > rho {
                break;
            }
            let w2 = rho * rho - dy * dy;
            if w2 < 0.0 {
                continue;
            }
            let w = w2.sqrt();
            let n = row.pref_vol.len() - 1;
            let lo = (((x[0] - w - row.x0) / row.dx).ceil().max(0.0) as usize).min(n);
            let hi = ((((x[0] + w - row.x0) / row.dx).floor() + 1.0).max(0.0) as usize).min(n);
            if lo < hi {
                ds += row.pref_vol[hi] - row.pref_vol[lo];
                ns += row.pref_num[hi] - row.pref_num[lo];
            }
        }
        (ns, ds)
    }

    /// Distance from x beyond which larger balls cannot add centroids.
    fn reach(&self, x: &crate::vect::Vect) -> f64 {
        let dx = (x[0] - self.lo[0]).abs().max((x[0] - self.hi[0]).abs());
        let dy = (x[1] - self.lo[1]).abs().max((x[1] - self.hi[1]).abs());
        (dx * dx + dy * dy).sqrt()
    }

    /// Distance from x beyond which a ball covers every supported centroid:
    /// the farthest corner of the support bounding box clipped to the
    /// centroid bounding box. Falls back to the full reach for Region::All.
    fn support_reach(&self, x: &crate::vect::Vect, support: &Region) -> f64 {
        let (slo, shi) = match support {
            Region::All => return self.reach(x),
            Region::Ball { center, radius } => {
                ([center[0] - radius, center[1] - radius], [center[0] + radius, center[1] + radius])
            }
            Region::Rect { lo, hi } => ([lo[0], lo[1]], [hi[0], hi[1]]),
        };
        let lo = [slo[0].max(self.lo[0]), slo[1].max(self.lo[1])];
        let hi = [shi[0].min(self.hi[0]), shi[1].min(self.hi[1])];
        if lo[0] > hi[0] || lo[1] > hi[1] {
            return 0.0;
        }
        let dx = (x[0] - lo[0]).abs().max((x[0] - hi[0]).abs());
        let dy = (x[1] - lo[1]).abs().max((x[1] - hi[1]).abs());
        (dx * dx + dy * dy).sqrt()
    }
}

/// Ladder supremum at one node by direct bucketing of every element.
fn node_value_direct(
    x: &crate::vect::Vect,
    data: &[(crate::vect::Vect, f64, f64, bool)],
    ladder: &[f64],
) -> f64 {
    let nk = ladder.len();
    // bucket each element by the smallest ladder radius containing it,
    // then prefix-sum so num[k]/den[k] is the ball-of-radius-rho_k average
    let mut num = vec![0.0f64; nk];
    let mut den = vec![0.0f64; nk];
    for (c, vol, val, in_support) in data {
        let d = (*c - *x).norm();
        // first k with ladder[k] >= d (geometric, so log search is overkill)
        let mut k = 0;
        while k < nk && ladder[k] < d {
            k += 1;
        }
        if k == nk {
            continue;
        }
        den[k] += vol;
        if *in_support {
            num[k] += vol * val;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut ns = 0.0;
    let mut ds = 0.0;
    for k in 0..nk {
        ns += num[k];
        ds += den[k];
        if ds > 0.0 {
            best = best.max(ns / ds);
        }
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

/// Ladder supremum at one node from row prefix sums. Once a ball covers the
/// whole centroid bounding box, later rungs repeat the same average; once it
/// covers every supported centroid with a nonnegative total, the numerator is
/// frozen while the denominator keeps growing, so the averages only shrink.
/// Either way the remaining rungs cannot raise the supremum.
fn node_value_rows(x: &crate::vect::Vect, rows: &RowTable, ladder: &[f64], support: &Region) -> f64 {
    let reach = rows.reach(x);
    let s_reach = rows.support_reach(x, support);
    let mut best = f64::NEG_INFINITY;
    for &rho in ladder {
        let (ns, ds) = rows.ball_sums(x, rho);
        if ds > 0.0 {
            best = best.max(ns / ds);
        }
        if rho >= reach || (rho >= s_reach && ns >= 0.0) {
            break;
        }
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

pub fn truncated_maximal(
    f: &Field,
    eps: f64,
    eval_region: &Region,
    support_region: &Region,
) -> Result<Field> {
    if eps <= 0.0 {
        return Err(Error::invalid(format!("maximal truncation eps must be > 0, got {eps}")));
    }
    if f.rank != 1 {
        return Err(Error::invalid("truncated_maximal takes a scalar field"));
    }
    let mesh = &f.mesh;
    let ladder = radius_ladder(eps, mesh.diameter);
    let data = element_data(f, support_region);
    let rows = build_row_table(&data, mesh.diameter);
    let pts = &mesh.points;
    let values = par::map_indexed(mesh.node_count(), |i| {
        let x = pts[i];
        if !eval_region.contains(&x) {
            return 0.0;
        }
        match &rows {
            Some(table) => node_value_rows(&x, table, &ladder, support_region),
            None => node_value_direct(&x, &data, &ladder),
        }
    });
    let mut out = Field::zeros(mesh, 1, FieldLoc::Nodal);
    out.values = values;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DirichletMesh, DomainShape};
    use crate::vect::Vect;
    use std::sync::Arc;

    fn unit_square(m: usize) -> Arc<crate::grid::Mesh> {
        Arc::new(
            DirichletMesh::new(DomainShape::Square { center: [0.5, 0.5], half_width: 0.5 }, m)
                .unwrap()
                .mesh,
        )
    }

    #[test]
    fn constant_field_attains_its_value() {
        let mesh = unit_square(32);
        let f = Field::nodal_scalar(&mesh, |_| 3.0);
        let m = truncated_maximal(&f, 0.05, &Region::All, &Region::All).unwrap();
        let center = mesh
            .points
            .iter()
            .position(|p| (p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12)
            .unwrap();
        assert!((m.values[center] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn huge_eps_collapses_to_global_average() {
        let mesh = unit_square(16);
        let f = Field::nodal_scalar(&mesh, |p| p[0]);
        let m = truncated_maximal(&f, 10.0, &Region::All, &Region::All).unwrap();
        let global = crate::grid::mean(&f, &Region::All).unwrap();
        for (i, v) in m.values.iter().enumerate() {
            let _ = i;
            assert!((v - global).abs() < 1e-12);
        }
    }

    #[test]
    fn half_plane_indicator_near_half() {
        // indicator of { x1 > 0.5 } evaluated at a node on the interface:
        // every centered ball average is close to 1/2
        let mesh = unit_square(64);
        let f = Field::nodal_scalar(&mesh, |p| if p[0] > 0.5 { 1.0 } else { 0.0 });
        let m = truncated_maximal(&f, 0.05, &Region::All, &Region::All).unwrap();
        let node = mesh
            .points
            .iter()
            .position(|p| (p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12)
            .unwrap();
        let v = m.values[node];
        assert!((0.45..=0.55).contains(&v), "got {v}");
        // dense-radius oracle at the same node: ladder never exceeds it
        let x = mesh.points[node];
        let mut oracle = f64::NEG_INFINITY;
        let mut rho = 0.05;
        while rho < mesh.diameter * 1.3 {
            let mut num = 0.0;
            let mut den = 0.0;
            for (e, el) in mesh.elements.iter().enumerate() {
                if (el.centroid - x).norm() <= rho {
                    den += el.vol;
                    num += el.vol * f.centroid_value(e, 0);
                }
            }
            if den > 0.0 {
                oracle = oracle.max(num / den);
            }
            rho *= 1.01;
        }
        assert!(v <= oracle + 1e-12);
        assert!(v >= oracle - 0.05, "ladder {v} vs dense oracle {oracle}");
    }

    #[test]
    fn pointwise_lower_bound_by_largest_ball_average() {
        let mesh = unit_square(32);
        let f = Field::nodal_scalar(&mesh, |p| (p[0] * 9.0).sin().abs());
        let m = truncated_maximal(&f, 0.1, &Region::All, &Region::All).unwrap();
        let global = crate::grid::mean(&f, &Region::All).unwrap();
        for v in &m.values {
            assert!(*v >= global - 1e-12);
        }
    }

    #[test]
    fn row_fast_path_matches_direct_scan() {
        let mesh = unit_square(24);
        let f = Field::nodal_scalar(&mesh, |p| (p[0] * 5.0).sin() + p[1]);
        let support = Region::Ball { center: Vect::new2(0.4, 0.6), radius: 0.3 };
        let m = truncated_maximal(&f, 0.07, &Region::All, &support).unwrap();
        let data = element_data(&f, &support);
        assert!(build_row_table(&data, mesh.diameter).is_some());
        let ladder = radius_ladder(0.07, mesh.diameter);
        for (i, x) in mesh.points.iter().enumerate() {
            let d = node_value_direct(x, &data, &ladder);
            assert!(
                (m.values[i] - d).abs() <= 1e-12 * (1.0 + d.abs()),
                "node {i}: {} vs {d}",
                m.values[i]
            );
        }
    }

    #[test]
    fn bad_eps_rejected() {
        let mesh = unit_square(8);
        let f = Field::nodal_scalar(&mesh, |_| 1.0);
        assert!(truncated_maximal(&f, 0.0, &Region::All, &Region::All).is_err());
    }
}
