//! Measurement harness for the headline estimates: Calderon-Zygmund ratios
//! (pointwise and large-scale, with the truncated maximal function on both
//! sides), large-scale Lipschitz and Hoelder radius profiles, excess decay
//! over a shrinking ball ladder, and the higher-integrability probe for the
//! effective equation.
//!
//! Every operation here is a read-only measurement over already-solved
//! fields; constants are reported as realized quantities, never asserted
//! against theoretical values. The epsilon-uniformity statistic (max ratio
//! over min ratio across a ladder) is the module's main fitness signal.

use crate::cell::{solve_corrector, CorrectorSolution, SolverConfig};
use crate::error::{Error, Result};
use crate::grid::{self, gradient, lq_norm, truncated_maximal, Field, FieldLoc, Mesh, Region, TorusGrid};
use crate::operators::OperatorSpec;
use crate::params::ExponentParams;
use crate::solver::Assembler;
use crate::twoscale::loglog_fit;
use crate::vcalc::v_eval;
use crate::vect::Vect;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::sync::Arc;

/// |V_p(z)|^2 = (mu + |z|)^(p-2) |z|^2, with the 0/0 convention of the V
/// map (value 0 at z = 0).
fn v_sq(z: &Vect, params: &ExponentParams) -> f64 {
    match v_eval(z, params) {
        Ok(v) => v.dot(&v),
        Err(_) => f64::NAN,
    }
}

/// Scalar per-element field mu + |grad|, the quantity all the ratio
/// estimates measure.
fn mu_plus_magnitude(grad: &Field, mu: f64) -> Field {
    let mut out = Field::zeros(&grad.mesh, 1, FieldLoc::PerElement);
    for e in 0..grad.entity_count() {
        out.values[e] = mu + grad.centroid_magnitude(e);
    }
    out
}

/// Scalar per-element field |f|^s.
fn magnitude_pow(f: &Field, s: f64) -> Field {
    let mut out = Field::zeros(&f.mesh, 1, FieldLoc::PerElement);
    for e in 0..f.mesh.elements.len() {
        out.values[e] = f.centroid_magnitude(e).powf(s);
    }
    out
}

/// The measurement ball (and its double, when the caller halves the radius)
/// must not exit the mesh; checked against the axis-aligned bounding box of
/// the nodes.
fn require_ball_inside(mesh: &Mesh, center: &Vect, radius: f64) -> Result<()> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("ball radius must be > 0, got {radius}")));
    }
    for d in 0..mesh.dim {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &mesh.points {
            lo = lo.min(p[d]);
            hi = hi.max(p[d]);
        }
        if center[d] - radius < lo - 1e-12 || center[d] + radius > hi + 1e-12 {
            return Err(Error::invalid(format!(
                "ball of radius {radius} around {:?} exits the mesh on axis {d}",
                center.as_slice()
            )));
        }
    }
    Ok(())
}

/// The L^(q/(p-1)) load term of the right-hand bracket, raised to 1/(p-1);
/// zero when no load is present.
fn load_term(f_load: Option<&Field>, region: &Region, q: f64, params: &ExponentParams) -> Result<f64> {
    match f_load {
        None => Ok(0.0),
        Some(f) => {
            let s = q / (params.p - 1.0);
            let n = lq_norm(f, s, region, true)?;
            Ok(n.powf(1.0 / (params.p - 1.0)))
        }
    }
}

/// Both sides of the Calderon-Zygmund estimate: the L^q mean of mu + |grad u|
/// over the half ball against the L^p mean over the full ball plus the load
/// bracket.
pub fn cz_sides(
    u: &Field,
    f_load: Option<&Field>,
    center: &Vect,
    radius: f64,
    q: f64,
    params: &ExponentParams,
) -> Result<(f64, f64)> {
    params.validate()?;
    if q < params.p {
        return Err(Error::invalid(format!("need q >= p, got q={q} p={}", params.p)));
    }
    require_ball_inside(&u.mesh, center, radius)?;
    let g = gradient(u);
    let mg = mu_plus_magnitude(&g, params.mu);
    let half = Region::Ball { center: *center, radius: radius / 2.0 };
    let full = Region::Ball { center: *center, radius };
    let lhs = lq_norm(&mg, q, &half, true)?;
    let rhs = lq_norm(&mg, params.p, &full, true)? + load_term(f_load, &full, q, params)?;
    Ok((lhs, rhs))
}

/// Calderon-Zygmund ratio LHS / RHS; bounded realizations of the estimate's
/// constant.
pub fn cz_ratio(
    u: &Field,
    f_load: Option<&Field>,
    center: &Vect,
    radius: f64,
    q: f64,
    params: &ExponentParams,
) -> Result<f64> {
    cz_sides(u, f_load, center, radius, q, params).map(|(l, r)| l / r)
}

/// Both sides of the large-scale (epsilon-truncated) Calderon-Zygmund
/// estimate: the maximal function of the indicator-localized gradient power
/// enters on both sides, so the realized constant is epsilon-free up to
/// discretization drift. The degenerate ladder epsilon >= radius is allowed
/// (both maximal functions collapse to single ball averages); the gated runs
/// keep epsilon <= radius / 8.
pub fn large_scale_cz_sides(
    u: &Field,
    f_load: Option<&Field>,
    center: &Vect,
    radius: f64,
    q: f64,
    epsilon: f64,
    params: &ExponentParams,
) -> Result<(f64, f64)> {
    params.validate()?;
    let p = params.p;
    if q < p {
        return Err(Error::invalid(format!("need q >= p, got q={q} p={p}")));
    }
    require_ball_inside(&u.mesh, center, radius)?;
    let g = gradient(u);
    let half = Region::Ball { center: *center, radius: radius / 2.0 };
    let full = Region::Ball { center: *center, radius };
    let grad_p = magnitude_pow(&g, p);
    // the half-ball norm only reads nodes of elements whose centroid lies in
    // the half ball; evaluating the maximal function on a halo around it
    // leaves the norm unchanged and skips the outer annulus
    let h = (2.0 * u.mesh.volume / u.mesh.elements.len() as f64).sqrt();
    let lhs_eval = Region::Ball { center: *center, radius: radius / 2.0 + 2.0 * h };
    let m_grad = truncated_maximal(&grad_p, epsilon, &lhs_eval, &full)?;
    let lhs = lq_norm(&m_grad, q / p, &half, true)?;
    let mg = mu_plus_magnitude(&g, params.mu);
    let mut rhs = lq_norm(&mg, p, &full, true)?.powf(p);
    if let Some(f) = f_load {
        let f_pc = magnitude_pow(f, params.p_conj());
        let m_f = truncated_maximal(&f_pc, epsilon, &full, &full)?;
        rhs += lq_norm(&m_f, q / p, &full, true)?;
    }
    Ok((lhs, rhs))
}

pub fn large_scale_cz_ratio(
    u: &Field,
    f_load: Option<&Field>,
    center: &Vect,
    radius: f64,
    q: f64,
    epsilon: f64,
    params: &ExponentParams,
) -> Result<f64> {
    large_scale_cz_sides(u, f_load, center, radius, q, epsilon, params).map(|(l, r)| l / r)
}

/// Geometric radius ladder descending from r_max to r_min; the first entry
/// is exactly r_max and the last exactly r_min.
pub fn descending_ladder(r_max: f64, r_min: f64, ratio: f64) -> Result<Vec<f64>> {
    if !(r_max > r_min && r_min > 0.0 && ratio > 1.0) {
        return Err(Error::invalid(format!(
            "ladder needs r_max > r_min > 0 and ratio > 1, got {r_max}, {r_min}, {ratio}"
        )));
    }
    let mut out = vec![r_max];
    let mut r = r_max / ratio;
    while r > r_min * (1.0 + 1e-12) {
        out.push(r);
        r /= ratio;
    }
    out.push(r_min);
    Ok(out)
}

/// Ratio profile over a descending radius ladder.
#[derive(Clone, Debug, Serialize)]
pub struct RadiiProfile {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    /// The realized constant: the supremum of the profile.
    pub supremum: f64,
    /// The denominator scale (the input M of the Lipschitz estimate), when
    /// the profile has one.
    pub input_m: Option<f64>,
    /// Set when a 0/0 ratio was replaced by the convention value 1.
    pub degenerate: bool,
}

/// Large-scale Lipschitz profile: the mean of |V_p(grad u)|^2 over B_r
/// relative to the mean over B_R, down a geometric ladder from R to epsilon.
/// The entry at r = R is exactly 1; 0/0 reports 1 with the degenerate flag.
pub fn lipschitz_profile(
    u: &Field,
    center: &Vect,
    r_max: f64,
    epsilon: f64,
    params: &ExponentParams,
) -> Result<RadiiProfile> {
    params.validate()?;
    require_ball_inside(&u.mesh, center, r_max)?;
    let radii = descending_ladder(r_max, epsilon, 1.25)?;
    let g = gradient(u);
    let mut vsq = Field::zeros(&u.mesh, 1, FieldLoc::PerElement);
    for e in 0..u.mesh.elements.len() {
        vsq.values[e] = v_sq(&g.vect_at(e), params);
    }
    let denom = grid::mean(&vsq, &Region::Ball { center: *center, radius: r_max })?;
    let mut degenerate = false;
    let mut values = Vec::with_capacity(radii.len());
    for (k, &r) in radii.iter().enumerate() {
        if k == 0 {
            values.push(1.0);
            continue;
        }
        let num = grid::mean(&vsq, &Region::Ball { center: *center, radius: r })?;
        if denom > 0.0 {
            values.push(num / denom);
        } else {
            degenerate = true;
            values.push(1.0);
        }
    }
    let supremum = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(RadiiProfile { radii, values, supremum, input_m: Some(denom), degenerate })
}

/// Large-scale Hoelder profile: the L^p mean of |grad u| over B_r against
/// (R/r)^(n/q) times the full-ball bracket. For a constant gradient the
/// profile is proportional to (r/R)^(n/q), so its supremum sits at r = R.
pub fn holder_profile(
    u: &Field,
    center: &Vect,
    r_max: f64,
    epsilon: f64,
    q: f64,
    params: &ExponentParams,
    f_load: Option<&Field>,
) -> Result<RadiiProfile> {
    params.validate()?;
    if q < params.p {
        return Err(Error::invalid(format!("need q >= p, got q={q} p={}", params.p)));
    }
    require_ball_inside(&u.mesh, center, r_max)?;
    let radii = descending_ladder(r_max, epsilon, 1.25)?;
    let g = gradient(u);
    let n = u.mesh.dim as f64;
    let full = Region::Ball { center: *center, radius: r_max };
    let mg = mu_plus_magnitude(&g, params.mu);
    let bracket = lq_norm(&mg, params.p, &full, true)? + load_term(f_load, &full, q, params)?;
    let mut degenerate = false;
    let mut values = Vec::with_capacity(radii.len());
    for &r in &radii {
        let num = lq_norm(&g, params.p, &Region::Ball { center: *center, radius: r }, true)?;
        let den = (r_max / r).powf(n / q) * bracket;
        if den > 0.0 {
            values.push(num / den);
        } else {
            degenerate = true;
            values.push(1.0);
        }
    }
    let supremum = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(RadiiProfile { radii, values, supremum, input_m: None, degenerate })
}

/// Excess-decay measurement down the ladder R_k = theta0^k R.
#[derive(Clone, Debug, Serialize)]
pub struct ExcessReport {
    pub radii: Vec<f64>,
    /// E_k: minimum over the candidate grid of the mean of
    /// |V_p(grad u - xi - grad phi_xi(x/eps))|^2 over B_{R_k}.
    pub excess: Vec<f64>,
    /// The minimizing candidate at each rung.
    pub minimizers: Vec<Vect>,
    /// Per-rung contraction factors E_{k+1} / E_k (1 when E_k = 0).
    pub contractions: Vec<f64>,
    /// Log-log slope of E_k against R_k; positive means decay as the ball
    /// shrinks. Zero when some rung vanished.
    pub fitted_exponent: f64,
    /// Candidates skipped because their corrector solve failed.
    pub warnings: Vec<String>,
}

/// Excess decay: at each rung the excess is minimized over a grid of
/// candidate slopes xi, each compared through its own corrected plane
/// xi . x + eps phi_xi(x/eps). Minimizing over a superset of candidates can
/// only lower every E_k, so the report is monotone under grid refinement.
/// A corrector failure skips that candidate with a warning.
#[allow(clippy::too_many_arguments)]
pub fn excess_decay(
    u: &Field,
    op: &OperatorSpec,
    tgrid: &TorusGrid,
    tmesh: &Arc<Mesh>,
    tasm: &Assembler,
    center: &Vect,
    r_max: f64,
    epsilon: f64,
    xi_grid: &[Vect],
    theta0: f64,
    cfg: &SolverConfig,
) -> Result<ExcessReport> {
    op.validate()?;
    if !(theta0 > 0.0 && theta0 < 1.0) {
        return Err(Error::invalid(format!("theta0 must lie in (0,1), got {theta0}")));
    }
    if !(epsilon > 0.0 && epsilon <= r_max) {
        return Err(Error::invalid(format!("need 0 < epsilon <= R, got eps={epsilon} R={r_max}")));
    }
    if xi_grid.is_empty() {
        return Err(Error::invalid("excess decay needs at least one candidate slope"));
    }
    require_ball_inside(&u.mesh, center, r_max)?;
    let mut radii = Vec::new();
    let mut r = r_max;
    while r >= epsilon * (1.0 - 1e-12) {
        radii.push(r);
        r *= theta0;
    }
    let mut warnings = Vec::new();
    let mut candidates: Vec<CorrectorSolution> = Vec::new();
    for xi in xi_grid {
        match solve_corrector(op, *xi, tgrid, tmesh, tasm, cfg) {
            Ok(sol) => candidates.push(sol),
            Err(e) => warnings.push(format!("candidate {:?} skipped: {e}", xi.as_slice())),
        }
    }
    if candidates.is_empty() {
        return Err(Error::invalid("every excess-decay candidate corrector failed"));
    }
    // one excess-density field per surviving candidate, reused on all rungs
    let g = gradient(u);
    let params = &op.params;
    let densities: Vec<Field> = candidates
        .iter()
        .map(|sol| {
            let mut f = Field::zeros(&u.mesh, 1, FieldLoc::PerElement);
            for (e, el) in u.mesh.elements.iter().enumerate() {
                let te = tgrid.element_at(&el.centroid.scale(1.0 / epsilon));
                let z = g.vect_at(e) - sol.f_field.vect_at(te);
                f.values[e] = v_sq(&z, params);
            }
            f
        })
        .collect();
    let mut excess = Vec::with_capacity(radii.len());
    let mut minimizers = Vec::with_capacity(radii.len());
    for &rk in &radii {
        let ball = Region::Ball { center: *center, radius: rk };
        let mut best = f64::INFINITY;
        let mut best_xi = candidates[0].xi;
        for (c, dens) in densities.iter().enumerate() {
            let v = grid::mean(dens, &ball)?;
            if v < best {
                best = v;
                best_xi = candidates[c].xi;
            }
        }
        excess.push(best);
        minimizers.push(best_xi);
    }
    let contractions: Vec<f64> = excess
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 1.0 })
        .collect();
    let fitted_exponent = if excess.iter().all(|&e| e > 0.0) && excess.len() >= 2 {
        loglog_fit(&radii, &excess).0
    } else {
        0.0
    };
    Ok(ExcessReport { radii, excess, minimizers, contractions, fitted_exponent, warnings })
}

/// One row of the higher-integrability probe.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct QRatio {
    pub q: f64,
    pub ratio: f64,
}

/// Higher integrability of the effective solution: the L^q mean of
/// mu + |grad u| over the half ball against its L^p mean over the full ball,
/// for each q in the sweep.
pub fn higher_integrability_probe(
    u_effective: &Field,
    center: &Vect,
    radius: f64,
    q_list: &[f64],
    params: &ExponentParams,
) -> Result<Vec<QRatio>> {
    params.validate()?;
    require_ball_inside(&u_effective.mesh, center, radius)?;
    let g = gradient(u_effective);
    let mg = mu_plus_magnitude(&g, params.mu);
    let half = Region::Ball { center: *center, radius: radius / 2.0 };
    let full = Region::Ball { center: *center, radius };
    let denom = lq_norm(&mg, params.p, &full, true)?;
    let mut out = Vec::with_capacity(q_list.len());
    for &q in q_list {
        if q < params.p {
            return Err(Error::invalid(format!("probe exponent q={q} below p={}", params.p)));
        }
        let num = lq_norm(&mg, q, &half, true)?;
        out.push(QRatio { q, ratio: num / denom });
    }
    Ok(out)
}

/// Epsilon-uniformity statistic: max ratio over min ratio across a ladder.
pub fn uniformity(ratios: &[f64]) -> Result<f64> {
    if ratios.is_empty() {
        return Err(Error::invalid("uniformity statistic needs at least one ratio"));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &r in ratios {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!("ratios must be positive and finite, got {r}")));
        }
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(hi / lo)
}

/// Content hash of the resolved experiment configuration; stable ids make
/// report artifacts traceable and reruns byte-comparable.
pub fn experiment_id(resolved_config: &str) -> String {
    let mut h = Sha256::new();
    h.update(resolved_config.as_bytes());
    format!("{:x}", h.finalize())
}

/// Content hash of a solution field (layout header plus raw values), used
/// to tie report rows back to solution artifacts.
pub fn field_digest(f: &Field) -> String {
    let mut h = Sha256::new();
    h.update((f.rank as u64).to_le_bytes());
    h.update((f.values.len() as u64).to_le_bytes());
    for v in &f.values {
        h.update(v.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

/// One epsilon rung of a regularity experiment.
#[derive(Clone, Debug, Serialize)]
pub struct EpsEntry {
    pub epsilon: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// Hash of the solution field this measurement was taken on.
    pub artifact: String,
}

/// Assembled regularity experiment: the epsilon ladder of measured sides and
/// ratios, an optional radius profile, fitted exponents, and the uniformity
/// statistic.
#[derive(Clone, Debug, Serialize)]
pub struct RegularityReport {
    pub experiment_id: String,
    pub operator: String,
    pub entries: Vec<EpsEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<RadiiProfile>,
    pub fitted_exponents: Vec<f64>,
    pub uniformity: f64,
}

impl RegularityReport {
    pub fn new(
        experiment_id: String,
        operator: String,
        entries: Vec<EpsEntry>,
        profile: Option<RadiiProfile>,
        fitted_exponents: Vec<f64>,
    ) -> Result<RegularityReport> {
        for w in entries.windows(2) {
            if !(w[1].epsilon < w[0].epsilon) {
                return Err(Error::invalid("epsilon ladder must be strictly decreasing"));
            }
        }
        let ratios: Vec<f64> = entries.iter().map(|e| e.ratio).collect();
        let uniformity = uniformity(&ratios)?;
        Ok(RegularityReport { experiment_id, operator, entries, profile, fitted_exponents, uniformity })
    }

    /// CSV columns: epsilon, lhs, rhs, ratio, uniformity, artifact.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["epsilon", "lhs", "rhs", "ratio", "uniformity", "artifact"])
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        for r in &self.entries {
            wr.write_record([
                format!("{:.17e}", r.epsilon),
                format!("{:.17e}", r.lhs),
                format!("{:.17e}", r.rhs),
                format!("{:.17e}", r.ratio),
                format!("{:.17e}", self.uniformity),
                r.artifact.clone(),
            ])
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DirichletMesh, DomainShape};
    use crate::operators::{CoefficientField, Family};
    use approx::assert_abs_diff_eq;

    fn unit_square(m: usize) -> Arc<Mesh> {
        Arc::new(
            DirichletMesh::new(DomainShape::Square { center: [0.5, 0.5], half_width: 0.5 }, m)
                .unwrap()
                .mesh,
        )
    }

    fn ball_center() -> Vect {
        Vect::new2(0.5, 0.5)
    }

    #[test]
    fn cz_ratio_trivial_cases() {
        let mesh = unit_square(32);
        let params = ExponentParams::new(3.0, 1.0);
        let c = ball_center();
        // u = x1: mu + |grad u| = 2 everywhere, both sides equal
        let u = Field::nodal_scalar(&mesh, |p| p[0]);
        for q in [3.0, 4.5, 6.0] {
            let r = cz_ratio(&u, None, &c, 0.4, q, &params).unwrap();
            assert_abs_diff_eq!(r, 1.0, epsilon = 1e-12);
        }
        // constant u: both sides equal mu
        let uc = Field::nodal_scalar(&mesh, |_| 4.0);
        let (l, r) = cz_sides(&uc, None, &c, 0.4, 6.0, &params).unwrap();
        assert_abs_diff_eq!(l, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-12);
        // preconditions
        assert!(cz_ratio(&u, None, &c, 0.4, 2.0, &params).is_err());
        assert!(cz_ratio(&u, None, &c, 0.8, 6.0, &params).is_err());
    }

    #[test]
    fn cz_ratio_shift_and_scaling_invariance() {
        let mesh = unit_square(32);
        let c = ball_center();
        let u = Field::nodal_scalar(&mesh, |p| (3.0 * p[0]).sin() + p[1] * p[1]);
        let params = ExponentParams::new(3.0, 1.0);
        let base = cz_ratio(&u, None, &c, 0.4, 6.0, &params).unwrap();
        // adding a constant never changes a gradient measurement
        let mut shifted = u.clone();
        for v in &mut shifted.values {
            *v += 7.25;
        }
        let r2 = cz_ratio(&shifted, None, &c, 0.4, 6.0, &params).unwrap();
        // exact up to roundoff of the gradient stencil
        assert_abs_diff_eq!(base, r2, epsilon = 1e-13);
        // p-homogeneous scaling with mu = 0: u -> lambda u, F -> lambda^(p-1) F
        let p0 = ExponentParams::new(3.0, 0.0);
        let mut f_load = Field::zeros(&mesh, 2, FieldLoc::PerElement);
        for e in 0..mesh.elements.len() {
            f_load.values[2 * e] = 0.3 + mesh.elements[e].centroid[0];
            f_load.values[2 * e + 1] = 0.1;
        }
        let base0 = cz_ratio(&u, Some(&f_load), &c, 0.4, 6.0, &p0).unwrap();
        for lam in [2.0, 10.0] {
            let mut ul = u.clone();
            for v in &mut ul.values {
                *v *= lam;
            }
            let mut fl = f_load.clone();
            for v in &mut fl.values {
                *v *= lam.powf(p0.p - 1.0);
            }
            let rl = cz_ratio(&ul, Some(&fl), &c, 0.4, 6.0, &p0).unwrap();
            assert_abs_diff_eq!(rl, base0, epsilon = 1e-12 * base0.abs());
        }
    }

    #[test]
    fn large_scale_cz_constant_gradient_and_degenerate_ladder() {
        let mesh = unit_square(32);
        let params = ExponentParams::new(3.0, 1.0);
        let c = ball_center();
        let u = Field::nodal_scalar(&mesh, |p| p[0]);
        // indicator localization shrinks averages, so M_eps(1_B |grad u|^p)
        // never exceeds 1 while the RHS is (mu + 1)^p >= 1
        let r = large_scale_cz_ratio(&u, None, &c, 0.4, 6.0, 0.05, &params).unwrap();
        assert!(r <= 1.0 + 1e-12, "got {r}");
        // epsilon = R collapses every maximal ladder to one global average;
        // the ratio is still finite and positive
        let rd = large_scale_cz_ratio(&u, None, &c, 0.4, 6.0, 0.4, &params).unwrap();
        assert!(rd.is_finite() && rd > 0.0, "got {rd}");
    }

    #[test]
    fn lipschitz_profile_trivial_and_degenerate() {
        let mesh = unit_square(32);
        let params = ExponentParams::new(3.0, 1.0);
        let c = ball_center();
        let u = Field::nodal_scalar(&mesh, |p| p[0]);
        let prof = lipschitz_profile(&u, &c, 0.4, 0.05, &params).unwrap();
        assert_abs_diff_eq!(prof.values[0], 1.0, epsilon = 0.0);
        for v in &prof.values {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
        assert!(!prof.degenerate);
        assert!(prof.input_m.unwrap() > 0.0);
        assert!(prof.radii.windows(2).all(|w| w[1] < w[0]));
        assert_abs_diff_eq!(*prof.radii.last().unwrap(), 0.05, epsilon = 0.0);
        // constant solution: every rung is 0/0, reported as 1 and flagged
        let uc = Field::nodal_scalar(&mesh, |_| 2.0);
        let pc = lipschitz_profile(&uc, &c, 0.4, 0.05, &params).unwrap();
        assert!(pc.degenerate);
        assert!(pc.values.iter().all(|&v| v == 1.0));
        assert_abs_diff_eq!(pc.input_m.unwrap(), 0.0, epsilon = 0.0);
    }

    #[test]
    fn holder_profile_constant_gradient() {
        let mesh = unit_square(32);
        let params = ExponentParams::new(3.0, 1.0);
        let c = ball_center();
        let u = Field::nodal_scalar(&mesh, |p| p[0] + 0.5 * p[1]);
        let prof = holder_profile(&u, &c, 0.4, 0.05, 6.0, &params, None).unwrap();
        // constant gradient: profile proportional to (r/R)^(n/q), so it is
        // strictly decreasing along the descending ladder with sup at r = R
        for w in prof.values.windows(2) {
            assert!(w[1] < w[0], "profile not decreasing: {w:?}");
        }
        assert_abs_diff_eq!(prof.supremum, prof.values[0], epsilon = 0.0);
        // q -> infinity proxy: the radius weight is nearly flat and the
        // profile approaches the constant ratio |grad u| / (mu + |grad u|)
        let flat = holder_profile(&u, &c, 0.4, 0.05, 64.0 * 3.0, &params, None).unwrap();
        let g = 1.25f64.sqrt();
        let expect = g / (1.0 + g);
        for v in &flat.values {
            assert!((v - expect).abs() < 0.02, "got {v}, expect ~{expect}");
        }
    }

    #[test]
    fn excess_decay_constant_coefficient_plane() {
        let mesh = unit_square(32);
        let params = ExponentParams::new(3.0, 1.0);
        let op = OperatorSpec::new(
            Family::RegularizedPLaplace,
            CoefficientField::constant(1.0),
            params,
        );
        let tgrid = TorusGrid::new(2, 8).unwrap();
        let tmesh = Arc::new(tgrid.mesh.clone());
        let tasm = Assembler::new(&tmesh);
        let cfg = SolverConfig::default();
        let u = Field::nodal_scalar(&mesh, |p| p[0]);
        let c = ball_center();
        let coarse = [Vect::new2(1.0, 0.0), Vect::new2(0.0, 1.0)];
        let rep = excess_decay(
            &u, &op, &tgrid, &tmesh, &tasm, &c, 0.4, 0.05, &coarse, 0.5, &cfg,
        )
        .unwrap();
        // the constant-coefficient corrector vanishes, so xi = e1 matches
        // grad u exactly on every rung
        assert!(rep.warnings.is_empty());
        for (k, &e) in rep.excess.iter().enumerate() {
            assert!(e < 1e-18, "rung {k}: {e}");
            assert_abs_diff_eq!(rep.minimizers[k][0], 1.0, epsilon = 0.0);
        }
        // refinement monotonicity: a superset of candidates can only lower
        // E_k (here from an off-plane starting grid)
        let u2 = Field::nodal_scalar(&mesh, |p| p[0] + 0.1 * (4.0 * p[1]).sin());
        let small = [Vect::new2(0.5, 0.0)];
        let big = [Vect::new2(0.5, 0.0), Vect::new2(1.0, 0.0), Vect::new2(1.0, 0.1)];
        let rs = excess_decay(&u2, &op, &tgrid, &tmesh, &tasm, &c, 0.4, 0.05, &small, 0.5, &cfg)
            .unwrap();
        let rb = excess_decay(&u2, &op, &tgrid, &tmesh, &tasm, &c, 0.4, 0.05, &big, 0.5, &cfg)
            .unwrap();
        for (a, b) in rs.excess.iter().zip(&rb.excess) {
            assert!(b <= a, "refined grid raised the excess: {b} > {a}");
        }
        assert!(rb.excess.iter().all(|&e| e > 0.0));
        assert_eq!(rs.contractions.len(), rs.excess.len() - 1);
    }

    #[test]
    fn higher_integrability_trivial_cases() {
        let mesh = unit_square(32);
        let params = ExponentParams::new(3.0, 1.0);
        let c = ball_center();
        let u = Field::nodal_scalar(&mesh, |p| 2.0 * p[0] - p[1]);
        let rows = higher_integrability_probe(&u, &c, 0.4, &[3.0, 6.0, 12.0], &params).unwrap();
        for row in &rows {
            assert_abs_diff_eq!(row.ratio, 1.0, epsilon = 1e-12);
        }
        // q = p containment bound for a non-affine field
        let v = Field::nodal_scalar(&mesh, |p| (5.0 * p[0]).sin() * p[1]);
        let rows = higher_integrability_probe(&v, &c, 0.4, &[3.0], &params).unwrap();
        assert!(rows[0].ratio <= 2f64.powf(2.0 / 3.0) + 1e-12, "got {}", rows[0].ratio);
        assert!(higher_integrability_probe(&v, &c, 0.4, &[2.0], &params).is_err());
    }

    #[test]
    fn report_invariants_and_hashes() {
        let entry = |eps: f64, ratio: f64| EpsEntry {
            epsilon: eps,
            lhs: ratio,
            rhs: 1.0,
            ratio,
            artifact: "deadbeef".into(),
        };
        let rep = RegularityReport::new(
            experiment_id("config-a"),
            "op".into(),
            vec![entry(0.125, 1.2), entry(0.0625, 1.5), entry(0.03125, 0.9)],
            None,
            vec![0.5],
        )
        .unwrap();
        assert_abs_diff_eq!(rep.uniformity, 1.5 / 0.9, epsilon = 1e-15);
        // non-decreasing ladder and non-positive ratios are rejected
        assert!(RegularityReport::new(
            "id".into(),
            "op".into(),
            vec![entry(0.0625, 1.0), entry(0.125, 1.0)],
            None,
            vec![],
        )
        .is_err());
        assert!(uniformity(&[1.0, -0.5]).is_err());
        // ids and artifact hashes are deterministic content hashes
        assert_eq!(experiment_id("x"), experiment_id("x"));
        assert_ne!(experiment_id("x"), experiment_id("y"));
        let mesh = unit_square(8);
        let f = Field::nodal_scalar(&mesh, |p| p[0]);
        assert_eq!(field_digest(&f), field_digest(&f.clone()));
        let mut csv_out = Vec::new();
        rep.write_csv(&mut csv_out).unwrap();
        let text = String::from_utf8(csv_out).unwrap();
        assert!(text.starts_with("epsilon,lhs,rhs,ratio,uniformity,artifact"));
        assert_eq!(text.lines().count(), 4);
    }
}
