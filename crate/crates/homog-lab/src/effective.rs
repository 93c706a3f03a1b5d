//! The homogenized operator: pointwise evaluation, polar-grid tabulation,
//! interpolation, and the structure checks it inherits from the cell problem.
//!
//! abar(xi) is the quadrature mean of the corrector's flux field, computed
//! through the exact same path as CorrectorSolution::mean_flux, so the two
//! agree bit for bit.

use crate::cell::{solve_corrector, CorrectorSolution, SolverConfig};
use crate::error::{Error, Result};
use crate::grid::{Mesh, TorusGrid};
use crate::operators::OperatorSpec;
use crate::params::powf_guarded;
use crate::solver::Assembler;
use crate::vect::Vect;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableEntry {
    pub xi: Vect,
    pub abar: Vect,
    pub residual: f64,
    pub iterations: usize,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EffectiveTable {
    pub operator: String,
    pub p: f64,
    pub mu: f64,
    /// Log-spaced magnitudes, ascending.
    pub magnitudes: Vec<f64>,
    /// Uniform direction angles in [0, 2 pi), ascending (2D).
    pub angles: Vec<f64>,
    /// Entries in magnitude-major order: entries[m * angles + a].
    pub entries: Vec<TableEntry>,
}

/// Compute abar(xi) from a fresh corrector solve.
pub fn abar(
    op: &OperatorSpec,
    xi: Vect,
    grid: &TorusGrid,
    mesh: &Arc<Mesh>,
    asm: &Assembler,
    cfg: &SolverConfig,
) -> Result<Vect> {
    if xi.norm() == 0.0 {
        // a(y, 0) = 0 forces phi = 0 and a zero mean flux; no solve needed
        return Ok(Vect::zeros(mesh.dim));
    }
    let sol = solve_corrector(op, xi, grid, mesh, asm, cfg)?;
    Ok(sol.mean_flux)
}

/// Polar xi-grid used by `tabulate`.
pub fn polar_grid(n_mags: usize, n_dirs: usize, mag_lo: f64, mag_hi: f64) -> (Vec<f64>, Vec<f64>) {
    let mags: Vec<f64> = (0..n_mags)
        .map(|i| {
            if n_mags == 1 {
                mag_lo
            } else {
                (mag_lo.ln() + (mag_hi.ln() - mag_lo.ln()) * i as f64 / (n_mags - 1) as f64).exp()
            }
        })
        .collect();
    let angles: Vec<f64> = (0..n_dirs)
        .map(|a| 2.0 * std::f64::consts::PI * a as f64 / n_dirs as f64)
        .collect();
    (mags, angles)
}

pub fn tabulate(
    op: &OperatorSpec,
    n_mags: usize,
    n_dirs: usize,
    grid: &TorusGrid,
    mesh: &Arc<Mesh>,
    asm: &Assembler,
    cfg: &SolverConfig,
) -> Result<EffectiveTable> {
    if n_mags == 0 || n_dirs == 0 {
        return Err(Error::invalid("tabulate needs a nonempty xi grid"));
    }
    let (magnitudes, angles) = polar_grid(n_mags, n_dirs, 1e-2, 1e2);
    let mut entries = Vec::with_capacity(n_mags * n_dirs);
    for &r in &magnitudes {
        for &th in &angles {
            let xi = Vect::new2(r * th.cos(), r * th.sin());
            match solve_corrector(op, xi, grid, mesh, asm, cfg) {
                Ok(sol) => entries.push(TableEntry {
                    xi,
                    abar: sol.mean_flux,
                    residual: sol.residual_norm,
                    iterations: sol.iterations,
                    ok: true,
                }),
                Err(_) => entries.push(TableEntry {
                    xi,
                    abar: Vect::zeros(2),
                    residual: f64::NAN,
                    iterations: 0,
                    ok: false,
                }),
            }
        }
    }
    Ok(EffectiveTable {
        operator: op.digest(),
        p: op.params.p,
        mu: op.params.mu,
        magnitudes,
        angles,
        entries,
    })
}

impl EffectiveTable {
    pub fn entry(&self, m: usize, a: usize) -> &TableEntry {
        &self.entries[m * self.angles.len() + a]
    }

    /// Direction-magnitude bilinear interpolation on the polar grid, exact
    /// at grid nodes. Outside the magnitude range the outermost (innermost)
    /// ring is extrapolated (p-1)-homogeneously. xi = 0 maps to 0.
    pub fn interpolate(&self, xi: &Vect) -> Vect {
        let r = xi.norm();
        if r == 0.0 {
            return Vect::zeros(2);
        }
        let th = xi[1].atan2(xi[0]).rem_euclid(2.0 * std::f64::consts::PI);
        let na = self.angles.len();
        let dth = 2.0 * std::f64::consts::PI / na as f64;
        let fa = th / dth;
        let a0 = (fa.floor() as usize) % na;
        let a1 = (a0 + 1) % na;
        let wa = fa - fa.floor();
        let rlo = self.magnitudes[0];
        let rhi = *self.magnitudes.last().unwrap();
        // clamp into the tabulated magnitude range, remember the scaling
        let (rc, scale) = if r < rlo {
            (rlo, powf_guarded(r / rlo, self.p - 1.0))
        } else if r > rhi {
            (rhi, (r / rhi).powf(self.p - 1.0))
        } else {
            (r, 1.0)
        };
        let nm = self.magnitudes.len();
        let lr = rc.ln();
        let mut m0 = 0;
        while m0 + 2 < nm && self.magnitudes[m0 + 1].ln() <= lr {
            m0 += 1;
        }
        let m1 = (m0 + 1).min(nm - 1);
        let (l0, l1) = (self.magnitudes[m0].ln(), self.magnitudes[m1].ln());
        let wm = if l1 > l0 { ((lr - l0) / (l1 - l0)).clamp(0.0, 1.0) } else { 0.0 };
        // radially normalized by r^(p-1): exact in r when abar is
        // (p-1)-homogeneous, and exact at grid nodes in general
        let mut out = Vect::zeros(2);
        for (mi, wmag) in [(m0, 1.0 - wm), (m1, wm)] {
            for (ai, wang) in [(a0, 1.0 - wa), (a1, wa)] {
                let e = self.entry(mi, ai);
                let radial = (rc / self.magnitudes[mi]).powf(self.p - 1.0);
                out += e.abar.scale(wmag * wang * radial);
            }
        }
        out.scale(scale)
    }

    /// Finite-difference Jacobian of the interpolant (relative step 1e-6),
    /// symmetrized for use as a Newton tangent.
    pub fn fd_jacobian(&self, xi: &Vect) -> crate::vect::SmallMat {
        let h = 1e-6 * (1.0 + xi.norm());
        let mut m = crate::vect::SmallMat::zeros(2);
        for j in 0..2 {
            let mut xp = *xi;
            xp[j] += h;
            let mut xm = *xi;
            xm[j] -= h;
            let d = (self.interpolate(&xp) - self.interpolate(&xm)).scale(0.5 / h);
            for i in 0..2 {
                m.set(i, j, d[i]);
            }
        }
        // symmetrize so CG sees a symmetric tangent
        let s = 0.5 * (m.get(0, 1) + m.get(1, 0));
        m.set(0, 1, s);
        m.set(1, 0, s);
        m
    }
}

/// Structure inequalities checked on tabulated pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectiveCheck {
    Growth,
    Monotone,
    Continuity,
    DualMonotone,
}

pub const ALL_EFFECTIVE_CHECKS: [EffectiveCheck; 4] = [
    EffectiveCheck::Growth,
    EffectiveCheck::Monotone,
    EffectiveCheck::Continuity,
    EffectiveCheck::DualMonotone,
];

impl EffectiveCheck {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "growth" => Self::Growth,
            "monotone" => Self::Monotone,
            "continuity" => Self::Continuity,
            "dual-monotone" => Self::DualMonotone,
            _ => return Err(Error::invalid(format!("unknown effective check '{s}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Growth => "growth",
            Self::Monotone => "monotone",
            Self::Continuity => "continuity",
            Self::DualMonotone => "dual-monotone",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StructureReport {
    pub check: String,
    pub fitted_constant: f64,
    pub cap: f64,
    pub holds: bool,
    /// Pair of xi values attaining the fitted constant.
    pub witness: Option<(Vect, Vect)>,
}

/// Fit the structure constants over all tabulated pairs (no re-solving).
pub fn check_effective_structure(
    table: &EffectiveTable,
    checks: &[EffectiveCheck],
    cap: f64,
) -> Result<Vec<StructureReport>> {
    let good: Vec<&TableEntry> = table.entries.iter().filter(|e| e.ok).collect();
    if good.len() < 2 {
        return Err(Error::invalid("structure checks need at least 2 successful entries"));
    }
    let p = table.p;
    let mu = table.mu;
    let pc = p / (p - 1.0);
    let ratio = |num: f64, den: f64| {
        if num <= 0.0 {
            0.0
        } else if den <= 0.0 {
            f64::INFINITY
        } else {
            num / den
        }
    };
    let mut out = Vec::new();
    for &check in checks {
        let mut fitted = 0.0f64;
        let mut witness = None;
        for (i, e1) in good.iter().enumerate() {
            // growth is a single-entry check; pair checks start at j > i
            if check == EffectiveCheck::Growth {
                let den = powf_guarded(mu + e1.xi.norm(), p - 1.0);
                let c = ratio(e1.abar.norm(), den);
                if c > fitted {
                    fitted = c;
                    witness = Some((e1.xi, e1.xi));
                }
                continue;
            }
            for e2 in good.iter().skip(i + 1) {
                let dxi = e1.xi - e2.xi;
                let da = e1.abar - e2.abar;
                let inner = da.dot(&dxi);
                let c = match check {
                    EffectiveCheck::Monotone => {
                        let d = dxi.norm();
                        ratio(powf_guarded(mu + d, p - 2.0) * d * d, inner)
                    }
                    EffectiveCheck::Continuity => {
                        let d = dxi.norm();
                        let den = if p >= 2.0 {
                            powf_guarded(mu + e1.xi.norm() + e2.xi.norm(), p - 2.0) * d
                        } else {
                            powf_guarded(mu + d, p - 2.0) * d
                        };
                        ratio(da.norm(), den)
                    }
                    EffectiveCheck::DualMonotone => {
                        let dan = da.norm();
                        let mup = powf_guarded(mu, p - 1.0);
                        let den = if p >= 2.0 {
                            powf_guarded(mup + e1.abar.norm() + e2.abar.norm(), pc - 2.0)
                                * dan
                                * dan
                        } else {
                            powf_guarded(mup + dan, pc - 2.0) * dan * dan
                        };
                        ratio(den, inner)
                    }
                    EffectiveCheck::Growth => unreachable!(),
                };
                if c > fitted {
                    fitted = c;
                    witness = Some((e1.xi, e2.xi));
                }
            }
        }
        out.push(StructureReport {
            check: check.name().to_string(),
            fitted_constant: fitted,
            cap,
            holds: fitted.is_finite() && fitted <= cap,
            witness,
        });
    }
    Ok(out)
}

/// Realized ratio of the corrector-difference estimate: for mu = 1,
/// ||V_p(grad phi_1 - grad phi_2)||_{L^2}^2 against the p-dependent
/// right-hand side built from <abar(xi1) - abar(xi2), xi1 - xi2>.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectorDifferenceReport {
    pub xi1: Vect,
    pub xi2: Vect,
    pub left: f64,
    pub right: f64,
    pub ratio: f64,
}

pub fn corrector_difference_check(
    op: &OperatorSpec,
    xi1: Vect,
    xi2: Vect,
    grid: &TorusGrid,
    mesh: &Arc<Mesh>,
    asm: &Assembler,
    cfg: &SolverConfig,
) -> Result<CorrectorDifferenceReport> {
    let p = op.params.p;
    let mu = op.params.mu;
    let s1 = solve_corrector(op, xi1, grid, mesh, asm, cfg)?;
    let s2 = solve_corrector(op, xi2, grid, mesh, asm, cfg)?;
    let left = v_gradient_distance_sq(&s1, &s2, p);
    let da = s1.mean_flux - s2.mean_flux;
    let dxi = xi1 - xi2;
    let inner = da.dot(&dxi).max(0.0);
    // Corollary 4.8 shape: for p >= 2 the duality pairing itself; for p < 2
    // it carries the (mu + |xi1| + |xi2|)^(2-p) weight
    let right = if p >= 2.0 {
        inner
    } else {
        inner * powf_guarded(mu + xi1.norm() + xi2.norm(), 2.0 - p)
    };
    let ratio = if right > 0.0 { left / right } else { 0.0 };
    Ok(CorrectorDifferenceReport { xi1, xi2, left, right, ratio })
}

fn v_gradient_distance_sq(s1: &CorrectorSolution, s2: &CorrectorSolution, p: f64) -> f64 {
    let mesh = &s1.phi.mesh;
    let dim = mesh.dim;
    let vp = crate::params::ExponentParams::new(p, 1.0);
    let mut acc = 0.0;
    for (e, el) in mesh.elements.iter().enumerate() {
        let mut d = Vect::zeros(dim);
        for c in 0..dim {
            // difference of corrector gradients = difference of F fields
            // minus the difference of the xi offsets
            d[c] = (s1.f_field.get(e, c) - s1.xi[c]) - (s2.f_field.get(e, c) - s2.xi[c]);
        }
        let v = crate::vcalc::v_eval(&d, &vp).expect("finite corrector gradients");
        acc += el.vol * v.dot(&v);
    }
    acc / mesh.volume
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{CoefficientField, Family};
    use crate::params::ExponentParams;

    fn setup(cells: usize) -> (TorusGrid, Arc<Mesh>, Assembler) {
        let g = TorusGrid::new(2, cells).unwrap();
        let mesh = Arc::new(g.mesh.clone());
        let asm = Assembler::new(&mesh);
        (g, mesh, asm)
    }

    #[test]
    fn constant_coefficient_closed_form() {
        let (g, mesh, asm) = setup(8);
        let op = OperatorSpec::new(
            Family::PLaplace,
            CoefficientField::constant(2.0),
            ExponentParams::new(3.0, 0.0),
        );
        let cfg = SolverConfig::default();
        let xi = Vect::new2(0.6, -0.8);
        let a = abar(&op, xi, &g, &mesh, &asm, &cfg).unwrap();
        let exact = xi.scale(2.0 * xi.norm());
        assert!((a - exact).norm() < 1e-9, "abar {:?}", a.as_slice());
        assert_eq!(abar(&op, Vect::zeros(2), &g, &mesh, &asm, &cfg).unwrap().norm(), 0.0);
    }

    #[test]
    fn linear_laminate_tensor() {
        // classical closed form: harmonic mean along the lamination,
        // arithmetic mean across
        let (g, mesh, asm) = setup(32);
        let op = OperatorSpec::new(
            Family::LinearMatrix,
            CoefficientField::half_laminate(1.0, 4.0),
            ExponentParams::new(2.0, 0.0),
        );
        let cfg = SolverConfig::default();
        let a1 = abar(&op, Vect::basis(2, 0), &g, &mesh, &asm, &cfg).unwrap();
        let a2 = abar(&op, Vect::basis(2, 1), &g, &mesh, &asm, &cfg).unwrap();
        assert!((a1[0] - 1.6).abs() < 1e-8 && a1[1].abs() < 1e-8);
        assert!((a2[1] - 2.5).abs() < 1e-8 && a2[0].abs() < 1e-8);
    }

    #[test]
    fn oddness_and_homogeneity() {
        let (g, mesh, asm) = setup(16);
        let op = OperatorSpec::new(
            Family::PLaplace,
            CoefficientField::half_laminate(1.0, 8.0),
            ExponentParams::new(3.0, 0.0),
        );
        let cfg = SolverConfig::default();
        let xi = Vect::new2(1.0, 0.4);
        let a = abar(&op, xi, &g, &mesh, &asm, &cfg).unwrap();
        let am = abar(&op, -xi, &g, &mesh, &asm, &cfg).unwrap();
        assert!((a + am).norm() < 1e-7 * a.norm(), "oddness violated");
        for lam in [2.0, 10.0] {
            let al = abar(&op, xi.scale(lam), &g, &mesh, &asm, &cfg).unwrap();
            let pred = a.scale(lam.powf(op.params.p - 1.0));
            assert!(
                (al - pred).norm() < 1e-6 * pred.norm(),
                "homogeneity at lambda {lam}: {:?} vs {:?}",
                al.as_slice(),
                pred.as_slice()
            );
        }
    }

    #[test]
    fn interpolant_consistency() {
        let (g, mesh, asm) = setup(8);
        let op = OperatorSpec::new(
            Family::PLaplace,
            CoefficientField::constant(1.0),
            ExponentParams::new(3.0, 0.0),
        );
        let cfg = SolverConfig::default();
        let table = tabulate(&op, 8, 16, &g, &mesh, &asm, &cfg).unwrap();
        assert!(table.entries.iter().all(|e| e.ok));
        // exact at grid nodes
        let e = table.entry(3, 2);
        let v = table.interpolate(&e.xi);
        assert!((v - e.abar).norm() <= 1e-12 * (1.0 + e.abar.norm()));
        // off-node accuracy against the closed form, including the
        // homogeneous extrapolation beyond the outer ring
        for xi in [Vect::new2(0.37, 0.12), Vect::new2(-1.4, 2.2), Vect::new2(150.0, 40.0)] {
            let exact = xi.scale(xi.norm());
            let got = table.interpolate(&xi);
            let rel = (got - exact).norm() / exact.norm();
            assert!(rel < 0.02, "xi {:?}: rel error {rel}", xi.as_slice());
        }
        assert_eq!(table.interpolate(&Vect::zeros(2)).norm(), 0.0);
    }

    #[test]
    fn structure_checks_linear_table() {
        let (g, mesh, asm) = setup(16);
        let op = OperatorSpec::new(
            Family::LinearMatrix,
            CoefficientField::half_laminate(1.0, 4.0),
            ExponentParams::new(2.0, 0.0),
        );
        let cfg = SolverConfig::default();
        let table = tabulate(&op, 4, 8, &g, &mesh, &asm, &cfg).unwrap();
        let reps = check_effective_structure(&table, &ALL_EFFECTIVE_CHECKS, 10.0).unwrap();
        for r in &reps {
            assert!(r.holds, "{} fitted {}", r.check, r.fitted_constant);
        }
        // continuity constant bounded by the largest eigenvalue 2.5 (+1%)
        let cont = reps.iter().find(|r| r.check == "continuity").unwrap();
        assert!(cont.fitted_constant <= 2.5 * 1.01, "fitted {}", cont.fitted_constant);
        // strict monotonicity across all tabulated pairs
        let good: Vec<_> = table.entries.iter().filter(|e| e.ok).collect();
        for (i, e1) in good.iter().enumerate() {
            for e2 in good.iter().skip(i + 1) {
                let inner = (e1.abar - e2.abar).dot(&(e1.xi - e2.xi));
                if (e1.xi - e2.xi).norm() > 1e-12 {
                    assert!(inner > 0.0);
                }
            }
        }
    }

    #[test]
    fn unknown_check_rejected() {
        assert!(EffectiveCheck::parse("growth").is_ok());
        assert!(EffectiveCheck::parse("no-such-check").is_err());
    }

    #[test]
    fn corrector_difference_trivial_and_stable() {
        let (g, mesh, asm) = setup(16);
        let op = OperatorSpec::new(
            Family::RegularizedPLaplace,
            CoefficientField::half_laminate(1.0, 8.0),
            ExponentParams::new(3.0, 1.0),
        );
        let cfg = SolverConfig::default();
        let xi = Vect::basis(2, 0);
        let rep = corrector_difference_check(&op, xi, xi, &g, &mesh, &asm, &cfg).unwrap();
        assert!(rep.left < 1e-14);
        // pairs along e1 with varying separation: bounded, stable ratios
        let mut ratios = Vec::new();
        for d in [1e-2, 1e-1, 1.0] {
            let rep = corrector_difference_check(
                &op,
                xi,
                Vect::new2(1.0 + d, 0.0),
                &g,
                &mesh,
                &asm,
                &cfg,
            )
            .unwrap();
            assert!(rep.ratio.is_finite());
            ratios.push(rep.ratio);
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min).max(1e-12);
        let hi = ratios.iter().cloned().fold(0.0f64, f64::max);
        assert!(hi / lo < 4.0, "ratios {ratios:?}");
    }
}
