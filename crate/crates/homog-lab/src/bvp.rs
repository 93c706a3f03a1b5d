//! Dirichlet boundary-value solvers on squares and disks: the eps-oscillating
//! equation div a(x/eps, grad u) = div F and the effective equation
//! div abar(grad u) = div F, plus the energy/Caccioppoli/Meyers audit that
//! measures realized constants on solution fields.
//!
//! The Newton line search only accepts residual-decreasing iterates, so the
//! discrete residual norm is monotone along the accepted path by
//! construction.

use crate::effective::EffectiveTable;
use crate::error::{Error, Result};
use crate::grid::{self, DirichletMesh, DomainShape, Field, FieldLoc, Mesh, Region};
use crate::operators::OperatorSpec;
use crate::params::{powf_guarded, ExponentParams};
use crate::solver::{
    solve_quasilinear, solve_quasilinear_warm, Assembler, Bc, FluxModel, ProblemSetup,
    SolveOptions, SolveStats,
};
use crate::vect::{SmallMat, Vect};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Closed-form boundary data tags; evaluated at boundary nodes, also used to
/// seed the Newton iterate in the interior.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundaryData {
    Constant { value: f64 },
    Affine { slope: Vec<f64>, offset: f64 },
    /// amplitude * sin(pi k1 x1) * sin(pi k2 x2)
    Trig { amplitude: f64, modes: Vec<f64> },
}

impl BoundaryData {
    pub fn eval(&self, x: &Vect) -> f64 {
        match self {
            BoundaryData::Constant { value } => *value,
            BoundaryData::Affine { slope, offset } => {
                let mut s = *offset;
                for (i, a) in slope.iter().enumerate() {
                    s += a * x[i];
                }
                s
            }
            BoundaryData::Trig { amplitude, modes } => {
                let mut s = *amplitude;
                for (i, k) in modes.iter().enumerate() {
                    s *= (std::f64::consts::PI * k * x[i]).sin();
                }
                s
            }
        }
    }
}

/// One Dirichlet problem: domain, mesh resolution, oscillation scale, and
/// boundary data. The mesh is built once and shared by all solves.
pub struct BVProblem {
    pub domain: DomainShape,
    pub epsilon: f64,
    pub cells_per_period: usize,
    pub g: BoundaryData,
    pub mesh: Arc<Mesh>,
    pub h: f64,
}

impl BVProblem {
    pub fn new(
        domain: DomainShape,
        m: usize,
        epsilon: f64,
        cells_per_period: usize,
        g: BoundaryData,
    ) -> Result<BVProblem> {
        if epsilon <= 0.0 {
            return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
        }
        let dm = DirichletMesh::new(domain, m)?;
        let h = dm.h();
        if epsilon / h + 1e-9 < cells_per_period as f64 {
            return Err(Error::invalid(format!(
                "mesh does not resolve epsilon: {:.3} cells per period < required {}",
                epsilon / h,
                cells_per_period
            )));
        }
        Ok(BVProblem { domain, epsilon, cells_per_period, g, mesh: Arc::new(dm.mesh), h })
    }

    /// g evaluated at every node: Dirichlet data on the boundary, Newton seed
    /// in the interior.
    pub fn boundary_field(&self) -> Field {
        let g = &self.g;
        Field::nodal_scalar(&self.mesh, |x| g.eval(x))
    }
}

/// Solve the oscillating problem div a(x/eps, grad u) = f + div F.
pub fn solve_oscillating(
    prob: &BVProblem,
    op: &OperatorSpec,
    rhs_f: Option<&Field>,
    rhs_div: Option<&Field>,
    opts: &SolveOptions,
) -> Result<(Field, SolveStats)> {
    op.validate()?;
    let asm = Assembler::new(&prob.mesh);
    let setup = ProblemSetup {
        mesh: &prob.mesh,
        op,
        y_scale: 1.0 / prob.epsilon,
        xi_offset: Vect::zeros(prob.mesh.dim),
        rhs_f,
        rhs_div,
        bc: Bc::Dirichlet,
    };
    let init = prob.boundary_field().values;
    solve_quasilinear(&setup, &asm, Some(init), opts)
}

/// Warm-started oscillating solve: `warm` is an interior initial iterate
/// (for instance a prolonged coarse solution); its boundary entries are
/// overwritten with the exact Dirichlet data before solving. The convergence
/// target matches a cold solve of the same problem.
pub fn solve_oscillating_warm(
    prob: &BVProblem,
    op: &OperatorSpec,
    rhs_f: Option<&Field>,
    rhs_div: Option<&Field>,
    mut warm: Vec<f64>,
    opts: &SolveOptions,
) -> Result<(Field, SolveStats)> {
    op.validate()?;
    let asm = Assembler::new(&prob.mesh);
    let setup = ProblemSetup {
        mesh: &prob.mesh,
        op,
        y_scale: 1.0 / prob.epsilon,
        xi_offset: Vect::zeros(prob.mesh.dim),
        rhs_f,
        rhs_div,
        bc: Bc::Dirichlet,
    };
    let cold = prob.boundary_field().values;
    if warm.len() != cold.len() {
        return Err(Error::invalid("warm start length does not match the mesh"));
    }
    for &b in &prob.mesh.boundary_nodes {
        warm[b] = cold[b];
    }
    solve_quasilinear_warm(&setup, &asm, warm, &cold, opts)
}

/// P1 prolongation of nodal values from the m-subdivision structured mesh to
/// the 2m-subdivision mesh of the same domain. Even-index fine nodes coincide
/// with coarse nodes; edge midpoints average their endpoints; cell centers
/// lie on the split diagonal of each square, so they average its endpoints.
pub fn prolong_uniform(coarse: &[f64], mc: usize) -> Result<Vec<f64>> {
    let npc = mc + 1;
    if coarse.len() != npc * npc {
        return Err(Error::invalid("coarse field does not match the subdivision count"));
    }
    let npf = 2 * mc + 1;
    let c = |i: usize, j: usize| coarse[j * npc + i];
    let mut out = vec![0.0; npf * npf];
    for j in 0..npf {
        for i in 0..npf {
            let (ic, jc) = (i / 2, j / 2);
            out[j * npf + i] = match (i % 2, j % 2) {
                (0, 0) => c(ic, jc),
                (1, 0) => 0.5 * (c(ic, jc) + c(ic + 1, jc)),
                (0, 1) => 0.5 * (c(ic, jc) + c(ic, jc + 1)),
                _ => 0.5 * (c(ic, jc) + c(ic + 1, jc + 1)),
            };
        }
    }
    Ok(out)
}

/// Effective-table flux for the Newton machinery: interpolated flux with a
/// finite-difference Jacobian, no regularization continuation.
pub struct TableFlux<'a> {
    pub table: &'a EffectiveTable,
    params: ExponentParams,
}

impl<'a> TableFlux<'a> {
    pub fn new(table: &'a EffectiveTable) -> TableFlux<'a> {
        TableFlux { table, params: ExponentParams::new(table.p, table.mu) }
    }
}

impl FluxModel for TableFlux<'_> {
    fn flux(&self, _y: &Vect, z: &Vect, _delta: f64) -> Vect {
        self.table.interpolate(z)
    }

    fn flux_jacobian(&self, _y: &Vect, z: &Vect, _delta: f64) -> SmallMat {
        self.table.fd_jacobian(z)
    }

    fn flux_secant(&self, y: &Vect, z: &Vect, delta: f64) -> SmallMat {
        self.flux_jacobian(y, z, delta)
    }

    fn exponents(&self) -> &ExponentParams {
        &self.params
    }

    fn needs_continuation(&self) -> bool {
        false
    }
}

/// Result of an effective solve: the fraction of elements where the gradient
/// magnitude left the tabulated range (homogeneous extrapolation was used).
pub struct EffectiveSolve {
    pub u: Field,
    pub stats: SolveStats,
    pub extrapolated_fraction: f64,
    pub extrapolation_warning: bool,
}

/// Solve the effective problem div abar(grad u) = f + div F with the table
/// interpolant as flux. epsilon plays no role here.
pub fn solve_effective(
    prob: &BVProblem,
    table: &EffectiveTable,
    rhs_f: Option<&Field>,
    rhs_div: Option<&Field>,
    opts: &SolveOptions,
) -> Result<EffectiveSolve> {
    let flux = TableFlux::new(table);
    let asm = Assembler::new(&prob.mesh);
    let setup = ProblemSetup {
        mesh: &prob.mesh,
        op: &flux,
        y_scale: 1.0,
        xi_offset: Vect::zeros(prob.mesh.dim),
        rhs_f,
        rhs_div,
        bc: Bc::Dirichlet,
    };
    let init = prob.boundary_field().values;
    let (u, stats) = solve_quasilinear(&setup, &asm, Some(init), opts)?;
    // post-hoc coverage check of the tabulated magnitude range
    let grad = grid::gradient(&u);
    let (lo, hi) = (table.magnitudes[0], *table.magnitudes.last().unwrap());
    let mut out_of_range = 0usize;
    for e in 0..prob.mesh.elements.len() {
        let r = grad.vect_at(e).norm();
        if r > 0.0 && (r < lo || r > hi) {
            out_of_range += 1;
        }
    }
    let frac = out_of_range as f64 / prob.mesh.elements.len() as f64;
    Ok(EffectiveSolve {
        u,
        stats,
        extrapolated_fraction: frac,
        extrapolation_warning: frac > 0.01,
    })
}

/// Realized constants of the energy, Caccioppoli, V-Caccioppoli, and Meyers
/// inequalities on a ball, with the structural right-hand sides normalized
/// so the reported number is the multiplicative constant they would need.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyAudit {
    /// ||mu + |grad w|||_p(B) / ||mu + |grad u|||_p(B); None without w.
    pub energy_ratio: Option<f64>,
    pub caccioppoli_ratio: f64,
    pub v_caccioppoli_ratio: f64,
    /// (m, realized constant) for the Meyers exponent sweep.
    pub meyers: Vec<(f64, f64)>,
}

pub fn energy_audit(
    u: &Field,
    w: Option<&Field>,
    rhs_div: Option<&Field>,
    center: Vect,
    r: f64,
    params: &ExponentParams,
) -> Result<EnergyAudit> {
    params.validate()?;
    let p = params.p;
    let mu = params.mu;
    let ball = Region::Ball { center, radius: r };
    let half = Region::Ball { center, radius: 0.5 * r };
    let mesh = &u.mesh;
    let grad_u = grid::gradient(u);
    let n = mesh.dim as f64;

    let mu_grad = |g: &Field| {
        let mut f = Field::zeros(mesh, 1, FieldLoc::PerElement);
        for e in 0..mesh.elements.len() {
            f.values[e] = mu + g.vect_at(e).norm();
        }
        f
    };
    let mgu = mu_grad(&grad_u);
    let rhs_u = grid::lq_norm(&mgu, p, &ball, true)?;

    let energy_ratio = match w {
        Some(wf) => {
            let mgw = mu_grad(&grid::gradient(wf));
            Some(grid::lq_norm(&mgw, p, &ball, true)? / rhs_u)
        }
        None => None,
    };

    // Caccioppoli: mean of u over B as the subtracted constant
    let b = grid::mean(u, &ball)?;
    let mut ub = u.clone();
    for v in &mut ub.values {
        *v -= b;
    }
    let f_term = match rhs_div {
        Some(ff) => grid::lq_norm(ff, params.p_conj(), &ball, true)?.powf(1.0 / (p - 1.0)),
        None => 0.0,
    };
    let cacc_lhs = grid::lq_norm(&mgu, p, &half, true)?;
    let cacc_rhs = mu + grid::lq_norm(&ub, p, &ball, true)? / r + f_term;
    let caccioppoli_ratio = cacc_lhs / cacc_rhs;

    // V-Caccioppoli: scalar V_p maps of |grad u| and (u - b)/r
    let vmag = |x: f64| powf_guarded(mu + x.abs(), (p - 2.0) / 2.0) * x.abs();
    let mut v_grad = Field::zeros(mesh, 1, FieldLoc::PerElement);
    let mut v_ub = Field::zeros(mesh, 1, FieldLoc::PerElement);
    for e in 0..mesh.elements.len() {
        v_grad.values[e] = vmag(grad_u.vect_at(e).norm());
        v_ub.values[e] = vmag(ub.centroid_value(e, 0) / r);
    }
    let v_lhs = grid::lq_norm(&v_grad, 2.0, &half, true)?;
    let v_rhs = grid::lq_norm(&v_ub, 2.0, &ball, true)?;
    let v_caccioppoli_ratio = if v_rhs > 0.0 {
        v_lhs / v_rhs
    } else if v_lhs > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };

    // Meyers sweep at rho = 1/2: the (1 - rho) factor moves to the RHS
    let mut grad_mag = Field::zeros(mesh, 1, FieldLoc::PerElement);
    for e in 0..mesh.elements.len() {
        grad_mag.values[e] = grad_u.vect_at(e).norm();
    }
    let mut meyers = Vec::new();
    for m in [1.05, 1.1, 1.2] {
        let lhs = grid::lq_norm(&grad_mag, m * p, &half, true)?;
        let rhs = 2f64.powf(n / p * (1.0 - 1.0 / m)) * rhs_u;
        meyers.push((m, lhs / rhs));
    }

    Ok(EnergyAudit { energy_ratio, caccioppoli_ratio, v_caccioppoli_ratio, meyers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::SolverConfig;
    use crate::effective::tabulate;
    use crate::grid::TorusGrid;
    use crate::operators::{CoefficientField, Family};

    fn unit_square() -> DomainShape {
        DomainShape::Square { center: [0.5, 0.5], half_width: 0.5 }
    }

    fn laminate_p3() -> OperatorSpec {
        OperatorSpec::new(
            Family::PLaplace,
            CoefficientField::half_laminate(1.0, 8.0),
            ExponentParams::new(3.0, 0.0),
        )
    }

    #[test]
    fn resolution_gate() {
        let g = BoundaryData::Constant { value: 0.0 };
        assert!(BVProblem::new(unit_square(), 32, 1.0 / 16.0, 8, g.clone()).is_err());
        assert!(BVProblem::new(unit_square(), 128, 1.0 / 16.0, 8, g).is_ok());
    }

    #[test]
    fn constant_data_gives_constant_solution() {
        let prob = BVProblem::new(
            unit_square(),
            32,
            0.25,
            8,
            BoundaryData::Constant { value: 2.5 },
        )
        .unwrap();
        let (u, _) =
            solve_oscillating(&prob, &laminate_p3(), None, None, &SolveOptions::default())
                .unwrap();
        for v in &u.values {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_data_linear_identity() {
        let op = OperatorSpec::new(
            Family::LinearMatrix,
            CoefficientField::constant(1.0),
            ExponentParams::new(2.0, 0.0),
        );
        let prob = BVProblem::new(
            unit_square(),
            16,
            1.0,
            8,
            BoundaryData::Affine { slope: vec![1.0, 0.0], offset: 0.0 },
        )
        .unwrap();
        let (u, _) = solve_oscillating(&prob, &op, None, None, &SolveOptions::default()).unwrap();
        for (i, v) in u.values.iter().enumerate() {
            assert!((v - prob.mesh.points[i][0]).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_shift_covariance() {
        let mk = |offset: f64| {
            let prob = BVProblem::new(
                unit_square(),
                64,
                0.25,
                8,
                BoundaryData::Affine { slope: vec![1.0, 0.3], offset },
            )
            .unwrap();
            solve_oscillating(&prob, &laminate_p3(), None, None, &SolveOptions::default())
                .unwrap()
                .0
        };
        let u0 = mk(0.0);
        let u1 = mk(0.7);
        for (a, b) in u0.values.iter().zip(&u1.values) {
            assert!((b - a - 0.7).abs() < 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn manufactured_convergence_order() {
        // u* = sin(pi x1) sin(pi x2), F = a(grad u*) element-wise, g = 0
        for p in [1.5, 2.0, 3.0] {
            let op = OperatorSpec::new(
                Family::RegularizedPLaplace,
                CoefficientField::constant(1.0),
                ExponentParams::new(p, 0.5),
            );
            let grad_star = |x: &Vect| {
                let pi = std::f64::consts::PI;
                Vect::new2(
                    pi * (pi * x[0]).cos() * (pi * x[1]).sin(),
                    pi * (pi * x[0]).sin() * (pi * x[1]).cos(),
                )
            };
            let mut errs = Vec::new();
            for m in [8usize, 16, 32] {
                let prob = BVProblem::new(
                    unit_square(),
                    m,
                    1.0,
                    1,
                    BoundaryData::Constant { value: 0.0 },
                )
                .unwrap();
                let mut ff = Field::zeros(&prob.mesh, 2, FieldLoc::PerElement);
                for (e, el) in prob.mesh.elements.iter().enumerate() {
                    let f = op.evaluate(&el.centroid, &grad_star(&el.centroid));
                    ff.set(e, 0, f[0]);
                    ff.set(e, 1, f[1]);
                }
                let (u, _) =
                    solve_oscillating(&prob, &op, None, Some(&ff), &SolveOptions::default())
                        .unwrap();
                let gu = grid::gradient(&u);
                let mut diff = Field::zeros(&prob.mesh, 2, FieldLoc::PerElement);
                for (e, el) in prob.mesh.elements.iter().enumerate() {
                    let d = gu.vect_at(e) - grad_star(&el.centroid);
                    diff.set(e, 0, d[0]);
                    diff.set(e, 1, d[1]);
                }
                errs.push(grid::lq_norm(&diff, p, &Region::All, false).unwrap());
            }
            let order = (errs[0] / errs[2]).log2() / 2.0;
            assert!(order >= 0.9, "p={p}: errors {errs:?}, order {order}");
        }
    }

    #[test]
    fn effective_solve_affine_data() {
        // constant-coefficient p-Laplace table: affine data solves exactly
        let g = TorusGrid::new(2, 8).unwrap();
        let mesh = Arc::new(g.mesh.clone());
        let asm = Assembler::new(&mesh);
        let op = OperatorSpec::new(
            Family::PLaplace,
            CoefficientField::constant(1.0),
            ExponentParams::new(3.0, 0.0),
        );
        let table = tabulate(&op, 8, 16, &g, &mesh, &asm, &SolverConfig::default()).unwrap();
        let prob = BVProblem::new(
            unit_square(),
            16,
            1.0,
            1,
            BoundaryData::Affine { slope: vec![1.0, 0.0], offset: 0.0 },
        )
        .unwrap();
        let sol = solve_effective(&prob, &table, None, None, &SolveOptions::default()).unwrap();
        for (i, v) in sol.u.values.iter().enumerate() {
            assert!((v - prob.mesh.points[i][0]).abs() < 1e-8);
        }
        assert!(!sol.extrapolation_warning, "frac {}", sol.extrapolated_fraction);
    }

    #[test]
    fn effective_laminate_p2_affine() {
        let g = TorusGrid::new(2, 32).unwrap();
        let mesh = Arc::new(g.mesh.clone());
        let asm = Assembler::new(&mesh);
        let op = OperatorSpec::new(
            Family::LinearMatrix,
            CoefficientField::half_laminate(1.0, 4.0),
            ExponentParams::new(2.0, 0.0),
        );
        let table = tabulate(&op, 6, 16, &g, &mesh, &asm, &SolverConfig::default()).unwrap();
        let prob = BVProblem::new(
            unit_square(),
            16,
            1.0,
            1,
            BoundaryData::Affine { slope: vec![1.0, 0.0], offset: 0.0 },
        )
        .unwrap();
        let sol = solve_effective(&prob, &table, None, None, &SolveOptions::default()).unwrap();
        for (i, v) in sol.u.values.iter().enumerate() {
            assert!((v - prob.mesh.points[i][0]).abs() < 1e-7);
        }
    }

    #[test]
    fn energy_audit_explicit_fields() {
        let prob = BVProblem::new(
            unit_square(),
            64,
            1.0,
            1,
            BoundaryData::Constant { value: 0.0 },
        )
        .unwrap();
        let params = ExponentParams::new(2.0, 1.0);
        let center = Vect::new2(0.5, 0.5);
        // constant solution: both Caccioppoli sides reduce to mu, ratio 1
        let c = Field::nodal_scalar(&prob.mesh, |_| 3.0);
        let audit = energy_audit(&c, None, None, center, 0.4, &params).unwrap();
        assert!((audit.caccioppoli_ratio - 1.0).abs() < 1e-12);
        assert_eq!(audit.v_caccioppoli_ratio, 1.0);
        // u = x1: lhs = ||1 + 1|| = 2, rhs finite and positive
        let x1 = Field::nodal_scalar(&prob.mesh, |x| x[0]);
        let audit = energy_audit(&x1, Some(&x1), None, center, 0.4, &params).unwrap();
        assert!((audit.energy_ratio.unwrap() - 1.0).abs() < 1e-12);
        assert!(audit.caccioppoli_ratio.is_finite() && audit.caccioppoli_ratio > 0.0);
        let lhs_exact = 2.0;
        let rhs = lhs_exact / audit.caccioppoli_ratio;
        assert!(rhs > 1.0, "rhs {rhs}");
        for (m, ratio) in &audit.meyers {
            assert!(ratio.is_finite() && *ratio > 0.0, "m={m}");
            // |grad u| constant: lhs is 1, so the ratio is the pure factor
            let expect = 1.0 / (2f64.powf(2.0 / 2.0 * (1.0 - 1.0 / m)) * 2.0);
            assert!((ratio - expect).abs() < 1e-9);
        }
    }
}
