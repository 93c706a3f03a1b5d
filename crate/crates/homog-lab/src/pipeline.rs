//! Experiment pipelines: one function per CLI command, all sharing the same
//! shape. Resolve the config, run the computation inside a fixed-size worker
//! pool, record gated/exploratory checks, and write JSON/CSV/binary
//! artifacts plus the manifest.
//!
//! Exit-status policy (enforced by the binary): config and schema problems
//! are status 2, solver failures are status 3, a failed gated check is
//! status 1, everything green is 0. Worker count is a CLI-only knob and is
//! deliberately absent from the config hash: reruns with different worker
//! counts must produce byte-identical reports.

use crate::bvp::{prolong_uniform, solve_effective, solve_oscillating, solve_oscillating_warm, BVProblem};
use crate::cell::{
    corrector_bounds_report, sigma_divergence_error, solve_corrector, solve_flux_corrector,
    BoundsReport,
};
use crate::config::{CommandKind, ExperimentConfig};
use crate::effective::{
    check_effective_structure, tabulate, EffectiveCheck, StructureReport, ALL_EFFECTIVE_CHECKS,
};
use crate::error::{Error, Result};
use crate::grid::{self, gradient, lq_norm, Field, Region, TorusGrid};
use crate::operators::{verify_assumption, AssumptionId, OperatorSpec, SamplerConfig, ALL_ASSUMPTIONS};
use crate::par;
use crate::params::ExponentParams;
use crate::regularity::{
    cz_sides, excess_decay, field_digest, higher_integrability_probe, holder_profile,
    large_scale_cz_sides, lipschitz_profile, EpsEntry, ExcessReport, QRatio, RadiiProfile,
    RegularityReport,
};
use crate::report::{fmt_f64, Manifest, ReportWriter};
use crate::solver::{Assembler, SolveStats};
use crate::twoscale::{error_rate, write_rate_csv};
use crate::vcalc::{inequality_audit, InequalityId, ALL_INEQUALITIES};
use crate::vect::Vect;
use serde::Serialize;
use std::path::Path;
use std::sync::Arc;

/// Run one experiment end to end inside a pool of `workers` threads.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path, workers: usize) -> Result<Manifest> {
    cfg.validate()?;
    par::with_workers(workers, || run_resolved(cfg, out_dir))
}

fn run_resolved(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Manifest> {
    let mut w = ReportWriter::new(out_dir, cfg)?;
    match cfg.command {
        CommandKind::Vtest => run_vtest(cfg, &mut w)?,
        CommandKind::CheckOperator => run_check_operator(cfg, &mut w)?,
        CommandKind::Cell => run_cell(cfg, &mut w)?,
        CommandKind::Effective => run_effective(cfg, &mut w)?,
        CommandKind::Bvp => run_bvp(cfg, &mut w)?,
        CommandKind::TwoScale => run_two_scale(cfg, &mut w)?,
        CommandKind::Regularity => run_regularity(cfg, &mut w)?,
    }
    w.finish()
}

fn operator(cfg: &ExperimentConfig) -> Result<&OperatorSpec> {
    cfg.operator
        .as_ref()
        .ok_or_else(|| Error::Config("operator: section is required".into()))
}

fn torus_setup(cfg: &ExperimentConfig) -> Result<(TorusGrid, Arc<grid::Mesh>, Assembler)> {
    let d = &cfg.discretization;
    let grid = TorusGrid::new(d.dim, d.n)?;
    let mesh = Arc::new(grid.mesh.clone());
    let asm = Assembler::new(&mesh);
    Ok((grid, mesh, asm))
}

fn measurement_ball(cfg: &ExperimentConfig) -> Result<(Vect, f64)> {
    let c = cfg
        .measurement
        .ball_center
        .ok_or_else(|| Error::Config("measurement.ball-center is required".into()))?;
    let r = cfg
        .measurement
        .ball_radius
        .ok_or_else(|| Error::Config("measurement.ball-radius is required".into()))?;
    Ok((Vect::new2(c[0], c[1]), r))
}

// ---------------------------------------------------------------- vtest

fn run_vtest(cfg: &ExperimentConfig, w: &mut ReportWriter) -> Result<()> {
    let p = cfg
        .measurement
        .p
        .or(cfg.operator.as_ref().map(|o| o.params.p))
        .ok_or_else(|| Error::Config("measurement.p is required for vtest".into()))?;
    let mu = cfg.measurement.mu.unwrap_or(1.0);
    let params = ExponentParams::new(p, mu);
    let ids: Vec<InequalityId> = match &cfg.measurement.inequalities {
        Some(names) => names
            .iter()
            .map(|n| InequalityId::parse(n))
            .collect::<Result<Vec<_>>>()?,
        None => ALL_INEQUALITIES.to_vec(),
    };
    let mut audits = Vec::with_capacity(ids.len());
    let mut rows = Vec::new();
    for id in ids {
        let a = inequality_audit(id, cfg.measurement.samples, &params, cfg.seed, cfg.measurement.cap)?;
        w.check(
            &format!("vtest:{}", a.name),
            a.pass,
            format!("empirical {:.6e} vs cap {:.6e}", a.empirical_constant, a.cap),
        );
        rows.push(vec![
            a.name.clone(),
            fmt_f64(a.p),
            fmt_f64(a.mu),
            a.samples.to_string(),
            fmt_f64(a.empirical_constant),
            fmt_f64(a.cap),
            a.pass.to_string(),
        ]);
        audits.push(a);
    }
    w.write_json("vtest.json", &audits)?;
    w.write_csv_records(
        "vtest.csv",
        &["inequality", "p", "mu", "samples", "empirical_constant", "cap", "pass"],
        &rows,
    )?;
    Ok(())
}

// ------------------------------------------------------- check-operator

fn run_check_operator(cfg: &ExperimentConfig, w: &mut ReportWriter) -> Result<()> {
    let op = operator(cfg)?;
    let sampler = SamplerConfig {
        samples: cfg.measurement.samples,
        seed: cfg.seed,
        cap: cfg.measurement.cap,
    };
    let ids: Vec<AssumptionId> = match &cfg.measurement.assumptions {
        Some(names) => names
            .iter()
            .map(|n| AssumptionId::parse(n))
            .collect::<Result<Vec<_>>>()?,
        None => ALL_ASSUMPTIONS.to_vec(),
    };
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for id in ids {
        let r = verify_assumption(op, id, &sampler)?;
        w.check(
            &format!("assumption:{}", r.assumption_id),
            r.holds,
            format!("fitted {:.6e} vs cap {:.6e}", r.fitted_constant, r.cap),
        );
        rows.push(vec![
            r.assumption_id.clone(),
            fmt_f64(r.fitted_constant),
            fmt_f64(r.cap),
            r.holds.to_string(),
        ]);
        reports.push(r);
    }
    if let Some(alpha) = cfg.measurement.holder_alpha {
        let r = crate::operators::check_modulus(op, alpha, &sampler)?;
        w.check(
            "modulus",
            r.holds,
            format!("alpha {alpha}: fitted {:.6e} vs cap {:.6e}", r.fitted_constant, r.cap),
        );
        rows.push(vec![
            "modulus".into(),
            fmt_f64(r.fitted_constant),
            fmt_f64(r.cap),
            r.holds.to_string(),
        ]);
        reports.push(r);
    }
    w.write_json("check-operator.json", &reports)?;
    w.write_csv_records(
        "check-operator.csv",
        &["check", "fitted_constant", "cap", "holds"],
        &rows,
    )?;
    Ok(())
}

// --------------------------------------------------------------- cell

#[derive(Serialize)]
struct CellReport {
    operator: String,
    xi: Vect,
    mean_flux: Vect,
    residual_norm: f64,
    iterations: usize,
    /// W^{1,p} norm of phi computed with the gradient magnitude.
    phi_w1p: f64,
    sigma_divergence: Option<f64>,
    bounds: Option<BoundsReport>,
}

fn w1p_norm(phi: &Field, p: f64) -> Result<f64> {
    let g = gradient(phi);
    let a = lq_norm(phi, p, &Region::All, false)?;
    let b = lq_norm(&g, p, &Region::All, false)?;
    Ok((a.powf(p) + b.powf(p)).powf(1.0 / p))
}

fn run_cell(cfg: &ExperimentConfig, w: &mut ReportWriter) -> Result<()> {
    let op = operator(cfg)?;
    let (grid, mesh, asm) = torus_setup(cfg)?;
    let dim = cfg.discretization.dim;
    let xi = match &cfg.problem.xi {
        Some(v) if v.len() == dim => Vect::from_slice(v),
        Some(_) => return Err(Error::Config("problem.xi: wrong dimension".into())),
        None => Vect::basis(dim, 0),
    };
    let sol = solve_corrector(op, xi, &grid, &mesh, &asm, &cfg.solver)?;
    let phi_w1p = w1p_norm(&sol.phi, op.params.p)?;
    if let Some(cap) = cfg.gates.max_phi_norm {
        w.check(
            "cell:phi-norm",
            phi_w1p <= cap,
            format!("||phi||_W1p = {phi_w1p:.3e}, cap {cap:.3e}"),
        );
    }
    let (mut sigma_divergence, mut bounds) = (None, None);
    if cfg.problem.sigma {
        let fc = solve_flux_corrector(&sol, &grid, &cfg.solver)?;
        let div_err = sigma_divergence_error(&fc, &grid);
        if let Some(cap) = cfg.gates.max_sigma_divergence {
            w.check(
                "cell:sigma-divergence",
                div_err <= cap,
                format!("relative divergence error {div_err:.3e}, cap {cap:.3e}"),
            );
        }
        bounds = Some(corrector_bounds_report(&sol, &fc, op, &grid));
        sigma_divergence = Some(div_err);
    }
    let rep = CellReport {
        operator: op.digest(),
        xi,
        mean_flux: sol.mean_flux,
        residual_norm: sol.residual_norm,
        iterations: sol.iterations,
        phi_w1p,
        sigma_divergence,
        bounds,
    };
    w.write_json("cell.json", &rep)?;
    let mut row: Vec<String> = Vec::new();
    for c in 0..dim {
        row.push(fmt_f64(xi[c]));
    }
    for c in 0..dim {
        row.push(fmt_f64(sol.mean_flux[c]));
    }
    row.extend([
        fmt_f64(sol.residual_norm),
        sol.iterations.to_string(),
        fmt_f64(phi_w1p),
        sigma_divergence.map(fmt_f64).unwrap_or_default(),
    ]);
    let header: Vec<&str> = if dim == 2 {
        vec!["xi0", "xi1", "abar0", "abar1", "residual", "iterations", "phi_w1p", "sigma_div"]
    } else {
        vec![
            "xi0", "xi1", "xi2", "abar0", "abar1", "abar2", "residual", "iterations", "phi_w1p",
            "sigma_div",
        ]
    };
    w.write_csv_records("cell.csv", &header, &[row])?;
    w.write_field("phi.hlf", &sol.phi)?;
    w.write_field("flux.hlf", &sol.flux)?;
    Ok(())
}

// ----------------------------------------------------------- effective

#[derive(Serialize)]
struct EffectiveReport {
    table: crate::effective::EffectiveTable,
    structure: Vec<StructureReport>,
}

fn run_effective(cfg: &ExperimentConfig, w: &mut ReportWriter) -> Result<()> {
    let op = operator(cfg)?;
    if cfg.discretization.dim != 2 {
        return Err(Error::Config("effective tabulation is 2D".into()));
    }
    let (grid, mesh, asm) = torus_setup(cfg)?;
    let table = tabulate(
        op,
        cfg.measurement.magnitudes,
        cfg.measurement.directions,
        &grid,
        &mesh,
        &asm,
        &cfg.solver,
    )?;
    let complete = table.entries.iter().all(|e| e.ok);
    w.check(
        "effective:table-complete",
        complete,
        format!("{} / {} corrector solves converged",
            table.entries.iter().filter(|e| e.ok).count(),
            table.entries.len()),
    );
    let checks: Vec<EffectiveCheck> = match &cfg.measurement.checks {
        Some(names) => names
            .iter()
            .map(|n| EffectiveCheck::parse(n))
            .collect::<Result<Vec<_>>>()?,
        None => ALL_EFFECTIVE_CHECKS.to_vec(),
    };
    let cap = cfg.measurement.cap.unwrap_or(op.params.lambda_cap);
    let structure = check_effective_structure(&table, &checks, cap)?;
    for s in &structure {
        w.check(
            &format!("effective:{}", s.check),
            s.holds,
            format!("fitted {:.6e} vs cap {:.6e}", s.fitted_constant, s.cap),
        );
    }
    let mut rows = Vec::new();
    for (m, &mag) in table.magnitudes.iter().enumerate() {
        for (a, &ang) in table.angles.iter().enumerate() {
            let e = table.entry(m, a);
            rows.push(vec![
                fmt_f64(mag),
                fmt_f64(ang),
                fmt_f64(e.xi[0]),
                fmt_f64(e.xi[1]),
                fmt_f64(e.abar[0]),
                fmt_f64(e.abar[1]),
                fmt_f64(e.residual),
                e.iterations.to_string(),
                e.ok.to_string(),
            ]);
        }
    }
    w.write_csv_records(
        "effective.csv",
        &["magnitude", "angle", "xi0", "xi1", "abar0", "abar1", "residual", "iterations", "ok"],
        &rows,
    )?;
    w.write_json("effective.json", &EffectiveReport { table, structure })?;
    Ok(())
}

// ----------------------------------------------------------------- bvp

#[derive(Serialize)]
struct BvpReport {
    operator: String,
    epsilon: f64,
    mesh_subdivisions: usize,
    stats: SolveStats,
    energy: Option<crate::bvp::EnergyAudit>,
    solution_artifact: String,
}

fn run_bvp(cfg: &ExperimentConfig, w: &mut ReportWriter) -> Result<()> {
    let op = operator(cfg)?;
    let g = cfg.problem.g.clone().expect("validated");
    let epsilon = cfg.ladder.epsilons[0];
    let domain = cfg.discretization.domain_or_unit_square();
    let prob = BVProblem::new(
        domain,
        cfg.discretization.m,
        epsilon,
        cfg.discretization.cells_per_period,
        g,
    )?;
    let load = cfg.problem.load.as_ref().map(|l| l.field(&prob.mesh));
    let (u, stats) = solve_oscillating(&prob, op, None, load.as_ref(), &cfg.solver.to_options())?;
    let energy = match (cfg.measurement.ball_center, cfg.measurement.ball_radius) {
        (Some(c), Some(r)) => Some(crate::bvp::energy_audit(
            &u,
            None,
            load.as_ref(),
            Vect::new2(c[0], c[1]),
            r,
            &op.params,
        )?),
        _ => None,
    };
    let rep = BvpReport {
        operator: op.digest(),
        epsilon,
        mesh_subdivisions: cfg.discretization.m,
        stats,
        energy,
        solution_artifact: field_digest(&u),
    };
    w.write_json("bvp.json", &rep)?;
    w.write_csv_records(
        "bvp.csv",
        &["epsilon", "residual", "newton_iters", "cg_iters", "artifact"],
        &[vec![
            fmt_f64(epsilon),
            fmt_f64(stats.residual),
            stats.newton_iters.to_string(),
            stats.cg_iters.to_string(),
            rep.solution_artifact.clone(),
        ]],
    )?;
    w.write_field("u.hlf", &u)?;
    Ok(())
}

// ------------------------------------------------------------ two-scale

fn run_two_scale(cfg: &ExperimentConfig, w: &mut ReportWriter) -> Result<()> {
    let op = operator(cfg)?;
    if cfg.discretization.dim != 2 {
        return Err(Error::Config("two-scale experiments are 2D".into()));
    }
    let g = cfg.problem.g.clone().expect("validated");
    let (grid, mesh, asm) = torus_setup(cfg)?;
    let table = tabulate(
        op,
        cfg.measurement.magnitudes,
        cfg.measurement.directions,
        &grid,
        &mesh,
        &asm,
        &cfg.solver,
    )?;
    let domain = cfg.discretization.domain_or_unit_square();
    let rate = error_rate(
        op,
        &table,
        domain,
        &g,
        &cfg.ladder.epsilons,
        cfg.ladder.rho,
        cfg.ladder.ell,
        cfg.discretization.cells_per_period,
        &cfg.solver,
    )?;
    w.check(
        "two-scale:complete",
        !rate.incomplete,
        format!("{} rungs, degenerate_fit = {}", rate.rungs.len(), rate.degenerate_fit),
    );
    if let Some(min_beta) = cfg.gates.min_beta {
        w.check(
            "two-scale:beta",
            rate.beta_hat >= min_beta && !rate.incomplete,
            format!("beta_hat = {:.4}, required >= {min_beta}", rate.beta_hat),
        );
    }
    if let Some(min_r2) = cfg.gates.min_r_squared {
        w.check(
            "two-scale:r-squared",
            rate.r_squared >= min_r2 && !rate.incomplete,
            format!("r_squared = {:.4}, required >= {min_r2}", rate.r_squared),
        );
    }
    if cfg.gates.require_decreasing.unwrap_or(false) {
        let errs: Vec<f64> = rate.rungs.iter().filter(|r| r.ok).map(|r| r.error).collect();
        let decreasing = errs.windows(2).all(|p| p[1] < p[0]) && !rate.incomplete;
        w.check(
            "two-scale:decreasing",
            decreasing,
            format!("errors {:?}", errs),
        );
    }
    w.write_json("two-scale.json", &rate)?;
    w.write_csv("two-scale.csv", |buf| write_rate_csv(&rate, buf))?;
    Ok(())
}

// ----------------------------------------------------------- regularity

#[derive(Serialize)]
struct RegularityRunReport {
    report: RegularityReport,
    /// sup_B |grad u| / averaged L^p norm over B, per rung (contrast probe).
    contrast: Vec<f64>,
    profiles: Vec<RadiiProfile>,
    excess: Vec<ExcessReport>,
    q_ratios: Vec<QRatio>,
}

fn contrast_probe(u: &Field, center: &Vect, radius: f64, p: f64) -> Result<f64> {
    let g = gradient(u);
    let ball = Region::Ball { center: *center, radius };
    let mut sup = 0.0f64;
    for (e, el) in u.mesh.elements.iter().enumerate() {
        if ball.contains(&el.centroid) {
            sup = sup.max(g.vect_at(e).norm());
        }
    }
    Ok(sup / lq_norm(&g, p, &ball, true)?)
}

fn run_regularity(cfg: &ExperimentConfig, w: &mut ReportWriter) -> Result<()> {
    let op = operator(cfg)?;
    if cfg.discretization.dim != 2 {
        return Err(Error::Config("regularity experiments are 2D".into()));
    }
    let g = cfg.problem.g.clone().expect("validated");
    let measure = cfg.measurement.measure.clone().expect("validated");
    let (center, radius) = measurement_ball(cfg)?;
    let params = &op.params;
    let domain = cfg.discretization.domain_or_unit_square();
    let width = 2.0 * domain.inradius();
    let cpp = cfg.discretization.cells_per_period;

    let mut entries: Vec<EpsEntry> = Vec::new();
    let mut contrast = Vec::new();
    let mut profiles = Vec::new();
    let mut excess = Vec::new();
    let mut q_ratios = Vec::new();
    let mut fitted = Vec::new();

    if measure == "higher-integrability" {
        // effective solve on the autonomous equation, then the q sweep
        let (grid, mesh, asm) = torus_setup(cfg)?;
        let table = tabulate(
            op,
            cfg.measurement.magnitudes,
            cfg.measurement.directions,
            &grid,
            &mesh,
            &asm,
            &cfg.solver,
        )?;
        let prob = BVProblem::new(domain, cfg.discretization.m, 1.0, 1, g)?;
        let sol = solve_effective(&prob, &table, None, None, &cfg.solver.to_options())?;
        let q_list = if cfg.measurement.q_list.is_empty() {
            vec![params.p, 2.0 * params.p, 4.0 * params.p]
        } else {
            cfg.measurement.q_list.clone()
        };
        q_ratios = higher_integrability_probe(&sol.u, &center, radius, &q_list, params)?;
        let worst = q_ratios.iter().map(|r| r.ratio).fold(0.0f64, f64::max);
        entries.push(EpsEntry {
            epsilon: 1.0,
            lhs: worst,
            rhs: 1.0,
            ratio: worst,
            artifact: field_digest(&sol.u),
        });
    } else {
        // one oscillating solve per epsilon rung, warm-starting each mesh
        // from the previous rung's solution when the subdivisions double
        let mut prev: Option<(usize, Vec<f64>)> = None;
        for &eps in &cfg.ladder.epsilons {
            let m = (cpp as f64 * width / eps).round() as usize;
            let prob = BVProblem::new(domain, m, eps, cpp, g.clone())?;
            let load = cfg.problem.load.as_ref().map(|l| l.field(&prob.mesh));
            let warm = match &prev {
                Some((pm, pu)) if m == 2 * pm => Some(prolong_uniform(pu, *pm)?),
                _ => None,
            };
            let (u, _stats) = match warm {
                Some(w) => {
                    solve_oscillating_warm(&prob, op, None, load.as_ref(), w, &cfg.solver.to_options())?
                }
                None => solve_oscillating(&prob, op, None, load.as_ref(), &cfg.solver.to_options())?,
            };
            prev = Some((m, u.values.clone()));
            let artifact = field_digest(&u);
            contrast.push(contrast_probe(&u, &center, radius, params.p)?);
            let (lhs, rhs, ratio) = match measure.as_str() {
                "cz" => {
                    let q = cfg.measurement.q.ok_or_else(|| {
                        Error::Config("measurement.q is required for cz".into())
                    })?;
                    let (l, r) = cz_sides(&u, load.as_ref(), &center, radius, q, params)?;
                    (l, r, l / r)
                }
                "large-scale-cz" => {
                    let q = cfg.measurement.q.ok_or_else(|| {
                        Error::Config("measurement.q is required for large-scale-cz".into())
                    })?;
                    let (l, r) =
                        large_scale_cz_sides(&u, load.as_ref(), &center, radius, q, eps, params)?;
                    (l, r, l / r)
                }
                "lipschitz" => {
                    let prof = lipschitz_profile(&u, &center, radius, eps, params)?;
                    let sup = prof.supremum;
                    profiles.push(prof);
                    (sup, 1.0, sup)
                }
                "holder" => {
                    let q = cfg.measurement.q.ok_or_else(|| {
                        Error::Config("measurement.q is required for holder".into())
                    })?;
                    let prof =
                        holder_profile(&u, &center, radius, eps, q, params, load.as_ref())?;
                    let sup = prof.supremum;
                    profiles.push(prof);
                    (sup, 1.0, sup)
                }
                "excess" => {
                    let (tgrid, tmesh, tasm) = torus_setup(cfg)?;
                    let xi_grid: Vec<Vect> = cfg
                        .problem
                        .xi_grid
                        .as_ref()
                        .expect("validated")
                        .iter()
                        .map(|v| Vect::from_slice(v))
                        .collect();
                    let rep = excess_decay(
                        &u,
                        op,
                        &tgrid,
                        &tmesh,
                        &tasm,
                        &center,
                        radius,
                        eps,
                        &xi_grid,
                        cfg.ladder.theta0,
                        &cfg.solver,
                    )?;
                    fitted.push(rep.fitted_exponent);
                    let worst_contraction =
                        rep.contractions.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
                    if let Some(cap) = cfg.gates.max_contraction {
                        w.check(
                            &format!("regularity:contraction-eps-{eps}"),
                            rep.contractions.iter().all(|&c| c <= cap),
                            format!("contractions {:?}, cap {cap}", rep.contractions),
                        );
                    }
                    let (e0, ek) = (rep.excess[0], *rep.excess.last().unwrap());
                    excess.push(rep);
                    (e0.max(1e-300), ek.max(1e-300), worst_contraction)
                }
                other => return Err(Error::Config(format!("unknown measure '{other}'"))),
            };
            entries.push(EpsEntry { epsilon: eps, lhs, rhs, ratio, artifact });
        }
    }

    let report = RegularityReport::new(
        cfg.experiment_id(),
        op.digest(),
        entries,
        profiles.last().cloned(),
        fitted,
    )?;
    if let Some(cap) = cfg.gates.max_uniformity {
        w.check(
            "regularity:uniformity",
            report.uniformity <= cap,
            format!("max/min ratio = {:.4}, cap {cap}", report.uniformity),
        );
    }
    let run = RegularityRunReport { report, contrast, profiles, excess, q_ratios };
    w.write_csv("regularity.csv", |buf| run.report.write_csv(buf))?;
    w.write_json("regularity.json", &run)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn run_cfg(toml_text: &str) -> (Manifest, tempfile::TempDir) {
        let cfg = parse_config(toml_text).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let m = run(&cfg, tmp.path(), 1).unwrap();
        (m, tmp)
    }

    #[test]
    fn vtest_p2_all_pass() {
        let (m, _tmp) = run_cfg(
            r#"
            command = "vtest"
            seed = 11
            [measurement]
            p = 2.0
            samples = 10000
        "#,
        );
        assert!(m.all_gated_pass);
        assert_eq!(m.checks.len(), 10);
        assert!(m.artifacts.contains(&"vtest.csv".to_string()));
    }

    #[test]
    fn cell_constant_coefficient_gate() {
        let (m, tmp) = run_cfg(
            r#"
            command = "cell"
            [discretization]
            n = 16
            [gates]
            max-phi-norm = 1e-8
            [problem]
            xi = [1.0, 0.5]
            [operator]
            family = "p-laplace"
            [operator.params]
            p = 3.0
            mu = 0.0
            [operator.coefficient]
            kind = "constant"
            value = 2.0
        "#,
        );
        assert!(m.all_gated_pass, "checks: {:?}", m.checks);
        let text = std::fs::read_to_string(tmp.path().join("cell.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        // constant coefficient: abar(xi) = 2 |xi|^{p-2} xi
        let r = (1.0f64 + 0.25).sqrt();
        let expect0 = 2.0 * r * 1.0;
        assert!((v["report"]["mean_flux"][0].as_f64().unwrap() - expect0).abs() < 1e-8);
    }

    #[test]
    fn reruns_are_byte_identical_across_worker_counts() {
        let toml_text = r#"
            command = "effective"
            [discretization]
            n = 8
            [measurement]
            magnitudes = 2
            directions = 4
            [gates]
            exploratory = ["effective:monotone", "effective:dual-monotone"]
            [operator]
            family = "linear-matrix"
            [operator.params]
            p = 2.0
            mu = 0.0
            [operator.coefficient]
            kind = "laminate"
            direction = 0
            breakpoints = [0.0, 0.5]
            values = [1.0, 4.0]
        "#;
        let cfg = parse_config(toml_text).unwrap();
        let (t1, t4) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m1 = run(&cfg, t1.path(), 1).unwrap();
        let m4 = run(&cfg, t4.path(), 4).unwrap();
        assert!(m1.all_gated_pass && m4.all_gated_pass);
        for name in ["effective.csv", "effective.json"] {
            let a = std::fs::read(t1.path().join(name)).unwrap();
            let b = std::fs::read(t4.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs across worker counts");
        }
    }

    #[test]
    fn regularity_excess_pipeline() {
        // constant coefficient, affine data: the excess at the boundary
        // slope is pure discretization noise, so contractions are tame and
        // the uniformity statistic is finite
        let toml_text = r#"
            command = "regularity"
            [discretization]
            n = 8
            cells-per-period = 8
            [ladder]
            epsilons = [0.25]
            theta0 = 0.5
            [measurement]
            measure = "excess"
            ball-center = [0.5, 0.5]
            ball-radius = 0.35
            [problem]
            xi-grid = [[1.0, 0.5], [0.9, 0.5], [1.1, 0.5]]
            [problem.g]
            kind = "affine"
            slope = [1.0, 0.5]
            offset = 0.0
            [operator]
            family = "p-laplace"
            [operator.params]
            p = 3.0
            mu = 0.0
            [operator.coefficient]
            kind = "constant"
            value = 1.0
        "#;
        let (m, tmp) = run_cfg(toml_text);
        assert!(m.all_gated_pass, "checks: {:?}", m.checks);
        let text = std::fs::read_to_string(tmp.path().join("regularity.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let excess = v["report"]["excess"][0]["excess"].as_array().unwrap();
        assert!(!excess.is_empty());
        // affine solution of a constant-coefficient problem: excess at the
        // true slope is at roundoff level on every rung
        for e in excess {
            assert!(e.as_f64().unwrap() < 1e-16, "excess {e}");
        }
    }

    #[test]
    fn exploratory_failure_does_not_gate() {
        // orthotropic p = 4 fails A1-monotone; listed exploratory it must
        // not flip the verdict
        let toml_text = r#"
            command = "check-operator"
            seed = 7
            [measurement]
            samples = 20000
            assumptions = ["A1-monotone", "A2-growth"]
            cap = 1e3
            [gates]
            exploratory = ["assumption:A1-monotone"]
            [operator]
            family = "orthotropic"
            [operator.params]
            p = 4.0
            mu = 0.0
            [operator.coefficient]
            kind = "constant"
            value = 1.0
        "#;
        let (m, _tmp) = run_cfg(toml_text);
        let a1 = m.checks.iter().find(|c| c.name == "assumption:A1-monotone").unwrap();
        assert!(!a1.pass && !a1.gated);
        assert!(m.all_gated_pass, "checks: {:?}", m.checks);
    }
}
