//! Temporary timing probe (not part of the suite).

use homog_lab::bvp::{solve_oscillating, BVProblem};
use homog_lab::bvp::BoundaryData;
use homog_lab::config::LoadSpec;
use homog_lab::grid::DomainShape;
use homog_lab::operators::{CoefficientField, Family, OperatorSpec};
use homog_lab::regularity::large_scale_cz_sides;
use homog_lab::solver::SolveOptions;
use homog_lab::{ExponentParams, Vect};
use std::time::Instant;

#[test]
#[ignore]
fn time_cz_rungs() {
    let op = OperatorSpec::new(
        Family::PLaplace,
        CoefficientField::half_laminate(1.0, 8.0),
        ExponentParams::new(3.0, 0.0),
    );
    let domain = DomainShape::Square { center: [1.0, 1.0], half_width: 1.0 };
    let g = BoundaryData::Affine { slope: vec![1.0, 0.5], offset: 0.0 };
    let load_spec = LoadSpec::RadialSingular { center: [1.0, 1.0], exponent: 0.65, axis: 0 };
    let center = Vect::new2(1.0, 1.0);
    for eps in [0.125f64, 0.0625] {
        let m = (16.0 * 2.0 / eps).round() as usize;
        let t0 = Instant::now();
        let prob = BVProblem::new(domain, m, eps, 16, g.clone()).unwrap();
        let load = load_spec.field(&prob.mesh);
        let (u, stats) =
            solve_oscillating(&prob, &op, None, Some(&load), &SolveOptions::default()).unwrap();
        let t_solve = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let (lhs, rhs) =
            large_scale_cz_sides(&u, Some(&load), &center, 1.0, 6.0, eps, &op.params).unwrap();
        let t_cz = t1.elapsed().as_secs_f64();
        println!(
            "m={m} solve {t_solve:.1}s (newton {} cg {} cont {}) cz {t_cz:.1}s lhs {lhs:.3e} rhs {rhs:.3e}",
            stats.newton_iters, stats.cg_iters, stats.continuation_stages
        );
    }
}
