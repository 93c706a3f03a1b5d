//! V- and W-function evaluation and inequality audits.
//!
//! The V-function V_{mu,p}(z) = (mu + |z|)^{(p-2)/2} z measures p-adapted
//! energy; the audits here estimate, by sampling, the smallest constant
//! that makes each of the ten algebraic inequalities hold, and compare it
//! against a cap produced by a brute-force grid oracle.
//!
//! Conventions:
//! - Inequalities that are stated for general mu (monotone-modulus,
//!   scaling, triangle-V) use V_{mu,p} with the caller's mu. The remaining
//!   ones are audited exactly as displayed, i.e. with the weight 1 + |z|.
//! - 0/0 ratios are skipped (the inequality is vacuous there); x/0 with
//!   x > 0 yields +inf and fails any cap.

use crate::error::{Error, Result};
use crate::params::{powf_guarded, ExponentParams};
use crate::par;
use crate::vect::Vect;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// V_{mu,p}(z) = (mu + |z|)^{(p-2)/2} z.
pub fn v_eval(z: &Vect, params: &ExponentParams) -> Result<Vect> {
    if !z.is_finite() {
        return Err(Error::invalid("v_eval: non-finite input"));
    }
    Ok(v_raw(z, params.p, params.mu))
}

fn v_raw(z: &Vect, p: f64, mu: f64) -> Vect {
    let w = powf_guarded(mu + z.norm(), (p - 2.0) / 2.0);
    if w.is_infinite() {
        // mu = 0, z = 0, p < 2: the product is 0 * inf; the function value is 0.
        return Vect::zeros(z.dim());
    }
    z.scale(w)
}

/// W_p(z1,z2): V_p(z1-z2) for p >= 2, (1+|z1|+|z2|)^{(p-2)/2}(z1-z2) for p < 2.
pub fn w_eval(z1: &Vect, z2: &Vect, params: &ExponentParams) -> Result<Vect> {
    if z1.dim() != z2.dim() {
        return Err(Error::invalid("w_eval: dimension mismatch"));
    }
    if !z1.is_finite() || !z2.is_finite() {
        return Err(Error::invalid("w_eval: non-finite input"));
    }
    let p = params.p;
    if p >= 2.0 {
        Ok(v_raw(&(*z1 - *z2), p, 1.0))
    } else {
        let w = (1.0 + z1.norm() + z2.norm()).powf((p - 2.0) / 2.0);
        Ok((*z1 - *z2).scale(w))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InequalityId {
    MonotoneModulus,
    Scaling,
    TriangleV,
    TriangleW,
    Equivalence,
    Young0,
    Young,
    Brasco,
    DualBound,
    WToV,
}

pub const ALL_INEQUALITIES: [InequalityId; 10] = [
    InequalityId::MonotoneModulus,
    InequalityId::Scaling,
    InequalityId::TriangleV,
    InequalityId::TriangleW,
    InequalityId::Equivalence,
    InequalityId::Young0,
    InequalityId::Young,
    InequalityId::Brasco,
    InequalityId::DualBound,
    InequalityId::WToV,
];

impl InequalityId {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "monotone-modulus" => Self::MonotoneModulus,
            "scaling" => Self::Scaling,
            "triangle-V" | "triangle-v" => Self::TriangleV,
            "triangle-W" | "triangle-w" => Self::TriangleW,
            "equivalence" => Self::Equivalence,
            "young-0" => Self::Young0,
            "young" => Self::Young,
            "brasco" => Self::Brasco,
            "dual-bound" => Self::DualBound,
            "W-to-V" | "w-to-v" => Self::WToV,
            _ => return Err(Error::invalid(format!("unknown inequality id '{s}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::MonotoneModulus => "monotone-modulus",
            Self::Scaling => "scaling",
            Self::TriangleV => "triangle-V",
            Self::TriangleW => "triangle-W",
            Self::Equivalence => "equivalence",
            Self::Young0 => "young-0",
            Self::Young => "young",
            Self::Brasco => "brasco",
            Self::DualBound => "dual-bound",
            Self::WToV => "W-to-V",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Self::MonotoneModulus => "|V(z)|^2 nondecreasing in |z| along rays",
            Self::Scaling => "two-sided lambda-scaling bound for |V(lambda z)|^2",
            Self::TriangleV => "|V(z1-z2)|^2 <= c(|V(z1)|^2 + |V(z2)|^2)",
            Self::TriangleW => "|W(z1,z2)|^2 <= c(|W(z1,z3)|^2 + |W(z2,z3)|^2)",
            Self::Equivalence => "|V(z1)-V(z2)|^2 ~ (1+|z1|+|z2|)^{p-2}|z1-z2|^2",
            Self::Young0 => "|z||w| <= tau|V_p(z)|^2 + c(tau)|V_p'(w)|^2",
            Self::Young => "(1+|z|)^{p-2}|z||w| <= tau|V_p(z)|^2 + c(tau)|V_p(w)|^2",
            Self::Brasco => "|A-B|^p <= c ||A|^{p-1}A - |B|^{p-1}B| (scalars)",
            Self::DualBound => "dual bound for |V_p'((1+|z1|+|z2|)^{p-2} z1)|^2",
            Self::WToV => "|V(z1-z2)| <= c|W(z1,z2)|(1+tau^{-(2-p)/p}) + tau(|V(z1)|+|V(z2)|)",
        }
    }
}

/// Sample for one audit draw: two main vectors, an auxiliary vector for the
/// three-point inequalities, and a positive scale factor.
#[derive(Clone, Copy, Debug)]
pub struct VSample {
    pub z1: Vect,
    pub z2: Vect,
    pub z3: Vect,
    pub lambda: f64,
}

const TAU_SWEEP: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditReport {
    pub name: String,
    pub p: f64,
    pub mu: f64,
    pub samples: usize,
    pub empirical_constant: f64,
    pub cap: f64,
    pub pass: bool,
}

/// Draw the audit sample set: forced degenerate magnitudes first, then
/// pseudo-random components uniform in [-10, 10] and lambda log-uniform in
/// [1e-3, 1e3]. Fixed seed means a fixed sample list regardless of sharding.
pub fn sample_set(sample_count: usize, seed: u64, dim: usize) -> Vec<VSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sample_count);
    // forced degenerate cases: z = 0 and |z| in {1e-8, 1e8}, a handful of
    // directions, plus lambda = 1 so the scaling audit sees exact equality
    let mags = [0.0, 1e-8, 1.0, 1e8];
    let dirs: Vec<Vect> = if dim == 2 {
        vec![Vect::new2(1.0, 0.0), Vect::new2(0.0, 1.0), Vect::new2(0.6, -0.8)]
    } else {
        vec![Vect::basis(dim, 0), Vect::basis(dim, dim - 1)]
    };
    'forced: for &m1 in &mags {
        for &m2 in &mags {
            for d1 in &dirs {
                for d2 in &dirs {
                    if out.len() >= sample_count {
                        break 'forced;
                    }
                    out.push(VSample {
                        z1: d1.scale(m1),
                        z2: d2.scale(m2),
                        z3: d1.scale(0.5 * (m1 + m2)),
                        lambda: 1.0,
                    });
                }
            }
        }
    }
    let rand_vec = |rng: &mut ChaCha8Rng| {
        let mut v = Vect::zeros(dim);
        for i in 0..dim {
            v[i] = rng.gen_range(-10.0..10.0);
        }
        v
    };
    while out.len() < sample_count {
        let z1 = rand_vec(&mut rng);
        let z2 = rand_vec(&mut rng);
        let z3 = rand_vec(&mut rng);
        let lambda = 10f64.powf(rng.gen_range(-3.0..3.0));
        out.push(VSample { z1, z2, z3, lambda });
    }
    out
}

/// Smallest constant making inequality `id` hold for this sample (max over
/// the tau sweep where applicable); 0.0 when the sample is vacuous.
pub fn needed_constant(id: InequalityId, s: &VSample, params: &ExponentParams) -> f64 {
    let p = params.p;
    let mu = params.mu;
    let one = ExponentParams { p, mu: 1.0, lambda_cap: params.lambda_cap };
    let ratio = |num: f64, den: f64| -> f64 {
        if den == 0.0 {
            if num <= 1e-300 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            num / den
        }
    };
    match id {
        InequalityId::MonotoneModulus => {
            // shrink z1 by lambda clamped to (0,1]; |V| must not grow
            let lam = s.lambda.min(1.0 / s.lambda);
            let small = v_raw(&s.z1.scale(lam), p, mu).norm();
            let big = v_raw(&s.z1, p, mu).norm();
            ratio(small * small, big * big)
        }
        InequalityId::Scaling => {
            let lam = s.lambda;
            let v2 = {
                let v = v_raw(&s.z1, p, mu).norm();
                v * v
            };
            let val = {
                let v = v_raw(&s.z1.scale(lam), p, mu).norm();
                v * v
            };
            let lo = lam.powf(p - 2.0).min(1.0) * lam * lam * v2;
            let hi = lam.powf(p - 2.0).max(1.0) * lam * lam * v2;
            ratio(lo, val).max(ratio(val, hi))
        }
        InequalityId::TriangleV => {
            let lhs = {
                let v = v_raw(&(s.z1 - s.z2), p, mu).norm();
                v * v
            };
            let r1 = v_raw(&s.z1, p, mu).norm();
            let r2 = v_raw(&s.z2, p, mu).norm();
            ratio(lhs, r1 * r1 + r2 * r2)
        }
        InequalityId::TriangleW => {
            let w12 = w_eval(&s.z1, &s.z2, &one).unwrap().norm();
            let w13 = w_eval(&s.z1, &s.z3, &one).unwrap().norm();
            let w23 = w_eval(&s.z2, &s.z3, &one).unwrap().norm();
            ratio(w12 * w12, w13 * w13 + w23 * w23)
        }
        InequalityId::Equivalence => {
            let d = {
                let v = v_raw(&s.z1, p, 1.0) - v_raw(&s.z2, p, 1.0);
                let n = v.norm();
                n * n
            };
            let mid = (1.0 + s.z1.norm() + s.z2.norm()).powf(p - 2.0) * {
                let n = (s.z1 - s.z2).norm();
                n * n
            };
            ratio(d, mid).max(ratio(mid, d))
        }
        InequalityId::Young0 => {
            let z = &s.z1;
            let w = &s.z2;
            let vz2 = {
                let n = v_raw(z, p, 1.0).norm();
                n * n
            };
            let vw2 = {
                let n = v_raw(w, params.p_conj(), 1.0).norm();
                n * n
            };
            let mut worst: f64 = 0.0;
            for &tau in &TAU_SWEEP {
                let num = z.norm() * w.norm() - tau * vz2;
                let den = tau.powf(-1.0 / (p - 1.0)).max(tau.powf(-1.0)) * vw2;
                worst = worst.max(ratio(num.max(0.0), den));
            }
            worst
        }
        InequalityId::Young => {
            let z = &s.z1;
            let w = &s.z2;
            let vz2 = {
                let n = v_raw(z, p, 1.0).norm();
                n * n
            };
            let vw2 = {
                let n = v_raw(w, p, 1.0).norm();
                n * n
            };
            let lhs0 = (1.0 + z.norm()).powf(p - 2.0) * z.norm() * w.norm();
            let mut worst: f64 = 0.0;
            for &tau in &TAU_SWEEP {
                let num = lhs0 - tau * vz2;
                let den = tau.powf(-1.0).max(tau.powf(-(p - 1.0))) * vw2;
                worst = worst.max(ratio(num.max(0.0), den));
            }
            worst
        }
        InequalityId::Brasco => {
            let a = s.z1[0];
            let b = s.z2[0];
            let num = (a - b).abs().powf(p);
            let den =
                (powf_guarded(a.abs(), p - 1.0) * a - powf_guarded(b.abs(), p - 1.0) * b).abs();
            ratio(num, den)
        }
        InequalityId::DualBound => {
            let pc = params.p_conj();
            let weight = (1.0 + s.z1.norm() + s.z2.norm()).powf(p - 2.0);
            let lhs = {
                let n = v_raw(&s.z1.scale(weight), pc, 1.0).norm();
                n * n
            };
            let vz1 = {
                let n = v_raw(&s.z1, p, 1.0).norm();
                n * n
            };
            let vz2 = {
                let n = v_raw(&s.z2, p, 1.0).norm();
                n * n
            };
            let mut worst: f64 = 0.0;
            for &tau in &TAU_SWEEP {
                let num = lhs - if p > 2.0 { tau * vz2 } else { 0.0 };
                let den = (1.0 + tau.powf(-(p - 2.0) / p)) * vz1;
                worst = worst.max(ratio(num.max(0.0), den));
            }
            worst
        }
        InequalityId::WToV => {
            // trivial with c = 1 for p >= 2 since W = V(z1-z2); the same
            // formula covers that case
            let vd = v_raw(&(s.z1 - s.z2), p, 1.0).norm();
            let wn = w_eval(&s.z1, &s.z2, &ExponentParams { p, mu: 1.0, lambda_cap: 1.0 })
                .unwrap()
                .norm();
            let v1 = v_raw(&s.z1, p, 1.0).norm();
            let v2 = v_raw(&s.z2, p, 1.0).norm();
            let mut worst: f64 = 0.0;
            for &tau in &TAU_SWEEP {
                let num = vd - tau * (v1 + v2);
                let den = wn * (1.0 + tau.powf(-(2.0 - p) / p));
                worst = worst.max(ratio(num.max(0.0), den));
            }
            worst
        }
    }
}

/// Brute-force grid oracle for the audit cap: deterministic dense sweep over
/// magnitudes 10^-3..10^3 (log grid) and a fan of directions, including
/// collinear and antipodal pairs. The cap is the grid supremum times a 1.25
/// safety margin (random samples live in the same magnitude envelope).
pub fn brute_force_cap(id: InequalityId, params: &ExponentParams) -> f64 {
    let mags: Vec<f64> = (0..=24).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)).collect();
    let angles: Vec<f64> = (0..16).map(|k| k as f64 * std::f64::consts::PI / 8.0).collect();
    let lambdas: Vec<f64> = (0..=12).map(|k| 10f64.powf(-3.0 + 0.5 * k as f64)).collect();
    let mut sup: f64 = 0.0;
    for &m1 in &mags {
        for &m2 in &mags {
            for &th in &angles {
                let z1 = Vect::new2(m1, 0.0);
                let z2 = Vect::new2(m2 * th.cos(), m2 * th.sin());
                // z3 grid kept coarse: midpoint, origin-ish, and a rotation
                for z3 in [
                    (z1 + z2).scale(0.5),
                    Vect::new2(1e-3, 0.0),
                    Vect::new2(-m2 * th.sin(), m2 * th.cos()),
                ] {
                    for &lambda in &lambdas {
                        let s = VSample { z1, z2, z3, lambda };
                        let c = needed_constant(id, &s, params);
                        if c.is_finite() {
                            sup = sup.max(c);
                        }
                    }
                }
            }
        }
    }
    (sup * 1.25).max(1.0)
}

/// Run one inequality audit. When `cap` is None the brute-force grid oracle
/// supplies it. Samples are sharded in fixed order, so the result does not
/// depend on the worker count.
pub fn inequality_audit(
    id: InequalityId,
    sample_count: usize,
    params: &ExponentParams,
    seed: u64,
    cap: Option<f64>,
) -> Result<AuditReport> {
    params.validate()?;
    let cap = cap.unwrap_or_else(|| brute_force_cap(id, params));
    let samples = sample_set(sample_count, seed, 2);
    let sup = par::max_indexed(samples.len(), |i| {
        let c = needed_constant(id, &samples[i], params);
        if c.is_finite() {
            c
        } else {
            f64::MAX
        }
    })
    .max(0.0);
    Ok(AuditReport {
        name: id.name().to_string(),
        p: params.p,
        mu: params.mu,
        samples: sample_count,
        empirical_constant: sup,
        cap,
        pass: sup <= cap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn prm(p: f64, mu: f64) -> ExponentParams {
        ExponentParams::new(p, mu)
    }

    #[test]
    fn v_eval_definition_cases() {
        // p = 2 leaves z unchanged
        let v = v_eval(&Vect::new2(3.0, 4.0), &prm(2.0, 1.0)).unwrap();
        assert_eq!(v.as_slice(), &[3.0, 4.0]);
        // p = 4: (1+1)^1 = 2
        let v = v_eval(&Vect::new2(1.0, 0.0), &prm(4.0, 1.0)).unwrap();
        assert_abs_diff_eq!(v[0], 2.0, epsilon = 1e-15);
        // zero maps to zero, also in the degenerate mu = 0, p < 2 case
        assert_eq!(v_eval(&Vect::zeros(2), &prm(3.0, 1.0)).unwrap().norm(), 0.0);
        assert_eq!(v_eval(&Vect::zeros(2), &prm(1.5, 0.0)).unwrap().norm(), 0.0);
    }

    #[test]
    fn w_eval_definition_cases() {
        let p = prm(2.0, 1.0);
        let w = w_eval(&Vect::new2(1.0, 0.0), &Vect::new2(0.0, 1.0), &p).unwrap();
        assert_eq!(w.as_slice(), &[1.0, -1.0]);
        // p = 3, z1 = 2e1, z2 = e1: V_3(e1) = sqrt(2) e1
        let w = w_eval(&Vect::new2(2.0, 0.0), &Vect::new2(1.0, 0.0), &prm(3.0, 1.0)).unwrap();
        assert_abs_diff_eq!(w[0], 2f64.sqrt(), epsilon = 1e-15);
        // equal arguments vanish
        let z = Vect::new2(0.3, -0.7);
        assert_eq!(w_eval(&z, &z, &prm(1.5, 1.0)).unwrap().norm(), 0.0);
    }

    #[test]
    fn v_odd_symmetry() {
        let z = Vect::new2(1.3, -2.1);
        for p in [1.5, 2.0, 3.0, 4.0] {
            let a = v_eval(&z, &prm(p, 1.0)).unwrap();
            let b = v_eval(&(-z), &prm(p, 1.0)).unwrap();
            assert_eq!((a + b).norm(), 0.0);
        }
    }

    #[test]
    fn p2_constants_are_one() {
        for id in [InequalityId::Equivalence, InequalityId::Scaling] {
            let rep = inequality_audit(id, 20_000, &prm(2.0, 1.0), 7, Some(2.0)).unwrap();
            assert!(
                (rep.empirical_constant - 1.0).abs() <= 1e-12,
                "{}: constant {} not 1",
                rep.name,
                rep.empirical_constant
            );
        }
    }

    #[test]
    fn audits_pass_against_grid_caps() {
        // oracle first: cap from the dense-grid supremum, then the sampled
        // audit must stay below it
        for p in [1.5, 3.0] {
            for id in ALL_INEQUALITIES {
                let rep = inequality_audit(id, 20_000, &prm(p, 1.0), 7, None).unwrap();
                assert!(rep.pass, "{} failed at p={p}: c={} cap={}", rep.name, rep.empirical_constant, rep.cap);
            }
        }
    }

    #[test]
    fn unknown_id_rejected() {
        assert!(InequalityId::parse("nope").is_err());
        assert!(InequalityId::parse("triangle-V").is_ok());
    }
}
