//! The operator zoo: periodic monotone fluxes a(y, xi) and statistical
//! verifiers for the four assumption packages plus the spatial continuity
//! modulus.
//!
//! Built-in families (all satisfy a(y,0) = 0):
//! - linear-matrix:          a(y,z) = c(y) z
//! - p-laplace:              a(y,z) = c(y) |z|^{p-2} z
//! - regularized-p-laplace:  a(y,z) = c(y) (mu+|z|)^{p-2} z
//! - orthotropic:            a(y,z) = c(y) sum_i |z_i|^{p-2} z_i e_i
//! - finsler:                a(y,z) = c(y) ||z||^{p-1} grad ||z||,
//!                           ||z|| = (sum_i w_i |z_i|^s)^{1/s}
//!
//! Verification is statistical: adversarial sub-families (collinear pairs,
//! tiny/huge magnitudes, jump-straddling points) are forced into the sample
//! stream, the smallest Lambda making the inequality hold is fitted as a
//! supremum, and the verdict compares it against a cap plus a
//! scale-divergence heuristic. A "fails" verdict is sound (it exhibits a
//! witness); a "holds" verdict is best-effort.

use crate::error::{Error, Result};
use crate::params::{powf_guarded, ExponentParams};
use crate::par;
use crate::vect::{SmallMat, Vect};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    LinearMatrix,
    PLaplace,
    RegularizedPLaplace,
    Orthotropic,
    Finsler,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::LinearMatrix => "linear-matrix",
            Family::PLaplace => "p-laplace",
            Family::RegularizedPLaplace => "regularized-p-laplace",
            Family::Orthotropic => "orthotropic",
            Family::Finsler => "finsler",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Family::LinearMatrix => "linear flux c(y) z",
            Family::PLaplace => "degenerate p-Laplace flux c(y)|z|^{p-2}z",
            Family::RegularizedPLaplace => "non-degenerate flux c(y)(mu+|z|)^{p-2}z",
            Family::Orthotropic => "componentwise flux c(y) sum |z_i|^{p-2} z_i e_i",
            Family::Finsler => "Finsler p-Laplacian of a weighted s-norm",
        }
    }
}

pub const ALL_FAMILIES: [Family; 5] = [
    Family::LinearMatrix,
    Family::PLaplace,
    Family::RegularizedPLaplace,
    Family::Orthotropic,
    Family::Finsler,
];

/// Scalar Y-periodic coefficient field multiplying the flux.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientField {
    Constant {
        value: f64,
    },
    /// Varies in one coordinate only: value[i] on [breakpoints[i], breakpoints[i+1]),
    /// the last interval wrapping around to breakpoints[0] + 1.
    Laminate {
        direction: usize,
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    /// values[0] on cells with even parity, values[1] on odd (2x2 per period).
    Checkerboard {
        values: [f64; 2],
    },
    /// base + sum of amp * cos(2 pi k.y + phase), clipped into [lower, upper].
    TrigPolynomial {
        base: f64,
        terms: Vec<TrigTerm>,
        lower: f64,
        upper: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub k: Vec<i32>,
    pub amp: f64,
    #[serde(default)]
    pub phase: f64,
}

impl CoefficientField {
    pub fn constant(value: f64) -> Self {
        CoefficientField::Constant { value }
    }

    /// Half-period laminate in direction 0 taking the two given values.
    pub fn half_laminate(v0: f64, v1: f64) -> Self {
        CoefficientField::Laminate {
            direction: 0,
            breakpoints: vec![0.0, 0.5],
            values: vec![v0, v1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "coefficient bounds must satisfy 0 < lower <= upper < inf, got ({lo}, {hi})"
            )));
        }
        if let CoefficientField::Laminate { breakpoints, values, direction } = self {
            if breakpoints.len() != values.len() || breakpoints.is_empty() {
                return Err(Error::invalid("laminate breakpoints/values length mismatch"));
            }
            if !breakpoints.windows(2).all(|w| w[0] < w[1])
                || breakpoints[0] < 0.0
                || *breakpoints.last().unwrap() >= 1.0
            {
                return Err(Error::invalid("laminate breakpoints must be strictly increasing in [0,1)"));
            }
            if *direction > 2 {
                return Err(Error::invalid("laminate direction out of range"));
            }
        }
        Ok(())
    }

    /// Uniform ellipticity bounds of the field.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            CoefficientField::Constant { value } => (*value, *value),
            CoefficientField::Laminate { values, .. } => {
                let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = values.iter().cloned().fold(0.0, f64::max);
                (lo, hi)
            }
            CoefficientField::Checkerboard { values } => {
                (values[0].min(values[1]), values[0].max(values[1]))
            }
            CoefficientField::TrigPolynomial { lower, upper, .. } => (*lower, *upper),
        }
    }

    pub fn eval(&self, y: &Vect) -> f64 {
        let y = y.frac();
        match self {
            CoefficientField::Constant { value } => *value,
            CoefficientField::Laminate { direction, breakpoints, values } => {
                let t = y[*direction];
                // last interval wraps: t below the first breakpoint belongs to it
                let mut idx = values.len() - 1;
                for i in (0..breakpoints.len()).rev() {
                    if t >= breakpoints[i] {
                        idx = i;
                        break;
                    }
                }
                values[idx]
            }
            CoefficientField::Checkerboard { values } => {
                let mut parity = 0usize;
                for i in 0..y.dim() {
                    parity += (y[i] * 2.0).floor() as usize;
                }
                values[parity % 2]
            }
            CoefficientField::TrigPolynomial { base, terms, lower, upper } => {
                let mut c = *base;
                for t in terms {
                    let mut ph = t.phase;
                    for (i, &ki) in t.k.iter().enumerate() {
                        ph += 2.0 * std::f64::consts::PI * ki as f64 * y[i];
                    }
                    c += t.amp * ph.cos();
                }
                c.clamp(*lower, *upper)
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            CoefficientField::Constant { .. } => "constant",
            CoefficientField::Laminate { .. } => "laminate",
            CoefficientField::Checkerboard { .. } => "checkerboard",
            CoefficientField::TrigPolynomial { .. } => "trig-polynomial",
        }
    }
}

/// Finsler norm data: ||z|| = (sum w_i |z_i|^s)^{1/s}.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinslerNorm {
    pub weights: Vec<f64>,
    pub s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub family: Family,
    pub coefficient: CoefficientField,
    pub params: ExponentParams,
    /// Required for the finsler family, ignored otherwise.
    #[serde(default)]
    pub finsler: Option<FinslerNorm>,
}

impl OperatorSpec {
    pub fn new(family: Family, coefficient: CoefficientField, params: ExponentParams) -> Self {
        OperatorSpec { family, coefficient, params, finsler: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.coefficient.validate()?;
        if self.family == Family::Finsler {
            let f = self
                .finsler
                .as_ref()
                .ok_or_else(|| Error::invalid("finsler family needs a [operator.finsler] section"))?;
            let p = self.params.p;
            let (lo, hi) = (p.min(2.0), p.max(2.0));
            if f.s < lo || f.s > hi {
                return Err(Error::invalid(format!(
                    "finsler smoothness s = {} must lie between min(p,2) and max(p,2)",
                    f.s
                )));
            }
            if f.weights.iter().any(|w| *w <= 0.0) {
                return Err(Error::invalid("finsler weights must be positive"));
            }
        }
        Ok(())
    }

    /// The flux a(y, z); periodic in y by construction.
    pub fn evaluate(&self, y: &Vect, z: &Vect) -> Vect {
        self.flux_reg(y, z, 0.0)
    }

    /// Flux with the degenerate weight shifted by `delta` (solver
    /// continuation); delta = 0 reproduces `evaluate` exactly.
    pub fn flux_reg(&self, y: &Vect, z: &Vect, delta: f64) -> Vect {
        let c = self.coefficient.eval(y);
        let p = self.params.p;
        let n = z.dim();
        match self.family {
            Family::LinearMatrix => z.scale(c),
            Family::PLaplace => {
                let w = powf_guarded(delta + z.norm(), p - 2.0);
                if w.is_infinite() {
                    return Vect::zeros(n);
                }
                z.scale(c * w)
            }
            Family::RegularizedPLaplace => {
                let mu = self.params.mu + delta;
                let w = powf_guarded(mu + z.norm(), p - 2.0);
                if w.is_infinite() {
                    return Vect::zeros(n);
                }
                z.scale(c * w)
            }
            Family::Orthotropic => {
                let mut v = Vect::zeros(n);
                for i in 0..n {
                    let w = powf_guarded(delta + z[i].abs(), p - 2.0);
                    v[i] = if w.is_infinite() { 0.0 } else { c * w * z[i] };
                }
                v
            }
            Family::Finsler => {
                let f = self.finsler.as_ref().expect("finsler params");
                let s = f.s;
                let mut norm_s = 0.0;
                for i in 0..n {
                    norm_s += f.weights[i] * (delta + z[i].abs()).powf(s);
                }
                let norm = norm_s.powf(1.0 / s);
                let head = powf_guarded(norm, p - s);
                if head.is_infinite() || norm == 0.0 {
                    return Vect::zeros(n);
                }
                let mut v = Vect::zeros(n);
                for i in 0..n {
                    let w = powf_guarded(delta + z[i].abs(), s - 2.0);
                    v[i] = if w.is_infinite() { 0.0 } else { c * head * f.weights[i] * w * z[i] };
                }
                v
            }
        }
    }

    /// Hand-coded Jacobian da/dz, symmetric positive semidefinite for all
    /// built-ins; `delta` regularizes the degenerate weights.
    pub fn jacobian(&self, y: &Vect, z: &Vect, delta: f64) -> SmallMat {
        let c = self.coefficient.eval(y);
        let p = self.params.p;
        let n = z.dim();
        match self.family {
            Family::LinearMatrix => SmallMat::scaled_identity(n, c),
            Family::PLaplace | Family::RegularizedPLaplace => {
                let mu = if self.family == Family::PLaplace {
                    delta
                } else {
                    self.params.mu + delta
                };
                let r = z.norm();
                let w = powf_guarded(mu + r, p - 2.0);
                if !w.is_finite() {
                    // mu = 0, z = 0, p < 2: callers must pass delta > 0 here
                    return SmallMat::scaled_identity(n, 0.0);
                }
                let mut m = SmallMat::scaled_identity(n, c * w);
                if r > 0.0 {
                    let zh = z.scale(1.0 / r);
                    m.add_outer(c * w * (p - 2.0) * r / (mu + r), &zh);
                }
                m
            }
            Family::Orthotropic => {
                let mut m = SmallMat::zeros(n);
                for i in 0..n {
                    let r = z[i].abs();
                    // d/dz_i of (delta + |z_i|)^{p-2} z_i
                    let w = powf_guarded(delta + r, p - 3.0);
                    let d = if w.is_finite() { c * w * ((delta + r) + (p - 2.0) * r) } else { 0.0 };
                    m.set(i, i, d);
                }
                m
            }
            Family::Finsler => {
                let f = self.finsler.as_ref().expect("finsler params");
                let s = f.s;
                let mut norm_s = 0.0;
                for i in 0..n {
                    norm_s += f.weights[i] * (delta + z[i].abs()).powf(s);
                }
                let norm = norm_s.powf(1.0 / s);
                if norm == 0.0 {
                    return SmallMat::zeros(n);
                }
                // h_i = w_i (delta+|z_i|)^{s-2} z_i, a = c N^{p-s} h
                let mut h = Vect::zeros(n);
                for i in 0..n {
                    let w = powf_guarded(delta + z[i].abs(), s - 2.0);
                    h[i] = if w.is_finite() { f.weights[i] * w * z[i] } else { 0.0 };
                }
                let mut m = SmallMat::zeros(n);
                let head = powf_guarded(norm, p - s);
                for i in 0..n {
                    let r = z[i].abs();
                    let w = powf_guarded(delta + r, s - 3.0);
                    let d = if w.is_finite() { w * ((delta + r) + (s - 2.0) * r) } else { 0.0 };
                    m.set(i, i, c * head * f.weights[i] * d);
                }
                let cross = powf_guarded(norm, p - 2.0 * s);
                if cross.is_finite() {
                    m.add_outer(c * (p - s) * cross, &h);
                }
                m
            }
        }
    }

    /// Kačanov secant: a symmetric B(z) with a(y,z) ~ B(z) z (exact when
    /// delta = 0 where defined). Used for frozen-coefficient fallback solves.
    pub fn secant(&self, y: &Vect, z: &Vect, delta: f64) -> SmallMat {
        let c = self.coefficient.eval(y);
        let p = self.params.p;
        let n = z.dim();
        match self.family {
            Family::LinearMatrix => SmallMat::scaled_identity(n, c),
            Family::PLaplace => {
                SmallMat::scaled_identity(n, c * (delta + z.norm()).powf(p - 2.0))
            }
            Family::RegularizedPLaplace => SmallMat::scaled_identity(
                n,
                c * (self.params.mu + delta + z.norm()).powf(p - 2.0),
            ),
            Family::Orthotropic => {
                let mut m = SmallMat::zeros(n);
                for i in 0..n {
                    m.set(i, i, c * (delta + z[i].abs()).powf(p - 2.0));
                }
                m
            }
            Family::Finsler => {
                let f = self.finsler.as_ref().expect("finsler params");
                let s = f.s;
                let mut norm_s = 0.0;
                for i in 0..n {
                    norm_s += f.weights[i] * (delta + z[i].abs()).powf(s);
                }
                let norm = norm_s.powf(1.0 / s).max(delta);
                let head = powf_guarded(norm, p - s);
                let mut m = SmallMat::zeros(n);
                for i in 0..n {
                    m.set(i, i, c * head * f.weights[i] * (delta + z[i].abs()).powf(s - 2.0));
                }
                m
            }
        }
    }

    /// Short digest for reports.
    pub fn digest(&self) -> String {
        format!(
            "{}[{} p={} mu={}]",
            self.family.name(),
            self.coefficient.kind_name(),
            self.params.p,
            self.params.mu
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssumptionId {
    A1Continuity,
    A1Monotone,
    A2Monotone,
    A2Growth,
    A3Monotone,
    A3Continuity,
    A4Monotone,
    A4Dual,
}

pub const ALL_ASSUMPTIONS: [AssumptionId; 8] = [
    AssumptionId::A1Continuity,
    AssumptionId::A1Monotone,
    AssumptionId::A2Monotone,
    AssumptionId::A2Growth,
    AssumptionId::A3Monotone,
    AssumptionId::A3Continuity,
    AssumptionId::A4Monotone,
    AssumptionId::A4Dual,
];

impl AssumptionId {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "A1-continuity" => Self::A1Continuity,
            "A1-monotone" => Self::A1Monotone,
            "A2-monotone" => Self::A2Monotone,
            "A2-growth" => Self::A2Growth,
            "A3-monotone" => Self::A3Monotone,
            "A3-continuity" => Self::A3Continuity,
            "A4-monotone" => Self::A4Monotone,
            "A4-dual" => Self::A4Dual,
            _ => return Err(Error::invalid(format!("unknown assumption id '{s}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::A1Continuity => "A1-continuity",
            Self::A1Monotone => "A1-monotone",
            Self::A2Monotone => "A2-monotone",
            Self::A2Growth => "A2-growth",
            Self::A3Monotone => "A3-monotone",
            Self::A3Continuity => "A3-continuity",
            Self::A4Monotone => "A4-monotone",
            Self::A4Dual => "A4-dual",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Self::A1Continuity => "|da| <= L (mu+|x1|+|x2|)^{p-2} |dx|",
            Self::A1Monotone => "L <da,dx> >= (mu+|x1|+|x2|)^{p-2} |dx|^2",
            Self::A2Monotone => "L <da,dx> >= |dx|^p (p>=2) / weighted |dx|^2 (p<2)",
            Self::A2Growth => "|a| <= L (mu+|x|)^{p-1}",
            Self::A3Monotone => "non-degenerate monotonicity with weight 1",
            Self::A3Continuity => "non-degenerate continuity with weight 1",
            Self::A4Monotone => "L <da,dx> >= (mu+|dx|)^{p-2}|dx|^2 (p>=2 branch)",
            Self::A4Dual => "dual monotonicity: <da,dx> controls the V_{p'} modulus of da",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub samples: usize,
    pub seed: u64,
    /// Cap for the fitted constant; defaults to params.lambda_cap.
    #[serde(default)]
    pub cap: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { samples: 50_000, seed: 7, cap: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub assumption_id: String,
    pub holds: bool,
    pub fitted_constant: f64,
    /// Sample (y, xi1, xi2) maximizing the required constant.
    pub witness: Option<(Vect, Vect, Vect)>,
    /// Per-magnitude-decade suprema, for the scale-divergence diagnostic.
    pub decade_suprema: Vec<f64>,
    pub cap: f64,
}

/// One verification sample.
#[derive(Clone, Copy, Debug)]
struct OpSample {
    y: Vect,
    xi1: Vect,
    xi2: Vect,
}

fn op_samples(count: usize, seed: u64, dim: usize, coeff: &CoefficientField) -> Vec<OpSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    // forced adversarial families: near-collinear pairs with shrinking gap
    // (the orthotropic A1 failure lives here), orthogonal pairs, near-zero
    // and huge magnitudes
    let gaps = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let mags = [1e-4, 1e-2, 1.0, 1e2, 1e4];
    let y0 = Vect::zeros(dim);
    for &m in &mags {
        for &t in &gaps {
            let mut xi1 = Vect::basis(dim, 0).scale(m);
            xi1[dim - 1] = m * t;
            let xi2 = Vect::basis(dim, 0).scale(m);
            out.push(OpSample { y: y0, xi1, xi2 });
            // the same gap family rotated off-axis
            let c = 0.6_f64;
            let s = 0.8_f64;
            let rot = |v: &Vect| {
                let mut r = *v;
                let (a, b) = (v[0], v[1]);
                r[0] = c * a - s * b;
                r[1] = s * a + c * b;
                r
            };
            out.push(OpSample { y: y0, xi1: rot(&xi1), xi2: rot(&xi2) });
        }
        // orthogonal pair and pair against zero
        out.push(OpSample {
            y: y0,
            xi1: Vect::basis(dim, 0).scale(m),
            xi2: Vect::basis(dim, dim - 1).scale(m),
        });
        out.push(OpSample { y: y0, xi1: Vect::basis(dim, 0).scale(m), xi2: Vect::zeros(dim) });
    }
    // points straddling coefficient jumps (exercised by check_modulus)
    if let CoefficientField::Laminate { direction, breakpoints, .. } = coeff {
        for bp in breakpoints {
            for &g in &gaps {
                let mut y = Vect::zeros(dim);
                y[*direction] = (bp - g / 2.0).rem_euclid(1.0);
                out.push(OpSample { y, xi1: Vect::basis(dim, 0), xi2: Vect::zeros(dim) });
            }
        }
    }
    out.truncate(count);
    let rand_xi = |rng: &mut ChaCha8Rng| {
        let mag = 10f64.powf(rng.gen_range(-4.0..4.0));
        let mut v = Vect::zeros(dim);
        for i in 0..dim {
            v[i] = rng.gen_range(-1.0..1.0);
        }
        let n = v.norm();
        if n == 0.0 {
            Vect::basis(dim, 0).scale(mag)
        } else {
            v.scale(mag / n)
        }
    };
    while out.len() < count {
        let mut y = Vect::zeros(dim);
        for i in 0..dim {
            y[i] = rng.gen_range(0.0..1.0);
        }
        let xi1 = rand_xi(&mut rng);
        let xi2 = rand_xi(&mut rng);
        out.push(OpSample { y, xi1, xi2 });
    }
    out
}

/// Required Lambda for one sample, or 0.0 when vacuous.
fn required_lambda(op: &OperatorSpec, id: AssumptionId, s: &OpSample) -> f64 {
    let p = op.params.p;
    let mu = op.params.mu;
    let a1 = op.evaluate(&s.y, &s.xi1);
    let a2 = op.evaluate(&s.y, &s.xi2);
    let da = a1 - a2;
    let dxi = s.xi1 - s.xi2;
    let inner = da.dot(&dxi);
    let ratio = |num: f64, den: f64| -> f64 {
        if num <= 0.0 {
            0.0
        } else if den <= 0.0 {
            f64::INFINITY
        } else {
            num / den
        }
    };
    match id {
        AssumptionId::A1Continuity => {
            let w = powf_guarded(mu + s.xi1.norm() + s.xi2.norm(), p - 2.0);
            ratio(da.norm(), w * dxi.norm())
        }
        AssumptionId::A1Monotone => {
            let rhs = powf_guarded(mu + s.xi1.norm() + s.xi2.norm(), p - 2.0) * {
                let d = dxi.norm();
                d * d
            };
            ratio(rhs, inner)
        }
        AssumptionId::A2Monotone => {
            let d = dxi.norm();
            let rhs = if p >= 2.0 {
                d.powf(p)
            } else {
                powf_guarded(mu + s.xi1.norm() + s.xi2.norm(), p - 2.0) * d * d
            };
            ratio(rhs, inner)
        }
        AssumptionId::A2Growth => {
            let den = powf_guarded(mu + s.xi1.norm(), p - 1.0);
            ratio(a1.norm(), den)
        }
        AssumptionId::A3Monotone => {
            let d = dxi.norm();
            let rhs = if p >= 2.0 {
                (1.0 + d).powf(p - 2.0) * d * d
            } else {
                (1.0 + s.xi1.norm() + s.xi2.norm()).powf(p - 2.0) * d * d
            };
            ratio(rhs, inner)
        }
        AssumptionId::A3Continuity => {
            let d = dxi.norm();
            let den = if p >= 2.0 {
                (1.0 + s.xi1.norm() + s.xi2.norm()).powf(p - 2.0) * d
            } else {
                (1.0 + d).powf(p - 2.0) * d
            };
            ratio(da.norm(), den)
        }
        AssumptionId::A4Monotone => {
            let d = dxi.norm();
            let rhs = if p >= 2.0 {
                powf_guarded(mu + d, p - 2.0) * d * d
            } else {
                powf_guarded(mu + s.xi1.norm() + s.xi2.norm(), p - 2.0) * d * d
            };
            ratio(rhs, inner)
        }
        AssumptionId::A4Dual => {
            let pc = op.params.p_conj();
            let dan = da.norm();
            let mup = powf_guarded(mu, p - 1.0);
            let rhs = if p >= 2.0 {
                powf_guarded(mup + a1.norm() + a2.norm(), pc - 2.0) * dan * dan
            } else {
                powf_guarded(mup + dan, pc - 2.0) * dan * dan
            };
            ratio(rhs, inner)
        }
    }
}

fn verdict_from_values(
    values: &[f64],
    samples: &[OpSample],
    cap: f64,
    id: &str,
) -> VerificationReport {
    // fitted constant and witness: serial argmax in sample order
    let mut fitted = 0.0f64;
    let mut wi = None;
    for (i, &v) in values.iter().enumerate() {
        if v > fitted {
            fitted = v;
            wi = Some(i);
        }
    }
    // scale-divergence heuristic: bucket by the decade of max(|xi1|, |xi2|)
    // and look for suprema that keep growing by 10x per decade at the top
    let mut decades = vec![0.0f64; 10];
    for (i, s) in samples.iter().enumerate() {
        let m = s.xi1.norm().max(s.xi2.norm()).max(1e-30);
        let d = ((m.log10() + 5.0).floor() as isize).clamp(0, 9) as usize;
        decades[d] = decades[d].max(values[i]);
    }
    let mut diverging = false;
    let active: Vec<f64> = decades.iter().cloned().filter(|v| *v > 0.0).collect();
    if active.len() >= 3 {
        let k = active.len();
        if active[k - 1] > 10.0 * active[k - 2] && active[k - 2] > 10.0 * active[k - 3] {
            diverging = true;
        }
    }
    let holds = fitted <= cap && !diverging;
    VerificationReport {
        assumption_id: id.to_string(),
        holds,
        fitted_constant: fitted,
        witness: wi.map(|i| (samples[i].y, samples[i].xi1, samples[i].xi2)),
        decade_suprema: decades,
        cap,
    }
}

pub fn verify_assumption(
    op: &OperatorSpec,
    id: AssumptionId,
    sampler: &SamplerConfig,
) -> Result<VerificationReport> {
    op.validate()?;
    let cap = sampler.cap.unwrap_or(op.params.lambda_cap);
    let dim = 2;
    let samples = op_samples(sampler.samples, sampler.seed, dim, &op.coefficient);
    let values = par::map_indexed(samples.len(), |i| {
        let v = required_lambda(op, id, &samples[i]);
        if v.is_finite() {
            v
        } else {
            f64::MAX
        }
    });
    Ok(verdict_from_values(&values, &samples, cap, id.name()))
}

/// Fit C in |a(x,z) - a(y,z)| <= C |x-y|^alpha (mu+|z|)^{p-2} |z|.
pub fn check_modulus(
    op: &OperatorSpec,
    holder_alpha: f64,
    sampler: &SamplerConfig,
) -> Result<VerificationReport> {
    if !(holder_alpha > 0.0 && holder_alpha <= 1.0) {
        return Err(Error::invalid("holder_alpha must lie in (0, 1]"));
    }
    op.validate()?;
    let cap = sampler.cap.unwrap_or(op.params.lambda_cap);
    let dim = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let p = op.params.p;
    let mu = op.params.mu;
    // pairs (x, y, z): random plus forced jump-straddling pairs
    let mut triples: Vec<(Vect, Vect, Vect)> = Vec::with_capacity(sampler.samples);
    if let CoefficientField::Laminate { direction, breakpoints, .. } = &op.coefficient {
        for bp in breakpoints {
            for g in [1e-2, 1e-4, 1e-6] {
                let mut x = Vect::zeros(dim);
                let mut y = Vect::zeros(dim);
                x[*direction] = (bp - g).rem_euclid(1.0);
                y[*direction] = (bp + g).rem_euclid(1.0);
                triples.push((x, y, Vect::basis(dim, 0)));
            }
        }
    }
    while triples.len() < sampler.samples {
        let mut x = Vect::zeros(dim);
        let mut y = Vect::zeros(dim);
        for i in 0..dim {
            x[i] = rng.gen_range(0.0..1.0);
            y[i] = rng.gen_range(0.0..1.0);
        }
        let mag = 10f64.powf(rng.gen_range(-3.0..3.0));
        let mut z = Vect::zeros(dim);
        for i in 0..dim {
            z[i] = rng.gen_range(-1.0..1.0);
        }
        let zn = z.norm();
        let z = if zn == 0.0 { Vect::basis(dim, 0).scale(mag) } else { z.scale(mag / zn) };
        triples.push((x, y, z));
    }
    let values: Vec<f64> = triples
        .iter()
        .map(|(x, y, z)| {
            let num = (op.evaluate(x, z) - op.evaluate(y, z)).norm();
            let dist = (*x - *y).norm();
            let den = dist.powf(holder_alpha) * powf_guarded(mu + z.norm(), p - 2.0) * z.norm();
            if num <= 0.0 {
                0.0
            } else if den <= 0.0 {
                f64::MAX
            } else {
                num / den
            }
        })
        .collect();
    let samples: Vec<OpSample> = triples
        .iter()
        .map(|(x, y, z)| OpSample { y: *x, xi1: *y, xi2: *z })
        .collect();
    Ok(verdict_from_values(&values, &samples, cap, "modulus"))
}
