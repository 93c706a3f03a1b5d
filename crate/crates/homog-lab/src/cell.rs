//! Cell problems on the torus: the corrector phi_xi, the flux corrector
//! sigma_xi, and their structural diagnostics.
//!
//! The corrector solves div a(y, xi + grad phi_xi) = 0 on Y with periodic
//! boundary conditions and zero mean. The flux corrector solves the
//! constant-coefficient Poisson problems
//!
//!   -Lap sigma_jk = d_k J . e_j - d_j J . e_k,   J = a(., xi + grad phi) - mean
//!
//! spectrally: J is lumped-projected from elements to nodes, transformed by
//! FFT, and the Poisson inversion drops the zero mode (and the Nyquist modes
//! of the odd derivative factors). sigma is stored strictly upper-triangular
//! and mirrored with a sign on read, so the antisymmetry sigma_jk = -sigma_kj
//! is exact by representation.

use crate::error::{Error, Result};
use crate::grid::{self, gradient, Field, FieldLoc, Region, TorusGrid};
use crate::operators::OperatorSpec;
use crate::par;
use crate::solver::{solve_quasilinear, Assembler, Bc, ProblemSetup, SolveOptions};
use crate::vect::Vect;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Nonlinear solver knobs, deserialized from the `[solver]` config table.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub damping: bool,
    pub continuation: bool,
    /// Default-off switch: make sigma satisfy the divergence identity
    /// exactly by building it from the solenoidal projection of J.
    pub exact_divergence: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            max_iters: 80,
            damping: true,
            continuation: true,
            exact_divergence: false,
        }
    }
}

impl SolverConfig {
    pub fn to_options(&self) -> SolveOptions {
        SolveOptions {
            rtol: self.tol,
            atol: 1e-13,
            max_newton: self.max_iters,
            ..SolveOptions::default()
        }
    }
}

#[derive(Clone)]
pub struct CorrectorSolution {
    pub xi: Vect,
    /// Mean-zero periodic corrector (nodal).
    pub phi: Field,
    /// F = xi + grad phi (per element).
    pub f_field: Field,
    /// a(y, F) per element.
    pub flux: Field,
    /// Quadrature mean of the flux field: the homogenized value at xi.
    pub mean_flux: Vect,
    pub residual_norm: f64,
    pub iterations: usize,
}

pub fn solve_corrector(
    op: &OperatorSpec,
    xi: Vect,
    grid: &TorusGrid,
    mesh: &Arc<grid::Mesh>,
    asm: &Assembler,
    cfg: &SolverConfig,
) -> Result<CorrectorSolution> {
    op.validate()?;
    let setup = ProblemSetup {
        mesh,
        op,
        y_scale: 1.0,
        xi_offset: xi,
        rhs_f: None,
        rhs_div: None,
        bc: Bc::TorusMeanZero,
    };
    let (phi_raw, stats) = solve_quasilinear(&setup, asm, None, &cfg.to_options())?;
    // volume-exact mean-zero normalization of phi
    let phi = grid::mean_zero(&phi_raw, &Region::All)?;
    let g = gradient(&phi);
    let dim = mesh.dim;
    let mut f_field = g.clone();
    for e in 0..mesh.elements.len() {
        for c in 0..dim {
            f_field.values[e * dim + c] += xi[c];
        }
    }
    let mut flux = Field::zeros(mesh, dim, FieldLoc::PerElement);
    let elems = &mesh.elements;
    let fvals = &f_field;
    let vals: Vec<f64> = par::map_indexed(elems.len() * dim, |k| {
        let (e, c) = (k / dim, k % dim);
        let a = op.evaluate(&elems[e].centroid, &fvals.vect_at(e));
        a[c]
    });
    flux.values = vals;
    let mean_flux = grid::mean_vect(&flux, &Region::All)?;
    let _ = grid;
    Ok(CorrectorSolution {
        xi,
        phi,
        f_field,
        flux,
        mean_flux,
        residual_norm: stats.residual,
        iterations: stats.newton_iters,
    })
}

/// n-dimensional in-place FFT on a cells^n nodal array in TorusGrid node
/// order (axis 0 fastest). Inverse transforms are normalized by 1/len.
pub fn fftn(data: &mut [Complex<f64>], n: usize, cells: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(cells)
    } else {
        planner.plan_fft_forward(cells)
    };
    let total = data.len();
    debug_assert_eq!(total, cells.pow(n as u32));
    let mut line = vec![Complex::new(0.0, 0.0); cells];
    for axis in 0..n {
        let stride = cells.pow(axis as u32);
        let lines = total / cells;
        for l in 0..lines {
            // decompose the line index into the non-axis coordinates
            let block = l / stride;
            let offset = l % stride;
            let base = block * stride * cells + offset;
            for k in 0..cells {
                line[k] = data[base + k * stride];
            }
            fft.process(&mut line);
            for k in 0..cells {
                data[base + k * stride] = line[k];
            }
        }
    }
    if inverse {
        let scale = 1.0 / total as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Signed integer frequency for node index `i` on a ring of length `cells`;
/// the Nyquist index of even grids maps to 0 so that odd-derivative
/// multipliers stay conjugate-symmetric.
fn freq(i: usize, cells: usize) -> f64 {
    let half = cells / 2;
    if 2 * half == cells && i == half {
        0.0
    } else if i <= half {
        i as f64
    } else {
        i as f64 - cells as f64
    }
}

#[derive(Clone)]
pub struct FluxCorrector {
    pub n: usize,
    pub cells: usize,
    /// sigma_jk for j < k, in lexicographic (j,k) order, nodal mean-zero.
    pub upper: Vec<Field>,
    /// Nodal J (lumped projection of flux minus mean flux).
    pub j_nodal: Field,
}

impl FluxCorrector {
    fn upper_index(&self, j: usize, k: usize) -> usize {
        // strictly upper triangular, row-major: (0,1), (0,2), (1,2)
        debug_assert!(j < k);
        match (j, k) {
            (0, 1) => 0,
            (0, 2) => 1,
            (1, 2) => 2,
            _ => unreachable!(),
        }
    }

    /// sigma_{jk} with the sign implied by antisymmetry; the diagonal is a
    /// zero field.
    pub fn sigma(&self, j: usize, k: usize) -> Field {
        if j == k {
            return Field::zeros(&self.j_nodal.mesh, 1, FieldLoc::Nodal);
        }
        if j < k {
            self.upper[self.upper_index(j, k)].clone()
        } else {
            let mut f = self.upper[self.upper_index(k, j)].clone();
            for v in &mut f.values {
                *v = -*v;
            }
            f
        }
    }
}

/// Spectral first derivative along `axis` of a nodal torus field.
pub fn spectral_derivative(f: &Field, grid: &TorusGrid, axis: usize) -> Field {
    let n = grid.n;
    let cells = grid.cells;
    let mut data: Vec<Complex<f64>> =
        f.values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fftn(&mut data, n, cells, false);
    for (idx, v) in data.iter_mut().enumerate() {
        let iv = TorusGrid::unravel(idx, n, cells);
        let m = freq(iv[axis], cells);
        *v *= Complex::new(0.0, 2.0 * std::f64::consts::PI * m);
    }
    fftn(&mut data, n, cells, true);
    let mut out = Field::zeros(&f.mesh, 1, FieldLoc::Nodal);
    out.values = data.iter().map(|c| c.re).collect();
    out
}

pub fn solve_flux_corrector(
    sol: &CorrectorSolution,
    grid: &TorusGrid,
    cfg: &SolverConfig,
) -> Result<FluxCorrector> {
    let n = grid.n;
    let cells = grid.cells;
    let mesh = &sol.phi.mesh;
    if mesh.node_count() != cells.pow(n as u32) {
        return Err(Error::invalid("flux corrector needs the corrector's torus grid"));
    }
    // J per element, then lumped to nodes
    let mut j_elem = sol.flux.clone();
    for e in 0..mesh.elements.len() {
        for c in 0..n {
            j_elem.values[e * n + c] -= sol.mean_flux[c];
        }
    }
    let j_nodal = grid::project_to_nodes(&j_elem);
    // forward transforms of each component
    let total = cells.pow(n as u32);
    let mut jhat: Vec<Vec<Complex<f64>>> = Vec::with_capacity(n);
    for c in 0..n {
        let mut data: Vec<Complex<f64>> =
            (0..total).map(|i| Complex::new(j_nodal.get(i, c), 0.0)).collect();
        fftn(&mut data, n, cells, false);
        jhat.push(data);
    }
    if cfg.exact_divergence {
        // solenoidal projection: Jhat -= m (m . Jhat) / |m|^2, which makes
        // the spectral divergence identity exact by construction
        for idx in 0..total {
            let iv = TorusGrid::unravel(idx, n, cells);
            let mut m2 = 0.0;
            let mut mdotj = Complex::new(0.0, 0.0);
            for d in 0..n {
                let md = freq(iv[d], cells);
                m2 += md * md;
                mdotj += jhat[d][idx] * md;
            }
            if m2 == 0.0 {
                continue;
            }
            for d in 0..n {
                let md = freq(iv[d], cells);
                jhat[d][idx] -= mdotj * (md / m2);
            }
        }
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut upper = Vec::new();
    for j in 0..n {
        for k in (j + 1)..n {
            let mut shat = vec![Complex::new(0.0, 0.0); total];
            for idx in 0..total {
                let iv = TorusGrid::unravel(idx, n, cells);
                let mut m2 = 0.0;
                for d in 0..n {
                    let md = freq(iv[d], cells);
                    m2 += md * md;
                }
                if m2 == 0.0 {
                    continue;
                }
                let mk = freq(iv[k], cells);
                let mj = freq(iv[j], cells);
                // sigma_hat = i (m_k Jhat_j - m_j Jhat_k) / (2 pi |m|^2)
                let num = jhat[j][idx] * mk - jhat[k][idx] * mj;
                shat[idx] = Complex::new(0.0, 1.0) * num / (two_pi * m2);
            }
            fftn(&mut shat, n, cells, true);
            let mut f = Field::zeros(mesh, 1, FieldLoc::Nodal);
            f.values = shat.iter().map(|c| c.re).collect();
            upper.push(f);
        }
    }
    let mut j_out = j_nodal;
    if cfg.exact_divergence {
        // report the projected J so diagnostics compare like with like
        for c in 0..n {
            let mut data = jhat[c].clone();
            fftn(&mut data, n, cells, true);
            for i in 0..total {
                j_out.values[i * n + c] = data[i].re;
            }
        }
    }
    Ok(FluxCorrector { n, cells, upper, j_nodal: j_out })
}

/// Relative L^2 error of the identity -sum_k d_k sigma_jk = J_j, maximized
/// over j; the derivative is spectral. Returns 0 when J is identically zero.
pub fn sigma_divergence_error(fc: &FluxCorrector, grid: &TorusGrid) -> f64 {
    let n = fc.n;
    let total = fc.cells.pow(n as u32);
    let mut worst = 0.0f64;
    for j in 0..n {
        let mut lhs = vec![0.0f64; total];
        for k in 0..n {
            if k == j {
                continue;
            }
            let s = fc.sigma(j, k);
            let d = spectral_derivative(&s, grid, k);
            for i in 0..total {
                lhs[i] -= d.values[i];
            }
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..total {
            let jj = fc.j_nodal.get(i, j);
            num += (lhs[i] - jj) * (lhs[i] - jj);
            den += jj * jj;
        }
        if den <= 1e-28 {
            if num.sqrt() > 1e-12 {
                worst = worst.max(f64::INFINITY);
            }
            continue;
        }
        worst = worst.max((num / den).sqrt());
    }
    worst
}

/// Realized constants of the corrector bounds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundsReport {
    pub xi_norm: f64,
    /// ||phi||_{W^{1,p}}^p + ||sigma||_{W^{1,p'}}^{p'}.
    pub natural_left: f64,
    /// (mu + |xi|)^p.
    pub natural_right: f64,
    pub natural_ratio: f64,
    /// ||V_p(phi)||_{W^{1,2}}^2 + ||V_{p'}(sigma)||_{W^{1,2}}^2, mu = 1 only.
    pub controlled_left: Option<f64>,
    /// |V_p(xi)|^2.
    pub controlled_right: Option<f64>,
    pub controlled_ratio: Option<f64>,
}

fn w1q_power(scalar: &Field, grid_deriv: &[Field], q: f64) -> f64 {
    // ||f||_q^q + sum_axis ||d_axis f||_q^q by centroid quadrature
    let mut s = grid::lq_norm(scalar, q, &Region::All, false).unwrap_or(0.0).powf(q);
    for d in grid_deriv {
        s += grid::lq_norm(d, q, &Region::All, false).unwrap_or(0.0).powf(q);
    }
    s
}

pub fn corrector_bounds_report(
    sol: &CorrectorSolution,
    fc: &FluxCorrector,
    op: &OperatorSpec,
    grid: &TorusGrid,
) -> BoundsReport {
    let p = op.params.p;
    let mu = op.params.mu;
    let pc = op.params.p_conj();
    let n = grid.n;
    // natural bound
    let phi_grads: Vec<Field> = (0..n)
        .map(|ax| {
            let g = gradient(&sol.phi);
            let mut out = Field::zeros(&sol.phi.mesh, 1, FieldLoc::PerElement);
            for e in 0..out.values.len() {
                out.values[e] = g.get(e, ax);
            }
            out
        })
        .collect();
    let mut left = w1q_power(&sol.phi, &phi_grads, p);
    for j in 0..n {
        for k in (j + 1)..n {
            let s = fc.sigma(j, k);
            let derivs: Vec<Field> = (0..n).map(|ax| spectral_derivative(&s, grid, ax)).collect();
            // both orientations of the antisymmetric pair contribute
            left += 2.0 * w1q_power(&s, &derivs, pc);
        }
    }
    let right = (mu + sol.xi.norm()).powf(p);
    // controlled bound only in the non-degenerate regime
    let (mut cl, mut cr, mut cratio) = (None, None, None);
    if (mu - 1.0).abs() < 1e-12 {
        let vmap = |f: &Field, q: f64| {
            let mut v = f.clone();
            for x in &mut v.values {
                *x = (1.0 + x.abs()).powf((q - 2.0) / 2.0) * *x;
            }
            v
        };
        let vphi = vmap(&sol.phi, p);
        let vphi_grads: Vec<Field> = (0..n).map(|ax| spectral_derivative(&vphi, grid, ax)).collect();
        let mut lsum = w1q_power(&vphi, &vphi_grads, 2.0);
        for j in 0..n {
            for k in (j + 1)..n {
                let vs = vmap(&fc.sigma(j, k), pc);
                let vd: Vec<Field> = (0..n).map(|ax| spectral_derivative(&vs, grid, ax)).collect();
                lsum += 2.0 * w1q_power(&vs, &vd, 2.0);
            }
        }
        let r = sol.xi.norm();
        let rv = (1.0 + r).powf(p - 2.0) * r * r;
        cl = Some(lsum);
        cr = Some(rv);
        cratio = if rv > 0.0 { Some(lsum / rv) } else { None };
    }
    BoundsReport {
        xi_norm: sol.xi.norm(),
        natural_left: left,
        natural_right: right,
        natural_ratio: if right > 0.0 { left / right } else { 0.0 },
        controlled_left: cl,
        controlled_right: cr,
        controlled_ratio: cratio,
    }
}
