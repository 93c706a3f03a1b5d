//! Sparse solver stack for the quasilinear FE systems.
//!
//! The weak problem is: find u with the given boundary behaviour such that
//!
//!   int a(sy * x, xi0 + grad u) . grad v = int f v + int F . grad v
//!
//! for all admissible v. Both the periodic cell problem (torus mesh, fixed
//! gradient offset xi0, zero right-hand side, mean-zero constraint) and the
//! Dirichlet boundary-value problem (xi0 = 0, data f and F) are instances.
//!
//! Nonlinear solve: damped Newton with an Armijo line search on the residual
//! norm, preceded by a regularization continuation when the flux is
//! degenerate (mu = 0). The linear solves use conjugate gradients with an
//! incomplete Cholesky IC(0) preconditioner; on the torus the one-dimensional
//! null space of constants is projected out of every preconditioned residual.
//!
//! Determinism: local element quantities are computed in parallel by index,
//! and the scatter into rows is a per-row gather over a precomputed adjacency
//! list in fixed element order, so results are bit-identical for any worker
//! count.

use crate::error::{Error, Result};
use crate::grid::{Field, FieldLoc, Mesh};
use crate::operators::OperatorSpec;
use crate::par;
use crate::params::ExponentParams;
use crate::vect::{SmallMat, Vect};
use std::sync::Arc;

/// Flux abstraction the Newton machinery works against. Implemented by
/// `OperatorSpec` (analytic) and by the effective-table interpolant
/// (finite-difference Jacobian).
pub trait FluxModel: Sync {
    fn flux(&self, y: &Vect, z: &Vect, delta: f64) -> Vect;
    fn flux_jacobian(&self, y: &Vect, z: &Vect, delta: f64) -> SmallMat;
    fn flux_secant(&self, y: &Vect, z: &Vect, delta: f64) -> SmallMat;
    fn exponents(&self) -> &ExponentParams;
    /// Whether the degenerate regularization continuation should run.
    fn needs_continuation(&self) -> bool;
}

impl FluxModel for OperatorSpec {
    fn flux(&self, y: &Vect, z: &Vect, delta: f64) -> Vect {
        self.flux_reg(y, z, delta)
    }

    fn flux_jacobian(&self, y: &Vect, z: &Vect, delta: f64) -> SmallMat {
        self.jacobian(y, z, delta)
    }

    fn flux_secant(&self, y: &Vect, z: &Vect, delta: f64) -> SmallMat {
        self.secant(y, z, delta)
    }

    fn exponents(&self) -> &ExponentParams {
        &self.params
    }

    fn needs_continuation(&self) -> bool {
        self.params.mu < 1e-3
            && (self.params.p - 2.0).abs() > 1e-12
            && self.family != crate::operators::Family::LinearMatrix
    }
}

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Clone, Debug)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_cols(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Position of column j in row i, if present.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        par::map_indexed(self.n, |i| {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.col_idx[k]];
            }
            s
        })
    }
}

/// Incomplete Cholesky factor with the lower-triangular pattern of A.
pub struct Ic0 {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    diag_pos: Vec<usize>,
}

impl Ic0 {
    /// Factor the lower triangle of `a`; `shift` is added to the diagonal.
    /// Returns None when a pivot collapses.
    pub fn factor(a: &Csr, shift: f64) -> Option<Ic0> {
        let n = a.n;
        let mut row_ptr = vec![0usize; n + 1];
        for i in 0..n {
            let cnt = a.row_cols(i).iter().filter(|&&j| j <= i).count();
            row_ptr[i + 1] = row_ptr[i] + cnt;
        }
        let nnz = row_ptr[n];
        let mut col_idx = vec![0usize; nnz];
        let mut vals = vec![0.0f64; nnz];
        let mut diag_pos = vec![0usize; n];
        for i in 0..n {
            let mut k = row_ptr[i];
            for idx in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[idx];
                if j <= i {
                    col_idx[k] = j;
                    vals[k] = a.vals[idx];
                    if j == i {
                        vals[k] += shift;
                        diag_pos[i] = k;
                    }
                    k += 1;
                }
            }
        }
        for i in 0..n {
            for ki in row_ptr[i]..=diag_pos[i] {
                let j = col_idx[ki];
                // dot of rows i and j over columns < j (two-pointer merge)
                let mut s = vals[ki];
                let (mut pi, mut pj) = (row_ptr[i], row_ptr[j]);
                let (ei, ej) = (diag_pos[i], diag_pos[j]);
                while pi < ei && pj < ej {
                    let (ci, cj) = (col_idx[pi], col_idx[pj]);
                    if ci == cj {
                        if ci >= j {
                            break;
                        }
                        s -= vals[pi] * vals[pj];
                        pi += 1;
                        pj += 1;
                    } else if ci < cj {
                        pi += 1;
                    } else {
                        pj += 1;
                    }
                }
                if j == i {
                    if s <= 0.0 {
                        return None;
                    }
                    vals[ki] = s.sqrt();
                } else {
                    vals[ki] = s / vals[diag_pos[j]];
                }
            }
        }
        Some(Ic0 { row_ptr, col_idx, vals, diag_pos })
    }

    /// Solve L L^T z = r.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.diag_pos.len();
        // forward: L y = r
        for i in 0..n {
            let mut s = r[i];
            for k in self.row_ptr[i]..self.diag_pos[i] {
                s -= self.vals[k] * z[self.col_idx[k]];
            }
            z[i] = s / self.vals[self.diag_pos[i]];
        }
        // backward: L^T z = y (column sweep)
        for i in (0..n).rev() {
            let zi = z[i] / self.vals[self.diag_pos[i]];
            z[i] = zi;
            for k in self.row_ptr[i]..self.diag_pos[i] {
                z[self.col_idx[k]] -= self.vals[k] * zi;
            }
        }
    }
}

/// Boundary handling for a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bc {
    /// Fix the solution at mesh.boundary_nodes; the iterate carries the data.
    Dirichlet,
    /// Periodic torus: pin the constant mode by mean-zero projection.
    TorusMeanZero,
}

/// Everything that defines one quasilinear system on a mesh.
pub struct ProblemSetup<'a> {
    pub mesh: &'a Arc<Mesh>,
    pub op: &'a dyn FluxModel,
    /// The coefficient is evaluated at y = y_scale * x (1/eps for BVPs).
    pub y_scale: f64,
    /// Fixed gradient offset: the flux sees xi_offset + grad u.
    pub xi_offset: Vect,
    /// Scalar source, evaluated at element centroids.
    pub rhs_f: Option<&'a Field>,
    /// Vector field F contributing int F . grad v (per-element).
    pub rhs_div: Option<&'a Field>,
    pub bc: Bc,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_newton: usize,
    pub max_cg: usize,
    /// Regularization floor for Jacobian assembly on degenerate operators.
    pub jac_floor: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { rtol: 1e-9, atol: 1e-12, max_newton: 80, max_cg: 20_000, jac_floor: 1e-10 }
    }
}

#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct SolveStats {
    pub newton_iters: usize,
    pub cg_iters: usize,
    pub residual: f64,
    pub continuation_stages: usize,
}

/// Precomputed mesh connectivity: node -> (element, local vertex) incidences
/// in element order, plus the symmetric CSR sparsity pattern.
pub struct Assembler {
    pub mesh: Arc<Mesh>,
    adj: Vec<Vec<(u32, u8)>>,
    pattern: Csr,
    /// Row index of each nonzero in the pattern.
    row_of: Vec<u32>,
    boundary: Vec<bool>,
}

impl Assembler {
    pub fn new(mesh: &Arc<Mesh>) -> Assembler {
        let n = mesh.node_count();
        let mut adj: Vec<Vec<(u32, u8)>> = vec![Vec::new(); n];
        for (e, el) in mesh.elements.iter().enumerate() {
            for v in 0..el.vertex_count() {
                adj[el.nodes[v]].push((e as u32, v as u8));
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols_per_row: Vec<Vec<usize>> = par::map_indexed(n, |i| {
            let mut cols = Vec::new();
            for &(e, _) in &adj[i] {
                let el = &mesh.elements[e as usize];
                for w in 0..el.vertex_count() {
                    cols.push(el.nodes[w]);
                }
            }
            cols.sort_unstable();
            cols.dedup();
            cols
        });
        for i in 0..n {
            row_ptr[i + 1] = row_ptr[i] + cols_per_row[i].len();
        }
        let mut col_idx = Vec::with_capacity(row_ptr[n]);
        for cols in cols_per_row.drain(..) {
            col_idx.extend(cols);
        }
        let vals = vec![0.0; col_idx.len()];
        let pattern = Csr { n, row_ptr, col_idx, vals };
        let mut row_of = vec![0u32; pattern.nnz()];
        for i in 0..n {
            for k in pattern.row_ptr[i]..pattern.row_ptr[i + 1] {
                row_of[k] = i as u32;
            }
        }
        let boundary = mesh.is_boundary();
        Assembler { mesh: Arc::clone(mesh), adj, pattern, row_of, boundary }
    }

    /// Per-element gradient of the iterate plus the fixed offset.
    fn element_gradients(&self, setup: &ProblemSetup, u: &[f64]) -> Vec<Vect> {
        let elems = &self.mesh.elements;
        par::map_indexed(elems.len(), |e| {
            let el = &elems[e];
            let mut g = setup.xi_offset;
            for v in 0..el.vertex_count() {
                g += el.grads[v].scale(u[el.nodes[v]]);
            }
            g
        })
    }

    /// Nonlinear residual r_i = int a . grad phi_i - int f phi_i - int F . grad phi_i,
    /// with `delta` regularizing the flux (continuation stages).
    pub fn residual(&self, setup: &ProblemSetup, u: &[f64], delta: f64) -> Vec<f64> {
        let elems = &self.mesh.elements;
        let grads = self.element_gradients(setup, u);
        let fluxes: Vec<Vect> = par::map_indexed(elems.len(), |e| {
            let el = &elems[e];
            let y = el.centroid.scale(setup.y_scale);
            setup.op.flux(&y, &grads[e], delta)
        });
        let nv = self.mesh.dim + 1;
        let r = par::map_indexed(self.pattern.n, |i| {
            if setup.bc == Bc::Dirichlet && self.boundary[i] {
                return 0.0;
            }
            let mut s = 0.0;
            for &(e, v) in &self.adj[i] {
                let el = &elems[e as usize];
                let mut t = el.vol * fluxes[e as usize].dot(&el.grads[v as usize]);
                if let Some(f) = setup.rhs_f {
                    t -= el.vol * f.centroid_value(e as usize, 0) / nv as f64;
                }
                if let Some(ff) = setup.rhs_div {
                    t -= el.vol * ff.vect_at(e as usize).dot(&el.grads[v as usize]);
                }
                s += t;
            }
            s
        });
        r
    }

    /// Like `residual` but with every element contribution taken in absolute
    /// value: an upper envelope of the assembly magnitude, used to estimate
    /// the roundoff floor of the residual.
    pub fn residual_magnitude(&self, setup: &ProblemSetup, u: &[f64], delta: f64) -> Vec<f64> {
        let elems = &self.mesh.elements;
        let grads = self.element_gradients(setup, u);
        let fluxes: Vec<Vect> = par::map_indexed(elems.len(), |e| {
            let el = &elems[e];
            let y = el.centroid.scale(setup.y_scale);
            setup.op.flux(&y, &grads[e], delta)
        });
        let nv = self.mesh.dim + 1;
        par::map_indexed(self.pattern.n, |i| {
            if setup.bc == Bc::Dirichlet && self.boundary[i] {
                return 0.0;
            }
            let mut s = 0.0;
            for &(e, v) in &self.adj[i] {
                let el = &elems[e as usize];
                s += (el.vol * fluxes[e as usize].dot(&el.grads[v as usize])).abs();
                if let Some(f) = setup.rhs_f {
                    s += (el.vol * f.centroid_value(e as usize, 0) / nv as f64).abs();
                }
                if let Some(ff) = setup.rhs_div {
                    s += (el.vol * ff.vect_at(e as usize).dot(&el.grads[v as usize])).abs();
                }
            }
            s
        })
    }

    /// Assemble the tangent matrix. `secant` swaps the true Jacobian for the
    /// Kacanov secant B(z); `delta` regularizes degenerate weights.
    pub fn tangent(&self, setup: &ProblemSetup, u: &[f64], delta: f64, secant: bool) -> Csr {
        let elems = &self.mesh.elements;
        let dim = self.mesh.dim;
        let grads = self.element_gradients(setup, u);
        let mats: Vec<crate::vect::SmallMat> = par::map_indexed(elems.len(), |e| {
            let el = &elems[e];
            let y = el.centroid.scale(setup.y_scale);
            if secant {
                setup.op.flux_secant(&y, &grads[e], delta)
            } else {
                setup.op.flux_jacobian(&y, &grads[e], delta)
            }
        });
        let mut k = self.pattern.clone();
        let dirichlet = setup.bc == Bc::Dirichlet;
        let vals: Vec<f64> = {
            let pat = &k;
            par::map_indexed(pat.nnz(), |idx| {
                let i = self.row_of[idx] as usize;
                let j = pat.col_idx[idx];
                if dirichlet && (self.boundary[i] || self.boundary[j]) {
                    return if i == j { 1.0 } else { 0.0 };
                }
                let mut s = 0.0;
                for &(e, v) in &self.adj[i] {
                    let el = &elems[e as usize];
                    // find the local index of j in this element, if any
                    let nv = el.vertex_count();
                    for w in 0..nv {
                        if el.nodes[w] == j {
                            let gi = el.grads[v as usize];
                            let gj = el.grads[w];
                            let m = &mats[e as usize];
                            let mut q = 0.0;
                            for a in 0..dim {
                                for b in 0..dim {
                                    q += gi[a] * m.get(a, b) * gj[b];
                                }
                            }
                            s += el.vol * q;
                        }
                    }
                }
                s
            })
        };
        k.vals = vals;
        k
    }
}

fn mean_project(x: &mut [f64]) {
    let m: f64 = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v -= m;
    }
}

fn norm2(x: &[f64]) -> f64 {
    par::sum_indexed(x.len(), |i| x[i] * x[i]).sqrt()
}

/// Preconditioned CG for K z = b. Projects out the constant mode when
/// `project` is set. Returns (solution, iterations).
pub fn pcg(
    k: &Csr,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
    project: bool,
) -> Result<(Vec<f64>, usize)> {
    let n = k.n;
    // IC(0) with escalating diagonal shifts, Jacobi as a last resort
    let avg_diag = (0..n)
        .map(|i| k.find(i, i).map(|p| k.vals[p]).unwrap_or(0.0))
        .sum::<f64>()
        / n as f64;
    let mut ic = None;
    for shift_rel in [0.0, 1e-8, 1e-4, 1e-2] {
        ic = Ic0::factor(k, shift_rel * avg_diag);
        if ic.is_some() {
            break;
        }
    }
    let jacobi: Option<Vec<f64>> = if ic.is_none() {
        Some(
            (0..n)
                .map(|i| {
                    let d = k.find(i, i).map(|p| k.vals[p]).unwrap_or(0.0);
                    if d > 0.0 {
                        1.0 / d
                    } else {
                        1.0
                    }
                })
                .collect(),
        )
    } else {
        None
    };
    let apply_m = |r: &[f64], z: &mut [f64]| {
        if let Some(f) = &ic {
            f.apply(r, z);
        } else if let Some(d) = &jacobi {
            for i in 0..n {
                z[i] = d[i] * r[i];
            }
        }
        if project {
            mean_project(z);
        }
    };
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    if project {
        mean_project(&mut r);
    }
    let bnorm = norm2(&r).max(f64::MIN_POSITIVE);
    let tol = rtol * bnorm;
    let mut z = vec![0.0; n];
    apply_m(&r, &mut z);
    let mut p = z.clone();
    let mut rz: f64 = par::sum_indexed(n, |i| r[i] * z[i]);
    let mut iters = 0;
    while iters < max_iter {
        if norm2(&r) <= tol {
            break;
        }
        let q = k.matvec(&p);
        let pq: f64 = par::sum_indexed(n, |i| p[i] * q[i]);
        if pq <= 0.0 {
            return Err(Error::SolverFailure(
                "CG: matrix not positive definite on the search space".into(),
                norm2(&r),
            ));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        apply_m(&r, &mut z);
        let rz_new: f64 = par::sum_indexed(n, |i| r[i] * z[i]);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iters += 1;
    }
    if norm2(&r) > tol && iters >= max_iter {
        return Err(Error::SolverFailure(format!("CG stalled after {iters} iterations"), norm2(&r)));
    }
    if project {
        mean_project(&mut x);
    }
    Ok((x, iters))
}

/// Newton stages for one regularization level. Returns the achieved residual.
fn newton_stage(
    asm: &Assembler,
    setup: &ProblemSetup,
    u: &mut Vec<f64>,
    delta: f64,
    target: f64,
    opts: &SolveOptions,
    stats: &mut SolveStats,
) -> Result<f64> {
    let project = setup.bc == Bc::TorusMeanZero;
    let mut r = asm.residual(setup, u, delta);
    if project {
        mean_project(&mut r);
    }
    let mut rnorm = norm2(&r);
    let mut used_secant = false;
    for _ in 0..opts.max_newton {
        if rnorm <= target {
            return Ok(rnorm);
        }
        stats.newton_iters += 1;
        let jac_delta = delta.max(opts.jac_floor);
        let k = asm.tangent(setup, u, jac_delta, used_secant);
        // loose CG far from the root, tight for the last digits
        let eta = if rnorm > 100.0 * target { 1e-3 } else { 1e-7 };
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let (du, cg_it) = pcg(&k, &neg_r, eta, opts.max_cg, project)?;
        stats.cg_iters += cg_it;
        // Armijo backtracking on the residual norm
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..25 {
            let trial: Vec<f64> = (0..u.len()).map(|i| u[i] + t * du[i]).collect();
            let mut rt = asm.residual(setup, &trial, delta);
            if project {
                mean_project(&mut rt);
            }
            let rtn = norm2(&rt);
            if rtn <= (1.0 - 1e-4 * t) * rnorm || rtn <= target {
                *u = trial;
                if project {
                    mean_project(u);
                }
                r = rt;
                rnorm = rtn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if !used_secant {
                // swap to the Kacanov secant and keep going
                used_secant = true;
                continue;
            }
            return Err(Error::SolverFailure(
                "Newton line search stalled".into(),
                rnorm,
            ));
        }
        // a full Newton step that worked: go back to true Jacobian
        if t == 1.0 {
            used_secant = false;
        }
    }
    if rnorm <= target {
        Ok(rnorm)
    } else {
        Err(Error::SolverFailure("Newton did not reach tolerance".into(), rnorm))
    }
}

/// Solve the quasilinear system. `init` seeds the iterate (and carries the
/// Dirichlet data on boundary nodes); defaults to zero.
pub fn solve_quasilinear(
    setup: &ProblemSetup,
    asm: &Assembler,
    init: Option<Vec<f64>>,
    opts: &SolveOptions,
) -> Result<(Field, SolveStats)> {
    let u = init.unwrap_or_else(|| vec![0.0; asm.mesh.node_count()]);
    let scale_ref = u.clone();
    solve_quasilinear_impl(setup, asm, u, &scale_ref, false, opts)
}

/// Warm-started solve: `warm` seeds the iterate (already carrying the
/// Dirichlet data), while the convergence target is computed from the cold
/// iterate `scale_ref` so the tolerance matches a cold solve of the same
/// problem. The regularization continuation is skipped; a good initial
/// iterate puts Newton inside its basin even at the degenerate limit.
pub fn solve_quasilinear_warm(
    setup: &ProblemSetup,
    asm: &Assembler,
    warm: Vec<f64>,
    scale_ref: &[f64],
    opts: &SolveOptions,
) -> Result<(Field, SolveStats)> {
    solve_quasilinear_impl(setup, asm, warm, scale_ref, true, opts)
}

fn solve_quasilinear_impl(
    setup: &ProblemSetup,
    asm: &Assembler,
    mut u: Vec<f64>,
    scale_ref: &[f64],
    skip_continuation: bool,
    opts: &SolveOptions,
) -> Result<(Field, SolveStats)> {
    let n = asm.mesh.node_count();
    if u.len() != n || scale_ref.len() != n {
        return Err(Error::invalid("initial iterate length mismatch"));
    }
    let mut stats = SolveStats::default();
    if setup.bc == Bc::TorusMeanZero {
        mean_project(&mut u);
    }
    // residual scale for the relative tolerance: data norm or first residual.
    // The absolute part is weighted by the assembly magnitude so that
    // residuals at the roundoff floor of large data still count as converged.
    let r0 = norm2(&asm.residual(setup, scale_ref, 0.0));
    let rmag = norm2(&asm.residual_magnitude(setup, scale_ref, 0.0));
    let scale = r0.max(opts.atol);
    let target = opts.rtol * scale + opts.atol * (1.0 + rmag);

    // continuation ladder for degenerate operators: solve with a regularized
    // flux first, then tighten delta toward mu
    let degenerate = setup.op.needs_continuation() && !skip_continuation;
    let mut deltas: Vec<f64> = Vec::new();
    if degenerate {
        let mut d = 1.0;
        while d > 1e-6 {
            deltas.push(d);
            d *= 0.1;
        }
    }
    deltas.push(0.0);
    let stages = deltas.len();
    for (k, &delta) in deltas.iter().enumerate() {
        let stage_target = if k + 1 == stages { target } else { (target * 1e3).min(1e-4 * scale) };
        stats.continuation_stages += 1;
        let res = newton_stage(asm, setup, &mut u, delta, stage_target, opts, &mut stats);
        match res {
            Ok(r) => stats.residual = r,
            Err(e) => {
                if k + 1 == stages {
                    return Err(e);
                }
                // intermediate stage may stall near the degenerate limit;
                // carry the iterate forward and let the next stage decide
            }
        }
    }
    let mut f = Field::zeros(&asm.mesh, 1, FieldLoc::Nodal);
    f.values = u;
    Ok((f, stats))
}
