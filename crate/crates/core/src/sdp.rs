//! Feasibility solver for systems of affine matrix inequalities.
//!
//! A constraint is `F(x) = C + Σ_s x_s A_s + Σ_o (L_oᵀ P L̃_o + L̃_oᵀ P L_o)`
//! with scalar unknowns `x_s` and symmetric matrix unknowns `P`, required to
//! be negative (or positive) semidefinite. Matrix unknowns keep their
//! congruence structure so Newton systems can be formed cheaply.

use std::time::Instant;

use nalgebra::{Cholesky, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{sorted_eigen, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    /// `F(x) ⪯ 0`.
    NegSemidef,
    /// `F(x) ⪰ 0`.
    PosSemidef,
}

impl Sense {
    fn sign(self) -> f64 {
        match self {
            Sense::NegSemidef => 1.0,
            Sense::PosSemidef => -1.0,
        }
    }
}

/// `leftᵀ P right + rightᵀ P left`, with `left`, `right` of size
/// `dim(P) × dim(F)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixTerm {
    pub var: usize,
    pub left: Matrix,
    pub right: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineConstraint {
    pub label: String,
    pub sense: Sense,
    pub constant: Matrix,
    pub scalar_terms: Vec<(usize, Matrix)>,
    pub matrix_terms: Vec<MatrixTerm>,
}

impl AffineConstraint {
    pub fn new(label: impl Into<String>, sense: Sense, constant: Matrix) -> Self {
        Self { label: label.into(), sense, constant, scalar_terms: Vec::new(), matrix_terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn scalar(mut self, var: usize, coeff: Matrix) -> Self {
        self.scalar_terms.push((var, coeff));
        self
    }

    pub fn matrix(mut self, var: usize, left: Matrix, right: Matrix) -> Self {
        self.matrix_terms.push(MatrixTerm { var, left, right });
        self
    }
}

/// Unknowns are `n_scalars` reals followed by symmetric matrices, each
/// flattened as its upper triangle row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineConstraintSystem {
    pub n_scalars: usize,
    pub matrix_sizes: Vec<usize>,
    pub constraints: Vec<AffineConstraint>,
}

impl AffineConstraintSystem {
    pub fn new(n_scalars: usize, matrix_sizes: Vec<usize>) -> Self {
        Self { n_scalars, matrix_sizes, constraints: Vec::new() }
    }

    pub fn push(&mut self, c: AffineConstraint) {
        self.constraints.push(c);
    }

    pub fn dim(&self) -> usize {
        self.n_scalars + self.matrix_sizes.iter().map(|n| n * (n + 1) / 2).sum::<usize>()
    }

    pub fn matrix_offset(&self, m: usize) -> usize {
        self.n_scalars + self.matrix_sizes[..m].iter().map(|n| n * (n + 1) / 2).sum::<usize>()
    }

    pub fn unpack_matrix(&self, x: &[f64], m: usize) -> Matrix {
        let n = self.matrix_sizes[m];
        let mut p = Matrix::zeros(n, n);
        let mut idx = self.matrix_offset(m);
        for a in 0..n {
            for b in a..n {
                p[(a, b)] = x[idx];
                p[(b, a)] = x[idx];
                idx += 1;
            }
        }
        p
    }

    pub fn pack_matrix(&self, x: &mut [f64], m: usize, p: &Matrix) {
        let n = self.matrix_sizes[m];
        let mut idx = self.matrix_offset(m);
        for a in 0..n {
            for b in a..n {
                x[idx] = 0.5 * (p[(a, b)] + p[(b, a)]);
                idx += 1;
            }
        }
    }

    /// Structural checks; reports the first offending constraint.
    pub fn validate(&self) -> Result<()> {
        let sym_ok = |a: &Matrix| {
            let scale = a.amax();
            a.is_square() && (a - a.transpose()).amax() <= 1e-12 * scale.max(f64::MIN_POSITIVE)
        };
        for c in &self.constraints {
            let n = c.dim();
            if !sym_ok(&c.constant) {
                return Err(Error::SolverInput(format!("constraint '{}': constant block is not symmetric", c.label)));
            }
            for (v, a) in &c.scalar_terms {
                if *v >= self.n_scalars {
                    return Err(Error::SolverInput(format!("constraint '{}': scalar index {v} out of range", c.label)));
                }
                if a.nrows() != n || !sym_ok(a) {
                    return Err(Error::SolverInput(format!(
                        "constraint '{}': coefficient of scalar {v} is not a symmetric {n}x{n} block",
                        c.label
                    )));
                }
            }
            for t in &c.matrix_terms {
                let size = *self
                    .matrix_sizes
                    .get(t.var)
                    .ok_or_else(|| Error::SolverInput(format!("constraint '{}': matrix index {} out of range", c.label, t.var)))?;
                if t.left.shape() != (size, n) || t.right.shape() != (size, n) {
                    return Err(Error::SolverInput(format!("constraint '{}': matrix term has wrong shape", c.label)));
                }
            }
            if c.constant.iter().chain(c.scalar_terms.iter().flat_map(|(_, a)| a.iter())).any(|v| !v.is_finite()) {
                return Err(Error::SolverInput(format!("constraint '{}': non-finite entry", c.label)));
            }
        }
        Ok(())
    }

    /// `F_k(x)` as written (sense not applied).
    pub fn evaluate(&self, k: usize, x: &[f64]) -> Matrix {
        let c = &self.constraints[k];
        let mut f = c.constant.clone();
        for (v, a) in &c.scalar_terms {
            if x[*v] != 0.0 {
                f += a * x[*v];
            }
        }
        let mut cache: Vec<Option<Matrix>> = vec![None; self.matrix_sizes.len()];
        for t in &c.matrix_terms {
            let p = cache[t.var].get_or_insert_with(|| self.unpack_matrix(x, t.var));
            let lp = t.left.transpose() * &*p * &t.right;
            f += &lp + lp.transpose();
        }
        f
    }

    /// `F_k(x)` oriented so that the requirement reads `⪯ 0`.
    pub fn oriented(&self, k: usize, x: &[f64]) -> Matrix {
        self.evaluate(k, x) * self.constraints[k].sense.sign()
    }

    /// `∂F_k / ∂x_i` as a dense block.
    pub fn coefficient(&self, k: usize, i: usize) -> Matrix {
        let c = &self.constraints[k];
        let n = c.dim();
        let mut out = Matrix::zeros(n, n);
        if i < self.n_scalars {
            for (v, a) in &c.scalar_terms {
                if *v == i {
                    out += a;
                }
            }
            return out;
        }
        let (m, a, b) = self.locate(i);
        let size = self.matrix_sizes[m];
        let mut e = Matrix::zeros(size, size);
        e[(a, b)] = 1.0;
        e[(b, a)] = 1.0;
        for t in c.matrix_terms.iter().filter(|t| t.var == m) {
            let lp = t.left.transpose() * &e * &t.right;
            out += &lp + lp.transpose();
        }
        out
    }

    /// Matrix index and entry `(a, b)`, `a ≤ b`, of flattened unknown `i`.
    pub fn locate(&self, i: usize) -> (usize, usize, usize) {
        let mut off = self.n_scalars;
        for (m, &n) in self.matrix_sizes.iter().enumerate() {
            let len = n * (n + 1) / 2;
            if i < off + len {
                let mut r = i - off;
                for a in 0..n {
                    let row = n - a;
                    if r < row {
                        return (m, a, a + r);
                    }
                    r -= row;
                }
            }
            off += len;
        }
        panic!("unknown {i} out of range");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    /// Log-barrier path following with Newton steps.
    InteriorPoint,
    /// Smoothed maximum eigenvalue with L-BFGS.
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub method: SolverMethod,
    pub max_iterations: usize,
    /// Absolute margin: `λ_max(F_k) ≤ −margin`.
    pub requested_margin: f64,
    /// Additional margin relative to `‖F_k‖₂`.
    pub relative_margin: f64,
    pub seed: u64,
    /// Optional box bound on every unknown (interior point only).
    pub variable_bound: f64,
    pub time_budget_secs: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            method: SolverMethod::InteriorPoint,
            max_iterations: 500,
            requested_margin: 0.0,
            relative_margin: 1e-7,
            seed: 0,
            variable_bound: f64::INFINITY,
            time_budget_secs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    FeasibleWithMargin,
    MarginTooSmall,
    NotFoundWithinBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// `max_k λ_max` of the oriented constraints at `x`.
    pub worst_margin: f64,
    pub iterations: usize,
    pub wall_time_secs: f64,
    /// Upper bound on the best achievable margin, when the barrier method
    /// proved one.
    pub margin_bound: Option<f64>,
    /// Objective value for [`minimize_scalar_objective`].
    pub objective: Option<f64>,
}

/// Per-constraint verification at a candidate point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub max_eigenvalues: Vec<f64>,
    pub required: Vec<f64>,
    pub worst_margin: f64,
    pub all_satisfied: bool,
    pub all_nonpositive: bool,
}

/// Independent check with the symmetric eigensolver.
pub fn verify(sys: &AffineConstraintSystem, x: &[f64], requested: f64, relative: f64) -> Verification {
    let mut max_eigenvalues = Vec::with_capacity(sys.constraints.len());
    let mut required = Vec::with_capacity(sys.constraints.len());
    for k in 0..sys.constraints.len() {
        let g = sys.oriented(k, x);
        let eig = SymmetricEigen::new(g).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        max_eigenvalues.push(hi);
        required.push(-(requested + relative * lo.abs().max(hi.abs())));
    }
    let worst_margin = max_eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let all_satisfied = max_eigenvalues.iter().zip(&required).all(|(m, r)| m <= r);
    let all_nonpositive = max_eigenvalues.iter().all(|&m| m <= 0.0);
    Verification { max_eigenvalues, required, worst_margin, all_satisfied, all_nonpositive }
}

fn status_of(v: &Verification) -> SolveStatus {
    if v.all_satisfied {
        SolveStatus::FeasibleWithMargin
    } else if v.all_nonpositive {
        SolveStatus::MarginTooSmall
    } else {
        SolveStatus::NotFoundWithinBudget
    }
}

/// Contracts a symmetric `n×n` weight against every coefficient of one
/// constraint: adds `s·⟨W, ∂F/∂x_i⟩` into `out[i]`.
fn contract(sys: &AffineConstraintSystem, k: usize, w: &Matrix, s: f64, out: &mut [f64]) {
    let c = &sys.constraints[k];
    for (v, a) in &c.scalar_terms {
        out[*v] += s * w.dot(a);
    }
    let mut sums: Vec<Option<Matrix>> = vec![None; sys.matrix_sizes.len()];
    for t in &c.matrix_terms {
        let m = &t.right * w * t.left.transpose();
        let acc = sums[t.var].get_or_insert_with(|| Matrix::zeros(m.nrows(), m.ncols()));
        *acc += &m + m.transpose();
    }
    for (mi, y) in sums.into_iter().enumerate() {
        if let Some(y) = y {
            let n = sys.matrix_sizes[mi];
            let mut idx = sys.matrix_offset(mi);
            for a in 0..n {
                for b in a..n {
                    out[idx] += s * if a == b { y[(a, a)] } else { 2.0 * y[(a, b)] };
                    idx += 1;
                }
            }
        }
    }
}

/// Rows (equivalently columns) of a symmetric block that hold nonzeros.
fn support(a: &Matrix) -> Vec<usize> {
    (0..a.nrows()).filter(|&r| a.row(r).iter().any(|v| *v != 0.0)).collect()
}

fn restrict(m: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Adds `scale·⟨E_ab, Y⟩` for every entry of matrix unknown `m` into `h`
/// row `row` (and the mirrored column).
fn add_matrix_row(sys: &AffineConstraintSystem, m: usize, y: &Matrix, scale: f64, row: usize, h: &mut Matrix) {
    let n = sys.matrix_sizes[m];
    let mut idx = sys.matrix_offset(m);
    for a in 0..n {
        for b in a..n {
            let val = scale * if a == b { y[(a, a)] } else { y[(a, b)] + y[(b, a)] };
            h[(row, idx)] += val;
            h[(idx, row)] += val;
            idx += 1;
        }
    }
}

/// Adds `tr(W Â_i W Â_j)` for one block into `h`, where `Â_i` are the
/// coefficients of the oriented constraint plus `tI` (`t` is the last
/// coordinate). With `W = (−G − tI)⁻¹` this is the log-barrier Hessian.
fn schur_block(sys: &AffineConstraintSystem, k: usize, w: &Matrix, h: &mut Matrix) {
    let c = &sys.constraints[k];
    let s = c.sense.sign();
    let d = sys.dim();
    let w2 = w * w;
    h[(d, d)] += w.norm_squared();

    // scalar unknowns restricted to the support of their coefficients
    let scal: Vec<(usize, Vec<usize>, Matrix)> = c
        .scalar_terms
        .iter()
        .map(|(v, a)| {
            let sup = support(a);
            let ar = restrict(a, &sup, &sup);
            (*v, sup, ar)
        })
        .collect();
    for (i, (vi, si, ai)) in scal.iter().enumerate() {
        // with t: tr(W² A_i)
        let mut acc = 0.0;
        for (p, &a) in si.iter().enumerate() {
            for (q, &b) in si.iter().enumerate() {
                acc += ai[(p, q)] * w2[(b, a)];
            }
        }
        h[(*vi, d)] += s * acc;
        h[(d, *vi)] += s * acc;
        for (vj, sj, aj) in scal.iter().skip(i) {
            let m1 = ai * restrict(w, si, sj);
            let m2 = aj * restrict(w, sj, si);
            let val = m1.dot(&m2.transpose());
            h[(*vi, *vj)] += val;
            if vi != vj || !std::ptr::eq(ai, aj) {
                h[(*vj, *vi)] += val;
            }
        }
    }

    if c.matrix_terms.is_empty() {
        return;
    }
    let rw: Vec<Matrix> = c.matrix_terms.iter().map(|t| &t.right * w).collect();
    let lw: Vec<Matrix> = c.matrix_terms.iter().map(|t| &t.left * w).collect();

    // scalar × matrix: ⟨E, Σ_o sym(R_o W A_i W L_oᵀ)⟩, and the same with
    // A = I for t
    let mut sums: Vec<Option<Matrix>> = vec![None; sys.matrix_sizes.len()];
    let flush = |sums: &mut Vec<Option<Matrix>>, row: usize, scale: f64, h: &mut Matrix| {
        for (m, y) in sums.iter_mut().enumerate() {
            if let Some(y) = y.take() {
                add_matrix_row(sys, m, &y, scale, row, h);
            }
        }
    };
    for (vi, si, ai) in &scal {
        let cols: Vec<usize> = si.clone();
        for (o, t) in c.matrix_terms.iter().enumerate() {
            let y = restrict(&rw[o], &(0..rw[o].nrows()).collect::<Vec<_>>(), &cols) * ai
                * restrict(&lw[o], &(0..lw[o].nrows()).collect::<Vec<_>>(), &cols).transpose();
            let acc = sums[t.var].get_or_insert_with(|| Matrix::zeros(y.nrows(), y.ncols()));
            *acc += &y + y.transpose();
        }
        flush(&mut sums, *vi, 1.0, h);
    }
    for (o, t) in c.matrix_terms.iter().enumerate() {
        let y = &rw[o] * lw[o].transpose();
        let acc = sums[t.var].get_or_insert_with(|| Matrix::zeros(y.nrows(), y.ncols()));
        *acc += &y + y.transpose();
    }
    flush(&mut sums, d, s, h);

    // matrix × matrix
    for (o, to) in c.matrix_terms.iter().enumerate() {
        for (q, tq) in c.matrix_terms.iter().enumerate() {
            if tq.var < to.var {
                continue;
            }
            let a1 = &rw[o] * tq.left.transpose();
            let b1 = &rw[q] * to.left.transpose();
            let a2 = &rw[o] * tq.right.transpose();
            let b2 = &lw[q] * to.left.transpose();
            let (no, nq) = (sys.matrix_sizes[to.var], sys.matrix_sizes[tq.var]);
            let (off_o, off_q) = (sys.matrix_offset(to.var), sys.matrix_offset(tq.var));
            let same = to.var == tq.var;
            let mut io = off_o;
            for a in 0..no {
                for b in a..no {
                    let mut iq = off_q;
                    for cc in 0..nq {
                        for dd in cc..nq {
                            if !same || iq >= io {
                                let val = 2.0
                                    * (sym_trace(&a1, &b1, a, b, cc, dd) + sym_trace(&a2, &b2, a, b, cc, dd));
                                h[(io, iq)] += val;
                                if io != iq {
                                    h[(iq, io)] += val;
                                }
                            }
                            iq += 1;
                        }
                    }
                    io += 1;
                }
            }
        }
    }
}

/// `tr(E_ab A E_cd B)` for symmetric basis matrices.
#[inline]
fn sym_trace(a: &Matrix, b: &Matrix, p: usize, q: usize, r: usize, s: usize) -> f64 {
    // tr(e_i e_jᵀ A e_k e_lᵀ B) = A_jk B_li
    let term = |i: usize, j: usize, k: usize, l: usize| a[(j, k)] * b[(l, i)];
    let mut acc = term(p, q, r, s);
    if r != s {
        acc += term(p, q, s, r);
    }
    if p != q {
        acc += term(q, p, r, s);
        if r != s {
            acc += term(q, p, s, r);
        }
    }
    acc
}

fn oriented_with_t(sys: &AffineConstraintSystem, k: usize, x: &[f64], t: f64) -> Matrix {
    let mut g = sys.oriented(k, x);
    for i in 0..g.nrows() {
        g[(i, i)] += t;
    }
    g
}

#[cfg(test)]
/// Cholesky inverse of `−G_k − tI`, or `None` if not positive definite.
fn slack_inverse(sys: &AffineConstraintSystem, k: usize, x: &[f64], t: f64) -> Option<(Matrix, f64)> {
    let z = -oriented_with_t(sys, k, x, t);
    let chol = Cholesky::<f64, nalgebra::Dyn>::new(z)?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if !logdet.is_finite() {
        return None;
    }
    Some((chol.inverse(), logdet))
}

fn max_eig_all(sys: &AffineConstraintSystem, x: &[f64]) -> f64 {
    (0..sys.constraints.len())
        .map(|k| SymmetricEigen::new(sys.oriented(k, x)).eigenvalues.max())
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn solve_feasibility(sys: &AffineConstraintSystem, opts: &SolveOptions) -> Result<SolveOutcome> {
    solve_from(sys, opts, None)
}

/// As [`solve_feasibility`], starting from `x0`.
pub fn solve_from(sys: &AffineConstraintSystem, opts: &SolveOptions, x0: Option<&[f64]>) -> Result<SolveOutcome> {
    sys.validate()?;
    if let Some(x0) = x0 {
        if x0.len() != sys.dim() {
            return Err(dim_err("initial point", sys.dim(), x0.len()));
        }
    }
    match opts.method {
        SolverMethod::InteriorPoint => barrier_solve(sys, opts, x0),
        SolverMethod::Spectral => spectral_solve(sys, opts, x0),
    }
}

fn initial_point(sys: &AffineConstraintSystem, opts: &SolveOptions, x0: Option<&[f64]>) -> Vec<f64> {
    match x0 {
        Some(x) => x.to_vec(),
        None => {
            let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
            (0..sys.dim()).map(|_| 1e-9 * (rng.gen::<f64>() - 0.5)).collect()
        }
    }
}

fn out_of_time(start: &Instant, opts: &SolveOptions) -> bool {
    opts.time_budget_secs.map_or(false, |b| start.elapsed().as_secs_f64() > b)
}

fn finish(
    sys: &AffineConstraintSystem,
    opts: &SolveOptions,
    x: Vec<f64>,
    iterations: usize,
    start: Instant,
    margin_bound: Option<f64>,
) -> SolveOutcome {
    let v = verify(sys, &x, opts.requested_margin, opts.relative_margin);
    SolveOutcome {
        status: status_of(&v),
        worst_margin: v.worst_margin,
        x,
        iterations,
        wall_time_secs: start.elapsed().as_secs_f64(),
        margin_bound,
        objective: None,
    }
}

/// Scalar inequality `c − aᵀy ≥ 0` handled alongside the matrix blocks.
struct LinearRow {
    c: f64,
    a: Vec<(usize, f64)>,
}

/// Nesterov–Todd scaling `W` with `W Z W = X`.
fn nt_scaling(x: &Matrix, z: &Matrix) -> Option<Matrix> {
    let l = Cholesky::new(x.clone())?.unpack();
    let g = l.transpose() * z * &l;
    let eig = SymmetricEigen::new(g);
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let lq = &l * &eig.eigenvectors;
    let scaled = Matrix::from_fn(lq.nrows(), lq.ncols(), |i, j| lq[(i, j)] / eig.eigenvalues[j].sqrt().sqrt());
    let w = &scaled * scaled.transpose();
    Some((&w + w.transpose()) * 0.5)
}

/// Largest `α ≤ 1` with `X + α ΔX ⪰ 0`, given `X ≻ 0`.
fn max_step(x: &Matrix, dx: &Matrix) -> f64 {
    let Some(ch) = Cholesky::new(x.clone()) else { return 0.0 };
    let l = ch.l();
    let li_dx = l.solve_lower_triangular(dx).unwrap_or_else(|| dx.clone());
    let m = l.solve_lower_triangular(&li_dx.transpose()).unwrap_or(li_dx);
    let lmin = SymmetricEigen::new((&m + m.transpose()) * 0.5).eigenvalues.min();
    if lmin >= -1.0 {
        1.0
    } else {
        -1.0 / lmin
    }
}

fn sym(m: Matrix) -> Matrix {
    (&m + m.transpose()) * 0.5
}

/// Maximizes `t` subject to `G_k(x) + tI ⪯ 0` by an infeasible primal-dual
/// path-following method with Nesterov–Todd directions, stopping as soon
/// as the current `x` meets the requested margins.
fn barrier_solve(sys: &AffineConstraintSystem, opts: &SolveOptions, x0: Option<&[f64]>) -> Result<SolveOutcome> {
    let start = Instant::now();
    let d = sys.dim();
    let m = d + 1;
    let nk = sys.constraints.len();
    let mut y = initial_point(sys, opts, x0);
    let lam0 = max_eig_all(sys, &y);
    y.push(-lam0 - lam0.abs().max(1.0));

    // scalar rows: t ≤ t_cap and optional box bounds
    let scale = lam0.abs().max(1.0);
    let mut rows = vec![LinearRow { c: scale, a: vec![(d, 1.0)] }];
    if opts.variable_bound.is_finite() {
        for i in 0..d {
            rows.push(LinearRow { c: opts.variable_bound, a: vec![(i, 1.0)] });
            rows.push(LinearRow { c: opts.variable_bound, a: vec![(i, -1.0)] });
        }
    }
    let nu = sys.constraints.iter().map(|c| c.dim()).sum::<usize>() as f64 + rows.len() as f64;

    // Ĉ − 𝒜ᵀy for every block
    let slack_of = |y: &[f64]| -> Vec<Matrix> { (0..nk).map(|k| -oriented_with_t(sys, k, &y[..d], y[d])).collect() };
    let row_slack = |y: &[f64]| -> Vec<f64> {
        rows.iter().map(|r| r.c - r.a.iter().map(|&(i, v)| v * y[i]).sum::<f64>()).collect()
    };
    // 𝒜(V): the adjoint applied to one weight per block
    let adjoint = |v: &[Matrix], vr: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; m];
        for k in 0..nk {
            contract(sys, k, &v[k], sys.constraints[k].sense.sign(), &mut out);
            out[d] += v[k].trace();
        }
        for (r, &w) in rows.iter().zip(vr) {
            for &(i, a) in &r.a {
                out[i] += a * w;
            }
        }
        out
    };
    // 𝒜ᵀ(Δy) per block
    let forward = |dy: &[f64]| -> Vec<Matrix> {
        (0..nk)
            .map(|k| {
                let c = &sys.constraints[k];
                let mut f = sys.evaluate(k, &dy[..d]) - &c.constant;
                f *= c.sense.sign();
                for i in 0..f.nrows() {
                    f[(i, i)] += dy[d];
                }
                f
            })
            .collect()
    };

    // dual-feasible, perfectly centred start: Z = slack, X = μ₀ Z⁻¹
    let mut zs = slack_of(&y);
    let mut zr = row_slack(&y);
    let zinv0: Vec<Matrix> = zs
        .iter()
        .map(|z| Cholesky::new(z.clone()).map(|c| c.inverse()))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::SolverInput("initial slack is not positive definite".into()))?;
    let total: f64 = zinv0.iter().map(|z| z.trace()).sum::<f64>() + zr.iter().map(|z| 1.0 / z).sum::<f64>();
    let mu0 = 1.0 / total;
    let mut xs: Vec<Matrix> = zinv0.into_iter().map(|z| z * mu0).collect();
    let mut xr: Vec<f64> = zr.iter().map(|z| mu0 / z).collect();
    let mut iterations = 0;
    let mut margin_bound = None;
    let bnorm = 1.0;

    while iterations < opts.max_iterations && !out_of_time(&start, opts) {
        iterations += 1;
        // residuals
        let cy = slack_of(&y);
        let cr = row_slack(&y);
        let rd: Vec<Matrix> = cy.iter().zip(&zs).map(|(c, z)| c - z).collect();
        let rdr: Vec<f64> = cr.iter().zip(&zr).map(|(c, z)| c - z).collect();
        let ax = adjoint(&xs, &xr);
        let mut rp = vec![0.0; m];
        rp[d] = 1.0;
        for i in 0..m {
            rp[i] -= ax[i];
        }
        let gap: f64 = xs.iter().zip(&zs).map(|(x, z)| x.dot(z)).sum::<f64>()
            + xr.iter().zip(&zr).map(|(a, b)| a * b).sum::<f64>();
        let mu = gap / nu;
        let pinf = rp.iter().map(|v| v * v).sum::<f64>().sqrt() / (1.0 + bnorm);
        let dinf = rd.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt()
            + rdr.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pobj: f64 = cy.iter().zip(&xs).map(|(c, x)| c.dot(x)).sum::<f64>()
            + cr.iter().zip(&xr).map(|(c, x)| c * x).sum::<f64>()
            + y[d];
        // success check on the actual constraint values
        if y[d] >= opts.requested_margin {
            let v = verify(sys, &y[..d], opts.requested_margin, opts.relative_margin);
            if v.all_satisfied {
                y.truncate(d);
                return Ok(finish(sys, opts, y, iterations, start, None));
            }
        }
        // ⟨Ĉ − 𝒜ᵀy, X⟩ + yᵀ𝒜(X) = ⟨Ĉ, X⟩ bounds t from above once X is
        // (nearly) primal feasible
        let converged = mu < 1e-9 * scale && pinf < 1e-6 && dinf < 1e-8 * (1.0 + scale);
        if converged && pobj + 1e-6 * scale < opts.requested_margin {
            margin_bound = Some(-pobj);
            break;
        }
        if mu < 1e-12 * scale {
            break;
        }

        // scaling and Schur complement
        let mut ws = Vec::with_capacity(nk);
        for k in 0..nk {
            match nt_scaling(&xs[k], &zs[k]) {
                Some(w) => ws.push(w),
                None => {
                    y.truncate(d);
                    return Ok(finish(sys, opts, y, iterations, start, margin_bound));
                }
            }
        }
        let wr: Vec<f64> = xr.iter().zip(&zr).map(|(x, z)| x / z).collect();
        let mut h = Matrix::zeros(m, m);
        for k in 0..nk {
            schur_block(sys, k, &ws[k], &mut h);
        }
        for (r, &w) in rows.iter().zip(&wr) {
            for &(i, a) in &r.a {
                for &(j, b) in &r.a {
                    h[(i, j)] += w * a * b;
                }
            }
        }
        let ridge = 1e-15 * (0..m).map(|i| h[(i, i)]).fold(0.0, f64::max);
        for i in 0..m {
            h[(i, i)] += ridge.max(f64::MIN_POSITIVE);
        }
        let Some(chol) = Cholesky::new(h.clone()) else {
            break;
        };
        let zinv: Vec<Matrix> = zs.iter().map(|z| Cholesky::new(z.clone()).map(|c| c.inverse()).unwrap_or_else(|| z.clone())).collect();
        let wrw: Vec<Matrix> = ws.iter().zip(&rd).map(|(w, r)| w * r * w).collect();
        let wrwr: Vec<f64> = wr.iter().zip(&rdr).map(|(w, r)| w * r).collect();
        let a_wrw = adjoint(&wrw, &wrwr);
        let a_zinv = adjoint(&zinv, &zr.iter().map(|z| 1.0 / z).collect::<Vec<_>>());

        let direction = |sigma: f64| {
            let rhs: Vec<f64> = (0..m)
                .map(|i| (if i == d { 1.0 } else { 0.0 }) - sigma * mu * a_zinv[i] + a_wrw[i])
                .collect();
            let dy = chol.solve(&Vector::from_vec(rhs));
            let dy: Vec<f64> = dy.iter().copied().collect();
            let aty = forward(&dy);
            let dz: Vec<Matrix> = rd.iter().zip(&aty).map(|(r, a)| r - a).collect();
            let dzr: Vec<f64> = rows
                .iter()
                .zip(&rdr)
                .map(|(r, rr)| rr - r.a.iter().map(|&(i, v)| v * dy[i]).sum::<f64>())
                .collect();
            let dx: Vec<Matrix> = (0..nk)
                .map(|k| sym(&zinv[k] * (sigma * mu) - &xs[k] - &ws[k] * &dz[k] * &ws[k]))
                .collect();
            let dxr: Vec<f64> = (0..rows.len()).map(|j| sigma * mu / zr[j] - xr[j] - wr[j] * dzr[j]).collect();
            (dy, dx, dz, dxr, dzr)
        };
        let steps = |dx: &[Matrix], dz: &[Matrix], dxr: &[f64], dzr: &[f64]| {
            let mut ap: f64 = 1.0;
            let mut ad: f64 = 1.0;
            for k in 0..nk {
                ap = ap.min(max_step(&xs[k], &dx[k]));
                ad = ad.min(max_step(&zs[k], &dz[k]));
            }
            for j in 0..rows.len() {
                if dxr[j] < 0.0 {
                    ap = ap.min(-xr[j] / dxr[j]);
                }
                if dzr[j] < 0.0 {
                    ad = ad.min(-zr[j] / dzr[j]);
                }
            }
            (ap, ad)
        };

        let (_, dx, dz, dxr, dzr) = direction(0.0);
        let (ap, ad) = steps(&dx, &dz, &dxr, &dzr);
        let mut gap_aff = 0.0;
        for k in 0..nk {
            gap_aff += (&xs[k] + &dx[k] * ap).dot(&(&zs[k] + &dz[k] * ad));
        }
        for j in 0..rows.len() {
            gap_aff += (xr[j] + ap * dxr[j]) * (zr[j] + ad * dzr[j]);
        }
        let sigma = (gap_aff / gap).clamp(0.0, 1.0).powi(3).max(1e-3);
        let (dy, dx, dz, dxr, dzr) = direction(sigma);
        let (ap, ad) = steps(&dx, &dz, &dxr, &dzr);
        let (ap, ad) = ((0.95 * ap).min(1.0), (0.95 * ad).min(1.0));
        for k in 0..nk {
            xs[k] = sym(&xs[k] + &dx[k] * ap);
            zs[k] = sym(&zs[k] + &dz[k] * ad);
        }
        for j in 0..rows.len() {
            xr[j] += ap * dxr[j];
            zr[j] += ad * dzr[j];
        }
        for i in 0..m {
            y[i] += ad * dy[i];
        }
    }
    y.truncate(d);
    Ok(finish(sys, opts, y, iterations, start, margin_bound))
}

/// Smoothed maximum eigenvalue `μ log Σ exp(λ/μ)` over all oriented blocks
/// and its gradient.
fn smoothed(sys: &AffineConstraintSystem, x: &[f64], mu: f64) -> (f64, Vec<f64>, f64) {
    let eigs: Vec<_> = (0..sys.constraints.len())
        .map(|k| sorted_eigen(SymmetricEigen::new(sys.oriented(k, x))))
        .collect();
    let lmax = eigs.iter().map(|e| e.values.max()).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for e in &eigs {
        z += e.values.iter().map(|l| ((l - lmax) / mu).exp()).sum::<f64>();
    }
    let value = lmax + mu * z.ln();
    let mut grad = vec![0.0; sys.dim()];
    for (k, e) in eigs.iter().enumerate() {
        let w = e.values.map(|l| ((l - lmax) / mu).exp() / z);
        if w.max() < 1e-300 {
            continue;
        }
        let omega = &e.vectors * Matrix::from_diagonal(&w) * e.vectors.transpose();
        contract(sys, k, &omega, sys.constraints[k].sense.sign(), &mut grad);
    }
    (value, grad, lmax)
}

/// Public access to the smoothed objective, for diagnostics and tests.
pub fn smoothed_max_eigenvalue(sys: &AffineConstraintSystem, x: &[f64], mu: f64) -> (f64, Vec<f64>) {
    let (v, g, _) = smoothed(sys, x, mu);
    (v, g)
}

fn spectral_solve(sys: &AffineConstraintSystem, opts: &SolveOptions, x0: Option<&[f64]>) -> Result<SolveOutcome> {
    let start = Instant::now();
    let mut x = initial_point(sys, opts, x0);
    let scale = max_eig_all(sys, &x).abs().max(1.0);
    let mut mu = scale;
    let mut iterations = 0;
    let mut best = (f64::INFINITY, x.clone());
    let memory = 10;
    'outer: while mu >= 1e-6 * scale {
        let mut hist: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let (mut f, mut g, mut lmax) = smoothed(sys, &x, mu);
        for _ in 0..200 {
            if iterations >= opts.max_iterations || out_of_time(&start, opts) {
                break 'outer;
            }
            iterations += 1;
            if lmax < best.0 {
                best = (lmax, x.clone());
            }
            if lmax <= -opts.requested_margin {
                let v = verify(sys, &x, opts.requested_margin, opts.relative_margin);
                if v.all_satisfied {
                    break 'outer;
                }
            }
            // two-loop recursion
            let mut q = g.clone();
            let mut alphas = Vec::with_capacity(hist.len());
            for (s, y) in hist.iter().rev() {
                let rho = 1.0 / dot(y, s);
                let a = rho * dot(s, &q);
                axpy(&mut q, -a, y);
                alphas.push((a, rho));
            }
            if let Some((s, y)) = hist.last() {
                let gamma = dot(s, y) / dot(y, y);
                q.iter_mut().for_each(|v| *v *= gamma);
            } else {
                let gn = dot(&g, &g).sqrt().max(1e-300);
                q.iter_mut().for_each(|v| *v *= mu / gn);
            }
            for ((s, y), (a, rho)) in hist.iter().zip(alphas.iter().rev()) {
                let b = rho * dot(y, &q);
                axpy(&mut q, a - b, s);
            }
            let dir: Vec<f64> = q.iter().map(|v| -v).collect();
            let slope = dot(&g, &dir);
            if !(slope < 0.0) {
                hist.clear();
                continue;
            }
            let mut step = 1.0;
            let mut moved = false;
            for _ in 0..40 {
                let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
                let (fn_, gn, ln) = smoothed(sys, &xn, mu);
                if fn_ <= f + 1e-4 * step * slope {
                    let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
                    if dot(&s, &y) > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                        hist.push((s, y));
                        if hist.len() > memory {
                            hist.remove(0);
                        }
                    }
                    x = xn;
                    f = fn_;
                    g = gn;
                    lmax = ln;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
            let gn = dot(&g, &g).sqrt();
            if gn < 1e-12 * scale {
                break;
            }
        }
        mu *= 0.5;
    }
    let (bl, bx) = best;
    let current = max_eig_all(sys, &x);
    let x = if bl < current { bx } else { x };
    Ok(finish(sys, opts, x, iterations, start, None))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Smallest value of unknown `index` on a bisection grid within
/// `[lower, upper]` for which the system stays feasible.
pub fn minimize_scalar_objective(
    sys: &AffineConstraintSystem,
    index: usize,
    lower: f64,
    upper: f64,
    rel_tol: f64,
    max_calls: usize,
    opts: &SolveOptions,
) -> Result<SolveOutcome> {
    if index >= sys.n_scalars {
        return Err(Error::SolverInput(format!("objective index {index} is not a scalar unknown")));
    }
    if !(upper > lower) {
        return Err(Error::SolverInput("bisection bracket is empty".into()));
    }
    let with_cap = |cap: f64| {
        let mut s = sys.clone();
        // x_index − cap ⪯ 0
        s.push(
            AffineConstraint::new("objective cap", Sense::NegSemidef, Matrix::from_element(1, 1, -cap))
                .scalar(index, Matrix::from_element(1, 1, 1.0)),
        );
        s
    };
    let mut calls = 0;
    let mut best = solve_feasibility(&with_cap(upper), opts)?;
    calls += 1;
    if best.status != SolveStatus::FeasibleWithMargin {
        return Err(Error::InfeasibleAtBracket { upper });
    }
    let (mut lo, mut hi) = (lower, upper);
    while calls < max_calls && (hi - lo) > rel_tol * hi.abs().max(f64::MIN_POSITIVE) {
        let mid = 0.5 * (lo + hi);
        let s = with_cap(mid);
        calls += 1;
        let out = solve_feasibility(&s, opts)?;
        if out.status == SolveStatus::FeasibleWithMargin {
            hi = mid;
            best = out;
        } else {
            lo = mid;
        }
    }
    best.objective = Some(hi);
    best.iterations = calls;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_system(c: f64, a: f64) -> AffineConstraintSystem {
        let mut s = AffineConstraintSystem::new(1, vec![]);
        s.push(
            AffineConstraint::new("c", Sense::NegSemidef, Matrix::identity(2, 2) * c)
                .scalar(0, Matrix::identity(2, 2) * a),
        );
        s
    }

    #[test]
    fn unpack_roundtrip() {
        let sys = AffineConstraintSystem::new(2, vec![3, 2]);
        let x: Vec<f64> = (0..sys.dim()).map(|i| i as f64).collect();
        let p = sys.unpack_matrix(&x, 0);
        assert_eq!(p[(0, 2)], 4.0);
        assert_eq!(p[(2, 0)], 4.0);
        let mut y = vec![0.0; sys.dim()];
        sys.pack_matrix(&mut y, 0, &p);
        sys.pack_matrix(&mut y, 1, &sys.unpack_matrix(&x, 1));
        y[0] = 0.0;
        y[1] = 1.0;
        assert_eq!(x, y);
        assert_eq!(sys.locate(7), (0, 2, 2));
        assert_eq!(sys.locate(8), (1, 0, 0));
    }

    #[test]
    fn rejects_asymmetric_block() {
        let mut s = AffineConstraintSystem::new(0, vec![]);
        s.push(AffineConstraint::new("bad", Sense::NegSemidef, Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])));
        assert!(matches!(solve_feasibility(&s, &SolveOptions::default()), Err(Error::SolverInput(_))));
    }

    #[test]
    fn scalar_feasible_both_methods() {
        let sys = scalar_system(-2.0, 1.0);
        for method in [SolverMethod::InteriorPoint, SolverMethod::Spectral] {
            let out = solve_feasibility(&sys, &SolveOptions { method, ..Default::default() }).unwrap();
            assert_eq!(out.status, SolveStatus::FeasibleWithMargin, "{method:?}");
            assert!(out.worst_margin < 0.0);
        }
    }

    #[test]
    fn contradictory_is_not_found() {
        let mut s = AffineConstraintSystem::new(1, vec![]);
        // x ≥ 1 and x ≤ −1
        s.push(
            AffineConstraint::new("ge", Sense::PosSemidef, Matrix::from_element(1, 1, -1.0))
                .scalar(0, Matrix::from_element(1, 1, 1.0)),
        );
        s.push(
            AffineConstraint::new("le", Sense::NegSemidef, Matrix::from_element(1, 1, 1.0))
                .scalar(0, Matrix::from_element(1, 1, 1.0)),
        );
        for method in [SolverMethod::InteriorPoint, SolverMethod::Spectral] {
            let out = solve_feasibility(&s, &SolveOptions { method, ..Default::default() }).unwrap();
            assert_eq!(out.status, SolveStatus::NotFoundWithinBudget);
            assert!(out.worst_margin > 0.0);
        }
    }

    #[test]
    fn coefficient_matches_evaluation() {
        let mut s = AffineConstraintSystem::new(1, vec![2]);
        let left = Matrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, -1.0]);
        let right = Matrix::from_row_slice(2, 3, &[0.5, 1.0, 0.0, 0.0, 3.0, 1.0]);
        s.push(
            AffineConstraint::new("m", Sense::NegSemidef, Matrix::identity(3, 3))
                .scalar(0, Matrix::identity(3, 3) * 2.0)
                .matrix(0, left, right),
        );
        let x = vec![0.3, 1.0, -2.0, 0.5];
        let mut f = s.constraints[0].constant.clone();
        for i in 0..s.dim() {
            f += s.coefficient(0, i) * x[i];
        }
        assert!((f - s.evaluate(0, &x)).amax() < 1e-14);
    }

    fn random_system(seed: u64) -> (AffineConstraintSystem, Vec<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut r = |n: usize, m: usize| Matrix::from_fn(n, m, |_, _| rng.gen::<f64>() - 0.5);
        let mut s = AffineConstraintSystem::new(2, vec![2, 3]);
        for k in 0..2 {
            let a0 = r(4, 4);
            let a1 = r(4, 4);
            let sense = if k == 0 { Sense::NegSemidef } else { Sense::PosSemidef };
            let sg = sense.sign();
            s.push(
                AffineConstraint::new(format!("c{k}"), sense, Matrix::identity(4, 4) * (-10.0 * sg))
                    .scalar(0, &a0 + a0.transpose())
                    .scalar(1, &a1 + a1.transpose())
                    .scalar(0, Matrix::identity(4, 4))
                    .matrix(0, r(2, 4), r(2, 4))
                    .matrix(1, r(3, 4), r(3, 4))
                    .matrix(0, r(2, 4), r(2, 4)),
            );
        }
        let x: Vec<f64> = (0..s.dim()).map(|i| 0.1 * ((i as f64) * 0.7).sin()).collect();
        (s, x)
    }

    fn barrier_parts(s: &AffineConstraintSystem, y: &[f64]) -> (f64, Vec<f64>, Matrix) {
        let d = s.dim();
        let (x, t) = (&y[..d], y[d]);
        let mut g = vec![0.0; d + 1];
        let mut h = Matrix::zeros(d + 1, d + 1);
        let mut f = 0.0;
        for k in 0..s.constraints.len() {
            let (w, logdet) = slack_inverse(s, k, x, t).unwrap();
            f -= logdet;
            contract(s, k, &w, s.constraints[k].sense.sign(), &mut g);
            g[d] += w.trace();
            schur_block(s, k, &w, &mut h);
        }
        (f, g, h)
    }

    #[test]
    fn barrier_derivatives_match_finite_differences() {
        let (s, x) = random_system(3);
        let mut y = x.clone();
        y.push(0.3);
        let (_, g, h) = barrier_parts(&s, &y);
        let step = 1e-6;
        for i in 0..y.len() {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += step;
            ym[i] -= step;
            let (fp, gp, _) = barrier_parts(&s, &yp);
            let (fm, gm, _) = barrier_parts(&s, &ym);
            let fd = (fp - fm) / (2.0 * step);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "grad {i}: {fd} vs {}", g[i]);
            for j in 0..y.len() {
                let fdh = (gp[j] - gm[j]) / (2.0 * step);
                assert!((fdh - h[(i, j)]).abs() < 1e-6 * (1.0 + h[(i, j)].abs()), "hess {i},{j}: {fdh} vs {}", h[(i, j)]);
            }
        }
    }

    #[test]
    fn smoothed_gradient_matches_finite_differences() {
        let (s, x) = random_system(5);
        let mu = 0.3;
        let (_, g) = smoothed_max_eigenvalue(&s, &x, mu);
        let step = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += step;
            xm[i] -= step;
            let fd = (smoothed_max_eigenvalue(&s, &xp, mu).0 - smoothed_max_eigenvalue(&s, &xm, mu).0) / (2.0 * step);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn lyapunov_fixture_is_feasible() {
        // AᵀP + PA ≺ 0, P ≻ I for a stable A
        let a = Matrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, 0.0, -0.5, 1.0, 0.3, 0.0, -2.0]);
        let mut s = AffineConstraintSystem::new(0, vec![3]);
        s.push(AffineConstraint::new("lyap", Sense::NegSemidef, Matrix::zeros(3, 3)).matrix(0, Matrix::identity(3, 3), a.clone()));
        s.push(
            AffineConstraint::new("pos", Sense::PosSemidef, -Matrix::identity(3, 3))
                .matrix(0, Matrix::identity(3, 3) * 0.5, Matrix::identity(3, 3)),
        );
        for method in [SolverMethod::InteriorPoint, SolverMethod::Spectral] {
            let out = solve_feasibility(&s, &SolveOptions { method, max_iterations: 5000, ..Default::default() }).unwrap();
            assert_eq!(out.status, SolveStatus::FeasibleWithMargin, "{method:?}");
            let p = s.unpack_matrix(&out.x, 0);
            let lyap = a.transpose() * &p + &p * &a;
            assert!(SymmetricEigen::new(lyap).eigenvalues.max() < 0.0);
            assert!(SymmetricEigen::new(p).eigenvalues.min() > 1.0);
        }
    }

    #[test]
    fn unstable_lyapunov_is_not_found() {
        let a = Matrix::from_row_slice(2, 2, &[0.1, 1.0, 0.0, -1.0]);
        let mut s = AffineConstraintSystem::new(0, vec![2]);
        s.push(AffineConstraint::new("lyap", Sense::NegSemidef, Matrix::zeros(2, 2)).matrix(0, Matrix::identity(2, 2), a));
        s.push(
            AffineConstraint::new("pos", Sense::PosSemidef, -Matrix::identity(2, 2))
                .matrix(0, Matrix::identity(2, 2) * 0.5, Matrix::identity(2, 2)),
        );
        let out = solve_feasibility(&s, &SolveOptions::default()).unwrap();
        assert_eq!(out.status, SolveStatus::NotFoundWithinBudget);
        assert!(out.margin_bound.is_some());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (s, _) = random_system(9);
        for method in [SolverMethod::InteriorPoint, SolverMethod::Spectral] {
            let o = SolveOptions { method, seed: 4, max_iterations: 50, ..Default::default() };
            let a = solve_feasibility(&s, &o).unwrap();
            let b = solve_feasibility(&s, &o).unwrap();
            assert_eq!(a.x, b.x);
            assert_eq!(a.status, b.status);
        }
    }

    #[test]
    fn scaling_scales_margin() {
        let sys = scalar_system(-2.0, 1.0);
        let x = vec![0.5];
        let base = verify(&sys, &x, 0.0, 1e-7);
        let mut scaled = sys.clone();
        for c in &mut scaled.constraints {
            c.constant *= 3.0;
            for (_, a) in &mut c.scalar_terms {
                *a *= 3.0;
            }
        }
        let v = verify(&scaled, &x, 0.0, 1e-7);
        assert!((v.worst_margin - 3.0 * base.worst_margin).abs() < 1e-12);
        assert_eq!(v.all_satisfied, base.all_satisfied);
    }

    #[test]
    fn bisection_finds_minimum() {
        // minimize x subject to x ≥ 1.5
        let mut s = AffineConstraintSystem::new(1, vec![]);
        s.push(
            AffineConstraint::new("ge", Sense::PosSemidef, Matrix::from_element(1, 1, -1.5))
                .scalar(0, Matrix::from_element(1, 1, 1.0)),
        );
        let out = minimize_scalar_objective(&s, 0, 0.0, 10.0, 1e-3, 60, &SolveOptions::default()).unwrap();
        let v = out.objective.unwrap();
        assert!(v >= 1.5 && v < 1.52, "{v}");
        assert!(matches!(
            minimize_scalar_objective(&s, 0, 0.0, 1.0, 1e-3, 60, &SolveOptions::default()),
            Err(Error::InfeasibleAtBracket { .. })
        ));
    }
}
