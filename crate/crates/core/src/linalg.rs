//! Dense real-matrix kernels: matrix exponential, its integral, a symmetric
//! eigensolver and a real block (Jordan-style) decomposition.
//!
//! All functions are pure; matrices are `nalgebra::DMatrix<f64>`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Numerical tolerances used by the kernels in this module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinalgTolerances {
    /// Relative asymmetry accepted by [`symmetric_eigen`].
    pub sym_tol: f64,
    /// Relative distance under which eigenvalues are treated as repeated.
    pub cluster_tol: f64,
    /// Relative reconstruction error accepted for a block decomposition.
    pub reconstruction_tol: f64,
    /// Largest accepted condition number of the decomposition transform.
    pub max_condition: f64,
    /// 1-norm threshold above which the exponential argument is scaled.
    pub expm_theta: f64,
}

impl Default for LinalgTolerances {
    fn default() -> Self {
        Self {
            sym_tol: 1e-10,
            cluster_tol: 1e-6,
            reconstruction_tol: 1e-8,
            max_condition: 1e12,
            expm_theta: 5.371920351148152,
        }
    }
}

// Coefficients of the [13/13] diagonal Padé approximant to exp.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

pub fn norm1(a: &Matrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Spectral norm (largest singular value).
pub fn norm2(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    match (a.nrows(), a.ncols()) {
        (1, _) | (_, 1) => a.norm(),
        (2, 2) => {
            // closed form for 2x2
            let (p, q, r, s) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
            let f = p * p + q * q + r * r + s * s;
            let det = p * s - q * r;
            let disc = (f * f - 4.0 * det * det).max(0.0).sqrt();
            ((f + disc) / 2.0).sqrt()
        }
        _ => a.singular_values().max(),
    }
}

fn check_square(a: &Matrix, context: &'static str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(dim_err(context, "square matrix", format!("{}x{}", a.nrows(), a.ncols())));
    }
    Ok(())
}

fn check_finite(a: &Matrix, context: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{context}: non-finite matrix entry")))
    }
}

/// `e^{A t}` by scaling and squaring with the order-13 Padé approximant.
pub fn expm(a: &Matrix, t: f64) -> Result<Matrix> {
    expm_with(a, t, &LinalgTolerances::default())
}

pub fn expm_with(a: &Matrix, t: f64, tol: &LinalgTolerances) -> Result<Matrix> {
    check_square(a, "expm")?;
    check_finite(a, "expm")?;
    if !t.is_finite() {
        return Err(Error::Domain(format!("expm: non-finite time {t}")));
    }
    let n = a.nrows();
    if n == 0 || t == 0.0 {
        return Ok(Matrix::identity(n, n));
    }
    let at = a * t;
    let nrm = norm1(&at);
    if nrm == 0.0 {
        return Ok(Matrix::identity(n, n));
    }
    let squarings = if nrm > tol.expm_theta {
        (nrm / tol.expm_theta).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = at * 2f64.powi(-squarings);
    let mut r = pade13(&scaled)?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

fn pade13(a: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let b = &PADE13;
    let ident = Matrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = a * inner_u;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];
    let p = &v + &u;
    let q = &v - &u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| Error::Domain("expm: singular Padé denominator".into()))
}

/// `∫₀^ρ e^{A s} ds`, read off the upper-right block of
/// `exp([[A, I], [0, 0]] ρ)`.
pub fn expm_integral(a: &Matrix, rho: f64) -> Result<Matrix> {
    check_square(a, "expm_integral")?;
    check_finite(a, "expm_integral")?;
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::Domain(format!("expm_integral: ρ must be finite and ≥ 0, got {rho}")));
    }
    let n = a.nrows();
    if rho == 0.0 {
        return Ok(Matrix::zeros(n, n));
    }
    let (_, integral) = expm_and_integral(a, rho)?;
    Ok(integral)
}

/// Both `e^{Aρ}` and `∫₀^ρ e^{As} ds` from a single augmented exponential.
pub fn expm_and_integral(a: &Matrix, rho: f64) -> Result<(Matrix, Matrix)> {
    check_square(a, "expm_and_integral")?;
    let n = a.nrows();
    if rho == 0.0 {
        return Ok((Matrix::identity(n, n), Matrix::zeros(n, n)));
    }
    let mut aug = Matrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    let e = expm(&aug, rho)?;
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, n)).into_owned(),
    ))
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vector,
    pub vectors: Matrix,
}

pub fn symmetric_eigen(s: &Matrix) -> Result<SymEigen> {
    symmetric_eigen_with(s, LinalgTolerances::default().sym_tol)
}

pub fn symmetric_eigen_with(s: &Matrix, sym_tol: f64) -> Result<SymEigen> {
    check_square(s, "symmetric_eigen")?;
    check_finite(s, "symmetric_eigen")?;
    let scale = s.norm();
    let asym = (s - s.transpose()).norm();
    if asym > sym_tol * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Domain(format!(
            "symmetric_eigen: asymmetry {asym:.3e} exceeds tolerance (norm {scale:.3e})"
        )));
    }
    Ok(sorted_eigen(SymmetricEigen::new(s.clone())))
}

/// Symmetric eigensolver without the symmetry check; only the lower
/// triangle is read.
pub(crate) fn sorted_eigen(eig: SymmetricEigen<f64, nalgebra::Dyn>) -> SymEigen {
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    SymEigen { values, vectors }
}

pub fn max_eigenvalue(s: &Matrix) -> f64 {
    if s.is_empty() {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(s.clone()).eigenvalues.max()
}

pub fn min_eigenvalue(s: &Matrix) -> f64 {
    if s.is_empty() {
        return f64::INFINITY;
    }
    SymmetricEigen::new(s.clone()).eigenvalues.min()
}

/// Shape of a block in a [`BlockDecomposition`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// A single real eigenvalue.
    Real,
    /// `[[a, b], [-b, a]]` for the complex pair `a ± ib`.
    ComplexPair,
    /// Upper-bidiagonal block of a defective real eigenvalue.
    Defective,
}

/// `Λ̄ = T Λ T⁻¹` with `Λ` block diagonal.
#[derive(Debug, Clone)]
pub struct BlockDecomposition {
    pub transform: Matrix,
    pub transform_inv: Matrix,
    pub blocks: Vec<Matrix>,
    pub kinds: Vec<BlockKind>,
    pub condition: f64,
}

impl BlockDecomposition {
    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    pub fn dim(&self) -> usize {
        self.transform.nrows()
    }

    /// Row/column offset of each block inside `Λ`.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.blocks
            .iter()
            .map(|b| {
                let o = acc;
                acc += b.nrows();
                o
            })
            .collect()
    }

    pub fn block_diagonal(&self) -> Matrix {
        block_diag(&self.blocks)
    }

    /// `T Λ T⁻¹`.
    pub fn reconstruct(&self) -> Matrix {
        &self.transform * self.block_diagonal() * &self.transform_inv
    }
}

pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let m: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(n, m);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

#[derive(Debug, Clone)]
struct Cluster {
    re: f64,
    im: f64,
    mult: usize,
}

fn cluster_eigenvalues(a: &Matrix, tol: f64) -> Vec<Cluster> {
    let eigs = a.complex_eigenvalues();
    let scale = eigs.iter().map(|z| z.norm()).fold(1.0, f64::max);
    // only the upper half-plane representative of each conjugate pair
    let mut pts: Vec<(f64, f64)> = eigs
        .iter()
        .filter(|z| z.im >= -tol * scale)
        .map(|z| (z.re, if z.im.abs() <= tol * scale { 0.0 } else { z.im }))
        .collect();
    pts.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut clusters: Vec<(Vec<(f64, f64)>,)> = Vec::new();
    for p in pts {
        let hit = clusters.iter_mut().find(|c| {
            c.0.iter()
                .any(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt() <= tol * scale)
        });
        match hit {
            Some(c) => c.0.push(p),
            None => clusters.push((vec![p],)),
        }
    }
    clusters
        .into_iter()
        .map(|(members,)| {
            let m = members.len() as f64;
            let re = members.iter().map(|p| p.0).sum::<f64>() / m;
            let im = members.iter().map(|p| p.1).sum::<f64>() / m;
            Cluster {
                re,
                im: if im == 0.0 { 0.0 } else { im },
                mult: members.len(),
            }
        })
        .collect()
}

/// Orthonormal basis of the `dim`-dimensional near-null space of `m`.
fn null_basis(m: &Matrix, dim: usize) -> Matrix {
    let n = m.ncols();
    // eigenvectors of MᵀM belonging to the smallest eigenvalues
    let gram = m.transpose() * m;
    let eig = sorted_eigen(SymmetricEigen::new(gram));
    eig.vectors.columns(0, dim.min(n)).into_owned()
}

fn numeric_rank(m: &Matrix, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * top.max(1.0)).count()
}

/// Jordan chains of a (numerically) nilpotent `n`, returned as column
/// groups ordered `[Nᵏ⁻¹v, …, Nv, v]`.
fn jordan_chains(nil: &Matrix, tol: f64) -> Option<Vec<Matrix>> {
    let m = nil.nrows();
    let mut kernel_dims = vec![0usize];
    let mut powers = vec![Matrix::identity(m, m)];
    loop {
        let next = powers.last().unwrap() * nil;
        let dim = m - numeric_rank(&next, tol);
        powers.push(next);
        kernel_dims.push(dim);
        if dim == m {
            break;
        }
        if powers.len() > m + 1 {
            return None;
        }
    }
    let depth = kernel_dims.len() - 1;
    let kernel = |k: usize| -> Matrix {
        if k == 0 {
            Matrix::zeros(m, 0)
        } else {
            null_basis(&powers[k], kernel_dims[k])
        }
    };
    let mut chains: Vec<Matrix> = Vec::new();
    for k in (1..=depth).rev() {
        let used: Vec<Vector> = chains
            .iter()
            .filter(|c| c.ncols() >= k)
            .map(|c| c.column(c.ncols() - k).into_owned())
            .collect();
        let lower = kernel(k - 1);
        let mut span_cols: Vec<Vector> = lower.column_iter().map(|c| c.into_owned()).collect();
        span_cols.extend(used.iter().cloned());
        let exact_here = kernel_dims[k] - kernel_dims[k - 1];
        let longer = if k < depth {
            kernel_dims[k + 1] - kernel_dims[k]
        } else {
            0
        };
        let count = exact_here.saturating_sub(longer);
        if count == 0 {
            continue;
        }
        let kk = kernel(k);
        let basis = orthonormalize(&span_cols);
        let mut projected = kk.clone();
        for b in &basis {
            for mut col in projected.column_iter_mut() {
                let coef = b.dot(&col);
                col.axpy(-coef, b, 1.0);
            }
        }
        let svd = projected.svd(true, false);
        let u = svd.u?;
        let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        for &top in idx.iter().take(count) {
            let v = u.column(top).into_owned();
            let mut cols = vec![v.clone()];
            for p in 1..k {
                cols.push(&powers[p] * &v);
            }
            cols.reverse();
            chains.push(Matrix::from_columns(&cols));
        }
    }
    Some(chains)
}

fn orthonormalize(cols: &[Vector]) -> Vec<Vector> {
    let mut out: Vec<Vector> = Vec::new();
    for c in cols {
        let mut v = c.clone();
        for q in &out {
            let coef = q.dot(&v);
            v.axpy(-coef, q, 1.0);
        }
        let nrm = v.norm();
        if nrm > 1e-10 * c.norm().max(1e-300) {
            out.push(v / nrm);
        }
    }
    out
}

/// Real block decomposition `Λ̄ = T Λ T⁻¹` built by clustering eigenvalues
/// and extracting an invariant-subspace basis per cluster.
pub fn real_block_decompose(a: &Matrix) -> Result<BlockDecomposition> {
    real_block_decompose_with(a, &LinalgTolerances::default())
}

pub fn real_block_decompose_with(a: &Matrix, tol: &LinalgTolerances) -> Result<BlockDecomposition> {
    check_square(a, "real_block_decompose")?;
    check_finite(a, "real_block_decompose")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(BlockDecomposition {
            transform: Matrix::zeros(0, 0),
            transform_inv: Matrix::zeros(0, 0),
            blocks: vec![],
            kinds: vec![],
            condition: 1.0,
        });
    }
    let scale = norm1(a).max(1.0);
    let clusters = cluster_eigenvalues(a, tol.cluster_tol);
    let ident = Matrix::identity(n, n);
    let mut columns: Vec<Matrix> = Vec::new();
    let mut kinds: Vec<BlockKind> = Vec::new();
    let rank_tol = tol.cluster_tol.sqrt();

    for c in &clusters {
        if c.im == 0.0 {
            let shifted = a - &ident * c.re;
            let mut power = shifted.clone();
            for _ in 1..c.mult {
                power = &power * &shifted;
            }
            let basis = null_basis(&power, c.mult);
            if c.mult == 1 {
                columns.push(basis);
                kinds.push(BlockKind::Real);
                continue;
            }
            let restricted = basis.transpose() * &shifted * &basis;
            if restricted.norm() <= rank_tol * scale {
                for col in basis.column_iter() {
                    columns.push(Matrix::from_columns(&[col.into_owned()]));
                    kinds.push(BlockKind::Real);
                }
                continue;
            }
            let chains = jordan_chains(&(restricted / scale), rank_tol)
                .ok_or(Error::IllConditionedDecomposition { condition: f64::INFINITY })?;
            for chain in chains {
                let kind = if chain.ncols() == 1 {
                    BlockKind::Real
                } else {
                    BlockKind::Defective
                };
                // chain vectors live in the cluster basis; undo the 1/scale on N
                let mut cols = &basis * chain;
                let k = cols.ncols();
                for j in 0..k {
                    let f = scale.powi((k - 1 - j) as i32);
                    cols.column_mut(j).scale_mut(f);
                }
                columns.push(cols);
                kinds.push(kind);
            }
        } else {
            // complex pair a ± ib: invariant subspace of (A - aI)² + b²I
            let shifted = a - &ident * c.re;
            let quad = &shifted * &shifted + &ident * (c.im * c.im);
            let mut power = quad.clone();
            for _ in 1..c.mult {
                power = &power * &quad;
            }
            let basis = null_basis(&power, 2 * c.mult);
            let restricted = basis.transpose() * a * &basis;
            let shifted_r = &restricted - Matrix::identity(2 * c.mult, 2 * c.mult) * c.re;
            let check = &shifted_r * &shifted_r + Matrix::identity(2 * c.mult, 2 * c.mult) * (c.im * c.im);
            if check.norm() > rank_tol * scale * scale {
                return Err(Error::IllConditionedDecomposition { condition: f64::INFINITY });
            }
            let mut chosen: Vec<Vector> = Vec::new();
            for col in Matrix::identity(2 * c.mult, 2 * c.mult).column_iter() {
                if chosen.len() == 2 * c.mult {
                    break;
                }
                let ortho = orthonormalize(&chosen);
                let mut p = col.into_owned();
                for q in &ortho {
                    let coef = q.dot(&p);
                    p.axpy(-coef, q, 1.0);
                }
                if p.norm() < 1e-6 {
                    continue;
                }
                p /= p.norm();
                // S p = a p - b q  ⇒  q = (a p - S p) / b
                let q = (&p * c.re - &restricted * &p) / c.im;
                chosen.push(p.clone());
                chosen.push(q.clone());
                columns.push(&basis * Matrix::from_columns(&[p, q]));
                kinds.push(BlockKind::ComplexPair);
            }
        }
    }

    let mut transform = Matrix::zeros(n, n);
    let mut offset = 0;
    for cols in &columns {
        transform.view_mut((0, offset), (n, cols.ncols())).copy_from(cols);
        offset += cols.ncols();
    }
    if offset != n {
        return Err(Error::IllConditionedDecomposition { condition: f64::INFINITY });
    }
    let sv = transform.clone().singular_values();
    let condition = sv.max() / sv.min();
    if !condition.is_finite() || condition > tol.max_condition {
        return Err(Error::IllConditionedDecomposition { condition });
    }
    let transform_inv = transform
        .clone()
        .try_inverse()
        .ok_or(Error::IllConditionedDecomposition { condition })?;
    let full = &transform_inv * a * &transform;
    let mut blocks = Vec::with_capacity(columns.len());
    let mut off = 0;
    for (cols, kind) in columns.iter().zip(&kinds) {
        let k = cols.ncols();
        let mut b = full.view((off, off), (k, k)).into_owned();
        match kind {
            BlockKind::Real => {}
            BlockKind::ComplexPair => {
                let re = 0.5 * (b[(0, 0)] + b[(1, 1)]);
                let im = 0.5 * (b[(0, 1)] - b[(1, 0)]);
                b = Matrix::from_row_slice(2, 2, &[re, im, -im, re]);
            }
            BlockKind::Defective => {
                let lam = b.diagonal().mean();
                let mut clean = Matrix::zeros(k, k);
                for i in 0..k {
                    clean[(i, i)] = lam;
                    if i + 1 < k {
                        clean[(i, i + 1)] = b[(i, i + 1)];
                    }
                }
                b = clean;
            }
        }
        blocks.push(b);
        off += k;
    }
    let decomposition = BlockDecomposition {
        transform,
        transform_inv,
        blocks,
        kinds,
        condition,
    };
    let err = (decomposition.reconstruct() - a).norm();
    if err > tol.reconstruction_tol * a.norm().max(1.0) {
        return Err(Error::IllConditionedDecomposition { condition });
    }
    Ok(decomposition)
}

/// Unit-lower-triangular solve `L X = B` by forward substitution.
pub fn forward_substitute_unit_lower(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_square(l, "forward_substitute_unit_lower")?;
    if l.nrows() != b.nrows() {
        return Err(dim_err("forward_substitute_unit_lower", l.nrows(), b.nrows()));
    }
    let n = l.nrows();
    let mut x = b.clone();
    for col in 0..b.ncols() {
        for i in 0..n {
            let mut acc = x[(i, col)];
            for k in 0..i {
                acc -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = acc;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn expm_zero_time_is_identity() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(expm(&a, 0.0).unwrap(), Matrix::identity(2, 2));
    }

    #[test]
    fn expm_diagonal() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![0.3, -2.0]));
        let e = expm(&a, 1.0).unwrap();
        assert!((e[(0, 0)] - 0.3f64.exp()).abs() < 1e-14);
        assert!((e[(1, 1)] - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn expm_rejects_bad_input() {
        let rect = Matrix::zeros(2, 3);
        assert!(matches!(expm(&rect, 1.0), Err(Error::Dimension { .. })));
        let mut nan = Matrix::zeros(2, 2);
        nan[(0, 1)] = f64::NAN;
        assert!(matches!(expm(&nan, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn expm_large_norm_rotation() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let t = 40.0;
        let e = expm(&a, t).unwrap();
        let want = Matrix::from_row_slice(2, 2, &[t.cos(), t.sin(), -t.sin(), t.cos()]);
        assert!(rel(&e, &want) < 1e-12);
    }

    #[test]
    fn integral_of_zero_matrix() {
        let z = Matrix::zeros(3, 3);
        let e = expm_integral(&z, 0.7).unwrap();
        assert!(rel(&e, &(Matrix::identity(3, 3) * 0.7)) < 1e-15);
        assert_eq!(expm_integral(&z, 0.0).unwrap(), Matrix::zeros(3, 3));
        assert!(matches!(expm_integral(&z, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn integral_closed_form_for_invertible() {
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.2, -3.0]);
        let rho = 0.8;
        let got = expm_integral(&a, rho).unwrap();
        let want = a.clone().lu().solve(&(expm(&a, rho).unwrap() - Matrix::identity(2, 2))).unwrap();
        assert!(rel(&got, &want) < 1e-13);
    }

    #[test]
    fn symmetric_eigen_sorted() {
        let s = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 1.0, 2.0]));
        let e = symmetric_eigen(&s).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 2.0, 3.0]);
        let id = symmetric_eigen(&Matrix::identity(4, 4)).unwrap();
        assert!(id.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn symmetric_eigen_rejects_asymmetric() {
        let s = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(symmetric_eigen(&s), Err(Error::Domain(_))));
    }

    #[test]
    fn block_decompose_diagonal() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0, 3.0]));
        let d = real_block_decompose(&a).unwrap();
        assert_eq!(d.block_sizes(), vec![1, 1, 1]);
        for (b, want) in d.blocks.iter().zip([1.0, 2.0, 3.0]) {
            assert!((b[(0, 0)] - want).abs() < 1e-12);
        }
        // T is a signed permutation
        for v in d.transform.iter() {
            assert!(v.abs() < 1e-12 || (v.abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn block_decompose_rotation() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let d = real_block_decompose(&a).unwrap();
        assert_eq!(d.kinds, vec![BlockKind::ComplexPair]);
        let b = &d.blocks[0];
        assert!(b[(0, 0)].abs() < 1e-12);
        assert!((b[(0, 1)].abs() - 1.0).abs() < 1e-12);
        assert!(rel(&d.reconstruct(), &a) < 1e-12);
    }

    #[test]
    fn block_decompose_defective() {
        let a = Matrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 2.0, 1.0, 0.0, 0.0, 2.0]);
        let d = real_block_decompose(&a).unwrap();
        assert_eq!(d.kinds, vec![BlockKind::Defective]);
        assert_eq!(d.block_sizes(), vec![3]);
        assert!(rel(&d.reconstruct(), &a) < 1e-8);
        // upper bidiagonal
        let b = &d.blocks[0];
        assert_eq!(b[(2, 0)], 0.0);
        assert_eq!(b[(0, 2)], 0.0);
    }

    #[test]
    fn block_decompose_repeated_zero_is_two_scalars() {
        let d = real_block_decompose(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(d.block_sizes(), vec![1, 1]);
    }

    #[test]
    fn forward_substitution_matches_inverse() {
        let l = Matrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 2.0, 1.0, 0.0, -1.0, 0.5, 1.0]);
        let b = Matrix::identity(3, 3);
        let x = forward_substitute_unit_lower(&l, &b).unwrap();
        assert!(rel(&(&l * &x), &b) < 1e-15);
    }
}
