//! Dissipation inequalities for the polytopic model, assembled as affine
//! matrix inequalities in the Lyapunov matrices and scalar multipliers.
//!
//! With `ξ = (x̄, ε̄)` and `w̄ = ε̄ − S x̄` (`S` selects the network errors),
//! every constraint block is ordered as
//! `[ξ | mean successor | one fluctuation row per random reception family |
//! one uncertainty copy per preceding successor row]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue, min_eigenvalue, Matrix};
use crate::model::{NetworkConfig, Protocol};
use crate::overapprox::PolytopicModel;
use crate::sdp::{AffineConstraint, AffineConstraintSystem, Sense};

/// How the norm-bounded uncertainty is relaxed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierMode {
    /// One nonnegative multiplier per uncertainty block and row copy.
    PerBlock,
    /// A single multiplier per row copy shared by all blocks.
    Shared,
}

/// How vertex constraints are enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexEnumeration {
    /// One constraint per distinct vertex.
    Merged,
    /// One constraint per (triangle, vertex) pair; the copies are identical
    /// when all triangle weights are equal.
    PerTriangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmiParameters {
    pub a3: f64,
    pub a5: f64,
    /// Attenuation bound on `a₄ + a₅`. `None` leaves it free; infinity
    /// drops the output term altogether (ideal case).
    pub gamma2: Option<f64>,
    pub multipliers: MultiplierMode,
    pub vertices: VertexEnumeration,
}

impl Default for LmiParameters {
    fn default() -> Self {
        Self { a3: 1e-2, a5: 1e-4, gamma2: None, multipliers: MultiplierMode::PerBlock, vertices: VertexEnumeration::Merged }
    }
}

impl LmiParameters {
    fn output_term(&self) -> bool {
        !matches!(self.gamma2, Some(g) if g.is_infinite())
    }
    fn gamma2_cap(&self) -> Option<f64> {
        self.gamma2.filter(|g| g.is_finite())
    }
}

/// Positions of named unknowns in the flattened variable vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableLayout {
    pub a4: usize,
    /// `(i, l, index)` for every S-procedure multiplier.
    pub zeta: Vec<(usize, usize, usize)>,
    /// Multiplier indices per Lyapunov index and copy.
    pub multipliers: Vec<Vec<Vec<usize>>>,
    /// Matrix index of each Lyapunov matrix.
    pub lyapunov: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmiProblem {
    pub system: AffineConstraintSystem,
    pub layout: VariableLayout,
    pub params: LmiParameters,
    pub n_x: usize,
    pub n_z: usize,
    /// Node served by each Lyapunov index.
    pub nodes: Vec<usize>,
    pub periodic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiCertificate {
    pub p: Vec<Matrix>,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    pub zeta: Vec<(usize, usize, f64)>,
    pub multipliers: Vec<Vec<Vec<f64>>>,
    pub margin: f64,
    pub a1: f64,
    pub a2: f64,
    pub c1: f64,
    pub c2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

/// Rows of the block attached to one successor row: `rows × n_x` weight on
/// the Lyapunov matrix and `rows × (n_x + n_z)` map from `ξ`.
struct SuccessorRow {
    map: Matrix,
    unc: Matrix,
    /// `scale · Yᵀ Y` contributions per uncertainty block.
    y: Vec<Matrix>,
}

struct Dims {
    n_x: usize,
    n_z: usize,
    n_xi: usize,
}

/// Selection `[0, I_{n_z}]` of the network errors in `x̄`.
fn error_selector(d: &Dims) -> Matrix {
    let mut s = Matrix::zeros(d.n_z, d.n_x);
    s.view_mut((0, d.n_xi), (d.n_z, d.n_z)).fill_with_identity();
    s
}

/// `[−S, I]`: `w̄` as a function of `ξ`.
fn w_map(d: &Dims) -> Matrix {
    let mut m = Matrix::zeros(d.n_z, d.n_x + d.n_z);
    m.view_mut((0, 0), (d.n_z, d.n_x)).copy_from(&(-error_selector(d)));
    m.view_mut((0, d.n_x), (d.n_z, d.n_z)).fill_with_identity();
    m
}

/// Reception families with positive variance: `(variance, component mask)`.
fn fluctuation_families(model: &PolytopicModel) -> Vec<(f64, Vec<bool>)> {
    let n_z = model.n_z;
    let mut out = Vec::new();
    let groups = [(0..model.n_y).collect::<Vec<_>>(), (model.n_y..n_z).collect::<Vec<_>>()];
    for g in groups {
        if let Some(&c0) = g.first() {
            let v = model.upsilon_var[c0];
            if v > 0.0 {
                let mut mask = vec![false; n_z];
                g.iter().for_each(|&c| mask[c] = true);
                out.push((v, mask));
            }
        }
    }
    out
}

/// The active uncertainty rows for node `sigma`: `(G_sel, Ym, Yf per family)`
/// split per block.
struct UncertaintyRows {
    /// `δ_b G[:, block]ᵀ` stacked, `q × n_x`.
    g_sel: Matrix,
    /// Row ranges in `g_sel` per active block.
    ranges: Vec<(usize, usize)>,
}

fn uncertainty_rows(model: &PolytopicModel) -> UncertaintyRows {
    let env = &model.envelope;
    let mut rows = Vec::new();
    let mut ranges = Vec::new();
    let mut q = 0;
    for b in env.blocks.iter().filter(|b| b.delta > 0.0) {
        let col0 = b.offset - b.family * model.n_xi;
        for c in 0..b.size {
            rows.push(env.g.column(col0 + c).transpose() * b.delta);
        }
        ranges.push((q, b.size));
        q += b.size;
    }
    let g_sel = if rows.is_empty() { Matrix::zeros(0, model.n_x) } else { Matrix::from_rows(&rows) };
    UncertaintyRows { g_sel, ranges }
}

fn active_blocks(model: &PolytopicModel) -> Vec<(usize, usize)> {
    model.envelope.blocks.iter().filter(|b| b.delta > 0.0).map(|b| (b.offset, b.size)).collect()
}

fn embed(rows: usize, cols: usize, at: (usize, usize), block: &Matrix) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    m.view_mut(at, block.shape()).copy_from(block);
    m
}

/// `YᵀY` filled from the upper triangle so the result is exactly symmetric.
fn gram(y: &Matrix) -> Matrix {
    let n = y.ncols();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = y.column(i).dot(&y.column(j));
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

fn sym_embed(n: usize, at: usize, block: &Matrix) -> Matrix {
    embed(n, n, (at, at), block)
}

/// Assembly of one Lyapunov-index/successor/vertex block.
#[allow(clippy::too_many_arguments)]
fn vertex_block(
    label: String,
    d: &Dims,
    model: &PolytopicModel,
    params: &LmiParameters,
    layout: &VariableLayout,
    i: usize,
    j: usize,
    sigma: usize,
    n: usize,
    zeta_terms: &[(usize, Matrix)],
    unc: &UncertaintyRows,
    families: &[(f64, Vec<bool>)],
) -> AffineConstraint {
    let nxi_dim = d.n_x + d.n_z;
    let q = unc.g_sel.nrows();
    let copies = 1 + families.len();
    let dim = nxi_dim + copies * d.n_x + if q > 0 { copies * q } else { 0 };
    let row_of = |c: usize| nxi_dim + c * d.n_x;
    let unc_of = |c: usize| nxi_dim + copies * d.n_x + c * q;

    // constant part in ξ
    let s = error_selector(d);
    let mut x11 = Matrix::identity(d.n_x, d.n_x) * params.a3 - gram(&s) * params.a5;
    if params.output_term() {
        x11 += gram(&model.h_out);
    }
    let mut c0 = Matrix::zeros(dim, dim);
    c0.view_mut((0, 0), (d.n_x, d.n_x)).copy_from(&x11);
    c0.view_mut((0, d.n_x), (d.n_x, d.n_z)).copy_from(&(s.transpose() * params.a5));
    c0.view_mut((d.n_x, 0), (d.n_z, d.n_x)).copy_from(&(&s * params.a5));
    c0.view_mut((d.n_x, d.n_x), (d.n_z, d.n_z))
        .copy_from(&(-Matrix::identity(d.n_z, d.n_z) * params.a5));
    let mut con = AffineConstraint::new(label, Sense::NegSemidef, c0);

    con = con.scalar(layout.a4, sym_embed(dim, d.n_x, &(-Matrix::identity(d.n_z, d.n_z))));
    for (v, qd) in zeta_terms {
        con = con.scalar(*v, sym_embed(dim, 0, qd));
    }

    // successor rows: mean then one per fluctuation family
    let a = &model.a_vertices[sigma][n];
    let e = &model.e_vertices[sigma][n];
    let env = &model.envelope;
    let ups = Matrix::from_diagonal(&nalgebra::DVector::from_vec(model.upsilon_mean.clone()));
    let wm = w_map(d);
    let mut rows = Vec::with_capacity(copies);
    {
        let mut map = Matrix::zeros(d.n_x, nxi_dim);
        map.view_mut((0, 0), (d.n_x, d.n_x)).copy_from(a);
        map.view_mut((0, d.n_x), (d.n_x, d.n_z)).copy_from(&(e * &ups));
        let mut ym = Matrix::zeros(3 * d.n_xi, nxi_dim);
        ym.view_mut((0, 0), (3 * d.n_xi, d.n_x)).copy_from(&env.c_bar[sigma]);
        ym.view_mut((0, d.n_x), (3 * d.n_xi, d.n_z)).copy_from(&(&env.f_bar[sigma] * &ups));
        rows.push(SuccessorRow { map, unc: ym, y: Vec::new() });
    }
    for (var, mask) in families {
        let pi = Matrix::from_diagonal(&nalgebra::DVector::from_iterator(
            d.n_z,
            mask.iter().map(|&m| if m { 1.0 } else { 0.0 }),
        ));
        let map = e * &pi * &wm * var.sqrt();
        let yf = &env.f_bar[sigma] * &pi * &wm * var.sqrt();
        rows.push(SuccessorRow { map, unc: yf, y: Vec::new() });
    }
    let blocks = active_blocks(model);
    for r in rows.iter_mut() {
        r.y = blocks
            .iter()
            .map(|&(off, size)| {
                gram(&r.unc.rows(off, size).into_owned())
            })
            .collect();
    }

    // Lyapunov terms
    let mut sel_x = Matrix::zeros(d.n_x, dim);
    sel_x.view_mut((0, 0), (d.n_x, d.n_x)).fill_with_identity();
    con = con.matrix(layout.lyapunov[i], &sel_x * -0.5, sel_x);
    for (c, r) in rows.iter().enumerate() {
        let mut sel = Matrix::zeros(d.n_x, dim);
        sel.view_mut((0, row_of(c)), (d.n_x, d.n_x)).fill_with_identity();
        let mut left = &sel * -0.5;
        left.view_mut((0, 0), (d.n_x, nxi_dim)).copy_from(&r.map);
        if q > 0 {
            left.view_mut((0, unc_of(c)), (d.n_x, q)).copy_from(&unc.g_sel.transpose());
        }
        con = con.matrix(layout.lyapunov[j], left, sel);
    }

    // uncertainty multipliers
    if q > 0 {
        for (c, r) in rows.iter().enumerate() {
            let vars = &layout.multipliers[i][c];
            for (bi, &(start, size)) in unc.ranges.iter().enumerate() {
                let v = match params.multipliers {
                    MultiplierMode::PerBlock => vars[bi],
                    MultiplierMode::Shared => vars[0],
                };
                let mut coeff = sym_embed(dim, 0, &r.y[bi]);
                let at = unc_of(c) + start;
                for k in 0..size {
                    coeff[(at + k, at + k)] = -1.0;
                }
                con = con.scalar(v, coeff);
            }
        }
    }
    con
}

fn check_model(model: &PolytopicModel, net: &NetworkConfig) -> Result<()> {
    if model.a_vertices.len() != net.n_nodes() {
        return Err(Error::Assembly(format!(
            "model has {} node matrices, network has {} nodes",
            model.a_vertices.len(),
            net.n_nodes()
        )));
    }
    if model.h_out.shape() != (model.n_z, model.n_x) {
        return Err(Error::Assembly("output map has inconsistent dimensions".into()));
    }
    if !(model.upsilon_mean.len() == model.n_z && model.upsilon_var.len() == model.n_z) {
        return Err(Error::Assembly("reception statistics have inconsistent dimensions".into()));
    }
    Ok(())
}

fn vertex_indices(model: &PolytopicModel, mode: VertexEnumeration) -> Vec<(Option<usize>, usize)> {
    let n = model.partition.vertices.len();
    match mode {
        VertexEnumeration::Merged => (0..n).map(|v| (None, v)).collect(),
        VertexEnumeration::PerTriangle => (0..model.partition.triangles.len())
            .flat_map(|m| (0..n).map(move |v| (Some(m), v)))
            .collect(),
    }
}

/// Layout with `l` Lyapunov matrices; `zeta_pairs` lists the S-procedure
/// multipliers.
fn make_layout(
    l: usize,
    zeta_pairs: &[(usize, usize)],
    copies: usize,
    n_blocks: usize,
    mode: MultiplierMode,
) -> (VariableLayout, usize) {
    let mut next = 1;
    let zeta = zeta_pairs
        .iter()
        .map(|&(i, k)| {
            next += 1;
            (i, k, next - 1)
        })
        .collect();
    let per = if n_blocks == 0 {
        0
    } else {
        match mode {
            MultiplierMode::PerBlock => n_blocks,
            MultiplierMode::Shared => 1,
        }
    };
    let multipliers = (0..l)
        .map(|_| {
            (0..copies)
                .map(|_| {
                    let v: Vec<usize> = (next..next + per).collect();
                    next += per;
                    v
                })
                .collect()
        })
        .collect();
    (VariableLayout { a4: 0, zeta, multipliers, lyapunov: (0..l).collect() }, next)
}

fn scalar_bounds(sys: &mut AffineConstraintSystem, layout: &VariableLayout, params: &LmiParameters) {
    let one = || Matrix::from_element(1, 1, 1.0);
    sys.push(AffineConstraint::new("a4 > 0", Sense::PosSemidef, Matrix::zeros(1, 1)).scalar(layout.a4, one()));
    if let Some(g) = params.gamma2_cap() {
        sys.push(
            AffineConstraint::new("a4 + a5 <= gamma2", Sense::NegSemidef, Matrix::from_element(1, 1, params.a5 - g))
                .scalar(layout.a4, one()),
        );
    }
    for &(i, l, v) in &layout.zeta {
        sys.push(
            AffineConstraint::new(format!("zeta[{i},{l}] >= 0"), Sense::PosSemidef, Matrix::zeros(1, 1))
                .scalar(v, one()),
        );
    }
    for (i, copies) in layout.multipliers.iter().enumerate() {
        for (c, vars) in copies.iter().enumerate() {
            for (b, &v) in vars.iter().enumerate() {
                sys.push(
                    AffineConstraint::new(format!("r[{i}][{c}][{b}] > 0"), Sense::PosSemidef, Matrix::zeros(1, 1))
                        .scalar(v, one()),
                );
            }
        }
    }
}

fn lyapunov_positive(sys: &mut AffineConstraintSystem, layout: &VariableLayout, n_x: usize) {
    for (i, &m) in layout.lyapunov.iter().enumerate() {
        let id = Matrix::identity(n_x, n_x);
        sys.push(AffineConstraint::new(format!("P[{i}] > 0"), Sense::PosSemidef, Matrix::zeros(n_x, n_x)).matrix(m, &id * 0.5, id));
    }
}

fn validate_params(params: &LmiParameters) -> Result<()> {
    if !(params.a3 > 0.0 && params.a5 > 0.0) {
        return Err(Error::Config("a3 and a5 must be positive".into()));
    }
    if let Some(g) = params.gamma2_cap() {
        if g <= params.a5 {
            return Err(Error::Config(format!("gamma2 = {g} must exceed a5 = {}", params.a5)));
        }
    }
    Ok(())
}

/// Inequalities for a state-dependent protocol `argmax_i ξᵀ Q_i ξ`, one
/// block per (active index `i`, successor `j`, vertex).
pub fn assemble_quadratic(
    model: &PolytopicModel,
    net: &NetworkConfig,
    q: &[Matrix],
    params: &LmiParameters,
) -> Result<LmiProblem> {
    check_model(model, net)?;
    validate_params(params)?;
    let d = Dims { n_x: model.n_x, n_z: model.n_z, n_xi: model.n_xi };
    let l = net.n_nodes();
    if q.len() != l {
        return Err(Error::Assembly(format!("{} protocol matrices for {l} nodes", q.len())));
    }
    for qi in q {
        if qi.shape() != (d.n_x + d.n_z, d.n_x + d.n_z) {
            return Err(Error::Assembly("protocol matrix has wrong dimension".into()));
        }
        if qi != &qi.transpose() {
            return Err(Error::Assembly("protocol matrix is not symmetric".into()));
        }
    }
    let families = fluctuation_families(model);
    let copies = 1 + families.len();
    let unc = uncertainty_rows(model);
    let n_blocks = unc.ranges.len();
    let pairs: Vec<(usize, usize)> = (0..l).flat_map(|i| (0..l).filter(move |&k| k != i).map(move |k| (i, k))).collect();
    let (layout, n_scalars) = make_layout(l, &pairs, copies, n_blocks, params.multipliers);
    let mut sys = AffineConstraintSystem::new(n_scalars, vec![d.n_x; l]);
    lyapunov_positive(&mut sys, &layout, d.n_x);
    scalar_bounds(&mut sys, &layout, params);

    for i in 0..l {
        let zeta_terms: Vec<(usize, Matrix)> = layout
            .zeta
            .iter()
            .filter(|(a, _, _)| *a == i)
            .map(|&(_, k, v)| (v, &q[i] - &q[k]))
            .collect();
        for j in 0..l {
            for (m, n) in vertex_indices(model, params.vertices) {
                let label = match m {
                    Some(m) => format!("i={i} j={j} m={m} n={n}"),
                    None => format!("i={i} j={j} n={n}"),
                };
                sys.push(vertex_block(label, &d, model, params, &layout, i, j, i, n, &zeta_terms, &unc, &families));
            }
        }
    }
    Ok(LmiProblem { system: sys, layout, params: *params, n_x: d.n_x, n_z: d.n_z, nodes: (0..l).collect(), periodic: false })
}

/// Try-once-discard as a quadratic protocol: `Q_i = Mᵀ Γ_i M` with
/// `M ξ = e − ε̄`.
pub fn tod_matrices(net: &NetworkConfig, n_x: usize, n_z: usize) -> Vec<Matrix> {
    let n_xi = n_x - n_z;
    let mut mm = Matrix::zeros(n_z, n_x + n_z);
    mm.view_mut((0, n_xi), (n_z, n_z)).fill_with_identity();
    mm.view_mut((0, n_x), (n_z, n_z)).copy_from(&(-Matrix::identity(n_z, n_z)));
    net.nodes.iter().map(|node| mm.transpose() * node.matrix() * &mm).collect()
}

/// Inequalities for a fixed cyclic schedule: one Lyapunov matrix per
/// position of the sequence, successor is the next position.
pub fn assemble_periodic(
    model: &PolytopicModel,
    net: &NetworkConfig,
    sequence: &[usize],
    params: &LmiParameters,
) -> Result<LmiProblem> {
    check_model(model, net)?;
    validate_params(params)?;
    if sequence.is_empty() || sequence.iter().any(|&s| s >= net.n_nodes()) {
        return Err(Error::Assembly("periodic sequence is empty or names an unknown node".into()));
    }
    let d = Dims { n_x: model.n_x, n_z: model.n_z, n_xi: model.n_xi };
    let l = sequence.len();
    let families = fluctuation_families(model);
    let copies = 1 + families.len();
    let unc = uncertainty_rows(model);
    let (layout, n_scalars) = make_layout(l, &[], copies, unc.ranges.len(), params.multipliers);
    let mut sys = AffineConstraintSystem::new(n_scalars, vec![d.n_x; l]);
    lyapunov_positive(&mut sys, &layout, d.n_x);
    scalar_bounds(&mut sys, &layout, params);
    for (p, &sigma) in sequence.iter().enumerate() {
        let j = (p + 1) % l;
        for (m, n) in vertex_indices(model, params.vertices) {
            let label = match m {
                Some(m) => format!("p={p} m={m} n={n}"),
                None => format!("p={p} n={n}"),
            };
            sys.push(vertex_block(label, &d, model, params, &layout, p, j, sigma, n, &[], &unc, &families));
        }
    }
    Ok(LmiProblem { system: sys, layout, params: *params, n_x: d.n_x, n_z: d.n_z, nodes: sequence.to_vec(), periodic: true })
}

/// Picks the assembly matching the network protocol.
pub fn assemble(model: &PolytopicModel, net: &NetworkConfig, params: &LmiParameters) -> Result<LmiProblem> {
    match &net.protocol {
        Protocol::Tod => assemble_quadratic(model, net, &tod_matrices(net, model.n_x, model.n_z), params),
        Protocol::Quadratic { q } => assemble_quadratic(model, net, q, params),
        p => assemble_periodic(model, net, &p.sequence(net.n_nodes()).expect("periodic protocol"), params),
    }
}

/// Decay and gain constants from a feasible point.
pub fn derive_certificate(problem: &LmiProblem, x: &[f64], margin: f64) -> Result<LmiCertificate> {
    let sys = &problem.system;
    let (a3, a5) = (problem.params.a3, problem.params.a5);
    let p: Vec<Matrix> = problem.layout.lyapunov.iter().map(|&m| sys.unpack_matrix(x, m)).collect();
    let a1 = p.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min);
    let a2 = p.iter().map(max_eigenvalue).fold(f64::NEG_INFINITY, f64::max);
    let a4 = x[problem.layout.a4];
    certificate_constants(a1, a2, a3, a4, a5).map(|(c1, c2, gamma1, gamma2)| LmiCertificate {
        zeta: problem.layout.zeta.iter().map(|&(i, l, v)| (i, l, x[v])).collect(),
        multipliers: problem
            .layout
            .multipliers
            .iter()
            .map(|cs| cs.iter().map(|vs| vs.iter().map(|&v| x[v]).collect()).collect())
            .collect(),
        p,
        a3,
        a4,
        a5,
        margin,
        a1,
        a2,
        c1,
        c2,
        gamma1,
        gamma2,
    })
}

/// `(c₁, c₂, γ₁, γ₂)`.
pub fn certificate_constants(a1: f64, a2: f64, a3: f64, a4: f64, a5: f64) -> Result<(f64, f64, f64, f64)> {
    if !(a1 > 0.0) {
        return Err(Error::CertificateInvalid(format!("Lyapunov matrix not positive definite (a1 = {a1})")));
    }
    if a3 <= 2.0 * a5 {
        return Err(Error::CertificateInvalid(format!("need a3 > 2 a5, got a3 = {a3}, a5 = {a5}")));
    }
    if a2 < a3 {
        return Err(Error::CertificateInvalid(format!("need a2 >= a3, got a2 = {a2}, a3 = {a3}")));
    }
    let d = a3 - 2.0 * a5;
    Ok((a2 / a1, -(1.0 - d / a2).ln(), a2 * (a4 + 2.0 * a5) / (a1 * d), a4 + a5))
}

/// Human-readable dump: variable layout, then every block with its
/// constant and nonzero coefficients.
pub fn dump_text(problem: &LmiProblem) -> String {
    use std::fmt::Write;
    let sys = &problem.system;
    let mut s = String::new();
    let _ = writeln!(s, "variables {} scalars {} matrices {:?}", sys.dim(), sys.n_scalars, sys.matrix_sizes);
    let _ = writeln!(s, "a4 {}", problem.layout.a4);
    for (i, l, v) in &problem.layout.zeta {
        let _ = writeln!(s, "zeta {i} {l} {v}");
    }
    for (k, c) in sys.constraints.iter().enumerate() {
        let sense = match c.sense {
            Sense::NegSemidef => "nsd",
            Sense::PosSemidef => "psd",
        };
        let _ = writeln!(s, "constraint {k} \"{}\" {sense} dim {}", c.label, c.dim());
        write_block(&mut s, "constant", &c.constant);
        for i in 0..sys.dim() {
            let coeff = sys.coefficient(k, i);
            if coeff.amax() > 0.0 {
                write_block(&mut s, &format!("coeff {i}"), &coeff);
            }
        }
    }
    s
}

fn write_block(s: &mut String, head: &str, m: &Matrix) {
    use std::fmt::Write;
    let nz: Vec<_> = (0..m.nrows())
        .flat_map(|r| (r..m.ncols()).map(move |c| (r, c)))
        .filter(|&(r, c)| m[(r, c)] != 0.0)
        .collect();
    let _ = writeln!(s, "  {head} nnz {}", nz.len());
    for (r, c) in nz {
        let _ = writeln!(s, "    {r} {c} {:.17e}", m[(r, c)]);
    }
}
