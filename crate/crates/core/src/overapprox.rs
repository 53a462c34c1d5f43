//! Polytopic overapproximation of the sampled loop over a region of
//! (interval, delay) pairs, with a structured norm-bounded remainder.

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, expm_integral, norm2, BlockDecomposition, BlockKind, Matrix};
use crate::model::{build_realization, LoopStructure, NetworkConfig, TimingDistribution, TimingRegion};

pub type Point = (f64, f64);

/// Triangulation of the timing region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingPartition {
    /// `(h̄_n, τ̄_n)`.
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub probabilities: Vec<f64>,
    pub n_a: usize,
    pub n_b: usize,
}

impl TimingPartition {
    pub fn total_probability(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    pub fn triangle_points(&self, m: usize) -> [Point; 3] {
        let t = self.triangles[m];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    /// Triangle containing `p` and its barycentric coordinates.
    pub fn locate(&self, p: Point) -> Option<(usize, [f64; 3])> {
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for m in 0..self.triangles.len() {
            if let Some(bary) = barycentric(&self.triangle_points(m), p) {
                let worst = bary.iter().cloned().fold(f64::INFINITY, f64::min);
                if best.as_ref().map_or(true, |b| worst > b.2) {
                    best = Some((m, bary, worst));
                }
            }
        }
        match best {
            Some((m, bary, worst)) if worst >= -1e-9 => {
                let clamped = bary.map(|b| b.max(0.0));
                let s: f64 = clamped.iter().sum();
                Some((m, clamped.map(|b| b / s)))
            }
            _ => None,
        }
    }
}

fn barycentric(tri: &[Point; 3], p: Point) -> Option<[f64; 3]> {
    let (x1, y1) = tri[0];
    let (x2, y2) = tri[1];
    let (x3, y3) = tri[2];
    let det = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3);
    let scale = ((x1 - x3).abs() + (x2 - x3).abs()) * ((y1 - y3).abs() + (y2 - y3).abs());
    if det.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) || det == 0.0 {
        return segment_coordinates(tri, p);
    }
    let l1 = ((y2 - y3) * (p.0 - x3) + (x3 - x2) * (p.1 - y3)) / det;
    let l2 = ((y3 - y1) * (p.0 - x3) + (x1 - x3) * (p.1 - y3)) / det;
    Some([l1, l2, 1.0 - l1 - l2])
}

/// Coordinates on a collapsed triangle (a segment or a point), which the
/// partition of a degenerate region is made of.
fn segment_coordinates(tri: &[Point; 3], p: Point) -> Option<[f64; 3]> {
    let dist = |a: Point, b: Point| (a.0 - b.0).hypot(a.1 - b.1);
    let (i, j) = [(0, 1), (0, 2), (1, 2)]
        .into_iter()
        .max_by(|a, b| dist(tri[a.0], tri[a.1]).total_cmp(&dist(tri[b.0], tri[b.1])))
        .expect("three edges");
    let (a, b) = (tri[i], tri[j]);
    let len = dist(a, b);
    let reach = 1e-9 * (a.0.abs() + a.1.abs() + b.0.abs() + b.1.abs()).max(f64::MIN_POSITIVE);
    let mut out = [0.0; 3];
    if len <= reach {
        if dist(a, p) > reach {
            return None;
        }
        out[i] = 1.0;
        return Some(out);
    }
    let (dx, dy) = ((b.0 - a.0) / len, (b.1 - a.1) / len);
    let along = ((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len;
    let across = ((p.0 - a.0) * dy - (p.1 - a.1) * dx).abs();
    if across > reach {
        return None;
    }
    out[i] = 1.0 - along;
    out[j] = along;
    Some(out)
}

fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (x1, y1) = poly[i];
        let (x2, y2) = poly[(i + 1) % n];
        acc += x1 * y2 - x2 * y1;
    }
    0.5 * acc.abs()
}

/// Keeps the part of a convex polygon with `a·h + b·τ ≤ c`.
fn clip_halfplane(poly: &[Point], a: f64, b: f64, c: f64) -> Vec<Point> {
    let inside = |p: &Point| a * p.0 + b * p.1 <= c;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let cur = poly[i];
        let next = poly[(i + 1) % poly.len()];
        let (ci, ni) = (inside(&cur), inside(&next));
        if ci {
            out.push(cur);
        }
        if ci != ni {
            let fc = a * cur.0 + b * cur.1 - c;
            let fnx = a * next.0 + b * next.1 - c;
            let t = fc / (fc - fnx);
            let mut q = (cur.0 + t * (next.0 - cur.0), cur.1 + t * (next.1 - cur.1));
            // snap onto the line so boundary vertices stay inside the region
            if b == 0.0 {
                q.0 = c / a;
            } else if a == 0.0 {
                q.1 = c / b;
            } else if a == -b {
                q.1 = q.0 + c / b;
            }
            out.push(q);
        }
    }
    out
}

fn clip_rect(poly: &[Point], h0: f64, h1: f64, t0: f64, t1: f64) -> Vec<Point> {
    let mut p = clip_halfplane(poly, 1.0, 0.0, h1);
    p = clip_halfplane(&p, -1.0, 0.0, -h0);
    p = clip_halfplane(&p, 0.0, 1.0, t1);
    clip_halfplane(&p, 0.0, -1.0, -t0)
}

/// The region as a convex polygon (rectangle cut by `τ ≤ h`).
fn region_polygon(r: &TimingRegion) -> Vec<Point> {
    let rect = vec![(r.h_min, r.tau_min), (r.h_mati, r.tau_min), (r.h_mati, r.tau_mad), (r.h_min, r.tau_mad)];
    clip_halfplane(&rect, -1.0, 1.0, 0.0)
}

/// Probability mass of the convex polygon `poly` (already inside the
/// region) under the distribution.
fn polygon_mass(poly: &[Point], region: &TimingRegion, dist: &TimingDistribution, norm: f64) -> f64 {
    match dist {
        TimingDistribution::Uniform => polygon_area(poly) / norm,
        TimingDistribution::Tabulated { h_edges, tau_edges, density } => {
            let mut acc = 0.0;
            for (bi, row) in density.iter().enumerate() {
                for (ai, &d) in row.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let cell = clip_rect(poly, h_edges[ai], h_edges[ai + 1], tau_edges[bi], tau_edges[bi + 1]);
                    acc += d * polygon_area(&cell);
                }
            }
            let _ = region;
            acc / norm
        }
    }
}

fn distribution_norm(region: &TimingRegion, dist: &TimingDistribution) -> Result<f64> {
    let poly = region_polygon(region);
    let norm = match dist {
        TimingDistribution::Uniform => polygon_area(&poly),
        TimingDistribution::Tabulated { .. } => polygon_mass(&poly, region, dist, 1.0),
    };
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Config("timing distribution has no mass on the region".into()));
    }
    Ok(norm)
}

/// `ℙ{(h, τ) ∈ triangle}` under the distribution restricted to the region.
pub fn triangle_probability(tri: &[Point; 3], region: &TimingRegion, dist: &TimingDistribution) -> Result<f64> {
    if polygon_area(tri) == 0.0 {
        return Ok(0.0);
    }
    let norm = distribution_norm(region, dist)?;
    let mut poly = clip_rect(tri, region.h_min, region.h_mati, region.tau_min, region.tau_mad);
    poly = clip_halfplane(&poly, -1.0, 1.0, 0.0);
    Ok(polygon_mass(&poly, region, dist, norm).clamp(0.0, 1.0))
}

fn push_vertex(vertices: &mut Vec<Point>, p: Point, tol: f64) -> usize {
    for (i, v) in vertices.iter().enumerate() {
        if (v.0 - p.0).abs() <= tol && (v.1 - p.1).abs() <= tol {
            return i;
        }
    }
    vertices.push(p);
    vertices.len() - 1
}

/// Uniform `n_a × n_b` grid on the bounding rectangle, each cell split in
/// two triangles along its rising diagonal and every triangle clipped to
/// `τ ≤ h`.
pub fn partition_theta(
    region: &TimingRegion,
    dist: &TimingDistribution,
    n_a: usize,
    n_b: usize,
) -> Result<TimingPartition> {
    if n_a == 0 || n_b == 0 {
        return Err(Error::Config("partition: N_a and N_b must be at least 1".into()));
    }
    region.validate()?;
    dist.validate()?;
    let mut hs: Vec<f64> = (0..=n_a)
        .map(|a| region.h_min + (region.h_mati - region.h_min) * a as f64 / n_a as f64)
        .collect();
    let mut ts: Vec<f64> = (0..=n_b)
        .map(|b| region.tau_min + (region.tau_mad - region.tau_min) * b as f64 / n_b as f64)
        .collect();
    // keep the outer grid lines on the region boundary exactly
    hs[n_a] = region.h_mati;
    ts[n_b] = region.tau_mad;
    let tol = 1e-12 * region.h_mati.max(1e-300);
    let area = polygon_area(&region_polygon(region));
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut probabilities = Vec::new();

    if area <= 1e-14 * region.h_mati * region.h_mati {
        // degenerate region: a segment or a point; the mass is spread
        // along the segment's length
        let len_h = region.h_mati - region.h_min;
        let len_t = region.tau_mad - region.tau_min;
        for b in 0..n_b {
            for a in 0..n_a {
                let corners = [(hs[a], ts[b]), (hs[a + 1], ts[b]), (hs[a + 1], ts[b + 1]), (hs[a], ts[b + 1])];
                let idx: Vec<usize> = corners.iter().map(|&p| push_vertex(&mut vertices, p, tol)).collect();
                let wa = if len_h > 0.0 { (hs[a + 1] - hs[a]) / len_h } else { 1.0 / n_a as f64 };
                let wb = if len_t > 0.0 { (ts[b + 1] - ts[b]) / len_t } else { 1.0 / n_b as f64 };
                let per_cell = wa * wb;
                triangles.push([idx[0], idx[1], idx[2]]);
                probabilities.push(per_cell / 2.0);
                triangles.push([idx[0], idx[2], idx[3]]);
                probabilities.push(per_cell / 2.0);
            }
        }
        return Ok(TimingPartition { vertices, triangles, probabilities, n_a, n_b });
    }

    let norm = distribution_norm(region, dist)?;
    for b in 0..n_b {
        for a in 0..n_a {
            let v00 = (hs[a], ts[b]);
            let v10 = (hs[a + 1], ts[b]);
            let v01 = (hs[a], ts[b + 1]);
            let v11 = (hs[a + 1], ts[b + 1]);
            for tri in [[v00, v10, v11], [v00, v11, v01]] {
                let clipped = clip_halfplane(&tri, -1.0, 1.0, 0.0);
                if polygon_area(&clipped) <= 1e-14 * polygon_area(&tri) {
                    continue;
                }
                // fan triangulation of the convex remainder
                for k in 1..clipped.len() - 1 {
                    let piece = [clipped[0], clipped[k], clipped[k + 1]];
                    if polygon_area(&piece) <= 1e-14 * polygon_area(&tri) {
                        continue;
                    }
                    let idx = piece.map(|p| push_vertex(&mut vertices, p, tol));
                    triangles.push(idx);
                    probabilities.push(polygon_mass(&piece, region, dist, norm));
                }
            }
        }
    }
    Ok(TimingPartition { vertices, triangles, probabilities, n_a, n_b })
}

/// Worst-case interpolation errors per block of the decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockErrors {
    pub a: Vec<f64>,
    pub e_h: Vec<f64>,
    pub e_h_tau: Vec<f64>,
}

/// Options for the simplex maximization of the interpolation errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorSearch {
    /// Barycentric grid subdivisions.
    pub resolution: usize,
    /// Golden-section sweeps around the best grid point.
    pub refine_rounds: usize,
    pub safety: f64,
}

impl Default for ErrorSearch {
    fn default() -> Self {
        Self { resolution: 50, refine_rounds: 3, safety: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    A,
    Eh,
    Eht,
}

/// Evaluates `e^{Λ_i t}` or `∫₀^t e^{Λ_i s} ds` for one block.
#[derive(Debug, Clone)]
enum BlockFn {
    Scalar(f64),
    Rotation(Complex<f64>),
    General(Matrix),
}

impl BlockFn {
    fn new(block: &Matrix, kind: BlockKind) -> Self {
        match kind {
            BlockKind::Real if block.nrows() == 1 => BlockFn::Scalar(block[(0, 0)]),
            BlockKind::ComplexPair => BlockFn::Rotation(Complex::new(block[(0, 0)], block[(0, 1)])),
            _ => BlockFn::General(block.clone()),
        }
    }

    fn value_norm(&self, integral: bool, s: f64) -> f64 {
        // f(s) − f(0) recovers ‖f(s)‖ up to ‖f(0)‖ ≤ 1
        self.error(integral, &[s, 0.0, 0.0], &[0.0, 1.0, 0.0]) + 1.0
    }

    /// Interpolation error `‖f(Σαt) − Σα f(t_l)‖₂`.
    fn error(&self, integral: bool, t: &[f64; 3], alpha: &[f64; 3]) -> f64 {
        let tb = alpha[0] * t[0] + alpha[1] * t[1] + alpha[2] * t[2];
        match self {
            BlockFn::Scalar(l) => {
                let f = |s: f64| {
                    if integral {
                        if *l == 0.0 {
                            s
                        } else {
                            (l * s).exp_m1() / l
                        }
                    } else {
                        (l * s).exp()
                    }
                };
                (f(tb) - alpha[0] * f(t[0]) - alpha[1] * f(t[1]) - alpha[2] * f(t[2])).abs()
            }
            BlockFn::Rotation(z) => {
                let f = |s: f64| {
                    let zs = z * s;
                    if integral {
                        // (e^{zs} − 1)/z, with a series near zero
                        if zs.norm() < 1e-5 {
                            Complex::new(s, 0.0) * (Complex::new(1.0, 0.0) + zs / 2.0 + zs * zs / 6.0)
                        } else {
                            (zs.exp() - 1.0) / z
                        }
                    } else {
                        zs.exp()
                    }
                };
                (f(tb) - f(t[0]) * alpha[0] - f(t[1]) * alpha[1] - f(t[2]) * alpha[2]).norm()
            }
            BlockFn::General(m) => {
                let f = |s: f64| -> Matrix {
                    if integral {
                        expm_integral(m, s.max(0.0)).expect("block integral")
                    } else {
                        expm(m, s).expect("block exponential")
                    }
                };
                let diff = f(tb) - f(t[0]) * alpha[0] - f(t[1]) * alpha[1] - f(t[2]) * alpha[2];
                norm2(&diff)
            }
        }
    }
}

/// Maximizes `f` over the 2-simplex: barycentric grid, then golden-section
/// line searches along the three edge directions through the incumbent.
fn simplex_max(f: &dyn Fn(&[f64; 3]) -> f64, opts: &ErrorSearch) -> f64 {
    let r = opts.resolution.max(1);
    let mut best = (f64::NEG_INFINITY, [1.0, 0.0, 0.0]);
    for i in 0..=r {
        for j in 0..=(r - i) {
            let a = [i as f64 / r as f64, j as f64 / r as f64, (r - i - j) as f64 / r as f64];
            let v = f(&a);
            if v > best.0 {
                best = (v, a);
            }
        }
    }
    let dirs = [[1.0, -1.0, 0.0], [1.0, 0.0, -1.0], [0.0, 1.0, -1.0]];
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..opts.refine_rounds {
        for d in &dirs {
            let x0 = best.1;
            // feasible step range keeping all coordinates in [0, 1]
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for k in 0..3 {
                if d[k] > 0.0 {
                    lo = lo.max(-x0[k] / d[k]);
                    hi = hi.min((1.0 - x0[k]) / d[k]);
                } else if d[k] < 0.0 {
                    lo = lo.max((1.0 - x0[k]) / d[k]);
                    hi = hi.min(-x0[k] / d[k]);
                }
            }
            // search only the neighbourhood of the incumbent
            let span = 2.0 / r as f64;
            lo = lo.max(-span);
            hi = hi.min(span);
            if !(hi > lo) {
                continue;
            }
            let at = |s: f64| {
                let p = [
                    (x0[0] + s * d[0]).clamp(0.0, 1.0),
                    (x0[1] + s * d[1]).clamp(0.0, 1.0),
                    (x0[2] + s * d[2]).clamp(0.0, 1.0),
                ];
                (f(&p), p)
            };
            let (mut a, mut b) = (lo, hi);
            let mut c = b - phi * (b - a);
            let mut e = a + phi * (b - a);
            let mut fc = at(c);
            let mut fe = at(e);
            for _ in 0..40 {
                if fc.0 > fe.0 {
                    b = e;
                    e = c;
                    fe = fc;
                    c = b - phi * (b - a);
                    fc = at(c);
                } else {
                    a = c;
                    c = e;
                    fc = fe;
                    e = a + phi * (b - a);
                    fe = at(e);
                }
            }
            for cand in [fc, fe] {
                if cand.0 > best.0 {
                    best = cand;
                }
            }
        }
    }
    best.0
}

/// Worst-case errors of the three interpolated families, maximized over
/// each triangle and then over triangles.
pub fn worst_case_block_errors(
    decomp: &BlockDecomposition,
    partition: &TimingPartition,
    opts: &ErrorSearch,
) -> BlockErrors {
    let fns: Vec<BlockFn> = decomp
        .blocks
        .iter()
        .zip(&decomp.kinds)
        .map(|(b, &k)| BlockFn::new(b, k))
        .collect();
    let k = fns.len();
    let per_triangle: Vec<[Vec<f64>; 3]> = (0..partition.triangles.len())
        .into_par_iter()
        .map(|m| {
            let pts = partition.triangle_points(m);
            let hs = [pts[0].0, pts[1].0, pts[2].0];
            let rhos = [pts[0].0 - pts[0].1, pts[1].0 - pts[1].1, pts[2].0 - pts[2].1];
            let mut out = [vec![0.0; k], vec![0.0; k], vec![0.0; k]];
            for (i, f) in fns.iter().enumerate() {
                for (slot, family) in [Family::A, Family::Eh, Family::Eht].iter().enumerate() {
                    let (t, integral) = match family {
                        Family::A => (&hs, false),
                        Family::Eh => (&hs, true),
                        Family::Eht => (&rhos, true),
                    };
                    if t[0] == t[1] && t[1] == t[2] {
                        continue;
                    }
                    let v = simplex_max(&|a| f.error(integral, t, a), opts);
                    // errors at rounding level mean the family is affine here
                    let scale = t.iter().map(|&s| f.value_norm(integral, s)).fold(0.0, f64::max);
                    out[slot][i] = if v <= 1e-13 * scale { 0.0 } else { v };
                }
            }
            out
        })
        .collect();
    let mut errors = BlockErrors { a: vec![0.0; k], e_h: vec![0.0; k], e_h_tau: vec![0.0; k] };
    for tri in &per_triangle {
        for i in 0..k {
            errors.a[i] = errors.a[i].max(tri[0][i]);
            errors.e_h[i] = errors.e_h[i].max(tri[1][i]);
            errors.e_h_tau[i] = errors.e_h_tau[i].max(tri[2][i]);
        }
    }
    let inflate = |v: &mut Vec<f64>| v.iter_mut().for_each(|d| *d *= 1.0 + opts.safety);
    inflate(&mut errors.a);
    inflate(&mut errors.e_h);
    inflate(&mut errors.e_h_tau);
    errors
}

/// One norm-bounded block of the uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBlock {
    /// 0: `e^{Λh}`, 1: `E_h`, 2: `E_{h−τ}`.
    pub family: usize,
    /// Index into the decomposition blocks.
    pub block: usize,
    /// Column offset in `B̄` (row offset in `C̄_σ`).
    pub offset: usize,
    pub size: usize,
    pub delta: f64,
}

/// `B̄`, `C̄_σ`, `F̄_σ` such that the remainder of the exact matrices
/// against the vertex interpolation equals `B̄ Δ [C̄_σ, F̄_σ]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintyEnvelope {
    /// `[T; −C T]`.
    pub g: Matrix,
    pub b_bar: Matrix,
    pub c_bar: Vec<Matrix>,
    pub f_bar: Vec<Matrix>,
    /// Diagonal of `U`.
    pub u: Vec<f64>,
    pub blocks: Vec<UncertaintyBlock>,
}

pub fn build_uncertainty_envelope(
    decomp: &BlockDecomposition,
    errors: &BlockErrors,
    structure: &LoopStructure,
    net: &NetworkConfig,
) -> Result<UncertaintyEnvelope> {
    let n_xi = structure.n_xi();
    let n_z = structure.n_z();
    let n_x = structure.n_x();
    if decomp.dim() != n_xi {
        return Err(Error::Assembly(format!("decomposition has dimension {}, expected {n_xi}", decomp.dim())));
    }
    let t = &decomp.transform;
    let ti = &decomp.transform_inv;
    let mut g = Matrix::zeros(n_x, n_xi);
    g.view_mut((0, 0), (n_xi, n_xi)).copy_from(t);
    g.view_mut((n_xi, 0), (n_z, n_xi)).copy_from(&(-(&structure.c * t)));

    let sizes = decomp.block_sizes();
    let offsets = decomp.offsets();
    let mut u = Vec::with_capacity(3 * n_xi);
    let mut blocks = Vec::with_capacity(3 * sizes.len());
    for (family, deltas) in [&errors.a, &errors.e_h, &errors.e_h_tau].iter().enumerate() {
        for (i, &size) in sizes.iter().enumerate() {
            blocks.push(UncertaintyBlock {
                family,
                block: i,
                offset: family * n_xi + offsets[i],
                size,
                delta: deltas[i],
            });
            u.extend(std::iter::repeat(deltas[i]).take(size));
        }
    }
    let mut b_bar = Matrix::zeros(n_x, 3 * n_xi);
    for f in 0..3 {
        let mut gu = g.clone();
        for (c, mut col) in gu.column_iter_mut().enumerate() {
            col *= u[f * n_xi + c];
        }
        b_bar.view_mut((0, f * n_xi), (n_x, n_xi)).copy_from(&gu);
    }

    let mean = net.reception_mean(structure.n_y, structure.n_u);
    let ti_b = ti * &structure.b;
    let mut c_bar = Vec::with_capacity(net.n_nodes());
    let mut f_bar = Vec::with_capacity(net.n_nodes());
    for node in &net.nodes {
        let gamma = node.diagonal();
        let ug = Matrix::from_diagonal(&mean.component_mul(&gamma));
        let mut c = Matrix::zeros(3 * n_xi, n_x);
        c.view_mut((0, 0), (n_xi, n_xi)).copy_from(ti);
        let ti_bd = &ti_b * &structure.d;
        c.view_mut((n_xi, 0), (n_xi, n_xi)).copy_from(&(&ti_bd * &structure.c));
        c.view_mut((n_xi, n_xi), (n_xi, n_z)).copy_from(&ti_bd);
        c.view_mut((2 * n_xi, n_xi), (n_xi, n_z)).copy_from(&(-(&ti_b * &ug)));
        let mut f = Matrix::zeros(3 * n_xi, n_z);
        f.view_mut((2 * n_xi, 0), (n_xi, n_z)).copy_from(&(&ti_b * Matrix::from_diagonal(&gamma)));
        c_bar.push(c);
        f_bar.push(f);
    }
    Ok(UncertaintyEnvelope { g, b_bar, c_bar, f_bar, u, blocks })
}

impl UncertaintyEnvelope {
    /// `ϖ = max_σ ‖B̄‖ ‖C̄_σ‖`.
    pub fn tightness(&self) -> f64 {
        let b = norm2(&self.b_bar);
        if b == 0.0 {
            return 0.0;
        }
        self.c_bar.iter().map(|c| b * norm2(c)).fold(0.0, f64::max)
    }
}

/// Settings of the overapproximation procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcedureOptions {
    pub n_a: usize,
    pub n_b: usize,
    /// Tightness threshold `ϖ*`.
    pub varpi_star: f64,
    /// Admissible missing probability mass `ς`.
    pub varsigma: f64,
    /// Maximum number of grid doublings.
    pub max_refinements: usize,
    pub search: ErrorSearch,
}

impl Default for ProcedureOptions {
    fn default() -> Self {
        Self { n_a: 2, n_b: 2, varpi_star: 10.0, varsigma: 1e-3, max_refinements: 8, search: ErrorSearch::default() }
    }
}

/// Vertex matrices plus uncertainty envelope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolytopicModel {
    pub partition: TimingPartition,
    /// `Ā_{σn}` indexed `[σ][n]`.
    pub a_vertices: Vec<Vec<Matrix>>,
    /// `Ē_{σn}` (reception factor not applied).
    pub e_vertices: Vec<Vec<Matrix>>,
    pub errors: BlockErrors,
    pub envelope: UncertaintyEnvelope,
    pub varpi: f64,
    pub h_out: Matrix,
    pub upsilon_mean: Vec<f64>,
    pub upsilon_var: Vec<f64>,
    pub n_x: usize,
    pub n_z: usize,
    pub n_xi: usize,
    pub n_y: usize,
}

/// `(Ā_{σn}, Ē_{σn})` at every partition vertex.
pub fn vertex_matrices(
    structure: &LoopStructure,
    net: &NetworkConfig,
    partition: &TimingPartition,
) -> Result<(Vec<Vec<Matrix>>, Vec<Vec<Matrix>>)> {
    let mut a = Vec::with_capacity(net.n_nodes());
    let mut e = Vec::with_capacity(net.n_nodes());
    for sigma in 0..net.n_nodes() {
        let reals: Result<Vec<_>> = partition
            .vertices
            .par_iter()
            .map(|&(h, tau)| build_realization(structure, net, sigma, h, tau.min(h)))
            .collect();
        let (av, ev): (Vec<Matrix>, Vec<Matrix>) = reals?.into_iter().map(|r| (r.a, r.b)).unzip();
        a.push(av);
        e.push(ev);
    }
    Ok((a, e))
}

pub fn build_polytopic_model(
    structure: &LoopStructure,
    decomp: &BlockDecomposition,
    net: &NetworkConfig,
    n_a: usize,
    n_b: usize,
    search: &ErrorSearch,
) -> Result<PolytopicModel> {
    let partition = partition_theta(&net.timing, &net.distribution, n_a, n_b)?;
    let (a_vertices, e_vertices) = vertex_matrices(structure, net, &partition)?;
    let errors = worst_case_block_errors(decomp, &partition, search);
    let envelope = build_uncertainty_envelope(decomp, &errors, structure, net)?;
    let varpi = envelope.tightness();
    Ok(PolytopicModel {
        partition,
        a_vertices,
        e_vertices,
        errors,
        envelope,
        varpi,
        h_out: structure.h_out.clone(),
        upsilon_mean: net.reception_mean(structure.n_y, structure.n_u).iter().copied().collect(),
        upsilon_var: net.reception_variance(structure.n_y, structure.n_u).iter().copied().collect(),
        n_x: structure.n_x(),
        n_z: structure.n_z(),
        n_xi: structure.n_xi(),
        n_y: structure.n_y,
    })
}

/// Doubles the grid until `ϖ ≤ ϖ*`.
pub fn refine_until_tight(
    structure: &LoopStructure,
    decomp: &BlockDecomposition,
    net: &NetworkConfig,
    opts: &ProcedureOptions,
) -> Result<PolytopicModel> {
    let (mut n_a, mut n_b) = (opts.n_a, opts.n_b);
    let mut last = f64::NAN;
    for _ in 0..=opts.max_refinements {
        let model = build_polytopic_model(structure, decomp, net, n_a, n_b, &opts.search)?;
        let mass = model.partition.total_probability();
        if mass < 1.0 - opts.varsigma {
            return Err(Error::Config(format!("partition covers probability {mass}, below 1 − ς")));
        }
        if model.varpi <= opts.varpi_star {
            return Ok(model);
        }
        last = model.varpi;
        n_a *= 2;
        n_b *= 2;
    }
    Err(Error::TightnessNotAchieved { varpi: last, threshold: opts.varpi_star, iterations: opts.max_refinements })
}

/// Outcome of the containment check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub samples: usize,
    pub checks: usize,
    /// `(σ, h, τ)` of every failed check.
    pub violations: Vec<(usize, f64, f64)>,
    pub max_residual: f64,
    pub max_block_norm: f64,
}

impl ContainmentReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Uniform samples from the region by rejection.
pub fn sample_region(region: &TimingRegion, samples: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    let degenerate_h = region.h_mati == region.h_min;
    while out.len() < samples {
        let h = if degenerate_h { region.h_min } else { rng.gen_range(region.h_min..=region.h_mati) };
        let tau = if region.tau_mad == region.tau_min {
            region.tau_min
        } else {
            rng.gen_range(region.tau_min..=region.tau_mad)
        };
        if tau <= h {
            out.push((h, tau));
        } else if degenerate_h && region.tau_min > h {
            break;
        }
    }
    out
}

/// Checks `[𝒜, ℬ] − Σ α_n [Ā_n, Ē_n] = B̄ Δ [C̄_σ, F̄_σ]` with every
/// `‖Δ_b‖ ≤ 1` at random points of the region.
pub fn verify_containment(
    model: &PolytopicModel,
    decomp: &BlockDecomposition,
    structure: &LoopStructure,
    net: &NetworkConfig,
    samples: usize,
    seed: u64,
) -> Result<ContainmentReport> {
    verify_containment_at(model, decomp, structure, net, &sample_region(&net.timing, samples, seed))
}

pub fn verify_containment_at(
    model: &PolytopicModel,
    decomp: &BlockDecomposition,
    structure: &LoopStructure,
    net: &NetworkConfig,
    points: &[Point],
) -> Result<ContainmentReport> {
    let n_xi = structure.n_xi();
    let env = &model.envelope;
    let results: Vec<Result<Vec<(usize, f64, f64, bool, f64, f64)>>> = points
        .par_iter()
        .map(|&(h, tau)| {
            let (m, alpha) = model
                .partition
                .locate((h, tau))
                .ok_or_else(|| Error::Domain(format!("sample ({h}, {tau}) lies outside the partition")))?;
            let tri = model.partition.triangles[m];
            let pts = model.partition.triangle_points(m);
            // block-wise remainders in the decomposition coordinates
            let ti = &decomp.transform_inv;
            let t = &decomp.transform;
            let coord = |x: Matrix| ti * x * t;
            let interp = |f: &dyn Fn(f64, f64) -> Result<Matrix>| -> Result<Matrix> {
                let exact = coord(f(h, tau)?);
                let mut acc = exact;
                for l in 0..3 {
                    acc -= coord(f(pts[l].0, pts[l].1)?) * alpha[l];
                }
                Ok(acc)
            };
            let d_a = interp(&|h, _| expm(&structure.lambda, h))?;
            let d_eh = interp(&|h, _| expm_integral(&structure.lambda, h))?;
            let d_et = interp(&|h, tau| expm_integral(&structure.lambda, (h - tau).max(0.0)))?;
            let mut delta = Matrix::zeros(3 * n_xi, 3 * n_xi);
            let mut block_norm: f64 = 0.0;
            for b in &env.blocks {
                let src = [&d_a, &d_eh, &d_et][b.family];
                let local = b.offset - b.family * n_xi;
                let piece = src.view((local, local), (b.size, b.size)).into_owned();
                if b.delta > 0.0 {
                    let scaled = piece / b.delta;
                    block_norm = block_norm.max(norm2(&scaled));
                    delta.view_mut((b.offset, b.offset), (b.size, b.size)).copy_from(&scaled);
                }
            }
            let mut out = Vec::with_capacity(net.n_nodes());
            for sigma in 0..net.n_nodes() {
                let exact = build_realization(structure, net, sigma, h, tau)?;
                let mut r_a = exact.a.clone();
                let mut r_b = exact.b.clone();
                for l in 0..3 {
                    r_a -= &model.a_vertices[sigma][tri[l]] * alpha[l];
                    r_b -= &model.e_vertices[sigma][tri[l]] * alpha[l];
                }
                let fit_a = &env.b_bar * &delta * &env.c_bar[sigma];
                let fit_b = &env.b_bar * &delta * &env.f_bar[sigma];
                let resid = (&r_a - fit_a).norm().max((&r_b - fit_b).norm());
                let r_norm = r_a.norm().max(r_b.norm());
                let ok = resid <= 1e-8 * (1.0 + r_norm) && block_norm <= 1.0 + 1e-9;
                out.push((sigma, h, tau, ok, resid, block_norm));
            }
            Ok(out)
        })
        .collect();
    let mut report = ContainmentReport {
        samples: points.len(),
        checks: 0,
        violations: Vec::new(),
        max_residual: 0.0,
        max_block_norm: 0.0,
    };
    for r in results {
        for (sigma, h, tau, ok, resid, bn) in r? {
            report.checks += 1;
            report.max_residual = report.max_residual.max(resid);
            report.max_block_norm = report.max_block_norm.max(bn);
            if !ok {
                report.violations.push((sigma, h, tau));
            }
        }
    }
    Ok(report)
}
