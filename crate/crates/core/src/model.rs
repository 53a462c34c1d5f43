//! Plant, controller and network description, and the exact sampled-data
//! closed loop at a given (node, interval, delay).

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{block_diag, expm_and_integral, expm_integral, forward_substitute_unit_lower, Matrix, Vector};

/// Continuous-time plant `ẋ_p = A_p x_p + B_p û`, `y = C_p x_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPlant {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl LinearPlant {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(dim_err("plant A", "square", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(dim_err("plant B rows", n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(dim_err("plant C cols", n, c.ncols()));
        }
        Ok(Self { a, b, c })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// Continuous-time controller `ẋ_c = A_c x_c + B_c ŷ`, `u = C_c x_c + D_c ŷ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearController {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
}

impl LinearController {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(dim_err("controller A", "square", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(dim_err("controller B rows", n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(dim_err("controller C cols", n, c.ncols()));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(dim_err(
                "controller D",
                format!("{}x{}", c.nrows(), b.ncols()),
                format!("{}x{}", d.nrows(), d.ncols()),
            ));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
}

/// Components of `y` and `u` a node transmits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSelector {
    pub outputs: Vec<bool>,
    pub inputs: Vec<bool>,
}

impl NodeSelector {
    /// Diagonal of `Γ(σ) = diag(Γ_y(σ), Γ_u(σ))` as 0/1 reals.
    pub fn diagonal(&self) -> Vector {
        Vector::from_iterator(
            self.outputs.len() + self.inputs.len(),
            self.outputs.iter().chain(&self.inputs).map(|&s| if s { 1.0 } else { 0.0 }),
        )
    }

    pub fn matrix(&self) -> Matrix {
        Matrix::from_diagonal(&self.diagonal())
    }
}

/// Interval/delay region `{(h, τ) : ε ≤ h ≤ h_mati, τ_min ≤ τ ≤ min(τ_mad, h)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingRegion {
    pub h_min: f64,
    pub h_mati: f64,
    #[serde(default)]
    pub tau_min: f64,
    pub tau_mad: f64,
    /// Radius of the neighbourhood in which partition vertices may lie.
    #[serde(default)]
    pub inflation: f64,
}

impl TimingRegion {
    pub fn validate(&self) -> Result<()> {
        let all = [self.h_min, self.h_mati, self.tau_min, self.tau_mad, self.inflation];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("timing region: non-finite bound".into()));
        }
        if !(self.h_min > 0.0) || self.h_min > self.h_mati {
            return Err(Error::Config(format!(
                "timing region: need 0 < h_min <= h_mati, got h_min = {}, h_mati = {}",
                self.h_min, self.h_mati
            )));
        }
        if !(self.tau_min >= 0.0) || self.tau_min > self.tau_mad {
            return Err(Error::Config(format!(
                "timing region: need 0 <= tau_min <= tau_mad, got {} and {}",
                self.tau_min, self.tau_mad
            )));
        }
        if self.tau_mad > self.h_mati {
            return Err(Error::Config(format!(
                "timing region: tau_mad = {} exceeds h_mati = {}",
                self.tau_mad, self.h_mati
            )));
        }
        if self.tau_min > self.h_min {
            // the region would be empty below h = tau_min; still fine as long
            // as some h in range admits a delay
            if self.tau_min > self.h_mati {
                return Err(Error::Config("timing region is empty".into()));
            }
        }
        if self.inflation < 0.0 {
            return Err(Error::Config("timing region: negative inflation".into()));
        }
        Ok(())
    }

    pub fn contains(&self, h: f64, tau: f64) -> bool {
        h >= self.h_min && h <= self.h_mati && tau >= self.tau_min && tau <= self.tau_mad && tau <= h
    }
}

/// Joint density of `(h, τ)` on the timing region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimingDistribution {
    /// Constant density on the region, normalized to total mass one.
    Uniform,
    /// Piecewise-constant density on a rectangular grid; `density` is
    /// indexed `[tau_cell][h_cell]`. Mass outside `τ ≤ h` is discarded and
    /// the rest renormalized.
    Tabulated {
        h_edges: Vec<f64>,
        tau_edges: Vec<f64>,
        density: Vec<Vec<f64>>,
    },
}

impl TimingDistribution {
    pub fn validate(&self) -> Result<()> {
        if let TimingDistribution::Tabulated { h_edges, tau_edges, density } = self {
            let increasing = |e: &[f64]| e.len() >= 2 && e.windows(2).all(|w| w[1] > w[0]) && e.iter().all(|v| v.is_finite());
            if !increasing(h_edges) || !increasing(tau_edges) {
                return Err(Error::Config("tabulated density: edges must be strictly increasing with at least 2 entries".into()));
            }
            if density.len() != tau_edges.len() - 1 || density.iter().any(|r| r.len() != h_edges.len() - 1) {
                return Err(Error::Config(format!(
                    "tabulated density: expected {}x{} cells",
                    tau_edges.len() - 1,
                    h_edges.len() - 1
                )));
            }
            if density.iter().flatten().any(|&d| !(d >= 0.0) || !d.is_finite()) {
                return Err(Error::Config("tabulated density: cells must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Node scheduling rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    /// Node maximizing `[x̄; ε̄]ᵀ Q_i [x̄; ε̄]`.
    Quadratic { q: Vec<Matrix> },
    /// Try-once-discard: node with the largest `‖(e − ε̄)_i‖²`.
    Tod,
    /// Fixed cyclic sequence of 0-based node indices.
    Periodic { sequence: Vec<usize> },
    RoundRobin,
}

impl Protocol {
    pub fn is_periodic(&self) -> bool {
        matches!(self, Protocol::Periodic { .. } | Protocol::RoundRobin)
    }

    /// The cyclic node sequence of a periodic protocol.
    pub fn sequence(&self, nodes: usize) -> Option<Vec<usize>> {
        match self {
            Protocol::Periodic { sequence } => Some(sequence.clone()),
            Protocol::RoundRobin => Some((0..nodes).collect()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub nodes: Vec<NodeSelector>,
    pub timing: TimingRegion,
    pub distribution: TimingDistribution,
    pub alpha_bar: f64,
    pub beta_bar: f64,
    pub protocol: Protocol,
}

impl NetworkConfig {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Checks the configuration against plant dimensions `(n_y, n_u)`.
    ///
    /// Every component must be sent by at least one node. A component sent
    /// by several nodes must be sent by all of them; it then behaves as a
    /// channel refreshed at every transmission and is not quantized.
    pub fn validate(&self, n_y: usize, n_u: usize) -> Result<()> {
        let l = self.nodes.len();
        if l == 0 {
            return Err(Error::Config("network: at least one node is required".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.outputs.len() != n_y || node.inputs.len() != n_u {
                return Err(Error::Config(format!(
                    "network: node {} selector has {}+{} entries, expected {}+{}",
                    i + 1,
                    node.outputs.len(),
                    node.inputs.len(),
                    n_y,
                    n_u
                )));
            }
        }
        for c in 0..n_y + n_u {
            let count = self.nodes.iter().filter(|n| n.diagonal()[c] == 1.0).count();
            if count == 0 {
                return Err(Error::Config(format!("network: component {} is sent by no node", c + 1)));
            }
            if count > 1 && count < l {
                return Err(Error::Config(format!(
                    "network: component {} is shared by {count} of {l} nodes; shared components must belong to every node",
                    c + 1
                )));
            }
        }
        for (name, p) in [("alpha_bar", self.alpha_bar), ("beta_bar", self.beta_bar)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("network: {name} = {p} must lie in (0, 1]")));
            }
        }
        self.timing.validate()?;
        self.distribution.validate()?;
        match &self.protocol {
            Protocol::Quadratic { q } => {
                if q.len() != l {
                    return Err(Error::Config(format!("protocol: {} Q matrices for {l} nodes", q.len())));
                }
            }
            Protocol::Periodic { sequence } => {
                if sequence.is_empty() || sequence.iter().any(|&s| s >= l) {
                    return Err(Error::Config("protocol: periodic sequence must be nonempty with indices below the node count".into()));
                }
                for node in 0..l {
                    if !sequence.contains(&node) {
                        return Err(Error::Config(format!("protocol: periodic sequence never visits node {}", node + 1)));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// For every component, the node owning it exclusively (`None` for
    /// components shared by all nodes).
    pub fn owners(&self) -> Vec<Option<usize>> {
        let nz = self.nodes[0].outputs.len() + self.nodes[0].inputs.len();
        (0..nz)
            .map(|c| {
                let holders: Vec<usize> = (0..self.nodes.len()).filter(|&i| self.nodes[i].diagonal()[c] == 1.0).collect();
                if holders.len() == 1 {
                    Some(holders[0])
                } else {
                    None
                }
            })
            .collect()
    }

    /// Mean of the reception indicators per component of `z = (y, u)`.
    pub fn reception_mean(&self, n_y: usize, n_u: usize) -> Vector {
        Vector::from_iterator(
            n_y + n_u,
            std::iter::repeat(self.alpha_bar).take(n_y).chain(std::iter::repeat(self.beta_bar).take(n_u)),
        )
    }

    /// Variance of the reception indicators per component.
    pub fn reception_variance(&self, n_y: usize, n_u: usize) -> Vector {
        self.reception_mean(n_y, n_u).map(|p| p * (1.0 - p))
    }
}

/// Per-node quantizer constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeQuantizer {
    /// Range `M_j`.
    pub range: f64,
    /// Error bound `Λ_j`.
    pub error_bound: f64,
    /// Dead-zone radius `Λ₀_j`.
    pub dead_zone: f64,
    /// Zoom factor `Ω_j`; 1 freezes the zoom.
    pub zoom: f64,
    /// Initial parameter `μ_j(0)`.
    pub mu0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerConfig {
    pub nodes: Vec<NodeQuantizer>,
}

impl QuantizerConfig {
    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        if self.nodes.len() != n_nodes {
            return Err(Error::Config(format!("quantizer: {} entries for {n_nodes} nodes", self.nodes.len())));
        }
        for (j, q) in self.nodes.iter().enumerate() {
            let j = j + 1;
            if !(q.error_bound > 0.0 && q.range > q.error_bound && q.range.is_finite()) {
                return Err(Error::Config(format!("quantizer {j}: need M > Λ > 0")));
            }
            if !(q.dead_zone > 0.0 && q.dead_zone <= q.error_bound) {
                return Err(Error::Config(format!("quantizer {j}: need 0 < Λ₀ <= Λ")));
            }
            if !(q.zoom > 0.0 && q.zoom <= 1.0) {
                return Err(Error::Config(format!("quantizer {j}: zoom factor must lie in (0, 1]")));
            }
            if !(q.mu0 > 0.0 && q.mu0.is_finite()) {
                return Err(Error::Config(format!("quantizer {j}: μ(0) must be positive")));
            }
        }
        Ok(())
    }

    pub fn initial_mu(&self) -> Vec<f64> {
        self.nodes.iter().map(|q| q.mu0).collect()
    }
}

/// Result of quantizing one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub value: Vector,
    pub error: Vector,
    /// Nodes whose input exceeded `M_j μ_j`.
    pub saturated: Vec<usize>,
}

/// Scaled mid-rise lattice quantizer `μ q(z/μ)` with dead zone.
///
/// `owners[c]` names the node quantizing component `c`; components with no
/// owner pass through unquantized. Saturation is reported, not clipped.
pub fn quantize(q: &QuantizerConfig, mu: &[f64], owners: &[Option<usize>], z: &Vector) -> Result<Quantized> {
    if owners.len() != z.len() {
        return Err(dim_err("quantize", owners.len(), z.len()));
    }
    if mu.len() != q.nodes.len() {
        return Err(dim_err("quantize mu", q.nodes.len(), mu.len()));
    }
    if mu.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::Domain("quantize: μ must be positive".into()));
    }
    let mut value = z.clone();
    let mut saturated = Vec::new();
    for (j, node) in q.nodes.iter().enumerate() {
        let comps: Vec<usize> = (0..z.len()).filter(|&c| owners[c] == Some(j)).collect();
        if comps.is_empty() {
            continue;
        }
        let scaled: Vec<f64> = comps.iter().map(|&c| z[c] / mu[j]).collect();
        let norm = scaled.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > node.range {
            saturated.push(j);
        }
        let out: Vec<f64> = if norm <= node.dead_zone {
            vec![0.0; comps.len()]
        } else {
            let step = 2.0 * node.error_bound / (comps.len() as f64).sqrt();
            scaled.iter().map(|v| step * ((v / step).floor() + 0.5)).collect()
        };
        // far outside the range z/μ overflows; the sample then goes out
        // unquantized and stays flagged
        if !norm.is_finite() {
            continue;
        }
        for (&c, o) in comps.iter().zip(out) {
            value[c] = mu[j] * o;
        }
    }
    let error = &value - z;
    Ok(Quantized { value, error, saturated })
}

/// Hold update at a reception instant: components selected by `σ` and
/// actually received are overwritten, the rest are held.
pub fn update_received(
    held: &Vector,
    fresh: &Vector,
    selector: &NodeSelector,
    alpha: bool,
    beta: bool,
) -> Result<Vector> {
    let n_y = selector.outputs.len();
    if held.len() != n_y + selector.inputs.len() || fresh.len() != held.len() {
        return Err(dim_err("update_received", n_y + selector.inputs.len(), fresh.len()));
    }
    let mut out = held.clone();
    for c in 0..held.len() {
        let (sel, ok) = if c < n_y {
            (selector.outputs[c], alpha)
        } else {
            (selector.inputs[c - n_y], beta)
        };
        if sel && ok {
            out[c] = fresh[c];
        }
    }
    Ok(out)
}

/// Zoom law: every `μ_j` shrinks by `Ω_j` when both packets get through,
/// never below the smallest normal number.
pub fn update_zoom(mu: &[f64], alpha: bool, beta: bool, q: &QuantizerConfig) -> Vec<f64> {
    if alpha && beta {
        mu.iter().zip(&q.nodes).map(|(m, n)| (m * n.zoom).max(f64::MIN_POSITIVE)).collect()
    } else {
        mu.to_vec()
    }
}

/// Picks the node granted access at step `k`.
///
/// `x` is the loop state, `eps` the quantization errors of the fresh
/// samples and `e` the network-induced errors; the latter two are vectors
/// over all `n_y + n_u` components.
pub fn schedule_node(
    protocol: &Protocol,
    nodes: &[NodeSelector],
    k: u64,
    x: &Vector,
    eps: &Vector,
    e: &Vector,
) -> Result<usize> {
    let l = nodes.len();
    let argmax = |scores: &[f64]| {
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        best
    };
    match protocol {
        Protocol::RoundRobin => Ok((k % l as u64) as usize),
        Protocol::Periodic { sequence } => Ok(sequence[(k % sequence.len() as u64) as usize]),
        Protocol::Tod => {
            if eps.len() != e.len() {
                return Err(dim_err("schedule_node", e.len(), eps.len()));
            }
            let diff = e - eps;
            let scores: Vec<f64> = nodes
                .iter()
                .map(|n| n.diagonal().iter().zip(diff.iter()).map(|(s, d)| s * d * d).sum())
                .collect();
            Ok(argmax(&scores))
        }
        Protocol::Quadratic { q } => {
            let stacked = Vector::from_iterator(x.len() + eps.len(), x.iter().chain(eps.iter()).copied());
            let mut scores = Vec::with_capacity(q.len());
            for qi in q {
                if qi.nrows() != stacked.len() || qi.ncols() != stacked.len() {
                    return Err(dim_err("quadratic protocol Q", stacked.len(), qi.nrows()));
                }
                scores.push(stacked.dot(&(qi * &stacked)));
            }
            Ok(argmax(&scores))
        }
    }
}

/// Time-invariant ingredients of the sampled closed loop.
#[derive(Debug, Clone)]
pub struct LoopStructure {
    pub n_p: usize,
    pub n_c: usize,
    pub n_y: usize,
    pub n_u: usize,
    /// `Λ̄ = diag(A_p, A_c)`.
    pub lambda: Matrix,
    /// `[[0, B_p], [B_c, 0]]`.
    pub b: Matrix,
    /// `diag(C_p, C_c)`.
    pub c: Matrix,
    /// `[[I, 0], [D_c, I]]`.
    pub d: Matrix,
    pub d_inv: Matrix,
    /// Output map `H = [D C, D − I]` from `x̄` to `z = (y, u)`.
    pub h_out: Matrix,
}

impl LoopStructure {
    pub fn new(plant: &LinearPlant, controller: &LinearController) -> Result<Self> {
        let (n_p, n_c) = (plant.n_states(), controller.n_states());
        let (n_y, n_u) = (plant.n_outputs(), plant.n_inputs());
        if controller.b.ncols() != n_y {
            return Err(dim_err("controller B cols vs plant outputs", n_y, controller.b.ncols()));
        }
        if controller.c.nrows() != n_u {
            return Err(dim_err("controller C rows vs plant inputs", n_u, controller.c.nrows()));
        }
        let n_xi = n_p + n_c;
        let n_z = n_y + n_u;
        let lambda = block_diag(&[plant.a.clone(), controller.a.clone()]);
        let mut b = Matrix::zeros(n_xi, n_z);
        b.view_mut((0, n_y), (n_p, n_u)).copy_from(&plant.b);
        b.view_mut((n_p, 0), (n_c, n_y)).copy_from(&controller.b);
        let c = block_diag(&[plant.c.clone(), controller.c.clone()]);
        let mut d = Matrix::identity(n_z, n_z);
        d.view_mut((n_y, 0), (n_u, n_y)).copy_from(&controller.d);
        let d_inv = forward_substitute_unit_lower(&d, &Matrix::identity(n_z, n_z))?;
        let mut h_out = Matrix::zeros(n_z, n_xi + n_z);
        h_out.view_mut((0, 0), (n_z, n_xi)).copy_from(&(&d * &c));
        h_out
            .view_mut((0, n_xi), (n_z, n_z))
            .copy_from(&(&d - Matrix::identity(n_z, n_z)));
        Ok(Self { n_p, n_c, n_y, n_u, lambda, b, c, d, d_inv, h_out })
    }

    pub fn n_xi(&self) -> usize {
        self.n_p + self.n_c
    }
    pub fn n_z(&self) -> usize {
        self.n_y + self.n_u
    }
    pub fn n_x(&self) -> usize {
        self.n_xi() + self.n_z()
    }

    /// Exact one-step matrices for node selector diagonal `gamma` and
    /// reception diagonal `upsilon`:
    /// `x̄⁺ = 𝒜 x̄ + ℬ diag(υ) ε̄`.
    pub fn step_matrices(&self, gamma: &Vector, upsilon: &Vector, h: f64, tau: f64) -> Result<(Matrix, Matrix)> {
        let n_xi = self.n_xi();
        let n_z = self.n_z();
        if gamma.len() != n_z || upsilon.len() != n_z {
            return Err(dim_err("step_matrices", n_z, gamma.len().max(upsilon.len())));
        }
        if !(h.is_finite() && tau.is_finite()) || tau < 0.0 || tau > h {
            return Err(Error::Domain(format!("need 0 <= τ <= h, got h = {h}, τ = {tau}")));
        }
        let (a_h, e_h) = expm_and_integral(&self.lambda, h)?;
        let e_ht = if tau == 0.0 { e_h.clone() } else { expm_integral(&self.lambda, h - tau)? };
        let ug = Matrix::from_diagonal(&upsilon.component_mul(gamma));
        let g = Matrix::from_diagonal(gamma);
        let bd = &self.b * &self.d;
        let eh_bd = &e_h * &bd;
        let et_b = &e_ht * &self.b;
        let et_bug = &et_b * &ug;
        let a11 = &a_h + &eh_bd * &self.c;
        let a12 = &eh_bd - &et_bug;
        let a21 = &self.c * (Matrix::identity(n_xi, n_xi) - &a11);
        let a22 = Matrix::identity(n_z, n_z) - &self.d_inv * &ug + &self.c * (&et_bug - &eh_bd);
        let mut a = Matrix::zeros(n_xi + n_z, n_xi + n_z);
        a.view_mut((0, 0), (n_xi, n_xi)).copy_from(&a11);
        a.view_mut((0, n_xi), (n_xi, n_z)).copy_from(&a12);
        a.view_mut((n_xi, 0), (n_z, n_xi)).copy_from(&a21);
        a.view_mut((n_xi, n_xi), (n_z, n_z)).copy_from(&a22);
        let et_bg = &et_b * &g;
        let mut bm = Matrix::zeros(n_xi + n_z, n_z);
        bm.view_mut((0, 0), (n_xi, n_z)).copy_from(&et_bg);
        bm.view_mut((n_xi, 0), (n_z, n_z))
            .copy_from(&(&self.d_inv * &g - &self.c * &et_bg));
        Ok((a, bm))
    }
}

/// Exact sampled closed loop for one `(σ, h, τ)`.
///
/// With reception indicators `υ_k = ῡ + υ̃_k` and `w̄ = ε̄ − e`, the state
/// `x̄ = (x_p, x_c, e_y, e_u)` evolves as
/// `x̄⁺ = 𝒜 x̄ + ℬ diag(ῡ) ε̄ + ℬ diag(υ̃_k) w̄`.
#[derive(Debug, Clone)]
pub struct ClosedLoopRealization {
    /// `𝒜` at the mean reception rates.
    pub a: Matrix,
    /// `ℬ` (reception factor not applied).
    pub b: Matrix,
    pub h_out: Matrix,
    /// Mean reception per component, `ῡ`.
    pub upsilon_mean: Vector,
    /// Reception variance per component, `ῡ(1 − ῡ)`.
    pub upsilon_var: Vector,
    pub n_x: usize,
    pub n_z: usize,
}

pub fn build_realization(
    structure: &LoopStructure,
    net: &NetworkConfig,
    sigma: usize,
    h: f64,
    tau: f64,
) -> Result<ClosedLoopRealization> {
    let node = net.nodes.get(sigma).ok_or(Error::Index { index: sigma, len: net.nodes.len() })?;
    let mean = net.reception_mean(structure.n_y, structure.n_u);
    let (a, b) = structure.step_matrices(&node.diagonal(), &mean, h, tau)?;
    Ok(ClosedLoopRealization {
        a,
        b,
        h_out: structure.h_out.clone(),
        upsilon_var: net.reception_variance(structure.n_y, structure.n_u),
        upsilon_mean: mean,
        n_x: structure.n_x(),
        n_z: structure.n_z(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (LinearPlant, LinearController) {
        let plant = LinearPlant::new(
            Matrix::from_row_slice(1, 1, &[0.5]),
            Matrix::from_row_slice(1, 1, &[1.0]),
            Matrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        let ctrl = LinearController::new(
            Matrix::zeros(0, 0),
            Matrix::zeros(0, 1),
            Matrix::zeros(1, 0),
            Matrix::from_row_slice(1, 1, &[-2.0]),
        )
        .unwrap();
        (plant, ctrl)
    }

    fn one_node_net() -> NetworkConfig {
        NetworkConfig {
            nodes: vec![NodeSelector { outputs: vec![true], inputs: vec![true] }],
            timing: TimingRegion { h_min: 0.01, h_mati: 0.1, tau_min: 0.0, tau_mad: 0.05, inflation: 0.0 },
            distribution: TimingDistribution::Uniform,
            alpha_bar: 1.0,
            beta_bar: 1.0,
            protocol: Protocol::RoundRobin,
        }
    }

    #[test]
    fn plant_dimension_checks() {
        let err = LinearPlant::new(Matrix::zeros(2, 2), Matrix::zeros(3, 1), Matrix::zeros(1, 2));
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn realization_rejects_negative_delay_margin() {
        let (p, c) = toy();
        let s = LoopStructure::new(&p, &c).unwrap();
        let net = one_node_net();
        assert!(matches!(build_realization(&s, &net, 0, 0.01, 0.02), Err(Error::Domain(_))));
        assert!(matches!(build_realization(&s, &net, 3, 0.01, 0.0), Err(Error::Index { .. })));
    }

    #[test]
    fn d_inverse_is_exact() {
        let (p, c) = toy();
        let s = LoopStructure::new(&p, &c).unwrap();
        assert_eq!(&s.d * &s.d_inv, Matrix::identity(2, 2));
    }

    #[test]
    fn full_reception_without_delay_forgets_held_input() {
        // with τ = 0 and every component refreshed, the held input error is
        // overwritten before it can act; the held output error still enters
        // through the sampled control value
        let (p, c) = toy();
        let s = LoopStructure::new(&p, &c).unwrap();
        let r = build_realization(&s, &one_node_net(), 0, 0.05, 0.0).unwrap();
        assert!(r.a.column(2).norm() < 1e-14, "{}", r.a);
        assert!(r.a.column(1).norm() > 1e-3);
    }

    #[test]
    fn dead_zone_maps_to_zero() {
        let q = QuantizerConfig {
            nodes: vec![NodeQuantizer { range: 20.0, error_bound: 0.8, dead_zone: 0.2, zoom: 0.6, mu0: 1.0 }],
        };
        let z = Vector::from_vec(vec![0.1, 0.05]);
        let out = quantize(&q, &[1.0], &[Some(0), Some(0)], &z).unwrap();
        assert_eq!(out.value, Vector::zeros(2));
        assert!(out.saturated.is_empty());
    }

    #[test]
    fn saturation_is_flagged_not_clipped() {
        let q = QuantizerConfig {
            nodes: vec![NodeQuantizer { range: 2.0, error_bound: 0.5, dead_zone: 0.1, zoom: 0.6, mu0: 1.0 }],
        };
        let z = Vector::from_vec(vec![10.0]);
        let out = quantize(&q, &[1.0], &[Some(0)], &z).unwrap();
        assert_eq!(out.saturated, vec![0]);
        assert!(out.error.norm() <= 0.5);
    }

    #[test]
    fn unowned_components_pass_through() {
        let q = QuantizerConfig {
            nodes: vec![NodeQuantizer { range: 2.0, error_bound: 0.5, dead_zone: 0.1, zoom: 0.6, mu0: 1.0 }],
        };
        let z = Vector::from_vec(vec![0.37, 1.234]);
        let out = quantize(&q, &[1.0], &[Some(0), None], &z).unwrap();
        assert_eq!(out.value[1], 1.234);
        assert_eq!(out.error[1], 0.0);
    }

    #[test]
    fn zoom_holds_on_loss() {
        let q = QuantizerConfig {
            nodes: vec![NodeQuantizer { range: 2.0, error_bound: 0.5, dead_zone: 0.1, zoom: 0.6, mu0: 1.0 }],
        };
        assert_eq!(update_zoom(&[1.0], false, true, &q), vec![1.0]);
        assert_eq!(update_zoom(&[1.0], true, true, &q), vec![0.6]);
    }

    #[test]
    fn protocol_validation() {
        let mut net = one_node_net();
        net.protocol = Protocol::Periodic { sequence: vec![1] };
        assert!(net.validate(1, 1).is_err());
        net.protocol = Protocol::Periodic { sequence: vec![0, 0] };
        assert!(net.validate(1, 1).is_ok());
        net.alpha_bar = 0.0;
        assert!(net.validate(1, 1).is_err());
    }

    #[test]
    fn timing_region_validation() {
        let mut t = TimingRegion { h_min: 0.01, h_mati: 0.1, tau_min: 0.0, tau_mad: 0.05, inflation: 0.0 };
        assert!(t.validate().is_ok());
        t.tau_mad = 0.2;
        assert!(t.validate().is_err());
        t.tau_mad = 0.05;
        t.h_min = 0.2;
        assert!(t.validate().is_err());
    }
}
