//! Monte Carlo simulation of the sampled loop and empirical checks of the
//! certified bounds.
//!
//! The simulator works in physical variables (plant and controller states
//! plus the held values `ẑ = (ŷ, û)`) and propagates them exactly between
//! events with two exponential segments per interval. The model state
//! `x̄ = (ξ, e)` with `e = ẑ − z` is read off after each step.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{expm_and_integral, Matrix, Vector};
use crate::lmi::LmiCertificate;
use crate::model::{
    quantize, schedule_node, update_received, update_zoom, LoopStructure, NetworkConfig, QuantizerConfig,
    TimingDistribution, TimingRegion,
};

const STREAM_TIMING: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

/// Generator for draw family `stream` at step `k`: every `(seed, stream, k)`
/// addresses its own block of the ChaCha keystream.
fn step_rng(seed: u64, stream: u64, k: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos((k as u128) << 32);
    rng
}

/// Draws `(h, τ)` from the configured density restricted to the region.
pub fn sample_timing<R: Rng>(region: &TimingRegion, dist: &TimingDistribution, rng: &mut R) -> (f64, f64) {
    let uniform = |rng: &mut R, lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    for _ in 0..100_000 {
        let (h, tau) = match dist {
            TimingDistribution::Uniform => (
                uniform(rng, region.h_min, region.h_mati),
                uniform(rng, region.tau_min, region.tau_mad),
            ),
            TimingDistribution::Tabulated { h_edges, tau_edges, density } => {
                let mut cells = Vec::new();
                let mut total = 0.0;
                for (r, row) in density.iter().enumerate() {
                    for (c, &d) in row.iter().enumerate() {
                        let mass = d * (h_edges[c + 1] - h_edges[c]) * (tau_edges[r + 1] - tau_edges[r]);
                        total += mass;
                        cells.push((total, r, c));
                    }
                }
                let u = rng.gen::<f64>() * total;
                let &(_, r, c) = cells.iter().find(|&&(acc, _, _)| u < acc).unwrap_or(cells.last().expect("cells"));
                (
                    uniform(rng, h_edges[c], h_edges[c + 1]),
                    uniform(rng, tau_edges[r], tau_edges[r + 1]),
                )
            }
        };
        if region.contains(h, tau) {
            return (h, tau);
        }
    }
    // the region has (numerically) no mass; fall back to its corner
    (region.h_mati, region.tau_min.min(region.h_mati))
}

/// One transmission of a simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub h: f64,
    pub tau: f64,
    /// 0-based node index.
    pub sigma: usize,
    pub alpha: bool,
    pub beta: bool,
    pub norm2_x: f64,
    pub norm2_eps: f64,
    pub norm2_z: f64,
    pub mu: Vec<f64>,
    pub saturated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRun {
    pub seed: u64,
    pub records: Vec<StepRecord>,
    /// `x̄_k` for `k = 0..=K`.
    pub states: Vec<Vector>,
    /// `ε̄_k` for `k = 0..=K`.
    pub eps: Vec<Vector>,
}

struct Propagator<'a> {
    s: &'a LoopStructure,
}

impl Propagator<'_> {
    /// `ξ(t + ρ)` under a constant held value.
    fn flow(&self, xi: &Vector, z_hat: &Vector, rho: f64) -> Result<Vector> {
        let (a, e) = expm_and_integral(&self.s.lambda, rho)?;
        Ok(a * xi + e * (&self.s.b * z_hat))
    }

    /// Fresh samples `z = C ξ + (D − I) ẑ`.
    fn output(&self, xi: &Vector, z_hat: &Vector) -> Vector {
        let n_z = self.s.n_z();
        &self.s.c * xi + (&self.s.d - Matrix::identity(n_z, n_z)) * z_hat
    }

    fn state(&self, xi: &Vector, z_hat: &Vector) -> Vector {
        let e = z_hat - self.output(xi, z_hat);
        Vector::from_iterator(xi.len() + e.len(), xi.iter().chain(e.iter()).copied())
    }
}

/// Simulates `horizon` transmissions from `x̄₀ = (ξ₀, e₀)`.
///
/// The trace has `horizon + 1` rows; the last one records the decision
/// taken at `t_K` without propagating it.
pub fn simulate_run(
    structure: &LoopStructure,
    net: &NetworkConfig,
    quantizer: &QuantizerConfig,
    x0: &Vector,
    horizon: usize,
    seed: u64,
) -> Result<SimulationRun> {
    let n_xi = structure.n_xi();
    let n_z = structure.n_z();
    if x0.len() != n_xi + n_z {
        return Err(dim_err("initial state", n_xi + n_z, x0.len()));
    }
    net.validate(structure.n_y, structure.n_u)?;
    quantizer.validate(net.n_nodes())?;
    let prop = Propagator { s: structure };
    let owners = net.owners();
    let mut xi = x0.rows(0, n_xi).into_owned();
    // ẑ = D (C ξ + e)
    let mut z_hat = &structure.d * (&structure.c * &xi + x0.rows(n_xi, n_z));
    let mut mu = quantizer.initial_mu();
    let mut t = 0.0;
    let mut records = Vec::with_capacity(horizon + 1);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut eps_hist = Vec::with_capacity(horizon + 1);

    for k in 0..=horizon {
        let z = prop.output(&xi, &z_hat);
        let x_bar = prop.state(&xi, &z_hat);
        let e = x_bar.rows(n_xi, n_z).into_owned();
        let q = quantize(quantizer, &mu, &owners, &z)?;
        let sigma = schedule_node(&net.protocol, &net.nodes, k as u64, &x_bar, &q.error, &e)?;
        let (h, tau) = sample_timing(&net.timing, &net.distribution, &mut step_rng(seed, STREAM_TIMING, k as u64));
        let mut drop_rng = step_rng(seed, STREAM_DROPOUT, k as u64);
        let alpha = drop_rng.gen::<f64>() < net.alpha_bar;
        let beta = drop_rng.gen::<f64>() < net.beta_bar;
        records.push(StepRecord {
            k,
            t,
            h,
            tau,
            sigma,
            alpha,
            beta,
            norm2_x: x_bar.norm_squared(),
            norm2_eps: q.error.norm_squared(),
            norm2_z: z.norm_squared(),
            mu: mu.clone(),
            saturated: !q.saturated.is_empty(),
        });
        states.push(x_bar);
        eps_hist.push(q.error.clone());
        if k == horizon {
            break;
        }
        xi = prop.flow(&xi, &z_hat, tau)?;
        z_hat = update_received(&z_hat, &q.value, &net.nodes[sigma], alpha, beta)?;
        mu = update_zoom(&mu, alpha, beta, quantizer);
        xi = prop.flow(&xi, &z_hat, h - tau)?;
        t += h;
    }
    Ok(SimulationRun { seed, records, states, eps: eps_hist })
}

impl SimulationRun {
    /// Largest relative mismatch between the simulated successor and
    /// `𝒜 x̄ + ℬ diag(υ) ε̄` built from the realized step.
    pub fn replay_residual(&self, structure: &LoopStructure, net: &NetworkConfig) -> Result<f64> {
        let n_y = structure.n_y;
        let mut worst: f64 = 0.0;
        for (k, r) in self.records.iter().enumerate().take(self.records.len().saturating_sub(1)) {
            let ups = Vector::from_iterator(
                structure.n_z(),
                (0..structure.n_z()).map(|c| if (c < n_y && r.alpha) || (c >= n_y && r.beta) { 1.0 } else { 0.0 }),
            );
            let (a, b) = structure.step_matrices(&net.nodes[r.sigma].diagonal(), &ups, r.h, r.tau)?;
            let predicted = a * &self.states[k] + b * ups.component_mul(&self.eps[k]);
            let next = &self.states[k + 1];
            worst = worst.max((predicted - next).amax() / (1.0 + next.amax()));
        }
        Ok(worst)
    }

    /// Trace CSV with 17 significant digits and 1-based node numbers.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let l = self.records.first().map_or(0, |r| r.mu.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> =
            ["k", "t", "h", "tau", "sigma", "alpha", "beta", "norm2_x", "norm2_eps", "norm2_z"].iter().map(|s| s.to_string()).collect();
        header.extend((1..=l).map(|j| format!("mu_{j}")));
        header.push("saturated".into());
        w.write_record(&header)?;
        let f = |v: f64| format!("{v:.16e}");
        let b = |v: bool| if v { "1".to_string() } else { "0".to_string() };
        for r in &self.records {
            let mut row = vec![
                r.k.to_string(),
                f(r.t),
                f(r.h),
                f(r.tau),
                (r.sigma + 1).to_string(),
                b(r.alpha),
                b(r.beta),
                f(r.norm2_x),
                f(r.norm2_eps),
                f(r.norm2_z),
            ];
            row.extend(r.mu.iter().map(|&m| f(m)));
            row.push(b(r.saturated));
            w.write_record(&row)?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleOptions {
    pub runs: usize,
    pub horizon: usize,
    pub seed_base: u64,
    /// Two-sided confidence level of the reported half-widths.
    pub confidence: f64,
    /// Also compute the per-step replay residual of every run.
    pub replay: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self { runs: 200, horizon: 500, seed_base: 42, confidence: 0.99, replay: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleStatistics {
    pub runs: usize,
    pub horizon: usize,
    pub confidence: f64,
    pub x0_norm2: f64,
    /// Mean of `‖x̄_k‖²` per step.
    pub mean_square_state: Vec<f64>,
    pub state_half_width: Vec<f64>,
    pub mean_square_eps: Vec<f64>,
    pub mean_square_z: Vec<f64>,
    /// `max over runs of max_{i<k} ‖ε̄_i‖²`, zero at `k = 0`.
    pub sup_eps_before: Vec<f64>,
    /// Per-run `Σ_k ‖z̄_k‖²` and `Σ_k ‖ε̄_k‖²` over `k < K`.
    pub z_sums: Vec<f64>,
    pub eps_sums: Vec<f64>,
    pub alpha_frequency: f64,
    pub beta_frequency: f64,
    pub transmissions: usize,
    pub saturated_steps: usize,
    pub max_replay_residual: Option<f64>,
}

/// Sum in a fixed binary-tree order.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

fn z_quantile(confidence: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + confidence / 2.0)
}

/// Mean and normal-approximation half-width.
fn mean_and_half_width(v: &[f64], z: f64) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, z * (var / n).sqrt())
}

pub fn run_ensemble(
    structure: &LoopStructure,
    net: &NetworkConfig,
    quantizer: &QuantizerConfig,
    x0: &Vector,
    opts: &EnsembleOptions,
) -> Result<EnsembleStatistics> {
    if opts.runs == 0 {
        return Err(Error::Config("ensemble needs at least one run".into()));
    }
    if !(opts.confidence > 0.0 && opts.confidence < 1.0) {
        return Err(Error::Config("confidence level must lie in (0, 1)".into()));
    }
    let results: Vec<Result<(SimulationRun, Option<f64>)>> = (0..opts.runs)
        .into_par_iter()
        .map(|r| {
            let run = simulate_run(structure, net, quantizer, x0, opts.horizon, opts.seed_base.wrapping_add(r as u64))?;
            let replay = if opts.replay { Some(run.replay_residual(structure, net)?) } else { None };
            Ok((run, replay))
        })
        .collect();
    let runs: Vec<(SimulationRun, Option<f64>)> = results.into_iter().collect::<Result<_>>()?;
    let k1 = opts.horizon + 1;
    let z = z_quantile(opts.confidence);
    let column = |f: &dyn Fn(&StepRecord) -> f64, k: usize| -> Vec<f64> { runs.iter().map(|(r, _)| f(&r.records[k])).collect() };
    let mut mean_square_state = Vec::with_capacity(k1);
    let mut state_half_width = Vec::with_capacity(k1);
    let mut mean_square_eps = Vec::with_capacity(k1);
    let mut mean_square_z = Vec::with_capacity(k1);
    for k in 0..k1 {
        let (m, hw) = mean_and_half_width(&column(&|r| r.norm2_x, k), z);
        mean_square_state.push(m);
        state_half_width.push(hw);
        mean_square_eps.push(pairwise_sum(&column(&|r| r.norm2_eps, k)) / runs.len() as f64);
        mean_square_z.push(pairwise_sum(&column(&|r| r.norm2_z, k)) / runs.len() as f64);
    }
    let mut sup_eps_before = vec![0.0f64; k1];
    for k in 1..k1 {
        let worst: f64 = runs.iter().map(|(r, _)| r.records[k - 1].norm2_eps).fold(0.0, f64::max);
        sup_eps_before[k] = sup_eps_before[k - 1].max(worst);
    }
    let steps = opts.horizon;
    let per_run = |f: &dyn Fn(&StepRecord) -> f64| -> Vec<f64> {
        runs.iter().map(|(r, _)| pairwise_sum(&r.records[..steps].iter().map(f).collect::<Vec<_>>())).collect()
    };
    let z_sums = per_run(&|r| r.norm2_z);
    let eps_sums = per_run(&|r| r.norm2_eps);
    let transmissions = runs.len() * steps;
    let count = |f: &dyn Fn(&StepRecord) -> bool| -> usize {
        runs.iter().map(|(r, _)| r.records[..steps].iter().filter(|s| f(s)).count()).sum()
    };
    let denom = transmissions.max(1) as f64;
    let max_replay_residual = if opts.replay {
        Some(runs.iter().filter_map(|(_, r)| *r).fold(0.0, f64::max))
    } else {
        None
    };
    Ok(EnsembleStatistics {
        runs: runs.len(),
        horizon: opts.horizon,
        confidence: opts.confidence,
        x0_norm2: x0.norm_squared(),
        mean_square_state,
        state_half_width,
        mean_square_eps,
        mean_square_z,
        sup_eps_before,
        z_sums,
        eps_sums,
        alpha_frequency: count(&|s| s.alpha) as f64 / denom,
        beta_frequency: count(&|s| s.beta) as f64 / denom,
        transmissions,
        saturated_steps: count(&|s| s.saturated),
        max_replay_residual,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmsissReport {
    /// `bound_k − (mean_k + half-width_k)` per step.
    pub margins: Vec<f64>,
    pub violations: Vec<usize>,
    pub min_margin: f64,
}

impl EmsissReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Compares the ensemble against
/// `E‖x̄_k‖² ≤ c₁ ‖x̄₀‖² e^{−c₂ k} + γ₁ sup_{i<k} ‖ε̄_i‖²`.
pub fn check_emsiss_bound(stats: &EnsembleStatistics, cert: &LmiCertificate) -> EmsissReport {
    let margins: Vec<f64> = (0..stats.mean_square_state.len())
        .map(|k| {
            let bound = cert.c1 * stats.x0_norm2 * (-cert.c2 * k as f64).exp() + cert.gamma1 * stats.sup_eps_before[k];
            bound - (stats.mean_square_state[k] + stats.state_half_width[k])
        })
        .collect();
    let violations = margins.iter().enumerate().filter(|(_, &m)| m < 0.0).map(|(k, _)| k).collect();
    let min_margin = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    EmsissReport { margins, violations, min_margin }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HinfReport {
    pub c3: f64,
    pub mean_lhs: f64,
    pub mean_rhs: f64,
    /// `mean_lhs / mean_rhs`.
    pub ratio: f64,
    /// Lower confidence bound on `E[rhs − lhs]`.
    pub slack_lower: f64,
    /// Estimated share of `Σ E‖z̄_k‖²` beyond the horizon.
    pub tail_fraction: f64,
    pub passed: bool,
}

/// Tail share of a decaying sequence from the ratio of its last two
/// quarter-window means; infinite if it does not decay.
fn tail_fraction(series: &[f64]) -> f64 {
    let n = series.len();
    let total = pairwise_sum(series);
    if total == 0.0 {
        return 0.0;
    }
    let w = (n / 4).max(1);
    if n < 2 * w {
        return f64::INFINITY;
    }
    let last = pairwise_sum(&series[n - w..]);
    let prev = pairwise_sum(&series[n - 2 * w..n - w]);
    if last == 0.0 {
        return 0.0;
    }
    if !(prev > last) {
        return f64::INFINITY;
    }
    let r = last / prev;
    last * r / (1.0 - r) / total
}

/// Partial-sum check of `Σ E‖z̄_k‖² ≤ c₃ ‖x̄₀‖² + γ₂ Σ ‖ε̄_k‖²`, run by run,
/// at the ensemble confidence level. `c3 = None` uses `a₂`.
pub fn check_hinf_sum(stats: &EnsembleStatistics, cert: &LmiCertificate, c3: Option<f64>, max_tail: f64) -> Result<HinfReport> {
    let c3 = c3.unwrap_or(cert.a2);
    let tail = tail_fraction(&stats.mean_square_z[..stats.horizon]);
    if tail > max_tail {
        return Err(Error::HorizonTooShort { tail_fraction: tail });
    }
    let rhs: Vec<f64> = stats.eps_sums.iter().map(|s| c3 * stats.x0_norm2 + cert.gamma2 * s).collect();
    let slack: Vec<f64> = rhs.iter().zip(&stats.z_sums).map(|(r, l)| r - l).collect();
    let z = z_quantile(stats.confidence);
    let (mean_slack, hw) = mean_and_half_width(&slack, z);
    let n = stats.runs as f64;
    let mean_lhs = pairwise_sum(&stats.z_sums) / n;
    let mean_rhs = pairwise_sum(&rhs) / n;
    Ok(HinfReport {
        c3,
        mean_lhs,
        mean_rhs,
        ratio: if mean_rhs > 0.0 { mean_lhs / mean_rhs } else if mean_lhs == 0.0 { 0.0 } else { f64::INFINITY },
        slack_lower: mean_slack - hw,
        tail_fraction: tail,
        passed: mean_slack - hw >= 0.0,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UltimateBoundReport {
    /// `γ₁ Σ_j (Λ_j μ_j(0))²`.
    pub bound: f64,
    /// Mean of `E‖x̄_k‖²` over the last tenth of the horizon.
    pub tail_mean: f64,
    /// Means over ten consecutive windows covering the horizon.
    pub window_means: Vec<f64>,
    /// Windows never increase.
    pub monotone: bool,
    pub passed: bool,
}

pub fn ultimate_bound_check(stats: &EnsembleStatistics, cert: &LmiCertificate, quantizer: &QuantizerConfig) -> UltimateBoundReport {
    let eps_sup: f64 = quantizer.nodes.iter().map(|q| (q.error_bound * q.mu0).powi(2)).sum();
    let bound = cert.gamma1 * eps_sup;
    let ms = &stats.mean_square_state;
    let n = ms.len();
    let w = n.div_ceil(10).max(1);
    let window_means: Vec<f64> = ms.chunks(w).map(|c| pairwise_sum(c) / c.len() as f64).collect();
    let tail = &ms[n.saturating_sub(w)..];
    let tail_mean = pairwise_sum(tail) / tail.len() as f64;
    let monotone = window_means.windows(2).all(|p| p[1] <= p[0]);
    UltimateBoundReport { bound, tail_mean, window_means, monotone, passed: tail_mean <= bound }
}
