//! The analysis chain behind every verb.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::Serialize;

use nqcs_core::linalg::real_block_decompose;
use nqcs_core::lmi::{assemble, derive_certificate, LmiCertificate, LmiParameters, LmiProblem};
use nqcs_core::model::NetworkConfig;
use nqcs_core::overapprox::{refine_until_tight, verify_containment, ContainmentReport, PolytopicModel};
use nqcs_core::sdp::{solve_feasibility, verify, SolveOutcome, SolveStatus, Verification};
use nqcs_core::sim::{
    check_emsiss_bound, check_hinf_sum, run_ensemble, simulate_run, ultimate_bound_check, EmsissReport, EnsembleStatistics,
    HinfReport, UltimateBoundReport,
};
use nqcs_core::{Error, Result};

use crate::config::Workbench;

#[derive(Debug, Clone)]
pub struct Analysis {
    pub model: PolytopicModel,
    pub problem: LmiProblem,
    pub outcome: SolveOutcome,
    pub verification: Verification,
    pub containment: Option<ContainmentReport>,
    pub certificate: Option<LmiCertificate>,
    /// Why no certificate was issued.
    pub rejection: Option<String>,
}

/// Procedure, LMI assembly, solve and verification on one timing region.
///
/// A certificate is only issued when the eigenvalue pass accepts the point
/// and, if requested, the containment sampling finds no violation.
pub fn analyze(wb: &Workbench, net: &NetworkConfig, lmi: &LmiParameters, containment: bool) -> Result<Analysis> {
    let cfg = &wb.config;
    let decomp = real_block_decompose(&wb.structure.lambda)?;
    let model = refine_until_tight(&wb.structure, &decomp, net, &cfg.procedure)?;
    let problem = assemble(&model, net, lmi)?;
    let outcome = solve_feasibility(&problem.system, &cfg.solver)?;
    let verification = verify(&problem.system, &outcome.x, cfg.solver.requested_margin, cfg.solver.relative_margin);
    let containment = if containment {
        Some(verify_containment(&model, &decomp, &wb.structure, net, cfg.containment.samples, cfg.containment.seed)?)
    } else {
        None
    };

    let mut rejection = None;
    if outcome.status != SolveStatus::FeasibleWithMargin {
        rejection = Some(format!("solver status {:?}", outcome.status));
    } else if !verification.all_satisfied {
        rejection = Some(format!("eigenvalue verification failed (worst {:.3e})", verification.worst_margin));
    } else if let Some(c) = containment.as_ref().filter(|c| !c.passed()) {
        rejection = Some(format!("{} containment violations", c.violations.len()));
    }
    let certificate = match rejection {
        Some(_) => None,
        None => match derive_certificate(&problem, &outcome.x, -verification.worst_margin) {
            Ok(c) => Some(c),
            Err(e @ Error::CertificateInvalid(_)) => {
                rejection = Some(e.to_string());
                None
            }
            Err(e) => return Err(e),
        },
    };
    Ok(Analysis { model, problem, outcome, verification, containment, certificate, rejection })
}

impl Analysis {
    pub fn report(&self) -> String {
        let mut s = String::new();
        let o = &self.outcome;
        let p = &self.model.partition;
        s += &format!("grid: n_a = {}, n_b = {}, {} vertices\n", p.n_a, p.n_b, p.vertices.len());
        s += &format!("varpi: {:.6e}\n", self.model.varpi);
        s += &format!(
            "lmi: {} unknowns, {} constraints\n",
            self.problem.system.dim(),
            self.problem.system.constraints.len()
        );
        s += &format!("solver: {:?} after {} iterations, worst eigenvalue {:.6e}\n", o.status, o.iterations, self.verification.worst_margin);
        if let Some(b) = o.margin_bound {
            s += &format!("solver: achievable margin at most {b:.6e}\n");
        }
        if let Some(c) = &self.containment {
            s += &format!(
                "containment: {} checks, {} violations, max residual {:.3e}, max block norm {:.6}\n",
                c.checks,
                c.violations.len(),
                c.max_residual,
                c.max_block_norm
            );
        }
        match (&self.certificate, &self.rejection) {
            (Some(c), _) => {
                s += "certificate: issued\n";
                s += &format!("  a1 = {:.6e}, a2 = {:.6e}, a3 = {:.6e}, a4 = {:.6e}, a5 = {:.6e}\n", c.a1, c.a2, c.a3, c.a4, c.a5);
                s += &format!("  c1 = {:.6e}, c2 = {:.6e}, gamma1 = {:.6e}, gamma2 = {:.6e}\n", c.c1, c.c2, c.gamma1, c.gamma2);
            }
            (None, Some(r)) => s += &format!("certificate: none ({r})\n"),
            (None, None) => s += "certificate: none\n",
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma2: f64,
    pub h_mad: f64,
    pub h_mati_max: Option<f64>,
    pub feasible: bool,
    /// `−λ_max` at the reported point, or at the lower bracket end when
    /// nothing is feasible.
    pub margin: f64,
    pub runtime_s: f64,
}

pub const SWEEP_HEADER: [&str; 6] = ["gamma2", "h_mad", "h_mati_max", "feasible", "margin", "runtime_s"];

impl SweepRow {
    pub fn record(&self, timings: bool) -> Vec<String> {
        vec![
            format!("{}", self.gamma2),
            format!("{}", self.h_mad),
            self.h_mati_max.map(|h| format!("{h:.16e}")).unwrap_or_default(),
            (self.feasible as u8).to_string(),
            format!("{:.16e}", self.margin),
            if timings { format!("{:.3}", self.runtime_s) } else { String::new() },
        ]
    }
}

/// Margin of a certificate at `h_mati`, or the solver margin with `false`.
fn probe(wb: &Workbench, lmi: &LmiParameters, h_mad: f64, h_mati: f64) -> Result<(bool, f64)> {
    let net = wb.with_region(h_mati, h_mad);
    match analyze(wb, &net, lmi, false) {
        Ok(a) => Ok((a.certificate.is_some(), -a.verification.worst_margin)),
        Err(Error::TightnessNotAchieved { .. }) => Ok((false, f64::NEG_INFINITY)),
        Err(e) => Err(e),
    }
}

/// Geometric bisection on `h_mati` for one grid point.
pub fn sweep_point(wb: &Workbench, gamma2: f64, h_mad: f64) -> Result<SweepRow> {
    let start = Instant::now();
    let sw = &wb.config.sweep;
    let lmi = LmiParameters { gamma2: Some(gamma2), ..wb.config.lmi };
    let h_min = wb.network.timing.h_min;
    let mut lo = sw.h_mati_lower.unwrap_or(h_min).max(h_mad).max(h_min * (1.0 + sw.rel_tol));
    let mut hi = sw.h_mati_upper;
    let row = |h: Option<f64>, margin: f64| SweepRow {
        gamma2,
        h_mad,
        h_mati_max: h,
        feasible: h.is_some(),
        margin,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    if lo >= hi {
        return Ok(row(None, f64::NEG_INFINITY));
    }
    let (ok, mut best) = probe(wb, &lmi, h_mad, lo)?;
    if !ok {
        return Ok(row(None, best));
    }
    let (ok, m) = probe(wb, &lmi, h_mad, hi)?;
    if ok {
        return Ok(row(Some(hi), m));
    }
    while hi / lo > 1.0 + sw.rel_tol {
        let mid = (lo * hi).sqrt();
        let (ok, m) = probe(wb, &lmi, h_mad, mid)?;
        if ok {
            lo = mid;
            best = m;
        } else {
            hi = mid;
        }
    }
    Ok(row(Some(lo), best))
}

/// Grid points in output order: γ₂ outer, `h_mad` inner.
pub fn sweep_grid(wb: &Workbench) -> Vec<(f64, f64)> {
    let sw = &wb.config.sweep;
    sw.gamma2.iter().flat_map(|&g| sw.h_mad.iter().map(move |&h| (g, h))).collect()
}

/// Runs the grid on `workers` threads and hands rows to `sink` in grid
/// order as soon as every earlier row is done.
pub fn sweep<F>(wb: &Workbench, workers: usize, mut sink: F) -> Result<Vec<SweepRow>>
where
    F: FnMut(&SweepRow) -> std::io::Result<()>,
{
    let grid = sweep_grid(wb);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<SweepRow>)>();
    let mut rows: Vec<Option<SweepRow>> = vec![None; grid.len()];
    let mut first_error = None;
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(grid.len().max(1)) {
            let tx = tx.clone();
            let (next, grid) = (&next, &grid);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= grid.len() {
                    break;
                }
                let (g, h) = grid[i];
                if tx.send((i, sweep_point(wb, g, h))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut emitted = 0;
        for (i, r) in rx {
            match r {
                Ok(row) => rows[i] = Some(row),
                Err(e) => {
                    // stop handing out work, keep what is already written
                    next.store(grid.len(), Ordering::SeqCst);
                    first_error.get_or_insert(e);
                }
            }
            while emitted < rows.len() && first_error.is_none() {
                match &rows[emitted] {
                    Some(row) => {
                        if let Err(e) = sink(row) {
                            next.store(grid.len(), Ordering::SeqCst);
                            first_error = Some(Error::Config(format!("writing sweep output: {e}")));
                            break;
                        }
                        emitted += 1;
                    }
                    None => break,
                }
            }
        }
    });
    match first_error {
        Some(e) => Err(e),
        None => Ok(rows.into_iter().map(|r| r.expect("every grid point finished")).collect()),
    }
}

/// Share of adjacent grid comparisons that follow the expected trends:
/// `h_mati_max` non-increasing in `h_mad`, non-decreasing in `γ₂`, and the
/// ideal curve on top. Infeasible points count as zero.
pub fn trend_agreement(rows: &[SweepRow]) -> (usize, usize) {
    let value = |r: &SweepRow| r.h_mati_max.unwrap_or(0.0);
    let mut gammas: Vec<f64> = rows.iter().map(|r| r.gamma2).collect();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    let mut mads: Vec<f64> = rows.iter().map(|r| r.h_mad).collect();
    mads.sort_by(f64::total_cmp);
    mads.dedup();
    let at = |g: f64, h: f64| rows.iter().find(|r| r.gamma2 == g && r.h_mad == h).map(value);
    let (mut good, mut total) = (0, 0);
    let mut compare = |ok: Option<bool>| {
        if let Some(ok) = ok {
            total += 1;
            good += ok as usize;
        }
    };
    for &g in &gammas {
        for w in mads.windows(2) {
            compare(at(g, w[0]).zip(at(g, w[1])).map(|(a, b)| b <= a));
        }
    }
    for &h in &mads {
        for w in gammas.windows(2) {
            compare(at(w[0], h).zip(at(w[1], h)).map(|(a, b)| b >= a));
        }
        if let Some(&top) = gammas.last().filter(|g| g.is_infinite()) {
            for &g in gammas.iter().filter(|g| g.is_finite()).rev().skip(1) {
                compare(at(g, h).zip(at(top, h)).map(|(a, b)| b >= a));
            }
        }
    }
    (good, total)
}

#[derive(Debug, Clone)]
pub struct Checks {
    pub stats: EnsembleStatistics,
    pub emsiss: EmsissReport,
    /// `Err` when the horizon is too short to bound the tail.
    pub hinf: std::result::Result<HinfReport, String>,
    pub ultimate: UltimateBoundReport,
    /// `(observed, expected, allowed deviation)` for α and β.
    pub dropout: [(f64, f64, f64); 2],
}

pub const REPLAY_TOLERANCE: f64 = 1e-9;

impl Checks {
    pub fn dropout_ok(&self) -> bool {
        self.dropout.iter().all(|&(o, e, d)| (o - e).abs() <= d)
    }

    pub fn replay_ok(&self) -> bool {
        self.stats.max_replay_residual.map_or(true, |r| r <= REPLAY_TOLERANCE)
    }

    pub fn all_passed(&self) -> bool {
        self.emsiss.passed()
            && self.hinf.as_ref().map_or(false, |h| h.passed)
            && self.ultimate.passed
            && self.dropout_ok()
            && self.replay_ok()
    }

    pub fn verdict(&self) -> String {
        let tag = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let mut s = String::new();
        let e = &self.emsiss;
        s += &format!(
            "{} emsiss bound: {} violating steps, min margin {:.6e}\n",
            tag(e.passed()),
            e.violations.len(),
            e.min_margin
        );
        match &self.hinf {
            Ok(h) => {
                s += &format!(
                    "{} hinf partial sum: mean lhs {:.6e}, mean rhs {:.6e}, ratio {:.3e}, lower slack {:.6e}, tail {:.3e}\n",
                    tag(h.passed),
                    h.mean_lhs,
                    h.mean_rhs,
                    h.ratio,
                    h.slack_lower,
                    h.tail_fraction
                )
            }
            Err(msg) => s += &format!("FAIL hinf partial sum: inconclusive, {msg}\n"),
        }
        let u = &self.ultimate;
        s += &format!(
            "{} ultimate bound: tail mean {:.6e}, bound {:.6e}, windows {}\n",
            tag(u.passed),
            u.tail_mean,
            u.bound,
            if u.monotone { "non-increasing" } else { "not monotone" }
        );
        let [a, b] = self.dropout;
        s += &format!(
            "{} dropout frequencies: alpha {:.4} (expected {}, 3 sigma {:.4}), beta {:.4} (expected {}, 3 sigma {:.4})\n",
            tag(self.dropout_ok()),
            a.0,
            a.1,
            a.2,
            b.0,
            b.1,
            b.2
        );
        match self.stats.max_replay_residual {
            Some(r) => s += &format!("{} replay residual: {:.3e} (tolerance {:.0e})\n", tag(self.replay_ok()), r, REPLAY_TOLERANCE),
            None => s += "skip replay residual: not requested\n",
        }
        s += &format!("saturated steps: {} of {}\n", self.stats.saturated_steps, self.stats.runs * (self.stats.horizon + 1));
        s += &format!("verdict: {}\n", if self.all_passed() { "all checks passed" } else { "some checks failed" });
        s
    }

    /// Per-step statistics next to the bound they are checked against.
    pub fn write_ensemble_csv<W: Write>(&self, cert: &LmiCertificate, out: W) -> std::io::Result<()> {
        let st = &self.stats;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "k",
            "mean_norm2_x",
            "half_width",
            "emsiss_bound",
            "mean_norm2_eps",
            "mean_norm2_z",
            "sup_norm2_eps_before",
        ])?;
        let f = |v: f64| format!("{v:.16e}");
        for k in 0..st.mean_square_state.len() {
            let bound = cert.c1 * st.x0_norm2 * (-cert.c2 * k as f64).exp() + cert.gamma1 * st.sup_eps_before[k];
            w.write_record([
                k.to_string(),
                f(st.mean_square_state[k]),
                f(st.state_half_width[k]),
                f(bound),
                f(st.mean_square_eps[k]),
                f(st.mean_square_z[k]),
                f(st.sup_eps_before[k]),
            ])?;
        }
        w.flush()
    }
}

/// Ensemble and the three empirical checks against `cert`.
pub fn simulate_and_check(wb: &Workbench, net: &NetworkConfig, cert: &LmiCertificate, seed_base: u64) -> Result<Checks> {
    let s = &wb.config.simulation;
    let opts = nqcs_core::sim::EnsembleOptions { seed_base, ..wb.ensemble_options() };
    let stats = run_ensemble(&wb.structure, net, &wb.config.quantizer, &wb.x0, &opts)?;
    let emsiss = check_emsiss_bound(&stats, cert);
    let hinf = match check_hinf_sum(&stats, cert, s.c3, s.max_tail) {
        Ok(h) => Ok(h),
        Err(e @ Error::HorizonTooShort { .. }) => Err(e.to_string()),
        Err(e) => return Err(e),
    };
    let ultimate = ultimate_bound_check(&stats, cert, &wb.config.quantizer);
    let n = stats.runs as f64 * stats.horizon as f64;
    let sd = |p: f64| 3.0 * (p * (1.0 - p) / n).sqrt();
    let dropout = [
        (stats.alpha_frequency, net.alpha_bar, sd(net.alpha_bar)),
        (stats.beta_frequency, net.beta_bar, sd(net.beta_bar)),
    ];
    Ok(Checks { stats, emsiss, hinf, ultimate, dropout })
}

/// Trace of the first ensemble member.
pub fn write_trace<W: Write>(wb: &Workbench, net: &NetworkConfig, seed: u64, out: W) -> Result<()> {
    let run = simulate_run(&wb.structure, net, &wb.config.quantizer, &wb.x0, wb.config.simulation.horizon, seed)?;
    run.write_csv(out).map_err(|e| Error::Config(format!("writing trace: {e}")))
}
