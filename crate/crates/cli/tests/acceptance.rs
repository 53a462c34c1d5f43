//! End-to-end acceptance checks, one line per criterion.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nqcs_cli::config::{parse, validate, Workbench};
use nqcs_cli::pipeline::{analyze, simulate_and_check, trend_agreement, SweepRow};
use nqcs_core::benchmark as bench;
use nqcs_core::linalg::{expm, expm_integral, real_block_decompose, Matrix};
use nqcs_core::lmi::LmiCertificate;
use nqcs_core::model::{LoopStructure, Protocol};
use nqcs_core::overapprox::{build_polytopic_model, verify_containment, ErrorSearch};
use nqcs_core::sdp::{solve_feasibility, verify, AffineConstraint, AffineConstraintSystem, Sense, SolveOptions, SolveStatus};

const BENCHMARK: &str = include_str!("../../../configs/benchmark.toml");

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn benchmark() -> Workbench {
    validate(parse(BENCHMARK).expect("benchmark parses")).expect("benchmark validates")
}

// ---------------------------------------------------------------- oracles

/// Scaled Taylor series with repeated squaring.
fn taylor_expm(a: &Matrix, t: f64) -> Matrix {
    let n = a.nrows();
    let at = a * t;
    let norm = at.norm();
    let s = if norm > 0.25 { (norm / 0.25).log2().ceil() as i32 } else { 0 };
    let x = at / 2f64.powi(s);
    let mut term = Matrix::identity(n, n);
    let mut sum = Matrix::identity(n, n);
    for k in 1..=30 {
        term = &term * &x / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Composite five-point Gauss-Legendre quadrature of `e^{As}` on `[0, ρ]`.
fn quadrature_integral(a: &Matrix, rho: f64) -> Matrix {
    const X: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let panels = 64;
    let width = rho / panels as f64;
    let mut acc = Matrix::zeros(a.nrows(), a.nrows());
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * width;
        for (x, w) in X.iter().zip(W) {
            acc += taylor_expm(a, mid + 0.5 * width * x) * (0.5 * width * w);
        }
    }
    acc
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm()
}

fn random_stable(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let m = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let shift = m.norm() + 0.1;
    m - Matrix::identity(n, n) * shift
}

// ---------------------------------------------------------------- criteria

fn kernel_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut cases: Vec<(Matrix, f64)> = (0..100).map(|i| (random_stable(1 + i % 8, &mut rng), rng.gen_range(0.01..1.0))).collect();
    for t in [1e-3, 1e-2, 0.1, 1.0] {
        cases.push((bench::plant().a, t));
    }
    for (a, t) in &cases {
        worst = worst.max(rel(&expm(a, *t).map_err(|e| e.to_string())?, &taylor_expm(a, *t)));
        worst = worst.max(rel(&expm_integral(a, *t).map_err(|e| e.to_string())?, &quadrature_integral(a, *t)));
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-9 && secs < 5.0, format!("{} cases, worst relative error {worst:.2e}, {secs:.2} s", cases.len()))
}

fn containment() -> Outcome {
    let start = Instant::now();
    let s = LoopStructure::new(&bench::plant(), &bench::controller()).unwrap();
    let d = real_block_decompose(&s.lambda).map_err(|e| e.to_string())?;
    let net = bench::network(bench::wide_region(), 0.8, 1.0, Protocol::Tod);
    let model = build_polytopic_model(&s, &d, &net, 4, 4, &ErrorSearch::default()).map_err(|e| e.to_string())?;
    let rep = verify_containment(&model, &d, &s, &net, 500, 17).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        rep.passed() && rep.max_block_norm <= 1.0 + 1e-9 && rep.max_residual <= 1e-8 && secs < 60.0,
        format!(
            "{} checks, {} violations, max block norm {:.9}, max residual {:.2e}, {secs:.1} s",
            rep.checks,
            rep.violations.len(),
            rep.max_block_norm,
            rep.max_residual
        ),
    )
}

fn tightness() -> Outcome {
    let s = LoopStructure::new(&bench::plant(), &bench::controller()).unwrap();
    let d = real_block_decompose(&s.lambda).map_err(|e| e.to_string())?;
    let net = bench::network(bench::wide_region(), 0.8, 1.0, Protocol::Tod);
    let mut seq = Vec::new();
    for n in [1, 2, 4, 8] {
        seq.push(build_polytopic_model(&s, &d, &net, n, n, &ErrorSearch::default()).map_err(|e| e.to_string())?.varpi);
    }
    let threshold = seq[1];
    let monotone = seq.windows(2).all(|w| w[1] <= w[0]);
    let text: Vec<String> = seq.iter().map(|v| format!("{v:.3e}")).collect();
    check(monotone && seq[3] <= threshold, format!("varpi at 1,2,4,8 = [{}], threshold {threshold:.3e}", text.join(", ")))
}

fn lyapunov_system(a: &Matrix) -> AffineConstraintSystem {
    let n = a.nrows();
    let mut s = AffineConstraintSystem::new(0, vec![n]);
    s.push(AffineConstraint::new("lyap", Sense::NegSemidef, Matrix::zeros(n, n)).matrix(0, Matrix::identity(n, n), a.clone()));
    s.push(
        AffineConstraint::new("pos", Sense::PosSemidef, -Matrix::identity(n, n))
            .matrix(0, Matrix::identity(n, n) * 0.5, Matrix::identity(n, n)),
    );
    s
}

fn solver_soundness() -> Outcome {
    let opts = SolveOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut slowest: f64 = 0.0;
    for i in 0..10 {
        let a = random_stable(1 + i % 6, &mut rng);
        let sys = lyapunov_system(&a);
        let t = Instant::now();
        let out = solve_feasibility(&sys, &opts).map_err(|e| e.to_string())?;
        slowest = slowest.max(t.elapsed().as_secs_f64());
        let v = verify(&sys, &out.x, opts.requested_margin, opts.relative_margin);
        if out.status != SolveStatus::FeasibleWithMargin || !v.all_satisfied {
            return Err(format!("fixture {i}: {:?}, verification {}", out.status, v.all_satisfied));
        }
    }
    let mut contra = AffineConstraintSystem::new(1, vec![]);
    contra.push(AffineConstraint::new("ge", Sense::PosSemidef, Matrix::from_element(1, 1, -1.0)).scalar(0, Matrix::from_element(1, 1, 1.0)));
    contra.push(AffineConstraint::new("le", Sense::NegSemidef, Matrix::from_element(1, 1, 1.0)).scalar(0, Matrix::from_element(1, 1, 1.0)));
    let out = solve_feasibility(&contra, &opts).map_err(|e| e.to_string())?;
    check(
        slowest < 1.0 && out.status == SolveStatus::NotFoundWithinBudget,
        format!("10 Lyapunov fixtures verified, slowest {slowest:.3} s; contradictory fixture {:?}", out.status),
    )
}

fn certificate(wb: &Workbench) -> Result<(LmiCertificate, String), String> {
    let start = Instant::now();
    let a = analyze(wb, &wb.network, &wb.config.lmi, true).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    // a certificate must never come with a failed verification pass
    if a.outcome.status == SolveStatus::FeasibleWithMargin && !a.verification.all_satisfied {
        return Err("feasible outcome failed verification".into());
    }
    let detail = format!(
        "{:?}, worst eigenvalue {:.3e}, containment violations {}, {secs:.1} s",
        a.outcome.status,
        a.verification.worst_margin,
        a.containment.as_ref().map_or(0, |c| c.violations.len())
    );
    match a.certificate {
        Some(c) if secs < 600.0 => Ok((c, detail)),
        Some(_) => Err(format!("too slow: {detail}")),
        None => Err(format!("no certificate ({}): {detail}", a.rejection.unwrap_or_default())),
    }
}

fn stochastic(wb: &Workbench, cert: &LmiCertificate) -> Outcome {
    let mut wb = wb.clone();
    wb.config.simulation.runs = 200;
    wb.config.simulation.horizon = 500;
    wb.config.simulation.replay = true;
    let c = simulate_and_check(&wb, &wb.network, cert, wb.config.simulation.seed_base).map_err(|e| e.to_string())?;
    let replay = c.stats.max_replay_residual.unwrap_or(f64::INFINITY);
    let hinf = c.hinf.as_ref().map(|h| (h.passed, h.ratio)).map_err(|e| e.clone())?;
    let [a, b] = c.dropout;
    check(
        c.emsiss.passed() && hinf.0 && c.dropout_ok() && replay <= 1e-9,
        format!(
            "emsiss min margin {:.3e}, hinf ratio {:.3e} ({}), alpha {:.4}, beta {:.4}, replay {replay:.1e}",
            c.emsiss.min_margin,
            hinf.1,
            if hinf.0 { "holds" } else { "broken" },
            a.0,
            b.0
        ),
    )
}

fn nqcs(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_nqcs")).args(args).output().map_err(|e| e.to_string())?;
    match o.status.code() {
        Some(0) => Ok(()),
        code => Err(format!("nqcs {args:?} exited with {code:?}: {}", String::from_utf8_lossy(&o.stderr))),
    }
}

fn read_sweep(path: &Path) -> Result<Vec<SweepRow>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| format!("{}: {e}", &rec[i]));
        rows.push(SweepRow {
            gamma2: num(0)?,
            h_mad: num(1)?,
            h_mati_max: if rec[2].is_empty() { None } else { Some(num(2)?) },
            feasible: &rec[3] == "1",
            margin: num(4)?,
            runtime_s: 0.0,
        });
    }
    Ok(rows)
}

fn trends(dir: &Path) -> Outcome {
    let out = dir.join("sweep");
    let start = Instant::now();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/benchmark.toml");
    nqcs(&["sweep", "--config", cfg, "--out", out.to_str().unwrap()])?;
    let secs = start.elapsed().as_secs_f64();
    let rows = read_sweep(&out.join("sweep.csv"))?;
    let (good, total) = trend_agreement(&rows);
    let share = good as f64 / total.max(1) as f64;
    let curve = |g: f64| -> String {
        rows.iter()
            .filter(|r| r.gamma2 == g)
            .map(|r| r.h_mati_max.map_or("-".into(), |h| format!("{h:.2e}")))
            .collect::<Vec<_>>()
            .join(" ")
    };
    check(
        rows.len() == 25 && share >= 0.9 && secs < 7200.0,
        format!(
            "{good}/{total} comparisons follow the trends, ideal curve [{}], {:.0} s",
            curve(f64::INFINITY),
            secs
        ),
    )
}

fn determinism(dir: &Path) -> Outcome {
    let small = BENCHMARK
        .replace("gamma2 = [500.0, 1000.0, 3000.0, 10000.0, inf]", "gamma2 = [1000.0, inf]")
        .replace("h_mad = [1e-3, 5e-3, 1e-2, 2e-2, 5e-2]", "h_mad = [1e-3, 1e-2]")
        .replace("runs = 200", "runs = 40");
    let cfg = dir.join("small.toml");
    std::fs::write(&cfg, small).map_err(|e| e.to_string())?;
    let cfg = cfg.to_str().unwrap();
    let mut files = Vec::new();
    for (run, workers) in [("one", "1"), ("two", "2")] {
        let out = dir.join(run);
        let out = out.to_str().unwrap();
        nqcs(&["sweep", "--config", cfg, "--out", out, "--workers", workers])?;
        nqcs(&["simulate", "--config", cfg, "--out", out, "--workers", workers, "--seed", "9"])?;
        let read = |f: &str| std::fs::read(Path::new(out).join(f)).map_err(|e| e.to_string());
        files.push([read("sweep.csv")?, read("trace.csv")?, read("ensemble.csv")?]);
    }
    let same = files[0] == files[1];
    check(same, format!("sweep.csv, trace.csv, ensemble.csv {} across runs with 1 and 2 workers", if same { "identical" } else { "differ" }))
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let wb = benchmark();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, r: Outcome, elapsed: Duration| {
        let (tag, detail) = match r {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} [{name}]: {tag} ({detail}) [{:.1} s]", elapsed.as_secs_f64());
    };
    let timed = |f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        (r, t.elapsed())
    };

    let (r, t) = timed(&kernel_oracles);
    report(1, "kernel oracles", r, t);
    let (r, t) = timed(&containment);
    report(2, "containment", r, t);
    let (r, t) = timed(&tightness);
    report(3, "procedure tightness", r, t);
    let (r, t) = timed(&solver_soundness);
    report(4, "solver soundness", r, t);

    let t0 = Instant::now();
    let cert = certificate(&wb);
    let elapsed = t0.elapsed();
    match &cert {
        Ok((_, d)) => report(5, "end-to-end certificate", Ok(d.clone()), elapsed),
        Err(e) => report(5, "end-to-end certificate", Err(e.clone()), elapsed),
    }
    let (r, t) = timed(&|| trends(dir.path()));
    report(6, "tradeoff trends", r, t);
    let (r, t) = match &cert {
        Ok((c, _)) => timed(&|| stochastic(&wb, c)),
        Err(_) => (Err("no certificate from criterion 5".into()), Duration::ZERO),
    };
    report(7, "stochastic validation", r, t);
    let (r, t) = timed(&|| determinism(dir.path()));
    report(8, "determinism", r, t);

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
