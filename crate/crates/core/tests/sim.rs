use nqcs_core::benchmark as bench;
use nqcs_core::linalg::Vector;
use nqcs_core::lmi::LmiCertificate;
use nqcs_core::model::{LoopStructure, NetworkConfig, Protocol};
use nqcs_core::sim::*;
use nqcs_core::Error;

fn setup(alpha: f64) -> (LoopStructure, NetworkConfig) {
    let s = LoopStructure::new(&bench::plant(), &bench::controller()).unwrap();
    (s, bench::network(bench::small_region(), alpha, 1.0, Protocol::Tod))
}

fn x0() -> Vector {
    let mut v = Vector::zeros(10);
    v.rows_mut(0, 4).fill(1.0);
    v
}

fn certificate(c1: f64, c2: f64, gamma1: f64, gamma2: f64) -> LmiCertificate {
    LmiCertificate {
        p: vec![],
        a3: 1e-2,
        a4: gamma2,
        a5: 0.0,
        zeta: vec![],
        multipliers: vec![],
        margin: 1.0,
        a1: 1.0,
        a2: 1.0,
        c1,
        c2,
        gamma1,
        gamma2,
    }
}

#[test]
fn runs_are_reproducible_per_seed() {
    let (s, net) = setup(0.8);
    let q = bench::quantizer();
    let a = simulate_run(&s, &net, &q, &x0(), 50, 7).unwrap();
    let b = simulate_run(&s, &net, &q, &x0(), 50, 7).unwrap();
    let c = simulate_run(&s, &net, &q, &x0(), 50, 8).unwrap();
    assert_eq!(a.records, b.records);
    assert_ne!(a.records, c.records);
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn trace_layout() {
    let (s, net) = setup(0.8);
    let run = simulate_run(&s, &net, &bench::quantizer(), &x0(), 20, 1).unwrap();
    assert_eq!(run.records.len(), 21);
    let mut out = Vec::new();
    run.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "k,t,h,tau,sigma,alpha,beta,norm2_x,norm2_eps,norm2_z,mu_1,mu_2,saturated");
    assert_eq!(lines.count(), 21);
    for r in &run.records {
        assert!(net.timing.contains(r.h, r.tau));
        assert!(r.sigma < 2);
    }
    assert!(run.records.windows(2).all(|w| (w[1].t - w[0].t - w[0].h).abs() < 1e-15));
}

#[test]
fn replay_matches_the_one_step_model() {
    let (s, net) = setup(0.6);
    let run = simulate_run(&s, &net, &bench::quantizer(), &x0(), 200, 3).unwrap();
    assert!(run.replay_residual(&s, &net).unwrap() <= 1e-9);
}

#[test]
fn dropout_frequency_tracks_the_rate() {
    let (s, net) = setup(0.5);
    let opts = EnsembleOptions { runs: 40, horizon: 200, ..Default::default() };
    let st = run_ensemble(&s, &net, &bench::quantizer(), &x0(), &opts).unwrap();
    let n = (opts.runs * opts.horizon) as f64;
    assert!((st.alpha_frequency - 0.5).abs() <= 3.0 * (0.25 / n).sqrt());
    assert_eq!(st.beta_frequency, 1.0);
    assert_eq!(st.mean_square_state.len(), opts.horizon + 1);
}

#[test]
fn ensemble_does_not_depend_on_thread_count() {
    let (s, net) = setup(0.8);
    let opts = EnsembleOptions { runs: 12, horizon: 60, replay: true, ..Default::default() };
    let q = bench::quantizer();
    let a = run_ensemble(&s, &net, &q, &x0(), &opts).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| run_ensemble(&s, &net, &q, &x0(), &opts).unwrap());
    assert_eq!(a.mean_square_state, b.mean_square_state);
    assert_eq!(a.z_sums, b.z_sums);
    assert!(a.max_replay_residual.unwrap() <= 1e-9);
}

#[test]
fn zero_state_start_meets_the_bound_at_step_zero() {
    let (s, net) = setup(0.8);
    let opts = EnsembleOptions { runs: 5, horizon: 30, ..Default::default() };
    let st = run_ensemble(&s, &net, &bench::quantizer(), &Vector::zeros(10), &opts).unwrap();
    assert_eq!(st.x0_norm2, 0.0);
    assert_eq!(st.mean_square_state[0], 0.0);
    let rep = check_emsiss_bound(&st, &certificate(1.0, 0.1, 1.0, 1.0));
    assert!(rep.margins[0] >= 0.0);
}

#[test]
fn too_small_constants_are_caught() {
    let (s, net) = setup(0.8);
    let opts = EnsembleOptions { runs: 20, horizon: 100, ..Default::default() };
    let st = run_ensemble(&s, &net, &bench::quantizer(), &x0(), &opts).unwrap();
    let rep = check_emsiss_bound(&st, &certificate(1e-3, 1.0, 0.0, 1.0));
    assert!(!rep.passed());
    assert!(rep.min_margin < 0.0);
}

#[test]
fn short_horizon_is_reported() {
    let (s, net) = setup(0.8);
    let opts = EnsembleOptions { runs: 4, horizon: 4, ..Default::default() };
    let st = run_ensemble(&s, &net, &bench::quantizer(), &x0(), &opts).unwrap();
    let r = check_hinf_sum(&st, &certificate(1.0, 1.0, 1.0, 1.0), None, 1e-6);
    assert!(matches!(r, Err(Error::HorizonTooShort { .. })));
}
