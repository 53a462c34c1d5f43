//! The unstable batch-reactor loop with two sensor nodes, a standard test
//! case for networked control.

use crate::linalg::Matrix;
use crate::model::{
    LinearController, LinearPlant, NetworkConfig, NodeQuantizer, NodeSelector, Protocol, QuantizerConfig,
    TimingDistribution, TimingRegion,
};

pub fn plant() -> LinearPlant {
    LinearPlant::new(
        Matrix::from_row_slice(
            4,
            4,
            &[
                1.380, -0.208, 6.715, -5.676, //
                -0.581, 4.290, 0.0, 0.675, //
                1.067, 4.273, -6.654, 5.893, //
                0.048, 4.273, 1.343, -2.104,
            ],
        ),
        Matrix::from_row_slice(4, 2, &[0.0, 0.0, 5.679, 0.0, 1.136, -3.146, 1.136, 0.0]),
        Matrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, -1.0, 0.0, 1.0, 0.0, 0.0]),
    )
    .expect("benchmark plant dimensions")
}

pub fn controller() -> LinearController {
    LinearController::new(
        Matrix::zeros(2, 2),
        Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        Matrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 8.0]),
        Matrix::from_row_slice(2, 2, &[0.0, -2.0, 5.0, 0.0]),
    )
    .expect("benchmark controller dimensions")
}

/// Two nodes, one per measured output; the control input is sent directly
/// and so belongs to both.
pub fn network(timing: TimingRegion, alpha_bar: f64, beta_bar: f64, protocol: Protocol) -> NetworkConfig {
    NetworkConfig {
        nodes: vec![
            NodeSelector { outputs: vec![true, false], inputs: vec![true, true] },
            NodeSelector { outputs: vec![false, true], inputs: vec![true, true] },
        ],
        timing,
        distribution: TimingDistribution::Uniform,
        alpha_bar,
        beta_bar,
        protocol,
    }
}

/// `h ∈ [10⁻³, 0.1]`, `τ ∈ [10⁻³, 0.05]`.
pub fn wide_region() -> TimingRegion {
    TimingRegion { h_min: 1e-3, h_mati: 0.1, tau_min: 1e-3, tau_mad: 0.05, inflation: 0.0 }
}

/// `h ∈ [10⁻³, 5·10⁻³]`, `τ ∈ [0, 10⁻³]`.
pub fn small_region() -> TimingRegion {
    TimingRegion { h_min: 1e-3, h_mati: 5e-3, tau_min: 0.0, tau_mad: 1e-3, inflation: 0.0 }
}

pub fn quantizer() -> QuantizerConfig {
    let node = NodeQuantizer { range: 20.0, error_bound: 0.8, dead_zone: 0.2, zoom: 0.6, mu0: 1.0 };
    QuantizerConfig { nodes: vec![node, node] }
}
