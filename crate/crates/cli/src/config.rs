//! Workbench configuration: one TOML document with every matrix given as
//! `{ rows, cols, data }` in row-major order.

use serde::{Deserialize, Serialize};

use nqcs_core::linalg::{Matrix, Vector};
use nqcs_core::lmi::LmiParameters;
use nqcs_core::model::{
    LinearController, LinearPlant, LoopStructure, NetworkConfig, NodeSelector, Protocol, QuantizerConfig,
    TimingDistribution, TimingRegion,
};
use nqcs_core::overapprox::ProcedureOptions;
use nqcs_core::sdp::SolveOptions;
use nqcs_core::sim::EnsembleOptions;
use nqcs_core::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub data: Vec<f64>,
}

impl MatrixSpec {
    pub fn to_matrix(&self, name: &str) -> Result<Matrix, Error> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Config(format!(
                "{name}: {} entries for a {}x{} matrix",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("{name}: non-finite entry")));
        }
        Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), data: m.transpose().iter().copied().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub a: MatrixSpec,
    pub b: MatrixSpec,
    pub c: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub a: MatrixSpec,
    pub b: MatrixSpec,
    pub c: MatrixSpec,
    pub d: MatrixSpec,
}

/// Node numbers are 1-based in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolSpec {
    Tod,
    RoundRobin,
    Periodic { sequence: Vec<usize> },
    Quadratic { q: Vec<MatrixSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub nodes: Vec<NodeSelector>,
    pub timing: TimingRegion,
    #[serde(default = "uniform")]
    pub distribution: TimingDistribution,
    pub alpha_bar: f64,
    pub beta_bar: f64,
    pub protocol: ProtocolSpec,
}

fn uniform() -> TimingDistribution {
    TimingDistribution::Uniform
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    /// `x̄₀ = (x_p, x_c, e_y, e_u)`; defaults to ones on the plant states.
    pub x0: Option<Vec<f64>>,
    pub runs: usize,
    pub horizon: usize,
    pub seed_base: u64,
    pub confidence: f64,
    /// Initial-energy constant of the H∞ check; defaults to `a₂`.
    pub c3: Option<f64>,
    /// Largest admissible share of `Σ E‖z̄‖²` beyond the horizon.
    pub max_tail: f64,
    pub replay: bool,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        let e = EnsembleOptions::default();
        Self {
            x0: None,
            runs: e.runs,
            horizon: e.horizon,
            seed_base: e.seed_base,
            confidence: e.confidence,
            c3: None,
            max_tail: 0.01,
            replay: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Attenuation levels; `inf` is the ideal case.
    pub gamma2: Vec<f64>,
    pub h_mad: Vec<f64>,
    /// Bisection bracket for `h_mati`; the lower end defaults to `h_min`.
    pub h_mati_lower: Option<f64>,
    pub h_mati_upper: f64,
    pub rel_tol: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            gamma2: vec![5e2, 1e3, 3e3, 1e4, f64::INFINITY],
            h_mad: vec![1e-3, 5e-3, 1e-2, 2e-2, 5e-2],
            h_mati_lower: None,
            h_mati_upper: 0.2,
            rel_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContainmentSpec {
    pub samples: usize,
    pub seed: u64,
    /// Run the containment check inside `analyze`.
    pub in_analyze: bool,
}

impl Default for ContainmentSpec {
    fn default() -> Self {
        Self { samples: 500, seed: 1, in_analyze: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkbenchConfig {
    pub plant: PlantSpec,
    pub controller: ControllerSpec,
    pub network: NetworkSpec,
    pub quantizer: QuantizerConfig,
    #[serde(default)]
    pub procedure: ProcedureOptions,
    #[serde(default)]
    pub lmi: LmiParameters,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub containment: ContainmentSpec,
}

/// Validated, ready-to-use form of a configuration.
#[derive(Debug, Clone)]
pub struct Workbench {
    pub config: WorkbenchConfig,
    pub plant: LinearPlant,
    pub controller: LinearController,
    pub structure: LoopStructure,
    pub network: NetworkConfig,
    pub x0: Vector,
}

pub fn parse(text: &str) -> Result<WorkbenchConfig, Error> {
    toml::from_str(text).map_err(|e| Error::Config(format!("parse error: {e}")))
}

pub fn load(path: &std::path::Path) -> Result<Workbench, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    validate(parse(&text)?)
}

fn protocol(spec: &ProtocolSpec) -> Result<Protocol, Error> {
    Ok(match spec {
        ProtocolSpec::Tod => Protocol::Tod,
        ProtocolSpec::RoundRobin => Protocol::RoundRobin,
        ProtocolSpec::Periodic { sequence } => {
            if sequence.iter().any(|&s| s == 0) {
                return Err(Error::Config("protocol: periodic sequence uses 1-based node numbers".into()));
            }
            Protocol::Periodic { sequence: sequence.iter().map(|s| s - 1).collect() }
        }
        ProtocolSpec::Quadratic { q } => Protocol::Quadratic {
            q: q.iter().enumerate().map(|(i, m)| m.to_matrix(&format!("protocol q[{}]", i + 1))).collect::<Result<_, _>>()?,
        },
    })
}

fn positive(name: &str, v: f64) -> Result<(), Error> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} must be positive and finite")))
    }
}

pub fn validate(config: WorkbenchConfig) -> Result<Workbench, Error> {
    let p = &config.plant;
    let plant = LinearPlant::new(p.a.to_matrix("plant.a")?, p.b.to_matrix("plant.b")?, p.c.to_matrix("plant.c")?)?;
    let c = &config.controller;
    let controller = LinearController::new(
        c.a.to_matrix("controller.a")?,
        c.b.to_matrix("controller.b")?,
        c.c.to_matrix("controller.c")?,
        c.d.to_matrix("controller.d")?,
    )?;
    let structure = LoopStructure::new(&plant, &controller)?;
    let n = &config.network;
    if !(n.timing.h_min < n.timing.h_mati) {
        return Err(Error::Config(format!(
            "timing: the lower interval bound h_min = {} must be strictly below h_mati = {}",
            n.timing.h_min, n.timing.h_mati
        )));
    }
    let network = NetworkConfig {
        nodes: n.nodes.clone(),
        timing: n.timing,
        distribution: n.distribution.clone(),
        alpha_bar: n.alpha_bar,
        beta_bar: n.beta_bar,
        protocol: protocol(&n.protocol)?,
    };
    network.validate(structure.n_y, structure.n_u)?;
    if let Protocol::Quadratic { q } = &network.protocol {
        let dim = structure.n_x() + structure.n_z();
        if q.iter().any(|m| m.shape() != (dim, dim) || m != &m.transpose()) {
            return Err(Error::Config(format!("protocol: every Q must be symmetric {dim}x{dim}")));
        }
    }
    config.quantizer.validate(network.n_nodes())?;

    let pr = &config.procedure;
    if pr.n_a == 0 || pr.n_b == 0 {
        return Err(Error::Config("procedure: n_a and n_b must be at least 1".into()));
    }
    positive("procedure.varpi_star", pr.varpi_star)?;
    if !(pr.varsigma >= 0.0 && pr.varsigma < 1.0) {
        return Err(Error::Config("procedure.varsigma must lie in [0, 1)".into()));
    }
    positive("lmi.a3", config.lmi.a3)?;
    positive("lmi.a5", config.lmi.a5)?;
    if config.lmi.a3 <= 2.0 * config.lmi.a5 {
        return Err(Error::Config("lmi: need a3 > 2 a5".into()));
    }
    if let Some(g) = config.lmi.gamma2 {
        if !(g > config.lmi.a5) {
            return Err(Error::Config("lmi.gamma2 must exceed a5".into()));
        }
    }

    let s = &config.simulation;
    if s.runs == 0 || s.horizon == 0 {
        return Err(Error::Config("simulation: runs and horizon must be positive".into()));
    }
    if !(s.confidence > 0.0 && s.confidence < 1.0) {
        return Err(Error::Config("simulation.confidence must lie in (0, 1)".into()));
    }
    let x0 = match &s.x0 {
        Some(v) => {
            if v.len() != structure.n_x() {
                return Err(Error::Config(format!("simulation.x0 has {} entries, expected {}", v.len(), structure.n_x())));
            }
            Vector::from_vec(v.clone())
        }
        None => {
            let mut v = Vector::zeros(structure.n_x());
            v.rows_mut(0, structure.n_p).fill(1.0);
            v
        }
    };

    let sw = &config.sweep;
    if sw.gamma2.iter().any(|&g| !(g > config.lmi.a5)) {
        return Err(Error::Config("sweep.gamma2 values must exceed a5".into()));
    }
    for &h in &sw.h_mad {
        positive("sweep.h_mad", h)?;
        if h < network.timing.tau_min {
            return Err(Error::Config(format!("sweep.h_mad = {h} lies below tau_min = {}", network.timing.tau_min)));
        }
    }
    positive("sweep.h_mati_upper", sw.h_mati_upper)?;
    if let Some(lo) = sw.h_mati_lower {
        positive("sweep.h_mati_lower", lo)?;
        if lo >= sw.h_mati_upper {
            return Err(Error::Config("sweep: empty h_mati bracket".into()));
        }
    }
    if !(sw.rel_tol > 0.0 && sw.rel_tol < 1.0) {
        return Err(Error::Config("sweep.rel_tol must lie in (0, 1)".into()));
    }
    Ok(Workbench { config, plant, controller, structure, network, x0 })
}

impl Workbench {
    /// Same configuration on another timing region.
    pub fn with_region(&self, h_mati: f64, tau_mad: f64) -> NetworkConfig {
        let mut net = self.network.clone();
        net.timing.h_mati = h_mati;
        net.timing.tau_mad = tau_mad;
        net
    }

    pub fn ensemble_options(&self) -> EnsembleOptions {
        let s = &self.config.simulation;
        EnsembleOptions { runs: s.runs, horizon: s.horizon, seed_base: s.seed_base, confidence: s.confidence, replay: s.replay }
    }

    /// Echo of the configuration with every default filled in.
    pub fn materialized(&self) -> String {
        let mut c = self.config.clone();
        c.simulation.x0 = Some(self.x0.iter().copied().collect());
        toml::to_string(&c).expect("configuration serializes")
    }
}
