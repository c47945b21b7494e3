//! Scenario parameters.
//!
//! Every physical quantity is stored in linear units: powers in mW, data in
//! bits, CPU rates in cycles/s, bandwidth in Hz, distances in metres. The
//! defaults reproduce the reference two-WD, five-BS, two-IRS deployment.

use std::fmt;
use std::path::Path;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Cartesian position in metres.
pub type Position = [f64; 3];

/// Rician K-factor. `+inf` denotes a purely line-of-sight channel.
///
/// Serialized as a JSON number, or as the string `"inf"` for the LoS limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RicianFactor(pub f64);

impl RicianFactor {
    pub const LOS: RicianFactor = RicianFactor(f64::INFINITY);
    pub const RAYLEIGH: RicianFactor = RicianFactor(0.0);

    pub fn is_los(self) -> bool {
        self.0.is_infinite()
    }

    /// Amplitude weights `(los, nlos)` of the Rician mix.
    pub fn weights(self) -> (f64, f64) {
        if self.is_los() {
            (1.0, 0.0)
        } else {
            let b = self.0;
            ((b / (1.0 + b)).sqrt(), (1.0 / (1.0 + b)).sqrt())
        }
    }
}

impl Serialize for RicianFactor {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_los() {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for RicianFactor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct FactorVisitor;

        impl Visitor<'_> for FactorVisitor {
            type Value = RicianFactor;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<RicianFactor, E> {
                Ok(RicianFactor(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<RicianFactor, E> {
                Ok(RicianFactor(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<RicianFactor, E> {
                Ok(RicianFactor(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<RicianFactor, E> {
                match v.to_ascii_lowercase().as_str() {
                    "inf" | "infinity" | "+inf" | "los" => Ok(RicianFactor::LOS),
                    other => other
                        .parse::<f64>()
                        .map(RicianFactor)
                        .map_err(|_| E::custom(format!("bad Rician factor {v:?}"))),
                }
            }
        }

        deserializer.deserialize_any(FactorVisitor)
    }
}

/// Per-device computing task and location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WdParams {
    pub position: Position,
    /// Total task size L_k in bits.
    pub data_bits: u64,
    /// Computation complexity c_k in cycles/bit.
    pub complexity: f64,
    /// Local CPU rate f_k^l in cycles/s.
    pub local_cpu: f64,
}

/// Distance-dependent path loss `C0 (d/d0)^-kappa` with per-link exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathLossModel {
    /// Linear gain at the reference distance (1e-3 is -30 dB).
    pub c0: f64,
    pub d0: f64,
    pub exp_wd_bs: f64,
    pub exp_wd_irs: f64,
    pub exp_irs_bs: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self {
            c0: 1e-3,
            d0: 1.0,
            exp_wd_bs: 4.6,
            exp_wd_irs: 2.2,
            exp_irs_bs: 2.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RicianModel {
    pub wd_bs: RicianFactor,
    pub wd_irs: RicianFactor,
    pub irs_bs: RicianFactor,
}

impl Default for RicianModel {
    fn default() -> Self {
        Self {
            wd_bs: RicianFactor::RAYLEIGH,
            wd_irs: RicianFactor::RAYLEIGH,
            irs_bs: RicianFactor::LOS,
        }
    }
}

/// Tolerances and iteration caps for the nested optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Relative bisection tolerance of the edge-CPU allocation.
    pub eps_alloc: f64,
    /// Relative bisection tolerance of the detector and SDR steps, and the
    /// inner stopping threshold with the SDR scheme.
    pub eps_mud: f64,
    /// Inner stopping threshold with the SCA scheme.
    pub eps_sca: f64,
    /// Outer stopping threshold on the relative objective change.
    pub eps_bcd: f64,
    /// Constraint tolerance for conic subproblems.
    pub feas_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub max_bisection: usize,
    /// Number of Gaussian randomization draws.
    pub num_draws: usize,
    /// Random phase vectors screened for the starting point of a run; the
    /// one with the lowest all-MRC objective is used.
    pub init_draws: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eps_alloc: 1e-4,
            eps_mud: 1e-4,
            eps_sca: 1e-4,
            eps_bcd: 1e-3,
            feas_tol: 1e-7,
            max_outer: 30,
            max_inner: 20,
            max_bisection: 60,
            num_draws: 1000,
            init_draws: 64,
        }
    }
}

/// Complete description of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// M, antennas per BS.
    pub antennas_per_bs: usize,
    /// N, reflecting elements per IRS.
    pub elements_per_irs: usize,
    pub bandwidth_hz: f64,
    /// Common transmit power of every WD (mW).
    pub transmit_power_mw: f64,
    /// Receiver noise power sigma^2 (mW).
    pub noise_power_mw: f64,
    /// Additive inter-cell interference power (mW), identical for all WDs.
    pub ici_power_mw: f64,
    /// Total edge CPU rate shared by all WDs (cycles/s).
    pub edge_cpu_total: f64,
    pub bs_positions: Vec<Position>,
    pub irs_positions: Vec<Position>,
    pub wds: Vec<WdParams>,
    pub path_loss: PathLossModel,
    pub rician: RicianModel,
    pub solver: SolverSettings,
    pub seed: u64,
}

/// Default WD placement: both devices at x = `distance`, 5 m apart in y.
pub fn wd_positions(distance: f64) -> [Position; 2] {
    [[distance, 0.0, 1.0], [distance, 5.0, 1.0]]
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let [p1, p2] = wd_positions(60.0);
        Self {
            antennas_per_bs: 2,
            elements_per_irs: 10,
            bandwidth_hz: 1e6,
            transmit_power_mw: 1.0,
            noise_power_mw: 3.98e-12,
            ici_power_mw: 0.0,
            edge_cpu_total: 50e9,
            bs_positions: (0..5).map(|i| [40.0 * i as f64, -200.0, 3.0]).collect(),
            irs_positions: vec![[60.0, 10.0, 6.0], [100.0, 10.0, 6.0]],
            wds: vec![
                WdParams {
                    position: p1,
                    data_bits: 250_000,
                    complexity: 700.0,
                    local_cpu: 4e8,
                },
                WdParams {
                    position: p2,
                    data_bits: 350_000,
                    complexity: 800.0,
                    local_cpu: 6e8,
                },
            ],
            path_loss: PathLossModel::default(),
            rician: RicianModel::default(),
            solver: SolverSettings::default(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn num_wds(&self) -> usize {
        self.wds.len()
    }

    pub fn num_bs(&self) -> usize {
        self.bs_positions.len()
    }

    pub fn num_irs(&self) -> usize {
        self.irs_positions.len()
    }

    /// Length of a stacked detector vector (M B).
    pub fn receive_dim(&self) -> usize {
        self.antennas_per_bs * self.num_bs()
    }

    /// Length of the stacked phase vector (I N).
    pub fn reflect_dim(&self) -> usize {
        self.elements_per_irs * self.num_irs()
    }

    /// Latency when every WD computes its whole task locally.
    pub fn all_local_latency(&self) -> f64 {
        self.wds
            .iter()
            .map(|wd| wd.data_bits as f64 * wd.complexity / wd.local_cpu)
            .fold(0.0, f64::max)
    }

    /// Moves every WD to the default placement at the given x coordinate.
    /// Only valid for two-WD scenarios.
    pub fn set_wd_distance(&mut self, distance: f64) -> Result<()> {
        if self.wds.len() != 2 {
            return Err(Error::InvalidConfig(format!(
                "distance placement needs exactly 2 WDs, found {}",
                self.wds.len()
            )));
        }
        for (wd, p) in self.wds.iter_mut().zip(wd_positions(distance)) {
            wd.position = p;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.wds.is_empty() {
            return bad("at least one WD is required".into());
        }
        if self.bs_positions.is_empty() {
            return bad("at least one BS is required".into());
        }
        if self.antennas_per_bs == 0 {
            return bad("antennas_per_bs must be >= 1".into());
        }
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("transmit_power_mw", self.transmit_power_mw),
            ("noise_power_mw", self.noise_power_mw),
            ("edge_cpu_total", self.edge_cpu_total),
            ("path_loss.c0", self.path_loss.c0),
            ("path_loss.d0", self.path_loss.d0),
            ("solver.eps_alloc", self.solver.eps_alloc),
            ("solver.eps_mud", self.solver.eps_mud),
            ("solver.eps_sca", self.solver.eps_sca),
            ("solver.eps_bcd", self.solver.eps_bcd),
            ("solver.feas_tol", self.solver.feas_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !(self.ici_power_mw.is_finite() && self.ici_power_mw >= 0.0) {
            return bad(format!("ici_power_mw must be >= 0, got {}", self.ici_power_mw));
        }
        for (name, v) in [
            ("exp_wd_bs", self.path_loss.exp_wd_bs),
            ("exp_wd_irs", self.path_loss.exp_wd_irs),
            ("exp_irs_bs", self.path_loss.exp_irs_bs),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("path_loss.{name} must be >= 0, got {v}"));
            }
        }
        for (name, f) in [
            ("wd_bs", self.rician.wd_bs),
            ("wd_irs", self.rician.wd_irs),
            ("irs_bs", self.rician.irs_bs),
        ] {
            if f.0.is_nan() || f.0 < 0.0 {
                return bad(format!("rician.{name} must be >= 0 or inf, got {}", f.0));
            }
        }
        for (k, wd) in self.wds.iter().enumerate() {
            if !(wd.complexity.is_finite() && wd.complexity > 0.0) {
                return bad(format!("wds[{k}].complexity must be > 0"));
            }
            if !(wd.local_cpu.is_finite() && wd.local_cpu > 0.0) {
                return bad(format!("wds[{k}].local_cpu must be > 0"));
            }
        }
        let s = &self.solver;
        if s.max_outer == 0 || s.max_inner == 0 || s.max_bisection == 0 || s.num_draws == 0 || s.init_draws == 0 {
            return bad("iteration caps, num_draws and init_draws must be >= 1".into());
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// dBm to mW.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// dB ratio to linear.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
