//! Baselines and parameter sweeps.
//!
//! Sweep values are given in the units of the plotted axes (dBm for transmit
//! power, dB for the ICI-to-noise ratio) and converted to linear units here,
//! before anything reaches the solvers.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{synthesize_seeded, ChannelSet, PhaseVector};
use crate::config::{db_to_linear, dbm_to_mw, ScenarioConfig};
use crate::error::{Error, Result};
use crate::orchestrator::{initial_phases, run_bcd, run_bcd_from, BcdResult, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// x coordinate of both WDs (m).
    WdDistance,
    /// Total edge CPU (cycles/s).
    EdgeCpu,
    /// Transmit power (dBm).
    TransmitPower,
    /// ICI-to-noise power ratio (dB).
    IciRatio,
    /// Cap on outer iterations.
    Iterations,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::WdDistance => "wd_distance",
            SweepParam::EdgeCpu => "edge_cpu",
            SweepParam::TransmitPower => "transmit_power",
            SweepParam::IciRatio => "ici_ratio",
            SweepParam::Iterations => "iterations",
        }
    }

    /// Writes `value` into `cfg`.
    pub fn apply(self, value: f64, cfg: &mut ScenarioConfig) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "{} value {value} is not finite",
                self.as_str()
            )));
        }
        match self {
            SweepParam::WdDistance => cfg.set_wd_distance(value)?,
            SweepParam::EdgeCpu => cfg.edge_cpu_total = value,
            SweepParam::TransmitPower => cfg.transmit_power_mw = dbm_to_mw(value),
            SweepParam::IciRatio => cfg.ici_power_mw = cfg.noise_power_mw * db_to_linear(value),
            SweepParam::Iterations => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "iteration count {value} must be a positive integer"
                    )));
                }
                cfg.solver.max_outer = value as usize;
            }
        }
        Ok(())
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Optimized schemes and baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sdr,
    Sca,
    /// Cascaded channel removed; detectors and compute optimized.
    NoIrs,
    /// Direct channels removed; everything optimized.
    NoDirect,
    /// Random phases kept fixed; detectors and compute optimized.
    RandomPhase,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Sdr,
        Method::Sca,
        Method::NoIrs,
        Method::NoDirect,
        Method::RandomPhase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sdr => "sdr",
            Method::Sca => "sca",
            Method::NoIrs => "no_irs",
            Method::NoDirect => "no_direct",
            Method::RandomPhase => "random_phase",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme '{s}'")))
    }
}

/// Runs one method on the given channels.
///
/// `phase_scheme` is the phase update used where a baseline still optimizes
/// the phases (`no_direct`).
pub fn run_baseline(
    method: Method,
    channels: &ChannelSet,
    cfg: &ScenarioConfig,
    phase_scheme: Scheme,
) -> Result<BcdResult> {
    match method {
        Method::Sdr => run_bcd(channels, cfg, Scheme::Sdr),
        Method::Sca => run_bcd(channels, cfg, Scheme::Sca),
        Method::NoIrs => run_bcd_from(
            &channels.without_cascade(),
            cfg,
            Scheme::Fixed,
            PhaseVector::zeros(cfg.reflect_dim()),
        ),
        Method::NoDirect => run_bcd(&channels.without_direct(), cfg, phase_scheme),
        Method::RandomPhase => run_bcd_from(channels, cfg, Scheme::Fixed, initial_phases(cfg)),
    }
}

/// Channels a method actually sees.
pub fn method_channels(method: Method, channels: &ChannelSet) -> ChannelSet {
    match method {
        Method::NoIrs => channels.without_cascade(),
        Method::NoDirect => channels.without_direct(),
        _ => channels.clone(),
    }
}

fn default_phase_scheme() -> Scheme {
    Scheme::Sca
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub schemes: Vec<Method>,
    /// Channel realizations per grid point.
    pub seeds: u64,
    #[serde(default)]
    pub master_seed: u64,
    /// Phase update for the `no_direct` baseline.
    #[serde(default = "default_phase_scheme")]
    pub phase_scheme: Scheme,
    /// Fill the `wall_ms` column. Off by default so that output is
    /// reproducible byte for byte.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl SweepSpec {
    pub fn new(param: SweepParam, values: Vec<f64>, schemes: Vec<Method>, seeds: u64) -> Self {
        Self {
            param,
            values,
            schemes,
            seeds,
            master_seed: 0,
            phase_scheme: default_phase_scheme(),
            record_wall_time: false,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("no schemes selected".into()));
        }
        if self.seeds == 0 {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.phase_scheme == Scheme::Fixed {
            return Err(Error::InvalidConfig("phase_scheme must be sdr or sca".into()));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

const TAG_SWEEP_SEED: u64 = 6;

/// Scenario seed of realization `index`; shared by every grid point and
/// method so comparisons are paired.
pub fn realization_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream((TAG_SWEEP_SEED << 56) | index);
    rng.random()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_param: SweepParam,
    pub value: f64,
    pub scheme: Method,
    pub seed: u64,
    pub t_ms: f64,
    pub per_wd_latency_ms: Vec<f64>,
    pub ell_bits: Vec<u64>,
    pub fe_cycles: Vec<f64>,
    /// Outer iterations run.
    pub iters: usize,
    pub wall_ms: Option<f64>,
}

/// One solved grid cell, with everything needed to re-derive its row.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub row: SweepRow,
    pub cfg: ScenarioConfig,
    pub result: BcdResult,
}

pub const CSV_HEADER: [&str; 10] = [
    "sweep_param",
    "value",
    "scheme",
    "seed",
    "t_ms",
    "per_wd_latency_ms",
    "ell_bits",
    "fe_cycles",
    "iters",
    "wall_ms",
];

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

/// CSV with the fixed column order of [`CSV_HEADER`]; list-valued fields are
/// `;`-separated per WD.
pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.sweep_param.to_string(),
            r.value.to_string(),
            r.scheme.to_string(),
            r.seed.to_string(),
            r.t_ms.to_string(),
            join(&r.per_wd_latency_ms),
            join(&r.ell_bits),
            join(&r.fe_cycles),
            r.iters.to_string(),
            r.wall_ms.map(|x| format!("{x:.3}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[SweepRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn solve_cell(spec: &SweepSpec, base: &ScenarioConfig, value: f64, method: Method, index: u64) -> Result<SweepCell> {
    let mut cfg = base.clone();
    spec.param.apply(value, &mut cfg)?;
    cfg.seed = realization_seed(spec.master_seed, index);
    cfg.validate()?;
    let channels = synthesize_seeded(&cfg)?;
    let start = Instant::now();
    let result = run_baseline(method, &channels, &cfg, spec.phase_scheme)?;
    let wall = start.elapsed().as_secs_f64() * 1e3;
    let row = SweepRow {
        sweep_param: spec.param,
        value,
        scheme: method,
        seed: cfg.seed,
        t_ms: result.report.objective * 1e3,
        per_wd_latency_ms: result.report.rows.iter().map(|r| r.total * 1e3).collect(),
        ell_bits: result.plan.offload_bits.clone(),
        fe_cycles: result.plan.edge_cpu.clone(),
        iters: result.trace.rows.len(),
        wall_ms: spec.record_wall_time.then_some(wall),
    };
    Ok(SweepCell { row, cfg, result })
}

/// Solves every (value, scheme, seed) cell in parallel. Cells come back in
/// grid order: value, then scheme, then seed.
pub fn run_sweep_cells(spec: &SweepSpec, base: &ScenarioConfig) -> Result<Vec<SweepCell>> {
    spec.validate()?;
    let jobs: Vec<(f64, Method, u64)> = spec
        .values
        .iter()
        .flat_map(|&v| {
            spec.schemes
                .iter()
                .flat_map(move |&m| (0..spec.seeds).map(move |s| (v, m, s)))
        })
        .collect();
    jobs.par_iter()
        .map(|&(v, m, s)| solve_cell(spec, base, v, m, s))
        .collect()
}

pub fn run_sweep(spec: &SweepSpec, base: &ScenarioConfig) -> Result<Vec<SweepRow>> {
    Ok(run_sweep_cells(spec, base)?.into_iter().map(|c| c.row).collect())
}

/// Median of `t_ms` per (value, scheme), in grid order.
pub fn medians(rows: &[SweepRow]) -> Vec<(f64, Method, f64)> {
    let mut out: Vec<(f64, Method, Vec<f64>)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(v, m, _)| *v == r.value && *m == r.scheme) {
            Some((_, _, ts)) => ts.push(r.t_ms),
            None => out.push((r.value, r.scheme, vec![r.t_ms])),
        }
    }
    out.into_iter().map(|(v, m, ts)| (v, m, median(ts))).collect()
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty(), "median of an empty sample");
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
