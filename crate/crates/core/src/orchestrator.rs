//! Inner alternation between detectors and phases, and the outer
//! block-coordinate loop over (offload, edge CPU) and (detectors, phases).

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSet, PhaseVector};
use crate::compute_alloc::{allocate, ComputePlan};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::model::{evaluate, rates, report, LatencyReport};
use crate::mud::{max_edge_latency, optimize_mud, MudMatrix};
use crate::reflect::{build_forms, optimize_reflect_sdr, sca_step};

/// Phase update used in the inner alternation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Sdr,
    Sca,
    /// Phases are never updated.
    Fixed,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Sdr => "sdr",
            Scheme::Sca => "sca",
            Scheme::Fixed => "fixed",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sdr" => Ok(Scheme::Sdr),
            "sca" => Ok(Scheme::Sca),
            "fixed" => Ok(Scheme::Fixed),
            other => Err(Error::InvalidConfig(format!("unknown scheme '{other}'"))),
        }
    }
}

/// One accepted or rejected SCA update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaRecord {
    pub z: f64,
    pub t_before: f64,
    pub t_after: f64,
    pub accepted: bool,
}

/// Record of one inner alternation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InnerTrace {
    /// `max_k D_k^e` at entry, then after every detector and phase update.
    pub t: Vec<f64>,
    pub sca: Vec<ScaRecord>,
    /// Phase updates that hit a solver failure and kept the phases.
    pub reflect_failures: usize,
    /// Completed (detector, phase) rounds.
    pub rounds: usize,
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub l4: usize,
    /// Overall objective `max_k D_k` after the compute-allocation step.
    pub t_step2: f64,
    /// `max_k D_k^e` after the inner alternation.
    pub t_step3: f64,
    /// Overall objective after the inner alternation.
    pub objective: f64,
    pub eps4: f64,
    pub scheme: Scheme,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub inner: Vec<InnerTrace>,
    /// Stopped on the objective-change threshold rather than the cap.
    pub converged: bool,
}

impl RunTrace {
    /// CSV with columns `l4, t_step2, t_step3, eps4, scheme, wall_ms`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["l4", "t_step2", "t_step3", "eps4", "scheme", "wall_ms"])?;
        for r in &self.rows {
            w.write_record([
                r.l4.to_string(),
                r.t_step2.to_string(),
                r.t_step3.to_string(),
                r.eps4.to_string(),
                r.scheme.to_string(),
                format!("{:.3}", r.wall_ms),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    /// Final `max_k D_k^e`.
    pub t: f64,
    pub w: MudMatrix,
    pub theta: PhaseVector,
    pub trace: InnerTrace,
}

/// Alternates detector and phase updates for a fixed compute plan.
///
/// Starts with the detector step. Stops when the relative change of `t`
/// over one round is within the scheme's tolerance, or at the round cap.
/// Without reflecting elements, or with [`Scheme::Fixed`], a single detector
/// step is made.
pub fn inner_alternate<R: Rng + ?Sized>(
    channels: &ChannelSet,
    plan: &ComputePlan,
    cfg: &ScenarioConfig,
    scheme: Scheme,
    theta: &PhaseVector,
    w_init: Option<&MudMatrix>,
    rng: &mut R,
) -> Result<InnerResult> {
    let effective = channels.effective_all(theta)?;
    let mut w = match w_init {
        Some(w) => w.clone(),
        None => MudMatrix::mrc(&effective),
    };
    let mut theta = theta.clone();
    let mut trace = InnerTrace::default();
    let mut t = max_edge_latency(&effective, &w, plan, cfg);
    trace.t.push(t);
    if !plan.any_offload() {
        return Ok(InnerResult { t, w, theta, trace });
    }
    let reflect = scheme != Scheme::Fixed && channels.dims().reflect_dim() > 0;
    let eps = match scheme {
        Scheme::Sca => cfg.solver.eps_sca,
        _ => cfg.solver.eps_mud,
    };

    let rounds = if reflect { cfg.solver.max_inner.max(1) } else { 1 };
    for _ in 0..rounds {
        let t_round = t;
        let mud = optimize_mud(channels, &theta, plan, cfg, Some(&w))?;
        w = mud.w;
        t = mud.t;
        trace.t.push(t);
        if !reflect {
            trace.rounds += 1;
            break;
        }

        let forms = build_forms(channels, &w, cfg)?;
        match scheme {
            Scheme::Sdr => {
                let out = optimize_reflect_sdr(&forms, &theta, plan, cfg, rng)?;
                if out.probes.iter().all(|p| p.solver_failure) {
                    trace.reflect_failures += 1;
                }
                if out.improved {
                    theta = out.theta;
                    t = out.t;
                }
            }
            Scheme::Sca => {
                let step = sca_step(&theta.coefficients(), &forms, plan, t, cfg)?;
                if step.solver_failure {
                    trace.reflect_failures += 1;
                }
                trace.sca.push(ScaRecord {
                    z: step.z,
                    t_before: step.t_before,
                    t_after: step.t_after,
                    accepted: step.accepted,
                });
                if step.accepted {
                    theta = PhaseVector::from_coefficients(&step.v);
                    t = step.t_after;
                }
            }
            Scheme::Fixed => unreachable!("fixed phases skip the reflect step"),
        }
        trace.t.push(t);
        trace.rounds += 1;
        if (t_round - t).abs() <= eps * t {
            break;
        }
    }
    Ok(InnerResult { t, w, theta, trace })
}

#[derive(Debug, Clone)]
pub struct BcdResult {
    pub plan: ComputePlan,
    pub w: MudMatrix,
    pub theta: PhaseVector,
    pub report: LatencyReport,
    pub trace: RunTrace,
}

const TAG_INIT_PHASES: u64 = 4;
const TAG_RANDOMIZATION: u64 = 5;

fn run_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag << 56);
    rng
}

/// First seeded random phase vector, uniform on `[0, 2 pi)`.
pub fn initial_phases(cfg: &ScenarioConfig) -> PhaseVector {
    PhaseVector::random(cfg.reflect_dim(), &mut run_rng(cfg.seed, TAG_INIT_PHASES))
}

/// Best of `init_draws` seeded random phase vectors, scored by the overall
/// objective with MRC detectors and the optimal compute plan. The first draw
/// equals [`initial_phases`]; ties go to the earlier draw.
pub fn screened_phases(channels: &ChannelSet, cfg: &ScenarioConfig) -> Result<PhaseVector> {
    let mut rng = run_rng(cfg.seed, TAG_INIT_PHASES);
    let mut best: Option<(f64, PhaseVector)> = None;
    for _ in 0..cfg.solver.init_draws.max(1) {
        let theta = PhaseVector::random(cfg.reflect_dim(), &mut rng);
        if cfg.reflect_dim() == 0 {
            return Ok(theta);
        }
        let w = MudMatrix::mrc(&channels.effective_all(&theta)?);
        let g = allocate(&rates(channels, &theta, &w, cfg)?, cfg)?.objective;
        if best.as_ref().is_none_or(|b| g < b.0) {
            best = Some((g, theta));
        }
    }
    Ok(best.expect("at least one draw").1)
}

/// Outer loop from screened random phases and MRC detectors.
pub fn run_bcd(channels: &ChannelSet, cfg: &ScenarioConfig, scheme: Scheme) -> Result<BcdResult> {
    run_bcd_from(channels, cfg, scheme, screened_phases(channels, cfg)?)
}

/// Outer loop from the given phases.
///
/// Each iteration reallocates offload sizes and edge CPU at the current rates
/// (keeping the previous plan if it is strictly better), then runs the inner
/// alternation. Stops when the relative objective change is at most
/// `eps_bcd`, falling back to the absolute change for objectives below 1 ns.
pub fn run_bcd_from(
    channels: &ChannelSet,
    cfg: &ScenarioConfig,
    scheme: Scheme,
    theta0: PhaseVector,
) -> Result<BcdResult> {
    cfg.validate()?;
    let mut rng = run_rng(cfg.seed, TAG_RANDOMIZATION);
    let mut theta = theta0;
    let mut w = MudMatrix::mrc(&channels.effective_all(&theta)?);
    let mut plan = ComputePlan::all_local(cfg);
    let mut prev = cfg.all_local_latency();
    let mut trace = RunTrace::default();

    for l4 in 1..=cfg.solver.max_outer {
        let start = Instant::now();
        let r = rates(channels, &theta, &w, cfg)?;
        let candidate = allocate(&r, cfg)?;
        let g_candidate = report(&candidate, &r, cfg)?.objective;
        let g_current = report(&plan, &r, cfg)?.objective;
        let t_step2 = if g_current < g_candidate {
            g_current
        } else {
            plan = candidate;
            g_candidate
        };
        plan.objective = t_step2;

        let inner = inner_alternate(channels, &plan, cfg, scheme, &theta, Some(&w), &mut rng)?;
        w = inner.w;
        theta = inner.theta;
        let objective = evaluate(channels, &theta, &w, &plan, cfg)?.objective;
        plan.objective = objective;
        let change = (objective - prev).abs();
        let eps4 = if objective < 1e-9 { change } else { change / objective };
        trace.rows.push(TraceRow {
            l4,
            t_step2,
            t_step3: inner.t,
            objective,
            eps4,
            scheme,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        trace.inner.push(inner.trace);
        prev = objective;
        if eps4 <= cfg.solver.eps_bcd {
            trace.converged = true;
            break;
        }
    }

    let report = evaluate(channels, &theta, &w, &plan, cfg)?;
    Ok(BcdResult {
        plan,
        w,
        theta,
        report,
        trace,
    })
}
