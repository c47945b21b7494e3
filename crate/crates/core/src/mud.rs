//! Multi-user detection: receive vectors for fixed phases and compute plan.
//!
//! For a target edge latency `t`, WD `k` needs SINR at least
//! `alpha_k(t) = 2^(ell_k / (W_bw (t - t_c,k))) - 1`. With the noise-normalized
//! channels `g_j = sqrt(P) h_j / sigma_tot` and the detector phase fixed so that
//! `w^H g_k` is real and nonnegative, this becomes the second-order cone
//!
//! ```text
//!   sqrt(1 + 1/alpha_k) Re(w^H g_k) >= || ([w^H g_j]_j, 1) ||,   ||w|| <= 1,
//! ```
//!
//! which involves only `w_k`, so the WDs decouple. Each block is solved with a
//! margin variable; the target is feasible when every margin is nonnegative.
//! A bisection on `t` then yields the smallest feasible edge latency.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::channel::{CVec, ChannelSet, PhaseVector};
use crate::compute_alloc::ComputePlan;
use crate::config::ScenarioConfig;
use crate::conic::{AffineExpr, ConicProblem, Constraint, Feasibility, Status};
use crate::error::{check_len, Result};
use crate::model::{edge_latency, rate, sinr_unchecked};
use crate::C64;

/// Lower-bracket offset above the largest edge computing time.
pub const BRACKET_OFFSET: f64 = 1e-9;

/// Per-WD receive vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MudMatrix {
    #[serde(with = "complex_columns")]
    cols: Vec<CVec>,
}

mod complex_columns {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::channel::CVec;
    use crate::C64;

    pub fn serialize<S: Serializer>(cols: &[CVec], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Vec<[f64; 2]>> = cols.iter().map(|c| c.iter().map(|z| [z.re, z.im]).collect()).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CVec>, D::Error> {
        let v: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        Ok(v.iter()
            .map(|c| CVec::from_iterator(c.len(), c.iter().map(|p| C64::new(p[0], p[1]))))
            .collect())
    }
}

impl MudMatrix {
    pub fn new(cols: Vec<CVec>) -> Result<Self> {
        if let Some(first) = cols.first() {
            for c in &cols {
                check_len("detector vector", first.len(), c.len())?;
            }
        }
        Ok(Self { cols })
    }

    /// Normalized maximum-ratio combining on the given effective channels.
    pub fn mrc(effective: &[CVec]) -> Self {
        Self {
            cols: effective.iter().map(unit_or_first_axis).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn column(&self, k: usize) -> &CVec {
        &self.cols[k]
    }

    pub fn columns(&self) -> &[CVec] {
        &self.cols
    }

    /// Largest column norm.
    pub fn max_norm(&self) -> f64 {
        self.cols.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

fn unit_or_first_axis(h: &CVec) -> CVec {
    let n = h.norm();
    if n > 0.0 {
        h.unscale(n)
    } else {
        let mut e = CVec::zeros(h.len());
        if !e.is_empty() {
            e[0] = C64::new(1.0, 0.0);
        }
        e
    }
}

/// SINR threshold `2^(ell / (W_bw (t - t_c))) - 1`; infinite when `t <= t_c`.
pub fn sinr_threshold(t: f64, ell: u64, edge_time: f64, cfg: &ScenarioConfig) -> f64 {
    if ell == 0 {
        return 0.0;
    }
    let slot = t - edge_time;
    if !(slot > 0.0) {
        return f64::INFINITY;
    }
    (ell as f64 / (cfg.bandwidth_hz * slot) * std::f64::consts::LN_2).exp_m1()
}

/// `max_k D_k^e` over offloading WDs for detectors `w`.
pub fn max_edge_latency(effective: &[CVec], w: &MudMatrix, plan: &ComputePlan, cfg: &ScenarioConfig) -> f64 {
    plan.offloading()
        .map(|k| {
            let r = rate(sinr_unchecked(w.column(k), effective, cfg, k), cfg);
            edge_latency(plan.offload_bits[k], plan.edge_cpu[k], r, &cfg.wds[k])
        })
        .fold(0.0, f64::max)
}

/// Max-margin cone program for one WD. Returns the margin and the detector.
fn detector_block(alpha: f64, effective: &[CVec], k: usize, cfg: &ScenarioConfig) -> Feasibility<(f64, CVec)> {
    let n = effective[k].len();
    let sigma_tot = (cfg.noise_power_mw + cfg.ici_power_mw).sqrt();
    let gain = cfg.transmit_power_mw.sqrt() / sigma_tot;
    let factor = (1.0 + 1.0 / alpha).sqrt();
    // variables: [Re w; Im w; margin]
    let margin = 2 * n;
    let re_part = |g: &CVec| {
        let mut e = AffineExpr::default();
        for (i, z) in g.iter().enumerate() {
            e.terms.push((i, gain * z.re));
            e.terms.push((n + i, gain * z.im));
        }
        e
    };
    let im_part = |g: &CVec| {
        let mut e = AffineExpr::default();
        for (i, z) in g.iter().enumerate() {
            e.terms.push((i, gain * z.im));
            e.terms.push((n + i, -gain * z.re));
        }
        e
    };

    let mut objective = DVector::zeros(2 * n + 1);
    objective[margin] = -1.0;
    let mut p = ConicProblem::new(2 * n + 1).minimize(objective);
    let mut tail = Vec::with_capacity(2 * effective.len() + 1);
    for g in effective {
        tail.push(re_part(g));
        tail.push(im_part(g));
    }
    tail.push(AffineExpr::constant(1.0));
    p.push(Constraint::SecondOrder {
        head: re_part(&effective[k]).scaled(factor).term(margin, -1.0),
        tail,
    });
    p.push(Constraint::Zero(im_part(&effective[k])));
    p.push(Constraint::SecondOrder {
        head: AffineExpr::constant(1.0),
        tail: (0..2 * n).map(AffineExpr::var).collect(),
    });

    let Ok(out) = p.solve(cfg.solver.feas_tol) else {
        return Feasibility::SolverFailure;
    };
    match out.status {
        Status::Optimal => {
            let x = &out.primal;
            let w = CVec::from_iterator(n, (0..n).map(|i| C64::new(x[i], x[n + i])));
            let m = x[margin];
            if m >= 0.0 {
                Feasibility::Feasible((m, w))
            } else {
                Feasibility::Infeasible
            }
        }
        Status::Infeasible => Feasibility::Infeasible,
        Status::Unbounded | Status::NumericalFailure => Feasibility::SolverFailure,
    }
}

/// Feasibility of edge-latency target `t` for fixed phases and plan.
///
/// WDs that offload nothing are given MRC detectors and no constraint. The
/// returned detectors are scaled to unit norm, which never lowers the SINR.
pub fn socp_feasible(
    t: f64,
    channels: &ChannelSet,
    theta: &PhaseVector,
    plan: &ComputePlan,
    cfg: &ScenarioConfig,
) -> Result<Feasibility<MudMatrix>> {
    let effective = channels.effective_all(theta)?;
    Ok(feasible_on(t, &effective, plan, cfg))
}

fn feasible_on(t: f64, effective: &[CVec], plan: &ComputePlan, cfg: &ScenarioConfig) -> Feasibility<MudMatrix> {
    let mut w = MudMatrix::mrc(effective);
    for k in plan.offloading() {
        let alpha = sinr_threshold(t, plan.offload_bits[k], plan.edge_compute_time(k, cfg), cfg);
        if !alpha.is_finite() {
            return Feasibility::Infeasible;
        }
        match detector_block(alpha, effective, k, cfg) {
            Feasibility::Feasible((_, wk)) => w.cols[k] = unit_or_first_axis(&wk),
            Feasibility::Infeasible => return Feasibility::Infeasible,
            Feasibility::SolverFailure => return Feasibility::SolverFailure,
        }
    }
    Feasibility::Feasible(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub t: f64,
    pub feasible: bool,
    pub solver_failure: bool,
}

#[derive(Debug, Clone)]
pub struct MudOutcome {
    /// `max_k D_k^e` recomputed from the returned detectors.
    pub t: f64,
    pub w: MudMatrix,
    /// Smallest target the bisection certified.
    pub bisection_t: f64,
    pub probes: Vec<Probe>,
    /// The incumbent detectors were better than the bisection result.
    pub kept_incumbent: bool,
}

/// Bisection on the edge-latency target over [`socp_feasible`].
///
/// The upper bracket is the latency of MRC detectors (or the incumbent, if
/// better), widened until feasible. Probes that hit a solver failure count
/// as infeasible.
pub fn optimize_mud(
    channels: &ChannelSet,
    theta: &PhaseVector,
    plan: &ComputePlan,
    cfg: &ScenarioConfig,
    incumbent: Option<&MudMatrix>,
) -> Result<MudOutcome> {
    let effective = channels.effective_all(theta)?;
    if let Some(w) = incumbent {
        check_len("detector count", effective.len(), w.len())?;
    }
    let mrc = MudMatrix::mrc(&effective);
    let t_mrc = max_edge_latency(&effective, &mrc, plan, cfg);
    let (start_w, start_t) = match incumbent {
        Some(w) => {
            let t_inc = max_edge_latency(&effective, w, plan, cfg);
            if t_inc < t_mrc {
                (w.clone(), t_inc)
            } else {
                (mrc, t_mrc)
            }
        }
        None => (mrc, t_mrc),
    };
    if !plan.any_offload() {
        return Ok(MudOutcome {
            t: 0.0,
            w: start_w,
            bisection_t: 0.0,
            probes: Vec::new(),
            kept_incumbent: false,
        });
    }

    let t_c = plan
        .offloading()
        .map(|k| plan.edge_compute_time(k, cfg))
        .fold(0.0, f64::max);
    let mut lo = t_c + BRACKET_OFFSET;
    let mut probes = Vec::new();
    let probe = |t: f64, probes: &mut Vec<Probe>| {
        let f = feasible_on(t, &effective, plan, cfg);
        probes.push(Probe {
            t,
            feasible: f.is_feasible(),
            solver_failure: matches!(f, Feasibility::SolverFailure),
        });
        f.feasible()
    };

    let mut hi = if start_t.is_finite() { start_t } else { lo + 1.0 };
    let mut best = None;
    for _ in 0..cfg.solver.max_bisection {
        if let Some(w) = probe(hi, &mut probes) {
            best = Some(w);
            break;
        }
        lo = hi;
        hi = t_c + 2.0 * (hi - t_c);
    }
    let Some(mut best_w) = best else {
        return Ok(MudOutcome {
            t: start_t,
            w: start_w,
            bisection_t: f64::INFINITY,
            probes,
            kept_incumbent: incumbent.is_some(),
        });
    };

    let mut iters = 0;
    while hi - lo > cfg.solver.eps_mud * hi && iters < cfg.solver.max_bisection {
        let mid = 0.5 * (lo + hi);
        match probe(mid, &mut probes) {
            Some(w) => {
                hi = mid;
                best_w = w;
            }
            None => lo = mid,
        }
        iters += 1;
    }

    let t_new = max_edge_latency(&effective, &best_w, plan, cfg);
    let (t, w, kept) = if start_t < t_new {
        (start_t, start_w, true)
    } else {
        (t_new, best_w, false)
    };
    Ok(MudOutcome {
        t,
        w,
        bisection_t: hi,
        probes,
        kept_incumbent: kept && incumbent.is_some(),
    })
}
