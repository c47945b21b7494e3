//! Closed forms for a single WD.
//!
//! Without multi-user interference the SINR is
//! `P |w^H h|^2 / (sigma^2 ||w||^2 + sigma_ICI^2)`. For fixed phases it is maximized by MRC; for a fixed
//! detector `|w^H h|` is at most `|w^H h_d| + sum_n |(w^H G)_n h_r,n|`, with
//! equality when every reflected term is co-phased with the direct one.

use crate::channel::{CVec, ChannelSet, PhaseVector};
use crate::compute_alloc::optimal_offload;
use crate::config::ScenarioConfig;
use crate::error::{check_len, Error, Result};
use crate::model::{latency, rate, sinr_from_effective, LatencyRow};

fn single_wd(cfg: &ScenarioConfig) -> Result<&crate::config::WdParams> {
    match cfg.wds.as_slice() {
        [wd] => Ok(wd),
        wds => Err(Error::InvalidConfig(format!(
            "single-WD solver needs exactly 1 WD, found {}",
            wds.len()
        ))),
    }
}

/// Optimal integer offload with the whole edge CPU.
pub fn single_offload(rate: f64, cfg: &ScenarioConfig) -> Result<u64> {
    Ok(optimal_offload(rate, cfg.edge_cpu_total, single_wd(cfg)?))
}

/// Unit-norm MRC detector `h / ||h||` for the phases `theta`.
pub fn mrc_detector(channels: &ChannelSet, theta: &PhaseVector) -> Result<CVec> {
    let h = channels.effective_channel(theta, 0)?;
    let n = h.norm();
    if n > 0.0 {
        Ok(h.unscale(n))
    } else {
        Err(Error::Degenerate("effective channel is zero".into()))
    }
}

/// Phases co-phasing every reflected term with the direct term seen by `w`.
pub fn aligned_phases(channels: &ChannelSet, w: &CVec) -> Result<PhaseVector> {
    check_len("detector vector", channels.dims().receive_dim(), w.len())?;
    let direct = w.dotc(channels.direct(0)).arg();
    let wg = channels.cascade().adjoint() * w;
    let hr = channels.reflect(0);
    Ok(PhaseVector::from_angles(
        (0..hr.len()).map(|n| direct - (wg[n].conj() * hr[n]).arg()),
    ))
}

/// Upper bound `|w^H h_d| + sum_n |(w^H G)_n h_r,n|` on `|w^H h|`.
pub fn amplitude_bound(channels: &ChannelSet, w: &CVec) -> Result<f64> {
    check_len("detector vector", channels.dims().receive_dim(), w.len())?;
    let wg = channels.cascade().adjoint() * w;
    let hr = channels.reflect(0);
    Ok(w.dotc(channels.direct(0)).norm() + (0..hr.len()).map(|n| (wg[n].conj() * hr[n]).norm()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleSolution {
    pub offload_bits: u64,
    pub w: CVec,
    pub theta: PhaseVector,
    pub snr: f64,
    pub rate: f64,
    pub latency: LatencyRow,
    /// SNR at the start and after every (phase, detector) round.
    pub snr_history: Vec<f64>,
}

/// Alternates phase alignment and MRC from zero phases until the relative
/// SNR change is at most `eps_mud`, then splits the task.
pub fn solve_single(channels: &ChannelSet, cfg: &ScenarioConfig) -> Result<SingleSolution> {
    let wd = single_wd(cfg)?;
    check_len("WD count", 1, channels.dims().wds)?;
    let snr_of = |w: &CVec, theta: &PhaseVector| -> Result<f64> {
        let h = channels.effective_channel(theta, 0)?;
        sinr_from_effective(w, &[h], cfg, 0)
    };

    let mut theta = PhaseVector::zeros(channels.dims().reflect_dim());
    let mut w = mrc_detector(channels, &theta)?;
    let mut snr = snr_of(&w, &theta)?;
    let mut history = vec![snr];
    if !theta.is_empty() {
        for _ in 0..cfg.solver.max_inner.max(1) {
            theta = aligned_phases(channels, &w)?;
            w = mrc_detector(channels, &theta)?;
            let next = snr_of(&w, &theta)?;
            history.push(next);
            let done = (next - snr).abs() <= cfg.solver.eps_mud * next;
            snr = next;
            if done {
                break;
            }
        }
    }

    let r = rate(snr, cfg);
    let ell = single_offload(r, cfg)?;
    let fe = if ell > 0 { cfg.edge_cpu_total } else { 0.0 };
    Ok(SingleSolution {
        offload_bits: ell,
        w,
        theta,
        snr,
        rate: r,
        latency: latency(ell, fe, r, wd),
        snr_history: history,
    })
}
