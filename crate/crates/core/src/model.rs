//! SINR, rate and latency.
//!
//! SINR convention: the receiver noise term is `sigma^2 ||w_k||^2` and the
//! inter-cell interference is a constant additive power, so the SINR is
//! invariant to any nonzero complex scaling of `w_k` when ICI is zero and
//! never decreases when `w_k` is scaled up otherwise.

use serde::{Deserialize, Serialize};

use crate::channel::{CVec, ChannelSet, PhaseVector};
use crate::compute_alloc::ComputePlan;
use crate::config::{ScenarioConfig, WdParams};
use crate::error::{check_len, Error, Result};
use crate::mud::MudMatrix;

/// SINR of WD `k` given the effective channels of all WDs.
pub fn sinr_from_effective(w: &CVec, effective: &[CVec], cfg: &ScenarioConfig, k: usize) -> Result<f64> {
    if k >= effective.len() {
        return Err(Error::Index {
            what: "WD",
            index: k,
            len: effective.len(),
        });
    }
    for h in effective {
        check_len("detector vector", h.len(), w.len())?;
    }
    Ok(sinr_unchecked(w, effective, cfg, k))
}

pub(crate) fn sinr_unchecked(w: &CVec, effective: &[CVec], cfg: &ScenarioConfig, k: usize) -> f64 {
    let p = cfg.transmit_power_mw;
    let signal = p * w.dotc(&effective[k]).norm_sqr();
    let interference: f64 = effective
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, h)| w.dotc(h).norm_sqr())
        .sum::<f64>()
        * p;
    let denom = interference + cfg.noise_power_mw * w.norm_squared() + cfg.ici_power_mw;
    if signal == 0.0 {
        0.0
    } else if denom > 0.0 {
        signal / denom
    } else {
        f64::INFINITY
    }
}

/// SINR of WD `k` for detector `w` and phases `theta`.
pub fn sinr(w: &CVec, channels: &ChannelSet, theta: &PhaseVector, cfg: &ScenarioConfig, k: usize) -> Result<f64> {
    check_len("detector vector", channels.dims().receive_dim(), w.len())?;
    let effective = channels.effective_all(theta)?;
    sinr_from_effective(w, &effective, cfg, k)
}

/// Achievable rate `W_bw log2(1 + gamma)` in bits/s.
pub fn rate(gamma: f64, cfg: &ScenarioConfig) -> f64 {
    cfg.bandwidth_hz * gamma.max(0.0).ln_1p() / std::f64::consts::LN_2
}

/// Rates of all WDs under detectors `w` and phases `theta`.
pub fn rates(channels: &ChannelSet, theta: &PhaseVector, w: &MudMatrix, cfg: &ScenarioConfig) -> Result<Vec<f64>> {
    check_len("detector count", channels.dims().wds, w.len())?;
    let effective = channels.effective_all(theta)?;
    (0..w.len())
        .map(|k| Ok(rate(sinr_from_effective(w.column(k), &effective, cfg, k)?, cfg)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub local: f64,
    pub edge: f64,
    pub total: f64,
}

/// Local and edge latency of one WD.
///
/// `ell = 0` gives zero edge latency; a positive offload with zero rate or
/// zero edge CPU is reported as `+inf`.
pub fn latency(ell: u64, edge_cpu: f64, rate: f64, wd: &WdParams) -> LatencyRow {
    let local = (wd.data_bits.saturating_sub(ell)) as f64 * wd.complexity / wd.local_cpu;
    let edge = edge_latency(ell, edge_cpu, rate, wd);
    LatencyRow {
        local,
        edge,
        total: local.max(edge),
    }
}

pub fn edge_latency(ell: u64, edge_cpu: f64, rate: f64, wd: &WdParams) -> f64 {
    if ell == 0 {
        0.0
    } else if rate <= 0.0 || edge_cpu <= 0.0 {
        f64::INFINITY
    } else {
        let l = ell as f64;
        l / rate + l * wd.complexity / edge_cpu
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub rows: Vec<LatencyRow>,
    /// `max_k D_k`.
    pub objective: f64,
}

impl LatencyReport {
    pub fn from_rows(rows: Vec<LatencyRow>) -> Self {
        let objective = rows.iter().map(|r| r.total).fold(0.0, f64::max);
        Self { rows, objective }
    }

    /// `max_k D_k^e`.
    pub fn max_edge(&self) -> f64 {
        self.rows.iter().map(|r| r.edge).fold(0.0, f64::max)
    }
}

/// Latency of a compute plan under the given rates.
pub fn report(plan: &ComputePlan, rates: &[f64], cfg: &ScenarioConfig) -> Result<LatencyReport> {
    check_len("rates", cfg.num_wds(), rates.len())?;
    check_len("offload sizes", cfg.num_wds(), plan.offload_bits.len())?;
    check_len("edge CPU shares", cfg.num_wds(), plan.edge_cpu.len())?;
    Ok(LatencyReport::from_rows(
        cfg.wds
            .iter()
            .enumerate()
            .map(|(k, wd)| latency(plan.offload_bits[k], plan.edge_cpu[k], rates[k], wd))
            .collect(),
    ))
}

/// Full evaluation of a solution point.
pub fn evaluate(
    channels: &ChannelSet,
    theta: &PhaseVector,
    w: &MudMatrix,
    plan: &ComputePlan,
    cfg: &ScenarioConfig,
) -> Result<LatencyReport> {
    report(plan, &rates(channels, theta, w, cfg)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{CMat, Dims};
    use crate::C64;
    use proptest::prelude::*;

    fn one_antenna_cfg(k: usize) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.transmit_power_mw = 1.0;
        cfg.noise_power_mw = 1.0;
        cfg.bandwidth_hz = 1.0;
        cfg.wds.truncate(k);
        cfg
    }

    fn cv(v: &[(f64, f64)]) -> CVec {
        CVec::from_iterator(v.len(), v.iter().map(|&(a, b)| C64::new(a, b)))
    }

    #[test]
    fn scalar_sinr() {
        let cfg = one_antenna_cfg(1);
        let g = sinr_from_effective(&cv(&[(1.0, 0.0)]), &[cv(&[(2.0, 0.0)])], &cfg, 0).unwrap();
        assert!((g - 4.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_interferer_is_harmless() {
        let cfg = one_antenna_cfg(2);
        let w = cv(&[(1.0, 0.0), (0.0, 0.0)]);
        let h = [cv(&[(0.5, 0.5), (1.0, 0.0)]), cv(&[(0.0, 0.0), (3.0, -1.0)])];
        let two = sinr_from_effective(&w, &h, &cfg, 0).unwrap();
        let one = sinr_from_effective(&w, &h[..1], &one_antenna_cfg(1), 0).unwrap();
        assert!((two - one).abs() < 1e-15);
    }

    #[test]
    fn sinr_reports_dimension_block() {
        let cfg = one_antenna_cfg(1);
        let err = sinr_from_effective(&cv(&[(1.0, 0.0)]), &[cv(&[(1.0, 0.0), (1.0, 0.0)])], &cfg, 0).unwrap_err();
        assert!(err.to_string().contains("detector vector"));
    }

    #[test]
    fn sinr_ignores_zeroed_reflect_paths() {
        let dims = Dims {
            wds: 1,
            bs: 1,
            antennas: 2,
            irs: 1,
            elements: 2,
        };
        let hd = cv(&[(1.0, 0.5), (-0.3, 0.2)]);
        let ch = crate::ChannelSet::from_parts(
            dims,
            vec![hd.clone()],
            vec![CVec::zeros(2)],
            CMat::from_element(2, 2, C64::new(0.7, 0.1)),
        )
        .unwrap();
        let cfg = one_antenna_cfg(1);
        let w = cv(&[(0.6, 0.0), (0.0, 0.8)]);
        let with = sinr(&w, &ch, &PhaseVector::from_angles([0.3, 1.7]), &cfg, 0).unwrap();
        let direct_only = sinr_from_effective(&w, &[hd], &cfg, 0).unwrap();
        assert!((with - direct_only).abs() < 1e-14);
    }

    #[test]
    fn rate_values() {
        let mut cfg = ScenarioConfig::default();
        cfg.bandwidth_hz = 1.0;
        assert_eq!(rate(0.0, &cfg), 0.0);
        assert!((rate(1.0, &cfg) - 1.0).abs() < 1e-15);
        cfg.bandwidth_hz = 2.0;
        assert!((rate(3.0, &cfg) - 4.0).abs() < 1e-14);
    }

    fn wd(l: u64, c: f64, fl: f64) -> WdParams {
        WdParams {
            position: [0.0; 3],
            data_bits: l,
            complexity: c,
            local_cpu: fl,
        }
    }

    #[test]
    fn latency_edges() {
        let d = wd(100, 2.0, 10.0);
        let all_local = latency(0, 0.0, 0.0, &d);
        assert_eq!(all_local.edge, 0.0);
        assert_eq!(all_local.total, 20.0);
        let all_off = latency(100, 50.0, 20.0, &d);
        assert_eq!(all_off.local, 0.0);
        assert!((all_off.total - (100.0 / 20.0 + 200.0 / 50.0)).abs() < 1e-12);
        assert!(latency(1, 0.0, 5.0, &d).edge.is_infinite());
        assert!(latency(1, 5.0, 0.0, &d).edge.is_infinite());
    }

    #[test]
    fn continuous_optimum_balances_branches() {
        // Substituting the balancing offload into both branches.
        let (l, c, fl, fe, r): (f64, f64, f64, f64, f64) = (1e5, 700.0, 4e8, 2e9, 3e6);
        let ell = l * c * r * fe / (fe * fl + c * r * (fe + fl));
        let local = (l - ell) * c / fl;
        let edge = ell / r + ell * c / fe;
        assert!((local - edge).abs() < 1e-12 * local);
    }

    proptest! {
        #[test]
        fn rate_strictly_increasing(a in 0.0f64..1e6, d in 1e-6f64..1e3) {
            let cfg = ScenarioConfig::default();
            prop_assert!(rate(a + d, &cfg) > rate(a, &cfg));
        }

        #[test]
        fn sinr_phase_invariant(
            re in prop::collection::vec(-1.0f64..1.0, 6),
            phase in 0.0f64..6.0, scale in 0.1f64..10.0
        ) {
            let mut cfg = one_antenna_cfg(2);
            cfg.noise_power_mw = 0.3;
            let w = cv(&[(re[0], re[1]), (re[2], 0.1)]);
            let h = [cv(&[(re[3], 0.2), (re[4], -0.4)]), cv(&[(re[5], 0.5), (0.3, 0.3)])];
            let a = sinr_from_effective(&w, &h, &cfg, 0).unwrap();
            let rotated = &w * C64::from_polar(scale, phase);
            let b = sinr_from_effective(&rotated, &h, &cfg, 0).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
        }

        #[test]
        fn latency_unimodal_in_offload(
            l in 10u64..400, c in 0.5f64..5.0, fl in 1.0f64..10.0,
            fe in 0.5f64..20.0, r in 0.5f64..20.0
        ) {
            let d = wd(l, c, fl);
            let cont = l as f64 * c * r * fe / (fe * fl + c * r * (fe + fl));
            let mut prev = f64::INFINITY;
            for ell in 0..=l {
                let cur = latency(ell, fe, r, &d).total;
                if (ell as f64) <= cont.floor() {
                    prop_assert!(cur < prev);
                } else if (ell as f64) >= cont.ceil() + 1.0 {
                    prop_assert!(cur > prev);
                }
                prev = cur;
            }
        }
    }
}
