//! Offload sizes and edge-CPU shares for fixed uplink rates.
//!
//! For fixed rate `R` and edge share `f^e`, a device's latency is minimized
//! where local and edge latency balance, giving a closed-form offload size.
//! Substituting it back yields a latency that is decreasing in `f^e`, so the
//! min-max allocation reduces to a bisection on the target latency `t`, each
//! probe asking whether the minimal shares meeting `t` fit in the budget.

use serde::{Deserialize, Serialize};

use crate::config::{ScenarioConfig, WdParams};
use crate::error::{check_len, Result};
use crate::model::{self, latency, LatencyReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputePlan {
    /// Offloaded bits per WD.
    pub offload_bits: Vec<u64>,
    /// Edge CPU share per WD (cycles/s).
    pub edge_cpu: Vec<f64>,
    /// Worst-case latency `max_k D_k` under the rates the plan was built for.
    pub objective: f64,
}

impl ComputePlan {
    /// Everything computed locally.
    pub fn all_local(cfg: &ScenarioConfig) -> Self {
        Self {
            offload_bits: vec![0; cfg.num_wds()],
            edge_cpu: vec![0.0; cfg.num_wds()],
            objective: cfg.all_local_latency(),
        }
    }

    /// Edge computing time `ell_k c_k / f_k^e` (zero without offloading).
    pub fn edge_compute_time(&self, k: usize, cfg: &ScenarioConfig) -> f64 {
        let ell = self.offload_bits[k];
        if ell == 0 {
            0.0
        } else if self.edge_cpu[k] <= 0.0 {
            f64::INFINITY
        } else {
            ell as f64 * cfg.wds[k].complexity / self.edge_cpu[k]
        }
    }

    /// WDs with a positive offload.
    pub fn offloading(&self) -> impl Iterator<Item = usize> + '_ {
        self.offload_bits
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0)
            .map(|(k, _)| k)
    }

    pub fn any_offload(&self) -> bool {
        self.offload_bits.iter().any(|&l| l > 0)
    }

    /// Checks `0 <= ell_k <= L_k`, `f_k^e >= 0` and the CPU budget with a
    /// relative slack `tol`.
    pub fn is_feasible(&self, cfg: &ScenarioConfig, tol: f64) -> bool {
        self.offload_bits.len() == cfg.num_wds()
            && self.edge_cpu.len() == cfg.num_wds()
            && self.offload_bits.iter().zip(&cfg.wds).all(|(&l, wd)| l <= wd.data_bits)
            && self.edge_cpu.iter().all(|&f| f >= 0.0 && f.is_finite())
            && self.edge_cpu.iter().sum::<f64>() <= cfg.edge_cpu_total * (1.0 + tol)
    }

    pub fn report(&self, rates: &[f64], cfg: &ScenarioConfig) -> Result<LatencyReport> {
        model::report(self, rates, cfg)
    }
}

/// Balancing offload size before rounding; `None` when `R` or `f^e` is zero.
pub fn continuous_offload(rate: f64, edge_cpu: f64, wd: &WdParams) -> Option<f64> {
    if !(rate > 0.0 && edge_cpu > 0.0) {
        return None;
    }
    let (l, c, fl) = (wd.data_bits as f64, wd.complexity, wd.local_cpu);
    let cr = c * rate;
    Some(l * cr * edge_cpu / (edge_cpu * fl + cr * (edge_cpu + fl)))
}

/// Integer offload minimizing the WD's latency: the floor or ceiling of the
/// balancing point, whichever is faster (floor on ties). Zero rate or zero
/// edge CPU forces all-local execution.
pub fn optimal_offload(rate: f64, edge_cpu: f64, wd: &WdParams) -> u64 {
    let Some(cont) = continuous_offload(rate, edge_cpu, wd) else {
        return 0;
    };
    let lo = (cont.floor() as u64).min(wd.data_bits);
    let hi = (cont.ceil() as u64).min(wd.data_bits);
    if lo == hi {
        return lo;
    }
    let d_lo = latency(lo, edge_cpu, rate, wd).total;
    let d_hi = latency(hi, edge_cpu, rate, wd).total;
    if d_hi < d_lo {
        hi
    } else {
        lo
    }
}

/// Latency reachable with unlimited edge CPU, `L c / (f^l + c R)`.
pub fn latency_floor(rate: f64, wd: &WdParams) -> f64 {
    wd.data_bits as f64 * wd.complexity / (wd.local_cpu + wd.complexity * rate.max(0.0))
}

/// Smallest edge share meeting target `t` with the balancing (continuous)
/// offload, or `None` when `t` is at or below the unlimited-CPU floor.
///
/// The target is met iff `L c^2 R + L c f^e <= t (f^e f^l + c R (f^e + f^l))`,
/// which is linear in `f^e`.
pub fn min_edge_cpu(t: f64, rate: f64, wd: &WdParams) -> Option<f64> {
    let (l, c, fl) = (wd.data_bits as f64, wd.complexity, wd.local_cpu);
    let lc = l * c;
    if t * fl >= lc {
        return Some(0.0);
    }
    if !(rate > 0.0) {
        return None;
    }
    let cr = c * rate;
    let denom = t * (fl + cr) - lc;
    if denom <= 0.0 {
        return None;
    }
    Some(cr * (lc - t * fl) / denom)
}

/// Min-max allocation of offload sizes and edge CPU for fixed rates.
///
/// WDs with zero rate stay all-local and take no edge CPU. Capacity left
/// after the bisection is shared in proportion to the minimal shares (evenly
/// when those are all zero).
pub fn allocate(rates: &[f64], cfg: &ScenarioConfig) -> Result<ComputePlan> {
    check_len("rates", cfg.num_wds(), rates.len())?;
    let wds = &cfg.wds;
    let pool: Vec<usize> = (0..wds.len())
        .filter(|&k| rates[k] > 0.0 && wds[k].data_bits > 0)
        .collect();

    let mut t_lo = wds
        .iter()
        .zip(rates)
        .map(|(wd, &r)| latency_floor(r, wd))
        .fold(0.0, f64::max);
    let mut t_hi = cfg.all_local_latency();
    let feasible = |t: f64| {
        let mut total = 0.0;
        for (k, wd) in wds.iter().enumerate() {
            match min_edge_cpu(t, rates[k], wd) {
                Some(f) => total += f,
                None => return false,
            }
        }
        total <= cfg.edge_cpu_total
    };
    let mut iters = 0;
    while t_hi - t_lo > cfg.solver.eps_alloc * t_hi && iters < cfg.solver.max_bisection {
        let mid = 0.5 * (t_lo + t_hi);
        if feasible(mid) {
            t_hi = mid;
        } else {
            t_lo = mid;
        }
        iters += 1;
    }

    let mut edge_cpu = vec![0.0; wds.len()];
    for &k in &pool {
        edge_cpu[k] = min_edge_cpu(t_hi, rates[k], &wds[k]).unwrap_or(0.0);
    }
    let used: f64 = edge_cpu.iter().sum();
    let leftover = cfg.edge_cpu_total - used;
    if leftover > 0.0 && !pool.is_empty() {
        if used > 0.0 {
            for &k in &pool {
                edge_cpu[k] += leftover * edge_cpu[k] / used;
            }
        } else {
            for &k in &pool {
                edge_cpu[k] = cfg.edge_cpu_total / pool.len() as f64;
            }
        }
    }
    // keep the budget exact under rounding of the proportional split
    let total: f64 = edge_cpu.iter().sum();
    if total > cfg.edge_cpu_total {
        let s = cfg.edge_cpu_total / total;
        edge_cpu.iter_mut().for_each(|f| *f *= s);
    }

    let offload_bits: Vec<u64> = (0..wds.len())
        .map(|k| optimal_offload(rates[k], edge_cpu[k], &wds[k]))
        .collect();
    let mut plan = ComputePlan {
        offload_bits,
        edge_cpu,
        objective: 0.0,
    };
    plan.objective = plan.report(rates, cfg)?.objective;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wd(l: u64, c: f64, fl: f64) -> WdParams {
        WdParams {
            position: [0.0; 3],
            data_bits: l,
            complexity: c,
            local_cpu: fl,
        }
    }

    fn brute_force(rate: f64, fe: f64, d: &WdParams) -> (u64, f64) {
        (0..=d.data_bits)
            .map(|l| (l, latency(l, fe, rate, d).total))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    }

    #[test]
    fn large_edge_cpu_limit() {
        // f^e -> inf: L c R / (f^l + c R) = 50
        let d = wd(100, 1.0, 1.0);
        let cont = continuous_offload(1.0, 1e12, &d).unwrap();
        assert!((cont - 50.0).abs() < 1e-6);
    }

    #[test]
    fn unit_instance_matches_brute_force() {
        let d = wd(100, 1.0, 1.0);
        let cont = continuous_offload(1.0, 1.0, &d).unwrap();
        assert!((cont - 100.0 / 3.0).abs() < 1e-12);
        let got = optimal_offload(1.0, 1.0, &d);
        assert!(got == 33 || got == 34);
        let (_, best) = brute_force(1.0, 1.0, &d);
        assert_eq!(latency(got, 1.0, 1.0, &d).total, best);
        // 33 bits: max(67, 66) = 67; 34 bits: max(66, 68) = 68
        assert_eq!(got, 33);
    }

    #[test]
    fn degenerate_offloads() {
        assert_eq!(optimal_offload(1.0, 1.0, &wd(0, 1.0, 1.0)), 0);
        assert_eq!(optimal_offload(0.0, 1.0, &wd(10, 1.0, 1.0)), 0);
        assert_eq!(optimal_offload(1.0, 0.0, &wd(10, 1.0, 1.0)), 0);
    }

    #[test]
    fn min_edge_cpu_boundaries() {
        let d = wd(1000, 2.0, 10.0);
        let all_local = 1000.0 * 2.0 / 10.0;
        assert_eq!(min_edge_cpu(all_local, 5.0, &d), Some(0.0));
        let floor = latency_floor(5.0, &d);
        assert!((floor - 2000.0 / 20.0).abs() < 1e-12);
        assert_eq!(min_edge_cpu(floor * 0.999, 5.0, &d), None);
        assert_eq!(min_edge_cpu(floor, 5.0, &d), None);
        assert!(min_edge_cpu(floor * 1.001, 5.0, &d).is_some());
    }

    fn balanced_latency(fe: f64, rate: f64, d: &WdParams) -> f64 {
        let (l, c, fl) = (d.data_bits as f64, d.complexity, d.local_cpu);
        l * c * (fe + c * rate) / (fe * (fl + c * rate) + c * rate * fl)
    }

    #[test]
    fn min_edge_cpu_agrees_with_bisection() {
        let d = wd(350_000, 800.0, 6e8);
        let rate = 2.5e6;
        for frac in [0.3, 0.5, 0.8, 0.95] {
            let t = latency_floor(rate, &d) + frac * (d.data_bits as f64 * 800.0 / 6e8 - latency_floor(rate, &d));
            let closed = min_edge_cpu(t, rate, &d).unwrap();
            let (mut lo, mut hi) = (0.0, 1e15);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if balanced_latency(mid, rate, &d) <= t {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            assert!((closed - hi).abs() <= 1e-6 * hi, "{closed} vs {hi}");
        }
    }

    #[test]
    fn symmetric_wds_split_evenly() {
        let mut cfg = ScenarioConfig::default();
        cfg.wds[1] = cfg.wds[0].clone();
        let plan = allocate(&[3e6, 3e6], &cfg).unwrap();
        assert!((plan.edge_cpu[0] - plan.edge_cpu[1]).abs() <= 1e-9 * plan.edge_cpu[0]);
        assert_eq!(plan.offload_bits[0], plan.offload_bits[1]);
        assert!(plan.is_feasible(&cfg, 1e-12));
    }

    #[test]
    fn zero_rate_wd_stays_local() {
        let cfg = ScenarioConfig::default();
        let plan = allocate(&[0.0, 3e6], &cfg).unwrap();
        assert_eq!(plan.offload_bits[0], 0);
        assert_eq!(plan.edge_cpu[0], 0.0);
        assert!(plan.offload_bits[1] > 0);
        let local0 = 250e3 * 700.0 / 4e8;
        assert!(plan.objective >= local0);
    }

    pub(crate) fn grid_objective(rates: &[f64], cfg: &ScenarioConfig, steps: usize) -> f64 {
        (0..=steps)
            .map(|i| {
                let f1 = cfg.edge_cpu_total * i as f64 / steps as f64;
                let f2 = cfg.edge_cpu_total - f1;
                [f1, f2]
                    .iter()
                    .enumerate()
                    .map(|(k, &f)| latency(optimal_offload(rates[k], f, &cfg.wds[k]), f, rates[k], &cfg.wds[k]).total)
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn two_wd_matches_grid() {
        let cfg = ScenarioConfig::default();
        for rates in [[1e6, 4e6], [5e5, 5e5], [8e6, 2e5]] {
            let plan = allocate(&rates, &cfg).unwrap();
            let grid = grid_objective(&rates, &cfg, 10_000);
            assert!(plan.objective <= grid * (1.0 + 1e-3), "{} vs {grid}", plan.objective);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn offload_matches_brute_force(
            l in 0u64..500, c in 0.1f64..10.0, fl in 0.1f64..10.0,
            fe in 0.1f64..50.0, r in 0.1f64..50.0
        ) {
            let d = wd(l, c, fl);
            let got = optimal_offload(r, fe, &d);
            let (_, best) = brute_force(r, fe, &d);
            prop_assert_eq!(latency(got, fe, r, &d).total, best);
        }

        #[test]
        fn objective_monotone_in_budget_and_rate(
            r1 in 1e5f64..1e7, r2 in 1e5f64..1e7, budget in 1e8f64..1e11, bump in 1.0f64..4.0
        ) {
            let mut cfg = ScenarioConfig::default();
            cfg.edge_cpu_total = budget;
            let base = allocate(&[r1, r2], &cfg).unwrap().objective;
            let faster = allocate(&[r1 * bump, r2], &cfg).unwrap().objective;
            cfg.edge_cpu_total = budget * bump;
            let richer = allocate(&[r1, r2], &cfg).unwrap().objective;
            // bisection tolerance plus integer rounding
            let slack = 2.0 * cfg.solver.eps_alloc * base;
            prop_assert!(faster <= base + slack);
            prop_assert!(richer <= base + slack);
        }

        #[test]
        fn plan_is_feasible_and_balanced(
            r1 in 1e5f64..1e7, r2 in 1e5f64..1e7, budget in 1e8f64..1e11
        ) {
            let mut cfg = ScenarioConfig::default();
            cfg.edge_cpu_total = budget;
            let rates = [r1, r2];
            let plan = allocate(&rates, &cfg).unwrap();
            prop_assert!(plan.is_feasible(&cfg, 1e-12));
            for k in 0..2 {
                let d = &cfg.wds[k];
                let row = latency(plan.offload_bits[k], plan.edge_cpu[k], rates[k], d);
                // one bit moves local latency by c/f^l and edge latency by 1/R + c/f^e
                let bit = d.complexity / d.local_cpu + 1.0 / rates[k] + d.complexity / plan.edge_cpu[k];
                prop_assert!((row.local - row.edge).abs() <= bit * (1.0 + 1e-9));
            }
        }
    }
}
