//! Reflect beamforming: IRS phases for fixed detectors and compute plan.
//!
//! With `a_kj = sqrt(P) conj(h_r,j) .* (G^H w_k)` and `d_kj = sqrt(P) w_k^H h_d,j`,
//! the received power of WD `j` at detector `k` is `|a_kj^H v + d_kj|^2`, a
//! quadratic form `v^H C_kj v + 2 Re(v^H u_kj) + |d_kj|^2` with `C = a a^H`
//! and `u = a d`. Two updates are provided:
//!
//! - SDR: lift `[v; 1]` to a PSD matrix with unit diagonal, bisect on the edge
//!   latency over the relaxed feasibility problem, then recover unit-modulus
//!   phases by Gaussian randomization.
//! - SCA: linearize the concave signal term at the current phases, solve the
//!   resulting convex min-max with `|v_n| <= 1`, and project back.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{cn01, CMat, CVec, ChannelSet, PhaseVector};
use crate::compute_alloc::ComputePlan;
use crate::config::ScenarioConfig;
use crate::conic::{AffineExpr, ConicProblem, Constraint, DualValue, Feasibility, Status, SymMatrix};
use crate::error::{check_len, Result};
use crate::model::{edge_latency, rate};
use crate::mud::{sinr_threshold, Probe, BRACKET_OFFSET};
use crate::C64;

/// Eigenvalue ratio below which a lifted matrix counts as rank one.
pub const RANK_ONE_RATIO: f64 = 1e-6;

/// Quadratic-form data of every (detector, WD) pair for one set of detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForms {
    wds: usize,
    elements: usize,
    /// `a_kj`, row-major in `(k, j)`.
    a: Vec<CVec>,
    d: Vec<C64>,
    /// `sigma^2 ||w_k||^2 + sigma_ICI^2`.
    noise: Vec<f64>,
}

/// Builds the forms for detectors `w`.
pub fn build_forms(channels: &ChannelSet, w: &crate::mud::MudMatrix, cfg: &ScenarioConfig) -> Result<QuadraticForms> {
    let dims = channels.dims();
    check_len("detector count", dims.wds, w.len())?;
    let sqrt_p = cfg.transmit_power_mw.sqrt();
    let mut a = Vec::with_capacity(dims.wds * dims.wds);
    let mut d = Vec::with_capacity(dims.wds * dims.wds);
    let mut noise = Vec::with_capacity(dims.wds);
    for k in 0..dims.wds {
        let wk = w.column(k);
        check_len("detector vector", dims.receive_dim(), wk.len())?;
        let gw = channels.cascade().ad_mul(wk);
        for j in 0..dims.wds {
            let hr = channels.reflect(j);
            a.push(CVec::from_iterator(
                hr.len(),
                hr.iter().zip(gw.iter()).map(|(h, g)| h.conj() * g * sqrt_p),
            ));
            d.push(wk.dotc(channels.direct(j)) * sqrt_p);
        }
        noise.push(cfg.noise_power_mw * wk.norm_squared() + cfg.ici_power_mw);
    }
    Ok(QuadraticForms {
        wds: dims.wds,
        elements: dims.reflect_dim(),
        a,
        d,
        noise,
    })
}

impl QuadraticForms {
    pub fn wds(&self) -> usize {
        self.wds
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    pub fn a(&self, k: usize, j: usize) -> &CVec {
        &self.a[k * self.wds + j]
    }

    pub fn d(&self, k: usize, j: usize) -> C64 {
        self.d[k * self.wds + j]
    }

    pub fn noise(&self, k: usize) -> f64 {
        self.noise[k]
    }

    /// `C_kj = a_kj a_kj^H`.
    pub fn c(&self, k: usize, j: usize) -> CMat {
        let a = self.a(k, j);
        a * a.adjoint()
    }

    /// `u_kj = a_kj d_kj`.
    pub fn u(&self, k: usize, j: usize) -> CVec {
        self.a(k, j) * self.d(k, j)
    }

    /// `[[C, u], [u^H, 0]]`.
    pub fn lifted(&self, k: usize, j: usize) -> CMat {
        let n = self.elements;
        let mut r = CMat::zeros(n + 1, n + 1);
        r.view_mut((0, 0), (n, n)).copy_from(&self.c(k, j));
        let u = self.u(k, j);
        r.view_mut((0, n), (n, 1)).copy_from(&u);
        r.view_mut((n, 0), (1, n)).copy_from(&u.adjoint());
        r
    }

    /// `a_kj^H v + d_kj`, i.e. `sqrt(P) w_k^H h_j(v)`.
    pub fn amplitude(&self, v: &CVec, k: usize, j: usize) -> C64 {
        self.a(k, j).dotc(v) + self.d(k, j)
    }

    /// `P |w_k^H h_j(v)|^2`.
    pub fn power(&self, v: &CVec, k: usize, j: usize) -> f64 {
        self.amplitude(v, k, j).norm_sqr()
    }

    pub fn sinr(&self, v: &CVec, k: usize) -> f64 {
        let signal = self.power(v, k, k);
        let interference: f64 = (0..self.wds).filter(|&j| j != k).map(|j| self.power(v, k, j)).sum();
        let denom = interference + self.noise[k];
        if signal == 0.0 {
            0.0
        } else if denom > 0.0 {
            signal / denom
        } else {
            f64::INFINITY
        }
    }

    /// `max_k D_k^e` over offloading WDs with phases `v`.
    pub fn edge_objective(&self, v: &CVec, plan: &ComputePlan, cfg: &ScenarioConfig) -> f64 {
        plan.offloading()
            .map(|k| {
                let r = rate(self.sinr(v, k), cfg);
                edge_latency(plan.offload_bits[k], plan.edge_cpu[k], r, &cfg.wds[k])
            })
            .fold(0.0, f64::max)
    }
}

fn thresholds(t: f64, plan: &ComputePlan, cfg: &ScenarioConfig) -> Vec<f64> {
    (0..cfg.num_wds())
        .map(|k| sinr_threshold(t, plan.offload_bits[k], plan.edge_compute_time(k, cfg), cfg))
        .collect()
}

fn largest_edge_compute_time(plan: &ComputePlan, cfg: &ScenarioConfig) -> f64 {
    plan.offloading()
        .map(|k| plan.edge_compute_time(k, cfg))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// SDR

/// Real symmetric embedding `[[Re Q, -Im Q], [Im Q, Re Q]]` of a Hermitian matrix.
fn real_embedding(q: &CMat) -> DMatrix<f64> {
    let n = q.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let z = q[(r % n, c % n)];
        match (r < n, c < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Checks attached to a feasible lifted solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdrCertificate {
    pub t: f64,
    /// Smallest eigenvalue of the returned matrix.
    pub min_eig: f64,
    /// `max_n |V_nn - 1|`.
    pub diag_error: f64,
    /// Most negative normalized SINR-constraint residual (0 if all hold).
    pub max_residual: f64,
}

#[derive(Debug, Clone)]
pub struct LiftedSolution {
    /// Hermitian PSD matrix of size `IN + 1` with unit diagonal.
    pub v: CMat,
    /// Optimal common margin of the normalized SINR constraints.
    pub margin: f64,
    pub certificate: SdrCertificate,
}

/// SINR constraint of WD `k` in lifted form: `Tr(Q V) >= b`, scaled to unit size.
fn lifted_row(forms: &QuadraticForms, alpha: f64, k: usize) -> (CMat, f64) {
    let mut q = forms.lifted(k, k);
    let mut b = -forms.d(k, k).norm_sqr() + alpha * forms.noise(k);
    for j in (0..forms.wds).filter(|&j| j != k) {
        q -= forms.lifted(k, j) * C64::new(alpha, 0.0);
        b += alpha * forms.d(k, j).norm_sqr();
    }
    let scale = q.norm() + b.abs();
    if scale > 0.0 {
        (q.unscale(scale), b / scale)
    } else {
        (q, b)
    }
}

/// Relaxed feasibility of edge-latency target `t`.
///
/// Solves the max-margin problem `max s` over PSD `V` with unit diagonal and
/// `Tr(Q_k V) - b_k >= s` through its dual LMI
///
/// ```text
///   minimize 2 sum(mu) - b' nu
///   s.t.     sum_n mu_n E_n - sum_k nu_k phi(Q_k)/2 >= 0,  nu >= 0,  sum(nu) = 1,
/// ```
///
/// where `phi` is the real embedding. `V` is read off the dual matrix.
pub fn sdr_feasible(
    t: f64,
    forms: &QuadraticForms,
    plan: &ComputePlan,
    cfg: &ScenarioConfig,
) -> Result<Feasibility<LiftedSolution>> {
    Ok(sdr_probe(t, forms, plan, cfg)?.0)
}

/// Feasibility plus the margin whenever the solve succeeded.
fn sdr_probe(
    t: f64,
    forms: &QuadraticForms,
    plan: &ComputePlan,
    cfg: &ScenarioConfig,
) -> Result<(Feasibility<LiftedSolution>, Option<f64>)> {
    check_len("offload sizes", forms.wds, plan.offload_bits.len())?;
    let n1 = forms.elements + 1;
    let alphas = thresholds(t, plan, cfg);
    let active: Vec<usize> = plan.offloading().collect();
    if active.iter().any(|&k| !alphas[k].is_finite()) {
        return Ok((Feasibility::Infeasible, None));
    }
    let rows: Vec<(CMat, f64)> = active.iter().map(|&k| lifted_row(forms, alphas[k], k)).collect();

    let nv = n1 + rows.len();
    let mut c = DVector::zeros(nv);
    let mut terms = Vec::with_capacity(nv);
    for i in 0..n1 {
        c[i] = 2.0;
        terms.push((
            i,
            SymMatrix::Sparse {
                dim: 2 * n1,
                entries: vec![(i, i, 1.0), (i + n1, i + n1, 1.0)],
            },
        ));
    }
    for (r, (q, b)) in rows.iter().enumerate() {
        c[n1 + r] = -b;
        terms.push((n1 + r, SymMatrix::Dense(real_embedding(q) * -0.5)));
    }
    let mut p = ConicProblem::new(nv).minimize(c);
    p.push(Constraint::Psd {
        constant: SymMatrix::Sparse {
            dim: 2 * n1,
            entries: Vec::new(),
        },
        terms,
    });
    let mut sum = AffineExpr::constant(-1.0);
    for r in 0..rows.len() {
        sum = sum.term(n1 + r, 1.0);
        p.push(Constraint::NonNeg(AffineExpr::var(n1 + r)));
    }
    if !rows.is_empty() {
        p.push(Constraint::Zero(sum));
    }

    let out = p.solve(cfg.solver.feas_tol)?;
    if out.status != Status::Optimal {
        return Ok((Feasibility::SolverFailure, None));
    }
    let margin = out.objective;
    if margin < 0.0 {
        return Ok((Feasibility::Infeasible, Some(margin)));
    }
    let Some(DualValue::Matrix(z)) = out.duals.first() else {
        return Ok((Feasibility::SolverFailure, None));
    };
    let v = lifted_from_dual(z, n1);
    let diag_error = (0..n1).map(|i| (v[(i, i)].re - 1.0).abs()).fold(0.0, f64::max);
    let v = unit_diagonal(&v);
    let min_eig = SymmetricEigen::new(v.clone()).eigenvalues.min();
    let max_residual = rows
        .iter()
        .map(|(q, b)| (v.dotc(q).re - b).min(0.0))
        .fold(0.0, f64::min)
        .abs();
    let sol = Feasibility::Feasible(LiftedSolution {
        v,
        margin,
        certificate: SdrCertificate {
            t,
            min_eig,
            diag_error,
            max_residual,
        },
    });
    Ok((sol, Some(margin)))
}

/// `V = (Z11 + Z22)/2 + j (Z21 - Z12)/2`.
fn lifted_from_dual(z: &DMatrix<f64>, n: usize) -> CMat {
    CMat::from_fn(n, n, |r, c| {
        C64::new(
            0.5 * (z[(r, c)] + z[(r + n, c + n)]),
            0.5 * (z[(r + n, c)] - z[(r, c + n)]),
        )
    })
}

/// `D^{-1/2} V D^{-1/2}`; keeps PSD and removes solver-level diagonal drift.
fn unit_diagonal(v: &CMat) -> CMat {
    let s: Vec<f64> = (0..v.nrows())
        .map(|i| 1.0 / v[(i, i)].re.max(f64::MIN_POSITIVE).sqrt())
        .collect();
    let mut out = CMat::from_fn(v.nrows(), v.ncols(), |r, c| v[(r, c)] * (s[r] * s[c]));
    out = (&out + out.adjoint()) * C64::new(0.5, 0.0);
    for i in 0..out.nrows() {
        out[(i, i)] = C64::new(1.0, 0.0);
    }
    out
}

/// Unit-modulus phases from a lifted vector, de-homogenized by its last entry.
fn dehomogenize(xi: &CVec, fallback: &CVec) -> CVec {
    let n = xi.len() - 1;
    let last = xi[n].arg();
    CVec::from_iterator(
        n,
        (0..n).map(|i| {
            if xi[i].norm() > 0.0 {
                C64::from_polar(1.0, xi[i].arg() - last)
            } else {
                fallback[i]
            }
        }),
    )
}

/// Gaussian randomization.
///
/// Draws `num_draws` vectors with covariance `V`, maps each to unit-modulus
/// phases and returns the candidate with the smallest `max_k D_k^e`. A
/// rank-one `V` is mapped to its phases directly.
pub fn randomize<R: Rng + ?Sized>(
    v: &CMat,
    forms: &QuadraticForms,
    plan: &ComputePlan,
    cfg: &ScenarioConfig,
    num_draws: usize,
    rng: &mut R,
) -> CVec {
    let n1 = v.nrows();
    let ones = CVec::from_element(n1 - 1, C64::new(1.0, 0.0));
    let eig = SymmetricEigen::new(v.clone());
    let mut order: Vec<usize> = (0..n1).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let l1 = eig.eigenvalues[order[0]].max(0.0);
    let l2 = if n1 > 1 {
        eig.eigenvalues[order[1]].max(0.0)
    } else {
        0.0
    };
    if l2 <= RANK_ONE_RATIO * l1 || num_draws == 0 {
        return dehomogenize(&eig.eigenvectors.column(order[0]).into_owned(), &ones);
    }

    let root = &eig.eigenvectors * CMat::from_diagonal(&eig.eigenvalues.map(|l| C64::new(l.max(0.0).sqrt(), 0.0)));
    let candidates: Vec<CVec> = (0..num_draws)
        .map(|_| {
            let r = CVec::from_iterator(n1, (0..n1).map(|_| cn01(rng)));
            dehomogenize(&(&root * r), &ones)
        })
        .collect();
    let best = candidates
        .par_iter()
        .enumerate()
        .map(|(i, c)| (forms.edge_objective(c, plan, cfg), i))
        .reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );
    candidates.into_iter().nth(best.1).unwrap_or(ones)
}

#[derive(Debug, Clone)]
pub struct ReflectOutcome {
    /// `max_k D_k^e` recomputed from the returned phases.
    pub t: f64,
    pub theta: PhaseVector,
    /// Incumbent latency before the update.
    pub t_before: f64,
    /// Largest target certified infeasible for the relaxation (a lower bound
    /// on every unit-modulus solution).
    pub relaxed_t: f64,
    pub probes: Vec<Probe>,
    pub certificates: Vec<SdrCertificate>,
    /// False when the incumbent phases were kept.
    pub improved: bool,
}

/// SDR update with bisection and Gaussian randomization.
///
/// The search brackets the smallest target whose relaxation is feasible to
/// relative width `eps_mud`. The incumbent is returned unchanged when the
/// relaxation is already infeasible one tolerance step below it.
pub fn optimize_reflect_sdr<R: Rng + ?Sized>(
    forms: &QuadraticForms,
    theta: &PhaseVector,
    plan: &ComputePlan,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<ReflectOutcome> {
    check_len("phase vector", forms.elements, theta.len())?;
    let v_inc = theta.coefficients();
    let t_inc = forms.edge_objective(&v_inc, plan, cfg);
    let t_c = largest_edge_compute_time(plan, cfg);
    let mut out = ReflectOutcome {
        t: t_inc,
        theta: theta.clone(),
        t_before: t_inc,
        relaxed_t: t_c,
        probes: Vec::new(),
        certificates: Vec::new(),
        improved: false,
    };
    if !plan.any_offload() || forms.elements == 0 {
        return Ok(out);
    }

    let probe = |t: f64, out: &mut ReflectOutcome| -> Result<(Option<LiftedSolution>, Option<f64>)> {
        let (f, margin) = sdr_probe(t, forms, plan, cfg)?;
        out.probes.push(Probe {
            t,
            feasible: f.is_feasible(),
            solver_failure: matches!(f, Feasibility::SolverFailure),
        });
        match f {
            Feasibility::Feasible(s) => {
                out.certificates.push(s.certificate);
                Ok((Some(s), margin))
            }
            Feasibility::Infeasible => {
                out.relaxed_t = out.relaxed_t.max(t);
                Ok((None, margin))
            }
            Feasibility::SolverFailure => Ok((None, None)),
        }
    };

    let floor = t_c + BRACKET_OFFSET;
    let eps = cfg.solver.eps_mud;
    let mut lo = floor;
    let mut hi;
    let mut best;
    let mut m_hi;
    if t_inc.is_finite() {
        // One tolerance step below the incumbent: late in an alternation
        // this is usually infeasible and ends the update.
        hi = t_inc - eps * t_inc;
        if hi <= floor {
            return Ok(out);
        }
        let (s, m) = probe(hi, &mut out)?;
        let Some(s) = s else {
            return Ok(out);
        };
        best = s;
        m_hi = m;
    } else {
        hi = floor + 1.0;
        let mut found = None;
        for _ in 0..cfg.solver.max_bisection {
            let (s, m) = probe(hi, &mut out)?;
            if let Some(s) = s {
                found = Some((s, m));
                break;
            }
            lo = hi;
            hi = t_c + 2.0 * (hi - t_c);
        }
        let Some((s, m)) = found else {
            return Ok(out);
        };
        best = s;
        m_hi = m;
    }

    // Margins are increasing in t, so false position (Illinois variant)
    // locates the sign change; a bisection step is forced whenever two
    // probes fail to halve the bracket.
    let mut m_lo = None;
    if lo == floor && hi - lo > eps * hi {
        let (s, m) = probe(lo, &mut out)?;
        if let Some(s) = s {
            best = s;
            hi = lo;
        }
        m_lo = m;
    }
    let mut last_side = 0i8;
    let mut width_two_ago = f64::INFINITY;
    let mut width_prev = hi - lo;
    let mut iters = 0;
    while hi - lo > eps * hi && iters < cfg.solver.max_bisection {
        let width = hi - lo;
        let stalled = width > 0.5 * width_two_ago;
        let t = match (m_lo, m_hi) {
            (Some(a), Some(b)) if !stalled && a < 0.0 && b > a => {
                let pad = 0.01 * eps * hi;
                (lo + width * (-a) / (b - a)).clamp(lo + pad, hi - pad)
            }
            _ => 0.5 * (lo + hi),
        };
        let (s, m) = probe(t, &mut out)?;
        match s {
            Some(s) => {
                hi = t;
                best = s;
                m_hi = m;
                if last_side == 1 {
                    m_lo = m_lo.map(|a| 0.5 * a);
                }
                last_side = 1;
            }
            None => {
                lo = t;
                m_lo = m;
                if last_side == -1 {
                    m_hi = m_hi.map(|b| 0.5 * b);
                }
                last_side = -1;
            }
        }
        width_two_ago = width_prev;
        width_prev = width;
        iters += 1;
    }

    let v = randomize(&best.v, forms, plan, cfg, cfg.solver.num_draws, rng);
    let t_new = forms.edge_objective(&v, plan, cfg);
    if t_new < t_inc {
        out.t = t_new;
        out.theta = PhaseVector::from_coefficients(&v);
        out.improved = true;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// SCA

fn alpha_of(t: f64, plan: &ComputePlan, cfg: &ScenarioConfig, k: usize) -> f64 {
    let a = sinr_threshold(t, plan.offload_bits[k], plan.edge_compute_time(k, cfg), cfg);
    if a.is_finite() {
        a
    } else {
        f64::MAX
    }
}

/// `F_k = alpha_k(t) (interference + noise) - signal`; nonpositive exactly
/// when WD `k` meets edge latency `t`.
pub fn f_value(v: &CVec, forms: &QuadraticForms, plan: &ComputePlan, t: f64, cfg: &ScenarioConfig, k: usize) -> f64 {
    let alpha = alpha_of(t, plan, cfg, k);
    let interference: f64 = (0..forms.wds).filter(|&j| j != k).map(|j| forms.power(v, k, j)).sum();
    alpha * (interference + forms.noise(k)) - forms.power(v, k, k)
}

/// `F_k` with the signal term replaced by its tangent at `v_prev`; a convex
/// majorant of `F_k` that touches it at `v_prev`.
pub fn f_upper(
    v: &CVec,
    v_prev: &CVec,
    forms: &QuadraticForms,
    plan: &ComputePlan,
    t: f64,
    cfg: &ScenarioConfig,
    k: usize,
) -> f64 {
    let alpha = alpha_of(t, plan, cfg, k);
    let interference: f64 = (0..forms.wds).filter(|&j| j != k).map(|j| forms.power(v, k, j)).sum();
    alpha * (interference + forms.noise(k)) - signal_tangent(v, v_prev, forms, k)
}

/// `q(v0) + 2 Re((C v0 + u)^H (v - v0))` for the signal form of WD `k`.
fn signal_tangent(v: &CVec, v0: &CVec, forms: &QuadraticForms, k: usize) -> f64 {
    let e0 = forms.amplitude(v0, k, k);
    let a = forms.a(k, k);
    let step = a.dotc(&(v - v0));
    e0.norm_sqr() + 2.0 * (e0.conj() * step).re
}

#[derive(Debug, Clone)]
pub struct ScaStep {
    /// Phases after the step (the previous ones if rejected).
    pub v: CVec,
    /// Optimal value of the surrogate problem (noise-normalized units).
    pub z: f64,
    pub t_before: f64,
    pub t_after: f64,
    pub accepted: bool,
    pub solver_failure: bool,
}

/// Number of halvings tried when the projected step does not decrease the
/// latency.
const SCA_BACKTRACK: usize = 6;

/// One SCA update at target `t` (normally the current `max_k D_k^e`).
pub fn sca_step(
    v_prev: &CVec,
    forms: &QuadraticForms,
    plan: &ComputePlan,
    t: f64,
    cfg: &ScenarioConfig,
) -> Result<ScaStep> {
    check_len("phase vector", forms.elements, v_prev.len())?;
    let n = forms.elements;
    let t_before = forms.edge_objective(v_prev, plan, cfg);
    let mut step = ScaStep {
        v: v_prev.clone(),
        z: 0.0,
        t_before,
        t_after: t_before,
        accepted: false,
        solver_failure: false,
    };
    if n == 0 || !plan.any_offload() {
        return Ok(step);
    }

    // Work in noise-normalized units so the data is O(1).
    let nref = cfg.noise_power_mw + cfg.ici_power_mw;
    let s = 1.0 / nref.sqrt();
    let zvar = 2 * n;
    let mut p =
        ConicProblem::new(2 * n + 1).minimize(DVector::from_fn(2 * n + 1, |i, _| if i == zvar { 1.0 } else { 0.0 }));

    // Re/Im of (a^H v + d) as affine expressions in [Re v; Im v].
    let amplitude = |k: usize, j: usize, scale: f64| {
        let a = forms.a(k, j);
        let d = forms.d(k, j);
        let mut re = AffineExpr::constant(scale * d.re);
        let mut im = AffineExpr::constant(scale * d.im);
        for (i, ai) in a.iter().enumerate() {
            re = re.term(i, scale * ai.re).term(n + i, scale * ai.im);
            im = im.term(n + i, scale * ai.re).term(i, -scale * ai.im);
        }
        (re, im)
    };

    for k in plan.offloading() {
        let alpha = alpha_of(t, plan, cfg, k);
        // p = z - alpha noise + tangent(v), everything scaled by 1/nref.
        let e0 = forms.amplitude(v_prev, k, k) * s;
        let d = forms.d(k, k) * s;
        let mut lin = AffineExpr::constant(-e0.norm_sqr() + 2.0 * (e0.conj() * d).re - alpha * forms.noise(k) / nref)
            .term(zvar, 1.0);
        for (i, ai) in forms.a(k, k).iter().enumerate() {
            let ai = ai * s;
            // 2 Re(conj(e0) conj(a_i) v_i)
            let g = e0.conj() * ai.conj();
            lin = lin.term(i, 2.0 * g.re).term(n + i, -2.0 * g.im);
        }
        let mut tail = Vec::new();
        let root = 2.0 * alpha.sqrt();
        for j in (0..forms.wds).filter(|&j| j != k) {
            let (re, im) = amplitude(k, j, s);
            tail.push(re.scaled(root));
            tail.push(im.scaled(root));
        }
        tail.push(lin.clone().plus(-1.0));
        p.push(Constraint::SecondOrder {
            head: lin.plus(1.0),
            tail,
        });
    }
    for i in 0..n {
        p.push(Constraint::SecondOrder {
            head: AffineExpr::constant(1.0),
            tail: vec![AffineExpr::var(i), AffineExpr::var(n + i)],
        });
    }

    let out = p.solve(cfg.solver.feas_tol)?;
    if out.status != Status::Optimal {
        step.solver_failure = true;
        return Ok(step);
    }
    step.z = out.objective;
    let x = &out.primal;
    let relaxed = CVec::from_iterator(n, (0..n).map(|i| C64::new(x[i], x[n + i])));

    let mut frac = 1.0;
    for _ in 0..=SCA_BACKTRACK {
        let trial = project(&(v_prev + (&relaxed - v_prev) * C64::new(frac, 0.0)), v_prev);
        let t_trial = forms.edge_objective(&trial, plan, cfg);
        if t_trial < t_before {
            step.v = trial;
            step.t_after = t_trial;
            step.accepted = true;
            break;
        }
        frac *= 0.5;
    }
    Ok(step)
}

/// Entrywise projection onto the unit circle; zero entries keep `fallback`.
fn project(v: &CVec, fallback: &CVec) -> CVec {
    CVec::from_iterator(
        v.len(),
        v.iter().zip(fallback.iter()).map(|(z, f)| {
            let r = z.norm();
            if r > 1e-12 {
                z / r
            } else {
                *f
            }
        }),
    )
}
