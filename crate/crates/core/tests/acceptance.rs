//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::TAU;
use std::process::ExitCode;
use std::time::Instant;

use irs_mec::channel::synthesize_seeded;
use irs_mec::compute_alloc::{allocate, optimal_offload};
use irs_mec::config::{wd_positions, WdParams};
use irs_mec::model::rates;
use irs_mec::mud::{optimize_mud, sinr_threshold};
use irs_mec::orchestrator::{run_bcd, BcdResult};
use irs_mec::reflect::{build_forms, f_upper, f_value, optimize_reflect_sdr, randomize, sdr_feasible, QuadraticForms};
use irs_mec::single_wd::solve_single;
use irs_mec::sweep::{medians, run_sweep, Method, SweepParam, SweepSpec};
use irs_mec::{CVec, ChannelSet, Complex, ComputePlan, MudMatrix, PhaseVector, ScenarioConfig, Scheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type C64 = Complex<f64>;

// Pinned tolerances.
const OFFLOAD_RUNTIME_S: f64 = 5.0;
const ALLOC_REL_TOL: f64 = 1e-3;
const ALLOC_GRID: usize = 10_000;
const PHASE_GRID: usize = 360;
const MONO_FEAS_MULT: f64 = 10.0;
const TANGENCY_TOL: f64 = 1e-9;
const GRADIENT_TOL: f64 = 1e-5;
const DIAG_TOL: f64 = 1e-6;
const LOWER_BOUND_SLACK: f64 = 1e-9;
const MIN_REDUCTION: f64 = 0.25;
const SEEDS: u64 = 20;
const BCD_RUNS: u64 = 50;
const MAX_OUTER: usize = 30;
const SLOPE_PER_DOUBLING: f64 = 0.05;
const PLATEAU_REL_TOL: f64 = 1e-3;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

type Check = fn() -> irs_mec::Result<Verdict>;

// ---------------------------------------------------------------- oracles

/// `max(D^l, D^e)` computed from scratch.
fn oracle_latency(ell: u64, fe: f64, rate: f64, wd: &WdParams) -> f64 {
    let local = (wd.data_bits - ell) as f64 * wd.complexity / wd.local_cpu;
    let edge = if ell == 0 {
        0.0
    } else {
        ell as f64 / rate + ell as f64 * wd.complexity / fe
    };
    local.max(edge)
}

/// Best integer offload from the crossing of the local and edge lines.
fn oracle_best(fe: f64, rate: f64, wd: &WdParams) -> f64 {
    let lc = wd.data_bits as f64 * wd.complexity / wd.local_cpu;
    let x = lc / (1.0 / rate + wd.complexity / fe + wd.complexity / wd.local_cpu);
    let lo = (x.floor() as u64).min(wd.data_bits);
    let hi = (x.ceil() as u64).min(wd.data_bits);
    oracle_latency(lo, fe, rate, wd).min(oracle_latency(hi, fe, rate, wd))
}

fn oracle_rate(snr: f64, cfg: &ScenarioConfig) -> f64 {
    cfg.bandwidth_hz * (1.0 + snr).log2()
}

fn random_wd<R: Rng>(rng: &mut R, max_bits: u64) -> WdParams {
    WdParams {
        position: [0.0; 3],
        data_bits: rng.random_range(0..=max_bits),
        complexity: rng.random_range(0.1..10.0),
        local_cpu: rng.random_range(0.1..10.0),
    }
}

fn unit_vector<R: Rng>(n: usize, rng: &mut R) -> CVec {
    CVec::from_iterator(n, (0..n).map(|_| C64::from_polar(1.0, rng.random_range(0.0..TAU))))
}

// ---------------------------------------------------------------- fixtures

struct Snapshot {
    cfg: ScenarioConfig,
    plan: ComputePlan,
    forms: QuadraticForms,
    theta: PhaseVector,
}

/// Random phases, MRC-based allocation and optimized detectors at defaults.
fn snapshot(seed: u64) -> irs_mec::Result<Snapshot> {
    let cfg = ScenarioConfig {
        seed,
        ..ScenarioConfig::default()
    };
    let ch = synthesize_seeded(&cfg)?;
    let theta = PhaseVector::random(cfg.reflect_dim(), &mut ChaCha8Rng::seed_from_u64(seed + 1000));
    let mrc = MudMatrix::mrc(&ch.effective_all(&theta)?);
    let plan = allocate(&rates(&ch, &theta, &mrc, &cfg)?, &cfg)?;
    let w = optimize_mud(&ch, &theta, &plan, &cfg, None)?.w;
    let forms = build_forms(&ch, &w, &cfg)?;
    Ok(Snapshot {
        cfg,
        plan,
        forms,
        theta,
    })
}

fn single_wd_cfg(elements: usize, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        seed,
        ..ScenarioConfig::default()
    };
    cfg.wds.truncate(1);
    cfg.bs_positions.truncate(1);
    cfg.irs_positions.truncate(1);
    cfg.antennas_per_bs = 1;
    cfg.elements_per_irs = elements;
    cfg
}

/// `h = h_d + G (h_r o v)` for WD 0, built from the raw blocks.
fn oracle_channel(ch: &ChannelSet, v: &CVec) -> CVec {
    ch.direct(0) + ch.cascade() * ch.reflect(0).component_mul(v)
}

// ---------------------------------------------------------------- criteria

fn offload_oracle() -> irs_mec::Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..200 {
        let wd = random_wd(&mut rng, 500);
        let rate = rng.random_range(0.1..50.0);
        let fe = rng.random_range(0.1..50.0);
        let got = optimal_offload(rate, fe, &wd);
        let best = (0..=wd.data_bits)
            .map(|l| oracle_latency(l, fe, rate, &wd))
            .fold(f64::INFINITY, f64::min);
        if oracle_latency(got, fe, rate, &wd) != best {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(verdict(
        mismatches == 0 && secs < OFFLOAD_RUNTIME_S,
        format!("200 instances, {mismatches} mismatches, {secs:.2} s"),
    ))
}

fn allocation_oracle() -> irs_mec::Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut cfg = ScenarioConfig::default();
        for wd in &mut cfg.wds {
            wd.data_bits = rng.random_range(100_000..500_000);
            wd.complexity = rng.random_range(200.0..1000.0);
            wd.local_cpu = rng.random_range(2e8..1e9);
        }
        cfg.edge_cpu_total = rng.random_range(1e9..1e11);
        let r = [rng.random_range(1e5..1e7), rng.random_range(1e5..1e7)];
        let got = allocate(&r, &cfg)?.objective;
        let total = cfg.edge_cpu_total;
        let grid = (1..ALLOC_GRID)
            .map(|i| {
                let f0 = total * i as f64 / ALLOC_GRID as f64;
                oracle_best(f0, r[0], &cfg.wds[0]).max(oracle_best(total - f0, r[1], &cfg.wds[1]))
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max((got - grid).abs() / grid);
    }
    Ok(verdict(
        worst <= ALLOC_REL_TOL,
        format!("20 instances, worst relative gap {worst:.2e}"),
    ))
}

fn phase_grid_oracle() -> irs_mec::Result<Verdict> {
    let mut worst_steps: f64 = 0.0;
    let mut min_spread = f64::INFINITY;
    let mut cases = 0;
    for elements in [1usize, 2] {
        for seed in 0..3 {
            let mut cfg = single_wd_cfg(elements, seed);
            cfg.wds[0].position = wd_positions(60.0)[0];
            let ch = synthesize_seeded(&cfg)?;
            let noise = cfg.noise_power_mw + cfg.ici_power_mw;
            let wd = &cfg.wds[0];
            let step = TAU / PHASE_GRID as f64;
            let points = PHASE_GRID.pow(elements as u32);
            let lat = |idx: usize| -> f64 {
                let v = CVec::from_iterator(
                    elements,
                    (0..elements)
                        .map(|n| C64::from_polar(1.0, ((idx / PHASE_GRID.pow(n as u32)) % PHASE_GRID) as f64 * step)),
                );
                let snr = cfg.transmit_power_mw * oracle_channel(&ch, &v).norm_squared() / noise;
                oracle_best(cfg.edge_cpu_total, oracle_rate(snr, &cfg), wd)
            };
            let values: Vec<f64> = (0..points).map(lat).collect();
            let (best_idx, best) = values
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::INFINITY), |a, (i, d)| if d < a.1 { (i, d) } else { a });
            let worst = values.iter().copied().fold(0.0, f64::max);
            min_spread = min_spread.min((worst - best) / best);
            // Largest latency change within one grid step of the grid optimum.
            let mut delta: f64 = 0.0;
            for n in 0..elements {
                let stride = PHASE_GRID.pow(n as u32);
                let digit = (best_idx / stride) % PHASE_GRID;
                for next in [(digit + 1) % PHASE_GRID, (digit + PHASE_GRID - 1) % PHASE_GRID] {
                    let idx = best_idx - digit * stride + next * stride;
                    delta = delta.max((values[idx] - best).abs());
                }
            }
            let mut candidates = vec![
                run_bcd(&ch, &cfg, Scheme::Sdr)?.report.objective,
                run_bcd(&ch, &cfg, Scheme::Sca)?.report.objective,
            ];
            candidates.push(solve_single(&ch, &cfg)?.latency.total);
            for t in candidates {
                let steps = (t - best).abs() / delta.max(f64::MIN_POSITIVE);
                worst_steps = worst_steps.max(steps);
                cases += 1;
            }
        }
    }
    Ok(verdict(
        worst_steps <= 1.0 && min_spread > 0.0,
        format!(
            "{cases} solves (sdr, sca, single-WD) on IN=1,2; worst gap {worst_steps:.3} grid steps, smallest phase sensitivity {:.2}%",
            100.0 * min_spread
        ),
    ))
}

/// Runs alternating SDR and SCA at defaults over `BCD_RUNS` seeds.
fn default_runs() -> irs_mec::Result<Vec<(Scheme, ScenarioConfig, BcdResult)>> {
    (0..BCD_RUNS)
        .map(|seed| {
            let cfg = ScenarioConfig {
                seed,
                ..ScenarioConfig::default()
            };
            let scheme = if seed % 2 == 0 { Scheme::Sdr } else { Scheme::Sca };
            let ch = synthesize_seeded(&cfg)?;
            let out = run_bcd(&ch, &cfg, scheme)?;
            Ok((scheme, cfg, out))
        })
        .collect()
}

fn monotonicity(runs: &[(Scheme, ScenarioConfig, BcdResult)]) -> Verdict {
    let mut rises = 0;
    let mut steps = 0;
    let mut sca_steps = 0;
    let mut bad_sca = 0;
    for (_, cfg, out) in runs {
        let slack = MONO_FEAS_MULT * cfg.solver.feas_tol;
        for inner in &out.trace.inner {
            for pair in inner.t.windows(2) {
                steps += 1;
                if pair[1] > pair[0] * (1.0 + slack) {
                    rises += 1;
                }
            }
            for rec in inner.sca.iter().filter(|r| r.accepted && r.z < 0.0) {
                sca_steps += 1;
                if rec.t_after >= rec.t_before {
                    bad_sca += 1;
                }
            }
        }
    }
    verdict(
        rises == 0 && bad_sca == 0,
        format!(
            "{} runs, {rises}/{steps} inner increases, {bad_sca}/{sca_steps} accepted SCA steps without decrease",
            runs.len()
        ),
    )
}

fn convergence(runs: &[(Scheme, ScenarioConfig, BcdResult)]) -> Verdict {
    let capped = runs.iter().filter(|(_, _, o)| !o.trace.converged).count();
    let longest = runs.iter().map(|(_, _, o)| o.trace.rows.len()).max().unwrap_or(0);
    let mean = runs.iter().map(|(_, _, o)| o.trace.rows.len()).sum::<usize>() as f64 / runs.len() as f64;
    verdict(
        capped == 0 && longest <= MAX_OUTER,
        format!(
            "{} runs, {capped} hit the cap, longest {longest}, mean {mean:.1} outer iterations",
            runs.len()
        ),
    )
}

/// Analytic gradient of `F^up` with respect to `(Re v, Im v)`, packed as
/// complex numbers.
fn oracle_gradient(v: &CVec, v0: &CVec, forms: &QuadraticForms, alpha: f64, k: usize) -> CVec {
    let amp = |x: &CVec, j: usize| forms.a(k, j).dotc(x) + forms.d(k, j);
    let mut g = forms.a(k, k) * (amp(v0, k) * -2.0);
    for j in (0..forms.wds()).filter(|&j| j != k) {
        g += forms.a(k, j) * (amp(v, j) * (2.0 * alpha));
    }
    g
}

fn majorization() -> irs_mec::Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut below, mut tangency, mut grad_err, mut alpha_err) = (0usize, 0.0f64, 0.0f64, 0.0f64);
    let instances = 5;
    for seed in 0..instances {
        let s = snapshot(seed)?;
        let v0 = s.theta.coefficients();
        let t0 = s.forms.edge_objective(&v0, &s.plan, &s.cfg);
        let t_c = (0..s.cfg.num_wds())
            .map(|k| s.plan.edge_compute_time(k, &s.cfg))
            .fold(0.0, f64::max);
        let t = 0.9 * t0 + 0.1 * t_c;
        for k in s.plan.offloading() {
            let ell = s.plan.offload_bits[k] as f64;
            let alpha = 2f64.powf(ell / (s.cfg.bandwidth_hz * (t - s.plan.edge_compute_time(k, &s.cfg)))) - 1.0;
            let lib_alpha = sinr_threshold(t, s.plan.offload_bits[k], s.plan.edge_compute_time(k, &s.cfg), &s.cfg);
            alpha_err = alpha_err.max((alpha - lib_alpha).abs() / alpha);
            let scale = s.forms.noise(k);
            let f0 = f_value(&v0, &s.forms, &s.plan, t, &s.cfg, k);
            let u0 = f_upper(&v0, &v0, &s.forms, &s.plan, t, &s.cfg, k);
            tangency = tangency.max((f0 - u0).abs() / f0.abs().max(scale));
            for _ in 0..100 {
                let v = unit_vector(v0.len(), &mut rng);
                let f = f_value(&v, &s.forms, &s.plan, t, &s.cfg, k);
                let u = f_upper(&v, &v0, &s.forms, &s.plan, t, &s.cfg, k);
                if u < f - 1e-12 * f.abs().max(scale) {
                    below += 1;
                }
            }
            for at in [v0.clone(), unit_vector(v0.len(), &mut rng)] {
                let g = oracle_gradient(&at, &v0, &s.forms, alpha, k);
                let h = 1e-6;
                let mut diff2 = 0.0;
                for n in 0..at.len() {
                    for dir in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
                        let mut p = at.clone();
                        let mut m = at.clone();
                        p[n] += dir * h;
                        m[n] -= dir * h;
                        let fd = (f_upper(&p, &v0, &s.forms, &s.plan, t, &s.cfg, k)
                            - f_upper(&m, &v0, &s.forms, &s.plan, t, &s.cfg, k))
                            / (2.0 * h);
                        let exact = if dir.re == 1.0 { g[n].re } else { g[n].im };
                        diff2 += (fd - exact).powi(2);
                    }
                }
                grad_err = grad_err.max(diff2.sqrt() / g.norm());
            }
        }
    }
    Ok(verdict(
        below == 0 && tangency <= TANGENCY_TOL && grad_err <= GRADIENT_TOL && alpha_err <= TANGENCY_TOL,
        format!(
            "{instances} instances, {below} points below F, tangency {tangency:.1e}, gradient error {grad_err:.1e}, threshold error {alpha_err:.1e}"
        ),
    ))
}

fn sdr_certificates() -> irs_mec::Result<Verdict> {
    let (mut certs, mut bad, mut bound_breaks, mut probes) = (0, 0, 0, 0);
    let mut worst_diag: f64 = 0.0;
    for seed in 0..3 {
        let s = snapshot(seed)?;
        let tol = s.cfg.solver.feas_tol;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = optimize_reflect_sdr(&s.forms, &s.theta, &s.plan, &s.cfg, &mut rng)?;
        let mut check = |c: &irs_mec::reflect::SdrCertificate| {
            certs += 1;
            worst_diag = worst_diag.max(c.diag_error);
            if c.diag_error > DIAG_TOL || c.min_eig < -tol || c.max_residual > tol {
                bad += 1;
            }
        };
        out.certificates.iter().for_each(&mut check);
        for p in out.probes.iter().filter(|p| p.feasible) {
            probes += 1;
            let Some(sol) = sdr_feasible(p.t, &s.forms, &s.plan, &s.cfg)?.feasible() else {
                bound_breaks += 1;
                continue;
            };
            check(&sol.certificate);
            let v = randomize(&sol.v, &s.forms, &s.plan, &s.cfg, s.cfg.solver.num_draws, &mut rng);
            let t_unit = s.forms.edge_objective(&v, &s.plan, &s.cfg);
            if out.relaxed_t > t_unit * (1.0 + LOWER_BOUND_SLACK) {
                bound_breaks += 1;
            }
        }
        if out.relaxed_t > out.t * (1.0 + LOWER_BOUND_SLACK) {
            bound_breaks += 1;
        }
    }
    Ok(verdict(
        certs > 0 && bad == 0 && bound_breaks == 0,
        format!(
            "{certs} certificates, {bad} violations (worst |diag-1| {worst_diag:.1e}), {bound_breaks}/{probes} feasible probes break the relaxed bound"
        ),
    ))
}

fn directional() -> irs_mec::Result<Verdict> {
    let spec = SweepSpec::new(
        SweepParam::WdDistance,
        vec![60.0, 80.0, 100.0],
        vec![Method::Sca, Method::NoIrs],
        SEEDS,
    );
    let med = medians(&run_sweep(&spec, &ScenarioConfig::default())?);
    let get = |d: f64, m: Method| {
        med.iter()
            .find(|r| r.0 == d && r.1 == m)
            .map(|r| r.2)
            .unwrap_or(f64::NAN)
    };
    let (s60, s80, s100) = (get(60.0, Method::Sca), get(80.0, Method::Sca), get(100.0, Method::Sca));
    let reduction = 1.0 - s60 / get(60.0, Method::NoIrs);
    Ok(verdict(
        reduction >= MIN_REDUCTION && s60 < s80 && s100 < s80,
        format!(
            "{SEEDS} seeds, sca medians {s60:.1}/{s80:.1}/{s100:.1} ms at 60/80/100 m, reduction vs no_irs at 60 m {:.1}%",
            100.0 * reduction
        ),
    ))
}

fn saturation() -> irs_mec::Result<Verdict> {
    let base = ScenarioConfig::default();
    let cpu = [30e9, 60e9, 120e9];
    let spec = SweepSpec::new(SweepParam::EdgeCpu, cpu.to_vec(), vec![Method::Sca], SEEDS);
    let med: Vec<f64> = medians(&run_sweep(&spec, &base)?).iter().map(|r| r.2).collect();
    let slope = med
        .windows(2)
        .map(|p| (p[0] - p[1]) / p[0])
        .fold(f64::NEG_INFINITY, f64::max);

    let ratios = [20.0, 50.0, 80.0];
    let spec = SweepSpec::new(SweepParam::IciRatio, ratios.to_vec(), vec![Method::Sca], SEEDS);
    let ici: Vec<f64> = medians(&run_sweep(&spec, &base)?).iter().map(|r| r.2).collect();
    let local_ms = base.all_local_latency() * 1e3;
    let plateau = ici[1..]
        .iter()
        .map(|m| (m - local_ms).abs() / local_ms)
        .fold(0.0, f64::max);
    let capped = ici.iter().all(|&m| m <= local_ms * (1.0 + 1e-9));
    Ok(verdict(
        slope < SLOPE_PER_DOUBLING && plateau <= PLATEAU_REL_TOL && capped,
        format!(
            "edge cpu medians {:.1}/{:.1}/{:.1} ms, max slope {:.2}% per doubling; ici medians {:.1}/{:.1}/{:.1} ms vs all-local {local_ms:.1} ms",
            med[0],
            med[1],
            med[2],
            100.0 * slope,
            ici[0],
            ici[1],
            ici[2]
        ),
    ))
}

fn report(name: &str, result: irs_mec::Result<Verdict>, secs: f64) -> bool {
    let v = result.unwrap_or_else(|e| verdict(false, format!("error: {e}")));
    println!(
        "{} {name:<22} {} [{secs:.1} s]",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    v.pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    // Optional name filters, e.g. `cargo test --test acceptance -- directional`.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));

    println!("\nacceptance criteria");
    let mut ok = true;
    let checks: [(&str, Check); 7] = [
        ("offload_oracle", offload_oracle),
        ("allocation_oracle", allocation_oracle),
        ("phase_grid_oracle", phase_grid_oracle),
        ("majorization", majorization),
        ("sdr_certificates", sdr_certificates),
        ("directional", directional),
        ("saturation", saturation),
    ];
    for (name, check) in checks.into_iter().filter(|(n, _)| wanted(n)) {
        let (res, secs) = timed(check);
        ok &= report(name, res, secs);
    }

    if wanted("monotonicity") || wanted("convergence") {
        let (runs, secs) = timed(default_runs);
        match runs {
            Ok(runs) => {
                ok &= report("monotonicity", Ok(monotonicity(&runs)), secs);
                ok &= report("convergence", Ok(convergence(&runs)), 0.0);
            }
            Err(e) => {
                report("monotonicity", Err(e), secs);
                println!("FAIL convergence           runs did not complete");
                ok = false;
            }
        }
    }
    println!();
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
