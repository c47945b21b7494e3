//! Channel synthesis and stacked channel blocks.
//!
//! Stacking convention: the receive dimension runs over BSs with the M
//! antennas of BS `b` at rows `b*M..(b+1)*M`; the reflect dimension runs over
//! IRSs with the N elements of IRS `i` at `i*N..(i+1)*N`. The cascade matrix
//! `G` holds the IRS-to-BS block `(b, i)` at those row/column ranges.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{Position, RicianFactor, ScenarioConfig};
use crate::error::{check_len, Error, Result};
use crate::C64;

pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub wds: usize,
    pub bs: usize,
    pub antennas: usize,
    pub irs: usize,
    pub elements: usize,
}

impl Dims {
    pub fn of(cfg: &ScenarioConfig) -> Self {
        Self {
            wds: cfg.num_wds(),
            bs: cfg.num_bs(),
            antennas: cfg.antennas_per_bs,
            irs: cfg.num_irs(),
            elements: cfg.elements_per_irs,
        }
    }

    pub fn receive_dim(&self) -> usize {
        self.bs * self.antennas
    }

    pub fn reflect_dim(&self) -> usize {
        self.irs * self.elements
    }
}

/// IRS phase shifts. Amplitudes are fixed to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseVector {
    theta: Vec<f64>,
}

fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can return exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

impl PhaseVector {
    pub fn from_angles(angles: impl IntoIterator<Item = f64>) -> Self {
        Self {
            theta: angles.into_iter().map(wrap_angle).collect(),
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self { theta: vec![0.0; len] }
    }

    /// Phases of the given coefficients; zero entries map to angle 0.
    pub fn from_coefficients(v: &CVec) -> Self {
        Self::from_angles(v.iter().map(|c| if c.norm() > 0.0 { c.arg() } else { 0.0 }))
    }

    /// Uniform phases on `[0, 2 pi)`.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self {
            theta: (0..len).map(|_| rng.random_range(0.0..TAU)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn angles(&self) -> &[f64] {
        &self.theta
    }

    /// Reflection coefficients `v_n = exp(j theta_n)`.
    pub fn coefficients(&self) -> CVec {
        CVec::from_iterator(self.theta.len(), self.theta.iter().map(|&t| C64::from_polar(1.0, t)))
    }
}

/// All channel blocks of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    dims: Dims,
    direct: Vec<CVec>,
    reflect: Vec<CVec>,
    cascade: CMat,
}

impl ChannelSet {
    pub fn from_parts(dims: Dims, direct: Vec<CVec>, reflect: Vec<CVec>, cascade: CMat) -> Result<Self> {
        let (mb, inn) = (dims.receive_dim(), dims.reflect_dim());
        check_len("direct channels", dims.wds, direct.len())?;
        check_len("reflect channels", dims.wds, reflect.len())?;
        for h in &direct {
            check_len("direct channel", mb, h.len())?;
        }
        for h in &reflect {
            check_len("reflect channel", inn, h.len())?;
        }
        check_len("cascade rows", mb, cascade.nrows())?;
        check_len("cascade cols", inn, cascade.ncols())?;
        let finite = |c: &C64| c.re.is_finite() && c.im.is_finite();
        let all_finite = direct.iter().chain(&reflect).all(|h| h.iter().all(finite)) && cascade.iter().all(finite);
        if !all_finite {
            return Err(Error::Geometry("non-finite channel entry".into()));
        }
        Ok(Self {
            dims,
            direct,
            reflect,
            cascade,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn direct(&self, k: usize) -> &CVec {
        &self.direct[k]
    }

    pub fn reflect(&self, k: usize) -> &CVec {
        &self.reflect[k]
    }

    pub fn cascade(&self) -> &CMat {
        &self.cascade
    }

    /// Copy with the IRS paths removed (`G = 0`).
    pub fn without_cascade(&self) -> Self {
        let mut out = self.clone();
        out.cascade.fill(C64::new(0.0, 0.0));
        out
    }

    /// Copy with every direct WD-BS link blocked.
    pub fn without_direct(&self) -> Self {
        let mut out = self.clone();
        for h in &mut out.direct {
            h.fill(C64::new(0.0, 0.0));
        }
        out
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k < self.dims.wds {
            Ok(())
        } else {
            Err(Error::Index {
                what: "WD",
                index: k,
                len: self.dims.wds,
            })
        }
    }

    /// `h_k = h_d,k + G diag(v) h_r,k`.
    pub fn effective_channel(&self, theta: &PhaseVector, k: usize) -> Result<CVec> {
        self.check_index(k)?;
        check_len("phase vector", self.dims.reflect_dim(), theta.len())?;
        Ok(self.effective_unchecked(&theta.coefficients(), k))
    }

    pub fn effective_all(&self, theta: &PhaseVector) -> Result<Vec<CVec>> {
        check_len("phase vector", self.dims.reflect_dim(), theta.len())?;
        let v = theta.coefficients();
        Ok((0..self.dims.wds).map(|k| self.effective_unchecked(&v, k)).collect())
    }

    pub(crate) fn effective_unchecked(&self, v: &CVec, k: usize) -> CVec {
        let weighted = self.reflect[k].component_mul(v);
        &self.direct[k] + &self.cascade * weighted
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&ChannelDump::from(self))?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let dump: ChannelDump = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        dump.into_channels()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(&ChannelDump::from(self))?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str::<ChannelDump>(text)?.into_channels()
    }
}

type Pair = [f64; 2];

#[derive(Serialize, Deserialize)]
struct ChannelDump {
    dims: Dims,
    direct: Vec<Vec<Pair>>,
    reflect: Vec<Vec<Pair>>,
    /// Row-major.
    cascade: Vec<Vec<Pair>>,
}

fn pairs(v: &CVec) -> Vec<Pair> {
    v.iter().map(|c| [c.re, c.im]).collect()
}

fn unpairs(v: &[Pair]) -> CVec {
    CVec::from_iterator(v.len(), v.iter().map(|p| C64::new(p[0], p[1])))
}

impl From<&ChannelSet> for ChannelDump {
    fn from(ch: &ChannelSet) -> Self {
        Self {
            dims: ch.dims,
            direct: ch.direct.iter().map(pairs).collect(),
            reflect: ch.reflect.iter().map(pairs).collect(),
            cascade: ch
                .cascade
                .row_iter()
                .map(|r| r.iter().map(|c| [c.re, c.im]).collect())
                .collect(),
        }
    }
}

impl ChannelDump {
    fn into_channels(self) -> Result<ChannelSet> {
        let rows = self.dims.receive_dim();
        let cols = self.dims.reflect_dim();
        check_len("cascade rows", rows, self.cascade.len())?;
        for r in &self.cascade {
            check_len("cascade cols", cols, r.len())?;
        }
        let cascade = CMat::from_fn(rows, cols, |i, j| {
            let p = self.cascade[i][j];
            C64::new(p[0], p[1])
        });
        ChannelSet::from_parts(
            self.dims,
            self.direct.iter().map(|v| unpairs(v)).collect(),
            self.reflect.iter().map(|v| unpairs(v)).collect(),
            cascade,
        )
    }
}

/// Large-scale power gain `C0 (d / d0)^-kappa`.
pub fn path_loss(d: f64, c0: f64, d0: f64, kappa: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Geometry(format!("link distance must be > 0, got {d}")));
    }
    Ok(c0 * (d / d0).powf(-kappa))
}

/// One circularly-symmetric complex Gaussian sample with unit variance.
pub fn cn01<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Rician mix of a deterministic LoS matrix and i.i.d. CN(0, 1) scattering.
/// The LoS limit consumes no randomness.
pub fn rician_sample<R: Rng + ?Sized>(los: &CMat, beta: RicianFactor, rng: &mut R) -> CMat {
    let (w_los, w_nlos) = beta.weights();
    if w_nlos == 0.0 {
        return los * C64::new(w_los, 0.0);
    }
    let mut out = CMat::from_fn(los.nrows(), los.ncols(), |_, _| cn01(rng) * w_nlos);
    if w_los != 0.0 {
        out += los * C64::new(w_los, 0.0);
    }
    out
}

fn distance(a: &Position, b: &Position) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

// Substream ids. Each block owns a stream so adding devices or surfaces does
// not perturb the draws of existing blocks.
const TAG_DIRECT: u64 = 1;
const TAG_REFLECT: u64 = 2;
const TAG_CASCADE: u64 = 3;

fn stream_id(tag: u64, a: usize, b: usize) -> u64 {
    (tag << 56) | ((a as u64) << 28) | b as u64
}

fn block_rng(master: u64, tag: u64, a: usize, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream_id(tag, a, b));
    rng
}

fn draw_block(
    rows: usize,
    cols: usize,
    dist: f64,
    kappa: f64,
    beta: RicianFactor,
    cfg: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CMat> {
    let gain = path_loss(dist, cfg.path_loss.c0, cfg.path_loss.d0, kappa)?;
    let los = CMat::from_element(rows, cols, C64::new(1.0, 0.0));
    Ok(rician_sample(&los, beta, rng) * C64::new(gain.sqrt(), 0.0))
}

/// Draws every channel block of the scenario.
///
/// One `u64` is taken from `rng` as the master seed; each block then uses its
/// own ChaCha substream derived from it.
pub fn synthesize<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<ChannelSet> {
    let dims = Dims::of(cfg);
    let (m, n) = (dims.antennas, dims.elements);
    let master: u64 = rng.random();
    let pl = &cfg.path_loss;

    let mut direct = Vec::with_capacity(dims.wds);
    let mut reflect = Vec::with_capacity(dims.wds);
    for (k, wd) in cfg.wds.iter().enumerate() {
        let mut hd = CVec::zeros(dims.receive_dim());
        for (b, bs) in cfg.bs_positions.iter().enumerate() {
            let mut rng = block_rng(master, TAG_DIRECT, k, b);
            let blk = draw_block(
                m,
                1,
                distance(&wd.position, bs),
                pl.exp_wd_bs,
                cfg.rician.wd_bs,
                cfg,
                &mut rng,
            )?;
            hd.rows_mut(b * m, m).copy_from(&blk.column(0));
        }
        direct.push(hd);

        let mut hr = CVec::zeros(dims.reflect_dim());
        for (i, irs) in cfg.irs_positions.iter().enumerate() {
            let mut rng = block_rng(master, TAG_REFLECT, k, i);
            let blk = draw_block(
                n,
                1,
                distance(&wd.position, irs),
                pl.exp_wd_irs,
                cfg.rician.wd_irs,
                cfg,
                &mut rng,
            )?;
            hr.rows_mut(i * n, n).copy_from(&blk.column(0));
        }
        reflect.push(hr);
    }

    let mut cascade = CMat::zeros(dims.receive_dim(), dims.reflect_dim());
    for (b, bs) in cfg.bs_positions.iter().enumerate() {
        for (i, irs) in cfg.irs_positions.iter().enumerate() {
            let mut rng = block_rng(master, TAG_CASCADE, b, i);
            let blk = draw_block(m, n, distance(irs, bs), pl.exp_irs_bs, cfg.rician.irs_bs, cfg, &mut rng)?;
            cascade.view_mut((b * m, i * n), (m, n)).copy_from(&blk);
        }
    }

    ChannelSet::from_parts(dims, direct, reflect, cascade)
}

/// Convenience: channels from `cfg.seed`.
pub fn synthesize_seeded(cfg: &ScenarioConfig) -> Result<ChannelSet> {
    synthesize(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}
