//! Homogeneous self-dual primal-dual interior-point method.
//!
//! Standard form:
//!
//! ```text
//!   minimize    c'x
//!   subject to  G x + s = h,  A x = b,  s in K
//! ```
//!
//! with `K` a product of the nonnegative orthant, second-order cones and PSD
//! cones (full symmetric matrices with the trace inner product). Dual
//! variables satisfy `A'y + G'z + c = 0`, `z in K`. Search directions use
//! Nesterov-Todd scaling and a Mehrotra predictor-corrector; the embedding
//! variables `(tau, kappa)` give infeasibility certificates.

use nalgebra::{DMatrix, DVector, SVD};

use super::{ConicProblem, Constraint, DualValue, SymMatrix};

#[derive(Debug, Clone)]
pub struct IpmSettings {
    pub max_iter: usize,
    /// Relative primal/dual residual tolerance.
    pub feastol: f64,
    pub abstol: f64,
    pub reltol: f64,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            max_iter: 100,
            feastol: 1e-9,
            abstol: 1e-9,
            reltol: 1e-9,
            step: 0.99,
        }
    }
}

pub(crate) struct SocBlock {
    g: DMatrix<f64>,
    h: DVector<f64>,
}

/// `s = h + sum_i x_i M_i`, i.e. the G-operator is `x -> -sum_i x_i M_i`.
pub(crate) struct PsdBlock {
    h: DMatrix<f64>,
    terms: Vec<(usize, SymMatrix)>,
}

pub(crate) struct StandardForm {
    n: usize,
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g_lin: DMatrix<f64>,
    h_lin: DVector<f64>,
    soc: Vec<SocBlock>,
    psd: Vec<PsdBlock>,
}

enum Slot {
    Eq(usize),
    Lin(usize),
    Soc(usize),
    Psd(usize),
}

pub(crate) struct Layout {
    slots: Vec<Slot>,
}

impl Layout {
    pub(crate) fn duals(&self, res: &IpmResult) -> Vec<DualValue> {
        self.slots
            .iter()
            .map(|s| match *s {
                Slot::Eq(r) => DualValue::Scalar(-res.y[r]),
                Slot::Lin(r) => DualValue::Scalar(res.z.lin[r]),
                Slot::Soc(j) => DualValue::Vector(res.z.soc[j].clone()),
                Slot::Psd(j) => DualValue::Matrix(res.z.psd[j].clone()),
            })
            .collect()
    }
}

impl StandardForm {
    pub(crate) fn build(p: &ConicProblem) -> (Self, Layout) {
        let n = p.num_vars;
        let dense = |e: &super::AffineExpr| {
            let mut row = DVector::zeros(n);
            for &(i, v) in &e.terms {
                row[i] += v;
            }
            row
        };
        let mut eq: Vec<(DVector<f64>, f64)> = Vec::new();
        let mut lin: Vec<(DVector<f64>, f64)> = Vec::new();
        let mut soc = Vec::new();
        let mut psd = Vec::new();
        let mut slots = Vec::with_capacity(p.constraints.len());

        for c in &p.constraints {
            match c {
                Constraint::Zero(e) => {
                    slots.push(Slot::Eq(eq.len()));
                    eq.push((dense(e), -e.constant));
                }
                Constraint::NonNeg(e) => {
                    slots.push(Slot::Lin(lin.len()));
                    lin.push((-dense(e), e.constant));
                }
                Constraint::SecondOrder { head, tail } => {
                    slots.push(Slot::Soc(soc.len()));
                    let rows: Vec<_> = std::iter::once(head).chain(tail).collect();
                    let mut g = DMatrix::zeros(rows.len(), n);
                    let mut h = DVector::zeros(rows.len());
                    for (r, e) in rows.iter().enumerate() {
                        g.set_row(r, &(-dense(e)).transpose());
                        h[r] = e.constant;
                    }
                    soc.push(SocBlock { g, h });
                }
                Constraint::Psd { constant, terms } => {
                    slots.push(Slot::Psd(psd.len()));
                    psd.push(PsdBlock {
                        h: constant.to_dense(),
                        terms: terms.clone(),
                    });
                }
            }
        }
        for b in &p.bounds {
            let mut e = DVector::zeros(n);
            e[b.var] = 1.0;
            if b.lower.is_finite() {
                lin.push((-e.clone(), -b.lower));
            }
            if b.upper.is_finite() {
                lin.push((e, b.upper));
            }
        }

        let stack = |rows: &[(DVector<f64>, f64)]| {
            let mut m = DMatrix::zeros(rows.len(), n);
            for (r, (row, _)) in rows.iter().enumerate() {
                m.set_row(r, &row.transpose());
            }
            (m, DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1)))
        };
        let (a, b) = stack(&eq);
        let (g_lin, h_lin) = stack(&lin);
        let form = Self {
            n,
            c: p.objective.clone().unwrap_or_else(|| DVector::zeros(n)),
            a,
            b,
            g_lin,
            h_lin,
            soc,
            psd,
        };
        (form, Layout { slots })
    }

    fn degree(&self) -> usize {
        self.h_lin.len() + self.soc.len() + self.psd.iter().map(|p| p.h.nrows()).sum::<usize>()
    }

    fn h(&self) -> ConeVec {
        ConeVec {
            lin: self.h_lin.clone(),
            soc: self.soc.iter().map(|s| s.h.clone()).collect(),
            psd: self.psd.iter().map(|p| p.h.clone()).collect(),
        }
    }

    fn g_mul(&self, x: &DVector<f64>) -> ConeVec {
        ConeVec {
            lin: &self.g_lin * x,
            soc: self.soc.iter().map(|s| &s.g * x).collect(),
            psd: self
                .psd
                .iter()
                .map(|p| {
                    let mut m = DMatrix::zeros(p.h.nrows(), p.h.ncols());
                    for (i, t) in &p.terms {
                        t.add_to(&mut m, -x[*i]);
                    }
                    m
                })
                .collect(),
        }
    }

    fn gt_mul(&self, z: &ConeVec) -> DVector<f64> {
        let mut out = self.g_lin.tr_mul(&z.lin);
        for (s, zs) in self.soc.iter().zip(&z.soc) {
            out += s.g.tr_mul(zs);
        }
        for (p, zp) in self.psd.iter().zip(&z.psd) {
            for (i, t) in &p.terms {
                out[*i] -= t.dot(zp);
            }
        }
        out
    }

    /// `G' (W'W)^{-1} G`.
    fn scaled_hessian(&self, w: &Scaling) -> DMatrix<f64> {
        let n = self.n;
        let mut hm = DMatrix::zeros(n, n);
        if self.g_lin.nrows() > 0 {
            let mut gs = self.g_lin.clone();
            for (mut row, d) in gs.row_iter_mut().zip(w.d.iter()) {
                row /= *d;
            }
            hm += gs.tr_mul(&gs);
        }
        for (s, sc) in self.soc.iter().zip(&w.soc) {
            let gs = &sc.winv * &s.g;
            hm += gs.tr_mul(&gs);
        }
        for (p, sc) in self.psd.iter().zip(&w.psd) {
            for (vb, mb) in &p.terms {
                let sms = mb.sandwich(&sc.s);
                for (va, ma) in &p.terms {
                    hm[(*va, *vb)] += ma.dot(&sms);
                }
            }
        }
        hm
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConeVec {
    lin: DVector<f64>,
    soc: Vec<DVector<f64>>,
    psd: Vec<DMatrix<f64>>,
}

impl ConeVec {
    fn identity_like(other: &ConeVec) -> Self {
        Self {
            lin: DVector::from_element(other.lin.len(), 1.0),
            soc: other
                .soc
                .iter()
                .map(|v| {
                    let mut e = DVector::zeros(v.len());
                    e[0] = 1.0;
                    e
                })
                .collect(),
            psd: other
                .psd
                .iter()
                .map(|m| DMatrix::identity(m.nrows(), m.nrows()))
                .collect(),
        }
    }

    fn dot(&self, o: &ConeVec) -> f64 {
        self.lin.dot(&o.lin)
            + self.soc.iter().zip(&o.soc).map(|(a, b)| a.dot(b)).sum::<f64>()
            + self.psd.iter().zip(&o.psd).map(|(a, b)| a.dot(b)).sum::<f64>()
    }

    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * o`.
    fn axpy(&mut self, alpha: f64, o: &ConeVec) {
        self.lin.axpy(alpha, &o.lin, 1.0);
        for (a, b) in self.soc.iter_mut().zip(&o.soc) {
            a.axpy(alpha, b, 1.0);
        }
        for (a, b) in self.psd.iter_mut().zip(&o.psd) {
            *a += b * alpha;
        }
    }

    fn scale(&mut self, alpha: f64) {
        self.lin *= alpha;
        self.soc.iter_mut().for_each(|v| *v *= alpha);
        self.psd.iter_mut().for_each(|m| *m *= alpha);
    }

    fn sub(&self, o: &ConeVec) -> ConeVec {
        let mut out = self.clone();
        out.axpy(-1.0, o);
        out
    }

    fn jordan(&self, o: &ConeVec) -> ConeVec {
        ConeVec {
            lin: self.lin.component_mul(&o.lin),
            soc: self
                .soc
                .iter()
                .zip(&o.soc)
                .map(|(x, y)| {
                    let mut r = x * y[0] + y * x[0];
                    r[0] = x.dot(y);
                    r
                })
                .collect(),
            psd: self
                .psd
                .iter()
                .zip(&o.psd)
                .map(|(x, y)| {
                    let xy = x * y;
                    (&xy + xy.transpose()) * 0.5
                })
                .collect(),
        }
    }

    /// Solves `lam o u = r` where `lam` is a scaled point (diagonal PSD part).
    fn jordan_solve(lam: &ConeVec, r: &ConeVec) -> ConeVec {
        ConeVec {
            lin: r.lin.component_div(&lam.lin),
            soc: lam
                .soc
                .iter()
                .zip(&r.soc)
                .map(|(l, r)| {
                    let l1 = l.rows(1, l.len() - 1);
                    let r1 = r.rows(1, r.len() - 1);
                    let det = l[0] * l[0] - l1.norm_squared();
                    let u0 = (l[0] * r[0] - l1.dot(&r1)) / det;
                    let mut u = DVector::zeros(l.len());
                    u[0] = u0;
                    let tail = (r1 - l1 * u0) / l[0];
                    u.rows_mut(1, l.len() - 1).copy_from(&tail);
                    u
                })
                .collect(),
            psd: lam
                .psd
                .iter()
                .zip(&r.psd)
                .map(|(l, r)| DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| 2.0 * r[(i, j)] / (l[(i, i)] + l[(j, j)])))
                .collect(),
        }
    }

    /// Smallest "eigenvalue" in the Jordan-algebra sense.
    fn min_eig(&self) -> f64 {
        let mut m = self.lin.iter().copied().fold(f64::INFINITY, f64::min);
        for v in &self.soc {
            m = m.min(v[0] - v.rows(1, v.len() - 1).norm());
        }
        for p in &self.psd {
            let sym = (p + p.transpose()) * 0.5;
            m = m.min(sym.symmetric_eigenvalues().min());
        }
        m
    }

    fn add_identity(&mut self, t: f64) {
        self.lin.add_scalar_mut(t);
        for v in &mut self.soc {
            v[0] += t;
        }
        for p in &mut self.psd {
            for i in 0..p.nrows() {
                p[(i, i)] += t;
            }
        }
    }

    /// Largest `alpha` with `self + alpha d` in the orthant and SOC parts
    /// (`inf` if unbounded). `self` must be interior. PSD blocks are handled
    /// in scaled coordinates by [`psd_scaled_step`].
    fn max_step_lin_soc(&self, d: &ConeVec) -> f64 {
        let mut a = f64::INFINITY;
        for (x, dx) in self.lin.iter().zip(d.lin.iter()) {
            if *dx < 0.0 {
                a = a.min(-x / dx);
            }
        }
        for (x, dx) in self.soc.iter().zip(&d.soc) {
            a = a.min(soc_step(x, dx));
        }
        a
    }
}

fn soc_step(x: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let q = x.len() - 1;
    let (x1, d1) = (x.rows(1, q), d.rows(1, q));
    let qa = d[0] * d[0] - d1.norm_squared();
    let qb = x[0] * d[0] - x1.dot(&d1);
    let qc = (x[0] * x[0] - x1.norm_squared()).max(0.0);
    let disc = qb * qb - qa * qc;
    // f(a) = qa a^2 + 2 qb a + qc is the J-norm of x + a d; the path leaves
    // the cone exactly when f first reaches zero.
    if qa.abs() <= 1e-300 {
        return if qb < 0.0 { qc / (-2.0 * qb) } else { f64::INFINITY };
    }
    if qa > 0.0 && (qb >= 0.0 || disc < 0.0) {
        return f64::INFINITY;
    }
    let root = disc.max(0.0).sqrt();
    let denom = -qb + root;
    if denom <= 0.0 {
        0.0
    } else {
        qc / denom
    }
}

/// Largest `alpha` with `diag(lam) + alpha d` PSD.
fn psd_scaled_step(lam: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let inv: Vec<f64> = (0..lam.nrows()).map(|i| 1.0 / lam[(i, i)].sqrt()).collect();
    let m = DMatrix::from_fn(d.nrows(), d.ncols(), |r, c| {
        0.5 * (d[(r, c)] + d[(c, r)]) * inv[r] * inv[c]
    });
    let lmin = m.symmetric_eigenvalues().min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

struct SocScale {
    w: DMatrix<f64>,
    winv: DMatrix<f64>,
}

struct PsdScale {
    r: DMatrix<f64>,
    rinv: DMatrix<f64>,
    /// `rinv' rinv`
    s: DMatrix<f64>,
    /// `r r'`
    rrt: DMatrix<f64>,
}

/// Nesterov-Todd scaling `W` with `W z = W^{-T} s = lambda`.
struct Scaling {
    d: DVector<f64>,
    soc: Vec<SocScale>,
    psd: Vec<PsdScale>,
}

impl Scaling {
    fn identity(like: &ConeVec) -> Self {
        Self {
            d: DVector::from_element(like.lin.len(), 1.0),
            soc: like
                .soc
                .iter()
                .map(|v| SocScale {
                    w: DMatrix::identity(v.len(), v.len()),
                    winv: DMatrix::identity(v.len(), v.len()),
                })
                .collect(),
            psd: like
                .psd
                .iter()
                .map(|m| {
                    let i = DMatrix::identity(m.nrows(), m.nrows());
                    PsdScale {
                        r: i.clone(),
                        rinv: i.clone(),
                        s: i.clone(),
                        rrt: i,
                    }
                })
                .collect(),
        }
    }

    fn new(s: &ConeVec, z: &ConeVec) -> Option<(Self, ConeVec)> {
        let d = s.lin.zip_map(&z.lin, |a, b| (a / b).sqrt());
        let lam_lin = s.lin.zip_map(&z.lin, |a, b| (a * b).sqrt());

        let mut soc = Vec::with_capacity(s.soc.len());
        let mut lam_soc = Vec::with_capacity(s.soc.len());
        for (sv, zv) in s.soc.iter().zip(&z.soc) {
            let q = sv.len();
            let jnorm = |v: &DVector<f64>| v[0] * v[0] - v.rows(1, q - 1).norm_squared();
            let (sjs, zjz) = (jnorm(sv), jnorm(zv));
            if !(sjs > 0.0 && zjz > 0.0 && sv[0] > 0.0 && zv[0] > 0.0) {
                return None;
            }
            let sn = sv / sjs.sqrt();
            let zn = zv / zjz.sqrt();
            let gamma = ((1.0 + sn.dot(&zn)) / 2.0).sqrt();
            let mut jz = zn.clone();
            jz.rows_mut(1, q - 1).neg_mut();
            let wbar = (&sn + &jz) / (2.0 * gamma);
            let beta = (sjs / zjz).powf(0.25);
            // W = beta [[w0, w1'], [w1, I + w1 w1' / (1 + w0)]]; the inverse flips w1.
            let w1 = wbar.rows(1, q - 1).into_owned();
            let block = |sign: f64| {
                let mut m = DMatrix::identity(q, q);
                m[(0, 0)] = wbar[0];
                for i in 1..q {
                    m[(0, i)] = sign * w1[i - 1];
                    m[(i, 0)] = sign * w1[i - 1];
                }
                let outer = &w1 * w1.transpose() / (1.0 + wbar[0]);
                let mut tail = m.view_mut((1, 1), (q - 1, q - 1));
                tail += outer;
                m
            };
            let w = block(1.0) * beta;
            let winv = block(-1.0) / beta;
            lam_soc.push(&w * zv);
            soc.push(SocScale { w, winv });
        }

        let mut psd = Vec::with_capacity(s.psd.len());
        let mut lam_psd = Vec::with_capacity(s.psd.len());
        for (sm, zm) in s.psd.iter().zip(&z.psd) {
            let ls = nalgebra::Cholesky::new((sm + sm.transpose()) * 0.5)?.l();
            let lz = nalgebra::Cholesky::new((zm + zm.transpose()) * 0.5)?.l();
            let svd = SVD::new(lz.tr_mul(&ls), true, true);
            let (v_t, sig) = (svd.v_t?, svd.singular_values);
            if sig.iter().any(|&x| !(x > 0.0)) {
                return None;
            }
            let dim = sig.len();
            let inv_sqrt = DMatrix::from_diagonal(&sig.map(|x| 1.0 / x.sqrt()));
            let sqrt = DMatrix::from_diagonal(&sig.map(f64::sqrt));
            let r = &ls * v_t.transpose() * inv_sqrt;
            let ls_inv = ls.solve_lower_triangular(&DMatrix::identity(dim, dim))?;
            let rinv = sqrt * v_t * ls_inv;
            let sm = rinv.tr_mul(&rinv);
            lam_psd.push(DMatrix::from_diagonal(&sig));
            let rrt = &r * r.transpose();
            psd.push(PsdScale { r, rinv, s: sm, rrt });
        }

        Some((
            Self { d, soc, psd },
            ConeVec {
                lin: lam_lin,
                soc: lam_soc,
                psd: lam_psd,
            },
        ))
    }

    fn apply_w(&self, z: &ConeVec) -> ConeVec {
        ConeVec {
            lin: self.d.component_mul(&z.lin),
            soc: self.soc.iter().zip(&z.soc).map(|(sc, v)| &sc.w * v).collect(),
            psd: self
                .psd
                .iter()
                .zip(&z.psd)
                .map(|(sc, m)| sc.r.tr_mul(m) * &sc.r)
                .collect(),
        }
    }

    fn apply_wt(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lin: self.d.component_mul(&u.lin),
            soc: self.soc.iter().zip(&u.soc).map(|(sc, v)| &sc.w * v).collect(),
            psd: self
                .psd
                .iter()
                .zip(&u.psd)
                .map(|(sc, m)| &sc.r * m * sc.r.transpose())
                .collect(),
        }
    }

    fn apply_winvt(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lin: u.lin.component_div(&self.d),
            soc: self.soc.iter().zip(&u.soc).map(|(sc, v)| &sc.winv * v).collect(),
            psd: self
                .psd
                .iter()
                .zip(&u.psd)
                .map(|(sc, m)| &sc.rinv * m * sc.rinv.transpose())
                .collect(),
        }
    }

    /// `W'W z`.
    fn apply_wtw(&self, z: &ConeVec) -> ConeVec {
        ConeVec {
            lin: z.lin.zip_map(&self.d, |a, d| a * d * d),
            soc: self.soc.iter().zip(&z.soc).map(|(sc, v)| &sc.w * (&sc.w * v)).collect(),
            psd: self
                .psd
                .iter()
                .zip(&z.psd)
                .map(|(sc, m)| &sc.rrt * m * &sc.rrt)
                .collect(),
        }
    }

    /// `(W'W)^{-1} u`.
    fn apply_wtw_inv(&self, u: &ConeVec) -> ConeVec {
        ConeVec {
            lin: u.lin.zip_map(&self.d, |a, d| a / (d * d)),
            soc: self
                .soc
                .iter()
                .zip(&u.soc)
                .map(|(sc, v)| &sc.winv * (&sc.winv * v))
                .collect(),
            psd: self.psd.iter().zip(&u.psd).map(|(sc, m)| &sc.s * m * &sc.s).collect(),
        }
    }
}

struct Kkt<'a> {
    form: &'a StandardForm,
    scaling: &'a Scaling,
    mat: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> Kkt<'a> {
    fn new(form: &'a StandardForm, scaling: &'a Scaling) -> Self {
        let (n, p) = (form.n, form.a.nrows());
        let hm = form.scaled_hessian(scaling);
        let mut mat = DMatrix::zeros(n + p, n + p);
        mat.view_mut((0, 0), (n, n)).copy_from(&hm);
        mat.view_mut((0, n), (n, p)).copy_from(&form.a.transpose());
        mat.view_mut((n, 0), (p, n)).copy_from(&form.a);
        let reg = 1e-13 * (1.0 + hm.amax());
        let mut regd = mat.clone();
        for i in 0..n {
            regd[(i, i)] += reg;
        }
        for i in n..n + p {
            regd[(i, i)] -= reg;
        }
        Self {
            form,
            scaling,
            mat,
            lu: regd.lu(),
        }
    }

    /// Solves `[0 A' G'; A 0 0; G 0 -W'W] [dx; dy; dz] = [bx; by; bz]`, with
    /// iterative refinement against the unreduced system.
    fn solve(&self, bx: &DVector<f64>, by: &DVector<f64>, bz: &ConeVec) -> (DVector<f64>, DVector<f64>, ConeVec) {
        let (mut dx, mut dy, mut dz) = self.solve_reduced(bx, by, bz);
        let scale = bx.norm() + by.norm() + bz.norm();
        let mut prev = f64::INFINITY;
        for _ in 0..3 {
            let form = self.form;
            let rx = bx - form.a.tr_mul(&dy) - form.gt_mul(&dz);
            let ry = by - &form.a * &dx;
            let rz = bz.sub(&form.g_mul(&dx).sub(&self.scaling.apply_wtw(&dz)));
            let res = rx.norm() + ry.norm() + rz.norm();
            // Stop once converged or when a pass no longer halves the residual.
            if !(res > 1e-15 * scale) || res > 0.5 * prev {
                break;
            }
            prev = res;
            let (cx, cy, cz) = self.solve_reduced(&rx, &ry, &rz);
            dx += cx;
            dy += cy;
            dz.axpy(1.0, &cz);
        }
        (dx, dy, dz)
    }

    fn solve_reduced(
        &self,
        bx: &DVector<f64>,
        by: &DVector<f64>,
        bz: &ConeVec,
    ) -> (DVector<f64>, DVector<f64>, ConeVec) {
        let n = self.form.n;
        let wbz = self.scaling.apply_wtw_inv(bz);
        let rhs_x = bx + self.form.gt_mul(&wbz);
        let mut rhs = DVector::zeros(n + by.len());
        rhs.rows_mut(0, n).copy_from(&rhs_x);
        rhs.rows_mut(n, by.len()).copy_from(by);
        let mut sol = self.lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(rhs.len()));
        let res = &rhs - &self.mat * &sol;
        if let Some(corr) = self.lu.solve(&res) {
            sol += corr;
        }
        let dx = sol.rows(0, n).into_owned();
        let dy = sol.rows(n, by.len()).into_owned();
        let dz = self.scaling.apply_wtw_inv(&self.form.g_mul(&dx).sub(bz));
        (dx, dy, dz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    Stalled,
}

pub(crate) struct IpmResult {
    pub status: IpmStatus,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: ConeVec,
    pub iterations: usize,
}

struct Direction {
    dx: DVector<f64>,
    dy: DVector<f64>,
    dz: ConeVec,
    ds: ConeVec,
    dtau: f64,
    dkappa: f64,
}

/// Iterations without a better residual score before giving up.
const STALL_ITERS: usize = 5;

pub(crate) fn solve(form: &StandardForm, st: &IpmSettings) -> IpmResult {
    let h = form.h();
    let nu = form.degree() as f64;
    let resx0 = form.c.norm().max(1.0);
    let resy0 = form.b.norm().max(1.0);
    let resz0 = h.norm().max(1.0);

    // Starting point from two least-squares solves with W = I.
    let ident = Scaling::identity(&h);
    let kkt0 = Kkt::new(form, &ident);
    let (mut x, _, zp) = kkt0.solve(&DVector::zeros(form.n), &form.b, &h);
    let mut s = zp.clone();
    s.scale(-1.0);
    let (_, mut y, mut z) = kkt0.solve(&(-&form.c), &DVector::zeros(form.b.len()), &{
        let mut zero = h.clone();
        zero.scale(0.0);
        zero
    });
    let e = ConeVec::identity_like(&h);
    for v in [&mut s, &mut z] {
        let m = v.min_eig();
        if m <= 1e-8 * v.norm().max(1.0) {
            v.add_identity(1.0 - m);
        }
    }
    let (mut tau, mut kappa) = (1.0, 1.0);

    let finish = |status, x: &DVector<f64>, y: &DVector<f64>, z: &ConeVec, tau: f64, it| {
        let mut zz = z.clone();
        zz.scale(1.0 / tau);
        IpmResult {
            status,
            x: x / tau,
            y: y / tau,
            z: zz,
            iterations: it,
        }
    };

    let mut best: Option<(f64, DVector<f64>, DVector<f64>, ConeVec, f64)> = None;
    let mut best_it = 0;
    let mut last_it = 0;

    for it in 0..=st.max_iter {
        last_it = it;
        let gz = form.g_mul(&x);
        let rx = form.a.tr_mul(&y) + form.gt_mul(&z) + &form.c * tau;
        let ry = &form.a * &x - &form.b * tau;
        let mut rz = s.clone();
        rz.axpy(1.0, &gz);
        rz.axpy(-tau, &h);
        let cx = form.c.dot(&x);
        let by_hz = form.b.dot(&y) + h.dot(&z);
        let rt = kappa + cx + by_hz;
        let sz = s.dot(&z);
        let mu = (sz + tau * kappa) / (nu + 1.0);

        let pres = (ry.norm() / resy0).max(rz.norm() / resz0) / tau;
        let dres = rx.norm() / resx0 / tau;
        let pcost = cx / tau;
        let dcost = -by_hz / tau;
        let gap = sz / (tau * tau);
        let relgap = if pcost < 0.0 {
            gap / -pcost
        } else if dcost > 0.0 {
            gap / dcost
        } else {
            f64::INFINITY
        };

        if pres <= st.feastol && dres <= st.feastol && (gap <= st.abstol || relgap <= st.reltol) {
            return finish(IpmStatus::Optimal, &x, &y, &z, tau, it);
        }
        if by_hz < 0.0 {
            let pinf = (form.a.tr_mul(&y) + form.gt_mul(&z)).norm() / resx0 / -by_hz;
            if pinf <= st.feastol {
                return finish(IpmStatus::PrimalInfeasible, &x, &y, &z, tau, it);
            }
        }
        if cx < 0.0 {
            let mut gs = gz.clone();
            gs.axpy(1.0, &s);
            let dinf = ((&form.a * &x).norm() / resy0).max(gs.norm() / resz0) / -cx;
            if dinf <= st.feastol {
                return finish(IpmStatus::DualInfeasible, &x, &y, &z, tau, it);
            }
        }
        let score = pres.max(dres).max(gap.min(relgap));
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, x.clone(), y.clone(), z.clone(), tau));
            best_it = it;
        } else if it >= best_it + STALL_ITERS && tau >= kappa {
            // tau < kappa: heading for an infeasibility certificate, keep going
            break;
        }
        if it == st.max_iter {
            break;
        }

        let Some((scaling, lam)) = Scaling::new(&s, &z) else {
            break;
        };
        let kkt = Kkt::new(form, &scaling);
        let (u2x, u2y, u2z) = kkt.solve(&(-&form.c), &form.b, &h);
        let u2_dot = form.c.dot(&u2x) + form.b.dot(&u2y) + h.dot(&u2z);

        let direction = |eta: f64, rc: &ConeVec, rtau: f64| -> Direction {
            let dxr = &rx * -eta;
            let dyr = &ry * -eta;
            let mut dzr = rz.clone();
            dzr.scale(-eta);
            let dtr = -eta * rt;
            let v = ConeVec::jordan_solve(&lam, rc);
            let wtv = scaling.apply_wt(&v);
            let (u1x, u1y, u1z) = kkt.solve(&dxr, &dyr, &dzr.sub(&wtv));
            let u1_dot = form.c.dot(&u1x) + form.b.dot(&u1y) + h.dot(&u1z);
            let dtau = (dtr - rtau / tau - u1_dot) / (-kappa / tau + u2_dot);
            let dx = u1x + &u2x * dtau;
            let dy = u1y + &u2y * dtau;
            let mut dz = u1z;
            dz.axpy(dtau, &u2z);
            let wdz = scaling.apply_w(&dz);
            let ds = scaling.apply_wt(&v.sub(&wdz));
            let dkappa = (rtau - kappa * dtau) / tau;
            Direction {
                dx,
                dy,
                dz,
                ds,
                dtau,
                dkappa,
            }
        };
        let max_alpha = |d: &Direction| {
            let mut a = s.max_step_lin_soc(&d.ds).min(z.max_step_lin_soc(&d.dz));
            for ((sc, l), (ds, dz)) in scaling.psd.iter().zip(&lam.psd).zip(d.ds.psd.iter().zip(&d.dz.psd)) {
                let ds_t = &sc.rinv * ds * sc.rinv.transpose();
                let dz_t = sc.r.tr_mul(dz) * &sc.r;
                a = a.min(psd_scaled_step(l, &ds_t)).min(psd_scaled_step(l, &dz_t));
            }
            if d.dtau < 0.0 {
                a = a.min(-tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                a = a.min(-kappa / d.dkappa);
            }
            a
        };

        let mut rc = lam.jordan(&lam);
        rc.scale(-1.0);
        let aff = direction(1.0, &rc, -tau * kappa);
        let alpha_aff = max_alpha(&aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        let ds_t = scaling.apply_winvt(&aff.ds);
        let dz_t = scaling.apply_w(&aff.dz);
        let mut rc = lam.jordan(&lam);
        rc.scale(-1.0);
        rc.axpy(sigma * mu, &e);
        rc.axpy(-1.0, &ds_t.jordan(&dz_t));
        let rtau = -tau * kappa + sigma * mu - aff.dtau * aff.dkappa;
        let dir = direction(1.0 - sigma, &rc, rtau);
        let alpha = (st.step * max_alpha(&dir)).min(1.0);
        if !(alpha > 1e-12) {
            break;
        }

        x.axpy(alpha, &dir.dx, 1.0);
        y.axpy(alpha, &dir.dy, 1.0);
        z.axpy(alpha, &dir.dz);
        s.axpy(alpha, &dir.ds);
        tau += alpha * dir.dtau;
        kappa += alpha * dir.dkappa;
        if !(tau > 0.0 && kappa > 0.0) || !x.iter().all(|v| v.is_finite()) {
            break;
        }
    }

    // Stalled: accept the best iterate if it meets relaxed tolerances.
    let (score, bx, by, bz, btau) = best.expect("at least one iterate is scored");
    let status = if score <= 1e-7 {
        IpmStatus::Optimal
    } else {
        IpmStatus::Stalled
    };
    finish(status, &bx, &by, &bz, btau, last_it)
}
