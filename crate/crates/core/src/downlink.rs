//! Downlink precoding with point-to-point or multivariate backhaul
//! compression.
//!
//! The control unit forms `x = A s + q`, `q ~ CN(0, Ω)`, and ships the
//! compressed per-BS signals over the backhaul. Independent compression keeps
//! `Ω` diagonal; multivariate compression allows correlated quantization
//! noise subject to one backhaul condition per BS subset.
//!
//! A BS with zero backhaul capacity is inactive: its row of `A` and its row
//! and column of `Ω` are zero, and it is skipped by the subset conditions.

use std::f64::consts::LN_2;
use std::fmt;

use num_complex::Complex64;

use crate::channel::ChannelRealization;
use crate::gaussinfo::{cholesky_pd, logdet2_raw, principal_submatrix, CMatrix, HermitianPSD};
use crate::mmopt::{lbfgs_maximize, mm_solve, MmOptions, MmProblem, MmTrace};
use crate::{CompressionMode, Error, Result};

/// Largest number of BSs for which the subset conditions are enumerated.
pub const MAX_SUBSET_BS: usize = 16;

/// Margin below which [`feasible_dl`] declares a design infeasible.
pub const FEASIBILITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct DownlinkDesign {
    /// Precoding matrix `N_B × N_M`, column `k` feeds MS `k`.
    pub a: CMatrix,
    pub omega: HermitianPSD,
    /// Backhaul capacities in bps/Hz.
    pub c: Vec<f64>,
    /// Per-BS power limits in watts.
    pub p_b: Vec<f64>,
    pub mode: CompressionMode,
}

impl DownlinkDesign {
    pub fn num_bs(&self) -> usize {
        self.a.nrows()
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.c.len()).filter(|&i| self.c[i] > 0.0).collect()
    }

    /// `e_i^H A A^H e_i`.
    pub fn signal_power(&self, i: usize) -> f64 {
        self.a.row(i).iter().map(|z| z.norm_sqr()).sum()
    }

    /// Transmit power `[A A^H + Ω]_ii`.
    pub fn bs_power(&self, i: usize) -> f64 {
        self.signal_power(i) + self.omega.matrix()[(i, i)].re
    }
}

/// Backhaul rate of BS `i` under independent compression.
pub fn backhaul_p2p_dl(design: &DownlinkDesign, i: usize) -> Result<f64> {
    let w = design.omega.matrix()[(i, i)].re;
    if !(w > 0.0) {
        return Err(Error::Domain(format!("BS {i} has quantization noise power {w}")));
    }
    Ok((design.signal_power(i) + w).log2() - w.log2())
}

/// Joint backhaul rate `Σ_{i∈S} log2 d_i − log2 det Ω_S` of the subset `S`.
pub fn backhaul_mv_dl(design: &DownlinkDesign, s: &[usize]) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::Domain("backhaul subset must be nonempty".into()));
    }
    let sum: f64 = s.iter().map(|&i| design.bs_power(i).log2()).sum();
    let ld = logdet2_raw(&principal_submatrix(design.omega.matrix(), s), "quantization covariance subset")?;
    Ok(sum - ld)
}

fn check_dims(design: &DownlinkDesign, channel: &ChannelRealization) -> Result<()> {
    if design.a.nrows() != channel.num_bs() || design.a.ncols() != channel.num_ms() || design.omega.dim() != channel.num_bs()
    {
        return Err(Error::Domain("downlink design does not match the channel dimensions".into()));
    }
    Ok(())
}

/// Achievable rate of every MS, treating other streams and quantization
/// noise as noise.
pub fn rates_dl(design: &DownlinkDesign, channel: &ChannelRealization) -> Result<Vec<f64>> {
    check_dims(design, channel)?;
    let nm = channel.num_ms();
    let mut out = Vec::with_capacity(nm);
    for k in 0..nm {
        let row = channel.h_dl.row(k);
        let gains: Vec<f64> = (0..nm).map(|l| (row * design.a.column(l))[(0, 0)].norm_sqr()).collect();
        let q = (row * design.omega.matrix() * row.adjoint())[(0, 0)].re.max(0.0);
        let noise = channel.sigma2_z_dl[k] + q + gains.iter().enumerate().filter(|(l, _)| *l != k).map(|(_, g)| g).sum::<f64>();
        out.push(((noise + gains[k]).log2() - noise.log2()).max(0.0));
    }
    Ok(out)
}

pub fn rate_dl(design: &DownlinkDesign, channel: &ChannelRealization, k: usize) -> Result<f64> {
    if k >= channel.num_ms() {
        return Err(Error::Domain(format!("MS index {k} out of range")));
    }
    Ok(rates_dl(design, channel)?[k])
}

/// A downlink constraint named in a feasibility report.
#[derive(Debug, Clone, PartialEq)]
pub enum DlConstraint {
    /// Subset backhaul condition, BS indices.
    Backhaul(Vec<usize>),
    /// Per-BS power limit.
    Power(usize),
    /// An inactive BS carries signal or quantization noise.
    Inactive(usize),
    /// Quantization covariance of a subset is singular.
    Singular(Vec<usize>),
    None,
}

impl fmt::Display for DlConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DlConstraint::Backhaul(s) => write!(f, "backhaul subset {s:?}"),
            DlConstraint::Power(i) => write!(f, "power of BS {i}"),
            DlConstraint::Inactive(i) => write!(f, "inactive BS {i}"),
            DlConstraint::Singular(s) => write!(f, "singular quantization covariance on {s:?}"),
            DlConstraint::None => write!(f, "none"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Smallest margin: `Σ_S C − g_S` in bps/Hz or `P_B − power` in watts.
    pub worst_margin: f64,
    pub worst: DlConstraint,
    pub subset_checks: usize,
    pub power_checks: usize,
}

/// Checks every subset backhaul condition over the active BSs and every
/// per-BS power limit.
pub fn feasible_dl(design: &DownlinkDesign) -> Result<FeasibilityReport> {
    let nb = design.num_bs();
    if nb > MAX_SUBSET_BS {
        return Err(Error::Refused(format!(
            "subset enumeration is limited to {MAX_SUBSET_BS} BSs, got {nb}"
        )));
    }
    let mut rep = FeasibilityReport {
        feasible: true,
        worst_margin: f64::INFINITY,
        worst: DlConstraint::None,
        subset_checks: 0,
        power_checks: 0,
    };
    let note = |margin: f64, what: DlConstraint, rep: &mut FeasibilityReport| {
        if margin < rep.worst_margin {
            rep.worst_margin = margin;
            rep.worst = what;
        }
    };
    let active = design.active();
    for i in 0..nb {
        rep.power_checks += 1;
        note(design.p_b[i] - design.bs_power(i), DlConstraint::Power(i), &mut rep);
        if !active.contains(&i) && design.bs_power(i) > 0.0 {
            note(-design.bs_power(i), DlConstraint::Inactive(i), &mut rep);
        }
    }
    for s in subsets(active.len(), true) {
        let idx: Vec<usize> = s.iter().map(|&j| active[j]).collect();
        rep.subset_checks += 1;
        let cap: f64 = idx.iter().map(|&i| design.c[i]).sum();
        match backhaul_mv_dl(design, &idx) {
            Ok(g) => note(cap - g, DlConstraint::Backhaul(idx), &mut rep),
            Err(_) => note(f64::NEG_INFINITY, DlConstraint::Singular(idx), &mut rep),
        }
    }
    rep.feasible = rep.worst_margin >= -FEASIBILITY_TOL;
    Ok(rep)
}

/// Nonempty subsets of `0..n` in bitmask order, or only singletons.
fn subsets(n: usize, all: bool) -> Vec<Vec<usize>> {
    if !all {
        return (0..n).map(|i| vec![i]).collect();
    }
    (1u32..(1u32 << n)).map(|mask| (0..n).filter(|&i| mask >> i & 1 == 1).collect()).collect()
}

/// Cholesky of the principal submatrix `idx` of the Hermitian `m` into
/// `buf` (row-major lower triangle). Returns `ln det`.
fn chol_sub(m: &CMatrix, idx: &[usize], buf: &mut [Complex64]) -> Option<f64> {
    let s = idx.len();
    for r in 0..s {
        for c in 0..=r {
            buf[r * s + c] = m[(idx[r], idx[c])];
        }
    }
    let mut ld = 0.0;
    for j in 0..s {
        let mut djj = buf[j * s + j].re;
        for p in 0..j {
            djj -= buf[j * s + p].norm_sqr();
        }
        if !(djj > 0.0) || !djj.is_finite() {
            return None;
        }
        let ljj = djj.sqrt();
        buf[j * s + j] = Complex64::new(ljj, 0.0);
        ld += djj.ln();
        for i in j + 1..s {
            let mut v = buf[i * s + j];
            for p in 0..j {
                v -= buf[i * s + p] * buf[j * s + p].conj();
            }
            buf[i * s + j] = v / ljj;
        }
    }
    Some(ld)
}

/// Adds `coef · (M_S)⁻¹`, embedded at `idx`, to `out`, given the factor in `buf`.
fn add_chol_inverse(buf: &[Complex64], idx: &[usize], coef: f64, out: &mut CMatrix, y: &mut [Complex64]) {
    let s = idx.len();
    // Y = L⁻¹, lower triangular, row-major
    for c in 0..s {
        for r in 0..s {
            if r < c {
                y[r * s + c] = Complex64::new(0.0, 0.0);
                continue;
            }
            let mut v = if r == c { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
            for p in c..r {
                v -= buf[r * s + p] * y[p * s + c];
            }
            y[r * s + c] = v / buf[r * s + r].re;
        }
    }
    // M⁻¹ = Y^H Y
    for a in 0..s {
        for b in 0..s {
            let mut v = Complex64::new(0.0, 0.0);
            for p in a.max(b)..s {
                v += y[p * s + a].conj() * y[p * s + b];
            }
            out[(idx[a], idx[b])] += v * coef;
        }
    }
}

/// Normalized optimization variables: `B = D^{-1/2} A`, `Ω̃ = L L^H` with
/// `L` lower triangular and diagonal `exp(θ)`.
#[derive(Debug, Clone)]
struct DlVars {
    b: CMatrix,
    theta: Vec<f64>,
    loff: CMatrix,
}

impl DlVars {
    fn factor(&self) -> CMatrix {
        let mut l = self.loff.clone();
        for (i, t) in self.theta.iter().enumerate() {
            l[(i, i)] = Complex64::new(t.exp(), 0.0);
        }
        l
    }

    #[cfg(test)]
    fn axpy(&self, t: f64, d: &DlVars) -> DlVars {
        DlVars {
            b: &self.b + &d.b * Complex64::new(t, 0.0),
            theta: self.theta.iter().zip(&d.theta).map(|(x, g)| x + t * g).collect(),
            loff: &self.loff + &d.loff * Complex64::new(t, 0.0),
        }
    }

    #[cfg(test)]
    fn dot(&self, o: &DlVars) -> f64 {
        let b: f64 = self.b.iter().zip(o.b.iter()).map(|(x, y)| (x.conj() * y).re).sum();
        let t: f64 = self.theta.iter().zip(&o.theta).map(|(x, y)| x * y).sum();
        let l: f64 = self.loff.iter().zip(o.loff.iter()).map(|(x, y)| (x.conj() * y).re).sum();
        b + t + l
    }
}

/// Quantities shared by the objective, constraints and gradient.
struct DlState {
    omega: CMatrix,
    /// `[B B^H + Ω̃]_ii`
    d: Vec<f64>,
    /// `1 + g_k (B B^H + Ω̃) g_k^H`
    u: Vec<f64>,
    /// `u_k − |g_k b_k|²`
    v: Vec<f64>,
}

struct DlSurrogate {
    v0: Vec<f64>,
    d0: Vec<f64>,
    mu: f64,
}

struct DlProblem {
    n: usize,
    k: usize,
    /// Row `k` is `h_k` restricted to the active BSs, scaled by `sqrt(P_B) / σ_k`.
    g: CMatrix,
    w: Vec<f64>,
    subsets: Vec<Vec<usize>>,
    caps: Vec<f64>,
    multivariate: bool,
}

const MU0: f64 = 1e-2;
const MU_DECAY: f64 = 0.5;
const MU_MIN: f64 = 1e-5;
const INNER_MAX: usize = 300;
const INNER_TOL: f64 = 1e-6;

impl DlProblem {
    fn state(&self, x: &DlVars) -> DlState {
        let l = x.factor();
        let omega = &l * l.adjoint();
        let cov = &x.b * x.b.adjoint() + &omega;
        let d = (0..self.n).map(|i| cov[(i, i)].re).collect();
        let mut u = Vec::with_capacity(self.k);
        let mut v = Vec::with_capacity(self.k);
        for k in 0..self.k {
            let row = self.g.row(k);
            let uk = 1.0 + (row * &cov * row.adjoint())[(0, 0)].re;
            let own = (row * x.b.column(k))[(0, 0)].norm_sqr();
            u.push(uk);
            v.push((uk - own).max(1.0));
        }
        DlState { omega, d, u, v }
    }

    fn objective_of(&self, st: &DlState) -> f64 {
        (0..self.k).map(|k| self.w[k] * (st.u[k].log2() - st.v[k].log2())).sum()
    }

    /// `ln det Ω̃_S` for every subset, `None` if one is singular.
    fn subset_logdets(&self, omega: &CMatrix, buf: &mut [Complex64]) -> Option<Vec<f64>> {
        self.subsets.iter().map(|s| chol_sub(omega, s, buf)).collect()
    }

    fn true_violation(&self, st: &DlState) -> f64 {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n * self.n];
        let Some(lds) = self.subset_logdets(&st.omega, &mut buf) else { return f64::INFINITY };
        let mut worst = st.d.iter().map(|d| d - 1.0).fold(0.0, f64::max);
        for ((s, cap), ld) in self.subsets.iter().zip(&self.caps).zip(lds) {
            let g: f64 = s.iter().map(|&i| st.d[i].log2()).sum::<f64>() - ld / LN_2;
            worst = worst.max(g - cap);
        }
        if worst.is_nan() {
            f64::INFINITY
        } else {
            worst
        }
    }

    /// Surrogate slacks: linearized subset conditions then power limits.
    fn slacks(&self, sur: &DlSurrogate, st: &DlState, lds: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.subsets.len() + self.n);
        for ((s, cap), ld) in self.subsets.iter().zip(&self.caps).zip(lds) {
            let lin: f64 = s
                .iter()
                .map(|&i| sur.d0[i].log2() + (st.d[i] - sur.d0[i]) / (sur.d0[i] * LN_2))
                .sum();
            out.push(cap - lin + ld / LN_2);
        }
        out.extend(st.d.iter().map(|d| 1.0 - d));
        out
    }

    fn surrogate_objective(&self, sur: &DlSurrogate, st: &DlState) -> f64 {
        (0..self.k).map(|k| self.w[k] * (st.u[k].log2() - st.v[k] / (sur.v0[k] * LN_2))).sum()
    }

    /// Barrier-augmented surrogate; `None` outside the surrogate domain.
    fn phi(&self, sur: &DlSurrogate, x: &DlVars, buf: &mut [Complex64]) -> Option<f64> {
        let st = self.state(x);
        let lds = self.subset_logdets(&st.omega, buf)?;
        let sl = self.slacks(sur, &st, &lds);
        if sl.iter().any(|s| !(*s > 0.0)) {
            return None;
        }
        let val = self.surrogate_objective(sur, &st) + sur.mu * sl.iter().map(|s| s.ln()).sum::<f64>();
        val.is_finite().then_some(val)
    }

    fn phi_grad(&self, sur: &DlSurrogate, x: &DlVars, buf: &mut [Complex64], y: &mut [Complex64]) -> Option<(f64, DlVars)> {
        let st = self.state(x);
        let lds = self.subset_logdets(&st.omega, buf)?;
        let sl = self.slacks(sur, &st, &lds);
        if sl.iter().any(|s| !(*s > 0.0)) {
            return None;
        }
        let val = self.surrogate_objective(sur, &st) + sur.mu * sl.iter().map(|s| s.ln()).sum::<f64>();
        let n = self.n;
        let ns = self.subsets.len();

        // Gradient with respect to the common covariance B B^H + Ω̃.
        let mut gx = CMatrix::zeros(n, n);
        for k in 0..self.k {
            let coef = self.w[k] * (1.0 / st.u[k] - 1.0 / sur.v0[k]) / LN_2;
            if coef != 0.0 {
                let row = self.g.row(k);
                gx += row.adjoint() * row * Complex64::new(coef, 0.0);
            }
        }
        let mut diag = vec![0.0; n];
        for (s, sl_s) in self.subsets.iter().zip(&sl[..ns]) {
            for &i in s {
                diag[i] += sur.mu / (sl_s * sur.d0[i] * LN_2);
            }
        }
        for i in 0..n {
            diag[i] += sur.mu / sl[ns + i];
            gx[(i, i)] -= Complex64::new(diag[i], 0.0);
        }

        let mut gb = &gx * &x.b * Complex64::new(2.0, 0.0);
        for k in 0..self.k {
            let row = self.g.row(k);
            let proj = (row * x.b.column(k))[(0, 0)];
            let coef = 2.0 * self.w[k] / (sur.v0[k] * LN_2);
            for i in 0..n {
                gb[(i, k)] += row[(0, i)].conj() * proj * coef;
            }
        }

        let mut gomega = gx;
        for (s, sl_s) in self.subsets.iter().zip(&sl[..ns]) {
            chol_sub(&st.omega, s, buf)?;
            add_chol_inverse(buf, s, sur.mu / (sl_s * LN_2), &mut gomega, y);
        }
        let l = x.factor();
        let gl = &gomega * &l * Complex64::new(2.0, 0.0);
        let theta = (0..n).map(|i| gl[(i, i)].re * x.theta[i].exp()).collect();
        let loff = if self.multivariate {
            CMatrix::from_fn(n, n, |r, c| if r > c { gl[(r, c)] } else { Complex64::new(0.0, 0.0) })
        } else {
            CMatrix::zeros(n, n)
        };
        Some((val, DlVars { b: gb, theta, loff }))
    }

    /// Real coordinates: `B` (re, im), `θ`, then the strictly lower part of
    /// `L` (re, im) when the noise may be correlated.
    fn flatten(&self, x: &DlVars) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.n * self.k + self.n * self.n);
        for z in x.b.iter() {
            v.push(z.re);
            v.push(z.im);
        }
        v.extend_from_slice(&x.theta);
        if self.multivariate {
            for c in 0..self.n {
                for r in c + 1..self.n {
                    v.push(x.loff[(r, c)].re);
                    v.push(x.loff[(r, c)].im);
                }
            }
        }
        v
    }

    fn unflatten(&self, v: &[f64]) -> DlVars {
        let nb = self.n * self.k;
        let b = CMatrix::from_iterator(self.n, self.k, (0..nb).map(|j| Complex64::new(v[2 * j], v[2 * j + 1])));
        let theta = v[2 * nb..2 * nb + self.n].to_vec();
        let mut loff = CMatrix::zeros(self.n, self.n);
        if self.multivariate {
            let mut p = 2 * nb + self.n;
            for c in 0..self.n {
                for r in c + 1..self.n {
                    loff[(r, c)] = Complex64::new(v[p], v[p + 1]);
                    p += 2;
                }
            }
        }
        DlVars { b, theta, loff }
    }

    /// Moves `x0` strictly inside the surrogate domain by adding a small
    /// multiple of the identity to `Ω̃` and shrinking all powers.
    fn interior(&self, sur: &DlSurrogate, x0: &DlVars, buf: &mut [Complex64]) -> Option<DlVars> {
        let omega = {
            let l = x0.factor();
            &l * l.adjoint()
        };
        let mut eps = 1e-9;
        for _ in 0..8 {
            let s = (1.0 - eps) / (1.0 + eps);
            let shifted = (&omega + CMatrix::identity(self.n, self.n) * Complex64::new(eps, 0.0)) * Complex64::new(s, 0.0);
            if let Some(ch) = cholesky_pd(&shifted) {
                let l = ch.l();
                let cand = DlVars {
                    b: &x0.b * Complex64::new(s.sqrt(), 0.0),
                    theta: (0..self.n).map(|i| l[(i, i)].re.ln()).collect(),
                    loff: if self.multivariate {
                        CMatrix::from_fn(self.n, self.n, |r, c| if r > c { l[(r, c)] } else { Complex64::new(0.0, 0.0) })
                    } else {
                        CMatrix::zeros(self.n, self.n)
                    },
                };
                if self.phi(sur, &cand, buf).is_some() {
                    return Some(cand);
                }
            }
            eps *= 10.0;
        }
        None
    }
}

impl MmProblem for DlProblem {
    type Point = DlVars;
    type Surrogate = DlSurrogate;

    fn objective(&self, x: &DlVars) -> f64 {
        self.objective_of(&self.state(x))
    }

    fn violation(&self, x: &DlVars) -> f64 {
        self.true_violation(&self.state(x))
    }

    fn majorize(&self, x: &DlVars, iteration: usize) -> Result<DlSurrogate> {
        let st = self.state(x);
        let mu = (MU0 * MU_DECAY.powi(iteration as i32)).max(MU_MIN);
        Ok(DlSurrogate { v0: st.v, d0: st.d, mu })
    }

    fn solve_inner(&self, sur: &DlSurrogate, x0: &DlVars) -> Result<DlVars> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n * self.n];
        let mut ybuf = buf.clone();
        let Some(start) = self.interior(sur, x0, &mut buf) else {
            return Ok(x0.clone());
        };
        let flat = self.flatten(&start);
        let best = lbfgs_maximize(
            |v| {
                let x = self.unflatten(v);
                self.phi_grad(sur, &x, &mut buf, &mut ybuf).map(|(f, g)| (f, self.flatten(&g)))
            },
            flat,
            INNER_TOL,
            INNER_MAX,
        );
        Ok(self.unflatten(&best))
    }

    fn blend(&self, from: &DlVars, to: &DlVars, t: f64) -> DlVars {
        DlVars {
            b: &from.b + (&to.b - &from.b) * Complex64::new(t, 0.0),
            theta: from.theta.iter().zip(&to.theta).map(|(a, b)| a + t * (b - a)).collect(),
            loff: &from.loff + (&to.loff - &from.loff) * Complex64::new(t, 0.0),
        }
    }

    fn min_iterations(&self) -> usize {
        // Let the barrier weight decay to its floor before testing convergence.
        ((MU0 / MU_MIN).log10() / (1.0 / MU_DECAY).log10()).ceil() as usize + 1
    }
}

#[derive(Debug, Clone)]
pub struct DownlinkSolution {
    pub design: DownlinkDesign,
    pub rates: Vec<f64>,
    /// Weighted sum of the achieved rates.
    pub objective: f64,
    pub trace: MmTrace,
    pub warning: Option<String>,
}

struct Setup {
    act: Vec<usize>,
    problem: DlProblem,
    w_max: f64,
}

fn setup(
    channel: &ChannelRealization,
    c: &[f64],
    p_b: &[f64],
    weights: &[f64],
    mode: CompressionMode,
) -> Result<Setup> {
    channel.validate()?;
    let (nb, nm) = (channel.num_bs(), channel.num_ms());
    if c.len() != nb || p_b.len() != nb || weights.len() != nm {
        return Err(Error::Domain("capacity, power or weight vector has the wrong length".into()));
    }
    if nb > MAX_SUBSET_BS {
        return Err(Error::Refused(format!("subset enumeration is limited to {MAX_SUBSET_BS} BSs, got {nb}")));
    }
    if let Some(v) = c.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("backhaul capacity must be finite and >= 0, got {v}")));
    }
    if let Some(v) = p_b.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("BS power limit must be positive, got {v}")));
    }
    if let Some(v) = weights.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("weights must be finite and >= 0, got {v}")));
    }
    let act: Vec<usize> = (0..nb).filter(|&i| c[i] > 0.0).collect();
    let n = act.len();
    let g = CMatrix::from_fn(nm, n, |k, j| {
        let i = act[j];
        channel.h_dl[(k, i)] * (p_b[i] / channel.sigma2_z_dl[k]).sqrt()
    });
    let w_max = weights.iter().copied().fold(0.0, f64::max);
    let w = weights.iter().map(|v| if w_max > 0.0 { v / w_max } else { 0.0 }).collect();
    let multivariate = mode == CompressionMode::Multiterminal;
    let subsets = subsets(n, multivariate);
    let caps = subsets.iter().map(|s| s.iter().map(|&j| c[act[j]]).sum()).collect();
    Ok(Setup { problem: DlProblem { n, k: nm, g, w, subsets, caps, multivariate }, act, w_max })
}

fn to_design(vars: &DlVars, setup: &Setup, c: &[f64], p_b: &[f64], mode: CompressionMode) -> DownlinkDesign {
    let nb = c.len();
    let nm = vars.b.ncols();
    let mut a = CMatrix::zeros(nb, nm);
    let mut omega = CMatrix::zeros(nb, nb);
    let l = vars.factor();
    let om = &l * l.adjoint();
    for (r, &i) in setup.act.iter().enumerate() {
        let si = p_b[i].sqrt();
        for k in 0..nm {
            a[(i, k)] = vars.b[(r, k)] * si;
        }
        for (q, &j) in setup.act.iter().enumerate() {
            omega[(i, j)] = om[(r, q)] * (si * p_b[j].sqrt());
        }
    }
    if mode == CompressionMode::PointToPoint {
        omega = CMatrix::from_diagonal(&omega.diagonal());
    }
    DownlinkDesign { a, omega: HermitianPSD::from_raw(omega), c: c.to_vec(), p_b: p_b.to_vec(), mode }
}

fn from_design(design: &DownlinkDesign, setup: &Setup) -> Result<DlVars> {
    let p = &setup.problem;
    let n = p.n;
    let act = &setup.act;
    let b = CMatrix::from_fn(n, p.k, |r, k| design.a[(act[r], k)] / design.p_b[act[r]].sqrt());
    let om = CMatrix::from_fn(n, n, |r, q| {
        design.omega.matrix()[(act[r], act[q])] / (design.p_b[act[r]] * design.p_b[act[q]]).sqrt()
    });
    let ch = cholesky_pd(&om).ok_or_else(|| {
        Error::Infeasible("initial quantization covariance is not positive definite on the active BSs".into())
    })?;
    let l = ch.l();
    Ok(DlVars {
        b,
        theta: (0..n).map(|i| l[(i, i)].re.ln()).collect(),
        loff: if p.multivariate {
            CMatrix::from_fn(n, n, |r, c| if r > c { l[(r, c)] } else { Complex64::new(0.0, 0.0) })
        } else {
            CMatrix::zeros(n, n)
        },
    })
}

/// Slack left on the backhaul conditions by [`tighten`], in bps/Hz.
const TIGHTEN_MARGIN: f64 = 1e-9;

/// Shrinks the quantization noise onto the backhaul boundary. MS rates are
/// non-increasing in Ω and BS powers fall with it, so the result is feasible
/// and never worse. Per BS in closed form for independent compression, by a
/// common scale factor otherwise.
fn tighten(design: &DownlinkDesign) -> DownlinkDesign {
    let act = design.active();
    let mut out = design.clone();
    match design.mode {
        CompressionMode::PointToPoint => {
            let mut om = design.omega.matrix().clone();
            for &i in &act {
                let s = design.signal_power(i);
                // C − log2(1 + s/ω) ≈ 1e-8 (1 − 2^−C) / ln 2
                let floor = s / (design.c[i] * LN_2).exp_m1() * (1.0 + 1e-8);
                if floor > 0.0 && floor < om[(i, i)].re {
                    om[(i, i)] = Complex64::new(floor, 0.0);
                }
            }
            out.omega = HermitianPSD::from_raw(om);
        }
        CompressionMode::Multiterminal => {
            let groups: Vec<(Vec<usize>, f64)> = subsets(act.len(), true)
                .into_iter()
                .map(|s| {
                    let idx: Vec<usize> = s.iter().map(|&j| act[j]).collect();
                    let cap = idx.iter().map(|&i| design.c[i]).sum();
                    (idx, cap)
                })
                .collect();
            let scaled = |ln_t: f64| {
                let mut d = design.clone();
                d.omega = HermitianPSD::from_raw(design.omega.matrix() * Complex64::new(ln_t.exp(), 0.0));
                d
            };
            let ok = |d: &DownlinkDesign| {
                groups.iter().all(|(idx, cap)| backhaul_mv_dl(d, idx).is_ok_and(|g| cap - g >= TIGHTEN_MARGIN))
            };
            if act.is_empty() || !ok(design) {
                return out;
            }
            // g_S grows as Ω shrinks, so feasibility is monotone in the scale.
            let (mut lo, mut hi) = (-1.0f64, 0.0f64);
            while ok(&scaled(lo)) {
                hi = lo;
                lo *= 2.0;
                if lo < -600.0 {
                    return scaled(hi);
                }
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if ok(&scaled(mid)) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            out = scaled(hi);
        }
    }
    out
}

/// Strictly feasible starting design for independent compression:
/// maximum-ratio columns, each BS row scaled so that its singleton backhaul
/// condition holds with a small margin and it transmits just below its
/// power limit.
pub fn initial_design(channel: &ChannelRealization, c: &[f64], p_b: &[f64]) -> Result<DownlinkDesign> {
    let nm = channel.num_ms();
    let s = setup(channel, c, p_b, &vec![1.0; nm], CompressionMode::PointToPoint)?;
    Ok(to_design(&initial_vars(&s, c), &s, c, p_b, CompressionMode::PointToPoint))
}

const INIT_MARGIN: f64 = 1e-3;

fn initial_vars(s: &Setup, c: &[f64]) -> DlVars {
    let p = &s.problem;
    let mut b = CMatrix::zeros(p.n, p.k);
    for k in 0..p.k {
        let row = p.g.row(k);
        let norm = row.norm();
        if norm > 0.0 {
            for i in 0..p.n {
                b[(i, k)] = row[(0, i)].conj() / norm;
            }
        }
    }
    let mut theta = vec![0.0; p.n];
    for i in 0..p.n {
        let a: f64 = b.row(i).iter().map(|z| z.norm_sqr()).sum();
        let ratio = (1.0 + INIT_MARGIN) / (c[s.act[i]] * LN_2).exp_m1();
        let (scale, omega) = if a > 0.0 {
            let sig = (1.0 - INIT_MARGIN) / (1.0 + ratio);
            (sig / a, sig * ratio)
        } else {
            (0.0, 1.0 - INIT_MARGIN)
        };
        for k in 0..p.k {
            b[(i, k)] *= scale.sqrt();
        }
        theta[i] = 0.5 * omega.ln();
    }
    DlVars { b, theta, loff: CMatrix::zeros(p.n, p.n) }
}

/// Weighted sum-rate design. Multivariate compression starts from the
/// independent-compression solution, so its objective is never lower.
pub fn optimize_dl(
    channel: &ChannelRealization,
    c: &[f64],
    p_b: &[f64],
    weights: &[f64],
    mode: CompressionMode,
) -> Result<DownlinkSolution> {
    let p2p = optimize_dl_from(channel, c, p_b, weights, CompressionMode::PointToPoint, None)?;
    match mode {
        CompressionMode::PointToPoint => Ok(p2p),
        CompressionMode::Multiterminal => {
            optimize_dl_from(channel, c, p_b, weights, mode, Some(&p2p.design))
        }
    }
}

/// Runs the MM iterations from `init`, or from [`initial_design`] when
/// `init` is `None`.
pub fn optimize_dl_from(
    channel: &ChannelRealization,
    c: &[f64],
    p_b: &[f64],
    weights: &[f64],
    mode: CompressionMode,
    init: Option<&DownlinkDesign>,
) -> Result<DownlinkSolution> {
    let s = setup(channel, c, p_b, weights, mode)?;
    let start = match init {
        Some(d) => {
            let rep = feasible_dl(d)?;
            if !rep.feasible {
                return Err(Error::Infeasible(format!(
                    "starting design violates {} by {:e}",
                    rep.worst, -rep.worst_margin
                )));
            }
            from_design(d, &s)?
        }
        None => initial_vars(&s, c),
    };
    let weighted = |rates: &[f64]| -> f64 { rates.iter().zip(weights).map(|(r, w)| r * w).sum() };
    let finish = |vars: &DlVars, mut trace: MmTrace, warning: Option<String>| -> Result<DownlinkSolution> {
        let mut design = tighten(&to_design(vars, &s, c, p_b, mode));
        let mut rates = rates_dl(&design, channel)?;
        let mut objective = weighted(&rates);
        if let Some(d) = init {
            // the starting design is feasible for either mode
            let r0 = rates_dl(d, channel)?;
            if weighted(&r0) > objective {
                design = DownlinkDesign { mode, ..d.clone() };
                rates = r0;
                objective = weighted(&rates);
            }
        }
        if trace.objective_per_iteration.last().is_some_and(|&v| objective > v) {
            trace.objective_per_iteration.push(objective);
            trace.constraint_violation_per_iteration.push(0.0);
        }
        Ok(DownlinkSolution { design, rates, objective, trace, warning })
    };
    if s.problem.n == 0 || s.w_max == 0.0 {
        let v = s.problem.violation(&start);
        let trace = MmTrace {
            objective_per_iteration: vec![s.problem.objective(&start)],
            constraint_violation_per_iteration: vec![v],
            converged: true,
            iterations: 0,
        };
        return finish(&start, trace, None);
    }
    let opts = MmOptions { feasibility_tol: 1e-9, ..MmOptions::default() };
    let out = mm_solve(&s.problem, start, &opts).map_err(|e| match e {
        Error::Infeasible(m) => Error::Infeasible(format!("no feasible starting point: {m}")),
        other => other,
    })?;
    let mut trace = out.trace;
    for v in &mut trace.objective_per_iteration {
        *v *= s.w_max;
    }
    finish(&out.point, trace, out.warning)
}
