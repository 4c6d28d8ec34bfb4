//! Logarithmic L₂ small-ball asymptotics: P{Σ λ_n ξ_n² ≤ ε²} through the
//! saddle point of L(u) = -½ Σ ln(1 + 2uλ_n), with a Monte Carlo oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::spectrum::{CountingModel, EigenvalueModel, MarginalSpectrum};
use crate::quad::gl8_nodes;
use crate::tensor::{tensor_counting_multi, tensor_top_k};

pub const DEFAULT_N_CUT: usize = 10_000;
/// Applicability threshold for u²L″(u).
pub const REGIME_THRESHOLD: f64 = 10.0;

const PANEL: f64 = 0.05;

/// Where the eigenvalues come from.
#[derive(Debug, Clone)]
pub enum EigenSource {
    Marginal(MarginalSpectrum),
    /// Tensor product of the listed marginals.
    Tensor(Vec<MarginalSpectrum>),
}

#[derive(Debug, Clone)]
enum Tail {
    None,
    Eigen(Arc<EigenvalueModel>),
    /// σ₀ with M(σ₀) = K + ½.
    Counting(Arc<CountingModel>, f64),
    /// σ_K = -ln λ_K; the tail uses the exact counting function.
    Tensor(Vec<MarginalSpectrum>, f64),
}

/// L, L′, L″ at one u, with midpoint-rule error estimates for the tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LValues {
    pub u: f64,
    pub l: f64,
    pub l1: f64,
    pub l2: f64,
    pub tail_bound: [f64; 3],
}

/// Eigenvalue accessor with an exact head and an integral tail.
#[derive(Debug, Clone)]
pub struct SmallDevModel {
    head: Arc<Vec<f64>>,
    tail: Tail,
    p: f64,
    /// Relative tolerance on the tail error estimates.
    pub tail_tol: f64,
}

#[inline]
fn g3(lam: f64, u: f64) -> [f64; 3] {
    let d = 1.0 + 2.0 * u * lam;
    [-0.5 * (2.0 * u * lam).ln_1p(), -lam / d, 2.0 * lam * lam / (d * d)]
}

#[inline]
fn dg3(lam: f64, u: f64) -> [f64; 3] {
    let d = 1.0 + 2.0 * u * lam;
    [-u / d, -1.0 / (d * d), 4.0 * lam / (d * d * d)]
}

impl SmallDevModel {
    pub fn new(source: EigenSource, n_cut: usize) -> Result<Self> {
        if n_cut == 0 {
            return Err(Error::Domain("n_cut must be positive".into()));
        }
        match source {
            EigenSource::Marginal(MarginalSpectrum::Explicit(v)) => {
                if v.is_empty() {
                    return Err(Error::InvalidModel("empty spectrum".into()));
                }
                Ok(SmallDevModel { head: v, tail: Tail::None, p: f64::INFINITY, tail_tol: 1e-6 })
            }
            EigenSource::Marginal(m) => {
                let head = m.head(n_cut)?;
                let tail = match &m {
                    MarginalSpectrum::ByEigenvalue(e) => Tail::Eigen(e.clone()),
                    MarginalSpectrum::ByCounting(c) => Tail::Counting(c.clone(), c.tau_of(n_cut as f64 + 0.5)),
                    MarginalSpectrum::Explicit(_) => unreachable!(),
                };
                Ok(SmallDevModel { head: Arc::new(head), tail, p: m.p().unwrap(), tail_tol: 1e-6 })
            }
            EigenSource::Tensor(specs) => {
                if specs.is_empty() {
                    return Err(Error::Domain("no marginals".into()));
                }
                let head = tensor_top_k(&specs, n_cut)?;
                let p = specs.iter().filter_map(|s| s.p()).fold(f64::INFINITY, f64::min);
                let tail = if p.is_finite() && head.len() == n_cut {
                    Tail::Tensor(specs.clone(), -head[n_cut - 1].ln())
                } else {
                    Tail::None
                };
                Ok(SmallDevModel { head: Arc::new(head), tail, p, tail_tol: 1e-6 })
            }
        }
    }

    pub fn from_spectrum(m: &MarginalSpectrum, n_cut: usize) -> Result<Self> {
        Self::new(EigenSource::Marginal(m.clone()), n_cut)
    }

    /// Exponent p (∞ for finite lists).
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn head(&self) -> &[f64] {
        &self.head
    }

    pub fn n_cut(&self) -> usize {
        self.head.len()
    }

    fn tail_sums(&self, u: f64) -> Result<([f64; 3], [f64; 3])> {
        let k = self.head.len();
        let mut acc = [0.0; 3];
        let mut add = |v: [f64; 3], w: f64| {
            for i in 0..3 {
                acc[i] += v[i] * w;
            }
        };
        let lu = if u > 0.0 { (2.0 * u).ln() } else { f64::NEG_INFINITY };
        let bound = match &self.tail {
            Tail::None => return Ok(([0.0; 3], [0.0; 3])),
            Tail::Eigen(m) => {
                let p = m.p();
                let y0 = (k as f64 + 0.5).ln();
                let y_end = y0.max(lu / p) + 40.0 / (p - 1.0) + 5.0;
                panels(y0, y_end, |y, w| {
                    let lam = m.lambda_log(y);
                    add(g3(lam, u), w * y.exp());
                });
                let a = g3(m.lambda_real(k as f64), u);
                let b = g3(m.lambda_real(k as f64 + 1.0), u);
                [0, 1, 2].map(|i| (a[i] - b[i]).abs() / 24.0)
            }
            Tail::Counting(m, s0) => {
                let p = m.p();
                let off = k as f64 + 0.5;
                let s_end = s0.max(lu) + 40.0 / (1.0 - 1.0 / p) + 5.0;
                panels(*s0, s_end, |s, w| {
                    let lam = (-s).exp();
                    add(dg3(lam, u), w * lam * (m.m(s) - off));
                });
                let a = g3((-m.tau_of(k as f64)).exp(), u);
                let b = g3((-m.tau_of(k as f64 + 1.0)).exp(), u);
                [0, 1, 2].map(|i| (a[i] - b[i]).abs() / 24.0)
            }
            Tail::Tensor(specs, sk) => {
                let s_end = sk.max(lu) + 40.0 / (1.0 - 1.0 / self.p) + 5.0;
                let mut err = None;
                panels(*sk, s_end, |s, w| {
                    if err.is_some() {
                        return;
                    }
                    let lam = (-s).exp();
                    match tensor_counting_multi(specs, lam) {
                        Ok(n) => add(dg3(lam, u), w * lam * (n.saturating_sub(k as u64)) as f64),
                        Err(e) => err = Some(e),
                    }
                });
                if let Some(e) = err {
                    return Err(e);
                }
                // step integrand: one panel of the largest term as a crude bound
                let a = dg3(self.head[k - 1], u);
                [0, 1, 2].map(|i| (a[i] * self.head[k - 1]).abs() * PANEL)
            }
        };
        Ok((acc, bound))
    }

    /// L(u), L′(u), L″(u).
    pub fn eval(&self, u: f64) -> Result<LValues> {
        if !(u >= 0.0 && u.is_finite()) {
            return Err(Error::Domain(format!("u must be finite and nonnegative, got {u}")));
        }
        let mut h = [0.0; 3];
        for &lam in self.head.iter().rev() {
            let v = g3(lam, u);
            for i in 0..3 {
                h[i] += v[i];
            }
        }
        let (t, b) = self.tail_sums(u)?;
        let v = LValues { u, l: h[0] + t[0], l1: h[1] + t[1], l2: h[2] + t[2], tail_bound: b };
        for (i, val) in [v.l, v.l1, v.l2].into_iter().enumerate() {
            if b[i] > self.tail_tol * val.abs() && b[i] > 1e-300 {
                return Err(Error::Accuracy {
                    what: format!("tail error estimate {:e} for derivative order {i} at u = {u:e}", b[i]),
                    best: val,
                });
            }
        }
        Ok(v)
    }

    pub fn l(&self, u: f64) -> Result<f64> {
        Ok(self.eval(u)?.l)
    }

    pub fn l_prime(&self, u: f64) -> Result<f64> {
        Ok(self.eval(u)?.l1)
    }

    pub fn l_dprime(&self, u: f64) -> Result<f64> {
        Ok(self.eval(u)?.l2)
    }

    /// Σλ_n = -L′(0).
    pub fn trace(&self) -> Result<f64> {
        Ok(-self.l_prime(0.0)?)
    }

    /// Σ_{n > n_cut} λ_n.
    pub fn tail_mean(&self) -> Result<f64> {
        Ok(-self.tail_sums(0.0)?.0[1])
    }

    /// Root of L′(u) + r = 0.
    pub fn solve_u(&self, r: f64) -> Result<f64> {
        let tr = self.trace()?;
        if !(r > 0.0 && r < tr) {
            return Err(Error::Precondition(format!("r = {r:e} must lie in (0, {tr:e})")));
        }
        let f = |u: f64| -> Result<f64> { Ok(self.l_prime(u)? + r) };
        let mut hi = 1.0;
        while f(hi)? < 0.0 {
            hi *= 4.0;
            if !hi.is_finite() {
                return Err(Error::Range("no bracket for the saddle point".into()));
            }
        }
        let mut lo = hi;
        while lo > 1e-300 && f(lo)? > 0.0 {
            lo *= 0.25;
        }
        if f(lo)? > 0.0 {
            lo = 0.0;
        }
        let mut best = hi;
        for _ in 0..400 {
            let mid = if lo > 0.0 && hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
            if mid <= lo || mid >= hi {
                break;
            }
            let v = f(mid)?;
            best = mid;
            if v.abs() <= 1e-12 * r {
                return Ok(mid);
            }
            if v < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (vl, vh) = (f(lo)?.abs(), f(hi)?.abs());
        let cand = if vl < vh && lo > 0.0 { lo } else { hi };
        if f(cand)?.abs() <= 1e-12 * r {
            Ok(cand)
        } else {
            Err(Error::Accuracy { what: "saddle point residual above 1e-12 r".into(), best })
        }
    }

    /// ln P{‖X‖² ≤ ε²} from the saddle-point formula.
    pub fn log_small_ball(&self, eps: f64) -> Result<SmallBall> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("eps must be positive, got {eps}")));
        }
        let r = eps * eps;
        let u = self.solve_u(r)?;
        let v = self.eval(u)?;
        let u2l2 = u * u * v.l2;
        let leading = v.l + u * r;
        Ok(SmallBall {
            eps,
            u,
            leading,
            ln_p: leading - 0.5 * (2.0 * std::f64::consts::PI * u2l2).ln(),
            u2l2,
            in_regime: u2l2 >= REGIME_THRESHOLD,
        })
    }
}

fn panels<F: FnMut(f64, f64)>(a: f64, b: f64, mut f: F) {
    if !(b > a) {
        return;
    }
    let n = ((b - a) / PANEL).ceil() as usize;
    let h = (b - a) / n as f64;
    for i in 0..n {
        let lo = a + i as f64 * h;
        gl8_nodes(lo, lo + h, &mut f);
    }
}

/// Saddle-point result at one ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallBall {
    pub eps: f64,
    pub u: f64,
    /// L(u) + u r = L(u) − u L′(u).
    pub leading: f64,
    pub ln_p: f64,
    pub u2l2: f64,
    /// u²L″(u) ≥ 10; outside it the Laplace prefactor is unreliable.
    pub in_regime: bool,
}

/// Monte Carlo estimate at one ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub eps: f64,
    pub successes: u64,
    pub n_samples: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// No successes: `ci_hi` is the one-sided 95% bound 1 − 0.05^{1/n}.
    pub one_sided: bool,
}

const Z95: f64 = 1.959_963_984_540_054;

fn wilson(k: u64, n: u64) -> (f64, f64) {
    let nf = n as f64;
    let ph = k as f64 / nf;
    let z2 = Z95 * Z95;
    let den = 1.0 + z2 / nf;
    let c = (ph + z2 / (2.0 * nf)) / den;
    let h = Z95 * (ph * (1.0 - ph) / nf + z2 / (4.0 * nf * nf)).sqrt() / den;
    ((c - h).max(0.0), (c + h).min(1.0))
}

/// P{Σ_{n≤n_cut} λ_n ξ_n² + tail mean ≤ ε²} for each ε, from one set of
/// samples. Sample i draws from its own ChaCha8 stream, so results depend
/// only on (seed, n_samples).
pub fn mc_small_ball(m: &SmallDevModel, eps: &[f64], n_samples: u64, seed: u64) -> Result<Vec<McEstimate>> {
    if n_samples == 0 {
        return Err(Error::Domain("n_samples must be positive".into()));
    }
    let shift = m.tail_mean()?;
    let r2: Vec<f64> = eps.iter().map(|e| e * e - shift).collect();
    let cap = r2.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let head = m.head();
    let counts = (0..n_samples)
        .into_par_iter()
        .fold(
            || vec![0u64; eps.len()],
            |mut acc, i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i);
                let mut sum = 0.0;
                for &l in head {
                    let x: f64 = rng.sample(StandardNormal);
                    sum += l * x * x;
                    if sum > cap {
                        return acc;
                    }
                }
                for (c, &r) in acc.iter_mut().zip(&r2) {
                    if sum <= r {
                        *c += 1;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; eps.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok(eps
        .iter()
        .zip(counts)
        .map(|(&e, k)| {
            let (lo, hi, one) = if k == 0 {
                (0.0, 1.0 - 0.05f64.powf(1.0 / n_samples as f64), true)
            } else {
                let (a, b) = wilson(k, n_samples);
                (a, b, false)
            };
            McEstimate {
                eps: e,
                successes: k,
                n_samples,
                p_hat: k as f64 / n_samples as f64,
                ci_lo: lo,
                ci_hi: hi,
                one_sided: one,
            }
        })
        .collect())
}

/// Least-squares fit of ln(−ln P / ln^κ(1/ε)) against ln(1/ε).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
}

pub fn fit_exponent(eps: &[f64], ln_p: &[f64], kappa: f64) -> Result<ExponentFit> {
    if eps.len() != ln_p.len() || eps.len() < 2 {
        return Err(Error::Domain("need at least two matching (eps, ln P) pairs".into()));
    }
    let mut xs = Vec::with_capacity(eps.len());
    let mut ys = Vec::with_capacity(eps.len());
    for (&e, &lp) in eps.iter().zip(ln_p) {
        if !(e > 0.0 && e < 1.0 && lp < 0.0) {
            return Err(Error::Domain(format!("need 0 < eps < 1 and ln P < 0, got ({e}, {lp})")));
        }
        let x = (1.0 / e).ln();
        xs.push(x);
        ys.push((-lp).ln() - kappa * x.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).abs()).fold(0.0, f64::max);
    Ok(ExponentFit { slope, intercept, max_residual })
}

/// ζ samples and the periodicity check over the smallest-ε decade.
#[derive(Debug, Clone, Serialize)]
pub struct ZetaReport {
    /// ln(1/ε), increasing.
    pub x: Vec<f64>,
    pub zeta: Vec<f64>,
    /// T(p−1)/(2p).
    pub period: f64,
    /// sup |ζ(x) − ζ(x − period)| / mean ζ over the last decade.
    pub residual: f64,
    /// The same statistic at half the period, for contrast.
    pub residual_half_period: f64,
    pub oscillation: f64,
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
    let f = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    ys[i - 1] + f * (ys[i] - ys[i - 1])
}

fn period_residual(xs: &[f64], zs: &[f64], shift: f64) -> f64 {
    let x_hi = xs[xs.len() - 1];
    let x_lo = (x_hi - std::f64::consts::LN_10).max(xs[0] + shift);
    let mut sup = 0.0f64;
    let mut mean = 0.0;
    let mut cnt = 0.0;
    for (&x, &z) in xs.iter().zip(zs) {
        if x >= x_lo {
            sup = sup.max((z - interp(xs, zs, x - shift)).abs());
            mean += z;
            cnt += 1.0;
        }
    }
    sup / (mean / cnt)
}

/// ζ(ε) = −ln P(ε)·ε^{2/(p−1)}/ln^κ(1/ε) on `eps` (any order), with a
/// periodicity report in ln(1/ε).
pub fn extract_zeta(m: &SmallDevModel, p: f64, period_t: f64, kappa: f64, eps: &[f64]) -> Result<ZetaReport> {
    let mut pts: Vec<(f64, f64)> = eps
        .par_iter()
        .map(|&e| {
            let lp = m.log_small_ball(e)?.ln_p;
            let x = (1.0 / e).ln();
            Ok((x, -lp * e.powf(2.0 / (p - 1.0)) / x.powf(kappa)))
        })
        .collect::<Result<_>>()?;
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let x: Vec<f64> = pts.iter().map(|v| v.0).collect();
    let zeta: Vec<f64> = pts.iter().map(|v| v.1).collect();
    if x.len() < 4 {
        return Err(Error::Domain("need at least four grid points".into()));
    }
    let period = period_t * (p - 1.0) / (2.0 * p);
    let zmax = zeta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let zmin = zeta.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ZetaReport {
        residual: period_residual(&x, &zeta, period),
        residual_half_period: period_residual(&x, &zeta, 0.5 * period),
        oscillation: zmax - zmin,
        period,
        x,
        zeta,
    })
}

/// `n` points from `start` to `stop`, geometric.
pub fn geometric_grid(start: f64, stop: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let ratio = stop / start;
    let last = n - 1;
    (0..n)
        .map(|i| match i {
            0 => start,
            i if i == last => stop,
            // 15 significant digits, so decade grids land on 1e-8 rather than a neighbour
            i => format!("{:.14e}", start * ratio.powf(i as f64 / last as f64)).parse().unwrap(),
        })
        .collect()
}
