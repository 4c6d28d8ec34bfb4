//! Marginal spectra: explicit lists and the two asymptotic model forms.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fft::circular_convolve;
use crate::periodic::{PeriodicComponent, PeriodicSpec, RhoFamily, SampledPeriodicFn, DEFAULT_GRID};
use crate::quad::gl8_nodes;
use crate::svf::{integral_tail, integral_tail_from, SlowlyVaryingFn};

/// Default validated range for model spectra.
pub const DEFAULT_N_MAX: u64 = 1_000_000_000;

const HULL_STEP: f64 = 1e-3;
const HULL_MAX_NODES: usize = 5_000_000;

/// Counting-form model N_as(t) = φ(1/t)·s(ln(1/t))·t^{-1/p}.
///
/// Eigenvalues are the generalized inverse of the nondecreasing hull M of
/// F(τ) = φ(e^τ)ϱ(τ) (φ frozen at φ(1) for τ < 0): λ_n = e^{-τ_n} with
/// τ_n = inf{τ : M(τ) > n}, so that N(t) = ⌈M(ln 1/t)⌉ - 1.
#[derive(Debug, Clone)]
pub struct CountingModel {
    p: f64,
    phi: SlowlyVaryingFn,
    s: PeriodicComponent,
    n_max: u64,
    hull: Option<Hull>,
}

#[derive(Debug, Clone)]
struct Hull {
    step: f64,
    end: f64,
    runmax: Vec<f64>,
}

impl CountingModel {
    pub fn new(p: f64, phi: SlowlyVaryingFn, s: PeriodicComponent, n_max: u64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidModel(format!("p must exceed 1, got {p}")));
        }
        phi.validate()?;
        if (s.p() - p).abs() > 1e-12 * p {
            return Err(Error::InvalidModel(format!("periodic component has p = {}, spectrum p = {p}", s.p())));
        }
        let mut m = CountingModel { p, phi: phi.normalized(), s, n_max, hull: None };
        let kappa = m.phi.kappa();
        if kappa < 0.0 {
            let slope = m.s.min_log_slope();
            if slope <= 0.0 {
                return Err(Error::InvalidModel(
                    "phi decreases while rho has flat stretches (min (ln rho)' = 0): N_as is not eventually monotone"
                        .into(),
                ));
            }
            let end = (-kappa / slope - 1.0).max(0.0);
            if end > 0.0 {
                let n = (end / HULL_STEP).ceil() as usize;
                if n > HULL_MAX_NODES {
                    return Err(Error::InvalidModel(format!(
                        "monotone region of N_as starts too late (ln(1/t) > {end:.1})"
                    )));
                }
                let step = end / n as f64;
                let mut runmax = Vec::with_capacity(n + 1);
                let mut best = 0.0f64;
                for i in 0..=n {
                    best = best.max(m.f(i as f64 * step));
                    runmax.push(best);
                }
                m.hull = Some(Hull { step, end, runmax });
            }
        }
        Ok(m)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn phi(&self) -> &SlowlyVaryingFn {
        &self.phi
    }

    pub fn s(&self) -> &PeriodicComponent {
        &self.s
    }

    pub fn n_max(&self) -> u64 {
        self.n_max
    }

    /// F(τ) = φ(e^τ)ϱ(τ).
    #[inline]
    pub fn f(&self, tau: f64) -> f64 {
        self.phi.eval_log(tau.max(0.0)) * self.s.rho(tau)
    }

    /// End of the region where M differs from F (0 when there is none).
    pub fn hull_end(&self) -> f64 {
        self.hull.as_ref().map_or(0.0, |h| h.end)
    }

    /// Nondecreasing hull M(τ).
    #[inline]
    pub fn m(&self, tau: f64) -> f64 {
        match &self.hull {
            Some(h) if tau >= 0.0 => {
                if tau >= h.end {
                    h.runmax[h.runmax.len() - 1].max(self.f(tau))
                } else {
                    let x = tau / h.step;
                    let i = (x.floor() as usize).min(h.runmax.len() - 2);
                    let fr = x - i as f64;
                    h.runmax[i] + fr * (h.runmax[i + 1] - h.runmax[i])
                }
            }
            _ => self.f(tau),
        }
    }

    /// Largest value of M inside the hull region.
    pub fn hull_max(&self) -> f64 {
        self.hull.as_ref().map_or(0.0, |h| h.runmax[h.runmax.len() - 1])
    }

    /// N_as(t).
    pub fn n_as(&self, t: f64) -> f64 {
        self.f((1.0 / t).ln())
    }

    /// inf{τ : M(τ) > x} for real x > 0.
    pub fn tau_of(&self, x: f64) -> f64 {
        let mut lo = 0.0;
        while self.m(lo) > x {
            lo -= self.s.period().max(1.0);
        }
        let mut hi = (self.p * x.max(1.0).ln()).max(lo + 1.0);
        while self.m(hi) <= x {
            lo = hi;
            hi = 2.0 * hi + 1.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.m(mid) > x {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-13 * hi.abs().max(1.0) {
                break;
            }
        }
        hi
    }

    /// Real-valued counting function N(σ) = ⌈M(σ)⌉ - 1 in σ = ln(1/t).
    pub fn count_at(&self, sigma: f64) -> Result<u64> {
        let m = self.m(sigma);
        if m > self.n_max as f64 + 1.0 {
            return Err(Error::Range(format!(
                "t = {:e} below the validated range (N_as = {m:e} > n_max = {})",
                (-sigma).exp(),
                self.n_max
            )));
        }
        Ok((m.ceil() - 1.0).max(0.0) as u64)
    }
}

/// Eigenvalue-form model λ_n = ψ(n)·𝔰(ln n)·n^{-p}.
#[derive(Debug, Clone)]
pub struct EigenvalueModel {
    p: f64,
    psi: SlowlyVaryingFn,
    s: PeriodicComponent,
    n_max: u64,
    as_counting: Option<(SlowlyVaryingFn, PeriodicComponent)>,
}

impl EigenvalueModel {
    pub fn new(
        p: f64,
        psi: SlowlyVaryingFn,
        s: PeriodicComponent,
        n_max: u64,
        as_counting: Option<(SlowlyVaryingFn, PeriodicComponent)>,
    ) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidModel(format!("p must exceed 1, got {p}")));
        }
        psi.validate()?;
        if let Some((phi, c)) = &as_counting {
            phi.validate()?;
            if (c.p() - p).abs() > 1e-12 * p {
                return Err(Error::InvalidModel("counting form must share p".into()));
            }
        }
        let m = EigenvalueModel { p, psi: psi.normalized(), s, n_max, as_counting };
        m.check_monotone()?;
        Ok(m)
    }

    fn check_monotone(&self) -> Result<()> {
        let n_max = self.n_max.max(2) as f64;
        let mut prev = self.lambda_real(1.0);
        let scan = 2000u64.min(self.n_max);
        for n in 2..=scan {
            let v = self.lambda_real(n as f64);
            if v > prev {
                return Err(Error::InvalidModel(format!("lambda_n increases at n = {n}")));
            }
            prev = v;
        }
        let pts = 4000;
        let l = n_max.ln();
        let mut prev = self.lambda_real(1.0);
        for i in 1..=pts {
            let x = (l * i as f64 / pts as f64).exp();
            let v = self.lambda_real(x);
            if v > prev * (1.0 + 1e-12) {
                return Err(Error::InvalidModel(format!("lambda(x) increases near x = {x:e}")));
            }
            prev = v;
        }
        Ok(())
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn psi(&self) -> &SlowlyVaryingFn {
        &self.psi
    }

    pub fn s(&self) -> &PeriodicComponent {
        &self.s
    }

    pub fn n_max(&self) -> u64 {
        self.n_max
    }

    pub fn as_counting(&self) -> Option<&(SlowlyVaryingFn, PeriodicComponent)> {
        self.as_counting.as_ref()
    }

    /// λ(x) for real x ≥ 1, in terms of y = ln x.
    #[inline]
    pub fn lambda_log(&self, y: f64) -> f64 {
        self.psi.eval_log(y) * self.s.s(y) * (-self.p * y).exp()
    }

    #[inline]
    pub fn lambda_real(&self, x: f64) -> f64 {
        self.lambda_log(x.ln())
    }
}

/// A marginal spectrum. Clones are cheap.
#[derive(Debug, Clone)]
pub enum MarginalSpectrum {
    Explicit(Arc<Vec<f64>>),
    ByEigenvalue(Arc<EigenvalueModel>),
    ByCounting(Arc<CountingModel>),
}

impl MarginalSpectrum {
    pub fn explicit(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidModel("explicit eigenvalues must be positive and finite".into()));
        }
        if lambdas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidModel("explicit eigenvalues must be nonincreasing".into()));
        }
        Ok(MarginalSpectrum::Explicit(Arc::new(lambdas)))
    }

    pub fn by_counting(p: f64, phi: SlowlyVaryingFn, s: PeriodicComponent) -> Result<Self> {
        Ok(MarginalSpectrum::ByCounting(Arc::new(CountingModel::new(p, phi, s, DEFAULT_N_MAX)?)))
    }

    pub fn by_eigenvalue(p: f64, psi: SlowlyVaryingFn, s: PeriodicComponent) -> Result<Self> {
        Ok(MarginalSpectrum::ByEigenvalue(Arc::new(EigenvalueModel::new(p, psi, s, DEFAULT_N_MAX, None)?)))
    }

    /// λ_n = n^{-p}.
    pub fn pure_power(p: f64) -> Result<Self> {
        Self::by_eigenvalue(p, SlowlyVaryingFn::constant(1.0), PeriodicComponent::constant(1.0, 1.0, p)?)
    }

    /// Exponent p; `None` for finite lists (formally p = ∞).
    pub fn p(&self) -> Option<f64> {
        match self {
            MarginalSpectrum::Explicit(_) => None,
            MarginalSpectrum::ByEigenvalue(m) => Some(m.p),
            MarginalSpectrum::ByCounting(m) => Some(m.p),
        }
    }

    /// (φ, s) of the counting form, when known.
    pub fn counting_form(&self) -> Option<(&SlowlyVaryingFn, &PeriodicComponent)> {
        match self {
            MarginalSpectrum::Explicit(_) => None,
            MarginalSpectrum::ByEigenvalue(m) => m.as_counting.as_ref().map(|(a, b)| (a, b)),
            MarginalSpectrum::ByCounting(m) => Some((&m.phi, &m.s)),
        }
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> Option<usize> {
        match self {
            MarginalSpectrum::Explicit(v) => Some(v.len()),
            _ => None,
        }
    }

    /// Largest eigenvalue, or `None` for an empty list.
    pub fn lambda1(&self) -> Result<Option<f64>> {
        match self {
            MarginalSpectrum::Explicit(v) => Ok(v.first().copied()),
            _ => self.eigenvalue(1).map(Some),
        }
    }

    /// λ_n, 1-based.
    pub fn eigenvalue(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::Domain("eigenvalue index starts at 1".into()));
        }
        match self {
            MarginalSpectrum::Explicit(v) => v
                .get((n - 1) as usize)
                .copied()
                .ok_or_else(|| Error::Range(format!("index {n} exceeds list length {}", v.len()))),
            MarginalSpectrum::ByEigenvalue(m) => {
                if n > m.n_max {
                    return Err(Error::Range(format!("index {n} exceeds validated n_max = {}", m.n_max)));
                }
                Ok(m.lambda_real(n as f64))
            }
            MarginalSpectrum::ByCounting(m) => {
                if n > m.n_max {
                    return Err(Error::Range(format!("index {n} exceeds validated n_max = {}", m.n_max)));
                }
                Ok((-m.tau_of(n as f64)).exp())
            }
        }
    }

    /// #{n : λ_n > t}.
    pub fn counting(&self, t: f64) -> Result<u64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("counting needs t > 0, got {t}")));
        }
        match self {
            MarginalSpectrum::Explicit(v) => Ok(v.partition_point(|&x| x > t) as u64),
            MarginalSpectrum::ByEigenvalue(m) => {
                if m.lambda_real(1.0) <= t {
                    return Ok(0);
                }
                if m.lambda_real(m.n_max as f64) > t {
                    return Err(Error::Range(format!(
                        "t = {t:e} below the validated range (lambda(n_max) = {:e})",
                        m.lambda_real(m.n_max as f64)
                    )));
                }
                let (mut lo, mut hi) = (1u64, m.n_max);
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    if m.lambda_real(mid as f64) > t {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(lo)
            }
            MarginalSpectrum::ByCounting(m) => {
                let sigma = (1.0 / t).ln();
                let n = m.count_at(sigma)?;
                // when M(σ) sits on an integer k the answer hinges on λ_k vs t,
                // so decide it the same way eigenvalue() does
                let x = m.m(sigma);
                let k = x.round();
                if k >= 1.0 && (x - k).abs() <= 1e-9 * k && k <= m.n_max as f64 {
                    let lk = (-m.tau_of(k)).exp();
                    return Ok(if lk > t { k as u64 } else { k as u64 - 1 });
                }
                Ok(n)
            }
        }
    }

    /// All eigenvalues strictly above t, in order.
    pub fn eigenvalues_above(&self, t: f64) -> Result<Vec<f64>> {
        match self {
            MarginalSpectrum::Explicit(v) => Ok(v[..v.partition_point(|&x| x > t)].to_vec()),
            MarginalSpectrum::ByEigenvalue(m) => {
                let n = self.counting(t)?;
                Ok((1..=n).map(|k| m.lambda_real(k as f64)).collect())
            }
            MarginalSpectrum::ByCounting(m) => {
                let n = self.counting(t)?;
                Ok((1..=n).into_par_iter().map(|k| (-m.tau_of(k as f64)).exp()).collect())
            }
        }
    }

    /// The first `k` eigenvalues (fewer for a short list).
    pub fn head(&self, k: usize) -> Result<Vec<f64>> {
        match self {
            MarginalSpectrum::Explicit(v) => Ok(v.iter().take(k).copied().collect()),
            MarginalSpectrum::ByEigenvalue(m) => Ok((1..=k).map(|n| m.lambda_real(n as f64)).collect()),
            MarginalSpectrum::ByCounting(m) => {
                if k as u64 > m.n_max {
                    return Err(Error::Range(format!("head of {k} exceeds n_max")));
                }
                Ok((1..=k).into_par_iter().map(|n| (-m.tau_of(n as f64)).exp()).collect())
            }
        }
    }

    /// N_as(t) = φ(1/t)·s(ln(1/t))·t^{-1/p}.
    pub fn n_as(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("n_as needs t > 0, got {t}")));
        }
        match self {
            MarginalSpectrum::Explicit(_) => Err(Error::UnsupportedCase {
                hypothesis: "explicit spectra have no asymptotic counting function".into(),
            }),
            MarginalSpectrum::ByCounting(m) => Ok(m.n_as(t)),
            MarginalSpectrum::ByEigenvalue(m) => match &m.as_counting {
                Some((phi, s)) => {
                    let tau = (1.0 / t).ln();
                    Ok(phi.eval_log(tau.max(0.0)) * s.rho(tau))
                }
                None => Err(Error::UnsupportedCase {
                    hypothesis: "no counting form supplied for this eigenvalue model".into(),
                }),
            },
        }
    }

    /// Σ_k λ_k^{1/q} converges.
    pub fn power_sum_converges(&self, q: f64) -> bool {
        match self {
            MarginalSpectrum::Explicit(_) => true,
            MarginalSpectrum::ByEigenvalue(m) => {
                m.p > q * (1.0 + 1e-12) || ((m.p - q).abs() <= 1e-12 * q && m.psi.kappa() / q < -1.0 - 1e-12)
            }
            MarginalSpectrum::ByCounting(m) => {
                m.p > q * (1.0 + 1e-12) || ((m.p - q).abs() <= 1e-12 * q && integral_tail(&m.phi).converges)
            }
        }
    }

    pub fn to_spec(&self) -> SpectrumSpec {
        match self {
            MarginalSpectrum::Explicit(v) => SpectrumSpec::Explicit { lambdas: v.to_vec() },
            MarginalSpectrum::ByCounting(m) => SpectrumSpec::ByCounting {
                p: m.p,
                phi: m.phi.clone(),
                s: PeriodicSpec::from_component(&m.s),
                n_max: Some(m.n_max),
            },
            MarginalSpectrum::ByEigenvalue(m) => SpectrumSpec::ByEigenvalue {
                p: m.p,
                psi: m.psi.clone(),
                s: PeriodicSpec::from_component(&m.s),
                n_max: Some(m.n_max),
                as_counting: m
                    .as_counting
                    .as_ref()
                    .map(|(phi, s)| CountingForm { phi: phi.clone(), s: PeriodicSpec::from_component(s) }),
            },
        }
    }
}

/// User-supplied counting form for an eigenvalue model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingForm {
    pub phi: SlowlyVaryingFn,
    pub s: PeriodicSpec,
}

/// JSON encoding of a marginal spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumSpec {
    Explicit {
        lambdas: Vec<f64>,
    },
    ByCounting {
        p: f64,
        phi: SlowlyVaryingFn,
        s: PeriodicSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_max: Option<u64>,
    },
    ByEigenvalue {
        p: f64,
        psi: SlowlyVaryingFn,
        s: PeriodicSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_max: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        as_counting: Option<CountingForm>,
    },
}

impl SpectrumSpec {
    pub fn build(&self) -> Result<MarginalSpectrum> {
        match self {
            SpectrumSpec::Explicit { lambdas } => MarginalSpectrum::explicit(lambdas.clone()),
            SpectrumSpec::ByCounting { p, phi, s, n_max } => Ok(MarginalSpectrum::ByCounting(Arc::new(
                CountingModel::new(*p, phi.clone(), s.build(Some(*p))?, n_max.unwrap_or(DEFAULT_N_MAX))?,
            ))),
            SpectrumSpec::ByEigenvalue { p, psi, s, n_max, as_counting } => {
                let ac = match as_counting {
                    Some(cf) => Some((cf.phi.clone(), cf.s.build(Some(*p))?)),
                    None => None,
                };
                Ok(MarginalSpectrum::ByEigenvalue(Arc::new(EigenvalueModel::new(
                    *p,
                    psi.clone(),
                    s.build(Some(*p))?,
                    n_max.unwrap_or(DEFAULT_N_MAX),
                    ac,
                )?)))
            }
        }
    }
}

/// s* together with an estimate of the error committed in the tail.
#[derive(Debug, Clone)]
pub struct SStar {
    pub values: SampledPeriodicFn,
    pub tail_bound: f64,
    /// Number of exactly summed terms.
    pub head_terms: usize,
}

/// Knobs for [`s_star_with`].
#[derive(Debug, Clone, Copy)]
pub struct SStarOptions {
    pub n_points: usize,
    /// Exactly summed terms for model spectra.
    pub head: usize,
    /// Gauss-Legendre panel width in the tail variable.
    pub panel: f64,
    /// Longest tail range integrated before extrapolating.
    pub max_range: f64,
}

impl Default for SStarOptions {
    fn default() -> Self {
        SStarOptions { n_points: DEFAULT_GRID, head: 2000, panel: 0.05, max_range: 4000.0 }
    }
}

/// Weighted point masses folded onto a periodic grid with linear deposition.
struct Fold {
    period: f64,
    bins: Vec<f64>,
}

impl Fold {
    fn new(period: f64, n: usize) -> Self {
        Fold { period, bins: vec![0.0; n] }
    }

    #[inline]
    fn add(&mut self, sigma: f64, w: f64) {
        let n = self.bins.len();
        let x = (sigma / self.period).rem_euclid(1.0) * n as f64;
        let i = (x.floor() as usize).min(n - 1);
        let f = x - i as f64;
        self.bins[i] += w * (1.0 - f);
        self.bins[(i + 1) % n] += w * f;
    }

    fn mass(&self) -> f64 {
        self.bins.iter().sum()
    }
}

/// s*(τ) = Σ_k s(τ + ln λ̃_k)·λ̃_k^{1/p} with default options.
pub fn s_star(s: &PeriodicComponent, other: &MarginalSpectrum, p: f64, tol: f64) -> Result<SStar> {
    s_star_with(s, other, p, tol, SStarOptions::default())
}

/// s* with explicit options. Model spectra are summed exactly over the
/// first `head` terms; the rest is the midpoint-rule integral of the
/// continuous model, folded modulo the period of s, with the part beyond
/// `max_range` extrapolated from the last window by the envelope ratio.
pub fn s_star_with(
    s: &PeriodicComponent,
    other: &MarginalSpectrum,
    p: f64,
    tol: f64,
    opts: SStarOptions,
) -> Result<SStar> {
    if !other.power_sum_converges(p) {
        return Err(Error::Precondition(format!("sum of lambda_k^(1/{p}) diverges for the second spectrum")));
    }
    let n = opts.n_points;
    let period = s.period();
    let h = period / n as f64;
    let (head, tail_fold, tail_bound) = match other {
        MarginalSpectrum::Explicit(v) => (v.to_vec(), None, 0.0),
        MarginalSpectrum::ByEigenvalue(m) => {
            let k = opts.head.min(m.n_max as usize);
            let head = other.head(k)?;
            let (fold, bound) = eigen_tail(m, s, p, k, n, opts);
            (head, Some(fold), bound)
        }
        MarginalSpectrum::ByCounting(m) => {
            let need = (m.hull_max() + 1.0).ceil() as usize;
            let k = opts.head.max(need).min(m.n_max as usize);
            let head = other.head(k)?;
            let (fold, bound) = counting_tail(m, s, p, k, n, opts)?;
            (head, Some(fold), bound)
        }
    };
    let atoms: Vec<(f64, f64)> = head.iter().map(|&l| (-l.ln(), l.powf(1.0 / p))).collect();
    let mut values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let tau = i as f64 * h;
            atoms.iter().map(|&(sig, w)| s.s(tau - sig) * w).sum()
        })
        .collect();
    if let Some(fold) = tail_fold {
        let a: Vec<f64> = (0..n).map(|i| s.s(i as f64 * h)).collect();
        let c = circular_convolve(&a, &fold.bins);
        for (v, t) in values.iter_mut().zip(c) {
            *v += t;
        }
    }
    if tail_bound > tol {
        return Err(Error::Accuracy { what: format!("s* tail bound {tail_bound:e} above {tol:e}"), best: values[0] });
    }
    Ok(SStar { values: SampledPeriodicFn::new(period, values), tail_bound, head_terms: head.len() })
}

/// Tail Σ_{k>K} of an eigenvalue model, as ∫_{ln(K+½)}^∞ (·) e^y dy.
fn eigen_tail(
    m: &EigenvalueModel,
    s: &PeriodicComponent,
    p: f64,
    k: usize,
    n: usize,
    opts: SStarOptions,
) -> (Fold, f64) {
    let y0 = (k as f64 + 0.5).ln();
    let beta = m.p / p - 1.0;
    let kp = m.psi.kappa() / p;
    let env = |y: f64| (1.0 + y).powf(kp) * (-beta * y).exp();
    let span = if beta > 0.0 { (45.0 + kp.abs() * 5.0) / beta } else { opts.max_range };
    let y_end = y0 + span.min(opts.max_range);
    let node = |y: f64| {
        let l = m.lambda_log(y);
        (-l.ln(), l.powf(1.0 / p) * y.exp())
    };
    let window = (s.period() * (20.0 / s.period()).ceil()).min(0.5 * (y_end - y0));
    let (fold, last) = integrate_nodes(s.period(), n, y0, y_end, window, opts.panel, node);
    let e_win = crate::quad::composite_gl8(env, y_end - window, y_end, opts.panel);
    let e_tail = if beta > 0.0 {
        crate::quad::composite_gl8(env, y_end, y_end + 60.0 / beta, 0.5)
    } else {
        integral_tail_from(&SlowlyVaryingFn::log_pow(kp), y_end).unwrap_or(f64::INFINITY)
    };
    let ratio = e_tail / e_win;
    let mut fold = fold;
    for (b, w) in fold.bins.iter_mut().zip(&last.bins) {
        *b += ratio * w;
    }
    // midpoint error of the first tail cell plus a share of the extrapolated mass
    let wk = m.lambda_real(k as f64).powf(1.0 / p);
    let osc = 1.0 + 2.0 * std::f64::consts::PI * m.p / s.period();
    let bound = s.max_s() * (wk * osc / (24.0 * k as f64) + 0.05 * ratio * last.mass());
    (fold, bound)
}

/// Tail Σ_{n>K} of a counting model as ∫ e^{-σ/p} dM(σ) from M = K+½.
fn counting_tail(
    m: &CountingModel,
    s: &PeriodicComponent,
    p: f64,
    k: usize,
    n: usize,
    opts: SStarOptions,
) -> Result<(Fold, f64)> {
    let sig0 = m.tau_of(k as f64 + 0.5);
    let c = m.s();
    let po = m.p;
    let beta = 1.0 / p - 1.0 / po;
    let phi = m.phi.clone();
    let env = |sg: f64| phi.eval_log(sg) * (-beta * sg).exp();
    let span = if beta > 0.0 { (45.0 + phi.kappa().abs() * 5.0) / beta } else { opts.max_range };
    let sig_end = sig0 + span.min(opts.max_range);
    let window = (c.period() * (20.0 / c.period()).ceil()).min(0.5 * (sig_end - sig0));
    let mut fold = Fold::new(s.period(), n);
    let mut last = Fold::new(s.period(), n);
    let win_start = sig_end - window;
    // absolutely continuous part: e^{-βσ}[φ′ s_o + φ ν_o′]
    let ac = c.is_absolutely_continuous();
    let dens = |sg: f64| {
        let e = (-beta * sg).exp();
        let mut v = phi.eval_log_deriv(sg) * c.s(sg);
        if ac {
            v += phi.eval_log(sg) * c.nu_density(sg);
        }
        e * v
    };
    let panels = ((sig_end - sig0) / opts.panel).ceil() as usize;
    let hp = (sig_end - sig0) / panels as f64;
    for i in 0..panels {
        let a = sig0 + i as f64 * hp;
        gl8_nodes(a, a + hp, |x, w| {
            let v = dens(x) * w;
            fold.add(x, v);
            if x >= win_start {
                last.add(x, v);
            }
        });
    }
    if let RhoFamily::CantorStaircase { depth } = c.family() {
        let atoms = c.cantor_atoms((*depth).min(12));
        let t = c.period();
        let k0 = (sig0 / t).floor() as i64;
        let k1 = (sig_end / t).floor() as i64;
        for kk in k0..=k1 {
            let base = kk as f64 * t;
            for &(u, mass) in &atoms {
                let x = base + u;
                if x < sig0 || x >= sig_end {
                    continue;
                }
                // e^{-σ/p} φ dϱ = e^{-βσ} φ e^{-u/p_o} Δϱ0
                let v = (-beta * x).exp() * phi.eval_log(x) * (-u / po).exp() * mass;
                fold.add(x, v);
                if x >= win_start {
                    last.add(x, v);
                }
            }
        }
    }
    let e_win = crate::quad::composite_gl8(env, win_start, sig_end, opts.panel);
    let e_tail = if beta > 0.0 {
        crate::quad::composite_gl8(env, sig_end, sig_end + 60.0 / beta, 0.5)
    } else {
        integral_tail_from(&phi, sig_end).ok_or_else(|| Error::Precondition("divergent tail".into()))?
    };
    let ratio = e_tail / e_win;
    for (b, w) in fold.bins.iter_mut().zip(&last.bins) {
        *b += ratio * w;
    }
    let wk = (-sig0 / p).exp();
    let dm = (m.m(sig0 + 1e-4) - m.m(sig0 - 1e-4)) / 2e-4;
    let osc = 1.0 + 2.0 * std::f64::consts::PI / s.period();
    let bound = s.max_s() * (wk * osc / (24.0 * dm.max(1e-300)) + 0.05 * ratio * last.mass());
    Ok((fold, bound))
}

/// Integrates `node(y) = (σ, weight density)` over [y0, y1] into a fold,
/// also collecting the last `window` separately.
fn integrate_nodes<F: Fn(f64) -> (f64, f64)>(
    period: f64,
    n: usize,
    y0: f64,
    y1: f64,
    window: f64,
    panel: f64,
    node: F,
) -> (Fold, Fold) {
    let mut fold = Fold::new(period, n);
    let mut last = Fold::new(period, n);
    let panels = ((y1 - y0) / panel).ceil().max(1.0) as usize;
    let hp = (y1 - y0) / panels as f64;
    let ws = y1 - window;
    for i in 0..panels {
        let a = y0 + i as f64 * hp;
        gl8_nodes(a, a + hp, |y, w| {
            let (sig, dens) = node(y);
            fold.add(sig, dens * w);
            if y >= ws {
                last.add(sig, dens * w);
            }
        });
    }
    (fold, last)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(p: f64) -> PeriodicComponent {
        PeriodicComponent::constant(1.0, 1.0, p).unwrap()
    }

    #[test]
    fn eigenvalue_examples() {
        let e = MarginalSpectrum::explicit(vec![1.0, 0.5, 0.25]).unwrap();
        assert_eq!(e.eigenvalue(3).unwrap(), 0.25);
        assert!(matches!(e.eigenvalue(4), Err(Error::Range(_))));
        let b = MarginalSpectrum::pure_power(2.0).unwrap();
        assert!((b.eigenvalue(10).unwrap() - 0.01).abs() < 1e-16);
        let c = MarginalSpectrum::by_counting(2.0, SlowlyVaryingFn::constant(1.0), one(2.0)).unwrap();
        assert!((c.eigenvalue(4).unwrap() - 1.0 / 16.0).abs() < 1e-12 / 16.0);
    }

    #[test]
    fn counting_examples() {
        let e = MarginalSpectrum::explicit((0..10).map(|n| 2f64.powi(-n)).collect()).unwrap();
        assert_eq!(e.counting(0.3).unwrap(), 2);
        assert_eq!(e.counting(1.0).unwrap(), 0);
        let b = MarginalSpectrum::pure_power(2.0).unwrap();
        assert_eq!(b.counting(0.01).unwrap(), 9);
        assert_eq!(b.counting(1.0).unwrap(), 0);
        assert!(matches!(b.counting(1e-19), Err(Error::Range(_))));
    }

    #[test]
    fn n_as_examples() {
        let c = MarginalSpectrum::by_counting(2.0, SlowlyVaryingFn::constant(1.0), one(2.0)).unwrap();
        assert!((c.n_as(1e-4).unwrap() - 100.0).abs() < 1e-9);
        let s = PeriodicComponent::cosine(0.05, 1.0, 2.0).unwrap();
        let c = MarginalSpectrum::by_counting(2.0, SlowlyVaryingFn::log_pow(0.5), s).unwrap();
        let g = |x: f64| {
            let t = (-x).exp();
            c.n_as(t).unwrap() * t.sqrt() / (1.0 + x).powf(0.5)
        };
        for x in [3.3, 7.9, 12.2] {
            assert!((g(x) - g(x + 1.0)).abs() < 1e-12);
        }
        assert!(MarginalSpectrum::explicit(vec![1.0]).unwrap().n_as(0.5).is_err());
    }

    #[test]
    fn counting_close_to_n_as() {
        let s = PeriodicComponent::cosine(0.06, 1.0, 2.0).unwrap();
        let c = MarginalSpectrum::by_counting(2.0, SlowlyVaryingFn::log_pow(1.0), s).unwrap();
        for i in 0..200 {
            let t = 10f64.powf(-0.05 * i as f64);
            let n = c.counting(t).unwrap() as f64;
            assert!((n - c.n_as(t).unwrap()).abs() <= 1.0);
        }
    }

    #[test]
    fn hull_for_decreasing_phi() {
        let s = PeriodicComponent::cosine(0.05, 1.0, 2.0).unwrap();
        let m = CountingModel::new(2.0, SlowlyVaryingFn::log_pow(-2.0), s, DEFAULT_N_MAX).unwrap();
        assert!(m.hull_end() > 5.0);
        let mut prev = 0.0;
        for i in 0..20000 {
            let v = m.m(-2.0 + i as f64 * 1e-3);
            assert!(v >= prev);
            prev = v;
        }
        // beyond the hull the model is its formula
        assert_eq!(m.m(40.0), m.f(40.0));
        let cantor = PeriodicComponent::cantor(8, 1.0, 2.0).unwrap();
        assert!(CountingModel::new(2.0, SlowlyVaryingFn::log_pow(-2.0), cantor, DEFAULT_N_MAX).is_err());
    }

    #[test]
    fn s_star_examples() {
        let s = PeriodicComponent::cosine(0.05, 1.0, 2.0).unwrap();
        let r = s_star(&s, &MarginalSpectrum::explicit(vec![1.0]).unwrap(), 2.0, 1e-9).unwrap();
        for i in (0..r.values.len()).step_by(97) {
            let x = r.values.grid_point(i);
            assert!((r.values.values[i] - s.s(x)).abs() < 1e-14);
        }
        let geo = MarginalSpectrum::explicit((0..40).map(|k| 4f64.powi(-k)).collect()).unwrap();
        let r = s_star(&one(2.0), &geo, 2.0, 1e-9).unwrap();
        assert!(r.values.values.iter().all(|v| (v - 2.0).abs() < 1e-11));
        let cube = MarginalSpectrum::pure_power(3.0).unwrap();
        let r = s_star(&one(2.0), &cube, 2.0, 1e-6).unwrap();
        let zeta_15 = 2.612_375_348_685_488;
        assert!(r.values.values.iter().all(|v| (v - zeta_15).abs() < 1e-6), "{}", r.values.values[0]);
    }

    #[test]
    fn s_star_counting_tail_matches_direct_sum() {
        // Σ λ_n^{1/2} for N_as = (1+ln(1/t))^{-2} t^{-1/2}: head vs head+tail at two head sizes
        let m = MarginalSpectrum::by_counting(2.0, SlowlyVaryingFn::log_pow(-2.0), one(2.0)).unwrap();
        let a = s_star_with(&one(2.0), &m, 2.0, 1e-3, SStarOptions { head: 1000, n_points: 64, ..Default::default() })
            .unwrap();
        let b = s_star_with(&one(2.0), &m, 2.0, 1e-3, SStarOptions { head: 4000, n_points: 64, ..Default::default() })
            .unwrap();
        assert!((a.values.values[0] - b.values.values[0]).abs() < 1e-8);
        assert!(a.tail_bound < 1e-4);
        assert!(MarginalSpectrum::by_counting(2.0, SlowlyVaryingFn::constant(1.0), one(2.0))
            .map(|m| s_star(&one(2.0), &m, 2.0, 1e-6).is_err())
            .unwrap());
    }

    #[test]
    fn power_law_counting_asymptotics() {
        let b = MarginalSpectrum::pure_power(2.0).unwrap();
        let t = 1e-10;
        let r = b.counting(t).unwrap() as f64 * t.sqrt();
        assert!((r - 1.0).abs() < 0.01);
    }

    #[test]
    fn spec_round_trip() {
        let js = r#"{"kind":"by_counting","p":2.0,"phi":{"kind":"const","c":1.0},"s":{"kind":"cosine","T":1.0,"a":0.05}}"#;
        let spec: SpectrumSpec = serde_json::from_str(js).unwrap();
        let m = spec.build().unwrap();
        let back = m.to_spec().build().unwrap();
        assert_eq!(m.counting(1e-6).unwrap(), back.counting(1e-6).unwrap());
    }
}
