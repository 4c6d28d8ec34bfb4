//! Periodic components s(τ) = e^{-τ/p} ϱ(τ) with monotone ϱ satisfying
//! ϱ(τ+T) = e^{T/p} ϱ(τ).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fft::{circular_convolve, spectral_derivative};
use crate::quad::{adaptive_gl8, QuadratureSettings};

/// Default number of samples for sampled periodic functions.
pub const DEFAULT_GRID: usize = 4096;

/// Largest supported staircase depth.
pub const MAX_CANTOR_DEPTH: u32 = 24;

/// Shape of the scaling function ϱ on one period.
#[derive(Debug, Clone, PartialEq)]
pub enum RhoFamily {
    /// ϱ(τ) = a·e^{τ/p}, so s ≡ a.
    ExpAffine { a: f64 },
    /// Values of ϱ at uniformly spaced points of [0, T], both ends included.
    PiecewiseLinearRho { knots: Vec<f64> },
    /// s(τ) = 1 + a·cos(2πτ/T).
    CosineS { a: f64 },
    /// ϱ(τ) = e^{kT/p}(1 + (e^{T/p}-1)·C((τ-kT)/T)) with C the Cantor function
    /// approximated at `depth` ternary digits.
    CantorStaircase { depth: u32 },
}

/// A validated periodic component.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicComponent {
    period: f64,
    p: f64,
    family: RhoFamily,
    min_s: f64,
    max_s: f64,
    min_log_slope: f64,
}

/// Largest admissible |a| for the cosine family: beyond it ϱ stops being
/// monotone.
pub fn cosine_a_max(period: f64, p: f64) -> f64 {
    1.0 / (1.0 + (2.0 * PI * p / period).powi(2)).sqrt()
}

/// Piecewise-linear approximant of the Cantor function at `depth` ternary digits.
pub fn cantor_fn(x: f64, depth: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let mut x = x;
    let mut value = 0.0;
    let mut weight = 1.0;
    for _ in 0..depth {
        x *= 3.0;
        if x < 1.0 {
        } else if x < 2.0 {
            return value + weight * 0.5;
        } else {
            value += weight * 0.5;
            x -= 2.0;
        }
        weight *= 0.5;
    }
    value + weight * x
}

impl PeriodicComponent {
    pub fn new(period: f64, p: f64, family: RhoFamily) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidModel(format!("period must be positive, got {period}")));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidModel(format!("exponent p must exceed 1, got {p}")));
        }
        let mut c = PeriodicComponent { period, p, family, min_s: 0.0, max_s: 0.0, min_log_slope: 0.0 };
        c.validate_family()?;
        c.record_range();
        if !(c.min_s > 0.0) {
            return Err(Error::InvalidModel(format!("s is not separated from zero (min {})", c.min_s)));
        }
        Ok(c)
    }

    pub fn constant(a: f64, period: f64, p: f64) -> Result<Self> {
        Self::new(period, p, RhoFamily::ExpAffine { a })
    }

    pub fn cosine(a: f64, period: f64, p: f64) -> Result<Self> {
        Self::new(period, p, RhoFamily::CosineS { a })
    }

    pub fn cantor(depth: u32, period: f64, p: f64) -> Result<Self> {
        Self::new(period, p, RhoFamily::CantorStaircase { depth })
    }

    /// Builds a piecewise-linear ϱ from T-periodic samples of s on a uniform grid
    /// (s(0) repeated at the right end). Small rounding dips are flattened.
    pub fn from_s_samples(samples: &[f64], period: f64, p: f64) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::InvalidModel("need at least two samples".into()));
        }
        let h = period / n as f64;
        let mut knots: Vec<f64> = (0..=n).map(|i| (i as f64 * h / p).exp() * samples[i % n]).collect();
        for i in 1..knots.len() {
            if knots[i] < knots[i - 1] {
                if knots[i] < knots[i - 1] * (1.0 - 1e-9) {
                    return Err(Error::InvalidModel(format!(
                        "samples do not come from a monotone rho (drop at knot {i})"
                    )));
                }
                knots[i] = knots[i - 1];
            }
        }
        knots[n] = knots[0] * (period / p).exp();
        Self::new(period, p, RhoFamily::PiecewiseLinearRho { knots })
    }

    fn validate_family(&mut self) -> Result<()> {
        let (t, p) = (self.period, self.p);
        match &self.family {
            RhoFamily::ExpAffine { a } => {
                if !(*a > 0.0 && a.is_finite()) {
                    return Err(Error::InvalidModel(format!("ExpAffine needs a > 0, got {a}")));
                }
                self.min_log_slope = 1.0 / p;
            }
            RhoFamily::CosineS { a } => {
                let amax = cosine_a_max(t, p);
                if a.abs() > amax * (1.0 + 1e-12) {
                    return Err(Error::InvalidModel(format!(
                        "cosine amplitude |a| = {} exceeds a_max = {amax:.6} for T = {t}, p = {p}; rho would not be monotone",
                        a.abs()
                    )));
                }
                let w = 2.0 * PI / t;
                let a = a.abs();
                self.min_log_slope = (1.0 / p - a * w / (1.0 - a * a).sqrt()).max(0.0);
            }
            RhoFamily::PiecewiseLinearRho { knots } => {
                if knots.len() < 2 {
                    return Err(Error::InvalidModel("pl_rho needs at least two knots".into()));
                }
                if knots.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(Error::InvalidModel("pl_rho knots must be positive".into()));
                }
                if knots.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::InvalidModel("pl_rho knots must be nondecreasing".into()));
                }
                let want = knots[0] * (t / p).exp();
                let last = *knots.last().unwrap();
                if ((last - want) / want).abs() > 1e-9 {
                    return Err(Error::InvalidModel(format!(
                        "pl_rho violates the scaling law: rho(T) = {last}, expected {want}"
                    )));
                }
                let h = t / (knots.len() - 1) as f64;
                self.min_log_slope = knots.windows(2).map(|w| (w[1] - w[0]) / h / w[1]).fold(f64::INFINITY, f64::min);
            }
            RhoFamily::CantorStaircase { depth } => {
                if *depth < 1 || *depth > MAX_CANTOR_DEPTH {
                    return Err(Error::InvalidModel(format!("cantor depth must be in 1..={MAX_CANTOR_DEPTH}")));
                }
                self.min_log_slope = 0.0;
            }
        }
        Ok(())
    }

    fn record_range(&mut self) {
        match &self.family {
            RhoFamily::ExpAffine { a } => {
                self.min_s = *a;
                self.max_s = *a;
            }
            RhoFamily::CosineS { a } => {
                self.min_s = 1.0 - a.abs();
                self.max_s = 1.0 + a.abs();
            }
            _ => {
                let n = 16384;
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for i in 0..n {
                    let v = self.s(i as f64 * self.period / n as f64);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                if let RhoFamily::PiecewiseLinearRho { knots } = &self.family {
                    let h = self.period / (knots.len() - 1) as f64;
                    for (i, v) in knots.iter().enumerate() {
                        let s = v * (-(i as f64) * h / self.p).exp();
                        lo = lo.min(s);
                        hi = hi.max(s);
                    }
                }
                self.min_s = lo;
                self.max_s = hi;
            }
        }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn family(&self) -> &RhoFamily {
        &self.family
    }

    pub fn min_s(&self) -> f64 {
        self.min_s
    }

    pub fn max_s(&self) -> f64 {
        self.max_s
    }

    /// Essential infimum of (ln ϱ)′.
    pub fn min_log_slope(&self) -> f64 {
        self.min_log_slope
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.family, RhoFamily::ExpAffine { .. })
    }

    pub fn is_absolutely_continuous(&self) -> bool {
        !matches!(self.family, RhoFamily::CantorStaircase { .. })
    }

    /// Same shape with another exponent; cosine amplitudes are rechecked.
    pub fn with_p(&self, p: f64) -> Result<Self> {
        Self::new(self.period, p, self.family.clone())
    }

    /// τ = kT + u with u ∈ [0, T).
    #[inline]
    pub fn reduce(&self, tau: f64) -> (f64, f64) {
        let k = (tau / self.period).floor();
        let mut u = tau - k * self.period;
        if u >= self.period {
            u -= self.period;
        }
        if u < 0.0 {
            u = 0.0;
        }
        (k, u)
    }

    /// ϱ on one period, u ∈ [0, T].
    #[inline]
    pub fn rho0(&self, u: f64) -> f64 {
        match &self.family {
            RhoFamily::ExpAffine { a } => a * (u / self.p).exp(),
            RhoFamily::CosineS { a } => (u / self.p).exp() * (1.0 + a * (2.0 * PI * u / self.period).cos()),
            RhoFamily::PiecewiseLinearRho { knots } => {
                let m = knots.len() - 1;
                let x = (u / self.period * m as f64).clamp(0.0, m as f64);
                let i = (x.floor() as usize).min(m - 1);
                let f = x - i as f64;
                knots[i] + f * (knots[i + 1] - knots[i])
            }
            RhoFamily::CantorStaircase { depth } => {
                1.0 + ((self.period / self.p).exp() - 1.0) * cantor_fn(u / self.period, *depth)
            }
        }
    }

    /// s(τ) = e^{-τ/p} ϱ(τ).
    #[inline]
    pub fn s(&self, tau: f64) -> f64 {
        match &self.family {
            RhoFamily::ExpAffine { a } => *a,
            RhoFamily::CosineS { a } => {
                let (_, u) = self.reduce(tau);
                1.0 + a * (2.0 * PI * u / self.period).cos()
            }
            _ => {
                let (_, u) = self.reduce(tau);
                (-u / self.p).exp() * self.rho0(u)
            }
        }
    }

    /// ϱ(τ) for any real τ.
    #[inline]
    pub fn rho(&self, tau: f64) -> f64 {
        let (k, u) = self.reduce(tau);
        (k * self.period / self.p).exp() * self.rho0(u)
    }

    /// ln ϱ(τ), safe for large |τ|.
    #[inline]
    pub fn ln_rho(&self, tau: f64) -> f64 {
        tau / self.p + self.s(tau).ln()
    }

    /// ϱ′ on one period for absolutely continuous families.
    fn rho0_deriv(&self, u: f64) -> f64 {
        match &self.family {
            RhoFamily::ExpAffine { a } => a / self.p * (u / self.p).exp(),
            RhoFamily::CosineS { a } => {
                let w = 2.0 * PI / self.period;
                (u / self.p).exp() * ((1.0 + a * (w * u).cos()) / self.p - a * w * (w * u).sin())
            }
            RhoFamily::PiecewiseLinearRho { knots } => {
                let m = knots.len() - 1;
                let h = self.period / m as f64;
                let i = ((u / h).floor() as usize).min(m - 1);
                (knots[i + 1] - knots[i]) / h
            }
            RhoFamily::CantorStaircase { .. } => 0.0,
        }
    }

    /// Density of the periodic measure e^{-τ/p} dϱ(τ) (absolutely continuous
    /// families only; zero for the staircase).
    #[inline]
    pub fn nu_density(&self, tau: f64) -> f64 {
        let (_, u) = self.reduce(tau);
        (-u / self.p).exp() * self.rho0_deriv(u)
    }

    /// s′(τ) for absolutely continuous families.
    pub fn s_deriv(&self, tau: f64) -> f64 {
        self.nu_density(tau) - self.s(tau) / self.p
    }

    /// Atoms (u, Δϱ) approximating dϱ on one period [0, T) at ϱ(0)-scale,
    /// for the staircase family. Masses are exact for the approximant.
    pub fn cantor_atoms(&self, depth: u32) -> Vec<(f64, f64)> {
        let own = match self.family {
            RhoFamily::CantorStaircase { depth } => depth,
            _ => return Vec::new(),
        };
        let d = depth.min(own).min(MAX_CANTOR_DEPTH);
        let extra = depth.saturating_sub(own).min(MAX_CANTOR_DEPTH - d);
        let scale = (self.period / self.p).exp() - 1.0;
        let mut out = Vec::with_capacity(1usize << (d + extra));
        let mass = scale / (1u64 << d) as f64;
        let width = self.period / 3f64.powi(d as i32);
        let mut stack = vec![(0.0f64, self.period, 0u32)];
        let mut lefts = Vec::with_capacity(1usize << d);
        while let Some((l, w, j)) = stack.pop() {
            if j == d {
                lefts.push(l);
            } else {
                stack.push((l + 2.0 * w / 3.0, w / 3.0, j + 1));
                stack.push((l, w / 3.0, j + 1));
            }
        }
        lefts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let parts = 1u64 << extra;
        let sub = width / parts as f64;
        for l in lefts {
            for q in 0..parts {
                out.push((l + (q as f64 + 0.5) * sub, mass / parts as f64));
            }
        }
        out
    }

    /// Samples of s on the uniform grid of [0, T).
    pub fn sample(&self, n: usize) -> SampledPeriodicFn {
        let h = self.period / n as f64;
        SampledPeriodicFn::new(self.period, (0..n).map(|i| self.s(i as f64 * h)).collect())
    }

    /// Breakpoints of ϱ′ inside one period (PL knots).
    fn breakpoints0(&self) -> Vec<f64> {
        match &self.family {
            RhoFamily::PiecewiseLinearRho { knots } => {
                let m = knots.len() - 1;
                (0..=m).map(|i| i as f64 * self.period / m as f64).collect()
            }
            _ => vec![0.0, self.period],
        }
    }
}

/// JSON encoding of a periodic component; `p` defaults to the owning spectrum's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PeriodicSpec {
    Const {
        a: f64,
        #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
        period: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
    },
    Cosine {
        #[serde(rename = "T")]
        period: f64,
        a: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
    },
    Cantor {
        #[serde(rename = "T")]
        period: f64,
        depth: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
    },
    PlRho {
        #[serde(rename = "T")]
        period: f64,
        knots: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
    },
}

impl PeriodicSpec {
    fn own_p(&self) -> Option<f64> {
        match self {
            PeriodicSpec::Const { p, .. }
            | PeriodicSpec::Cosine { p, .. }
            | PeriodicSpec::Cantor { p, .. }
            | PeriodicSpec::PlRho { p, .. } => *p,
        }
    }

    /// Builds the component. An explicit `p` must agree with `default_p`.
    pub fn build(&self, default_p: Option<f64>) -> Result<PeriodicComponent> {
        let p = match (self.own_p(), default_p) {
            (Some(a), Some(b)) if (a - b).abs() > 1e-12 * b.abs() => {
                return Err(Error::InvalidModel(format!("periodic component p = {a} differs from spectrum p = {b}")))
            }
            (Some(a), _) => a,
            (None, Some(b)) => b,
            (None, None) => return Err(Error::InvalidModel("periodic component needs p".into())),
        };
        match self {
            PeriodicSpec::Const { a, period, .. } => PeriodicComponent::constant(*a, period.unwrap_or(1.0), p),
            PeriodicSpec::Cosine { period, a, .. } => PeriodicComponent::cosine(*a, *period, p),
            PeriodicSpec::Cantor { period, depth, .. } => PeriodicComponent::cantor(*depth, *period, p),
            PeriodicSpec::PlRho { period, knots, .. } => {
                PeriodicComponent::new(*period, p, RhoFamily::PiecewiseLinearRho { knots: knots.clone() })
            }
        }
    }

    pub fn from_component(c: &PeriodicComponent) -> Self {
        let p = Some(c.p());
        let period = c.period();
        match c.family() {
            RhoFamily::ExpAffine { a } => PeriodicSpec::Const { a: *a, period: Some(period), p },
            RhoFamily::CosineS { a } => PeriodicSpec::Cosine { period, a: *a, p },
            RhoFamily::CantorStaircase { depth } => PeriodicSpec::Cantor { period, depth: *depth, p },
            RhoFamily::PiecewiseLinearRho { knots } => PeriodicSpec::PlRho { period, knots: knots.clone(), p },
        }
    }
}

/// A periodic function given by uniform samples on [0, period).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPeriodicFn {
    pub period: f64,
    pub values: Vec<f64>,
}

impl SampledPeriodicFn {
    pub fn new(period: f64, values: Vec<f64>) -> Self {
        SampledPeriodicFn { period, values }
    }

    pub fn constant(period: f64, v: f64, n: usize) -> Self {
        SampledPeriodicFn { period, values: vec![v; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid_point(&self, i: usize) -> f64 {
        i as f64 * self.period / self.values.len() as f64
    }

    /// Linear interpolation, periodic.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        let y = (x / self.period).rem_euclid(1.0) * n as f64;
        let i = (y.floor() as usize).min(n - 1);
        let f = y - i as f64;
        self.values[i] * (1.0 - f) + self.values[(i + 1) % n] * f
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// (max - min)/mean.
    pub fn oscillation(&self) -> f64 {
        (self.max() - self.min()) / self.mean()
    }

    pub fn scaled(&self, c: f64) -> Self {
        SampledPeriodicFn::new(self.period, self.values.iter().map(|v| v * c).collect())
    }

    pub fn spectral_derivative(&self) -> Self {
        SampledPeriodicFn::new(self.period, spectral_derivative(&self.values, self.period))
    }

    /// One-sided forward differences, for kinked data.
    pub fn forward_difference(&self) -> Self {
        let n = self.values.len();
        let h = self.period / n as f64;
        SampledPeriodicFn::new(
            self.period,
            (0..n).map(|i| (self.values[(i + 1) % n] - self.values[i]) / h).collect(),
        )
    }

    pub fn sup_distance(&self, other: &SampledPeriodicFn) -> f64 {
        if self.values.len() == other.values.len() && (self.period - other.period).abs() <= 1e-12 * self.period {
            self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        } else {
            (0..self.values.len())
                .map(|i| (self.values[i] - other.eval(self.grid_point(i))).abs())
                .fold(0.0, f64::max)
        }
    }
}

/// Result of a Stieltjes integral with its refinement delta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StieltjesValue {
    pub value: f64,
    /// Value at `depth` minus value at `depth - 1`; zero for absolutely
    /// continuous families.
    pub refinement_delta: f64,
}

impl StieltjesValue {
    /// The value, or an accuracy error if the refinement delta exceeds `tol`.
    pub fn checked(&self, tol: f64) -> Result<f64> {
        if self.refinement_delta.abs() > tol {
            Err(Error::Accuracy {
                what: format!("staircase refinement delta {:e}", self.refinement_delta),
                best: self.value,
            })
        } else {
            Ok(self.value)
        }
    }
}

fn cantor_sum<F: Fn(f64) -> f64>(f: &F, c: &PeriodicComponent, a: f64, b: f64, depth: u32) -> f64 {
    let own = match c.family {
        RhoFamily::CantorStaircase { depth } => depth,
        _ => unreachable!(),
    };
    let d = depth.min(own);
    let t = c.period;
    let scale0 = (t / c.p).exp() - 1.0;
    let k0 = (a / t).floor() as i64;
    let k1 = (b / t).floor() as i64;
    let mut total = 0.0;
    for k in k0..=k1 {
        let base = k as f64 * t;
        let cell_scale = (base / c.p).exp();
        let (lo, hi) = (a.max(base), b.min(base + t));
        if hi <= lo {
            continue;
        }
        let mut stack = vec![(base, t, 0u32)];
        while let Some((l, w, j)) = stack.pop() {
            let r = l + w;
            if r <= lo || l >= hi {
                continue;
            }
            if j == d {
                if l >= lo && r <= hi {
                    total += f(l + 0.5 * w) * cell_scale * scale0 / (1u64 << d) as f64;
                } else {
                    let (ol, or) = (l.max(lo), r.min(hi));
                    let m = cell_scale * (c.rho0(or - base) - c.rho0(ol - base));
                    total += f(0.5 * (ol + or)) * m;
                }
            } else {
                stack.push((l, w / 3.0, j + 1));
                stack.push((l + 2.0 * w / 3.0, w / 3.0, j + 1));
            }
        }
    }
    total
}

/// ∫_a^b f dϱ. Absolutely continuous families integrate f·ϱ′ by adaptive
/// Gauss-Legendre between breakpoints; the staircase sums the atoms of its
/// level-`depth` approximation.
pub fn stieltjes_integrate<F: Fn(f64) -> f64>(
    f: F,
    c: &PeriodicComponent,
    a: f64,
    b: f64,
    depth: u32,
) -> Result<StieltjesValue> {
    if !(b >= a) {
        return Err(Error::Domain(format!("stieltjes_integrate needs b >= a, got [{a}, {b}]")));
    }
    if a == b {
        return Ok(StieltjesValue { value: 0.0, refinement_delta: 0.0 });
    }
    if let RhoFamily::CantorStaircase { .. } = c.family {
        let d = depth.max(1);
        let v = cantor_sum(&f, c, a, b, d);
        let v1 = if d > 1 { cantor_sum(&f, c, a, b, d - 1) } else { v };
        return Ok(StieltjesValue { value: v, refinement_delta: v - v1 });
    }
    let t = c.period;
    let bp0 = c.breakpoints0();
    let q = QuadratureSettings { tol: 1e-11, max_depth: 40 };
    let mut total = 0.0;
    let k0 = (a / t).floor() as i64;
    let k1 = (b / t).floor() as i64;
    for k in k0..=k1 {
        let base = k as f64 * t;
        let sc = (base / c.p).exp();
        for w in bp0.windows(2) {
            let (l, r) = ((base + w[0]).max(a), (base + w[1]).min(b));
            if r <= l {
                continue;
            }
            let v = adaptive_gl8(
                |x| {
                    let u = (x - base).clamp(w[0], w[1]);
                    let ud = if u >= w[1] { w[1] - 1e-15 * t } else { u };
                    f(x) * sc * c.rho0_deriv(ud)
                },
                l,
                r,
                q,
            )
            .unwrap_or_else(|e| match e {
                Error::Accuracy { best, .. } => best,
                _ => f64::NAN,
            });
            total += v;
        }
    }
    Ok(StieltjesValue { value: total, refinement_delta: 0.0 })
}

/// Declared relation between the periods T (first) and T̃ (second).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PeriodRelation {
    /// T/T̃ = m/n.
    Common { m: u64, n: u64 },
    Incommensurable,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Least common period from the declared rational relation. Constant
/// components adopt the other component's period.
pub fn common_period(s: &PeriodicComponent, st: &PeriodicComponent, rel: &PeriodRelation) -> Result<f64> {
    let (m, n) = match *rel {
        PeriodRelation::Incommensurable => {
            return Err(Error::Incommensurable(
                "no common period; the tensor asymptotics uses the constant c_frak instead".into(),
            ))
        }
        PeriodRelation::Common { m, n } => {
            if m == 0 || n == 0 {
                return Err(Error::Domain("period relation needs positive m and n".into()));
            }
            let g = gcd(m, n);
            (m / g, n / g)
        }
    };
    match (s.is_constant(), st.is_constant()) {
        (true, true) => Ok(s.period()),
        (true, false) => Ok(st.period()),
        (false, true) => Ok(s.period()),
        (false, false) => {
            let l = n as f64 * s.period();
            let l2 = m as f64 * st.period();
            if ((l - l2) / l).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "declared T/T~ = {m}/{n} is inconsistent with T = {}, T~ = {}",
                    s.period(),
                    st.period()
                )));
            }
            Ok(l)
        }
    }
}

fn check_equal_p(s: &PeriodicComponent, st: &PeriodicComponent) -> Result<()> {
    if (s.p() - st.p()).abs() > 1e-12 * s.p() {
        return Err(Error::Precondition(format!("exponents differ: p = {}, p~ = {}", s.p(), st.p())));
    }
    Ok(())
}

/// (s★s̃)(η) = (1/L)∫₀^L s(η-λ) s̃(λ) dλ on an `n`-point grid (periodic trapezoid).
pub fn star_convolve(
    s: &PeriodicComponent,
    st: &PeriodicComponent,
    rel: &PeriodRelation,
    n: usize,
) -> Result<SampledPeriodicFn> {
    let l = common_period(s, st, rel)?;
    let h = l / n as f64;
    let a: Vec<f64> = (0..n).map(|i| s.s(i as f64 * h)).collect();
    let b: Vec<f64> = (0..n).map(|i| st.s(i as f64 * h)).collect();
    let c = circular_convolve(&a, &b);
    Ok(SampledPeriodicFn::new(l, c.into_iter().map(|v| v / n as f64).collect()))
}

/// Cell-integrated weights of e^{-σ/p}dϱ̃ on the uniform grid of [0, L).
fn nu_cell_weights(st: &PeriodicComponent, l: f64, n: usize) -> Vec<f64> {
    let h = l / n as f64;
    (0..n)
        .map(|j| {
            let x = j as f64 * h;
            crate::quad::composite_gl8(|y| st.nu_density(y), x - 0.5 * h, x + 0.5 * h, h / 4.0)
        })
        .collect()
}

/// s_⊗(η) = e^{-η/p}(1/L)∫₀^L ϱ(η-σ) dϱ̃(σ) = (1/L)∫₀^L s(η-σ) e^{-σ/p}dϱ̃(σ).
pub fn s_otimes(
    s: &PeriodicComponent,
    st: &PeriodicComponent,
    rel: &PeriodRelation,
    n: usize,
) -> Result<SampledPeriodicFn> {
    check_equal_p(s, st)?;
    let l = common_period(s, st, rel)?;
    let h = l / n as f64;
    // put a staircase (if any) on the measure side; the identity is symmetric
    let (f, g) = if !st.is_absolutely_continuous() {
        (s, st)
    } else if !s.is_absolutely_continuous() {
        (st, s)
    } else {
        let a: Vec<f64> = (0..n).map(|i| s.s(i as f64 * h)).collect();
        let w: Vec<f64> = match st.family() {
            RhoFamily::PiecewiseLinearRho { .. } => nu_cell_weights(st, l, n),
            _ => (0..n).map(|j| st.nu_density(j as f64 * h) * h).collect(),
        };
        let c = circular_convolve(&a, &w);
        return Ok(SampledPeriodicFn::new(l, c.into_iter().map(|v| v / l).collect()));
    };
    let depth = match g.family() {
        RhoFamily::CantorStaircase { depth } => *depth,
        _ => unreachable!(),
    };
    let atoms0 = g.cantor_atoms(depth);
    let copies = (l / g.period()).round() as usize;
    let mut atoms = Vec::with_capacity(atoms0.len() * copies);
    for k in 0..copies {
        let base = k as f64 * g.period();
        for &(u, m) in &atoms0 {
            atoms.push((base + u, (-u / g.p()).exp() * m));
        }
    }
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let eta = i as f64 * h;
            atoms.iter().map(|&(x, w)| f.s(eta - x) * w).sum::<f64>() / l
        })
        .collect();
    Ok(SampledPeriodicFn::new(l, values))
}

/// The other side of the identity: (s★s̃)/p + (s★s̃)′ with a spectral derivative
/// (one-sided differences when either ϱ is piecewise linear).
pub fn s_otimes_two_form(
    s: &PeriodicComponent,
    st: &PeriodicComponent,
    rel: &PeriodRelation,
    n: usize,
) -> Result<SampledPeriodicFn> {
    check_equal_p(s, st)?;
    let conv = star_convolve(s, st, rel, n)?;
    let kinked = matches!(s.family(), RhoFamily::PiecewiseLinearRho { .. })
        || matches!(st.family(), RhoFamily::PiecewiseLinearRho { .. });
    let d = if kinked { conv.forward_difference() } else { conv.spectral_derivative() };
    let p = s.p();
    Ok(SampledPeriodicFn::new(
        conv.period,
        conv.values.iter().zip(&d.values).map(|(c, dc)| c / p + dc).collect(),
    ))
}

fn exp_linear_integral(p: f64, u0: f64, h: f64, alpha: f64, beta: f64) -> f64 {
    // ∫_{u0}^{u0+h} e^{-u/p} (alpha + beta (u-u0)) du
    let e0 = (-u0 / p).exp();
    let d = -e0 * (-h / p).exp_m1();
    let e1 = e0 - d;
    alpha * p * d + beta * (-p * h * e1 + p * p * d)
}

fn cantor_mean_rec(c: &PeriodicComponent, l: f64, w: f64, vl: f64, vr: f64, level: u32, depth: u32) -> f64 {
    if level == depth {
        return exp_linear_integral(c.p, l, w, vl, (vr - vl) / w);
    }
    let mid = 0.5 * (vl + vr);
    let third = w / 3.0;
    cantor_mean_rec(c, l, third, vl, mid, level + 1, depth)
        + exp_linear_integral(c.p, l + third, third, mid, 0.0)
        + cantor_mean_rec(c, l + 2.0 * third, third, mid, vr, level + 1, depth)
}

/// (1/T)∫₀^T s.
pub fn mean_s(c: &PeriodicComponent) -> f64 {
    let t = c.period;
    match &c.family {
        RhoFamily::ExpAffine { a } => *a,
        RhoFamily::CosineS { .. } => 1.0,
        RhoFamily::PiecewiseLinearRho { knots } => {
            let m = knots.len() - 1;
            let h = t / m as f64;
            (0..m)
                .map(|i| exp_linear_integral(c.p, i as f64 * h, h, knots[i], (knots[i + 1] - knots[i]) / h))
                .sum::<f64>()
                / t
        }
        RhoFamily::CantorStaircase { depth } => {
            let top = (t / c.p).exp();
            cantor_mean_rec(c, 0.0, t, 1.0, top, 0, *depth) / t
        }
    }
}

/// 𝔠 = mean(s)·mean(s̃)/p.
pub fn c_frak(s: &PeriodicComponent, st: &PeriodicComponent, p: f64) -> Result<f64> {
    for c in [s, st] {
        if (c.p() - p).abs() > 1e-12 * p {
            return Err(Error::Precondition(format!("component exponent {} differs from p = {p}", c.p())));
        }
    }
    Ok(mean_s(s) * mean_s(st) / p)
}
