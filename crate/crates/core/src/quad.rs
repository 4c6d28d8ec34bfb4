//! Numerical quadrature used throughout the crate.

use crate::error::{Error, Result};

/// Settings for adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSettings {
    /// Relative tolerance.
    pub tol: f64,
    /// Maximum recursion depth for adaptive subdivision.
    pub max_depth: u32,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self { tol: 1e-9, max_depth: 50 }
    }
}

/// Adaptive Simpson on [a, b]. Returns the estimate or an accuracy error
/// carrying the best estimate.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, q: QuadratureSettings) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // absolute target scaled by a cheap magnitude estimate
    let scale = whole.abs().max((b - a).abs() * (fa.abs() + fm.abs() + fb.abs()) / 3.0);
    let eps = (q.tol * scale).max(f64::MIN_POSITIVE);
    let mut ok = true;
    let mut evals = 0usize;
    let v = simpson_rec(&f, a, b, fa, fm, fb, whole, eps, q.max_depth, &mut ok, &mut evals);
    if ok {
        Ok(v)
    } else {
        Err(Error::Accuracy { what: "adaptive Simpson".into(), best: v })
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
    ok: &mut bool,
    evals: &mut usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    *evals += 2;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    if depth == 0 || *evals > 20_000_000 {
        *ok = false;
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1, ok, evals)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1, ok, evals)
}

const GL8_X: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_W: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Calls `f(x, w)` for the 8 Gauss-Legendre nodes and weights on [a, b].
pub fn gl8_nodes<F: FnMut(f64, f64)>(a: f64, b: f64, mut f: F) {
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    for i in 0..8 {
        f(c + h * GL8_X[i], h * GL8_W[i]);
    }
}

/// 8-point Gauss-Legendre on a single panel.
pub fn gauss_legendre8<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    let mut s = 0.0;
    for i in 0..8 {
        s += GL8_W[i] * f(c + h * GL8_X[i]);
    }
    s * h
}

/// Composite 8-point Gauss-Legendre with panels of width at most `width`.
pub fn composite_gl8<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, width: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = ((b - a) / width).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    (0..n).map(|i| gauss_legendre8(&f, a + i as f64 * h, a + (i + 1) as f64 * h)).sum()
}

/// Adaptive Gauss-Legendre: bisects panels until 8-point and two-panel
/// estimates agree to `tol` relative to the running total.
pub fn adaptive_gl8<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, q: QuadratureSettings) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let whole = gauss_legendre8(&f, a, b);
    let mut ok = true;
    let v = gl_rec(&f, a, b, whole, q.tol, whole.abs(), q.max_depth, &mut ok);
    if ok {
        Ok(v)
    } else {
        Err(Error::Accuracy { what: "adaptive Gauss-Legendre".into(), best: v })
    }
}

#[allow(clippy::too_many_arguments)]
fn gl_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, scale: f64, depth: u32, ok: &mut bool) -> f64 {
    let m = 0.5 * (a + b);
    let l = gauss_legendre8(f, a, m);
    let r = gauss_legendre8(f, m, b);
    let both = l + r;
    if (both - whole).abs() <= tol * scale.max(both.abs()) || (b - a) < 1e-14 * (1.0 + a.abs()) {
        return both;
    }
    if depth == 0 {
        *ok = false;
        return both;
    }
    gl_rec(f, a, m, l, tol, scale, depth - 1, ok) + gl_rec(f, m, b, r, tol, scale, depth - 1, ok)
}
