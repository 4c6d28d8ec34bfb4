//! Small FFT helpers over real periodic samples.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

fn forward(x: &[f64]) -> Vec<Complex64> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(x.len());
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut buf);
    buf
}

fn inverse_real(mut buf: Vec<Complex64>) -> Vec<f64> {
    let n = buf.len();
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n);
    ifft.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// c_i = Σ_j a_{(i-j) mod N} b_j.
pub fn circular_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    let fa = forward(a);
    let fb = forward(b);
    inverse_real(fa.iter().zip(&fb).map(|(x, y)| x * y).collect())
}

/// Derivative of a periodic sample vector with the given period, computed
/// spectrally. The Nyquist mode is dropped.
pub fn spectral_derivative(x: &[f64], period: f64) -> Vec<f64> {
    let n = x.len();
    let mut fx = forward(x);
    let w = 2.0 * std::f64::consts::PI / period;
    for (k, c) in fx.iter_mut().enumerate() {
        let kk = if k <= n / 2 { k as i64 } else { k as i64 - n as i64 };
        if n % 2 == 0 && k == n / 2 {
            *c = Complex64::new(0.0, 0.0);
        } else {
            *c *= Complex64::new(0.0, w * kk as f64);
        }
    }
    inverse_real(fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolution_matches_direct() {
        let a: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).sin() + 1.0).collect();
        let b: Vec<f64> = (0..16).map(|i| (i * i % 7) as f64).collect();
        let c = circular_convolve(&a, &b);
        for i in 0..16 {
            let d: f64 = (0..16).map(|j| a[(i + 16 - j) % 16] * b[j]).sum();
            assert!((c[i] - d).abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_of_sine() {
        let n = 64;
        let p = 2.0;
        let x: Vec<f64> = (0..n).map(|i| (std::f64::consts::PI * i as f64 * p / n as f64).sin()).collect();
        let d = spectral_derivative(&x, p);
        for (i, di) in d.iter().enumerate() {
            let t = i as f64 * p / n as f64;
            assert!((di - std::f64::consts::PI * (std::f64::consts::PI * t).cos()).abs() < 1e-10);
        }
    }
}
