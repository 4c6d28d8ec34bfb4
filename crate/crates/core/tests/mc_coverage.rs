//! Wilson intervals from the Monte Carlo estimator cover closed forms at
//! close to the nominal 95% rate.

use statrs::function::erf::erf;

use tensor_spectra::smalldev::mc_small_ball;
use tensor_spectra::{MarginalSpectrum, SmallDevModel};

fn coverage(lambdas: &[f64], eps: f64, exact: f64) -> usize {
    let m = SmallDevModel::from_spectrum(&MarginalSpectrum::explicit(lambdas.to_vec()).unwrap(), 10).unwrap();
    (0..100u64)
        .filter(|&seed| {
            let e = mc_small_ball(&m, &[eps], 20_000, seed).unwrap()[0];
            e.ci_lo <= exact && exact <= e.ci_hi
        })
        .count()
}

#[test]
fn rank_one_gaussian() {
    // P(√λ|Z| ≤ ε) = erf(ε/√(2λ))
    let (lam, eps) = (0.8, 0.3);
    let hits = coverage(&[lam], eps, erf(eps / (2.0 * lam).sqrt()));
    assert!(hits >= 93, "{hits}/100");
}

#[test]
fn rank_two_chi_square() {
    // λ(Z₁² + Z₂²) is exponential with mean 2λ
    let (lam, eps) = (0.5, 0.6);
    let hits = coverage(&[lam, lam], eps, 1.0 - (-eps * eps / (2.0 * lam)).exp());
    assert!(hits >= 93, "{hits}/100");
}
