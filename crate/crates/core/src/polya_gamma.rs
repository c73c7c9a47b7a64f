//! Polya-Gamma random variates.
//!
//! `PG(1, c)` is drawn exactly with Devroye's alternating-series rejection
//! sampler (Polson, Scott & Windle 2013). Integer shapes up to
//! [`EXACT_MAX_SHAPE`] sum independent `PG(1, c)` draws; larger shapes use a
//! Gaussian with the exact `PG(b, c)` mean and variance.

use std::f64::consts::{FRAC_2_PI, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use statrs::function::erf::erfc;

/// Truncation point between the left (inverse-Gaussian) and right
/// (exponential) proposal pieces.
const TRUNC: f64 = 0.64;

/// Largest shape drawn exactly as a sum of unit-shape variates.
pub const EXACT_MAX_SHAPE: u64 = 50;

/// Mean of `PG(b, c)`: `b tanh(c/2) / (2c)`.
pub fn pg_mean(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-4 {
        b * (0.25 - c * c / 48.0)
    } else {
        b * (0.5 * c).tanh() / (2.0 * c)
    }
}

/// Variance of `PG(b, c)`: `b (sinh c - c) / (4 c^3 cosh^2(c/2))`.
pub fn pg_variance(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-2 {
        let c2 = c * c;
        b * (1.0 / 24.0 - c2 / 120.0 + 17.0 * c2 * c2 / 13440.0)
    } else {
        // (sinh c - c) / cosh^2(c/2) = 2 tanh(c/2) - c / cosh^2(c/2)
        let ch = (0.5 * c).cosh();
        b * (2.0 * (0.5 * c).tanh() - c / (ch * ch)) / (4.0 * c * c * c)
    }
}

/// Draw from `PG(b, c)` for integer `b >= 1`.
pub fn sample_polya_gamma<R: Rng + ?Sized>(b: u64, c: f64, rng: &mut R) -> f64 {
    assert!(b >= 1, "Polya-Gamma shape must be at least 1");
    if b <= EXACT_MAX_SHAPE {
        (0..b).map(|_| sample_pg1(c, rng)).sum()
    } else {
        let bf = b as f64;
        let z: f64 = StandardNormal.sample(rng);
        (pg_mean(bf, c) + pg_variance(bf, c).sqrt() * z).max(f64::MIN_POSITIVE)
    }
}

/// Exact draw from `PG(1, c)`.
pub fn sample_pg1<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    // PG(1, c) = J*(1, c/2) / 4.
    let z = 0.5 * c.abs();
    let k = PI * PI / 8.0 + 0.5 * z * z;
    let p_right = right_mass(z, k);
    loop {
        let x = if rng.random::<f64>() < p_right {
            let e: f64 = Exp1.sample(rng);
            TRUNC + e / k
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0u32;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Probability of proposing from the right (exponential) piece.
fn right_mass(z: f64, k: f64) -> f64 {
    let t = TRUNC;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = k.ln() + k * t;
    let xb = x0 - z + ln_norm_cdf(b);
    let xa = x0 + z + ln_norm_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

fn ln_norm_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
}

/// Coefficient `a_n(x)` of the alternating series for `J*(1, 0)`.
#[inline]
fn series_coef(n: u32, x: f64) -> f64 {
    let m = n as f64 + 0.5;
    if x > TRUNC {
        PI * m * (-0.5 * m * m * PI * PI * x).exp()
    } else {
        (FRAC_2_PI / x).powf(1.5) * PI * m * (-2.0 * m * m / x).exp()
    }
}

/// Inverse-Gaussian `IG(1/z, 1)` truncated to `(0, TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNC;
    let mu = if z > 0.0 { 1.0 / z } else { f64::INFINITY };
    if mu > t {
        loop {
            let e1 = loop {
                let e1: f64 = Exp1.sample(rng);
                let e2: f64 = Exp1.sample(rng);
                if e1 * e1 <= 2.0 * e2 / t {
                    break e1;
                }
            };
            let x = t / ((1.0 + t * e1) * (1.0 + t * e1));
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    } else {
        loop {
            let n: f64 = StandardNormal.sample(rng);
            let y = n * n;
            let mut x = mu + 0.5 * mu * mu * y - 0.5 * mu * (4.0 * mu * y + (mu * y) * (mu * y)).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x < t {
                return x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(b: u64, c: f64, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| sample_polya_gamma(b, c, &mut rng)).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        (m, v)
    }

    #[test]
    fn unit_shape_moments() {
        for (i, c) in [0.0, 0.1, 1.0, 3.0, -2.0, 12.0].into_iter().enumerate() {
            let (m, v) = moments(1, c, 100_000, 100 + i as u64);
            let em = pg_mean(1.0, c);
            let ev = pg_variance(1.0, c);
            assert!((m - em).abs() / em < 0.01, "c={c}: mean {m} vs {em}");
            assert!((v - ev).abs() / ev < 0.05, "c={c}: var {v} vs {ev}");
        }
    }

    #[test]
    fn summed_and_gaussian_regimes() {
        for (b, c) in [(7u64, 0.5), (50, 2.0), (51, 2.0), (400, -1.0)] {
            let (m, v) = moments(b, c, 20_000, b);
            assert!((m - pg_mean(b as f64, c)).abs() / pg_mean(b as f64, c) < 0.01);
            assert!((v - pg_variance(b as f64, c)).abs() / pg_variance(b as f64, c) < 0.06);
        }
    }

    #[test]
    fn moment_formulas_continuous_at_series_switch() {
        for c in [9.99e-5, 1.0001e-4, 9.99e-3, 1.001e-2, 0.3] {
            let direct_m = (0.5f64 * c).tanh() / (2.0 * c);
            assert!((pg_mean(1.0, c) - direct_m).abs() < 1e-9);
            let ch = (0.5f64 * c).cosh();
            let direct_v = (c.sinh() - c) / (4.0 * c * c * c * ch * ch);
            assert!((pg_variance(1.0, c) - direct_v).abs() < 1e-6);
        }
        assert!((pg_mean(1.0, 0.0) - 0.25).abs() < 1e-15);
        assert!((pg_variance(1.0, 0.0) - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn draws_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in [0.0, 1e-8, 5.0, 50.0, 500.0] {
            for _ in 0..1000 {
                let x = sample_polya_gamma(1, c, &mut rng);
                assert!(x > 0.0 && x.is_finite());
            }
        }
    }
}
