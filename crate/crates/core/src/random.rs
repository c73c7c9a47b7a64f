//! Sampling helpers shared by the sampler and the generators.
//!
//! Multi-component draws take a `keys` permutation: component `h` consumes
//! the random numbers belonging to key `keys[h]`, so relabeling components
//! together with their keys relabels the draw exactly.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Sum in ascending order so the result does not depend on input order.
pub fn sum_sorted(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// `ln sum exp(x)` with an order-independent summation.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    let terms: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    m + sum_sorted(&terms).ln()
}

/// Normalized probabilities from log weights.
pub fn softmax(log_w: &[f64]) -> Vec<f64> {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|&x| (x - m).exp()).collect();
    let z = sum_sorted(&w);
    w.iter().map(|x| x / z).collect()
}

/// `ln G` for `G ~ Gamma(shape, 1)`, stable for small shapes.
pub fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("valid gamma shape").sample(rng);
        g.max(f64::MIN_POSITIVE).ln()
    } else {
        // G(a) = G(a + 1) U^(1/a)
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("valid gamma shape").sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g.max(f64::MIN_POSITIVE).ln() + u.ln() / shape
    }
}

/// Inverse of a key permutation: `order[k]` is the component holding key `k`.
fn key_order(keys: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&h| keys[h]);
    order
}

/// Draw from `Dirichlet(concentration)`; entries are strictly positive and
/// sum to one to within rounding.
pub fn sample_dirichlet<R: Rng + ?Sized>(concentration: &[f64], keys: &[u64], rng: &mut R) -> Vec<f64> {
    assert_eq!(concentration.len(), keys.len());
    if concentration.len() == 1 {
        return vec![1.0];
    }
    let mut lg = vec![0.0; concentration.len()];
    for h in key_order(keys) {
        lg[h] = ln_gamma_variate(concentration[h], rng);
    }
    let lse = log_sum_exp(&lg);
    lg.iter()
        .map(|&x| (x - lse).exp().max(f64::MIN_POSITIVE))
        .collect()
}

/// Categorical draw from log weights via the Gumbel-max trick.
pub fn sample_categorical_log<R: Rng + ?Sized>(log_w: &[f64], keys: &[u64], rng: &mut R) -> usize {
    assert_eq!(log_w.len(), keys.len());
    if log_w.len() == 1 {
        return 0;
    }
    let mut noise = vec![0.0; log_w.len()];
    for h in key_order(keys) {
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        noise[h] = -(-u.ln()).ln();
    }
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (h, (&w, &g)) in log_w.iter().zip(&noise).enumerate() {
        let v = w + g;
        if v > best_val {
            best_val = v;
            best = h;
        }
    }
    best
}

/// Identity key permutation `0..n`.
pub fn identity_keys(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dirichlet_is_on_simplex_even_for_tiny_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for conc in [vec![1e-3; 15], vec![0.5, 0.5], vec![1e-300, 1.0, 3.0]] {
            let keys = identity_keys(conc.len());
            for _ in 0..200 {
                let p = sample_dirichlet(&conc, &keys, &mut rng);
                assert!(p.iter().all(|&x| x > 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dirichlet_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let conc = [0.2, 1.3, 4.0];
        let keys = identity_keys(3);
        let n = 50_000;
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let p = sample_dirichlet(&conc, &keys, &mut rng);
            for k in 0..3 {
                acc[k] += p[k];
            }
        }
        let total: f64 = conc.iter().sum();
        for k in 0..3 {
            assert!((acc[k] / n as f64 - conc[k] / total).abs() < 0.01);
        }
    }

    #[test]
    fn gumbel_categorical_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = [0.2, 0.5, 0.3];
        let lw: Vec<f64> = p.iter().map(|x: &f64| x.ln() + 10.0).collect();
        let keys = identity_keys(3);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_categorical_log(&lw, &keys, &mut rng)] += 1;
        }
        for k in 0..3 {
            assert!((counts[k] as f64 / n as f64 - p[k]).abs() < 0.006);
        }
    }

    #[test]
    fn keyed_draws_follow_relabeling() {
        let conc = [0.3, 2.0, 5.0];
        let perm = [2usize, 0, 1];
        let keys = identity_keys(3);
        let permuted_conc: Vec<f64> = perm.iter().map(|&h| conc[h]).collect();
        let permuted_keys: Vec<u64> = perm.iter().map(|&h| keys[h]).collect();
        let a = sample_dirichlet(&conc, &keys, &mut ChaCha8Rng::seed_from_u64(1));
        let b = sample_dirichlet(&permuted_conc, &permuted_keys, &mut ChaCha8Rng::seed_from_u64(1));
        for (i, &h) in perm.iter().enumerate() {
            assert_eq!(b[i], a[h]);
        }
    }

    #[test]
    fn log_sum_exp_shift() {
        let x = [1.0, -3.0, 2.5];
        let y: Vec<f64> = x.iter().map(|v| v + 1000.0).collect();
        assert!((log_sum_exp(&y) - log_sum_exp(&x) - 1000.0).abs() < 1e-12);
    }
}
