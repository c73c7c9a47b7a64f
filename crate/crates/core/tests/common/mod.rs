//! Shared oracles and toy models for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use astro_float::{BigFloat, RoundingMode};
use netpop::diagnostics::batch_means_se;
use netpop::graph::{EdgeVector, GraphObservation, NodeVocabulary, PopulationDataset};
use netpop::model::{logistic, Family, Hyperparams, LatentPositions};
use netpop::sampler::{McmcConfig, ModelVariant, Sampler, SamplerState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

const PREC: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, PREC)
}

fn to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().expect("decimal BigFloat")
}

/// `prod_h (alpha_h)^(m_h) / (A)^(N)` with rising factorials, exactly rounded.
fn dm_marginal(m: &[u64], alpha: &[f64]) -> BigFloat {
    let mut num = big(1.0);
    let mut total = big(0.0);
    let mut n = 0u64;
    for (&c, &a) in m.iter().zip(alpha) {
        for k in 0..c {
            num = num.mul(&big(a + k as f64), PREC, RM);
        }
        total = total.add(&big(a), PREC, RM);
        n += c;
    }
    let mut den = big(1.0);
    for k in 0..n {
        den = den.mul(&total.add(&big(k as f64), PREC, RM), PREC, RM);
    }
    num.div(&den, PREC, RM)
}

/// Extended-precision `P(H1 | m1, m2)` at prior odds 1.
pub fn oracle_p_h1(m1: &[u64], m2: &[u64], alpha: &[f64]) -> f64 {
    let pooled: Vec<u64> = m1.iter().zip(m2).map(|(a, b)| a + b).collect();
    let h1 = dm_marginal(m1, alpha).mul(&dm_marginal(m2, alpha), PREC, RM);
    let h0 = dm_marginal(&pooled, alpha);
    to_f64(&h1.div(&h1.add(&h0, PREC, RM), PREC, RM))
}

/// Dataset from `(entity, population, time, weights, node_counts)` rows.
pub fn dataset(v: usize, graphs: Vec<(i64, u8, u32, Vec<u64>, Vec<u64>)>) -> PopulationDataset {
    let mut labels = BTreeMap::new();
    let gs = graphs
        .into_iter()
        .map(|(e, y, t, w, c)| {
            labels.insert(e, y);
            GraphObservation::new(e, t, EdgeVector::from_values(w), Some(c)).unwrap()
        })
        .collect();
    PopulationDataset::new(NodeVocabulary::numbered(v).unwrap(), gs, labels).unwrap()
}

/// Binomial draws on every edge given edge probabilities and shared node counts.
pub fn draw_weights(theta: &[f64], counts: &[u64], rng: &mut ChaCha8Rng) -> Vec<u64> {
    theta
        .iter()
        .enumerate()
        .map(|(l, &p)| {
            let (i, j) = netpop::graph::edge_nodes(l);
            let n = counts[i].min(counts[j]);
            Binomial::new(n, p).unwrap().sample(rng)
        })
        .collect()
}

pub fn theta_of(x: &LatentPositions) -> Vec<f64> {
    netpop::graph::edge_list(x.n_nodes())
        .into_iter()
        .map(|(i, j)| logistic(x.dot(i, j)))
        .collect()
}

pub fn prior_positions(v: usize, r: usize, rng: &mut ChaCha8Rng) -> LatentPositions {
    let rows: Vec<Vec<f64>> = (0..v)
        .map(|_| (0..r).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    LatentPositions::from_rows(&rows)
}

fn dirichlet(conc: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g: Vec<f64> = conc
        .iter()
        .map(|&a| rand_distr::Gamma::new(a, 1.0).unwrap().sample(rng))
        .collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|x| x / s).collect()
}

/// One z-score per statistic comparing forward and successive-conditional runs.
#[derive(Debug)]
pub struct GewekeReport {
    pub labels: Vec<String>,
    pub z: Vec<f64>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.z.iter().fold(0.0f64, |m, z| m.max(z.abs()))
    }
}

/// Joint-distribution check of the fixed binomial model on `V=5, H=2, R=2`.
///
/// Four single-graph entities, two per population, with unit node counts.
pub fn geweke(rounds: usize, seed: u64) -> GewekeReport {
    let (v, h, r) = (5, 2, 2);
    let pops = [1u8, 1, 2, 2];
    let counts = vec![1u64; v];
    let hp = Hyperparams::new(h, r, Family::Binomial);
    let cfg = McmcConfig {
        n_samples: 2,
        burn_in: 1,
        seed,
        model_variant: ModelVariant::Fixed,
        thin: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = vec![hp.alpha; h];
    let build = |weights: &[Vec<u64>]| {
        dataset(
            v,
            weights
                .iter()
                .enumerate()
                .map(|(g, w)| (g as i64, pops[g], 0, w.clone(), counts.clone()))
                .collect(),
        )
    };
    let forward = |rng: &mut ChaCha8Rng| {
        let indicator = rng.random::<f64>() < hp.prior_h1;
        let shared = dirichlet(&alpha, rng);
        let beta = if indicator {
            vec![shared, dirichlet(&alpha, rng)]
        } else {
            vec![shared.clone(), shared]
        };
        let positions: Vec<LatentPositions> = (0..h).map(|_| prior_positions(v, r, rng)).collect();
        let assignments: Vec<usize> = pops
            .iter()
            .map(|&y| {
                let u: f64 = rng.random();
                if u < beta[y as usize - 1][0] { 0 } else { 1 }
            })
            .collect();
        (indicator, beta, positions, assignments)
    };
    let stats = |theta: &[f64], indicator: bool| -> Vec<f64> {
        let mut s: Vec<f64> = theta.to_vec();
        s.extend(theta.iter().map(|t| t * t));
        s.push(indicator as u8 as f64);
        s
    };
    let resample = |s: &SamplerState, rng: &mut ChaCha8Rng| -> Vec<Vec<u64>> {
        s.assignments
            .iter()
            .map(|&c| draw_weights(s.params.theta(c).values(), &counts, rng))
            .collect()
    };

    let mut fwd: Vec<Vec<f64>> = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let (t, _, x, _) = forward(&mut rng);
        fwd.push(stats(&theta_of(&x[0]), t));
    }

    let (t, beta, x, c) = forward(&mut rng);
    let weights: Vec<Vec<u64>> = c.iter().map(|&k| draw_weights(&theta_of(&x[k]), &counts, &mut rng)).collect();
    let sampler = Sampler::new(&build(&weights), &hp, &cfg).unwrap();
    let mut state = sampler.state_from_parts(x, c, beta, Vec::new(), t).unwrap();
    let mut data = weights;
    let mut gibbs: Vec<Vec<f64>> = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let sampler = Sampler::new(&build(&data), &hp, &cfg).unwrap();
        sampler.sweep(&mut state).unwrap();
        sampler.check_invariants(&state).unwrap();
        gibbs.push(stats(state.params.theta(0).values(), state.test_indicator));
        data = resample(&state, &mut rng);
    }

    let n_stats = fwd[0].len();
    let l = n_stats / 2;
    let mut report = GewekeReport { labels: Vec::new(), z: Vec::new() };
    for k in 0..n_stats {
        let f: Vec<f64> = fwd.iter().map(|s| s[k]).collect();
        let g: Vec<f64> = gibbs.iter().map(|s| s[k]).collect();
        let mf = f.iter().sum::<f64>() / f.len() as f64;
        let mg = g.iter().sum::<f64>() / g.len() as f64;
        let var_f = f.iter().map(|x| (x - mf).powi(2)).sum::<f64>() / (f.len() - 1) as f64;
        let se = (var_f / f.len() as f64 + batch_means_se(&g, 50).powi(2)).sqrt();
        report.labels.push(match k {
            k if k < l => format!("E[theta_{k}]"),
            k if k < 2 * l => format!("E[theta_{}^2]", k - l),
            _ => "P(T=1)".to_string(),
        });
        report.z.push((mf - mg) / se);
    }
    report
}

/// Planted two-cluster binomial model on `V=5, R=2` with 40 graphs.
///
/// Returns the largest per-edge gap between the posterior mean of the
/// population-averaged edge parameters and their generating values.
pub fn prior_recovery(seed: u64) -> f64 {
    let v = 5;
    let x = [
        LatentPositions::from_rows(&[
            vec![1.2, 0.3],
            vec![0.9, -0.4],
            vec![-0.2, 0.8],
            vec![0.5, 0.5],
            vec![-0.7, -0.1],
        ]),
        LatentPositions::from_rows(&[
            vec![-0.6, 0.9],
            vec![0.4, 1.1],
            vec![1.0, -0.3],
            vec![-0.8, -0.6],
            vec![0.2, 0.7],
        ]),
    ];
    let theta: Vec<Vec<f64>> = x.iter().map(theta_of).collect();
    let counts = vec![30u64; v];
    // 14 of 20 graphs in the population's dominant cluster.
    let plan = |y: usize, k: usize| if (k < 14) == (y == 0) { 0 } else { 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::new();
    for y in 0..2 {
        for k in 0..20 {
            let c = plan(y, k);
            let w = draw_weights(&theta[c], &counts, &mut rng);
            graphs.push(((y * 20 + k) as i64, y as u8 + 1, 0, w, counts.clone()));
        }
    }
    let d = dataset(v, graphs);
    let hp = Hyperparams::new(2, 2, Family::Binomial);
    let cfg = McmcConfig {
        seed,
        thin: 1,
        ..McmcConfig::default()
    };
    let trace = netpop::sampler::run_chain(&d, &hp, &cfg).unwrap();
    let post = netpop::hypothesis::mean_theta_bar(&trace).unwrap();
    let mut worst = 0.0f64;
    for y in 0..2 {
        let w = [0.7, 0.3];
        let wy = if y == 0 { w } else { [w[1], w[0]] };
        for l in 0..theta[0].len() {
            let truth = wy[0] * theta[0][l] + wy[1] * theta[1][l];
            worst = worst.max((post[y][l] - truth).abs());
        }
    }
    worst
}

/// Two-node binomial toy with one informative graph: chain mean of the
/// edge parameter, its batch-means standard error, and the grid posterior mean.
pub fn single_edge(trials: u64, successes: u64, sweeps: u64, seed: u64) -> (f64, f64, f64) {
    let d = dataset(
        2,
        vec![
            (1, 1, 0, vec![successes], vec![trials, trials]),
            (2, 2, 0, vec![0], vec![0, 0]),
        ],
    );
    let hp = Hyperparams::new(1, 1, Family::Binomial);
    let cfg = McmcConfig {
        n_samples: sweeps + 500,
        burn_in: 500,
        seed,
        model_variant: ModelVariant::Fixed,
        thin: 1,
    };
    let trace = netpop::sampler::run_chain(&d, &hp, &cfg).unwrap();
    let xs: Vec<f64> = trace
        .records
        .iter()
        .map(|r| r.theta_bar.as_ref().unwrap()[0][0])
        .collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let se = batch_means_se(&xs, 50);

    let (lo, hi, n) = (-7.0, 7.0, 1401usize);
    let step = (hi - lo) / (n - 1) as f64;
    let (mut z, mut m) = (0.0, 0.0);
    for a in 0..n {
        let x1 = lo + a as f64 * step;
        for b in 0..n {
            let x2 = lo + b as f64 * step;
            let t = logistic(x1 * x2);
            let w = (-0.5 * (x1 * x1 + x2 * x2)).exp()
                * t.powi(successes as i32)
                * (1.0 - t).powi((trials - successes) as i32);
            z += w;
            m += w * t;
        }
    }
    (mean, se, m / z)
}
