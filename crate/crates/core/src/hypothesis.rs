//! Population, entity-pair and edge-level tests computed from traces.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::gamma::ln_gamma;

use crate::dataset_io::write_file;
use crate::error::{Error, Result};
use crate::graph::{edge_nodes, n_edges};
use crate::model::{binomial_ln_pmf, poisson_ln_pmf, Family, LOGIT_EPS};
use crate::random::sum_sorted;
use crate::sampler::{Trace, TraceMeta};

/// Default decision threshold on `P(H1 | data)`.
pub const DEFAULT_THRESHOLD: f64 = 0.95;
/// Default edge significance level; edges with `p_l > 1 - significance` are flagged.
pub const DEFAULT_SIGNIFICANCE: f64 = 0.1;
/// Tail mass at which the Poisson support is truncated.
pub const POISSON_TAIL: f64 = 1e-9;

/// `sum ln Gamma(x_i) - ln Gamma(sum x_i)`.
pub fn log_multivariate_beta(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty argument to multivariate beta".into()));
    }
    if let Some(v) = x.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "multivariate beta needs positive entries, got {v}"
        )));
    }
    let terms: Vec<f64> = x.iter().map(|&v| ln_gamma(v)).collect();
    Ok(sum_sorted(&terms) - ln_gamma(sum_sorted(x)))
}

fn check_inputs(m1: &[u64], m2: &[u64], alpha: &[f64]) -> Result<()> {
    if m1.len() != m2.len() || m1.len() != alpha.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} / {} counts, {} concentrations",
            m1.len(),
            m2.len(),
            alpha.len()
        )));
    }
    if alpha.is_empty() {
        return Err(Error::InvalidArgument("empty count vectors".into()));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidArgument(format!("concentration must be positive, got {a}")));
    }
    Ok(())
}

/// `ln P(m1, m2 | H1) - ln P(m1, m2 | H0)` under Dirichlet-multinomial
/// marginals with concentration `alpha`.
///
/// Symmetric in `(m1, m2)` and invariant under shared permutations, exactly.
pub fn log_bayes_factor(m1: &[u64], m2: &[u64], alpha: &[f64]) -> Result<f64> {
    check_inputs(m1, m2, alpha)?;
    let terms: Vec<f64> = m1
        .iter()
        .zip(m2)
        .zip(alpha)
        .map(|((&a, &b), &al)| {
            let both = (a + b) as f64;
            (ln_gamma(al + a as f64) + ln_gamma(al + b as f64)) - ln_gamma(al) - ln_gamma(al + both)
        })
        .collect();
    let total_alpha = sum_sorted(alpha);
    let s1 = m1.iter().sum::<u64>();
    let s2 = m2.iter().sum::<u64>();
    let totals = (ln_gamma(total_alpha + s1 as f64) + ln_gamma(total_alpha + s2 as f64))
        - ln_gamma(total_alpha)
        - ln_gamma(total_alpha + (s1 + s2) as f64);
    Ok(sum_sorted(&terms) - totals)
}

fn odds_to_prob(log_odds: f64) -> f64 {
    if log_odds >= 0.0 {
        1.0 / (1.0 + (-log_odds).exp())
    } else {
        let e = log_odds.exp();
        e / (1.0 + e)
    }
}

/// `P(H1 | m1, m2)` with equal prior odds.
pub fn posterior_prob_h1(m1: &[u64], m2: &[u64], alpha: &[f64]) -> Result<f64> {
    posterior_prob_h1_with_prior(m1, m2, alpha, 0.5)
}

/// `P(H1 | m1, m2)` with prior probability `prior_h1` on the alternative.
pub fn posterior_prob_h1_with_prior(m1: &[u64], m2: &[u64], alpha: &[f64], prior_h1: f64) -> Result<f64> {
    if !(prior_h1 > 0.0 && prior_h1 < 1.0) {
        return Err(Error::InvalidArgument(format!("prior_h1 must lie in (0, 1), got {prior_h1}")));
    }
    let prior_log_odds = if prior_h1 == 0.5 {
        0.0
    } else {
        (prior_h1 / (1.0 - prior_h1)).ln()
    };
    Ok(odds_to_prob(log_bayes_factor(m1, m2, alpha)? + prior_log_odds))
}

/// Pairwise entity test: probability that two entities' cluster counts come
/// from different mixing distributions, with concentration `beta`.
pub fn entity_test(ma: &[u64], mb: &[u64], beta: &[f64]) -> Result<f64> {
    if ma.iter().all(|&c| c == 0) || mb.iter().all(|&c| c == 0) {
        return Err(Error::InvalidArgument("entity test needs graphs for both entities".into()));
    }
    posterior_prob_h1(ma, mb, beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationTestResult {
    pub p_h1: f64,
    pub n_iterations: usize,
    pub decision_threshold: f64,
    pub reject_null: bool,
}

/// Fraction of post-burn-in iterations with the test indicator set.
pub fn population_test(trace: &Trace, decision_threshold: f64) -> Result<PopulationTestResult> {
    if trace.records.is_empty() {
        return Err(Error::InvalidArgument("empty trace".into()));
    }
    let ones = trace.records.iter().filter(|r| r.test_indicator).count();
    let p_h1 = ones as f64 / trace.records.len() as f64;
    Ok(PopulationTestResult {
        p_h1,
        n_iterations: trace.records.len(),
        decision_threshold,
        reject_null: p_h1 > decision_threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityTestResult {
    pub entity_a: i64,
    pub entity_b: i64,
    pub p_h1: f64,
}

/// Entity test averaged over the trace. The concentration at each record is
/// the configured scale times the mean of the two entities' population
/// simplices.
pub fn entity_test_trace(trace: &Trace, a: i64, b: i64) -> Result<EntityTestResult> {
    let meta = &trace.meta;
    let pos = |id: i64| {
        meta.entity_position(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown entity {id}")))
    };
    let (na, nb) = (pos(a)?, pos(b)?);
    for (n, id) in [(na, a), (nb, b)] {
        if meta.entity_graph_counts[n] == 0 {
            return Err(Error::InvalidArgument(format!("entity {id} has no graphs")));
        }
    }
    if trace.records.is_empty() {
        return Err(Error::InvalidArgument("empty trace".into()));
    }
    let ya = meta.entity_populations[na] as usize - 1;
    let yb = meta.entity_populations[nb] as usize - 1;
    let scale = meta.hyperparams.concentration_scale;
    let mut total = 0.0;
    for r in &trace.records {
        let conc: Vec<f64> = r.beta[ya]
            .iter()
            .zip(&r.beta[yb])
            .map(|(x, y)| scale * ((x + y) / 2.0))
            .collect();
        total += entity_test(&r.entity_counts[na], &r.entity_counts[nb], &conc)?;
    }
    Ok(EntityTestResult {
        entity_a: a,
        entity_b: b,
        p_h1: total / trace.records.len() as f64,
    })
}

/// Which entity pairs to test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityPairs {
    None,
    CrossPopulation,
    All,
}

impl std::str::FromStr for EntityPairs {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(EntityPairs::None),
            "cross" | "cross_population" => Ok(EntityPairs::CrossPopulation),
            "all" => Ok(EntityPairs::All),
            _ => Err(Error::InvalidArgument(format!("unknown entity pair set {s:?}"))),
        }
    }
}

pub fn entity_tests(trace: &Trace, pairs: EntityPairs) -> Result<Vec<EntityTestResult>> {
    let meta = &trace.meta;
    let mut list = Vec::new();
    let n = meta.entity_ids.len();
    for i in 0..n {
        for j in i + 1..n {
            let keep = match pairs {
                EntityPairs::None => false,
                EntityPairs::All => true,
                EntityPairs::CrossPopulation => meta.entity_populations[i] != meta.entity_populations[j],
            };
            if keep {
                list.push((meta.entity_ids[i], meta.entity_ids[j]));
            }
        }
    }
    list.par_iter().map(|&(a, b)| entity_test_trace(trace, a, b)).collect()
}

/// Deviation form used in the edge statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeStatisticForm {
    /// `sum (P_y - P)^2 / P`.
    Squared,
    /// `sum (P_y - P) / P`, floored at zero.
    Printed,
}

/// Support of the weight distribution used by the edge statistic.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeSupport {
    /// Trials per edge.
    Binomial(Vec<u64>),
    Poisson,
}

/// How binomial trials per edge are chosen for the edge statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialsRule {
    Mean,
    Median,
    Fixed(u64),
}

impl std::str::FromStr for TrialsRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(TrialsRule::Mean),
            "median" => Ok(TrialsRule::Median),
            _ => s
                .parse::<u64>()
                .ok()
                .filter(|&n| n >= 1)
                .map(TrialsRule::Fixed)
                .ok_or_else(|| Error::InvalidArgument(format!("trials rule must be mean, median or a positive integer, got {s:?}"))),
        }
    }
}

pub fn edge_support(meta: &TraceMeta, rule: TrialsRule) -> Result<EdgeSupport> {
    match meta.hyperparams.family {
        Family::Poisson => Ok(EdgeSupport::Poisson),
        Family::Binomial => {
            let l = n_edges(meta.n_nodes);
            let trials = match rule {
                TrialsRule::Fixed(n) => vec![n; l],
                TrialsRule::Mean => meta.edge_trials_mean.clone().ok_or_else(|| {
                    Error::InvalidArgument("trace has no per-edge trials".into())
                })?,
                TrialsRule::Median => meta.edge_trials_median.clone().ok_or_else(|| {
                    Error::InvalidArgument("trace has no per-edge trials".into())
                })?,
            };
            if trials.len() != l {
                return Err(Error::InvalidArgument("per-edge trials have the wrong length".into()));
            }
            Ok(EdgeSupport::Binomial(trials))
        }
    }
}

/// Squared statistic `p_l^2` (or the printed form) for one edge.
pub fn edge_p_squared(
    theta: [f64; 2],
    weights: [f64; 2],
    support: Option<u64>,
    form: EdgeStatisticForm,
) -> f64 {
    let mean = (theta[0] + theta[1]) / 2.0;
    let dev = |py: f64, p: f64| -> f64 {
        match form {
            EdgeStatisticForm::Squared => (py - p) * (py - p) / p,
            EdgeStatisticForm::Printed => (py - p) / p,
        }
    };
    let mut total = 0.0;
    let mut add = |p_mean: f64, p_pop: [f64; 2]| {
        for y in 0..2 {
            if p_mean > 0.0 {
                total += weights[y] * dev(p_pop[y], p_mean);
            } else if p_pop[y] > 0.0 {
                total = f64::INFINITY;
            }
        }
    };
    match support {
        Some(n) => {
            let clamp = |t: f64| t.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
            let (m, t0, t1) = (clamp(mean), clamp(theta[0]), clamp(theta[1]));
            for a in 0..=n {
                add(
                    binomial_ln_pmf(a, n, m).exp(),
                    [binomial_ln_pmf(a, n, t0).exp(), binomial_ln_pmf(a, n, t1).exp()],
                );
            }
        }
        None => {
            let mut cdf = 0.0;
            let mut a = 0u64;
            loop {
                let pm = poisson_ln_pmf(a, mean).exp();
                add(pm, [poisson_ln_pmf(a, theta[0]).exp(), poisson_ln_pmf(a, theta[1]).exp()]);
                cdf += pm;
                a += 1;
                if (a as f64 > mean && 1.0 - cdf < POISSON_TAIL) || a > 100_000_000 {
                    break;
                }
            }
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTestResult {
    pub statistic: Vec<f64>,
    pub theta_bar_diff: Vec<f64>,
    pub flagged: Vec<bool>,
    pub significance: f64,
}

/// Edge statistic from population-averaged edge parameters `theta[y][l]`
/// and population proportions `weights`.
pub fn edge_statistic_from_means(
    theta: &[Vec<f64>],
    weights: [f64; 2],
    support: &EdgeSupport,
    significance: f64,
    form: EdgeStatisticForm,
) -> Result<EdgeTestResult> {
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::InvalidArgument(format!("significance must lie in (0, 1), got {significance}")));
    }
    if theta.len() != 2 || theta[0].len() != theta[1].len() {
        return Err(Error::InvalidArgument("edge statistic needs two populations of equal length".into()));
    }
    let l = theta[0].len();
    if let EdgeSupport::Binomial(t) = support {
        if t.len() != l {
            return Err(Error::InvalidArgument("per-edge trials have the wrong length".into()));
        }
    }
    let statistic: Vec<f64> = (0..l)
        .into_par_iter()
        .map(|e| {
            let n = match support {
                EdgeSupport::Binomial(t) => Some(t[e]),
                EdgeSupport::Poisson => None,
            };
            let p2 = edge_p_squared([theta[0][e], theta[1][e]], weights, n, form);
            p2.max(0.0).sqrt().min(1.0)
        })
        .collect();
    let flagged = statistic.iter().map(|&p| p > 1.0 - significance).collect();
    let theta_bar_diff = theta[0].iter().zip(&theta[1]).map(|(a, b)| a - b).collect();
    Ok(EdgeTestResult {
        statistic,
        theta_bar_diff,
        flagged,
        significance,
    })
}

/// Posterior mean of the population-averaged edge parameters, `[pop][edge]`.
pub fn mean_theta_bar(trace: &Trace) -> Result<Vec<Vec<f64>>> {
    let mut acc: Option<Vec<Vec<f64>>> = None;
    let mut n = 0usize;
    for (_, tb) in trace.snapshots() {
        let a = acc.get_or_insert_with(|| tb.iter().map(|r| vec![0.0; r.len()]).collect());
        for (ay, ty) in a.iter_mut().zip(tb) {
            for (x, t) in ay.iter_mut().zip(ty) {
                *x += t;
            }
        }
        n += 1;
    }
    let mut a = acc.ok_or_else(|| Error::InvalidArgument("trace has no edge-parameter snapshots".into()))?;
    for row in a.iter_mut() {
        for x in row.iter_mut() {
            *x /= n as f64;
        }
    }
    Ok(a)
}

pub fn edge_statistic(
    trace: &Trace,
    support: &EdgeSupport,
    significance: f64,
    form: EdgeStatisticForm,
) -> Result<EdgeTestResult> {
    let theta = mean_theta_bar(trace)?;
    let sizes = trace.meta.population_sizes();
    if sizes.len() != 2 {
        return Err(Error::InvalidArgument("edge statistic needs two populations".into()));
    }
    let total = (sizes[0] + sizes[1]) as f64;
    let weights = [sizes[0] as f64 / total, sizes[1] as f64 / total];
    edge_statistic_from_means(&theta, weights, support, significance, form)
}

/// SHA-256 of the chain configuration recorded in the trace.
pub fn config_hash(meta: &TraceMeta) -> Result<String> {
    let text = serde_json::to_string(&(&meta.hyperparams, &meta.mcmc))?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Serialize)]
struct PopulationReport<'a> {
    p_h1: f64,
    n_iterations: usize,
    threshold: f64,
    decision: &'a str,
    config_hash: String,
}

pub fn write_population_report(meta: &TraceMeta, r: &PopulationTestResult, path: impl AsRef<Path>) -> Result<()> {
    let report = PopulationReport {
        p_h1: r.p_h1,
        n_iterations: r.n_iterations,
        threshold: r.decision_threshold,
        decision: if r.reject_null { "reject_h0" } else { "retain_h0" },
        config_hash: config_hash(meta)?,
    };
    write_file(path, serde_json::to_string_pretty(&report)? + "\n")
}

pub fn write_entity_report(results: &[EntityTestResult], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("entity_a,entity_b,p_h1\n");
    for r in results {
        out.push_str(&format!("{},{},{}\n", r.entity_a, r.entity_b, r.p_h1));
    }
    write_file(path, out)
}

pub fn write_edge_report(r: &EdgeTestResult, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("edge_index,i,j,p_l,theta_bar_diff,flagged\n");
    for (l, ((p, d), f)) in r.statistic.iter().zip(&r.theta_bar_diff).zip(&r.flagged).enumerate() {
        let (i, j) = edge_nodes(l);
        out.push_str(&format!("{l},{i},{j},{p},{d},{}\n", *f as u8));
    }
    write_file(path, out)
}
