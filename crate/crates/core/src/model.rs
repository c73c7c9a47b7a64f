//! Cluster-specific distribution over graphs: low-rank latent positions,
//! link functions and edge-weight likelihood families.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::{n_edges, EdgeVector};

/// Logistic outputs are clamped to `[LOGIT_EPS, 1 - LOGIT_EPS]`.
pub const LOGIT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Binomial,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logit,
    Exp,
}

impl Family {
    /// The link paired with this family.
    pub fn link(self) -> Link {
        match self {
            Family::Binomial => Link::Logit,
            Family::Poisson => Link::Exp,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binomial" => Ok(Family::Binomial),
            "poisson" => Ok(Family::Poisson),
            _ => Err(Error::InvalidArgument(format!("unknown family {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Number of mixture components `H`.
    pub n_clusters: usize,
    /// Latent dimension `R`.
    pub latent_dim: usize,
    /// Symmetric Dirichlet concentration on population simplices.
    pub alpha: f64,
    /// Prior probability that the populations differ.
    pub prior_h1: f64,
    pub family: Family,
    pub link: Link,
    /// Multiplier on the population simplex when it is used as a Dirichlet
    /// concentration for entity simplices (and in the entity test).
    pub concentration_scale: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams::new(15, 10, Family::Binomial)
    }
}

impl Hyperparams {
    /// Defaults: `alpha = 1/H`, `prior_h1 = 0.5`, unit concentration scale.
    pub fn new(n_clusters: usize, latent_dim: usize, family: Family) -> Self {
        Hyperparams {
            n_clusters,
            latent_dim,
            alpha: 1.0 / n_clusters.max(1) as f64,
            prior_h1: 0.5,
            family,
            link: family.link(),
            concentration_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clusters < 1 {
            return Err(Error::InvalidArgument("n_clusters must be at least 1".into()));
        }
        if self.latent_dim < 1 {
            return Err(Error::InvalidArgument("latent_dim must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.prior_h1 > 0.0 && self.prior_h1 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "prior_h1 must lie in (0, 1), got {}",
                self.prior_h1
            )));
        }
        if self.link != self.family.link() {
            return Err(Error::InvalidArgument(format!(
                "family {:?} must use link {:?}, got {:?}",
                self.family,
                self.family.link(),
                self.link
            )));
        }
        if !(self.concentration_scale > 0.0 && self.concentration_scale.is_finite()) {
            return Err(Error::InvalidArgument("concentration_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Node positions `X` as a row-major `V x R` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPositions {
    n_nodes: usize,
    dim: usize,
    data: Vec<f64>,
}

impl LatentPositions {
    pub fn zeros(n_nodes: usize, dim: usize) -> Self {
        LatentPositions {
            n_nodes,
            dim,
            data: vec![0.0; n_nodes * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == dim), "ragged position rows");
        LatentPositions {
            n_nodes: rows.len(),
            dim,
            data: rows.concat(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * self.dim..(v + 1) * self.dim]
    }

    pub fn row_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.data[v * self.dim..(v + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn dot(&self, i: usize, j: usize) -> f64 {
        dot(self.row(i), self.row(j))
    }

    /// `X Q` for an `R x R` matrix `Q` given row-major.
    pub fn right_multiply(&self, q: &[f64]) -> Self {
        let r = self.dim;
        assert_eq!(q.len(), r * r);
        let mut out = LatentPositions::zeros(self.n_nodes, r);
        for v in 0..self.n_nodes {
            let src = self.row(v);
            let dst = out.row_mut(v);
            for (c, d) in dst.iter_mut().enumerate() {
                *d = (0..r).map(|k| src[k] * q[k * r + c]).sum();
            }
        }
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic function saturated to `[LOGIT_EPS, 1 - LOGIT_EPS]`.
#[inline]
pub fn logistic(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    if p.is_nan() {
        0.5
    } else {
        p.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS)
    }
}

#[inline]
fn apply_link(s: f64, link: Link) -> Result<f64> {
    if !s.is_finite() {
        return match link {
            Link::Logit if s.is_infinite() => Ok(logistic(s)),
            _ => Err(Error::Numerical(format!("non-finite inner product {s}"))),
        };
    }
    match link {
        Link::Logit => Ok(logistic(s)),
        Link::Exp => {
            let t = s.exp();
            if t.is_finite() {
                Ok(t)
            } else {
                Err(Error::Numerical(format!("exp link overflow at inner product {s}")))
            }
        }
    }
}

/// Edge parameters `f(X X^T)` in lower-triangle order.
pub fn compute_theta(x: &LatentPositions, link: Link) -> Result<EdgeVector<f64>> {
    let v = x.n_nodes();
    let mut out = Vec::with_capacity(n_edges(v));
    for i in 1..v {
        for j in 0..i {
            out.push(apply_link(x.dot(i, j), link)?);
        }
    }
    Ok(EdgeVector::from_values(out))
}

/// Gradients of `theta_ij` with respect to rows `X_i` and `X_j`.
pub fn theta_gradient(x: &LatentPositions, link: Link, i: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
    let s = x.dot(i, j);
    let scale = match link {
        Link::Logit => {
            let t = logistic(s);
            t * (1.0 - t)
        }
        Link::Exp => s.exp(),
    };
    let gi = x.row(j).iter().map(|&b| scale * b).collect();
    let gj = x.row(i).iter().map(|&a| scale * a).collect();
    (gi, gj)
}

/// `ln C(n, k)`.
#[inline]
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

#[inline]
pub fn binomial_ln_pmf(a: u64, n: u64, theta: f64) -> f64 {
    if a > n {
        return f64::NEG_INFINITY;
    }
    let mut lp = ln_choose(n, a);
    if a > 0 {
        lp += a as f64 * theta.ln();
    }
    if n > a {
        lp += (n - a) as f64 * (-theta).ln_1p();
    }
    lp
}

#[inline]
pub fn poisson_ln_pmf(a: u64, rate: f64) -> f64 {
    if a == 0 {
        return -rate;
    }
    a as f64 * rate.ln() - rate - ln_gamma(a as f64 + 1.0)
}

/// Sum over edges of the log pmf of counts `a` under parameters `theta`.
pub fn log_likelihood(
    a: &EdgeVector<u64>,
    trials: Option<&EdgeVector<u64>>,
    theta: &EdgeVector<f64>,
    family: Family,
) -> Result<f64> {
    if a.len() != theta.len() {
        return Err(Error::InvalidArgument(format!(
            "count vector has {} edges, parameter vector {}",
            a.len(),
            theta.len()
        )));
    }
    match family {
        Family::Binomial => {
            let trials = trials.ok_or_else(|| {
                Error::InvalidArgument("binomial likelihood needs trials".into())
            })?;
            if trials.len() != a.len() {
                return Err(Error::InvalidArgument("trials length mismatch".into()));
            }
            let mut total = 0.0;
            for (l, ((&k, &n), &t)) in a.values().iter().zip(trials.values()).zip(theta.values()).enumerate() {
                if k > n {
                    return Err(Error::InvalidArgument(format!(
                        "edge {l}: count {k} exceeds trials {n}"
                    )));
                }
                total += binomial_ln_pmf(k, n, t);
            }
            Ok(total)
        }
        Family::Poisson => Ok(a
            .values()
            .iter()
            .zip(theta.values())
            .map(|(&k, &t)| poisson_ln_pmf(k, t))
            .sum()),
    }
}

/// Latent positions and cached edge parameters of one mixture component.
#[derive(Debug, Clone)]
pub struct Cluster {
    positions: LatentPositions,
    version: u64,
    theta: EdgeVector<f64>,
    ln_theta: Vec<f64>,
    ln_1m_theta: Vec<f64>,
    theta_sum: f64,
    theta_version: u64,
}

impl Cluster {
    fn new(positions: LatentPositions, link: Link) -> Result<Self> {
        let mut c = Cluster {
            positions,
            version: 1,
            theta: EdgeVector::from_values(Vec::new()),
            ln_theta: Vec::new(),
            ln_1m_theta: Vec::new(),
            theta_sum: 0.0,
            theta_version: 0,
        };
        c.refresh(link)?;
        Ok(c)
    }

    fn refresh(&mut self, link: Link) -> Result<()> {
        let theta = compute_theta(&self.positions, link)?;
        self.ln_theta = theta.values().iter().map(|t| t.ln()).collect();
        self.ln_1m_theta = match link {
            Link::Logit => theta.values().iter().map(|t| (-t).ln_1p()).collect(),
            Link::Exp => Vec::new(),
        };
        self.theta_sum = theta.values().iter().sum();
        self.theta = theta;
        self.theta_version = self.version;
        Ok(())
    }
}

/// Per-cluster latent positions with version-checked parameter caches.
#[derive(Debug, Clone)]
pub struct ClusterParams {
    link: Link,
    clusters: Vec<Cluster>,
}

impl ClusterParams {
    pub fn new(positions: Vec<LatentPositions>, link: Link) -> Result<Self> {
        let clusters = positions
            .into_iter()
            .map(|p| Cluster::new(p, link))
            .collect::<Result<Vec<_>>>()?;
        Ok(ClusterParams { link, clusters })
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn positions(&self, h: usize) -> &LatentPositions {
        &self.clusters[h].positions
    }

    /// Mutable positions; invalidates the parameter cache until [`Self::refresh`].
    pub fn positions_mut(&mut self, h: usize) -> &mut LatentPositions {
        let c = &mut self.clusters[h];
        c.version += 1;
        &mut c.positions
    }

    pub fn set_positions(&mut self, h: usize, x: LatentPositions) -> Result<()> {
        *self.positions_mut(h) = x;
        self.refresh(h)
    }

    pub fn refresh(&mut self, h: usize) -> Result<()> {
        let link = self.link;
        self.clusters[h].refresh(link)
    }

    pub fn is_fresh(&self, h: usize) -> bool {
        let c = &self.clusters[h];
        c.theta_version == c.version
    }

    fn fresh(&self, h: usize) -> &Cluster {
        let c = &self.clusters[h];
        assert!(
            c.theta_version == c.version,
            "stale parameter cache for cluster {h}: positions v{} vs cache v{}",
            c.version,
            c.theta_version
        );
        c
    }

    pub fn theta(&self, h: usize) -> &EdgeVector<f64> {
        &self.fresh(h).theta
    }

    pub fn ln_theta(&self, h: usize) -> &[f64] {
        &self.fresh(h).ln_theta
    }

    /// `ln(1 - theta)`; empty under the exp link.
    pub fn ln_1m_theta(&self, h: usize) -> &[f64] {
        &self.fresh(h).ln_1m_theta
    }

    pub fn theta_sum(&self, h: usize) -> f64 {
        self.fresh(h).theta_sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_positions(rng: &mut impl Rng, v: usize, r: usize) -> LatentPositions {
        let rows: Vec<Vec<f64>> = (0..v)
            .map(|_| (0..r).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        LatentPositions::from_rows(&rows)
    }

    #[test]
    fn zero_positions() {
        let x = LatentPositions::zeros(5, 3);
        assert!(compute_theta(&x, Link::Logit).unwrap().values().iter().all(|&t| t == 0.5));
        assert!(compute_theta(&x, Link::Exp).unwrap().values().iter().all(|&t| t == 1.0));
    }

    #[test]
    fn theta_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_positions(&mut rng, 4, 2);
        // Dense S = X X^T, then read the lower triangle.
        let mut s = vec![vec![0.0; 4]; 4];
        for (a, row) in s.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                *cell = (0..2).map(|k| x.row(a)[k] * x.row(b)[k]).sum();
            }
        }
        let logit = compute_theta(&x, Link::Logit).unwrap();
        let exp = compute_theta(&x, Link::Exp).unwrap();
        let mut l = 0;
        for i in 1..4 {
            for j in 0..i {
                assert!((logit.values()[l] - 1.0 / (1.0 + (-s[i][j]).exp())).abs() < 1e-12);
                assert!((exp.values()[l] - s[i][j].exp()).abs() < 1e-12);
                l += 1;
            }
        }
    }

    #[test]
    fn saturation_and_overflow() {
        let x = LatentPositions::from_rows(&[vec![40.0], vec![40.0], vec![-40.0]]);
        let t = compute_theta(&x, Link::Logit).unwrap();
        assert_eq!(t.values()[0], 1.0 - LOGIT_EPS);
        assert_eq!(t.values()[1], LOGIT_EPS);
        assert!(matches!(compute_theta(&x, Link::Exp), Err(Error::Numerical(_))));
    }

    #[test]
    fn closed_form_pmfs() {
        let a = EdgeVector::from_values(vec![5u64]);
        let n = EdgeVector::from_values(vec![10u64]);
        let t = EdgeVector::from_values(vec![0.5]);
        let ll = log_likelihood(&a, Some(&n), &t, Family::Binomial).unwrap();
        assert_relative_eq!(ll, (252.0f64 / 1024.0).ln(), epsilon = 1e-12);
        assert_relative_eq!(ll, -1.4020, epsilon = 1e-4);

        let a = EdgeVector::from_values(vec![0u64]);
        let t = EdgeVector::from_values(vec![1.0]);
        assert_relative_eq!(log_likelihood(&a, None, &t, Family::Poisson).unwrap(), -1.0);
    }

    #[test]
    fn likelihood_errors() {
        let a = EdgeVector::from_values(vec![5u64]);
        let n = EdgeVector::from_values(vec![4u64]);
        let t = EdgeVector::from_values(vec![0.5]);
        assert!(log_likelihood(&a, Some(&n), &t, Family::Binomial).is_err());
        assert!(log_likelihood(&a, None, &t, Family::Binomial).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_positions(&mut rng, 5, 3);
        let h = 1e-5;
        for (i, j) in [(1, 0), (4, 2), (3, 1)] {
            let (gi, gj) = theta_gradient(&x, Link::Logit, i, j);
            for (node, g) in [(i, &gi), (j, &gj)] {
                for k in 0..3 {
                    let mut xp = x.clone();
                    xp.row_mut(node)[k] += h;
                    let mut xm = x.clone();
                    xm.row_mut(node)[k] -= h;
                    let fd = (logistic(xp.dot(i, j)) - logistic(xm.dot(i, j))) / (2.0 * h);
                    assert!((g[k] - fd).abs() <= 1e-4 * fd.abs().max(1e-8), "{} vs {fd}", g[k]);
                }
            }
        }
    }

    #[test]
    fn stale_cache_is_detected() {
        let mut p = ClusterParams::new(vec![LatentPositions::zeros(3, 2)], Link::Logit).unwrap();
        assert!(p.is_fresh(0));
        p.positions_mut(0).row_mut(0)[0] = 1.0;
        assert!(!p.is_fresh(0));
        assert!(std::panic::catch_unwind(|| p.theta(0).len()).is_err());
        p.refresh(0).unwrap();
        assert_eq!(p.theta(0), &compute_theta(p.positions(0), Link::Logit).unwrap());
    }

    #[test]
    fn hyperparam_defaults() {
        let hp = Hyperparams::default();
        assert_eq!(hp.n_clusters, 15);
        assert_eq!(hp.latent_dim, 10);
        assert_relative_eq!(hp.alpha, 1.0 / 15.0);
        assert_eq!(hp.prior_h1, 0.5);
        hp.validate().unwrap();
        let mut bad = hp.clone();
        bad.link = Link::Exp;
        assert!(bad.validate().is_err());
    }

    fn random_orthogonal(rng: &mut impl Rng, r: usize) -> Vec<f64> {
        // Gram-Schmidt on a random matrix; rows of the result are orthonormal.
        let mut q: Vec<Vec<f64>> = Vec::new();
        while q.len() < r {
            let mut v: Vec<f64> = (0..r).map(|_| rng.random_range(-1.0..1.0)).collect();
            for u in &q {
                let d = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            let n = dot(&v, &v).sqrt();
            if n > 1e-3 {
                q.push(v.into_iter().map(|a| a / n).collect());
            }
        }
        q.concat()
    }

    proptest! {
        #[test]
        fn theta_rotation_invariant(seed in any::<u64>(), v in 2usize..8, r in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_positions(&mut rng, v, r);
            let q = random_orthogonal(&mut rng, r);
            let xq = x.right_multiply(&q);
            for link in [Link::Logit, Link::Exp] {
                let a = compute_theta(&x, link).unwrap();
                let b = compute_theta(&xq, link).unwrap();
                for (p, q) in a.values().iter().zip(b.values()) {
                    prop_assert!((p - q).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn likelihood_additive_over_partitions(
            seed in any::<u64>(),
            split in 1usize..9,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n: Vec<u64> = (0..10).map(|_| rng.random_range(0..20)).collect();
            let a: Vec<u64> = n.iter().map(|&k| rng.random_range(0..=k)).collect();
            let t: Vec<f64> = (0..10).map(|_| rng.random_range(0.01..0.99)).collect();
            let full = log_likelihood(
                &EdgeVector::from_values(a.clone()),
                Some(&EdgeVector::from_values(n.clone())),
                &EdgeVector::from_values(t.clone()),
                Family::Binomial,
            ).unwrap();
            let part = |r: std::ops::Range<usize>| log_likelihood(
                &EdgeVector::from_values(a[r.clone()].to_vec()),
                Some(&EdgeVector::from_values(n[r.clone()].to_vec())),
                &EdgeVector::from_values(t[r].to_vec()),
                Family::Binomial,
            ).unwrap();
            prop_assert!((full - part(0..split) - part(split..10)).abs() < 1e-9);
        }
    }
}
