//! Synthetic populations: Zipf node counts and planted block structures.

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeVector, GraphObservation, NodeVocabulary, PopulationDataset};
use crate::random::{identity_keys, sample_dirichlet};
use crate::rng::{stream, Step, StreamRng};

/// A rectangular block of planted edge probabilities, applied symmetrically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    /// Half-open node range `[start, end)`.
    pub rows: [usize; 2],
    pub cols: [usize; 2],
    pub prob: f64,
}

/// Planted edge probabilities for one population or regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    #[serde(rename = "V")]
    pub n_nodes: usize,
    pub baseline_prob: f64,
    /// Later blocks override earlier ones where they overlap.
    #[serde(default)]
    pub blocks: Vec<Block>,
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must lie in [0, 1], got {p}")))
    }
}

impl StructureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return Err(Error::InvalidArgument("structure needs at least two nodes".into()));
        }
        check_prob(self.baseline_prob, "baseline_prob")?;
        for b in &self.blocks {
            check_prob(b.prob, "block prob")?;
            for r in [b.rows, b.cols] {
                if r[0] >= r[1] || r[1] > self.n_nodes {
                    return Err(Error::InvalidArgument(format!(
                        "block range [{}, {}) outside 0..{}",
                        r[0], r[1], self.n_nodes
                    )));
                }
            }
        }
        Ok(())
    }

    /// Edge probabilities in vectorized order.
    pub fn theta(&self) -> Result<EdgeVector<f64>> {
        self.validate()?;
        let v = self.n_nodes;
        let mut m = vec![vec![self.baseline_prob; v]; v];
        for b in &self.blocks {
            for i in b.rows[0]..b.rows[1] {
                for j in b.cols[0]..b.cols[1] {
                    m[i][j] = b.prob;
                    m[j][i] = b.prob;
                }
            }
        }
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        EdgeVector::from_matrix(&m)
    }
}

/// Multivariate Zipf counts: one `p ~ Beta(1, lambda)` shared by all nodes,
/// then independent geometric failure counts.
pub fn sample_zipf_counts<R: Rng + ?Sized>(v: usize, lambda: f64, rng: &mut R) -> Result<Vec<u64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let p: f64 = Beta::new(1.0, lambda)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .sample(rng);
    geometric_counts(v, p, rng)
}

/// `v` independent geometric failure counts with success probability `p`.
pub fn geometric_counts<R: Rng + ?Sized>(v: usize, p: f64, rng: &mut R) -> Result<Vec<u64>> {
    let p = p.max(1e-12);
    let g = Geometric::new(p).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((0..v).map(|_| g.sample(rng)).collect())
}

/// One graph with `A_ij ~ Bin(min(counts_i, counts_j), theta_ij)`.
pub fn generate_graph<R: Rng + ?Sized>(
    entity_id: i64,
    time_index: u32,
    counts: &[u64],
    theta: &EdgeVector<f64>,
    rng: &mut R,
) -> Result<GraphObservation> {
    let v = counts.len();
    if theta.len() != v * (v - 1) / 2 {
        return Err(Error::InvalidArgument("theta does not match the node count".into()));
    }
    let mut w = EdgeVector::<u64>::zeros(v);
    for i in 1..v {
        for j in 0..i {
            let n = counts[i].min(counts[j]);
            let p = theta.get(i, j);
            check_prob(p, "edge probability")?;
            let a = if n == 0 || p == 0.0 {
                0
            } else if p == 1.0 {
                n
            } else {
                Binomial::new(n, p).expect("valid binomial").sample(rng)
            };
            w.set(i, j, a);
        }
    }
    GraphObservation::new(entity_id, time_index, w, Some(counts.to_vec()))
}

fn default_regime_concentration() -> f64 {
    1.0
}

fn default_lambda() -> f64 {
    1.0
}

/// Two populations, each with one or more regimes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    /// Regime structures per population; one regime means homogeneous.
    pub populations: Vec<Vec<StructureSpec>>,
    pub entities_per_population: usize,
    pub time_points: u32,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Regime of time index `t` is `t mod n_regimes` instead of a random draw.
    #[serde(default)]
    pub time_locked: bool,
    /// Dirichlet concentration of each entity's regime weights.
    #[serde(default = "default_regime_concentration")]
    pub regime_concentration: f64,
}

impl SimulationSpec {
    pub fn homogeneous(spec1: StructureSpec, spec2: StructureSpec, entities_per_population: usize) -> Self {
        SimulationSpec {
            populations: vec![vec![spec1], vec![spec2]],
            entities_per_population,
            time_points: 1,
            lambda: 1.0,
            time_locked: false,
            regime_concentration: 1.0,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.populations[0][0].n_nodes
    }

    pub fn validate(&self) -> Result<()> {
        if self.populations.len() != 2 {
            return Err(Error::InvalidArgument("simulation needs exactly two populations".into()));
        }
        if self.entities_per_population < 1 || self.time_points < 1 {
            return Err(Error::InvalidArgument("entity and time-point counts must be positive".into()));
        }
        if !(self.lambda > 0.0 && self.regime_concentration > 0.0) {
            return Err(Error::InvalidArgument("lambda and regime_concentration must be positive".into()));
        }
        let v = self.populations.first().and_then(|p| p.first()).map(|s| s.n_nodes);
        for p in &self.populations {
            if p.is_empty() {
                return Err(Error::InvalidArgument("every population needs at least one regime".into()));
            }
            for s in p {
                s.validate()?;
                if Some(s.n_nodes) != v {
                    return Err(Error::InvalidArgument("all structures must share V".into()));
                }
            }
        }
        Ok(())
    }

    /// Same spec with a different number of entities per population.
    pub fn with_entities(&self, n: usize) -> Self {
        SimulationSpec {
            entities_per_population: n,
            ..self.clone()
        }
    }
}

/// Regime index of every graph, `[entity][time]`, entities in id order.
pub fn regime_plan(spec: &SimulationSpec, seed: u64) -> Vec<Vec<usize>> {
    let e = spec.entities_per_population;
    let mut plan = Vec::new();
    for (y, regimes) in spec.populations.iter().enumerate() {
        let k = regimes.len();
        for n in 0..e {
            let id = (y * e + n + 1) as u64;
            let mut rng: StreamRng = stream(seed, 1, Step::Synth, id);
            let row = if k == 1 {
                vec![0; spec.time_points as usize]
            } else if spec.time_locked {
                (0..spec.time_points as usize).map(|t| t % k).collect()
            } else {
                let w = sample_dirichlet(&vec![spec.regime_concentration; k], &identity_keys(k), &mut rng);
                (0..spec.time_points)
                    .map(|_| {
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        w.iter()
                            .position(|x| {
                                acc += x;
                                u < acc
                            })
                            .unwrap_or(k - 1)
                    })
                    .collect()
            };
            plan.push(row);
        }
    }
    plan
}

/// Generate a dataset; entities of population 1 are `1..=E`, population 2
/// `E+1..=2E`. Deterministic in `(spec, seed)`.
pub fn generate(spec: &SimulationSpec, seed: u64) -> Result<PopulationDataset> {
    spec.validate()?;
    let thetas: Vec<Vec<EdgeVector<f64>>> = spec
        .populations
        .iter()
        .map(|regimes| regimes.iter().map(|s| s.theta()).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let v = spec.n_nodes();
    let e = spec.entities_per_population;
    let mut graphs = Vec::new();
    let mut labels = std::collections::BTreeMap::new();
    let plan = regime_plan(spec, seed);
    for (y, regimes) in thetas.iter().enumerate() {
        for n in 0..e {
            let id = (y * e + n + 1) as i64;
            labels.insert(id, (y + 1) as u8);
            let mut rng: StreamRng = stream(seed, 0, Step::Synth, id as u64);
            for (t, &r) in plan[y * e + n].iter().enumerate() {
                let counts = sample_zipf_counts(v, spec.lambda, &mut rng)?;
                graphs.push(generate_graph(id, t as u32, &counts, &regimes[r], &mut rng)?);
            }
        }
    }
    PopulationDataset::new(NodeVocabulary::numbered(v)?, graphs, labels)
}

/// One graph per entity, population `y` drawn from `spec_y`.
pub fn generate_homogeneous(
    spec1: &StructureSpec,
    spec2: &StructureSpec,
    entities_per_population: usize,
    lambda: f64,
    seed: u64,
) -> Result<PopulationDataset> {
    let mut s = SimulationSpec::homogeneous(spec1.clone(), spec2.clone(), entities_per_population);
    s.lambda = lambda;
    generate(&s, seed)
}

/// Several graphs per entity, each drawn from one of its population's regimes.
pub fn generate_heterogeneous(
    regimes: [Vec<StructureSpec>; 2],
    entities_per_population: usize,
    time_points: u32,
    lambda: f64,
    time_locked: bool,
    seed: u64,
) -> Result<PopulationDataset> {
    if time_points < 2 {
        return Err(Error::InvalidArgument("heterogeneous data needs at least two time points".into()));
    }
    let [a, b] = regimes;
    let s = SimulationSpec {
        populations: vec![a, b],
        entities_per_population,
        time_points,
        lambda,
        time_locked,
        regime_concentration: 1.0,
    };
    generate(&s, seed)
}

fn block(rows: [usize; 2], cols: [usize; 2], prob: f64) -> Block {
    Block { rows, cols, prob }
}

/// Overlapping-block pair on 20 nodes: population 1 is elevated on the
/// first 13 nodes, population 2 on the last 13, sharing the middle.
pub fn default_homogeneous() -> SimulationSpec {
    let v = 20;
    let s1 = StructureSpec {
        n_nodes: v,
        baseline_prob: 0.2,
        blocks: vec![block([0, 13], [0, 13], 0.7)],
    };
    let s2 = StructureSpec {
        n_nodes: v,
        baseline_prob: 0.2,
        blocks: vec![block([7, 20], [7, 20], 0.7)],
    };
    SimulationSpec::homogeneous(s1, s2, 50)
}

/// Two regimes per population on 20 nodes, located on the first and last
/// ten nodes; the populations differ in the block probabilities.
pub fn default_heterogeneous() -> SimulationSpec {
    let v = 20;
    let structure = |lo: usize, hi: usize| StructureSpec {
        n_nodes: v,
        baseline_prob: 0.2,
        blocks: vec![block([lo, hi], [lo, hi], 0.7)],
    };
    // Each population alternates between its own regime and a shared one.
    SimulationSpec {
        populations: vec![
            vec![structure(0, 13), structure(7, 13)],
            vec![structure(7, 20), structure(7, 13)],
        ],
        entities_per_population: 50,
        time_points: 4,
        lambda: 1.0,
        time_locked: false,
        regime_concentration: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_success_probability_gives_zero_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(geometric_counts(30, 1.0, &mut rng).unwrap().iter().all(|&c| c == 0));
    }

    #[test]
    fn zipf_coordinates_are_correlated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        // Correlation of indicators avoids the infinite-variance tail.
        let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let c = sample_zipf_counts(2, 1.0, &mut rng).unwrap();
            let (x, y) = ((c[0] == 0) as u8 as f64, (c[1] == 0) as u8 as f64);
            sx += x;
            sy += y;
            sxy += x * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - (sx / nf) * (sy / nf);
        assert!(cov > 0.05, "{cov}");
    }

    #[test]
    fn extreme_edge_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let counts = vec![3, 0, 7, 2];
        let zero = EdgeVector::from_values(vec![0.0; 6]);
        let g = generate_graph(1, 0, &counts, &zero, &mut rng).unwrap();
        assert!(g.weights().values().iter().all(|&w| w == 0));
        let one = EdgeVector::from_values(vec![1.0; 6]);
        let g = generate_graph(1, 0, &counts, &one, &mut rng).unwrap();
        for i in 1..4 {
            for j in 0..i {
                assert_eq!(g.weight(i, j), counts[i].min(counts[j]));
            }
        }
    }

    #[test]
    fn planted_edge_means() {
        let spec = &default_homogeneous().populations[0][0];
        let theta = spec.theta().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let counts: Vec<u64> = (0..20).map(|v| 1 + (v % 5) as u64 * 3).collect();
        let n_graphs = 2000;
        let mut sums = vec![0u64; theta.len()];
        for _ in 0..n_graphs {
            let g = generate_graph(1, 0, &counts, &theta, &mut rng).unwrap();
            for (s, w) in sums.iter_mut().zip(g.weights().values()) {
                *s += w;
            }
        }
        // Per-edge z-scores: a handful beyond 3 is expected among 190 edges.
        let mut beyond_3 = 0;
        for i in 1..20 {
            for j in 0..i {
                let l = crate::graph::edge_index(i, j);
                let n = counts[i].min(counts[j]) as f64;
                let p = theta.values()[l];
                let se = (n * p * (1.0 - p) / n_graphs as f64).sqrt();
                let z = (sums[l] as f64 / n_graphs as f64 - n * p) / se;
                assert!(z.abs() < 4.5, "edge ({i},{j}): z = {z}");
                beyond_3 += (z.abs() > 3.0) as usize;
            }
        }
        assert!(beyond_3 <= 4, "{beyond_3} edges beyond 3 standard errors");
    }

    #[test]
    fn structure_validation() {
        let mut s = default_homogeneous().populations[0][0].clone();
        s.blocks[0].rows = [5, 25];
        assert!(s.validate().is_err());
        let mut s = default_homogeneous().populations[0][0].clone();
        s.baseline_prob = 1.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn single_entity_dataset_is_valid() {
        let s = default_homogeneous().with_entities(1);
        let d = generate(&s, 9).unwrap();
        assert_eq!(d.graphs().len(), 2);
        for g in d.graphs() {
            let c = g.node_counts().unwrap();
            for i in 1..20 {
                for j in 0..i {
                    assert!(g.weight(i, j) <= c[i].min(c[j]));
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = default_heterogeneous().with_entities(5);
        let a = generate(&s, 11).unwrap();
        let b = generate(&s, 11).unwrap();
        assert_eq!(a.graphs(), b.graphs());
        let c = generate(&s, 12).unwrap();
        assert_ne!(a.graphs(), c.graphs());
    }

    #[test]
    fn heterogeneous_shape() {
        let mut s = default_heterogeneous();
        s.entities_per_population = 50;
        let d = generate(&s, 1).unwrap();
        assert_eq!(d.graphs().len(), 400);
        let per_pop = d
            .graphs()
            .iter()
            .filter(|g| d.population_of(g.entity_id) == Some(1))
            .count();
        assert_eq!(per_pop, 200);
    }

    #[test]
    fn single_regime_matches_homogeneous_stream() {
        let h = default_homogeneous();
        let mut repeated = h.clone();
        repeated.time_points = 3;
        let d = generate(&repeated, 5).unwrap();
        assert_eq!(d.graphs().len(), 300);
        let first: Vec<_> = d.graphs().iter().filter(|g| g.time_index == 0).cloned().collect();
        let single = generate(&h, 5).unwrap();
        assert_eq!(first.as_slice(), single.graphs());
    }

    #[test]
    fn regime_weights_differ_across_entities() {
        let mut s = default_heterogeneous();
        s.entities_per_population = 200;
        let plan = regime_plan(&s, 3);
        // Count of regime-0 graphs per entity; under shared uniform weights
        // this would be Binomial(4, 1/2), under per-entity weights it is
        // uniform on 0..=4.
        let mut hist = [0usize; 5];
        for row in &plan[..200] {
            hist[row.iter().filter(|&&r| r == 0).count()] += 1;
        }
        let expected = 200.0 / 5.0;
        let chi2: f64 = hist.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // 99.9% point of chi-square with 4 degrees of freedom.
        assert!(chi2 < 18.47, "{hist:?}");
        let locked = SimulationSpec { time_locked: true, ..s };
        assert!(regime_plan(&locked, 3).iter().all(|r| r == &[0, 1, 0, 1]));
    }
}
