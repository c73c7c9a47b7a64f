//! Gibbs sampler for the two-population network mixture.
//!
//! One sweep runs, in order: cluster assignments, entity mixing weights
//! (mixed variant only), latent positions, the test indicator and the
//! population mixing weights.

mod trace;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use trace::{read_trace, write_trace, ChainDiagnostics, Timings, Trace, TraceMeta, TraceRecord};

use crate::diagnostics::effective_sample_size;
use crate::error::{Error, Result};
use crate::graph::{edge_index, edge_nodes, PopulationDataset};
use crate::hypothesis::posterior_prob_h1_with_prior;
use crate::model::{ClusterParams, Family, Hyperparams, LatentPositions};
use crate::polya_gamma::sample_polya_gamma;
use crate::random::{identity_keys, sample_categorical_log, sample_dirichlet};
use crate::rng::{stream, Step, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// Cluster weights shared by all graphs of a population.
    Fixed,
    /// Per-entity cluster weights centred on the population weights.
    Mixed,
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(ModelVariant::Fixed),
            "mixed" => Ok(ModelVariant::Mixed),
            _ => Err(Error::InvalidArgument(format!("unknown model variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    /// Total sweeps, burn-in included.
    pub n_samples: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub model_variant: ModelVariant,
    /// Edge-parameter snapshot interval.
    pub thin: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_samples: 1300,
            burn_in: 200,
            seed: 0,
            model_variant: ModelVariant::Fixed,
            thin: 10,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples <= self.burn_in {
            return Err(Error::InvalidArgument(format!(
                "n_samples ({}) must exceed burn_in ({})",
                self.n_samples, self.burn_in
            )));
        }
        if self.thin < 1 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        Ok(())
    }
}

/// Nonzero observation of one edge in one graph.
#[derive(Debug, Clone, Copy)]
struct Entry {
    edge: u32,
    weight: u64,
    trials: u64,
}

/// Dataset in the layout used by the sweep.
#[derive(Debug, Clone)]
struct ChainData {
    family: Family,
    n_nodes: usize,
    n_edges: usize,
    graph_entity: Vec<usize>,
    graph_pop: Vec<usize>,
    entity_ids: Vec<i64>,
    entity_pop: Vec<usize>,
    entity_graphs: Vec<usize>,
    entries: Vec<Vec<Entry>>,
    edge_trials_mean: Option<Vec<u64>>,
    edge_trials_median: Option<Vec<u64>>,
}

impl ChainData {
    fn new(d: &PopulationDataset, family: Family) -> Result<Self> {
        if d.n_populations() != 2 {
            return Err(Error::Dataset(format!(
                "the sampler needs exactly two populations, found {}",
                d.n_populations()
            )));
        }
        if family == Family::Binomial && !d.has_node_counts() {
            return Err(Error::Dataset(
                "the binomial family needs node_counts for every graph (trials are min(counts_i, counts_j))".into(),
            ));
        }
        let entity_ids = d.entities();
        let entity_pop: Vec<usize> = entity_ids
            .iter()
            .map(|&e| d.population_of(e).expect("labeled") as usize - 1)
            .collect();
        let position = |e: i64| entity_ids.binary_search(&e).expect("entity present");
        let l = d.n_edges();
        let mut graph_entity = Vec::new();
        let mut graph_pop = Vec::new();
        let mut entity_graphs = vec![0; entity_ids.len()];
        let mut entries = Vec::new();
        let mut positive_trials: Vec<Vec<u64>> = vec![Vec::new(); if family == Family::Binomial { l } else { 0 }];
        for g in d.graphs() {
            let n = position(g.entity_id);
            graph_entity.push(n);
            graph_pop.push(entity_pop[n]);
            entity_graphs[n] += 1;
            let w = g.weights().values();
            let row: Vec<Entry> = match family {
                Family::Binomial => {
                    let trials = g.trials().expect("node counts checked");
                    trials
                        .values()
                        .iter()
                        .zip(w)
                        .enumerate()
                        .filter(|(_, (&t, _))| t > 0)
                        .map(|(e, (&t, &a))| {
                            positive_trials[e].push(t);
                            Entry { edge: e as u32, weight: a, trials: t }
                        })
                        .collect()
                }
                Family::Poisson => w
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| a > 0)
                    .map(|(e, &a)| Entry { edge: e as u32, weight: a, trials: 0 })
                    .collect(),
            };
            entries.push(row);
        }
        let (edge_trials_mean, edge_trials_median) = if family == Family::Binomial {
            let mean = positive_trials
                .iter()
                .map(|t| {
                    if t.is_empty() {
                        1
                    } else {
                        ((t.iter().sum::<u64>() as f64 / t.len() as f64).round() as u64).max(1)
                    }
                })
                .collect();
            let median = positive_trials
                .iter_mut()
                .map(|t| {
                    if t.is_empty() {
                        1
                    } else {
                        t.sort_unstable();
                        t[t.len() / 2].max(1)
                    }
                })
                .collect();
            (Some(mean), Some(median))
        } else {
            (None, None)
        };
        Ok(ChainData {
            family,
            n_nodes: d.n_nodes(),
            n_edges: l,
            graph_entity,
            graph_pop,
            entity_ids,
            entity_pop,
            entity_graphs,
            entries,
            edge_trials_mean,
            edge_trials_median,
        })
    }

    fn n_graphs(&self) -> usize {
        self.graph_entity.len()
    }
}

/// Mutable chain state.
#[derive(Debug, Clone)]
pub struct SamplerState {
    /// Cluster of each graph (0-based), in dataset graph order.
    pub assignments: Vec<usize>,
    /// Per-entity cluster weights; empty for the fixed variant.
    pub entity_mixing: Vec<Vec<f64>>,
    /// Per-population cluster weights.
    pub population_mixing: Vec<Vec<f64>>,
    pub test_indicator: bool,
    pub params: ClusterParams,
    /// Number of completed sweeps.
    pub iteration: u64,
    /// Random-stream identity of each cluster label.
    pub cluster_keys: Vec<u64>,
    /// Random-walk scales `[cluster][node]` for the Poisson family.
    pub step_sizes: Vec<Vec<f64>>,
    /// `P(H1 | counts)` from the last indicator update.
    pub conditional_p_h1: f64,
    mh_accepted: u64,
    mh_proposed: u64,
}

impl SamplerState {
    /// Relabel clusters so that new label `h` holds old cluster `perm[h]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<SamplerState> {
        let h = self.cluster_keys.len();
        let mut seen = vec![false; h];
        if perm.len() != h || perm.iter().any(|&p| p >= h || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("relabeling must be a permutation".into()));
        }
        let mut inverse = vec![0; h];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let pick = |v: &Vec<f64>| perm.iter().map(|&p| v[p]).collect::<Vec<f64>>();
        let positions = perm.iter().map(|&p| self.params.positions(p).clone()).collect();
        Ok(SamplerState {
            assignments: self.assignments.iter().map(|&c| inverse[c]).collect(),
            entity_mixing: self.entity_mixing.iter().map(pick).collect(),
            population_mixing: self.population_mixing.iter().map(pick).collect(),
            test_indicator: self.test_indicator,
            params: ClusterParams::new(positions, self.params.link())?,
            iteration: self.iteration,
            cluster_keys: perm.iter().map(|&p| self.cluster_keys[p]).collect(),
            step_sizes: perm.iter().map(|&p| self.step_sizes[p].clone()).collect(),
            conditional_p_h1: self.conditional_p_h1,
            mh_accepted: self.mh_accepted,
            mh_proposed: self.mh_proposed,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_keys.len()
    }
}

const INIT_ASSIGN: u64 = 1 << 40;
const INIT_BETA: u64 = 2 << 40;
const INIT_PI: u64 = 3 << 40;
const INIT_INDICATOR: u64 = 4 << 40;
const INITIAL_STEP: f64 = 0.1;
const TARGET_ACCEPTANCE: f64 = 0.35;

/// Draw a `V x R` matrix from the standard normal prior.
fn prior_positions(rng: &mut StreamRng, v: usize, r: usize) -> LatentPositions {
    let rows: Vec<Vec<f64>> = (0..v)
        .map(|_| (0..r).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    LatentPositions::from_rows(&rows)
}

/// Gibbs sampler bound to one dataset and configuration.
#[derive(Debug, Clone)]
pub struct Sampler {
    data: ChainData,
    hp: Hyperparams,
    cfg: McmcConfig,
}

impl Sampler {
    pub fn new(d: &PopulationDataset, hp: &Hyperparams, cfg: &McmcConfig) -> Result<Self> {
        hp.validate()?;
        cfg.validate()?;
        Ok(Sampler {
            data: ChainData::new(d, hp.family)?,
            hp: hp.clone(),
            cfg: cfg.clone(),
        })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn config(&self) -> &McmcConfig {
        &self.cfg
    }

    pub fn n_graphs(&self) -> usize {
        self.data.n_graphs()
    }

    fn rng(&self, iteration: u64, step: Step, unit: u64) -> StreamRng {
        stream(self.cfg.seed, iteration, step, unit)
    }

    fn mixed(&self) -> bool {
        self.cfg.model_variant == ModelVariant::Mixed
    }

    /// Draw every variable from its prior.
    pub fn init_state(&self) -> Result<SamplerState> {
        let h = self.hp.n_clusters;
        let r = self.hp.latent_dim;
        let keys = identity_keys(h);
        let positions: Vec<LatentPositions> = (0..h)
            .map(|k| prior_positions(&mut self.rng(0, Step::Init, k as u64), self.data.n_nodes, r))
            .collect();
        let params = ClusterParams::new(positions, self.hp.link)?;
        let assignments = (0..self.data.n_graphs())
            .map(|g| self.rng(0, Step::Init, INIT_ASSIGN + g as u64).random_range(0..h))
            .collect();
        let prior = vec![self.hp.alpha; h];
        let test_indicator = self.rng(0, Step::Init, INIT_INDICATOR).random::<f64>() < self.hp.prior_h1;
        let mut population_mixing: Vec<Vec<f64>> = (0..2)
            .map(|y| sample_dirichlet(&prior, &keys, &mut self.rng(0, Step::Init, INIT_BETA + y)))
            .collect();
        if !test_indicator {
            population_mixing[1] = population_mixing[0].clone();
        }
        let entity_mixing = if self.mixed() {
            (0..self.data.entity_ids.len())
                .map(|n| {
                    let conc: Vec<f64> = population_mixing[self.data.entity_pop[n]]
                        .iter()
                        .map(|b| self.hp.concentration_scale * b)
                        .collect();
                    sample_dirichlet(&conc, &keys, &mut self.rng(0, Step::Init, INIT_PI + n as u64))
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(SamplerState {
            assignments,
            entity_mixing,
            population_mixing,
            test_indicator,
            params,
            iteration: 0,
            cluster_keys: keys,
            step_sizes: vec![vec![INITIAL_STEP; self.data.n_nodes]; h],
            conditional_p_h1: self.hp.prior_h1,
            mh_accepted: 0,
            mh_proposed: 0,
        })
    }

    /// Assemble a state from given parts; caches are rebuilt.
    pub fn state_from_parts(
        &self,
        positions: Vec<LatentPositions>,
        assignments: Vec<usize>,
        population_mixing: Vec<Vec<f64>>,
        entity_mixing: Vec<Vec<f64>>,
        test_indicator: bool,
    ) -> Result<SamplerState> {
        let h = self.hp.n_clusters;
        let state = SamplerState {
            assignments,
            entity_mixing,
            population_mixing,
            test_indicator,
            params: ClusterParams::new(positions, self.hp.link)?,
            iteration: 0,
            cluster_keys: identity_keys(h),
            step_sizes: vec![vec![INITIAL_STEP; self.data.n_nodes]; h],
            conditional_p_h1: self.hp.prior_h1,
            mh_accepted: 0,
            mh_proposed: 0,
        };
        self.check_invariants(&state)?;
        Ok(state)
    }

    /// Verify simplex, range and equality invariants of a state.
    pub fn check_invariants(&self, s: &SamplerState) -> Result<()> {
        let h = self.hp.n_clusters;
        let bad = |m: String| Err(Error::Numerical(m));
        if s.params.n_clusters() != h || s.cluster_keys.len() != h {
            return bad("cluster count mismatch".into());
        }
        if s.assignments.len() != self.data.n_graphs() || s.assignments.iter().any(|&c| c >= h) {
            return bad("assignment out of range".into());
        }
        let simplex = |v: &[f64]| v.len() == h && v.iter().all(|&x| x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
        if s.population_mixing.len() != 2 || !s.population_mixing.iter().all(|b| simplex(b)) {
            return bad("population weights off the simplex".into());
        }
        if self.mixed() {
            if s.entity_mixing.len() != self.data.entity_ids.len() || !s.entity_mixing.iter().all(|p| simplex(p)) {
                return bad("entity weights off the simplex".into());
            }
        }
        if !s.test_indicator && s.population_mixing[0] != s.population_mixing[1] {
            return bad("shared population weights differ under the null".into());
        }
        Ok(())
    }

    /// Unnormalized log allocation weights of graph `g`.
    pub fn allocation_log_weights(&self, s: &SamplerState, g: usize) -> Vec<f64> {
        let prior = if self.mixed() {
            &s.entity_mixing[self.data.graph_entity[g]]
        } else {
            &s.population_mixing[self.data.graph_pop[g]]
        };
        let entries = &self.data.entries[g];
        (0..self.hp.n_clusters)
            .map(|h| {
                let lt = s.params.ln_theta(h);
                let ll = match self.data.family {
                    Family::Binomial => {
                        let l1 = s.params.ln_1m_theta(h);
                        entries
                            .iter()
                            .map(|e| {
                                let i = e.edge as usize;
                                e.weight as f64 * lt[i] + (e.trials - e.weight) as f64 * l1[i]
                            })
                            .sum::<f64>()
                    }
                    Family::Poisson => {
                        entries.iter().map(|e| e.weight as f64 * lt[e.edge as usize]).sum::<f64>()
                            - s.params.theta_sum(h)
                    }
                };
                prior[h].ln() + ll
            })
            .collect()
    }

    pub fn allocation_probabilities(&self, s: &SamplerState, g: usize) -> Vec<f64> {
        crate::random::softmax(&self.allocation_log_weights(s, g))
    }

    fn key(&self, s: &SamplerState) -> u64 {
        s.iteration + 1
    }

    /// Step 1: redraw every graph's cluster.
    pub fn step_cluster_assignments(&self, s: &mut SamplerState) {
        let t = self.key(s);
        let state: &SamplerState = s;
        let new: Vec<usize> = (0..self.data.n_graphs())
            .into_par_iter()
            .map(|g| {
                let lw = self.allocation_log_weights(state, g);
                assert!(lw.iter().any(|w| w.is_finite()), "all-zero allocation row for graph {g}");
                sample_categorical_log(&lw, &state.cluster_keys, &mut self.rng(t, Step::Assign, g as u64))
            })
            .collect();
        s.assignments = new;
    }

    /// Per-entity cluster counts `[entity][cluster]`.
    pub fn entity_counts(&self, s: &SamplerState) -> Vec<Vec<u64>> {
        let mut m = vec![vec![0u64; self.hp.n_clusters]; self.data.entity_ids.len()];
        for (g, &c) in s.assignments.iter().enumerate() {
            m[self.data.graph_entity[g]][c] += 1;
        }
        m
    }

    /// Per-population cluster counts `[population][cluster]`.
    pub fn cluster_counts(&self, s: &SamplerState) -> Vec<Vec<u64>> {
        let mut m = vec![vec![0u64; self.hp.n_clusters]; 2];
        for (g, &c) in s.assignments.iter().enumerate() {
            m[self.data.graph_pop[g]][c] += 1;
        }
        m
    }

    /// Step 2 (mixed variant): redraw entity weights.
    pub fn step_entity_mixing(&self, s: &mut SamplerState) {
        if !self.mixed() {
            return;
        }
        let t = self.key(s);
        let counts = self.entity_counts(s);
        let scale = self.hp.concentration_scale;
        let state: &SamplerState = s;
        let new: Vec<Vec<f64>> = (0..self.data.entity_ids.len())
            .into_par_iter()
            .map(|n| {
                let beta = &state.population_mixing[self.data.entity_pop[n]];
                let conc: Vec<f64> = beta.iter().zip(&counts[n]).map(|(&b, &m)| scale * b + m as f64).collect();
                sample_dirichlet(&conc, &state.cluster_keys, &mut self.rng(t, Step::EntityMix, n as u64))
            })
            .collect();
        s.entity_mixing = new;
    }

    /// Step 3: redraw latent positions of every cluster.
    pub fn step_latent_positions(&self, s: &mut SamplerState) -> Result<()> {
        let t = self.key(s);
        let h = self.hp.n_clusters;
        let l = self.data.n_edges;
        // Per-cluster sufficient statistics: total trials (or weight) and
        // centred weight per edge, plus graph counts.
        let mut totals = vec![vec![0u64; l]; h];
        let mut centred = vec![vec![0.0f64; l]; h];
        let mut n_graphs = vec![0u64; h];
        for (g, &c) in s.assignments.iter().enumerate() {
            n_graphs[c] += 1;
            for e in &self.data.entries[g] {
                let i = e.edge as usize;
                match self.data.family {
                    Family::Binomial => {
                        totals[c][i] += e.trials;
                        centred[c][i] += e.weight as f64 - 0.5 * e.trials as f64;
                    }
                    Family::Poisson => totals[c][i] += e.weight,
                }
            }
        }
        let adapt = t <= self.cfg.burn_in;
        let state: &SamplerState = s;
        let updates: Vec<Result<(LatentPositions, Vec<f64>, u64, u64)>> = (0..h)
            .into_par_iter()
            .map(|c| {
                let mut rng = self.rng(t, Step::Positions, state.cluster_keys[c]);
                let x = state.params.positions(c);
                if n_graphs[c] == 0 {
                    let fresh = prior_positions(&mut rng, x.n_nodes(), x.dim());
                    return Ok((fresh, state.step_sizes[c].clone(), 0, 0));
                }
                match self.data.family {
                    Family::Binomial => {
                        pg_update(x, &totals[c], &centred[c], &mut rng).map_err(|v| {
                            Error::Numerical(format!("non-positive-definite precision in cluster {}, node {v}", c + 1))
                        })
                        .map(|x| (x, state.step_sizes[c].clone(), 0, 0))
                    }
                    Family::Poisson => {
                        let mut steps = state.step_sizes[c].clone();
                        let (x, acc, prop) =
                            mh_update(x, &totals[c], n_graphs[c] as f64, &mut steps, adapt, t, &mut rng);
                        Ok((x, steps, acc, prop))
                    }
                }
            })
            .collect();
        for (c, u) in updates.into_iter().enumerate() {
            let (x, steps, acc, prop) = u?;
            s.params.set_positions(c, x)?;
            s.step_sizes[c] = steps;
            if !adapt {
                s.mh_accepted += acc;
                s.mh_proposed += prop;
            }
        }
        Ok(())
    }

    /// Step 4: redraw the test indicator from its collapsed conditional.
    pub fn step_test_indicator(&self, s: &mut SamplerState) -> Result<()> {
        let t = self.key(s);
        let m = self.cluster_counts(s);
        let alpha = vec![self.hp.alpha; self.hp.n_clusters];
        let p = posterior_prob_h1_with_prior(&m[0], &m[1], &alpha, self.hp.prior_h1)?;
        s.conditional_p_h1 = p;
        s.test_indicator = self.rng(t, Step::Indicator, 0).random::<f64>() < p;
        Ok(())
    }

    /// Step 5: redraw population weights given the indicator.
    pub fn step_population_mixing(&self, s: &mut SamplerState) {
        let t = self.key(s);
        let m = self.cluster_counts(s);
        let a = self.hp.alpha;
        if s.test_indicator {
            for y in 0..2 {
                let conc: Vec<f64> = m[y].iter().map(|&c| a + c as f64).collect();
                s.population_mixing[y] =
                    sample_dirichlet(&conc, &s.cluster_keys, &mut self.rng(t, Step::PopulationMix, y as u64));
            }
        } else {
            let conc: Vec<f64> = m[0].iter().zip(&m[1]).map(|(&x, &y)| a + (x + y) as f64).collect();
            let shared = sample_dirichlet(&conc, &s.cluster_keys, &mut self.rng(t, Step::PopulationMix, 2));
            s.population_mixing = vec![shared.clone(), shared];
        }
    }

    /// One full sweep; returns the seconds spent in each step.
    pub fn sweep(&self, s: &mut SamplerState) -> Result<[f64; 5]> {
        let mut secs = [0.0; 5];
        let mut clock = Instant::now();
        let mut lap = |k: usize| {
            secs[k] += clock.elapsed().as_secs_f64();
            clock = Instant::now();
        };
        self.step_cluster_assignments(s);
        lap(0);
        self.step_entity_mixing(s);
        lap(1);
        self.step_latent_positions(s)?;
        lap(2);
        self.step_test_indicator(s)?;
        lap(3);
        self.step_population_mixing(s);
        lap(4);
        s.iteration += 1;
        Ok(secs)
    }

    /// Population-averaged edge parameters `[population][edge]`.
    pub fn theta_bar(&self, s: &SamplerState) -> Vec<Vec<f64>> {
        s.population_mixing
            .iter()
            .map(|beta| {
                let mut out = vec![0.0; self.data.n_edges];
                for (h, &b) in beta.iter().enumerate() {
                    for (o, &th) in out.iter_mut().zip(s.params.theta(h).values()) {
                        *o += b * th;
                    }
                }
                out
            })
            .collect()
    }

    fn record(&self, s: &SamplerState, sweep: u64) -> TraceRecord {
        let snapshot = (sweep - self.cfg.burn_in) % self.cfg.thin == 0;
        TraceRecord {
            iteration: sweep,
            test_indicator: s.test_indicator,
            cluster_counts: self.cluster_counts(s),
            beta: s.population_mixing.clone(),
            entity_counts: self.entity_counts(s),
            theta_bar: snapshot.then(|| self.theta_bar(s)),
        }
    }

    fn meta(&self) -> TraceMeta {
        TraceMeta {
            hyperparams: self.hp.clone(),
            mcmc: self.cfg.clone(),
            n_nodes: self.data.n_nodes,
            n_graphs: self.data.n_graphs(),
            entity_ids: self.data.entity_ids.clone(),
            entity_populations: self.data.entity_pop.iter().map(|&y| y as u8 + 1).collect(),
            entity_graph_counts: self.data.entity_graphs.clone(),
            edge_trials_mean: self.data.edge_trials_mean.clone(),
            edge_trials_median: self.data.edge_trials_median.clone(),
            complete: false,
            error: None,
            diagnostics: ChainDiagnostics::default(),
            timings: Timings::default(),
        }
    }

    /// Run the configured number of sweeps from a prior draw.
    pub fn run(&self) -> Result<Trace> {
        let state = self.init_state()?;
        self.run_from(state)
    }

    /// Run the configured number of sweeps from a given state.
    pub fn run_from(&self, mut state: SamplerState) -> Result<Trace> {
        let start = Instant::now();
        let mut trace = Trace {
            meta: self.meta(),
            records: Vec::new(),
        };
        let mut conditional = Vec::new();
        for sweep in 0..self.cfg.n_samples {
            match self.sweep(&mut state) {
                Ok(secs) => {
                    for (acc, s) in trace.meta.timings.step_secs.iter_mut().zip(secs) {
                        *acc += s;
                    }
                }
                Err(e) => {
                    trace.meta.error = Some(e.to_string());
                    trace.meta.timings.total_secs = start.elapsed().as_secs_f64();
                    return Err(Error::ChainAborted {
                        iteration: sweep,
                        source: Box::new(e),
                        trace: Box::new(trace),
                    });
                }
            }
            if sweep >= self.cfg.burn_in {
                trace.records.push(self.record(&state, sweep));
                conditional.push(state.conditional_p_h1);
            }
        }
        let indicator: Vec<f64> = trace.records.iter().map(|r| r.test_indicator as u8 as f64).collect();
        trace.meta.diagnostics = ChainDiagnostics {
            ess_test_indicator: effective_sample_size(&indicator),
            ess_conditional_p_h1: effective_sample_size(&conditional),
            mh_acceptance: (state.mh_proposed > 0).then(|| state.mh_accepted as f64 / state.mh_proposed as f64),
        };
        trace.meta.complete = true;
        trace.meta.timings.total_secs = start.elapsed().as_secs_f64();
        Ok(trace)
    }
}

/// Gaussian row updates given Polya-Gamma draws, one per edge.
///
/// `totals[l]` is the summed trial count and `centred[l]` the summed
/// `a - n/2` over the cluster's graphs. Fails with the node index whose
/// precision matrix is not positive definite.
fn pg_update(x: &LatentPositions, totals: &[u64], centred: &[f64], rng: &mut StreamRng) -> std::result::Result<LatentPositions, usize> {
    let v = x.n_nodes();
    let r = x.dim();
    let mut x = x.clone();
    let omega: Vec<f64> = totals
        .iter()
        .enumerate()
        .map(|(l, &n)| {
            if n == 0 {
                0.0
            } else {
                let (i, j) = edge_nodes(l);
                sample_polya_gamma(n, x.dot(i, j), rng)
            }
        })
        .collect();
    for node in 0..v {
        let mut prec = DMatrix::<f64>::identity(r, r);
        let mut rhs = DVector::<f64>::zeros(r);
        for u in 0..v {
            if u == node {
                continue;
            }
            let l = if u > node { edge_index(u, node) } else { edge_index(node, u) };
            if totals[l] == 0 {
                continue;
            }
            let xu = x.row(u);
            for a in 0..r {
                rhs[a] += centred[l] * xu[a];
                for b in 0..r {
                    prec[(a, b)] += omega[l] * xu[a] * xu[b];
                }
            }
        }
        let chol = prec.cholesky().ok_or(node)?;
        let mean = chol.solve(&rhs);
        let z = DVector::<f64>::from_iterator(r, (0..r).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let noise = chol.l().transpose().solve_upper_triangular(&z).ok_or(node)?;
        let row = x.row_mut(node);
        for a in 0..r {
            row[a] = mean[a] + noise[a];
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(node);
        }
    }
    Ok(x)
}

/// Random-walk Metropolis row updates for Poisson weights.
///
/// `totals[l]` is the summed weight of edge `l` and `n_graphs` the number of
/// graphs in the cluster. Returns the new positions and the accept and
/// proposal counts.
fn mh_update(
    x: &LatentPositions,
    totals: &[u64],
    n_graphs: f64,
    steps: &mut [f64],
    adapt: bool,
    t: u64,
    rng: &mut StreamRng,
) -> (LatentPositions, u64, u64) {
    let v = x.n_nodes();
    let mut x = x.clone();
    let mut accepted = 0;
    let row_ll = |x: &LatentPositions, node: usize, row: &[f64]| -> f64 {
        let mut ll = -0.5 * row.iter().map(|a| a * a).sum::<f64>();
        for u in 0..v {
            if u == node {
                continue;
            }
            let l = if u > node { edge_index(u, node) } else { edge_index(node, u) };
            let psi = crate::model::dot(row, x.row(u));
            if psi > 700.0 {
                return f64::NEG_INFINITY;
            }
            ll += totals[l] as f64 * psi - n_graphs * psi.exp();
        }
        ll
    };
    let gain = 1.0 / (t as f64).powf(0.6);
    for node in 0..v {
        let current: Vec<f64> = x.row(node).to_vec();
        let proposal: Vec<f64> = current
            .iter()
            .map(|c| c + steps[node] * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let log_ratio = row_ll(&x, node, &proposal) - row_ll(&x, node, &current);
        let u: f64 = rng.random();
        let accept = u.ln() < log_ratio;
        if accept {
            x.row_mut(node).copy_from_slice(&proposal);
            accepted += 1;
        }
        if adapt {
            let a = if accept { 1.0 } else { 0.0 };
            steps[node] = (steps[node].ln() + gain * (a - TARGET_ACCEPTANCE)).exp().clamp(1e-6, 10.0);
        }
    }
    (x, accepted, v as u64)
}

/// Draw the initial state for a dataset.
pub fn init_state(d: &PopulationDataset, hp: &Hyperparams, cfg: &McmcConfig) -> Result<SamplerState> {
    Sampler::new(d, hp, cfg)?.init_state()
}

/// Run a chain and return its post-burn-in trace.
///
/// On failure the error is [`Error::ChainAborted`] carrying the partial
/// trace, marked incomplete.
pub fn run_chain(d: &PopulationDataset, hp: &Hyperparams, cfg: &McmcConfig) -> Result<Trace> {
    Sampler::new(d, hp, cfg)?.run()
}
