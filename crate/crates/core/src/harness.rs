//! Experiment orchestration: power curves and threshold sweeps.

use std::collections::BTreeSet;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentPlan, Method, Scenario};
use crate::dataset_io::{load_dataset, write_file};
use crate::error::{Error, Result};
use crate::graph::{binarize_threshold, PopulationDataset};
use crate::hypothesis::{population_test, DEFAULT_THRESHOLD};
use crate::model::{Family, Hyperparams};
use crate::rng::{derive_seed, stream, Step};
use crate::sampler::{run_chain, McmcConfig, ModelVariant};
use crate::synth::{generate, SimulationSpec};

/// Transform a dataset for a method and fit it; returns `P(H1 | data)`.
pub fn fit_method(d: &PopulationDataset, method: Method, hp: &Hyperparams, mcmc: &McmcConfig) -> Result<f64> {
    let mut hp = hp.clone();
    let mut mcmc = mcmc.clone();
    let data;
    let d = match method {
        Method::NcFixed => {
            mcmc.model_variant = ModelVariant::Fixed;
            d
        }
        Method::NcMixed => {
            mcmc.model_variant = ModelVariant::Mixed;
            d
        }
        Method::DdThreshold(level) => {
            mcmc.model_variant = ModelVariant::Fixed;
            hp.family = Family::Binomial;
            hp.link = Family::Binomial.link();
            data = binarize_threshold(d, level)?;
            &data
        }
    };
    let trace = run_chain(d, &hp, &mcmc)?;
    Ok(population_test(&trace, DEFAULT_THRESHOLD)?.p_h1)
}

/// Outcome of one (sample size, trial) pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub sample_size: usize,
    pub trial: usize,
    /// `None` when the trial failed.
    pub p_h1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub sample_size: usize,
    pub n_trials: usize,
    pub mean_p_h1: f64,
    pub percentile_05: f64,
    pub percentile_95: f64,
    pub rejection_rate: f64,
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Aggregate completed trials per sample size.
pub fn aggregate(rows: &[TrialRow], threshold: f64) -> Vec<CurvePoint> {
    let sizes: BTreeSet<usize> = rows.iter().map(|r| r.sample_size).collect();
    sizes
        .into_iter()
        .filter_map(|n| {
            let mut v: Vec<f64> = rows.iter().filter(|r| r.sample_size == n).filter_map(|r| r.p_h1).collect();
            if v.is_empty() {
                return None;
            }
            v.sort_by(f64::total_cmp);
            let k = v.len() as f64;
            Some(CurvePoint {
                sample_size: n,
                n_trials: v.len(),
                mean_p_h1: v.iter().sum::<f64>() / k,
                percentile_05: percentile(&v, 0.05),
                percentile_95: percentile(&v, 0.95),
                rejection_rate: v.iter().filter(|&&p| p > threshold).count() as f64 / k,
            })
        })
        .collect()
}

/// Null version of a simulation: both populations use population 1's structures.
fn null_spec(spec: &SimulationSpec) -> SimulationSpec {
    let mut s = spec.clone();
    s.populations[1] = s.populations[0].clone();
    s
}

/// Draw `n` entities per population; under the null, labels are permuted first.
fn resample(d: &PopulationDataset, n: usize, scenario: Scenario, seed: u64) -> Result<PopulationDataset> {
    let mut rng = stream(seed, 0, Step::Harness, 0);
    let mut ids: Vec<i64> = d.entities();
    let mut labels = d.labels().clone();
    if scenario == Scenario::H1False {
        let mut pops: Vec<u8> = ids.iter().map(|e| labels[e]).collect();
        pops.shuffle(&mut rng);
        for (e, y) in ids.iter().zip(pops) {
            labels.insert(*e, y);
        }
    }
    ids.shuffle(&mut rng);
    let mut keep = BTreeSet::new();
    for y in [1u8, 2] {
        let chosen: Vec<i64> = ids.iter().copied().filter(|e| labels[e] == y).take(n).collect();
        if chosen.len() < n {
            return Err(Error::InvalidArgument(format!(
                "population {y} has {} entities, fewer than the sample size {n}",
                chosen.len()
            )));
        }
        keep.extend(chosen);
    }
    let relabeled = PopulationDataset::new(d.vocabulary().clone(), d.graphs().to_vec(), labels)?;
    relabeled.subset(&keep)
}

/// Run every (sample size, trial) pipeline of a plan.
pub fn run_power_trials(plan: &ExperimentPlan, hp: &Hyperparams, mcmc: &McmcConfig) -> Result<Vec<TrialRow>> {
    plan.validate()?;
    let source = match &plan.source {
        DataSource::Path(p) => Some(load_dataset(p)?),
        DataSource::Synthetic(_) => None,
    };
    let jobs: Vec<(usize, usize)> = plan
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..plan.trials_per_size).map(move |t| (n, t)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(n, t)| {
            let trial_seed = derive_seed(derive_seed(plan.seed, n as u64), t as u64);
            let result = (|| -> Result<f64> {
                let data = match (&plan.source, &source) {
                    (DataSource::Synthetic(spec), _) => {
                        let spec = match plan.scenario {
                            Scenario::H1True => spec.with_entities(n),
                            Scenario::H1False => null_spec(spec).with_entities(n),
                        };
                        generate(&spec, derive_seed(trial_seed, 1))?
                    }
                    (DataSource::Path(_), Some(d)) => resample(d, n, plan.scenario, derive_seed(trial_seed, 1))?,
                    (DataSource::Path(_), None) => unreachable!("dataset loaded above"),
                };
                let mut cfg = mcmc.clone();
                cfg.seed = derive_seed(trial_seed, 2);
                fit_method(&data, plan.method, hp, &cfg)
            })();
            match result {
                Ok(p) => {
                    info!("size {n} trial {t}: P(H1) = {p}");
                    TrialRow { sample_size: n, trial: t, p_h1: Some(p) }
                }
                Err(e) => {
                    warn!("size {n} trial {t} failed: {e}");
                    TrialRow { sample_size: n, trial: t, p_h1: None }
                }
            }
        })
        .collect::<Vec<_>>();
    let failed = rows.iter().filter(|r| r.p_h1.is_none()).count();
    if failed > 0 {
        warn!("{failed} of {} trials failed; aggregates use completed trials only", rows.len());
    }
    Ok(rows)
}

pub fn write_trial_rows(rows: &[TrialRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("sample_size,trial,p_h1\n");
    for r in rows {
        let p = r.p_h1.map(|p| p.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{p}\n", r.sample_size, r.trial));
    }
    write_file(path, out)
}

pub fn read_trial_rows(path: impl AsRef<Path>) -> Result<Vec<TrialRow>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || Error::Parse {
            file: path.display().to_string(),
            line: rows.len() + 2,
            msg: "malformed trial row".into(),
        };
        let p = rec.get(2).ok_or_else(bad)?;
        rows.push(TrialRow {
            sample_size: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
            trial: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
            p_h1: if p.is_empty() { None } else { Some(p.parse().map_err(|_| bad())?) },
        });
    }
    Ok(rows)
}

pub fn write_curve(points: &[CurvePoint], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("sample_size,n_trials,mean_p_h1,percentile_05,percentile_95,rejection_rate\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.sample_size, p.n_trials, p.mean_p_h1, p.percentile_05, p.percentile_95, p.rejection_rate
        ));
    }
    write_file(path, out)
}

/// Run a plan and write `power_curve.csv` and `power_curve_summary.csv`.
pub fn run_power_curve(
    plan: &ExperimentPlan,
    hp: &Hyperparams,
    mcmc: &McmcConfig,
    threshold: f64,
    out: impl AsRef<Path>,
) -> Result<Vec<CurvePoint>> {
    let out = out.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let rows = run_power_trials(plan, hp, mcmc)?;
    let points = aggregate(&rows, threshold);
    write_trial_rows(&rows, out.join("power_curve.csv"))?;
    write_curve(&points, out.join("power_curve_summary.csv"))?;
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub level: f64,
    pub p_h1: f64,
    pub method: &'static str,
}

/// `P(H1 | data)` of the thresholded pipeline at each level, plus both count
/// models on the raw data repeated at every level as reference lines.
pub fn run_threshold_sweep(
    d: &PopulationDataset,
    levels: &[f64],
    references: bool,
    hp: &Hyperparams,
    mcmc: &McmcConfig,
) -> Result<Vec<SweepRow>> {
    if !d.has_node_counts() {
        return Err(Error::Dataset("threshold sweep needs node_counts".into()));
    }
    let dd: Vec<Result<f64>> = levels
        .par_iter()
        .map(|&level| fit_method(d, Method::DdThreshold(level), hp, mcmc))
        .collect();
    let mut rows = Vec::new();
    for (&level, p) in levels.iter().zip(dd) {
        rows.push(SweepRow { level, p_h1: p?, method: "dd_threshold" });
    }
    if references {
        for method in [Method::NcFixed, Method::NcMixed] {
            let p = fit_method(d, method, hp, mcmc)?;
            for &level in levels {
                rows.push(SweepRow { level, p_h1: p, method: method.name() });
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("level,p_h1,method\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.level, r.p_h1, r.method));
    }
    write_file(path, out)
}
