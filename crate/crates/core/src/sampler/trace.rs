//! Chain traces and their on-disk form.
//!
//! A trace directory holds `trace.csv`, `beta.csv`, `entity_counts.csv`,
//! `theta_bar.csv` and `trace_meta.json`. Populations and clusters are
//! 1-based in files; edges are 0-based.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::McmcConfig;
use crate::dataset_io::write_file;
use crate::error::{Error, Result};
use crate::model::Hyperparams;

/// State summary after one post-burn-in sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: u64,
    pub test_indicator: bool,
    /// `[population][cluster]` graph counts.
    pub cluster_counts: Vec<Vec<u64>>,
    /// `[population][cluster]` mixing weights.
    pub beta: Vec<Vec<f64>>,
    /// `[entity][cluster]` graph counts, entities in `TraceMeta::entity_ids` order.
    pub entity_counts: Vec<Vec<u64>>,
    /// `[population][edge]` population-averaged edge parameters.
    pub theta_bar: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_secs: f64,
    /// Cumulative seconds in steps 1 to 5.
    pub step_secs: [f64; 5],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub ess_test_indicator: f64,
    pub ess_conditional_p_h1: f64,
    /// Post-burn-in Metropolis acceptance rate (Poisson family only).
    pub mh_acceptance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub hyperparams: Hyperparams,
    pub mcmc: McmcConfig,
    pub n_nodes: usize,
    pub n_graphs: usize,
    pub entity_ids: Vec<i64>,
    pub entity_populations: Vec<u8>,
    pub entity_graph_counts: Vec<usize>,
    /// Per-edge rounded mean of positive trials (binomial family).
    pub edge_trials_mean: Option<Vec<u64>>,
    /// Per-edge median of positive trials (binomial family).
    pub edge_trials_median: Option<Vec<u64>>,
    pub complete: bool,
    pub error: Option<String>,
    pub diagnostics: ChainDiagnostics,
    pub timings: Timings,
}

impl TraceMeta {
    /// Number of entities in each population.
    pub fn population_sizes(&self) -> Vec<usize> {
        let g = self.entity_populations.iter().copied().max().unwrap_or(0) as usize;
        let mut sizes = vec![0; g];
        for &y in &self.entity_populations {
            sizes[y as usize - 1] += 1;
        }
        sizes
    }

    pub fn entity_position(&self, id: i64) -> Option<usize> {
        self.entity_ids.iter().position(|&e| e == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn is_complete(&self) -> bool {
        self.meta.complete
    }

    pub fn n_clusters(&self) -> usize {
        self.meta.hyperparams.n_clusters
    }

    /// Records carrying edge-parameter snapshots.
    pub fn snapshots(&self) -> impl Iterator<Item = (u64, &Vec<Vec<f64>>)> {
        self.records
            .iter()
            .filter_map(|r| r.theta_bar.as_ref().map(|t| (r.iteration, t)))
    }
}

const TRACE_HEADER: &str = "iteration,test_indicator,pop,cluster,count";
const BETA_HEADER: &str = "iteration,pop,cluster,value";
const ENTITY_HEADER: &str = "iteration,entity_id,cluster,count";
const THETA_HEADER: &str = "iteration,pop,edge_index,value";

/// Write a trace directory.
pub fn write_trace(trace: &Trace, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut counts = format!("{TRACE_HEADER}\n");
    let mut beta = format!("{BETA_HEADER}\n");
    let mut entities = format!("{ENTITY_HEADER}\n");
    let mut theta = format!("{THETA_HEADER}\n");
    for r in &trace.records {
        let t = r.test_indicator as u8;
        for (y, row) in r.cluster_counts.iter().enumerate() {
            for (h, c) in row.iter().enumerate() {
                let _ = writeln!(counts, "{},{t},{},{},{c}", r.iteration, y + 1, h + 1);
            }
        }
        for (y, row) in r.beta.iter().enumerate() {
            for (h, b) in row.iter().enumerate() {
                let _ = writeln!(beta, "{},{},{},{b}", r.iteration, y + 1, h + 1);
            }
        }
        for (n, row) in r.entity_counts.iter().enumerate() {
            let id = trace.meta.entity_ids[n];
            for (h, &c) in row.iter().enumerate() {
                if c > 0 {
                    let _ = writeln!(entities, "{},{id},{},{c}", r.iteration, h + 1);
                }
            }
        }
        if let Some(tb) = &r.theta_bar {
            for (y, row) in tb.iter().enumerate() {
                for (l, v) in row.iter().enumerate() {
                    let _ = writeln!(theta, "{},{},{l},{v}", r.iteration, y + 1);
                }
            }
        }
    }
    write_file(dir.join("trace.csv"), counts)?;
    write_file(dir.join("beta.csv"), beta)?;
    write_file(dir.join("entity_counts.csv"), entities)?;
    write_file(dir.join("theta_bar.csv"), theta)?;
    let meta = serde_json::to_string_pretty(&trace.meta)?;
    write_file(dir.join("trace_meta.json"), meta + "\n")?;
    Ok(())
}

fn read_rows(path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => {
            return Err(Error::Parse {
                file: name,
                line: 1,
                msg: format!("expected header {header:?}"),
            })
        }
    }
    let width = header.split(',').count();
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if fields.len() != width {
            return Err(Error::Parse {
                file: name,
                line: i + 1,
                msg: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        out.push((i + 1, fields));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        file: path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        line,
        msg: format!("cannot parse {s:?}"),
    })
}

/// Read a trace directory written by [`write_trace`].
pub fn read_trace(dir: impl AsRef<Path>) -> Result<Trace> {
    let dir = dir.as_ref();
    let meta_path = dir.join("trace_meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: TraceMeta = serde_json::from_str(&meta_text)?;
    let g = meta.population_sizes().len();
    let h = meta.hyperparams.n_clusters;
    let n_entities = meta.entity_ids.len();
    let ids: BTreeMap<i64, usize> = meta.entity_ids.iter().enumerate().map(|(n, &e)| (e, n)).collect();

    let mut records: BTreeMap<u64, TraceRecord> = BTreeMap::new();
    let bad = |path: &Path, line: usize, msg: &str| Error::Parse {
        file: path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        line,
        msg: msg.to_string(),
    };
    let index = |path: &Path, line: usize, v: usize, max: usize| -> Result<usize> {
        if v == 0 || v > max {
            Err(bad(path, line, &format!("index {v} outside 1..={max}")))
        } else {
            Ok(v - 1)
        }
    };

    let p = dir.join("trace.csv");
    for (line, f) in read_rows(&p, TRACE_HEADER)? {
        let it: u64 = field(&p, line, &f[0])?;
        let t: u8 = field(&p, line, &f[1])?;
        let y = index(&p, line, field(&p, line, &f[2])?, g)?;
        let c = index(&p, line, field(&p, line, &f[3])?, h)?;
        let count: u64 = field(&p, line, &f[4])?;
        let r = records.entry(it).or_insert_with(|| TraceRecord {
            iteration: it,
            test_indicator: t == 1,
            cluster_counts: vec![vec![0; h]; g],
            beta: vec![vec![0.0; h]; g],
            entity_counts: vec![vec![0; h]; n_entities],
            theta_bar: None,
        });
        r.cluster_counts[y][c] = count;
    }
    let p = dir.join("beta.csv");
    for (line, f) in read_rows(&p, BETA_HEADER)? {
        let it: u64 = field(&p, line, &f[0])?;
        let y = index(&p, line, field(&p, line, &f[1])?, g)?;
        let c = index(&p, line, field(&p, line, &f[2])?, h)?;
        let r = records.get_mut(&it).ok_or_else(|| bad(&p, line, "iteration missing from trace.csv"))?;
        r.beta[y][c] = field(&p, line, &f[3])?;
    }
    let p = dir.join("entity_counts.csv");
    for (line, f) in read_rows(&p, ENTITY_HEADER)? {
        let it: u64 = field(&p, line, &f[0])?;
        let id: i64 = field(&p, line, &f[1])?;
        let n = *ids.get(&id).ok_or_else(|| bad(&p, line, "unknown entity"))?;
        let c = index(&p, line, field(&p, line, &f[2])?, h)?;
        let r = records.get_mut(&it).ok_or_else(|| bad(&p, line, "iteration missing from trace.csv"))?;
        r.entity_counts[n][c] = field(&p, line, &f[3])?;
    }
    let p = dir.join("theta_bar.csv");
    let n_edges = meta.n_nodes * meta.n_nodes.saturating_sub(1) / 2;
    for (line, f) in read_rows(&p, THETA_HEADER)? {
        let it: u64 = field(&p, line, &f[0])?;
        let y = index(&p, line, field(&p, line, &f[1])?, g)?;
        let l: usize = field(&p, line, &f[2])?;
        if l >= n_edges {
            return Err(bad(&p, line, "edge index out of range"));
        }
        let r = records.get_mut(&it).ok_or_else(|| bad(&p, line, "iteration missing from trace.csv"))?;
        let tb = r.theta_bar.get_or_insert_with(|| vec![vec![0.0; n_edges]; g]);
        tb[y][l] = field(&p, line, &f[3])?;
    }
    Ok(Trace {
        meta,
        records: records.into_values().collect(),
    })
}
