//! Dataset representation: node vocabulary, count-weighted graph
//! observations, populations, and the lower-triangle edge vectorization.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::error::{Error, Result};

/// Number of undirected edges on `v` nodes.
pub fn n_edges(v: usize) -> usize {
    v * (v.saturating_sub(1)) / 2
}

/// Index of edge `(i, j)` with `i > j` in the lower-triangle ordering
/// `(1,0), (2,0), (2,1), (3,0), ...`.
#[inline]
pub fn edge_index(i: usize, j: usize) -> usize {
    debug_assert!(i > j, "edge_index expects i > j, got ({i}, {j})");
    i * (i - 1) / 2 + j
}

/// Inverse of [`edge_index`].
pub fn edge_nodes(l: usize) -> (usize, usize) {
    // Largest i with i(i-1)/2 <= l.
    let mut i = ((1.0 + (1.0 + 8.0 * l as f64).sqrt()) / 2.0).floor() as usize;
    while i * (i - 1) / 2 > l {
        i -= 1;
    }
    while (i + 1) * i / 2 <= l {
        i += 1;
    }
    (i, l - i * (i - 1) / 2)
}

/// Canonical `(i, j)` pair for every edge index, in order.
pub fn edge_list(v: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n_edges(v));
    for i in 1..v {
        for j in 0..i {
            out.push((i, j));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeVocabulary {
    labels: Vec<String>,
}

impl NodeVocabulary {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Dataset(format!(
                "vocabulary needs at least 2 nodes, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::with_capacity(labels.len());
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::Dataset(format!("duplicate node label {l:?}")));
            }
        }
        Ok(NodeVocabulary { labels })
    }

    /// Vocabulary with labels `n0, n1, ...`.
    pub fn numbered(v: usize) -> Result<Self> {
        Self::new((0..v).map(|i| format!("n{i}")).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Values attached to the `V(V-1)/2` edges of a graph in lower-triangle order.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeVector<T> {
    values: Vec<T>,
}

impl<T: Copy + Default> EdgeVector<T> {
    pub fn zeros(v: usize) -> Self {
        EdgeVector {
            values: vec![T::default(); n_edges(v)],
        }
    }

    pub fn from_values(values: Vec<T>) -> Self {
        EdgeVector { values }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.values[edge_index(i, j)],
            std::cmp::Ordering::Less => self.values[edge_index(j, i)],
            std::cmp::Ordering::Equal => T::default(),
        }
    }

    pub fn set(&mut self, i: usize, j: usize, value: T) {
        let l = if i > j { edge_index(i, j) } else { edge_index(j, i) };
        self.values[l] = value;
    }
}

impl<T: Copy + Default + PartialEq + std::fmt::Debug> EdgeVector<T> {
    /// Lower triangle of a symmetric zero-diagonal matrix.
    pub fn from_matrix(m: &[Vec<T>]) -> Result<Self> {
        let v = m.len();
        let mut values = Vec::with_capacity(n_edges(v));
        for (i, row) in m.iter().enumerate() {
            if row.len() != v {
                return Err(Error::InvalidArgument(format!(
                    "matrix row {i} has length {}, expected {v}",
                    row.len()
                )));
            }
            if row[i] != T::default() {
                return Err(Error::InvalidArgument(format!(
                    "nonzero diagonal entry at ({i},{i})"
                )));
            }
        }
        for i in 1..v {
            for j in 0..i {
                if m[i][j] != m[j][i] {
                    return Err(Error::InvalidArgument(format!(
                        "matrix not symmetric at ({i},{j}): {:?} vs {:?}",
                        m[i][j], m[j][i]
                    )));
                }
                values.push(m[i][j]);
            }
        }
        Ok(EdgeVector { values })
    }

    /// Symmetric `v x v` matrix with zero diagonal.
    pub fn to_matrix(&self, v: usize) -> Vec<Vec<T>> {
        assert_eq!(self.values.len(), n_edges(v), "edge vector length mismatch");
        let mut m = vec![vec![T::default(); v]; v];
        for i in 1..v {
            for j in 0..i {
                let x = self.values[edge_index(i, j)];
                m[i][j] = x;
                m[j][i] = x;
            }
        }
        m
    }
}

/// One symmetric count-weighted graph belonging to an entity at a time index.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphObservation {
    pub entity_id: i64,
    pub time_index: u32,
    weights: EdgeVector<u64>,
    node_counts: Option<Vec<u64>>,
}

impl GraphObservation {
    pub fn new(
        entity_id: i64,
        time_index: u32,
        weights: EdgeVector<u64>,
        node_counts: Option<Vec<u64>>,
    ) -> Result<Self> {
        let l = weights.len();
        let v = nodes_for_edges(l).ok_or_else(|| {
            Error::Dataset(format!("edge vector length {l} is not V(V-1)/2 for any V"))
        })?;
        if let Some(counts) = &node_counts {
            if counts.len() != v {
                return Err(Error::Dataset(format!(
                    "entity {entity_id} time {time_index}: node_counts has length {}, expected {v}",
                    counts.len()
                )));
            }
            for (idx, &w) in weights.values().iter().enumerate() {
                let (i, j) = edge_nodes(idx);
                let bound = counts[i].min(counts[j]);
                if w > bound {
                    return Err(Error::Dataset(format!(
                        "entity {entity_id} time {time_index}: weight {w} on edge ({i},{j}) \
                         exceeds node-count bound {bound}"
                    )));
                }
            }
        }
        Ok(GraphObservation {
            entity_id,
            time_index,
            weights,
            node_counts,
        })
    }

    pub fn from_matrix(
        entity_id: i64,
        time_index: u32,
        weights: &[Vec<u64>],
        node_counts: Option<Vec<u64>>,
    ) -> Result<Self> {
        Self::new(entity_id, time_index, EdgeVector::from_matrix(weights)?, node_counts)
    }

    pub fn n_nodes(&self) -> usize {
        nodes_for_edges(self.weights.len()).unwrap_or(0)
    }

    pub fn weights(&self) -> &EdgeVector<u64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> u64 {
        self.weights.get(i, j)
    }

    pub fn node_counts(&self) -> Option<&[u64]> {
        self.node_counts.as_deref()
    }

    /// Binomial trials per edge, `min(node_counts[i], node_counts[j])`.
    pub fn trials(&self) -> Option<EdgeVector<u64>> {
        let counts = self.node_counts.as_ref()?;
        let v = counts.len();
        let mut out = Vec::with_capacity(n_edges(v));
        for i in 1..v {
            for j in 0..i {
                out.push(counts[i].min(counts[j]));
            }
        }
        Some(EdgeVector::from_values(out))
    }
}

fn nodes_for_edges(l: usize) -> Option<usize> {
    let v = ((1.0 + (1.0 + 8.0 * l as f64).sqrt()) / 2.0).round() as usize;
    (n_edges(v) == l).then_some(v)
}

/// Lower-triangle vector of a graph's weights.
pub fn vectorize(g: &GraphObservation) -> EdgeVector<u64> {
    g.weights.clone()
}

/// Symmetric matrix form of an edge vector.
pub fn devectorize<T: Copy + Default + PartialEq + std::fmt::Debug>(
    e: &EdgeVector<T>,
    v: usize,
) -> Vec<Vec<T>> {
    e.to_matrix(v)
}

/// Graphs of two (or more) populations over a shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationDataset {
    vocabulary: NodeVocabulary,
    graphs: Vec<GraphObservation>,
    labels: BTreeMap<i64, u8>,
    n_populations: u8,
}

impl PopulationDataset {
    /// Validates every dataset invariant. Graphs are sorted by `(entity_id, time_index)`.
    pub fn new(
        vocabulary: NodeVocabulary,
        mut graphs: Vec<GraphObservation>,
        labels: BTreeMap<i64, u8>,
    ) -> Result<Self> {
        let v = vocabulary.len();
        if graphs.is_empty() {
            return Err(Error::Dataset("dataset has no graphs".into()));
        }
        graphs.sort_by_key(|g| (g.entity_id, g.time_index));
        let mut keys = BTreeSet::new();
        for g in &graphs {
            if g.n_nodes() != v {
                return Err(Error::Dataset(format!(
                    "entity {} time {}: graph has {} nodes, vocabulary has {v}",
                    g.entity_id,
                    g.time_index,
                    g.n_nodes()
                )));
            }
            if !labels.contains_key(&g.entity_id) {
                return Err(Error::Dataset(format!("unlabeled entity {}", g.entity_id)));
            }
            if !keys.insert((g.entity_id, g.time_index)) {
                return Err(Error::Dataset(format!(
                    "entity {} has duplicate time index {}",
                    g.entity_id, g.time_index
                )));
            }
        }
        let with_graphs: BTreeSet<i64> = graphs.iter().map(|g| g.entity_id).collect();
        for (&e, &y) in &labels {
            if y == 0 {
                return Err(Error::Dataset(format!("entity {e}: populations are numbered from 1")));
            }
            if !with_graphs.contains(&e) {
                return Err(Error::Dataset(format!("entity {e} has no graphs")));
            }
        }
        let n_populations = labels.values().copied().max().unwrap_or(0);
        Ok(PopulationDataset {
            vocabulary,
            graphs,
            labels,
            n_populations,
        })
    }

    pub fn vocabulary(&self) -> &NodeVocabulary {
        &self.vocabulary
    }

    pub fn n_nodes(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn n_edges(&self) -> usize {
        n_edges(self.vocabulary.len())
    }

    pub fn graphs(&self) -> &[GraphObservation] {
        &self.graphs
    }

    pub fn labels(&self) -> &BTreeMap<i64, u8> {
        &self.labels
    }

    pub fn n_populations(&self) -> usize {
        self.n_populations as usize
    }

    /// Entity ids in ascending order.
    pub fn entities(&self) -> Vec<i64> {
        self.labels.keys().copied().collect()
    }

    pub fn population_of(&self, entity: i64) -> Option<u8> {
        self.labels.get(&entity).copied()
    }

    pub fn has_node_counts(&self) -> bool {
        self.graphs.iter().all(|g| g.node_counts.is_some())
    }

    /// Number of entities in each population (index 0 is population 1).
    pub fn entities_per_population(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_populations()];
        for &y in self.labels.values() {
            out[y as usize - 1] += 1;
        }
        out
    }

    /// Keep only the listed entities.
    pub fn subset(&self, entities: &BTreeSet<i64>) -> Result<Self> {
        let graphs = self
            .graphs
            .iter()
            .filter(|g| entities.contains(&g.entity_id))
            .cloned()
            .collect();
        let labels = self
            .labels
            .iter()
            .filter(|(e, _)| entities.contains(e))
            .map(|(&e, &y)| (e, y))
            .collect();
        Self::new(self.vocabulary.clone(), graphs, labels)
    }

    fn map_graphs(
        &self,
        mut f: impl FnMut(&GraphObservation) -> Result<GraphObservation>,
    ) -> Result<Self> {
        let graphs = self.graphs.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        Ok(PopulationDataset {
            vocabulary: self.vocabulary.clone(),
            graphs,
            labels: self.labels.clone(),
            n_populations: self.n_populations,
        })
    }
}

/// Binarize every graph with the co-occurrence ratio rule: edge `(i, j)`
/// becomes 1 when `w_ij / min(c_i, c_j) > threshold` (0 when the denominator
/// is 0). Output node counts are all 1.
pub fn binarize_threshold(d: &PopulationDataset, threshold: f64) -> Result<PopulationDataset> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in [0, 1), got {threshold}"
        )));
    }
    d.map_graphs(|g| {
        let counts = g.node_counts().ok_or_else(|| {
            Error::Dataset(format!(
                "entity {} time {}: thresholding needs node_counts",
                g.entity_id, g.time_index
            ))
        })?;
        let v = counts.len();
        let mut out = Vec::with_capacity(n_edges(v));
        for (l, &w) in g.weights().values().iter().enumerate() {
            let (i, j) = edge_nodes(l);
            let denom = counts[i].min(counts[j]);
            let p = if denom == 0 { 0.0 } else { w as f64 / denom as f64 };
            out.push(u64::from(p > threshold));
        }
        GraphObservation::new(
            g.entity_id,
            g.time_index,
            EdgeVector::from_values(out),
            Some(vec![1; v]),
        )
    })
}

/// Binarize on raw weights: edge becomes 1 when `w_ij > level`.
pub fn binarize_raw(d: &PopulationDataset, level: f64) -> Result<PopulationDataset> {
    d.map_graphs(|g| {
        let v = g.n_nodes();
        let out = g
            .weights()
            .values()
            .iter()
            .map(|&w| u64::from(w as f64 > level))
            .collect();
        GraphObservation::new(
            g.entity_id,
            g.time_index,
            EdgeVector::from_values(out),
            Some(vec![1; v]),
        )
    })
}
