//! Reading and writing the dataset directory format.
//!
//! ```text
//! nodes.txt        one node label per line; line number - 1 is the node index
//! graphs.csv       entity_id,time_index,i,j,weight   (i > j, absent rows are 0)
//! labels.csv       entity_id,population              (population in {1, 2})
//! node_counts.csv  entity_id,time_index,node,count   (optional)
//! ```
//!
//! A graph with no positive edge is registered by a single zero-weight row.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{edge_index, n_edges, EdgeVector, GraphObservation, NodeVocabulary, PopulationDataset};

type GraphKey = (i64, u32);

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Split a CSV file into trimmed records after checking the header.
fn csv_records(path: &Path, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let text = read_to_string(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(parse_err(
            &name,
            1,
            format!("expected header {:?}, found {:?}", header.join(","), found.join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(&name, 0, e.to_string()))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(parse_err(&name, line, format!("expected {} fields", header.len())));
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

fn int<T: std::str::FromStr>(file: &str, line: usize, field: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(file, line, format!("{field}: expected an integer, found {s:?}")))
}

fn node_ref(voc: &NodeVocabulary, file: &str, line: usize, s: &str) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(i) if i < voc.len() => Ok(i),
        Ok(i) => Err(parse_err(file, line, format!("unknown node index {i}"))),
        Err(_) => voc
            .index_of(s)
            .ok_or_else(|| parse_err(file, line, format!("unknown node name {s:?}"))),
    }
}

/// Load and validate a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<PopulationDataset> {
    let dir = dir.as_ref();
    let nodes_path = dir.join("nodes.txt");
    let labels: Vec<String> = read_to_string(&nodes_path)?
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.is_empty())
        .collect();
    let voc = NodeVocabulary::new(labels)?;
    let v = voc.len();

    let mut weights: BTreeMap<GraphKey, Vec<u64>> = BTreeMap::new();
    let mut seen: HashMap<(GraphKey, usize), u64> = HashMap::new();
    for (line, rec) in csv_records(&dir.join("graphs.csv"), &["entity_id", "time_index", "i", "j", "weight"])? {
        let f = "graphs.csv";
        let entity: i64 = int(f, line, "entity_id", &rec[0])?;
        let time: u32 = int(f, line, "time_index", &rec[1])?;
        let i = node_ref(&voc, f, line, &rec[2])?;
        let j = node_ref(&voc, f, line, &rec[3])?;
        let w: u64 = int(f, line, "weight", &rec[4])?;
        if i == j {
            if w != 0 {
                return Err(parse_err(f, line, format!("self loop on node {i} with weight {w}")));
            }
            weights.entry((entity, time)).or_insert_with(|| vec![0; n_edges(v)]);
            continue;
        }
        let l = if i > j { edge_index(i, j) } else { edge_index(j, i) };
        if let Some(&prev) = seen.get(&((entity, time), l)) {
            if prev != w {
                return Err(parse_err(
                    f,
                    line,
                    format!(
                        "conflicting weights {prev} and {w} for edge ({},{}) of entity {entity} time {time}",
                        i.max(j),
                        i.min(j)
                    ),
                ));
            }
        }
        seen.insert(((entity, time), l), w);
        weights.entry((entity, time)).or_insert_with(|| vec![0; n_edges(v)])[l] = w;
    }

    let counts_path = dir.join("node_counts.csv");
    let mut counts: Option<BTreeMap<GraphKey, Vec<u64>>> = None;
    if counts_path.exists() {
        let mut map: BTreeMap<GraphKey, Vec<u64>> = BTreeMap::new();
        for (line, rec) in csv_records(&counts_path, &["entity_id", "time_index", "node", "count"])? {
            let f = "node_counts.csv";
            let entity: i64 = int(f, line, "entity_id", &rec[0])?;
            let time: u32 = int(f, line, "time_index", &rec[1])?;
            let node = node_ref(&voc, f, line, &rec[2])?;
            let c: u64 = int(f, line, "count", &rec[3])?;
            map.entry((entity, time)).or_insert_with(|| vec![0; v])[node] = c;
            weights.entry((entity, time)).or_insert_with(|| vec![0; n_edges(v)]);
        }
        counts = Some(map);
    }

    let mut pop_labels = BTreeMap::new();
    for (line, rec) in csv_records(&dir.join("labels.csv"), &["entity_id", "population"])? {
        let f = "labels.csv";
        let entity: i64 = int(f, line, "entity_id", &rec[0])?;
        let y: u8 = int(f, line, "population", &rec[1])?;
        if !(1..=2).contains(&y) {
            return Err(parse_err(f, line, format!("population must be 1 or 2, found {y}")));
        }
        if pop_labels.insert(entity, y).is_some_and(|prev| prev != y) {
            return Err(parse_err(f, line, format!("entity {entity} has two populations")));
        }
    }

    let graphs = weights
        .into_iter()
        .map(|(key, w)| {
            let nc = counts.as_ref().map(|m| m.get(&key).cloned().unwrap_or_else(|| vec![0; v]));
            GraphObservation::new(key.0, key.1, EdgeVector::from_values(w), nc)
        })
        .collect::<Result<Vec<_>>>()?;
    PopulationDataset::new(voc, graphs, pop_labels)
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Write a file via a temporary sibling and a rename.
pub fn write_file(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    write_atomic(path.as_ref(), contents.as_ref())
}

/// Write a dataset in the directory format read by [`load_dataset`].
pub fn save_dataset(d: &PopulationDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut nodes = String::new();
    for l in d.vocabulary().labels() {
        nodes.push_str(l);
        nodes.push('\n');
    }
    write_atomic(&dir.join("nodes.txt"), nodes.as_bytes())?;

    let mut graphs = String::from("entity_id,time_index,i,j,weight\n");
    for g in d.graphs() {
        let mut any = false;
        for (l, &w) in g.weights().values().iter().enumerate() {
            if w > 0 {
                let (i, j) = crate::graph::edge_nodes(l);
                graphs.push_str(&format!("{},{},{i},{j},{w}\n", g.entity_id, g.time_index));
                any = true;
            }
        }
        if !any {
            graphs.push_str(&format!("{},{},1,0,0\n", g.entity_id, g.time_index));
        }
    }
    write_atomic(&dir.join("graphs.csv"), graphs.as_bytes())?;

    let mut labels = String::from("entity_id,population\n");
    for (e, y) in d.labels() {
        labels.push_str(&format!("{e},{y}\n"));
    }
    write_atomic(&dir.join("labels.csv"), labels.as_bytes())?;

    let counts_path = dir.join("node_counts.csv");
    if d.has_node_counts() {
        let mut counts = String::from("entity_id,time_index,node,count\n");
        for g in d.graphs() {
            for (node, &c) in g.node_counts().unwrap_or(&[]).iter().enumerate() {
                if c > 0 {
                    counts.push_str(&format!("{},{},{node},{c}\n", g.entity_id, g.time_index));
                }
            }
        }
        write_atomic(&counts_path, counts.as_bytes())?;
    } else if counts_path.exists() {
        fs::remove_file(&counts_path).map_err(|e| Error::io(&counts_path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn minimal(dir: &Path) {
        write(dir, "nodes.txt", "alpha\nbeta\n");
        write(dir, "graphs.csv", "entity_id,time_index,i,j,weight\n1,0,1,0,3\n");
        write(dir, "labels.csv", "entity_id,population\n1,1\n");
    }

    #[test]
    fn smallest_valid_dataset() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        let d = load_dataset(tmp.path()).unwrap();
        assert_eq!(d.n_nodes(), 2);
        assert_eq!(d.n_edges(), 1);
        assert_eq!(d.graphs()[0].weights().values(), &[3]);
        assert!(!d.has_node_counts());
    }

    #[test]
    fn missing_label_is_error() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        write(tmp.path(), "labels.csv", "entity_id,population\n2,1\n");
        let err = load_dataset(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("unlabeled entity"), "{err}");
    }

    #[test]
    fn missing_file_is_error() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        fs::remove_file(tmp.path().join("graphs.csv")).unwrap();
        assert!(matches!(load_dataset(tmp.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn malformed_rows_rejected() {
        let cases = [
            "entity_id,time_index,i,j,weight\n1,0,2,0,3\n",
            "entity_id,time_index,i,j,weight\n1,0,1,0,x\n",
            "entity_id,time_index,i,j,weight\n1,0,1,0,-3\n",
            "entity_id,time_index,i,j,weight\n1,0,1,0,3\n1,0,0,1,4\n",
            "entity_id,time_index,i,j,weight\n1,0,1,1,3\n",
            "entity_id,time,i,j,weight\n1,0,1,0,3\n",
            "entity_id,time_index,i,j,weight\n1,0,1,0\n",
            "entity_id,time_index,i,j,weight\n1,0,gamma,alpha,2\n",
        ];
        for body in cases {
            let tmp = tempfile::tempdir().unwrap();
            minimal(tmp.path());
            write(tmp.path(), "graphs.csv", body);
            assert!(load_dataset(tmp.path()).is_err(), "accepted {body:?}");
        }
    }

    #[test]
    fn symmetric_duplicates_accepted_and_names_resolve() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        write(
            tmp.path(),
            "graphs.csv",
            "entity_id,time_index,i,j,weight\n1,0,1,0,3\n1,0,0,1,3\n1,1,beta,alpha,2\n",
        );
        let d = load_dataset(tmp.path()).unwrap();
        assert_eq!(d.graphs().len(), 2);
        assert_eq!(d.graphs()[1].weights().values(), &[2]);
    }

    #[test]
    fn node_count_bound_checked_on_load() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        write(
            tmp.path(),
            "node_counts.csv",
            "entity_id,time_index,node,count\n1,0,0,2\n1,0,1,8\n",
        );
        let err = load_dataset(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("exceeds node-count bound"), "{err}");
        write(
            tmp.path(),
            "node_counts.csv",
            "entity_id,time_index,node,count\n1,0,0,3\n1,0,1,8\n",
        );
        let d = load_dataset(tmp.path()).unwrap();
        assert_eq!(d.graphs()[0].trials().unwrap().values(), &[3]);
    }

    #[test]
    fn bad_population_and_orphan_label() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        write(tmp.path(), "labels.csv", "entity_id,population\n1,3\n");
        assert!(load_dataset(tmp.path()).is_err());
        write(tmp.path(), "labels.csv", "entity_id,population\n1,1\n9,2\n");
        assert!(load_dataset(tmp.path()).is_err());
    }

    #[test]
    fn empty_graph_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let voc = NodeVocabulary::numbered(3).unwrap();
        let g = GraphObservation::new(4, 2, EdgeVector::zeros(3), Some(vec![0, 1, 0])).unwrap();
        let d = PopulationDataset::new(voc, vec![g], BTreeMap::from([(4, 2)])).unwrap();
        save_dataset(&d, tmp.path()).unwrap();
        assert_eq!(load_dataset(tmp.path()).unwrap(), d);
    }
}
