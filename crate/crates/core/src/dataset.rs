//! Dataset ingestion (TU text format), synthetic motif datasets, feature
//! standardization and stratified k-fold splitting.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphInstance;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<GraphInstance>,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Per feature column: whether it holds a continuous value that should be
    /// standardized (one-hot indicator columns are left untouched).
    pub continuous: Vec<bool>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        graphs: Vec<GraphInstance>,
        num_classes: usize,
        continuous: Vec<bool>,
    ) -> Result<Self> {
        let feature_dim = continuous.len();
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "dataset needs at least 2 classes, got {num_classes}"
            )));
        }
        for (i, g) in graphs.iter().enumerate() {
            if g.feature_dim() != feature_dim {
                return Err(Error::Dimension(format!(
                    "graph {i} has {} feature columns, expected {feature_dim}",
                    g.feature_dim()
                )));
            }
            if g.label() >= num_classes {
                return Err(Error::Config(format!(
                    "graph {i} has label {} outside 0..{num_classes}",
                    g.label()
                )));
            }
            if g.is_empty() {
                return Err(Error::EmptyGraph);
            }
        }
        Ok(Self {
            name: name.into(),
            graphs,
            num_classes,
            feature_dim,
            continuous,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(GraphInstance::label).collect()
    }

    pub fn mean_nodes(&self) -> f64 {
        self.graphs.iter().map(|g| g.num_nodes() as f64).sum::<f64>() / self.len() as f64
    }

    pub fn mean_edges(&self) -> f64 {
        self.graphs.iter().map(|g| g.num_edges() as f64).sum::<f64>() / self.len() as f64
    }

    /// Replaces node features with the (weighted) node degree.
    pub fn with_degree_features(&self) -> Result<Dataset> {
        let graphs = self
            .graphs
            .iter()
            .map(|g| {
                let f = Array2::from_shape_fn((g.num_nodes(), 1), |(v, _)| {
                    g.degree(v).expect("valid node")
                });
                g.with_features(f)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.name.clone(), graphs, self.num_classes, vec![true])
    }

    pub fn stratified_kfold(&self, k: usize, seed: u64) -> Result<Vec<SplitSpec>> {
        stratified_kfold(&self.labels(), k, seed)
    }

    pub fn standardize(&self, stats: &FeatureStats) -> Result<Dataset> {
        standardize(self, stats)
    }
}

fn load_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| load_err(path, e.to_string()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

fn parse_fields<T: std::str::FromStr>(path: &Path, line_no: usize, line: &str) -> Result<Vec<T>> {
    line.split(',')
        .map(|s| {
            s.trim().parse::<T>().map_err(|_| {
                load_err(path, format!("line {}: cannot parse {:?}", line_no + 1, s.trim()))
            })
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(path: &Path, line_no: usize, line: &str) -> Result<T> {
    let mut v = parse_fields::<T>(path, line_no, line)?;
    if v.len() != 1 {
        return Err(load_err(
            path,
            format!("line {}: expected a single value", line_no + 1),
        ));
    }
    Ok(v.remove(0))
}

/// Loads `{name}_A.txt`, `{name}_graph_indicator.txt`,
/// `{name}_graph_labels.txt` and the optional `{name}_node_labels.txt` /
/// `{name}_node_attributes.txt` from `dir`.
///
/// Node labels become one-hot columns followed by any continuous
/// attributes. A dataset with neither gets zero feature columns; see
/// [`Dataset::with_degree_features`].
pub fn load_tu_dataset(dir: impl AsRef<Path>, name: &str) -> Result<Dataset> {
    let dir = dir.as_ref();
    let file = |suffix: &str| -> PathBuf { dir.join(format!("{name}_{suffix}.txt")) };

    let ind_path = file("graph_indicator");
    let indicator: Vec<usize> = read_lines(&ind_path)?
        .iter()
        .enumerate()
        .map(|(i, l)| parse_one(&ind_path, i, l))
        .collect::<Result<_>>()?;
    if indicator.is_empty() {
        return Err(load_err(&ind_path, "no nodes"));
    }
    if indicator[0] != 1 {
        return Err(load_err(&ind_path, "graph ids must start at 1"));
    }
    for (i, w) in indicator.windows(2).enumerate() {
        if w[1] != w[0] && w[1] != w[0] + 1 {
            return Err(load_err(
                &ind_path,
                format!(
                    "line {}: graph id {} follows {}; ids must be contiguous and sorted",
                    i + 2,
                    w[1],
                    w[0]
                ),
            ));
        }
    }
    let num_graphs = *indicator.last().unwrap();
    let num_nodes_total = indicator.len();
    // first global node index of each graph
    let mut starts = vec![0usize; num_graphs + 1];
    for (node, &gid) in indicator.iter().enumerate().rev() {
        starts[gid - 1] = node;
    }
    starts[num_graphs] = num_nodes_total;

    let lab_path = file("graph_labels");
    let raw_labels: Vec<i64> = read_lines(&lab_path)?
        .iter()
        .enumerate()
        .map(|(i, l)| parse_one(&lab_path, i, l))
        .collect::<Result<_>>()?;
    if raw_labels.len() != num_graphs {
        return Err(load_err(
            &lab_path,
            format!("{} labels for {num_graphs} graphs", raw_labels.len()),
        ));
    }
    let label_map: BTreeMap<i64, usize> = {
        let mut uniq: Vec<i64> = raw_labels.clone();
        uniq.sort_unstable();
        uniq.dedup();
        uniq.into_iter().enumerate().map(|(i, l)| (l, i)).collect()
    };
    let num_classes = label_map.len();

    let a_path = file("A");
    let mut per_graph_edges: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); num_graphs];
    for (i, line) in read_lines(&a_path)?.iter().enumerate() {
        let f: Vec<usize> = parse_fields(&a_path, i, line)?;
        if f.len() != 2 {
            return Err(load_err(&a_path, format!("line {}: expected \"u, v\"", i + 1)));
        }
        let (u, v) = (f[0], f[1]);
        if u == 0 || v == 0 || u > num_nodes_total || v > num_nodes_total {
            return Err(load_err(
                &a_path,
                format!("line {}: node id out of range 1..={num_nodes_total}", i + 1),
            ));
        }
        let (gu, gv) = (indicator[u - 1], indicator[v - 1]);
        if gu != gv {
            return Err(load_err(
                &a_path,
                format!("line {}: edge joins node {u} of graph {gu} to node {v} of graph {gv}", i + 1),
            ));
        }
        if u == v {
            continue;
        }
        let base = starts[gu - 1];
        per_graph_edges[gu - 1].push((u - 1 - base, v - 1 - base, 1.0));
    }

    // optional node features
    let mut continuous: Vec<bool> = Vec::new();
    let nl_path = file("node_labels");
    let na_path = file("node_attributes");
    // feature row per global node
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); num_nodes_total];
    if nl_path.exists() {
        let raw: Vec<i64> = read_lines(&nl_path)?
            .iter()
            .enumerate()
            .map(|(i, l)| {
                // some datasets carry several label columns; the first is the category
                parse_fields::<i64>(&nl_path, i, l).map(|v| v[0])
            })
            .collect::<Result<_>>()?;
        if raw.len() != num_nodes_total {
            return Err(load_err(
                &nl_path,
                format!("{} node labels for {num_nodes_total} nodes", raw.len()),
            ));
        }
        let mut uniq = raw.clone();
        uniq.sort_unstable();
        uniq.dedup();
        for (node, l) in raw.iter().enumerate() {
            let idx = uniq.binary_search(l).unwrap();
            let mut one_hot = vec![0.0; uniq.len()];
            one_hot[idx] = 1.0;
            rows[node].extend(one_hot);
        }
        continuous.extend(std::iter::repeat_n(false, uniq.len()));
    }
    if na_path.exists() {
        let lines = read_lines(&na_path)?;
        if lines.len() != num_nodes_total {
            return Err(load_err(
                &na_path,
                format!("{} attribute rows for {num_nodes_total} nodes", lines.len()),
            ));
        }
        let mut width = None;
        for (i, l) in lines.iter().enumerate() {
            let vals: Vec<f64> = parse_fields(&na_path, i, l)?;
            match width {
                None => width = Some(vals.len()),
                Some(w) if w != vals.len() => {
                    return Err(load_err(
                        &na_path,
                        format!("line {}: {} attributes, expected {w}", i + 1, vals.len()),
                    ))
                }
                _ => {}
            }
            rows[i].extend(vals);
        }
        continuous.extend(std::iter::repeat_n(true, width.unwrap_or(0)));
    }
    let dim = continuous.len();

    let mut graphs = Vec::with_capacity(num_graphs);
    for gid in 0..num_graphs {
        let (lo, hi) = (starts[gid], starts[gid + 1]);
        let n = hi - lo;
        let feats = Array2::from_shape_fn((n, dim), |(r, c)| rows[lo + r][c]);
        let label = label_map[&raw_labels[gid]];
        let g = GraphInstance::new(n, std::mem::take(&mut per_graph_edges[gid]), feats, label)
            .map_err(|e| load_err(dir, format!("graph {}: {e}", gid + 1)))?;
        graphs.push(g);
    }
    Dataset::new(name, graphs, num_classes, continuous)
}

/// Writes a dataset in TU layout: every feature column goes to
/// `{name}_node_attributes.txt`; edges are written in both directions.
pub fn write_tu_dataset(ds: &Dataset, dir: impl AsRef<Path>, name: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let create = |suffix: &str| -> Result<BufWriter<fs::File>> {
        Ok(BufWriter::new(fs::File::create(
            dir.join(format!("{name}_{suffix}.txt")),
        )?))
    };
    let mut a = create("A")?;
    let mut ind = create("graph_indicator")?;
    let mut lab = create("graph_labels")?;
    let mut attr = if ds.feature_dim > 0 {
        Some(create("node_attributes")?)
    } else {
        None
    };
    let mut base = 0usize;
    for (gid, g) in ds.graphs.iter().enumerate() {
        for e in g.edges() {
            writeln!(a, "{}, {}", base + e.u + 1, base + e.v + 1)?;
            writeln!(a, "{}, {}", base + e.v + 1, base + e.u + 1)?;
        }
        for v in 0..g.num_nodes() {
            writeln!(ind, "{}", gid + 1)?;
            if let Some(w) = attr.as_mut() {
                let row: Vec<String> = g.features().row(v).iter().map(|x| format!("{x:?}")).collect();
                writeln!(w, "{}", row.join(", "))?;
            }
        }
        writeln!(lab, "{}", g.label())?;
        base += g.num_nodes();
    }
    a.flush()?;
    ind.flush()?;
    lab.flush()?;
    if let Some(mut w) = attr {
        w.flush()?;
    }
    Ok(())
}

/// Per-column mean and population standard deviation over a set of graphs' node rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn compute(ds: &Dataset, graph_indices: &[usize]) -> FeatureStats {
        let d = ds.feature_dim;
        let mut sum = vec![0.0; d];
        let mut count = 0usize;
        for &i in graph_indices {
            for row in ds.graphs[i].features().rows() {
                for (s, x) in sum.iter_mut().zip(row) {
                    *s += x;
                }
                count += 1;
            }
        }
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut sq = vec![0.0; d];
        for &i in graph_indices {
            for row in ds.graphs[i].features().rows() {
                for ((s, x), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *s += (x - m) * (x - m);
                }
            }
        }
        let std = sq.iter().map(|s| (s / n).sqrt()).collect();
        FeatureStats { mean, std }
    }
}

/// `x <- (x - mean) / std` on continuous columns; zero-variance columns are
/// only centered.
pub fn standardize(ds: &Dataset, stats: &FeatureStats) -> Result<Dataset> {
    if stats.mean.len() != ds.feature_dim || stats.std.len() != ds.feature_dim {
        return Err(Error::Dimension(format!(
            "stats cover {} columns, dataset has {}",
            stats.mean.len(),
            ds.feature_dim
        )));
    }
    let graphs = ds
        .graphs
        .iter()
        .map(|g| {
            let mut f = g.features().clone();
            for (c, mut col) in f.columns_mut().into_iter().enumerate() {
                if !ds.continuous[c] {
                    continue;
                }
                let (m, s) = (stats.mean[c], stats.std[c]);
                if s > 0.0 {
                    col.mapv_inplace(|x| (x - m) / s);
                } else {
                    col.mapv_inplace(|x| x - m);
                }
            }
            g.with_features(f)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(ds.name.clone(), graphs, ds.num_classes, ds.continuous.clone())
}

/// Train/validation/test assignment for one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fold: usize,
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn train_val(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.train.iter().chain(&self.val).copied().collect();
        v.sort_unstable();
        v
    }
}

/// Stratified k-fold splits. Fold `i` tests on chunk `i` and validates on
/// chunk `i + 1 (mod k)`; the rest trains. With `k = 2` there is no third
/// chunk, so every fourth member (per class) of the non-test chunk validates.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Vec<SplitSpec>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    for (&class, members) in &by_class {
        if members.len() < k {
            return Err(Error::ClassTooSmall {
                class,
                count: members.len(),
                k,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chunk_of = vec![0usize; labels.len()];
    let mut cursor = 0usize;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            chunk_of[i] = cursor % k;
            cursor += 1;
        }
    }
    let splits = (0..k)
        .map(|fold| {
            let val_chunk = (fold + 1) % k;
            let mut split = SplitSpec {
                fold,
                seed,
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            if k >= 3 {
                for (i, &c) in chunk_of.iter().enumerate() {
                    if c == fold {
                        split.test.push(i);
                    } else if c == val_chunk {
                        split.val.push(i);
                    } else {
                        split.train.push(i);
                    }
                }
            } else {
                let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
                for (i, &c) in chunk_of.iter().enumerate() {
                    if c == fold {
                        split.test.push(i);
                        continue;
                    }
                    let n = seen.entry(labels[i]).or_default();
                    if *n % 4 == 3 {
                        split.val.push(i);
                    } else {
                        split.train.push(i);
                    }
                    *n += 1;
                }
            }
            split
        })
        .collect();
    Ok(splits)
}

/// Uniform random labeled tree on `n` nodes via a Prüfer sequence.
fn random_tree(n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    if n == 2 {
        return vec![(0, 1)];
    }
    let seq: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
    let mut degree = vec![1usize; n];
    for &s in &seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    let mut leaves: std::collections::BTreeSet<usize> =
        (0..n).filter(|&v| degree[v] == 1).collect();
    for &s in &seq {
        let leaf = *leaves.iter().next().unwrap();
        leaves.remove(&leaf);
        edges.push((leaf, s));
        degree[s] -= 1;
        if degree[s] == 1 {
            leaves.insert(s);
        }
    }
    let rest: Vec<usize> = leaves.into_iter().collect();
    edges.push((rest[0], rest[1]));
    edges
}

/// Binary motif dataset: a random tree of 10 to 20 nodes with a triangle
/// planted on one of its nodes (class 1) or a 4-leaf star hung from one of
/// its nodes (class 0). Node features are degrees; node ids are shuffled.
pub fn synth_motif_dataset(n_graphs: usize, seed: u64) -> Result<Dataset> {
    if !n_graphs.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "motif dataset size must be even, got {n_graphs}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(n_graphs);
    for i in 0..n_graphs {
        let label = i % 2;
        let tree_n = rng.random_range(10..=20);
        let mut edges = random_tree(tree_n, &mut rng);
        let anchor = rng.random_range(0..tree_n);
        let n = if label == 1 {
            let (a, b) = (tree_n, tree_n + 1);
            edges.extend([(anchor, a), (anchor, b), (a, b)]);
            tree_n + 2
        } else {
            let center = tree_n;
            edges.push((anchor, center));
            for leaf in 1..=4 {
                edges.push((center, tree_n + leaf));
            }
            tree_n + 5
        };
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let edges: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let g = GraphInstance::unweighted(n, &edges, Array2::zeros((n, 0)), label)?;
        graphs.push(g);
    }
    let ds = Dataset::new("synthetic-motif", graphs, 2, Vec::new())?;
    ds.with_degree_features()
}
