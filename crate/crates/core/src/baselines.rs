//! Label-preserving stochastic augmentations used as comparison points, and
//! the hidden-space mixup combiner.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::sample_beta;
use crate::error::{Error, Result};
use crate::graph::{GraphInstance, NodeSet};
use crate::nn::mixed_target;

// guards ratio * count products like 0.2 * 10 against landing a hair above an integer
const ROUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    #[serde(rename = "dropn")]
    DropN,
    #[serde(rename = "perme")]
    PermE,
    #[serde(rename = "maskn")]
    MaskN,
    #[serde(rename = "subg")]
    SubG,
}

impl BaselineKind {
    /// Default ratio: the lower grid value for the perturbations, the upper
    /// one for the subgraph keep ratio.
    pub fn default_ratio(self) -> f64 {
        match self {
            BaselineKind::SubG => 0.8,
            _ => 0.2,
        }
    }

    pub fn apply(self, g: &GraphInstance, ratio: f64, rng: &mut impl Rng) -> Result<GraphInstance> {
        match self {
            BaselineKind::DropN => drop_nodes(g, ratio, rng),
            BaselineKind::PermE => perturb_edges(g, ratio, rng),
            BaselineKind::MaskN => mask_attrs(g, ratio, rng),
            BaselineKind::SubG => subgraph_rw(g, ratio, rng),
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::DropN => "dropn",
            BaselineKind::PermE => "perme",
            BaselineKind::MaskN => "maskn",
            BaselineKind::SubG => "subg",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dropn" => Ok(BaselineKind::DropN),
            "perme" => Ok(BaselineKind::PermE),
            "maskn" => Ok(BaselineKind::MaskN),
            "subg" => Ok(BaselineKind::SubG),
            _ => Err(Error::Config(format!("unknown baseline {s:?}"))),
        }
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if (0.0..=1.0).contains(&ratio) {
        Ok(())
    } else {
        Err(Error::Config(format!("ratio {ratio} outside [0, 1]")))
    }
}

fn ceil_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 - ROUND_SLACK).ceil().max(0.0) as usize
}

fn floor_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + ROUND_SLACK).floor() as usize
}

/// Removes `ceil(ratio * n)` uniform nodes. Returns the graph unchanged if
/// that would remove every node.
pub fn drop_nodes(g: &GraphInstance, ratio: f64, rng: &mut impl Rng) -> Result<GraphInstance> {
    check_ratio(ratio)?;
    let n = g.num_nodes();
    let drop = ceil_count(ratio, n);
    if drop == 0 || drop >= n {
        return Ok(g.clone());
    }
    let dropped: NodeSet = index::sample(rng, n, drop).into_iter().collect();
    g.extract(&g.complement(&dropped))
}

/// Removes `floor(ratio * |E|)` uniform edges and adds as many uniform
/// non-edges of the original graph (fewer if the graph is nearly complete).
pub fn perturb_edges(g: &GraphInstance, ratio: f64, rng: &mut impl Rng) -> Result<GraphInstance> {
    check_ratio(ratio)?;
    let m = floor_count(ratio, g.num_edges());
    if m == 0 {
        return Ok(g.clone());
    }
    let n = g.num_nodes();
    let removed: HashSet<usize> = index::sample(rng, g.num_edges(), m).into_iter().collect();
    let mut edges: Vec<(usize, usize, f64)> = g
        .edges()
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, e)| (e.u, e.v, e.weight))
        .collect();
    let non_edges = n * (n - 1) / 2 - g.num_edges();
    let add = m.min(non_edges);
    if non_edges <= 4 * add {
        let all: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !g.has_edge(u, v))
            .collect();
        for i in index::sample(rng, all.len(), add) {
            edges.push((all[i].0, all[i].1, 1.0));
        }
    } else {
        let mut chosen = HashSet::new();
        while chosen.len() < add {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u != v && !g.has_edge(u, v) && chosen.insert((u.min(v), u.max(v))) {
                edges.push((u.min(v), u.max(v), 1.0));
            }
        }
    }
    GraphInstance::new(n, edges, g.features().clone(), g.label())
}

/// Zeroes the feature rows of `floor(ratio * n)` uniform nodes.
pub fn mask_attrs(g: &GraphInstance, ratio: f64, rng: &mut impl Rng) -> Result<GraphInstance> {
    check_ratio(ratio)?;
    let count = floor_count(ratio, g.num_nodes());
    let mut x = g.features().clone();
    for v in index::sample(rng, g.num_nodes(), count) {
        x.row_mut(v).fill(0.0);
    }
    g.with_features(x)
}

/// Induced subgraph on the nodes a random walk visits before collecting
/// `ceil(keep * n)` distinct nodes or taking `10 n` steps.
///
/// When the walk sits on an isolated node it restarts from a uniformly
/// chosen collected node.
pub fn subgraph_rw(g: &GraphInstance, keep: f64, rng: &mut impl Rng) -> Result<GraphInstance> {
    check_ratio(keep)?;
    let n = g.num_nodes();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let target = ceil_count(keep, n).max(1);
    let start = rng.random_range(0..n);
    let mut visited = vec![start];
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut current = start;
    for _ in 0..10 * n {
        if visited.len() >= target {
            break;
        }
        let deg = g.edge_count_at(current)?;
        if deg == 0 {
            current = visited[rng.random_range(0..visited.len())];
            continue;
        }
        let k = rng.random_range(0..deg);
        current = g.neighbor_iter(current).nth(k).expect("neighbor index within degree");
        if !seen[current] {
            seen[current] = true;
            visited.push(current);
        }
    }
    g.extract(&visited.into_iter().collect())
}

/// `(1 - lam) a + lam b` for both the representation and the label, with
/// `lam ~ Beta(alpha, alpha)`. Returns the mix and `lam`.
pub fn manifold_mixup_combine(
    repr_a: &Array1<f64>,
    repr_b: &Array1<f64>,
    label_a: usize,
    label_b: usize,
    num_classes: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> (Array1<f64>, Array1<f64>, f64) {
    let lam = sample_beta(alpha, rng);
    let (r, y) = mixup_with(repr_a, repr_b, label_a, label_b, num_classes, lam);
    (r, y, lam)
}

pub fn mixup_with(
    repr_a: &Array1<f64>,
    repr_b: &Array1<f64>,
    label_a: usize,
    label_b: usize,
    num_classes: usize,
    lam: f64,
) -> (Array1<f64>, Array1<f64>) {
    let r = repr_a * (1.0 - lam) + repr_b * lam;
    (r, mixed_target(label_b, label_a, lam, num_classes))
}
