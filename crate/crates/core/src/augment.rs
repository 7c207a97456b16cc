//! Graph Transplant: cut a salient partial K-hop subgraph out of a source
//! graph, replace a random partial K-hop region of a destination graph with
//! it, reconnect the pieces and mix the two labels by saliency mass.

use std::io::Write;

use ndarray::Array2;
use rand::seq::{index, IndexedRandom};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::edge_predictor::{connect_ep, EdgeCandidate, EdgePredictor, PairTape};
use crate::error::{Error, Result};
use crate::graph::{merge_disjoint, GraphInstance, GraphPart, NodeSet, Side};
use crate::saliency::SaliencyVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connector {
    /// Degree-preserving random pairs.
    Dp,
    /// Learned edge predictor with straight-through sampling.
    Ep,
    /// Leave the two parts disconnected.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    /// Percent of nodes used as anchors.
    pub r: f64,
    pub khops: Vec<usize>,
    pub alpha: f64,
    pub connector: Connector,
    /// Straight-through relaxation temperature.
    pub tau: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            r: 10.0,
            khops: vec![1, 2, 3],
            alpha: 2.0,
            connector: Connector::Ep,
            tau: 1.0,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r <= 50.0) {
            return Err(Error::Config(format!("R = {} must lie in (0, 50]", self.r)));
        }
        if self.khops.is_empty() || self.khops.contains(&0) {
            return Err(Error::Config("K-hop space must be a nonempty set of positive integers".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha = {} must be positive", self.alpha)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// One draw from `Beta(alpha, alpha)`.
pub fn sample_beta(alpha: f64, rng: &mut impl Rng) -> f64 {
    Beta::new(alpha, alpha).expect("alpha validated positive").sample(rng)
}

/// Draws the hop count `K` from the configured space and the frontier
/// percentage `p` from `100 * Beta(alpha, alpha)`.
pub fn sample_mix_params(cfg: &MixConfig, rng: &mut impl Rng) -> (usize, f64) {
    let k = *cfg.khops.choose(rng).expect("nonempty K-hop space");
    let p = 100.0 * sample_beta(cfg.alpha, rng);
    (k, p)
}

/// `max(1, round(R% * n))`, capped at `n`.
pub fn anchor_count(n: usize, r: f64) -> usize {
    ((r / 100.0 * n as f64).round() as usize).max(1).min(n)
}

fn sample_from(pool: &[usize], count: usize, rng: &mut impl Rng) -> NodeSet {
    index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Anchors drawn uniformly from the top-2R% nodes by saliency.
///
/// Falls back to uniform anchors over all nodes when every score is zero.
pub fn select_salient_anchors(sal: &SaliencyVector, r: f64, rng: &mut impl Rng) -> NodeSet {
    let n = sal.len();
    assert!(n > 0, "saliency of an empty graph");
    let count = anchor_count(n, r);
    if sal.is_all_zero() {
        return sample_from(&(0..n).collect::<Vec<_>>(), count, rng);
    }
    let top = ((2.0 * r / 100.0 * n as f64).round() as usize).max(count).min(n);
    let ranking = sal.ranking();
    sample_from(&ranking[..top], count, rng)
}

pub fn select_random_anchors(g: &GraphInstance, r: f64, rng: &mut impl Rng) -> NodeSet {
    let n = g.num_nodes();
    assert!(n > 0, "anchors of an empty graph");
    sample_from(&(0..n).collect::<Vec<_>>(), anchor_count(n, r), rng)
}

/// Grows `anchors` for `k` steps, each step keeping `ceil(p% * |frontier|)`
/// uniformly chosen nodes of the current step's neighborhood.
///
/// The frontier is every neighbor of the last step's nodes, including ones
/// already collected.
pub fn partial_k_hop(g: &GraphInstance, anchors: &NodeSet, k: usize, p: f64, rng: &mut impl Rng) -> NodeSet {
    let mut collected = anchors.clone();
    let mut current = anchors.clone();
    for _ in 0..k {
        let frontier: NodeSet = current.iter().flat_map(|v| g.neighbor_iter(v)).collect();
        if frontier.is_empty() {
            break;
        }
        let count = ((p / 100.0 * frontier.len() as f64).ceil() as usize).min(frontier.len());
        current = sample_from(frontier.as_slice(), count, rng);
        collected = collected.union(&current);
    }
    collected
}

/// Cross edges from the degree-preserving connector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossEdges {
    /// `(source id, destination id)`, sorted and distinct.
    pub edges: Vec<(usize, usize)>,
    /// Pairs drawn before deduplication.
    pub draws: usize,
}

/// Draws `floor((D + D_pi) / 2)` pairs uniformly from `U_pi x U`, with
/// replacement, and deduplicates them.
pub fn connect_dp(src: &GraphPart<'_>, dst: &GraphPart<'_>, rng: &mut impl Rng) -> CrossEdges {
    let us = src.boundary();
    let ud = dst.boundary();
    if us.is_empty() || ud.is_empty() {
        return CrossEdges {
            edges: Vec::new(),
            draws: 0,
        };
    }
    let draws = (src.total_deficit() + dst.total_deficit()) / 2;
    let mut edges: Vec<(usize, usize)> = (0..draws)
        .map(|_| {
            let a = us.as_slice()[rng.random_range(0..us.len())];
            let b = ud.as_slice()[rng.random_range(0..ud.len())];
            (a, b)
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    CrossEdges { edges, draws }
}

/// Share of the graph's saliency mass held by `nodes`; the share of nodes
/// when the graph has no saliency mass at all.
pub fn importance(sal: &SaliencyVector, nodes: &NodeSet) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let total = sal.total();
    if total == 0.0 {
        return nodes.len() as f64 / sal.len() as f64;
    }
    (sal.sum_over(nodes) / total).min(1.0)
}

/// Weight of the source label in the mixed label.
pub fn mix_label(sal_src: &SaliencyVector, kept_src: &NodeSet, sal_dst: &SaliencyVector, kept_dst: &NodeSet) -> f64 {
    let a = importance(sal_src, kept_src);
    let b = importance(sal_dst, kept_dst);
    if a + b > 0.0 {
        return a / (a + b);
    }
    let (ns, nd) = (kept_src.len() as f64, kept_dst.len() as f64);
    if ns + nd == 0.0 {
        0.5
    } else {
        ns / (ns + nd)
    }
}

/// Label weight from kept fractions of each graph, ignoring saliency.
pub fn size_label(kept_src: usize, n_src: usize, kept_dst: usize, n_dst: usize) -> f64 {
    let a = kept_src as f64 / n_src as f64;
    let b = kept_dst as f64 / n_dst as f64;
    if a + b == 0.0 {
        0.5
    } else {
        a / (a + b)
    }
}

/// How the transplanted nodes are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceSelection {
    /// Partial K-hop growth from salient anchors.
    Salient,
    /// Partial K-hop growth from uniform anchors.
    Random,
    /// `n` nodes drawn from the `min(2n, |V|)` most salient, no growth; the
    /// destination loses `n` uniform nodes.
    Scattered(usize),
}

/// A graph offered to the transplant with its saliency and, for the learned
/// connector, its last-layer latents.
#[derive(Debug, Clone, Copy)]
pub struct Donor<'a> {
    pub graph: &'a GraphInstance,
    pub saliency: &'a SaliencyVector,
    pub latents: Option<&'a Array2<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct TransplantOptions<'a> {
    pub source: SourceSelection,
    pub size_label: bool,
    pub predictor: Option<&'a EdgePredictor>,
}

impl Default for TransplantOptions<'_> {
    fn default() -> Self {
        Self {
            source: SourceSelection::Salient,
            size_label: false,
            predictor: None,
        }
    }
}

/// Learned-connector records needed to backpropagate into the predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogates {
    pub candidates: Vec<EdgeCandidate>,
    pub tape: PairTape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransplantResult {
    /// The new graph, carrying the destination label.
    pub mixed: GraphInstance,
    pub lambda: f64,
    pub source_label: usize,
    pub dest_label: usize,
    /// `provenance[v] = (side, original id)` for every node of `mixed`.
    pub provenance: Vec<(Side, usize)>,
    pub source_nodes: NodeSet,
    pub dest_kept: NodeSet,
    /// Cross edges in `mixed` ids.
    pub cross_edges: Vec<(usize, usize)>,
    pub surrogates: Option<Surrogates>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    EmptySource,
    EmptyRemainder,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transplant {
    Mixed(Box<TransplantResult>),
    Skipped(SkipReason),
}

impl Transplant {
    pub fn mixed(&self) -> Option<&TransplantResult> {
        match self {
            Transplant::Mixed(r) => Some(r),
            Transplant::Skipped(_) => None,
        }
    }
}

/// Transplants a salient piece of `src` into `dst`.
pub fn graph_transplant(
    src: &Donor<'_>,
    dst: &Donor<'_>,
    cfg: &MixConfig,
    k: usize,
    p: f64,
    opts: &TransplantOptions<'_>,
    rng: &mut impl Rng,
) -> Result<Transplant> {
    let (gs, gd) = (src.graph, dst.graph);
    if gs.is_empty() || gd.is_empty() {
        return Err(Error::EmptyGraph);
    }
    for d in [src, dst] {
        if d.saliency.len() != d.graph.num_nodes() {
            return Err(Error::Dimension(format!(
                "saliency has {} entries for a {}-node graph",
                d.saliency.len(),
                d.graph.num_nodes()
            )));
        }
    }

    let (source_nodes, removed) = match opts.source {
        SourceSelection::Salient | SourceSelection::Random => {
            let anchors = if opts.source == SourceSelection::Salient {
                select_salient_anchors(src.saliency, cfg.r, rng)
            } else {
                select_random_anchors(gs, cfg.r, rng)
            };
            let source_nodes = partial_k_hop(gs, &anchors, k, p, rng);
            let dst_anchors = select_random_anchors(gd, cfg.r, rng);
            (source_nodes, partial_k_hop(gd, &dst_anchors, k, p, rng))
        }
        SourceSelection::Scattered(n) => {
            let ns = n.min(gs.num_nodes());
            let top = (2 * ns).min(gs.num_nodes());
            let source_nodes = sample_from(&src.saliency.ranking()[..top], ns, rng);
            let nd = n.min(gd.num_nodes());
            let all: Vec<usize> = (0..gd.num_nodes()).collect();
            (source_nodes, sample_from(&all, nd, rng))
        }
    };
    if source_nodes.is_empty() {
        return Ok(Transplant::Skipped(SkipReason::EmptySource));
    }
    let src_part = gs.induced_subgraph(&source_nodes)?;
    let dst_part = gd.remove_nodes(&removed)?;
    if dst_part.is_empty() {
        return Ok(Transplant::Skipped(SkipReason::EmptyRemainder));
    }

    let (pairs, surrogates) = match cfg.connector {
        Connector::None => (Vec::new(), None),
        Connector::Dp => (connect_dp(&src_part, &dst_part, rng).edges, None),
        Connector::Ep => {
            let predictor = opts
                .predictor
                .ok_or_else(|| Error::Config("learned connector requires an edge predictor".into()))?;
            let (Some(ls), Some(ld)) = (src.latents, dst.latents) else {
                return Err(Error::Config("learned connector requires node latents".into()));
            };
            let conn = connect_ep(&src_part, &dst_part, ls, ld, predictor, cfg.tau, rng)?;
            let sur = conn.tape.map(|tape| Surrogates {
                candidates: conn.candidates,
                tape,
            });
            (conn.edges, sur)
        }
    };

    let merged = merge_disjoint(&src_part, &dst_part, &pairs)?;
    let offset = src_part.len();
    let cross_edges = pairs
        .iter()
        .map(|&(a, b)| {
            (
                src_part.nodes().position(a).unwrap(),
                offset + dst_part.nodes().position(b).unwrap(),
            )
        })
        .collect();
    let lambda = if opts.size_label {
        size_label(src_part.len(), gs.num_nodes(), dst_part.len(), gd.num_nodes())
    } else {
        mix_label(src.saliency, src_part.nodes(), dst.saliency, dst_part.nodes())
    };
    Ok(Transplant::Mixed(Box::new(TransplantResult {
        mixed: merged.graph,
        lambda,
        source_label: gs.label(),
        dest_label: gd.label(),
        provenance: merged.provenance,
        source_nodes: src_part.nodes().clone(),
        dest_kept: dst_part.nodes().clone(),
        cross_edges,
        surrogates,
    })))
}

impl TransplantResult {
    /// Positions of `(src, dst)` original ids in the mixed graph.
    pub fn mixed_ids(&self, src: usize, dst: usize) -> (usize, usize) {
        let a = self.source_nodes.position(src).expect("source node kept");
        let b = self.dest_kept.position(dst).expect("destination node kept");
        (a, self.source_nodes.len() + b)
    }

    /// Plain-text description: header lines, then one line per node and edge.
    pub fn write_dump(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "lambda {:?}", self.lambda)?;
        writeln!(out, "source_label {}", self.source_label)?;
        writeln!(out, "dest_label {}", self.dest_label)?;
        writeln!(out, "nodes {}", self.mixed.num_nodes())?;
        for (v, (side, orig)) in self.provenance.iter().enumerate() {
            let tag = match side {
                Side::Source => "src",
                Side::Destination => "dst",
            };
            writeln!(out, "node {v} {tag} {orig}")?;
        }
        writeln!(out, "edges {}", self.mixed.num_edges())?;
        for e in self.mixed.edges() {
            let cross = self.cross_edges.contains(&(e.u, e.v));
            writeln!(out, "edge {} {} {:?}{}", e.u, e.v, e.weight, if cross { " cross" } else { "" })?;
        }
        Ok(())
    }
}
