//! Learned edge model used to wire a transplanted subgraph into its new host.
//!
//! The predictor is an MLP over concatenated node latents. Its probability
//! for a pair is the average over both argument orders, so it is symmetric
//! by construction. New edges are Bernoulli draws made differentiable with a
//! binary straight-through Gumbel relaxation.

use std::collections::HashSet;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{GraphInstance, GraphPart};
use crate::nn::{glorot, Adam, ParamSet};

/// Probabilities are kept inside `[PROB_EPS, 1 - PROB_EPS]` before sampling.
pub const PROB_EPS: f64 = 1e-6;

/// Pairs per graph used for the supervised update.
pub const SUPERVISED_PAIRS: usize = 32;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `2d -> h1 -> h2 -> 1` with ReLU hidden layers and a sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePredictor {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

/// Activations of a batched pair forward, needed for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTape {
    pairs: usize,
    input: Array2<f64>,
    pre1: Array2<f64>,
    h1: Array2<f64>,
    pre2: Array2<f64>,
    h2: Array2<f64>,
    /// Sigmoid outputs, both orders: rows `0..P` are `(a, b)`, `P..2P` are `(b, a)`.
    out: Array1<f64>,
}

impl EdgePredictor {
    pub fn new(latent_dim: usize, rng: &mut impl Rng) -> Self {
        Self::with_widths(latent_dim, 128, 64, rng)
    }

    pub fn with_widths(latent_dim: usize, h1: usize, h2: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: glorot(2 * latent_dim, h1, rng),
            b1: Array1::zeros(h1),
            w2: glorot(h1, h2, rng),
            b2: Array1::zeros(h2),
            w3: glorot(h2, 1, rng),
            b3: Array1::zeros(1),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.w1.nrows() / 2
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.len()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.len()),
            w3: Array2::zeros(self.w3.raw_dim()),
            b3: Array1::zeros(1),
        }
    }

    pub fn add_assign(&mut self, other: &EdgePredictor) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Symmetric edge probability for one pair of latent vectors.
    pub fn edge_prob(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let left = Array2::from_shape_vec((1, a.len()), a.to_vec())
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let right = Array2::from_shape_vec((1, b.len()), b.to_vec())
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let (p, _) = self.forward_pairs(left.view(), right.view())?;
        Ok(p[0])
    }

    /// Probabilities for row-aligned pairs `(left[i], right[i])`.
    pub fn forward_pairs(&self, left: ArrayView2<'_, f64>, right: ArrayView2<'_, f64>) -> Result<(Array1<f64>, PairTape)> {
        let d = self.latent_dim();
        if left.ncols() != d || right.ncols() != d || left.nrows() != right.nrows() {
            return Err(Error::Dimension(format!(
                "edge predictor expects two {d}-column matrices with equal rows, got {:?} and {:?}",
                left.dim(),
                right.dim()
            )));
        }
        let pairs = left.nrows();
        let forward = concatenate![Axis(1), left, right];
        let backward = concatenate![Axis(1), right, left];
        let input = concatenate![Axis(0), forward, backward];
        let pre1 = input.dot(&self.w1) + &self.b1;
        let h1 = pre1.mapv(|x| x.max(0.0));
        let pre2 = h1.dot(&self.w2) + &self.b2;
        let h2 = pre2.mapv(|x| x.max(0.0));
        let out = (h2.dot(&self.w3) + &self.b3).column(0).mapv(sigmoid);
        let probs = Array1::from_shape_fn(pairs, |i| 0.5 * (out[i] + out[pairs + i]));
        let tape = PairTape {
            pairs,
            input,
            pre1,
            h1,
            pre2,
            h2,
            out,
        };
        Ok((probs, tape))
    }

    /// Parameter gradients given d loss / d probability for every pair.
    pub fn backward_pairs(&self, tape: &PairTape, dprobs: &[f64]) -> EdgePredictor {
        assert_eq!(dprobs.len(), tape.pairs, "one gradient per pair");
        let p = tape.pairs;
        let dlogit = Array2::from_shape_fn((2 * p, 1), |(r, _)| {
            let s = tape.out[r];
            0.5 * dprobs[r % p] * s * (1.0 - s)
        });
        let mut g = self.zeros_like();
        g.w3 += &tape.h2.t().dot(&dlogit);
        g.b3 += &dlogit.sum_axis(Axis(0));
        let mut dh2 = dlogit.dot(&self.w3.t());
        dh2.zip_mut_with(&tape.pre2, |d, &z| {
            if z <= 0.0 {
                *d = 0.0
            }
        });
        g.w2 += &tape.h1.t().dot(&dh2);
        g.b2 += &dh2.sum_axis(Axis(0));
        let mut dh1 = dh2.dot(&self.w2.t());
        dh1.zip_mut_with(&tape.pre1, |d, &z| {
            if z <= 0.0 {
                *d = 0.0
            }
        });
        g.w1 += &tape.input.t().dot(&dh1);
        g.b1 += &dh1.sum_axis(Axis(0));
        g
    }
}

impl ParamSet for EdgePredictor {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
            self.w3.as_slice().unwrap(),
            self.b3.as_slice().unwrap(),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
            self.w3.as_slice_mut().unwrap(),
            self.b3.as_slice_mut().unwrap(),
        ]
    }

    fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            ("edge.w1".into(), self.w1.shape().to_vec()),
            ("edge.b1".into(), self.b1.shape().to_vec()),
            ("edge.w2".into(), self.w2.shape().to_vec()),
            ("edge.b2".into(), self.b2.shape().to_vec()),
            ("edge.w3".into(), self.w3.shape().to_vec()),
            ("edge.b3".into(), self.b3.shape().to_vec()),
        ]
    }
}

/// A straight-through Bernoulli draw: the forward value is `hard`, gradients
/// flow through `soft`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct STEdgeSample {
    pub hard: bool,
    pub soft: f64,
    pub tau: f64,
    /// Probability after clamping.
    pub prob: f64,
    /// Difference of the two Gumbel perturbations.
    pub noise: f64,
    clamped: bool,
}

impl STEdgeSample {
    /// Rebuilds a sample for a given probability and fixed noise.
    pub fn with_noise(prob: f64, noise: f64, tau: f64) -> Self {
        let clamped_prob = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let z = clamped_prob.ln() - (1.0 - clamped_prob).ln() + noise;
        Self {
            hard: z > 0.0,
            soft: sigmoid(z / tau),
            tau,
            prob: clamped_prob,
            noise,
            clamped: clamped_prob != prob,
        }
    }

    pub fn weight(&self) -> f64 {
        if self.hard {
            1.0
        } else {
            0.0
        }
    }

    /// d soft / d prob; zero when the probability was clamped.
    pub fn soft_grad(&self) -> f64 {
        if self.clamped {
            return 0.0;
        }
        self.soft * (1.0 - self.soft) / self.tau / (self.prob * (1.0 - self.prob))
    }
}

fn gumbel(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random();
    -(-u.max(f64::MIN_POSITIVE).ln()).ln()
}

pub fn st_sample(prob: f64, tau: f64, rng: &mut impl Rng) -> STEdgeSample {
    let noise = gumbel(rng) - gumbel(rng);
    STEdgeSample::with_noise(prob, noise, tau)
}

/// One sampled candidate pair between the two parts, by original node ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCandidate {
    pub src: usize,
    pub dst: usize,
    pub sample: STEdgeSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpConnection {
    /// `(source id, destination id)` pairs whose hard sample is 1.
    pub edges: Vec<(usize, usize)>,
    /// Every pair in `U_pi x U`, sampled or not, in row-major order.
    pub candidates: Vec<EdgeCandidate>,
    pub tape: Option<PairTape>,
}

/// Samples an edge for every pair of boundary nodes of the two parts.
///
/// `latents_*` are the last-layer node features of the parts' parent graphs,
/// indexed by original node id.
pub fn connect_ep(
    src: &GraphPart<'_>,
    dst: &GraphPart<'_>,
    latents_src: &Array2<f64>,
    latents_dst: &Array2<f64>,
    predictor: &EdgePredictor,
    tau: f64,
    rng: &mut impl Rng,
) -> Result<EpConnection> {
    let us = src.boundary();
    let ud = dst.boundary();
    if us.is_empty() || ud.is_empty() {
        return Ok(EpConnection {
            edges: Vec::new(),
            candidates: Vec::new(),
            tape: None,
        });
    }
    for (part, lat) in [(src, latents_src), (dst, latents_dst)] {
        if lat.nrows() != part.origin().num_nodes() {
            return Err(Error::FeatureRows {
                rows: lat.nrows(),
                num_nodes: part.origin().num_nodes(),
            });
        }
    }
    let pairs: Vec<(usize, usize)> = us.iter().flat_map(|a| ud.iter().map(move |b| (a, b))).collect();
    let left = latents_src.select(Axis(0), &pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let right = latents_dst.select(Axis(0), &pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let (probs, tape) = predictor.forward_pairs(left.view(), right.view())?;
    let candidates: Vec<EdgeCandidate> = pairs
        .iter()
        .zip(probs.iter())
        .map(|(&(a, b), &p)| EdgeCandidate {
            src: a,
            dst: b,
            sample: st_sample(p, tau, rng),
        })
        .collect();
    let edges = candidates
        .iter()
        .filter(|c| c.sample.hard)
        .map(|c| (c.src, c.dst))
        .collect();
    Ok(EpConnection {
        edges,
        candidates,
        tape: Some(tape),
    })
}

/// Labeled node pairs `(u, v, connected)` from one graph: up to
/// [`SUPERVISED_PAIRS`] existing edges and as many non-edges.
///
/// A graph without edges contributes up to [`SUPERVISED_PAIRS`] non-edges.
pub fn sample_supervised_pairs(g: &GraphInstance, rng: &mut impl Rng) -> Vec<(usize, usize, bool)> {
    let n = g.num_nodes();
    let m = g.num_edges().min(SUPERVISED_PAIRS);
    let mut out = Vec::with_capacity(2 * m.max(1));
    for i in index::sample(rng, g.num_edges(), m).into_vec() {
        let e = g.edges()[i];
        out.push((e.u, e.v, true));
    }
    let total_pairs = n * n.saturating_sub(1) / 2;
    let non_edges = total_pairs - g.num_edges();
    let want = if g.num_edges() == 0 { SUPERVISED_PAIRS } else { m }.min(non_edges);
    if want == 0 {
        return out;
    }
    if non_edges <= 4 * want {
        let all: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !g.has_edge(u, v))
            .collect();
        for i in index::sample(rng, all.len(), want).into_vec() {
            out.push((all[i].0, all[i].1, false));
        }
    } else {
        let mut seen = HashSet::new();
        while seen.len() < want {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u == v || g.has_edge(u, v) {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if seen.insert(key) {
                out.push((key.0, key.1, false));
            }
        }
    }
    out
}

/// Mean binary cross-entropy of pair probabilities and its gradient.
pub fn bce(probs: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    const EPS: f64 = 1e-12;
    let n = probs.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels) {
        let pc = p.clamp(EPS, 1.0 - EPS);
        loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        grad.push((pc - y) / (pc * (1.0 - pc)) / n);
    }
    (loss / n, grad)
}

/// One Adam step on pair-classification BCE. Returns the loss before the step.
pub fn supervised_ep_update(
    predictor: &mut EdgePredictor,
    left: ArrayView2<'_, f64>,
    right: ArrayView2<'_, f64>,
    labels: &[f64],
    opt: &mut Adam,
) -> Result<f64> {
    if labels.len() != left.nrows() {
        return Err(Error::Dimension("one label per pair required".into()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let (probs, tape) = predictor.forward_pairs(left, right)?;
    let (loss, dp) = bce(probs.as_slice().unwrap(), labels);
    let grads = predictor.backward_pairs(&tape, &dp);
    opt.step(predictor, &grads);
    Ok(loss)
}
