use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphInstance;
use crate::nn::batch::{GraphBatch, Propagation};
use crate::nn::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Symmetric-normalized convolution with inserted self-loops.
    Gcn,
    /// Convolution without self-loops plus a learnable skip projection.
    Gcs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Mean,
    Sum,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub layers: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub num_classes: usize,
    pub readout: Readout,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(arch: Arch, layers: usize, input_dim: usize, num_classes: usize) -> Self {
        Self {
            arch,
            layers,
            input_dim,
            hidden: 128,
            head_hidden: 128,
            num_classes,
            readout: Readout::Mean,
            dropout: 0.5,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.head_hidden == 0 {
            return Err(Error::Config("layer counts and widths must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnLayer {
    /// `[d_in x d_out]`, applied to aggregated neighbor features.
    pub weight: Array2<f64>,
    /// `[d_in x d_out]` skip projection (GCS only).
    pub skip: Option<Array2<f64>>,
}

/// All trainable weights of the message-passing stack and the MLP head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<GnnLayer>,
    pub head_w1: Array2<f64>,
    pub head_b1: Array1<f64>,
    pub head_w2: Array2<f64>,
    pub head_b2: Array1<f64>,
}

pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || (rng.random::<f64>() * 2.0 - 1.0) * a)
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut d_in = cfg.input_dim;
        for _ in 0..cfg.layers {
            let weight = glorot(d_in, cfg.hidden, rng);
            let skip = match cfg.arch {
                Arch::Gcn => None,
                Arch::Gcs => Some(glorot(d_in, cfg.hidden, rng)),
            };
            layers.push(GnnLayer { weight, skip });
            d_in = cfg.hidden;
        }
        Self {
            layers,
            head_w1: glorot(cfg.hidden, cfg.head_hidden, rng),
            head_b1: Array1::zeros(cfg.head_hidden),
            head_w2: glorot(cfg.head_hidden, cfg.num_classes, rng),
            head_b2: Array1::zeros(cfg.num_classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| GnnLayer {
                    weight: z2(&l.weight),
                    skip: l.skip.as_ref().map(z2),
                })
                .collect(),
            head_w1: z2(&self.head_w1),
            head_b1: Array1::zeros(self.head_b1.len()),
            head_w2: z2(&self.head_w2),
            head_b2: Array1::zeros(self.head_b2.len()),
        }
    }

    /// `self += other`
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice().unwrap());
            if let Some(s) = &l.skip {
                out.push(s.as_slice().unwrap());
            }
        }
        out.push(self.head_w1.as_slice().unwrap());
        out.push(self.head_b1.as_slice().unwrap());
        out.push(self.head_w2.as_slice().unwrap());
        out.push(self.head_b2.as_slice().unwrap());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().unwrap());
            if let Some(s) = &mut l.skip {
                out.push(s.as_slice_mut().unwrap());
            }
        }
        out.push(self.head_w1.as_slice_mut().unwrap());
        out.push(self.head_b1.as_slice_mut().unwrap());
        out.push(self.head_w2.as_slice_mut().unwrap());
        out.push(self.head_b2.as_slice_mut().unwrap());
        out
    }

    fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("gnn.{i}.weight"), l.weight.shape().to_vec()));
            if let Some(s) = &l.skip {
                out.push((format!("gnn.{i}.skip"), s.shape().to_vec()));
            }
        }
        out.push(("head.w1".into(), self.head_w1.shape().to_vec()));
        out.push(("head.b1".into(), self.head_b1.shape().to_vec()));
        out.push(("head.w2".into(), self.head_w2.shape().to_vec()));
        out.push(("head.b2".into(), self.head_b2.shape().to_vec()));
        out
    }
}

/// Cached activations of the message-passing stack and readout.
#[derive(Debug, Clone)]
pub struct EncoderTape {
    prop: Propagation,
    offsets: Vec<usize>,
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// `Â X` for each layer.
    aggregated: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    /// Last-layer node features (post-ReLU), the readout input.
    pub node_out: Array2<f64>,
    /// Row index chosen per (graph, column) by max readout.
    argmax: Option<Array2<usize>>,
    /// One readout vector per graph.
    pub reprs: Array2<f64>,
}

impl EncoderTape {
    pub fn num_graphs(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Last-layer node features of graph `i`.
    pub fn latents_of(&self, i: usize) -> Array2<f64> {
        self.node_out
            .slice_axis(Axis(0), (self.offsets[i]..self.offsets[i + 1]).into())
            .to_owned()
    }
}

#[derive(Debug, Clone)]
pub struct HeadTape {
    input: Array2<f64>,
    hidden_pre: Array2<f64>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)); absent in eval mode.
    mask: Option<Array2<f64>>,
    hidden: Array2<f64>,
    pub logits: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub encoder: EncoderTape,
    pub head: HeadTape,
}

impl ForwardTape {
    pub fn logits(&self) -> &Array2<f64> {
        &self.head.logits
    }

    /// Sign pattern of every ReLU pre-activation. Two tapes with the same
    /// pattern lie in the same linear piece of the network.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.encoder
            .pre
            .iter()
            .chain(std::iter::once(&self.head.hidden_pre))
            .flat_map(|z| z.iter().map(|&v| v > 0.0))
            .collect()
    }
}

/// Gradients that are not parameter gradients.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    /// d loss / d (last-layer node features), one row per batch node.
    pub node_out: Array2<f64>,
    /// d loss / d weight for each requested batch edge, in request order.
    pub edge_weights: Vec<f64>,
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

fn relu_grad(pre: &Array2<f64>, upstream: &mut Array2<f64>) {
    ndarray::Zip::from(upstream).and(pre).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
}

fn row_dot(a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize) -> f64 {
    a.row(i).dot(&b.row(j))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, rng);
        Ok(Self { config, params })
    }

    /// One GCN layer: `Â X Θ` with self-loops and symmetric normalization.
    pub fn gcn_layer(g: &GraphInstance, x: &Array2<f64>, weight: &Array2<f64>) -> Result<Array2<f64>> {
        check_layer_dims(g, x, weight, None)?;
        let batch = GraphBatch::single(g);
        let prop = Propagation::build(g.num_nodes(), batch.edges(), Arch::Gcn);
        Ok(prop.apply(x).dot(weight))
    }

    /// One GCS layer: `X Θ_skip + D^{-1/2} A D^{-1/2} X Θ`; isolated nodes
    /// only receive the skip term.
    pub fn gcs_layer(
        g: &GraphInstance,
        x: &Array2<f64>,
        weight: &Array2<f64>,
        skip: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        check_layer_dims(g, x, weight, Some(skip))?;
        let batch = GraphBatch::single(g);
        let prop = Propagation::build(g.num_nodes(), batch.edges(), Arch::Gcs);
        Ok(x.dot(skip) + prop.apply(x).dot(weight))
    }

    pub fn encode(&self, batch: &GraphBatch) -> Result<EncoderTape> {
        if batch.features().ncols() != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "graph features have {} columns, model expects {}",
                batch.features().ncols(),
                self.config.input_dim
            )));
        }
        let offsets = batch.offsets().to_vec();
        if offsets.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::EmptyGraph);
        }
        let prop = Propagation::build(batch.num_nodes(), batch.edges(), self.config.arch);
        let l = self.params.layers.len();
        let mut inputs = Vec::with_capacity(l);
        let mut aggregated = Vec::with_capacity(l);
        let mut pre = Vec::with_capacity(l);
        let mut x = batch.features().clone();
        for layer in &self.params.layers {
            let m = prop.apply(&x);
            let mut z = m.dot(&layer.weight);
            if let Some(skip) = &layer.skip {
                z += &x.dot(skip);
            }
            let next = relu(&z);
            inputs.push(x);
            aggregated.push(m);
            pre.push(z);
            x = next;
        }
        let node_out = x;
        let b = offsets.len() - 1;
        let d = node_out.ncols();
        let mut reprs = Array2::zeros((b, d));
        let mut argmax = None;
        match self.config.readout {
            Readout::Mean | Readout::Sum => {
                for g in 0..b {
                    let rows = node_out.slice_axis(Axis(0), (offsets[g]..offsets[g + 1]).into());
                    let mut r = rows.sum_axis(Axis(0));
                    if self.config.readout == Readout::Mean {
                        r /= (offsets[g + 1] - offsets[g]) as f64;
                    }
                    reprs.row_mut(g).assign(&r);
                }
            }
            Readout::Max => {
                let mut idx = Array2::zeros((b, d));
                for g in 0..b {
                    for c in 0..d {
                        let mut best = offsets[g];
                        for v in offsets[g] + 1..offsets[g + 1] {
                            // strict comparison keeps the lowest id on ties
                            if node_out[[v, c]] > node_out[[best, c]] {
                                best = v;
                            }
                        }
                        idx[[g, c]] = best;
                        reprs[[g, c]] = node_out[[best, c]];
                    }
                }
                argmax = Some(idx);
            }
        }
        Ok(EncoderTape {
            prop,
            offsets,
            inputs,
            aggregated,
            pre,
            node_out,
            argmax,
            reprs,
        })
    }

    /// MLP head on graph representations; dropout on the hidden layer in
    /// training mode only.
    pub fn head(&self, reprs: &Array2<f64>, mode: Mode, rng: &mut impl Rng) -> HeadTape {
        let p = &self.params;
        let hidden_pre = reprs.dot(&p.head_w1) + &p.head_b1;
        let mut hidden = relu(&hidden_pre);
        let mask = match mode {
            Mode::Train if self.config.dropout > 0.0 => {
                let keep = 1.0 - self.config.dropout;
                let m = Array2::from_shape_simple_fn(hidden.raw_dim(), || {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                hidden *= &m;
                Some(m)
            }
            _ => None,
        };
        let logits = hidden.dot(&p.head_w2) + &p.head_b2;
        HeadTape {
            input: reprs.clone(),
            hidden_pre,
            mask,
            hidden,
            logits,
        }
    }

    pub fn forward(&self, batch: &GraphBatch, mode: Mode, rng: &mut impl Rng) -> Result<ForwardTape> {
        let encoder = self.encode(batch)?;
        let head = self.head(&encoder.reprs, mode, rng);
        Ok(ForwardTape { encoder, head })
    }

    /// Eval-mode logits for a batch.
    pub fn predict(&self, batch: &GraphBatch) -> Result<Array2<f64>> {
        let encoder = self.encode(batch)?;
        let p = &self.params;
        let hidden = relu(&(encoder.reprs.dot(&p.head_w1) + &p.head_b1));
        Ok(hidden.dot(&p.head_w2) + &p.head_b2)
    }

    /// Backpropagates `dlogits` through the head, accumulating into `grads`;
    /// returns d loss / d reprs.
    pub fn head_backward(&self, tape: &HeadTape, dlogits: &Array2<f64>, grads: &mut ModelParams) -> Array2<f64> {
        let p = &self.params;
        grads.head_w2 += &tape.hidden.t().dot(dlogits);
        grads.head_b2 += &dlogits.sum_axis(Axis(0));
        let mut dh = dlogits.dot(&p.head_w2.t());
        if let Some(m) = &tape.mask {
            dh *= m;
        }
        relu_grad(&tape.hidden_pre, &mut dh);
        grads.head_w1 += &tape.input.t().dot(&dh);
        grads.head_b1 += &dh.sum_axis(Axis(0));
        dh.dot(&p.head_w1.t())
    }

    /// Backpropagates d loss / d reprs through readout and the
    /// message-passing stack, accumulating into `grads`.
    ///
    /// `edge_requests` lists batch edge indices whose weight gradient is
    /// wanted.
    pub fn encoder_backward(
        &self,
        tape: &EncoderTape,
        batch: &GraphBatch,
        d_reprs: &Array2<f64>,
        grads: &mut ModelParams,
        edge_requests: &[usize],
    ) -> Result<EncoderGrads> {
        if d_reprs.nrows() != tape.num_graphs() || d_reprs.ncols() != tape.node_out.ncols() {
            return Err(Error::Dimension("readout gradient does not match tape".into()));
        }
        let offsets = &tape.offsets;
        let mut dx = Array2::zeros(tape.node_out.raw_dim());
        match self.config.readout {
            Readout::Mean | Readout::Sum => {
                for g in 0..tape.num_graphs() {
                    let scale = if self.config.readout == Readout::Mean {
                        1.0 / (offsets[g + 1] - offsets[g]) as f64
                    } else {
                        1.0
                    };
                    let row = &d_reprs.row(g) * scale;
                    for v in offsets[g]..offsets[g + 1] {
                        dx.row_mut(v).assign(&row);
                    }
                }
            }
            Readout::Max => {
                let idx = tape.argmax.as_ref().expect("max readout tape");
                for ((g, c), &v) in idx.indexed_iter() {
                    dx[[v, c]] += d_reprs[[g, c]];
                }
            }
        }
        let node_out_grad = dx.clone();

        let edges = batch.edges();
        let want_edges = !edge_requests.is_empty();
        let mut edge_grads = vec![0.0; edge_requests.len()];
        let deg = &tape.prop.deg;

        for (li, layer) in self.params.layers.iter().enumerate().rev() {
            let mut dz = dx;
            relu_grad(&tape.pre[li], &mut dz);
            let x = &tape.inputs[li];
            let m = &tape.aggregated[li];
            let gl = &mut grads.layers[li];
            gl.weight += &m.t().dot(&dz);
            let dm = dz.dot(&layer.weight.t());
            let need_dx = li > 0 || want_edges;
            let a_dm = if need_dx { Some(tape.prop.apply(&dm)) } else { None };

            if want_edges {
                let a_dm = a_dm.as_ref().unwrap();
                // S_v = dM_v . M_v + X_v . (Â dM)_v collects the degree dependence
                let s = |v: usize| row_dot(&dm, v, m, v) + row_dot(x, v, a_dm, v);
                for (out, &ei) in edge_grads.iter_mut().zip(edge_requests) {
                    let e = edges[ei];
                    let (du, dv) = (deg[e.u], deg[e.v]);
                    if du <= 0.0 || dv <= 0.0 {
                        continue;
                    }
                    let direct = (row_dot(&dm, e.u, x, e.v) + row_dot(&dm, e.v, x, e.u)) / (du * dv).sqrt();
                    *out += direct - 0.5 * s(e.u) / du - 0.5 * s(e.v) / dv;
                }
            }

            if let Some(skip) = &layer.skip {
                grads.layers[li].skip.as_mut().unwrap().scaled_add(1.0, &x.t().dot(&dz));
                if li > 0 {
                    let mut next = a_dm.unwrap();
                    next += &dz.dot(&skip.t());
                    dx = next;
                } else {
                    dx = Array2::zeros((0, 0));
                }
            } else if li > 0 {
                dx = a_dm.unwrap();
            } else {
                dx = Array2::zeros((0, 0));
            }
        }
        Ok(EncoderGrads {
            node_out: node_out_grad,
            edge_weights: edge_grads,
        })
    }

    /// Full backward pass from logits gradients.
    pub fn backward(
        &self,
        tape: &ForwardTape,
        batch: &GraphBatch,
        dlogits: &Array2<f64>,
        edge_requests: &[usize],
    ) -> Result<(ModelParams, EncoderGrads)> {
        if dlogits.dim() != tape.head.logits.dim() {
            return Err(Error::Dimension("logit gradient does not match tape".into()));
        }
        let mut grads = self.params.zeros_like();
        let d_reprs = self.head_backward(&tape.head, dlogits, &mut grads);
        let enc = self.encoder_backward(&tape.encoder, batch, &d_reprs, &mut grads, edge_requests)?;
        Ok((grads, enc))
    }
}

fn check_layer_dims(
    g: &GraphInstance,
    x: &Array2<f64>,
    weight: &Array2<f64>,
    skip: Option<&Array2<f64>>,
) -> Result<()> {
    if x.nrows() != g.num_nodes() {
        return Err(Error::FeatureRows {
            rows: x.nrows(),
            num_nodes: g.num_nodes(),
        });
    }
    if weight.nrows() != x.ncols() {
        return Err(Error::Dimension(format!(
            "features have {} columns, weight expects {}",
            x.ncols(),
            weight.nrows()
        )));
    }
    if let Some(s) = skip {
        if s.dim() != weight.dim() {
            return Err(Error::Dimension("skip and neighbor weights differ in shape".into()));
        }
    }
    Ok(())
}
