//! Training loop: one supervised term on the original batch plus one
//! augmented term, early stopping on validation accuracy and learning-rate
//! decay on validation loss, both counted in iterations.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{
    graph_transplant, partial_k_hop, sample_beta, sample_mix_params, select_salient_anchors, Connector, Donor,
    MixConfig, SourceSelection, Transplant, TransplantOptions, TransplantResult,
};
use crate::baselines::{mixup_with, BaselineKind};
use crate::dataset::{Dataset, FeatureStats, SplitSpec};
use crate::edge_predictor::{sample_supervised_pairs, supervised_ep_update, EdgePredictor};
use crate::error::{Error, Result};
use crate::graph::GraphInstance;
use crate::metrics::{summarize, EvalMetrics};
use crate::nn::{
    batch_cross_entropy, mixed_target, one_hot, softmax, Adam, Arch, Checkpoint, GraphBatch, Mode, Model,
    ModelConfig, Readout,
};
use crate::saliency::SaliencyVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentMode {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "transplant-dp")]
    TransplantDp,
    #[serde(rename = "transplant-ep")]
    TransplantEp,
    #[serde(rename = "dropn")]
    DropN,
    #[serde(rename = "perme")]
    PermE,
    #[serde(rename = "maskn")]
    MaskN,
    #[serde(rename = "subg")]
    SubG,
    #[serde(rename = "manifold-mixup")]
    ManifoldMixup,
}

impl AugmentMode {
    pub const ALL: [AugmentMode; 8] = [
        AugmentMode::None,
        AugmentMode::TransplantDp,
        AugmentMode::TransplantEp,
        AugmentMode::DropN,
        AugmentMode::PermE,
        AugmentMode::MaskN,
        AugmentMode::SubG,
        AugmentMode::ManifoldMixup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentMode::None => "none",
            AugmentMode::TransplantDp => "transplant-dp",
            AugmentMode::TransplantEp => "transplant-ep",
            AugmentMode::DropN => "dropn",
            AugmentMode::PermE => "perme",
            AugmentMode::MaskN => "maskn",
            AugmentMode::SubG => "subg",
            AugmentMode::ManifoldMixup => "manifold-mixup",
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            AugmentMode::DropN => Some(BaselineKind::DropN),
            AugmentMode::PermE => Some(BaselineKind::PermE),
            AugmentMode::MaskN => Some(BaselineKind::MaskN),
            AugmentMode::SubG => Some(BaselineKind::SubG),
            _ => None,
        }
    }

    pub fn is_transplant(self) -> bool {
        matches!(self, AugmentMode::TransplantDp | AugmentMode::TransplantEp)
    }
}

impl fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown augment mode {s:?}")))
    }
}

/// Ablation switches for the transplant modes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    pub size_based_label: bool,
    pub scattered_nodes: bool,
    pub random_subgraph: bool,
    pub no_cross_edges: bool,
}

impl FromStr for Ablations {
    type Err = Error;

    /// Comma-separated flag names; empty or `none` means no ablation.
    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablations::default();
        for flag in s.split(',').map(str::trim).filter(|f| !f.is_empty() && *f != "none") {
            match flag {
                "size-based-label" => a.size_based_label = true,
                "scattered-nodes" => a.scattered_nodes = true,
                "random-subgraph" => a.random_subgraph = true,
                "no-cross-edges" => a.no_cross_edges = true,
                _ => return Err(Error::Config(format!("unknown ablation {flag:?}"))),
            }
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub layers: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub readout: Readout,
    pub dropout: f64,
    pub augment: AugmentMode,
    pub mix: MixConfig,
    pub ablations: Ablations,
    /// Baseline perturbation ratio; `None` uses the baseline's default.
    pub baseline_ratio: Option<f64>,
    pub mixup_alpha: f64,
    pub edge_hidden: [usize; 2],
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Iterations without validation-accuracy improvement before stopping.
    pub patience: usize,
    pub lr_decay: f64,
    /// Iterations without validation-loss improvement before decaying.
    pub lr_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Gcs,
            layers: 3,
            hidden: 128,
            head_hidden: 128,
            readout: Readout::Mean,
            dropout: 0.5,
            augment: AugmentMode::None,
            mix: MixConfig::default(),
            ablations: Ablations::default(),
            baseline_ratio: None,
            mixup_alpha: 2.0,
            edge_hidden: [128, 64],
            lr: 5e-4,
            batch_size: 128,
            max_epochs: 1000,
            patience: 1500,
            lr_decay: 0.5,
            lr_patience: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, input_dim: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            layers: self.layers,
            input_dim,
            hidden: self.hidden,
            head_hidden: self.head_hidden,
            num_classes,
            readout: self.readout,
            dropout: self.dropout,
        }
    }

    /// Connector actually used by the transplant modes.
    pub fn connector(&self) -> Connector {
        match self.augment {
            _ if self.ablations.no_cross_edges => Connector::None,
            AugmentMode::TransplantEp => Connector::Ep,
            _ => Connector::Dp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.lr_patience == 0 {
            return Err(Error::Config("batch size, epochs and patience values must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("learning rate must be positive and decay in (0, 1]".into()));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::Config("mixup alpha must be positive".into()));
        }
        if let Some(r) = self.baseline_ratio {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("baseline ratio {r} outside [0, 1]")));
            }
        }
        self.mix.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Mean loss on the original graphs.
    pub original_loss: f64,
    /// Mean loss of the augmented term, if the mode has one.
    pub augmented_loss: Option<f64>,
    /// Edge predictor BCE before its supervised step.
    pub edge_loss: Option<f64>,
    /// Correct train-mode predictions on the original graphs.
    pub correct: usize,
    pub graphs: usize,
    pub transplants: usize,
    pub skipped: usize,
}

impl StepReport {
    pub fn total_loss(&self) -> f64 {
        self.original_loss + self.augmented_loss.unwrap_or(0.0)
    }
}

/// Adds the learned connector's candidate edges of transplant `r` to graph
/// `i` of `batch` and returns their batch edge indices in candidate order.
///
/// Sampled edges are already present with weight 1. Unsampled candidates
/// are appended with weight 0, which leaves the forward pass unchanged but
/// exposes their weight gradient. With `relaxed`, every candidate instead
/// carries its soft value.
pub fn candidate_edges(batch: &mut GraphBatch, i: usize, r: &TransplantResult, relaxed: bool) -> Vec<usize> {
    let Some(s) = &r.surrogates else {
        return Vec::new();
    };
    s.candidates
        .iter()
        .map(|c| {
            let (a, b) = r.mixed_ids(c.src, c.dst);
            let idx = if c.sample.hard {
                batch.edge_index(i, a, b).expect("sampled edge present in mixed graph")
            } else {
                batch.push_edge(i, a, b, 0.0)
            };
            if relaxed {
                batch.set_weight(idx, c.sample.soft);
            }
            idx
        })
        .collect()
}

/// Straight-through gradient for the edge predictor: each candidate's edge
/// weight gradient is routed through its soft sample.
pub fn predictor_grads(predictor: &EdgePredictor, r: &TransplantResult, edge_grads: &[f64]) -> Option<EdgePredictor> {
    let s = r.surrogates.as_ref()?;
    let dprobs: Vec<f64> = s
        .candidates
        .iter()
        .zip(edge_grads)
        .map(|(c, g)| g * c.sample.soft_grad())
        .collect();
    Some(predictor.backward_pairs(&s.tape, &dprobs))
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub predictor: Option<EdgePredictor>,
    opt: Adam,
    edge_opt: Adam,
    rng: ChaCha8Rng,
    /// When set, the next step's transplants are kept in `captured`.
    pub capture: bool,
    pub captured: Vec<TransplantResult>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, input_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(cfg.model_config(input_dim, num_classes), &mut rng)?;
        let predictor = (cfg.augment == AugmentMode::TransplantEp).then(|| {
            EdgePredictor::with_widths(cfg.hidden, cfg.edge_hidden[0], cfg.edge_hidden[1], &mut rng)
        });
        Ok(Self {
            opt: Adam::new(cfg.lr),
            edge_opt: Adam::new(cfg.lr),
            cfg,
            model,
            predictor,
            rng,
            capture: false,
            captured: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.opt.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt.lr = lr;
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// One optimization step on `graphs`.
    pub fn train_step(&mut self, graphs: &[&GraphInstance]) -> Result<StepReport> {
        if graphs.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let b = graphs.len();
        let c = self.model.config.num_classes;
        let scale = 1.0 / b as f64;
        let batch = GraphBatch::new(graphs);
        let enc = self.model.encode(&batch)?;
        let head = self.model.head(&enc.reprs, Mode::Train, &mut self.rng);
        let mut targets = Array2::zeros((b, c));
        for (i, g) in graphs.iter().enumerate() {
            targets.row_mut(i).assign(&one_hot(g.label(), c));
        }
        let (losses, dlogits) = batch_cross_entropy(&head.logits, &targets, scale);
        let correct = head
            .logits
            .rows()
            .into_iter()
            .zip(graphs)
            .filter(|(r, g)| {
                let best = (0..c).fold(0, |k, j| if r[j] > r[k] { j } else { k });
                best == g.label()
            })
            .count();
        let mut grads = self.model.params.zeros_like();
        let mut d_reprs = self.model.head_backward(&head, &dlogits, &mut grads);
        let mut report = StepReport {
            original_loss: losses.iter().sum::<f64>() * scale,
            correct,
            graphs: b,
            ..Default::default()
        };

        if self.cfg.augment == AugmentMode::ManifoldMixup {
            let mut perm: Vec<usize> = (0..b).collect();
            perm.shuffle(&mut self.rng);
            let mut mixed = Array2::zeros(enc.reprs.raw_dim());
            let mut mixed_targets = Array2::zeros((b, c));
            let mut lams = Vec::with_capacity(b);
            for i in 0..b {
                let lam = sample_beta(self.cfg.mixup_alpha, &mut self.rng);
                let (r, y) = mixup_with(
                    &enc.reprs.row(i).to_owned(),
                    &enc.reprs.row(perm[i]).to_owned(),
                    graphs[i].label(),
                    graphs[perm[i]].label(),
                    c,
                    lam,
                );
                mixed.row_mut(i).assign(&r);
                mixed_targets.row_mut(i).assign(&y);
                lams.push(lam);
            }
            let mix_head = self.model.head(&mixed, Mode::Train, &mut self.rng);
            let (mix_losses, dmix) = batch_cross_entropy(&mix_head.logits, &mixed_targets, scale);
            let d_mixed = self.model.head_backward(&mix_head, &dmix, &mut grads);
            for i in 0..b {
                let lam = lams[i];
                let row = d_mixed.row(i);
                d_reprs.row_mut(i).scaled_add(1.0 - lam, &row);
                d_reprs.row_mut(perm[i]).scaled_add(lam, &row);
            }
            report.augmented_loss = Some(mix_losses.iter().sum::<f64>() * scale);
        }

        let enc_grads = self.model.encoder_backward(&enc, &batch, &d_reprs, &mut grads, &[])?;

        if let Some(kind) = self.cfg.augment.baseline() {
            let ratio = self.cfg.baseline_ratio.unwrap_or(kind.default_ratio());
            let aug: Vec<GraphInstance> = graphs
                .iter()
                .map(|g| kind.apply(g, ratio, &mut self.rng))
                .collect::<Result<_>>()?;
            let refs: Vec<&GraphInstance> = aug.iter().collect();
            let aug_batch = GraphBatch::new(&refs);
            let tape = self.model.forward(&aug_batch, Mode::Train, &mut self.rng)?;
            let (aug_losses, daug) = batch_cross_entropy(tape.logits(), &targets, scale);
            let (g2, _) = self.model.backward(&tape, &aug_batch, &daug, &[])?;
            grads.add_assign(&g2);
            report.augmented_loss = Some(aug_losses.iter().sum::<f64>() * scale);
        }

        if self.cfg.augment.is_transplant() {
            let saliency: Vec<SaliencyVector> = (0..b)
                .map(|i| SaliencyVector::from_gradient(&batch.rows_of(&enc_grads.node_out, i)))
                .collect();
            let latents: Vec<Array2<f64>> = if self.predictor.is_some() {
                (0..b).map(|i| enc.latents_of(i)).collect()
            } else {
                Vec::new()
            };
            if let Some(psi) = self.predictor.as_mut() {
                report.edge_loss = Some(supervised_step(psi, &mut self.edge_opt, graphs, &latents, &mut self.rng)?);
            }
            self.transplant_term(graphs, &saliency, &latents, &mut grads, &mut report)?;
        }

        self.opt.step(&mut self.model.params, &grads);
        Ok(report)
    }

    fn transplant_term(
        &mut self,
        graphs: &[&GraphInstance],
        saliency: &[SaliencyVector],
        latents: &[Array2<f64>],
        grads: &mut crate::nn::ModelParams,
        report: &mut StepReport,
    ) -> Result<()> {
        let b = graphs.len();
        let c = self.model.config.num_classes;
        let scale = 1.0 / b as f64;
        let mut perm: Vec<usize> = (0..b).collect();
        perm.shuffle(&mut self.rng);
        let (k, p) = sample_mix_params(&self.cfg.mix, &mut self.rng);
        let mut mix = self.cfg.mix.clone();
        mix.connector = self.cfg.connector();
        let ab = self.cfg.ablations;
        let source = if ab.scattered_nodes {
            let total: usize = perm
                .iter()
                .map(|&s| {
                    let anchors = select_salient_anchors(&saliency[s], mix.r, &mut self.rng);
                    partial_k_hop(graphs[s], &anchors, k, p, &mut self.rng).len()
                })
                .sum();
            SourceSelection::Scattered(((total as f64 / b as f64).round() as usize).max(1))
        } else if ab.random_subgraph {
            SourceSelection::Random
        } else {
            SourceSelection::Salient
        };
        let opts = TransplantOptions {
            source,
            size_label: ab.size_based_label,
            predictor: self.predictor.as_ref(),
        };

        let donor = |i: usize| Donor {
            graph: graphs[i],
            saliency: &saliency[i],
            latents: latents.get(i),
        };
        let mut outcomes = Vec::with_capacity(b);
        for (i, &s) in perm.iter().enumerate() {
            outcomes.push(graph_transplant(&donor(s), &donor(i), &mix, k, p, &opts, &mut self.rng)?);
        }

        let mut aug_graphs: Vec<&GraphInstance> = Vec::with_capacity(b);
        let mut targets = Array2::zeros((b, c));
        for (i, o) in outcomes.iter().enumerate() {
            match o {
                Transplant::Mixed(r) => {
                    aug_graphs.push(&r.mixed);
                    targets
                        .row_mut(i)
                        .assign(&mixed_target(r.source_label, r.dest_label, r.lambda, c));
                    report.transplants += 1;
                }
                Transplant::Skipped(_) => {
                    aug_graphs.push(graphs[i]);
                    targets.row_mut(i).assign(&one_hot(graphs[i].label(), c));
                    report.skipped += 1;
                }
            }
        }
        let mut aug_batch = GraphBatch::new(&aug_graphs);
        let mut requests = Vec::new();
        let mut spans = Vec::with_capacity(b);
        for (i, o) in outcomes.iter().enumerate() {
            let start = requests.len();
            if let Transplant::Mixed(r) = o {
                requests.extend(candidate_edges(&mut aug_batch, i, r, false));
            }
            spans.push(start..requests.len());
        }
        let tape = self.model.forward(&aug_batch, Mode::Train, &mut self.rng)?;
        let (aug_losses, daug) = batch_cross_entropy(tape.logits(), &targets, scale);
        let (g2, enc) = self.model.backward(&tape, &aug_batch, &daug, &requests)?;
        grads.add_assign(&g2);
        report.augmented_loss = Some(aug_losses.iter().sum::<f64>() * scale);

        if let Some(psi) = self.predictor.as_mut() {
            let mut psi_grads = psi.zeros_like();
            let mut any = false;
            for (o, span) in outcomes.iter().zip(&spans) {
                if let Transplant::Mixed(r) = o {
                    if let Some(g) = predictor_grads(psi, r, &enc.edge_weights[span.clone()]) {
                        psi_grads.add_assign(&g);
                        any = true;
                    }
                }
            }
            if any {
                self.edge_opt.step(psi, &psi_grads);
            }
        }
        if self.capture {
            self.capture = false;
            self.captured = outcomes
                .into_iter()
                .filter_map(|o| match o {
                    Transplant::Mixed(r) => Some(*r),
                    Transplant::Skipped(_) => None,
                })
                .collect();
        }
        Ok(())
    }
}

fn supervised_step(
    psi: &mut EdgePredictor,
    opt: &mut Adam,
    graphs: &[&GraphInstance],
    latents: &[Array2<f64>],
    rng: &mut impl Rng,
) -> Result<f64> {
    let d = psi.latent_dim();
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut labels = Vec::new();
    for (g, z) in graphs.iter().zip(latents) {
        for (u, v, connected) in sample_supervised_pairs(g, rng) {
            left.extend(z.row(u).iter().copied());
            right.extend(z.row(v).iter().copied());
            labels.push(if connected { 1.0 } else { 0.0 });
        }
    }
    let n = labels.len();
    let left = Array2::from_shape_vec((n, d), left).map_err(|e| Error::Dimension(e.to_string()))?;
    let right = Array2::from_shape_vec((n, d), right).map_err(|e| Error::Dimension(e.to_string()))?;
    supervised_ep_update(psi, left.view(), right.view(), &labels, opt)
}

const EVAL_CHUNK: usize = 256;

/// Eval-mode metrics over `graphs`.
pub fn evaluate(model: &Model, graphs: &[&GraphInstance]) -> Result<EvalMetrics> {
    if graphs.is_empty() {
        return Err(Error::Config("cannot evaluate an empty set".into()));
    }
    let c = model.config.num_classes;
    let mut probs = Array2::zeros((graphs.len(), c));
    let mut loss = 0.0;
    for (chunk_i, chunk) in graphs.chunks(EVAL_CHUNK).enumerate() {
        let logits = model.predict(&GraphBatch::new(chunk))?;
        for (j, (row, g)) in logits.rows().into_iter().zip(chunk).enumerate() {
            let p: Array1<f64> = softmax(row);
            loss += crate::nn::softmax_cross_entropy(row, one_hot(g.label(), c).view());
            probs.row_mut(chunk_i * EVAL_CHUNK + j).assign(&p);
        }
    }
    let labels: Vec<usize> = graphs.iter().map(|g| g.label()).collect();
    summarize(&probs, &labels, loss / graphs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Iterations completed by the end of this epoch.
    pub iterations: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_original_loss: f64,
    pub train_augmented_loss: Option<f64>,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub fold: usize,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose checkpoint was restored for testing.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub best_val: EvalMetrics,
    pub test: EvalMetrics,
    /// Wall-clock seconds; not serialized so that result files are
    /// reproducible byte for byte.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Side outputs of a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where to write the restored best checkpoint.
    pub checkpoint_dir: Option<PathBuf>,
    /// Where to write the first batch's mixed graphs.
    pub dump_dir: Option<PathBuf>,
    /// Label used in side-output file names.
    pub tag: String,
}

/// Seed of the training stream for one fold.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(fold as u64)
}

/// Trains on one split and reports test metrics of the best-validation
/// checkpoint.
pub fn run_fold(ds: &Dataset, split: &SplitSpec, cfg: &TrainConfig, opts: &RunOptions) -> Result<RunMetrics> {
    let started = Instant::now();
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(Error::Config("split has an empty part".into()));
    }
    let stats = FeatureStats::compute(ds, &split.train_val());
    let ds = ds.standardize(&stats)?;
    let pick = |idx: &[usize]| -> Vec<&GraphInstance> { idx.iter().map(|&i| &ds.graphs[i]).collect() };
    let val = pick(&split.val);
    let test = pick(&split.test);
    let seed = fold_seed(cfg.seed, split.fold);
    let mut trainer = Trainer::new(cfg.clone(), ds.feature_dim, ds.num_classes, seed)?;
    trainer.capture = opts.dump_dir.is_some();

    let mut order = split.train.clone();
    let mut epochs = Vec::new();
    let mut iterations = 0usize;
    let mut best: Option<(f64, usize, Checkpoint, EvalMetrics)> = None;
    let mut acc_stall = 0usize;
    let mut best_val_loss = f64::INFINITY;
    let mut loss_stall = 0usize;
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(trainer.rng());
        let (mut total, mut orig, mut aug, mut correct) = (0.0, 0.0, 0.0, 0usize);
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let graphs = pick(chunk);
            let r = trainer.train_step(&graphs)?;
            if !trainer.captured.is_empty() {
                if let Some(dir) = &opts.dump_dir {
                    write_dumps(dir, &opts.tag, split.fold, &trainer.captured)?;
                }
                trainer.captured.clear();
            }
            total += r.total_loss();
            orig += r.original_loss;
            aug += r.augmented_loss.unwrap_or(0.0);
            correct += r.correct;
            steps += 1;
        }
        iterations += steps;
        let v = evaluate(&trainer.model, &val)?;
        epochs.push(EpochRecord {
            epoch,
            iterations,
            lr: trainer.lr(),
            train_loss: total / steps as f64,
            train_original_loss: orig / steps as f64,
            train_augmented_loss: (cfg.augment != AugmentMode::None).then_some(aug / steps as f64),
            train_accuracy: correct as f64 / order.len() as f64,
            val_loss: v.loss,
            val_accuracy: v.accuracy,
        });

        match &best {
            Some((acc, ..)) if v.accuracy <= *acc => acc_stall += steps,
            _ => {
                best = Some((v.accuracy, epoch, Checkpoint::capture(&trainer.model.params), v));
                acc_stall = 0;
            }
        }
        if v.loss < best_val_loss {
            best_val_loss = v.loss;
            loss_stall = 0;
        } else {
            loss_stall += steps;
            if loss_stall >= cfg.lr_patience {
                let lr = trainer.lr() * cfg.lr_decay;
                trainer.set_lr(lr);
                loss_stall = 0;
            }
        }
        if acc_stall >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let (_, best_epoch, ckpt, best_val) = best.expect("at least one epoch");
    ckpt.restore(&mut trainer.model.params)?;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        ckpt.save(dir.join(format!("{}fold{}.model.json", opts.tag, split.fold)))?;
        if let Some(psi) = &trainer.predictor {
            Checkpoint::capture(psi).save(dir.join(format!("{}fold{}.edge.json", opts.tag, split.fold)))?;
        }
    }
    let test = evaluate(&trainer.model, &test)?;
    Ok(RunMetrics {
        fold: split.fold,
        seed,
        epochs,
        best_epoch,
        stopped_early,
        best_val,
        test,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

fn write_dumps(dir: &std::path::Path, tag: &str, fold: usize, results: &[TransplantResult]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, r) in results.iter().enumerate() {
        let f = std::fs::File::create(dir.join(format!("{tag}fold{fold}_mixed{i}.txt")))?;
        r.write_dump(std::io::BufWriter::new(f))?;
    }
    Ok(())
}
