//! The straight-through predictor gradient, evaluated on a relaxed batch,
//! is the exact gradient of the relaxed loss with the sampling noise held
//! fixed.

use graft_core::augment::{graph_transplant, Connector, Donor, MixConfig, TransplantOptions, TransplantResult};
use graft_core::edge_predictor::{EdgePredictor, STEdgeSample};
use graft_core::nn::{batch_cross_entropy, mixed_target, Arch, GraphBatch, Mode, Model, ModelConfig, ParamSet};
use graft_core::saliency::SaliencyVector;
use graft_core::train::{candidate_edges, predictor_grads};
use graft_core::GraphInstance;
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TAU: f64 = 0.7;

struct Fixture {
    model: Model,
    psi: EdgePredictor,
    latents_src: Array2<f64>,
    latents_dst: Array2<f64>,
    result: TransplantResult,
    target: Array2<f64>,
}

fn fixture() -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = |rng: &mut ChaCha8Rng, n| Array2::from_shape_simple_fn((n, 2), || rng.random::<f64>() - 0.5);
    // a 3-node path donates into a 4-cycle
    let gs = GraphInstance::unweighted(3, &[(0, 1), (1, 2)], x(&mut rng, 3), 0).unwrap();
    let gd = GraphInstance::unweighted(4, &[(0, 1), (1, 2), (2, 3), (0, 3)], x(&mut rng, 4), 1).unwrap();
    let ss = SaliencyVector::new(vec![0.2, 1.0, 0.5]);
    let sd = SaliencyVector::new(vec![0.3, 0.3, 0.9, 0.1]);
    let latents_src = Array2::from_shape_simple_fn((3, 4), || rng.random::<f64>() - 0.5);
    let latents_dst = Array2::from_shape_simple_fn((4, 4), || rng.random::<f64>() - 0.5);
    let psi = EdgePredictor::with_widths(4, 8, 6, &mut rng);

    let mut cfg = ModelConfig::new(Arch::Gcs, 3, 2, 2).with_hidden(8);
    cfg.head_hidden = 8;
    let model = Model::new(cfg, &mut rng).unwrap();

    let mix = MixConfig { connector: Connector::Ep, r: 34.0, tau: TAU, ..MixConfig::default() };
    let opts = TransplantOptions { predictor: Some(&psi), ..TransplantOptions::default() };
    let src = Donor { graph: &gs, saliency: &ss, latents: Some(&latents_src) };
    let dst = Donor { graph: &gd, saliency: &sd, latents: Some(&latents_dst) };
    // find a draw whose candidate set has at least two pairs
    let result = (0..200)
        .find_map(|_| {
            let t = graph_transplant(&src, &dst, &mix, 1, 50.0, &opts, &mut rng).unwrap();
            t.mixed().filter(|r| r.surrogates.as_ref().is_some_and(|s| s.candidates.len() >= 2)).cloned()
        })
        .expect("a transplant with learned candidates");
    let target = mixed_target(result.source_label, result.dest_label, result.lambda, 2).insert_axis(Axis(0));
    Fixture { model, psi, latents_src, latents_dst, result, target }
}

fn relaxed_loss(f: &Fixture, psi: &EdgePredictor) -> (f64, Vec<bool>) {
    let cands = &f.result.surrogates.as_ref().unwrap().candidates;
    let left = f.latents_src.select(Axis(0), &cands.iter().map(|c| c.src).collect::<Vec<_>>());
    let right = f.latents_dst.select(Axis(0), &cands.iter().map(|c| c.dst).collect::<Vec<_>>());
    let (probs, _) = psi.forward_pairs(left.view(), right.view()).unwrap();
    let mut batch = GraphBatch::single(&f.result.mixed);
    for (c, &p) in cands.iter().zip(probs.iter()) {
        let soft = STEdgeSample::with_noise(p, c.sample.noise, TAU).soft;
        let (a, b) = f.result.mixed_ids(c.src, c.dst);
        let idx = batch.edge_index(0, a, b).unwrap_or_else(|| batch.push_edge(0, a, b, 0.0));
        batch.set_weight(idx, soft);
    }
    let tape = f.model.forward(&batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (losses, _) = batch_cross_entropy(tape.logits(), &f.target, 1.0);
    (losses[0], tape.activation_pattern())
}

#[test]
fn straight_through_matches_relaxed_finite_differences() {
    let f = fixture();
    let mut batch = GraphBatch::single(&f.result.mixed);
    let requests = candidate_edges(&mut batch, 0, &f.result, true);
    let tape = f.model.forward(&batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (_, dl) = batch_cross_entropy(tape.logits(), &f.target, 1.0);
    let (_, enc) = f.model.backward(&tape, &batch, &dl, &requests).unwrap();
    let grads = predictor_grads(&f.psi, &f.result, &enc.edge_weights).unwrap();

    let h = 1e-5;
    let mut checked = 0;
    let mut nonzero = 0;
    for (k, gk) in grads.tensors().iter().enumerate() {
        for (i, &a) in gk.iter().enumerate() {
            let mut plus = f.psi.clone();
            plus.tensors_mut()[k][i] += h;
            let mut minus = f.psi.clone();
            minus.tensors_mut()[k][i] -= h;
            let (lp, pp) = relaxed_loss(&f, &plus);
            let (lm, pm) = relaxed_loss(&f, &minus);
            if pp != pm {
                continue;
            }
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8);
            assert!(rel < 1e-3, "tensor {k} entry {i}: fd {fd}, straight-through {a}");
            checked += 1;
            nonzero += usize::from(a.abs() > 1e-8);
        }
    }
    assert!(checked > 50 && nonzero > 10, "checked {checked}, nonzero {nonzero}");
}
