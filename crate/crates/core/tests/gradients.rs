//! Finite-difference checks through whole modules, in f64.

use std::time::Instant;

use star_core::model::{EncoderMode, ModelConfig, StarModel};
use star_core::nn::gaussian;
use star_core::objectives::LossWeights;
use star_core::rng::stream;
use star_core::semantics::{Provenance, SemanticEmbeddingSet};
use star_core::skeleton::{Joint, JointLayout, PartitionKind, Region};
use star_tensor::gradcheck::{numerical_gradients, relative_error};
use star_tensor::{Graph, ParamId, ParamStore, Tensor};

const H: f64 = 1e-5;

fn toy_layout() -> JointLayout {
    let joint = |name: &str, region| Joint { name: name.into(), region, rest: [0.0; 3] };
    JointLayout::new(
        vec![
            joint("head", Region::Head),
            joint("hand", Region::Hand),
            joint("hip", Region::Hip),
            joint("foot", Region::Foot),
        ],
        2,
    )
    .unwrap()
}

fn toy_config() -> ModelConfig {
    ModelConfig {
        partition: PartitionKind::Two,
        frames: 4,
        stride: 2,
        width: 4,
        heads: 2,
        attributes: 3,
        ffn_hidden: 3,
        latent: 3,
        semantic_hidden: 3,
        encoder: EncoderMode::Joint,
        ..Default::default()
    }
}

/// Relative error, except that two gradients which both vanish to rounding
/// level agree (the name-projector bias has an exactly zero gradient).
fn gradient_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    let norm = |t: &Tensor<f64>| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm(analytic) < 1e-9 && norm(numeric) < 1e-9 {
        0.0
    } else {
        relative_error(analytic, numeric)
    }
}

/// Check every trainable parameter of `store` against central differences
/// of `loss`; returns the worst relative error.
fn check_params(
    store: &ParamStore<f64>,
    loss: &dyn Fn(&ParamStore<f64>, bool) -> (f64, Option<ParamStore<f64>>),
) -> f64 {
    let ids: Vec<ParamId> = store.iter().filter(|(_, p)| p.trainable()).map(|(id, _)| id).collect();
    let (_, with_grads) = loss(store, true);
    let with_grads = with_grads.expect("backward ran");
    let values: Vec<Tensor<f64>> = ids.iter().map(|&id| store.get(id).value().clone()).collect();
    let mut work = store.clone();
    let numeric = numerical_gradients(
        &mut |xs| {
            for (&id, x) in ids.iter().zip(xs) {
                work.set_value(id, x.clone()).unwrap();
            }
            loss(&work, false).0
        },
        &values,
        H,
    );
    let mut worst: f64 = 0.0;
    for (&id, num) in ids.iter().zip(&numeric) {
        let p = with_grads.get(id);
        let zeros = Tensor::zeros(num.shape());
        let analytic = p.grad().unwrap_or(&zeros);
        let err = gradient_error(analytic, num);
        assert!(err <= 1e-4, "{}: relative error {err:.3e}", p.name());
        worst = worst.max(err);
    }
    worst
}

#[test]
fn full_objective_on_a_toy_model() {
    let start = Instant::now();
    let layout = toy_layout();
    let (model, mut store) = StarModel::new::<f64>(toy_config(), &layout, 2, 2, 4, 3).unwrap();
    // Move the small-initialised prompts off zero so every path carries signal.
    let mut r = stream(17);
    let prompts: Vec<ParamId> = store.iter().filter(|(_, p)| p.name().ends_with("prompt")).map(|(id, _)| id).collect();
    for id in prompts {
        let shape = store.get(id).value().shape().to_vec();
        store.set_value(id, gaussian(&mut r, &shape, 0.5)).unwrap();
    }
    let emb = SemanticEmbeddingSet::new(
        gaussian::<f32>(&mut r, &[2, 4], 0.7),
        gaussian::<f32>(&mut r, &[2, 2, 4], 0.7),
        Provenance::File,
    )
    .unwrap();
    let labels = [0, 1, 1];
    let batch: Vec<Tensor<f64>> = [2usize, 2].iter().map(|&v| gaussian(&mut r, &[3, 1, 4, v, 6], 1.0)).collect();
    let known = [0, 1];
    let loss = |s: &ParamStore<f64>, grads: bool| {
        let mut g = Graph::new();
        let t = model.batch_loss(&mut g, s, batch.clone(), &labels, &emb, &known, &LossWeights::default()).unwrap();
        let value = g.value(t.total).item();
        if !grads {
            return (value, None);
        }
        let mut out = s.clone();
        out.clear_grad();
        g.backward(t.total, &mut out).unwrap();
        assert!(
            out.iter().all(|(_, p)| !p.trainable() || p.grad().is_some()),
            "the full objective reaches every parameter"
        );
        (value, Some(out))
    };
    assert!(store.iter().filter(|(_, p)| p.trainable()).count() > 20);
    check_params(&store, &loss);
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn every_loss_term_alone() {
    let layout = toy_layout();
    let (model, store) = StarModel::new::<f64>(toy_config(), &layout, 3, 2, 4, 9).unwrap();
    let mut r = stream(23);
    let emb = SemanticEmbeddingSet::new(
        gaussian::<f32>(&mut r, &[3, 4], 0.7),
        gaussian::<f32>(&mut r, &[2, 3, 4], 0.7),
        Provenance::File,
    )
    .unwrap();
    let batch: Vec<Tensor<f64>> = (0..2).map(|_| gaussian(&mut r, &[2, 1, 4, 2, 6], 1.0)).collect();
    for (m, s, gl) in [(true, false, false), (false, true, false), (false, false, true)] {
        let w = LossWeights { use_mpce: m, use_sce: s, use_gce: gl, ..Default::default() };
        let loss = |st: &ParamStore<f64>, grads: bool| {
            let mut g = Graph::new();
            let t = model.batch_loss(&mut g, st, batch.clone(), &[0, 2], &emb, &[0, 2], &w).unwrap();
            let value = g.value(t.total).item();
            if !grads {
                return (value, None);
            }
            let mut out = st.clone();
            out.zero_grad();
            g.backward(t.total, &mut out).unwrap();
            (value, Some(out))
        };
        check_params(&store, &loss);
    }
}
