//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{random_mat, rng, Mat};
use rand::Rng;
use star_core::dataset::{CategorySplit, Dataset, SplitFile};
use star_core::eval::{default_gammas, evaluate, gamma_sweep, harmonic, predict, score_table, Mode, ScoreTable};
use star_core::model::{EncoderMode, ModelConfig, StarModel};
use star_core::nn::gaussian;
use star_core::objectives::{all_terms, gce, mpce, sce, BatchLatents, LossWeights, Similarity};
use star_core::rng::stream;
use star_core::semantics::{EmbeddingProvider, Provenance, SemanticEmbeddingSet};
use star_core::skeleton::{
    decompose_parts, reconstruct, Joint, JointLayout, PartitionKind, PartitionStrategy, Region, SkeletonSequence,
};
use star_core::synth::{generate_synthetic, SynthConfig};
use star_core::train::{reference_config, TrainConfig, Trainer};
use star_core::visual::{cross_attend, AttentionBlock};
use star_tensor::gradcheck::{numerical_gradients, relative_error};
use star_tensor::{Graph, ParamId, ParamStore, Tensor, Var};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- 1

fn primitive_error(seed: u64, shapes: &[&[usize]], build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let mut r = rng(seed);
    let sample = |r: &mut _, s: &[usize]| {
        Tensor::from_fn(s, |_| loop {
            let v: f64 = Rng::random_range(r, -2.0..2.0);
            if v.abs() >= 1e-3 {
                break v;
            }
        })
    };
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| sample(&mut r, s)).collect();
    let out_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.shape(out).to_vec()
    };
    let weights = sample(&mut r, &out_shape);
    let forward = |g: &mut Graph<f64>, xs: &[Tensor<f64>]| {
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(g, &vars);
        let w = g.constant(weights.clone());
        let prod = g.mul(out, w).unwrap();
        (vars, g.sum_all(prod).unwrap())
    };
    let mut g = Graph::new();
    let (vars, loss) = forward(&mut g, &inputs);
    let grads = g.gradients(loss).unwrap();
    let numeric = numerical_gradients(
        &mut |xs| {
            let mut g = Graph::new();
            let (_, loss) = forward(&mut g, xs);
            g.value(loss).item()
        },
        &inputs,
        1e-5,
    );
    vars.iter()
        .zip(&numeric)
        .map(|(v, n)| grads.get(*v).map_or(f64::INFINITY, |a| relative_error(a, n)))
        .fold(0.0, f64::max)
}

fn toy_layout() -> JointLayout {
    let joint = |name: &str, region| Joint { name: name.into(), region, rest: [0.0; 3] };
    let joints = vec![
        joint("head", Region::Head),
        joint("hand", Region::Hand),
        joint("hip", Region::Hip),
        joint("foot", Region::Foot),
    ];
    JointLayout::new(joints, 2).unwrap()
}

fn composite_error() -> f64 {
    let config = ModelConfig {
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
    };
    let (model, mut store) = StarModel::new::<f64>(config, &toy_layout(), 3, 2, 4, 3).unwrap();
    let mut r = stream(31);
    let prompts: Vec<ParamId> = store.iter().filter(|(_, p)| p.name().ends_with("prompt")).map(|(id, _)| id).collect();
    for id in prompts {
        let shape = store.get(id).value().shape().to_vec();
        store.set_value(id, gaussian(&mut r, &shape, 0.5)).unwrap();
    }
    let emb = SemanticEmbeddingSet::new(
        gaussian::<f32>(&mut r, &[3, 4], 0.7),
        gaussian::<f32>(&mut r, &[2, 3, 4], 0.7),
        Provenance::File,
    )
    .unwrap();
    let batch: Vec<Tensor<f64>> = (0..2).map(|_| gaussian(&mut r, &[3, 1, 4, 2, 6], 1.0)).collect();
    let (labels, known) = ([0, 2, 2], [0, 2]);
    let ids: Vec<ParamId> = store.iter().filter(|(_, p)| p.trainable()).map(|(id, _)| id).collect();
    let loss = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let t = model.batch_loss(&mut g, s, batch.clone(), &labels, &emb, &known, &LossWeights::default()).unwrap();
        (g, t.total)
    };
    let (g, total) = loss(&store);
    let mut grads = store.clone();
    grads.clear_grad();
    g.backward(total, &mut grads).unwrap();
    let values: Vec<Tensor<f64>> = ids.iter().map(|&id| store.get(id).value().clone()).collect();
    let mut work = store.clone();
    let numeric = numerical_gradients(
        &mut |xs| {
            for (&id, x) in ids.iter().zip(xs) {
                work.set_value(id, x.clone()).unwrap();
            }
            let (g, t) = loss(&work);
            g.value(t).item()
        },
        &values,
        1e-5,
    );
    ids.iter()
        .zip(&numeric)
        .map(|(&id, n)| grads.get(id).grad().map_or(f64::INFINITY, |a| gradient_error(a, n)))
        .fold(0.0, f64::max)
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

fn criterion_1() -> Outcome {
    let start = Instant::now();
    type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;
    let cases: Vec<(&[&[usize]], Build)> = vec![
        (&[&[3, 4], &[4, 2]], Box::new(|g, v| g.matmul(v[0], v[1]).unwrap())),
        (&[&[2, 3, 4], &[4, 5]], Box::new(|g, v| g.matmul(v[0], v[1]).unwrap())),
        (&[&[3, 4], &[2, 4, 5]], Box::new(|g, v| g.matmul(v[0], v[1]).unwrap())),
        (&[&[2, 3, 4], &[2, 4, 2]], Box::new(|g, v| g.matmul(v[0], v[1]).unwrap())),
        (&[&[3, 5]], Box::new(|g, v| g.softmax_lastdim(v[0]).unwrap())),
        (&[&[4, 5]], Box::new(|g, v| g.cross_entropy(v[0], &[0, 4, 2, 2]).unwrap())),
        (&[&[2, 3, 4], &[4]], Box::new(|g, v| g.add(v[0], v[1]).unwrap())),
        (&[&[2, 3, 4], &[3, 4]], Box::new(|g, v| g.sub(v[0], v[1]).unwrap())),
        (&[&[2, 3, 4], &[4]], Box::new(|g, v| g.mul(v[0], v[1]).unwrap())),
        (&[&[2, 5]], Box::new(|g, v| g.scale(v[0], -0.7).unwrap())),
        (&[&[4, 4]], Box::new(|g, v| g.relu(v[0]).unwrap())),
        (&[&[2, 3], &[2, 1]], Box::new(|g, v| g.concat_lastdim(v).unwrap())),
        (&[&[2, 3, 6]], Box::new(|g, v| g.slice_lastdim(v[0], 2, 3).unwrap())),
        (&[&[2, 3, 4]], Box::new(|g, v| g.sum_axis(v[0], 1).unwrap())),
        (&[&[2, 3, 4]], Box::new(|g, v| g.mean_axis(v[0], 0).unwrap())),
        (&[&[3, 2]], Box::new(|g, v| g.sum_all(v[0]).unwrap())),
        (&[&[2, 3, 4]], Box::new(|g, v| g.transpose(v[0]).unwrap())),
        (&[&[4, 3]], Box::new(|g, v| g.gather_rows(v[0], &[3, 0, 3, 1]).unwrap())),
        (&[&[3, 4]], Box::new(|g, v| g.l2_normalize_lastdim(v[0]).unwrap())),
        (&[&[2, 6]], Box::new(|g, v| g.reshape(v[0], &[3, 4]).unwrap())),
    ];
    let worst_primitive =
        cases.iter().enumerate().map(|(i, (s, b))| primitive_error(100 + i as u64, s, b.as_ref())).fold(0.0, f64::max);
    let composite = composite_error();
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("primitives {worst_primitive:.2e}, composite {composite:.2e}, {secs:.1} s");
    ensure(worst_primitive <= 1e-5, &detail)?;
    ensure(composite <= 1e-4, &detail)?;
    ensure(secs < 60.0, &detail)?;
    Ok(detail)
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut r = rng(1000 + seed);
        let (b, k, a, d) = (r.random_range(1..5), r.random_range(1..4), r.random_range(3..7), r.random_range(1..6));
        let known: Vec<usize> = (0..a).filter(|c| c % 3 != 1).collect();
        let labels: Vec<usize> = (0..b).map(|_| known[r.random_range(0..known.len())]).collect();
        let parts: Vec<Mat> = (0..b).map(|_| random_mat(&mut r, k, d, 2.0)).collect();
        let global = random_mat(&mut r, b, d, 2.0);
        let side: Vec<Mat> = (0..k).map(|_| random_mat(&mut r, a, d, 2.0)).collect();
        let names = random_mat(&mut r, a, d, 2.0);
        let mut g = Graph::new();
        let t = |g: &mut Graph<f64>, s: &[usize], v: Vec<f64>| g.constant(Tensor::new(s, v).unwrap());
        let latents = BatchLatents {
            parts: (0..k).map(|e| t(&mut g, &[b, d], parts.iter().flat_map(|p| p[e].clone()).collect())).collect(),
            global: t(&mut g, &[b, d], common::flat(&global)),
            labels: labels.clone(),
            side: t(&mut g, &[k, a, d], side.iter().flat_map(|m| common::flat(m)).collect()),
            names: t(&mut g, &[a, d], common::flat(&names)),
            known: known.clone(),
        };
        let terms = all_terms(&mut g, &latents, &LossWeights::default(), Similarity::Dot).map_err(|e| e.to_string())?;
        let want = [
            common::mpce(&parts, &side, &labels, &known),
            common::sce(&side, &names),
            common::gce(&global, &labels, &names, &known),
        ];
        for (v, w) in [terms.mpce, terms.sce, terms.gce].into_iter().zip(want) {
            worst = worst.max((g.value(v).item() - w).abs());
        }
    }
    ensure(worst <= 1e-12, format!("oracle gap {worst:.2e}"))?;

    let mut g = Graph::new();
    let c = |g: &mut Graph<f64>, s: &[usize], v: Vec<f64>| g.constant(Tensor::new(s, v).unwrap());
    let names = c(&mut g, &[2, 1], vec![0.0, 0.0]);
    let f = c(&mut g, &[1, 1], vec![1.0]);
    let v = gce(&mut g, f, &[0], names, &[0, 1], Similarity::Dot).unwrap();
    let ln2 = g.value(v).item();
    let side = c(&mut g, &[1, 3, 2], vec![0.0; 6]);
    let names3 = c(&mut g, &[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let v = sce(&mut g, side, names3, Similarity::Dot).unwrap();
    let ln3 = g.value(v).item();
    let latents = BatchLatents {
        parts: vec![c(&mut g, &[1, 1], vec![1.0])],
        global: c(&mut g, &[1, 1], vec![0.0]),
        labels: vec![0],
        side: c(&mut g, &[1, 2, 1], vec![2.0, 0.0]),
        names,
        known: vec![0, 1],
    };
    let v = mpce(&mut g, &latents, Similarity::Dot).unwrap();
    let soft = g.value(v).item();
    let gaps = [ln2 - 2f64.ln(), ln3 - 3f64.ln(), soft - (1.0 + (-2f64).exp()).ln()];
    ensure(gaps.iter().all(|d| d.abs() <= 1e-6), format!("worked values off by {gaps:?}"))?;
    Ok(format!("100 instances within {worst:.1e}; ln 2, ln 3, ln(1+e^-2) reproduced"))
}

// ---------------------------------------------------------------- 3

fn attend(store: &ParamStore<f64>, block: &AttentionBlock, prompt: &Mat, tokens: &Mat) -> Vec<f64> {
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(&[prompt.len(), prompt[0].len()], common::flat(prompt)).unwrap());
    let t = g.constant(Tensor::new(&[tokens.len(), tokens[0].len()], common::flat(tokens)).unwrap());
    let out = cross_attend(&mut g, store, block, t, p).unwrap();
    g.value(out).data().to_vec()
}

fn block_weights(store: &ParamStore<f64>, block: &AttentionBlock) -> [Mat; 4] {
    block.params().map(|id| {
        let t = store.get(id).value();
        t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect()
    })
}

fn criterion_3() -> Outcome {
    let mut r = rng(77);
    let mut worst: f64 = 0.0;
    for case in 0..300 {
        let heads = r.random_range(1..=2);
        let c = heads * r.random_range(1..=4);
        let (m, n) = (r.random_range(1..=4), r.random_range(1..=6));
        let mut store = ParamStore::new();
        let block = AttentionBlock::new(&mut store, &mut stream(case), "a", c, heads).unwrap();
        let prompt = random_mat(&mut r, m, c, 1.5);
        let tokens = random_mat(&mut r, n, c, 1.5);
        let w = block_weights(&store, &block);
        let want = common::flat(&common::attention(&prompt, &tokens, [&w[0], &w[1], &w[2], &w[3]], heads));
        let got = attend(&store, &block, &prompt, &tokens);
        worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    ensure(worst <= 1e-6, format!("oracle gap {worst:.2e}"))?;

    let mut store = ParamStore::new();
    let block = AttentionBlock::new(&mut store, &mut stream(5), "a", 8, 2).unwrap();
    let token = random_mat(&mut r, 1, 8, 1.0);
    let w = block_weights(&store, &block);
    let expect = common::matmul(&common::matmul(&token, &w[2]), &w[3]).remove(0);
    for m in 1..=4 {
        let prompt = random_mat(&mut r, m, 8, 3.0);
        let got = attend(&store, &block, &prompt, &token);
        ensure(got.chunks(8).all(|row| row == &got[..8]), "single-token rows differ")?;
        let gap = got[..8].iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(gap < 1e-12, format!("single-token output is not token·W_v·W_o ({gap:.1e})"))?;
    }
    Ok(format!("300 instances within {worst:.1e}; single-token degeneracy holds"))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    for case in 0..300 {
        let a = r.random_range(3..9);
        let u = r.random_range(1..a);
        let names: Vec<String> = (0..a).map(|i| format!("c{i}")).collect();
        let split =
            CategorySplit::new(&names, &SplitFile { known: names[..a - u].to_vec(), unknown: names[a - u..].to_vec() })
                .unwrap();
        let n = r.random_range(4..40);
        let rows = random_mat(&mut r, n, a, 3.0);
        let mut labels: Vec<usize> = (0..n).map(|_| r.random_range(0..a)).collect();
        labels[0] = 0;
        labels[1] = a - 1;
        for row in &rows {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            ensure(predict(row, Mode::Gzsl, &split, 0.0).unwrap() == best, format!("case {case}: γ=0 is not argmax"))?;
        }
        let mut gammas: Vec<f64> = Vec::new();
        let mut g = -1.0;
        for _ in 0..r.random_range(2..15) {
            g += r.random_range(0.001..1.0);
            gammas.push(g);
        }
        let mut previous: Option<Vec<usize>> = None;
        for &gamma in &gammas {
            let preds: Vec<usize> = rows.iter().map(|row| predict(row, Mode::Gzsl, &split, gamma).unwrap()).collect();
            if let Some(prev) = &previous {
                let moved = prev.iter().zip(&preds).any(|(p, q)| !split.is_known(*p) && p != q);
                ensure(!moved, format!("case {case}: an unknown prediction changed as γ rose"))?;
            }
            previous = Some(preds);
        }
        let table = ScoreTable {
            ids: (0..n).map(|i| i.to_string()).collect(),
            labels,
            scores: Tensor::new(&[n, a], common::flat(&rows)).unwrap(),
        };
        let sweep = gamma_sweep(&table, &split, &gammas).map_err(|e| e.to_string())?;
        let monotone = sweep.points.windows(2).all(|w| w[1].seen <= w[0].seen && w[1].unseen >= w[0].unseen);
        ensure(monotone, format!("case {case}: S/U not monotone"))?;
        let first = evaluate(&table, &split, Mode::Gzsl, gammas[0]).unwrap();
        ensure(first.seen == Some(sweep.points[0].seen), "sweep disagrees with evaluate")?;
    }
    let h = harmonic(59.3, 59.5);
    ensure((h * 10.0).round() / 10.0 == 59.4, format!("H(59.3, 59.5) = {h}"))?;
    ensure(harmonic(0.3, 0.7) == harmonic(0.7, 0.3), "H not symmetric")?;
    ensure(harmonic(0.4, 0.4) == 0.4 && harmonic(0.4, 0.0) == 0.0, "H identities")?;
    Ok(format!("300 random tables; H(59.3, 59.5) = {h:.4}"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let layout = JointLayout::ntu25();
    let mut r = rng(5);
    let mut sizes = Vec::new();
    for kind in PartitionKind::ALL {
        let s = PartitionStrategy::new(&layout, kind).map_err(|e| e.to_string())?;
        let mut count = vec![0; 25];
        s.joints.iter().flatten().for_each(|&j| count[j] += 1);
        ensure(count.iter().all(|&c| c == 1), format!("{kind:?} is not an exact partition"))?;
        ensure(s.joints.iter().all(|p| !p.is_empty()), format!("{kind:?} has an empty part"))?;
        sizes.push(s.part_sizes());
        for _ in 0..50 {
            let (t, m) = (r.random_range(1..8), r.random_range(1..3));
            let data = Tensor::from_fn(&[3, t, 25, m], |_| r.random_range(-3.0f32..3.0));
            let seq = SkeletonSequence::new(data, 0).unwrap();
            let parts = decompose_parts(&seq, &s).unwrap();
            let back = reconstruct(&parts, &s, 25).unwrap();
            let exact = back.data().iter().zip(seq.data.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(exact, format!("{kind:?} round trip is not bit-exact"))?;
        }
    }
    Ok(format!("part sizes {sizes:?}; 150 bit-exact round trips"))
}

// ---------------------------------------------------------------- 6, 7, 8

struct RunResult {
    zsl: f64,
    h0: f64,
    best_h: f64,
    secs: f64,
}

fn reference_run(seed: u64, use_mpce: bool) -> Result<RunResult, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    generate_synthetic(&SynthConfig::default(), seed, dir.path()).map_err(|e| e.to_string())?;
    let ds = Dataset::load(dir.path()).map_err(|e| e.to_string())?;
    let strategy = PartitionStrategy::new(ds.layout(), PartitionKind::Six).map_err(|e| e.to_string())?;
    let emb =
        SemanticEmbeddingSet::for_dataset(&ds, &strategy, EmbeddingProvider::File, None).map_err(|e| e.to_string())?;
    let (model, mut train) = reference_config(seed);
    train.loss.use_mpce = use_mpce;
    let mut tr = Trainer::new(model, train, &ds, &emb, None).map_err(|e| e.to_string())?;
    tr.fit().map_err(|e| e.to_string())?;
    let table = score_table(&tr.model, &tr.store, &ds, &tr.inputs, &emb).map_err(|e| e.to_string())?;
    let zsl = evaluate(&table, &ds.split, Mode::Zsl, 0.0).map_err(|e| e.to_string())?.accuracy.unwrap_or(0.0);
    let sweep = gamma_sweep(&table, &ds.split, &default_gammas(&table, &ds.split, 200)).map_err(|e| e.to_string())?;
    Ok(RunResult {
        zsl,
        h0: sweep.points[0].harmonic,
        best_h: sweep.best_point().harmonic,
        secs: start.elapsed().as_secs_f64(),
    })
}

const SEEDS: [u64; 3] = [1, 2, 3];

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criteria_6_to_8() -> [(usize, Outcome); 3] {
    let full: Result<Vec<RunResult>, String> = SEEDS.iter().map(|&s| reference_run(s, true)).collect();
    let full = match full {
        Ok(f) => f,
        Err(e) => return [(6, Err(e.clone())), (7, Err(e.clone())), (8, Err(e))],
    };
    for (s, r) in SEEDS.iter().zip(&full) {
        println!("  seed {s}: zsl {:.4}  H(γ=0) {:.4}  best H {:.4}  {:.0} s", r.zsl, r.h0, r.best_h, r.secs);
    }
    let zsl = mean(full.iter().map(|r| r.zsl));
    let slowest = full.iter().map(|r| r.secs).fold(0.0, f64::max);
    let c6 = ensure(zsl >= 0.60 && slowest <= 600.0, format!("mean ZSL {zsl:.4}, slowest run {slowest:.0} s"))
        .map(|_| format!("mean ZSL {zsl:.4} (target 0.60), slowest run {slowest:.0} s"));

    let best_h = mean(full.iter().map(|r| r.best_h));
    let h0 = mean(full.iter().map(|r| r.h0));
    let strictly = full.iter().all(|r| r.best_h > r.h0);
    let c7 = ensure(best_h >= 0.45 && strictly, format!("mean best H {best_h:.4}, mean H(γ=0) {h0:.4}"))
        .map(|_| format!("mean best H {best_h:.4} (target 0.45) > mean H(γ=0) {h0:.4}, per seed too"));

    let ablated: Result<Vec<RunResult>, String> = SEEDS.iter().map(|&s| reference_run(s, false)).collect();
    let c8 = ablated.and_then(|a| {
        for (s, r) in SEEDS.iter().zip(&a) {
            println!("  seed {s} without part loss: zsl {:.4}", r.zsl);
        }
        let without = mean(a.iter().map(|r| r.zsl));
        ensure(without < zsl, format!("without part loss {without:.4} vs full {zsl:.4}"))
            .map(|_| format!("mean ZSL {without:.4} without the part loss < {zsl:.4} with it"))
    });
    [(6, c6), (7, c7), (8, c8)]
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let data = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth =
        SynthConfig { train_per_category: 6, test_per_category: 3, frames: 16, sem_dim: 16, ..Default::default() };
    generate_synthetic(&synth, 9, data.path()).map_err(|e| e.to_string())?;
    let ds = Dataset::load(data.path()).map_err(|e| e.to_string())?;
    let strategy = PartitionStrategy::new(ds.layout(), PartitionKind::Six).unwrap();
    let emb = SemanticEmbeddingSet::for_dataset(&ds, &strategy, EmbeddingProvider::File, None).unwrap();
    let model = ModelConfig {
        frames: 16,
        width: 16,
        heads: 2,
        attributes: 4,
        ffn_hidden: 16,
        latent: 8,
        semantic_hidden: 16,
        ..Default::default()
    };
    let train = TrainConfig {
        seed: 9,
        epochs: 4,
        batch_size: 16,
        lr: 0.05,
        lr_milestones: vec![2],
        pretrain_epochs: 3,
        ..Default::default()
    };
    let bits = |s: &ParamStore<f32>| -> Vec<u32> {
        s.iter().flat_map(|(_, p)| p.value().data().iter().map(|v| v.to_bits())).collect()
    };

    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut a = Trainer::new(model, train.clone(), &ds, &emb, Some(out.path())).map_err(|e| e.to_string())?;
    let la = a.fit().map_err(|e| e.to_string())?;
    let mut b = Trainer::new(model, train.clone(), &ds, &emb, None).map_err(|e| e.to_string())?;
    let lb = b.fit().map_err(|e| e.to_string())?;
    ensure(bits(&a.store) == bits(&b.store) && la == lb, "same-seed runs differ")?;

    let ckpt = Trainer::checkpoint_dir(out.path(), 2);
    let mut c = Trainer::resume(&ckpt, train, &ds, &emb, None).map_err(|e| e.to_string())?;
    let lc = c.fit().map_err(|e| e.to_string())?;
    ensure(bits(&c.store) == bits(&a.store), "resumed parameters differ")?;
    ensure(lc[..] == la[2..], "resumed losses differ")?;
    let ta = score_table(&a.model, &a.store, &ds, &a.inputs, &emb).unwrap();
    let tc = score_table(&c.model, &c.store, &ds, &c.inputs, &emb).unwrap();
    ensure(ta == tc, "resumed scores differ")?;
    Ok(format!("{} parameters bit-identical across reruns and a resume from epoch 2", bits(&a.store).len()))
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, Outcome)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
        (9, criterion_9()),
    ];
    if std::env::var_os("STAR_ACCEPTANCE_QUICK").is_none() {
        results.extend(criteria_6_to_8());
    }
    results.sort_by_key(|(n, _)| *n);
    let mut failed = false;
    for (n, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {n}: {detail}"),
            Err(detail) => {
                failed = true;
                println!("FAIL criterion {n}: {detail}");
            }
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
