//! Every differentiable primitive checked against central finite differences
//! (f64, h = 1e-5) at relative error <= 1e-5.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use star_tensor::gradcheck::{numerical_gradients, relative_error};
use star_tensor::{Graph, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn sample(rng: &mut Xoshiro256PlusPlus, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = rng.random_range(-2.0..2.0);
        if v.abs() >= 1e-3 {
            break v;
        }
    })
}

/// Scalarize `build`'s output with fixed random weights and compare the
/// graph's gradients with finite differences for every input.
fn check<F>(name: &str, seed: u64, shapes: &[&[usize]], build: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| sample(&mut rng, s)).collect();

    let out_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.shape(out).to_vec()
    };
    let weights = sample(&mut rng, &out_shape);

    let forward = |g: &mut Graph<f64>, inputs: &[Tensor<f64>]| {
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(g, &vars);
        let w = g.constant(weights.clone());
        let prod = g.mul(out, w).unwrap();
        let loss = g.sum_all(prod).unwrap();
        (vars, loss)
    };

    let mut g = Graph::new();
    let (vars, loss) = forward(&mut g, &inputs);
    let grads = g.gradients(loss).unwrap();

    let mut f = |xs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let (_, loss) = forward(&mut g, xs);
        g.value(loss).item()
    };
    let numeric = numerical_gradients(&mut f, &inputs, H);
    for (k, (v, num)) in vars.iter().zip(&numeric).enumerate() {
        let analytic = grads.get(*v).expect("input reached by loss");
        let err = relative_error(analytic, num);
        assert!(err <= TOL, "{name}: input {k} relative error {err:.3e}");
    }
}

#[test]
fn matmul_2d() {
    check("matmul", 1, &[&[3, 4], &[4, 2]], |g, v| g.matmul(v[0], v[1]).unwrap());
}

#[test]
fn matmul_batched_lhs() {
    check("matmul [B,p,q]x[q,r]", 2, &[&[2, 3, 4], &[4, 5]], |g, v| g.matmul(v[0], v[1]).unwrap());
}

#[test]
fn matmul_batched_rhs() {
    check("matmul [p,q]x[B,q,r]", 3, &[&[3, 4], &[2, 4, 5]], |g, v| g.matmul(v[0], v[1]).unwrap());
}

#[test]
fn matmul_batched_both() {
    check("matmul [B,p,q]x[B,q,r]", 4, &[&[2, 3, 4], &[2, 4, 2]], |g, v| g.matmul(v[0], v[1]).unwrap());
}

#[test]
fn softmax() {
    check("softmax", 5, &[&[3, 5]], |g, v| g.softmax_lastdim(v[0]).unwrap());
}

#[test]
fn softmax_jacobian_at_fixed_point() {
    // Full Jacobian rows via one-hot output weights.
    let x = Tensor::new(&[1, 3], vec![0.3, -1.2, 2.0]).unwrap();
    for out_idx in 0..3 {
        let onehot = Tensor::from_fn(&[1, 3], |i| if i == out_idx { 1.0 } else { 0.0 });
        let forward = |g: &mut Graph<f64>, x: &Tensor<f64>| {
            let xv = g.input(x.clone());
            let y = g.softmax_lastdim(xv).unwrap();
            let w = g.constant(onehot.clone());
            let p = g.mul(y, w).unwrap();
            (xv, g.sum_all(p).unwrap())
        };
        let mut g = Graph::new();
        let (xv, loss) = forward(&mut g, &x);
        let analytic = g.gradients(loss).unwrap().get(xv).unwrap().clone();
        let mut f = |xs: &[Tensor<f64>]| {
            let mut g = Graph::new();
            let (_, l) = forward(&mut g, &xs[0]);
            g.value(l).item()
        };
        let num = numerical_gradients(&mut f, &[x.clone()], H);
        assert!(relative_error(&analytic, &num[0]) <= TOL);
    }
}

#[test]
fn cross_entropy() {
    check("cross_entropy", 6, &[&[4, 5]], |g, v| g.cross_entropy(v[0], &[0, 4, 2, 2]).unwrap());
}

#[test]
fn add_same_shape_and_broadcast() {
    check("add", 7, &[&[2, 3], &[2, 3]], |g, v| g.add(v[0], v[1]).unwrap());
    check("add bias", 8, &[&[2, 3, 4], &[4]], |g, v| g.add(v[0], v[1]).unwrap());
    check("add block", 9, &[&[2, 3, 4], &[3, 4]], |g, v| g.add(v[0], v[1]).unwrap());
}

#[test]
fn subtract() {
    check("sub", 10, &[&[2, 3], &[2, 3]], |g, v| g.sub(v[0], v[1]).unwrap());
    check("sub bias", 11, &[&[3, 2], &[2]], |g, v| g.sub(v[0], v[1]).unwrap());
}

#[test]
fn elementwise_multiply() {
    check("mul", 12, &[&[3, 3], &[3, 3]], |g, v| g.mul(v[0], v[1]).unwrap());
    check("mul row", 30, &[&[2, 3, 4], &[4]], |g, v| g.mul(v[0], v[1]).unwrap());
}

#[test]
fn scalar_scale() {
    check("scale", 13, &[&[2, 5]], |g, v| g.scale(v[0], -0.7).unwrap());
}

#[test]
fn relu() {
    check("relu", 14, &[&[4, 4]], |g, v| g.relu(v[0]).unwrap());
}

#[test]
fn concat_lastdim() {
    check("concat", 15, &[&[2, 3], &[2, 1], &[2, 2]], |g, v| g.concat_lastdim(v).unwrap());
}

#[test]
fn slice_lastdim() {
    check("slice", 16, &[&[2, 3, 6]], |g, v| g.slice_lastdim(v[0], 2, 3).unwrap());
}

#[test]
fn sum_and_mean_axis() {
    for axis in 0..3 {
        check("sum_axis", 17 + axis as u64, &[&[2, 3, 4]], |g, v| g.sum_axis(v[0], axis).unwrap());
        check("mean_axis", 27 + axis as u64, &[&[2, 3, 4]], |g, v| g.mean_axis(v[0], axis).unwrap());
    }
    check("sum_all", 30, &[&[3, 2]], |g, v| g.sum_all(v[0]).unwrap());
}

#[test]
fn transpose_trailing() {
    check("transpose", 31, &[&[3, 4]], |g, v| g.transpose(v[0]).unwrap());
    check("transpose batched", 32, &[&[2, 3, 4]], |g, v| g.transpose(v[0]).unwrap());
}

#[test]
fn gather_rows_with_repeats() {
    check("gather", 33, &[&[4, 3]], |g, v| g.gather_rows(v[0], &[3, 0, 3, 1]).unwrap());
}

#[test]
fn l2_normalize() {
    check("l2_normalize", 34, &[&[3, 4]], |g, v| g.l2_normalize_lastdim(v[0]).unwrap());
}

#[test]
fn reshape() {
    check("reshape", 35, &[&[2, 6]], |g, v| g.reshape(v[0], &[3, 4]).unwrap());
}

#[test]
fn composed_attention_like_chain() {
    check("chain", 36, &[&[3, 4], &[2, 5, 4], &[4, 4]], |g, v| {
        let q = g.matmul(v[0], v[2]).unwrap();
        let kt = g.transpose(v[1]).unwrap();
        let s = g.matmul(q, kt).unwrap();
        let s = g.scale(s, 0.5).unwrap();
        let a = g.softmax_lastdim(s).unwrap();
        let o = g.matmul(a, v[1]).unwrap();
        let r = g.relu(o).unwrap();
        g.mean_axis(r, 1).unwrap()
    });
}
