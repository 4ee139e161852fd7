//! Every differentiable primitive against central finite differences, on
//! randomly drawn shapes and values.

use hornet::autodiff::gradcheck::{grad_check, GradCheckOptions};
use hornet::autodiff::{Graph, NodeId, Tensor};
use hornet::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, || rng.random_range(-2.0..2.0))
}

/// Values bounded away from zero, for kinks (relu) and poles (log).
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, || {
        let m = rng.random_range(0.1..2.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn check<F>(name: &str, f: F, params: &[Tensor])
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let report = grad_check(f, params, &GradCheckOptions::default()).unwrap();
    assert!(report.passed(), "{name}: {report:?}");
}

fn all_primitives(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n, k) = (
        rng.random_range(1..=5),
        rng.random_range(1..=5),
        rng.random_range(1..=5),
    );
    let a = random(&[m, n], &mut rng);
    let b = random(&[m, n], &mut rng);
    let w = random(&[k, n], &mut rng);
    let x = random(&[n], &mut rng);
    let bias = random(&[k], &mut rng);
    let rhs = random(&[n, k], &mut rng);
    let scalar = random(&[1], &mut rng);
    let label = rng.random_range(0..k);
    let row = rng.random_range(0..m);

    check(
        "matmul",
        |g, p| {
            let y = g.matmul(p[0], p[1])?;
            Ok(g.sum(y))
        },
        &[a.clone(), rhs],
    );
    check(
        "add",
        |g, p| {
            let y = g.add(p[0], p[1])?;
            Ok(g.sum(y))
        },
        &[a.clone(), b.clone()],
    );
    check(
        "sub",
        |g, p| {
            let y = g.sub(p[0], p[1])?;
            Ok(g.sum(y))
        },
        &[a.clone(), b.clone()],
    );
    check(
        "mul",
        |g, p| {
            let y = g.mul(p[0], p[1])?;
            Ok(g.sum(y))
        },
        &[a.clone(), b.clone()],
    );
    check(
        "scalar broadcast",
        |g, p| {
            let y = g.mul(p[0], p[1])?;
            Ok(g.sum(y))
        },
        &[a.clone(), scalar],
    );
    check(
        "scale",
        |g, p| {
            let y = g.scale(p[0], -1.7);
            Ok(g.sum(y))
        },
        std::slice::from_ref(&a),
    );
    check(
        "add_const",
        |g, p| {
            let y = g.add_const(p[0], &Tensor::full(&[m, n], 0.25))?;
            Ok(g.sum(y))
        },
        std::slice::from_ref(&a),
    );
    check(
        "sigmoid",
        |g, p| {
            let y = g.sigmoid(p[0]);
            Ok(g.sum(y))
        },
        std::slice::from_ref(&a),
    );
    check(
        "tanh",
        |g, p| {
            let y = g.tanh(p[0]);
            Ok(g.sum(y))
        },
        std::slice::from_ref(&a),
    );
    check(
        "exp",
        |g, p| {
            let y = g.exp(p[0]);
            Ok(g.sum(y))
        },
        std::slice::from_ref(&a),
    );
    let positive = Tensor::from_fn(&[m, n], || rng.random_range(0.2..3.0));
    check(
        "log",
        |g, p| {
            let y = g.log(p[0])?;
            Ok(g.sum(y))
        },
        &[positive],
    );
    let kinked = away_from_zero(&[m, n], &mut rng);
    check(
        "relu",
        |g, p| {
            let y = g.relu(p[0]);
            Ok(g.sum(y))
        },
        &[kinked],
    );
    check(
        "concat",
        |g, p| {
            let c = g.concat(&[p[0], p[1]])?;
            let sq = g.mul(c, c)?;
            Ok(g.sum(sq))
        },
        &[x.clone(), bias.clone()],
    );
    check(
        "add_n",
        |g, p| {
            let y = g.add_n(&[p[0], p[1], p[0]])?;
            Ok(g.sum(y))
        },
        &[a.clone(), b.clone()],
    );
    check(
        "mean_n",
        |g, p| {
            let y = g.mean_n(&[p[0], p[1]])?;
            Ok(g.sum(y))
        },
        &[a.clone(), b.clone()],
    );
    check(
        "affine + softmax_cross_entropy",
        |g, p| {
            let logits = g.affine(p[0], p[1], p[2])?;
            g.softmax_cross_entropy(logits, label)
        },
        &[w, x.clone(), bias],
    );
    check(
        "squared_euclidean",
        |g, p| g.squared_euclidean(p[0], p[1]),
        &[x.clone(), random(&[n], &mut rng)],
    );
    check(
        "gather_row",
        |g, p| {
            let r = g.gather_row(p[0], row)?;
            let t = g.tanh(r);
            Ok(g.sum(t))
        },
        &[a],
    );
    let offset = random(&[n], &mut rng);
    check(
        "l2_normalize",
        |g, p| {
            let u = g.l2_normalize(p[0])?;
            let o = g.constant(offset.clone());
            let d = g.mul(u, o)?;
            Ok(g.sum(d))
        },
        &[away_from_zero(&[n], &mut rng)],
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn primitives_match_finite_differences(seed in any::<u64>()) {
        all_primitives(seed);
    }
}

#[test]
fn shared_subexpression_accumulates() {
    // y = s·s + s with s = x·x, so dy/dx = (2s + 1)·2x.
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(&[1.5, -0.5]));
    let s = g.mul(x, x).unwrap();
    let sq = g.mul(s, s).unwrap();
    let y = g.add(sq, s).unwrap();
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    let expected: Vec<f64> = [1.5f64, -0.5]
        .iter()
        .map(|&v| (2.0 * v * v + 1.0) * 2.0 * v)
        .collect();
    assert_eq!(g.grad(x).data(), expected.as_slice());
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(&[2.0]));
    let c = g.constant(Tensor::vector(&[3.0]));
    let y = g.mul(x, c).unwrap();
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).data(), &[3.0]);
    assert!(!g.requires_grad(c));
}
