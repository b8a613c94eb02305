use claimspot::autodiff::{grad_check, Graph, NodeId, OpKind, Real, Tensor};
use claimspot::Error;
use proptest::prelude::*;

fn leaf(g: &mut Graph, shape: &[usize], values: Vec<Real>) -> NodeId {
    g.leaf(Tensor::new(shape.to_vec(), values).unwrap().with_requires_grad(true))
        .unwrap()
}

/// Reduces any node to a scalar through a fixed random weighting so every
/// output entry contributes a distinct amount to the root.
fn weighted_sum(g: &mut Graph, node: NodeId, weights: &[Real]) -> NodeId {
    let shape = g.shape(node).to_vec();
    let n: usize = shape.iter().product();
    let w = g
        .constant(Tensor::new(shape, weights[..n].to_vec()).unwrap())
        .unwrap();
    let prod = g.mul(node, w).unwrap();
    g.sum(prod).unwrap()
}

#[test]
fn add_elementwise() {
    let mut g = Graph::new();
    let a = leaf(&mut g, &[2], vec![1.0, 2.0]);
    let b = leaf(&mut g, &[2], vec![3.0, 4.0]);
    let c = g.add(a, b).unwrap();
    assert_eq!(g.forward(c).unwrap().values(), &[4.0, 6.0]);
}

#[test]
fn identity_matmul_is_noop() {
    let m = vec![0.3, -1.2, 4.0, 0.5];
    let mut g = Graph::new();
    let i = g.constant(Tensor::identity(2)).unwrap();
    let mm = leaf(&mut g, &[2, 2], m.clone());
    let out = g.matmul(i, mm).unwrap();
    assert_eq!(g.forward(out).unwrap().values(), m.as_slice());
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::new();
    let z = leaf(&mut g, &[2], vec![0.0, 0.0]);
    let p = g.softmax(z).unwrap();
    assert_eq!(g.forward(p).unwrap().values(), &[0.5, 0.5]);
}

#[test]
fn sum_gradient_is_ones() {
    let mut g = Graph::new();
    let x = leaf(&mut g, &[3], vec![1.0, 2.0, 3.0]);
    let s = g.sum(x).unwrap();
    g.forward(s).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads[&x].grad().unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn dot_with_self_gradient_is_twice_x() {
    let mut g = Graph::new();
    let x = leaf(&mut g, &[2], vec![2.0, 3.0]);
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.forward(s).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads[&x].grad().unwrap(), &[4.0, 6.0]);
}

#[test]
fn cross_entropy_gradient_at_uniform_logits() {
    let mut g = Graph::new();
    let z = leaf(&mut g, &[1, 2], vec![0.0, 0.0]);
    let p = g.softmax(z).unwrap();
    let p0 = g.slice(p, 1, 0, 1).unwrap();
    let lp = g.log(p0).unwrap();
    let s = g.sum(lp).unwrap();
    let loss = g.scale(s, -1.0).unwrap();
    g.forward(loss).unwrap();
    let grads = g.backward(loss).unwrap();
    let dz = grads[&z].grad().unwrap();
    assert!((dz[0] + 0.5).abs() < 1e-12 && (dz[1] - 0.5).abs() < 1e-12, "{dz:?}");
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = leaf(&mut g, &[2], vec![1.0, 2.0]);
    let b = leaf(&mut g, &[3], vec![1.0, 2.0, 3.0]);
    match g.add(a, b) {
        Err(Error::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2]);
            assert_eq!(rhs, vec![3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn nan_is_reported_with_its_node() {
    let mut g = Graph::new();
    let a = leaf(&mut g, &[1], vec![-1.0]);
    let l = g.log(a).unwrap();
    match g.forward(l) {
        Err(Error::Numeric { node, op }) => {
            assert_eq!(node, l.index());
            assert_eq!(op, "log");
        }
        other => panic!("expected numeric error, got {other:?}"),
    }
}

#[test]
fn backward_needs_scalar_root_and_prior_forward() {
    let mut g = Graph::new();
    let a = leaf(&mut g, &[2], vec![1.0, 2.0]);
    let s = g.sum(a).unwrap();
    assert!(matches!(g.backward(s), Err(Error::State(_))));
    g.forward(s).unwrap();
    assert!(matches!(g.backward(a), Err(Error::Contract(_))));
}

#[test]
fn graph_is_sealed_after_forward() {
    let mut g = Graph::new();
    let a = leaf(&mut g, &[1], vec![1.0]);
    g.forward(a).unwrap();
    assert!(matches!(g.exp(a), Err(Error::State(_))));
}

#[test]
fn fan_out_accumulates() {
    // root = sum(exp(x)) + sum(3x) equals the sum of the two single-consumer gradients
    let x0 = vec![0.1, -0.4, 0.7];
    let grad_of = |build: &dyn Fn(&mut Graph, NodeId) -> NodeId| {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[3], x0.clone());
        let r = build(&mut g, x);
        g.forward(r).unwrap();
        g.backward(r).unwrap()[&x].grad().unwrap().to_vec()
    };
    let exp_branch = |g: &mut Graph, x| {
        let e = g.exp(x).unwrap();
        g.sum(e).unwrap()
    };
    let lin_branch = |g: &mut Graph, x| {
        let s = g.scale(x, 3.0).unwrap();
        g.sum(s).unwrap()
    };
    let both = grad_of(&|g: &mut Graph, x| {
        let a = exp_branch(g, x);
        let b = lin_branch(g, x);
        g.add(a, b).unwrap()
    });
    let ga = grad_of(&exp_branch);
    let gb = grad_of(&lin_branch);
    for i in 0..3 {
        assert!((both[i] - (ga[i] + gb[i])).abs() < 1e-12);
    }
}

#[test]
fn forward_is_deterministic() {
    let build = || {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2, 3], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]);
        let gam = leaf(&mut g, &[3], vec![1.0, 0.9, 1.1]);
        let bet = leaf(&mut g, &[3], vec![0.0, 0.1, -0.1]);
        let ln = g.layer_norm(x, gam, bet).unwrap();
        let ge = g.gelu(ln).unwrap();
        let d = g.dropout(ge, &[true, false, true, true, true, false], 0.7).unwrap();
        let s = g.sum(d).unwrap();
        g.forward(s).unwrap().values()[0]
    };
    assert_eq!(build().to_bits(), build().to_bits());
}

#[test]
fn quadratic_grad_check_is_tight() {
    let mut g = Graph::new();
    let x = leaf(&mut g, &[3], vec![0.3, -0.8, 1.5]);
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    assert!(grad_check(&g, s, x, 1e-4).unwrap() < 1e-5);
}

#[test]
fn constant_root_has_zero_error() {
    let mut g = Graph::new();
    let x = leaf(&mut g, &[2], vec![0.3, -0.8]);
    let c = g.constant(Tensor::from_vec(vec![2.0])).unwrap();
    let s = g.sum(c).unwrap();
    assert_eq!(grad_check(&g, s, x, 1e-4).unwrap(), 0.0);
}

#[test]
fn node_view_reports_kind_and_parents() {
    let mut g = Graph::new();
    let a = leaf(&mut g, &[2], vec![1.0, 2.0]);
    let b = leaf(&mut g, &[2], vec![1.0, 2.0]);
    let c = g.sub(a, b).unwrap();
    let view = g.node(c);
    assert_eq!(view.op_kind, OpKind::Sub);
    assert_eq!(view.parents, vec![a, b]);
    assert!(view.output.is_none());
    assert!(g.node(a).parents.is_empty());
}

// ---- per-op finite-difference properties ----

const OPS: &[&str] = &[
    "add", "sub", "mul", "add_row", "matmul", "transpose", "concat0", "concat1", "slice0",
    "slice1", "softmax", "log_softmax", "log", "exp", "layer_norm", "gelu", "tanh", "dropout",
    "scale", "sum", "mean", "l2_norm", "gather",
];

fn op_case(op: &str, rows: usize, cols: usize, vals: &[Real], mask: &[bool]) -> Real {
    let n = rows * cols;
    let mut g = Graph::new();
    let a = leaf(&mut g, &[rows, cols], vals[..n].to_vec());
    let b = leaf(&mut g, &[rows, cols], vals[n..2 * n].to_vec());
    let out = match op {
        "add" => g.add(a, b).unwrap(),
        "sub" => g.sub(a, b).unwrap(),
        "mul" => g.mul(a, b).unwrap(),
        "add_row" => {
            let r = leaf(&mut g, &[cols], vals[2 * n..2 * n + cols].to_vec());
            g.add_row(a, r).unwrap()
        }
        "matmul" => {
            let bt = g.transpose(b).unwrap();
            g.matmul(a, bt).unwrap()
        }
        "transpose" => g.transpose(a).unwrap(),
        "concat0" => g.concat(&[a, b], 0).unwrap(),
        "concat1" => g.concat(&[a, b], 1).unwrap(),
        "slice0" => g.slice(a, 0, 0, rows.div_ceil(2)).unwrap(),
        "slice1" => g.slice(a, 1, cols / 2, cols).unwrap(),
        "softmax" => g.softmax(a).unwrap(),
        "log_softmax" => g.log_softmax(a).unwrap(),
        "log" => {
            let e = g.exp(a).unwrap();
            g.log(e).unwrap()
        }
        "exp" => g.exp(a).unwrap(),
        "layer_norm" => {
            let gam = leaf(&mut g, &[cols], vals[2 * n..2 * n + cols].to_vec());
            let bet = leaf(&mut g, &[cols], vals[2 * n + cols..2 * n + 2 * cols].to_vec());
            g.layer_norm(a, gam, bet).unwrap()
        }
        "gelu" => g.gelu(a).unwrap(),
        "tanh" => g.tanh(a).unwrap(),
        "dropout" => g.dropout(a, &mask[..n], 0.8).unwrap(),
        "scale" => g.scale(a, -1.7).unwrap(),
        "sum" => g.sum(a).unwrap(),
        "mean" => g.mean(a).unwrap(),
        "l2_norm" => g.l2_norm(a).unwrap(),
        "gather" => {
            let ids: Vec<usize> = (0..rows + 2).map(|i| (i * 7 + 3) % rows).collect();
            g.gather(a, &ids).unwrap()
        }
        other => unreachable!("{other}"),
    };
    let weights: Vec<Real> = vals.iter().rev().cycle().take(4 * n + 32).copied().collect();
    let root = weighted_sum(&mut g, out, &weights);
    let mut worst: Real = 0.0;
    for l in [a, b] {
        worst = worst.max(grad_check(&g, root, l, 1e-4).unwrap());
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn every_op_passes_grad_check(
        op_ix in 0..OPS.len(),
        rows in 1usize..=8,
        cols in 2usize..=8,
        vals in prop::collection::vec(-1.0f64..1.0, 2 * 64 + 16),
        mask in prop::collection::vec(any::<bool>(), 64),
    ) {
        if OPS[op_ix] == "layer_norm" {
            // normalization of a (nearly) constant row is ill-conditioned for
            // finite differences; require some spread in every row
            prop_assume!(cols >= 3);
            prop_assume!(vals[..rows * cols].chunks(cols).all(|r| {
                let hi = r.iter().copied().fold(Real::MIN, Real::max);
                let lo = r.iter().copied().fold(Real::MAX, Real::min);
                hi - lo > 0.2
            }));
        }
        let err = op_case(OPS[op_ix], rows, cols, &vals, &mask);
        prop_assert!(err < 1e-4, "{} ({}x{}): relative error {}", OPS[op_ix], rows, cols, err);
    }
}

#[test]
fn all_ops_pass_grad_check_on_fixed_draw() {
    let vals: Vec<Real> = (0..200).map(|i| ((i as Real) * 0.37).sin() * 0.9).collect();
    let mask: Vec<bool> = (0..64).map(|i| i % 3 != 0).collect();
    for op in OPS {
        let err = op_case(op, 3, 4, &vals, &mask);
        assert!(err < 1e-4, "{op}: {err}");
    }
}
