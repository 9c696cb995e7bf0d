//! Analytic gradients against central finite differences.

mod common;

use proptest::prelude::*;

use common::oracles::{fd_rel_err, max_rel_err, Build};

use watt_core::adapt::{tta_loss_value, tta_loss_with_grads, Targets};
use watt_core::autodiff::{Graph, Tensor, Var};
use watt_core::seed::rng;

const TOL: f64 = 1e-4;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn vals(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

fn pos(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.3..3.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn matmul_2d_and_batched(a in vals(12), b in vals(8), c in vals(24), d in vals(16)) {
        let f = |g: &mut Graph, v: &[Var]| g.matmul(v[0], v[1]).unwrap();
        prop_assert!(max_rel_err(&f, vec![tensor(&[3, 4], a), tensor(&[4, 2], b)]) < TOL);
        prop_assert!(max_rel_err(&f, vec![tensor(&[2, 3, 4], c), tensor(&[2, 4, 2], d)]) < TOL);
    }

    #[test]
    fn shape_ops(a in vals(12), b in vals(4)) {
        let x = tensor(&[3, 4], a.clone());
        let cases: Vec<Box<Build>> = vec![
            Box::new(|g, v| g.transpose(v[0]).unwrap()),
            Box::new(|g, v| g.reshape(v[0], &[2, 6]).unwrap()),
            Box::new(|g, v| g.slice(v[0], 0, 1, 2).unwrap()),
            Box::new(|g, v| g.gather_rows(v[0], &[1, 1, 0]).unwrap()),
            Box::new(|g, v| g.broadcast_leading(v[0], 2).unwrap()),
        ];
        for f in &cases {
            prop_assert!(max_rel_err(f.as_ref(), vec![x.clone()]) < TOL);
        }
        let cat = |g: &mut Graph, v: &[Var]| g.concat(&[v[0], v[1]], 0).unwrap();
        prop_assert!(max_rel_err(&cat, vec![x, tensor(&[1, 4], b)]) < TOL);
    }

    #[test]
    fn elementwise_binary(a in vals(12), b in vals(12), c in pos(12), row in vals(4)) {
        let (x, y, p) = (tensor(&[3, 4], a), tensor(&[3, 4], b), tensor(&[3, 4], c));
        let add = |g: &mut Graph, v: &[Var]| g.add(v[0], v[1]).unwrap();
        let sub = |g: &mut Graph, v: &[Var]| g.sub(v[0], v[1]).unwrap();
        let mul = |g: &mut Graph, v: &[Var]| g.mul(v[0], v[1]).unwrap();
        let div = |g: &mut Graph, v: &[Var]| g.div(v[0], v[1]).unwrap();
        prop_assert!(max_rel_err(&add, vec![x.clone(), tensor(&[4], row.clone())]) < TOL);
        prop_assert!(max_rel_err(&sub, vec![x.clone(), y.clone()]) < TOL);
        prop_assert!(max_rel_err(&mul, vec![x.clone(), tensor(&[4], row)]) < TOL);
        prop_assert!(max_rel_err(&div, vec![y, p]) < TOL);
    }

    #[test]
    fn elementwise_unary(a in vals(12), c in pos(12)) {
        let x = tensor(&[3, 4], a);
        let p = tensor(&[3, 4], c);
        let exp = |g: &mut Graph, v: &[Var]| g.exp(v[0]);
        let scale = |g: &mut Graph, v: &[Var]| g.scale(v[0], 0.37);
        let gelu = |g: &mut Graph, v: &[Var]| g.gelu(v[0]);
        let log = |g: &mut Graph, v: &[Var]| g.log(v[0]);
        let sqrt = |g: &mut Graph, v: &[Var]| g.sqrt(v[0]);
        prop_assert!(max_rel_err(&exp, vec![x.clone()]) < TOL);
        prop_assert!(max_rel_err(&scale, vec![x.clone()]) < TOL);
        prop_assert!(max_rel_err(&gelu, vec![x]) < TOL);
        prop_assert!(max_rel_err(&log, vec![p.clone()]) < TOL);
        prop_assert!(max_rel_err(&sqrt, vec![p]) < TOL);
    }

    #[test]
    fn reductions_and_normalizers(a in vals(12)) {
        let x = tensor(&[3, 4], a);
        let cases: Vec<Box<Build>> = vec![
            Box::new(|g, v| g.sum(v[0], 0).unwrap()),
            Box::new(|g, v| g.mean(v[0], 1).unwrap()),
            Box::new(|g, v| g.sum_all(v[0])),
            Box::new(|g, v| g.softmax(v[0], 1).unwrap()),
            Box::new(|g, v| g.softmax(v[0], 0).unwrap()),
            Box::new(|g, v| g.log_softmax(v[0], 1).unwrap()),
            Box::new(|g, v| g.l2_normalize(v[0], 1).unwrap()),
        ];
        for f in &cases {
            prop_assert!(max_rel_err(f.as_ref(), vec![x.clone()]) < TOL);
        }
    }

    #[test]
    fn layer_norm(a in vals(15), gamma in vals(5), beta in vals(5)) {
        let f = |g: &mut Graph, v: &[Var]| g.layer_norm(v[0], v[1], v[2], 1).unwrap();
        let inputs = vec![tensor(&[3, 5], a), tensor(&[5], gamma), tensor(&[5], beta)];
        prop_assert!(max_rel_err(&f, inputs) < TOL);
    }
}

/// The whole visual encoder plus the transductive loss, with respect to
/// every visual LayerNorm coordinate, at B = 4.
#[test]
fn tta_loss_gradient_end_to_end() {
    for seed in 0..3 {
        let model = common::tiny_model(seed);
        let images = common::images(100 + seed, 4);
        let mut r = rng(200 + seed);
        let zt = common::randn(&mut r, 4, 8);
        let zt = Tensor::from_rows(&common::rows(&zt).iter().map(|v| common::unit(v)).collect::<Vec<_>>()).unwrap();
        let q = Tensor::new(vec![4, 4], vec![0.25; 16]).unwrap();
        let targets = Targets { q, zt };
        let ln = model.ln_parameters();
        let (_, grads) = tta_loss_with_grads(&model, &ln, &images, &targets).unwrap();
        let analytic: Vec<f64> = ln.names().flat_map(|n| grads.get(n).unwrap().to_vec()).collect();
        let f = |p: &[f64]| tta_loss_value(&model, &ln.with_flat(p).unwrap(), &images, &targets).unwrap();
        let rel = fd_rel_err(f, &ln.flatten(), &analytic);
        assert!(rel < TOL, "seed {seed}: relative error {rel:e}");
    }
}
