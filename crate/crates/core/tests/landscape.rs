mod common;

use proptest::prelude::*;

use watt_core::adapt::{TemplateSet, TextBank};
use watt_core::autodiff::Tensor;
use watt_core::landscape::{build_plane, evaluate_grid, loss_and_error, plane_mean, GridSpec};
use watt_core::model::ParameterSet;
use watt_core::WattError;

use common::dot;

fn set(v: &[f64]) -> ParameterSet {
    let mut p = ParameterSet::new();
    let (a, b) = v.split_at(v.len() / 2);
    p.insert("visual.ln_pre.gamma", Tensor::new(vec![a.len()], a.to_vec()).unwrap())
        .unwrap();
    p.insert("visual.ln_pre.beta", Tensor::new(vec![b.len()], b.to_vec()).unwrap())
        .unwrap();
    p
}

fn triple() -> impl Strategy<Value = [Vec<f64>; 3]> {
    let v = || prop::collection::vec(-3.0..3.0f64, 6);
    (v(), v(), v())
        .prop_filter("non-degenerate triangle", |(a, b, c)| {
            let u: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
            let w: Vec<f64> = c.iter().zip(a).map(|(x, y)| x - y).collect();
            let (uu, ww, uw) = (dot(&u, &u), dot(&w, &w), dot(&u, &w));
            uu > 1e-2 && ww * uu - uw * uw > 1e-2 * uu
        })
        .prop_map(|(a, b, c)| [a, b, c])
}

proptest! {
    #[test]
    fn basis_is_orthonormal([a, b, c] in triple()) {
        let plane = build_plane(&set(&a), &set(&b), &set(&c)).unwrap();
        let (u, v) = (plane.u_hat(), plane.v_hat());
        prop_assert!((dot(u, u).sqrt() - 1.0).abs() <= 1e-10);
        prop_assert!((dot(v, v).sqrt() - 1.0).abs() <= 1e-10);
        prop_assert!(dot(u, v).abs() <= 1e-10);
    }

    #[test]
    fn vertices_round_trip([a, b, c] in triple()) {
        let (w0, w1, w2) = (set(&a), set(&b), set(&c));
        let plane = build_plane(&w0, &w1, &w2).unwrap();
        prop_assert!(plane.point(0.0, 0.0).unwrap().bit_eq(&w0));
        let (x1, y1) = plane.w1_coords;
        let u: Vec<f64> = b.iter().zip(&a).map(|(p, q)| p - q).collect();
        prop_assert!((x1 - dot(&u, &u).sqrt()).abs() <= 1e-12);
        prop_assert_eq!(y1, 0.0);
        for (p, want) in [(plane.point(x1, y1).unwrap(), &b), (plane.point(plane.w2_coords.0, plane.w2_coords.1).unwrap(), &c)] {
            for (g, w) in p.flatten().iter().zip(want.iter()) {
                prop_assert!((g - w).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn points_are_affine([a, b, c] in triple(), x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let plane = build_plane(&set(&a), &set(&b), &set(&c)).unwrap();
        let p = plane.point(x, y).unwrap().flatten();
        for i in 0..p.len() {
            let want = a[i] + x * plane.u_hat()[i] + y * plane.v_hat()[i];
            prop_assert!((p[i] - want).abs() <= 1e-12);
        }
        let (px, py) = plane.coords(&plane.point(x, y).unwrap()).unwrap();
        prop_assert!((px - x).abs() <= 1e-9 && (py - y).abs() <= 1e-9);
    }

    #[test]
    fn mean_sits_at_centroid([a, b, c] in triple()) {
        let (w0, w1, w2) = (set(&a), set(&b), set(&c));
        let plane = build_plane(&w0, &w1, &w2).unwrap();
        let (cx, cy) = plane.centroid();
        let (mx, my) = plane.coords(&plane_mean(&w0, &w1, &w2).unwrap()).unwrap();
        prop_assert!((cx - mx).abs() <= 1e-10 && (cy - my).abs() <= 1e-10);
        prop_assert!((cx - (plane.w1_coords.0 + plane.w2_coords.0) / 3.0).abs() <= 1e-15);
    }
}

#[test]
fn degenerate_inputs_are_errors() {
    let a = set(&[1.0, 2.0, 3.0, 4.0]);
    let b = set(&[2.0, 3.0, 4.0, 5.0]);
    let on_line = set(&[3.0, 4.0, 5.0, 6.0]);
    assert!(matches!(build_plane(&a, &a, &b), Err(WattError::Degenerate(_))));
    assert!(matches!(build_plane(&a, &b, &on_line), Err(WattError::Degenerate(_))));
    assert!(build_plane(&a, &b, &set(&[1.0, 2.0])).is_err());
}

#[test]
fn grid_contains_marked_points_and_anchor_is_exact() {
    let model = common::tiny_model(21);
    let w0 = model.ln_parameters();
    let f = w0.flatten();
    let w1 = w0
        .with_flat(
            &f.iter()
                .enumerate()
                .map(|(i, v)| v + 0.03 * ((i as f64) * 0.7).sin())
                .collect::<Vec<_>>(),
        )
        .unwrap();
    let w2 = w0
        .with_flat(
            &f.iter()
                .enumerate()
                .map(|(i, v)| v + 0.03 * ((i as f64) * 1.3).cos())
                .collect::<Vec<_>>(),
        )
        .unwrap();
    let plane = build_plane(&w0, &w1, &w2).unwrap();
    let x = common::images(22, 6);
    let labels = vec![0, 1, 2, 3, 0, 1];
    let emb = TextBank::new(&model, &TemplateSet::default_prefix(3).unwrap(), &common::names(4))
        .unwrap()
        .ensemble();
    let spec = GridSpec {
        resolution: 7,
        margin: 0.3,
    };
    let grid = evaluate_grid(&plane, &spec, &model, &x, &labels, &emb).unwrap();
    assert_eq!(grid.cells.len(), grid.xs.len() * grid.ys.len());
    assert!(grid.xs.len() >= 7 && grid.ys.len() >= 7);
    let direct = loss_and_error(&model.with_parameters(&w0).unwrap(), &x, &labels, &emb).unwrap();
    let cell = grid.cell(0.0, 0.0).unwrap();
    assert_eq!(cell.loss.to_bits(), direct.0.to_bits());
    assert_eq!(cell.error, direct.1);
    let names: Vec<&str> = grid.marked.iter().map(|m| m.name.as_str()).collect();
    assert_eq!(names, ["w0", "w1", "w2", "mean"]);
    for m in &grid.marked {
        let c = grid.cell(m.x, m.y).unwrap();
        assert_eq!(c.loss.to_bits(), m.loss.to_bits());
    }
    // The vertices are grid cells, so the grid minimum never exceeds them.
    let grid_min = grid.cells.iter().map(|c| c.loss).fold(f64::INFINITY, f64::min);
    let vertex_min = grid.marked[..3].iter().map(|m| m.loss).fold(f64::INFINITY, f64::min);
    assert!(grid_min <= vertex_min);
    // Margin: the axes reach past the triangle on both sides.
    let (xlo, xhi) = (grid.xs[0], *grid.xs.last().unwrap());
    assert!(xlo < 0f64.min(plane.w2_coords.0) && xhi > plane.w1_coords.0.max(plane.w2_coords.0));
}
