use super::{concat_channels, Graph, TensorError};
use crate::tensor::grad_check;

fn g64() -> Graph<f64> {
    Graph::new()
}

#[test]
fn add_basic() {
    let g = g64();
    let a = g.tensor(&[2], vec![1.0, 2.0], false);
    let b = g.tensor(&[2], vec![3.0, 4.0], false);
    assert_eq!(a.add(&b).unwrap().to_vec(), vec![4.0, 6.0]);
}

#[test]
fn add_zeros_identity() {
    let g = g64();
    let x = g.tensor(&[3], vec![0.5, -1.0, 2.0], false);
    let z = g.zeros(&[3], false);
    assert_eq!(x.add(&z).unwrap().to_vec(), x.to_vec());
}

#[test]
fn add_grad_is_ones() {
    let g = g64();
    let a = g.tensor(&[3], vec![1.0, 2.0, 3.0], true);
    let b = g.tensor(&[3], vec![4.0, 5.0, 6.0], true);
    a.add(&b).unwrap().sum().backward().unwrap();
    assert_eq!(a.grad().unwrap(), vec![1.0; 3]);
    assert_eq!(b.grad().unwrap(), vec![1.0; 3]);
}

#[test]
fn add_shape_mismatch_names_both_shapes() {
    let g = g64();
    let a = g.zeros(&[2, 3], false);
    let b = g.zeros(&[3, 2], false);
    let err = a.add(&b).unwrap_err();
    match err {
        TensorError::ShapeMismatch { lhs, rhs, .. } => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![3, 2]);
        }
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn relu_definition() {
    let g = g64();
    let x = g.tensor(&[3], vec![-1.0, 0.0, 2.0], false);
    assert_eq!(x.relu().to_vec(), vec![0.0, 0.0, 2.0]);
    let y = g.tensor(&[4], vec![-3.0, -0.1, -7.0, -0.5], false);
    assert!(y.relu().to_vec().iter().all(|&v| v == 0.0));
}

#[test]
fn relu_finite_difference() {
    // Random-ish values away from the kink (|x| > 1e-3).
    let x = [0.7, -1.3, 2.1, 0.4, -0.6, 1.9, -2.0, 0.011, 1.1, -0.9, 0.5, 0.3, -1.7, 0.8, -0.2, 1.4];
    let err = grad_check(|t| t.relu().sum(), &x, &[4, 4], 1e-5f64);
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn backward_square_sum() {
    let g = g64();
    let x = g.tensor(&[3], vec![1.0, 2.0, 3.0], true);
    x.mul(&x).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
}

#[test]
fn backward_fanout_accumulates() {
    let g = g64();
    let x = g.tensor(&[2], vec![1.0, 5.0], true);
    x.add(&x).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
}

#[test]
fn backward_fanout_scales_with_copies() {
    let g = g64();
    let x = g.tensor(&[2], vec![1.0, -1.0], true);
    let mut acc = x.clone();
    for _ in 0..4 {
        acc = acc.add(&x).unwrap();
    }
    acc.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![5.0, 5.0]);
}

#[test]
fn backward_twice_accumulates() {
    let g = g64();
    let x = g.tensor(&[2], vec![1.0, 2.0], true);
    let y = x.mul(&x).unwrap().sum();
    y.backward().unwrap();
    y.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
}

#[test]
fn backward_non_scalar_root_rejected() {
    let g = g64();
    let x = g.tensor(&[2], vec![1.0, 2.0], true);
    let y = x.mul(&x).unwrap();
    assert!(matches!(y.backward(), Err(TensorError::NonScalarRoot { .. })));
}

#[test]
fn elementwise_commutes_and_associates_f32() {
    let g: Graph<f32> = Graph::new();
    let a = g.tensor(&[4], vec![0.1, 1.7, -2.3, 0.9], false);
    let b = g.tensor(&[4], vec![-0.4, 2.2, 0.3, -1.1], false);
    let c = g.tensor(&[4], vec![0.6, -0.8, 1.5, 0.2], false);
    assert_eq!(a.add(&b).unwrap().to_vec(), b.add(&a).unwrap().to_vec());
    assert_eq!(a.mul(&b).unwrap().to_vec(), b.mul(&a).unwrap().to_vec());
    let lhs = a.add(&b).unwrap().add(&c).unwrap().to_vec();
    let rhs = a.add(&b.add(&c).unwrap()).unwrap().to_vec();
    for (x, y) in lhs.iter().zip(&rhs) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn reductions_and_axes() {
    let g = g64();
    let x = g.tensor(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], true);
    assert_eq!(x.sum().item(), 21.0);
    assert_eq!(x.mean().item(), 3.5);
    assert_eq!(x.sum_axis(0).unwrap().to_vec(), vec![5.0, 7.0, 9.0]);
    assert_eq!(x.sum_axis(1).unwrap().to_vec(), vec![6.0, 15.0]);
    assert_eq!(x.mean_axis(1).unwrap().to_vec(), vec![2.0, 5.0]);
    x.mean().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0 / 6.0; 6]);
}

#[test]
fn reshape_and_permute_roundtrip() {
    let g = g64();
    let x = g.tensor(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], true);
    let t = x.permute(&[1, 0]).unwrap();
    assert_eq!(t.shape(), &[3, 2]);
    assert_eq!(t.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    let back = t.permute(&[1, 0]).unwrap();
    assert_eq!(back.to_vec(), x.to_vec());
    let r = x.reshape(&[6]).unwrap();
    assert_eq!(r.shape(), &[6]);
    r.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
}

#[test]
fn concat_then_slice_recovers_inputs() {
    let g = g64();
    let a = g.tensor(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0], true);
    let b = g.tensor(&[1, 3, 2, 1], (0..6).map(|v| v as f64 + 10.0).collect(), true);
    let cat = concat_channels(&g, &[&a, &b]).unwrap();
    assert_eq!(cat.shape(), &[1, 5, 2, 1]);
    assert_eq!(cat.slice_channels(0, 2).unwrap().to_vec(), a.to_vec());
    assert_eq!(cat.slice_channels(2, 5).unwrap().to_vec(), b.to_vec());
    // Identity concat.
    let one = concat_channels(&g, &[&a]).unwrap();
    assert_eq!(one.to_vec(), a.to_vec());
    // Spatial mismatch is a shape error.
    let c = g.zeros(&[1, 1, 3, 1], false);
    assert!(concat_channels(&g, &[&a, &c]).is_err());
    // Gradient splits.
    cat.sum().backward().unwrap();
    assert_eq!(a.grad().unwrap(), vec![1.0; 4]);
    assert_eq!(b.grad().unwrap(), vec![1.0; 6]);
}

#[test]
fn elementwise_ops_pass_grad_check() {
    let x = [0.7, -1.3, 2.1, 0.4, -0.6, 1.9];
    let cases: Vec<(&str, Box<dyn Fn(&super::Tensor<f64>) -> super::Tensor<f64>>)> = vec![
        ("exp", Box::new(|t| t.exp().sum())),
        ("sigmoid", Box::new(|t| t.sigmoid().sum())),
        ("mul", Box::new(|t| t.mul(t).unwrap().sum())),
        ("scale", Box::new(|t| t.scale(1.7).sum())),
        ("mean", Box::new(|t| t.mean())),
        ("powf", Box::new(|t| t.mul(t).unwrap().powf(1.5).sum())),
    ];
    for (name, f) in cases {
        let err = grad_check(f, &x, &[6], 1e-5f64);
        assert!(err < 1e-4, "{name}: rel err {err}");
    }
    // log/sqrt need positive inputs.
    let pos = [0.7, 1.3, 2.1, 0.4, 0.6, 1.9];
    let err = grad_check(|t| t.ln().sum(), &pos, &[6], 1e-6f64);
    assert!(err < 1e-4, "ln: rel err {err}");
    let err = grad_check(|t| t.sqrt().sum(), &pos, &[6], 1e-6f64);
    assert!(err < 1e-4, "sqrt: rel err {err}");
    let err = grad_check(|t| t.div(&t.add_scalar(2.0)).unwrap().sum(), &pos, &[6], 1e-6f64);
    assert!(err < 1e-4, "div: rel err {err}");
}
