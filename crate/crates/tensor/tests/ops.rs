use bta_tensor::{finite_difference_gradient, relative_error, Tensor, TensorData, TensorError};

fn t2(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(actual.len(), expected.len(), "{actual:?} vs {expected:?}");
    for (a, e) in actual.iter().zip(expected) {
        assert!((a - e).abs() <= tol, "{actual:?} vs {expected:?}");
    }
}

#[test]
fn matmul_identity_and_hand_product() {
    let a = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let i = Tensor::eye(2);
    assert_eq!(i.matmul(&a).unwrap().to_vec(), vec![1.0, 2.0, 3.0, 4.0]);

    let b = t2(&[&[5.0], &[6.0]]);
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.shape(), &[2, 1]);
    assert_eq!(c.to_vec(), vec![17.0, 39.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let a = Tensor::<f64>::zeros(vec![2, 3]);
    let b = Tensor::<f64>::zeros(vec![2, 3]);
    let err = a.matmul(&b).unwrap_err();
    assert_eq!(
        err,
        TensorError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("[2, 3]"));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let a = TensorData::from_rows(&[vec![0.3, -1.2, 0.7], vec![1.1, 0.4, -0.5]]).unwrap();
    let b = TensorData::from_rows(&[vec![0.2, -0.9], vec![1.5, 0.6], vec![-0.3, 0.8]]).unwrap();
    let bt = Tensor::constant(&b);

    let ap = Tensor::from_data(&a, true);
    ap.matmul(&bt).unwrap().sum().backward().unwrap();
    let analytic = ap.grad().unwrap();

    let numeric = finite_difference_gradient(
        |x: &Tensor<f64>| x.matmul(&bt).map(|y| y.sum().item().unwrap()),
        &a,
        1e-5,
    )
    .unwrap();
    assert!(analytic.max_abs_diff(&numeric) <= 1e-8);
}

#[test]
fn softmax_examples() {
    let x = Tensor::from_vec(vec![0.0f64, 0.0]);
    assert_eq!(x.softmax(0, 1.0).unwrap().to_vec(), vec![0.5, 0.5]);

    for lambda in [0.0, 1.0, 10.0, 20.0, -3.0] {
        let x = Tensor::from_vec(vec![0.7f64; 8]);
        let y = x.softmax(0, lambda).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.125), "lambda {lambda}");
    }

    let x = Tensor::from_vec(vec![2f64.ln(), 0.0]);
    let y = x.softmax(0, 1.0).unwrap().to_vec();
    assert_close(&y, &[2.0 / 3.0, 1.0 / 3.0], 1e-12);
}

#[test]
fn softmax_is_stable_for_large_logits() {
    let x = Tensor::from_vec(vec![1000.0f32, 999.0, -1000.0]);
    let y = x.softmax(0, 20.0).unwrap().to_vec();
    assert!(y.iter().all(|v| v.is_finite()));
    assert!((y.iter().sum::<f32>() - 1.0).abs() < 1e-6);
}

#[test]
fn softmax_along_first_axis() {
    let x = t2(&[&[0.0, 1.0], &[0.0, 1.0]]);
    let y = x.softmax(0, 1.0).unwrap().to_vec();
    assert_close(&y, &[0.5, 0.5, 0.5, 0.5], 0.0);
}

#[test]
fn relu_examples() {
    let x = Tensor::from_vec(vec![-1.0f64, 0.0, 2.0]);
    assert_eq!(x.relu().to_vec(), vec![0.0, 0.0, 2.0]);
    let neg = Tensor::from_vec(vec![-3.0f64, -0.5, -1e-9]);
    assert!(neg.relu().to_vec().iter().all(|&v| v == 0.0));

    let x = Tensor::parameter(vec![2], vec![2.0f64, -1.0]).unwrap();
    x.relu().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), &[1.0, 0.0]);

    let data = TensorData::new(vec![2], vec![2.0, -1.0]).unwrap();
    let numeric =
        finite_difference_gradient(|x: &Tensor<f64>| Ok::<_, TensorError>(x.relu().sum().item()?), &data, 1e-5)
            .unwrap();
    assert_close(numeric.data(), &[1.0, 0.0], 1e-9);
}

#[test]
fn mean_axis_examples() {
    let x = t2(&[&[1.0, 3.0], &[5.0, 7.0]]);
    assert_eq!(x.mean_axis(0).unwrap().to_vec(), vec![3.0, 5.0]);

    let c = Tensor::full(vec![4, 3], 2.5f64);
    let m = c.mean_axis(0).unwrap();
    assert_eq!(m.shape(), &[3]);
    assert!(m.to_vec().iter().all(|&v| v == 2.5));

    let single = t2(&[&[1.5, -2.0, 4.0]]);
    assert_eq!(single.mean_axis(0).unwrap().to_vec(), single.to_vec());
}

#[test]
fn mean_over_empty_axis_is_an_error() {
    let x = Tensor::<f64>::zeros(vec![0, 4]);
    assert_eq!(
        x.mean_axis(0).unwrap_err(),
        TensorError::EmptyReduction { op: "mean_axis" }
    );
    assert!(matches!(x.mean_axis(2), Err(TensorError::Axis { .. })));
}

#[test]
fn concat_last_axis_examples() {
    let a = Tensor::from_vec(vec![1.0f64; 256]);
    let b = Tensor::from_vec(vec![2.0f64; 256]);
    let o = Tensor::concat_last_axis(&[a.clone(), b]).unwrap();
    assert_eq!(o.shape(), &[512]);
    assert_eq!(o.data()[255], 1.0);
    assert_eq!(o.data()[256], 2.0);

    let one = Tensor::concat_last_axis(std::slice::from_ref(&a)).unwrap();
    assert_eq!(one.to_vec(), a.to_vec());

    let x = Tensor::<f64>::zeros(vec![3, 2]);
    let y = Tensor::<f64>::zeros(vec![3, 3]);
    assert_eq!(Tensor::concat_last_axis(&[x.clone(), y]).unwrap().shape(), &[3, 5]);

    let bad = Tensor::<f64>::zeros(vec![4, 3]);
    assert!(matches!(
        Tensor::concat_last_axis(&[x, bad]),
        Err(TensorError::ShapeMismatch { op: "cat", .. })
    ));
}

#[test]
fn backward_examples() {
    let x = Tensor::parameter(vec![3], vec![0.2f64, -4.0, 9.0]).unwrap();
    x.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0, 1.0]);

    let x = Tensor::parameter(vec![2], vec![1.0f64, 2.0]).unwrap();
    x.mul(&x).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_accumulates_until_reset() {
    let x = Tensor::parameter(vec![2], vec![1.0f64, 2.0]).unwrap();
    x.sum().backward().unwrap();
    x.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), &[2.0, 2.0]);
    x.zero_grad();
    assert!(x.grad().is_none());
    x.scale(3.0).sum().backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), &[3.0, 3.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let x = Tensor::parameter(vec![2], vec![1.0f64, 2.0]).unwrap();
    assert_eq!(x.relu().backward().unwrap_err(), TensorError::NonScalarLoss(vec![2]));
    let c = Tensor::scalar(1.0f64);
    assert_eq!(c.backward().unwrap_err(), TensorError::NoGradient);
}

#[test]
fn two_layer_composite_matches_finite_differences() {
    let x = TensorData::from_rows(&[vec![0.5, -0.3, 1.2], vec![-0.8, 0.9, 0.1]]).unwrap();
    let w1 = TensorData::from_rows(&[
        vec![0.4, -0.7, 0.2, 0.9],
        vec![-0.5, 0.3, 0.8, -0.1],
        vec![0.6, 0.1, -0.4, 0.35],
    ])
    .unwrap();
    let w2 = TensorData::from_rows(&[vec![0.3], vec![-0.6], vec![0.9], vec![0.45]]).unwrap();
    let xc = Tensor::constant(&x);
    let w2c = Tensor::constant(&w2);
    let f = |w: &Tensor<f64>| -> Result<Tensor<f64>, TensorError> {
        Ok(xc.matmul(w)?.relu().matmul(&w2c)?.sum())
    };

    let w = Tensor::from_data(&w1, true);
    f(&w).unwrap().backward().unwrap();
    let analytic = w.grad().unwrap();
    let numeric = finite_difference_gradient(|w: &Tensor<f64>| f(w)?.item(), &w1, 1e-5).unwrap();
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        assert!(relative_error(*a, *n, 1e-8) <= 1e-6, "{a} vs {n}");
    }
}

#[test]
fn finite_difference_examples() {
    let x = TensorData::new(vec![3], vec![0.3, -2.0, 7.5]).unwrap();
    let g = finite_difference_gradient(|t: &Tensor<f64>| t.sum().item(), &x, 1e-5).unwrap();
    assert_close(g.data(), &[1.0, 1.0, 1.0], 1e-9);

    let x = TensorData::new(vec![2], vec![3.0, -1.0]).unwrap();
    let g = finite_difference_gradient(
        |t: &Tensor<f64>| Ok::<_, TensorError>(t.mul(t)?.sum().scale(0.5).item()?),
        &x,
        1e-5,
    )
    .unwrap();
    assert_close(g.data(), &[3.0, -1.0], 1e-8);
}

#[test]
fn finite_differences_agree_with_backward_on_matmul_chain() {
    let rows = |seed: f64| -> Vec<Vec<f64>> {
        (0..5)
            .map(|i| (0..5).map(|j| ((i * 5 + j) as f64 * 0.37 + seed).sin()).collect())
            .collect()
    };
    let a = TensorData::from_rows(&rows(0.1)).unwrap();
    let b = Tensor::constant(&TensorData::from_rows(&rows(1.7)).unwrap());
    let c = Tensor::constant(&TensorData::from_rows(&rows(2.9)).unwrap());
    let f = |x: &Tensor<f64>| -> Result<Tensor<f64>, TensorError> {
        let y = x.matmul(&b)?.matmul(&c)?.matmul(x)?;
        Ok(y.mul(&y)?.sum())
    };
    let p = Tensor::from_data(&a, true);
    f(&p).unwrap().backward().unwrap();
    let analytic = p.grad().unwrap();
    let numeric = finite_difference_gradient(|x: &Tensor<f64>| f(x)?.item(), &a, 1e-5).unwrap();
    for (an, nu) in analytic.data().iter().zip(numeric.data()) {
        assert!(relative_error(*an, *nu, 1e-8) <= 1e-6, "{an} vs {nu}");
    }
}

#[test]
fn shared_input_sums_both_contributions() {
    // y = sum(relu(x) * 3 + x * x): x feeds three consumers.
    let data = TensorData::new(vec![3], vec![0.5, -1.5, 2.0]).unwrap();
    let f = |x: &Tensor<f64>| -> Result<Tensor<f64>, TensorError> {
        Ok(x.relu().scale(3.0).add(&x.mul(x)?)?.sum())
    };
    let x = Tensor::from_data(&data, true);
    f(&x).unwrap().backward().unwrap();
    let numeric = finite_difference_gradient(|x: &Tensor<f64>| f(x)?.item(), &data, 1e-5).unwrap();
    assert!(x.grad().unwrap().max_abs_diff(&numeric) < 1e-8);
    assert_close(x.grad().unwrap().data(), &[4.0, -3.0, 7.0], 1e-12);
}

#[test]
fn narrow_row_and_column_slices() {
    let x = t2(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
    assert_eq!(x.row(1).unwrap().to_vec(), vec![4.0, 5.0, 6.0]);
    assert_eq!(x.narrow(1, 1, 2).unwrap().to_vec(), vec![2.0, 3.0, 5.0, 6.0]);
    assert!(matches!(x.narrow(1, 2, 2), Err(TensorError::OutOfRange { .. })));
}

#[test]
fn scalar_broadcast_only() {
    let x = Tensor::from_vec(vec![1.0f64, 2.0]);
    let s = Tensor::scalar(3.0f64);
    assert_eq!(x.add(&s).unwrap().to_vec(), vec![4.0, 5.0]);
    assert_eq!(s.sub(&x).unwrap().to_vec(), vec![2.0, 1.0]);
    let y = Tensor::<f64>::zeros(vec![2, 2]);
    assert!(x.add(&y).is_err());
}

#[test]
fn neg_log_floor() {
    let p = Tensor::parameter(vec![3], vec![0.25f64, 0.75, 0.0]).unwrap();
    let l = p.neg_log_at(1, 1e-12).unwrap();
    assert!((l.item().unwrap() - (-(0.75f64).ln())).abs() < 1e-15);
    let floored = p.neg_log_at(2, 1e-12).unwrap();
    assert!((floored.item().unwrap() - (-(1e-12f64).ln())).abs() < 1e-9);
    floored.backward().unwrap();
    assert_eq!(p.grad().unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn relu_margin_tracking() {
    let x = Tensor::from_vec(vec![-0.5f64, 0.02, 3.0]);
    let (_, margin) = bta_tensor::track_relu_margin(|| x.relu());
    assert_eq!(margin, 0.02);
    let (_, none) = bta_tensor::track_relu_margin(|| x.sigmoid());
    assert_eq!(none, f64::INFINITY);
}
