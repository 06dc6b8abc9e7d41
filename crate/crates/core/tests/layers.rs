use bta_core::error::{Error, ErrorClass};
use bta_core::layers::{normalized_operator, set_identity, Activation, BiGruEncoder, GcnStack, GruCell, Linear, SelfLoops};
use bta_core::params::{Bound, ParamStore};
use bta_tensor::{Tensor, TensorData};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> TensorData<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    TensorData::new(vec![rows, cols], data).unwrap()
}

fn random_graph(rng: &mut impl Rng, n: usize) -> TensorData<f64> {
    let mut a = TensorData::zeros(vec![n, n]);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(0.4) {
                let w = rng.random_range(0.1..1.0);
                a.data_mut()[i * n + j] = w;
                a.data_mut()[j * n + i] = w;
            }
        }
    }
    a
}

/// `relu(Σ_j Â_ij / √(d_i d_j) · x_j W)` evaluated node by node.
fn gcn_brute_force(a: &TensorData<f64>, x: &TensorData<f64>, w: &TensorData<f64>) -> Vec<f64> {
    let n = a.shape()[0];
    let (f_in, f_out) = (w.shape()[0], w.shape()[1]);
    let a_hat = |i: usize, j: usize| a.at(i, j) + if i == j { 1.0 } else { 0.0 };
    let degree: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a_hat(i, j)).sum()).collect();
    let mut out = vec![0.0; n * f_out];
    for i in 0..n {
        for j in 0..n {
            let c = a_hat(i, j) / (degree[i] * degree[j]).sqrt();
            for o in 0..f_out {
                let xw: f64 = (0..f_in).map(|f| x.at(j, f) * w.at(f, o)).sum();
                out[i * f_out + o] += c * xw;
            }
        }
    }
    out.iter().map(|v| v.max(0.0)).collect()
}

#[test]
fn linear_relu_hand_example() {
    let mut store = ParamStore::<f64>::new();
    let layer = Linear::new(&mut store, "t", 2, 2, Activation::Relu, &mut rng(0)).unwrap();
    set_identity(&mut store, &layer).unwrap();
    store.set_value(layer.bias, TensorData::new(vec![2], vec![-2.0, 0.0]).unwrap()).unwrap();
    let p = Bound::inference(&store);
    let y = layer.forward(&p, &Tensor::from_vec(vec![1.0, 1.0])).unwrap();
    assert_eq!(y.shape(), &[2]);
    assert_eq!(y.to_vec(), vec![0.0, 1.0]);
}

#[test]
fn linear_keeps_batch_shape() {
    let mut store = ParamStore::<f32>::new();
    let layer = Linear::new(&mut store, "w", 512, 512, Activation::Identity, &mut rng(1)).unwrap();
    let p = Bound::inference(&store);
    let y = layer.forward(&p, &Tensor::zeros(vec![5, 512])).unwrap();
    assert_eq!(y.shape(), &[5, 512]);
}

#[test]
fn two_node_graph_averages_features() {
    let mut store = ParamStore::<f64>::new();
    let gcn = GcnStack::new(&mut store, "g", &[1, 1], &mut rng(0)).unwrap();
    store.set_value(gcn.weights[0], TensorData::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
    let a = Tensor::<f64>::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let op = normalized_operator(&a, SelfLoops::Add).unwrap();
    assert!(op.to_vec().iter().all(|v| (v - 0.5).abs() < 1e-15));
    let x = Tensor::from_rows(&[vec![2.0], vec![4.0]]).unwrap();
    let z = gcn.forward(&Bound::inference(&store), &a, &x, SelfLoops::Add).unwrap();
    assert!(z.to_vec().iter().all(|v| (v - 3.0).abs() < 1e-12));
}

#[test]
fn gcn_without_edges_is_a_plain_projection() {
    let mut r = rng(4);
    let mut store = ParamStore::<f64>::new();
    let gcn = GcnStack::new(&mut store, "g", &[3, 4], &mut r).unwrap();
    let x = random_matrix(&mut r, 5, 3);
    let z = gcn
        .forward(&Bound::inference(&store), &Tensor::zeros(vec![5, 5]), &Tensor::constant(&x), SelfLoops::Add)
        .unwrap();
    let w = &store.get(gcn.weights[0]).value;
    let expected = Tensor::constant(&x).matmul(&Tensor::constant(w)).unwrap().relu();
    assert!(z.to_data().max_abs_diff(&expected.to_data()) < 1e-12);
}

#[test]
fn gcn_matches_neighbour_sum_on_six_node_graphs() {
    let mut r = rng(6);
    for _ in 0..20 {
        let mut store = ParamStore::<f64>::new();
        let gcn = GcnStack::new(&mut store, "g", &[3, 2], &mut r).unwrap();
        let a = random_graph(&mut r, 6);
        let x = random_matrix(&mut r, 6, 3);
        let z = gcn
            .forward(&Bound::inference(&store), &Tensor::constant(&a), &Tensor::constant(&x), SelfLoops::Add)
            .unwrap();
        let oracle = gcn_brute_force(&a, &x, &store.get(gcn.weights[0]).value);
        for (got, want) in z.to_vec().iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }
}

#[test]
fn existing_loops_reject_an_isolated_row() {
    let a = Tensor::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
    match normalized_operator(&a, SelfLoops::Existing) {
        Err(e @ Error::DegenerateDegree { row: 1, .. }) => assert_eq!(e.class(), ErrorClass::Validation),
        other => panic!("expected a degenerate degree, got {other:?}"),
    }
    let nan = Tensor::<f64>::from_rows(&[vec![1.0, f64::NAN], vec![0.0, 1.0]]).unwrap();
    match normalized_operator(&nan, SelfLoops::Existing) {
        Err(e @ Error::DegenerateDegree { row: 0, .. }) => assert_eq!(e.class(), ErrorClass::Numeric),
        other => panic!("expected a degenerate degree, got {other:?}"),
    }
}

#[test]
fn gcn_needs_a_layer() {
    let mut store = ParamStore::<f64>::new();
    assert!(matches!(
        GcnStack::new(&mut store, "g", &[4], &mut rng(0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn zero_gru_halves_the_state() {
    let mut store = ParamStore::<f64>::new();
    let cell = GruCell::new(&mut store, "t", 3, 2, &mut rng(0)).unwrap();
    for p in store.iter_mut() {
        p.value.data_mut().fill(0.0);
    }
    let p = Bound::inference(&store);
    let h = Tensor::from_rows(&[vec![0.8, -0.4]]).unwrap();
    let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
    let next = cell.step(&p, &x, &h).unwrap();
    assert_eq!(next.to_vec(), vec![0.4, -0.2]);
}

#[test]
fn reversing_tokens_swaps_directions() {
    let mut r = rng(11);
    let mut store = ParamStore::<f64>::new();
    let enc = BiGruEncoder::new(&mut store, 4, 6, &mut r).unwrap();
    // Tie the backward cell to the forward one so the two directions differ
    // only in reading order.
    for gate in ["z", "r", "h"] {
        for kind in ["W", "b"] {
            let value = store.by_name(&format!("{kind}_{gate}^fwd")).unwrap().value.clone();
            let id = store.id(&format!("{kind}_{gate}^bwd")).unwrap();
            store.set_value(id, value).unwrap();
        }
    }
    let k = 5;
    let x = random_matrix(&mut r, k, 4);
    let reversed = TensorData::from_rows(&x.rows().into_iter().rev().collect::<Vec<_>>()).unwrap();
    let p = Bound::inference(&store);
    let h = enc.hidden_states(&p, &Tensor::constant(&x)).unwrap().to_data();
    let h_rev = enc.hidden_states(&p, &Tensor::constant(&reversed)).unwrap().to_data();
    let half = 3;
    for i in 0..k {
        let row = h.row(k - 1 - i);
        let swapped: Vec<f64> = row[half..].iter().chain(&row[..half]).copied().collect();
        let got = h_rev.row(i);
        for (a, b) in got.iter().zip(&swapped) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn encoder_output_shape_at_full_width() {
    let mut store = ParamStore::<f32>::new();
    let enc = BiGruEncoder::new(&mut store, 300, 512, &mut rng(2)).unwrap();
    let u = enc
        .encode(&Bound::inference(&store), &Tensor::zeros(vec![12, 300]))
        .unwrap();
    assert_eq!(u.shape(), &[12, 512]);
}

#[test]
fn encoder_rejects_an_empty_question() {
    let mut store = ParamStore::<f64>::new();
    let enc = BiGruEncoder::new(&mut store, 4, 6, &mut rng(0)).unwrap();
    let r = enc.encode(&Bound::inference(&store), &Tensor::zeros(vec![0, 4]));
    assert!(matches!(r, Err(Error::EmptyQuestion)));
}

proptest! {
    #[test]
    fn normalized_operator_is_symmetric(seed in any::<u64>(), n in 1usize..8) {
        let a = random_graph(&mut rng(seed), n);
        let op = normalized_operator(&Tensor::constant(&a), SelfLoops::Add).unwrap().to_data();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((op.at(i, j) - op.at(j, i)).abs() < 1e-12);
            }
        }
    }
}
