use bta_core::config::{AnswerSpace, ModelConfig};
use bta_core::decoders::{
    cross_entropy_loss, fuse_pool, hinge_loss, mse_loss, round_count, select_answer, stack_scores, Head,
};
use bta_core::error::Error;
use bta_core::params::{Bound, ParamStore};
use bta_tensor::{finite_difference_gradient, Tensor, TensorData};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scores(v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(v.to_vec())
}

#[test]
fn uniform_probabilities_cost_ln_of_the_class_count() {
    let p = scores(&[0.25; 4]);
    let loss = cross_entropy_loss(&p, 2).unwrap().item().unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_stays_finite_at_zero_probability() {
    let loss = cross_entropy_loss(&scores(&[1.0, 0.0]), 1).unwrap().item().unwrap();
    assert!(loss.is_finite());
    assert!((loss - 1e12f64.ln()).abs() < 1e-9);
}

#[test]
fn cross_entropy_rejects_unknown_labels() {
    assert!(matches!(
        cross_entropy_loss(&scores(&[0.5, 0.5]), 2),
        Err(Error::LabelOutOfRange { label: 2, classes: 2 })
    ));
}

#[test]
fn cross_entropy_of_softmax_has_gradient_p_minus_onehot() {
    let logits = TensorData::new(vec![4], vec![0.3, -1.2, 2.0, 0.1]).unwrap();
    let z = Tensor::from_data(&logits, true);
    let p = z.softmax(0, 1.0).unwrap();
    let probs = p.to_vec();
    cross_entropy_loss(&p, 1).unwrap().backward().unwrap();
    let grad = z.grad().unwrap();
    let numeric = finite_difference_gradient(
        |x: &Tensor<f64>| cross_entropy_loss(&x.softmax(0, 1.0)?, 1).map(|l| l.item().unwrap()),
        &logits,
        1e-6,
    )
    .unwrap();
    for i in 0..4 {
        let expected = probs[i] - if i == 1 { 1.0 } else { 0.0 };
        assert!((grad.data()[i] - expected).abs() < 1e-12);
        assert!((numeric.data()[i] - expected).abs() < 1e-6);
    }
}

#[test]
fn squared_error_examples() {
    assert_eq!(mse_loss(&scores(&[3.0]), 5.0).unwrap().item().unwrap(), 4.0);
    assert_eq!(mse_loss(&scores(&[2.5]), 2.5).unwrap().item().unwrap(), 0.0);
    let raw = Tensor::from_data(&TensorData::new(vec![1], vec![1.5]).unwrap(), true);
    mse_loss(&raw, 4.0).unwrap().backward().unwrap();
    assert_eq!(raw.grad().unwrap().data(), &[2.0 * (1.5 - 4.0)]);
}

#[test]
fn hinge_is_zero_when_every_margin_holds() {
    let l = hinge_loss(&scores(&[0.0, 0.5, 2.0]), 2).unwrap().item().unwrap();
    assert_eq!(l, 0.0);
}

#[test]
fn hinge_sums_over_negatives() {
    // max(0, 1 + 1 - 0) + max(0, 1 + 0.5 - 0) = 2 + 1.5
    let l = hinge_loss(&scores(&[1.0, 0.0, 0.5]), 1).unwrap().item().unwrap();
    assert_eq!(l, 3.5);
}

#[test]
fn hinge_gradient_at_an_active_margin() {
    let s = TensorData::new(vec![3], vec![0.2, 0.4, 0.9]).unwrap();
    let t = Tensor::from_data(&s, true);
    hinge_loss(&t, 0).unwrap().backward().unwrap();
    assert_eq!(t.grad().unwrap().data(), &[-2.0, 1.0, 1.0]);
}

#[test]
fn ties_choose_the_lowest_index() {
    assert_eq!(select_answer(&[0.1, 0.7, 0.7, 0.2]).unwrap(), 1);
    assert!(matches!(select_answer(&[]), Err(Error::EmptyScores)));
}

#[test]
fn counts_round_half_up_into_range() {
    assert_eq!(round_count(0.2, 1, 10), 1);
    assert_eq!(round_count(2.5, 1, 10), 3);
    assert_eq!(round_count(2.49, 1, 10), 2);
    assert_eq!(round_count(17.0, 1, 10), 10);
}

#[test]
fn pooling_concatenates_stream_means() {
    let v = Tensor::<f32>::zeros(vec![128, 256]);
    let m = Tensor::<f32>::zeros(vec![8, 256]);
    let fused = fuse_pool(Some(&v), Some(&m)).unwrap();
    assert_eq!(fused.o.shape(), &[512]);
    let only = fuse_pool(None, Some(&m)).unwrap();
    assert_eq!(only.o.shape(), &[256]);
    let rows = Tensor::<f64>::from_rows(&[vec![1.0, 3.0], vec![5.0, 7.0]]).unwrap();
    assert_eq!(fuse_pool(Some(&rows), None).unwrap().o.to_vec(), vec![3.0, 5.0]);
}

#[test]
fn pooling_spreads_gradient_evenly() {
    let x = Tensor::from_data(&TensorData::<f64>::full(vec![4, 2], 0.5), true);
    fuse_pool(Some(&x), None).unwrap().o.sum().backward().unwrap();
    assert!(x.grad().unwrap().data().iter().all(|&g| (g - 0.25).abs() < 1e-15));
}

#[test]
fn zero_weights_give_uniform_label_probabilities() {
    let labels: Vec<String> = (0..5).map(|i| format!("l{i}")).collect();
    let config = ModelConfig::new(8, 8, 16, AnswerSpace::OpenEnded { labels });
    let mut store = ParamStore::<f64>::new();
    let head = Head::new(&mut store, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for p in store.iter_mut() {
        p.value.data_mut().fill(0.0);
    }
    let probs = head
        .open_ended(&Bound::inference(&store), &Tensor::full(vec![16], 0.3), &Tensor::full(vec![16], -1.0))
        .unwrap();
    assert!(probs.to_vec().iter().all(|&p| (p - 0.2).abs() < 1e-12));
}

#[test]
fn head_weight_shapes_at_full_width() {
    let shape = |space: AnswerSpace, name: &str| {
        let config = ModelConfig::new(4, 300, 512, space);
        let mut store = ParamStore::<f32>::new();
        Head::new(&mut store, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        store.by_name(name).unwrap().value.shape().to_vec()
    };
    let oe = || AnswerSpace::OpenEnded {
        labels: vec!["a".into(), "b".into()],
    };
    let mc = || AnswerSpace::MultiChoice { candidates: 5 };
    assert_eq!(shape(oe(), "W_2"), [1024, 512]);
    assert_eq!(shape(mc(), "W_w"), [512, 512]);
    assert_eq!(shape(mc(), "W_a"), [512, 512]);
    assert_eq!(shape(mc(), "W_y"), [2048, 512]);
    assert_eq!(shape(mc(), "W_y'"), [512, 1]);
}

#[test]
fn head_refuses_the_wrong_task() {
    let config = ModelConfig::new(8, 8, 16, AnswerSpace::Count { min: 1, max: 10 });
    let mut store = ParamStore::<f64>::new();
    let head = Head::new(&mut store, &config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let z = Tensor::zeros(vec![16]);
    assert!(matches!(
        head.open_ended(&Bound::inference(&store), &z, &z),
        Err(Error::TaskMismatch { .. })
    ));
}

#[test]
fn stacked_scores_form_a_vector() {
    let s = stack_scores(&[Tensor::<f64>::scalar(1.0), Tensor::from_vec(vec![2.0])]).unwrap();
    assert_eq!(s.shape(), &[2]);
    assert_eq!(s.to_vec(), vec![1.0, 2.0]);
}

proptest! {
    #[test]
    fn selection_follows_a_permutation(v in proptest::collection::vec(-5.0f64..5.0, 1..10), r in 0usize..10) {
        let n = v.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + r) % n).collect();
        let permuted: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
        let best = select_answer(&v).unwrap();
        let best_p = select_answer(&permuted).unwrap();
        prop_assert_eq!(v[perm[best_p]], v[best]);
    }

    #[test]
    fn rounded_counts_stay_in_range(raw in -100.0f64..100.0, min in 0u32..5, span in 0u32..10) {
        let c = round_count(raw, min, min + span);
        prop_assert!(c >= min && c <= min + span);
    }

    #[test]
    fn hinge_is_non_negative(v in proptest::collection::vec(-5.0f64..5.0, 2..8)) {
        let l = hinge_loss(&Tensor::from_vec(v.clone()), 0).unwrap().item().unwrap();
        prop_assert!(l >= 0.0);
    }
}
