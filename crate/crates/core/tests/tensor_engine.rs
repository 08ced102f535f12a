use std::collections::BTreeSet;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfmt_core::tensor::gradcheck::{finite_difference_check, relative_error};
use sfmt_core::tensor::{ops, AdamW, AdamWConfig, Graph, ParamGroup, ParamStore, Tensor, Var};
use sfmt_core::Error;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.get(&[i, p]) * b.get(&[p, j]);
            }
        }
    }
    out
}

#[test]
fn matmul_hand_example() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
    let c: Tensor<f64> = ops::matmul(&a, &b).unwrap();
    assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_identity_and_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&[3, 4], &mut rng);
    assert_eq!(ops::matmul(&a, &Tensor::identity(4)).unwrap(), a);

    let b = random(&[4, 2], &mut rng);
    let c = ops::matmul(&a, &b).unwrap();
    for (x, y) in c.data().iter().zip(naive_matmul(&a, &b)) {
        assert_abs_diff_eq!(*x, y, epsilon = 1e-6);
    }
}

#[test]
fn matmul_rejects_bad_shapes_and_non_finite() {
    let a = Tensor::<f32>::zeros(&[2, 3]);
    let b = Tensor::<f32>::zeros(&[2, 3]);
    assert!(matches!(ops::matmul(&a, &b), Err(Error::Dimension { .. })));

    let mut g = Graph::<f32>::standalone();
    let mut bad = Tensor::<f32>::zeros(&[3, 1]);
    bad.data_mut()[1] = f32::NAN;
    let a = g.input(a);
    let b = g.input(bad);
    assert!(matches!(g.matmul(a, b), Err(Error::NonFinite { .. })));
}

#[test]
fn tensor_constructor_enforces_invariants() {
    assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    assert!(matches!(
        Tensor::<f32>::new(vec![1], vec![f32::INFINITY]),
        Err(Error::NonFinite { .. })
    ));
}

#[test]
fn softmax_examples() {
    let s = ops::softmax(&Tensor::new(vec![2], vec![0.0f64, 0.0]).unwrap(), 0).unwrap();
    assert_eq!(s.data(), &[0.5, 0.5]);

    let s = ops::softmax(&Tensor::new(vec![2], vec![0.0f64, 3f64.ln()]).unwrap(), 0).unwrap();
    assert_abs_diff_eq!(s.data()[0], 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(s.data()[1], 0.75, epsilon = 1e-12);

    let s = ops::softmax(&Tensor::new(vec![2], vec![1000.0f32, 1000.0]).unwrap(), 0).unwrap();
    assert_eq!(s.data(), &[0.5, 0.5]);

    let empty = Tensor::<f32>::zeros(&[3, 0]);
    assert!(matches!(ops::softmax(&empty, 1), Err(Error::Dimension { .. })));
}

#[test]
fn softmax_along_leading_axis() {
    let x = Tensor::from_rows(&[vec![0.0f64, 1.0], vec![0.0, 1.0]]).unwrap();
    let s = ops::softmax(&x, 0).unwrap();
    assert_eq!(s.data(), &[0.5, 0.5, 0.5, 0.5]);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-1.0e3f32..1.0e3, 1..40)) {
        let n = values.len();
        let t = Tensor::new(vec![1, n], values).unwrap();
        let s = ops::softmax(&t, 1).unwrap();
        let total: f32 = s.data().iter().sum();
        prop_assert!(s.data().iter().all(|&p| p >= 0.0));
        prop_assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn forward_primitives_are_pure(values in prop::collection::vec(-5.0f64..5.0, 8)) {
        let x = Tensor::new(vec![2, 4], values).unwrap();
        let gain = Tensor::full(&[4], 1.3);
        let bias = Tensor::full(&[4], -0.2);
        let a = ops::layer_norm(&x, &gain, &bias, 1e-5).unwrap();
        let b = ops::layer_norm(&x, &gain, &bias, 1e-5).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(ops::softmax(&x, 1).unwrap(), ops::softmax(&x, 1).unwrap());
    }
}

#[test]
fn layer_norm_examples() {
    let ones = Tensor::full(&[2], 1.0f64);
    let zeros = Tensor::zeros(&[2]);
    let y = ops::layer_norm(&Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap(), &ones, &zeros, 1e-5).unwrap();
    assert_abs_diff_eq!(y.data()[0], -1.0, epsilon = 1e-4);
    assert_abs_diff_eq!(y.data()[1], 1.0, epsilon = 1e-4);

    let ones3 = Tensor::full(&[3], 1.0f64);
    let zeros3 = Tensor::zeros(&[3]);
    let y = ops::layer_norm(&Tensor::full(&[1, 3], 7.5), &ones3, &zeros3, 1e-5).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

    let bias = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
    let y = ops::layer_norm(
        &Tensor::new(vec![1, 3], vec![4.0, -2.0, 9.0]).unwrap(),
        &zeros3,
        &bias,
        1e-5,
    )
    .unwrap();
    assert_eq!(y.data(), bias.data());
}

#[test]
fn cross_entropy_examples() {
    let uniform = Tensor::<f64>::zeros(&[1, 8]);
    assert_abs_diff_eq!(ops::cross_entropy(&uniform, &[3]).unwrap(), 8f64.ln(), epsilon = 1e-12);

    let mut dominant = Tensor::<f64>::zeros(&[1, 8]);
    dominant.data_mut()[5] = 20.0;
    assert!(ops::cross_entropy(&dominant, &[5]).unwrap() < 1e-6);

    let mut batch = Tensor::<f64>::zeros(&[2, 8]);
    batch.data_mut()[8 + 2] = 20.0;
    let joint = ops::cross_entropy(&batch, &[0, 2]).unwrap();
    let r0 = ops::cross_entropy(&uniform, &[0]).unwrap();
    let r1 = ops::cross_entropy(&dominant, &[5]).unwrap();
    assert_abs_diff_eq!(joint, (r0 + r1) / 2.0, epsilon = 1e-12);

    assert!(matches!(ops::cross_entropy(&uniform, &[8]), Err(Error::Index { .. })));
}

#[test]
fn backward_matches_analytic_outer_product() {
    let mut store = ParamStore::<f64>::new();
    let w = store
        .add(
            "w",
            ParamGroup::Backbone,
            Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25], vec![1.5, 3.0]]).unwrap(),
        )
        .unwrap();
    let unused = store
        .add("unused", ParamGroup::LabelHead, Tensor::full(&[2], 1.0))
        .unwrap();
    let x = Tensor::new(vec![1, 3], vec![1.0, -2.0, 4.0]).unwrap();

    let mut g = Graph::new(&store);
    let xv = g.input(x.clone());
    let wv = g.param(w);
    let y = g.matmul(xv, wv).unwrap();
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();

    // d/dW sum(x·W) = xᵀ · 1
    let gw = grads.get(w).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            assert_eq!(gw.get(&[i, j]), x.data()[i]);
        }
    }
    assert!(grads.get(unused).is_none());
    assert!(matches!(g.backward(loss), Err(Error::State(_))));
}

#[test]
fn frozen_parameters_get_no_gradient() {
    let mut store = ParamStore::<f64>::new();
    let a = store
        .add("a", ParamGroup::Backbone, Tensor::full(&[1, 2], 0.3))
        .unwrap();
    let b = store
        .add("b", ParamGroup::AudioLora, Tensor::full(&[1, 2], 0.7))
        .unwrap();
    store.set_trainable_groups(&BTreeSet::from([ParamGroup::AudioLora]));
    let mut g = Graph::new(&store);
    let (av, bv) = (g.param(a), g.param(b));
    let y = g.mul(av, bv).unwrap();
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();
    assert!(!grads.contains(a));
    assert_eq!(grads.get(b).unwrap().data(), &[0.3, 0.3]);
}

/// Central-difference check of a scalar function of free leaves.
fn check_leaves(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var) {
    let h = 1e-6;
    let mut g = Graph::standalone();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad(v).unwrap()).collect();

    let eval = |inputs: &[Tensor<f64>]| {
        let mut g = Graph::standalone();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let l = f(&mut g, &vars);
        g.value(l).item()
    };
    for (k, t) in inputs.iter().enumerate() {
        for i in 0..t.numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let err = relative_error(analytic[k].data()[i], numeric);
            assert!(
                err < 1e-5,
                "input {k} coord {i}: analytic {} numeric {numeric}",
                analytic[k].data()[i]
            );
        }
    }
}

/// Fixed random projection so every primitive sees a non-trivial upstream gradient.
fn weigh(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let w = g.input(random(&shape, &mut rng));
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    check_leaves(vec![a.clone(), b.clone()], |g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        weigh(g, y, 1)
    });
    check_leaves(vec![a.clone(), a.map(|x| x * 0.5)], |g, v| {
        let s = g.add(v[0], v[1]).unwrap();
        let y = g.mul(s, v[1]).unwrap();
        weigh(g, y, 2)
    });
    check_leaves(vec![a.clone(), random(&[4], &mut rng)], |g, v| {
        let y = g.add_row(v[0], v[1]).unwrap();
        let y = g.gelu(y);
        weigh(g, y, 3)
    });
    check_leaves(vec![a.clone()], |g, v| {
        let y = g.softmax(v[0], 1).unwrap();
        weigh(g, y, 4)
    });
    check_leaves(vec![a.clone()], |g, v| {
        let y = g.softmax(v[0], 0).unwrap();
        weigh(g, y, 5)
    });
    check_leaves(
        vec![a.clone(), random(&[4], &mut rng), random(&[4], &mut rng)],
        |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            weigh(g, y, 6)
        },
    );
    check_leaves(vec![a.clone()], |g, v| g.cross_entropy(v[0], &[1, 3, 0]).unwrap());
    check_leaves(vec![random(&[5, 3], &mut rng)], |g, v| {
        let y = g.gather_rows(v[0], &[Some(4), None, Some(0), Some(4)]).unwrap();
        weigh(g, y, 7)
    });
    check_leaves(vec![random(&[5, 3], &mut rng)], |g, v| {
        let y = g.embedding(v[0], &[2, 2, 1]).unwrap();
        weigh(g, y, 8)
    });
    check_leaves(vec![a.clone(), random(&[2, 4], &mut rng)], |g, v| {
        let y = g.concat_rows(&[v[0], v[1]]).unwrap();
        let t = g.transpose(y).unwrap();
        weigh(g, t, 9)
    });
    check_leaves(vec![a.clone(), random(&[3, 2], &mut rng)], |g, v| {
        let y = g.concat_cols(&[v[0], v[1]]).unwrap();
        let s = g.slice_cols(y, 1, 4).unwrap();
        let r = g.slice_rows(s, 1, 2).unwrap();
        weigh(g, r, 10)
    });
    check_leaves(vec![random(&[4, 4], &mut rng)], |g, v| {
        let m = g.causal_mask(v[0]).unwrap();
        let y = g.softmax(m, 1).unwrap();
        weigh(g, y, 11)
    });
    check_leaves(
        vec![
            random(&[6, 3], &mut rng),
            random(&[5, 3], &mut rng),
            random(&[3], &mut rng),
        ],
        |g, v| {
            let y = g.depthwise_conv1d(v[0], v[1], v[2]).unwrap();
            weigh(g, y, 12)
        },
    );
    check_leaves(vec![random(&[2, 6], &mut rng)], |g, v| {
        let y = g.reshape(v[0], &[3, 4]).unwrap();
        let y = g.scale(y, -1.7);
        g.mean(y)
    });
}

#[test]
fn adamw_first_step_moves_by_lr() {
    let mut store = ParamStore::<f64>::new();
    let id = store
        .add(
            "w",
            ParamGroup::AudioLora,
            Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap(),
        )
        .unwrap();
    let before = store.value(id).clone();
    let mut grads = sfmt_core::tensor::Gradients::new();
    let mut g = Graph::new(&store);
    let w = g.param(id);
    let s = g.scale(w, 0.5);
    let loss = g.sum(s);
    grads.add(&g.backward(loss).unwrap());
    store.accumulate_grads(&grads, 1.0);

    let cfg = AdamWConfig {
        lr: 1e-3,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(cfg);
    opt.step(&mut store, cfg.lr).unwrap();
    for (a, b) in store.value(id).data().iter().zip(before.data()) {
        let moved = b - a;
        assert!(((moved - 1e-3) / 1e-3).abs() < 1e-6, "moved {moved}");
    }
    assert!(store.get(id).grad.is_none());
    assert_eq!(opt.step_count(), 1);
}

#[test]
fn adamw_fixed_point_frozen_and_missing_grad() {
    let mut store = ParamStore::<f32>::new();
    let live = store
        .add("live", ParamGroup::AudioLora, Tensor::full(&[4], 0.25))
        .unwrap();
    let frozen = store
        .add("frozen", ParamGroup::Backbone, Tensor::full(&[4], 0.75))
        .unwrap();
    store.set_trainable_groups(&BTreeSet::from([ParamGroup::AudioLora]));
    let frozen_bits: Vec<u32> = store.value(frozen).data().iter().map(|v| v.to_bits()).collect();

    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    assert!(matches!(opt.step(&mut store, 1e-3), Err(Error::State(_))));

    for _ in 0..5 {
        store.get_mut(live).grad = Some(Tensor::zeros(&[4]));
        opt.step(&mut store, 1e-3).unwrap();
    }
    assert_eq!(store.value(live).data(), &[0.25; 4]);
    let after: Vec<u32> = store.value(frozen).data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(frozen_bits, after);
}

#[test]
fn finite_difference_check_is_exact_for_linear_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", ParamGroup::Backbone, random(&[4, 3], &mut rng)).unwrap();
    let b = store.add("b", ParamGroup::LabelHead, random(&[3], &mut rng)).unwrap();
    let x = random(&[5, 4], &mut rng);
    let selection: Vec<_> = (0..12).map(|i| (w, i)).chain((0..3).map(|i| (b, i))).collect();
    let report = finite_difference_check(
        &mut store,
        |g| {
            let xv = g.input(x.clone());
            let (wv, bv) = (g.param(w), g.param(b));
            let y = g.linear(xv, wv, Some(bv))?;
            Ok(g.sum(y))
        },
        1e-5,
        &selection,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-8, "{report:?}");
    assert_eq!(report.checked, 15);
    assert!(report.by_group.contains_key(&ParamGroup::Backbone));
    assert!(report.by_group.contains_key(&ParamGroup::LabelHead));
}
