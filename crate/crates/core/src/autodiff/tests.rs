use super::*;
use crate::rng::SplitMix64;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec())
}

fn random_tensor(shape: &[usize], rng: &mut SplitMix64) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.uniform(-2.0, 2.0)).collect())
}

/// Max relative error between analytic gradients of `build`'s scalar
/// output and central finite differences over every input element.
fn fd_max_rel_err<F>(build: F, inputs: &[Tensor<f64>]) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = build(&mut tape, &vars);
    let mut grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| grads.take_or_zeros(v, x.shape()))
        .collect();

    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|x| tape.constant(x.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).item()
    };

    let h = 1e-5;
    let mut worst = 0.0f64;
    for ti in 0..inputs.len() {
        for e in 0..inputs[ti].len() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[e] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let ana = analytic[ti].data()[e];
            let err = (ana - numeric).abs() / ana.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn linear_identity_passthrough() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let w = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let b = tape.constant(t(&[2], &[0.0, 0.0]));
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn linear_column_sum_with_bias() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[1.0, 2.0]));
    let w = tape.constant(t(&[2, 1], &[1.0, 1.0]));
    let b = tape.constant(t(&[1], &[3.0]));
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).shape(), &[1]);
    assert_eq!(tape.value(y).data(), &[6.0]);
}

#[test]
fn linear_shape_mismatch_is_an_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
    let w = tape.constant(t(&[2, 1], &[1.0, 1.0]));
    let b = tape.constant(t(&[1], &[0.0]));
    assert!(matches!(
        tape.linear(x, w, b),
        Err(AutodiffError::ShapeMismatch { .. })
    ));
}

#[test]
fn relu_clamps_and_masks_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[3], &[-1.0, 0.0, 2.0]));
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    let loss = tape.sum_all(y).unwrap();
    let grads = tape.backward(loss).unwrap();
    // Subgradient at 0 is 0, so the mask is exactly (x > 0).
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn relu_is_idempotent() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[4], &[-2.0, -0.5, 0.5, 3.0]));
    let y1 = tape.relu(x).unwrap();
    let y2 = tape.relu(y1).unwrap();
    assert_eq!(tape.value(y1).data(), tape.value(y2).data());
}

#[test]
fn max_reduce_basics() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 2], &[1.0, 5.0, 3.0, 2.0]));
    let y = tape.max_reduce(x, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 5.0]);

    // Length-1 axis is the identity on the remaining dims.
    let one = tape.constant(t(&[1, 3], &[4.0, -1.0, 0.5]));
    let z = tape.max_reduce(one, 0).unwrap();
    assert_eq!(tape.value(z).data(), &[4.0, -1.0, 0.5]);
}

#[test]
fn max_reduce_is_order_free() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[3, 2], &[1.0, 5.0, 3.0, 2.0, -1.0, 7.0]));
    let b = tape.constant(t(&[3, 2], &[-1.0, 7.0, 1.0, 5.0, 3.0, 2.0]));
    let ya = tape.max_reduce(a, 0).unwrap();
    let yb = tape.max_reduce(b, 0).unwrap();
    assert_eq!(tape.value(ya).data(), tape.value(yb).data());
}

#[test]
fn max_reduce_ties_route_gradient_to_first_and_conserve_mass() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[3, 1], &[2.0, 2.0, 2.0]));
    let y = tape.max_reduce(x, 0).unwrap();
    let loss = tape.sum_all(y).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = grads.get(x).unwrap().data();
    assert_eq!(g, &[1.0, 0.0, 0.0]);
    assert_eq!(g.iter().sum::<f64>(), 1.0);
}

#[test]
fn concat_and_narrow_roundtrip_bitwise() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[1], &[3.0]));
    let y = tape.concat(&[a, b], 0).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0]);

    let back_a = tape.narrow(y, 0, 0, 2).unwrap();
    let back_b = tape.narrow(y, 0, 2, 1).unwrap();
    assert_eq!(tape.value(back_a).data(), &[1.0, 2.0]);
    assert_eq!(tape.value(back_b).data(), &[3.0]);

    // Single input passes through unchanged.
    let single = tape.concat(&[a], 0).unwrap();
    assert_eq!(tape.value(single).data(), &[1.0, 2.0]);
}

#[test]
fn softmax_cross_entropy_uniform_and_saturated() {
    let mut tape = Tape::new();
    let logits = tape.constant(t(&[1, 4], &[0.7, 0.7, 0.7, 0.7]));
    let loss = tape.softmax_cross_entropy(logits, &[2]).unwrap();
    assert!((tape.value(loss).item() - 4.0f64.ln()).abs() < 1e-12);

    let hot = tape.constant(t(&[1, 3], &[1e6, 0.0, 0.0]));
    let loss = tape.softmax_cross_entropy(hot, &[0]).unwrap();
    assert!(tape.value(loss).item().abs() < 1e-9);
}

#[test]
fn softmax_cross_entropy_rejects_bad_target() {
    let mut tape = Tape::new();
    let logits = tape.constant(t(&[1, 3], &[0.0, 0.0, 0.0]));
    assert!(matches!(
        tape.softmax_cross_entropy(logits, &[3]),
        Err(AutodiffError::TargetOutOfRange { target: 3, classes: 3 })
    ));
}

#[test]
fn backward_of_plain_sum_is_all_ones() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2, 2], &[1.0, -2.0, 0.5, 4.0]));
    let loss = tape.sum_all(x).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0; 4]);
}

#[test]
fn dead_relu_branch_has_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[3], &[1.0, 2.0, 3.0])); // all positive
    let neg = tape.scale(x, -1.0).unwrap();
    let y = tape.relu(neg).unwrap();
    let loss = tape.sum_all(y).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn backward_twice_is_an_error() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[1], &[1.0]));
    let loss = tape.sum_all(x).unwrap();
    tape.backward(loss).unwrap();
    assert!(matches!(
        tape.backward(loss),
        Err(AutodiffError::TapeConsumed)
    ));
}

#[test]
fn unused_parameter_gradient_is_zero() {
    let mut tape = Tape::new();
    let used = tape.param(t(&[1], &[1.0]));
    let unused = tape.param(t(&[2], &[5.0, 6.0]));
    let loss = tape.sum_all(used).unwrap();
    let mut grads = tape.backward(loss).unwrap();
    assert!(grads.get(unused).is_none());
    assert_eq!(grads.take_or_zeros(unused, &[2]).data(), &[0.0, 0.0]);
}

#[test]
fn non_finite_values_are_detected() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1], &[1e308]));
    let doubled = tape.scale(x, 1e10);
    assert!(matches!(doubled, Err(AutodiffError::NonFinite { op: "scale" })));
}

#[test]
fn dropout_masks_scale_survivors_and_is_seed_deterministic() {
    let x_data: Vec<f64> = (0..64).map(|i| i as f64 + 1.0).collect();
    let run = |seed: u64| -> Vec<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[64], &x_data));
        let mut rng = SplitMix64::new(seed);
        let y = tape.dropout(x, 0.4, &mut rng).unwrap();
        tape.value(y).data().to_vec()
    };
    let a = run(9);
    let b = run(9);
    let c = run(10);
    assert_eq!(a, b);
    assert_ne!(a, c);
    // Every surviving element is scaled by exactly 1/(1-rate).
    for (orig, out) in x_data.iter().zip(&a) {
        assert!(*out == 0.0 || (out / orig - 1.0 / 0.6).abs() < 1e-12);
    }
    assert!(a.iter().any(|&v| v == 0.0));
    assert!(a.iter().any(|&v| v != 0.0));
}

#[test]
fn mix_rows_with_identity_is_exact_identity() {
    let mut rng = SplitMix64::new(11);
    let x = random_tensor(&[4, 3], &mut rng);
    let mut eye = vec![0.0; 16];
    for i in 0..4 {
        eye[i * 4 + i] = 1.0;
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = tape.mix_rows(xv, &eye, 4).unwrap();
    assert_eq!(tape.value(y).data(), x.data());
}

#[test]
fn repeat_rows_tiles_and_sums_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.5, -2.0]));
    let y = tape.repeat_rows(x, 3).unwrap();
    assert_eq!(tape.value(y).shape(), &[3, 2]);
    assert_eq!(tape.value(y).data(), &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0]);
    let loss = tape.sum_all(y).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[3.0, 3.0]);
}

#[test]
fn interp_rows_blends_sources() {
    let mut tape = Tape::new();
    let src = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let weights = vec![vec![(0usize, 0.8), (1usize, 0.2)]];
    let y = tape.interp_rows(src, &weights).unwrap();
    assert_eq!(tape.value(y).data(), &[0.8, 0.2]);
}

// Finite-difference checks for every differentiable primitive, on random
// inputs in [-2, 2]. Tolerance 1e-5 relative at 64-bit, step 1e-5.

#[test]
fn fd_linear() {
    let mut rng = SplitMix64::new(21);
    for _ in 0..5 {
        let x = random_tensor(&[3, 4], &mut rng);
        let w = random_tensor(&[4, 2], &mut rng);
        let b = random_tensor(&[2], &mut rng);
        let err = fd_max_rel_err(
            |tape, vars| {
                let y = tape.linear(vars[0], vars[1], vars[2]).unwrap();
                tape.sum_all(y).unwrap()
            },
            &[x, w, b],
        );
        assert!(err < 1e-5, "linear FD err {err}");
    }
}

#[test]
fn fd_relu_and_max_reduce() {
    let mut rng = SplitMix64::new(22);
    for _ in 0..5 {
        let x = random_tensor(&[3, 2, 4], &mut rng);
        let err = fd_max_rel_err(
            |tape, vars| {
                let r = tape.relu(vars[0]).unwrap();
                let m = tape.max_reduce(r, 1).unwrap();
                tape.sum_all(m).unwrap()
            },
            &[x],
        );
        assert!(err < 1e-5, "relu/max FD err {err}");
    }
}

#[test]
fn fd_sum_reduce_scale_reshape_narrow_concat() {
    let mut rng = SplitMix64::new(23);
    for _ in 0..5 {
        let x = random_tensor(&[2, 3, 2], &mut rng);
        let y = random_tensor(&[2, 2, 2], &mut rng);
        let err = fd_max_rel_err(
            |tape, vars| {
                let a = tape.narrow(vars[0], 1, 1, 2).unwrap();
                let joined = tape.concat(&[a, vars[1]], 1).unwrap();
                let flat = tape.reshape(joined, vec![4, 4]).unwrap();
                let scaled = tape.scale(flat, -1.7).unwrap();
                let summed = tape.sum_reduce(scaled, 0).unwrap();
                tape.sum_all(summed).unwrap()
            },
            &[x, y],
        );
        assert!(err < 1e-5, "structural ops FD err {err}");
    }
}

#[test]
fn fd_mix_rows_row_div_repeat_interp() {
    let mut rng = SplitMix64::new(24);
    for _ in 0..5 {
        let x = random_tensor(&[4, 3], &mut rng);
        let g = random_tensor(&[3], &mut rng);
        let weights: Vec<f64> = (0..16).map(|_| rng.uniform(0.1, 1.0)).collect();
        let divisors: Vec<f64> = (0..4).map(|_| rng.uniform(0.5, 2.0)).collect();
        let interp = vec![
            vec![(0usize, 0.5), (1usize, 0.5)],
            vec![(2usize, 0.9), (3usize, 0.1)],
            vec![(1usize, 0.3), (2usize, 0.7)],
        ];
        let err = fd_max_rel_err(
            |tape, vars| {
                let mixed = tape.mix_rows(vars[0], &weights, 4).unwrap();
                let divided = tape.row_div(mixed, &divisors).unwrap();
                let blended = tape.interp_rows(divided, &interp).unwrap();
                let tiled = tape.repeat_rows(vars[1], 3).unwrap();
                let joined = tape.concat(&[blended, tiled], 1).unwrap();
                tape.sum_all(joined).unwrap()
            },
            &[x, g],
        );
        assert!(err < 1e-5, "mixing ops FD err {err}");
    }
}

#[test]
fn fd_softmax_cross_entropy() {
    let mut rng = SplitMix64::new(25);
    for trial in 0..5 {
        let logits = random_tensor(&[4, 3], &mut rng);
        let targets = [trial % 3, 0, 2, 1];
        let err = fd_max_rel_err(
            |tape, vars| tape.softmax_cross_entropy(vars[0], &targets).unwrap(),
            &[logits],
        );
        assert!(err < 1e-5, "cross-entropy FD err {err}");
    }
}

#[test]
fn fd_dropout_with_fixed_mask() {
    let mut rng = SplitMix64::new(26);
    let x = random_tensor(&[5, 4], &mut rng);
    let err = fd_max_rel_err(
        |tape, vars| {
            let mut mask_rng = SplitMix64::new(123);
            let y = tape.dropout(vars[0], 0.4, &mut mask_rng).unwrap();
            tape.sum_all(y).unwrap()
        },
        &[x],
    );
    assert!(err < 1e-5, "dropout FD err {err}");
}

#[test]
fn fd_composite_chain() {
    // One deeper chain mixing most primitives, closer to the real network.
    let mut rng = SplitMix64::new(27);
    let x = random_tensor(&[4, 5], &mut rng);
    let w1 = random_tensor(&[5, 6], &mut rng);
    let b1 = random_tensor(&[6], &mut rng);
    let w2 = random_tensor(&[6, 3], &mut rng);
    let b2 = random_tensor(&[3], &mut rng);
    let err = fd_max_rel_err(
        |tape, vars| {
            let h = tape.linear(vars[0], vars[1], vars[2]).unwrap();
            let h = tape.relu(h).unwrap();
            let h = tape.linear(h, vars[3], vars[4]).unwrap();
            tape.softmax_cross_entropy(h, &[0, 2, 1, 1]).unwrap()
        },
        &[x, w1, b1, w2, b2],
    );
    assert!(err < 1e-5, "composite FD err {err}");
}

#[test]
fn forward_is_bitwise_deterministic() {
    let mut rng = SplitMix64::new(28);
    let x = random_tensor(&[6, 5], &mut rng);
    let w = random_tensor(&[5, 4], &mut rng);
    let b = random_tensor(&[4], &mut rng);
    let run = || {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let bv = tape.constant(b.clone());
        let y = tape.linear(xv, wv, bv).unwrap();
        let r = tape.relu(y).unwrap();
        let m = tape.max_reduce(r, 0).unwrap();
        tape.value(m).data().to_vec()
    };
    assert_eq!(run(), run());
}
