mod common;

use amseg::autograd::gradcheck::{grad_check, GradCheckOptions};
use amseg::{ConvGeom, Tape, Tensor};
use common::oracle::{conv_oracle, matmul_oracle, random_conv_case};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

#[test]
fn conv2d_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let (x, w, b, g) = random_conv_case(&mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let bv = b.clone().map(|b| tape.constant(b));
        let y = tape.conv2d(xv, wv, bv, g).unwrap();
        let expect = conv_oracle(&x, &w, b.as_ref(), g);
        let got = tape.value(y);
        assert_eq!(got.shape(), expect.shape(), "case {case} {g:?}");
        let diff = got.max_abs_diff(&expect);
        assert!(diff <= 1e-10, "case {case} {g:?}: {diff:e}");
    }
}

#[test]
fn depthwise_same_padding_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for &(k, d) in &[(7, 16), (5, 8), (5, 4), (3, 2), (3, 1)] {
        for size in [7, 14, 40] {
            let eff = d.min(((size - 1) / (k - 1)).max(1));
            let g = ConvGeom::same(k, eff).with_groups(4);
            let x = rand_t(&[1, 4, size, size], &mut rng);
            let w = rand_t(&[4, 1, k, k], &mut rng);
            let mut tape = Tape::new();
            let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
            let y = tape.conv2d(xv, wv, None, g).unwrap();
            assert_eq!(tape.shape(y), &[1, 4, size, size]);
            let diff = tape.value(y).max_abs_diff(&conv_oracle(&x, &w, None, g));
            assert!(diff <= 1e-10, "k{k} d{eff} size {size}: {diff:e}");
        }
    }
}

#[test]
fn conv2d_rejects_bad_shapes() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 3, 4, 4]));
    let w = tape.constant(Tensor::zeros(&[2, 2, 3, 3]));
    assert!(tape.conv2d(x, w, None, ConvGeom::same(3, 1)).is_err());
    let w = tape.constant(Tensor::zeros(&[2, 3, 9, 9]));
    assert!(tape.conv2d(x, w, None, ConvGeom::default()).is_err());
}

#[test]
fn batched_matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..50 {
        let batch = rng.gen_range(1..=4);
        let (m, k, p) = (rng.gen_range(1..=7), rng.gen_range(1..=7), rng.gen_range(1..=7));
        let a = rand_t(&[batch, m, k], &mut rng);
        let b = rand_t(&[batch, k, p], &mut rng);
        let mut tape = Tape::new();
        let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let y = tape.matmul(av, bv).unwrap();
        let got = tape.value(y);
        assert_eq!(got.shape(), &[batch, m, p]);
        assert!(got.max_abs_diff(&matmul_oracle(&a, &b)) <= 1e-10, "case {case}");
    }
}

#[test]
fn matmul_shape_mismatch_is_error() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3, 4]));
    let b = tape.constant(Tensor::zeros(&[2, 5, 4]));
    assert!(tape.matmul(a, b).is_err());
    let b = tape.constant(Tensor::zeros(&[3, 4, 4]));
    assert!(tape.matmul(a, b).is_err());
}

#[test]
fn softmax_rows_sum_to_one_and_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = Tensor::<f64>::uniform(&[3, 5, 9], -30.0, 30.0, &mut rng);
    let shifted = x.map(|v| v + 1000.0);
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(x), tape.constant(shifted));
    let (sa, sb) = (tape.softmax_last(a).unwrap(), tape.softmax_last(b).unwrap());
    let (va, vb) = (tape.value(sa), tape.value(sb));
    for row in va.data().chunks(9) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
    assert!(va.max_abs_diff(vb) < 1e-12);
    assert!(vb.is_finite());
}

#[test]
fn batchnorm_train_normalizes_each_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = Tensor::<f64>::uniform(&[8, 16, 5, 5], -3.0, 7.0, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(Tensor::ones(&[16]));
    let b = tape.constant(Tensor::zeros(&[16]));
    let (y, moments) = tape.batch_norm(xv, g, b, None, 1e-5).unwrap();
    assert!(moments.is_some());
    let y = tape.value(y);
    for c in 0..16 {
        let vals: Vec<f64> = (0..8)
            .flat_map(|n| (0..25).map(move |p| (n, p)))
            .map(|(n, p)| y.data()[(n * 16 + c) * 25 + p])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-5, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "channel {c} var {var}");
    }
}

#[test]
fn batchnorm_eval_uses_given_statistics() {
    let x = Tensor::<f64>::from_f64_slice(&[1, 2, 1, 2], &[1.0, 3.0, 10.0, 20.0]).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::from_f64_slice(&[2], &[2.0, 1.0]).unwrap());
    let b = tape.constant(Tensor::from_f64_slice(&[2], &[0.5, 0.0]).unwrap());
    let (y, moments) = tape.batch_norm(xv, g, b, Some((&[1.0, 10.0], &[4.0, 25.0])), 0.0).unwrap();
    assert!(moments.is_none());
    let expect = [0.5, 2.5, 0.0, 2.0];
    for (got, want) in tape.value(y).data().iter().zip(expect) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn split_then_concat_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = rand_t(&[2, 6, 4, 3], &mut rng);
    for axis in 0..4 {
        let parts = [2, 3, 2, 3][axis];
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let pieces = tape.split(xv, axis, parts).unwrap();
        assert_eq!(pieces.len(), parts);
        let back = tape.concat(&pieces, axis).unwrap();
        assert_eq!(tape.value(back), &x);
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    assert!(tape.split(xv, 1, 4).is_err());
}

#[test]
fn slice_reshape_transpose_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = rand_t(&[3, 4, 5], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let t = tape.transpose(xv, 0, 2).unwrap();
    assert_eq!(tape.shape(t), &[5, 4, 3]);
    assert_eq!(tape.value(t).at(&[4, 1, 2]), x.at(&[2, 1, 4]));
    let tt = tape.transpose(t, 0, 2).unwrap();
    assert_eq!(tape.value(tt), &x);
    let s = tape.slice(xv, 1, 1, 2).unwrap();
    assert_eq!(tape.value(s).at(&[2, 0, 3]), x.at(&[2, 1, 3]));
    let r = tape.reshape(xv, &[12, 5]).unwrap();
    assert_eq!(tape.value(r).data(), x.data());
    assert!(tape.reshape(xv, &[7, 9]).is_err());
    assert!(tape.slice(xv, 2, 3, 3).is_err());
}

#[test]
fn pointwise_gradients_pass_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let a = Tensor::<f64>::uniform(&[2, 3, 4], -2.0, 2.0, &mut rng);
    let b = Tensor::<f64>::uniform(&[2, 3, 4], 0.5, 2.0, &mut rng);
    // a shift constant along the softmax axis has zero gradient, so vary along it
    let ch = Tensor::<f64>::uniform(&[1, 1, 4], -1.0, 1.0, &mut rng);
    let opts = GradCheckOptions::default();
    let rep = grad_check(
        |t, v| {
            let s = t.sigmoid(v[0]);
            let m = t.mul(s, v[1])?;
            let d = t.div(m, v[1])?;
            let d = t.add(d, v[2])?;
            let d = t.scale(d, 1.7);
            let d = t.add_scalar(d, 0.3);
            t.softmax_last(d)
        },
        &[a, b, ch],
        &opts,
    )
    .unwrap();
    assert!(rep.max_rel_err() <= 1e-4, "{rep:?}");
}

fn conv_case_strategy() -> impl Strategy<Value = u64> {
    any::<u64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_matmul_gradcheck_random_shapes(seed in conv_case_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, w, b, g) = random_conv_case(&mut rng);
        let has_b = b.is_some();
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rep = grad_check(
            |t, v| {
                let y = t.conv2d(v[0], v[1], has_b.then(|| v[2]), g)?;
                let s = t.shape(y).to_vec();
                let flat = t.reshape(y, &[s[0] * s[1], s[2], s[3]])?;
                let tr = t.transpose(flat, 1, 2)?;
                t.matmul(flat, tr)
            },
            &inputs,
            &GradCheckOptions::default().seed(seed),
        )
        .unwrap();
        prop_assert!(rep.max_rel_err() <= 1e-4, "{:?} {:?}", g, rep);
    }

    #[test]
    fn shape_ops_gradcheck_random_shapes(n in 1usize..3, c in 1usize..4, h in 1usize..4, w in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_t(&[n, 2 * c, 2 * h, 2 * w], &mut rng);
        let rep = grad_check(
            |t, v| {
                let parts = t.split(v[0], 1, 2)?;
                let a = t.relu(parts[0]);
                let b = t.upsample_nearest2x(parts[1])?;
                let b = t.max_pool2x2(b)?;
                let cat = t.concat(&[b, a], 1)?;
                let p = t.permute(cat, &[0, 2, 3, 1])?;
                t.sum_trailing(p, 2)
            },
            &[x],
            &GradCheckOptions::default().seed(seed),
        )
        .unwrap();
        // relu/max-pool kinks are measure-zero for continuous random inputs
        prop_assert!(rep.max_rel_err() <= 1e-4, "{:?}", rep);
    }
}
