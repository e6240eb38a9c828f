use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tuneplan_core::traincore::{
    dequantize, lion_step, lomo_sgd_run, lora_forward, lora_merge, quantize_rtn, sgd_reference, Batch, LionState,
    QuantBits, ToyModel,
};

fn matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 1.0).unwrap();
    Array2::from_shape_simple_fn((rows, cols), || n.sample(&mut rng))
}

fn numerical_rank(m: &Array2<f64>) -> usize {
    let (r, c) = m.dim();
    let dm = DMatrix::from_row_iterator(r, c, m.iter().copied());
    dm.singular_values().iter().filter(|&&s| s > 1e-9).count()
}

fn shapes() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (2usize..24, 2usize..24, 1usize..8, any::<u64>())
}

proptest! {
    #[test]
    fn lora_paths_agree((out, inp, r, seed) in shapes(), alpha in 0.5f64..64.0) {
        let w = matrix(out, inp, seed);
        let a = matrix(r, inp, seed ^ 1);
        let b = matrix(out, r, seed ^ 2);
        let x = Array1::from_vec(matrix(1, inp, seed ^ 3).into_raw_vec_and_offset().0);
        let zero = Array2::zeros((out, r));
        prop_assert_eq!(lora_forward(&w, &a, &zero, alpha, r, &x).unwrap(), w.dot(&x));
        let y = lora_forward(&w, &a, &b, alpha, r, &x).unwrap();
        let merged = lora_merge(&w, &a, &b, alpha, r).unwrap().dot(&x);
        for (p, q) in y.iter().zip(&merged) {
            prop_assert!((p - q).abs() <= 1e-10);
        }
        let delta = lora_merge(&Array2::zeros((out, inp)), &a, &b, alpha, r).unwrap();
        prop_assert!(numerical_rank(&delta) <= r);
    }

    #[test]
    fn rtn_error_bound(values in proptest::collection::vec(-100.0f64..100.0, 1..300), group in 1usize..80, four in any::<bool>()) {
        let bits = if four { QuantBits::Four } else { QuantBits::Eight };
        let qt = quantize_rtn(&values, bits, group).unwrap();
        let scales = qt.scales();
        for (i, (v, d)) in values.iter().zip(dequantize(&qt)).enumerate() {
            prop_assert!((v - d).abs() <= scales[i / group] / 2.0);
        }
    }

    #[test]
    fn lion_ignores_gradient_scale(
        p in proptest::collection::vec(-1.0f64..1.0, 1..20),
        seed in any::<u64>(),
        k in 1e-6f64..1e6,
        lr in 1e-5f64..1e-1,
    ) {
        let g: Vec<f64> = matrix(1, p.len(), seed).iter().copied().collect();
        let scaled: Vec<f64> = g.iter().map(|x| x * k).collect();
        let st = LionState::new(&[p.len()]);
        let (a, _) = lion_step(&[p.clone()], &[g], &st, lr).unwrap();
        let (b, _) = lion_step(&[p], &[scaled], &st, lr).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn lomo_trajectory_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let start = ToyModel::new(&[12, 16, 10, 6], &mut rng);
    let batch = Batch {
        x: matrix(5, 12, 7),
        targets: vec![0, 5, 2, 2, 4],
    };
    let (mut fused, mut plain) = (start.clone(), start);
    for _ in 0..100 {
        let f = lomo_sgd_run(&fused, &batch, 0.05).unwrap();
        let p = sgd_reference(&plain, &batch, 0.05).unwrap();
        assert_eq!(f.peak_live_grads, 1);
        assert_eq!(p.peak_live_grads, 3);
        fused = f.model;
        plain = p.model;
    }
    for (a, b) in fused.layers.iter().zip(&plain.layers) {
        assert!((&a.w - &b.w).iter().chain((&a.b - &b.b).iter()).all(|d| d.abs() <= 1e-12));
    }
}

#[test]
fn gradients_match_central_differences() {
    use tuneplan_core::traincore::{grad_slices, Trainable};
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = ToyModel::new(&[6, 5, 4], &mut rng);
    model.add_adapters(&[0, 1], 2, 4.0, &mut rng);
    for p in model.adapters.values_mut() {
        p.b = matrix(p.b.nrows(), p.b.ncols(), 99) * 0.3;
    }
    let batch = Batch {
        x: matrix(3, 6, 5),
        targets: vec![1, 3, 0],
    };
    let (_, grads) = model.gradients(&batch).unwrap();
    let h = 1e-5;
    for which in [Trainable::All, Trainable::Adapters] {
        let analytic: Vec<Vec<f64>> = grad_slices(&grads, which).iter().map(|g| g.to_vec()).collect();
        for (t, g) in analytic.iter().enumerate() {
            for i in 0..g.len() {
                let mut plus = model.clone();
                plus.tensors_mut(which)[t][i] += h;
                let mut minus = model.clone();
                minus.tensors_mut(which)[t][i] -= h;
                let numeric = (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * h);
                let err = (numeric - g[i]).abs();
                assert!(
                    err <= 1e-5 * numeric.abs().max(g[i].abs()) || err <= 1e-10,
                    "{which:?} tensor {t} index {i}: analytic {} numeric {numeric}",
                    g[i]
                );
            }
        }
    }
}
