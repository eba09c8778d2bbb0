use microforge_core::autodiff::{Tape, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-50.0f64..50.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn shaped() -> impl Strategy<Value = Tensor> {
    (1usize..6, 2usize..9).prop_flat_map(|(r, c)| matrix(r, c))
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(x in shaped()) {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone()).unwrap();
        let s = tape.softmax(v).unwrap();
        let out = tape.value(s);
        for r in 0..x.rows() {
            let sum: f64 = out.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(out.row(r).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized(x in shaped()) {
        prop_assume!((0..x.rows()).all(|r| {
            let row = x.row(r);
            row.iter().any(|&v| (v - row[0]).abs() > 1e-3)
        }));
        let c = x.cols();
        let mut tape = Tape::new();
        let v = tape.constant(x.clone()).unwrap();
        let g = tape.constant(Tensor::ones(&[c])).unwrap();
        let b = tape.constant(Tensor::zeros(&[c])).unwrap();
        let y = tape.layer_norm(v, g, b).unwrap();
        let out = tape.value(y);
        for r in 0..x.rows() {
            let row = out.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn forward_and_backward_are_bitwise_repeatable(x in matrix(4, 6), w in matrix(6, 6)) {
        let run = || {
            let mut tape = Tape::new();
            let a = tape.leaf(x.clone(), true).unwrap();
            let b = tape.leaf(w.clone(), true).unwrap();
            let q = tape.matmul(a, b).unwrap();
            let s = tape.scale(q, 0.01).unwrap();
            let att = tape.attention(s, s, s, 2, 2, 2).unwrap();
            let g = tape.gelu(att).unwrap();
            let l = tape.mean(g).unwrap();
            let value = tape.value(l).item();
            let grads = tape.backward(l).unwrap();
            (value, grads.get(a).unwrap().to_vec(), grads.get(b).unwrap().to_vec())
        };
        let (v1, ga1, gb1) = run();
        let (v2, ga2, gb2) = run();
        prop_assert_eq!(v1.to_bits(), v2.to_bits());
        prop_assert!(ga1.iter().zip(&ga2).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert!(gb1.iter().zip(&gb2).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
