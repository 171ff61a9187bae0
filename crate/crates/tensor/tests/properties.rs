// SPDX-License-Identifier: MIT OR Apache-2.0

use memlab_tensor::{gaussian, Graph, RngStream, Tensor};
use proptest::prelude::*;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-50.0f32..50.0, len)
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>()) {
        let data: Vec<f32> = RngStream::new(seed).normals(rows * cols).iter().map(|z| (*z * 20.0) as f32).collect();
        let t = Tensor::new(vec![rows, cols], data).unwrap();
        let p = t.softmax(1).unwrap();
        for r in 0..rows {
            let s: f64 = p.row(r).iter().map(|v| *v as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rms_is_absolutely_homogeneous(v in finite_vec(12), c in -8.0f64..8.0) {
        let t = Tensor::new(vec![3, 4], v.iter().map(|x| *x as f64).collect()).unwrap();
        let scaled = t.scale(c).unwrap();
        let lhs = scaled.rms().unwrap();
        let rhs = c.abs() * t.rms().unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
    }

    #[test]
    fn ops_are_deterministic(seed in any::<u64>()) {
        let rng = RngStream::new(seed);
        let run = || {
            let mut g = Graph::<f32>::new();
            let a = g.leaf(gaussian(vec![4, 6], 1.0, &rng.substream(0)).unwrap(), true);
            let b = g.leaf(gaussian(vec![6, 5], 1.0, &rng.substream(1)).unwrap(), true);
            let m = g.matmul(a, b).unwrap();
            let l = g.cross_entropy(m, &[0, 1, 2, 4]).unwrap();
            g.backward(l).unwrap();
            (g.value(l).clone(), g.grad(a).unwrap().to_vec(), g.grad(b).unwrap().to_vec())
        };
        prop_assert_eq!(run(), run());
    }
}
