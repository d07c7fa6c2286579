use proptest::prelude::*;

use roigan::data::{decode_stack, encode_stack, MaskStack, SliceStack};
use roigan::metrics::{diagonal, dice, hausdorff};
use roigan::tensor::{Graph, Tensor};
use roigan::train::{Checkpoint, Entry};

/// `(cin, cout, k, stride, pad, ho, wo, batch)` where the input extent is
/// chosen so the strided windows tile it exactly.
fn geometry() -> impl Strategy<Value = (usize, usize, usize, usize, usize, usize, usize, usize)> {
    (
        1usize..4,
        1usize..4,
        1usize..6,
        1usize..4,
        0usize..3,
        1usize..6,
        1usize..6,
        1usize..3,
    )
        .prop_filter("padding smaller than kernel", |g| g.4 < g.2)
}

fn values(len: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    (0..len)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

fn mask(bits: &[bool]) -> Vec<u8> {
    bits.iter().map(|&b| u8::from(b)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// `<conv(x), y> = <x, conv_transpose(y)>` for the same weights.
    #[test]
    fn transposed_convolution_is_the_adjoint((cin, cout, k, s, p, ho, wo, n) in geometry(), seed in any::<u64>()) {
        let extent = |o: usize| ((o - 1) * s + k).checked_sub(2 * p).filter(|&e| e > 0);
        prop_assume!(extent(ho).is_some() && extent(wo).is_some());
        let (h, w) = (extent(ho).unwrap(), extent(wo).unwrap());
        let x = Tensor::new(vec![n, cin, h, w], values(n * cin * h * w, seed)).unwrap();
        let wt = Tensor::new(vec![cout, cin, k, k], values(cout * cin * k * k, seed ^ 1)).unwrap();
        let y = Tensor::new(vec![n, cout, ho, wo], values(n * cout * ho * wo, seed ^ 2)).unwrap();
        let mut g = Graph::new();
        let (xv, wv, yv) = (g.constant(x.clone()), g.constant(wt), g.constant(y.clone()));
        let fwd = g.conv2d(xv, wv, None, s, p).unwrap();
        prop_assert_eq!(g.shape(fwd), &[n, cout, ho, wo]);
        let back = g.conv_transpose2d(yv, wv, None, s, p).unwrap();
        prop_assert_eq!(g.shape(back), &[n, cin, h, w]);
        let lhs = g.value(fwd).dot(&y);
        let rhs = x.dot(g.value(back));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn dice_is_a_symmetric_similarity(a in prop::collection::vec(any::<bool>(), 64), b in prop::collection::vec(any::<bool>(), 64)) {
        let (a, b) = (mask(&a), mask(&b));
        let d = dice(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dice(&b, &a).unwrap());
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn hausdorff_is_a_bounded_metric(
        a in prop::collection::vec(any::<bool>(), 64),
        b in prop::collection::vec(any::<bool>(), 64),
        c in prop::collection::vec(any::<bool>(), 64),
        sy in 0.3f64..3.0,
        sx in 0.3f64..3.0,
    ) {
        let (a, b, c) = (mask(&a), mask(&b), mask(&c));
        let sp = (sy, sx);
        let hd = |p: &[u8], q: &[u8]| hausdorff(p, q, 8, 8, sp).unwrap();
        prop_assert_eq!(hd(&a, &a), 0.0);
        prop_assert_eq!(hd(&a, &b), hd(&b, &a));
        prop_assert!(hd(&a, &b) <= diagonal(8, 8, sp));
        let nonempty = |m: &[u8]| m.contains(&1);
        if nonempty(&a) && nonempty(&b) && nonempty(&c) {
            prop_assert!(hd(&a, &c) <= hd(&a, &b) + hd(&b, &c) + 1e-12);
        }
    }

    #[test]
    fn stack_files_round_trip(
        s in 1usize..4,
        h in 1usize..9,
        w in 1usize..9,
        seed in any::<u64>(),
        spacing in (0.1f32..5.0, 0.1f32..5.0),
    ) {
        let images: Vec<f32> = values(s * h * w, seed).iter().map(|&v| v as f32 + 0.5).collect();
        let stack = SliceStack {
            id: "p".into(),
            images: Tensor::new(vec![s, 1, h, w], images).unwrap(),
            spacing,
        };
        let bits: Vec<u8> = values(s * h * w, !seed).iter().map(|&v| u8::from(v > 0.0)).collect();
        let m = MaskStack::new("p", (s, h, w), bits).unwrap();
        let bytes = encode_stack(&stack, &m).unwrap();
        let (s2, m2) = decode_stack(&bytes, "p").unwrap();
        prop_assert_eq!(&s2, &stack);
        prop_assert_eq!(&m2, &m);
        prop_assert_eq!(encode_stack(&s2, &m2).unwrap(), bytes);
    }

    #[test]
    fn checkpoints_round_trip(data in prop::collection::vec(any::<f32>(), 0..40), wide in prop::collection::vec(any::<f64>(), 1..10)) {
        let mut ck = Checkpoint::default();
        ck.params.push(Entry::slice("a.weight", vec![data.len()], &data));
        ck.optimizer.push(Entry::slice("opt/a.m", vec![wide.len()], &wide));
        ck.state.push(Entry::u8s("config", b"variant=gan\n"));
        ck.state.push(Entry::u64s("rng", &[1, 2, 3]));
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(back.encode(), bytes);
    }
}
