use ndarray::{Array1, Array2};
use proptest::prelude::*;

use neuroprobe::probe::LinearProbe;
use neuroprobe::ranking::{rank_weights, subset_size, MinimalSetSearch};
use neuroprobe::store::SplitPlan;
use neuroprobe::{ActivationDataset, NeuronIndexSet};

fn probe_and_batch() -> impl Strategy<Value = (LinearProbe, Array2<f64>, Vec<u32>)> {
    (2usize..5, 1usize..5, 1usize..6).prop_flat_map(|(t, d, n)| {
        (
            prop::collection::vec(-2.0f64..2.0, t * d),
            prop::collection::vec(-2.0f64..2.0, t),
            prop::collection::vec(-3.0f64..3.0, n * d),
            prop::collection::vec(0..t as u32, n),
        )
            .prop_map(move |(w, b, x, tags)| {
                let probe = LinearProbe {
                    weights: Array2::from_shape_vec((t, d), w).unwrap(),
                    bias: Array1::from(b),
                };
                (probe, Array2::from_shape_vec((n, d), x).unwrap(), tags)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_central_differences(
        (probe, x, tags) in probe_and_batch(),
        l1 in 0.0f64..0.3,
        l2 in 0.0f64..0.3,
    ) {
        let g = probe.gradient(x.view(), &tags, l1, l2).unwrap();
        let h = 1e-6;
        for ((i, j), &w) in probe.weights.indexed_iter() {
            if w.abs() <= 1e-4 {
                continue;
            }
            let (mut p, mut m) = (probe.clone(), probe.clone());
            p.weights[[i, j]] += h;
            m.weights[[i, j]] -= h;
            let num = (p.loss(x.view(), &tags, l1, l2).unwrap() - m.loss(x.view(), &tags, l1, l2).unwrap()) / (2.0 * h);
            let err = (num - g.weights[[i, j]]).abs() / num.abs().max(g.weights[[i, j]].abs()).max(1.0);
            prop_assert!(err <= 1e-5, "({i},{j}) analytic {} numeric {num}", g.weights[[i, j]]);
        }
    }

    #[test]
    fn loss_is_nonnegative_and_penalty_additive(
        (probe, x, tags) in probe_and_batch(),
        l1 in 0.0f64..1.0,
        l2 in 0.0f64..1.0,
    ) {
        let plain = probe.loss(x.view(), &tags, 0.0, 0.0).unwrap();
        let full = probe.loss(x.view(), &tags, l1, l2).unwrap();
        prop_assert!(plain >= 0.0);
        prop_assert!((full - plain - probe.penalty(l1, l2)).abs() < 1e-12);
    }

    #[test]
    fn argmax_unchanged_by_constant_bias_shift((probe, x, _) in probe_and_batch(), c in -50.0f64..50.0) {
        let mut shifted = probe.clone();
        shifted.bias.mapv_inplace(|b| b + c);
        prop_assert_eq!(probe.predict(x.view()), shifted.predict(x.view()));
        let (p, q) = (probe.probabilities(x.view()), shifted.probabilities(x.view()));
        for (a, b) in p.iter().zip(q.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ranking_is_a_permutation(
        t in 1usize..5,
        d in 1usize..40,
        seed in any::<u64>(),
        zero_frac in 0.0f64..0.5,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w = Array2::from_shape_fn((t, d), |_| {
            if rng.random_bool(zero_frac) { 0.0 } else { rng.random_range(-1.0..1.0) }
        });
        if w.iter().all(|&v| v == 0.0) {
            prop_assert!(rank_weights(&w).is_err());
            return Ok(());
        }
        let r = rank_weights(&w).unwrap();
        let mut sorted = r.order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..d).collect::<Vec<_>>());
        // zero-mass neurons trail in index order
        let dead: Vec<usize> = (0..d).filter(|&j| w.column(j).iter().all(|&v| v == 0.0)).collect();
        prop_assert_eq!(&r.order[d - dead.len()..], &dead[..]);
        prop_assert!(r.tiers.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn top_and_bottom_are_disjoint_for_small_fractions(d in 2usize..500, f in 0.001f64..0.5) {
        let w = Array2::from_shape_fn((2, d), |(i, j)| ((i * 7 + j * 13) % 11) as f64 - 5.0);
        let r = rank_weights(&w).unwrap();
        let n = subset_size(f, d).unwrap();
        prop_assert!(n >= 1 && n <= d);
        let top = r.top_fraction(f).unwrap();
        let bottom = r.bottom_fraction(f).unwrap();
        prop_assert_eq!(top.len(), n);
        if 2 * n <= d {
            prop_assert!(top.iter().all(|id| !bottom.contains(id)));
        }
    }

    #[test]
    fn prefix_sizes_grow_to_the_full_set(d in 1usize..2000, step in 0.001f64..1.0) {
        let sizes = MinimalSetSearch { delta: 0.0, step_fraction: step }.prefix_sizes(d);
        prop_assert!(sizes.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(*sizes.last().unwrap(), d);
        prop_assert!(sizes[0] >= 1);
    }

    #[test]
    fn activation_bytes_round_trip(
        l in 1usize..4,
        h in 1usize..6,
        lengths in prop::collection::vec(1u32..5, 1..6),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: u32 = lengths.iter().sum();
        let data: Vec<f32> = (0..n as usize * l * h).map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff)).collect();
        let ds = ActivationDataset::new(l, h, lengths, data).unwrap();
        let bytes = ds.to_bytes();
        let back = ActivationDataset::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert!(back.data().iter().zip(ds.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn splits_partition_sentences(n in 3usize..300, seed in any::<u64>()) {
        let plan = SplitPlan::new(n, [0.8, 0.1, 0.1], seed).unwrap();
        let mut all: Vec<usize> = plan.train.iter().chain(&plan.dev).chain(&plan.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn neuron_ids_round_trip(ids in prop::collection::hash_set(0usize..10_000, 0..50), h in 1usize..800) {
        let set = NeuronIndexSet::new(ids.into_iter().collect()).unwrap();
        let mut buf = Vec::new();
        set.write_ids(&mut buf, h).unwrap();
        prop_assert_eq!(NeuronIndexSet::parse_ids(std::str::from_utf8(&buf).unwrap()).unwrap(), set);
    }
}
