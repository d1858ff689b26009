//! Property tests over randomized inputs: structural invariants that must
//! hold for every graph, mask and parameter draw.

use proptest::prelude::*;

use mkhnet_core::array::{Array, BoolArray};
use mkhnet_core::autodiff::Tape;
use mkhnet_core::dataset::{
    apply_normalizer, chronological_split, fit_normalizer, invert_normalizer, window_starts,
    MtsDataset,
};
use mkhnet_core::graph::{dht_transform, extract_patches, ExplicitGraph};
use mkhnet_core::model::hgi;

fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-50.0f64..50.0, rows * cols)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(data in arb_matrix(4, 6), shift in -100.0f64..100.0) {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Array::new(vec![4, 6], data).unwrap()).unwrap();
        let y = tape.softmax_rows(x, None).unwrap();
        for i in 0..4 {
            let row_sum: f64 = (0..6).map(|j| tape.value(y).at2(i, j)).sum();
            prop_assert!((row_sum - 1.0).abs() < 1e-9);
            for j in 0..6 {
                let v = tape.value(y).at2(i, j);
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        // shift invariance
        let xs = tape.add_scalar(x, shift).unwrap();
        let ys = tape.softmax_rows(xs, None).unwrap();
        let diff = tape.value(y).max_abs_diff(tape.value(ys));
        prop_assert!(diff < 1e-12, "shift changed softmax by {diff}");
    }

    #[test]
    fn normalization_round_trips(
        data in arb_matrix(3, 40),
        offsets in proptest::collection::vec(-1000.0f64..1000.0, 3),
    ) {
        let mut shifted = data.clone();
        for v in 0..3 {
            for t in 0..40 {
                shifted[v * 40 + t] += offsets[v];
            }
        }
        let ds = MtsDataset {
            values: Array::new(vec![3, 40], shifted).unwrap(),
            mask: BoolArray::filled(vec![3, 40], true),
            variable_names: vec!["a".into(), "b".into(), "c".into()],
            granularity: String::new(),
        };
        let split = chronological_split(&ds, [0.6, 0.2, 0.2]).unwrap();
        let stats = fit_normalizer(&ds, &split);
        let normalized = apply_normalizer(&ds, &stats);
        let back = invert_normalizer(&normalized, &stats);
        prop_assert!(back.max_abs_diff(&ds.values) < 1e-9);
    }

    #[test]
    fn window_count_formula_holds(len in 0usize..200, tau in 1usize..20, upsilon in 1usize..20) {
        let starts = window_starts(0..len, tau, upsilon);
        let expected = (len as i64 - tau as i64 - upsilon as i64 + 1).max(0) as usize;
        prop_assert_eq!(starts.len(), expected);
        if let Some(&last) = starts.last() {
            prop_assert!(last + tau + upsilon <= len);
        }
    }

    #[test]
    fn patches_partition_and_induce_correctly(
        n in 2usize..12,
        k_raw in 1usize..6,
        p in 0usize..3,
        edge_bits in proptest::collection::vec(any::<bool>(), 66),
    ) {
        let k = k_raw.min(n);
        let mut edges = Vec::new();
        let mut bit = 0;
        for u in 0..n {
            for v in (u + 1)..n {
                if edge_bits[bit % edge_bits.len()] {
                    edges.push((u, v));
                }
                bit += 1;
            }
        }
        let g = ExplicitGraph::new(n, edges).unwrap();
        let patches = extract_patches(&g, k, p).unwrap();

        // cores partition V
        let mut all_cores: Vec<usize> =
            patches.iter().flat_map(|p| p.core_nodes.clone()).collect();
        all_cores.sort_unstable();
        prop_assert_eq!(all_cores, (0..n).collect::<Vec<_>>());

        for patch in &patches {
            // core subset of expanded
            for &u in &patch.core_nodes {
                prop_assert!(patch.expanded_nodes.contains(&u));
            }
            // every original edge inside the expanded set is induced
            for &(u, v) in &g.edges {
                let inside = patch.expanded_nodes.contains(&u)
                    && patch.expanded_nodes.contains(&v);
                prop_assert_eq!(inside, patch.edge_list.contains(&(u, v)));
            }
        }
    }

    #[test]
    fn dual_transform_structure(
        n in 2usize..10,
        edge_bits in proptest::collection::vec(any::<bool>(), 45),
    ) {
        let mut edges = Vec::new();
        let mut bit = 0;
        for u in 0..n {
            for v in (u + 1)..n {
                if edge_bits[bit % edge_bits.len()] {
                    edges.push((u, v));
                }
                bit += 1;
            }
        }
        prop_assume!(!edges.is_empty());
        let g = ExplicitGraph::new(n, edges).unwrap();
        let feats = Array::<f64>::zeros(vec![n, 3]);
        let dual = dht_transform(&g, &feats).unwrap();

        // double transpose recovers the source incidence bitwise
        prop_assert_eq!(dual.incidence.transpose(), g.incidence());
        // dual hypernode (edge) degree is exactly 2
        for e in 0..g.n_edges() {
            let deg = (0..n).filter(|&v| dual.incidence.at2(e, v)).count();
            prop_assert_eq!(deg, 2);
        }
        // dual hyperedge (node) degree matches the node degree
        for v in 0..n {
            let deg = (0..g.n_edges()).filter(|&e| dual.incidence.at2(e, v)).count();
            prop_assert_eq!(deg, g.degree(v));
        }
    }

    #[test]
    fn gumbel_channels_complement(
        s in 0.0f64..1.0,
        g0 in -3.0f64..3.0,
        g1 in -3.0f64..3.0,
    ) {
        let mut tape = Tape::<f64>::new();
        let sv = tape.leaf(Array::new(vec![1, 1], vec![s]).unwrap()).unwrap();
        let (p0, p1) = hgi::hyperedge_probabilities(&mut tape, sv).unwrap();
        let noise = (Array::full(vec![1, 1], g0), Array::full(vec![1, 1], g1));
        let swapped = (Array::full(vec![1, 1], g1), Array::full(vec![1, 1], g0));
        let a = hgi::gumbel_sample_incidence(&mut tape, p0, p1, 0.05, false, Some(&noise)).unwrap();
        let b = hgi::gumbel_sample_incidence(&mut tape, p1, p0, 0.05, false, Some(&swapped)).unwrap();
        let total = tape.value(a.incidence).item().unwrap() + tape.value(b.incidence).item().unwrap();
        prop_assert!((total - 1.0).abs() < 1e-9);
        let soft = tape.value(a.incidence).item().unwrap();
        prop_assert!((0.0..=1.0).contains(&soft));
    }

    #[test]
    fn similarity_stays_in_unit_interval(
        zn in arb_matrix(4, 3),
        ze in arb_matrix(2, 3),
    ) {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Array::new(vec![4, 3], zn).unwrap()).unwrap();
        let b = tape.leaf(Array::new(vec![2, 3], ze).unwrap()).unwrap();
        let s = hgi::pairwise_similarity(&mut tape, a, b).unwrap();
        for &v in tape.value(s).data() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn checkpoint_round_trip_bitwise(values in arb_matrix(3, 4), seed in any::<u64>()) {
        use mkhnet_core::checkpoint::Checkpoint;
        use mkhnet_core::dataset::NormalizationStats;
        let mut params = mkhnet_core::autodiff::ParamMap::new();
        params.insert("w".into(), Array::new(vec![3, 4], values).unwrap());
        let ck = Checkpoint::<f64> {
            config_text: "tau = 12\n".into(),
            n_nodes: 3,
            params,
            stats: NormalizationStats { mean: vec![0.5, -1.0, 2.0], std: vec![1.0, 2.0, 0.5] },
            seed,
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}
