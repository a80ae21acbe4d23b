use flowfields::descriptors::{build_kdtree, census_cost, census_max_cost, WhtVector, WHT_DIM};
use flowfields::evaluation::{
    compute_metrics, decode_flo, encode_flo, fill_dense, kitti_decode, kitti_encode, GroundTruth, SieveConfig,
};
use flowfields::filtering::{consistency_check, Lookup, Match, SparseMatches};
use flowfields::synth::fractal_texture;
use flowfields::{build_scale_space, FlowField};
use proptest::prelude::*;

fn field_strategy(max: usize) -> impl Strategy<Value = FlowField> {
    (1..max, 1..max).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop::option::weighted(0.85, (-1e6f32..1e6, -1e6f32..1e6)), w * h).prop_map(move |v| {
            let opts: Vec<Option<[f32; 2]>> = v.into_iter().map(|o| o.map(|(a, b)| [a, b])).collect();
            FlowField::from_options(w, h, &opts)
        })
    })
}

proptest! {
    #[test]
    fn flo_round_trip_is_bitwise(f in field_strategy(24)) {
        let bytes = encode_flo(&f);
        let g = decode_flo(&bytes).unwrap();
        prop_assert_eq!(g.dims(), f.dims());
        prop_assert_eq!(g.valid_mask(), f.valid_mask());
        for (a, b) in f.flows().iter().zip(g.flows()).zip(f.valid_mask()).filter(|(_, &m)| m).map(|(p, _)| p) {
            prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
            prop_assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
        prop_assert_eq!(encode_flo(&g), bytes);
    }

    #[test]
    fn kitti_quantization_error(v in -512.0f32..511.98) {
        prop_assert!((kitti_decode(kitti_encode(v)) - v).abs() <= 1.0 / 128.0 + 1e-4);
    }

    #[test]
    fn kd_tree_reaches_every_entry(
        sigs in prop::collection::vec(prop::collection::vec(-50.0f32..50.0, WHT_DIM), 1..300),
        leaf in 1usize..12,
    ) {
        let entries: Vec<((u32, u32), WhtVector)> = sigs
            .iter()
            .enumerate()
            .map(|(i, s)| ((i as u32, 0), WhtVector(s.clone().try_into().unwrap())))
            .collect();
        let tree = build_kdtree(&entries, leaf);
        prop_assert_eq!(tree.len(), entries.len());
        for (pos, sig) in &entries {
            let l = tree.query_leaf(sig);
            prop_assert!(!l.is_empty() && l.len() <= leaf);
            prop_assert!(l.contains(pos));
        }
    }

    #[test]
    fn metrics_ignore_pixel_order(
        pairs in prop::collection::vec(((-20.0f32..20.0, -20.0f32..20.0), prop::option::of((-20.0f32..20.0, -20.0f32..20.0))), 1..200),
        rot in 0usize..200,
    ) {
        let n = pairs.len();
        let build = |order: &[usize]| {
            let gt: Vec<Option<[f32; 2]>> = order.iter().map(|&i| Some([pairs[i].0 .0, pairs[i].0 .1])).collect();
            let pr: Vec<Option<[f32; 2]>> = order.iter().map(|&i| pairs[i].1.map(|(a, b)| [a, b])).collect();
            let g = GroundTruth::new(FlowField::from_options(n, 1, &gt), None).unwrap();
            compute_metrics(&FlowField::from_options(n, 1, &pr), &g).unwrap()
        };
        let id: Vec<usize> = (0..n).collect();
        let mut perm = id.clone();
        perm.rotate_left(rot % n);
        perm.reverse();
        let (a, b) = (build(&id), build(&perm));
        prop_assert_eq!(a.n_evaluated, b.n_evaluated);
        prop_assert_eq!(a.n_missing, b.n_missing);
        prop_assert!((a.pct_le3 - b.pct_le3).abs() < 1e-12);
        prop_assert!((a.epe10 - b.epe10).abs() < 1e-9);
        prop_assert!(a.epe.is_nan() && b.epe.is_nan() || (a.epe - b.epe).abs() < 1e-9);
    }

    #[test]
    fn consistency_survivors_grow_with_epsilon(
        flows in prop::collection::vec((-3.0f32..3.0, -3.0f32..3.0), 64),
        back in prop::collection::vec((-3.0f32..3.0, -3.0f32..3.0), 64),
        e1 in 0.01f32..5.0,
        e2 in 0.01f32..5.0,
    ) {
        let f = FlowField::from_fn(8, 8, |x, y| [flows[y * 8 + x].0, flows[y * 8 + x].1]);
        let b = FlowField::from_fn(8, 8, |x, y| [back[y * 8 + x].0, back[y * 8 + x].1]);
        let (lo, hi) = (e1.min(e2), e1.max(e2));
        let a = consistency_check(&f, &b, Some(&b), lo, Lookup::Bilinear).unwrap();
        let c = consistency_check(&f, &b, Some(&b), hi, Lookup::Bilinear).unwrap();
        prop_assert!(a.valid.iter().zip(&c.valid).all(|(&x, &y)| !x || y));
    }

    #[test]
    fn dense_fill_passes_through_matches(
        pts in prop::collection::btree_map((0usize..30, 0usize..20), (-9.0f32..9.0, -9.0f32..9.0), 1..40),
    ) {
        let matches = SparseMatches {
            matches: pts
                .iter()
                .map(|(&(x, y), &(u, v))| Match { x: x as f32, y: y as f32, flow: [u, v], score: 0.0 })
                .collect(),
        };
        let d = fill_dense(&matches, 30, 20).unwrap();
        prop_assert_eq!(d.count_valid(), 600);
        for (&(x, y), &(u, v)) in &pts {
            prop_assert_eq!(d.get(x, y), Some([u, v]));
        }
        // Interpolated values stay inside the range of the data.
        let umax = pts.values().map(|p| p.0).fold(f32::MIN, f32::max);
        let umin = pts.values().map(|p| p.0).fold(f32::MAX, f32::min);
        prop_assert!(d.flows().iter().all(|f| f[0] <= umax + 1e-3 && f[0] >= umin - 1e-3));
    }

    #[test]
    fn census_cost_is_symmetric_and_bounded(
        seeds in (0u64..1000, 0u64..1000),
        p in (0usize..24, 0usize..24),
        q in (0usize..24, 0usize..24),
        r in 1usize..4,
        n in prop::sample::select(vec![1usize, 2]),
    ) {
        let ss1 = build_scale_space(&fractal_texture(24, 24, seeds.0), &[1, 2]).unwrap();
        let ss2 = build_scale_space(&fractal_texture(24, 24, seeds.1), &[1, 2]).unwrap();
        let c = census_cost(&ss1, &ss2, p, (q.0 as f32, q.1 as f32), r, n).unwrap();
        let back = census_cost(&ss2, &ss1, q, (p.0 as f32, p.1 as f32), r, n).unwrap();
        prop_assert_eq!(c, back);
        prop_assert!(c >= 0.0 && c <= census_max_cost(r));
        prop_assert_eq!(census_cost(&ss1, &ss1, p, (p.0 as f32, p.1 as f32), r, n).unwrap(), 0.0);
    }

    #[test]
    fn sieve_config_names_round_trip(scales in prop::collection::vec(1usize..16, 1..5), kind in 0u8..4) {
        let c = match kind {
            0 => SieveConfig::Single(scales[0]),
            1 => SieveConfig::All(scales),
            2 => SieveConfig::Sum(scales),
            _ => SieveConfig::FlowFields(scales),
        };
        let parsed: SieveConfig = c.to_string().parse().unwrap();
        let same = match (&c, &parsed) {
            (SieveConfig::All(v), SieveConfig::Single(s)) | (SieveConfig::Sum(v), SieveConfig::Single(s)) => v == &vec![*s],
            _ => parsed == c,
        };
        prop_assert!(same, "{} parsed as {:?}", c, parsed);
    }
}
