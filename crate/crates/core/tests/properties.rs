//! Invariants checked on random inputs.

use proptest::prelude::*;
use weakkam::io::{decode_snapshot, encode_snapshot};
use weakkam::subsolution::mollify;
use weakkam::verify::{CurveSample, CurveSource};
use weakkam::{Direction, LagrangianSystem, LaxOleinik, Node, NodeSet, SpaceTimeGrid, ValueField};

fn small_grid() -> SpaceTimeGrid {
    SpaceTimeGrid::new(1, 16, 4, 17, 4.0).unwrap()
}

fn engine() -> LaxOleinik {
    LaxOleinik::new(&LagrangianSystem::pendulum(), &small_grid()).unwrap()
}

fn slice() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 16)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn snapshot_round_trip(nx in 4usize..9, nt in 2usize..5, seed in any::<u64>()) {
        let g = SpaceTimeGrid::new(1, nx, nt, 5, 2.0).unwrap();
        let a = ValueField::from_fn(&g, |x, t| ((seed % 97) as f64 * x[0] + t).sin() * 1e6);
        let b = a.map(|v| v.exp2().recip());
        let back = decode_snapshot(&encode_snapshot(&[&a, &b]).unwrap()).unwrap();
        prop_assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn lax_oleinik_commutes_with_constants(u in slice(), c in -10.0f64..10.0, k in 0usize..4, fwd in any::<bool>()) {
        let e = engine();
        let dir = if fwd { Direction::Forward } else { Direction::Backward };
        let base = e.lax_oleinik_step(&u, k, dir).unwrap();
        let lifted: Vec<f64> = u.iter().map(|v| v + c).collect();
        let shifted = e.lax_oleinik_step(&lifted, k, dir).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            prop_assert!((b - a - c).abs() <= 1e-12 * (1.0 + c.abs() + a.abs()));
        }
    }

    #[test]
    fn lax_oleinik_is_monotone(u in slice(), bump in prop::collection::vec(0.0f64..3.0, 16), k in 0usize..4, fwd in any::<bool>()) {
        let e = engine();
        let dir = if fwd { Direction::Forward } else { Direction::Backward };
        let upper: Vec<f64> = u.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let lo = e.lax_oleinik_step(&u, k, dir).unwrap();
        let hi = e.lax_oleinik_step(&upper, k, dir).unwrap();
        for (a, b) in lo.iter().zip(&hi) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn mollify_preserves_slice_means(data in prop::collection::vec(-3.0f64..3.0, 64), sigma in 0.0f64..3.0) {
        let g = small_grid();
        let u = ValueField::from_data(&g, data).unwrap();
        let m = mollify(&u, sigma).unwrap();
        for k in 0..g.nt() {
            let s = |f: &ValueField| -> f64 { (0..g.nx()).map(|x| f.data()[g.node_index(Node { x, t: k })]).sum() };
            prop_assert!((s(&u) - s(&m)).abs() <= 1e-11);
        }
        prop_assert!(m.max() <= u.max() + 1e-12);
    }

    #[test]
    fn dilation_is_monotone(mask in prop::collection::vec(any::<bool>(), 64), r in 0usize..3) {
        let g = small_grid();
        let set = NodeSet::from_predicate(&g, |n| mask[g.node_index(n)]);
        let a = set.dilate(r);
        let b = set.dilate(r + 1);
        prop_assert!(set.is_subset(&set.dilate_space(r)));
        prop_assert!(set.dilate_space(r).is_subset(&a));
        prop_assert!(a.is_subset(&b));
    }

    #[test]
    fn curve_action_is_additive(ys in prop::collection::vec(-1.0f64..1.0, 9), split in 1usize..8) {
        let sys = LagrangianSystem::pendulum();
        let times: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
        let points: Vec<[f64; 2]> = ys.iter().map(|&y| [y, 0.0]).collect();
        let whole = CurveSample::new(0, CurveSource::RandomSpline, times.clone(), points.clone()).unwrap();
        let head = CurveSample::new(0, CurveSource::RandomSpline, times[..=split].to_vec(), points[..=split].to_vec()).unwrap();
        let tail = CurveSample::new(0, CurveSource::RandomSpline, times[split..].to_vec(), points[split..].to_vec()).unwrap();
        let joined = head.concat(&tail).unwrap();
        let direct = whole.action(&sys).0;
        let pieces = head.action(&sys).0 + tail.action(&sys).0;
        prop_assert!((direct - pieces).abs() <= 1e-12 * (1.0 + direct.abs()));
        prop_assert_eq!(joined.action(&sys).0, direct);
    }
}
