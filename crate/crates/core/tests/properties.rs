//! Property tests of invariants that must hold for every input.

use std::sync::Arc;

use interlace_core::capacity::{capacity_of, hitting_prob};
use interlace_core::green::GreenTable;
use interlace_core::sampler::{AnchorSet, InterlacementSample, Sampler};
use interlace_core::walk::fixed_length;
use interlace_core::{Ball, LatticePoint, RngStream, SiteSet};
use proptest::prelude::*;

fn point(c: &[i64]) -> LatticePoint {
    LatticePoint::new(c)
}

fn small_set(d: usize, raw: &[[i64; 5]]) -> SiteSet {
    SiteSet::from_points(d, raw.iter().map(|c| point(&c[..d])))
}

fn coords() -> impl Strategy<Value = Vec<[i64; 5]>> {
    proptest::collection::vec(proptest::array::uniform5(-3i64..=3), 1..10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn walks_are_reproducible_nearest_neighbor(seed in any::<u64>(), idx in any::<u64>(), d in 3usize..=8, n in 0usize..400) {
        let a = fixed_length(LatticePoint::origin(d), n, RngStream::new(seed, idx));
        let b = fixed_length(LatticePoint::origin(d), n, RngStream::new(seed, idx));
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), n);
        prop_assert!(a.is_nearest_neighbor());
    }

    #[test]
    fn capacity_monotone_and_subadditive(d in prop_oneof![Just(3usize), Just(5)], k1 in coords(), k2 in coords()) {
        let t = GreenTable::shared(d).unwrap();
        let (a, b) = (small_set(d, &k1), small_set(d, &k2));
        let mut u = a.clone();
        u.extend(&b);
        let (ca, cb, cu) = (capacity_of(&a, &t).unwrap().capacity, capacity_of(&b, &t).unwrap().capacity, capacity_of(&u, &t).unwrap().capacity);
        let tol = 1e-8 * cu;
        prop_assert!(ca <= cu + tol && cb <= cu + tol, "monotone: {} {} {}", ca, cb, cu);
        prop_assert!(cu <= ca + cb + tol, "subadditive: {} > {} + {}", cu, ca, cb);
        // a point's capacity is 1/g(0), the smallest nonempty value
        prop_assert!(ca >= 1.0 / t.g0() - tol);
    }

    #[test]
    fn green_symmetric_and_in_envelope(c in proptest::array::uniform5(-40i64..=40), perm in Just([0usize, 1, 2, 3, 4]).prop_shuffle(), flips in proptest::array::uniform5(any::<bool>())) {
        let t = GreenTable::shared(5).unwrap();
        let v = point(&c);
        let w: Vec<i64> = perm.iter().zip(flips).map(|(&i, f)| if f { -c[i] } else { c[i] }).collect();
        prop_assert_eq!(t.get(&v), t.get(&point(&w)));
        let norm = (v.euclid_sq() as f64).sqrt();
        let envelope = if norm < 1.0 { 1.0 } else { norm.powf(-3.0).min(1.0) };
        // g(v)|v|^3 tends to C_5 = 0.1267, so no lower constant above that
        // can hold far out
        let ratio = t.get(&v) / envelope;
        prop_assert!((0.1..=5.0).contains(&ratio), "g/min(1,|v|^-3) = {}", ratio);
    }

    #[test]
    fn hitting_probability_in_unit_interval(k in coords(), x in proptest::array::uniform5(-12i64..=12)) {
        let t = GreenTable::shared(5).unwrap();
        let em = capacity_of(&small_set(5, &k), &t).unwrap().to_measure().unwrap();
        let h = hitting_prob(&point(&x), &em, &t).unwrap();
        prop_assert!((0.0..=1.0).contains(&h.value));
        prop_assert!(!h.excess, "raw {} error {}", h.raw, h.error);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Same seed, same bytes; the text form round-trips; no backward step
    /// re-enters `A`.
    #[test]
    fn samples_reproducible_and_backward_avoiding(seed in any::<u64>(), u in 0.2f64..3.0, radius in 0i64..=1) {
        let d = 5;
        let t = GreenTable::shared(d).unwrap();
        let a = Ball::centered(d, radius).to_site_set();
        let sampler = Sampler::new(a.clone(), Ball::centered(d, radius + 3), 1e-2, &t, RngStream::new(seed, 0)).unwrap();
        let s1 = sampler.sample(u, RngStream::new(seed, 1)).unwrap();
        let s2 = sampler.sample(u, RngStream::new(seed, 1)).unwrap();
        let text = s1.to_text();
        prop_assert_eq!(&text, &s2.to_text());
        let back = InterlacementSample::from_text(&text, Arc::new(AnchorSet::Sites(a.clone()))).unwrap();
        prop_assert_eq!(back.to_text(), text);
        let anchors = AnchorSet::Sites(a);
        for tr in &s1.trajectories {
            prop_assert_eq!(tr.backward_violations(&anchors), 0);
            prop_assert!(anchors.contains(&tr.anchor()));
        }
    }
}
