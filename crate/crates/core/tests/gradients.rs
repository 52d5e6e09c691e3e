use condenser_core::gradsuite::GradTarget;

#[test]
fn every_backward_matches_finite_differences() {
    for t in GradTarget::ALL {
        for seed in 0..3 {
            let r = t.run(seed).unwrap();
            println!("{:<10} seed {seed}: {:.3e} over {} coords", t.name(), r.max_rel_err, r.checked);
            assert!(r.passes(t.tolerance()), "{} seed {seed}: {r:?}", t.name());
        }
    }
}

#[test]
fn names_round_trip() {
    for t in GradTarget::ALL {
        assert_eq!(GradTarget::from_name(t.name()), Some(t));
    }
    assert_eq!(GradTarget::from_name("nope"), None);
}
