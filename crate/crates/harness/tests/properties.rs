use condenser::bench::{percentile, BenchConfig, BenchReport};
use condenser::checkpoint::{decode, encode, Checkpoint, TrainingMeta};
use condenser::report::summarize;
use condenser_core::backbone::{micro_spec, Network};
use condenser_core::Rng;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoints_round_trip_bitwise(seed in any::<u64>(), epoch in 0usize..100) {
        let net = Network::<f32>::build(micro_spec(), &mut Rng::new(seed)).unwrap();
        let ckpt = Checkpoint::from_network(&net, TrainingMeta { epoch, seed, metrics: vec![] });
        let bytes = encode(&ckpt).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert!(back.params.bit_eq(net.params()));
        prop_assert_eq!(back.training.epoch, epoch);
        prop_assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn percentiles_are_ordered_samples(v in prop::collection::vec(0.001f64..1e3, 1..60)) {
        let p50 = percentile(&v, 50.0);
        let p95 = percentile(&v, 95.0);
        prop_assert!(v.contains(&p50) && v.contains(&p95));
        prop_assert!(p50 <= p95);
        let below = v.iter().filter(|x| **x <= p50).count();
        prop_assert!(2 * below >= v.len());
    }

    #[test]
    fn throughput_matches_recorded_time(v in prop::collection::vec(0.01f64..100.0, 10..40), batch in 1usize..64) {
        let cfg = BenchConfig { batch, iters: v.len(), ..BenchConfig::default() };
        let r = BenchReport::from_timings(String::new(), 1, 1, &cfg, 1, v.clone());
        let total_s: f64 = v.iter().sum::<f64>() / 1e3;
        prop_assert!((r.images_per_sec * total_s - (batch * v.len()) as f64).abs() <= 1e-9 * (batch * v.len()) as f64);
    }

    #[test]
    fn confidence_interval_brackets_the_mean(v in prop::collection::vec(0.0f64..1.0, 2..12)) {
        let s = summarize(&v, 0.95).unwrap();
        prop_assert!(s.ci_low <= s.mean && s.mean <= s.ci_high);
        prop_assert!(s.std >= 0.0);
    }
}

#[test]
fn student_t_interval_known_value() {
    // n = 5, sample sd 1: half width = t(0.975, 4) / sqrt(5) = 2.776445 / 2.236068
    let v = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let s = summarize(&v, 0.95).unwrap();
    let sd = (2.5f64 / 4.0).sqrt();
    let half = 2.776_445_105 * sd / 5f64.sqrt();
    assert!((s.std - sd).abs() < 1e-12);
    assert!((s.ci_high - half).abs() < 1e-6, "{s:?}");
    assert!(summarize(&[], 0.95).is_err());
}
