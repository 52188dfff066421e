use emarch_core::simulator::{
    prefix_descriptor, simulate_trace, timeline, zoo, EmModel, SimConfig,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noiseless_length_matches_timeline(model_seed in 0u64..1000, trace_seed in 0u64..1000) {
        let d = zoo::mlp3();
        let em = EmModel::noiseless();
        let sim = SimConfig::default();
        let t = simulate_trace(&d, &em, &sim, model_seed, trace_seed).unwrap();
        let total: f64 = d.layers.iter().map(|l| em.nominal_duration_s(l.macs().unwrap())).sum::<f64>()
            + (d.layers.len() - 1) as f64 * em.kernel_gap_s;
        let want = total * sim.sample_rate_hz;
        prop_assert!((t.len() as f64 - want).abs() <= 1.0);
    }

    #[test]
    fn simulation_is_deterministic(model_seed in 0u64..50, trace_seed in 0u64..50) {
        let d = zoo::mlp3();
        let (em, sim) = (EmModel::default(), SimConfig::default());
        let a = simulate_trace(&d, &em, &sim, model_seed, trace_seed).unwrap();
        let b = simulate_trace(&d, &em, &sim, model_seed, trace_seed).unwrap();
        prop_assert!(a.bit_eq(&b));
    }

    #[test]
    fn prefixes_share_the_parent_timeline(k in 1usize..6, seed in 0u64..100) {
        let d = zoo::mlp3();
        let (em, sim) = (EmModel::default(), SimConfig::default());
        let full = timeline(&d, &em, &sim, seed, seed).unwrap();
        let part = timeline(&prefix_descriptor(&d, k).unwrap(), &em, &sim, seed, seed).unwrap();
        prop_assert_eq!(&full[..k], &part[..]);
    }
}

#[test]
fn default_durations_order() {
    let em = EmModel {
        noise_sigma: 0.0,
        timing_jitter_rel: 0.0,
        ..EmModel::default()
    };
    let corpus = zoo::builtin_corpus(zoo::DEFAULT_INPUT);
    let d: Vec<f64> = corpus
        .iter()
        .map(|c| em.nominal_total_s(c).unwrap())
        .collect();
    for b in 0..6 {
        assert!(
            d[b] < d[b + 1],
            "EfficientNetB{b} not shorter than B{}",
            b + 1
        );
    }
    let dur = |n: &str| d[corpus.iter().position(|c| c.name == n).unwrap()];
    assert!(dur("MobileNet") < dur("MobileNetV2"));
    assert!(dur("MobileNetV2") < dur("MobileNetV3large"));
    assert!(dur("MobileNetV3small") < dur("MobileNetV3large"));
}
