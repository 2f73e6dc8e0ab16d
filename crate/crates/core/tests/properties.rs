use hansaudit_core::audio::{SeedContext, Waveform};
use hansaudit_core::eval::{eer, operating_points, LabeledScore};
use hansaudit_core::interventions::loudness::{loudness_normalize, measure_loudness};
use hansaudit_core::interventions::mulaw::MuLawQuantizer;
use hansaudit_core::interventions::{codec_degrade, mu_law, BITRATES_KBPS};
use hansaudit_core::protocol::{ClassLabel, InterventionConfig};
use hansaudit_core::regression::{fit_constrained, fit_full, RegressionRow};
use hansaudit_core::synth::{gen_scores, SynthScoreSpec};
use proptest::prelude::*;

fn labeled(scores: &[(f64, bool)]) -> Vec<LabeledScore> {
    scores
        .iter()
        .map(|&(score, bona)| LabeledScore {
            utt_id: String::new(),
            score,
            class: if bona { ClassLabel::Bonafide } else { ClassLabel::Spoof },
        })
        .collect()
}

fn both_classes(v: &[(f64, bool)]) -> bool {
    v.iter().any(|s| s.1) && v.iter().any(|s| !s.1)
}

fn tone(seed: u64, n: usize, amp: f64) -> Waveform {
    use rand::Rng;
    let mut rng = SeedContext::new(seed, "tone", "", "").rng();
    let f: f64 = rng.random_range(100.0..3000.0);
    let s = (0..n)
        .map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / 16_000.0).sin() + 0.01 * rng.random_range(-1.0..1.0))
        .collect();
    Waveform::new("t", 16_000, s).unwrap()
}

fn score_spec(seed: u64, trials_per_cell: usize, beta_bona: f64) -> SynthScoreSpec {
    SynthScoreSpec {
        mu: 0.1,
        d: 0.8,
        beta_bona,
        beta_spf: 0.5,
        sigma_eps: 1.0,
        trials_per_cell,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eer_is_invariant_under_monotone_maps(
        raw in proptest::collection::vec((-4.0f64..4.0, any::<bool>()), 2..200),
        a in 0.1f64..10.0,
        b in -5.0f64..5.0,
    ) {
        prop_assume!(both_classes(&raw));
        let mapped: Vec<(f64, bool)> = raw.iter().map(|&(s, c)| (a * s + b, c)).collect();
        let e0 = eer(&labeled(&raw)).unwrap();
        let e1 = eer(&labeled(&mapped)).unwrap();
        prop_assert!((0.0..=1.0).contains(&e0));
        prop_assert!((e0 - e1).abs() < 1e-12);
    }

    #[test]
    fn swapping_labels_and_negating_scores_keeps_eer(
        raw in proptest::collection::vec((-4.0f64..4.0, any::<bool>()), 2..200),
    ) {
        prop_assume!(both_classes(&raw));
        // break ties so the >= / < asymmetry of the sweep cannot matter
        let distinct: Vec<(f64, bool)> = raw.iter().enumerate().map(|(i, &(s, c))| (s + 1e-9 * i as f64, c)).collect();
        let flipped: Vec<(f64, bool)> = distinct.iter().map(|&(s, c)| (-s, !c)).collect();
        let e0 = eer(&labeled(&distinct)).unwrap();
        let e1 = eer(&labeled(&flipped)).unwrap();
        prop_assert!((e0 - e1).abs() < 1e-12, "{} vs {}", e0, e1);
    }

    #[test]
    fn operating_points_are_monotone(
        raw in proptest::collection::vec((-4.0f64..4.0, any::<bool>()), 2..200),
    ) {
        prop_assume!(both_classes(&raw));
        let pts = operating_points(&labeled(&raw)).unwrap();
        for w in pts.windows(2) {
            prop_assert!(w[0].0 < w[1].0);
            prop_assert!(w[0].1 <= w[1].1);
            prop_assert!(w[0].2 >= w[1].2);
        }
        let last = pts.last().unwrap();
        prop_assert_eq!((last.1, last.2), (1.0, 0.0));
    }

    #[test]
    fn regression_is_equivariant_under_affine_score_maps(
        seed in any::<u64>(),
        scale in 0.2f64..5.0,
        shift in -3.0f64..3.0,
    ) {
        let spec = score_spec(seed, 30, -0.4);
        let rows = gen_scores(&spec, &InterventionConfig::all_named()).unwrap();
        let moved: Vec<RegressionRow> = rows
            .iter()
            .map(|r| RegressionRow { score: scale * r.score + shift, ..r.clone() })
            .collect();
        for (f0, f1) in [
            (fit_full(&rows).unwrap(), fit_full(&moved).unwrap()),
            (fit_constrained(&rows).unwrap(), fit_constrained(&moved).unwrap()),
        ] {
            prop_assert!((f1.mu - (scale * f0.mu + shift)).abs() < 1e-9);
            prop_assert!((f1.d - scale * f0.d).abs() < 1e-9);
            prop_assert!((f1.beta_bona - scale * f0.beta_bona).abs() < 1e-9);
            prop_assert!((f1.beta_spf - scale * f0.beta_spf).abs() < 1e-9);
            prop_assert!((f1.sigma_eps - scale * f0.sigma_eps).abs() < 1e-9);
        }
    }

    #[test]
    fn full_fit_never_has_larger_rss(seed in any::<u64>()) {
        let spec = score_spec(seed, 25, 0.3);
        let rows = gen_scores(&spec, &InterventionConfig::all_named()).unwrap();
        let full = fit_full(&rows).unwrap();
        let con = fit_constrained(&rows).unwrap();
        prop_assert!(full.rss <= con.rss * (1.0 + 1e-12));
    }

    #[test]
    fn mu_law_round_trip_is_idempotent(x in -1.5f64..1.5) {
        let q = MuLawQuantizer::new(255).unwrap();
        let y = q.round_trip(x);
        prop_assert_eq!(q.round_trip(y), y);
        prop_assert!(y.abs() <= 1.0);
    }

    #[test]
    fn mu_law_is_monotone(a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let q = MuLawQuantizer::new(255).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(q.round_trip(lo) <= q.round_trip(hi));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn codec_preserves_length_and_rate(seed in any::<u64>(), idx in 0usize..BITRATES_KBPS.len(), n in 400usize..6000) {
        let w = tone(seed, n, 0.3);
        let out = codec_degrade(&w, BITRATES_KBPS[idx]).unwrap();
        prop_assert_eq!(out.len(), w.len());
        prop_assert_eq!(out.sample_rate_hz(), w.sample_rate_hz());
        prop_assert!(out.samples().iter().all(|s| s.is_finite() && s.abs() <= 1.0));
    }

    #[test]
    fn mu_law_waveform_keeps_shape(seed in any::<u64>()) {
        let w = tone(seed, 3000, 0.5);
        let out = mu_law(&w, 255).unwrap();
        prop_assert_eq!(out.len(), w.len());
    }

    #[test]
    fn loudness_normalization_hits_target_without_clipping(seed in any::<u64>(), target in -40.0f64..-20.0) {
        let w = tone(seed, 16_000, 0.05);
        let out = loudness_normalize(&w, target).unwrap();
        prop_assume!(out.samples().iter().all(|s| s.abs() < 1.0));
        prop_assert!((measure_loudness(&out).unwrap() - target).abs() < 0.5);
    }
}
