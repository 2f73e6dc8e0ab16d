//! Shared fixtures for the benchmarks.

use hansaudit_core::audio::{SeedContext, Waveform};
use hansaudit_core::eval::LabeledScore;
use hansaudit_core::features::{lfcc, LfccConfig};
use hansaudit_core::gmm::FramePool;
use hansaudit_core::protocol::ClassLabel;
use hansaudit_core::synth::{synth_waveform, SynthCorpusSpec};
use rand::Rng;
use rand_distr::StandardNormal;

/// `n` generated utterances, alternating bona fide and spoof.
pub fn utterances(n: usize) -> Vec<Waveform> {
    let spec = SynthCorpusSpec::default();
    let records = spec.records();
    let (bona, spoof): (Vec<_>, Vec<_>) = records.iter().partition(|r| r.class == ClassLabel::Bonafide);
    bona.iter()
        .zip(&spoof)
        .flat_map(|(a, b)| [*a, *b])
        .take(n)
        .map(|r| synth_waveform(&spec, r).expect("synthesis"))
        .collect()
}

/// LFCC frames of `n` utterances pooled together.
pub fn frame_pool(n: usize) -> FramePool {
    let cfg = LfccConfig::default();
    let mut pool = FramePool::new(cfg.dim());
    for w in utterances(n) {
        pool.push_matrix(&lfcc(&w, &cfg).expect("lfcc")).expect("dim");
    }
    pool
}

/// Two overlapping Gaussian score populations of `n` trials each.
pub fn scores(n: usize) -> Vec<LabeledScore> {
    let mut rng = SeedContext::new(0, "bench", "scores", "").rng();
    (0..2 * n)
        .map(|i| {
            let class = if i % 2 == 0 { ClassLabel::Bonafide } else { ClassLabel::Spoof };
            let z: f64 = rng.sample(StandardNormal);
            LabeledScore {
                utt_id: format!("T{i:07}"),
                score: z + if class == ClassLabel::Bonafide { 1.0 } else { 0.0 },
                class,
            }
        })
        .collect()
}
