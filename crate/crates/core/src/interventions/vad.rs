//! Energy-based speech/non-speech labeling and non-speech zeroing.

use rand::Rng;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::protocol::floor_count;

pub const VAD_FRAME_S: f64 = 0.025;
pub const DEFAULT_VAD_MARGIN_DB: f64 = 40.0;

/// Non-overlapping 25 ms frames as `start..end` sample ranges. The last
/// range may be shorter.
pub fn vad_frames(w: &Waveform) -> Vec<std::ops::Range<usize>> {
    let frame = ((VAD_FRAME_S * w.sample_rate_hz() as f64).round() as usize).max(1);
    (0..w.len())
        .step_by(frame)
        .map(|start| start..(start + frame).min(w.len()))
        .collect()
}

/// Per-frame log energy (dB of the frame mean square). Silent frames give
/// `-inf`.
pub fn frame_energies_db(w: &Waveform) -> Vec<f64> {
    vad_frames(w)
        .into_iter()
        .map(|r| {
            let seg = &w.samples()[r];
            let ms = seg.iter().map(|s| s * s).sum::<f64>() / seg.len() as f64;
            10.0 * ms.log10()
        })
        .collect()
}

/// `true` marks a speech frame: its energy exceeds the loudest frame minus
/// `margin_db`.
pub fn detect_nonspeech_with(w: &Waveform, margin_db: f64) -> Vec<bool> {
    let energies = frame_energies_db(w);
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = max - margin_db;
    energies.into_iter().map(|e| e > threshold).collect()
}

pub fn detect_nonspeech(w: &Waveform) -> Vec<bool> {
    detect_nonspeech_with(w, DEFAULT_VAD_MARGIN_DB)
}

/// Overwrite `floor(proportion * K)` of the `K` detected non-speech frames
/// with zeros. Frames are chosen uniformly without replacement from `rng`.
pub fn zero_nonspeech<R: Rng + ?Sized>(
    w: &Waveform,
    proportion: f64,
    margin_db: f64,
    rng: &mut R,
) -> Result<Waveform> {
    if !(0.0..=1.0).contains(&proportion) {
        return Err(Error::InvalidParameter(format!(
            "non-speech proportion {proportion} outside [0, 1]"
        )));
    }
    let frames = vad_frames(w);
    let labels = detect_nonspeech_with(w, margin_db);
    let nonspeech: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &speech)| !speech)
        .map(|(i, _)| i)
        .collect();
    let count = floor_count(proportion, nonspeech.len());
    let mut samples = w.samples().to_vec();
    for pick in rand::seq::index::sample(rng, nonspeech.len(), count) {
        samples[frames[nonspeech[pick]].clone()].fill(0.0);
    }
    w.with_samples(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SeedContext;

    fn tone(n: usize, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * 200.0 * i as f64 / 16_000.0).sin())
            .collect()
    }

    #[test]
    fn steady_sine_is_all_speech() {
        let w = Waveform::new("s", 16_000, tone(16_000, 0.5)).unwrap();
        assert!(detect_nonspeech(&w).iter().all(|&s| s));
    }

    #[test]
    fn silent_half_is_nonspeech() {
        let mut s = tone(8000, 0.5);
        s.extend(vec![0.0; 8000]);
        let w = Waveform::new("s", 16_000, s).unwrap();
        let labels = detect_nonspeech(&w);
        assert_eq!(labels.len(), 40);
        assert!(labels[..20].iter().all(|&x| x));
        assert!(labels[20..].iter().all(|&x| !x));
    }

    #[test]
    fn trailing_partial_frame_gets_its_own_label() {
        let mut s = tone(16_000, 0.5);
        s.extend(vec![0.0; 100]);
        let w = Waveform::new("s", 16_000, s).unwrap();
        let labels = detect_nonspeech(&w);
        assert_eq!(labels.len(), 41);
        assert!(!labels[40]);
    }

    #[test]
    fn pauses_inside_modulated_signal_are_found() {
        // 0.5 s voiced bursts (amplitude-modulated harmonic), 0.5 s pauses
        // holding faint noise 60 dB down.
        let mut rng = SeedContext::new(0, "p", "", "").rng();
        let mut s = Vec::new();
        let mut expected = Vec::new();
        for seg in 0..4 {
            for i in 0..8000 {
                let t = i as f64 / 16_000.0;
                if seg % 2 == 0 {
                    let env = 0.6 + 0.4 * (2.0 * std::f64::consts::PI * 4.0 * t).sin();
                    s.push(
                        0.3 * env
                            * ((2.0 * std::f64::consts::PI * 150.0 * t).sin()
                                + 0.5 * (2.0 * std::f64::consts::PI * 300.0 * t).sin()),
                    );
                } else {
                    s.push(3e-4 * (rng.random::<f64>() - 0.5));
                }
            }
            expected.extend(std::iter::repeat_n(seg % 2 == 0, 20));
        }
        let w = Waveform::new("p", 16_000, s).unwrap();
        assert_eq!(detect_nonspeech(&w), expected);
    }

    fn speech_and_pause() -> Waveform {
        let mut s = tone(8000, 0.5);
        s.extend((0..4000).map(|i| 1e-4 * ((i % 7) as f64 - 3.0)));
        Waveform::new("s", 16_000, s).unwrap()
    }

    #[test]
    fn zero_proportion_is_identity() {
        let w = speech_and_pause();
        let mut rng = SeedContext::new(0, "s", "nonspeech_zero", "A").rng();
        assert_eq!(zero_nonspeech(&w, 0.0, 40.0, &mut rng).unwrap(), w);
    }

    #[test]
    fn full_proportion_zeroes_every_nonspeech_frame() {
        let w = speech_and_pause();
        let mut rng = SeedContext::new(0, "s", "nonspeech_zero", "A").rng();
        let out = zero_nonspeech(&w, 1.0, 40.0, &mut rng).unwrap();
        let labels = detect_nonspeech(&w);
        for (r, speech) in vad_frames(&w).into_iter().zip(labels) {
            let seg = &out.samples()[r.clone()];
            if speech {
                assert_eq!(seg, &w.samples()[r]);
            } else {
                assert!(seg.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn half_of_ten_frames_zeroed() {
        let w = speech_and_pause();
        let labels = detect_nonspeech(&w);
        assert_eq!(labels.iter().filter(|&&s| !s).count(), 10);
        let mut rng = SeedContext::new(5, "s", "nonspeech_zero", "A").rng();
        let out = zero_nonspeech(&w, 0.5, 40.0, &mut rng).unwrap();
        let zeroed = vad_frames(&out)
            .into_iter()
            .filter(|r| out.samples()[r.clone()].iter().all(|&x| x == 0.0))
            .count();
        assert_eq!(zeroed, 5);
    }
}
