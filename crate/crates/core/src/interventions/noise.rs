//! Additive white Gaussian noise at a requested SNR.
//!
//! The signal power reference is the mean square of the entire file, silent
//! regions included.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Draw unit-variance Gaussian noise and scale it so that
/// `10 log10(P_signal / P_noise) == snr_db` exactly, with both powers
/// measured as full-file mean squares.
pub fn scaled_white_noise<R: Rng + ?Sized>(
    w: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidParameter(format!("SNR {snr_db} dB")));
    }
    let signal_power = w.power();
    if signal_power <= 0.0 {
        return Err(Error::ZeroPower(w.id().to_string()));
    }
    let mut noise: Vec<f64> = (0..w.len()).map(|_| rng.sample(StandardNormal)).collect();
    let noise_power = noise.iter().map(|n| n * n).sum::<f64>() / noise.len() as f64;
    let gain = (signal_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt();
    for n in &mut noise {
        *n *= gain;
    }
    Ok(noise)
}

/// Add white noise at `snr_db` and hard clip to `[-1, 1]`.
pub fn add_white_noise<R: Rng + ?Sized>(w: &Waveform, snr_db: f64, rng: &mut R) -> Result<Waveform> {
    let noise = scaled_white_noise(w, snr_db, rng)?;
    let out = w
        .samples()
        .iter()
        .zip(&noise)
        .map(|(s, n)| (s + n).clamp(-1.0, 1.0))
        .collect();
    w.with_samples(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SeedContext;

    fn sine(amp: f64, n: usize) -> Waveform {
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin())
            .collect();
        Waveform::new("sine", 16_000, s).unwrap()
    }

    fn snr_db(w: &Waveform, noise: &[f64]) -> f64 {
        let pn = noise.iter().map(|n| n * n).sum::<f64>() / noise.len() as f64;
        10.0 * (w.power() / pn).log10()
    }

    #[test]
    fn achieved_snr_matches_request() {
        let w = sine(1.0, 32_000);
        for target in [0.0, 10.0, 30.0] {
            let mut rng = SeedContext::new(1, "sine", "white_noise", "A").rng();
            let noise = scaled_white_noise(&w, target, &mut rng).unwrap();
            assert!((snr_db(&w, &noise) - target).abs() < 0.1);
        }
    }

    #[test]
    fn zero_snr_equalizes_powers() {
        let w = sine(0.3, 16_000);
        let mut rng = SeedContext::new(2, "sine", "white_noise", "A").rng();
        let noise = scaled_white_noise(&w, 0.0, &mut rng).unwrap();
        let pn = noise.iter().map(|n| n * n).sum::<f64>() / noise.len() as f64;
        assert!((10.0 * (pn / w.power()).log10()).abs() < 0.1);
    }

    #[test]
    fn output_is_clipped_and_same_length() {
        let w = sine(1.0, 8000);
        let mut rng = SeedContext::new(3, "sine", "white_noise", "A").rng();
        let out = add_white_noise(&w, 0.0, &mut rng).unwrap();
        assert_eq!(out.len(), w.len());
        assert!(out.samples().iter().all(|s| s.abs() <= 1.0));
    }

    #[test]
    fn silence_is_rejected() {
        let w = Waveform::new("z", 16_000, vec![0.0; 100]).unwrap();
        let mut rng = SeedContext::new(3, "z", "white_noise", "A").rng();
        assert!(matches!(add_white_noise(&w, 10.0, &mut rng), Err(Error::ZeroPower(_))));
    }

    #[test]
    fn same_seed_same_noise() {
        let w = sine(0.5, 4000);
        let a = add_white_noise(&w, 12.0, &mut SeedContext::new(9, "sine", "n", "A").rng()).unwrap();
        let b = add_white_noise(&w, 12.0, &mut SeedContext::new(9, "sine", "n", "A").rng()).unwrap();
        assert_eq!(a, b);
    }
}
