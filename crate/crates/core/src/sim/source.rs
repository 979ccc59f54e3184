//! Synthetic source signals.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::MonoClip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Gaussian white noise.
    WhiteNoise,
    /// Noise shaped by three random formant resonators with a slow
    /// syllable-rate amplitude envelope.
    #[default]
    SpeechLike,
    /// Glottal pulse train (random pitch, 1% jitter) plus aspiration noise,
    /// through the same formant filters and envelope as `SpeechLike`.
    Voiced,
}

/// Two-pole resonator with unit peak gain at `freq`.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, rate: f64) -> Self {
        let r = (-PI * bandwidth / rate).exp();
        let theta = 2.0 * PI * freq / rate;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            gain: 1.0 - r,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Generates `len` samples of the requested source type, normalized to unit RMS.
pub fn synth_source<R: Rng + ?Sized>(
    kind: SourceKind,
    len: usize,
    rate: u32,
    rng: &mut R,
) -> MonoClip {
    let fs = rate as f64;
    let mut noise = || -> f64 { StandardNormal.sample(rng) };
    let mut out: Vec<f64> = match kind {
        SourceKind::WhiteNoise => (0..len).map(|_| noise()).collect(),
        SourceKind::SpeechLike | SourceKind::Voiced => {
            let formants = [(250.0, 900.0), (900.0, 2400.0), (2000.0, 3800.0)];
            let mut filters: Vec<Resonator> = formants
                .iter()
                .map(|&(lo, hi)| {
                    let f = lo + (hi - lo) * (noise().abs().min(3.0) / 3.0);
                    Resonator::new(f, 0.1 * f + 60.0, fs)
                })
                .collect();
            let syllable_hz = 3.0 + noise().abs().min(3.0);
            let phase = noise() * PI;
            // Let the resonators settle before recording.
            let settle = (0.01 * fs) as usize;
            let excitation: Vec<f64> = if kind == SourceKind::Voiced {
                let f0 = 90.0 + 160.0 * (noise().abs().min(3.0) / 3.0);
                let period = fs / f0;
                let mut next = period * (noise().abs().min(3.0) / 3.0);
                let mut glottal = 0.0;
                (0..settle + len)
                    .map(|i| {
                        let mut pulse = 0.0;
                        if i as f64 >= next {
                            pulse = 1.0;
                            next += period * (1.0 + 0.01 * noise());
                        }
                        // One-pole spectral tilt of the glottal source.
                        glottal = 0.95 * glottal + pulse;
                        glottal * (1.0 - 0.95) * period.sqrt() + 0.1 * noise()
                    })
                    .collect()
            } else {
                (0..settle + len).map(|_| noise()).collect()
            };
            excitation
                .into_iter()
                .enumerate()
                .map(|(i, x)| {
                    let y: f64 = filters.iter_mut().map(|f| f.tick(x)).sum();
                    let t = i as f64 / fs;
                    let env = 0.35 + 0.65 * (0.5 + 0.5 * (2.0 * PI * syllable_hz * t + phase).sin());
                    y * env
                })
                .skip(settle)
                .collect()
        }
    };
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    MonoClip::from_trusted(out, rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sources_are_unit_rms_and_deterministic() {
        for kind in [SourceKind::WhiteNoise, SourceKind::SpeechLike, SourceKind::Voiced] {
            let a = synth_source(kind, 4000, 16000, &mut ChaCha8Rng::seed_from_u64(3));
            let b = synth_source(kind, 4000, 16000, &mut ChaCha8Rng::seed_from_u64(3));
            assert_eq!(a, b);
            assert!((a.rms() - 1.0).abs() < 1e-9);
        }
    }
}
