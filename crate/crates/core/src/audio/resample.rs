use std::f64::consts::PI;

use super::MonoClip;
use crate::error::{ensure, Result};

/// Zero crossings of the sinc kernel on each side of the interpolation point.
const ZERO_CROSSINGS: f64 = 32.0;

pub(crate) fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Blackman window evaluated at `x` in `[-half, half]`, zero outside.
pub(crate) fn blackman(x: f64, half: f64) -> f64 {
    if x.abs() > half {
        return 0.0;
    }
    let u = (x + half) / (2.0 * half);
    0.42 - 0.5 * (2.0 * PI * u).cos() + 0.08 * (4.0 * PI * u).cos()
}

/// Band-limited windowed-sinc resampling.
///
/// Output length is `round(n * target / source)`. When downsampling the
/// kernel cutoff follows the target Nyquist frequency.
pub fn resample(clip: &MonoClip, target_rate: u32) -> Result<MonoClip> {
    ensure!(
        target_rate > 0,
        InvalidArgument,
        "target rate must be positive"
    );
    let source_rate = clip.rate();
    if source_rate == target_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / source_rate as f64;
    let n_out = (clip.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half = ZERO_CROSSINGS / cutoff;
    let x = clip.samples();
    let n_in = x.len() as isize;

    let out = (0..n_out)
        .map(|i| {
            let pos = i as f64 / ratio;
            let lo = ((pos - half).ceil() as isize).max(0);
            let hi = ((pos + half).floor() as isize).min(n_in - 1);
            (lo..=hi)
                .map(|k| {
                    let d = pos - k as f64;
                    x[k as usize] * cutoff * sinc(cutoff * d) * blackman(d, half)
                })
                .sum()
        })
        .collect();
    Ok(MonoClip::from_trusted(out, target_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, n: usize) -> MonoClip {
        let s = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect();
        MonoClip::new(s, rate).unwrap()
    }

    #[test]
    fn same_rate_is_identity() {
        let c = sine(440.0, 16000, 500);
        assert_eq!(resample(&c, 16000).unwrap(), c);
    }

    #[test]
    fn zero_rate_is_rejected() {
        assert!(resample(&sine(440.0, 16000, 10), 0).is_err());
    }

    #[test]
    fn halving_rate_halves_length() {
        let c = sine(440.0, 16000, 1001);
        let r = resample(&c, 8000).unwrap();
        assert!((r.len() as i64 - 500).abs() <= 1);
        assert_eq!(r.rate(), 8000);
    }

    #[test]
    fn downsampled_sine_matches_analytic_sine() {
        let c = sine(440.0, 32000, 8000);
        let r = resample(&c, 16000).unwrap();
        assert_eq!(r.len(), 4000);
        let expected = sine(440.0, 16000, 4000);
        // Kernel support is 64 input samples each side; skip edge effects.
        let margin = 80;
        let worst = r.samples()[margin..r.len() - margin]
            .iter()
            .zip(&expected.samples()[margin..expected.len() - margin])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-3, "max error {worst}");
    }
}
