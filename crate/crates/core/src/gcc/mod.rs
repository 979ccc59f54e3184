//! Hand-crafted delay baselines: plain cross-correlation and GCC-PHAT.

use rustfft::num_complex::Complex;

use crate::audio::StereoClip;
use crate::dsp::{fft_pair, hann, next_fft_len, to_complex};
use crate::error::{ensure, Error, Result};
use crate::estimate::{Aggregation, DelayEstimate};

/// Search range used when the microphone geometry is unknown (covers a
/// 0.3 m pair at 16 kHz with margin).
pub const DEFAULT_MAX_LAG: usize = 26;

/// PHAT whitening floor.
const PHAT_EPS: f64 = 1e-12;

/// `ceil(spacing / c * rate) + 2`, or [`DEFAULT_MAX_LAG`] without geometry.
pub fn default_max_lag(mic_spacing: Option<f64>, speed_of_sound: f64, rate: u32) -> usize {
    match mic_spacing {
        Some(d) => (d / speed_of_sound * rate as f64).ceil() as usize + 2,
        None => DEFAULT_MAX_LAG,
    }
}

/// Correlation values for the lags `-max_lag..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCurve {
    max_lag: usize,
    values: Vec<f64>,
}

impl CorrelationCurve {
    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lags(&self) -> impl Iterator<Item = i64> + '_ {
        let m = self.max_lag as i64;
        -m..=m
    }

    pub fn at(&self, lag: i64) -> f64 {
        self.values[(lag + self.max_lag as i64) as usize]
    }

    /// Lag of the largest value; ties go to the smallest `|lag|`, then the
    /// negative one.
    pub fn argmax(&self) -> i64 {
        let mut best = -(self.max_lag as i64);
        for lag in self.lags() {
            let (v, b) = (self.at(lag), self.at(best));
            if v > b || (v == b && (lag.abs() < best.abs())) {
                best = lag;
            }
        }
        best
    }
}

fn check_pair(x1: &[f64], x2: &[f64], max_lag: usize) -> Result<()> {
    ensure!(
        x1.len() == x2.len(),
        ShapeMismatch,
        "signals have different lengths ({} vs {})",
        x1.len(),
        x2.len()
    );
    ensure!(
        x1.len() > 2 * max_lag,
        InvalidArgument,
        "{} samples are too few for lags up to {max_lag}",
        x1.len()
    );
    Ok(())
}

/// Circular cross-spectrum `X1 * conj(X2)` on a grid long enough that lags
/// up to `max_lag` do not wrap.
fn cross_spectrum(x1: &[f64], x2: &[f64]) -> (Vec<Complex<f64>>, usize) {
    let n = next_fft_len(x1.len() * 2);
    let (fwd, _) = fft_pair(n);
    let mut a = to_complex(x1, n);
    let mut b = to_complex(x2, n);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y.conj();
    }
    (a, n)
}

fn curve_from_spectrum(mut spec: Vec<Complex<f64>>, n: usize, max_lag: usize) -> CorrelationCurve {
    let (_, inv) = fft_pair(n);
    inv.process(&mut spec);
    let scale = 1.0 / n as f64;
    let values = (-(max_lag as i64)..=max_lag as i64)
        .map(|lag| spec[lag.rem_euclid(n as i64) as usize].re * scale)
        .collect();
    CorrelationCurve { max_lag, values }
}

/// `R(tau) = sum_t x1(t) x2(t - tau)` for `|tau| <= max_lag`.
pub fn cross_correlation(x1: &[f64], x2: &[f64], max_lag: usize) -> Result<CorrelationCurve> {
    check_pair(x1, x2, max_lag)?;
    let (spec, n) = cross_spectrum(x1, x2);
    Ok(curve_from_spectrum(spec, n, max_lag))
}

/// Cross-correlation of the spectrally whitened pair. Both inputs are
/// Hann-tapered first; without the taper the frame edges, which sit at the
/// same samples in both channels, leak into the whitened high bands and can
/// pull the peak to lag 0.
pub fn gcc_phat(x1: &[f64], x2: &[f64], max_lag: usize) -> Result<CorrelationCurve> {
    check_pair(x1, x2, max_lag)?;
    if x1.iter().all(|&v| v == 0.0) || x2.iter().all(|&v| v == 0.0) {
        return Err(Error::SilentClip("GCC-PHAT input channel is all zeros".into()));
    }
    let w = hann(x1.len());
    let a: Vec<f64> = x1.iter().zip(&w).map(|(x, w)| x * w).collect();
    let b: Vec<f64> = x2.iter().zip(&w).map(|(x, w)| x * w).collect();
    let (mut spec, n) = cross_spectrum(&a, &b);
    for v in spec.iter_mut() {
        *v /= v.norm().max(PHAT_EPS);
    }
    Ok(curve_from_spectrum(spec, n, max_lag))
}

/// Window start offsets for `votes` windows of `window` samples spread
/// uniformly (first at 0, last flush with the end).
pub fn vote_offsets(len: usize, window: usize, votes: usize) -> Result<Vec<usize>> {
    ensure!(votes >= 1, InvalidArgument, "need at least one vote");
    ensure!(
        window <= len,
        InvalidArgument,
        "window of {window} samples is longer than the {len}-sample clip"
    );
    let span = len - window;
    ensure!(
        votes == 1 || votes <= span + 1,
        InvalidArgument,
        "{len} samples cannot hold {votes} distinct {window}-sample windows"
    );
    if votes == 1 {
        return Ok(vec![span / 2]);
    }
    Ok((0..votes)
        .map(|k| ((k * span) as f64 / (votes - 1) as f64).round() as usize)
        .collect())
}

/// GCC-PHAT delay estimate from `votes` windows of the clip.
///
/// Each window contributes the argmax lag of `gcc_phat(left, right)` as its
/// vote; under the project convention that is the delay by which the left
/// channel lags the right one.
pub fn classic_estimate(
    clip: &StereoClip,
    votes: usize,
    window: usize,
    max_lag: usize,
    agg: Aggregation,
) -> Result<DelayEstimate> {
    let offsets = vote_offsets(clip.len(), window, votes)?;
    let fs = clip.rate() as f64;
    let (l, r) = (clip.left().samples(), clip.right().samples());
    let votes = offsets
        .iter()
        .map(|&o| {
            let curve = gcc_phat(&l[o..o + window], &r[o..o + window], max_lag)?;
            Ok(curve.argmax() as f64 / fs)
        })
        .collect::<Result<Vec<f64>>>()?;
    DelayEstimate::from_votes(votes, clip.rate(), agg)
}
