//! Magnitude/phase spectrogram features for the embedding network.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::MonoClip;
use crate::dsp::hann;
use crate::error::{ensure, Result};

pub const FFT_SIZE: usize = 256;
/// Frequency bins kept (the Nyquist bin of the 256-point FFT is dropped).
pub const N_FREQ: usize = 128;
pub const N_FRAMES: usize = 128;
pub const N_COMPONENTS: usize = 2;

/// Fixed-size `128 x 128 x 2` time-frequency image: magnitude and phase.
///
/// Storage is component-major (`[component][freq][time]`) so the two
/// components map directly onto the network's input channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<f32>,
}

impl Spectrogram {
    pub const LEN: usize = N_COMPONENTS * N_FREQ * N_FRAMES;
    pub const MAGNITUDE: usize = 0;
    pub const PHASE: usize = 1;

    pub fn shape(&self) -> [usize; 3] {
        [N_FREQ, N_FRAMES, N_COMPONENTS]
    }

    pub fn get(&self, freq: usize, time: usize, component: usize) -> f32 {
        self.data[(component * N_FREQ + freq) * N_FRAMES + time]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn component(&self, component: usize) -> &[f32] {
        let plane = N_FREQ * N_FRAMES;
        &self.data[component * plane..(component + 1) * plane]
    }
}

/// Reusable STFT state (FFT plan and analysis window).
pub struct StftFeatures {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Default for StftFeatures {
    fn default() -> Self {
        Self::new()
    }
}

impl StftFeatures {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        Self {
            fft,
            window: hann(FFT_SIZE),
        }
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn hop(len: usize) -> usize {
        len / N_FRAMES
    }

    /// Complex one-sided frames (`N_FRAMES` frames of `N_FREQ` bins), frame-major.
    pub(crate) fn frames(&self, samples: &[f64]) -> Result<Vec<Complex<f64>>> {
        let len = samples.len();
        ensure!(
            len >= FFT_SIZE,
            InvalidArgument,
            "window of {len} samples is shorter than the {FFT_SIZE}-point STFT"
        );
        let hop = Self::hop(len);
        let pad = FFT_SIZE / 2;
        // Reflection padding without repeating the edge sample.
        let padded_at = |i: isize| -> f64 {
            let n = len as isize;
            let mut j = i - pad as isize;
            if j < 0 {
                j = -j;
            }
            if j >= n {
                j = 2 * (n - 1) - j;
            }
            samples[j as usize]
        };
        let mut out = Vec::with_capacity(N_FRAMES * N_FREQ);
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        for frame in 0..N_FRAMES {
            let start = (frame * hop) as isize;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(padded_at(start + k as isize) * self.window[k], 0.0);
            }
            self.fft.process(&mut buf);
            out.extend_from_slice(&buf[..N_FREQ]);
        }
        Ok(out)
    }

    /// Centered STFT (reflection padding, periodic Hann, hop `floor(L/128)`),
    /// truncated to 128 bins and 128 frames, split into magnitude and phase.
    pub fn compute(&self, window: &MonoClip) -> Result<Spectrogram> {
        let frames = self.frames(window.samples())?;
        let plane = N_FREQ * N_FRAMES;
        let mut data = vec![0f32; Spectrogram::LEN];
        for (t, frame) in frames.chunks_exact(N_FREQ).enumerate() {
            for (f, c) in frame.iter().enumerate() {
                // Checked after narrowing: values just above -pi in f64 can
                // round onto -pi in f32.
                let mut phase = c.im.atan2(c.re) as f32;
                if phase <= -std::f32::consts::PI {
                    phase = std::f32::consts::PI;
                }
                data[f * N_FRAMES + t] = c.norm() as f32;
                data[plane + f * N_FRAMES + t] = phase;
            }
        }
        Ok(Spectrogram { data })
    }
}

/// One-shot convenience wrapper around [`StftFeatures::compute`].
pub fn stft_features(window: &MonoClip) -> Result<Spectrogram> {
    StftFeatures::new().compute(window)
}
