//! Waveform containers, WAV I/O, resampling, windowing and STFT features.

mod clip;
mod resample;
mod stft;
mod wav;

pub use clip::{Audio, MonoClip, StereoClip, DEFAULT_RATE};
pub use resample::resample;
#[cfg(test)]
pub(crate) use resample::{blackman, sinc};
pub use stft::{stft_features, Spectrogram, StftFeatures, FFT_SIZE, N_FRAMES, N_FREQ};
pub use wav::{load_wav, save_stereo, save_wav, WavEncoding};

use crate::error::{ensure, Result};

/// Number of sliding windows `floor((n - window) / step)`.
pub fn window_count(len: usize, window: usize, step: usize) -> usize {
    if window > len || step == 0 {
        0
    } else {
        (len - window) / step
    }
}

/// Sliding windows over a clip; window `k` covers `k*step .. k*step + window`.
pub fn extract_windows(clip: &MonoClip, window: usize, step: usize) -> Result<Vec<MonoClip>> {
    ensure!(step >= 1, InvalidArgument, "window step must be at least 1");
    ensure!(window >= 1, InvalidArgument, "window must be non-empty");
    ensure!(
        window <= clip.len(),
        InvalidArgument,
        "window of {window} samples is longer than the clip ({} samples)",
        clip.len()
    );
    let count = window_count(clip.len(), window, step);
    (0..count).map(|k| clip.slice(k * step, window)).collect()
}
