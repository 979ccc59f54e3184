use crate::error::{ensure, Error, Result};

/// Canonical sample rate used throughout the toolkit.
pub const DEFAULT_RATE: u32 = 16_000;

/// A single-channel waveform at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MonoClip {
    samples: Vec<f64>,
    rate: u32,
}

impl MonoClip {
    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Self> {
        ensure!(rate > 0, InvalidArgument, "sample rate must be positive");
        ensure!(
            samples.iter().all(|s| s.is_finite()),
            InvalidArgument,
            "clip contains non-finite samples"
        );
        Ok(Self { samples, rate })
    }

    /// Builds a clip from samples the caller has already validated.
    pub(crate) fn from_trusted(samples: Vec<f64>, rate: u32) -> Self {
        debug_assert!(rate > 0);
        Self { samples, rate }
    }

    pub fn silence(len: usize, rate: u32) -> Self {
        Self::from_trusted(vec![0.0; len], rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }

    /// Mean power (mean of squared samples).
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn scaled(&self, gain: f64) -> MonoClip {
        MonoClip::from_trusted(self.samples.iter().map(|s| s * gain).collect(), self.rate)
    }

    /// Sub-clip covering `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<MonoClip> {
        ensure!(
            start + len <= self.samples.len(),
            InvalidArgument,
            "slice {}..{} outside clip of length {}",
            start,
            start + len,
            self.samples.len()
        );
        Ok(MonoClip::from_trusted(
            self.samples[start..start + len].to_vec(),
            self.rate,
        ))
    }
}

/// Two aligned channels sharing length and rate.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoClip {
    left: MonoClip,
    right: MonoClip,
}

impl StereoClip {
    pub fn new(left: MonoClip, right: MonoClip) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::ShapeMismatch(format!(
                "channel lengths differ: {} vs {}",
                left.len(),
                right.len()
            )));
        }
        ensure!(
            left.rate() == right.rate(),
            InvalidArgument,
            "channel rates differ: {} vs {}",
            left.rate(),
            right.rate()
        );
        Ok(Self { left, right })
    }

    pub fn from_samples(left: Vec<f64>, right: Vec<f64>, rate: u32) -> Result<Self> {
        Self::new(MonoClip::new(left, rate)?, MonoClip::new(right, rate)?)
    }

    /// Both channels carry the same signal.
    pub fn duplicated(mono: &MonoClip) -> Self {
        Self {
            left: mono.clone(),
            right: mono.clone(),
        }
    }

    pub fn left(&self) -> &MonoClip {
        &self.left
    }

    pub fn right(&self) -> &MonoClip {
        &self.right
    }

    pub fn into_channels(self) -> (MonoClip, MonoClip) {
        (self.left, self.right)
    }

    pub fn rate(&self) -> u32 {
        self.left.rate()
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn swapped(&self) -> StereoClip {
        Self {
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }

    pub fn power(&self) -> f64 {
        0.5 * (self.left.power() + self.right.power())
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn scaled(&self, left_gain: f64, right_gain: f64) -> StereoClip {
        Self {
            left: self.left.scaled(left_gain),
            right: self.right.scaled(right_gain),
        }
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<StereoClip> {
        Ok(Self {
            left: self.left.slice(start, len)?,
            right: self.right.slice(start, len)?,
        })
    }

    /// Channel-wise sum; both clips must agree in length and rate.
    pub fn add(&self, other: &StereoClip) -> Result<StereoClip> {
        if self.len() != other.len() || self.rate() != other.rate() {
            return Err(Error::ShapeMismatch(format!(
                "cannot add clips of shape ({}, {} Hz) and ({}, {} Hz)",
                self.len(),
                self.rate(),
                other.len(),
                other.rate()
            )));
        }
        let sum = |a: &MonoClip, b: &MonoClip| {
            MonoClip::from_trusted(
                a.samples()
                    .iter()
                    .zip(b.samples())
                    .map(|(x, y)| x + y)
                    .collect(),
                a.rate(),
            )
        };
        Ok(Self {
            left: sum(&self.left, &other.left),
            right: sum(&self.right, &other.right),
        })
    }
}

/// Decoded audio: mono files yield [`Audio::Mono`].
#[derive(Debug, Clone, PartialEq)]
pub enum Audio {
    Mono(MonoClip),
    Stereo(StereoClip),
}

impl Audio {
    pub fn rate(&self) -> u32 {
        match self {
            Audio::Mono(m) => m.rate(),
            Audio::Stereo(s) => s.rate(),
        }
    }

    pub fn into_stereo(self) -> Option<StereoClip> {
        match self {
            Audio::Stereo(s) => Some(s),
            Audio::Mono(_) => None,
        }
    }
}
