//! Training-time augmentations with the bookkeeping needed to undo time
//! shifts and fix up delay labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{MonoClip, StereoClip};
use crate::dsp::convolve;
use crate::error::{ensure, Error, Result};
use crate::sim::{add_noise, make_mixture, relative_impulse_response, ImageSourceConfig, RoomPreset};

/// What was applied to a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub swapped: bool,
    pub scale_left: f64,
    pub scale_right: f64,
    /// Circular shift applied to both channels: `y(t) = x(t - shift)`.
    pub shift_samples: i64,
    pub noise_snr_db: Option<f64>,
    pub rt60_applied: Option<f64>,
    pub mixture_intensity: Option<f64>,
}

impl Default for AugmentRecord {
    fn default() -> Self {
        Self {
            swapped: false,
            scale_left: 1.0,
            scale_right: 1.0,
            shift_samples: 0,
            noise_snr_db: None,
            rt60_applied: None,
            mixture_intensity: None,
        }
    }
}

impl AugmentRecord {
    /// Ground-truth delay after the augmentation: a channel swap negates it,
    /// everything else leaves it unchanged.
    pub fn transform_tdoa(&self, tdoa: f64) -> f64 {
        if self.swapped {
            -tdoa
        } else {
            tdoa
        }
    }

    /// Index in the augmented sequence that corresponds to node `index` of
    /// the original, for nodes spaced `step` samples apart.
    pub fn aligned_index(&self, index: usize, step: usize) -> Option<usize> {
        if self.shift_samples % step as i64 != 0 {
            return None;
        }
        let j = index as i64 + self.shift_samples / step as i64;
        usize::try_from(j).ok()
    }

    fn merge(&mut self, other: AugmentRecord) {
        self.swapped ^= other.swapped;
        self.scale_left *= other.scale_left;
        self.scale_right *= other.scale_right;
        self.shift_samples += other.shift_samples;
        self.noise_snr_db = other.noise_snr_db.or(self.noise_snr_db);
        self.rt60_applied = other.rt60_applied.or(self.rt60_applied);
        self.mixture_intensity = other.mixture_intensity.or(self.mixture_intensity);
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), min: f64) -> Result<()> {
    ensure!(
        lo.is_finite() && hi.is_finite() && lo <= hi && lo >= min,
        Config,
        "{name} range [{lo}, {hi}] is invalid"
    );
    Ok(())
}

/// Swaps the channels with probability `p`.
pub fn channel_swap(clip: &StereoClip, p: f64, seed: u64) -> (StereoClip, AugmentRecord) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let swapped = rng.random::<f64>() < p;
    let out = if swapped { clip.swapped() } else { clip.clone() };
    (
        out,
        AugmentRecord {
            swapped,
            ..Default::default()
        },
    )
}

/// Independent uniform gain per channel.
pub fn channel_scale(clip: &StereoClip, range: (f64, f64), seed: u64) -> (StereoClip, AugmentRecord) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gl = uniform(&mut rng, range);
    let gr = uniform(&mut rng, range);
    (
        clip.scaled(gl, gr),
        AugmentRecord {
            scale_left: gl,
            scale_right: gr,
            ..Default::default()
        },
    )
}

/// Circular shift of both channels by a uniform multiple of `granularity`
/// within `+-bound` samples.
pub fn time_shift(clip: &StereoClip, bound: usize, granularity: usize, seed: u64) -> (StereoClip, AugmentRecord) {
    let g = granularity.max(1) as i64;
    let k = bound as i64 / g;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = rng.random_range(-k..=k) * g;
    (
        shift_clip(clip, shift),
        AugmentRecord {
            shift_samples: shift,
            ..Default::default()
        },
    )
}

/// `y(t) = x(t - shift)` with wrap-around.
pub fn shift_clip(clip: &StereoClip, shift: i64) -> StereoClip {
    let rot = |c: &MonoClip| {
        let n = c.len() as i64;
        let s = c.samples();
        let v = (0..n).map(|t| s[(t - shift).rem_euclid(n) as usize]).collect();
        MonoClip::from_trusted(v, c.rate())
    };
    StereoClip::new(rot(clip.left()), rot(clip.right())).expect("equal-length channels")
}

/// White noise at an SNR drawn uniformly from `snr_range` (dB).
pub fn noise_aug(clip: &StereoClip, snr_range: (f64, f64), seed: u64) -> Result<(StereoClip, AugmentRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let snr = uniform(&mut rng, snr_range);
    let out = add_noise(clip, snr, rng.random())?;
    Ok((
        out,
        AugmentRecord {
            noise_snr_db: Some(snr),
            ..Default::default()
        },
    ))
}

/// Reverberates both channels with the same room response (random preset,
/// random source placement, RT60 uniform in `rt60_range`), aligned so the
/// direct path stays at lag 0.
pub fn reverb_aug(clip: &StereoClip, rt60_range: (f64, f64), seed: u64) -> Result<(StereoClip, AugmentRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rt60 = uniform(&mut rng, rt60_range);
    let record = AugmentRecord {
        rt60_applied: Some(rt60),
        ..Default::default()
    };
    if rt60 <= 0.0 {
        return Ok((clip.clone(), record));
    }
    let preset = RoomPreset::ALL[rng.random_range(0..RoomPreset::ALL.len())];
    let room = preset.config(rt60);
    let mut source = room.source_position(rng.random_range(-90.0..=90.0), rng.random_range(0.5..=3.0));
    if !room.strictly_inside(source) {
        source = room.source_position(0.0, 0.5);
    }
    let ir = relative_impulse_response(&room, source, room.mic_left, clip.rate(), &ImageSourceConfig::default())?;
    let apply = |c: &MonoClip| MonoClip::from_trusted(convolve(c.samples(), &ir, c.len()), c.rate());
    Ok((StereoClip::new(apply(clip.left()), apply(clip.right()))?, record))
}

/// Mixes in a distractor drawn from `pool` at an intensity drawn from
/// `intensity_range`. Longer distractors are cropped at a random offset.
pub fn mixture_aug(
    clip: &StereoClip,
    pool: &[StereoClip],
    intensity_range: (f64, f64),
    seed: u64,
) -> Result<(StereoClip, AugmentRecord)> {
    ensure!(!pool.is_empty(), Config, "mixture augmentation needs a non-empty distractor pool");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intensity = uniform(&mut rng, intensity_range);
    let pick = &pool[rng.random_range(0..pool.len())];
    ensure!(
        pick.len() >= clip.len(),
        ShapeMismatch,
        "distractor of {} samples is shorter than the {}-sample clip",
        pick.len(),
        clip.len()
    );
    let offset = rng.random_range(0..=pick.len() - clip.len());
    let distractor = pick.slice(offset, clip.len())?;
    Ok((
        make_mixture(clip, &distractor, intensity)?,
        AugmentRecord {
            mixture_intensity: Some(intensity),
            ..Default::default()
        },
    ))
}

/// Which augmentations to run. Absent entries are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub swap_prob: Option<f64>,
    pub scale: Option<(f64, f64)>,
    /// Shift bound in samples.
    pub shift: Option<usize>,
    /// Shifts are multiples of this many samples.
    #[serde(default = "one")]
    pub shift_granularity: usize,
    pub noise_snr_db: Option<(f64, f64)>,
    pub reverb_rt60: Option<(f64, f64)>,
    pub mixture_intensity: Option<(f64, f64)>,
}

fn one() -> usize {
    1
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            swap_prob: None,
            scale: None,
            shift: None,
            shift_granularity: 1,
            noise_snr_db: None,
            reverb_rt60: None,
            mixture_intensity: None,
        }
    }
}

impl AugmentConfig {
    /// Channel swap (p = 0.5) and per-channel scaling in [0.5, 1.5].
    pub fn regular() -> Self {
        Self {
            swap_prob: Some(0.5),
            scale: Some((0.5, 1.5)),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.swap_prob {
            ensure!((0.0..=1.0).contains(&p), Config, "swap probability {p} is outside [0, 1]");
        }
        if let Some(r) = self.scale {
            check_range("scale", r, 0.0)?;
        }
        ensure!(self.shift_granularity >= 1, Config, "shift granularity must be at least 1");
        if let Some(r) = self.noise_snr_db {
            check_range("noise SNR", r, f64::NEG_INFINITY)?;
        }
        if let Some(r) = self.reverb_rt60 {
            check_range("reverb RT60", r, 0.0)?;
        }
        if let Some(r) = self.mixture_intensity {
            check_range("mixture intensity", r, 0.0)?;
            ensure!(r.0 > 0.0 && r.1 <= 1.0, Config, "mixture intensity must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn has_degradation(&self) -> bool {
        self.noise_snr_db.is_some() || self.reverb_rt60.is_some() || self.mixture_intensity.is_some()
    }
}

/// Role of the augmented clip in the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Anchor of the walk or of instance discrimination: only swap and scale.
    Clean,
    /// Target side of a stereo loss: no shift, since a pairwise loss cannot
    /// undo a shift without changing the delay it learns from.
    Augmented,
    /// Augmented mono view whose shift the loss undoes through the record.
    ShiftedView,
}

/// Applies the configured augmentations in the fixed order swap, scale,
/// shift, noise, reverb, mixture. Each op gets its own seed drawn from `seed`.
pub fn pipeline(
    clip: &StereoClip,
    config: &AugmentConfig,
    side: Side,
    pool: &[StereoClip],
    seed: u64,
) -> Result<(StereoClip, AugmentRecord)> {
    config.validate()?;
    if side == Side::Clean && config.has_degradation() {
        return Err(Error::Policy(
            "noise, reverb and mixture augmentation are not allowed on the clean side".into(),
        ));
    }
    if side != Side::ShiftedView && config.shift.is_some() {
        return Err(Error::Policy(format!(
            "time shift on the {side:?} side cannot be undone by the loss"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds = [0u64; 6];
    seeds.iter_mut().for_each(|s| *s = rng.random());
    let mut record = AugmentRecord::default();
    let mut out = clip.clone();
    if let Some(p) = config.swap_prob {
        let (c, r) = channel_swap(&out, p, seeds[0]);
        out = c;
        record.merge(r);
    }
    if let Some(range) = config.scale {
        let (c, r) = channel_scale(&out, range, seeds[1]);
        out = c;
        record.merge(r);
    }
    if let Some(bound) = config.shift {
        let (c, r) = time_shift(&out, bound, config.shift_granularity, seeds[2]);
        out = c;
        record.merge(r);
    }
    if let Some(range) = config.noise_snr_db {
        let (c, r) = noise_aug(&out, range, seeds[3])?;
        out = c;
        record.merge(r);
    }
    if let Some(range) = config.reverb_rt60 {
        let (c, r) = reverb_aug(&out, range, seeds[4])?;
        out = c;
        record.merge(r);
    }
    if let Some(range) = config.mixture_intensity {
        let (c, r) = mixture_aug(&out, pool, range, seeds[5])?;
        out = c;
        record.merge(r);
    }
    Ok((out, record))
}
