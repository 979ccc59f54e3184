//! Image-source impulse responses for shoebox rooms.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{LazyLock, Mutex};

use super::room::{dist, rt60_to_absorption, Point, RoomConfig};
use crate::error::{ensure, Result};

/// Taps of the fractional-delay interpolator.
pub const FRACTIONAL_TAPS: usize = 64;

/// Controls which image sources contribute to a response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSourceConfig {
    /// Highest reflection order; `None` keeps every image inside the horizon.
    pub max_order: Option<u32>,
    /// Images arriving later than `horizon_factor * rt60` are dropped.
    pub horizon_factor: f64,
    /// Fit the per-reflection coefficient so the rendered energy decay hits
    /// `rt60`. When false the Sabine coefficient `sqrt(1 - alpha)` is used
    /// as is, which overshoots the target in elongated rooms.
    pub calibrate: bool,
}

impl Default for ImageSourceConfig {
    fn default() -> Self {
        Self {
            max_order: None,
            horizon_factor: 1.5,
            calibrate: true,
        }
    }
}

/// One contributing path: propagation distance and reflection count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePath {
    pub distance: f64,
    pub order: u32,
}

/// All image-source paths from `source` to `mic`.
///
/// With `rt60 == 0` only the direct path is returned.
pub fn image_paths(
    room: &RoomConfig,
    source: Point,
    mic: Point,
    cfg: &ImageSourceConfig,
) -> Result<Vec<ImagePath>> {
    room.validate()?;
    ensure!(
        room.strictly_inside(source),
        Geometry,
        "source {source:?} lies outside the room"
    );
    if room.rt60 == 0.0 {
        return Ok(vec![ImagePath {
            distance: dist(source, mic),
            order: 0,
        }]);
    }
    let horizon = cfg.horizon_factor * room.rt60 * room.speed_of_sound;
    let max_order = cfg.max_order.unwrap_or(u32::MAX);
    let dims = room.dims;

    // Per axis: candidate (coordinate offset, reflection count) pairs.
    let axis_images = |axis: usize| -> Vec<(f64, u32)> {
        let l = dims[axis];
        let n_max = (horizon / (2.0 * l)).ceil() as i64 + 1;
        let mut out = Vec::new();
        for n in -n_max..=n_max {
            for q in 0..2i64 {
                let coord = (1 - 2 * q) as f64 * source[axis] + 2.0 * n as f64 * l;
                let refl = ((n - q).abs() + n.abs()) as u32;
                let delta = coord - mic[axis];
                if delta.abs() <= horizon && refl <= max_order {
                    out.push((delta, refl));
                }
            }
        }
        out
    };
    let xs = axis_images(0);
    let ys = axis_images(1);
    let zs = axis_images(2);
    let h2 = horizon * horizon;
    let mut paths = Vec::new();
    for &(dx, ox) in &xs {
        for &(dy, oy) in &ys {
            let dxy = dx * dx + dy * dy;
            if dxy > h2 || ox + oy > max_order {
                continue;
            }
            for &(dz, oz) in &zs {
                let d2 = dxy + dz * dz;
                let order = ox + oy + oz;
                if d2 <= h2 && order <= max_order {
                    paths.push(ImagePath {
                        distance: d2.sqrt(),
                        order,
                    });
                }
            }
        }
    }
    Ok(paths)
}

/// Adds `gain * delta(t - delay)` into `buf` using a 64-tap
/// Blackman-windowed sinc centered on the fractional delay (in samples).
pub(crate) fn add_fractional_impulse(buf: &mut [f64], delay: f64, gain: f64) {
    let half = (FRACTIONAL_TAPS / 2) as f64;
    let base = delay.floor() as isize;
    let first = base - (FRACTIONAL_TAPS as isize / 2 - 1);
    let frac = delay - base as f64;
    // Tap k sits at offset d_k = first + k - delay. The sinc numerator
    // sin(pi d_k) alternates sign and the window cosines advance by a fixed
    // angle per tap, so both are generated by recurrence.
    let d0 = (first - base) as f64 - frac;
    let s0 = (PI * frac).sin();
    let mut num = if (first - base).rem_euclid(2) == 0 {
        -s0
    } else {
        s0
    };
    let (w1, w2) = (PI / half, 2.0 * PI / half);
    let (mut c1, mut s1) = ((w1 * d0).cos(), (w1 * d0).sin());
    let (mut c2, mut s2) = ((w2 * d0).cos(), (w2 * d0).sin());
    let (dc1, ds1) = (w1.cos(), w1.sin());
    let (dc2, ds2) = (w2.cos(), w2.sin());
    for k in 0..FRACTIONAL_TAPS as isize {
        let n = first + k;
        let d = d0 + k as f64;
        if n >= 0 && (n as usize) < buf.len() && d.abs() < half {
            let sinc = if d.abs() < 1e-12 { 1.0 } else { num / (PI * d) };
            let window = 0.42 + 0.5 * c1 + 0.08 * c2;
            buf[n as usize] += gain * sinc * window;
        }
        num = -num;
        (c1, s1) = (c1 * dc1 - s1 * ds1, s1 * dc1 + c1 * ds1);
        (c2, s2) = (c2 * dc2 - s2 * ds2, s2 * dc2 + c2 * ds2);
    }
}

/// Time (s) for a coarse impulse response built from `paths` (amplitudes
/// `beta^order / r` summed per sample) to decay by 60 dB after the first
/// arrival. Overlapping arrivals add coherently, as in the rendered response,
/// which is why this is not done on per-path energies.
fn path_decay_time(paths: &[ImagePath], beta: f64, speed: f64, rate: f64) -> f64 {
    let max_order = paths.iter().map(|p| p.order).max().unwrap_or(0) as usize;
    let mut pow = Vec::with_capacity(max_order + 1);
    let mut acc = 1.0;
    for _ in 0..=max_order {
        pow.push(acc);
        acc *= beta;
    }
    let first = paths.iter().map(|p| p.distance).fold(f64::INFINITY, f64::min);
    let last = paths.iter().map(|p| p.distance).fold(0.0, f64::max);
    let len = ((last - first) / speed * rate).round() as usize + 1;
    let mut h = vec![0.0; len];
    for p in paths {
        let n = ((p.distance - first) / speed * rate).round() as usize;
        h[n] += pow[p.order as usize] / p.distance;
    }
    let edc = schroeder_decay_db(&h);
    let n = edc.iter().position(|&db| db <= -60.0).unwrap_or(len);
    n as f64 / rate
}

const CALIBRATION_RATE: f64 = 16000.0;

/// Amplitude factor applied per wall reflection for `room`.
///
/// With calibration enabled, bisects the factor so that the Schroeder decay
/// of the image set (reference source 1.5 m broadside, left mic) reaches -60 dB at
/// `rt60`; the Sabine value is used as the starting bracket hint only.
pub fn reflection_coefficient(room: &RoomConfig, cfg: &ImageSourceConfig) -> Result<f64> {
    if room.rt60 == 0.0 {
        return Ok(0.0);
    }
    let sabine = (1.0 - rt60_to_absorption(room)?).sqrt();
    if !cfg.calibrate {
        return Ok(sabine);
    }
    // Reference source: 1.5 m broadside of the pair, or the room center
    // when that falls outside.
    let broadside = room.source_position(0.0, 1.5);
    let source = if room.strictly_inside(broadside) {
        broadside
    } else {
        [room.dims[0] / 2.0, room.dims[1] / 2.0, room.dims[2] / 2.0]
    };
    let mic = if dist(source, room.mic_left) > 0.1 {
        room.mic_left
    } else {
        room.mic_right
    };
    let key: Vec<u64> = room
        .dims
        .iter()
        .chain(&room.mic_left)
        .chain(&room.mic_right)
        .chain([&room.rt60, &room.speed_of_sound, &cfg.horizon_factor])
        .map(|v| v.to_bits())
        .chain([cfg.max_order.map_or(u64::MAX, u64::from)])
        .collect();
    if let Some(&beta) = CALIBRATED.lock().expect("cache lock").get(&key) {
        return Ok(beta);
    }
    let paths = image_paths(room, source, mic, cfg)?;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if path_decay_time(&paths, mid, room.speed_of_sound, CALIBRATION_RATE) < room.rt60 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = 0.5 * (lo + hi);
    CALIBRATED.lock().expect("cache lock").insert(key, beta);
    Ok(beta)
}

/// Calibrated coefficients keyed by the bit patterns of the room geometry
/// and config; calibration is deterministic so caching cannot change results.
static CALIBRATED: LazyLock<Mutex<HashMap<Vec<u64>, f64>>> = LazyLock::new(Default::default);

/// Room impulse response from `source` to `mic` at sample rate `rate`.
///
/// Each image contributes `beta^order / (4 pi r)` at delay `r / c`, with
/// `beta` from [`reflection_coefficient`].
pub fn impulse_response(
    room: &RoomConfig,
    source: Point,
    mic: Point,
    rate: u32,
    cfg: &ImageSourceConfig,
) -> Result<Vec<f64>> {
    let beta = reflection_coefficient(room, cfg)?;
    impulse_response_with(room, source, mic, rate, cfg, beta)
}

pub(crate) fn impulse_response_with(
    room: &RoomConfig,
    source: Point,
    mic: Point,
    rate: u32,
    cfg: &ImageSourceConfig,
    beta: f64,
) -> Result<Vec<f64>> {
    let paths = image_paths(room, source, mic, cfg)?;
    let fs = rate as f64;
    let max_delay = paths
        .iter()
        .map(|p| p.distance / room.speed_of_sound * fs)
        .fold(0.0, f64::max);
    let len = max_delay.ceil() as usize + FRACTIONAL_TAPS / 2 + 1;
    let mut ir = vec![0.0; len];
    for p in &paths {
        let gain = beta.powi(p.order as i32) / (4.0 * PI * p.distance);
        add_fractional_impulse(&mut ir, p.distance / room.speed_of_sound * fs, gain);
    }
    Ok(ir)
}

/// Impulse response normalized to its direct path: a unit impulse at lag 0
/// followed by the reflections at their delays relative to the direct
/// arrival. Used to reverberate existing recordings without shifting them.
pub fn relative_impulse_response(
    room: &RoomConfig,
    source: Point,
    mic: Point,
    rate: u32,
    cfg: &ImageSourceConfig,
) -> Result<Vec<f64>> {
    let beta = reflection_coefficient(room, cfg)?;
    let paths = image_paths(room, source, mic, cfg)?;
    let direct = paths.iter().map(|p| p.distance).fold(f64::INFINITY, f64::min);
    let fs = rate as f64;
    let to_delay = |d: f64| (d - direct) / room.speed_of_sound * fs;
    let max_delay = paths.iter().map(|p| to_delay(p.distance)).fold(0.0, f64::max);
    let mut ir = vec![0.0; max_delay.ceil() as usize + FRACTIONAL_TAPS / 2 + 1];
    for p in &paths {
        let gain = beta.powi(p.order as i32) * direct / p.distance;
        add_fractional_impulse(&mut ir, to_delay(p.distance), gain);
    }
    Ok(ir)
}

/// Schroeder backward-integrated energy decay curve in dB (0 dB at t = 0).
pub fn schroeder_decay_db(ir: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = ir
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter()
        .map(|&e| {
            if e > 0.0 {
                10.0 * (e / total).log10()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Time in seconds at which the decay curve first falls to `level_db`
/// (measured from the direct-path arrival).
pub fn decay_time(ir: &[f64], rate: u32, level_db: f64) -> Option<f64> {
    let onset = ir
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)?;
    let edc = schroeder_decay_db(&ir[onset..]);
    edc.iter()
        .position(|&db| db <= level_db)
        .map(|i| i as f64 / rate as f64)
}
