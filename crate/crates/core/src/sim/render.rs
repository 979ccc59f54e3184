use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ism::{impulse_response_with, reflection_coefficient, ImageSourceConfig};
use super::room::{ground_truth_tdoa, RoomConfig, SourceSpec};
use crate::audio::{MonoClip, StereoClip};
use crate::dsp::convolve;
use crate::error::{ensure, Error, Result};

/// A room, its sources and the recording conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub room: RoomConfig,
    pub sources: Vec<SourceSpec>,
    /// `None` renders without additive noise.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        ensure!(
            !self.sources.is_empty(),
            InvalidArgument,
            "scene has no sources"
        );
        for s in &self.sources {
            ensure!(
                self.room.strictly_inside(s.position(&self.room)),
                Geometry,
                "source at {:.1} deg / {:.2} m lies outside the room",
                s.angle_deg,
                s.distance_m
            );
        }
        Ok(())
    }

    /// Ground-truth TDOA of every source, in seconds.
    pub fn tdoas(&self) -> Result<Vec<f64>> {
        self.sources
            .iter()
            .map(|s| ground_truth_tdoa(&self.room, s))
            .collect()
    }
}

/// Reverberant rendering without additive noise.
pub fn render_clean(
    scene: &Scene,
    signals: &[MonoClip],
    cfg: &ImageSourceConfig,
) -> Result<(StereoClip, Vec<f64>)> {
    scene.validate()?;
    ensure!(
        signals.len() == scene.sources.len(),
        InvalidArgument,
        "{} signals for {} sources",
        signals.len(),
        scene.sources.len()
    );
    let rate = signals[0].rate();
    let len = signals[0].len();
    ensure!(
        signals.iter().all(|s| s.rate() == rate),
        InvalidArgument,
        "source signals have mismatched sample rates"
    );
    ensure!(
        signals.iter().all(|s| s.len() == len),
        InvalidArgument,
        "source signals have mismatched lengths"
    );
    let beta = reflection_coefficient(&scene.room, cfg)?;
    let mut left = vec![0.0; len];
    let mut right = vec![0.0; len];
    for (spec, signal) in scene.sources.iter().zip(signals) {
        if spec.gain == 0.0 {
            continue;
        }
        let pos = spec.position(&scene.room);
        let x: Vec<f64> = signal.samples().iter().map(|v| v * spec.gain).collect();
        for (mic, out) in [
            (scene.room.mic_left, &mut left),
            (scene.room.mic_right, &mut right),
        ] {
            let ir = impulse_response_with(&scene.room, pos, mic, rate, cfg, beta)?;
            for (o, y) in out.iter_mut().zip(convolve(&x, &ir, len)) {
                *o += y;
            }
        }
    }
    let clip = StereoClip::new(
        MonoClip::from_trusted(left, rate),
        MonoClip::from_trusted(right, rate),
    )?;
    Ok((clip, scene.tdoas()?))
}

/// Renders every source through the room, sums them and adds noise at
/// `scene.snr_db`. Returns the stereo pair and per-source ground truth.
pub fn render_scene(scene: &Scene, signals: &[MonoClip]) -> Result<(StereoClip, Vec<f64>)> {
    let (clip, taus) = render_clean(scene, signals, &ImageSourceConfig::default())?;
    let clip = match scene.snr_db {
        Some(snr) => add_noise(&clip, snr, scene.seed)?,
        None => clip,
    };
    Ok((clip, taus))
}

/// Adds independent white Gaussian noise to each channel, scaled so that the
/// per-channel SNR equals `snr_db` exactly.
pub fn add_noise(clip: &StereoClip, snr_db: f64, seed: u64) -> Result<StereoClip> {
    ensure!(snr_db.is_finite(), InvalidArgument, "snr must be finite");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = |ch: &MonoClip, name: &str| -> Result<MonoClip> {
        let p_signal = ch.power();
        if p_signal <= 0.0 {
            return Err(Error::SilentClip(format!("{name} channel has zero power")));
        }
        let noise: Vec<f64> = (0..ch.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
        let scale = (p_signal / 10f64.powf(snr_db / 10.0) / p_noise).sqrt();
        Ok(MonoClip::from_trusted(
            ch.samples()
                .iter()
                .zip(&noise)
                .map(|(s, n)| s + scale * n)
                .collect(),
            ch.rate(),
        ))
    };
    let left = noisy(clip.left(), "left")?;
    let right = noisy(clip.right(), "right")?;
    StereoClip::new(left, right)
}

/// Rescales `distractor` to `intensity` times the RMS of `dominant` and adds it.
pub fn make_mixture(
    dominant: &StereoClip,
    distractor: &StereoClip,
    intensity: f64,
) -> Result<StereoClip> {
    ensure!(
        intensity > 0.0 && intensity.is_finite(),
        InvalidArgument,
        "mixture intensity must be positive, got {intensity}"
    );
    let dom_rms = dominant.rms();
    if dom_rms <= 0.0 {
        return Err(Error::SilentClip("dominant source is silent".into()));
    }
    let dis_rms = distractor.rms();
    if dis_rms <= 0.0 {
        return Err(Error::SilentClip("distractor is silent".into()));
    }
    let g = intensity * dom_rms / dis_rms;
    dominant.add(&distractor.scaled(g, g))
}
