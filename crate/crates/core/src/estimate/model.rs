use serde::{Deserialize, Serialize};

use super::{vote_delays, Aggregation, DelayEstimate, VoteMode};
use crate::audio::StereoClip;
use crate::error::{ensure, Result};
use crate::gcc::default_max_lag;
use crate::losses::{affinity, DEFAULT_TEMPERATURE};
use crate::nn::{embed_sequence, ModelParams};
use crate::sim::SPEED_OF_SOUND;

/// Settings for delay estimation with a learned embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub window: usize,
    /// Node spacing in samples; 1 gives the densest graph.
    pub step: usize,
    pub vote_mode: VoteMode,
    pub aggregation: Aggregation,
    pub temperature: f64,
    /// Largest admissible delay in seconds. `None` uses the mic spacing
    /// bound (or the default lag range when the spacing is unknown).
    pub max_delay_s: Option<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            window: 1024,
            step: 1,
            vote_mode: VoteMode::Expectation,
            aggregation: Aggregation::default(),
            temperature: DEFAULT_TEMPERATURE,
            max_delay_s: None,
        }
    }
}

impl EstimatorConfig {
    pub fn max_delay(&self, mic_spacing: Option<f64>, rate: u32) -> f64 {
        self.max_delay_s
            .unwrap_or_else(|| default_max_lag(mic_spacing, SPEED_OF_SOUND, rate) as f64 / rate as f64)
    }
}

/// Embeds both channels, builds the right-to-left affinity and aggregates
/// one vote per right-channel node.
pub fn estimate_delay(
    params: &ModelParams,
    clip: &StereoClip,
    cfg: &EstimatorConfig,
    mic_spacing: Option<f64>,
) -> Result<DelayEstimate> {
    ensure!(
        clip.len() >= cfg.window,
        InvalidArgument,
        "clip of {} samples is shorter than the {}-sample window",
        clip.len(),
        cfg.window
    );
    let right = embed_sequence(params, clip.right(), cfg.window, cfg.step)?;
    let left = embed_sequence(params, clip.left(), cfg.window, cfg.step)?;
    let a = affinity(&right.vectors, &left.vectors, cfg.temperature)?;
    let votes = vote_delays(
        &a.values,
        cfg.step,
        clip.rate(),
        cfg.vote_mode,
        cfg.max_delay(mic_spacing, clip.rate()),
    )?;
    DelayEstimate::from_votes(votes, clip.rate(), cfg.aggregation)
}
