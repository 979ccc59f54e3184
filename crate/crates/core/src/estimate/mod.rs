//! Turning affinities or correlation curves into a single delay.

mod aggregate;
mod model;

pub use aggregate::{
    aggregate_mean, aggregate_mode_ransac, mode_ransac, Aggregation, ModeEstimate,
    DEFAULT_INLIER_THRESHOLD,
};
pub use model::{estimate_delay, EstimatorConfig};

use serde::{Deserialize, Serialize};

use crate::audio::StereoClip;
use crate::error::{ensure, Error, Result};
use crate::mat::Mat;
use crate::sim::SPEED_OF_SOUND;

/// How a row of the affinity matrix becomes a vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    /// Most probable candidate delay.
    Argmax,
    /// Probability-weighted mean delay over the admissible candidates.
    #[default]
    Expectation,
}

impl VoteMode {
    pub fn id(&self) -> &'static str {
        match self {
            VoteMode::Argmax => "argmax",
            VoteMode::Expectation => "expectation",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "argmax" => Some(VoteMode::Argmax),
            "expectation" => Some(VoteMode::Expectation),
            _ => None,
        }
    }
}

/// One vote per row of `affinity`, in seconds.
///
/// Row `s` and column `t` are nodes of the two channels spaced `step`
/// samples apart, so entry `(s, t)` stands for the delay `(t - s) * step / rate`.
/// Estimation uses rows for the right channel and columns for the left, which
/// makes positive delays mean the right microphone leads. Only candidates
/// with `|delay| <= max_delay` take part.
pub fn vote_delays(
    affinity: &Mat,
    step: usize,
    rate: u32,
    mode: VoteMode,
    max_delay: f64,
) -> Result<Vec<f64>> {
    ensure!(step >= 1, InvalidArgument, "node step must be at least 1");
    ensure!(rate > 0, InvalidArgument, "sample rate must be positive");
    let unit = step as f64 / rate as f64;
    // Largest admissible node offset; the small slack absorbs rounding in
    // max_delay values computed from sample counts.
    let reach = (max_delay / unit + 1e-9).floor();
    ensure!(
        reach >= 0.0,
        InvalidArgument,
        "max delay must be non-negative"
    );
    let reach = reach.min(affinity.cols() as f64) as i64;
    (0..affinity.rows())
        .map(|s| {
            let row = affinity.row(s);
            let lo = (s as i64 - reach).max(0) as usize;
            let hi = ((s as i64 + reach) as usize).min(affinity.cols().saturating_sub(1));
            if lo > hi || lo >= affinity.cols() {
                return Err(Error::InvalidArgument(format!(
                    "max delay {max_delay} s leaves node {s} without candidates"
                )));
            }
            let tau = |t: usize| (t as f64 - s as f64) * unit;
            match mode {
                VoteMode::Argmax => {
                    let mut best = lo;
                    for t in lo..=hi {
                        if row[t] > row[best] {
                            best = t;
                        }
                    }
                    Ok(tau(best))
                }
                VoteMode::Expectation => {
                    let mass: f64 = row[lo..=hi].iter().sum();
                    ensure!(
                        mass > 0.0,
                        InvalidArgument,
                        "node {s} has no probability mass within {max_delay} s"
                    );
                    Ok((lo..=hi).map(|t| tau(t) * row[t]).sum::<f64>() / mass)
                }
            }
        })
        .collect()
}

/// A single delay estimate with its supporting votes.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayEstimate {
    pub delay_s: f64,
    /// Per-node votes in seconds.
    pub votes: Vec<f64>,
    /// Aggregation id (`mean` or `mode`).
    pub method: String,
    pub inlier_count: Option<usize>,
    pub angle_deg: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct DelayEstimateRecord {
    delay_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    angle_deg: Option<f64>,
    method: String,
    n_votes: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    inlier_count: Option<usize>,
}

impl DelayEstimate {
    /// Aggregates votes given in seconds.
    pub fn from_votes(votes: Vec<f64>, rate: u32, agg: Aggregation) -> Result<Self> {
        ensure!(!votes.is_empty(), InvalidArgument, "no votes to aggregate");
        let fs = rate as f64;
        let in_samples: Vec<f64> = votes.iter().map(|v| v * fs).collect();
        let (delay, inlier_count) = agg.apply(&in_samples)?;
        Ok(Self {
            delay_s: delay / fs,
            votes,
            method: agg.id().to_string(),
            inlier_count,
            angle_deg: None,
        })
    }

    pub fn delay_ms(&self) -> f64 {
        self.delay_s * 1e3
    }

    pub fn with_angle(mut self, mic_distance: f64, speed_of_sound: f64) -> Self {
        self.angle_deg = Some(delay_to_angle(self.delay_s, mic_distance, speed_of_sound));
        self
    }

    /// Structured record `{delay_ms, angle_deg?, method, n_votes, inlier_count?}`.
    pub fn to_json(&self) -> String {
        let rec = DelayEstimateRecord {
            delay_ms: self.delay_ms(),
            angle_deg: self.angle_deg,
            method: self.method.clone(),
            n_votes: self.votes.len(),
            inlier_count: self.inlier_count,
        };
        serde_json::to_string_pretty(&rec).expect("plain record serializes")
    }
}

/// Far-field direction in degrees, positive towards the right microphone.
/// Path differences longer than the mic spacing are clamped to +-90 degrees.
pub fn delay_to_angle(delay_s: f64, mic_distance: f64, speed_of_sound: f64) -> f64 {
    let ratio = delay_s * speed_of_sound / mic_distance;
    if ratio.abs() > 1.0 {
        log::warn!("delay {delay_s} s exceeds the {mic_distance} m mic spacing; clamping");
    }
    ratio.clamp(-1.0, 1.0).asin().to_degrees()
}

/// Convenience wrapper with the default speed of sound.
pub fn delay_to_angle_default(delay_s: f64, mic_distance: f64) -> f64 {
    delay_to_angle(delay_s, mic_distance, SPEED_OF_SOUND)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    /// Direction implied by a delay under the project sign convention.
    pub fn of_delay(delay: f64) -> Self {
        if delay < 0.0 {
            Direction::Left
        } else {
            Direction::Right
        }
    }
}

/// Interaural intensity baseline: the louder channel wins, exact ties go right.
pub fn iid_direction(clip: &StereoClip) -> Result<Direction> {
    let (l, r) = (clip.left().rms(), clip.right().rms());
    if l == 0.0 && r == 0.0 {
        return Err(Error::SilentClip("both channels are silent".into()));
    }
    Ok(if l > r { Direction::Left } else { Direction::Right })
}
