//! Running delay estimators over labeled clips and summarizing the errors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LabeledClip;
use crate::error::{Error, Result};
use crate::estimate::{estimate_delay, iid_direction, Aggregation, Direction, EstimatorConfig};
use crate::gcc::{classic_estimate, default_max_lag};
use crate::nn::ModelParams;
use crate::sim::SPEED_OF_SOUND;

pub const REPORT_SCHEMA: &str = "itd-eval-report/1";

/// GCC-PHAT voting settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GccConfig {
    pub votes: usize,
    pub window: usize,
    pub aggregation: Aggregation,
    /// `None` derives the lag range from the mic spacing.
    pub max_lag: Option<usize>,
}

impl Default for GccConfig {
    fn default() -> Self {
        Self {
            votes: 128,
            window: 1024,
            aggregation: Aggregation::Mean,
            max_lag: None,
        }
    }
}

/// A delay (or direction) predictor.
#[derive(Debug, Clone)]
pub enum Method {
    Gcc(GccConfig),
    Model(Box<ModelParams>, EstimatorConfig),
    /// Louder channel; predicts a direction only.
    Iid,
    /// Uniform delay within the physically possible range.
    Random { seed: u64 },
}

impl Method {
    pub fn id(&self) -> &'static str {
        match self {
            Method::Gcc(_) => "gcc",
            Method::Model(..) => "model",
            Method::Iid => "iid",
            Method::Random { .. } => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub delay_s: Option<f64>,
    pub direction: Direction,
}

pub fn predict(method: &Method, item: &LabeledClip, index: usize) -> Result<Prediction> {
    let spacing = item.record.mic_spacing();
    let rate = item.clip.rate();
    let delay = match method {
        Method::Gcc(cfg) => {
            let max_lag = cfg.max_lag.unwrap_or_else(|| default_max_lag(Some(spacing), SPEED_OF_SOUND, rate));
            classic_estimate(&item.clip, cfg.votes, cfg.window, max_lag, cfg.aggregation)?.delay_s
        }
        Method::Model(params, cfg) => estimate_delay(params, &item.clip, cfg, Some(spacing))?.delay_s,
        Method::Iid => {
            return Ok(Prediction {
                delay_s: None,
                direction: iid_direction(&item.clip)?,
            })
        }
        Method::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            rng.set_stream(index as u64);
            let bound = spacing / SPEED_OF_SOUND;
            rng.random_range(-bound..=bound)
        }
    };
    Ok(Prediction {
        delay_s: Some(delay),
        direction: Direction::of_delay(delay),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub clip_id: String,
    pub truth_ms: f64,
    pub pred_ms: Option<f64>,
    pub abs_err_ms: Option<f64>,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    /// Absent for direction-only methods.
    pub mae_ms: Option<f64>,
    pub rmse_ms: Option<f64>,
    /// Over clips at least one sample off center; absent when there are none.
    pub lr_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub rows: Vec<EvalRow>,
    pub summary: Summary,
}

/// Summary statistics of per-clip rows. `rates` gives each clip's sample
/// rate for the one-sample center dead zone.
pub fn summarize(rows: &[EvalRow], rates: &[u32]) -> Summary {
    let errs: Vec<f64> = rows.iter().filter_map(|r| r.abs_err_ms).collect();
    let (mae, rmse) = if errs.is_empty() || errs.len() != rows.len() {
        (None, None)
    } else {
        let n = errs.len() as f64;
        (
            Some(errs.iter().sum::<f64>() / n),
            Some((errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt()),
        )
    };
    let mut hits = 0usize;
    let mut total = 0usize;
    for (r, &rate) in rows.iter().zip(rates) {
        let sample_ms = 1e3 / rate as f64;
        if r.truth_ms.abs() < sample_ms {
            continue;
        }
        total += 1;
        if r.direction == Direction::of_delay(r.truth_ms) {
            hits += 1;
        }
    }
    Summary {
        n: rows.len(),
        mae_ms: mae,
        rmse_ms: rmse,
        lr_accuracy: (total > 0).then(|| hits as f64 / total as f64),
    }
}

/// Runs `method` on every clip, in order.
pub fn evaluate(method: &Method, data: &[LabeledClip]) -> Result<EvalReport> {
    let preds = data
        .par_iter()
        .enumerate()
        .map(|(i, item)| predict(method, item, i))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<EvalRow> = data
        .iter()
        .zip(preds)
        .map(|(item, p)| {
            let truth_ms = item.record.tdoa_ms;
            let pred_ms = p.delay_s.map(|d| d * 1e3);
            EvalRow {
                clip_id: item.record.id.clone(),
                truth_ms,
                pred_ms,
                abs_err_ms: pred_ms.map(|p| (p - truth_ms).abs()),
                direction: p.direction,
            }
        })
        .collect();
    let rates: Vec<u32> = data.iter().map(|d| d.clip.rate()).collect();
    Ok(EvalReport {
        method: method.id().to_string(),
        summary: summarize(&rows, &rates),
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl EvalReport {
    /// Per-clip CSV with a commented header and summary footer.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# schema={REPORT_SCHEMA}").unwrap();
        writeln!(s, "# method={}", self.method).unwrap();
        writeln!(s, "clip_id,truth_ms,pred_ms,abs_err_ms").unwrap();
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", r.clip_id, r.truth_ms, opt(r.pred_ms), opt(r.abs_err_ms)).unwrap();
        }
        writeln!(s, "# summary").unwrap();
        writeln!(s, "# n={}", self.summary.n).unwrap();
        writeln!(s, "# mae_ms={}", opt(self.summary.mae_ms)).unwrap();
        writeln!(s, "# rmse_ms={}", opt(self.summary.rmse_ms)).unwrap();
        writeln!(s, "# lr_accuracy={}", opt(self.summary.lr_accuracy)).unwrap();
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
