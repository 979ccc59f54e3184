//! Robustness sweeps over one recording condition.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, simulate_dataset, Condition, DatasetSpec, Method};
use crate::error::{ensure, Error, Result};

pub const SWEEP_SCHEMA: &str = "itd-sweep/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Snr,
    Rt60,
    Mixture,
}

impl SweepAxis {
    pub fn id(self) -> &'static str {
        match self {
            SweepAxis::Snr => "snr",
            SweepAxis::Rt60 => "rt60",
            SweepAxis::Mixture => "mixture",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "snr" => Ok(SweepAxis::Snr),
            "rt60" => Ok(SweepAxis::Rt60),
            "mixture" => Ok(SweepAxis::Mixture),
            _ => Err(Error::InvalidArgument(format!("unknown sweep axis `{id}` (snr, rt60, mixture)"))),
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Snr => vec![-5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
            SweepAxis::Rt60 => vec![0.1, 0.3, 0.5, 0.7, 0.9],
            SweepAxis::Mixture => vec![0.1, 0.3, 0.5, 0.7, 0.9],
        }
    }

    /// Grid cell for one value, with the other conditions held at the
    /// protocol's fixed levels: noise sweeps at RT60 0.1 s, reverberation
    /// sweeps at 30 dB SNR, mixtures at 30 dB and RT60 0.1 s.
    pub fn condition(self, value: f64) -> Condition {
        match self {
            SweepAxis::Snr => Condition::new(Some(value), 0.1),
            SweepAxis::Rt60 => Condition::new(Some(30.0), value),
            SweepAxis::Mixture => Condition {
                snr_db: Some(30.0),
                rt60: 0.1,
                mixture_intensity: Some(value),
            },
        }
    }

    /// Clip length used by the protocol: half a second for mixtures.
    pub fn clip_len(self, rate: u32, base: usize) -> usize {
        match self {
            SweepAxis::Mixture => rate as usize / 2,
            _ => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: String,
    pub axis: SweepAxis,
    pub value: f64,
    pub n: usize,
    pub mae_ms: Option<f64>,
    pub rmse_ms: Option<f64>,
    pub lr_accuracy: Option<f64>,
}

/// Simulates one dataset per axis value (from `base`, with the condition
/// and clip length replaced) and evaluates every method on it.
pub fn sweep(axis: SweepAxis, values: &[f64], methods: &[Method], base: &DatasetSpec) -> Result<Vec<SweepRow>> {
    ensure!(!values.is_empty(), InvalidArgument, "sweep needs at least one value");
    ensure!(!methods.is_empty(), InvalidArgument, "sweep needs at least one method");
    let mut rows = Vec::with_capacity(values.len() * methods.len());
    for &value in values {
        let spec = DatasetSpec {
            conditions: vec![axis.condition(value)],
            clip_len: axis.clip_len(base.rate, base.clip_len),
            ..base.clone()
        };
        let data = simulate_dataset(&spec)?;
        for m in methods {
            let s = evaluate(m, &data)?.summary;
            rows.push(SweepRow {
                method: m.id().to_string(),
                axis,
                value,
                n: s.n,
                mae_ms: s.mae_ms,
                rmse_ms: s.rmse_ms,
                lr_accuracy: s.lr_accuracy,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut s = format!("# schema={SWEEP_SCHEMA}\nmethod,axis,value,n,mae_ms,rmse_ms,lr_accuracy\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.method,
            r.axis.id(),
            r.value,
            r.n,
            opt(r.mae_ms),
            opt(r.rmse_ms),
            opt(r.lr_accuracy)
        )
        .unwrap();
    }
    s
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, sweep_csv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::GccConfig;
    use crate::sim::RoomPreset;

    fn base() -> DatasetSpec {
        DatasetSpec {
            rooms: vec![RoomPreset::Room1],
            count: 3,
            seed: 2,
            ..Default::default()
        }
    }

    #[test]
    fn row_counts_and_single_condition() {
        let methods = [Method::Gcc(GccConfig::default()), Method::Random { seed: 0 }];
        let rows = sweep(SweepAxis::Snr, &[0.0, 10.0, 20.0, 30.0, 40.0], &methods, &base()).unwrap();
        assert_eq!(rows.len(), 10);

        let single = sweep(SweepAxis::Snr, &[10.0], &methods[..1], &base()).unwrap();
        let spec = DatasetSpec {
            conditions: vec![SweepAxis::Snr.condition(10.0)],
            ..base()
        };
        let direct = evaluate(&methods[0], &simulate_dataset(&spec).unwrap()).unwrap().summary;
        assert_eq!(single[0].mae_ms, direct.mae_ms);
        assert_eq!(single[0].rmse_ms, direct.rmse_ms);
        assert!(sweep_csv(&rows).lines().nth(1).unwrap().starts_with("method,axis"));
    }

    #[test]
    fn axis_ids_and_errors() {
        assert_eq!(SweepAxis::from_id("rt60").unwrap(), SweepAxis::Rt60);
        assert!(SweepAxis::from_id("wind").is_err());
        assert_eq!(SweepAxis::Mixture.clip_len(16000, 1220), 8000);
        assert!(sweep(SweepAxis::Snr, &[], &[Method::Iid], &base()).is_err());
    }
}
