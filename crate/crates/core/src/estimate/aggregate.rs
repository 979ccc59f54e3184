use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Default inlier radius for mode aggregation, in samples.
pub const DEFAULT_INLIER_THRESHOLD: f64 = 2.0;

/// How per-node votes are combined into one delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Aggregation {
    Mean,
    /// Most-voted 1-sample bin, then the mean of votes within `threshold`
    /// samples of it.
    Mode { threshold: f64 },
}

impl Default for Aggregation {
    fn default() -> Self {
        Aggregation::Mode {
            threshold: DEFAULT_INLIER_THRESHOLD,
        }
    }
}

impl Aggregation {
    pub fn mode() -> Self {
        Self::default()
    }

    pub fn id(&self) -> &'static str {
        match self {
            Aggregation::Mean => "mean",
            Aggregation::Mode { .. } => "mode",
        }
    }

    /// Parses `mean` or `mode` (default threshold).
    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "mean" => Some(Aggregation::Mean),
            "mode" => Some(Aggregation::mode()),
            _ => None,
        }
    }

    /// Aggregates votes given in samples. Returns the estimate (samples) and
    /// the inlier count for mode aggregation.
    pub fn apply(&self, votes: &[f64]) -> Result<(f64, Option<usize>)> {
        match *self {
            Aggregation::Mean => Ok((aggregate_mean(votes)?, None)),
            Aggregation::Mode { threshold } => {
                let (v, n) = aggregate_mode_ransac(votes, threshold)?;
                Ok((v, Some(n)))
            }
        }
    }
}

pub fn aggregate_mean(votes: &[f64]) -> Result<f64> {
    ensure!(!votes.is_empty(), InvalidArgument, "no votes to aggregate");
    Ok(votes.iter().sum::<f64>() / votes.len() as f64)
}

fn median(votes: &[f64]) -> f64 {
    let mut v = votes.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mode-then-inlier-mean over votes in samples.
///
/// Votes are binned by rounding to the nearest sample. The bin with most
/// votes wins; ties go to the bin closest to the vote median, then to the
/// smaller `|bin|`, then to the smaller signed bin. Returns the mean of the
/// votes within `threshold` of the winning bin and their count.
pub fn aggregate_mode_ransac(votes: &[f64], threshold: f64) -> Result<(f64, usize)> {
    let m = mode_ransac(votes, threshold)?;
    Ok((m.value, m.inliers))
}

/// Full result of mode aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeEstimate {
    pub value: f64,
    /// Center of the winning 1-sample bin.
    pub bin: i64,
    pub inliers: usize,
}

/// See [`aggregate_mode_ransac`].
pub fn mode_ransac(votes: &[f64], threshold: f64) -> Result<ModeEstimate> {
    ensure!(!votes.is_empty(), InvalidArgument, "no votes to aggregate");
    ensure!(
        threshold >= 0.0,
        InvalidArgument,
        "inlier threshold must be non-negative"
    );
    let mut bins: Vec<i64> = votes.iter().map(|v| v.round() as i64).collect();
    bins.sort_unstable();
    let med = median(votes);
    let mut best: Option<(usize, i64)> = None;
    let mut i = 0;
    while i < bins.len() {
        let b = bins[i];
        let j = bins[i..].iter().take_while(|&&x| x == b).count();
        let better = match best {
            None => true,
            Some((count, cur)) => {
                if j != count {
                    j > count
                } else {
                    let (db, dc) = ((b as f64 - med).abs(), (cur as f64 - med).abs());
                    if db != dc {
                        db < dc
                    } else if b.abs() != cur.abs() {
                        b.abs() < cur.abs()
                    } else {
                        b < cur
                    }
                }
            }
        };
        if better {
            best = Some((j, b));
        }
        i += j;
    }
    let bin = best.map(|(_, b)| b).unwrap_or(0);
    let center = bin as f64;
    let inliers: Vec<f64> = votes
        .iter()
        .copied()
        .filter(|v| (v - center).abs() <= threshold)
        .collect();
    // With a threshold below 0.5 a bin's own votes can all miss; fall back
    // to those votes so the estimate is always defined.
    let inliers = if inliers.is_empty() {
        votes.iter().copied().filter(|v| v.round() as i64 == bin).collect()
    } else {
        inliers
    };
    Ok(ModeEstimate {
        value: inliers.iter().sum::<f64>() / inliers.len() as f64,
        bin,
        inliers: inliers.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_examples() {
        assert_eq!(aggregate_mean(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(aggregate_mean(&[7.5]).unwrap(), 7.5);
        assert_eq!(aggregate_mean(&[-1.0, -2.0, -3.0]).unwrap(), -2.0);
        assert!(aggregate_mean(&[]).is_err());
    }

    #[test]
    fn mode_hand_example() {
        let (v, n) = aggregate_mode_ransac(&[5.0, 5.0, 5.0, 6.0, 20.0], 2.0).unwrap();
        assert_eq!(v, 5.25);
        assert_eq!(n, 4);
    }

    #[test]
    fn mode_identical_votes() {
        assert_eq!(aggregate_mode_ransac(&[3.0; 9], 2.0).unwrap(), (3.0, 9));
    }

    #[test]
    fn mode_symmetric_tie_goes_to_smaller_signed_bin() {
        let (v, n) = aggregate_mode_ransac(&[-3.0, -3.0, 3.0, 3.0], 2.0).unwrap();
        assert_eq!((v, n), (-3.0, 2));
    }

    #[test]
    fn mode_tie_prefers_bin_near_median() {
        // Bins 1 and 10 both have two votes; the median (4) is closer to 1.
        let (v, _) = aggregate_mode_ransac(&[1.0, 1.0, 4.0, 10.0, 10.0], 0.0).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn mode_tie_then_smaller_magnitude() {
        // Bins -2 and 4 tie on count and on distance to the median (1).
        let m = mode_ransac(&[-2.0, -2.0, 4.0, 4.0], 0.0).unwrap();
        assert_eq!((m.bin, m.value, m.inliers), (-2, -2.0, 2));
    }

    proptest! {
        #[test]
        fn aggregators_are_permutation_invariant(
            votes in prop::collection::vec(-20.0f64..20.0, 1..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = votes.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = aggregate_mode_ransac(&votes, 2.0).unwrap();
            let b = aggregate_mode_ransac(&shuffled, 2.0).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-9);
            prop_assert_eq!(a.1, b.1);
            let m1 = aggregate_mean(&votes).unwrap();
            let m2 = aggregate_mean(&shuffled).unwrap();
            prop_assert!((m1 - m2).abs() < 1e-9);
        }

        #[test]
        fn mode_estimate_stays_near_its_bin(
            votes in prop::collection::vec(-20.0f64..20.0, 1..40),
            threshold in 0.0f64..4.0,
        ) {
            let m = mode_ransac(&votes, threshold).unwrap();
            prop_assert!(m.inliers >= 1);
            prop_assert!((m.value - m.bin as f64).abs() <= threshold.max(0.5) + 1e-9);
        }
    }
}
