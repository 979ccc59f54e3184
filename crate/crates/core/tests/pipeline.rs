use itd_core::audio::StereoClip;
use itd_core::augment::{channel_swap, shift_clip, time_shift};
use itd_core::estimate::{estimate_delay, Aggregation, EstimatorConfig};
use itd_core::gcc::classic_estimate;
use itd_core::harness::{evaluate, gen_dataset, load_dataset, simulate_dataset, Condition, DatasetSpec, GccConfig, Method};
use itd_core::nn::{init_model, load_checkpoint, load_checkpoint_for, save_checkpoint, ArchConfig};
use itd_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn small_spec(seed: u64) -> DatasetSpec {
    DatasetSpec {
        conditions: vec![Condition::new(None, 0.0)],
        count: 4,
        seed,
        ..Default::default()
    }
}

#[test]
fn simulated_scenes_survive_disk_and_gcc_tracks_them() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(11);
    let records = gen_dataset(&spec, dir.path()).unwrap();
    assert_eq!(records.len(), spec.len());

    let loaded = load_dataset(dir.path()).unwrap();
    let direct = simulate_dataset(&spec).unwrap();
    assert_eq!(loaded.len(), direct.len());
    for (a, b) in loaded.iter().zip(&direct) {
        assert_eq!(a.record, b.record);
        // float-32 storage
        for (x, y) in a.clip.left().samples().iter().zip(b.clip.left().samples()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    let report = evaluate(&Method::Gcc(GccConfig::default()), &loaded).unwrap();
    let mae = report.summary.mae_ms.unwrap();
    assert!(mae < 0.1, "anechoic, noiseless GCC MAE {mae} ms");
    assert!(mae <= report.summary.rmse_ms.unwrap() + 1e-12);
}

#[test]
fn checkpoint_round_trip_gives_identical_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let params = init_model(&ArchConfig::desk(), 5).unwrap();
    save_checkpoint(&params, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, params);

    let clip = StereoClip::from_samples(noise(1600, 1), noise(1600, 2), 16000).unwrap();
    let cfg = EstimatorConfig {
        step: 16,
        ..Default::default()
    };
    let a = estimate_delay(&params, &clip, &cfg, Some(0.3)).unwrap();
    let b = estimate_delay(&back, &clip, &cfg, Some(0.3)).unwrap();
    assert_eq!(a, b);

    let other = ArchConfig {
        embed_dim: params.arch().embed_dim * 2,
        ..params.arch().clone()
    };
    assert!(matches!(load_checkpoint_for(&path, &other), Err(Error::ArchMismatch { .. })));
}

#[test]
fn model_accepts_longer_inputs_than_training_clips() {
    let params = init_model(&ArchConfig::desk(), 1).unwrap();
    let clip = StereoClip::from_samples(noise(8000, 3), noise(8000, 4), 16000).unwrap();
    let cfg = EstimatorConfig {
        step: 64,
        ..Default::default()
    };
    let est = estimate_delay(&params, &clip, &cfg, None).unwrap();
    assert!(est.delay_ms().is_finite());
    assert_eq!(est.votes.len(), (8000 - 1024) / 64);
}

#[test]
fn swap_record_matches_the_estimated_delay() {
    let base = noise(1220, 9);
    let right = base.clone();
    let left = shift_clip(&StereoClip::from_samples(base.clone(), base, 16000).unwrap(), 6)
        .left()
        .samples()
        .to_vec();
    let clip = StereoClip::from_samples(left, right, 16000).unwrap();
    let truth = 6.0 / 16000.0;
    let est = classic_estimate(&clip, 32, 1024, 20, Aggregation::Mode { threshold: 2.0 }).unwrap();
    assert!((est.delay_s - truth).abs() < 1e-9);

    for seed in 0..8 {
        let (aug, rec) = channel_swap(&clip, 0.5, seed);
        let e = classic_estimate(&aug, 32, 1024, 20, Aggregation::Mode { threshold: 2.0 }).unwrap();
        assert!((e.delay_s - rec.transform_tdoa(truth)).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn time_shift_preserves_energy_and_respects_bounds(seed in 0u64..1000, bound in 0usize..200, g in 1usize..9) {
        let clip = StereoClip::from_samples(noise(300, seed), noise(300, seed + 1), 16000).unwrap();
        let (aug, rec) = time_shift(&clip, bound, g, seed);
        prop_assert!(rec.shift_samples.unsigned_abs() as usize <= bound);
        prop_assert_eq!(rec.shift_samples % g as i64, 0);
        prop_assert!((aug.power() - clip.power()).abs() < 1e-12);
        prop_assert_eq!(shift_clip(&aug, -rec.shift_samples), clip);
    }

    #[test]
    fn gcc_is_antisymmetric_under_channel_swap(seed in 0u64..1000, lag in -12i64..=12) {
        let base = noise(1100, seed);
        let mono = StereoClip::from_samples(base.clone(), base.clone(), 16000).unwrap();
        let left = shift_clip(&mono, lag).left().samples().to_vec();
        let clip = StereoClip::from_samples(left, base, 16000).unwrap();
        let a = classic_estimate(&clip, 8, 1024, 20, Aggregation::Mean).unwrap();
        let b = classic_estimate(&clip.swapped(), 8, 1024, 20, Aggregation::Mean).unwrap();
        prop_assert!((a.delay_s + b.delay_s).abs() < 1e-12);
    }
}
