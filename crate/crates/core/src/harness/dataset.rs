//! Simulated datasets: scene sampling, rendering, manifests and WAV corpora.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, save_stereo, Audio, StereoClip, WavEncoding};
use crate::error::{ensure, Error, Result};
use crate::sim::{
    add_noise, ground_truth_tdoa, make_mixture, render_clean, synth_source, ImageSourceConfig, RoomPreset, Scene,
    SourceKind, SourceSpec,
};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Recording conditions of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    /// `None` renders without additive noise.
    pub snr_db: Option<f64>,
    pub rt60: f64,
    /// Adds a second, quieter source at this RMS ratio to the first.
    #[serde(default)]
    pub mixture_intensity: Option<f64>,
}

impl Condition {
    pub fn new(snr_db: Option<f64>, rt60: f64) -> Self {
        Self {
            snr_db,
            rt60,
            mixture_intensity: None,
        }
    }
}

/// Grid of rooms x conditions, `count` scenes per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub rooms: Vec<RoomPreset>,
    pub conditions: Vec<Condition>,
    pub count: usize,
    /// Samples per clip.
    pub clip_len: usize,
    pub rate: u32,
    pub source: SourceKind,
    /// Stereo RMS every clip is normalized to; `None` keeps the rendered level.
    pub level_rms: Option<f64>,
    pub angle_range_deg: (f64, f64),
    pub distance_range_m: (f64, f64),
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            rooms: RoomPreset::ALL.to_vec(),
            conditions: vec![Condition::new(Some(10.0), 0.5)],
            count: 100,
            clip_len: 1220,
            rate: 16000,
            source: SourceKind::SpeechLike,
            level_rms: Some(0.1),
            angle_range_deg: (-90.0, 90.0),
            distance_range_m: (0.5, 3.0),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.rooms.is_empty(), Config, "dataset needs at least one room");
        ensure!(!self.conditions.is_empty(), Config, "dataset needs at least one condition");
        ensure!(self.clip_len > 0 && self.rate > 0, Config, "clip length and rate must be positive");
        for c in &self.conditions {
            ensure!(c.rt60 >= 0.0 && c.rt60.is_finite(), Config, "rt60 {} is invalid", c.rt60);
            if let Some(i) = c.mixture_intensity {
                ensure!(i > 0.0 && i <= 1.0, Config, "mixture intensity {i} is outside (0, 1]");
            }
        }
        let (a0, a1) = self.angle_range_deg;
        ensure!(-90.0 <= a0 && a0 <= a1 && a1 <= 90.0, Config, "angle range must lie in [-90, 90]");
        let (d0, d1) = self.distance_range_m;
        ensure!(0.0 < d0 && d0 <= d1, Config, "distance range must be positive");
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rooms.len() * self.conditions.len() * self.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One line of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    /// WAV path relative to the manifest.
    pub file: String,
    pub room: RoomPreset,
    pub rt60: f64,
    pub snr_db: Option<f64>,
    /// The first source is the labeled one; any other is a distractor.
    pub sources: Vec<SourceSpec>,
    pub mixture_intensity: Option<f64>,
    pub source_kind: SourceKind,
    pub seed: u64,
    pub rate: u32,
    pub len: usize,
    pub tdoa_ms: f64,
}

impl ManifestRecord {
    pub fn mic_spacing(&self) -> f64 {
        self.room.config(self.rt60).mic_spacing()
    }
}

/// A clip with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub record: ManifestRecord,
    pub clip: StereoClip,
}

impl LabeledClip {
    pub fn id(&self) -> &str {
        &self.record.id
    }

    pub fn tdoa_s(&self) -> f64 {
        self.record.tdoa_ms / 1e3
    }
}

fn sample_source(rng: &mut ChaCha8Rng, spec: &DatasetSpec, room: &crate::sim::RoomConfig) -> Result<SourceSpec> {
    let (a0, a1) = spec.angle_range_deg;
    let (d0, d1) = spec.distance_range_m;
    for _ in 0..1000 {
        let s = SourceSpec::new(rng.random_range(a0..=a1), rng.random_range(d0..=d1));
        if room.strictly_inside(s.position(room)) {
            return Ok(s);
        }
    }
    Err(Error::Geometry("no source position inside the room after 1000 draws".into()))
}

/// Renders scene `index` of the grid; depends only on `(spec, index)`.
pub fn render_item(spec: &DatasetSpec, index: usize) -> Result<LabeledClip> {
    let per_room = spec.conditions.len() * spec.count;
    let preset = spec.rooms[index / per_room];
    let cond = &spec.conditions[(index % per_room) / spec.count];
    let room = preset.config(cond.rt60);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let scene_seed: u64 = rng.random();

    let mut sources = vec![sample_source(&mut rng, spec, &room)?];
    if cond.mixture_intensity.is_some() {
        sources.push(sample_source(&mut rng, spec, &room)?);
    }
    // Lead-in so the direct sound and early reflections fill the clip.
    let lead = 1024;
    let n = spec.clip_len + lead;
    let cfg = ImageSourceConfig::default();
    let mut rendered = Vec::with_capacity(sources.len());
    for s in &sources {
        let signal = synth_source(spec.source, n, spec.rate, &mut rng);
        let scene = Scene {
            room: room.clone(),
            sources: vec![s.clone()],
            snr_db: None,
            seed: 0,
        };
        let (clip, _) = render_clean(&scene, &[signal], &cfg)?;
        rendered.push(clip.slice(lead, spec.clip_len)?);
    }
    let mut clip = rendered[0].clone();
    if let Some(intensity) = cond.mixture_intensity {
        clip = make_mixture(&clip, &rendered[1], intensity)?;
        // Record the distractor's effective gain relative to the dominant.
        let g = intensity * rendered[0].rms() / rendered[1].rms();
        sources[1].gain = g;
    }
    if let Some(snr) = cond.snr_db {
        clip = add_noise(&clip, snr, scene_seed)?;
    }
    if let Some(level) = spec.level_rms {
        let g = level / clip.rms();
        clip = clip.scaled(g, g);
    }
    let tdoa = ground_truth_tdoa(&room, &sources[0])?;
    let id = format!("{index:06}");
    Ok(LabeledClip {
        record: ManifestRecord {
            file: format!("{id}.wav"),
            id,
            room: preset,
            rt60: cond.rt60,
            snr_db: cond.snr_db,
            sources,
            mixture_intensity: cond.mixture_intensity,
            source_kind: spec.source,
            seed: scene_seed,
            rate: spec.rate,
            len: spec.clip_len,
            tdoa_ms: tdoa * 1e3,
        },
        clip,
    })
}

/// Renders the whole grid in memory, in id order.
pub fn simulate_dataset(spec: &DatasetSpec) -> Result<Vec<LabeledClip>> {
    spec.validate()?;
    (0..spec.len()).into_par_iter().map(|i| render_item(spec, i)).collect()
}

/// Renders the grid to `out_dir`: one float WAV per scene plus `manifest.jsonl`.
pub fn gen_dataset(spec: &DatasetSpec, out_dir: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let items = simulate_dataset(spec)?;
    items
        .par_iter()
        .map(|item| save_stereo(&item.clip, out.join(&item.record.file), WavEncoding::Float32))
        .collect::<Result<Vec<()>>>()?;
    let records: Vec<ManifestRecord> = items.into_iter().map(|i| i.record).collect();
    write_manifest(&records, out.join(MANIFEST_FILE))?;
    Ok(records)
}

pub fn write_manifest(records: &[ManifestRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Accepts a manifest file or a directory containing one.
pub fn manifest_path(path: impl AsRef<Path>) -> PathBuf {
    let p = path.as_ref();
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = manifest_path(path);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| Error::format(&path, format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(records)
}

/// Loads every clip listed in a manifest.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<LabeledClip>> {
    let mpath = manifest_path(path);
    let root = mpath.parent().map(Path::to_path_buf).unwrap_or_default();
    read_manifest(&mpath)?
        .into_par_iter()
        .map(|record| {
            let wav = root.join(&record.file);
            let clip = load_stereo(&wav)?;
            if clip.rate() != record.rate || clip.len() != record.len {
                return Err(Error::format(
                    &wav,
                    format!(
                        "manifest says {} samples at {} Hz, file has {} at {}",
                        record.len,
                        record.rate,
                        clip.len(),
                        clip.rate()
                    ),
                ));
            }
            Ok(LabeledClip { record, clip })
        })
        .collect()
}

pub fn load_stereo(path: impl AsRef<Path>) -> Result<StereoClip> {
    let path = path.as_ref();
    match load_wav(path)? {
        Audio::Stereo(s) => Ok(s),
        Audio::Mono(_) => Err(Error::format(path, "expected a 2-channel file")),
    }
}

/// Unlabeled training audio: the clips of a manifest, or every stereo WAV in
/// a directory (sorted by file name).
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<StereoClip>> {
    let path = path.as_ref();
    if manifest_path(path).is_file() {
        return Ok(load_dataset(path)?.into_iter().map(|c| c.clip).collect());
    }
    ensure!(path.is_dir(), InvalidArgument, "{} is neither a manifest nor a directory", path.display());
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    ensure!(!files.is_empty(), InvalidArgument, "no WAV files in {}", path.display());
    files.par_iter().map(load_stereo).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(count: usize) -> DatasetSpec {
        DatasetSpec {
            conditions: vec![Condition::new(Some(20.0), 0.1)],
            count,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn grid_counts_and_determinism() {
        assert!(simulate_dataset(&small(0)).unwrap().is_empty());
        let a = simulate_dataset(&small(2)).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, simulate_dataset(&small(2)).unwrap());
        assert_eq!(a[0].record.room, RoomPreset::Room1);
        assert_eq!(a[5].record.room, RoomPreset::Room3);
        for c in &a {
            assert!((c.clip.rms() - 0.1).abs() < 1e-12);
            assert!(c.tdoa_s().abs() <= c.record.mic_spacing() / 343.0 + 1e-12);
        }
        let mut other = small(2);
        other.seed = 6;
        assert_ne!(a[0].clip, simulate_dataset(&other).unwrap()[0].clip);
    }

    #[test]
    fn mixture_scenes_record_the_distractor() {
        let spec = DatasetSpec {
            rooms: vec![RoomPreset::Room1],
            conditions: vec![Condition {
                snr_db: Some(30.0),
                rt60: 0.1,
                mixture_intensity: Some(0.5),
            }],
            count: 1,
            ..Default::default()
        };
        let item = simulate_dataset(&spec).unwrap().remove(0);
        assert_eq!(item.record.sources.len(), 2);
        assert_eq!(item.record.mixture_intensity, Some(0.5));
    }

    #[test]
    fn manifest_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let records = gen_dataset(&small(1), dir.path()).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), records);
        let loaded = load_dataset(dir.path()).unwrap();
        let memory = simulate_dataset(&small(1)).unwrap();
        for (l, m) in loaded.iter().zip(&memory) {
            assert_eq!(l.record, m.record);
            for (a, b) in l.clip.left().samples().iter().zip(m.clip.left().samples()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        assert_eq!(load_corpus(dir.path()).unwrap().len(), 3);
        let bytes = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        let again = tempfile::tempdir().unwrap();
        gen_dataset(&small(1), again.path()).unwrap();
        assert_eq!(bytes, fs::read(again.path().join(MANIFEST_FILE)).unwrap());
        assert_eq!(
            fs::read(dir.path().join("000002.wav")).unwrap(),
            fs::read(again.path().join("000002.wav")).unwrap()
        );
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut s = small(1);
        s.rooms.clear();
        assert!(simulate_dataset(&s).is_err());
        let mut s = small(1);
        s.conditions[0].mixture_intensity = Some(1.5);
        assert!(s.validate().is_err());
        assert!(read_manifest("/nonexistent/manifest.jsonl").is_err());
    }
}
