//! RIFF/WAV reading and writing (PCM-16 and IEEE float-32).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{Audio, MonoClip, StereoClip};
use crate::error::{Error, Result};

/// On-disk sample encoding for [`save_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    #[default]
    Pcm16,
    Float32,
}

const PCM16_SCALE: f64 = 32768.0;

fn hound_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| hound_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(Error::UnsupportedEncoding(format!(
            "{} channels in {}",
            channels,
            path.display()
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| hound_err(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| hound_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{bits}-bit {fmt:?} in {}",
                path.display()
            )))
        }
    };
    if interleaved.is_empty() {
        return Err(Error::format(path, "zero-length audio"));
    }
    if interleaved.iter().any(|s| !s.is_finite()) {
        return Err(Error::format(path, "non-finite samples"));
    }
    let rate = spec.sample_rate;
    if channels == 1 {
        return Ok(Audio::Mono(MonoClip::new(interleaved, rate)?));
    }
    let left = interleaved.iter().step_by(2).copied().collect();
    let right = interleaved.iter().skip(1).step_by(2).copied().collect();
    Ok(Audio::Stereo(StereoClip::from_samples(left, right, rate)?))
}

fn write_channels(path: &Path, channels: &[&MonoClip], encoding: WavEncoding) -> Result<()> {
    let rate = channels[0].rate();
    let spec = match encoding {
        WavEncoding::Pcm16 => WavSpec {
            channels: channels.len() as u16,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        WavEncoding::Float32 => WavSpec {
            channels: channels.len() as u16,
            sample_rate: rate,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| hound_err(path, e))?;
    for i in 0..channels[0].len() {
        for ch in channels {
            let v = ch.samples()[i];
            let res = match encoding {
                WavEncoding::Pcm16 => {
                    let q = (v * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)
                }
                WavEncoding::Float32 => writer.write_sample(v as f32),
            };
            res.map_err(|e| hound_err(path, e))?;
        }
    }
    writer.finalize().map_err(|e| hound_err(path, e))
}

pub fn save_wav(audio: &Audio, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    match audio {
        Audio::Mono(m) => write_channels(path, &[m], encoding),
        Audio::Stereo(s) => write_channels(path, &[s.left(), s.right()], encoding),
    }
}

pub fn save_stereo(clip: &StereoClip, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    write_channels(path.as_ref(), &[clip.left(), clip.right()], encoding)
}
