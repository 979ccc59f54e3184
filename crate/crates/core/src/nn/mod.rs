//! The embedding network: a small residual CNN on magnitude/phase
//! spectrograms with hand-written reverse-mode gradients.

mod checkpoint;
mod conv;
mod network;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{backward, embed, forward, Tape};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{extract_windows, MonoClip, N_FRAMES, N_FREQ};
use crate::error::{ensure, Error, Result};
use crate::mat::Mat;
use conv::ConvShape;

/// Network layout. Input is always the `128 x 128 x 2` spectrogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_padding: usize,
    /// Output channels of each residual block.
    pub channels: Vec<usize>,
    /// Stride of the first convolution of each block.
    pub strides: Vec<usize>,
    pub embed_dim: usize,
    /// Multiplier on the STFT magnitude channel.
    pub magnitude_scale: f64,
    /// Multiplier on the phase channel after mapping it to `[-1, 1]`.
    pub phase_scale: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ArchConfig {
    /// Four blocks, d = 32, about 15k parameters: trainable on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            stem_channels: 8,
            stem_kernel: 4,
            stem_stride: 4,
            stem_padding: 0,
            channels: vec![8, 16, 16, 16],
            strides: vec![2, 2, 2, 1],
            embed_dim: 32,
            magnitude_scale: 1.0,
            phase_scale: 0.1,
        }
    }

    /// Nine convolution layers (stem plus four two-conv blocks), d = 128.
    pub fn full() -> Self {
        Self {
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_padding: 3,
            channels: vec![64, 128, 256, 512],
            strides: vec![1, 2, 2, 2],
            embed_dim: 128,
            magnitude_scale: 1.0,
            phase_scale: 0.1,
        }
    }

    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.embed_dim >= 2, Config, "embed_dim must be at least 2");
        ensure!(!self.channels.is_empty(), Config, "at least one residual block is required");
        ensure!(
            self.channels.len() == self.strides.len(),
            Config,
            "{} block widths but {} strides",
            self.channels.len(),
            self.strides.len()
        );
        ensure!(
            self.stem_channels > 0 && self.channels.iter().all(|&c| c > 0),
            Config,
            "channel counts must be positive"
        );
        ensure!(
            self.stem_kernel > 0 && self.stem_stride > 0 && self.strides.iter().all(|&s| s > 0),
            Config,
            "kernels and strides must be positive"
        );
        ensure!(
            self.magnitude_scale.is_finite() && self.phase_scale.is_finite(),
            Config,
            "input scales must be finite"
        );
        let stem = self.stem_shape();
        let (h, w) = match (stem.out_size(N_FREQ), stem.out_size(N_FRAMES)) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(Error::Config(format!(
                    "stem kernel {} does not fit the {N_FREQ}x{N_FRAMES} input",
                    self.stem_kernel
                )))
            }
        };
        ensure!(h > 0 && w > 0, Config, "stem leaves no spatial extent");
        Ok(())
    }

    pub(crate) fn stem_shape(&self) -> ConvShape {
        ConvShape {
            cin: 2,
            cout: self.stem_channels,
            kernel: self.stem_kernel,
            stride: self.stem_stride,
            pad: self.stem_padding,
        }
    }

    pub(crate) fn block_shapes(&self, block: usize) -> (ConvShape, ConvShape, Option<ConvShape>) {
        let cin = if block == 0 { self.stem_channels } else { self.channels[block - 1] };
        let cout = self.channels[block];
        let stride = self.strides[block];
        let conv1 = ConvShape { cin, cout, kernel: 3, stride, pad: 1 };
        let conv2 = ConvShape { cin: cout, cout, kernel: 3, stride: 1, pad: 1 };
        let shortcut = (cin != cout || stride != 1).then_some(ConvShape { cin, cout, kernel: 1, stride, pad: 0 });
        (conv1, conv2, shortcut)
    }

    pub(crate) fn final_channels(&self) -> usize {
        *self.channels.last().expect("validated")
    }

    /// Parameter names and shapes, in storage order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        let mut conv = |name: &str, s: ConvShape| {
            specs.push((format!("{name}.weight"), vec![s.cout, s.cin, s.kernel, s.kernel]));
            specs.push((format!("{name}.bias"), vec![s.cout]));
        };
        conv("stem", self.stem_shape());
        for b in 0..self.blocks() {
            let (c1, c2, sc) = self.block_shapes(b);
            conv(&format!("block{b}.conv1"), c1);
            conv(&format!("block{b}.conv2"), c2);
            if let Some(sc) = sc {
                conv(&format!("block{b}.shortcut"), sc);
            }
        }
        specs.push(("fc.weight".into(), vec![self.embed_dim, self.final_channels()]));
        specs.push(("fc.bias".into(), vec![self.embed_dim]));
        specs
    }

    /// SHA-256 of the JSON serialization, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("arch serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One named parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Parameter store keyed by layer name; also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchConfig,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Builds a store, checking names and shapes against `arch`.
    pub fn from_tensors(arch: ArchConfig, tensors: Vec<Tensor>) -> Result<Self> {
        arch.validate()?;
        let specs = arch.param_specs();
        ensure!(
            specs.len() == tensors.len(),
            ShapeMismatch,
            "expected {} parameter arrays, got {}",
            specs.len(),
            tensors.len()
        );
        for ((name, shape), t) in specs.iter().zip(&tensors) {
            ensure!(
                &t.name == name && &t.shape == shape,
                ShapeMismatch,
                "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                t.name,
                t.shape
            );
            ensure!(
                t.data.len() == shape.iter().product::<usize>(),
                ShapeMismatch,
                "parameter `{name}` has {} values for shape {shape:?}",
                t.data.len()
            );
        }
        Ok(Self { arch, tensors })
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![0.0; t.data.len()],
                })
                .collect(),
        }
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub(crate) fn index_of(&self, name: &str) -> usize {
        self.tensors
            .iter()
            .position(|t| t.name == name)
            .unwrap_or_else(|| panic!("no parameter `{name}`"))
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += alpha * other` (same layout).
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += alpha * y;
            }
        }
    }

    pub fn dot(&self, other: &ModelParams) -> f64 {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, alpha: f64) {
        self.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v *= alpha));
    }
}

/// He-normal weights (std `sqrt(2 / fan_in)`), zero biases.
pub fn init_model(arch: &ArchConfig, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = arch
        .param_specs()
        .into_iter()
        .map(|(name, shape)| {
            let len: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; len]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..len).map(|_| normal.sample(&mut rng)).collect()
            };
            Tensor { name, shape, data }
        })
        .collect();
    ModelParams::from_tensors(arch.clone(), tensors)
}

/// Unit-norm embeddings of consecutive windows of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub vectors: Mat,
    pub window_step: usize,
    pub rate: u32,
}

impl EmbeddingSequence {
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// Slides a `window`-sample window with hop `step` over `channel` and embeds
/// every position.
pub fn embed_sequence(params: &ModelParams, channel: &MonoClip, window: usize, step: usize) -> Result<EmbeddingSequence> {
    let windows = extract_windows(channel, window, step)?;
    ensure!(
        !windows.is_empty(),
        InvalidArgument,
        "a {}-sample clip yields no {window}-sample windows at step {step}",
        channel.len()
    );
    Ok(EmbeddingSequence {
        vectors: embed(params, &windows)?,
        window_step: step,
        rate: channel.rate(),
    })
}
