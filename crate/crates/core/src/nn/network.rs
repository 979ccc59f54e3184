use std::sync::OnceLock;

use rayon::prelude::*;

use super::conv::{conv_backward, conv_forward, gemm, ConvShape, Dims};
use super::{ArchConfig, ModelParams};
use crate::audio::{MonoClip, Spectrogram, StftFeatures, N_FRAMES, N_FREQ};
use crate::error::{ensure, Error, Result};
use crate::mat::Mat;

/// Windows per independent forward/backward chunk.
const CHUNK: usize = 16;
/// Floor on the pre-normalization norm.
const NORM_EPS: f64 = 1e-12;

fn stft() -> &'static StftFeatures {
    static FEATURES: OnceLock<StftFeatures> = OnceLock::new();
    FEATURES.get_or_init(StftFeatures::new)
}

struct BlockTape {
    h1: Vec<f64>,
    h1_dims: Dims,
    out: Vec<f64>,
    out_dims: Dims,
}

struct ChunkTape {
    specs: Vec<Spectrogram>,
    stem_out: Vec<f64>,
    stem_dims: Dims,
    blocks: Vec<BlockTape>,
    pooled: Vec<f64>,
    norms: Vec<f64>,
    emb: Vec<f64>,
}

/// Intermediates retained by [`forward`] for [`backward`].
pub struct Tape {
    arch: ArchConfig,
    chunks: Vec<ChunkTape>,
    rows: usize,
}

impl Tape {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

fn input_of(specs: &[Spectrogram], arch: &ArchConfig) -> Vec<f64> {
    let plane = N_FREQ * N_FRAMES;
    let b = specs.len();
    let mut x = vec![0.0; 2 * b * plane];
    let phase_gain = arch.phase_scale / std::f64::consts::PI;
    for (i, s) in specs.iter().enumerate() {
        let mag = s.component(Spectrogram::MAGNITUDE);
        let ph = s.component(Spectrogram::PHASE);
        for (o, v) in x[i * plane..(i + 1) * plane].iter_mut().zip(mag) {
            *o = *v as f64 * arch.magnitude_scale;
        }
        for (o, v) in x[(b + i) * plane..(b + i + 1) * plane].iter_mut().zip(ph) {
            *o = *v as f64 * phase_gain;
        }
    }
    x
}

fn relu_checked(v: &mut [f64], layer: &str) -> Result<()> {
    let mut finite = true;
    for x in v.iter_mut() {
        finite &= x.is_finite();
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    if finite {
        Ok(())
    } else {
        Err(Error::NonFinite { layer: layer.into() })
    }
}

fn conv_layer(params: &ModelParams, name: &str, x: &[f64], d: Dims, s: &ConvShape) -> (Vec<f64>, Dims) {
    let w = &params.tensors()[params.index_of(&format!("{name}.weight"))].data;
    let b = &params.tensors()[params.index_of(&format!("{name}.bias"))].data;
    conv_forward(x, d, s, w, b)
}

fn chunk_forward(params: &ModelParams, windows: &[MonoClip], keep: bool) -> Result<(Vec<f64>, Option<ChunkTape>)> {
    let arch = params.arch();
    let specs = windows.iter().map(|w| stft().compute(w)).collect::<Result<Vec<_>>>()?;
    let batch = specs.len();
    let x = input_of(&specs, arch);
    let d0 = Dims { batch, h: N_FREQ, w: N_FRAMES };
    let (mut stem_out, stem_dims) = conv_layer(params, "stem", &x, d0, &arch.stem_shape());
    drop(x);
    relu_checked(&mut stem_out, "stem")?;

    let mut blocks = Vec::with_capacity(arch.blocks());
    let mut cur = stem_out.clone();
    let mut cur_dims = stem_dims;
    for b in 0..arch.blocks() {
        let (c1, c2, sc) = arch.block_shapes(b);
        let (mut h1, h1_dims) = conv_layer(params, &format!("block{b}.conv1"), &cur, cur_dims, &c1);
        relu_checked(&mut h1, &format!("block{b}.conv1"))?;
        let (mut out, out_dims) = conv_layer(params, &format!("block{b}.conv2"), &h1, h1_dims, &c2);
        match sc {
            Some(sc) => {
                let (r, _) = conv_layer(params, &format!("block{b}.shortcut"), &cur, cur_dims, &sc);
                out.iter_mut().zip(&r).for_each(|(o, r)| *o += r);
            }
            None => out.iter_mut().zip(&cur).for_each(|(o, r)| *o += r),
        }
        relu_checked(&mut out, &format!("block{b}"))?;
        cur = out.clone();
        cur_dims = out_dims;
        if keep {
            blocks.push(BlockTape { h1, h1_dims, out, out_dims });
        }
    }

    let channels = arch.final_channels();
    let plane = cur_dims.h * cur_dims.w;
    let mut pooled = vec![0.0; batch * channels];
    for c in 0..channels {
        for b in 0..batch {
            let s: f64 = cur[(c * batch + b) * plane..][..plane].iter().sum();
            pooled[b * channels + c] = s / plane as f64;
        }
    }

    let d = arch.embed_dim;
    let fc_w = &params.tensors()[params.index_of("fc.weight")].data;
    let fc_b = &params.tensors()[params.index_of("fc.bias")].data;
    let mut z = vec![0.0; batch * d];
    for row in z.chunks_exact_mut(d) {
        row.copy_from_slice(fc_b);
    }
    gemm(batch, channels, d, &pooled, false, fc_w, true, &mut z, 1.0);
    let mut norms = Vec::with_capacity(batch);
    for row in z.chunks_exact_mut(d) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !n.is_finite() {
            return Err(Error::NonFinite { layer: "fc".into() });
        }
        let n = n.max(NORM_EPS);
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    let tape = keep.then(|| ChunkTape {
        specs,
        stem_out,
        stem_dims,
        blocks,
        pooled,
        norms,
        emb: z.clone(),
    });
    Ok((z, tape))
}

fn check_windows(windows: &[MonoClip]) -> Result<()> {
    ensure!(!windows.is_empty(), InvalidArgument, "no windows to embed");
    let len = windows[0].len();
    ensure!(
        windows.iter().all(|w| w.len() == len),
        InvalidArgument,
        "windows must all have the same length"
    );
    Ok(())
}

fn run(params: &ModelParams, windows: &[MonoClip], keep: bool) -> Result<(Mat, Vec<ChunkTape>)> {
    check_windows(windows)?;
    let parts = windows
        .par_chunks(CHUNK)
        .map(|w| chunk_forward(params, w, keep))
        .collect::<Result<Vec<_>>>()?;
    let d = params.arch().embed_dim;
    let mut data = Vec::with_capacity(windows.len() * d);
    let mut tapes = Vec::new();
    for (z, t) in parts {
        data.extend_from_slice(&z);
        tapes.extend(t);
    }
    Ok((Mat::new(windows.len(), d, data)?, tapes))
}

/// Embeds each window (one row per window) and keeps what backward needs.
pub fn forward(params: &ModelParams, windows: &[MonoClip]) -> Result<(Mat, Tape)> {
    let (m, chunks) = run(params, windows, true)?;
    Ok((
        m,
        Tape {
            arch: params.arch().clone(),
            chunks,
            rows: windows.len(),
        },
    ))
}

/// Inference-only forward pass.
pub fn embed(params: &ModelParams, windows: &[MonoClip]) -> Result<Mat> {
    Ok(run(params, windows, false)?.0)
}

/// Gradient through `e = z / max(|z|, eps)`.
pub(crate) fn normalize_backward(e: &[f64], norm: f64, de: &[f64]) -> Vec<f64> {
    if norm <= NORM_EPS {
        return de.iter().map(|g| g / NORM_EPS).collect();
    }
    let proj: f64 = e.iter().zip(de).map(|(a, b)| a * b).sum();
    e.iter().zip(de).map(|(ei, gi)| (gi - ei * proj) / norm).collect()
}

fn relu_mask(grad: &mut [f64], out: &[f64]) {
    grad.iter_mut().zip(out).for_each(|(g, o)| {
        if *o <= 0.0 {
            *g = 0.0
        }
    });
}

fn conv_grad(
    params: &ModelParams,
    grads: &mut ModelParams,
    name: &str,
    x: &[f64],
    d: Dims,
    s: &ConvShape,
    dy: &[f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let wi = params.index_of(&format!("{name}.weight"));
    let bi = params.index_of(&format!("{name}.bias"));
    let w = &params.tensors()[wi].data;
    let (gw, gb) = {
        let t = grads.tensors_mut();
        let (lo, hi) = t.split_at_mut(bi);
        (&mut lo[wi].data, &mut hi[0].data)
    };
    conv_backward(x, d, s, w, dy, gw, gb, want_dx)
}

fn chunk_backward(params: &ModelParams, tape: &ChunkTape, de: &[f64]) -> ModelParams {
    let arch = params.arch();
    let mut grads = params.zeros_like();
    let batch = tape.specs.len();
    let d = arch.embed_dim;
    let channels = arch.final_channels();

    let mut dz = vec![0.0; batch * d];
    for b in 0..batch {
        let r = b * d..(b + 1) * d;
        dz[r.clone()].copy_from_slice(&normalize_backward(&tape.emb[r.clone()], tape.norms[b], &de[r]));
    }
    let fw = params.index_of("fc.weight");
    let fb = params.index_of("fc.bias");
    gemm(d, batch, channels, &dz, true, &tape.pooled, false, &mut grads.tensors_mut()[fw].data, 1.0);
    for row in dz.chunks_exact(d) {
        grads.tensors_mut()[fb].data.iter_mut().zip(row).for_each(|(g, v)| *g += v);
    }
    let mut dpooled = vec![0.0; batch * channels];
    gemm(batch, d, channels, &dz, false, &params.tensors()[fw].data, false, &mut dpooled, 0.0);

    let last = tape.blocks.last().expect("at least one block");
    let plane = last.out_dims.h * last.out_dims.w;
    let mut dcur = vec![0.0; channels * batch * plane];
    for c in 0..channels {
        for b in 0..batch {
            let g = dpooled[b * channels + c] / plane as f64;
            dcur[(c * batch + b) * plane..][..plane].fill(g);
        }
    }

    for b in (0..arch.blocks()).rev() {
        let bt = &tape.blocks[b];
        let (input, in_dims) = if b == 0 {
            (&tape.stem_out, tape.stem_dims)
        } else {
            (&tape.blocks[b - 1].out, tape.blocks[b - 1].out_dims)
        };
        let (c1, c2, sc) = arch.block_shapes(b);
        let mut dpre = dcur;
        relu_mask(&mut dpre, &bt.out);
        let mut dh1 = conv_grad(params, &mut grads, &format!("block{b}.conv2"), &bt.h1, bt.h1_dims, &c2, &dpre, true)
            .expect("requested");
        relu_mask(&mut dh1, &bt.h1);
        let mut dx = conv_grad(params, &mut grads, &format!("block{b}.conv1"), input, in_dims, &c1, &dh1, true)
            .expect("requested");
        match sc {
            Some(sc) => {
                let ds = conv_grad(params, &mut grads, &format!("block{b}.shortcut"), input, in_dims, &sc, &dpre, true)
                    .expect("requested");
                dx.iter_mut().zip(&ds).for_each(|(a, b)| *a += b);
            }
            None => dx.iter_mut().zip(&dpre).for_each(|(a, b)| *a += b),
        }
        dcur = dx;
    }

    relu_mask(&mut dcur, &tape.stem_out);
    let x = input_of(&tape.specs, arch);
    let d0 = Dims { batch, h: N_FREQ, w: N_FRAMES };
    conv_grad(params, &mut grads, "stem", &x, d0, &arch.stem_shape(), &dcur, false);
    grads
}

/// Parameter gradients of `sum(grad_embeddings .* embeddings)`.
pub fn backward(params: &ModelParams, tape: &Tape, grad_embeddings: &Mat) -> Result<ModelParams> {
    ensure!(
        params.arch() == &tape.arch,
        ShapeMismatch,
        "tape was recorded with a different architecture"
    );
    ensure!(
        grad_embeddings.shape() == (tape.rows, tape.arch.embed_dim),
        ShapeMismatch,
        "gradient is {:?}, embeddings are {:?}",
        grad_embeddings.shape(),
        (tape.rows, tape.arch.embed_dim)
    );
    let d = tape.arch.embed_dim;
    let mut offsets = Vec::with_capacity(tape.chunks.len());
    let mut row = 0;
    for c in &tape.chunks {
        offsets.push(row);
        row += c.specs.len();
    }
    let g = grad_embeddings.as_slice();
    let parts: Vec<ModelParams> = tape
        .chunks
        .par_iter()
        .zip(offsets)
        .map(|(c, off)| chunk_backward(params, c, &g[off * d..(off + c.specs.len()) * d]))
        .collect();
    let mut total = params.zeros_like();
    for p in &parts {
        total.axpy(1.0, p);
    }
    Ok(total)
}
