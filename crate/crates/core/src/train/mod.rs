//! Self-supervised training loop.

mod optim;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use optim::{adamw_step, cosine_lr, AdamW, OptState};

use crate::audio::{extract_windows, window_count, MonoClip, StereoClip};
use crate::augment::{pipeline, AugmentConfig, Side};
use crate::error::{ensure, Error, Result};
use crate::estimate::EstimatorConfig;
use crate::harness::{evaluate, DatasetSpec, LabeledClip, Method};
use crate::losses::{crw_loss, monoclr_loss, zero_loss, LossGrad, LossKind, DEFAULT_TEMPERATURE};
use crate::nn::{backward, forward, init_model, save_checkpoint, ArchConfig, ModelParams};
use crate::Mat;

/// Optional first phase on longer windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub steps: usize,
    pub window: usize,
    pub clip_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    /// Peak learning rate of the cosine schedule.
    pub lr: f64,
    pub batch: usize,
    pub temperature: f64,
    pub window: usize,
    /// Node spacing in samples for the training graph.
    pub step: usize,
    /// Length of the random crop taken from each corpus clip.
    pub clip_len: usize,
    pub max_steps: usize,
    /// Held-out evaluation every this many steps.
    pub eval_interval: usize,
    /// Stop after this many evaluations without improvement.
    pub patience: Option<usize>,
    pub optimizer: AdamW,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub arch: ArchConfig,
    pub heldout_estimator: EstimatorConfig,
    /// Held-out set for model selection, used when training from the CLI.
    pub heldout: Option<DatasetSpec>,
    pub pretrain: Option<Stage>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Crw,
            lr: 1e-3,
            batch: 8,
            temperature: DEFAULT_TEMPERATURE,
            window: 1024,
            step: 4,
            clip_len: 1220,
            max_steps: 300,
            eval_interval: 50,
            patience: None,
            optimizer: AdamW::default(),
            augment: AugmentConfig::regular(),
            seed: 0,
            arch: ArchConfig::desk(),
            heldout_estimator: EstimatorConfig {
                step: 4,
                ..Default::default()
            },
            heldout: None,
            pretrain: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with an augmentation policy that suits `loss`.
    pub fn for_loss(loss: LossKind) -> Self {
        let mut cfg = Self {
            loss,
            ..Default::default()
        };
        if loss == LossKind::Monoclr {
            cfg.augment = AugmentConfig {
                scale: Some((0.5, 1.5)),
                shift: Some(64),
                shift_granularity: cfg.step,
                ..Default::default()
            };
        }
        cfg
    }

    /// Full-size network, lr 1e-4, batch 48.
    pub fn full(loss: LossKind) -> Self {
        Self {
            lr: 1e-4,
            batch: 48,
            arch: ArchConfig::full(),
            ..Self::for_loss(loss)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("train config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.lr.is_finite() && self.lr >= 0.0, Config, "learning rate {} is invalid", self.lr);
        ensure!(self.batch >= 1, Config, "batch must be at least 1");
        ensure!(self.temperature > 0.0, Config, "temperature must be positive");
        ensure!(self.step >= 1, Config, "step must be at least 1");
        ensure!(self.eval_interval >= 1, Config, "eval interval must be at least 1");
        self.check_stage(self.window, self.clip_len)?;
        if let Some(s) = &self.pretrain {
            self.check_stage(s.window, s.clip_len)?;
        }
        ensure!(
            self.heldout_estimator.window == self.window,
            Config,
            "held-out estimator window {} differs from the training window {}",
            self.heldout_estimator.window,
            self.window
        );
        self.arch.validate()?;
        self.augment.validate()?;
        if let Some(h) = &self.heldout {
            h.validate()?;
        }
        match self.loss {
            LossKind::Crw | LossKind::Zero => {
                if self.augment.shift.is_some() {
                    return Err(Error::Policy(format!(
                        "time shift is not supported with the {} loss",
                        self.loss.id()
                    )));
                }
            }
            LossKind::Monoclr => {
                if self.augment.shift.is_none() {
                    return Err(Error::Policy("the monoclr loss needs a shift augmentation".into()));
                }
                ensure!(
                    self.augment.shift_granularity % self.step == 0,
                    Config,
                    "shift granularity {} is not a multiple of the step {}",
                    self.augment.shift_granularity,
                    self.step
                );
            }
        }
        Ok(())
    }

    fn check_stage(&self, window: usize, clip_len: usize) -> Result<()> {
        ensure!(window >= 256, Config, "window must be at least 256 samples");
        ensure!(
            window_count(clip_len, window, self.step) >= 2,
            Config,
            "a {clip_len}-sample crop gives fewer than two {window}-sample windows at step {}",
            self.step
        );
        Ok(())
    }

    fn total_steps(&self) -> usize {
        self.max_steps + self.pretrain.as_ref().map_or(0, |s| s.steps)
    }
}

/// One row of `metrics.csv`. Step 0 is the untrained model.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub loss: Option<f64>,
    pub lr: Option<f64>,
    pub heldout_mae_ms: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best held-out MAE (the last ones without a held-out set).
    pub params: ModelParams,
    pub best_step: usize,
    pub init_mae_ms: Option<f64>,
    pub best_mae_ms: Option<f64>,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub history: Vec<MetricRow>,
}

/// Two channels the loss compares, plus the shift separating them in samples.
struct Pair {
    a: MonoClip,
    b: MonoClip,
    shift: i64,
}

fn stereo_part(a: &AugmentConfig) -> AugmentConfig {
    AugmentConfig {
        swap_prob: a.swap_prob,
        scale: a.scale,
        ..Default::default()
    }
}

fn target_part(a: &AugmentConfig) -> AugmentConfig {
    AugmentConfig {
        noise_snr_db: a.noise_snr_db,
        reverb_rt60: a.reverb_rt60,
        mixture_intensity: a.mixture_intensity,
        ..Default::default()
    }
}

fn prepare(cfg: &TrainConfig, clip: &StereoClip, clip_len: usize, pool: &[StereoClip], seed: u64) -> Result<Pair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..=clip.len() - clip_len);
    let crop = clip.slice(start, clip_len)?;
    let (s1, s2): (u64, u64) = (rng.random(), rng.random());
    match cfg.loss {
        LossKind::Crw | LossKind::Zero => {
            let (x, _) = pipeline(&crop, &stereo_part(&cfg.augment), Side::Clean, pool, s1)?;
            // Degradations act on the target channel only.
            let b = if cfg.augment.has_degradation() {
                let dup = StereoClip::duplicated(x.right());
                let (y, _) = pipeline(&dup, &target_part(&cfg.augment), Side::Augmented, pool, s2)?;
                y.left().clone()
            } else {
                x.right().clone()
            };
            Ok(Pair {
                a: x.left().clone(),
                b,
                shift: 0,
            })
        }
        LossKind::Monoclr => {
            let mono = if rng.random_bool(0.5) { crop.left() } else { crop.right() }.clone();
            let (v, rec) = pipeline(&StereoClip::duplicated(&mono), &cfg.augment, Side::ShiftedView, pool, s2)?;
            Ok(Pair {
                a: mono,
                b: v.left().clone(),
                shift: rec.shift_samples,
            })
        }
    }
}

fn rows(m: &Mat, start: usize, n: usize) -> Mat {
    let d = m.cols();
    Mat::new(n, d, m.as_slice()[start * d..(start + n) * d].to_vec()).expect("row block")
}

/// Mean loss over the batch and its gradient with respect to the parameters.
fn batch_loss(cfg: &TrainConfig, params: &ModelParams, pairs: &[Pair], window: usize) -> Result<(f64, ModelParams)> {
    let mut windows = Vec::new();
    for p in pairs {
        windows.extend(extract_windows(&p.a, window, cfg.step)?);
        windows.extend(extract_windows(&p.b, window, cfg.step)?);
    }
    let n = window_count(pairs[0].a.len(), window, cfg.step);
    let (emb, tape) = forward(params, &windows)?;
    let d = emb.cols();
    let inv = 1.0 / pairs.len() as f64;
    let mut grad = Mat::zeros(emb.rows(), d);
    let mut total = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        let off = 2 * n * i;
        let ha = rows(&emb, off, n);
        let hb = rows(&emb, off + n, n);
        let LossGrad { value, grad_a, grad_b } = match cfg.loss {
            LossKind::Crw => crw_loss(&ha, &hb, cfg.temperature)?,
            LossKind::Zero => zero_loss(&ha, &hb, cfg.temperature)?,
            LossKind::Monoclr => monoclr_loss(&ha, &hb, p.shift, cfg.step, cfg.temperature)?,
        };
        total += value * inv;
        let g = grad.as_mut_slice();
        for (dst, src) in g[off * d..(off + n) * d].iter_mut().zip(grad_a.as_slice()) {
            *dst = src * inv;
        }
        for (dst, src) in g[(off + n) * d..(off + 2 * n) * d].iter_mut().zip(grad_b.as_slice()) {
            *dst = src * inv;
        }
    }
    if !total.is_finite() {
        return Ok((total, params.zeros_like()));
    }
    Ok((total, backward(params, &tape, &grad)?))
}

fn heldout_mae(cfg: &TrainConfig, params: &ModelParams, heldout: &[LabeledClip]) -> Result<Option<f64>> {
    if heldout.is_empty() {
        return Ok(None);
    }
    let method = Method::Model(Box::new(params.clone()), cfg.heldout_estimator.clone());
    Ok(evaluate(&method, heldout)?.summary.mae_ms)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

struct Metrics(Option<BufWriter<File>>, std::path::PathBuf);

impl Metrics {
    fn row(&mut self, r: &MetricRow) -> Result<()> {
        if let Some(w) = &mut self.0 {
            writeln!(w, "{},{},{},{}", r.step, opt(r.loss), opt(r.lr), opt(r.heldout_mae_ms))
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&self.1, e))?;
        }
        Ok(())
    }
}

/// Trains from a fresh initialization. With `out_dir`, writes `config.toml`,
/// `metrics.csv`, `init.ckpt`, `best.ckpt`, `last.ckpt` and `model.ckpt`
/// (the selected model).
pub fn train(
    cfg: &TrainConfig,
    corpus: &[StereoClip],
    heldout: &[LabeledClip],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ensure!(!corpus.is_empty(), InvalidArgument, "training corpus is empty");
    let longest = cfg.pretrain.as_ref().map_or(cfg.clip_len, |s| s.clip_len.max(cfg.clip_len));
    if let Some(c) = corpus.iter().find(|c| c.len() < longest) {
        return Err(Error::InvalidArgument(format!(
            "corpus clip of {} samples is shorter than the {longest}-sample crop",
            c.len()
        )));
    }

    let mut metrics = Metrics(None, Default::default());
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join("config.toml");
        fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
        let path = dir.join("metrics.csv");
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        writeln!(w, "step,loss,lr,heldout_mae_ms").map_err(|e| Error::io(&path, e))?;
        metrics = Metrics(Some(w), path);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_model(&cfg.arch, rng.random())?;
    let mut state = OptState::new(&params);
    if let Some(dir) = out_dir {
        save_checkpoint(&params, dir.join("init.ckpt"))?;
    }
    let total_steps = cfg.total_steps();

    let init_mae = heldout_mae(cfg, &params, heldout)?;
    let mut history = vec![MetricRow {
        step: 0,
        loss: None,
        lr: None,
        heldout_mae_ms: init_mae,
    }];
    metrics.row(&history[0])?;
    info!("step 0: held-out MAE {}", opt(init_mae.map(|m| (m * 1e4).round() / 1e4)));

    let mut best = (params.clone(), 0usize, init_mae);
    let mut stale = 0usize;
    let mut skipped = 0usize;
    let mut stopped_early = false;
    let mut order: Vec<usize> = Vec::new();
    let mut steps_run = 0;

    for step in 0..total_steps {
        let (window, clip_len) = match &cfg.pretrain {
            Some(s) if step < s.steps => (s.window, s.clip_len),
            _ => (cfg.window, cfg.clip_len),
        };
        let mut picks = Vec::with_capacity(cfg.batch);
        while picks.len() < cfg.batch {
            if order.is_empty() {
                order = (0..corpus.len()).collect();
                order.shuffle(&mut rng);
            }
            picks.push((order.pop().unwrap(), rng.random::<u64>()));
        }
        let pairs = picks
            .par_iter()
            .map(|&(i, seed)| prepare(cfg, &corpus[i], clip_len, corpus, seed))
            .collect::<Result<Vec<_>>>()?;

        let lr = cosine_lr(step, total_steps, cfg.lr);
        let (loss, grads) = batch_loss(cfg, &params, &pairs, window)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: step + 1,
                message: format!("loss is {loss}"),
            });
        }
        if adamw_step(&mut params, &grads, &mut state, lr, &cfg.optimizer)? {
            skipped = 0;
        } else {
            skipped += 1;
            warn!("step {}: non-finite gradient, update skipped", step + 1);
            if skipped >= 10 {
                return Err(Error::Diverged {
                    step: step + 1,
                    message: "ten consecutive non-finite gradients".into(),
                });
            }
        }
        steps_run = step + 1;
        debug!("step {steps_run}: loss {loss:.4} lr {lr:.2e}");

        let mut row = MetricRow {
            step: steps_run,
            loss: Some(loss),
            lr: Some(lr),
            heldout_mae_ms: None,
        };
        let eval_now = steps_run % cfg.eval_interval == 0 || steps_run == total_steps;
        if eval_now && !heldout.is_empty() {
            let mae = heldout_mae(cfg, &params, heldout)?;
            row.heldout_mae_ms = mae;
            info!("step {steps_run}: loss {loss:.4}, held-out MAE {}", opt(mae));
            let improved = match (mae, best.2) {
                (Some(m), Some(b)) => m < b,
                (Some(_), None) => true,
                _ => false,
            };
            if improved {
                best = (params.clone(), steps_run, mae);
                stale = 0;
                if let Some(dir) = out_dir {
                    save_checkpoint(&params, dir.join("best.ckpt"))?;
                }
            } else {
                stale += 1;
            }
        } else if eval_now {
            info!("step {steps_run}: loss {loss:.4}");
        }
        metrics.row(&row)?;
        history.push(row);
        if cfg.patience.is_some_and(|p| stale >= p) {
            info!("no held-out improvement in {stale} evaluations, stopping at step {steps_run}");
            stopped_early = true;
            break;
        }
    }

    if heldout.is_empty() {
        best = (params.clone(), steps_run, None);
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&params, dir.join("last.ckpt"))?;
        save_checkpoint(&best.0, dir.join("model.ckpt"))?;
    }
    Ok(TrainOutcome {
        params: best.0,
        best_step: best.1,
        init_mae_ms: init_mae,
        best_mae_ms: best.2,
        steps_run,
        stopped_early,
        history,
    })
}
