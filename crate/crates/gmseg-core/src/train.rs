//! Recurrence training: every step builds the memory from N support frames
//! with ground-truth masks, segments the query frame, and backpropagates a
//! cross-entropy loss through the decoder, the K reasoning steps and the
//! support encoding on a single tape.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::clip::{frame_to_tensor, mask_to_binary_tensor, VideoClip};
use crate::data::{augment_clip, sample_training_clip, shuffle_labels, AugmentConfig};
use crate::error::{Error, Result};
use crate::infer::{run_ovos_sequence, run_zvos_sequence, InferConfig};
use crate::metrics::region_similarity;
use crate::optim::{apply_tape_grads, AdamConfig, OptimizerState};
use crate::segnet::{GraphMemSegNet, Mode, SupportInput};
use crate::tape::Tape;
use crate::tensor::{HasParams, Real, Tensor};
use crate::{derived_rng, Rng};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Support-set size N; the memory holds one node per support frame.
    pub support_size: usize,
    /// Reasoning steps K; 0 trains the memoryless ablation.
    pub reason_steps: usize,
    /// Clips accumulated per optimizer step.
    pub batch_size: usize,
    pub base_lr: f64,
    pub power: f64,
    /// Schedule horizon; 0 derives it from the stage step counts.
    pub max_steps: usize,
    /// Stage-1 steps on synthetic clips.
    pub pretrain_steps: usize,
    /// Stage-2 steps on real video data.
    pub main_steps: usize,
    pub seed: u64,
    pub mode: Mode,
    pub label_shuffle: bool,
    pub max_skip: usize,
    /// Validate (and checkpoint) every this many steps; 0 validates at the
    /// end only.
    pub val_every: usize,
    pub augment: Option<AugmentConfig>,
    /// Sample the per-clip support count uniformly from 1..=N instead of
    /// always N, so the controllers also see the short banks sequential
    /// inference forms on its first frames.
    pub vary_support: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            support_size: 3,
            reason_steps: 3,
            batch_size: 4,
            base_lr: 1e-4,
            power: 1.0,
            max_steps: 0,
            pretrain_steps: 500,
            main_steps: 0,
            seed: 0,
            mode: Mode::OVos,
            label_shuffle: true,
            max_skip: 25,
            val_every: 0,
            augment: None,
            vary_support: false,
        }
    }
}

impl TrainConfig {
    /// Normalizes and checks the configuration; zero-shot mode forces label
    /// shuffling off.
    pub fn validated(mut self) -> Result<Self> {
        if self.support_size == 0 {
            return Err(Error::Config("support size N must be >= 1".into()));
        }
        if self.max_skip == 0 {
            return Err(Error::Config("max_skip must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.mode == Mode::ZVos {
            self.label_shuffle = false;
        }
        Ok(self)
    }

    pub fn schedule_horizon(&self) -> usize {
        if self.max_steps > 0 {
            self.max_steps
        } else {
            self.pretrain_steps + self.main_steps
        }
    }

    pub fn clip_len(&self) -> usize {
        self.support_size + 1
    }
}

/// Training clip turned into network inputs for one selected target.
pub fn example_from_clip<T: Real>(
    clip: &VideoClip,
    mode: Mode,
    target_id: Option<u8>,
) -> Result<(Vec<SupportInput<T>>, Tensor<T>, Vec<u8>)> {
    clip.validate()?;
    if clip.len() < 2 {
        return Err(Error::Usage("training clip needs support frames and a query".into()));
    }
    let n = clip.len() - 1;
    let query = frame_to_tensor::<T>(&clip.frames[n]);
    match mode {
        Mode::OVos => {
            let id = target_id.ok_or_else(|| {
                Error::Usage("one-shot training needs a target instance id".into())
            })?;
            if !clip.instance_ids.contains(&id) {
                return Err(Error::Data(format!(
                    "target instance {id} not in the clip's id table"
                )));
            }
            let supports = (0..n)
                .map(|t| {
                    let bin = mask_to_binary_tensor::<T>(&clip.masks[t], id);
                    SupportInput {
                        frame: frame_to_tensor::<T>(&clip.frames[t]),
                        mask: Some(bin.clone()),
                        label: Some(bin),
                    }
                })
                .collect();
            Ok((supports, query, clip.masks[n].binary(id)))
        }
        Mode::ZVos => {
            let supports = (0..n)
                .map(|t| SupportInput {
                    frame: frame_to_tensor::<T>(&clip.frames[t]),
                    mask: None,
                    label: None,
                })
                .collect();
            Ok((supports, query, clip.masks[n].binary_foreground()))
        }
    }
}

/// Forward + loss on a fresh tape; exposed for tests and gradient checks.
pub fn clip_loss<T: Real>(
    model: &GraphMemSegNet<T>,
    clip: &VideoClip,
    mode: Mode,
    target_id: Option<u8>,
    k: usize,
) -> Result<f64> {
    let (supports, query, target) = example_from_clip::<T>(clip, mode, target_id)?;
    let mut tape = Tape::new();
    let out = model.forward_clip(&mut tape, &supports, &query, k)?;
    let loss = tape.cross_entropy(out.pred, &target)?;
    Ok(tape.value(loss).item()?.as_f64())
}

fn accumulate_clip<T: Real>(
    model: &mut GraphMemSegNet<T>,
    clip: &VideoClip,
    cfg: &TrainConfig,
    rng: &mut Rng,
    scale: f64,
) -> Result<f64> {
    let work;
    let clip = if cfg.label_shuffle && cfg.mode == Mode::OVos {
        work = shuffle_labels(clip, rng)?;
        &work
    } else {
        clip
    };
    let target_id = match cfg.mode {
        Mode::OVos => {
            if clip.instance_ids.is_empty() {
                return Err(Error::Data("clip has no instances to train on".into()));
            }
            Some(clip.instance_ids[rng.gen_range(0..clip.instance_ids.len())])
        }
        Mode::ZVos => None,
    };
    let (supports, query, target) = example_from_clip::<T>(clip, cfg.mode, target_id)?;
    let mut tape = Tape::new();
    let out = model.forward_clip(&mut tape, &supports, &query, cfg.reason_steps)?;
    let loss_id = tape.cross_entropy(out.pred, &target)?;
    let loss = tape.value(loss_id).item()?.as_f64();
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss {loss} (clip of {} frames, target {target_id:?})",
            clip.len()
        )));
    }
    let store = tape.backward(loss_id)?;
    apply_tape_grads(model, &tape, &store, scale)?;
    Ok(loss)
}

/// One optimizer step over a batch of clips: gradients averaged over the
/// batch, then a single Adam update. Returns the mean loss.
pub fn train_step_batch<T: Real>(
    model: &mut GraphMemSegNet<T>,
    opt: &mut OptimizerState<T>,
    clips: &[VideoClip],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(f64, crate::optim::StepInfo)> {
    if clips.is_empty() {
        return Err(Error::Usage("train_step_batch on an empty batch".into()));
    }
    for clip in clips {
        let ok = if cfg.vary_support {
            (2..=cfg.clip_len()).contains(&clip.len())
        } else {
            clip.len() == cfg.clip_len()
        };
        if !ok {
            return Err(Error::Usage(format!(
                "clip has {} frames, config wants N+1 = {}",
                clip.len(),
                cfg.clip_len()
            )));
        }
    }
    model.zero_grads();
    let scale = 1.0 / clips.len() as f64;
    let mut total = 0.0;
    for clip in clips {
        total += accumulate_clip(model, clip, cfg, rng, scale)?;
    }
    let info = opt.step(model)?;
    Ok((total * scale, info))
}

/// Single-clip training step: memory from the supports, query prediction,
/// cross-entropy, backward, Adam.
pub fn train_step<T: Real>(
    model: &mut GraphMemSegNet<T>,
    opt: &mut OptimizerState<T>,
    clip: &VideoClip,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let (loss, _) = train_step_batch(model, opt, core::slice::from_ref(clip), cfg, rng)?;
    Ok(loss)
}

/// Pull-based clip supply for one training stage.
pub trait ClipSource {
    fn next_clip(&mut self, clip_len: usize, max_skip: usize) -> Result<VideoClip>;
}

/// Endless shape-world videos with randomized motion programs.
pub struct ShapeWorldSource {
    pub canvas: usize,
    pub video_frames: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub occluder: bool,
    rng: Rng,
}

impl ShapeWorldSource {
    pub fn new(seed: u64, canvas: usize, video_frames: usize, instances: (usize, usize)) -> Self {
        ShapeWorldSource {
            canvas,
            video_frames,
            min_instances: instances.0,
            max_instances: instances.1,
            occluder: false,
            rng: crate::rng_from_seed(seed),
        }
    }
}

impl ClipSource for ShapeWorldSource {
    fn next_clip(&mut self, clip_len: usize, max_skip: usize) -> Result<VideoClip> {
        let n_inst = self.rng.gen_range(self.min_instances..=self.max_instances);
        let spec = crate::synth::ShapeWorldSpec::sample(
            &mut self.rng,
            self.canvas,
            self.video_frames.max(clip_len),
            n_inst,
            self.occluder,
        );
        let video = crate::synth::generate_shape_world(&spec)?;
        sample_training_clip(&video, clip_len - 1, max_skip, &mut self.rng)
    }
}

/// Where `fit` delivers checkpoints.
pub trait CheckpointSink<T: Real> {
    /// Persists the model under a tag; returns a path-like label.
    fn save(&mut self, tag: &str, model: &GraphMemSegNet<T>) -> Result<String>;
}

/// Discards checkpoints (tests, ablation sweeps).
pub struct NullSink;

impl<T: Real> CheckpointSink<T> for NullSink {
    fn save(&mut self, tag: &str, _model: &GraphMemSegNet<T>) -> Result<String> {
        Ok(format!("(discarded) {tag}"))
    }
}

/// Keeps encoded checkpoints in memory.
#[derive(Default)]
pub struct MemorySink {
    pub saved: Vec<(String, Vec<u8>)>,
}

impl<T: Real> CheckpointSink<T> for MemorySink {
    fn save(&mut self, tag: &str, model: &GraphMemSegNet<T>) -> Result<String> {
        self.saved.push((String::from(tag), crate::ckpt::encode(model)?));
        Ok(format!("memory:{tag}"))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub lrs: Vec<f64>,
    /// (step, mean J) pairs from periodic validation.
    pub validations: Vec<(usize, f64)>,
    pub checkpoints: Vec<String>,
    pub warnings: Vec<String>,
}

/// Mean J of one-shot inference over a validation clip: every instance from
/// the first-frame annotation, frames after the first.
pub fn mean_j_ovos<T: Real>(
    model: &GraphMemSegNet<T>,
    clip: &VideoClip,
    icfg: &InferConfig,
) -> Result<f64> {
    let out = run_ovos_sequence(model, &clip.frames, &clip.masks[0], icfg)?;
    let ids = clip.masks[0].present_ids();
    let mut sum = 0.0;
    let mut count = 0usize;
    for f in 1..clip.len() {
        for &id in &ids {
            let pred = crate::clip::Mask::from_data(
                out.masks[f].h,
                out.masks[f].w,
                out.masks[f].binary(id),
            )?;
            let gt =
                crate::clip::Mask::from_data(clip.masks[f].h, clip.masks[f].w, clip.masks[f].binary(id))?;
            sum += region_similarity(&pred, &gt)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Usage("validation clip has a single frame".into()));
    }
    Ok(sum / count as f64)
}

/// Mean J of zero-shot inference against whole-foreground ground truth.
pub fn mean_j_zvos<T: Real>(
    model: &GraphMemSegNet<T>,
    clip: &VideoClip,
    icfg: &InferConfig,
) -> Result<f64> {
    let masks = run_zvos_sequence(model, &clip.frames, icfg)?;
    let mut sum = 0.0;
    for (pred, gt) in masks.iter().zip(&clip.masks) {
        let gtb = crate::clip::Mask::from_data(gt.h, gt.w, gt.binary_foreground())?;
        sum += region_similarity(pred, &gtb)?;
    }
    Ok(sum / clip.len() as f64)
}

fn validate_mean_j<T: Real>(
    model: &GraphMemSegNet<T>,
    cfg: &TrainConfig,
    val_clips: &[VideoClip],
) -> Result<f64> {
    let icfg = InferConfig {
        support_size: cfg.support_size.max(2),
        reason_steps: cfg.reason_steps,
        seed: cfg.seed,
        ..Default::default()
    };
    let mut sum = 0.0;
    for clip in val_clips {
        sum += match cfg.mode {
            Mode::OVos => mean_j_ovos(model, clip, &icfg)?,
            Mode::ZVos => mean_j_zvos(model, clip, &icfg)?,
        };
    }
    Ok(sum / val_clips.len() as f64)
}

/// Two-stage training driver: synthetic pretraining then main training, with
/// periodic validation and checkpointing. With zero steps it writes the
/// initial checkpoint and returns an empty series.
pub fn fit<T: Real>(
    model: &mut GraphMemSegNet<T>,
    cfg: &TrainConfig,
    mut pretrain: Option<&mut dyn ClipSource>,
    mut main: Option<&mut dyn ClipSource>,
    val_clips: &[VideoClip],
    sink: &mut dyn CheckpointSink<T>,
) -> Result<TrainReport> {
    let cfg = cfg.clone().validated()?;
    if cfg.pretrain_steps > 0 && pretrain.is_none() {
        return Err(Error::Config("pretraining steps requested but no synthetic source".into()));
    }
    if cfg.main_steps > 0 && main.is_none() {
        return Err(Error::Config("main steps requested but no dataset source".into()));
    }
    let total_steps = cfg.pretrain_steps + cfg.main_steps;
    let mut opt = OptimizerState::new(AdamConfig {
        base_lr: cfg.base_lr,
        power: cfg.power,
        ..AdamConfig::new(cfg.base_lr, cfg.schedule_horizon().max(1))
    })?;
    opt.cfg.max_steps = cfg.schedule_horizon().max(1);

    let mut rng = derived_rng(cfg.seed, 0x7261696e);
    let mut report = TrainReport::default();
    report.checkpoints.push(sink.save("init", model)?);
    if total_steps == 0 {
        return Ok(report);
    }

    let mut global = 0usize;
    let mut warned_clamp = false;
    for stage in 0..2 {
        let steps = if stage == 0 { cfg.pretrain_steps } else { cfg.main_steps };
        if steps == 0 {
            continue;
        }
        let src: &mut dyn ClipSource = if stage == 0 {
            pretrain.as_deref_mut().expect("checked above")
        } else {
            main.as_deref_mut().expect("checked above")
        };
        for _ in 0..steps {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let len = if cfg.vary_support {
                    rng.gen_range(1..=cfg.support_size) + 1
                } else {
                    cfg.clip_len()
                };
                let mut clip = src.next_clip(len, cfg.max_skip)?;
                if let Some(aug) = &cfg.augment {
                    clip = augment_clip(&clip, aug, &mut rng);
                }
                batch.push(clip);
            }
            let (loss, info) = train_step_batch(model, &mut opt, &batch, &cfg, &mut rng)
                .map_err(|e| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!("step {global}: {msg}")),
                    other => other,
                })?;
            if info.lr_clamped && !warned_clamp {
                report
                    .warnings
                    .push(format!("step {global}: schedule exhausted, lr clamped to 0"));
                warned_clamp = true;
            }
            report.losses.push(loss);
            report.lrs.push(info.lr);
            global += 1;
            let due = cfg.val_every > 0 && global % cfg.val_every == 0;
            if due && !val_clips.is_empty() {
                let j = validate_mean_j(model, &cfg, val_clips)?;
                report.validations.push((global, j));
                report.checkpoints.push(sink.save(&format!("step{global:06}"), model)?);
            }
        }
    }
    if !val_clips.is_empty() && report.validations.last().map(|&(s, _)| s) != Some(global) {
        let j = validate_mean_j(model, &cfg, val_clips)?;
        report.validations.push((global, j));
    }
    report.checkpoints.push(sink.save("final", model)?);
    Ok(report)
}
