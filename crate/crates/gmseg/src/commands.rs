//! Subcommand implementations behind the `gmseg` entry point.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gmseg_core::ckpt;
use gmseg_core::clip::{Mask, VideoClip};
use gmseg_core::infer::{run_ovos_sequence, run_zvos_sequence};
use gmseg_core::metrics::{boundary_f, region_similarity, MetricReport, SequenceMetrics};
use gmseg_core::segnet::{GraphMemSegNet, Mode};
use gmseg_core::synth::{generate_shape_world, ShapeWorldSpec};
use gmseg_core::train::{fit, CheckpointSink, ClipSource, ShapeWorldSource};
use gmseg_core::{derived_rng, Dtype, Error, Real};

use crate::config::RunConfig;
use crate::dataset;
use crate::plot;

fn parse_dtype(cfg: &RunConfig) -> Result<Dtype> {
    match cfg.str("dtype") {
        "f32" => Ok(Dtype::F32),
        "f64" => Ok(Dtype::F64),
        other => Err(Error::Config(format!("dtype must be f32 or f64, got `{other}`")).into()),
    }
}

fn load_model<T: Real>(cfg: &RunConfig, require_ckpt: bool) -> Result<GraphMemSegNet<T>> {
    let mut model = GraphMemSegNet::<T>::new(cfg.model_config()?, cfg.u64("seed")?);
    let ckpt_key = cfg.str("ckpt");
    if ckpt_key.is_empty() {
        if require_ckpt {
            return Err(Error::Config("this command needs `ckpt` to point at a checkpoint".into()).into());
        }
        return Ok(model);
    }
    let path = cfg.path("ckpt");
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    ckpt::load_into(&mut model, &bytes)?;
    println!("loaded checkpoint {}", path.display());
    Ok(model)
}

/// Checkpoint sink writing `<dir>/<tag>.ckpt`.
pub struct FileSink {
    pub dir: PathBuf,
}

impl<T: Real> CheckpointSink<T> for FileSink {
    fn save(&mut self, tag: &str, model: &GraphMemSegNet<T>) -> gmseg_core::Result<String> {
        let bytes = ckpt::encode(model)?;
        let path = self.dir.join(format!("{tag}.ckpt"));
        std::fs::write(&path, bytes)
            .map_err(|e| Error::Checkpoint(format!("writing {}: {e}", path.display())))?;
        Ok(path.display().to_string())
    }
}

/// Held-out shape-world clips for validation, disjoint from training streams
/// by seed derivation.
pub fn make_val_clips(
    seed: u64,
    count: usize,
    canvas: usize,
    frames: usize,
    instances: (usize, usize),
    occluder: bool,
) -> Result<Vec<VideoClip>> {
    use gmseg_core::rand::Rng as _;
    let mut rng = derived_rng(seed, 0x76616c21);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(instances.0..=instances.1);
            let spec = ShapeWorldSpec::sample(&mut rng, canvas, frames, n, occluder);
            Ok(generate_shape_world(&spec)?)
        })
        .collect()
}

// ---- gen-data ---------------------------------------------------------------

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    use gmseg_core::rand::Rng as _;
    let out = cfg.path("gen.out");
    fs::create_dir_all(&out)?;
    let count = cfg.usize("gen.videos")?;
    let seed = cfg.u64("seed")?;
    let spec_file = cfg.str("gen.spec").to_string();
    let mut rng = derived_rng(seed, 0x67656e64);
    for i in 0..count {
        let spec = if spec_file.is_empty() {
            let n = rng.gen_range(cfg.usize("data.min_instances")?..=cfg.usize("data.max_instances")?);
            ShapeWorldSpec::sample(
                &mut rng,
                cfg.usize("data.canvas")?,
                cfg.usize("data.video_frames")?,
                n,
                cfg.bool("data.occluder")?,
            )
        } else {
            let path = cfg.path("gen.spec");
            let text = fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let mut spec = ShapeWorldSpec::parse(&text)?;
            spec.seed = spec.seed.wrapping_add(i as u64);
            spec
        };
        let clip = generate_shape_world(&spec)?;
        dataset::save_video(&out, &format!("{i:05}"), &clip)?;
    }
    println!("gen-data: wrote {count} videos under {}", out.display());
    Ok(())
}

// ---- train --------------------------------------------------------------------

pub fn train(cfg: &RunConfig) -> Result<()> {
    match parse_dtype(cfg)? {
        Dtype::F32 => train_typed::<f32>(cfg),
        Dtype::F64 => train_typed::<f64>(cfg),
    }
}

fn train_typed<T: Real>(cfg: &RunConfig) -> Result<()> {
    let tc = cfg.train_config()?;
    let seed = cfg.u64("seed")?;
    let out_dir = cfg.path("train.out");
    fs::create_dir_all(&out_dir)?;

    let mut model = load_model::<T>(cfg, false)?;

    let mut synth = ShapeWorldSource::new(
        derived_rng(seed, 0x73796e74).gen_seed(),
        cfg.usize("data.canvas")?,
        cfg.usize("data.video_frames")?,
        (cfg.usize("data.min_instances")?, cfg.usize("data.max_instances")?),
    );
    synth.occluder = cfg.bool("data.occluder")?;
    let mut dir_source = if tc.main_steps > 0 {
        let root = cfg.path("train.data");
        if cfg.str("train.data").is_empty() {
            return Err(Error::Config("train.main_steps > 0 needs train.data".into()).into());
        }
        Some(dataset::DirectorySource::new(&root, tc.clip_len(), seed ^ 0x646972)?)
    } else {
        None
    };

    let val = make_val_clips(
        seed,
        cfg.usize("train.val_clips")?,
        cfg.usize("data.canvas")?,
        cfg.usize("data.video_frames")?,
        (cfg.usize("data.min_instances")?, cfg.usize("data.max_instances")?),
        cfg.bool("data.occluder")?,
    )?;

    let mut sink = FileSink {
        dir: out_dir.clone(),
    };
    let report = fit(
        &mut model,
        &tc,
        Some(&mut synth),
        dir_source.as_mut().map(|s| s as &mut dyn ClipSource),
        &val,
        &mut sink,
    )?;

    let mut log = String::new();
    for (i, (loss, lr)) in report.losses.iter().zip(&report.lrs).enumerate() {
        log.push_str(&format!("{i},{loss},{lr}\n"));
    }
    let log_path = out_dir.join("train_log.txt");
    fs::write(&log_path, log)?;

    for w in &report.warnings {
        eprintln!("gmseg: warning: {w}");
    }
    for (step, j) in &report.validations {
        println!("validation: step {step} mean J = {j:.4}");
    }
    if let Some(last) = report.losses.last() {
        println!("train: {} steps, final loss {last:.4}", report.losses.len());
    }
    println!("train: log at {}", log_path.display());
    println!("train: checkpoints: {}", report.checkpoints.join(", "));
    Ok(())
}

trait GenSeed {
    fn gen_seed(&mut self) -> u64;
}

impl GenSeed for gmseg_core::Rng {
    fn gen_seed(&mut self) -> u64 {
        use gmseg_core::rand::Rng as _;
        self.gen()
    }
}

// ---- infer --------------------------------------------------------------------

pub fn infer(cfg: &RunConfig) -> Result<()> {
    match parse_dtype(cfg)? {
        Dtype::F32 => infer_typed::<f32>(cfg),
        Dtype::F64 => infer_typed::<f64>(cfg),
    }
}

fn infer_typed<T: Real>(cfg: &RunConfig) -> Result<()> {
    let model = load_model::<T>(cfg, true)?;
    let icfg = cfg.infer_config()?;
    let data_root = cfg.path("infer.data");
    let out_root = cfg.path("infer.out");
    let dump_probs = cfg.bool("infer.dump_probs")?;
    let mode = cfg.mode()?;
    let videos = dataset::list_videos(&data_root)?;
    if videos.is_empty() {
        return Err(Error::Config(format!("no videos under {}", data_root.display())).into());
    }
    for name in &videos {
        let video = dataset::load_video(&data_root, name, mode == Mode::OVos)?;
        let masks_dir = out_root.join(name).join("masks");
        fs::create_dir_all(&masks_dir)?;
        match mode {
            Mode::OVos => {
                let out = run_ovos_sequence(&model, &video.clip.frames, &video.clip.masks[0], &icfg)?;
                for (t, mask) in out.masks.iter().enumerate() {
                    dataset::save_mask(&masks_dir.join(dataset::frame_name(t)), mask)?;
                }
                if dump_probs {
                    for inst in &out.instances {
                        let dir = out_root.join(name).join("probs").join(format!("{}", inst.id));
                        fs::create_dir_all(&dir)?;
                        for (off, prob) in inst.probs.iter().enumerate() {
                            let gray: Vec<u8> = prob
                                .data()
                                .iter()
                                .map(|&v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
                                .collect();
                            let (h, w) = prob.dims2()?;
                            dataset::save_mask(
                                &dir.join(dataset::frame_name(off + 1)),
                                &Mask::from_data(h, w, gray)?,
                            )?;
                        }
                    }
                }
            }
            Mode::ZVos => {
                let masks = run_zvos_sequence(&model, &video.clip.frames, &icfg)?;
                for (t, mask) in masks.iter().enumerate() {
                    dataset::save_mask(&masks_dir.join(dataset::frame_name(t)), mask)?;
                }
            }
        }
        println!("infer: {name} done ({} frames)", video.clip.len());
    }
    println!("infer: predictions under {}", out_root.display());
    Ok(())
}

// ---- eval ---------------------------------------------------------------------

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let pred_root = cfg.path("eval.pred");
    let gt_root = cfg.path("eval.gt");
    let out_dir = cfg.path("eval.out");
    let tol = match cfg.usize("eval.tolerance")? {
        0 => None,
        t => Some(t),
    };
    let skip_first = cfg.bool("eval.skip_first")?;

    let mut report = MetricReport::default();
    let videos = dataset::list_videos(&gt_root)?;
    if videos.is_empty() {
        return Err(Error::Config(format!("no videos under {}", gt_root.display())).into());
    }
    for name in &videos {
        let gt = dataset::load_video(&gt_root, name, true)?;
        if !pred_root.join(name).is_dir() {
            return Err(Error::Data(format!("prediction for video `{name}` is missing")).into());
        }
        let pred_masks = dataset::load_masks(&pred_root, name)?;
        let common = gt.clip.len().min(pred_masks.len());
        let start = usize::from(skip_first);
        for &id in &gt.clip.instance_ids {
            let mut frames = Vec::new();
            let mut j = Vec::new();
            let mut f = Vec::new();
            for t in start..common {
                let pm = Mask::from_data(
                    pred_masks[t].h,
                    pred_masks[t].w,
                    pred_masks[t].binary(id),
                )?;
                let gm = Mask::from_data(
                    gt.clip.masks[t].h,
                    gt.clip.masks[t].w,
                    gt.clip.masks[t].binary(id),
                )?;
                frames.push(t);
                j.push(region_similarity(&pm, &gm)?);
                f.push(boundary_f(&pm, &gm, tol)?);
            }
            if !frames.is_empty() {
                report.push(SequenceMetrics {
                    name: format!("{name}_{id}"),
                    frames,
                    j,
                    f,
                });
            }
        }
    }

    let table = report.table()?;
    print!("{table}");
    println!("eval: mean J = {:.4}", report.mean_j());
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("report.txt"), &table)?;
    fs::write(out_dir.join("report.kv"), report.key_values()?)?;
    println!("eval: report under {}", out_dir.display());
    Ok(())
}

// ---- gradcheck -----------------------------------------------------------------

pub fn gradcheck(_cfg: &RunConfig) -> Result<()> {
    let report = gmseg_core::gradcheck::full_suite();
    for line in report.lines() {
        println!("{line}");
    }
    if report.all_passed() {
        println!("gradcheck: all {} checks passed", report.checks.len());
        Ok(())
    } else {
        Err(Error::Data("gradient suite has failures".into()).into())
    }
}

// ---- plot ----------------------------------------------------------------------

pub fn plot(cfg: &RunConfig) -> Result<()> {
    let out_dir = cfg.path("plot.out");
    fs::create_dir_all(&out_dir)?;
    let log_path = cfg.path("plot.log");
    let kv_path = cfg.path("plot.kv");
    let mut rendered = 0;
    if log_path.is_file() {
        let text = fs::read_to_string(&log_path)?;
        let points = plot::parse_train_log(&text)?;
        let out = out_dir.join("loss.svg");
        plot::render_loss_curve(&points, &out)?;
        println!("plot: {}", out.display());
        rendered += 1;
    }
    if kv_path.is_file() {
        let text = fs::read_to_string(&kv_path)?;
        let series = plot::parse_j_series(&text)?;
        let out = out_dir.join("j_series.svg");
        plot::render_j_series(&series, &out)?;
        println!("plot: {}", out.display());
        rendered += 1;
    }
    if rendered == 0 {
        return Err(Error::Config(format!(
            "nothing to plot: neither {} nor {} exists",
            log_path.display(),
            kv_path.display()
        ))
        .into());
    }
    Ok(())
}

/// Common path helper for commands that print file output locations.
#[allow(dead_code)]
fn display(p: &Path) -> String {
    p.display().to_string()
}
