//! Dataset directory IO.
//!
//! Layout: `<root>/<video>/frames/%05d.png` (8-bit RGB) and
//! `<root>/<video>/masks/%05d.png` (8-bit single channel, pixel value =
//! instance id, 0 = background).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gmseg_core::clip::{ImageBuf, Mask, VideoClip};
use gmseg_core::data::sample_training_clip;
use gmseg_core::train::ClipSource;
use gmseg_core::{Error, Rng};

pub fn frame_name(idx: usize) -> String {
    format!("{idx:05}.png")
}

pub fn save_frame(path: &Path, img: &ImageBuf) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.w as u32, img.h as u32, img.data.clone())
        .ok_or_else(|| Error::Data("frame buffer size mismatch".into()))?;
    buf.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    let buf = image::GrayImage::from_raw(mask.w as u32, mask.h as u32, mask.data.clone())
        .ok_or_else(|| Error::Data("mask buffer size mismatch".into()))?;
    buf.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_frame(path: &Path) -> Result<ImageBuf> {
    let img = image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_rgb8();
    Ok(ImageBuf::from_data(
        img.height() as usize,
        img.width() as usize,
        img.into_raw(),
    )?)
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path)
        .with_context(|| format!("reading {}", path.display()))?
        .to_luma8();
    Ok(Mask::from_data(
        img.height() as usize,
        img.width() as usize,
        img.into_raw(),
    )?)
}

/// Writes a whole clip under `<root>/<name>/`.
pub fn save_video(root: &Path, name: &str, clip: &VideoClip) -> Result<()> {
    let frames_dir = root.join(name).join("frames");
    let masks_dir = root.join(name).join("masks");
    fs::create_dir_all(&frames_dir)?;
    fs::create_dir_all(&masks_dir)?;
    for (i, (frame, mask)) in clip.frames.iter().zip(&clip.masks).enumerate() {
        save_frame(&frames_dir.join(frame_name(i)), frame)?;
        save_mask(&masks_dir.join(frame_name(i)), mask)?;
    }
    Ok(())
}

fn numbered_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// One loaded video. Masks may be absent (zero-shot inference input).
pub struct LoadedVideo {
    pub name: String,
    pub clip: VideoClip,
    pub has_masks: bool,
}

/// Loads `<root>/<name>`; when masks are required every frame must have one.
pub fn load_video(root: &Path, name: &str, require_masks: bool) -> Result<LoadedVideo> {
    let dir = root.join(name);
    let frame_paths = numbered_pngs(&dir.join("frames"))?;
    if frame_paths.is_empty() {
        return Err(Error::Data(format!("{}: no frames", dir.display())).into());
    }
    let frames: Vec<ImageBuf> = frame_paths.iter().map(|p| load_frame(p)).collect::<Result<_>>()?;
    let masks_dir = dir.join("masks");
    let (masks, has_masks) = if masks_dir.is_dir() {
        let mask_paths = numbered_pngs(&masks_dir)?;
        if require_masks && mask_paths.len() != frame_paths.len() {
            return Err(Error::Data(format!(
                "{}: {} frames but {} masks",
                dir.display(),
                frame_paths.len(),
                mask_paths.len()
            ))
            .into());
        }
        let masks: Vec<Mask> = mask_paths.iter().map(|p| load_mask(p)).collect::<Result<_>>()?;
        let present = !masks.is_empty();
        (masks, present)
    } else {
        (Vec::new(), false)
    };
    if require_masks && !has_masks {
        return Err(Error::Data(format!("{}: masks required but absent", dir.display())).into());
    }
    let masks = if has_masks && masks.len() == frames.len() {
        masks
    } else {
        frames.iter().map(|f| Mask::new(f.h, f.w)).collect()
    };
    let mut ids: Vec<u8> = Vec::new();
    for m in &masks {
        for id in m.present_ids() {
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
    }
    ids.sort_unstable();
    let clip = VideoClip {
        frames,
        masks,
        instance_ids: ids,
    };
    clip.validate()?;
    Ok(LoadedVideo {
        name: name.to_string(),
        clip,
        has_masks,
    })
}

/// Loads only the mask sequence of `<root>/<name>` (prediction layout).
pub fn load_masks(root: &Path, name: &str) -> Result<Vec<Mask>> {
    let dir = root.join(name).join("masks");
    let paths = numbered_pngs(&dir)?;
    if paths.is_empty() {
        return Err(Error::Data(format!("{}: no masks", dir.display())).into());
    }
    paths.iter().map(|p| load_mask(p)).collect()
}

/// Sorted video directory names under a dataset root.
pub fn list_videos(root: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(root).with_context(|| format!("listing {}", root.display()))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry?;
        if entry.path().is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Training-clip source backed by a dataset directory; videos load once.
pub struct DirectorySource {
    videos: Vec<VideoClip>,
    rng: Rng,
}

impl DirectorySource {
    pub fn new(root: &Path, min_len: usize, seed: u64) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Config(format!("dataset root {} is missing", root.display())).into());
        }
        let mut videos = Vec::new();
        for name in list_videos(root)? {
            let v = load_video(root, &name, true)?;
            if v.clip.len() >= min_len && !v.clip.instance_ids.is_empty() {
                videos.push(v.clip);
            }
        }
        if videos.is_empty() {
            return Err(Error::Config(format!(
                "dataset root {} holds no usable videos (need >= {min_len} frames with masks)",
                root.display()
            ))
            .into());
        }
        Ok(DirectorySource {
            videos,
            rng: gmseg_core::rng_from_seed(seed),
        })
    }
}

impl ClipSource for DirectorySource {
    fn next_clip(&mut self, clip_len: usize, max_skip: usize) -> gmseg_core::Result<VideoClip> {
        use gmseg_core::rand::Rng as _;
        let idx = self.rng.gen_range(0..self.videos.len());
        sample_training_clip(&self.videos[idx], clip_len - 1, max_skip, &mut self.rng)
    }
}
