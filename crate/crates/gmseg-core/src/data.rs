//! Clip sampling, label shuffling and train-time augmentation.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom as _;

use crate::clip::{ImageBuf, Mask, VideoClip};
// f64 math via num-traits so the crate builds without std (libm backs it)
#[allow(unused_imports)]
use num_traits::Float as _;
use crate::error::{Error, Result};
use crate::synth::{apply_affine, AffineParams};

/// Samples `n_support + 1` temporally ordered frames with consecutive gaps in
/// `[1, max_skip]`; the first `n_support` form the support set, the last one
/// is the query.
pub fn sample_training_clip<R: rand::Rng>(
    video: &VideoClip,
    n_support: usize,
    max_skip: usize,
    rng: &mut R,
) -> Result<VideoClip> {
    let total = n_support + 1;
    let len = video.len();
    if len < total {
        return Err(Error::Data(format!(
            "video has {len} frames, need at least {total}"
        )));
    }
    if max_skip == 0 {
        return Err(Error::Config("max_skip must be at least 1".into()));
    }
    let min_span = total - 1;
    let start = rng.gen_range(0..=len - 1 - min_span);
    let mut indices = Vec::with_capacity(total);
    indices.push(start);
    let mut cur = start;
    for g in 0..total - 1 {
        let gaps_after = total - 2 - g;
        let cap = (len - 1 - cur - gaps_after).min(max_skip);
        let gap = rng.gen_range(1..=cap);
        cur += gap;
        indices.push(cur);
    }
    Ok(VideoClip {
        frames: indices.iter().map(|&i| video.frames[i].clone()).collect(),
        masks: indices.iter().map(|&i| video.masks[i].clone()).collect(),
        instance_ids: video.instance_ids.clone(),
    })
}

/// Applies an explicit id permutation (old id at position i of the table
/// becomes `perm[i]`) to every mask and the id table.
pub fn apply_label_permutation(clip: &VideoClip, perm: &[u8]) -> Result<VideoClip> {
    if perm.len() != clip.instance_ids.len() {
        return Err(Error::Usage(format!(
            "permutation length {} != instance count {}",
            perm.len(),
            clip.instance_ids.len()
        )));
    }
    let mut table = [0u8; 256];
    for i in 0..256 {
        table[i] = i as u8;
    }
    for (old, new) in clip.instance_ids.iter().zip(perm) {
        table[*old as usize] = *new;
    }
    let masks = clip
        .masks
        .iter()
        .map(|m| Mask {
            h: m.h,
            w: m.w,
            data: m.data.iter().map(|&v| table[v as usize]).collect(),
        })
        .collect();
    Ok(VideoClip {
        frames: clip.frames.clone(),
        masks,
        instance_ids: perm.to_vec(),
    })
}

/// Uniformly random permutation of the instance ids, applied consistently to
/// every frame's mask and to the id table.
pub fn shuffle_labels<R: rand::Rng>(clip: &VideoClip, rng: &mut R) -> Result<VideoClip> {
    if clip.instance_ids.is_empty() {
        return Err(Error::Usage("shuffle_labels on a clip with no instances".into()));
    }
    let mut perm = clip.instance_ids.clone();
    perm.shuffle(rng);
    apply_label_permutation(clip, &perm)
}

/// Train-time augmentation magnitudes.
#[derive(Debug, Clone, Copy)]
pub struct AugmentConfig {
    pub hflip: bool,
    /// Max |rotation| in degrees.
    pub rotation_deg: f64,
    /// Max |saturation| change as a fraction.
    pub saturation: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip: true,
            rotation_deg: 10.0,
            saturation: 0.2,
        }
    }
}

fn hflip_frame(img: &ImageBuf) -> ImageBuf {
    let mut out = ImageBuf::new(img.h, img.w);
    for y in 0..img.h {
        for x in 0..img.w {
            out.set_pixel(y, x, img.pixel(y, img.w - 1 - x));
        }
    }
    out
}

fn hflip_mask(mask: &Mask) -> Mask {
    let mut out = Mask::new(mask.h, mask.w);
    for y in 0..mask.h {
        for x in 0..mask.w {
            out.set(y, x, mask.get(y, mask.w - 1 - x));
        }
    }
    out
}

fn saturate(img: &ImageBuf, factor: f64) -> ImageBuf {
    let mut out = ImageBuf::new(img.h, img.w);
    for y in 0..img.h {
        for x in 0..img.w {
            let p = img.pixel(y, x);
            let gray = (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0;
            let mut q = [0u8; 3];
            for c in 0..3 {
                q[c] = (gray + (p[c] as f64 - gray) * factor).round().clamp(0.0, 255.0) as u8;
            }
            out.set_pixel(y, x, q);
        }
    }
    out
}

/// One augmentation draw per clip, applied identically to every frame so the
/// sequence stays temporally coherent; masks transform alongside frames.
pub fn augment_clip<R: rand::Rng>(
    clip: &VideoClip,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> VideoClip {
    let rot = if cfg.rotation_deg > 0.0 {
        rng.gen_range(-cfg.rotation_deg..=cfg.rotation_deg)
    } else {
        0.0
    };
    let flip = cfg.hflip && rng.gen_bool(0.5);
    let sat = 1.0 + if cfg.saturation > 0.0 {
        rng.gen_range(-cfg.saturation..=cfg.saturation)
    } else {
        0.0
    };

    let params = AffineParams {
        rotation_deg: rot,
        ..AffineParams::IDENTITY
    };
    let mut frames = Vec::with_capacity(clip.len());
    let mut masks = Vec::with_capacity(clip.len());
    for (f, m) in clip.frames.iter().zip(&clip.masks) {
        let (mut fr, mut ma) = if rot != 0.0 {
            apply_affine(f, m, &params)
        } else {
            (f.clone(), m.clone())
        };
        if flip {
            fr = hflip_frame(&fr);
            ma = hflip_mask(&ma);
        }
        if (sat - 1.0).abs() > 1e-12 {
            fr = saturate(&fr, sat);
        }
        frames.push(fr);
        masks.push(ma);
    }
    VideoClip {
        frames,
        masks,
        instance_ids: clip.instance_ids.clone(),
    }
}
