//! Synthetic video generation: the shape world and affine clip synthesis
//! from a single annotated image.
//!
//! Both generators are pure functions of (inputs, seed): the same spec and
//! seed produce bit-identical clips.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::clip::{ImageBuf, Mask, VideoClip};
// f64 math via num-traits so the crate builds without std (libm backs it)
#[allow(unused_imports)]
use num_traits::Float as _;
use crate::error::{Error, Result};

/// Per-frame affine transform, anchored at the canvas center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub rotation_deg: f64,
    pub scale: f64,
    /// Translation in pixels (dx, dy).
    pub translate: (f64, f64),
    pub shear_deg: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        rotation_deg: 0.0,
        scale: 1.0,
        translate: (0.0, 0.0),
        shear_deg: 0.0,
    };

    /// Linear interpolation from identity, used to drift smoothly over a clip.
    pub fn fraction(&self, t: f64) -> AffineParams {
        AffineParams {
            rotation_deg: self.rotation_deg * t,
            scale: 1.0 + (self.scale - 1.0) * t,
            translate: (self.translate.0 * t, self.translate.1 * t),
            shear_deg: self.shear_deg * t,
        }
    }

    /// Forward 2x2 matrix (rotation . shear . scale).
    fn matrix(&self) -> [f64; 4] {
        let th = self.rotation_deg.to_radians();
        let (sin, cos) = (th.sin(), th.cos());
        let sh = self.shear_deg.to_radians().tan();
        let s = self.scale;
        // R . Sh . S with Sh = [[1, sh], [0, 1]]
        [s * cos, s * (cos * sh - sin), s * sin, s * (sin * sh + cos)]
    }
}

/// Sampling ranges for simulated-clip synthesis; rotation/shear in degrees,
/// translation as a fraction of the canvas side.
#[derive(Debug, Clone, Copy)]
pub struct AffineRanges {
    pub rotation: f64,
    pub scale: (f64, f64),
    pub translate_frac: f64,
    pub shear: f64,
}

impl Default for AffineRanges {
    fn default() -> Self {
        AffineRanges {
            rotation: 15.0,
            scale: (0.9, 1.1),
            translate_frac: 0.10,
            shear: 10.0,
        }
    }
}

/// Applies an affine warp: bilinear for the image, nearest-neighbor for the
/// mask, both through the same inverse mapping. Out-of-canvas samples are
/// black / background.
pub fn apply_affine(img: &ImageBuf, mask: &Mask, params: &AffineParams) -> (ImageBuf, Mask) {
    let (h, w) = (img.h, img.w);
    let m = params.matrix();
    let det = m[0] * m[3] - m[1] * m[2];
    // degenerate scale collapses everything to background
    if det.abs() < 1e-12 {
        return (ImageBuf::new(h, w), Mask::new(h, w));
    }
    let inv = [m[3] / det, -m[1] / det, -m[2] / det, m[0] / det];
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (tx, ty) = params.translate;

    let mut out_img = ImageBuf::new(h, w);
    let mut out_mask = Mask::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx - tx;
            let dy = y as f64 - cy - ty;
            let sx = inv[0] * dx + inv[1] * dy + cx;
            let sy = inv[2] * dx + inv[3] * dy + cy;

            // nearest for the mask
            let nx = sx.round() as isize;
            let ny = sy.round() as isize;
            if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                out_mask.set(y, x, mask.get(ny as usize, nx as usize));
            }

            // bilinear for the image, missing taps count as black
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let mut rgb = [0.0f64; 3];
            for (iy, wy) in [(y0 as isize, 1.0 - fy), (y0 as isize + 1, fy)] {
                if iy < 0 || iy as usize >= h {
                    continue;
                }
                for (ix, wx) in [(x0 as isize, 1.0 - fx), (x0 as isize + 1, fx)] {
                    if ix < 0 || ix as usize >= w {
                        continue;
                    }
                    let p = img.pixel(iy as usize, ix as usize);
                    let wgt = wy * wx;
                    for c in 0..3 {
                        rgb[c] += wgt * p[c] as f64;
                    }
                }
            }
            out_img.set_pixel(
                y,
                x,
                [
                    rgb[0].round().clamp(0.0, 255.0) as u8,
                    rgb[1].round().clamp(0.0, 255.0) as u8,
                    rgb[2].round().clamp(0.0, 255.0) as u8,
                ],
            );
        }
    }
    (out_img, out_mask)
}

/// Simulates a clip from one annotated still by drifting an affine transform
/// from identity to a sampled endpoint over `n_frames`.
pub fn synthesize_clip_from_image<R: rand::Rng>(
    img: &ImageBuf,
    mask: &Mask,
    n_frames: usize,
    ranges: &AffineRanges,
    rng: &mut R,
) -> Result<VideoClip> {
    if (img.h, img.w) != (mask.h, mask.w) {
        return Err(Error::Data(format!(
            "image {}x{} and mask {}x{} are not aligned",
            img.h, img.w, mask.h, mask.w
        )));
    }
    let ids = mask.present_ids();
    if ids.is_empty() {
        return Err(Error::Data("mask has no foreground instance".into()));
    }
    if n_frames == 0 {
        return Err(Error::Data("clip needs at least one frame".into()));
    }
    let endpoint = AffineParams {
        rotation_deg: rng.gen_range(-ranges.rotation..=ranges.rotation),
        scale: rng.gen_range(ranges.scale.0..=ranges.scale.1),
        translate: (
            rng.gen_range(-ranges.translate_frac..=ranges.translate_frac) * img.w as f64,
            rng.gen_range(-ranges.translate_frac..=ranges.translate_frac) * img.h as f64,
        ),
        shear_deg: rng.gen_range(-ranges.shear..=ranges.shear),
    };
    synthesize_clip_with_endpoint(img, mask, n_frames, &endpoint)
}

/// Deterministic variant with an explicit endpoint transform.
pub fn synthesize_clip_with_endpoint(
    img: &ImageBuf,
    mask: &Mask,
    n_frames: usize,
    endpoint: &AffineParams,
) -> Result<VideoClip> {
    let ids = mask.present_ids();
    if ids.is_empty() {
        return Err(Error::Data("mask has no foreground instance".into()));
    }
    let mut frames = Vec::with_capacity(n_frames);
    let mut masks = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let frac = if n_frames == 1 {
            0.0
        } else {
            t as f64 / (n_frames - 1) as f64
        };
        let params = endpoint.fraction(frac);
        let (f, m) = apply_affine(img, mask, &params);
        frames.push(f);
        masks.push(m);
    }
    Ok(VideoClip {
        frames,
        masks,
        instance_ids: ids,
    })
}

// ---- shape world ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Rectangle,
    Triangle,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Triangle => "triangle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(ShapeKind::Disk),
            "rectangle" => Ok(ShapeKind::Rectangle),
            "triangle" => Ok(ShapeKind::Triangle),
            other => Err(Error::Config(format!(
                "unknown shape kind `{other}` (disk|rectangle|triangle)"
            ))),
        }
    }
}

/// Motion program for one instance.
#[derive(Debug, Clone, Copy)]
pub struct InstanceSpec {
    pub kind: ShapeKind,
    /// Pixels per frame (vx, vy).
    pub velocity: (f64, f64),
    /// Degrees per frame.
    pub angular_velocity: f64,
    /// Multiplicative size change per frame (0.01 grows 1% per frame).
    pub scale_drift: f64,
}

/// Deterministic synthetic-world description; spawn positions, sizes and
/// colors derive from the seed.
#[derive(Debug, Clone)]
pub struct ShapeWorldSpec {
    pub canvas: usize,
    pub frames: usize,
    pub instances: Vec<InstanceSpec>,
    pub occluder: bool,
    pub seed: u64,
}

impl ShapeWorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.canvas < 16 {
            return Err(Error::Config("canvas must be at least 16".into()));
        }
        if self.frames == 0 {
            return Err(Error::Config("frames must be at least 1".into()));
        }
        if self.instances.is_empty() || self.instances.len() > 3 {
            return Err(Error::Config(format!(
                "instance count must be 1..=3, got {}",
                self.instances.len()
            )));
        }
        Ok(())
    }

    /// Random world: kinds and motion drawn from documented desk-scale ranges.
    pub fn sample<R: rand::Rng>(
        rng: &mut R,
        canvas: usize,
        frames: usize,
        n_instances: usize,
        occluder: bool,
    ) -> Self {
        let kinds = [ShapeKind::Disk, ShapeKind::Rectangle, ShapeKind::Triangle];
        let instances = (0..n_instances)
            .map(|_| {
                let speed = rng.gen_range(0.3..2.0);
                let dir = rng.gen_range(0.0..core::f64::consts::TAU);
                InstanceSpec {
                    kind: kinds[rng.gen_range(0..kinds.len())],
                    velocity: (speed * dir.cos(), speed * dir.sin()),
                    angular_velocity: rng.gen_range(-6.0..6.0),
                    scale_drift: rng.gen_range(-0.01..0.01),
                }
            })
            .collect();
        ShapeWorldSpec {
            canvas,
            frames,
            instances,
            occluder,
            seed: rng.gen(),
        }
    }

    /// Plain-text `key = value` form (the spec-file format).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("canvas = {}\n", self.canvas));
        s.push_str(&format!("frames = {}\n", self.frames));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("occluder = {}\n", self.occluder));
        for (i, inst) in self.instances.iter().enumerate() {
            let n = i + 1;
            s.push_str(&format!("instance.{n}.kind = {}\n", inst.kind.name()));
            s.push_str(&format!(
                "instance.{n}.velocity = {},{}\n",
                inst.velocity.0, inst.velocity.1
            ));
            s.push_str(&format!(
                "instance.{n}.angular_velocity = {}\n",
                inst.angular_velocity
            ));
            s.push_str(&format!("instance.{n}.scale_drift = {}\n", inst.scale_drift));
        }
        s
    }

    /// Parses the `key = value` spec-file format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut canvas = 64usize;
        let mut frames = 8usize;
        let mut seed = 0u64;
        let mut occluder = false;
        let mut inst: Vec<InstanceSpec> = Vec::new();
        let ensure = |inst: &mut Vec<InstanceSpec>, n: usize| -> Result<()> {
            if n == 0 || n > 3 {
                return Err(Error::Config(format!("instance index {n} out of 1..=3")));
            }
            while inst.len() < n {
                inst.push(InstanceSpec {
                    kind: ShapeKind::Disk,
                    velocity: (0.0, 0.0),
                    angular_velocity: 0.0,
                    scale_drift: 0.0,
                });
            }
            Ok(())
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Config(format!("line {}: bad {what} `{value}`", lineno + 1));
            match key {
                "canvas" => canvas = value.parse().map_err(|_| bad("canvas"))?,
                "frames" => frames = value.parse().map_err(|_| bad("frames"))?,
                "seed" => seed = value.parse().map_err(|_| bad("seed"))?,
                "occluder" => occluder = value.parse().map_err(|_| bad("occluder"))?,
                _ => {
                    let rest = key.strip_prefix("instance.").ok_or_else(|| {
                        Error::Config(format!("line {}: unknown key `{key}`", lineno + 1))
                    })?;
                    let (idx, field) = rest.split_once('.').ok_or_else(|| {
                        Error::Config(format!("line {}: unknown key `{key}`", lineno + 1))
                    })?;
                    let n: usize = idx.parse().map_err(|_| bad("instance index"))?;
                    ensure(&mut inst, n)?;
                    let slot = &mut inst[n - 1];
                    match field {
                        "kind" => slot.kind = ShapeKind::parse(value)?,
                        "velocity" => {
                            let (vx, vy) = value.split_once(',').ok_or_else(|| bad("velocity"))?;
                            slot.velocity = (
                                vx.trim().parse().map_err(|_| bad("velocity"))?,
                                vy.trim().parse().map_err(|_| bad("velocity"))?,
                            );
                        }
                        "angular_velocity" => {
                            slot.angular_velocity = value.parse().map_err(|_| bad("angular_velocity"))?
                        }
                        "scale_drift" => {
                            slot.scale_drift = value.parse().map_err(|_| bad("scale_drift"))?
                        }
                        other => {
                            return Err(Error::Config(format!(
                                "line {}: unknown instance field `{other}`",
                                lineno + 1
                            )))
                        }
                    }
                }
            }
        }
        if inst.is_empty() {
            inst.push(InstanceSpec {
                kind: ShapeKind::Disk,
                velocity: (0.0, 0.0),
                angular_velocity: 0.0,
                scale_drift: 0.0,
            });
        }
        let spec = ShapeWorldSpec {
            canvas,
            frames,
            instances: inst,
            occluder,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

struct ShapeState {
    kind: ShapeKind,
    center: (f64, f64),
    size: f64,
    angle_deg: f64,
    color: [u8; 3],
}

fn inside(kind: ShapeKind, state: &ShapeState, x: f64, y: f64) -> bool {
    let dx = x - state.center.0;
    let dy = y - state.center.1;
    match kind {
        ShapeKind::Disk => dx * dx + dy * dy <= state.size * state.size,
        ShapeKind::Rectangle => {
            let th = -state.angle_deg.to_radians();
            let (sin, cos) = (th.sin(), th.cos());
            let lx = cos * dx - sin * dy;
            let ly = sin * dx + cos * dy;
            lx.abs() <= state.size && ly.abs() <= state.size * 0.6
        }
        ShapeKind::Triangle => {
            // equilateral triangle with circumradius `size`
            let base = state.angle_deg.to_radians();
            let mut vx = [0.0f64; 3];
            let mut vy = [0.0f64; 3];
            for i in 0..3 {
                let a = base + core::f64::consts::FRAC_PI_2 + i as f64 * core::f64::consts::TAU / 3.0;
                vx[i] = state.center.0 + state.size * a.cos();
                vy[i] = state.center.1 + state.size * a.sin();
            }
            let sign = |ax: f64, ay: f64, bx: f64, by: f64| {
                (x - bx) * (ay - by) - (ax - bx) * (y - by)
            };
            let d1 = sign(vx[0], vy[0], vx[1], vy[1]);
            let d2 = sign(vx[1], vy[1], vx[2], vy[2]);
            let d3 = sign(vx[2], vy[2], vx[0], vy[0]);
            let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
            let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
            !(has_neg && has_pos)
        }
    }
}

fn color_distance(a: [u8; 3], b: [u8; 3]) -> i32 {
    (0..3).map(|i| (a[i] as i32 - b[i] as i32).abs()).sum()
}

/// Renders the spec into frames with analytic ground-truth masks. Instances
/// draw in id order, so a later id occludes an earlier one; the optional
/// occluder draws last and labels as background.
pub fn generate_shape_world(spec: &ShapeWorldSpec) -> Result<VideoClip> {
    spec.validate()?;
    let mut rng = crate::rng_from_seed(spec.seed);
    let side = spec.canvas as f64;

    let background = [
        rng.gen_range(0..=70u8),
        rng.gen_range(0..=70u8),
        rng.gen_range(0..=70u8),
    ];
    let mut colors: Vec<[u8; 3]> = Vec::new();
    let pick_color = |rng: &mut crate::Rng, colors: &[[u8; 3]]| -> [u8; 3] {
        for _ in 0..200 {
            let c = [
                rng.gen_range(60..=255u8),
                rng.gen_range(60..=255u8),
                rng.gen_range(60..=255u8),
            ];
            let ok = color_distance(c, background) >= 150
                && colors.iter().all(|&o| color_distance(c, o) >= 120);
            if ok {
                return c;
            }
        }
        [255, 255, 255]
    };

    let mut centers: Vec<(f64, f64)> = Vec::new();
    let mut states: Vec<ShapeState> = Vec::new();
    for inst in &spec.instances {
        let mut center = (0.0, 0.0);
        for _ in 0..200 {
            center = (
                rng.gen_range(0.25 * side..0.75 * side),
                rng.gen_range(0.25 * side..0.75 * side),
            );
            if centers
                .iter()
                .all(|c| (c.0 - center.0).hypot(c.1 - center.1) >= 0.3 * side)
            {
                break;
            }
        }
        centers.push(center);
        let color = pick_color(&mut rng, &colors);
        colors.push(color);
        states.push(ShapeState {
            kind: inst.kind,
            center,
            size: rng.gen_range(0.12 * side..0.2 * side),
            angle_deg: rng.gen_range(0.0..360.0),
            color,
        });
    }
    let occluder = spec.occluder.then(|| {
        let color = pick_color(&mut rng, &colors);
        let speed = rng.gen_range(0.5..2.0);
        let dir = rng.gen_range(0.0..core::f64::consts::TAU);
        (
            ShapeState {
                kind: ShapeKind::Disk,
                center: (
                    rng.gen_range(0.2 * side..0.8 * side),
                    rng.gen_range(0.2 * side..0.8 * side),
                ),
                size: rng.gen_range(0.08 * side..0.14 * side),
                angle_deg: 0.0,
                color,
            },
            (speed * dir.cos(), speed * dir.sin()),
        )
    });

    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let tf = t as f64;
        let mut img = ImageBuf::new(spec.canvas, spec.canvas);
        let mut mask = Mask::new(spec.canvas, spec.canvas);
        for y in 0..spec.canvas {
            for x in 0..spec.canvas {
                img.set_pixel(y, x, background);
            }
        }
        for (i, (inst, base)) in spec.instances.iter().zip(&states).enumerate() {
            let id = (i + 1) as u8;
            let state = ShapeState {
                kind: base.kind,
                center: (
                    base.center.0 + inst.velocity.0 * tf,
                    base.center.1 + inst.velocity.1 * tf,
                ),
                size: base.size * (1.0 + inst.scale_drift).powf(tf),
                angle_deg: base.angle_deg + inst.angular_velocity * tf,
                color: base.color,
            };
            for y in 0..spec.canvas {
                for x in 0..spec.canvas {
                    if inside(state.kind, &state, x as f64, y as f64) {
                        img.set_pixel(y, x, state.color);
                        mask.set(y, x, id);
                    }
                }
            }
        }
        if let Some((base, vel)) = &occluder {
            let state = ShapeState {
                kind: base.kind,
                center: (base.center.0 + vel.0 * tf, base.center.1 + vel.1 * tf),
                size: base.size,
                angle_deg: 0.0,
                color: base.color,
            };
            for y in 0..spec.canvas {
                for x in 0..spec.canvas {
                    if inside(state.kind, &state, x as f64, y as f64) {
                        img.set_pixel(y, x, state.color);
                        mask.set(y, x, 0);
                    }
                }
            }
        }
        if t == 0 {
            for i in 0..spec.instances.len() {
                let id = (i + 1) as u8;
                if mask.count_id(id) == 0 {
                    return Err(Error::Data(format!(
                        "instance {id} spawned with no visible pixels"
                    )));
                }
            }
        }
        frames.push(img);
        masks.push(mask);
    }
    Ok(VideoClip {
        frames,
        masks,
        instance_ids: (1..=spec.instances.len() as u8).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    fn centroid(mask: &Mask, id: u8) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..mask.h {
            for x in 0..mask.w {
                if mask.get(y, x) == id {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1.0;
                }
            }
        }
        (sx / n, sy / n)
    }

    fn still_disk() -> ShapeWorldSpec {
        ShapeWorldSpec {
            canvas: 48,
            frames: 5,
            instances: alloc::vec![InstanceSpec {
                kind: ShapeKind::Disk,
                velocity: (0.0, 0.0),
                angular_velocity: 0.0,
                scale_drift: 0.0,
            }],
            occluder: false,
            seed: 42,
        }
    }

    #[test]
    fn static_disk_mask_constant_across_frames() {
        let clip = generate_shape_world(&still_disk()).unwrap();
        clip.validate().unwrap();
        for m in &clip.masks[1..] {
            assert_eq!(m, &clip.masks[0]);
        }
    }

    #[test]
    fn moving_disk_centroid_tracks_velocity() {
        let mut spec = still_disk();
        spec.instances[0].velocity = (2.0, 0.0);
        let clip = generate_shape_world(&spec).unwrap();
        let c0 = centroid(&clip.masks[0], 1);
        for t in 1..clip.len() {
            let ct = centroid(&clip.masks[t], 1);
            assert!((ct.0 - c0.0 - 2.0 * t as f64).abs() < 0.35, "frame {t}: {ct:?}");
            assert!((ct.1 - c0.1).abs() < 0.35);
        }
    }

    #[test]
    fn same_seed_same_clip() {
        let spec = ShapeWorldSpec {
            canvas: 32,
            frames: 4,
            instances: alloc::vec![
                InstanceSpec {
                    kind: ShapeKind::Rectangle,
                    velocity: (1.0, -0.5),
                    angular_velocity: 3.0,
                    scale_drift: 0.005,
                },
                InstanceSpec {
                    kind: ShapeKind::Triangle,
                    velocity: (-0.5, 1.0),
                    angular_velocity: -2.0,
                    scale_drift: 0.0,
                },
            ],
            occluder: true,
            seed: 7,
        };
        let a = generate_shape_world(&spec).unwrap();
        let b = generate_shape_world(&spec).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.masks, b.masks);
    }

    #[test]
    fn spec_text_roundtrip() {
        let spec = ShapeWorldSpec {
            canvas: 64,
            frames: 6,
            instances: alloc::vec![InstanceSpec {
                kind: ShapeKind::Triangle,
                velocity: (1.5, 0.25),
                angular_velocity: -4.0,
                scale_drift: 0.01,
            }],
            occluder: true,
            seed: 99,
        };
        let parsed = ShapeWorldSpec::parse(&spec.to_text()).unwrap();
        assert_eq!(parsed.canvas, 64);
        assert_eq!(parsed.frames, 6);
        assert_eq!(parsed.seed, 99);
        assert!(parsed.occluder);
        assert_eq!(parsed.instances.len(), 1);
        assert_eq!(parsed.instances[0].kind, ShapeKind::Triangle);
        assert_eq!(parsed.instances[0].velocity, (1.5, 0.25));
    }

    #[test]
    fn unknown_spec_key_is_config_error() {
        assert!(matches!(
            ShapeWorldSpec::parse("bogus = 1"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn identity_endpoint_clones_the_input() {
        let spec = still_disk();
        let clip = generate_shape_world(&spec).unwrap();
        let out = synthesize_clip_with_endpoint(
            &clip.frames[0],
            &clip.masks[0],
            4,
            &AffineParams::IDENTITY,
        )
        .unwrap();
        for t in 0..4 {
            assert_eq!(out.frames[t], clip.frames[0]);
            assert_eq!(out.masks[t], clip.masks[0]);
        }
    }

    #[test]
    fn pure_translation_shifts_centroid_and_preserves_pixels() {
        // hand-built disk far from the right border so every shift stays
        // inside the canvas
        let mut img = ImageBuf::new(48, 48);
        let mut mask = Mask::new(48, 48);
        for y in 0..48usize {
            for x in 0..48usize {
                let (dy, dx) = (y as f64 - 20.0, x as f64 - 12.0);
                if dy * dy + dx * dx <= 36.0 {
                    img.set_pixel(y, x, [200, 40, 40]);
                    mask.set(y, x, 1);
                }
            }
        }
        let n = 4;
        let endpoint = AffineParams {
            translate: (5.0 * (n - 1) as f64, 0.0),
            ..AffineParams::IDENTITY
        };
        let out = synthesize_clip_with_endpoint(&img, &mask, n, &endpoint).unwrap();
        let c0 = centroid(&out.masks[0], 1);
        let count0 = out.masks[0].count_id(1);
        for t in 1..n {
            let ct = centroid(&out.masks[t], 1);
            assert!((ct.0 - c0.0 - 5.0 * t as f64).abs() < 1e-9, "frame {t}");
            assert!((ct.1 - c0.1).abs() < 1e-9);
            assert_eq!(out.masks[t].count_id(1), count0, "rigid translation keeps pixel count");
        }
    }

    #[test]
    fn empty_mask_is_data_error() {
        let img = ImageBuf::new(8, 8);
        let mask = Mask::new(8, 8);
        let mut rng = rng_from_seed(1);
        assert!(matches!(
            synthesize_clip_from_image(&img, &mask, 3, &AffineRanges::default(), &mut rng),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn sampled_world_is_valid() {
        let mut rng = rng_from_seed(5);
        for i in 0..5 {
            let spec = ShapeWorldSpec::sample(&mut rng, 64, 6, 1 + i % 3, i % 2 == 0);
            let clip = generate_shape_world(&spec).unwrap();
            clip.validate().unwrap();
        }
    }
}
