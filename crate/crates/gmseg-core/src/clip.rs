//! In-memory video clip types: RGB frames, instance-id masks and the
//! conversions into network tensors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// 8-bit RGB image, row-major, 3 interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuf {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl ImageBuf {
    pub fn new(h: usize, w: usize) -> Self {
        ImageBuf {
            h,
            w,
            data: vec![0; h * w * 3],
        }
    }

    pub fn from_data(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w * 3 {
            return Err(Error::Data(format!(
                "rgb buffer for {h}x{w} needs {} bytes, got {}",
                h * w * 3,
                data.len()
            )));
        }
        Ok(ImageBuf { h, w, data })
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.w + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.w + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Instance-id map; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn from_data(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Data(format!(
                "mask buffer for {h}x{w} needs {} bytes, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(Mask { h, w, data })
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, id: u8) {
        self.data[y * self.w + x] = id;
    }

    /// Sorted unique nonzero ids present in the mask.
    pub fn present_ids(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (1..=255u8).filter(|&id| seen[id as usize]).collect()
    }

    pub fn count_id(&self, id: u8) -> usize {
        self.data.iter().filter(|&&v| v == id).count()
    }

    /// Binary view of one instance as bytes in {0, 1}.
    pub fn binary(&self, id: u8) -> Vec<u8> {
        self.data.iter().map(|&v| u8::from(v == id)).collect()
    }

    /// Binary view of the whole foreground (any nonzero id).
    pub fn binary_foreground(&self) -> Vec<u8> {
        self.data.iter().map(|&v| u8::from(v != 0)).collect()
    }
}

/// Ordered frames with aligned instance masks; the unit of training and
/// inference.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub frames: Vec<ImageBuf>,
    pub masks: Vec<Mask>,
    pub instance_ids: Vec<u8>,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks the structural invariants: equal counts, aligned sizes, and
    /// every mask value drawn from the id table plus background.
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.masks.len() {
            return Err(Error::Data(format!(
                "{} frames but {} masks",
                self.frames.len(),
                self.masks.len()
            )));
        }
        for (i, (f, m)) in self.frames.iter().zip(&self.masks).enumerate() {
            if (f.h, f.w) != (m.h, m.w) {
                return Err(Error::Data(format!(
                    "frame {i}: image {}x{} vs mask {}x{}",
                    f.h, f.w, m.h, m.w
                )));
            }
            for &v in &m.data {
                if v != 0 && !self.instance_ids.contains(&v) {
                    return Err(Error::Data(format!(
                        "frame {i}: mask value {v} not in the instance table"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// RGB frame to `[h, w, 3]` tensor in [0, 1].
pub fn frame_to_tensor<T: Real>(img: &ImageBuf) -> Tensor<T> {
    let data: Vec<T> = img
        .data
        .iter()
        .map(|&b| T::from_f64(b as f64 / 255.0))
        .collect();
    Tensor::from_vec(&[img.h, img.w, 3], data).expect("frame buffer length invariant")
}

/// Binary instance indicator as a `[h, w, 1]` tensor in {0, 1}.
pub fn mask_to_binary_tensor<T: Real>(mask: &Mask, id: u8) -> Tensor<T> {
    let data: Vec<T> = mask
        .data
        .iter()
        .map(|&v| if v == id { T::one() } else { T::zero() })
        .collect();
    Tensor::from_vec(&[mask.h, mask.w, 1], data).expect("mask buffer length invariant")
}

/// Whole-foreground indicator as a `[h, w, 1]` tensor in {0, 1}.
pub fn mask_to_foreground_tensor<T: Real>(mask: &Mask) -> Tensor<T> {
    let data: Vec<T> = mask
        .data
        .iter()
        .map(|&v| if v != 0 { T::one() } else { T::zero() })
        .collect();
    Tensor::from_vec(&[mask.h, mask.w, 1], data).expect("mask buffer length invariant")
}

/// Probability map `[h, w]` or `[h, w, 1]` back to a thresholded mask.
pub fn prob_to_mask<T: Real>(prob: &Tensor<T>, threshold: f64, id: u8) -> Result<Mask> {
    let (h, w) = match prob.shape() {
        [h, w] => (*h, *w),
        [h, w, 1] => (*h, *w),
        other => {
            return Err(Error::Shape(format!(
                "prob_to_mask expects [h, w] or [h, w, 1], got {:?}",
                other
            )))
        }
    };
    let data: Vec<u8> = prob
        .data()
        .iter()
        .map(|&p| if p.as_f64() > threshold { id } else { 0 })
        .collect();
    Mask::from_data(h, w, data)
}
