//! DAVIS-style evaluation: region similarity J, boundary accuracy F, and the
//! mean/recall/decay aggregates.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
// f64 math via num-traits so the crate builds without std (libm backs it)
#[allow(unused_imports)]
use num_traits::Float as _;
use crate::clip::Mask;

/// Intersection over union of two binary masks; both-empty counts as a
/// perfect 1.0. Nonzero pixels are foreground.
pub fn region_similarity(pred: &Mask, gt: &Mask) -> Result<f64> {
    if (pred.h, pred.w) != (gt.h, gt.w) {
        return Err(Error::Data(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            pred.h, pred.w, gt.h, gt.w
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let pf = p != 0;
        let gf = g != 0;
        inter += usize::from(pf && gf);
        union += usize::from(pf || gf);
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Foreground pixels with a 4-neighbor in the background (or on the image
/// border), as a boolean map.
fn boundary_map(mask: &Mask) -> Vec<bool> {
    let (h, w) = (mask.h, mask.w);
    let fg = |y: isize, x: isize| -> bool {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            false
        } else {
            mask.data[y as usize * w + x as usize] != 0
        }
    };
    let mut out = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if fg(y, x) && (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1)) {
                out[y as usize * w as usize + x as usize] = true;
            }
        }
    }
    out
}

/// Disk offsets with Euclidean radius <= tol.
fn disk_offsets(tol: usize) -> Vec<(isize, isize)> {
    let t = tol as isize;
    let t2 = (tol * tol) as isize;
    let mut out = Vec::new();
    for dy in -t..=t {
        for dx in -t..=t {
            if dy * dy + dx * dx <= t2 {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Default match tolerance: 0.8% of the image diagonal, rounded up.
pub fn default_boundary_tolerance(h: usize, w: usize) -> usize {
    let diag = ((h * h + w * w) as f64).sqrt();
    (0.008 * diag).ceil().max(1.0) as usize
}

/// Boundary F-measure with dilation-by-tolerance matching. Both boundaries
/// empty gives 1.0; exactly one empty gives 0.0.
pub fn boundary_f(pred: &Mask, gt: &Mask, tolerance: Option<usize>) -> Result<f64> {
    if (pred.h, pred.w) != (gt.h, gt.w) {
        return Err(Error::Data(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            pred.h, pred.w, gt.h, gt.w
        )));
    }
    let (h, w) = (pred.h, pred.w);
    let tol = tolerance.unwrap_or_else(|| default_boundary_tolerance(h, w));
    let pb = boundary_map(pred);
    let gb = boundary_map(gt);
    let np: usize = pb.iter().filter(|&&b| b).count();
    let ng: usize = gb.iter().filter(|&&b| b).count();
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let offsets = disk_offsets(tol);
    let dilate = |map: &[bool]| -> Vec<bool> {
        let mut out = vec![false; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                if !map[y as usize * w + x as usize] {
                    continue;
                }
                for &(dy, dx) in &offsets {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
                        out[ny as usize * w + nx as usize] = true;
                    }
                }
            }
        }
        out
    };
    let gd = dilate(&gb);
    let pd = dilate(&pb);
    let matched_p = pb.iter().zip(&gd).filter(|(&p, &g)| p && g).count();
    let matched_g = gb.iter().zip(&pd).filter(|(&g, &p)| g && p).count();
    let precision = matched_p as f64 / np as f64;
    let recall = matched_g as f64 / ng as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Mean / recall / decay over a per-frame metric series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Fraction of frames strictly above 0.5.
    pub recall: f64,
    /// Mean of the first temporal quartile minus mean of the last.
    pub decay: f64,
}

/// Quartile chunk sizes following the usual array-split convention: the
/// first `n % 4` chunks take one extra element.
fn quartile_bounds(n: usize) -> [(usize, usize); 4] {
    let base = n / 4;
    let extra = n % 4;
    let mut out = [(0, 0); 4];
    let mut start = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        let len = base + usize::from(i < extra);
        *slot = (start, start + len);
        start += len;
    }
    out
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Usage("summarize on an empty series".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let recall = values.iter().filter(|&&v| v > 0.5).count() as f64 / n;
    let bounds = quartile_bounds(values.len());
    let chunk_mean = |(a, b): (usize, usize)| -> Option<f64> {
        if a == b {
            None
        } else {
            Some(values[a..b].iter().sum::<f64>() / (b - a) as f64)
        }
    };
    let first = bounds.iter().filter_map(|&b| chunk_mean(b)).next().unwrap_or(mean);
    let last = bounds.iter().rev().filter_map(|&b| chunk_mean(b)).next().unwrap_or(mean);
    Ok(Summary {
        mean,
        recall,
        decay: first - last,
    })
}

/// Per-(sequence, instance) J and F series.
#[derive(Debug, Clone)]
pub struct SequenceMetrics {
    /// Sequence label, e.g. `video_instance`.
    pub name: String,
    /// Frame indices the series covers (for reporting).
    pub frames: Vec<usize>,
    pub j: Vec<f64>,
    pub f: Vec<f64>,
}

/// Evaluation report over many sequences.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub sequences: Vec<SequenceMetrics>,
}

impl MetricReport {
    pub fn push(&mut self, seq: SequenceMetrics) {
        self.sequences.push(seq);
    }

    /// Mean of per-sequence means.
    pub fn mean_j(&self) -> f64 {
        mean_of(self.sequences.iter().map(|s| mean_of(s.j.iter().copied())))
    }

    pub fn mean_f(&self) -> f64 {
        mean_of(self.sequences.iter().map(|s| mean_of(s.f.iter().copied())))
    }

    pub fn mean_jf(&self) -> f64 {
        (self.mean_j() + self.mean_f()) / 2.0
    }

    fn aggregate(&self, select: impl Fn(&SequenceMetrics) -> &[f64]) -> Result<Summary> {
        let sums: Vec<Summary> = self
            .sequences
            .iter()
            .map(|s| summarize(select(s)))
            .collect::<Result<_>>()?;
        if sums.is_empty() {
            return Err(Error::Usage("report has no sequences".into()));
        }
        let n = sums.len() as f64;
        Ok(Summary {
            mean: sums.iter().map(|s| s.mean).sum::<f64>() / n,
            recall: sums.iter().map(|s| s.recall).sum::<f64>() / n,
            decay: sums.iter().map(|s| s.decay).sum::<f64>() / n,
        })
    }

    /// Plain-text table in the benchmark's Mean/Recall/Decay layout.
    pub fn table(&self) -> Result<String> {
        let j = self.aggregate(|s| &s.j)?;
        let f = self.aggregate(|s| &s.f)?;
        let mut out = String::new();
        out.push_str(&format!("sequences evaluated: {}\n", self.sequences.len()));
        out.push_str(&format!("J&F Mean   {:>8.4}\n", (j.mean + f.mean) / 2.0));
        out.push_str(&format!("J   Mean   {:>8.4}\n", j.mean));
        out.push_str(&format!("J   Recall {:>8.4}\n", j.recall));
        out.push_str(&format!("J   Decay  {:>8.4}\n", j.decay));
        out.push_str(&format!("F   Mean   {:>8.4}\n", f.mean));
        out.push_str(&format!("F   Recall {:>8.4}\n", f.recall));
        out.push_str(&format!("F   Decay  {:>8.4}\n", f.decay));
        Ok(out)
    }

    /// Machine-readable `metric.sequence.frame = value` lines, with
    /// aggregate lines appended.
    pub fn key_values(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.sequences {
            for ((idx, jv), fv) in s.frames.iter().zip(&s.j).zip(&s.f) {
                out.push_str(&format!("J.{}.{:05} = {:.6}\n", s.name, idx, jv));
                out.push_str(&format!("F.{}.{:05} = {:.6}\n", s.name, idx, fv));
            }
        }
        let j = self.aggregate(|s| &s.j)?;
        let f = self.aggregate(|s| &s.f)?;
        out.push_str(&format!("J.mean = {:.6}\n", j.mean));
        out.push_str(&format!("J.recall = {:.6}\n", j.recall));
        out.push_str(&format!("J.decay = {:.6}\n", j.decay));
        out.push_str(&format!("F.mean = {:.6}\n", f.mean));
        out.push_str(&format!("F.recall = {:.6}\n", f.recall));
        out.push_str(&format!("F.decay = {:.6}\n", f.decay));
        out.push_str(&format!("JF.mean = {:.6}\n", (j.mean + f.mean) / 2.0));
        Ok(out)
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mask(h: usize, w: usize, y0: usize, x0: usize, side: usize) -> Mask {
        let mut m = Mask::new(h, w);
        for y in y0..(y0 + side).min(h) {
            for x in x0..(x0 + side).min(w) {
                m.set(y, x, 1);
            }
        }
        m
    }

    #[test]
    fn identical_masks_score_one() {
        let m = square_mask(20, 20, 4, 4, 10);
        assert_eq!(region_similarity(&m, &m).unwrap(), 1.0);
        assert_eq!(boundary_f(&m, &m, Some(2)).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let a = square_mask(20, 20, 0, 0, 5);
        let b = square_mask(20, 20, 10, 10, 5);
        assert_eq!(region_similarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn both_empty_conventions() {
        let e = Mask::new(8, 8);
        assert_eq!(region_similarity(&e, &e).unwrap(), 1.0);
        assert_eq!(boundary_f(&e, &e, Some(1)).unwrap(), 1.0);
        let m = square_mask(8, 8, 2, 2, 3);
        assert_eq!(boundary_f(&e, &m, Some(1)).unwrap(), 0.0);
        assert_eq!(region_similarity(&e, &m).unwrap(), 0.0);
    }

    #[test]
    fn shifted_square_thirds() {
        // 10x10 square against the same square shifted 5 px: 50 / 150
        let a = square_mask(30, 30, 10, 5, 10);
        let b = square_mask(30, 30, 10, 10, 10);
        let j = region_similarity(&a, &b).unwrap();
        assert!((j - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn one_pixel_offset_within_tolerance_is_perfect() {
        let a = square_mask(40, 40, 10, 10, 20);
        let b = square_mask(40, 40, 10, 11, 20);
        assert_eq!(boundary_f(&a, &b, Some(2)).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_data_error() {
        let a = Mask::new(4, 4);
        let b = Mask::new(4, 5);
        assert!(matches!(region_similarity(&a, &b), Err(Error::Data(_))));
        assert!(matches!(boundary_f(&a, &b, None), Err(Error::Data(_))));
    }

    #[test]
    fn summarize_constant_series() {
        for v in [0.2, 0.8] {
            let s = summarize(&[v; 6]).unwrap();
            assert!((s.mean - v).abs() < 1e-12);
            assert_eq!(s.recall, if v > 0.5 { 1.0 } else { 0.0 });
            assert!(s.decay.abs() < 1e-12);
        }
    }

    #[test]
    fn summarize_quartile_example() {
        let s = summarize(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.recall, 0.5);
        assert_eq!(s.decay, 1.0);
    }

    #[test]
    fn monotone_series_has_nonpositive_decay() {
        let vals: Vec<f64> = (0..9).map(|i| i as f64 / 10.0).collect();
        let s = summarize(&vals).unwrap();
        assert!(s.decay <= 0.0);
    }

    #[test]
    fn empty_series_is_usage_error() {
        assert!(matches!(summarize(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn erosion_moves_j_toward_zero() {
        let full = square_mask(32, 32, 8, 8, 16);
        let mut prev = 1.0;
        for shrink in 1..6 {
            let eroded = square_mask(32, 32, 8 + shrink, 8 + shrink, 16 - 2 * shrink);
            let j = region_similarity(&eroded, &full).unwrap();
            assert!(j < prev, "erosion strictly reduces overlap on squares");
            prev = j;
        }
    }

    #[test]
    fn default_tolerance_rounds_up() {
        // diagonal of 100x100 is ~141.4, 0.8% is ~1.13, rounds up to 2
        assert_eq!(default_boundary_tolerance(100, 100), 2);
        assert_eq!(default_boundary_tolerance(8, 8), 1);
    }

    #[test]
    fn report_table_and_kv_are_stable() {
        let mut report = MetricReport::default();
        report.push(SequenceMetrics {
            name: "vid_1".into(),
            frames: vec![1, 2],
            j: vec![1.0, 0.5],
            f: vec![0.8, 0.6],
        });
        let kv = report.key_values().unwrap();
        assert!(kv.contains("J.vid_1.00001 = 1.000000"));
        assert!(kv.contains("F.vid_1.00002 = 0.600000"));
        assert!(kv.contains("J.mean = 0.750000"));
        let table = report.table().unwrap();
        assert!(table.contains("J&F Mean"));
    }
}
