//! Sequential one-shot and per-frame zero-shot inference protocols.
//!
//! One-shot: the bank starts with the annotated first frame, grows by one
//! node per segmented frame until it holds N, and is then rebuilt per frame
//! from the first annotated frame, the last segmented frame, and N-2 frames
//! stratified-sampled from the remaining segmented history. Instances run
//! independently over frozen weights and fuse by soft aggregation.
//!
//! Node embeddings are re-encoded from their source frames each time the
//! bank is formed; the episodic write updates inside one frame's reasoning
//! are not persisted across frames unless `persist_writes` is set.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::clip::{frame_to_tensor, ImageBuf, Mask};
use crate::error::{Error, Result};
use crate::memory::GraphMemory;
use crate::segnet::{GraphMemSegNet, Mode, SupportInput};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct InferConfig {
    /// Memory size N.
    pub support_size: usize,
    /// Reasoning steps K.
    pub reason_steps: usize,
    /// Zero-shot binarization threshold.
    pub threshold: f64,
    /// Seed for zero-shot global frame sampling.
    pub seed: u64,
    /// Carry episodic write updates across frames instead of re-encoding.
    pub persist_writes: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            support_size: 3,
            reason_steps: 3,
            threshold: 0.5,
            seed: 0,
            persist_writes: false,
        }
    }
}

/// Where a bank node came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeSource {
    pub frame: usize,
    pub from_annotation: bool,
}

/// A formed memory bank with per-node source descriptors.
#[derive(Debug, Clone)]
pub struct MemoryBank<T: Real> {
    pub memory: GraphMemory<T>,
    pub sources: Vec<NodeSource>,
}

/// Per-instance foreground probability maps for frames `1..video_len`.
#[derive(Debug, Clone)]
pub struct InstanceResult<T: Real> {
    pub id: u8,
    pub probs: Vec<Tensor<T>>,
}

/// One-shot inference output: fused id masks for every frame (frame 0 echoes
/// the annotation) plus the raw per-instance probability maps.
#[derive(Debug, Clone)]
pub struct OvosOutput<T: Real> {
    pub masks: Vec<Mask>,
    pub instances: Vec<InstanceResult<T>>,
}

/// Stratified-uniform pick of `count` indices from a pool of previously
/// segmented frames: the pool splits into `count` contiguous temporal bins
/// and each bin contributes its midpoint. Deterministic. A short pool cycles
/// (duplicates allowed only then); an empty pool falls back to frame 0.
pub fn sample_intermediate_nodes(pool: &[usize], count: usize) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    if pool.is_empty() {
        return vec![0; count];
    }
    if pool.len() <= count {
        return (0..count).map(|i| pool[i % pool.len()]).collect();
    }
    let base = pool.len() / count;
    let extra = pool.len() % count;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for i in 0..count {
        let len = base + usize::from(i < extra);
        out.push(pool[start + (len - 1) / 2]);
        start += len;
    }
    out
}

/// Source frames for the bank when segmenting frame `f` (frames `0..f` are
/// segmented): append phase while the bank is short, then first + sampled
/// intermediates + last.
pub fn support_plan(f: usize, n: usize) -> Vec<usize> {
    if f <= n {
        (0..f).collect()
    } else {
        let pool: Vec<usize> = (1..=f - 2).collect();
        let mut plan = vec![0];
        plan.extend(sample_intermediate_nodes(&pool, n - 2));
        plan.push(f - 1);
        plan
    }
}

/// Soft aggregation of per-instance foreground maps into a per-pixel
/// distribution over background and instances. Background is the product of
/// complements; each probability converts to odds (clamped at 1e6) and
/// renormalizes.
pub fn aggregate_instances<T: Real>(maps: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    if maps.is_empty() {
        return Err(Error::Usage("aggregate_instances on empty map list".into()));
    }
    let (h, w) = maps[0].dims2()?;
    for m in maps {
        if m.dims2()? != (h, w) {
            return Err(Error::Shape(format!(
                "probability maps disagree on shape: {:?} vs {:?}",
                maps[0].shape(),
                m.shape()
            )));
        }
    }
    const ODDS_CLAMP: f64 = 1e6;
    let n = maps.len();
    let mut out: Vec<Vec<T>> = (0..=n).map(|_| vec![T::zero(); h * w]).collect();
    let mut odds = vec![0.0f64; n + 1];
    for px in 0..h * w {
        let mut bg = 1.0f64;
        for (i, m) in maps.iter().enumerate() {
            let p = m.data()[px].as_f64().clamp(0.0, 1.0);
            bg *= 1.0 - p;
            odds[i + 1] = if p >= 1.0 { ODDS_CLAMP } else { (p / (1.0 - p)).min(ODDS_CLAMP) };
        }
        odds[0] = if bg >= 1.0 { ODDS_CLAMP } else { (bg / (1.0 - bg)).min(ODDS_CLAMP) };
        // summing in value order keeps the result independent of instance order
        let mut sorted = odds.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("odds are finite"));
        let denom: f64 = sorted.iter().sum();
        for l in 0..=n {
            out[l][px] = T::from_f64(odds[l] / denom);
        }
    }
    out.into_iter()
        .map(|d| Tensor::from_vec(&[h, w], d))
        .collect()
}

/// Per-pixel argmax over the aggregated distribution; channel 0 is
/// background, channel l maps to `ids[l - 1]`. Ties resolve to the lower
/// channel.
pub fn argmax_mask<T: Real>(dist: &[Tensor<T>], ids: &[u8]) -> Result<Mask> {
    if dist.len() != ids.len() + 1 {
        return Err(Error::Usage(format!(
            "distribution has {} channels for {} ids",
            dist.len(),
            ids.len()
        )));
    }
    let (h, w) = dist[0].dims2()?;
    let mut mask = Mask::new(h, w);
    for px in 0..h * w {
        let mut best = 0usize;
        let mut best_v = dist[0].data()[px];
        for (l, d) in dist.iter().enumerate().skip(1) {
            let v = d.data()[px];
            if v > best_v {
                best_v = v;
                best = l;
            }
        }
        if best > 0 {
            mask.data[px] = ids[best - 1];
        }
    }
    Ok(mask)
}

/// Query features as values (scratch tape), reusable across instances.
fn encode_query_values<T: Real>(
    model: &GraphMemSegNet<T>,
    frame: &ImageBuf,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let ft = frame_to_tensor::<T>(frame);
    let (q, skips) = model.encode_query(&mut tape, &ft)?;
    Ok((
        tape.value(q).clone(),
        skips.iter().map(|&s| tape.value(s).clone()).collect(),
    ))
}

fn encode_support_value<T: Real>(
    model: &GraphMemSegNet<T>,
    frame: &ImageBuf,
    mask: Option<&Tensor<T>>,
    label: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let input = SupportInput {
        frame: frame_to_tensor::<T>(frame),
        mask: mask.cloned(),
        label: label.cloned(),
    };
    let id = model.encode_support(&mut tape, &input)?;
    Ok(tape.value(id).clone())
}

/// Reason over leafed value inputs and decode; returns the foreground
/// probability map `[h, w]` and the post-reasoning node values.
fn reason_decode_values<T: Real>(
    model: &GraphMemSegNet<T>,
    q: &Tensor<T>,
    skips: &[Tensor<T>],
    nodes: &[Tensor<T>],
    k: usize,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let qn = tape.leaf(q.clone());
    let skip_ids: Vec<NodeId> = skips.iter().map(|s| tape.leaf(s.clone())).collect();
    let node_ids: Vec<NodeId> = nodes.iter().map(|n| tape.leaf(n.clone())).collect();
    let (h, out_nodes, _) = model.memory.episodic_reason(&mut tape, qn, &node_ids, k)?;
    let pred = model.decoder.forward(&mut tape, h, qn, &skip_ids)?;
    let pv = tape.value(pred);
    let (ph, pw, _) = pv.dims3()?;
    let fg: Vec<T> = (0..ph * pw).map(|px| pv.data()[px * 2 + 1]).collect();
    Ok((
        Tensor::from_vec(&[ph, pw], fg)?,
        out_nodes.iter().map(|&n| tape.value(n).clone()).collect(),
    ))
}

struct InstanceState<T: Real> {
    id: u8,
    emb_cache: BTreeMap<usize, Tensor<T>>,
    /// Soft foreground probability per segmented frame, `[h, w, 1]`.
    prob_hist: BTreeMap<usize, Tensor<T>>,
    /// Hard indicator per segmented frame, `[h, w, 1]`.
    label_hist: BTreeMap<usize, Tensor<T>>,
    probs_out: Vec<Tensor<T>>,
}

/// Sequential one-shot protocol over a full video.
pub fn run_ovos_sequence<T: Real>(
    model: &GraphMemSegNet<T>,
    frames: &[ImageBuf],
    first_mask: &Mask,
    cfg: &InferConfig,
) -> Result<OvosOutput<T>> {
    if model.cfg.mode != Mode::OVos {
        return Err(Error::Config("model was built for zero-shot mode".into()));
    }
    if cfg.support_size < 2 {
        return Err(Error::Config(
            "one-shot inference needs a memory of at least 2 nodes (first + last)".into(),
        ));
    }
    let Some(first) = frames.first() else {
        return Err(Error::Data("empty frame list".into()));
    };
    if (first.h, first.w) != (first_mask.h, first_mask.w) {
        return Err(Error::Data(format!(
            "first mask {}x{} does not match frames {}x{}",
            first_mask.h, first_mask.w, first.h, first.w
        )));
    }
    let ids = first_mask.present_ids();
    if ids.is_empty() {
        return Err(Error::Data("first-frame annotation has no instances".into()));
    }

    let mut instances: Vec<InstanceState<T>> = ids
        .iter()
        .map(|&id| {
            let bin = crate::clip::mask_to_binary_tensor::<T>(first_mask, id);
            let mut prob_hist = BTreeMap::new();
            prob_hist.insert(0, bin.clone());
            let mut label_hist = BTreeMap::new();
            label_hist.insert(0, bin);
            InstanceState {
                id,
                emb_cache: BTreeMap::new(),
                prob_hist,
                label_hist,
                probs_out: Vec::new(),
            }
        })
        .collect();

    let mut masks = vec![first_mask.clone()];
    for f in 1..frames.len() {
        let (q, skips) = encode_query_values(model, &frames[f])?;
        let plan = support_plan(f, cfg.support_size);
        let mut frame_probs: Vec<Tensor<T>> = Vec::with_capacity(instances.len());
        for inst in instances.iter_mut() {
            let mut nodes = Vec::with_capacity(plan.len());
            for &src in &plan {
                let emb = match inst.emb_cache.get(&src) {
                    Some(e) => e.clone(),
                    None => {
                        let e = encode_support_value(
                            model,
                            &frames[src],
                            Some(&inst.prob_hist[&src]),
                            Some(&inst.label_hist[&src]),
                        )?;
                        inst.emb_cache.insert(src, e.clone());
                        e
                    }
                };
                nodes.push(emb);
            }
            let bank = MemoryBank {
                memory: GraphMemory::new(nodes.clone(), plan.clone())?,
                sources: plan
                    .iter()
                    .map(|&frame| NodeSource {
                        frame,
                        from_annotation: frame == 0,
                    })
                    .collect(),
            };
            debug_assert!(bank.sources.iter().filter(|s| s.from_annotation).count() == 1);
            let (prob, updated) =
                reason_decode_values(model, &q, &skips, bank.memory.nodes(), cfg.reason_steps)?;
            if cfg.persist_writes {
                for (&src, node) in plan.iter().zip(updated) {
                    inst.emb_cache.insert(src, node);
                }
            }
            frame_probs.push(prob);
        }
        let dist = aggregate_instances(&frame_probs)?;
        let fused = argmax_mask(&dist, &ids)?;
        for (inst, prob) in instances.iter_mut().zip(&frame_probs) {
            let (h, w) = prob.dims2()?;
            inst.prob_hist
                .insert(f, Tensor::from_vec(&[h, w, 1], prob.data().to_vec())?);
            inst.label_hist
                .insert(f, crate::clip::mask_to_binary_tensor::<T>(&fused, inst.id));
            inst.probs_out.push(prob.clone());
        }
        masks.push(fused);
    }

    Ok(OvosOutput {
        masks,
        instances: instances
            .into_iter()
            .map(|s| InstanceResult {
                id: s.id,
                probs: s.probs_out,
            })
            .collect(),
    })
}

/// Global support-frame pick for one zero-shot query frame; derives from
/// (seed, frame index) only, so processing order cannot matter.
fn zvos_picks(len: usize, n: usize, seed: u64, f: usize) -> Vec<usize> {
    if len <= n {
        return (0..len).collect();
    }
    use rand::seq::SliceRandom as _;
    let mut rng = crate::derived_rng(seed, f as u64);
    let mut all: Vec<usize> = (0..len).collect();
    all.shuffle(&mut rng);
    let mut sel: Vec<usize> = all.into_iter().take(n).collect();
    sel.sort_unstable();
    sel
}

/// Segments one frame of a zero-shot video; a pure function of
/// (model, frames, frame index, config).
pub fn zvos_single_frame<T: Real>(
    model: &GraphMemSegNet<T>,
    frames: &[ImageBuf],
    f: usize,
    cfg: &InferConfig,
) -> Result<Mask> {
    let mut cache = BTreeMap::new();
    zvos_frame_with_cache(model, frames, f, cfg, &mut cache)
}

fn zvos_frame_with_cache<T: Real>(
    model: &GraphMemSegNet<T>,
    frames: &[ImageBuf],
    f: usize,
    cfg: &InferConfig,
    emb_cache: &mut BTreeMap<usize, Tensor<T>>,
) -> Result<Mask> {
    if model.cfg.mode != Mode::ZVos {
        return Err(Error::Config("model was built for one-shot mode".into()));
    }
    if f >= frames.len() {
        return Err(Error::Usage(format!(
            "frame {f} out of range for {} frames",
            frames.len()
        )));
    }
    let n = cfg.support_size.max(1);
    let picks = zvos_picks(frames.len(), n, cfg.seed, f);
    let mut nodes = Vec::with_capacity(picks.len());
    for &src in &picks {
        let emb = match emb_cache.get(&src) {
            Some(e) => e.clone(),
            None => {
                let e = encode_support_value(model, &frames[src], None, None)?;
                emb_cache.insert(src, e.clone());
                e
            }
        };
        nodes.push(emb);
    }
    let (q, skips) = encode_query_values(model, &frames[f])?;
    let (prob, _) = reason_decode_values(model, &q, &skips, &nodes, cfg.reason_steps)?;
    crate::clip::prob_to_mask(&prob, cfg.threshold, 1)
}

/// Per-frame zero-shot protocol: every frame is segmented independently
/// against a bank of globally sampled frames (RGB-only support encoding).
pub fn run_zvos_sequence<T: Real>(
    model: &GraphMemSegNet<T>,
    frames: &[ImageBuf],
    cfg: &InferConfig,
) -> Result<Vec<Mask>> {
    if model.cfg.mode != Mode::ZVos {
        return Err(Error::Config("model was built for one-shot mode".into()));
    }
    let mut emb_cache: BTreeMap<usize, Tensor<T>> = BTreeMap::new();
    (0..frames.len())
        .map(|f| zvos_frame_with_cache(model, frames, f, cfg, &mut emb_cache))
        .collect()
}
