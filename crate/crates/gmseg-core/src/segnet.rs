//! Query/support encoders and the skip-connected decoder around the memory.
//!
//! Both encoders share one architecture: four stages of 3x3 conv -> relu ->
//! 2x average pool, so a frame of side S leaves the last stage at S/16 with
//! the memory channel width. The support encoder additionally folds the soft
//! object mask and the hard label map into the stage-1 features through
//! dedicated bias-free 1x1 projections (one-shot mode only; zero-shot is
//! RGB-only). The decoder mirrors the encoder with bilinear upsampling and
//! skip concatenations and ends in a 1x1 head with a per-pixel 2-way softmax.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::memory::MemoryParams;
use crate::tape::{NodeId, Tape};
use crate::tensor::{shape_str, HasParams, Parameter, Real, Tensor};

/// Task mode; decides the support-encoder inputs and the training target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One-shot: first-frame instance annotation given, per-instance masks out.
    OVos,
    /// Zero-shot: RGB only, binary foreground out.
    ZVos,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ovos" => Ok(Mode::OVos),
            "zvos" => Ok(Mode::ZVos),
            other => Err(Error::Config(format!("unknown mode `{other}` (ovos|zvos)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::OVos => "ovos",
            Mode::ZVos => "zvos",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Channel width after each encoder stage; the last is the memory width C.
    pub widths: [usize; 4],
    pub mode: Mode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            widths: [16, 32, 64, 64],
            mode: Mode::OVos,
        }
    }
}

impl ModelConfig {
    pub fn channels(&self) -> usize {
        self.widths[3]
    }
}

/// Conv layer: kernel `[k, k, cin, cout]` with optional per-channel bias.
#[derive(Debug, Clone)]
pub struct ConvLayer<T: Real> {
    pub weight: Parameter<T>,
    pub bias: Option<Parameter<T>>,
    pub pad: usize,
}

impl<T: Real> ConvLayer<T> {
    pub fn new<R: rand::Rng>(
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = k * k * cin;
        let fan_out = k * k * cout;
        ConvLayer {
            weight: Parameter::glorot(
                &format!("{name}.weight"),
                &[k, k, cin, cout],
                fan_in,
                fan_out,
                rng,
            ),
            bias: with_bias.then(|| Parameter::new(&format!("{name}.bias"), Tensor::zeros(&[cout]))),
            pad: k / 2,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
        let w = tape.param(&self.weight);
        let mut out = tape.conv2d(x, w, 1, self.pad)?;
        if let Some(b) = &self.bias {
            let bn = tape.param(b);
            out = tape.bias_add(out, bn)?;
        }
        Ok(out)
    }

    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// Four-stage convolutional encoder.
#[derive(Debug, Clone)]
pub struct Encoder<T: Real> {
    stages: Vec<ConvLayer<T>>,
}

impl<T: Real> Encoder<T> {
    pub fn new<R: rand::Rng>(name: &str, in_ch: usize, widths: &[usize; 4], rng: &mut R) -> Self {
        let mut stages = Vec::with_capacity(4);
        let mut cin = in_ch;
        for (i, &w) in widths.iter().enumerate() {
            stages.push(ConvLayer::new(&format!("{name}.stage{i}.conv"), 3, cin, w, true, rng));
            cin = w;
        }
        Encoder { stages }
    }

    fn check_input(&self, t: &Tensor<T>) -> Result<()> {
        let (h, w, c) = t.dims3()?;
        let cin = self.stages[0].weight.value.shape()[2];
        if c != cin {
            return Err(Error::Shape(format!(
                "encoder expects {cin} input channels, got {}",
                shape_str(t.shape())
            )));
        }
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Data(format!(
                "frame dimensions must be divisible by 16, got {h}x{w}"
            )));
        }
        Ok(())
    }

    /// One stage: conv -> relu -> 2x2 average pool.
    fn stage(&self, tape: &mut Tape<T>, x: NodeId, i: usize) -> Result<NodeId> {
        let c = self.stages[i].forward(tape, x)?;
        let r = tape.relu(c)?;
        tape.avg_pool2(r)
    }

    /// Returns the final embedding and the four post-stage skip features
    /// (the last skip is the embedding itself).
    pub fn forward(&self, tape: &mut Tape<T>, frame: NodeId) -> Result<(NodeId, Vec<NodeId>)> {
        self.check_input(tape.value(frame))?;
        let mut skips = Vec::with_capacity(4);
        let mut x = frame;
        for i in 0..4 {
            x = self.stage(tape, x, i)?;
            skips.push(x);
        }
        Ok((x, skips))
    }
}

/// Support encoder: the shared backbone plus mask/label injection (one-shot).
#[derive(Debug, Clone)]
pub struct SupportEncoder<T: Real> {
    pub enc: Encoder<T>,
    pub mask_proj: Option<ConvLayer<T>>,
    pub label_proj: Option<ConvLayer<T>>,
}

/// One support frame as tensors: RGB, plus the soft object mask in [0, 1]
/// and the hard one-hot label map in one-shot mode.
#[derive(Debug, Clone)]
pub struct SupportInput<T: Real> {
    pub frame: Tensor<T>,
    pub mask: Option<Tensor<T>>,
    pub label: Option<Tensor<T>>,
}

impl<T: Real> SupportEncoder<T> {
    pub fn new<R: rand::Rng>(widths: &[usize; 4], mode: Mode, rng: &mut R) -> Self {
        let enc = Encoder::new("support_enc", 3, widths, rng);
        let (mask_proj, label_proj) = match mode {
            Mode::OVos => (
                // bias-free: an absent mask contributes exactly nothing
                Some(ConvLayer::new("support_enc.mask_proj", 1, 1, widths[0], false, rng)),
                Some(ConvLayer::new("support_enc.label_proj", 1, 1, widths[0], false, rng)),
            ),
            Mode::ZVos => (None, None),
        };
        SupportEncoder {
            enc,
            mask_proj,
            label_proj,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, input: &SupportInput<T>) -> Result<NodeId> {
        let frame = tape.leaf(input.frame.clone());
        self.enc.check_input(tape.value(frame))?;
        let mut x = self.enc.stage(tape, frame, 0)?;
        if let (Some(mp), Some(lp)) = (&self.mask_proj, &self.label_proj) {
            let mask = input.mask.as_ref().ok_or_else(|| {
                Error::Usage("one-shot support encoding requires a mask".into())
            })?;
            let label = input.label.as_ref().ok_or_else(|| {
                Error::Usage("one-shot support encoding requires a label map".into())
            })?;
            // project at stage-1 resolution and add into the RGB features
            let mn = tape.leaf(mask.clone());
            let mn = tape.avg_pool2(mn)?;
            let mf = mp.forward(tape, mn)?;
            x = tape.add(x, mf)?;
            let ln = tape.leaf(label.clone());
            let ln = tape.avg_pool2(ln)?;
            let lf = lp.forward(tape, ln)?;
            x = tape.add(x, lf)?;
        } else if input.mask.is_some() || input.label.is_some() {
            return Err(Error::Usage(
                "zero-shot support encoding takes RGB only".into(),
            ));
        }
        for i in 1..4 {
            x = self.enc.stage(tape, x, i)?;
        }
        Ok(x)
    }
}

/// Skip-connected decoder; four upsampling blocks then a 2-channel head.
#[derive(Debug, Clone)]
pub struct Decoder<T: Real> {
    blocks: Vec<ConvLayer<T>>,
    head: ConvLayer<T>,
}

impl<T: Real> Decoder<T> {
    pub fn new<R: rand::Rng>(widths: &[usize; 4], rng: &mut R) -> Self {
        let c = widths[3];
        let [w0, w1, w2, _] = *widths;
        // block inputs: fused (h_K | q), then upsampled features with the
        // matching encoder skip concatenated; the full-resolution block has
        // no skip (no encoder feature exists above stage 1).
        let specs = [
            (2 * c + w2, w2),
            (w2 + w1, w1),
            (w1 + w0, w0),
            (w0, w0),
        ];
        let blocks = specs
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| {
                ConvLayer::new(&format!("decoder.block{i}.conv"), 3, cin, cout, true, rng)
            })
            .collect();
        let head = ConvLayer::new("decoder.head", 1, w0, 2, true, rng);
        Decoder { blocks, head }
    }

    /// `h_k` and `q` fuse by channel concatenation; `skips` are the four
    /// encoder stage features, shallow to deep.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        h_k: NodeId,
        q: NodeId,
        skips: &[NodeId],
    ) -> Result<NodeId> {
        if skips.len() != 4 {
            return Err(Error::Usage(format!(
                "decoder expects 4 skip features, got {}",
                skips.len()
            )));
        }
        if tape.value(h_k).shape() != tape.value(q).shape() {
            return Err(Error::Shape(format!(
                "h_K {} and q {} must share shape",
                shape_str(tape.value(h_k).shape()),
                shape_str(tape.value(q).shape())
            )));
        }
        let mut x = tape.concat_channels(h_k, q)?;
        for (i, block) in self.blocks.iter().enumerate() {
            x = tape.upsample2(x)?;
            if i < 3 {
                x = tape.concat_channels(x, skips[2 - i])?;
            }
            x = block.forward(tape, x)?;
            x = tape.relu(x)?;
        }
        let logits = self.head.forward(tape, x)?;
        tape.softmax(logits, 2)
    }
}

/// The full segmentation network around the graph memory.
#[derive(Debug, Clone)]
pub struct GraphMemSegNet<T: Real> {
    pub cfg: ModelConfig,
    pub query_enc: Encoder<T>,
    pub support_enc: SupportEncoder<T>,
    pub memory: MemoryParams<T>,
    pub decoder: Decoder<T>,
}

impl<T: Real> GraphMemSegNet<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Self {
        let mut rng = crate::rng_from_seed(seed);
        let query_enc = Encoder::new("query_enc", 3, &cfg.widths, &mut rng);
        let support_enc = SupportEncoder::new(&cfg.widths, cfg.mode, &mut rng);
        let memory = MemoryParams::new(cfg.channels(), &mut rng);
        let decoder = Decoder::new(&cfg.widths, &mut rng);
        GraphMemSegNet {
            cfg,
            query_enc,
            support_enc,
            memory,
            decoder,
        }
    }

    pub fn encode_query(&self, tape: &mut Tape<T>, frame: &Tensor<T>) -> Result<(NodeId, Vec<NodeId>)> {
        let f = tape.leaf(frame.clone());
        self.query_enc.forward(tape, f)
    }

    pub fn encode_support(&self, tape: &mut Tape<T>, input: &SupportInput<T>) -> Result<NodeId> {
        self.support_enc.forward(tape, input)
    }

    /// Full forward: encode supports into memory nodes, encode the query,
    /// reason K steps and decode. Returns the per-pixel 2-channel
    /// probabilities and the reasoning diagnostics.
    pub fn forward_clip(
        &self,
        tape: &mut Tape<T>,
        supports: &[SupportInput<T>],
        query: &Tensor<T>,
        k: usize,
    ) -> Result<ForwardOut<T>> {
        if supports.is_empty() {
            return Err(Error::Usage("forward_clip needs at least one support".into()));
        }
        let mut nodes = Vec::with_capacity(supports.len());
        for s in supports {
            nodes.push(self.encode_support(tape, s)?);
        }
        let (q, skips) = self.encode_query(tape, query)?;
        let (h, mem_nodes, read_weights) = self.memory.episodic_reason(tape, q, &nodes, k)?;
        let pred = self.decoder.forward(tape, h, q, &skips)?;
        Ok(ForwardOut {
            pred,
            h,
            mem_nodes,
            read_weights,
        })
    }
}

/// Tape handles produced by one full forward pass.
pub struct ForwardOut<T: Real> {
    pub pred: NodeId,
    pub h: NodeId,
    pub mem_nodes: Vec<NodeId>,
    pub read_weights: Vec<Vec<T>>,
}

impl<T: Real> HasParams<T> for GraphMemSegNet<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        for s in &self.query_enc.stages {
            s.visit(f);
        }
        for s in &self.support_enc.enc.stages {
            s.visit(f);
        }
        if let Some(mp) = &self.support_enc.mask_proj {
            mp.visit(f);
        }
        if let Some(lp) = &self.support_enc.label_proj {
            lp.visit(f);
        }
        self.memory.visit(f);
        for b in &self.decoder.blocks {
            b.visit(f);
        }
        self.decoder.head.visit(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        for s in &mut self.query_enc.stages {
            s.visit_mut(f);
        }
        for s in &mut self.support_enc.enc.stages {
            s.visit_mut(f);
        }
        if let Some(mp) = &mut self.support_enc.mask_proj {
            mp.visit_mut(f);
        }
        if let Some(lp) = &mut self.support_enc.label_proj {
            lp.visit_mut(f);
        }
        self.memory.visit_mut(f);
        for b in &mut self.decoder.blocks {
            b.visit_mut(f);
        }
        self.decoder.head.visit_mut(f);
    }
}

/// Zeroes every parameter; useful for contract tests.
pub fn zero_all_params<T: Real, M: HasParams<T>>(model: &mut M) {
    model.visit_params_mut(&mut |p| {
        let shape = p.value.shape().to_vec();
        p.value = Tensor::zeros(&shape);
    });
}
