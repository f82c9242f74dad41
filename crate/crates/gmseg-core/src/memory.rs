//! Fixed-size, fully connected graph memory with learnable read and write
//! controllers.
//!
//! The memory holds N node embeddings of identical shape `[h, w, c]`. One
//! reasoning step runs read (cosine similarities -> softmax read weights ->
//! weighted summary), then the gated read-state update, then the graph write
//! that renews every node from the read state and its neighbor context. K
//! steps of that loop adapt the segmentation head to the current video
//! without touching network weights; the node count never changes.
//!
//! Controllers are convolutional gated recurrent units with 1x1 kernels and
//! no bias, mirroring their formulation. Node-to-node relations use a
//! bilinear position-pair attention with a learnable C x C matrix.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::{shape_str, Parameter, Real, Tensor};

/// Value-level memory: N node embeddings plus per-node source frame indices.
#[derive(Debug, Clone)]
pub struct GraphMemory<T: Real> {
    nodes: Vec<Tensor<T>>,
    provenance: Vec<usize>,
}

impl<T: Real> GraphMemory<T> {
    pub fn new(nodes: Vec<Tensor<T>>, provenance: Vec<usize>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Usage("graph memory needs at least one node".into()));
        }
        if nodes.len() != provenance.len() {
            return Err(Error::Usage(format!(
                "{} nodes but {} provenance entries",
                nodes.len(),
                provenance.len()
            )));
        }
        let shape = nodes[0].shape().to_vec();
        for n in &nodes {
            n.dims3()?;
            if n.shape() != shape {
                return Err(Error::Shape(format!(
                    "memory nodes disagree on shape: {} vs {}",
                    shape_str(&shape),
                    shape_str(n.shape())
                )));
            }
        }
        Ok(GraphMemory { nodes, provenance })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Tensor<T>] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i]
    }

    pub fn provenance(&self) -> &[usize] {
        &self.provenance
    }
}

/// Read-controller hidden state threaded through the reasoning steps.
#[derive(Debug, Clone)]
pub struct ReadState<T: Real> {
    pub h: Tensor<T>,
    pub step: usize,
}

/// All trainable pieces of the memory module. Every kernel is 1x1 without
/// bias; `edge` is the C x C relation matrix.
#[derive(Debug, Clone)]
pub struct MemoryParams<T: Real> {
    pub proj: Parameter<T>,
    pub read_cand_state: Parameter<T>,
    pub read_cand_summary: Parameter<T>,
    pub read_gate_state: Parameter<T>,
    pub read_gate_summary: Parameter<T>,
    pub write_cand_state: Parameter<T>,
    pub write_cand_node: Parameter<T>,
    pub write_cand_ctx: Parameter<T>,
    pub write_gate_state: Parameter<T>,
    pub write_gate_node: Parameter<T>,
    pub write_gate_ctx: Parameter<T>,
    pub edge: Parameter<T>,
}

fn kernel1x1<T: Real, R: rand::Rng>(name: &str, c: usize, rng: &mut R) -> Parameter<T> {
    Parameter::glorot(name, &[1, 1, c, c], c, c, rng)
}

impl<T: Real> MemoryParams<T> {
    pub fn new<R: rand::Rng>(c: usize, rng: &mut R) -> Self {
        MemoryParams {
            proj: kernel1x1("memory.proj.weight", c, rng),
            read_cand_state: kernel1x1("memory.read.cand_state", c, rng),
            read_cand_summary: kernel1x1("memory.read.cand_summary", c, rng),
            read_gate_state: kernel1x1("memory.read.gate_state", c, rng),
            read_gate_summary: kernel1x1("memory.read.gate_summary", c, rng),
            write_cand_state: kernel1x1("memory.write.cand_state", c, rng),
            write_cand_node: kernel1x1("memory.write.cand_node", c, rng),
            write_cand_ctx: kernel1x1("memory.write.cand_ctx", c, rng),
            write_gate_state: kernel1x1("memory.write.gate_state", c, rng),
            write_gate_node: kernel1x1("memory.write.gate_node", c, rng),
            write_gate_ctx: kernel1x1("memory.write.gate_ctx", c, rng),
            edge: Parameter::glorot("memory.edge.weight", &[c, c], c, c, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.proj.value.shape()[2]
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        for p in [
            &self.proj,
            &self.read_cand_state,
            &self.read_cand_summary,
            &self.read_gate_state,
            &self.read_gate_summary,
            &self.write_cand_state,
            &self.write_cand_node,
            &self.write_cand_ctx,
            &self.write_gate_state,
            &self.write_gate_node,
            &self.write_gate_ctx,
            &self.edge,
        ] {
            f(p);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        for p in [
            &mut self.proj,
            &mut self.read_cand_state,
            &mut self.read_cand_summary,
            &mut self.read_gate_state,
            &mut self.read_gate_summary,
            &mut self.write_cand_state,
            &mut self.write_cand_node,
            &mut self.write_cand_ctx,
            &mut self.write_gate_state,
            &mut self.write_gate_node,
            &mut self.write_gate_ctx,
            &mut self.edge,
        ] {
            f(p);
        }
    }

    fn conv1(&self, tape: &mut Tape<T>, x: NodeId, p: &Parameter<T>) -> Result<NodeId> {
        let w = tape.param(p);
        tape.conv2d(x, w, 1, 0)
    }

    // ---- taped operations --------------------------------------------------

    /// h^0 from the query embedding: a 1x1 projection.
    pub fn init_read_state(&self, tape: &mut Tape<T>, q: NodeId) -> Result<NodeId> {
        self.conv1(tape, q, &self.proj)
    }

    /// Cosine similarities, softmax read weights and the weighted summary.
    /// Returned weight values are diagnostic copies; the taped weights keep
    /// their gradient path into the summary.
    pub fn memory_read(
        &self,
        tape: &mut Tape<T>,
        h: NodeId,
        nodes: &[NodeId],
    ) -> Result<(Vec<T>, NodeId)> {
        if nodes.is_empty() {
            return Err(Error::Usage("memory_read on empty memory".into()));
        }
        let mut sims = Vec::with_capacity(nodes.len());
        for &m in nodes {
            sims.push(tape.cosine_similarity(h, m)?);
        }
        let sv = tape.stack_scalars(&sims)?;
        let weights = tape.softmax(sv, 0)?;
        let wvals = tape.value(weights).data().to_vec();
        let mut summary: Option<NodeId> = None;
        for (i, &m) in nodes.iter().enumerate() {
            let wi = tape.index_scalar(weights, i)?;
            let term = tape.mul_scalar(wi, m)?;
            summary = Some(match summary {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        Ok((wvals, summary.expect("nodes nonempty")))
    }

    /// Gated update of the read state from the memory summary.
    pub fn read_state_update(
        &self,
        tape: &mut Tape<T>,
        h: NodeId,
        summary: NodeId,
    ) -> Result<NodeId> {
        let c1 = self.conv1(tape, h, &self.read_cand_state)?;
        let c2 = self.conv1(tape, summary, &self.read_cand_summary)?;
        let cand = tape.add(c1, c2)?;
        let g1 = self.conv1(tape, h, &self.read_gate_state)?;
        let g2 = self.conv1(tape, summary, &self.read_gate_summary)?;
        let pre = tape.add(g1, g2)?;
        let gate = tape.sigmoid(pre)?;
        let keep = tape.one_minus(gate)?;
        let a = tape.hadamard(gate, cand)?;
        let b = tape.hadamard(keep, h)?;
        tape.add(a, b)
    }

    /// Position-pair relation between two nodes: `M_i . W_e . M_j^T` over
    /// `[(h*w), c]` flattenings.
    pub fn edge_attention(&self, tape: &mut Tape<T>, mi: NodeId, mj: NodeId) -> Result<NodeId> {
        let (h, w, c) = tape.value(mi).dims3()?;
        let es = self.edge.value.shape().to_vec();
        if es != [c, c] {
            return Err(Error::Shape(format!(
                "edge matrix must be [{c}, {c}], got {}",
                shape_str(&es)
            )));
        }
        let we = tape.param(&self.edge);
        let fi = tape.reshape(mi, &[h * w, c])?;
        let fj = tape.reshape(mj, &[h * w, c])?;
        let left = tape.matmul(fi, we)?;
        let fjt = tape.transpose(fj)?;
        tape.matmul(left, fjt)
    }

    /// Neighbor context `c_i`: row-softmaxed relations against every other
    /// node, applied to that node's positions, summed over neighbors. A
    /// single-node memory has no neighbors and yields zeros.
    pub fn neighbor_aggregate(
        &self,
        tape: &mut Tape<T>,
        nodes: &[NodeId],
        i: usize,
    ) -> Result<NodeId> {
        if i >= nodes.len() {
            return Err(Error::Usage(format!(
                "neighbor_aggregate: node {i} out of range ({} nodes)",
                nodes.len()
            )));
        }
        let (h, w, c) = tape.value(nodes[i]).dims3()?;
        if nodes.len() == 1 {
            return Ok(tape.leaf(Tensor::zeros(&[h, w, c])));
        }
        let mut acc: Option<NodeId> = None;
        for (j, &mj) in nodes.iter().enumerate() {
            if j == i {
                continue;
            }
            let e = self.edge_attention(tape, nodes[i], mj)?;
            let a = tape.softmax(e, 1)?;
            let fj = tape.reshape(mj, &[h * w, c])?;
            let contrib = tape.matmul(a, fj)?;
            acc = Some(match acc {
                None => contrib,
                Some(prev) => tape.add(prev, contrib)?,
            });
        }
        tape.reshape(acc.expect("n >= 2"), &[h, w, c])
    }

    /// Synchronous write: every node is renewed from the read state, its own
    /// previous value and its neighbor context, all contexts computed from
    /// the incoming node set before any node is replaced.
    pub fn memory_write(
        &self,
        tape: &mut Tape<T>,
        h: NodeId,
        nodes: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        if nodes.is_empty() {
            return Err(Error::Usage("memory_write on empty memory".into()));
        }
        let mut contexts = Vec::with_capacity(nodes.len());
        for i in 0..nodes.len() {
            contexts.push(self.neighbor_aggregate(tape, nodes, i)?);
        }
        let wh = self.conv1(tape, h, &self.write_cand_state)?;
        let gh = self.conv1(tape, h, &self.write_gate_state)?;
        let mut out = Vec::with_capacity(nodes.len());
        for (&m, &ctx) in nodes.iter().zip(&contexts) {
            let cm = self.conv1(tape, m, &self.write_cand_node)?;
            let cc = self.conv1(tape, ctx, &self.write_cand_ctx)?;
            let cand = {
                let t = tape.add(wh, cm)?;
                tape.add(t, cc)?
            };
            let gm = self.conv1(tape, m, &self.write_gate_node)?;
            let gc = self.conv1(tape, ctx, &self.write_gate_ctx)?;
            let pre = {
                let t = tape.add(gh, gm)?;
                tape.add(t, gc)?
            };
            let gate = tape.sigmoid(pre)?;
            let keep = tape.one_minus(gate)?;
            let a = tape.hadamard(gate, cand)?;
            let b = tape.hadamard(keep, m)?;
            out.push(tape.add(a, b)?);
        }
        Ok(out)
    }

    /// K steps of read -> state update -> write. K = 0 projects the query and
    /// leaves the memory untouched. Returns the final state, the renewed
    /// nodes, and the per-step read weights for diagnostics.
    pub fn episodic_reason(
        &self,
        tape: &mut Tape<T>,
        q: NodeId,
        nodes: &[NodeId],
        k: usize,
    ) -> Result<(NodeId, Vec<NodeId>, Vec<Vec<T>>)> {
        if nodes.is_empty() {
            return Err(Error::Usage("episodic_reason on empty memory".into()));
        }
        let mut h = self.init_read_state(tape, q)?;
        let mut cur = nodes.to_vec();
        let mut weight_log = Vec::with_capacity(k);
        for _ in 0..k {
            let (wvals, summary) = self.memory_read(tape, h, &cur)?;
            weight_log.push(wvals);
            h = self.read_state_update(tape, h, summary)?;
            cur = self.memory_write(tape, h, &cur)?;
        }
        Ok((h, cur, weight_log))
    }

    // ---- value-level wrappers ----------------------------------------------

    fn check_channels(&self, t: &Tensor<T>) -> Result<()> {
        let (_, _, c) = t.dims3()?;
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "memory expects {} channels, got tensor {}",
                self.channels(),
                shape_str(t.shape())
            )));
        }
        Ok(())
    }

    pub fn init_read_state_value(&self, q: &Tensor<T>) -> Result<ReadState<T>> {
        self.check_channels(q)?;
        let mut tape = Tape::new();
        let qn = tape.leaf(q.clone());
        let h = self.init_read_state(&mut tape, qn)?;
        Ok(ReadState {
            h: tape.value(h).clone(),
            step: 0,
        })
    }

    pub fn memory_read_value(
        &self,
        state: &ReadState<T>,
        mem: &GraphMemory<T>,
    ) -> Result<(Vec<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let h = tape.leaf(state.h.clone());
        let nodes: Vec<NodeId> = mem.nodes().iter().map(|n| tape.leaf(n.clone())).collect();
        let (w, summary) = self.memory_read(&mut tape, h, &nodes)?;
        Ok((w, tape.value(summary).clone()))
    }

    pub fn read_state_update_value(
        &self,
        state: &ReadState<T>,
        summary: &Tensor<T>,
    ) -> Result<ReadState<T>> {
        let mut tape = Tape::new();
        let h = tape.leaf(state.h.clone());
        let s = tape.leaf(summary.clone());
        let out = self.read_state_update(&mut tape, h, s)?;
        Ok(ReadState {
            h: tape.value(out).clone(),
            step: state.step + 1,
        })
    }

    pub fn edge_attention_value(&self, mi: &Tensor<T>, mj: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let a = tape.leaf(mi.clone());
        let b = tape.leaf(mj.clone());
        let e = self.edge_attention(&mut tape, a, b)?;
        Ok(tape.value(e).clone())
    }

    pub fn neighbor_aggregate_value(&self, mem: &GraphMemory<T>, i: usize) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let nodes: Vec<NodeId> = mem.nodes().iter().map(|n| tape.leaf(n.clone())).collect();
        let out = self.neighbor_aggregate(&mut tape, &nodes, i)?;
        Ok(tape.value(out).clone())
    }

    pub fn memory_write_value(
        &self,
        mem: &GraphMemory<T>,
        state: &ReadState<T>,
    ) -> Result<GraphMemory<T>> {
        let mut tape = Tape::new();
        let h = tape.leaf(state.h.clone());
        let nodes: Vec<NodeId> = mem.nodes().iter().map(|n| tape.leaf(n.clone())).collect();
        let out = self.memory_write(&mut tape, h, &nodes)?;
        GraphMemory::new(
            out.into_iter().map(|id| tape.value(id).clone()).collect(),
            mem.provenance().to_vec(),
        )
    }

    /// Value-level reasoning loop; K = 0 returns the projected query and the
    /// memory bitwise unchanged.
    pub fn episodic_reason_value(
        &self,
        q: &Tensor<T>,
        mem: &GraphMemory<T>,
        k: usize,
    ) -> Result<(Tensor<T>, GraphMemory<T>, Vec<Vec<T>>)> {
        self.check_channels(q)?;
        let mut tape = Tape::new();
        let qn = tape.leaf(q.clone());
        let nodes: Vec<NodeId> = mem.nodes().iter().map(|n| tape.leaf(n.clone())).collect();
        let (h, out_nodes, weights) = self.episodic_reason(&mut tape, qn, &nodes, k)?;
        let mem_out = GraphMemory::new(
            out_nodes.into_iter().map(|id| tape.value(id).clone()).collect(),
            mem.provenance().to_vec(),
        )?;
        Ok((tape.value(h).clone(), mem_out, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use alloc::vec;

    fn identity_kernel(c: usize) -> Tensor<f64> {
        let mut data = vec![0.0; c * c];
        for i in 0..c {
            data[i * c + i] = 1.0;
        }
        Tensor::from_vec(&[1, 1, c, c], data).unwrap()
    }

    fn zeroed_params(c: usize) -> MemoryParams<f64> {
        let mut rng = rng_from_seed(0);
        let mut p = MemoryParams::new(c, &mut rng);
        p.visit_mut(&mut |param| param.value = Tensor::zeros(&param.value.shape().to_vec()));
        p
    }

    fn tensor3(h: usize, w: usize, c: usize, vals: &[f64]) -> Tensor<f64> {
        Tensor::from_f64s(&[h, w, c], vals).unwrap()
    }

    #[test]
    fn identity_projection_returns_query() {
        let mut p = zeroed_params(2);
        p.proj.value = identity_kernel(2);
        let q = tensor3(1, 2, 2, &[0.3, -0.7, 1.5, 0.0]);
        let st = p.init_read_state_value(&q).unwrap();
        assert_eq!(st.h, q);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn zero_projection_returns_zeros() {
        let p = zeroed_params(2);
        let q = tensor3(1, 1, 2, &[3.0, 4.0]);
        let st = p.init_read_state_value(&q).unwrap();
        assert_eq!(st.h, Tensor::zeros(&[1, 1, 2]));
    }

    #[test]
    fn read_weights_on_identical_nodes_are_uniform() {
        let p = zeroed_params(2);
        let node = tensor3(1, 1, 2, &[1.0, 2.0]);
        let mem = GraphMemory::new(vec![node.clone(); 3], vec![0, 1, 2]).unwrap();
        let state = ReadState {
            h: tensor3(1, 1, 2, &[0.5, -0.5]),
            step: 0,
        };
        let (w, summary) = p.memory_read_value(&state, &mem).unwrap();
        for wi in &w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!(summary.max_abs_diff(&node).unwrap() < 1e-12);
    }

    #[test]
    fn read_two_node_example() {
        // h = (1,0), m1 = (1,0), m2 = (0,1): s = (1, 0),
        // w = (e/(e+1), 1/(e+1)), summary = w (componentwise).
        let p = zeroed_params(2);
        let mem = GraphMemory::new(
            vec![tensor3(1, 1, 2, &[1.0, 0.0]), tensor3(1, 1, 2, &[0.0, 1.0])],
            vec![0, 1],
        )
        .unwrap();
        let state = ReadState {
            h: tensor3(1, 1, 2, &[1.0, 0.0]),
            step: 0,
        };
        let (w, summary) = p.memory_read_value(&state, &mem).unwrap();
        assert!((w[0] - 0.7310585786300049).abs() < 1e-12);
        assert!((w[1] - 0.2689414213699951).abs() < 1e-12);
        assert!((summary.data()[0] - 0.7310585786300049).abs() < 1e-12);
        assert!((summary.data()[1] - 0.2689414213699951).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_state_gives_uniform_weights() {
        let p = zeroed_params(2);
        let mem = GraphMemory::new(
            vec![tensor3(1, 1, 2, &[1.0, 0.0]), tensor3(1, 1, 2, &[2.0, 0.0])],
            vec![0, 1],
        )
        .unwrap();
        let state = ReadState {
            h: tensor3(1, 1, 2, &[0.0, 3.0]),
            step: 0,
        };
        let (w, _) = p.memory_read_value(&state, &mem).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!((w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_kernels_halve_the_state() {
        let p = zeroed_params(2);
        let state = ReadState {
            h: tensor3(1, 1, 2, &[2.0, -4.0]),
            step: 0,
        };
        let summary = tensor3(1, 1, 2, &[1.0, 1.0]);
        let out = p.read_state_update_value(&state, &summary).unwrap();
        assert_eq!(out.step, 1);
        assert!((out.h.data()[0] - 1.0).abs() < 1e-12);
        assert!((out.h.data()[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_negative_gate_preserves_state() {
        let mut p = zeroed_params(2);
        // strongly negative gate pre-activation from the state path
        let mut k = identity_kernel(2);
        for v in k.data_mut() {
            *v *= -100.0;
        }
        p.read_gate_state.value = k;
        let state = ReadState {
            h: tensor3(1, 1, 2, &[1.0, 2.0]),
            step: 0,
        };
        let summary = tensor3(1, 1, 2, &[5.0, 5.0]);
        let out = p.read_state_update_value(&state, &summary).unwrap();
        assert!(out.h.max_abs_diff(&state.h).unwrap() < 1e-6);
    }

    #[test]
    fn edge_attention_scalar_case() {
        // W = H = 1: e reduces to the scalar m_i . W_e . m_j^T
        let mut p = zeroed_params(2);
        p.edge.value = Tensor::from_f64s(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let mi = tensor3(1, 1, 2, &[1.0, -1.0]);
        let mj = tensor3(1, 1, 2, &[2.0, 0.5]);
        let e = p.edge_attention_value(&mi, &mj).unwrap();
        assert_eq!(e.shape(), &[1, 1]);
        // (1, -1) W = (1-3, 2-4) = (-2, -2); dot (2, 0.5) = -5
        assert!((e.data()[0] + 5.0).abs() < 1e-12);
    }

    #[test]
    fn edge_attention_identity_on_orthonormal_rows() {
        let mut p = zeroed_params(2);
        p.edge.value = Tensor::from_f64s(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        // 2 positions x 2 channels, rows orthonormal
        let m = tensor3(1, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let e = p.edge_attention_value(&m, &m).unwrap();
        assert_eq!(e.shape(), &[2, 2]);
        assert_eq!(e.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn neighbor_aggregate_constant_absorption() {
        let mut rng = rng_from_seed(7);
        let p = MemoryParams::<f64>::new(2, &mut rng);
        // both nodes constant per channel: every position of c_i equals that constant
        let v = tensor3(2, 2, 2, &[3.0, -1.0, 3.0, -1.0, 3.0, -1.0, 3.0, -1.0]);
        let mem = GraphMemory::new(vec![v.clone(), v.clone()], vec![0, 1]).unwrap();
        let c0 = p.neighbor_aggregate_value(&mem, 0).unwrap();
        assert!(c0.max_abs_diff(&v).unwrap() < 1e-9);
    }

    #[test]
    fn neighbor_aggregate_single_node_is_zero() {
        let mut rng = rng_from_seed(8);
        let p = MemoryParams::<f64>::new(2, &mut rng);
        let mem = GraphMemory::new(vec![tensor3(1, 2, 2, &[1.0, 2.0, 3.0, 4.0])], vec![0]).unwrap();
        let c0 = p.neighbor_aggregate_value(&mem, 0).unwrap();
        assert_eq!(c0, Tensor::zeros(&[1, 2, 2]));
    }

    #[test]
    fn neighbor_aggregate_index_out_of_range() {
        let mut rng = rng_from_seed(8);
        let p = MemoryParams::<f64>::new(2, &mut rng);
        let mem = GraphMemory::new(vec![tensor3(1, 1, 2, &[1.0, 2.0])], vec![0]).unwrap();
        assert!(matches!(
            p.neighbor_aggregate_value(&mem, 3),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn zero_kernels_halve_every_node_on_write() {
        let p = zeroed_params(2);
        let mem = GraphMemory::new(
            vec![tensor3(1, 1, 2, &[2.0, 4.0]), tensor3(1, 1, 2, &[-6.0, 0.0])],
            vec![0, 1],
        )
        .unwrap();
        let state = ReadState {
            h: tensor3(1, 1, 2, &[1.0, 1.0]),
            step: 1,
        };
        let out = p.memory_write_value(&mem, &state).unwrap();
        assert!((out.node(0).data()[0] - 1.0).abs() < 1e-12);
        assert!((out.node(0).data()[1] - 2.0).abs() < 1e-12);
        assert!((out.node(1).data()[0] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn closed_write_gate_preserves_memory() {
        let mut p = zeroed_params(2);
        let mut k = identity_kernel(2);
        for v in k.data_mut() {
            *v *= -100.0;
        }
        p.write_gate_state.value = k;
        let mem = GraphMemory::new(
            vec![tensor3(1, 1, 2, &[2.0, 4.0]), tensor3(1, 1, 2, &[1.0, -1.0])],
            vec![0, 1],
        )
        .unwrap();
        let state = ReadState {
            h: tensor3(1, 1, 2, &[1.0, 1.0]),
            step: 1,
        };
        let out = p.memory_write_value(&mem, &state).unwrap();
        for i in 0..2 {
            assert!(out.node(i).max_abs_diff(mem.node(i)).unwrap() < 1e-6);
        }
    }

    #[test]
    fn k0_is_exact_identity_on_memory() {
        let mut rng = rng_from_seed(11);
        let p = MemoryParams::<f64>::new(3, &mut rng);
        let nodes: Vec<Tensor<f64>> = (0..3)
            .map(|i| {
                Tensor::from_f64s(
                    &[2, 2, 3],
                    &(0..12).map(|j| ((i * 12 + j) as f64) * 0.1 - 0.5).collect::<Vec<_>>(),
                )
                .unwrap()
            })
            .collect();
        let mem = GraphMemory::new(nodes.clone(), vec![0, 1, 2]).unwrap();
        let q = Tensor::from_f64s(&[2, 2, 3], &(0..12).map(|j| j as f64 * 0.05).collect::<Vec<_>>())
            .unwrap();
        let (h, out, weights) = p.episodic_reason_value(&q, &mem, 0).unwrap();
        assert!(weights.is_empty());
        let expect = p.init_read_state_value(&q).unwrap();
        assert_eq!(h, expect.h);
        for i in 0..3 {
            assert_eq!(out.node(i), mem.node(i), "node {i} must be bitwise unchanged");
        }
    }

    #[test]
    fn reason_step_count_and_size_fixed() {
        let mut rng = rng_from_seed(12);
        let p = MemoryParams::<f64>::new(2, &mut rng);
        let mk = |seed: u64| {
            let mut r = rng_from_seed(seed);
            use rand::Rng as _;
            Tensor::from_f64s(
                &[2, 2, 2],
                &(0..8).map(|_| r.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
            )
            .unwrap()
        };
        let mem = GraphMemory::new(vec![mk(1), mk(2), mk(3), mk(4)], vec![0, 1, 2, 3]).unwrap();
        for k in 0..4 {
            let (_, out, weights) = p.episodic_reason_value(&mk(9), &mem, k).unwrap();
            assert_eq!(out.len(), mem.len());
            assert_eq!(weights.len(), k);
        }
    }
}
