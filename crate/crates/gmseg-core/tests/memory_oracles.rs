//! Graph-memory oracle tests: every controller operation is compared against
//! an independent straight-line transcription of its defining arithmetic,
//! written here with plain loops over flat f64 buffers (no tape, no shared
//! code with the implementation).

use gmseg_core::memory::{GraphMemory, MemoryParams, ReadState};
use gmseg_core::tensor::Tensor;
use gmseg_core::{rng_from_seed, Rng};
use rand::Rng as _;

const TOL: f64 = 1e-10;

// ---- reference arithmetic (oracle side) -------------------------------------

/// 1x1 convolution reference: kernel laid out [1, 1, cin, cout].
fn conv1x1_ref(kernel: &[f64], c: usize, x: &[f64]) -> Vec<f64> {
    let pixels = x.len() / c;
    let mut out = vec![0.0; x.len()];
    for p in 0..pixels {
        for co in 0..c {
            let mut acc = 0.0;
            for ci in 0..c {
                acc += x[p * c + ci] * kernel[ci * c + co];
            }
            out[p * c + co] = acc;
        }
    }
    out
}

fn sigmoid_ref(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn cosine_ref(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

fn softmax_ref(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|e| e / denom).collect()
}

struct RefParams {
    c: usize,
    proj: Vec<f64>,
    w_r_h: Vec<f64>,
    u_r_h: Vec<f64>,
    w_r_a: Vec<f64>,
    u_r_a: Vec<f64>,
    w_u_m: Vec<f64>,
    u_u_m: Vec<f64>,
    v_u_m: Vec<f64>,
    w_u_a: Vec<f64>,
    u_u_a: Vec<f64>,
    v_u_a: Vec<f64>,
    w_e: Vec<f64>,
}

impl RefParams {
    fn from(p: &MemoryParams<f64>) -> Self {
        let grab = |t: &Tensor<f64>| t.data().to_vec();
        RefParams {
            c: p.channels(),
            proj: grab(&p.proj.value),
            w_r_h: grab(&p.read_cand_state.value),
            u_r_h: grab(&p.read_cand_summary.value),
            w_r_a: grab(&p.read_gate_state.value),
            u_r_a: grab(&p.read_gate_summary.value),
            w_u_m: grab(&p.write_cand_state.value),
            u_u_m: grab(&p.write_cand_node.value),
            v_u_m: grab(&p.write_cand_ctx.value),
            w_u_a: grab(&p.write_gate_state.value),
            u_u_a: grab(&p.write_gate_node.value),
            v_u_a: grab(&p.write_gate_ctx.value),
            w_e: grab(&p.edge.value),
        }
    }

    /// Read weights and summary from similarities over the whole embeddings.
    fn read(&self, h: &[f64], nodes: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let sims: Vec<f64> = nodes.iter().map(|m| cosine_ref(h, m)).collect();
        let w = softmax_ref(&sims);
        let mut summary = vec![0.0; h.len()];
        for (wi, m) in w.iter().zip(nodes) {
            for (s, v) in summary.iter_mut().zip(m) {
                *s += wi * v;
            }
        }
        (w, summary)
    }

    /// Gated read-state renewal.
    fn state_update(&self, h: &[f64], summary: &[f64]) -> Vec<f64> {
        let cand_a = conv1x1_ref(&self.w_r_h, self.c, h);
        let cand_b = conv1x1_ref(&self.u_r_h, self.c, summary);
        let gate_a = conv1x1_ref(&self.w_r_a, self.c, h);
        let gate_b = conv1x1_ref(&self.u_r_a, self.c, summary);
        (0..h.len())
            .map(|i| {
                let cand = cand_a[i] + cand_b[i];
                let gate = sigmoid_ref(gate_a[i] + gate_b[i]);
                gate * cand + (1.0 - gate) * h[i]
            })
            .collect()
    }

    /// Position-pair relation of flattened nodes: M_i W_e M_j^T.
    fn edge(&self, mi: &[f64], mj: &[f64]) -> Vec<Vec<f64>> {
        let c = self.c;
        let pi = mi.len() / c;
        let pj = mj.len() / c;
        let mut e = vec![vec![0.0; pj]; pi];
        for p in 0..pi {
            for q in 0..pj {
                let mut acc = 0.0;
                for a in 0..c {
                    for b in 0..c {
                        acc += mi[p * c + a] * self.w_e[a * c + b] * mj[q * c + b];
                    }
                }
                e[p][q] = acc;
            }
        }
        e
    }

    /// Neighbor context: row-softmaxed relations applied to each neighbor.
    fn neighbor_ctx(&self, nodes: &[Vec<f64>], i: usize) -> Vec<f64> {
        let c = self.c;
        let positions = nodes[i].len() / c;
        let mut ctx = vec![0.0; nodes[i].len()];
        for (j, mj) in nodes.iter().enumerate() {
            if j == i {
                continue;
            }
            let e = self.edge(&nodes[i], mj);
            for p in 0..positions {
                let att = softmax_ref(&e[p]);
                for (q, aq) in att.iter().enumerate() {
                    for ch in 0..c {
                        ctx[p * c + ch] += aq * mj[q * c + ch];
                    }
                }
            }
        }
        ctx
    }

    /// Synchronous gated write over every node.
    fn write(&self, h: &[f64], nodes: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let contexts: Vec<Vec<f64>> = (0..nodes.len()).map(|i| self.neighbor_ctx(nodes, i)).collect();
        let wh = conv1x1_ref(&self.w_u_m, self.c, h);
        let gh = conv1x1_ref(&self.w_u_a, self.c, h);
        nodes
            .iter()
            .zip(&contexts)
            .map(|(m, ctx)| {
                let cm = conv1x1_ref(&self.u_u_m, self.c, m);
                let cc = conv1x1_ref(&self.v_u_m, self.c, ctx);
                let gm = conv1x1_ref(&self.u_u_a, self.c, m);
                let gc = conv1x1_ref(&self.v_u_a, self.c, ctx);
                (0..m.len())
                    .map(|i| {
                        let cand = wh[i] + cm[i] + cc[i];
                        let gate = sigmoid_ref(gh[i] + gm[i] + gc[i]);
                        gate * cand + (1.0 - gate) * m[i]
                    })
                    .collect()
            })
            .collect()
    }

    /// Full reasoning loop.
    fn reason(&self, q: &[f64], nodes: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut h = conv1x1_ref(&self.proj, self.c, q);
        let mut cur = nodes.to_vec();
        for _ in 0..k {
            let (_, summary) = self.read(&h, &cur);
            h = self.state_update(&h, &summary);
            cur = self.write(&h, &cur);
        }
        (h, cur)
    }
}

// ---- fixtures ----------------------------------------------------------------

fn rand_vals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn tensor3(h: usize, w: usize, c: usize, vals: &[f64]) -> Tensor<f64> {
    Tensor::from_f64s(&[h, w, c], vals).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

struct Fixture {
    params: MemoryParams<f64>,
    reference: RefParams,
    h: usize,
    w: usize,
    c: usize,
}

fn fixture(seed: u64, h: usize, w: usize, c: usize) -> Fixture {
    let mut rng = rng_from_seed(seed);
    let params = MemoryParams::<f64>::new(c, &mut rng);
    let reference = RefParams::from(&params);
    Fixture {
        params,
        reference,
        h,
        w,
        c,
    }
}

impl Fixture {
    fn rand_node(&self, rng: &mut Rng) -> Vec<f64> {
        rand_vals(rng, self.h * self.w * self.c)
    }

    fn mem_from(&self, nodes: &[Vec<f64>]) -> GraphMemory<f64> {
        GraphMemory::new(
            nodes
                .iter()
                .map(|n| tensor3(self.h, self.w, self.c, n))
                .collect(),
            (0..nodes.len()).collect(),
        )
        .unwrap()
    }
}

// ---- oracle-equivalence tests --------------------------------------------------

#[test]
fn projection_matches_conv_reference() {
    let fx = fixture(1, 3, 2, 4);
    let mut rng = rng_from_seed(2);
    let q = fx.rand_node(&mut rng);
    let got = fx
        .params
        .init_read_state_value(&tensor3(fx.h, fx.w, fx.c, &q))
        .unwrap();
    let want = conv1x1_ref(&fx.reference.proj, fx.c, &q);
    assert!(max_diff(got.h.data(), &want) < TOL);
}

#[test]
fn read_matches_transcription() {
    let fx = fixture(3, 2, 2, 3);
    let mut rng = rng_from_seed(4);
    for n in [1usize, 2, 4] {
        let h = fx.rand_node(&mut rng);
        let nodes: Vec<Vec<f64>> = (0..n).map(|_| fx.rand_node(&mut rng)).collect();
        let state = ReadState {
            h: tensor3(fx.h, fx.w, fx.c, &h),
            step: 0,
        };
        let (w_got, sum_got) = fx
            .params
            .memory_read_value(&state, &fx.mem_from(&nodes))
            .unwrap();
        let (w_want, sum_want) = fx.reference.read(&h, &nodes);
        assert!(max_diff(&w_got, &w_want) < TOL, "weights at n={n}");
        assert!(max_diff(sum_got.data(), &sum_want) < TOL, "summary at n={n}");
    }
}

#[test]
fn state_update_matches_transcription() {
    let fx = fixture(5, 2, 3, 3);
    let mut rng = rng_from_seed(6);
    for _ in 0..10 {
        let h = fx.rand_node(&mut rng);
        let summary = fx.rand_node(&mut rng);
        let got = fx
            .params
            .read_state_update_value(
                &ReadState {
                    h: tensor3(fx.h, fx.w, fx.c, &h),
                    step: 0,
                },
                &tensor3(fx.h, fx.w, fx.c, &summary),
            )
            .unwrap();
        let want = fx.reference.state_update(&h, &summary);
        assert!(max_diff(got.h.data(), &want) < TOL);
        assert_eq!(got.step, 1);
    }
}

#[test]
fn edge_attention_matches_chained_matmuls() {
    let fx = fixture(7, 2, 2, 3);
    let mut rng = rng_from_seed(8);
    let mi = fx.rand_node(&mut rng);
    let mj = fx.rand_node(&mut rng);
    let got = fx
        .params
        .edge_attention_value(&tensor3(fx.h, fx.w, fx.c, &mi), &tensor3(fx.h, fx.w, fx.c, &mj))
        .unwrap();
    let want = fx.reference.edge(&mi, &mj);
    let positions = fx.h * fx.w;
    assert_eq!(got.shape(), &[positions, positions]);
    for p in 0..positions {
        for q in 0..positions {
            assert!((got.data()[p * positions + q] - want[p][q]).abs() < TOL);
        }
    }
}

#[test]
fn neighbor_aggregate_matches_bruteforce_n3() {
    let fx = fixture(9, 2, 2, 3);
    let mut rng = rng_from_seed(10);
    let nodes: Vec<Vec<f64>> = (0..3).map(|_| fx.rand_node(&mut rng)).collect();
    let mem = fx.mem_from(&nodes);
    for i in 0..3 {
        let got = fx.params.neighbor_aggregate_value(&mem, i).unwrap();
        let want = fx.reference.neighbor_ctx(&nodes, i);
        assert!(max_diff(got.data(), &want) < TOL, "node {i}");
    }
}

#[test]
fn write_matches_transcription_n2() {
    let fx = fixture(11, 2, 2, 3);
    let mut rng = rng_from_seed(12);
    let h = fx.rand_node(&mut rng);
    let nodes: Vec<Vec<f64>> = (0..2).map(|_| fx.rand_node(&mut rng)).collect();
    let got = fx
        .params
        .memory_write_value(
            &fx.mem_from(&nodes),
            &ReadState {
                h: tensor3(fx.h, fx.w, fx.c, &h),
                step: 1,
            },
        )
        .unwrap();
    let want = fx.reference.write(&h, &nodes);
    for i in 0..2 {
        assert!(max_diff(got.node(i).data(), &want[i]) < TOL, "node {i}");
    }
}

#[test]
fn reason_matches_transcription_through_k3() {
    let fx = fixture(13, 2, 2, 3);
    let mut rng = rng_from_seed(14);
    let q = fx.rand_node(&mut rng);
    let nodes: Vec<Vec<f64>> = (0..3).map(|_| fx.rand_node(&mut rng)).collect();
    for k in 0..=3 {
        let (h_got, mem_got, _) = fx
            .params
            .episodic_reason_value(&tensor3(fx.h, fx.w, fx.c, &q), &fx.mem_from(&nodes), k)
            .unwrap();
        let (h_want, mem_want) = fx.reference.reason(&q, &nodes, k);
        assert!(max_diff(h_got.data(), &h_want) < TOL, "state at k={k}");
        for i in 0..3 {
            assert!(
                max_diff(mem_got.node(i).data(), &mem_want[i]) < TOL,
                "node {i} at k={k}"
            );
        }
    }
}

#[test]
fn reason_k1_equals_manual_composition() {
    let fx = fixture(15, 2, 2, 3);
    let mut rng = rng_from_seed(16);
    let q = tensor3(fx.h, fx.w, fx.c, &fx.rand_node(&mut rng));
    let nodes: Vec<Vec<f64>> = (0..3).map(|_| fx.rand_node(&mut rng)).collect();
    let mem = fx.mem_from(&nodes);

    let state0 = fx.params.init_read_state_value(&q).unwrap();
    let (_, summary) = fx.params.memory_read_value(&state0, &mem).unwrap();
    let state1 = fx.params.read_state_update_value(&state0, &summary).unwrap();
    let mem1 = fx.params.memory_write_value(&mem, &state1).unwrap();

    let (h_loop, mem_loop, _) = fx.params.episodic_reason_value(&q, &mem, 1).unwrap();
    assert!(h_loop.max_abs_diff(&state1.h).unwrap() < TOL);
    for i in 0..3 {
        assert!(mem_loop.node(i).max_abs_diff(mem1.node(i)).unwrap() < TOL);
    }
}

// ---- property tests over random draws -------------------------------------------

#[test]
fn invariants_over_1000_random_configurations() {
    let mut rng = rng_from_seed(17);
    for trial in 0..1000 {
        let c = rng.gen_range(1..4);
        let h = rng.gen_range(1..3);
        let w = rng.gen_range(1..3);
        let n = rng.gen_range(1..5);
        let mut prng = rng_from_seed(trial);
        let params = MemoryParams::<f64>::new(c, &mut prng);
        let hvals = rand_vals(&mut rng, h * w * c);
        let nodes: Vec<Vec<f64>> = (0..n).map(|_| rand_vals(&mut rng, h * w * c)).collect();
        let mem = GraphMemory::new(
            nodes.iter().map(|v| tensor3(h, w, c, v)).collect(),
            (0..n).collect(),
        )
        .unwrap();
        let state = ReadState {
            h: tensor3(h, w, c, &hvals),
            step: 0,
        };
        let (weights, _) = params.memory_read_value(&state, &mem).unwrap();
        let sum: f64 = weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6, "weights sum to 1 (trial {trial})");
        for &wv in &weights {
            assert!(wv >= 0.0, "nonnegative weights");
        }
        // similarities bounded
        for node in &nodes {
            let s = cosine_ref(&hvals, node);
            assert!((-1.0..=1.0).contains(&s));
        }
    }
}

#[test]
fn gates_stay_strictly_inside_unit_interval() {
    // recover the gate from the update: with cand and h known,
    // gate = (h' - h) / (cand - h) wherever cand != h
    let fx = fixture(18, 2, 2, 3);
    let mut rng = rng_from_seed(19);
    for _ in 0..100 {
        let h = fx.rand_node(&mut rng);
        let summary = fx.rand_node(&mut rng);
        let got = fx
            .params
            .read_state_update_value(
                &ReadState {
                    h: tensor3(fx.h, fx.w, fx.c, &h),
                    step: 0,
                },
                &tensor3(fx.h, fx.w, fx.c, &summary),
            )
            .unwrap();
        let cand_a = conv1x1_ref(&fx.reference.w_r_h, fx.c, &h);
        let cand_b = conv1x1_ref(&fx.reference.u_r_h, fx.c, &summary);
        for i in 0..h.len() {
            let cand = cand_a[i] + cand_b[i];
            if (cand - h[i]).abs() > 1e-9 {
                let gate = (got.h.data()[i] - h[i]) / (cand - h[i]);
                assert!(gate > 0.0 && gate < 1.0, "gate {gate} out of (0,1)");
            }
        }
    }
}

#[test]
fn permutation_equivariance_over_random_trials() {
    use rand::seq::SliceRandom as _;
    let mut rng = rng_from_seed(20);
    for trial in 0..100 {
        let n = *[2usize, 3, 5].choose(&mut rng).unwrap();
        let (h, w, c) = (2, 2, 3);
        let mut prng = rng_from_seed(1000 + trial);
        let params = MemoryParams::<f64>::new(c, &mut prng);
        let q = tensor3(h, w, c, &rand_vals(&mut rng, h * w * c));
        let nodes: Vec<Vec<f64>> = (0..n).map(|_| rand_vals(&mut rng, h * w * c)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);

        let mem = GraphMemory::new(
            nodes.iter().map(|v| tensor3(h, w, c, v)).collect(),
            (0..n).collect(),
        )
        .unwrap();
        let permuted = GraphMemory::new(
            perm.iter().map(|&i| tensor3(h, w, c, &nodes[i])).collect(),
            perm.clone(),
        )
        .unwrap();

        let k = 2;
        let (h_a, mem_a, _) = params.episodic_reason_value(&q, &mem, k).unwrap();
        let (h_b, mem_b, _) = params.episodic_reason_value(&q, &permuted, k).unwrap();
        assert!(
            h_a.max_abs_diff(&h_b).unwrap() < 1e-6,
            "read state invariant under node order (trial {trial})"
        );
        for (out_idx, &src) in perm.iter().enumerate() {
            assert!(
                mem_b.node(out_idx).max_abs_diff(mem_a.node(src)).unwrap() < 1e-6,
                "permuted node {out_idx} tracks source {src}"
            );
        }
    }
}

#[test]
fn memory_size_is_fixed_for_any_k() {
    let fx = fixture(21, 2, 2, 3);
    let mut rng = rng_from_seed(22);
    for n in 1..5 {
        let nodes: Vec<Vec<f64>> = (0..n).map(|_| fx.rand_node(&mut rng)).collect();
        let mem = fx.mem_from(&nodes);
        let q = tensor3(fx.h, fx.w, fx.c, &fx.rand_node(&mut rng));
        for k in 0..4 {
            let (_, out, _) = fx.params.episodic_reason_value(&q, &mem, k).unwrap();
            assert_eq!(out.len(), n);
            assert_eq!(out.provenance(), mem.provenance());
        }
    }
}
