//! Finite-difference gradient verification.
//!
//! Central differences in f64 with step 1e-6, compared elementwise against
//! the tape's analytic gradients at relative error <= 1e-4 (guarded against
//! vanishing denominators). Checks cover every tape op, a composite graph on
//! a 4x4x2 toy tensor, the memory module, and the full tiny segmentation
//! model. The numeric side only ever calls the forward path, so it stays
//! independent of the backward implementation it certifies.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::Result;
use crate::memory::{GraphMemory, MemoryParams};
use crate::rng_from_seed;
use crate::segnet::{GraphMemSegNet, Mode, ModelConfig, SupportInput};
use crate::tape::{NodeId, Tape};
use crate::tensor::{HasParams, Tensor};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Elementwise relative-error tolerance.
pub const FD_TOL: f64 = 1e-4;

/// Guarded relative error. The guard floor matters: central differences of a
/// loss of magnitude ~1 carry ~1e-9 of rounding noise at step 1e-6, so
/// gradients below the floor compare absolutely (|a - n| <= tol * floor =
/// 1e-8) instead of drowning in that noise; anything at or above the floor
/// meets the pure relative criterion.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn from_err(name: &str, max_rel_err: f64) -> Self {
        CheckResult {
            name: String::from(name),
            max_rel_err,
            tolerance: FD_TOL,
            passed: max_rel_err <= FD_TOL,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<28} max_rel_err={:.3e} tol={:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn lines(&self) -> Vec<String> {
        self.checks.iter().map(|c| c.line()).collect()
    }

    fn merge(&mut self, other: GradCheckReport) {
        self.checks.extend(other.checks);
    }
}

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = rng_from_seed(seed);
    let n: usize = shape.iter().product();
    Tensor::from_f64s(
        shape,
        &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
    )
    .unwrap()
}

/// Random values kept away from zero so relu kinks cannot sit inside the
/// finite-difference bracket.
fn rand_tensor_off_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut t = rand_tensor(shape, seed);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += if *v >= 0.0 { 0.1 } else { -0.1 };
        }
    }
    t
}

fn rand_binary(h: usize, w: usize, seed: u64) -> Vec<u8> {
    let mut rng = rng_from_seed(seed);
    (0..h * w).map(|_| u8::from(rng.gen_bool(0.5))).collect()
}

/// Generic leaf-input check: rebuilds the graph (forward only) twice per
/// perturbed element and once for the analytic gradients.
fn check_graph<F>(name: &str, inputs: &[Tensor<f64>], build: F) -> CheckResult
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids).expect("gradcheck graph build");
        tape.value(loss).item().expect("scalar loss")
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &ids).expect("gradcheck graph build");
    let store = tape.backward(loss).expect("backward");

    let mut work = inputs.to_vec();
    let mut max_err = 0.0f64;
    for (ti, input) in inputs.iter().enumerate() {
        let zero = Tensor::zeros(input.shape());
        let analytic = store.grad(ids[ti]).unwrap_or(&zero).clone();
        for i in 0..input.numel() {
            let orig = work[ti].data()[i];
            work[ti].data_mut()[i] = orig + FD_STEP;
            let lp = eval(&work);
            work[ti].data_mut()[i] = orig - FD_STEP;
            let lm = eval(&work);
            work[ti].data_mut()[i] = orig;
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            max_err = max_err.max(rel_err(analytic.data()[i], numeric));
        }
    }
    CheckResult::from_err(name, max_err)
}

/// Weighted sum turns any tensor into a scalar loss without symmetry.
fn weighted_sum(tape: &mut Tape<f64>, x: NodeId, seed: u64) -> Result<NodeId> {
    let shape = tape.value(x).shape().to_vec();
    let c = tape.leaf(rand_tensor(&shape, seed));
    let prod = tape.hadamard(x, c)?;
    tape.sum(prod)
}

/// Checks every primitive op against central differences.
pub fn check_op_suite() -> GradCheckReport {
    let mut report = GradCheckReport::default();

    report.checks.push(check_graph(
        "op.conv2d_3x3",
        &[rand_tensor(&[4, 5, 2], 1), rand_tensor(&[3, 3, 2, 3], 2)],
        |tape, ids| {
            let y = tape.conv2d(ids[0], ids[1], 1, 1)?;
            weighted_sum(tape, y, 100)
        },
    ));
    report.checks.push(check_graph(
        "op.conv2d_1x1",
        &[rand_tensor(&[3, 3, 4], 3), rand_tensor(&[1, 1, 4, 2], 4)],
        |tape, ids| {
            let y = tape.conv2d(ids[0], ids[1], 1, 0)?;
            weighted_sum(tape, y, 101)
        },
    ));
    report.checks.push(check_graph(
        "op.bias_add",
        &[rand_tensor(&[3, 3, 2], 5), rand_tensor(&[2], 6)],
        |tape, ids| {
            let y = tape.bias_add(ids[0], ids[1])?;
            weighted_sum(tape, y, 102)
        },
    ));
    report.checks.push(check_graph(
        "op.matmul",
        &[rand_tensor(&[3, 4], 7), rand_tensor(&[4, 2], 8)],
        |tape, ids| {
            let y = tape.matmul(ids[0], ids[1])?;
            weighted_sum(tape, y, 103)
        },
    ));
    report.checks.push(check_graph(
        "op.transpose",
        &[rand_tensor(&[3, 4], 9)],
        |tape, ids| {
            let y = tape.transpose(ids[0])?;
            weighted_sum(tape, y, 104)
        },
    ));
    report.checks.push(check_graph(
        "op.softmax_vec",
        &[rand_tensor(&[5], 10)],
        |tape, ids| {
            let y = tape.softmax(ids[0], 0)?;
            weighted_sum(tape, y, 105)
        },
    ));
    report.checks.push(check_graph(
        "op.softmax_rows",
        &[rand_tensor(&[3, 4], 11)],
        |tape, ids| {
            let y = tape.softmax(ids[0], 1)?;
            weighted_sum(tape, y, 106)
        },
    ));
    report.checks.push(check_graph(
        "op.softmax_channels",
        &[rand_tensor(&[2, 2, 3], 12)],
        |tape, ids| {
            let y = tape.softmax(ids[0], 2)?;
            weighted_sum(tape, y, 107)
        },
    ));
    report.checks.push(check_graph(
        "op.sigmoid",
        &[rand_tensor(&[3, 3], 13)],
        |tape, ids| {
            let y = tape.sigmoid(ids[0])?;
            weighted_sum(tape, y, 108)
        },
    ));
    report.checks.push(check_graph(
        "op.relu",
        &[rand_tensor_off_zero(&[4, 4], 14)],
        |tape, ids| {
            let y = tape.relu(ids[0])?;
            weighted_sum(tape, y, 109)
        },
    ));
    report.checks.push(check_graph(
        "op.add",
        &[rand_tensor(&[2, 3], 15), rand_tensor(&[2, 3], 16)],
        |tape, ids| {
            let y = tape.add(ids[0], ids[1])?;
            weighted_sum(tape, y, 110)
        },
    ));
    report.checks.push(check_graph(
        "op.hadamard",
        &[rand_tensor(&[2, 3], 17), rand_tensor(&[2, 3], 18)],
        |tape, ids| {
            let y = tape.hadamard(ids[0], ids[1])?;
            weighted_sum(tape, y, 111)
        },
    ));
    report.checks.push(check_graph(
        "op.affine",
        &[rand_tensor(&[4], 19)],
        |tape, ids| {
            let y = tape.affine(ids[0], 2.5, -1.0)?;
            weighted_sum(tape, y, 112)
        },
    ));
    report.checks.push(check_graph(
        "op.concat_channels",
        &[rand_tensor(&[2, 2, 2], 20), rand_tensor(&[2, 2, 3], 21)],
        |tape, ids| {
            let y = tape.concat_channels(ids[0], ids[1])?;
            weighted_sum(tape, y, 113)
        },
    ));
    report.checks.push(check_graph(
        "op.avg_pool2",
        &[rand_tensor(&[4, 4, 2], 22)],
        |tape, ids| {
            let y = tape.avg_pool2(ids[0])?;
            weighted_sum(tape, y, 114)
        },
    ));
    report.checks.push(check_graph(
        "op.upsample_bilinear2",
        &[rand_tensor(&[3, 3, 2], 23)],
        |tape, ids| {
            let y = tape.upsample2(ids[0])?;
            weighted_sum(tape, y, 115)
        },
    ));
    report.checks.push(check_graph(
        "op.reshape",
        &[rand_tensor(&[2, 6], 24)],
        |tape, ids| {
            let y = tape.reshape(ids[0], &[3, 4])?;
            weighted_sum(tape, y, 116)
        },
    ));
    report.checks.push(check_graph(
        "op.cosine_similarity",
        &[rand_tensor(&[2, 2, 2], 25), rand_tensor(&[2, 2, 2], 26)],
        |tape, ids| tape.cosine_similarity(ids[0], ids[1]),
    ));
    report.checks.push(check_graph(
        "op.mul_scalar",
        &[rand_tensor(&[3, 2], 27), rand_tensor(&[3, 2], 28)],
        |tape, ids| {
            let s = tape.sum(ids[0])?;
            let y = tape.mul_scalar(s, ids[1])?;
            weighted_sum(tape, y, 117)
        },
    ));
    report.checks.push(check_graph(
        "op.stack_index_scalars",
        &[rand_tensor(&[2, 2], 29), rand_tensor(&[2, 2], 30)],
        |tape, ids| {
            let s0 = tape.cosine_similarity(ids[0], ids[1])?;
            let s1 = tape.sum(ids[0])?;
            let v = tape.stack_scalars(&[s0, s1])?;
            let sm = tape.softmax(v, 0)?;
            let w0 = tape.index_scalar(sm, 0)?;
            let y = tape.mul_scalar(w0, ids[1])?;
            weighted_sum(tape, y, 118)
        },
    ));
    report.checks.push(check_graph(
        "op.sum",
        &[rand_tensor(&[3, 3], 31)],
        |tape, ids| tape.sum(ids[0]),
    ));
    report.checks.push(check_graph(
        "op.cross_entropy",
        &[rand_tensor(&[3, 3, 2], 32)],
        |tape, ids| {
            let probs = tape.softmax(ids[0], 2)?;
            tape.cross_entropy(probs, &rand_binary(3, 3, 33))
        },
    ));
    report
}

/// One composite graph on 4x4x2 tensors chaining every op kind end to end.
pub fn check_engine_composite() -> CheckResult {
    let inputs = vec![
        rand_tensor_off_zero(&[4, 4, 2], 40), // x
        rand_tensor(&[3, 3, 2, 2], 41),       // conv kernel
        rand_tensor(&[2], 42),                // bias
        rand_tensor(&[1, 1, 4, 2], 43),       // head kernel
        rand_tensor(&[4, 4, 2], 44),          // second branch input
    ];
    check_graph("engine.composite_4x4x2", &inputs, |tape, ids| {
        // segmentation-like path
        let c = tape.conv2d(ids[0], ids[1], 1, 1)?;
        let b = tape.bias_add(c, ids[2])?;
        let r = tape.relu(b)?;
        let p = tape.avg_pool2(r)?;
        let u = tape.upsample2(p)?;
        let s = tape.sigmoid(ids[4])?;
        let cat = tape.concat_channels(u, s)?;
        let head = tape.conv2d(cat, ids[3], 1, 0)?;
        let probs = tape.softmax(head, 2)?;
        let ce = tape.cross_entropy(probs, &rand_binary(4, 4, 45))?;
        // memory-like path: cosine read weights over two "nodes"
        let s0 = tape.cosine_similarity(ids[0], ids[4])?;
        let sm = tape.sum(ids[4])?;
        let half = tape.scale(sm, 0.05)?;
        let sv = tape.stack_scalars(&[s0, half])?;
        let w = tape.softmax(sv, 0)?;
        let w0 = tape.index_scalar(w, 0)?;
        let w1 = tape.index_scalar(w, 1)?;
        let t0 = tape.mul_scalar(w0, ids[0])?;
        let t1 = tape.mul_scalar(w1, ids[4])?;
        let summary = tape.add(t0, t1)?;
        let l2 = weighted_sum(tape, summary, 119)?;
        // relation path: flatten, bilinear product, row softmax
        let fa = tape.reshape(ids[0], &[16, 2])?;
        let fb = tape.reshape(ids[4], &[16, 2])?;
        let fbt = tape.transpose(fb)?;
        let e = tape.matmul(fa, fbt)?;
        let a = tape.softmax(e, 1)?;
        let ctx = tape.matmul(a, fb)?;
        let l3 = weighted_sum(tape, ctx, 120)?;
        let gate = tape.one_minus(w0)?;
        let l3g = tape.mul_scalar(gate, l3)?;
        let l3s = tape.sum(l3g)?;
        let t = tape.add(ce, l2)?;
        tape.add(t, l3s)
    })
}

// ---- parameter-space checks ------------------------------------------------

fn set_param_element<M: HasParams<f64>>(model: &mut M, name: &str, idx: usize, v: f64) {
    model.visit_params_mut(&mut |p| {
        if p.name == name {
            p.value.data_mut()[idx] = v;
        }
    });
}

fn param_element<M: HasParams<f64>>(model: &M, name: &str, idx: usize) -> f64 {
    let mut out = 0.0;
    model.visit_params(&mut |p| {
        if p.name == name {
            out = p.value.data()[idx];
        }
    });
    out
}

/// Compares analytic parameter gradients against central differences of the
/// given forward loss. `analytic` maps parameter name to gradient (absent
/// means zero).
fn fd_over_params<M: HasParams<f64>>(
    name: &str,
    model: &mut M,
    forward: &dyn Fn(&M) -> f64,
    analytic: &BTreeMap<String, Tensor<f64>>,
) -> CheckResult {
    let names: Vec<(String, usize)> = {
        let mut v = Vec::new();
        model.visit_params(&mut |p| v.push((p.name.clone(), p.value.numel())));
        v
    };
    let mut max_err = 0.0f64;
    for (pname, numel) in names {
        for i in 0..numel {
            let orig = param_element(model, &pname, i);
            set_param_element(model, &pname, i, orig + FD_STEP);
            let lp = forward(model);
            set_param_element(model, &pname, i, orig - FD_STEP);
            let lm = forward(model);
            set_param_element(model, &pname, i, orig);
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let a = analytic.get(&pname).map(|g| g.data()[i]).unwrap_or(0.0);
            max_err = max_err.max(rel_err(a, numeric));
        }
    }
    CheckResult::from_err(name, max_err)
}

fn collect_param_grads<M: HasParams<f64>>(model: &M) -> BTreeMap<String, Tensor<f64>> {
    let mut map = BTreeMap::new();
    model.visit_params(&mut |p| {
        if let Some(g) = &p.grad {
            map.insert(p.name.clone(), g.clone());
        }
    });
    map
}

/// Adapter giving `MemoryParams` a `HasParams` view.
struct MemWrap<'a>(&'a mut MemoryParams<f64>);

impl<'a> HasParams<f64> for MemWrap<'a> {
    fn visit_params(&self, f: &mut dyn FnMut(&crate::tensor::Parameter<f64>)) {
        self.0.visit(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut crate::tensor::Parameter<f64>)) {
        self.0.visit_mut(f);
    }
}

/// Memory-module check on W=H=2, C=3, N=3, K=2: gradients of a scalar loss
/// on h_K w.r.t. all controller parameters and the initial node embeddings.
pub fn check_memory_module() -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let c = 3;
    let (n, k) = (3usize, 2usize);
    let mut rng = rng_from_seed(50);
    let mut params = MemoryParams::<f64>::new(c, &mut rng);
    let q = rand_tensor(&[2, 2, c], 51);
    let nodes: Vec<Tensor<f64>> = (0..n).map(|i| rand_tensor(&[2, 2, c], 60 + i as u64)).collect();

    // gradients w.r.t. the query and the initial node embeddings
    let mut inputs = vec![q.clone()];
    inputs.extend(nodes.iter().cloned());
    {
        let params = params.clone();
        report.checks.push(check_graph(
            "memory.inputs_w2h2c3n3k2",
            &inputs,
            move |tape, ids| {
                let (h, _, _) = params.episodic_reason(tape, ids[0], &ids[1..], k)?;
                weighted_sum(tape, h, 121)
            },
        ));
    }

    // gradients w.r.t. every controller parameter, inputs held fixed
    let forward = {
        let q = q.clone();
        let nodes = nodes.clone();
        move |m: &MemWrap<'_>| -> f64 {
            let mem = GraphMemory::new(nodes.clone(), (0..n).collect()).unwrap();
            let (h, _, _) = m.0.episodic_reason_value(&q, &mem, k).unwrap();
            let w = rand_tensor(h.shape(), 121);
            h.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
        }
    };
    let analytic = {
        let mut tape = Tape::new();
        let qn = tape.leaf(q.clone());
        let node_ids: Vec<NodeId> = nodes.iter().map(|t| tape.leaf(t.clone())).collect();
        let (h, _, _) = params.episodic_reason(&mut tape, qn, &node_ids, k).unwrap();
        let loss = weighted_sum(&mut tape, h, 121).unwrap();
        let store = tape.backward(loss).unwrap();
        let mut view = MemWrap(&mut params);
        view.zero_grads();
        crate::optim::apply_tape_grads(&mut view, &tape, &store, 1.0).unwrap();
        collect_param_grads(&view)
    };
    let mut view = MemWrap(&mut params);
    report
        .checks
        .push(fd_over_params("memory.params_w2h2c3n3k2", &mut view, &forward, &analytic));
    report
}

/// Full tiny model: 16x16 frames, widths [4, 4, 8, 8], N=2, K=1, f64,
/// cross-entropy loss; every parameter checked.
pub fn check_full_model() -> CheckResult {
    let cfg = ModelConfig {
        widths: [4, 4, 8, 8],
        mode: Mode::OVos,
    };
    let mut model = GraphMemSegNet::<f64>::new(cfg, 70);
    let supports: Vec<SupportInput<f64>> = (0..2u64)
        .map(|i| SupportInput {
            frame: rand_tensor(&[16, 16, 3], 71 + i),
            mask: Some(rand_tensor(&[16, 16, 1], 73 + i).map(|v| 0.5 * (v + 1.0))),
            label: Some(
                Tensor::from_f64s(
                    &[16, 16, 1],
                    &rand_binary(16, 16, 75 + i)
                        .iter()
                        .map(|&b| b as f64)
                        .collect::<Vec<_>>(),
                )
                .unwrap(),
            ),
        })
        .collect();
    let query = rand_tensor(&[16, 16, 3], 77);
    let target = rand_binary(16, 16, 78);

    let forward = {
        let supports = supports.clone();
        let query = query.clone();
        let target = target.clone();
        move |m: &GraphMemSegNet<f64>| -> f64 {
            let mut tape = Tape::new();
            let out = m.forward_clip(&mut tape, &supports, &query, 1).unwrap();
            let loss = tape.cross_entropy(out.pred, &target).unwrap();
            tape.value(loss).item().unwrap()
        }
    };
    let analytic = {
        let mut tape = Tape::new();
        let out = model.forward_clip(&mut tape, &supports, &query, 1).unwrap();
        let loss = tape.cross_entropy(out.pred, &target).unwrap();
        let store = tape.backward(loss).unwrap();
        model.zero_grads();
        crate::optim::apply_tape_grads(&mut model, &tape, &store, 1.0).unwrap();
        collect_param_grads(&model)
    };
    fd_over_params("model.tiny_16x16_n2_k1", &mut model, &forward, &analytic)
}

/// The whole suite, in the order the acceptance gate reports it.
pub fn full_suite() -> GradCheckReport {
    let mut report = check_op_suite();
    report.checks.push(check_engine_composite());
    report.merge(check_memory_module());
    report.checks.push(check_full_model());
    report
}
