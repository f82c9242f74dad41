//! Adam optimizer with a polynomial ("poly") learning-rate schedule.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
// f64 math via num-traits so the crate builds without std (libm backs it)
#[allow(unused_imports)]
use num_traits::Float as _;
use crate::tensor::{HasParams, Real, Tensor};

/// Effective learning rate `base * (1 - step/max_steps)^power`, clamped at 0
/// once `step` passes `max_steps`.
pub fn poly_lr(step: usize, base: f64, power: f64, max_steps: usize) -> f64 {
    if max_steps == 0 || step >= max_steps {
        return 0.0;
    }
    let frac = 1.0 - step as f64 / max_steps as f64;
    base * frac.powf(power)
}

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    pub power: f64,
    pub max_steps: usize,
}

impl AdamConfig {
    pub fn new(base_lr: f64, max_steps: usize) -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr,
            power: 1.0,
            max_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Config("adam: max_steps must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "adam: betas out of range: {} {}",
                self.beta1, self.beta2
            )));
        }
        Ok(())
    }
}

struct Moments<T: Real> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Per-parameter first/second moment state plus the step counter.
pub struct OptimizerState<T: Real> {
    pub cfg: AdamConfig,
    step: usize,
    moments: BTreeMap<String, Moments<T>>,
}

/// What one optimizer step did; `lr_clamped` warns that the schedule ran out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub step: usize,
    pub lr: f64,
    pub lr_clamped: bool,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(OptimizerState {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One Adam update with bias correction over every parameter that holds a
    /// gradient. Parameters without a gradient are left untouched (their
    /// moments do not decay either).
    pub fn step<M: HasParams<T>>(&mut self, model: &mut M) -> Result<StepInfo> {
        let lr = poly_lr(self.step, self.cfg.base_lr, self.cfg.power, self.cfg.max_steps);
        let clamped = self.step >= self.cfg.max_steps;
        let t = (self.step + 1) as i32;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let corr1 = T::from_f64(1.0 - self.cfg.beta1.powi(t));
        let corr2 = T::from_f64(1.0 - self.cfg.beta2.powi(t));
        let eps = T::from_f64(self.cfg.eps);
        let lr_t = T::from_f64(lr);

        let mut failure: Option<Error> = None;
        let moments = &mut self.moments;
        model.visit_params_mut(&mut |p| {
            if failure.is_some() {
                return;
            }
            let Some(grad) = p.grad.as_ref() else { return };
            if !grad.is_finite() {
                failure = Some(Error::NonFinite(format!("gradient of `{}`", p.name)));
                return;
            }
            let n = p.value.numel();
            let entry = moments.entry(p.name.clone()).or_insert_with(|| Moments {
                m: alloc::vec![T::zero(); n],
                v: alloc::vec![T::zero(); n],
            });
            if entry.m.len() != n {
                failure = Some(Error::Shape(format!(
                    "optimizer state for `{}` has {} elements, parameter has {n}",
                    p.name,
                    entry.m.len()
                )));
                return;
            }
            let gd = grad.data();
            let pd = p.value.data_mut();
            for i in 0..n {
                let g = gd[i];
                entry.m[i] = b1 * entry.m[i] + (T::one() - b1) * g;
                entry.v[i] = b2 * entry.v[i] + (T::one() - b2) * g * g;
                let m_hat = entry.m[i] / corr1;
                let v_hat = entry.v[i] / corr2;
                pd[i] = pd[i] - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        self.step += 1;
        Ok(StepInfo {
            step: self.step,
            lr,
            lr_clamped: clamped,
        })
    }
}

/// Scatters tape gradients back onto a model's parameters, scaled by `scale`
/// (batch averaging), accumulating over repeated calls.
pub fn apply_tape_grads<T: Real, M: HasParams<T>>(
    model: &mut M,
    tape: &crate::tape::Tape<T>,
    store: &crate::tape::GradStore<T>,
    scale: f64,
) -> Result<()> {
    let s = T::from_f64(scale);
    let mut grads: BTreeMap<&str, Tensor<T>> = BTreeMap::new();
    for (name, id) in tape.param_binds() {
        if let Some(g) = store.grad(*id) {
            grads.insert(name.as_str(), g.map(|v| v * s));
        }
    }
    let mut failure: Option<Error> = None;
    model.visit_params_mut(&mut |p| {
        if failure.is_some() {
            return;
        }
        if let Some(g) = grads.remove(p.name.as_str()) {
            if let Err(e) = p.accumulate_grad(&g) {
                failure = Some(e);
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(name) = grads.keys().next() {
        return Err(Error::Usage(format!(
            "tape binds parameter `{name}` that the model does not own"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Parameter;

    struct One(Parameter<f64>);
    impl HasParams<f64> for One {
        fn visit_params(&self, f: &mut dyn FnMut(&Parameter<f64>)) {
            f(&self.0);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f64>)) {
            f(&mut self.0);
        }
    }

    #[test]
    fn poly_lr_endpoints_and_midpoint() {
        assert_eq!(poly_lr(0, 1e-5, 1.0, 100), 1e-5);
        assert_eq!(poly_lr(100, 1e-5, 1.0, 100), 0.0);
        assert!((poly_lr(50, 1e-5, 1.0, 100) - 5e-6).abs() < 1e-20);
        // past the horizon the schedule clamps at zero
        assert_eq!(poly_lr(101, 1e-5, 1.0, 100), 0.0);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut model = One(Parameter::new(
            "w",
            Tensor::from_vec(&[2], alloc::vec![1.0, -2.0]).unwrap(),
        ));
        model.0.grad = Some(Tensor::zeros(&[2]));
        let mut opt = OptimizerState::new(AdamConfig::new(0.1, 10)).unwrap();
        opt.step(&mut model).unwrap();
        assert_eq!(model.0.value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn schedule_endpoint_freezes_parameters() {
        let mut model = One(Parameter::new("w", Tensor::scalar(1.0)));
        let mut opt = OptimizerState::new(AdamConfig::new(0.1, 1)).unwrap();
        model.0.grad = Some(Tensor::scalar(1.0));
        opt.step(&mut model).unwrap();
        // step counter now equals max_steps: lr clamps to 0 and warns
        model.0.grad = Some(Tensor::scalar(1.0));
        let before = model.0.value.item().unwrap();
        let info = opt.step(&mut model).unwrap();
        assert_eq!(info.lr, 0.0);
        assert!(info.lr_clamped);
        assert_eq!(model.0.value.item().unwrap(), before);
    }

    #[test]
    fn single_step_matches_adam_algebra() {
        // g = 1, fresh moments: m_hat = 1, v_hat = 1 so dw =~ -lr
        let mut model = One(Parameter::new("w", Tensor::scalar(0.0)));
        model.0.grad = Some(Tensor::scalar(1.0));
        let mut opt = OptimizerState::new(AdamConfig::new(0.1, 1_000_000_000)).unwrap();
        opt.step(&mut model).unwrap();
        let dw = model.0.value.item().unwrap();
        assert!((dw + 0.1).abs() < 1e-8, "dw = {dw}");
    }

    #[test]
    fn missing_gradient_skips_parameter() {
        let mut model = One(Parameter::new("w", Tensor::scalar(3.0)));
        let mut opt = OptimizerState::new(AdamConfig::new(0.1, 10)).unwrap();
        opt.step(&mut model).unwrap();
        assert_eq!(model.0.value.item().unwrap(), 3.0);
    }
}
