//! AdamW with per-group learning rate and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; off by default.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            max_grad_norm: None,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.max_grad_norm.map_or(true, |m| m > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid AdamW config {self:?}")))
        }
    }
}

/// Tensors sharing a learning rate and weight decay.
pub struct ParamGroup<'a> {
    pub params: Vec<(String, &'a mut Tensor)>,
    pub lr: f64,
    pub weight_decay: f64,
}

impl<'a> ParamGroup<'a> {
    pub fn new(params: Vec<(String, &'a mut Tensor)>, lr: f64, weight_decay: f64) -> Self {
        Self {
            params,
            lr,
            weight_decay,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    /// One entry per parameter, in group order.
    pub moments: Vec<Moments>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub state: OptimizerState,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: OptimizerState::default(),
        })
    }

    /// One decoupled update over every group.
    ///
    /// `θ ← θ − lr·m̂/(√v̂ + eps) − lr·λ·θ`, with the decay term skipped when
    /// `λ = 0`. Missing gradients count as zero. Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, groups: &mut [ParamGroup<'_>]) -> Result<()> {
        let mut sq_norm = 0.0;
        let mut count = 0;
        for group in groups.iter() {
            for (name, t) in &group.params {
                if let Some(g) = t.grad() {
                    if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteGradient {
                            tensor: name.clone(),
                            position: pos,
                        });
                    }
                    sq_norm += g.iter().map(|v| v * v).sum::<f64>();
                }
                count += 1;
            }
        }
        if self.state.moments.is_empty() {
            self.state.moments = groups
                .iter()
                .flat_map(|g| g.params.iter())
                .map(|(_, t)| Moments {
                    first: vec![0.0; t.len()],
                    second: vec![0.0; t.len()],
                })
                .collect();
        }
        if self.state.moments.len() != count {
            return Err(Error::Contract(format!(
                "optimizer state tracks {} tensors, step received {count}",
                self.state.moments.len()
            )));
        }
        let clip = match self.config.max_grad_norm {
            Some(max) if sq_norm.sqrt() > max => max / sq_norm.sqrt(),
            _ => 1.0,
        };

        self.state.step += 1;
        let t = self.state.step as i32;
        let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);

        let mut k = 0;
        for group in groups.iter_mut() {
            let (lr, wd) = (group.lr, group.weight_decay);
            for (name, tensor) in group.params.iter_mut() {
                let moments = &mut self.state.moments[k];
                k += 1;
                if moments.first.len() != tensor.len() {
                    return Err(Error::Contract(format!(
                        "moment shape mismatch for {name}: {} vs {}",
                        moments.first.len(),
                        tensor.len()
                    )));
                }
                let grad = tensor.grad().map(<[f64]>::to_vec);
                let data = tensor.data_mut();
                for i in 0..data.len() {
                    let g = grad.as_ref().map_or(0.0, |g| g[i] * clip);
                    let m = &mut moments.first[i];
                    let v = &mut moments.second[i];
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    let theta = data[i];
                    let mut updated = theta - lr * (m_hat / (v_hat.sqrt() + eps));
                    if wd != 0.0 {
                        updated -= lr * wd * theta;
                    }
                    data[i] = updated;
                }
            }
        }
        Ok(())
    }
}

/// Clears every gradient slot without touching data.
pub fn zero_grads<'a>(tensors: impl IntoIterator<Item = &'a mut Tensor>) {
    for t in tensors {
        t.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_zero_grad(t: Tensor) -> Tensor {
        let mut t = t.with_grad();
        let zeros = vec![0.0; t.len()];
        t.accumulate_grad(&zeros);
        t
    }

    #[test]
    fn zero_grads_no_decay_is_bit_identical() {
        let mut p = with_zero_grad(Tensor::vector(vec![0.3, -1.7, 2.5e-3]));
        let before = p.clone();
        let mut opt = AdamW::new(AdamWConfig::default()).unwrap();
        for _ in 0..10 {
            let mut groups = [ParamGroup::new(vec![("p".into(), &mut p)], 0.01, 0.0)];
            opt.step(&mut groups).unwrap();
        }
        assert_eq!(p.data(), before.data());
    }

    #[test]
    fn zero_grads_decay_matches_closed_form() {
        let init = vec![1.0, -0.5, 3.0];
        let mut p = with_zero_grad(Tensor::vector(init.clone()));
        let mut opt = AdamW::new(AdamWConfig::default()).unwrap();
        for _ in 0..10 {
            let mut groups = [ParamGroup::new(vec![("p".into(), &mut p)], 0.01, 1e-5)];
            opt.step(&mut groups).unwrap();
        }
        let factor = (1.0f64 - 1e-7).powi(10);
        for (got, x) in p.data().iter().zip(&init) {
            assert!((got - x * factor).abs() <= 1e-12);
        }
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // oracle: f(θ) = (θ - 3)², gradient 2(θ - 3)
        let mut p = Tensor::vector(vec![0.0]).with_grad();
        let mut opt = AdamW::new(AdamWConfig::default()).unwrap();
        for _ in 0..500 {
            p.zero_grad();
            let g = 2.0 * (p.data()[0] - 3.0);
            p.accumulate_grad(&[g]);
            let mut groups = [ParamGroup::new(vec![("theta".into(), &mut p)], 0.1, 0.0)];
            opt.step(&mut groups).unwrap();
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-3, "θ = {}", p.data()[0]);
    }

    #[test]
    fn nan_gradient_names_tensor_and_leaves_data() {
        let mut ok = with_zero_grad(Tensor::vector(vec![1.0]));
        let mut bad = Tensor::vector(vec![1.0, 2.0]).with_grad();
        bad.accumulate_grad(&[0.0, f64::NAN]);
        let mut opt = AdamW::new(AdamWConfig::default()).unwrap();
        let mut groups = [ParamGroup::new(
            vec![("ok".into(), &mut ok), ("coef".into(), &mut bad)],
            0.1,
            0.0,
        )];
        let err = opt.step(&mut groups).unwrap_err();
        assert!(err.to_string().contains("coef"), "{err}");
        assert_eq!(ok.data(), &[1.0]);
        assert_eq!(opt.state.step, 0);
    }

    #[test]
    fn missing_grad_is_zero() {
        let mut p = Tensor::vector(vec![1.5]);
        let mut opt = AdamW::new(AdamWConfig::default()).unwrap();
        let mut groups = [ParamGroup::new(vec![("p".into(), &mut p)], 0.1, 0.0)];
        opt.step(&mut groups).unwrap();
        assert_eq!(p.data(), &[1.5]);
    }

    #[test]
    fn lambda_zero_equals_plain_adam() {
        let mut p = Tensor::vector(vec![0.7]).with_grad();
        p.accumulate_grad(&[0.25]);
        let mut opt = AdamW::new(AdamWConfig::default()).unwrap();
        let mut groups = [ParamGroup::new(vec![("p".into(), &mut p)], 0.01, 0.0)];
        opt.step(&mut groups).unwrap();
        // first Adam step moves by lr * g / (|g| + eps)
        let expected = 0.7 - 0.01 * (0.25 / (0.25 + 1e-8));
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn clipping_bounds_the_step_input() {
        let mut p = Tensor::vector(vec![0.0, 0.0]).with_grad();
        p.accumulate_grad(&[30.0, 40.0]);
        let cfg = AdamWConfig {
            max_grad_norm: Some(1.0),
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(cfg).unwrap();
        let mut groups = [ParamGroup::new(vec![("p".into(), &mut p)], 0.1, 0.0)];
        opt.step(&mut groups).unwrap();
        // (1 - β1) * 0.6 for the clipped first coordinate
        assert!((opt.state.moments[0].first[0] - 0.1 * 0.6).abs() < 1e-12);
    }

    #[test]
    fn zero_grads_idempotent_and_separate_from_data() {
        let mut p = Tensor::vector(vec![1.0, 2.0]).with_grad();
        p.accumulate_grad(&[3.0, 4.0]);
        zero_grads([&mut p]);
        assert_eq!(p.grad().unwrap(), &[0.0, 0.0]);
        zero_grads([&mut p]);
        assert_eq!(p.grad().unwrap(), &[0.0, 0.0]);
        assert_eq!(p.data(), &[1.0, 2.0]);
    }
}
