use std::collections::BTreeMap;

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One update of every parameter from its stored gradient, then zeroes the
/// gradients. Decay is applied to the weights before the Adam delta.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    for (name, _, grad) in params.iter_mut() {
        if let Some(i) = grad.data().iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient in parameter {name} at entry {i}"
            )));
        }
    }
    state.step_count += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1,
        beta2,
        epsilon,
        weight_decay,
    } = state.config;
    let t = state.step_count as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    for (name, value, grad) in params.iter_mut() {
        let len = value.len();
        let m = state
            .first
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; len]);
        let v = state
            .second
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; len]);
        for (i, p) in value.data_mut().iter_mut().enumerate() {
            let g = grad.data()[i];
            if weight_decay != 0.0 {
                *p -= lr * weight_decay * *p;
            }
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        grad.data_mut().fill(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new(0);
        s.insert("p", Tensor::new(1, 2, vec![v, -2.0 * v]).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn zero_grad_without_decay_is_noop() {
        let mut s = store(1.5);
        let mut st = AdamState::new(AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        adam_step(&mut s, &mut st).unwrap();
        assert_eq!(s.value("p").unwrap().data(), &[1.5, -3.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_grad_with_decay_scales() {
        let mut s = store(1.0);
        let mut st = AdamState::new(AdamConfig {
            weight_decay: 0.1,
            learning_rate: 0.01,
            ..Default::default()
        });
        adam_step(&mut s, &mut st).unwrap();
        let d = s.value("p").unwrap().data();
        assert!((d[0] - 0.999).abs() < 1e-15);
        assert!((d[1] + 2.0 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = ParamStore::new(0);
        s.insert("p", Tensor::scalar(1.0)).unwrap();
        let mut tape = crate::diffcore::Tape::new();
        let b = s.bind(&mut tape);
        let p = b.get("p").unwrap();
        let loss = tape.sum(p).unwrap();
        tape.backward(loss).unwrap();
        s.collect_grads(&tape, &b);
        let mut st = AdamState::new(AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        });
        adam_step(&mut s, &mut st).unwrap();
        // decay 1 - 0.1*5e-4, then m_hat = v_hat = 1 gives a step of 0.1
        let expected = 1.0 - 0.1 * 5e-4 - 0.1 / (1.0 + 1e-8);
        let got = s.value("p").unwrap().data()[0];
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.9).abs() < 1e-3);
        assert_eq!(s.grad("p").unwrap().data(), &[0.0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = ParamStore::new(0);
        s.insert("bad", Tensor::scalar(1.0)).unwrap();
        for (_, _, g) in s.iter_mut() {
            g.data_mut()[0] = f64::NAN;
        }
        let err = adam_step(&mut s, &mut AdamState::new(AdamConfig::default())).unwrap_err();
        assert!(err.to_string().contains("bad"));
    }
}
