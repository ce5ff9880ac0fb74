use serde::{Deserialize, Serialize};

use super::{check_len, NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// First-order optimizer with per-slot state.
///
/// A slot is one parameter tensor; callers pick stable slot ids so momentum
/// and Adam moments follow the right tensor across steps.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    slots: Vec<Slot>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig(format!(
                "learning rate must be finite and >= 0, got {learning_rate}"
            )));
        }
        match kind {
            OptimizerKind::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                return Err(NnError::InvalidConfig(format!(
                    "momentum must be in [0, 1), got {momentum}"
                )));
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || epsilon <= 0.0 => {
                return Err(NnError::InvalidConfig(
                    "adam needs beta1, beta2 in [0, 1) and epsilon > 0".into(),
                ));
            }
            _ => {}
        }
        Ok(Self {
            kind,
            learning_rate,
            slots: Vec::new(),
        })
    }

    /// Plain SGD: `p <- p - lr * g`.
    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd { momentum: 0.0 }, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::adam_default(), learning_rate)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// Updates `params` in place from `grads`. Fails without touching
    /// `params` if any gradient is non-finite.
    pub fn step(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("optimizer gradient", params.len(), grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient {
                param: format!("optimizer slot {slot}"),
            });
        }
        if self.slots.len() <= slot {
            self.slots.resize_with(slot + 1, Slot::default);
        }
        let lr = self.learning_rate;
        let state = &mut self.slots[slot];
        match self.kind {
            OptimizerKind::Sgd { momentum } if momentum == 0.0 => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Sgd { momentum } => {
                if state.m.len() != params.len() {
                    state.m = vec![0.0; params.len()];
                }
                for ((p, g), m) in params.iter_mut().zip(grads).zip(state.m.iter_mut()) {
                    *m = momentum * *m + g;
                    *p -= lr * *m;
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                if state.m.len() != params.len() {
                    state.m = vec![0.0; params.len()];
                    state.v = vec![0.0; params.len()];
                    state.t = 0;
                }
                state.t += 1;
                let bc1 = 1.0 - beta1.powi(state.t as i32);
                let bc2 = 1.0 - beta2.powi(state.t as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = state.m[i] / bc1;
                    let v_hat = state.v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_definition() {
        let mut opt = Optimizer::sgd(0.1).unwrap();
        let mut p = [1.0];
        opt.step(0, &mut p, &[0.5]).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut opt = Optimizer::sgd(0.3).unwrap();
        let mut p = [1.0, -2.0];
        opt.step(0, &mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_by_hand() {
        // beta1 = 0.5, beta2 = 0.75, eps = 0.01, lr = 0.1, p = 2, g = 0.4
        // m = 0.5*0.4 = 0.2, v = 0.25*0.16 = 0.04
        // m_hat = 0.2/0.5 = 0.4, v_hat = 0.04/0.25 = 0.16
        // p' = 2 - 0.1 * 0.4 / (0.4 + 0.01) = 2 - 0.04/0.41
        let mut opt = Optimizer::new(
            OptimizerKind::Adam {
                beta1: 0.5,
                beta2: 0.75,
                epsilon: 0.01,
            },
            0.1,
        )
        .unwrap();
        let mut p = [2.0];
        opt.step(0, &mut p, &[0.4]).unwrap();
        let expected = 2.0 - 0.04 / 0.41;
        assert!((p[0] - expected).abs() < 1e-12, "{} vs {expected}", p[0]);
    }

    #[test]
    fn rejects_non_finite_gradients_and_keeps_params() {
        let mut opt = Optimizer::adam(0.1).unwrap();
        let mut p = [1.0, 1.0];
        let err = opt.step(3, &mut p, &[0.0, f64::INFINITY]).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient { .. }));
        assert_eq!(p, [1.0, 1.0]);
    }

    #[test]
    fn rejects_negative_learning_rate() {
        assert!(Optimizer::sgd(-0.1).is_err());
        assert!(Optimizer::sgd(f64::NAN).is_err());
    }

    #[test]
    fn momentum_accumulates() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd { momentum: 0.5 }, 1.0).unwrap();
        let mut p = [0.0];
        opt.step(0, &mut p, &[1.0]).unwrap();
        opt.step(0, &mut p, &[1.0]).unwrap();
        // m1 = 1, m2 = 1.5 -> p = -2.5
        assert_eq!(p, [-2.5]);
    }
}
