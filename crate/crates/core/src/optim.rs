//! SGD with momentum and Adam, both with coupled L2 weight decay.
//!
//! Decay applies to weights and biases only. Gate offsets carry their own
//! linear penalty and are never decayed; frozen parameters are skipped
//! entirely, including their optimizer state.
//!
//! Parameters and optimizer state that fall below the normal `f64` range
//! are flushed to zero. Weights of pruned neurons decay towards zero under
//! L2, and arithmetic on subnormal values is slow enough to dominate long
//! runs.

use crate::error::{Error, Result};
use crate::network::{Network, ParamRole};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const SGD_DEFAULT: OptimizerKind = OptimizerKind::Sgd { momentum: 0.9 };
    pub const ADAM_DEFAULT: OptimizerKind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

#[derive(Clone, Debug, Default)]
struct Slot {
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    slots: Vec<Slot>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind,
            lr,
            weight_decay,
            slots: Vec::new(),
            steps: 0,
        }
    }

    pub fn sgd(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::Sgd { momentum }, lr, weight_decay)
    }

    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::ADAM_DEFAULT, lr, weight_decay)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the gradients accumulated since the last
    /// step, then marks them consumed.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        if !net.has_pending_grads() {
            return Err(Error::State(
                "optimizer step without accumulated gradients".into(),
            ));
        }
        let kind = self.kind;
        let (lr, wd) = (self.lr, self.weight_decay);
        let mut params = net.params_mut();
        if self.slots.is_empty() {
            self.slots = params
                .iter()
                .map(|p| Slot {
                    first: vec![0.0; p.value.len()],
                    second: vec![0.0; p.value.len()],
                    steps: 0,
                })
                .collect();
        }
        if self.slots.len() != params.len() {
            return Err(Error::State("parameter layout changed under the optimizer".into()));
        }
        for (p, slot) in params.iter_mut().zip(&mut self.slots) {
            if p.frozen {
                continue;
            }
            if slot.first.len() != p.value.len() {
                return Err(Error::State("parameter shape changed under the optimizer".into()));
            }
            slot.steps += 1;
            let decay = if p.role.decays() { wd } else { 0.0 };
            match kind {
                OptimizerKind::Sgd { momentum } => {
                    for i in 0..p.value.len() {
                        let g = p.grad[i] + decay * p.value[i];
                        let buf = if slot.steps == 1 {
                            g
                        } else {
                            momentum * slot.first[i] + g
                        };
                        slot.first[i] = flush(buf);
                        p.value[i] = flush(p.value[i] - lr * buf);
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let t = slot.steps as i32;
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for i in 0..p.value.len() {
                        let g = p.grad[i] + decay * p.value[i];
                        slot.first[i] = flush(beta1 * slot.first[i] + (1.0 - beta1) * g);
                        slot.second[i] = flush(beta2 * slot.second[i] + (1.0 - beta2) * g * g);
                        let m = slot.first[i] / c1;
                        let v = slot.second[i] / c2;
                        p.value[i] = flush(p.value[i] - lr * m / (v.sqrt() + eps));
                    }
                }
            }
            if p.role == ParamRole::MaskScale {
                p.value.iter_mut().for_each(|s| *s = s.max(0.0));
            }
        }
        drop(params);
        self.steps += 1;
        net.mark_consumed();
        Ok(())
    }
}

#[inline]
fn flush(x: f64) -> f64 {
    if x.is_subnormal() {
        0.0
    } else {
        x
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Multiply by `factor` at each milestone epoch.
    Step { milestones: Vec<usize>, factor: f64 },
}

impl LrSchedule {
    /// ×0.1 at 50% and 75% of the run.
    pub fn half_and_three_quarters(epochs: usize) -> Self {
        LrSchedule::Step {
            milestones: vec![epochs / 2, epochs * 3 / 4],
            factor: 0.1,
        }
    }

    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Step { milestones, factor } => {
                let hits = milestones.iter().filter(|&&m| epoch >= m).count();
                base * factor.powi(hits as i32)
            }
        }
    }
}
