use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise nonlinearities with analytic derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Identity,
    Relu,
    LeakyRelu(f64),
    Elu(f64),
    Tanh,
    Sigmoid,
    Sine,
}

impl ActivationKind {
    /// LeakyReLU with the conventional 0.01 slope.
    pub const LEAKY_RELU: ActivationKind = ActivationKind::LeakyRelu(0.01);
    /// ELU with alpha = 1.
    pub const ELU: ActivationKind = ActivationKind::Elu(1.0);

    /// Canonical lowercase name, as used in configs.
    pub fn name(&self) -> &'static str {
        match self {
            ActivationKind::Identity => "identity",
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu(_) => "leaky-relu",
            ActivationKind::Elu(_) => "elu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Sine => "sine",
        }
    }

    pub fn parse(name: &str) -> Option<ActivationKind> {
        Some(match name {
            "identity" | "linear" => ActivationKind::Identity,
            "relu" => ActivationKind::Relu,
            "leaky-relu" | "leaky_relu" | "leakyrelu" => ActivationKind::LEAKY_RELU,
            "elu" => ActivationKind::ELU,
            "tanh" => ActivationKind::Tanh,
            "sigmoid" => ActivationKind::Sigmoid,
            "sine" | "sin" => ActivationKind::Sine,
            _ => return None,
        })
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Identity => x,
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            ActivationKind::Elu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x.exp_m1()
                }
            }
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Sine => x.sin(),
        }
    }

    /// Derivative at `x`. Kinks take the left-hand value.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ActivationKind::Identity => 1.0,
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            ActivationKind::Elu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a * x.exp()
                }
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Sine => x.cos(),
        }
    }

    /// True when the derivative is discontinuous at `x`.
    pub fn has_kink_near(&self, x: f64, tol: f64) -> bool {
        matches!(
            self,
            ActivationKind::Relu | ActivationKind::LeakyRelu(_) | ActivationKind::Elu(_)
        ) && x.abs() < tol
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        if !input.is_finite() {
            return Err(Error::NonFinite("activation input"));
        }
        Ok(input.map(|x| self.apply(x)))
    }

    pub fn backward(&self, cached_input: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        cached_input.zip_map(upstream, |x, g| g * self.derivative(x))
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
