//! Layer kinds and their forward/backward rules.
//!
//! Every layer caches what its backward pass needs during `forward`;
//! `eval` computes the same output without touching the cache and can be
//! shared across threads.

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::gate::DamGate;
use crate::init::{init_params, InitScheme};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Dense {
    /// Shape `(out, in)`.
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub(crate) grad_w: Tensor,
    pub(crate) grad_b: Vec<f64>,
    cache: Option<Tensor>,
}

impl Dense {
    pub fn new(weights: Tensor, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Dimension {
                op: "dense",
                left: weights.shape(),
                right: (bias.len(), 1),
            });
        }
        let grad_w = Tensor::zeros(weights.rows(), weights.cols());
        let grad_b = vec![0.0; bias.len()];
        Ok(Dense {
            weights,
            bias,
            grad_w,
            grad_b,
            cache: None,
        })
    }

    /// Weights and bias drawn i.i.d. from `scheme`, with `fan_in = input`.
    pub fn init(rng: &mut Rng, scheme: InitScheme, input: usize, output: usize) -> Self {
        let weights = init_params(rng, scheme, output, input);
        let bias = match scheme {
            InitScheme::ScaledUniform => {
                let bound = 1.0 / (input as f64).sqrt();
                (0..output).map(|_| rng.uniform(-bound, bound)).collect()
            }
            InitScheme::Normal { std } => (0..output).map(|_| std * rng.normal()).collect(),
        };
        Dense::new(weights, bias).expect("consistent shapes")
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn eval(&self, input: &Tensor) -> Result<Tensor> {
        dense_forward(&self.weights, &self.bias, input)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.forward_owned(input.clone())
    }

    /// Like `forward`, but keeps `input` as the cache without copying it.
    pub fn forward_owned(&mut self, input: Tensor) -> Result<Tensor> {
        let out = self.eval(&input)?;
        self.cache = Some(input);
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("dense backward called before forward".into()))?;
        if upstream.shape() != (input.rows(), self.output_dim()) {
            return Err(Error::Dimension {
                op: "dense_backward",
                left: upstream.shape(),
                right: (input.rows(), self.output_dim()),
            });
        }
        upstream.t_matmul_acc(input, &mut self.grad_w)?;
        for (gb, s) in self.grad_b.iter_mut().zip(upstream.column_sums()) {
            *gb += s;
        }
        upstream.matmul(&self.weights)
    }
}

/// `input · weightsᵀ + bias`, bias broadcast over rows.
pub fn dense_forward(weights: &Tensor, bias: &[f64], input: &Tensor) -> Result<Tensor> {
    if input.cols() != weights.cols() {
        return Err(Error::Dimension {
            op: "dense_forward",
            left: input.shape(),
            right: weights.shape(),
        });
    }
    let mut out = input.matmul_t(weights)?;
    for r in 0..out.rows() {
        for (v, b) in out.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Activation {
    pub kind: ActivationKind,
    cache: Option<Tensor>,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Activation { kind, cache: None }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.forward_owned(input.clone())
    }

    /// Like `forward`, but keeps `input` as the cache without copying it.
    pub fn forward_owned(&mut self, input: Tensor) -> Result<Tensor> {
        let out = self.kind.forward(&input)?;
        self.cache = Some(input);
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("activation backward called before forward".into()))?;
        self.kind.backward(input, upstream)
    }
}

/// Learnable nonnegative per-neuron scale, the L1-penalised baseline for
/// the discriminative gate.
#[derive(Clone, Debug)]
pub struct L1Mask {
    pub scale: Vec<f64>,
    pub(crate) grad: Vec<f64>,
    cache: Option<Tensor>,
}

impl L1Mask {
    pub fn new(n: usize, init: f64) -> Self {
        L1Mask {
            scale: vec![init.max(0.0); n],
            grad: vec![0.0; n],
            cache: None,
        }
    }

    pub fn n(&self) -> usize {
        self.scale.len()
    }

    pub fn l1(&self) -> f64 {
        self.scale.iter().map(|s| s.abs()).sum()
    }

    /// Number of scales strictly above `threshold`.
    pub fn dimension(&self, threshold: f64) -> usize {
        self.scale.iter().filter(|&&s| s > threshold).count()
    }

    pub fn add_penalty_grad(&mut self, lambda: f64) {
        for (g, s) in self.grad.iter_mut().zip(&self.scale) {
            // Subgradient at 0 taken as +lambda; the projection keeps s >= 0.
            *g += if *s >= 0.0 { lambda } else { -lambda };
        }
    }

    pub fn eval(&self, h: &Tensor) -> Result<Tensor> {
        if h.cols() != self.n() {
            return Err(Error::Dimension {
                op: "l1_mask",
                left: h.shape(),
                right: (h.rows(), self.n()),
            });
        }
        let mut out = h.clone();
        for r in 0..out.rows() {
            for (v, s) in out.row_mut(r).iter_mut().zip(&self.scale) {
                *v *= s;
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, h: &Tensor) -> Result<Tensor> {
        self.forward_owned(h.clone())
    }

    /// Like `forward`, but keeps `h` as the cache without copying it.
    pub fn forward_owned(&mut self, h: Tensor) -> Result<Tensor> {
        let out = self.eval(&h)?;
        self.cache = Some(h);
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let h = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("l1-mask backward called before forward".into()))?;
        h.check_same_shape(upstream, "l1_mask_backward")?;
        let mut grad_h = upstream.clone();
        for r in 0..h.rows() {
            let hr = h.row(r);
            let ur = upstream.row(r);
            for j in 0..self.n() {
                self.grad[j] += ur[j] * hr[j];
            }
            for (g, s) in grad_h.row_mut(r).iter_mut().zip(&self.scale) {
                *g *= s;
            }
        }
        Ok(grad_h)
    }
}

/// Degree-2 polynomial layer `y = (W_a x) ∘ (W_b x) + W_a x + b`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub wa: Tensor,
    pub wb: Tensor,
    pub bias: Vec<f64>,
    pub(crate) grad_wa: Tensor,
    pub(crate) grad_wb: Tensor,
    pub(crate) grad_b: Vec<f64>,
    cache: Option<Tensor>,
}

impl Quadratic {
    pub fn new(wa: Tensor, wb: Tensor, bias: Vec<f64>) -> Result<Self> {
        if wa.shape() != wb.shape() {
            return Err(Error::Dimension {
                op: "quadratic",
                left: wa.shape(),
                right: wb.shape(),
            });
        }
        if bias.len() != wa.rows() {
            return Err(Error::Dimension {
                op: "quadratic",
                left: wa.shape(),
                right: (bias.len(), 1),
            });
        }
        let (o, i) = wa.shape();
        Ok(Quadratic {
            wa,
            wb,
            bias,
            grad_wa: Tensor::zeros(o, i),
            grad_wb: Tensor::zeros(o, i),
            grad_b: vec![0.0; o],
            cache: None,
        })
    }

    pub fn init(rng: &mut Rng, scheme: InitScheme, input: usize, output: usize) -> Self {
        let wa = init_params(rng, scheme, output, input);
        let wb = init_params(rng, scheme, output, input);
        let bias = vec![0.0; output];
        Quadratic::new(wa, wb, bias).expect("consistent shapes")
    }

    pub fn input_dim(&self) -> usize {
        self.wa.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.wa.rows()
    }

    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        quadratic_layer_forward(&self.wa, &self.wb, &self.bias, x)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.forward_owned(x.clone())
    }

    /// Like `forward`, but keeps `x` as the cache without copying it.
    pub fn forward_owned(&mut self, x: Tensor) -> Result<Tensor> {
        let out = self.eval(&x)?;
        self.cache = Some(x);
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("quadratic backward called before forward".into()))?;
        let a = x.matmul_t(&self.wa)?;
        let b = x.matmul_t(&self.wb)?;
        upstream.check_same_shape(&a, "quadratic_backward")?;
        // dy/da = b + 1, dy/db = a
        let grad_a = upstream.zip_map(&b, |u, b| u * (b + 1.0))?;
        let grad_b = upstream.zip_map(&a, |u, a| u * a)?;
        grad_a.t_matmul_acc(x, &mut self.grad_wa)?;
        grad_b.t_matmul_acc(x, &mut self.grad_wb)?;
        for (gb, s) in self.grad_b.iter_mut().zip(upstream.column_sums()) {
            *gb += s;
        }
        let mut grad_x = grad_a.matmul(&self.wa)?;
        let other = grad_b.matmul(&self.wb)?;
        for (g, o) in grad_x.data_mut().iter_mut().zip(other.data()) {
            *g += o;
        }
        Ok(grad_x)
    }
}

pub fn quadratic_layer_forward(wa: &Tensor, wb: &Tensor, bias: &[f64], x: &Tensor) -> Result<Tensor> {
    if x.cols() != wa.cols() {
        return Err(Error::Dimension {
            op: "quadratic_forward",
            left: x.shape(),
            right: wa.shape(),
        });
    }
    let a = x.matmul_t(wa)?;
    let b = x.matmul_t(wb)?;
    let mut y = a.zip_map(&b, |a, b| a * b + a)?;
    for r in 0..y.rows() {
        for (v, c) in y.row_mut(r).iter_mut().zip(bias) {
            *v += c;
        }
    }
    Ok(y)
}

#[derive(Clone, Debug)]
pub enum Layer {
    Dense(Dense),
    Activation(Activation),
    Gate(DamGate),
    L1Mask(L1Mask),
    Quadratic(Quadratic),
}

impl Layer {
    pub fn activation(kind: ActivationKind) -> Layer {
        Layer::Activation(Activation::new(kind))
    }

    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.eval(x),
            Layer::Activation(a) => a.kind.forward(x),
            Layer::Gate(g) => g.apply_mask(x),
            Layer::L1Mask(m) => m.eval(x),
            Layer::Quadratic(q) => q.eval(x),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Activation(a) => a.forward(x),
            Layer::Gate(g) => g.forward(x),
            Layer::L1Mask(m) => m.forward(x),
            Layer::Quadratic(q) => q.forward(x),
        }
    }

    pub fn forward_owned(&mut self, x: Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.forward_owned(x),
            Layer::Activation(a) => a.forward_owned(x),
            Layer::Gate(g) => g.forward_owned(x),
            Layer::L1Mask(m) => m.forward_owned(x),
            Layer::Quadratic(q) => q.forward_owned(x),
        }
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.backward(upstream),
            Layer::Activation(a) => a.backward(upstream),
            Layer::Gate(g) => g.backward(upstream),
            Layer::L1Mask(m) => m.backward(upstream),
            Layer::Quadratic(q) => q.backward(upstream),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Dense(d) => d.cache = None,
            Layer::Activation(a) => a.cache = None,
            Layer::Gate(g) => g.clear_cache(),
            Layer::L1Mask(m) => m.cache = None,
            Layer::Quadratic(q) => q.cache = None,
        }
    }

    /// Output width, when the layer fixes one.
    pub fn output_dim(&self) -> Option<usize> {
        match self {
            Layer::Dense(d) => Some(d.output_dim()),
            Layer::Activation(_) => None,
            Layer::Gate(g) => Some(g.n()),
            Layer::L1Mask(m) => Some(m.n()),
            Layer::Quadratic(q) => Some(q.output_dim()),
        }
    }
}
