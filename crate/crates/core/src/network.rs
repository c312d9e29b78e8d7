use crate::error::{Error, Result};
use crate::gate::DamGate;
use crate::layer::{Dense, L1Mask, Layer};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    /// A gate offset `beta`. Never weight-decayed.
    GateOffset,
    /// An L1-mask scale. Never weight-decayed; kept nonnegative.
    MaskScale,
}

impl ParamRole {
    pub fn decays(&self) -> bool {
        matches!(self, ParamRole::Weight | ParamRole::Bias)
    }
}

/// Mutable view of one parameter tensor and its gradient buffer.
pub struct Param<'a> {
    pub layer: usize,
    pub role: ParamRole,
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
    pub frozen: bool,
}

/// Location of a single scalar parameter: the `param`-th tensor in
/// [`Network::params_mut`] order, entry `offset` within it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamAddress {
    pub param: usize,
    pub offset: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Network {
    layers: Vec<Layer>,
    grads_pending: bool,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        let mut net = Network {
            layers,
            grads_pending: false,
        };
        net.renumber_gates();
        net
    }

    fn renumber_gates(&mut self) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::Gate(g) = layer {
                g.position = i;
            }
        }
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
        self.renumber_gates();
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    /// Output without caching; safe to call concurrently on a shared network.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.eval(&x)?;
        }
        Ok(x)
    }

    /// Output of layers `0..upto` (exclusive).
    pub fn predict_prefix(&self, input: &Tensor, upto: usize) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &self.layers[..upto] {
            x = layer.eval(&x)?;
        }
        Ok(x)
    }

    /// Evaluates `input` in row chunks, in parallel when the `parallel`
    /// feature is on. Each chunk is computed exactly as a standalone call.
    pub fn predict_chunked(&self, input: &Tensor, chunk: usize) -> Result<Tensor> {
        let chunk = chunk.max(1);
        let n_chunks = input.rows().div_ceil(chunk);
        let parts = crate::exec::par_map(n_chunks, |c| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(input.rows());
            let idx: Vec<usize> = (lo..hi).collect();
            self.predict(&input.select_rows(&idx))
        });
        let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
        if parts.is_empty() {
            return self.predict(input);
        }
        Tensor::vstack(&parts.iter().collect::<Vec<_>>())
    }

    /// Training forward pass; caches what `backward` needs.
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward_owned(x)?;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("network output"));
        }
        Ok(x)
    }

    /// Back-propagates `loss_grad` (gradient of the loss w.r.t. the output)
    /// and accumulates parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<Tensor> {
        let mut g = loss_grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        self.grads_pending = true;
        Ok(g)
    }

    pub fn has_pending_grads(&self) -> bool {
        self.grads_pending
    }

    pub(crate) fn mark_consumed(&mut self) {
        self.grads_pending = false;
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        for layer in &mut self.layers {
            if let Layer::Gate(g) = layer {
                g.grad_beta = 0.0;
            }
        }
        self.grads_pending = false;
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// All parameter tensors in a fixed order: layer by layer, and within a
    /// layer weights before biases.
    pub fn params_mut(&mut self) -> Vec<Param<'_>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    out.push(Param {
                        layer: i,
                        role: ParamRole::Weight,
                        value: d.weights.data_mut(),
                        grad: d.grad_w.data_mut(),
                        frozen: false,
                    });
                    out.push(Param {
                        layer: i,
                        role: ParamRole::Bias,
                        value: &mut d.bias,
                        grad: &mut d.grad_b,
                        frozen: false,
                    });
                }
                Layer::Quadratic(q) => {
                    out.push(Param {
                        layer: i,
                        role: ParamRole::Weight,
                        value: q.wa.data_mut(),
                        grad: q.grad_wa.data_mut(),
                        frozen: false,
                    });
                    out.push(Param {
                        layer: i,
                        role: ParamRole::Weight,
                        value: q.wb.data_mut(),
                        grad: q.grad_wb.data_mut(),
                        frozen: false,
                    });
                    out.push(Param {
                        layer: i,
                        role: ParamRole::Bias,
                        value: &mut q.bias,
                        grad: &mut q.grad_b,
                        frozen: false,
                    });
                }
                Layer::Gate(g) => {
                    let frozen = g.frozen;
                    out.push(Param {
                        layer: i,
                        role: ParamRole::GateOffset,
                        value: std::slice::from_mut(&mut g.beta),
                        grad: std::slice::from_mut(&mut g.grad_beta),
                        frozen,
                    });
                }
                Layer::L1Mask(m) => {
                    out.push(Param {
                        layer: i,
                        role: ParamRole::MaskScale,
                        value: &mut m.scale,
                        grad: &mut m.grad,
                        frozen: false,
                    });
                }
                Layer::Activation(_) => {}
            }
        }
        out
    }

    /// `(role, len)` per parameter tensor, in [`Network::params_mut`] order.
    pub fn param_layout(&self) -> Vec<(ParamRole, usize)> {
        self.clone()
            .params_mut()
            .iter()
            .map(|p| (p.role, p.value.len()))
            .collect()
    }

    pub fn param_value(&mut self, at: ParamAddress) -> f64 {
        self.params_mut()[at.param].value[at.offset]
    }

    pub fn set_param_value(&mut self, at: ParamAddress, v: f64) {
        self.params_mut()[at.param].value[at.offset] = v;
    }

    pub fn param_grad(&mut self, at: ParamAddress) -> f64 {
        self.params_mut()[at.param].grad[at.offset]
    }

    /// Every parameter value, flattened in [`Network::params_mut`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut me = self.clone();
        me.params_mut()
            .into_iter()
            .flat_map(|p| p.value.to_vec())
            .collect()
    }

    /// Number of scalars in weight and bias tensors (gate offsets and mask
    /// scales excluded).
    pub fn weight_count(&self) -> usize {
        self.param_layout()
            .iter()
            .filter(|(r, _)| r.decays())
            .map(|(_, n)| n)
            .sum()
    }

    pub fn gates(&self) -> impl Iterator<Item = &DamGate> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Gate(g) => Some(g),
            _ => None,
        })
    }

    pub fn gates_mut(&mut self) -> impl Iterator<Item = &mut DamGate> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Gate(g) => Some(g),
            _ => None,
        })
    }

    pub fn gate_count(&self) -> usize {
        self.gates().count()
    }

    pub fn l1_masks_mut(&mut self) -> impl Iterator<Item = &mut L1Mask> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::L1Mask(m) => Some(m),
            _ => None,
        })
    }

    pub fn l1_masks(&self) -> impl Iterator<Item = &L1Mask> {
        self.layers.iter().filter_map(|l| match l {
            Layer::L1Mask(m) => Some(m),
            _ => None,
        })
    }

    pub fn dense_layers(&self) -> impl Iterator<Item = &Dense> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            _ => None,
        })
    }

    pub fn set_gates_frozen(&mut self, frozen: bool) {
        self.gates_mut().for_each(|g| g.frozen = frozen);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationKind;
    use crate::init::InitScheme;
    use crate::rng::Rng;

    fn small_net(seed: u64) -> Network {
        let mut rng = Rng::new(seed);
        Network::new(vec![
            Layer::Dense(Dense::init(&mut rng, InitScheme::ScaledUniform, 3, 6)),
            Layer::activation(ActivationKind::Tanh),
            Layer::Gate(DamGate::new(6, 5.0, 1.0, -1.0).unwrap()),
            Layer::Dense(Dense::init(&mut rng, InitScheme::ScaledUniform, 6, 2)),
        ])
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = small_net(0);
        let err = net.backward(&Tensor::zeros(1, 2)).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut net = small_net(1);
        let x = Tensor::from_rows(&[&[0.2, -0.3, 0.9], &[1.0, 0.0, -1.0]]);
        net.forward(&x).unwrap();
        net.backward(&Tensor::zeros(2, 2)).unwrap();
        for p in net.params_mut() {
            assert!(p.grad.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn forward_backward_leaves_parameters_alone() {
        let mut net = small_net(2);
        let before = net.flat_params();
        let x = Tensor::from_rows(&[&[0.2, -0.3, 0.9]]);
        net.forward(&x).unwrap();
        net.backward(&Tensor::filled(1, 2, 1.0)).unwrap();
        assert_eq!(before, net.flat_params());
        assert!(net.has_pending_grads());
        net.zero_grad();
        assert!(!net.has_pending_grads());
    }

    #[test]
    fn chunked_prediction_matches_whole_batch() {
        let net = small_net(3);
        let mut rng = Rng::new(4);
        let data: Vec<f64> = (0..3 * 37).map(|_| rng.normal()).collect();
        let x = Tensor::from_vec(37, 3, data).unwrap();
        let whole = net.predict(&x).unwrap();
        let chunked = net.predict_chunked(&x, 8).unwrap();
        assert!(whole.max_abs_diff(&chunked) < 1e-13);
        assert_eq!(net.predict_chunked(&x, 8).unwrap(), chunked);
    }

    #[test]
    fn gate_positions_follow_layer_index() {
        let net = small_net(5);
        assert_eq!(net.gates().next().unwrap().position, 2);
        assert_eq!(net.weight_count(), 3 * 6 + 6 + 6 * 2 + 2);
    }
}
