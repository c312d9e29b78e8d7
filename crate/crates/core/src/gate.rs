//! Discriminative masking gates.
//!
//! A gate layer multiplies the `n` outputs of a layer by
//! `g_j = max(tanh(alpha * (mu_j + beta)), 0)`, where `mu_j` is a fixed
//! order number and `beta` is the single learnable offset of the layer.
//! Lowering `beta` slides the zero region over the low-order neurons, so the
//! number of open gates is a deterministic function of `beta` alone:
//! `ceil(n * (1 + beta / k))` for `beta` in `[-k, 0]`.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Shape of a gate as a function of `z = alpha * (mu + beta)`.
///
/// Any implementation must be exactly zero for `z <= 0`, nondecreasing, and
/// steeper for larger `alpha`; see [`verify_gate_contract`].
pub trait GateFunction {
    fn value(&self, z: f64) -> f64;
    /// `d value / d z`. Must return 0 at and below the threshold `z = 0`.
    fn slope(&self, z: f64) -> f64;
    fn name(&self) -> &'static str;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GateFn {
    /// `max(tanh(z), 0)`.
    #[default]
    ReluTanh,
    /// `clamp(z, 0, 1)`.
    HardSigmoid,
}

impl GateFn {
    pub fn parse(name: &str) -> Option<GateFn> {
        match name {
            "relu-tanh" => Some(GateFn::ReluTanh),
            "hard-sigmoid" => Some(GateFn::HardSigmoid),
            _ => None,
        }
    }
}

impl GateFunction for GateFn {
    #[inline]
    fn value(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        match self {
            GateFn::ReluTanh => z.tanh(),
            GateFn::HardSigmoid => z.min(1.0),
        }
    }

    #[inline]
    fn slope(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        match self {
            GateFn::ReluTanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            GateFn::HardSigmoid => {
                if z < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            GateFn::ReluTanh => "relu-tanh",
            GateFn::HardSigmoid => "hard-sigmoid",
        }
    }
}

/// Checks the three properties every gate shape must have: an exact zero
/// region below threshold, monotonicity, and steepness controlled by alpha.
/// Returns the list of violations (empty when the contract holds).
pub fn verify_gate_contract(f: &dyn GateFunction) -> Vec<String> {
    let mut problems = Vec::new();
    let grid: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.01).collect();

    if let Some(z) = grid.iter().find(|&&z| z <= 0.0 && f.value(z) != 0.0) {
        problems.push(format!("{}: nonzero value {} at z = {z}", f.name(), f.value(*z)));
    }
    if let Some(w) = grid.windows(2).find(|w| f.value(w[1]) < f.value(w[0])) {
        problems.push(format!("{}: decreases between {} and {}", f.name(), w[0], w[1]));
    }
    // Doubling alpha must never lower the gate on the open side and must
    // raise it somewhere in the transition zone.
    let x: Vec<f64> = (1..200).map(|i| i as f64 * 0.01).collect();
    let never_lower = x.iter().all(|&x| f.value(2.0 * x) >= f.value(x));
    let raises = x.iter().any(|&x| f.value(2.0 * x) > f.value(x));
    if !(never_lower && raises) {
        problems.push(format!("{}: steepness is not controlled by alpha", f.name()));
    }
    problems
}

/// Order numbers `mu_j = k * j / n` for `j = 1..=n`, optionally shuffled.
pub fn make_ordering(n: usize, k: f64, rng: Option<&mut Rng>) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptyLayer(0));
    }
    if !(k > 0.0) {
        return Err(Error::Config(format!("ordering domain k must be positive, got {k}")));
    }
    let mut mu: Vec<f64> = (1..=n).map(|j| k * j as f64 / n as f64).collect();
    if let Some(rng) = rng {
        rng.shuffle(&mut mu);
    }
    Ok(mu)
}

/// Closed form for the number of open gates: `ceil(n (1 + beta / k))`,
/// clamped to `[0, n]`.
pub fn l0_closed_form(n: usize, k: f64, beta: f64) -> usize {
    let v = (n as f64 * (1.0 + beta / k)).ceil();
    v.clamp(0.0, n as f64) as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeuronClass {
    /// Gate exactly zero; the neuron is pruned.
    Deactivated,
    /// Gate strictly between zero and the privileged threshold.
    Support,
    /// Gate saturated within `eps` of one.
    Privileged,
}

pub const DEFAULT_PRIVILEGED_EPS: f64 = 1e-3;

#[derive(Clone, Debug)]
struct GateCache {
    h: Tensor,
    g: Vec<f64>,
    slope: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DamGate {
    n: usize,
    k: f64,
    alpha: f64,
    pub beta: f64,
    mu: Vec<f64>,
    pub frozen: bool,
    pub position: usize,
    gate_fn: GateFn,
    pub(crate) grad_beta: f64,
    last_q: Vec<f64>,
    cache: Option<GateCache>,
}

impl DamGate {
    /// Gate with canonical ordering.
    pub fn new(n: usize, k: f64, alpha: f64, beta: f64) -> Result<Self> {
        let mu = make_ordering(n, k, None)?;
        Self::with_ordering(mu, k, alpha, beta)
    }

    pub fn with_ordering(mu: Vec<f64>, k: f64, alpha: f64, beta: f64) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::EmptyLayer(0));
        }
        if !(alpha > 0.0) {
            return Err(Error::Config(format!("gate steepness alpha must be positive, got {alpha}")));
        }
        if !(k > 0.0) {
            return Err(Error::Config(format!("ordering domain k must be positive, got {k}")));
        }
        if !beta.is_finite() {
            return Err(Error::NonFinite("gate offset"));
        }
        let n = mu.len();
        let mut sorted = mu.clone();
        sorted.sort_by(f64::total_cmp);
        let canonical = make_ordering(n, k, None)?;
        if sorted != canonical {
            return Err(Error::Config(
                "ordering must be a permutation of k*j/n for j = 1..n".into(),
            ));
        }
        Ok(DamGate {
            n,
            k,
            alpha,
            beta,
            mu,
            frozen: false,
            position: 0,
            gate_fn: GateFn::ReluTanh,
            grad_beta: 0.0,
            last_q: vec![0.0; n],
            cache: None,
        })
    }

    pub fn with_gate_fn(mut self, f: GateFn) -> Self {
        self.gate_fn = f;
        self
    }

    /// Replaces the ordering by a uniformly random permutation of itself.
    pub fn permute_ordering(&mut self, rng: &mut Rng) {
        rng.shuffle(&mut self.mu);
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn gate_fn(&self) -> GateFn {
        self.gate_fn
    }

    pub fn grad_beta(&self) -> f64 {
        self.grad_beta
    }

    pub fn add_grad_beta(&mut self, g: f64) {
        self.grad_beta += g;
    }

    /// Per-neuron `q_j` from the most recent backward pass, summed over
    /// that batch.
    pub fn last_q(&self) -> &[f64] {
        &self.last_q
    }

    #[inline]
    fn arg(&self, j: usize) -> f64 {
        self.alpha * (self.mu[j] + self.beta)
    }

    pub fn gate_values(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.gate_fn.value(self.arg(j))).collect()
    }

    /// Number of strictly positive gates.
    pub fn l0_exact(&self) -> usize {
        (0..self.n).filter(|&j| self.gate_fn.value(self.arg(j)) > 0.0).count()
    }

    /// Differentiable surrogate `n (1 + beta / k)`, clamped to `[0, n]`.
    pub fn l0_continuous(&self) -> f64 {
        (self.n as f64 * (1.0 + self.beta / self.k)).clamp(0.0, self.n as f64)
    }

    pub fn classify_neurons(&self, eps_priv: f64) -> Vec<NeuronClass> {
        assert!(eps_priv > 0.0 && eps_priv < 1.0, "eps_priv must lie in (0, 1)");
        self.gate_values()
            .into_iter()
            .map(|g| {
                if g == 0.0 {
                    NeuronClass::Deactivated
                } else if g >= 1.0 - eps_priv {
                    NeuronClass::Privileged
                } else {
                    NeuronClass::Support
                }
            })
            .collect()
    }

    /// Indices of neurons whose gate is open, in ascending index order.
    pub fn surviving(&self) -> Vec<usize> {
        self.gate_values()
            .iter()
            .enumerate()
            .filter(|(_, &g)| g > 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    fn check_width(&self, h: &Tensor) -> Result<()> {
        if h.cols() != self.n {
            return Err(Error::Dimension {
                op: "apply_mask",
                left: h.shape(),
                right: (h.rows(), self.n),
            });
        }
        Ok(())
    }

    /// `o = h ∘ g`, row by row. Closed columns come out as exact zeros.
    pub fn apply_mask(&self, h: &Tensor) -> Result<Tensor> {
        self.check_width(h)?;
        Ok(mask_columns(h, &self.gate_values()))
    }

    pub fn forward(&mut self, h: &Tensor) -> Result<Tensor> {
        self.forward_owned(h.clone())
    }

    pub fn forward_owned(&mut self, h: Tensor) -> Result<Tensor> {
        self.check_width(&h)?;
        let g = self.gate_values();
        let slope = (0..self.n).map(|j| self.gate_fn.slope(self.arg(j))).collect();
        let out = mask_columns(&h, &g);
        self.cache = Some(GateCache { h, g, slope });
        Ok(out)
    }

    /// Returns the gradient on `h`, accumulates `d loss / d beta` and
    /// records the per-neuron contributions `q_j`.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("gate backward called before forward".into()))?;
        cache.h.check_same_shape(upstream, "gate_backward")?;
        let (grad_h, q) = gate_backward_parts(&cache.h, &cache.g, &cache.slope, upstream);
        self.grad_beta += self.alpha * q.iter().sum::<f64>();
        self.last_q = q;
        Ok(grad_h)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn diagnostics(&self, lambda: f64, gated_layers: usize, eps_priv: f64) -> GateDiagnostics {
        let q_sum: f64 = self.last_q.iter().sum();
        GateDiagnostics {
            gates: self.gate_values(),
            l0_exact: self.l0_exact(),
            l0_continuous: self.l0_continuous(),
            classes: self.classify_neurons(eps_priv),
            q_contributions: self.last_q.clone(),
            equilibrium_residual: equilibrium_residual_one(q_sum, lambda, self.alpha, gated_layers),
        }
    }
}

fn mask_columns(h: &Tensor, g: &[f64]) -> Tensor {
    let mut out = h.clone();
    for r in 0..out.rows() {
        for (v, &gj) in out.row_mut(r).iter_mut().zip(g) {
            // Multiplying by an exact zero would keep the sign of h and
            // propagate NaN; closed columns are set outright.
            *v = if gj == 0.0 { 0.0 } else { *v * gj };
        }
    }
    out
}

/// `(grad_h, q)` with `grad_h = upstream ∘ g` and
/// `q_j = sum_b upstream_bj * h_bj * dg_j/dz`.
fn gate_backward_parts(h: &Tensor, g: &[f64], slope: &[f64], upstream: &Tensor) -> (Tensor, Vec<f64>) {
    let n = g.len();
    let mut grad_h = Tensor::zeros(h.rows(), n);
    let mut q = vec![0.0; n];
    for r in 0..h.rows() {
        let hr = h.row(r);
        let ur = upstream.row(r);
        let gr = grad_h.row_mut(r);
        for j in 0..n {
            if g[j] == 0.0 {
                continue;
            }
            gr[j] = ur[j] * g[j];
            q[j] += ur[j] * hr[j] * slope[j];
        }
    }
    (grad_h, q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateDiagnostics {
    pub gates: Vec<f64>,
    pub l0_exact: usize,
    pub l0_continuous: f64,
    pub classes: Vec<NeuronClass>,
    pub q_contributions: Vec<f64>,
    pub equilibrium_residual: f64,
}

/// How the offset penalty is normalised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegMode {
    /// A lone bottleneck gate penalised by `lambda * beta`.
    SingleGate,
    /// `l` network layers carrying `l - 1` gates, penalised by
    /// `lambda / (l - 1) * sum(beta)`.
    Layers(usize),
}

impl RegMode {
    pub fn gated_layers(&self) -> usize {
        match *self {
            RegMode::SingleGate => 1,
            RegMode::Layers(l) => l.saturating_sub(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Penalty {
    pub value: f64,
    /// Gradient contribution for each gate, zero for frozen gates.
    pub beta_grads: Vec<f64>,
}

pub fn regularizer(gates: &[&DamGate], lambda: f64, mode: RegMode) -> Result<Penalty> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be nonnegative, got {lambda}")));
    }
    let coef = match mode {
        RegMode::SingleGate => {
            if gates.len() > 1 {
                return Err(Error::Config(format!(
                    "single-gate penalty used with {} gates",
                    gates.len()
                )));
            }
            lambda
        }
        RegMode::Layers(l) => {
            if l < 2 {
                return Err(Error::Config(format!("need l >= 2 layers, got {l}")));
            }
            lambda / (l - 1) as f64
        }
    };
    Ok(Penalty {
        value: coef * gates.iter().map(|g| g.beta).sum::<f64>(),
        beta_grads: gates
            .iter()
            .map(|g| if g.frozen { 0.0 } else { coef })
            .collect(),
    })
}

fn equilibrium_residual_one(q_sum: f64, lambda: f64, alpha: f64, gated_layers: usize) -> f64 {
    q_sum + lambda / (alpha * gated_layers.max(1) as f64)
}

/// `sum_j q_ij + lambda / (alpha_i (l - 1))` for each gate; zero at a
/// stationary point of the offset.
pub fn equilibrium_residual(q_sums: &[f64], lambda: f64, alphas: &[f64], mode: RegMode) -> Vec<f64> {
    q_sums
        .iter()
        .zip(alphas)
        .map(|(&q, &a)| equilibrium_residual_one(q, lambda, a, mode.gated_layers()))
        .collect()
}
