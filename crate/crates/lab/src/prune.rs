//! Structured pruning of dense classifiers with one gate per hidden layer,
//! compact-network extraction and the permutation study.

use dam_core::exec::par_map;
use dam_core::{
    argmax_rows, ActivationKind, DamGate, Dense, Error as EngineError, InitScheme, Layer, LrSchedule, Network,
    OptimizerKind, Quadratic, Reconstruction, Rng, Tensor,
};

use crate::analysis::rsd;
use crate::data::Dataset;
use crate::error::{LabError, Result};
use crate::trace::RunTrace;
use crate::train::{fit, TrainConfig, Targets};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierSpec {
    /// Input width, hidden widths, class count.
    pub widths: Vec<usize>,
    pub activation: ActivationKind,
    pub k: f64,
    pub alpha: f64,
    pub beta0: f64,
}

impl ClassifierSpec {
    pub fn mlp(widths: Vec<usize>) -> Self {
        ClassifierSpec {
            widths,
            activation: ActivationKind::Relu,
            k: 5.0,
            alpha: 1.0,
            beta0: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(LabError::config("widths", "need an input, at least one hidden layer and an output"));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(LabError::config("widths", "every width must be positive"));
        }
        Ok(())
    }

    pub fn hidden(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }
}

/// `Dense → activation → gate` for every hidden layer, then a linear output.
pub fn build_classifier(spec: &ClassifierSpec, rng: &mut Rng) -> Result<Network> {
    spec.validate()?;
    let mut layers = Vec::new();
    let last = spec.widths.len() - 2;
    for (i, w) in spec.widths.windows(2).enumerate() {
        layers.push(Layer::Dense(Dense::init(rng, InitScheme::ScaledUniform, w[0], w[1])));
        if i < last {
            layers.push(Layer::activation(spec.activation));
            layers.push(Layer::Gate(DamGate::new(w[1], spec.k, spec.alpha, spec.beta0)?));
        }
    }
    Ok(Network::new(layers))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierSettings {
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub l2: f64,
    pub epochs: usize,
    pub cold_start_epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub gradient_noise: f64,
    /// Decay the learning rate tenfold at 50% and 75% of training.
    pub step_decay: bool,
    pub seed: u64,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        ClassifierSettings {
            lr: 0.05,
            optimizer: OptimizerKind::SGD_DEFAULT,
            l2: 1e-3,
            epochs: 60,
            cold_start_epochs: 20,
            batch_size: 64,
            lambda: 0.4,
            gradient_noise: 0.0,
            step_decay: true,
            seed: 0,
        }
    }
}

impl ClassifierSettings {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            lr: self.lr,
            weight_decay: self.l2,
            lambda: self.lambda,
            epochs: self.epochs,
            cold_start_epochs: self.cold_start_epochs,
            batch_size: Some(self.batch_size),
            schedule: if self.step_decay {
                LrSchedule::half_and_three_quarters(self.epochs)
            } else {
                LrSchedule::Constant
            },
            gradient_noise: self.gradient_noise,
            reconstruction: Reconstruction::Frobenius,
            seed: Rng::new(self.seed).split_named("train").seed(),
        }
    }
}

/// Weights plus biases of a dense chain with the given widths.
pub fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneReport {
    pub test_accuracy: f64,
    pub channels_pruned_pct: f64,
    pub params_pruned_pct: f64,
    pub full_widths: Vec<usize>,
    pub surviving_widths: Vec<usize>,
    pub betas: Vec<f64>,
}

impl PruneReport {
    pub fn new(full_widths: &[usize], surviving_hidden: &[usize], betas: Vec<f64>, test_accuracy: f64) -> Self {
        let hidden_total: usize = full_widths[1..full_widths.len() - 1].iter().sum();
        let kept: usize = surviving_hidden.iter().sum();
        let mut surviving = vec![full_widths[0]];
        surviving.extend_from_slice(surviving_hidden);
        surviving.push(*full_widths.last().unwrap());
        let full = param_count(full_widths) as f64;
        let left = param_count(&surviving) as f64;
        PruneReport {
            test_accuracy,
            channels_pruned_pct: 100.0 * (hidden_total - kept) as f64 / hidden_total as f64,
            params_pruned_pct: 100.0 * (full - left) / full,
            full_widths: full_widths.to_vec(),
            surviving_widths: surviving,
            betas,
        }
    }

    pub fn from_network(net: &Network, full_widths: &[usize], test_accuracy: f64) -> Self {
        let surviving: Vec<usize> = net.gates().map(|g| g.l0_exact()).collect();
        let betas = net.gates().map(|g| g.beta).collect();
        PruneReport::new(full_widths, &surviving, betas, test_accuracy)
    }

    pub fn remaining_params(&self) -> usize {
        param_count(&self.surviving_widths)
    }
}

pub fn accuracy(net: &Network, x: &Tensor, y: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Ok(0.0);
    }
    let pred = argmax_rows(&net.predict_chunked(x, 1000)?);
    Ok(pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64)
}

#[derive(Clone, Debug)]
pub struct TrainedClassifier {
    pub net: Network,
    pub trace: RunTrace,
    pub report: PruneReport,
}

pub fn train_classifier(spec: &ClassifierSpec, data: &Dataset, s: &ClassifierSettings) -> Result<TrainedClassifier> {
    let net = build_classifier(spec, &mut Rng::new(s.seed).split_named("model"))?;
    train_from(net, spec, data, s)
}

/// Trains an already built classifier.
pub fn train_from(mut net: Network, spec: &ClassifierSpec, data: &Dataset, s: &ClassifierSettings) -> Result<TrainedClassifier> {
    let trace = fit(&mut net, &data.train_x, Targets::Labels(&data.train_y), &s.train_config())?;
    let acc = accuracy(&net, &data.test_x, &data.test_y)?;
    let report = PruneReport::from_network(&net, &spec.widths, acc);
    Ok(TrainedClassifier { net, trace, report })
}

fn fold_columns(weights: &Tensor, keep: &[usize], scale: &[f64]) -> Tensor {
    let mut w = weights.select_cols(keep);
    for r in 0..w.rows() {
        for (v, s) in w.row_mut(r).iter_mut().zip(scale) {
            *v *= s;
        }
    }
    w
}

/// Removes closed neurons and folds the remaining mask values into the
/// next linear layer. The result has no gate or mask layers and computes
/// the same function as the masked network.
pub fn extract_pruned(net: &Network) -> Result<Network> {
    let mut out: Vec<Layer> = Vec::new();
    // Kept indices and their mask values, waiting for the next linear layer.
    let mut pending: Option<(Vec<usize>, Vec<f64>)> = None;
    for (i, layer) in net.layers().iter().enumerate() {
        let mask = match layer {
            Layer::Gate(g) => Some(g.gate_values()),
            Layer::L1Mask(m) => Some(m.scale.clone()),
            _ => None,
        };
        if let Some(values) = mask {
            let keep: Vec<usize> = (0..values.len()).filter(|&j| values[j] > 0.0).collect();
            if keep.is_empty() {
                return Err(EngineError::Structure(format!("layer {i} is fully pruned")).into());
            }
            if pending.is_some() {
                return Err(EngineError::Structure(format!("layer {i}: consecutive masks")).into());
            }
            let producer = out
                .iter_mut()
                .rev()
                .find(|l| matches!(l, Layer::Dense(_) | Layer::Quadratic(_)))
                .ok_or_else(|| EngineError::Structure(format!("mask at layer {i} has no preceding linear layer")))?;
            match producer {
                Layer::Dense(d) => {
                    let w = d.weights.select_rows(&keep);
                    let b = keep.iter().map(|&j| d.bias[j]).collect();
                    *d = Dense::new(w, b)?;
                }
                Layer::Quadratic(q) => {
                    let b = keep.iter().map(|&j| q.bias[j]).collect();
                    *q = Quadratic::new(q.wa.select_rows(&keep), q.wb.select_rows(&keep), b)?;
                }
                _ => unreachable!(),
            }
            let scale = keep.iter().map(|&j| values[j]).collect();
            pending = Some((keep, scale));
            continue;
        }
        match layer {
            Layer::Dense(d) => {
                let mut d = d.clone();
                if let Some((keep, scale)) = pending.take() {
                    d = Dense::new(fold_columns(&d.weights, &keep, &scale), d.bias.clone())?;
                }
                out.push(Layer::Dense(d));
            }
            Layer::Quadratic(q) => {
                let mut q = q.clone();
                if let Some((keep, scale)) = pending.take() {
                    q = Quadratic::new(
                        fold_columns(&q.wa, &keep, &scale),
                        fold_columns(&q.wb, &keep, &scale),
                        q.bias.clone(),
                    )?;
                }
                out.push(Layer::Quadratic(q));
            }
            Layer::Activation(a) => {
                if pending.is_some() {
                    return Err(EngineError::Structure(format!(
                        "activation at layer {i} follows a mask; cannot fold"
                    ))
                    .into());
                }
                out.push(Layer::activation(a.kind));
            }
            Layer::Gate(_) | Layer::L1Mask(_) => unreachable!(),
        }
    }
    if pending.is_some() {
        return Err(EngineError::Structure("the last layer is a mask".into()).into());
    }
    Ok(Network::new(out))
}

/// Largest absolute difference between the masked and compact networks.
pub fn compact_mismatch(masked: &Network, compact: &Network, inputs: &Tensor) -> Result<f64> {
    let a = masked.predict(inputs)?;
    let b = compact.predict(inputs)?;
    Ok(a.max_abs_diff(&b))
}

#[derive(Clone, Debug)]
pub struct PermutationStudy {
    pub reports: Vec<PruneReport>,
    /// The trained networks, in run order.
    pub runs: Vec<TrainedClassifier>,
    pub rsd_accuracy: f64,
    pub rsd_channels: f64,
    pub rsd_params: f64,
}

/// Repeats training from one fixed initialisation, giving every gate an
/// independent random ordering per run. With `permute = false` every run
/// keeps the canonical ordering.
pub fn permutation_invariance_experiment(
    spec: &ClassifierSpec,
    data: &Dataset,
    s: &ClassifierSettings,
    runs: usize,
    permute: bool,
) -> Result<PermutationStudy> {
    if runs < 2 {
        return Err(LabError::config("runs", "need at least 2 runs"));
    }
    let base = build_classifier(spec, &mut Rng::new(s.seed).split_named("model"))?;
    let perm_root = Rng::new(s.seed).split_named("orderings");
    let results = par_map(runs, |i| {
        let mut net = base.clone();
        if permute {
            let mut rng = perm_root.split(i as u64);
            for g in net.gates_mut() {
                g.permute_ordering(&mut rng);
            }
        }
        train_from(net, spec, data, s)
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let reports: Vec<PruneReport> = runs.iter().map(|t| t.report.clone()).collect();
    let pick = |f: fn(&PruneReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    Ok(PermutationStudy {
        rsd_accuracy: rsd(&pick(|r| r.test_accuracy)),
        rsd_channels: rsd(&pick(|r| r.channels_pruned_pct)),
        rsd_params: rsd(&pick(|r| r.params_pruned_pct)),
        reports,
        runs,
    })
}

/// One training run per (λ, seed) pair.
pub fn lambda_sweep(
    spec: &ClassifierSpec,
    data: &Dataset,
    s: &ClassifierSettings,
    lambdas: &[f64],
    seeds: &[u64],
) -> Result<Vec<(f64, u64, PruneReport)>> {
    let jobs: Vec<(f64, u64)> = lambdas
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&seed| (l, seed)))
        .collect();
    let results = par_map(jobs.len(), |i| {
        let (lambda, seed) = jobs[i];
        let settings = ClassifierSettings {
            lambda,
            seed,
            ..s.clone()
        };
        train_classifier(spec, data, &settings).map(|t| (lambda, seed, t.report))
    });
    results.into_iter().collect()
}
