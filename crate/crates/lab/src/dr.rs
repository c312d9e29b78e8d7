//! Dimensionality-reduction experiments: synthetic data with a known latent
//! dimension, autoencoders with a gated bottleneck, the L1 scale-vector
//! baseline and hyperparameter sweeps.
//!
//! Data matrices store one sample per row (`N × d`).

use serde::{Deserialize, Serialize};

use dam_core::exec::par_map;
use dam_core::{
    ActivationKind, DamGate, Dense, InitScheme, L1Mask, Layer, LrSchedule, Network, OptimizerKind, Quadratic,
    Reconstruction, Rng, Tensor,
};

use crate::error::{LabError, Result};
use crate::trace::RunTrace;
use crate::train::{fit, TrainConfig, Targets};

/// Scales at or below this count as pruned in the L1 baseline.
pub const L1_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiKind {
    Linear,
    Quadratic,
    NeuralNet,
}

impl PsiKind {
    pub const ALL: [PsiKind; 3] = [PsiKind::Linear, PsiKind::Quadratic, PsiKind::NeuralNet];

    pub fn name(&self) -> &'static str {
        match self {
            PsiKind::Linear => "linear",
            PsiKind::Quadratic => "quadratic",
            PsiKind::NeuralNet => "neural-net",
        }
    }

    pub fn parse(s: &str) -> Option<PsiKind> {
        PsiKind::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub r: usize,
    pub d: usize,
    pub n_samples: usize,
    pub psi: PsiKind,
    pub seed: u64,
}

impl PsiKind {
    /// Observed dimension per latent factor. The nonlinear maps need more
    /// redundancy before an `r`-dimensional code beats passing the data
    /// through unchanged.
    pub fn default_redundancy(&self) -> usize {
        match self {
            PsiKind::Linear => 2,
            PsiKind::Quadratic | PsiKind::NeuralNet => 6,
        }
    }
}

impl SyntheticSpec {
    /// `d = default_redundancy * r` and 1000 samples.
    pub fn new(psi: PsiKind, r: usize, seed: u64) -> Self {
        SyntheticSpec {
            r,
            d: psi.default_redundancy() * r,
            n_samples: 1000,
            psi,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(LabError::config("r", "must be at least 1"));
        }
        if self.d <= self.r {
            return Err(LabError::config("d", format!("must exceed r = {}", self.r)));
        }
        if self.n_samples < self.d {
            return Err(LabError::config("n_samples", format!("must be at least d = {}", self.d)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    /// `N × d`, one sample per row.
    pub x: Tensor,
    /// `N × r` latent factors.
    pub omega: Tensor,
    pub r: usize,
    /// The map `Ψ` that produced `x` from `omega`.
    pub generator: Network,
}

/// Random map from `r` latent factors to `d` observed coordinates. The
/// linear map has standard normal entries. The nonlinear maps use the
/// default layer initialisation, except that the network's output layer
/// draws from `N(0, 1/d)`.
pub fn generator_network(psi: PsiKind, r: usize, d: usize, rng: &mut Rng) -> Network {
    let init = InitScheme::ScaledUniform;
    match psi {
        PsiKind::Linear => {
            let mut layer = Dense::init(rng, InitScheme::Normal { std: 1.0 }, r, d);
            layer.bias.iter_mut().for_each(|b| *b = 0.0);
            Network::new(vec![Layer::Dense(layer)])
        }
        PsiKind::Quadratic => Network::new(vec![Layer::Quadratic(Quadratic::init(rng, init, r, d))]),
        PsiKind::NeuralNet => Network::new(vec![
            Layer::Dense(Dense::init(rng, init, r, d)),
            Layer::activation(ActivationKind::ELU),
            Layer::Dense(Dense::init(rng, InitScheme::Normal { std: 1.0 / (d as f64).sqrt() }, d, d)),
        ]),
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec, rng: &mut Rng) -> Result<SyntheticData> {
    spec.validate()?;
    let mut psi_rng = rng.split_named("psi");
    let mut omega_rng = rng.split_named("omega");
    let generator = generator_network(spec.psi, spec.r, spec.d, &mut psi_rng);
    let omega = Tensor::from_vec(
        spec.n_samples,
        spec.r,
        (0..spec.n_samples * spec.r).map(|_| omega_rng.normal()).collect(),
    )?;
    let x = generator.predict(&omega)?;
    Ok(SyntheticData {
        x,
        omega,
        r: spec.r,
        generator,
    })
}

/// Architecture and gate settings for a DR autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOptions {
    /// Width of the bottleneck.
    pub n: usize,
    /// Hidden width of the MLP encoder (nonlinear cases).
    pub hidden: usize,
    /// Hidden width of the MLP decoder (neural-net case).
    pub decoder_hidden: usize,
    pub k: f64,
    pub alpha: f64,
    pub beta0: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            n: 50,
            hidden: 32,
            decoder_hidden: 32,
            k: 5.0,
            alpha: 1.0,
            beta0: 1.0,
        }
    }
}

/// What sits at the bottleneck.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BottleneckKind {
    Dam,
    L1,
}

/// An autoencoder stored as one network: `encoder ++ [bottleneck] ++ decoder`.
#[derive(Clone, Debug)]
pub struct DrModel {
    pub net: Network,
    bottleneck: usize,
}

impl DrModel {
    pub fn new(encoder: Vec<Layer>, bottleneck: Layer, decoder: Vec<Layer>) -> Result<Self> {
        if !matches!(bottleneck, Layer::Gate(_) | Layer::L1Mask(_)) {
            return Err(dam_core::Error::Structure("bottleneck must be a gate or an L1 mask".into()).into());
        }
        let index = encoder.len();
        let mut layers = encoder;
        layers.push(bottleneck);
        layers.extend(decoder);
        Ok(DrModel {
            net: Network::new(layers),
            bottleneck: index,
        })
    }

    pub fn encoder(&self) -> &[Layer] {
        &self.net.layers()[..self.bottleneck]
    }

    pub fn decoder(&self) -> &[Layer] {
        &self.net.layers()[self.bottleneck + 1..]
    }

    pub fn bottleneck_index(&self) -> usize {
        self.bottleneck
    }

    pub fn gate(&self) -> Option<&DamGate> {
        match &self.net.layers()[self.bottleneck] {
            Layer::Gate(g) => Some(g),
            _ => None,
        }
    }

    pub fn l1_mask(&self) -> Option<&L1Mask> {
        match &self.net.layers()[self.bottleneck] {
            Layer::L1Mask(m) => Some(m),
            _ => None,
        }
    }

    pub fn kind(&self) -> BottleneckKind {
        if self.gate().is_some() {
            BottleneckKind::Dam
        } else {
            BottleneckKind::L1
        }
    }

    /// Open gates, or L1 scales above [`L1_THRESHOLD`].
    pub fn dimension(&self) -> usize {
        match (self.gate(), self.l1_mask()) {
            (Some(g), _) => g.l0_exact(),
            (_, Some(m)) => m.dimension(L1_THRESHOLD),
            _ => unreachable!("bottleneck is checked at construction"),
        }
    }
}

fn mlp(rng: &mut Rng, widths: &[usize], act: ActivationKind, last_act: bool) -> Vec<Layer> {
    let mut layers = Vec::new();
    for (i, w) in widths.windows(2).enumerate() {
        layers.push(Layer::Dense(Dense::init(rng, InitScheme::ScaledUniform, w[0], w[1])));
        if last_act || i + 2 < widths.len() {
            layers.push(Layer::activation(act));
        }
    }
    layers
}

fn bottleneck_layer(kind: BottleneckKind, opts: &ModelOptions) -> Result<Layer> {
    Ok(match kind {
        BottleneckKind::Dam => Layer::Gate(DamGate::new(opts.n, opts.k, opts.alpha, opts.beta0)?),
        BottleneckKind::L1 => Layer::L1Mask(L1Mask::new(opts.n, 1.0)),
    })
}

/// Encoder/decoder pair matched to the generator family of `psi`.
pub fn build_dr_model(psi: PsiKind, d: usize, opts: &ModelOptions, rng: &mut Rng) -> Result<DrModel> {
    build_model(psi, d, opts, BottleneckKind::Dam, rng)
}

pub fn build_model(psi: PsiKind, d: usize, opts: &ModelOptions, kind: BottleneckKind, rng: &mut Rng) -> Result<DrModel> {
    let (n, h) = (opts.n, opts.hidden);
    let (encoder, decoder) = match psi {
        PsiKind::Linear => (
            vec![Layer::Dense(Dense::init(rng, InitScheme::ScaledUniform, d, n))],
            vec![Layer::Dense(Dense::init(rng, InitScheme::ScaledUniform, n, d))],
        ),
        PsiKind::Quadratic => {
            let act = ActivationKind::LEAKY_RELU;
            let enc = mlp(rng, &[d, h, h, n], act, false);
            let dec = vec![Layer::Quadratic(Quadratic::init(rng, InitScheme::ScaledUniform, n, d))];
            (enc, dec)
        }
        PsiKind::NeuralNet => {
            let act = ActivationKind::ELU;
            let enc = mlp(rng, &[d, h, h, n], act, false);
            let dec = mlp(rng, &[n, opts.decoder_hidden, d], act, false);
            (enc, dec)
        }
    };
    DrModel::new(encoder, bottleneck_layer(kind, opts)?, decoder)
}

/// Plain ReLU autoencoder over the given encoder widths; the decoder mirrors them.
pub fn build_autoencoder(widths: &[usize], opts: &ModelOptions, kind: BottleneckKind, rng: &mut Rng) -> Result<DrModel> {
    if widths.len() < 2 || *widths.last().unwrap() != opts.n {
        return Err(LabError::config("widths", "must end at the bottleneck width"));
    }
    let encoder = mlp(rng, widths, ActivationKind::Relu, false);
    let rev: Vec<usize> = widths.iter().rev().cloned().collect();
    let decoder = mlp(rng, &rev, ActivationKind::Relu, false);
    DrModel::new(encoder, bottleneck_layer(kind, opts)?, decoder)
}

/// Hyperparameters of one DR run.
#[derive(Clone, Debug, PartialEq)]
pub struct DrSettings {
    pub model: ModelOptions,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub l2: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub cold_start_epochs: usize,
    pub batch_size: Option<usize>,
    pub reconstruction: Reconstruction,
}

impl DrSettings {
    /// Adam settings per generator family.
    pub fn defaults(psi: PsiKind) -> Self {
        let (lr, l2, epochs, lambda, beta0) = match psi {
            PsiKind::Linear => (0.01, 1e-6, 2000, 0.01, 1.0),
            PsiKind::Quadratic => (0.01, 1e-6, 5000, 0.01, 5.0),
            PsiKind::NeuralNet => (0.001, 0.0, 10000, 0.1, 1.0),
        };
        DrSettings {
            model: ModelOptions {
                beta0,
                ..ModelOptions::default()
            },
            optimizer: OptimizerKind::ADAM_DEFAULT,
            lr,
            l2,
            lambda,
            epochs,
            cold_start_epochs: 0,
            batch_size: Some(100),
            reconstruction: Reconstruction::Mse,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            lr: self.lr,
            weight_decay: self.l2,
            lambda: self.lambda,
            epochs: self.epochs,
            cold_start_epochs: self.cold_start_epochs,
            batch_size: self.batch_size,
            schedule: LrSchedule::Constant,
            gradient_noise: 0.0,
            reconstruction: self.reconstruction,
            seed,
        }
    }
}

/// Trains an autoencoder to reconstruct `x`.
pub fn train_dr(model: &mut DrModel, x: &Tensor, cfg: &TrainConfig) -> Result<RunTrace> {
    fit(&mut model.net, x, Targets::Values(x), cfg)
}

/// [`train_dr`] restricted to models with an L1 bottleneck.
pub fn l1_baseline_train(model: &mut DrModel, x: &Tensor, cfg: &TrainConfig) -> Result<RunTrace> {
    if model.kind() != BottleneckKind::L1 {
        return Err(dam_core::Error::Structure("expected an L1 bottleneck".into()).into());
    }
    train_dr(model, x, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalCheck {
    pub lower: f64,
    pub upper: f64,
    pub contains: bool,
}

/// Whether `beta` lies in `(k((m-1)/n - 1), k(m/n - 1)]`, the offsets that
/// leave exactly `m` of `n` gates open.
pub fn theorem_interval_check(n: usize, k: f64, m: usize, beta: f64) -> IntervalCheck {
    assert!(m >= 1 && n >= m, "need 1 <= m <= n");
    let (nf, mf) = (n as f64, m as f64);
    let lower = k * ((mf - 1.0) / nf - 1.0);
    let upper = k * (mf / nf - 1.0);
    IntervalCheck {
        lower,
        upper,
        contains: beta > lower && beta <= upper,
    }
}

/// Summary of one finished synthetic run.
#[derive(Clone, Debug)]
pub struct DrOutcome {
    pub r: usize,
    pub dimension: usize,
    pub beta: Option<f64>,
    pub loss: f64,
    /// `‖X‖_F²` of the training data.
    pub data_energy: f64,
    pub trace: RunTrace,
    pub model: DrModel,
}

/// Seed streams used by a synthetic run; shared so sweeps can reuse data.
fn run_streams(seed: u64) -> (Rng, Rng, u64) {
    let root = Rng::new(seed);
    (root.split_named("data"), root.split_named("model"), root.split_named("train").seed())
}

/// Generates data from `spec`, builds the matching model and trains it.
pub fn run_synthetic(spec: &SyntheticSpec, settings: &DrSettings) -> Result<DrOutcome> {
    let (mut data_rng, mut model_rng, train_seed) = run_streams(spec.seed);
    let data = generate_synthetic(spec, &mut data_rng)?;
    let model = build_dr_model(spec.psi, spec.d, &settings.model, &mut model_rng)?;
    finish_run(model, &data, settings, train_seed)
}

fn finish_run(mut model: DrModel, data: &SyntheticData, settings: &DrSettings, seed: u64) -> Result<DrOutcome> {
    let trace = train_dr(&mut model, &data.x, &settings.train_config(seed))?;
    let recon = model.net.predict(&data.x)?;
    let loss = dam_core::loss_frobenius(&recon, &data.x)?.value;
    Ok(DrOutcome {
        r: data.r,
        dimension: model.dimension(),
        beta: model.gate().map(|g| g.beta),
        loss,
        data_energy: data.x.sum_squares(),
        trace,
        model,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub lrs: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub beta0s: Vec<f64>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lrs", &self.lrs), ("lambdas", &self.lambdas), ("beta0s", &self.beta0s)] {
            if v.is_empty() {
                return Err(LabError::config(name, "must not be empty"));
            }
        }
        Ok(())
    }

    /// Cells in row-major order over (lr, λ, β₀).
    pub fn cells(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for &lr in &self.lrs {
            for &lambda in &self.lambdas {
                for &b in &self.beta0s {
                    out.push((lr, lambda, b));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub lr: f64,
    pub lambda: f64,
    pub beta0: f64,
    pub seed: u64,
    /// `None` when the run diverged.
    pub dimension: Option<usize>,
    pub loss: Option<f64>,
    pub failed_epoch: Option<usize>,
}

/// One independent run per grid cell on a shared dataset. Cells run on the
/// worker pool; results do not depend on scheduling.
pub fn hyperparameter_sweep(spec: &SyntheticSpec, base: &DrSettings, grid: &SweepGrid) -> Result<Vec<SweepCell>> {
    grid.validate()?;
    let (mut data_rng, _, _) = run_streams(spec.seed);
    let data = generate_synthetic(spec, &mut data_rng)?;
    let cells = grid.cells();
    let root = Rng::new(spec.seed).split_named("sweep");
    let results = par_map(cells.len(), |i| {
        let (lr, lambda, beta0) = cells[i];
        let cell_rng = root.split(i as u64);
        let mut settings = base.clone();
        settings.lr = lr;
        settings.lambda = lambda;
        settings.model.beta0 = beta0;
        let mut model_rng = cell_rng.split_named("model");
        let seed = cell_rng.split_named("train").seed();
        let run = build_dr_model(spec.psi, spec.d, &settings.model, &mut model_rng)
            .and_then(|m| finish_run(m, &data, &settings, seed));
        let mut cell = SweepCell {
            lr,
            lambda,
            beta0,
            seed: cell_rng.seed(),
            dimension: None,
            loss: None,
            failed_epoch: None,
        };
        match run {
            Ok(o) => {
                cell.dimension = Some(o.dimension);
                cell.loss = Some(o.loss);
                Ok(cell)
            }
            Err(LabError::Diverged { epoch, .. }) => {
                cell.failed_epoch = Some(epoch);
                Ok(cell)
            }
            Err(e) => Err(e),
        }
    });
    results.into_iter().collect()
}

/// One point of the DAM-versus-L1 bottleneck ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationPoint {
    pub method: BottleneckKind,
    pub lambda: f64,
    /// Bottleneck dimension at the end of training; `None` if diverged.
    pub dimension: Option<usize>,
    /// Mean per-sample squared reconstruction error on the evaluation data.
    pub loss: Option<f64>,
}

impl BottleneckKind {
    pub fn name(&self) -> &'static str {
        match self {
            BottleneckKind::Dam => "dam",
            BottleneckKind::L1 => "l1",
        }
    }
}

/// Settings for the image autoencoder ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationSettings {
    /// Encoder widths from the input to the bottleneck.
    pub widths: Vec<usize>,
    pub model: ModelOptions,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub reconstruction: Reconstruction,
    pub seed: u64,
}

impl AblationSettings {
    pub fn defaults(input: usize) -> Self {
        AblationSettings {
            widths: vec![input, 64, 32, 50],
            model: ModelOptions::default(),
            lr: 0.001,
            epochs: 100,
            batch_size: 64,
            reconstruction: Reconstruction::PerSample,
            seed: 0,
        }
    }
}

/// One trained autoencoder of the ablation. `trace` and `model` are `None`
/// when training diverged.
#[derive(Clone, Debug)]
pub struct AblationRun {
    pub point: AblationPoint,
    pub trace: Option<RunTrace>,
    pub model: Option<DrModel>,
}

/// Trains a DAM and an L1 autoencoder for every λ and reports the final
/// bottleneck dimension and reconstruction error. Every job starts from the
/// same initial weights.
pub fn mnist_autoencoder_experiment(images: &Tensor, lambdas: &[f64], s: &AblationSettings) -> Result<Vec<AblationPoint>> {
    if lambdas.is_empty() {
        return Err(LabError::config("lambdas", "must not be empty"));
    }
    let jobs: Vec<(BottleneckKind, f64)> = [BottleneckKind::Dam, BottleneckKind::L1]
        .into_iter()
        .flat_map(|k| lambdas.iter().map(move |&l| (k, l)))
        .collect();
    Ok(ablation_runs(images, &jobs, s)?.into_iter().map(|r| r.point).collect())
}

/// Trains one autoencoder per `(bottleneck, λ)` job, in parallel.
pub fn ablation_runs(images: &Tensor, jobs: &[(BottleneckKind, f64)], s: &AblationSettings) -> Result<Vec<AblationRun>> {
    let root = Rng::new(s.seed);
    let results = par_map(jobs.len(), |i| {
        let (kind, lambda) = jobs[i];
        let mut model = build_autoencoder(&s.widths, &s.model, kind, &mut root.split_named("model"))?;
        let cfg = TrainConfig {
            optimizer: OptimizerKind::ADAM_DEFAULT,
            lr: s.lr,
            weight_decay: 0.0,
            lambda,
            epochs: s.epochs,
            cold_start_epochs: 0,
            batch_size: Some(s.batch_size),
            schedule: LrSchedule::Constant,
            gradient_noise: 0.0,
            reconstruction: s.reconstruction,
            seed: root.split_named("train").seed(),
        };
        let failed = AblationRun {
            point: AblationPoint {
                method: kind,
                lambda,
                dimension: None,
                loss: None,
            },
            trace: None,
            model: None,
        };
        match train_dr(&mut model, images, &cfg) {
            Ok(trace) => {
                let recon = model.net.predict_chunked(images, 1000)?;
                let loss = dam_core::loss_frobenius(&recon, images)?.value / images.rows() as f64;
                Ok(AblationRun {
                    point: AblationPoint {
                        method: kind,
                        lambda,
                        dimension: Some(model.dimension()),
                        loss: Some(loss),
                    },
                    trace: Some(trace),
                    model: Some(model),
                })
            }
            Err(LabError::Diverged { .. }) => Ok(failed),
            Err(e) => Err(e),
        }
    });
    results.into_iter().collect()
}
