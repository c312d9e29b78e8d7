//! Experiment configuration: a strict JSON document, one per invocation.
//!
//! Parsing rejects unknown keys, fills per-kind defaults and checks every
//! numeric field against its documented range before any work starts.
//! The schema is described in `docs/config.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dam_core::{ActivationKind, OptimizerKind, Reconstruction};

use crate::dr::{DrSettings, ModelOptions, PsiKind, SweepGrid, SyntheticSpec};
use crate::error::{LabError, Result};
use crate::prune::{ClassifierSettings, ClassifierSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GenData,
    TrainDr,
    Sweep,
    TrainClassifier,
    MnistAblation,
    Analyze,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::GenData => "gen-data",
            ExperimentKind::TrainDr => "train-dr",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::TrainClassifier => "train-classifier",
            ExperimentKind::MnistAblation => "mnist-ablation",
            ExperimentKind::Analyze => "analyze",
        }
    }

    fn uses_psi(&self) -> bool {
        matches!(self, ExperimentKind::GenData | ExperimentKind::TrainDr | ExperimentKind::Sweep)
    }

    fn uses_images(&self) -> bool {
        matches!(
            self,
            ExperimentKind::TrainClassifier | ExperimentKind::MnistAblation | ExperimentKind::Analyze
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerName {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossReduction {
    /// Sum of squares over the batch.
    Sum,
    /// Sum of squares divided by the batch size.
    PerSample,
    /// Mean over every entry.
    Mean,
}

impl LossReduction {
    pub fn to_core(self) -> Reconstruction {
        match self {
            LossReduction::Sum => Reconstruction::Frobenius,
            LossReduction::PerSample => Reconstruction::PerSample,
            LossReduction::Mean => Reconstruction::Mse,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lrs: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub beta0s: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Directory holding the four standard MNIST IDX files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist_dir: Option<PathBuf>,
    /// Use the Gaussian-blob stand-in instead of MNIST.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<bool>,
    /// Training images kept (first N); `null` keeps all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_subset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_subset: Option<usize>,
}

/// Every field except `kind` is optional in the file; `parse_config`
/// fills the defaults so the returned value is complete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,

    // Synthetic dimensionality reduction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<PsiKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<LossReduction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,

    // Optimisation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cold_start_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_decay: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_noise: Option<f64>,

    // Gates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,

    // Classifiers and image autoencoders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permute: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cka_layer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetConfig>,
}

fn bad(path: &str, msg: impl Into<String>) -> LabError {
    LabError::config(path, msg)
}

fn in_range(path: &str, v: f64, lo: f64, hi: f64, lo_open: bool) -> Result<()> {
    let ok = v.is_finite() && (if lo_open { v > lo } else { v >= lo }) && v <= hi;
    if ok {
        Ok(())
    } else {
        let open = if lo_open { "(" } else { "[" };
        Err(bad(path, format!("{v} is outside {open}{lo}, {hi}]")))
    }
}

impl ExperimentConfig {
    /// A config of the given kind with no fields set.
    pub fn empty(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            seed: None,
            output_dir: None,
            psi: None,
            r: None,
            d: None,
            n_samples: None,
            n: None,
            hidden: None,
            reconstruction: None,
            grid: None,
            optimizer: None,
            lr: None,
            momentum: None,
            l2: None,
            lambda: None,
            lambdas: None,
            epochs: None,
            cold_start_epochs: None,
            batch_size: None,
            step_decay: None,
            gradient_noise: None,
            k: None,
            alpha: None,
            beta0: None,
            widths: None,
            activation: None,
            runs: None,
            permute: None,
            cka_layer: None,
            dataset: None,
        }
    }

    /// Fills every unset field with the default for this kind.
    pub fn fill_defaults(&mut self) {
        let kind = self.kind;
        self.seed.get_or_insert(0);
        self.output_dir.get_or_insert_with(|| PathBuf::from("out"));
        self.k.get_or_insert(5.0);
        self.alpha.get_or_insert(1.0);
        if kind.uses_psi() {
            let psi = *self.psi.get_or_insert(PsiKind::Linear);
            let r = *self.r.get_or_insert(5);
            self.d.get_or_insert(psi.default_redundancy() * r);
            self.n_samples.get_or_insert(1000);
            let dr = DrSettings::defaults(psi);
            self.n.get_or_insert(dr.model.n);
            self.hidden.get_or_insert(dr.model.hidden);
            self.reconstruction.get_or_insert(LossReduction::Mean);
            self.optimizer.get_or_insert(OptimizerName::Adam);
            self.lr.get_or_insert(dr.lr);
            self.l2.get_or_insert(dr.l2);
            self.lambda.get_or_insert(dr.lambda);
            self.epochs.get_or_insert(dr.epochs);
            self.beta0.get_or_insert(dr.model.beta0);
            self.cold_start_epochs.get_or_insert(dr.cold_start_epochs);
            if let Some(b) = dr.batch_size {
                self.batch_size.get_or_insert(b);
            }
            if kind == ExperimentKind::Sweep {
                self.grid.get_or_insert_with(|| GridConfig {
                    lrs: vec![1e-4, 1e-3, 1e-2, 1e-1],
                    lambdas: vec![dr.lambda],
                    beta0s: vec![1.0, 5.0],
                });
            }
        }
        if kind.uses_images() {
            let ds = self.dataset.get_or_insert_with(DatasetConfig::default);
            if ds.mnist_dir.is_none() {
                ds.synthetic.get_or_insert(true);
            } else {
                ds.synthetic.get_or_insert(false);
            }
            ds.train_subset.get_or_insert(10_000);
        }
        match kind {
            ExperimentKind::TrainClassifier | ExperimentKind::Analyze => {
                let c = ClassifierSettings::default();
                self.widths.get_or_insert_with(|| vec![784, 256, 128, 10]);
                self.activation.get_or_insert_with(|| "relu".into());
                self.optimizer.get_or_insert(OptimizerName::Sgd);
                self.lr.get_or_insert(c.lr);
                self.momentum.get_or_insert(0.9);
                self.l2.get_or_insert(c.l2);
                self.lambda.get_or_insert(c.lambda);
                let epochs = *self.epochs.get_or_insert(c.epochs);
                self.cold_start_epochs.get_or_insert(c.cold_start_epochs.min(epochs));
                self.batch_size.get_or_insert(c.batch_size);
                self.step_decay.get_or_insert(c.step_decay);
                self.gradient_noise.get_or_insert(c.gradient_noise);
                self.beta0.get_or_insert(1.0);
                self.runs.get_or_insert(1);
                self.permute.get_or_insert(false);
                if kind == ExperimentKind::Analyze {
                    self.cka_layer.get_or_insert(0);
                }
            }
            ExperimentKind::MnistAblation => {
                self.widths.get_or_insert_with(|| vec![784, 64, 32, 50]);
                self.optimizer.get_or_insert(OptimizerName::Adam);
                self.lr.get_or_insert(0.001);
                self.l2.get_or_insert(0.0);
                self.epochs.get_or_insert(100);
                self.batch_size.get_or_insert(64);
                self.beta0.get_or_insert(1.0);
                self.reconstruction.get_or_insert(LossReduction::PerSample);
                self.lambdas
                    .get_or_insert_with(|| vec![0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0]);
            }
            _ => {}
        }
    }

    /// Range checks. Paths in messages are JSON keys.
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.lr {
            in_range("lr", v, 0.0, 10.0, true)?;
        }
        if let Some(v) = self.momentum {
            in_range("momentum", v, 0.0, 0.999, false)?;
        }
        if let Some(v) = self.l2 {
            in_range("l2", v, 0.0, 1.0, false)?;
        }
        if let Some(v) = self.lambda {
            in_range("lambda", v, 0.0, 1e4, false)?;
        }
        if let Some(ls) = &self.lambdas {
            if ls.is_empty() {
                return Err(bad("lambdas", "must not be empty"));
            }
            for (i, &v) in ls.iter().enumerate() {
                in_range(&format!("lambdas[{i}]"), v, 0.0, 1e4, false)?;
            }
        }
        if let Some(v) = self.epochs {
            in_range("epochs", v as f64, 1.0, 1e6, false)?;
        }
        if let (Some(c), Some(e)) = (self.cold_start_epochs, self.epochs) {
            if c > e {
                return Err(bad("cold_start_epochs", format!("{c} exceeds epochs = {e}")));
            }
        }
        if let Some(v) = self.batch_size {
            in_range("batch_size", v as f64, 1.0, 1e7, false)?;
        }
        if let Some(v) = self.gradient_noise {
            in_range("gradient_noise", v, 0.0, 10.0, false)?;
        }
        if let Some(v) = self.k {
            in_range("k", v, 0.0, 1e3, true)?;
        }
        if let Some(v) = self.alpha {
            in_range("alpha", v, 0.0, 1e3, true)?;
        }
        if let Some(v) = self.beta0 {
            in_range("beta0", v, -1e3, 1e3, false)?;
        }
        if let Some(v) = self.r {
            in_range("r", v as f64, 1.0, 1e5, false)?;
        }
        if let (Some(r), Some(d)) = (self.r, self.d) {
            if d <= r {
                return Err(bad("d", format!("{d} must exceed r = {r}")));
            }
        }
        if let (Some(d), Some(ns)) = (self.d, self.n_samples) {
            if ns < d {
                return Err(bad("n_samples", format!("{ns} must be at least d = {d}")));
            }
        }
        if let Some(v) = self.n {
            in_range("n", v as f64, 1.0, 1e5, false)?;
        }
        if let Some(v) = self.hidden {
            in_range("hidden", v as f64, 1.0, 1e5, false)?;
        }
        if let Some(v) = self.runs {
            in_range("runs", v as f64, 1.0, 1e4, false)?;
        }
        if let Some(w) = &self.widths {
            let min = if self.kind == ExperimentKind::MnistAblation { 2 } else { 3 };
            if w.len() < min || w.contains(&0) {
                return Err(bad("widths", format!("need at least {min} positive widths")));
            }
        }
        if let Some(a) = &self.activation {
            if ActivationKind::parse(a).is_none() {
                return Err(bad("activation", format!("unknown activation `{a}`")));
            }
        }
        if let Some(g) = &self.grid {
            for (name, v) in [("grid.lrs", &g.lrs), ("grid.lambdas", &g.lambdas), ("grid.beta0s", &g.beta0s)] {
                if v.is_empty() {
                    return Err(bad(name, "must not be empty"));
                }
            }
            for (i, &v) in g.lrs.iter().enumerate() {
                in_range(&format!("grid.lrs[{i}]"), v, 0.0, 10.0, true)?;
            }
            for (i, &v) in g.lambdas.iter().enumerate() {
                in_range(&format!("grid.lambdas[{i}]"), v, 0.0, 1e4, false)?;
            }
        }
        if let Some(ds) = &self.dataset {
            if ds.synthetic == Some(false) && ds.mnist_dir.is_none() {
                return Err(bad("dataset.mnist_dir", "required unless dataset.synthetic is true"));
            }
            if ds.train_subset == Some(0) {
                return Err(bad("dataset.train_subset", "must be positive"));
            }
        }
        if self.kind == ExperimentKind::MnistAblation {
            if let (Some(w), Some(n)) = (&self.widths, self.n) {
                if w.last() != Some(&n) {
                    return Err(bad("n", "must equal the last encoder width"));
                }
            }
        }
        if self.kind == ExperimentKind::Analyze {
            if let (Some(l), Some(w)) = (self.cka_layer, &self.widths) {
                if l + 2 >= w.len() {
                    return Err(bad("cka_layer", format!("{l} is not a hidden layer index")));
                }
            }
        }
        Ok(())
    }

    fn req<T: Copy>(v: Option<T>, name: &str) -> T {
        v.unwrap_or_else(|| panic!("`{name}` is filled by fill_defaults"))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            r: Self::req(self.r, "r"),
            d: Self::req(self.d, "d"),
            n_samples: Self::req(self.n_samples, "n_samples"),
            psi: Self::req(self.psi, "psi"),
            seed: self.seed(),
        }
    }

    /// SGD uses `momentum` (0 when unset); Adam uses the usual moment decays.
    pub fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer.unwrap_or(OptimizerName::Adam) {
            OptimizerName::Adam => OptimizerKind::ADAM_DEFAULT,
            OptimizerName::Sgd => OptimizerKind::Sgd {
                momentum: self.momentum.unwrap_or(0.0),
            },
        }
    }

    pub fn dr_settings(&self) -> DrSettings {
        let psi = Self::req(self.psi, "psi");
        let base = DrSettings::defaults(psi);
        DrSettings {
            model: ModelOptions {
                n: self.n.unwrap_or(base.model.n),
                hidden: self.hidden.unwrap_or(base.model.hidden),
                decoder_hidden: self.hidden.unwrap_or(base.model.decoder_hidden),
                k: Self::req(self.k, "k"),
                alpha: Self::req(self.alpha, "alpha"),
                beta0: Self::req(self.beta0, "beta0"),
            },
            optimizer: self.optimizer_kind(),
            lr: Self::req(self.lr, "lr"),
            l2: Self::req(self.l2, "l2"),
            lambda: Self::req(self.lambda, "lambda"),
            epochs: Self::req(self.epochs, "epochs"),
            cold_start_epochs: Self::req(self.cold_start_epochs, "cold_start_epochs"),
            batch_size: self.batch_size,
            reconstruction: Self::req(self.reconstruction, "reconstruction").to_core(),
        }
    }

    pub fn sweep_grid(&self) -> SweepGrid {
        let g = self.grid.clone().expect("grid is filled by fill_defaults");
        SweepGrid {
            lrs: g.lrs,
            lambdas: g.lambdas,
            beta0s: g.beta0s,
        }
    }

    pub fn classifier_spec(&self) -> ClassifierSpec {
        ClassifierSpec {
            widths: self.widths.clone().expect("widths"),
            activation: ActivationKind::parse(self.activation.as_deref().unwrap_or("relu")).expect("validated"),
            k: Self::req(self.k, "k"),
            alpha: Self::req(self.alpha, "alpha"),
            beta0: Self::req(self.beta0, "beta0"),
        }
    }

    pub fn classifier_settings(&self) -> ClassifierSettings {
        ClassifierSettings {
            lr: Self::req(self.lr, "lr"),
            optimizer: self.optimizer_kind(),
            l2: Self::req(self.l2, "l2"),
            epochs: Self::req(self.epochs, "epochs"),
            cold_start_epochs: Self::req(self.cold_start_epochs, "cold_start_epochs"),
            batch_size: Self::req(self.batch_size, "batch_size"),
            lambda: Self::req(self.lambda, "lambda"),
            gradient_noise: Self::req(self.gradient_noise, "gradient_noise"),
            step_decay: Self::req(self.step_decay, "step_decay"),
            seed: self.seed(),
        }
    }

    pub fn output_dir(&self) -> &Path {
        self.output_dir.as_deref().unwrap_or(Path::new("out"))
    }
}

/// Parses, fills defaults and validates a JSON config document.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        LabError::config(if path.is_empty() { ".".into() } else { path }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    cfg.fill_defaults();
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::config(path.display().to_string(), format!("cannot read config: {e}")))?;
    parse_config_str(&text)
}

pub fn to_json(cfg: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serialises")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_train_dr_gets_linear_defaults() {
        let c = parse_config_str(r#"{"kind":"train-dr","psi":"linear","r":5,"seed":0}"#).unwrap();
        assert_eq!(c.lr, Some(0.01));
        assert_eq!(c.l2, Some(1e-6));
        assert_eq!(c.epochs, Some(2000));
        assert_eq!(c.lambda, Some(0.01));
        assert_eq!(c.beta0, Some(1.0));
        assert_eq!(c.d, Some(10));
    }

    #[test]
    fn per_kind_defaults() {
        let q = parse_config_str(r#"{"kind":"train-dr","psi":"quadratic"}"#).unwrap();
        assert_eq!((q.epochs, q.beta0), (Some(5000), Some(5.0)));
        let nn = parse_config_str(r#"{"kind":"train-dr","psi":"neural-net"}"#).unwrap();
        assert_eq!((nn.lr, nn.l2, nn.lambda), (Some(0.001), Some(0.0), Some(0.1)));
        let c = parse_config_str(r#"{"kind":"train-classifier"}"#).unwrap();
        assert_eq!(c.optimizer, Some(OptimizerName::Sgd));
        assert_eq!(c.cold_start_epochs, Some(20));
        let short = parse_config_str(r#"{"kind":"analyze","epochs":5}"#).unwrap();
        assert_eq!(short.cold_start_epochs, Some(5));
        assert!(parse_config_str(r#"{"kind":"analyze","epochs":5,"cold_start_epochs":6}"#).is_err());
    }

    #[test]
    fn range_and_unknown_key_errors_name_the_path() {
        let e = parse_config_str(r#"{"kind":"train-dr","lr":-1}"#).unwrap_err();
        assert!(e.is_config());
        assert!(e.to_string().contains("`lr`"), "{e}");
        let e = parse_config_str(r#"{"kind":"train-dr","learning_rate":0.1}"#).unwrap_err();
        assert!(e.to_string().contains("learning_rate"), "{e}");
        let e = parse_config_str(r#"{"kind":"sweep","grid":{"lrs":[0.1],"lambdas":[],"beta0s":[1]}}"#).unwrap_err();
        assert!(e.to_string().contains("grid.lambdas"), "{e}");
        let e = parse_config_str(r#"{"kind":"sweep","grid":{"lrs":[0.1],"lambdas":[1],"beta0s":[1],"x":1}}"#)
            .unwrap_err();
        assert!(e.to_string().contains("grid"), "{e}");
        assert!(parse_config_str("{").is_err());
        assert!(parse_config_str(r#"{"kind":"train-dr","r":5,"d":5}"#).is_err());
    }

    #[test]
    fn round_trip() {
        for text in [
            r#"{"kind":"train-dr","psi":"neural-net","r":10}"#,
            r#"{"kind":"sweep"}"#,
            r#"{"kind":"train-classifier","lambdas":[0,0.4],"dataset":{"synthetic":true}}"#,
            r#"{"kind":"mnist-ablation"}"#,
        ] {
            let a = parse_config_str(text).unwrap();
            let b = parse_config_str(&to_json(&a)).unwrap();
            assert_eq!(a, b);
        }
    }
}
