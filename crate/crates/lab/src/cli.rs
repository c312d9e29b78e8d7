//! The `damlab` command line. One experiment per invocation; every
//! subcommand except `gate-demo` reads a JSON config and writes CSV files
//! into the output directory.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use dam_core::{l0_closed_form, make_ordering, DamGate, Rng, Tensor};

use crate::analysis::cka_report;
use crate::config::{parse_config, ExperimentConfig, ExperimentKind};
use crate::csv_out::{
    ablation_table, cka_summary_table, emit_csv, matrix_table, reports_table, sweep_table, trace_table, Cell, Table,
};
use crate::data::{load_mnist_dir, synthetic_dataset, Dataset};
use crate::dr::{
    generate_synthetic, hyperparameter_sweep, mnist_autoencoder_experiment, run_synthetic, theorem_interval_check,
    AblationSettings, ModelOptions,
};
use crate::error::{LabError, Result};
use crate::prune::{
    compact_mismatch, extract_pruned, lambda_sweep, permutation_invariance_experiment, train_classifier,
};
use crate::train::gate_positions;

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "DAMLAB_OUT";

/// Test images used for CKA when the test split is larger.
const CKA_ROWS: usize = 2000;

#[derive(Debug, Parser)]
#[command(name = "damlab", version, about = "Gated bottlenecks and structured pruning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset with a known latent dimension.
    GenData(RunArgs),
    /// Train one gated autoencoder on synthetic data.
    TrainDr(RunArgs),
    /// Grid over learning rate, λ and β₀ on one synthetic dataset.
    Sweep(RunArgs),
    /// Train gated classifiers: one run, a λ sweep or a permutation study.
    TrainClassifier(RunArgs),
    /// DAM versus L1 bottleneck on image autoencoders.
    MnistAblation(RunArgs),
    /// Neuron CKA of an unpruned and a pruned classifier.
    Analyze(RunArgs),
    /// Print gate values and open-gate counts for one layer.
    GateDemo(GateDemoArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config and the environment.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GateDemoArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 5.0)]
    k: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    beta: f64,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on usage or config errors, 2 on
/// runtime failures.
pub fn cli_dispatch<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                1
            } else {
                let _ = write!(stdout, "{text}");
                0
            };
        }
    };
    match run(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_config() {
                1
            } else {
                2
            }
        }
    }
}

fn run(cmd: Command, out: &mut dyn Write) -> Result<()> {
    let (args, kind) = match cmd {
        Command::GateDemo(a) => return gate_demo(&a, out),
        Command::GenData(a) => (a, ExperimentKind::GenData),
        Command::TrainDr(a) => (a, ExperimentKind::TrainDr),
        Command::Sweep(a) => (a, ExperimentKind::Sweep),
        Command::TrainClassifier(a) => (a, ExperimentKind::TrainClassifier),
        Command::MnistAblation(a) => (a, ExperimentKind::MnistAblation),
        Command::Analyze(a) => (a, ExperimentKind::Analyze),
    };
    let mut cfg = parse_config(&args.config)?;
    if cfg.kind != kind {
        return Err(LabError::config(
            "kind",
            format!("`{}` config given to the `{}` command", cfg.kind.name(), kind.name()),
        ));
    }
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    let dir = output_dir(&cfg, args.out.as_deref());
    let written = match kind {
        ExperimentKind::GenData => gen_data(&cfg, &dir)?,
        ExperimentKind::TrainDr => train_dr_cmd(&cfg, &dir)?,
        ExperimentKind::Sweep => sweep_cmd(&cfg, &dir)?,
        ExperimentKind::TrainClassifier => classifier_cmd(&cfg, &dir)?,
        ExperimentKind::MnistAblation => ablation_cmd(&cfg, &dir)?,
        ExperimentKind::Analyze => analyze_cmd(&cfg, &dir)?,
    };
    for p in written {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    Ok(())
}

fn output_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.output_dir().to_path_buf(),
    }
}

fn write(table: &Table, dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    emit_csv(table, &path)?;
    written.push(path);
    Ok(())
}

fn gate_demo(a: &GateDemoArgs, out: &mut dyn Write) -> Result<()> {
    let mu = make_ordering(a.n, a.k, None)?;
    let gate = DamGate::with_ordering(mu.clone(), a.k, a.alpha, a.beta)?;
    let io = |e| LabError::io("<stdout>", e);
    writeln!(out, "j,mu,gate").map_err(io)?;
    for (j, (m, g)) in mu.iter().zip(gate.gate_values()).enumerate() {
        writeln!(out, "{},{m:.6},{g:.6}", j + 1).map_err(io)?;
    }
    writeln!(
        out,
        "{} active of {} (closed form {}, continuous {:.6})",
        gate.l0_exact(),
        a.n,
        l0_closed_form(a.n, a.k, a.beta),
        gate.l0_continuous()
    )
    .map_err(io)?;
    Ok(())
}

fn gen_data(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let spec = cfg.synthetic_spec();
    let data = generate_synthetic(&spec, &mut Rng::new(spec.seed).split_named("data"))?;
    let mut w = Vec::new();
    write(&matrix_table(&data.x, None), dir, "data.csv", &mut w)?;
    write(&matrix_table(&data.omega, None), dir, "latent.csv", &mut w)?;
    Ok(w)
}

fn train_dr_cmd(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let spec = cfg.synthetic_spec();
    let settings = cfg.dr_settings();
    let o = run_synthetic(&spec, &settings)?;
    let mut w = Vec::new();
    write(&trace_table(&o.trace), dir, "trace.csv", &mut w)?;
    let (lower, upper, contains) = match o.beta {
        Some(b) if o.r >= 1 && o.r <= settings.model.n => {
            let c = theorem_interval_check(settings.model.n, settings.model.k, o.r, b);
            (Cell::Float(c.lower), Cell::Float(c.upper), Cell::Int(c.contains as i64))
        }
        _ => (Cell::Empty, Cell::Empty, Cell::Empty),
    };
    let mut t = Table::new([
        "psi",
        "r",
        "d",
        "seed",
        "l0_exact",
        "beta",
        "interval_lower",
        "interval_upper",
        "beta_in_interval",
        "reconstruction_loss",
        "data_energy",
    ]);
    t.push(vec![
        spec.psi.name().into(),
        spec.r.into(),
        spec.d.into(),
        spec.seed.into(),
        o.dimension.into(),
        o.beta.into(),
        lower,
        upper,
        contains,
        o.loss.into(),
        o.data_energy.into(),
    ]);
    write(&t, dir, "summary.csv", &mut w)?;
    Ok(w)
}

fn sweep_cmd(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let cells = hyperparameter_sweep(&cfg.synthetic_spec(), &cfg.dr_settings(), &cfg.sweep_grid())?;
    let mut w = Vec::new();
    write(&sweep_table(&cells), dir, "sweep.csv", &mut w)?;
    Ok(w)
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = cfg.dataset.clone().unwrap_or_default();
    let train = ds.train_subset.unwrap_or(usize::MAX);
    let test = ds.test_subset.unwrap_or(usize::MAX);
    let data = if ds.synthetic == Some(true) {
        let train = if train == usize::MAX { 10_000 } else { train };
        let test = if test == usize::MAX { 2_000 } else { test };
        synthetic_dataset(train, test, cfg.seed())
    } else {
        let path = ds
            .mnist_dir
            .ok_or_else(|| LabError::config("dataset.mnist_dir", "required unless dataset.synthetic is true"))?;
        load_mnist_dir(&path)?
    };
    Ok(data.truncate_train(train).truncate_test(test))
}

fn classifier_cmd(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let spec = cfg.classifier_spec();
    let settings = cfg.classifier_settings();
    let data = load_dataset(cfg)?;
    let runs = cfg.runs.unwrap_or(1);
    let mut w = Vec::new();
    if let Some(lambdas) = &cfg.lambdas {
        let seeds: Vec<u64> = (0..runs as u64).map(|i| settings.seed + i).collect();
        let rows = lambda_sweep(&spec, &data, &settings, lambdas, &seeds)?;
        let labelled: Vec<(Vec<Cell>, _)> = rows
            .iter()
            .map(|(l, s, r)| (vec![Cell::Float(*l), Cell::from(*s)], r))
            .collect();
        write(&reports_table(&["lambda", "seed"], &labelled), dir, "reports.csv", &mut w)?;
    } else if runs > 1 {
        let study = permutation_invariance_experiment(&spec, &data, &settings, runs, cfg.permute.unwrap_or(false))?;
        let labelled: Vec<(Vec<Cell>, _)> = study
            .reports
            .iter()
            .enumerate()
            .map(|(i, r)| (vec![Cell::from(i)], r))
            .collect();
        write(&reports_table(&["run"], &labelled), dir, "reports.csv", &mut w)?;
        let mut t = Table::new(["runs", "rsd_accuracy", "rsd_channels_pruned", "rsd_params_pruned"]);
        t.push(vec![
            runs.into(),
            study.rsd_accuracy.into(),
            study.rsd_channels.into(),
            study.rsd_params.into(),
        ]);
        write(&t, dir, "rsd.csv", &mut w)?;
    } else {
        let trained = train_classifier(&spec, &data, &settings)?;
        write(&trace_table(&trained.trace), dir, "trace.csv", &mut w)?;
        let mut report = reports_table(&["seed"], &[(vec![Cell::from(settings.seed)], &trained.report)]);
        let mismatch = match extract_pruned(&trained.net) {
            Ok(compact) => Cell::Float(compact_mismatch(&trained.net, &compact, &data.test_x)?),
            Err(_) => Cell::Empty,
        };
        report.header.push("compact_max_abs_diff".into());
        report.rows[0].push(mismatch);
        write(&report, dir, "report.csv", &mut w)?;
    }
    Ok(w)
}

fn ablation_cmd(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let data = load_dataset(cfg)?;
    let widths = cfg.widths.clone().expect("filled");
    let s = AblationSettings {
        model: ModelOptions {
            n: widths.last().copied().unwrap_or(0),
            k: cfg.k.unwrap_or(5.0),
            alpha: cfg.alpha.unwrap_or(1.0),
            beta0: cfg.beta0.unwrap_or(1.0),
            ..ModelOptions::default()
        },
        lr: cfg.lr.expect("filled"),
        epochs: cfg.epochs.expect("filled"),
        batch_size: cfg.batch_size.expect("filled"),
        reconstruction: cfg.reconstruction.expect("filled").to_core(),
        seed: cfg.seed(),
        widths,
    };
    if s.widths[0] != data.train_x.cols() {
        return Err(LabError::config(
            "widths",
            format!("first width {} does not match {} input pixels", s.widths[0], data.train_x.cols()),
        ));
    }
    let points = mnist_autoencoder_experiment(&data.train_x, cfg.lambdas.as_deref().unwrap_or(&[]), &s)?;
    let mut w = Vec::new();
    write(&ablation_table(&points), dir, "ablation.csv", &mut w)?;
    Ok(w)
}

fn analyze_cmd(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let spec = cfg.classifier_spec();
    let pruned_settings = cfg.classifier_settings();
    let unpruned_settings = crate::prune::ClassifierSettings {
        lambda: 0.0,
        ..pruned_settings.clone()
    };
    let data = load_dataset(cfg)?;
    let rows: Vec<usize> = (0..data.test_x.rows().min(CKA_ROWS)).collect();
    let probe: Tensor = data.test_x.select_rows(&rows);
    let layer = cfg.cka_layer.unwrap_or(0);
    let mut w = Vec::new();
    let mut reports = Vec::new();
    let mut summaries = Vec::new();
    for (name, s) in [("unpruned", &unpruned_settings), ("pruned", &pruned_settings)] {
        let trained = train_classifier(&spec, &data, s)?;
        let at = gate_positions(&trained.net)[layer];
        let cka = cka_report(&trained.net, &probe, at)?;
        write(
            &matrix_table(&cka.matrix, Some(&cka.neurons)),
            dir,
            &format!("cka_{name}.csv"),
            &mut w,
        )?;
        reports.push((name, s.lambda, trained.report));
        summaries.push((name, cka));
    }
    let summary_rows: Vec<(&str, _)> = summaries.iter().map(|(n, c)| (*n, c)).collect();
    write(&cka_summary_table(&summary_rows), dir, "cka_summary.csv", &mut w)?;
    let labelled: Vec<(Vec<Cell>, _)> = reports
        .iter()
        .map(|(n, l, r)| (vec![Cell::from(*n), Cell::Float(*l)], r))
        .collect();
    write(&reports_table(&["network", "lambda"], &labelled), dir, "reports.csv", &mut w)?;
    Ok(w)
}
