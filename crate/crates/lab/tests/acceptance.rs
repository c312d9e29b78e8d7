//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any criterion fails.
//!
//! `DAM_ACCEPTANCE=1,2,10` restricts the run to the listed criteria; the
//! shared runs that later criteria inspect are only those produced by the
//! selected ones.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use dam_core::{
    finite_diff_grad, regularizer, relative_error, ActivationKind, DamGate, Dense, InitScheme, Layer, Network,
    ParamAddress, ParamRole, Rng, Tensor,
};
use dam_lab::analysis::{cka_report, cka_similarity, rsd, spearman};
use dam_lab::data::{synthetic_dataset, Dataset};
use dam_lab::dr::{
    ablation_runs, run_synthetic, theorem_interval_check, AblationSettings, BottleneckKind, DrOutcome, DrSettings,
    PsiKind, SyntheticSpec,
};
use dam_lab::prune::{
    compact_mismatch, extract_pruned, permutation_invariance_experiment, train_classifier, ClassifierSettings,
    ClassifierSpec,
};
use dam_lab::trace::{stability, RunTrace};
use dam_lab::train::reg_mode_for;

/// Epochs over which the equilibrium residual is averaged.
const RESIDUAL_WINDOW: usize = 200;

/// Desk-scale classifier: MLP on a synthetic-digit subset.
const CLS_WIDTHS: [usize; 4] = [784, 256, 128, 10];
const CLS_TRAIN: usize = 10_000;
const CLS_TEST: usize = 10_000;
const CLS_EPOCHS: usize = 60;
const CLS_COLD: usize = 20;
const CLS_LAMBDA: f64 = 0.4;

/// Image autoencoder ablation.
const AE_IMAGES: usize = 10_000;
const AE_DAM_LAMBDAS: [f64; 7] = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0];
const AE_L1_LAMBDAS: [f64; 6] = [0.01, 0.1, 1.0, 3.0, 10.0, 25.0];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Networks and traces produced along the way, inspected by later criteria.
#[derive(Default)]
struct Shared {
    /// Trained networks and the input width they expect.
    networks: Vec<(String, Network, usize)>,
    /// DAM training traces with their cold-start length.
    dam_traces: Vec<(String, RunTrace, usize)>,
    /// Synthetic runs that settled on a dimension, with λ.
    converged_dr: Vec<(String, RunTrace, f64)>,
    classifier_data: Option<Dataset>,
    pruned_classifier: Option<Network>,
}

impl Shared {
    fn record_dr(&mut self, name: String, o: &DrOutcome, lambda: f64) {
        self.networks.push((name.clone(), o.model.net.clone(), o.model.net_input_width()));
        self.dam_traces.push((name.clone(), o.trace.clone(), 0));
        let l0 = o.trace.l0_series(0);
        let tail = &l0[l0.len().saturating_sub(RESIDUAL_WINDOW)..];
        if tail.iter().all(|&v| v == tail[0]) {
            self.converged_dr.push((name, o.trace.clone(), lambda));
        }
    }
}

trait InputWidth {
    fn net_input_width(&self) -> usize;
}

impl InputWidth for dam_lab::dr::DrModel {
    fn net_input_width(&self) -> usize {
        self.net.dense_layers().next().map_or(0, |d| d.input_dim())
    }
}

// 1 ------------------------------------------------------------------------

fn l0_identity(_: &mut Shared) -> Verdict {
    let mut rng = Rng::new(1);
    let mut failures = 0;
    for _ in 0..1000 {
        let n = 1 + rng.below(1000);
        let k = rng.uniform(0.5, 20.0);
        let alpha = rng.uniform(0.05, 50.0);
        let beta = loop {
            let b = rng.uniform(-k, 0.0);
            let x = n as f64 * (1.0 + b / k);
            if (x - x.round()).abs() > 1e-9 {
                break b;
            }
        };
        let gate = DamGate::new(n, k, alpha, beta).unwrap();
        let positive = gate.gate_values().iter().filter(|&&g| g > 0.0).count();
        if positive != (n as f64 * (1.0 + beta / k)).ceil() as usize {
            failures += 1;
        }
    }
    verdict(failures == 0, format!("{failures} mismatches in 1000 cases"))
}

// 2 ------------------------------------------------------------------------

/// A small MLP with one to three gated hidden layers and squared loss.
fn gradient_case(seed: u64) -> (Network, Tensor, Tensor, f64) {
    let mut rng = Rng::new(seed);
    let hidden = 1 + rng.below(3);
    let mut widths = vec![2 + rng.below(6)];
    for _ in 0..hidden {
        widths.push(3 + rng.below(12));
    }
    widths.push(1 + rng.below(4));
    let acts = [ActivationKind::Tanh, ActivationKind::Sigmoid, ActivationKind::Relu, ActivationKind::ELU];
    let mut layers = Vec::new();
    for i in 0..widths.len() - 1 {
        layers.push(Layer::Dense(Dense::init(&mut rng, InitScheme::ScaledUniform, widths[i], widths[i + 1])));
        if i + 2 < widths.len() {
            layers.push(Layer::activation(acts[rng.below(acts.len())]));
            let n = widths[i + 1];
            let k = 5.0;
            let alpha = rng.uniform(0.5, 3.0);
            let beta = rng.uniform(-0.9 * k, 0.2);
            layers.push(Layer::Gate(DamGate::new(n, k, alpha, beta).unwrap()));
        }
    }
    let batch = 2 + rng.below(6);
    let (din, dout) = (widths[0], *widths.last().unwrap());
    let x = Tensor::from_vec(batch, din, (0..batch * din).map(|_| rng.normal()).collect()).unwrap();
    let y = Tensor::from_vec(batch, dout, (0..batch * dout).map(|_| rng.normal()).collect()).unwrap();
    (Network::new(layers), x, y, rng.uniform(0.0, 1.0))
}

/// Some gate argument `α(μ + β)` or kinked activation input sits within
/// `tol` of zero.
fn kink_adjacent(net: &Network, x: &Tensor, tol: f64) -> bool {
    let mut h = x.clone();
    for layer in net.layers() {
        match layer {
            Layer::Gate(g) => {
                if g.mu().iter().any(|m| (g.alpha() * (m + g.beta)).abs() < tol) {
                    return true;
                }
            }
            Layer::Activation(a) => {
                if h.data().iter().any(|&v| a.kind.has_kink_near(v, tol)) {
                    return true;
                }
            }
            _ => {}
        }
        h = layer.eval(&h).unwrap();
    }
    false
}

fn total_objective(net: &Network, x: &Tensor, y: &Tensor, lambda: f64) -> dam_core::Result<f64> {
    let out = net.predict(x)?;
    let task = dam_core::loss_mse(&out, y)?.value;
    let gates: Vec<&DamGate> = net.gates().collect();
    Ok(task + regularizer(&gates, lambda, reg_mode_for(net))?.value)
}

fn beta_gradients(_: &mut Shared) -> Verdict {
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut seed = 0;
    while checked < 50 {
        seed += 1;
        let (mut net, x, y, lambda) = gradient_case(seed);
        if kink_adjacent(&net, &x, 1e-4) {
            skipped += 1;
            continue;
        }
        let out = net.forward(&x).unwrap();
        let loss = dam_core::loss_mse(&out, &y).unwrap();
        net.backward(&loss.grad).unwrap();
        let mode = reg_mode_for(&net);
        let penalty = {
            let gates: Vec<&DamGate> = net.gates().collect();
            regularizer(&gates, lambda, mode).unwrap()
        };
        let analytic: Vec<f64> = net
            .gates()
            .zip(&penalty.beta_grads)
            .map(|(g, p)| g.grad_beta() + p)
            .collect();
        let offsets: Vec<usize> = net
            .param_layout()
            .iter()
            .enumerate()
            .filter(|(_, (role, _))| *role == ParamRole::GateOffset)
            .map(|(i, _)| i)
            .collect();
        for (param, a) in offsets.into_iter().zip(analytic) {
            let mut probe = net.clone();
            let numeric = finite_diff_grad(
                &mut probe,
                |n: &Network| total_objective(n, &x, &y, lambda),
                ParamAddress { param, offset: 0 },
                1e-6,
            )
            .unwrap();
            worst = worst.max(relative_error(a, numeric, 1e-8));
        }
        checked += 1;
    }
    verdict(
        worst < 1e-4,
        format!("{checked} networks ({skipped} kink-adjacent skipped), worst relative error {worst:.2e}"),
    )
}

// 3 ------------------------------------------------------------------------

fn linear_recovery(shared: &mut Shared) -> Verdict {
    let start = Instant::now();
    let settings = DrSettings::defaults(PsiKind::Linear);
    let (mut hits, mut total, mut bad) = (0, 0, Vec::new());
    for r in [5, 10, 15, 20] {
        for seed in 0..5 {
            let spec = SyntheticSpec::new(PsiKind::Linear, r, seed);
            let o = run_synthetic(&spec, &settings).unwrap();
            total += 1;
            if o.dimension == r {
                hits += 1;
                let beta = o.beta.unwrap();
                let inside = theorem_interval_check(settings.model.n, settings.model.k, r, beta).contains;
                let small = o.loss < 1e-3 * o.data_energy;
                if !(inside && small) {
                    bad.push(format!("r={r} seed={seed} beta={beta:.4} loss/E={:.2e}", o.loss / o.data_energy));
                }
            }
            shared.record_dr(format!("linear r={r} seed={seed}"), &o, settings.lambda);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = hits * 5 >= total * 4 && bad.is_empty() && secs < 600.0;
    verdict(
        pass,
        format!("l0 = r in {hits}/{total}; interval/loss violations {bad:?}; {secs:.0} s (< 600 s)"),
    )
}

// 4 ------------------------------------------------------------------------

fn nonlinear_recovery(shared: &mut Shared) -> Verdict {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for psi in [PsiKind::Quadratic, PsiKind::NeuralNet] {
        let settings = DrSettings::defaults(psi);
        for r in [5, 10] {
            // Five seeds at most; the outcome is fixed once three succeed
            // or three fail.
            let (mut ok, mut fail, mut dims) = (0, 0, Vec::new());
            for seed in 0..5 {
                if ok >= 3 || fail >= 3 {
                    break;
                }
                let o = run_synthetic(&SyntheticSpec::new(psi, r, seed), &settings).unwrap();
                dims.push(o.dimension);
                if o.dimension == r {
                    ok += 1;
                } else {
                    fail += 1;
                }
                shared.record_dr(format!("{} r={r} seed={seed}", psi.name()), &o, settings.lambda);
            }
            pass &= ok >= 3;
            parts.push(format!("{} r={r}: dims {dims:?}", psi.name()));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 1800.0;
    verdict(pass, format!("{}; {secs:.0} s (< 1800 s)", parts.join("; ")))
}

// 5 ------------------------------------------------------------------------

fn ablation(shared: &mut Shared) -> Verdict {
    let start = Instant::now();
    let images = synthetic_dataset(AE_IMAGES, 1, 5).train_x;
    let s = AblationSettings::defaults(images.cols());
    let jobs: Vec<(BottleneckKind, f64)> = AE_DAM_LAMBDAS
        .iter()
        .map(|&l| (BottleneckKind::Dam, l))
        .chain(AE_L1_LAMBDAS.iter().map(|&l| (BottleneckKind::L1, l)))
        .collect();
    let runs = ablation_runs(&images, &jobs, &s).unwrap();
    let dims = |kind: BottleneckKind| -> Vec<(f64, Option<usize>)> {
        runs.iter()
            .filter(|r| r.point.method == kind)
            .map(|r| (r.point.lambda, r.point.dimension))
            .collect()
    };
    let (dam, l1) = (dims(BottleneckKind::Dam), dims(BottleneckKind::L1));
    for run in &runs {
        if let (Some(model), Some(trace)) = (&run.model, &run.trace) {
            let name = format!("autoencoder {} lambda={}", run.point.method.name(), run.point.lambda);
            shared.networks.push((name.clone(), model.net.clone(), images.cols()));
            if run.point.method == BottleneckKind::Dam {
                shared.dam_traces.push((name, trace.clone(), 0));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if dam.iter().chain(&l1).any(|(_, d)| d.is_none()) {
        return verdict(false, format!("diverged runs: dam {dam:?} l1 {l1:?}"));
    }
    let lam: Vec<f64> = dam.iter().map(|p| p.0).collect();
    let dd: Vec<f64> = dam.iter().map(|p| p.1.unwrap() as f64).collect();
    let rho = spearman(&lam, &dd);
    let dam_min = dam.iter().filter_map(|p| p.1).min().unwrap();
    let l1_min = l1.iter().filter_map(|p| p.1).min().unwrap();
    let dam_dims: Vec<usize> = dam.iter().filter_map(|p| p.1).collect();
    let l1_dims: Vec<usize> = l1.iter().filter_map(|p| p.1).collect();
    verdict(
        rho <= -0.9 && l1_min > dam_min && secs < 1200.0,
        format!(
            "DAM dims {dam_dims:?} (Spearman {rho:.3}); L1 dims {l1_dims:?}; min L1 {l1_min} vs min DAM {dam_min}; {secs:.0} s (< 1200 s)"
        ),
    )
}

// 6 ------------------------------------------------------------------------

fn classifier_setup() -> (ClassifierSpec, ClassifierSettings, Dataset) {
    let spec = ClassifierSpec::mlp(CLS_WIDTHS.to_vec());
    let settings = ClassifierSettings {
        epochs: CLS_EPOCHS,
        cold_start_epochs: CLS_COLD,
        lambda: CLS_LAMBDA,
        ..ClassifierSettings::default()
    };
    (spec, settings, synthetic_dataset(CLS_TRAIN, CLS_TEST, 0))
}

fn permutation_invariance(shared: &mut Shared) -> Verdict {
    let start = Instant::now();
    let (spec, settings, data) = classifier_setup();
    let runs = 5;
    let study = permutation_invariance_experiment(&spec, &data, &settings, runs, true).unwrap();
    let secs = start.elapsed().as_secs_f64();
    for (i, t) in study.runs.iter().enumerate() {
        let name = format!("classifier permuted run {i}");
        shared.networks.push((name.clone(), t.net.clone(), CLS_WIDTHS[0]));
        shared.dam_traces.push((name, t.trace.clone(), CLS_COLD));
    }
    shared.pruned_classifier = study.runs.first().map(|t| t.net.clone());
    shared.classifier_data = Some(data);

    let acc: Vec<f64> = study.reports.iter().map(|r| r.test_accuracy).collect();
    let pruned: Vec<f64> = study.reports.iter().map(|r| r.params_pruned_pct).collect();
    let pass = study.rsd_accuracy <= 0.01 && study.rsd_params <= 0.02 && secs < 900.0;
    verdict(
        pass,
        format!(
            "accuracy {:?}, params pruned % {:?}; RSD {:.4} / {:.4}; {secs:.0} s (< 900 s)",
            round(&acc, 4),
            round(&pruned, 2),
            rsd(&acc),
            rsd(&pruned)
        ),
    )
}

fn round(v: &[f64], digits: i32) -> Vec<f64> {
    let s = 10f64.powi(digits);
    v.iter().map(|x| (x * s).round() / s).collect()
}

// 7 ------------------------------------------------------------------------

fn compact_equivalence(shared: &mut Shared) -> Verdict {
    let mut rng = Rng::new(7);
    let (mut worst, mut checked, mut problems) = (0.0f64, 0, Vec::new());
    for (name, net, width) in &shared.networks {
        let x = Tensor::from_vec(100, *width, (0..100 * width).map(|_| rng.normal()).collect()).unwrap();
        match extract_pruned(net) {
            Ok(compact) => {
                let d = compact_mismatch(net, &compact, &x).unwrap();
                worst = worst.max(d);
                checked += 1;
                if d >= 1e-9 {
                    problems.push(format!("{name}: {d:.2e}"));
                }
            }
            Err(e) => problems.push(format!("{name}: {e}")),
        }
    }
    verdict(
        problems.is_empty() && checked > 0,
        format!("{checked} networks, worst |masked - compact| {worst:.2e}; problems {problems:?}"),
    )
}

// 8 ------------------------------------------------------------------------

fn equilibrium(shared: &mut Shared) -> Verdict {
    let mut worst: Option<(f64, String)> = None;
    let mut failing = Vec::new();
    for (name, trace, lambda) in &shared.converged_dr {
        let res = trace.trailing_residual(0, RESIDUAL_WINDOW).unwrap();
        let tol = 0.1 * lambda.max(1e-3);
        if res.abs() >= tol {
            failing.push(format!("{name}: {res:.2e} (tol {tol:.0e})"));
        }
        let ratio = res.abs() / tol;
        if worst.as_ref().map_or(true, |w| ratio > w.0) {
            worst = Some((ratio, name.clone()));
        }
    }
    let n = shared.converged_dr.len();
    let worst = worst.map_or("none".into(), |(r, n)| format!("{r:.2} of tolerance ({n})"));
    verdict(
        failing.is_empty() && n > 0,
        format!("{n} converged runs, worst {worst}; failing {failing:?}"),
    )
}

// 9 ------------------------------------------------------------------------

fn stability_check(shared: &mut Shared) -> Verdict {
    let mut failing = Vec::new();
    for (name, trace, cold) in &shared.dam_traces {
        let st = stability(&trace.objective_series(), *cold, 5.0);
        if !st.stable {
            failing.push(format!(
                "{name}: +{:.2e} at epoch {} vs 5 x IQR {:.2e}",
                st.max_jump,
                st.at_epoch,
                5.0 * st.iqr
            ));
        }
    }
    let n = shared.dam_traces.len();
    let shown: Vec<&String> = failing.iter().take(6).collect();
    verdict(
        failing.is_empty() && n > 0,
        format!("{} of {n} DAM runs have a jump above 5 x IQR; first: {shown:?}", failing.len()),
    )
}

// 10 -----------------------------------------------------------------------

fn cka(shared: &mut Shared) -> Verdict {
    let mut rng = Rng::new(10);
    let a = Tensor::from_vec(200, 6, (0..1200).map(|_| rng.normal()).collect()).unwrap();
    let self_err = (cka_similarity(&a, &a).unwrap() - 1.0).abs();
    let q = random_orthogonal(6, &mut rng);
    let b = Tensor::from_vec(200, 4, (0..800).map(|_| rng.normal() + 0.3).collect()).unwrap();
    let base = cka_similarity(&a, &b).unwrap();
    let rotated = cka_similarity(&a.matmul(&q).unwrap(), &b).unwrap();
    let scaled = cka_similarity(&a.map(|v| 3.7 * v), &b.map(|v| 0.01 * v)).unwrap();
    let inv_err = (rotated - base).abs().max((scaled - base).abs());

    let (spec, settings, data) = classifier_setup();
    let data = shared.classifier_data.take().unwrap_or(data);
    let pruned = match shared.pruned_classifier.take() {
        Some(n) => n,
        None => {
            let t = train_classifier(&spec, &data, &settings).unwrap();
            shared.dam_traces.push(("classifier pruned".into(), t.trace.clone(), CLS_COLD));
            shared.networks.push(("classifier pruned".into(), t.net.clone(), CLS_WIDTHS[0]));
            t.net
        }
    };
    let unpruned_settings = ClassifierSettings {
        lambda: 0.0,
        ..settings.clone()
    };
    let unpruned = train_classifier(&spec, &data, &unpruned_settings).unwrap();
    shared.networks.push(("classifier unpruned".into(), unpruned.net.clone(), CLS_WIDTHS[0]));
    shared.dam_traces.push(("classifier unpruned".into(), unpruned.trace.clone(), CLS_COLD));
    let rows: Vec<usize> = (0..data.test_x.rows().min(2000)).collect();
    let probe = data.test_x.select_rows(&rows);
    let gate_layer = dam_lab::train::gate_positions(&pruned)[0];
    let p = cka_report(&pruned, &probe, gate_layer).unwrap();
    let u = cka_report(&unpruned.net, &probe, gate_layer).unwrap();
    let pass = self_err < 1e-9 && inv_err < 1e-9 && p.mean <= u.mean;
    verdict(
        pass,
        format!(
            "|CKA(A,A) - 1| {self_err:.1e}; invariance error {inv_err:.1e}; first hidden layer off-diagonal mean pruned {:.4} ({} neurons) vs unpruned {:.4} ({} neurons)",
            p.mean,
            p.neurons.len(),
            u.mean,
            u.neurons.len()
        ),
    )
}

fn random_orthogonal(n: usize, rng: &mut Rng) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut q = Tensor::zeros(n, n);
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            q.set(i, j, v);
        }
    }
    q
}

type Criterion = (u8, &'static str, fn(&mut Shared) -> Verdict);

fn main() {
    // Accept and ignore the harness flags cargo passes (`--nocapture`, filters).
    let selected: Option<BTreeSet<u8>> = std::env::var("DAM_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [Criterion; 10] = [
        (1, "exact L0 identity", l0_identity),
        (2, "offset gradient vs finite differences", beta_gradients),
        (3, "linear rank recovery", linear_recovery),
        (4, "nonlinear dimension recovery", nonlinear_recovery),
        (5, "DAM vs L1 bottleneck ablation", ablation),
        (6, "permutation invariance", permutation_invariance),
        (7, "masked and compact networks agree", compact_equivalence),
        (8, "equilibrium residual", equilibrium),
        (9, "objective stability", stability_check),
        (10, "CKA sanity", cka),
    ];
    let mut shared = Shared::default();
    let mut failed = 0;
    let suite = Instant::now();
    for (id, title, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let v = run(&mut shared);
        let status = if v.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!v.pass);
        println!(
            "criterion {id:>2} {status}  {title}: {} [{:.1} s]",
            v.detail,
            secs(t.elapsed())
        );
    }
    println!("acceptance: {failed} failing, {:.0} s total", secs(suite.elapsed()));
    if failed > 0 {
        std::process::exit(1);
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}
