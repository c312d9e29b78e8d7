//! The training loop shared by every experiment.
//!
//! One loop covers full-batch reconstruction (dimensionality reduction) and
//! minibatch classification (pruning). Per step it runs forward/backward,
//! optionally perturbs the task gradients, adds the gate-offset and L1
//! penalties, and lets the optimizer update every unfrozen parameter.

use dam_core::{
    loss_softmax_ce, regularizer, Layer, LrSchedule, Network, Optimizer, OptimizerKind, Reconstruction,
    RegMode, Rng, Tensor,
};

use crate::analysis::add_gradient_noise_to_network;
use crate::error::{LabError, Result};
use crate::trace::{EpochRecord, GateRecord, RunTrace};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    /// Trade-off between the task loss and the sparsity penalty.
    pub lambda: f64,
    pub epochs: usize,
    /// Number of initial epochs during which every gate offset is frozen.
    pub cold_start_epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub schedule: LrSchedule,
    /// Relative gradient noise magnitude; 0 disables it.
    pub gradient_noise: f64,
    pub reconstruction: Reconstruction,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, path: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(LabError::config(path, msg))
            }
        };
        check(self.lr > 0.0 && self.lr.is_finite(), "lr", "must be a positive number")?;
        check(self.weight_decay >= 0.0, "l2", "must be nonnegative")?;
        check(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda", "must be nonnegative")?;
        check(self.epochs > 0, "epochs", "must be positive")?;
        check(self.batch_size != Some(0), "batch_size", "must be positive")?;
        check(self.gradient_noise >= 0.0, "gradient_noise", "must be nonnegative")
    }
}

/// What the network output is compared against.
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    /// Regression onto a target matrix with the configured reconstruction loss.
    Values(&'a Tensor),
    /// Class labels with softmax cross-entropy.
    Labels(&'a [usize]),
}

/// Chooses the penalty normalisation from the gate count.
pub fn reg_mode_for(net: &Network) -> RegMode {
    match net.gate_count() {
        0 | 1 => RegMode::SingleGate,
        g => RegMode::Layers(g + 1),
    }
}

fn task_loss(out: &Tensor, targets: Targets<'_>, rows: &[usize], kind: Reconstruction) -> Result<dam_core::LossOutput> {
    Ok(match targets {
        Targets::Values(t) => {
            if rows.len() == t.rows() {
                kind.eval(out, t)?
            } else {
                kind.eval(out, &t.select_rows(rows))?
            }
        }
        Targets::Labels(l) => {
            let labels: Vec<usize> = rows.iter().map(|&i| l[i]).collect();
            loss_softmax_ce(out, &labels)?
        }
    })
}

/// Trains `net` in place and returns the per-epoch trace.
///
/// Fails with [`LabError::Diverged`] (carrying the trace so far) as soon as
/// the loss or the parameters stop being finite.
pub fn fit(net: &mut Network, inputs: &Tensor, targets: Targets<'_>, cfg: &TrainConfig) -> Result<RunTrace> {
    cfg.validate()?;
    let mode = reg_mode_for(net);
    let gated_layers = mode.gated_layers() as f64;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, cfg.weight_decay);
    let rng = Rng::new(cfg.seed);
    let mut shuffle_rng = rng.split_named("shuffle");
    let mut noise_rng = rng.split_named("gradient-noise");
    let n = inputs.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let batch = cfg.batch_size.unwrap_or(n).min(n).max(1);
    let full_batch = batch == n && cfg.batch_size.is_none();
    let mut trace = RunTrace::default();

    let diverged = |epoch: usize, trace: &RunTrace| LabError::Diverged {
        epoch,
        trace: Box::new(trace.clone()),
    };

    for epoch in 0..cfg.epochs {
        net.set_gates_frozen(epoch < cfg.cold_start_epochs);
        opt.lr = cfg.schedule.lr_at(cfg.lr, epoch);
        if !full_batch {
            shuffle_rng.shuffle(&mut order);
        }
        let gate_count = net.gate_count();
        let mut q_acc = vec![0.0; gate_count];
        let (mut loss_acc, mut obj_acc, mut batches) = (0.0, 0.0, 0usize);

        for chunk in order.chunks(batch) {
            net.zero_grad();
            let x = if full_batch { inputs.clone() } else { inputs.select_rows(chunk) };
            let out = match net.forward(&x) {
                Ok(o) => o,
                Err(dam_core::Error::NonFinite(_)) => return Err(diverged(epoch + 1, &trace)),
                Err(e) => return Err(e.into()),
            };
            let loss = task_loss(&out, targets, chunk, cfg.reconstruction)?;
            if !loss.value.is_finite() {
                return Err(diverged(epoch + 1, &trace));
            }
            net.backward(&loss.grad)?;
            if cfg.gradient_noise > 0.0 {
                add_gradient_noise_to_network(net, cfg.gradient_noise, &mut noise_rng);
            }

            let gates: Vec<_> = net.gates().collect();
            let penalty = regularizer(&gates, cfg.lambda, mode)?;
            for (acc, g) in q_acc.iter_mut().zip(&gates) {
                *acc += g.last_q().iter().sum::<f64>();
            }
            drop(gates);
            for (g, extra) in net.gates_mut().zip(&penalty.beta_grads) {
                g.add_grad_beta(*extra);
            }
            let mut l1_penalty = 0.0;
            for m in net.l1_masks_mut() {
                l1_penalty += cfg.lambda * m.l1();
                m.add_penalty_grad(cfg.lambda);
            }

            loss_acc += loss.value;
            obj_acc += loss.value + penalty.value + l1_penalty;
            batches += 1;
            opt.step(net)?;
        }

        let inv = 1.0 / batches as f64;
        let gates = net
            .gates()
            .zip(&q_acc)
            .map(|(g, q)| GateRecord {
                beta: g.beta,
                l0_exact: g.l0_exact(),
                l0_continuous: g.l0_continuous(),
                equilibrium_residual: q * inv + cfg.lambda / (g.alpha() * gated_layers),
            })
            .collect();
        let l1_dims = net.l1_masks().map(|m| m.dimension(crate::dr::L1_THRESHOLD)).collect();
        let row = EpochRecord {
            epoch: epoch + 1,
            task_loss: loss_acc * inv,
            objective: obj_acc * inv,
            gates,
            l1_dims,
        };
        let finite = row.objective.is_finite() && net.flat_params().iter().all(|p| p.is_finite());
        trace.push(row);
        if !finite {
            return Err(diverged(epoch + 1, &trace));
        }
    }
    net.set_gates_frozen(false);
    net.clear_caches();
    Ok(trace)
}

/// Layer index of every gate.
pub fn gate_positions(net: &Network) -> Vec<usize> {
    net.layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::Gate(_)))
        .map(|(i, _)| i)
        .collect()
}
