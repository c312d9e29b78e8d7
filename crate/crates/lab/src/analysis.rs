//! Representation and run-to-run statistics: gradient noise, linear CKA,
//! rank correlation and relative standard deviation.

use dam_core::{Error as EngineError, Layer, Network, Rng, Tensor};

use crate::error::Result;

/// Adds zero-mean Gaussian noise to each gradient tensor, with standard
/// deviation `rho` times that tensor's RMS. All-zero tensors stay zero.
pub fn add_gradient_noise(grads: &mut [&mut [f64]], rho: f64, rng: &mut Rng) {
    assert!(rho >= 0.0, "noise magnitude must be nonnegative");
    if rho == 0.0 {
        return;
    }
    for g in grads.iter_mut() {
        if g.is_empty() {
            continue;
        }
        let rms = (g.iter().map(|x| x * x).sum::<f64>() / g.len() as f64).sqrt();
        if rms == 0.0 {
            continue;
        }
        let std = rho * rms;
        for x in g.iter_mut() {
            *x += std * rng.normal();
        }
    }
}

pub fn add_gradient_noise_to_network(net: &mut Network, rho: f64, rng: &mut Rng) {
    let mut params = net.params_mut();
    let mut grads: Vec<&mut [f64]> = params.iter_mut().map(|p| &mut *p.grad).collect();
    add_gradient_noise(&mut grads, rho, rng);
}

fn center_columns(t: &Tensor) -> Tensor {
    let means: Vec<f64> = t.column_sums().iter().map(|s| s / t.rows() as f64).collect();
    let mut out = t.clone();
    for r in 0..out.rows() {
        for (v, m) in out.row_mut(r).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    out
}

/// Linear CKA between two feature matrices sharing their rows:
/// `‖B̃ᵀÃ‖² / (‖ÃᵀÃ‖ ‖B̃ᵀB̃‖)` on column-centred inputs.
pub fn cka_similarity(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.rows() != b.rows() {
        return Err(EngineError::Dimension {
            op: "cka_similarity",
            left: a.shape(),
            right: b.shape(),
        }
        .into());
    }
    if a.rows() < 2 {
        return Err(EngineError::Domain("CKA needs at least two rows".into()).into());
    }
    let ac = center_columns(a);
    let bc = center_columns(b);
    if ac.sum_squares() == 0.0 || bc.sum_squares() == 0.0 {
        return Err(EngineError::Domain("CKA is undefined for zero-variance features".into()).into());
    }
    let cross = bc.t_matmul(&ac)?.sum_squares();
    let aa = ac.t_matmul(&ac)?.norm();
    let bb = bc.t_matmul(&bc)?.norm();
    Ok((cross / (aa * bb)).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CkaReport {
    /// Neuron indices (within the layer) that entered the matrix.
    pub neurons: Vec<usize>,
    /// Open neurons left out because their activation was constant.
    pub constant: Vec<usize>,
    pub matrix: Tensor,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

/// Pairwise CKA between the open neurons of the gate at `layer`, using
/// each neuron's masked activation over `inputs` as a one-column feature.
pub fn cka_report(net: &Network, inputs: &Tensor, layer: usize) -> Result<CkaReport> {
    let Some(Layer::Gate(gate)) = net.layers().get(layer) else {
        return Err(EngineError::Structure(format!("layer {layer} is not a gate")).into());
    };
    let acts = net.predict_prefix(inputs, layer + 1)?;
    let mut neurons = Vec::new();
    let mut constant = Vec::new();
    for j in gate.surviving() {
        let col = acts.column(j);
        if col.iter().all(|&v| v == col[0]) {
            constant.push(j);
        } else {
            neurons.push(j);
        }
    }
    if neurons.len() < 2 {
        return Err(EngineError::Structure(format!(
            "gate at layer {layer} has {} non-constant surviving neurons; need at least 2",
            neurons.len()
        ))
        .into());
    }
    let m = neurons.len();
    let cols: Vec<Tensor> = neurons
        .iter()
        .map(|&j| Tensor::from_vec(acts.rows(), 1, acts.column(j)).expect("column shape"))
        .collect();
    let mut matrix = Tensor::identity(m);
    let mut off = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            let c = cka_similarity(&cols[i], &cols[j])?;
            matrix.set(i, j, c);
            matrix.set(j, i, c);
            off.push(c);
        }
    }
    let mean = off.iter().sum::<f64>() / off.len() as f64;
    let std = (off.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / off.len() as f64).sqrt();
    let max = off.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(CkaReport {
        neurons,
        constant,
        matrix,
        mean,
        std,
        max,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation (Pearson correlation of tie-averaged ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    pearson(&ranks(x), &ranks(y))
}

/// Relative standard deviation: sample standard deviation over mean.
/// Zero when every value is identical.
pub fn rsd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return 0.0;
    }
    var.sqrt() / mean.abs()
}
