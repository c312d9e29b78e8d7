//! Per-epoch training records and the statistics computed from them.

#[derive(Clone, Debug, PartialEq)]
pub struct GateRecord {
    pub beta: f64,
    pub l0_exact: usize,
    pub l0_continuous: f64,
    /// Epoch-averaged `sum_j q_j + lambda / (alpha (l - 1))`.
    pub equilibrium_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub task_loss: f64,
    pub objective: f64,
    pub gates: Vec<GateRecord>,
    /// Bottleneck dimension of L1-mask layers, when present.
    pub l1_dims: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<EpochRecord>,
}

impl RunTrace {
    pub fn push(&mut self, row: EpochRecord) {
        debug_assert!(self.rows.last().map_or(true, |r| r.epoch < row.epoch));
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.rows.last()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn gate_count(&self) -> usize {
        self.rows.first().map_or(0, |r| r.gates.len())
    }

    pub fn final_l0(&self, gate: usize) -> Option<usize> {
        self.last().map(|r| r.gates[gate].l0_exact)
    }

    pub fn final_beta(&self, gate: usize) -> Option<f64> {
        self.last().map(|r| r.gates[gate].beta)
    }

    pub fn l0_series(&self, gate: usize) -> Vec<usize> {
        self.rows.iter().map(|r| r.gates[gate].l0_exact).collect()
    }

    pub fn objective_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    /// Mean equilibrium residual of `gate` over the last `window` epochs.
    pub fn trailing_residual(&self, gate: usize, window: usize) -> Option<f64> {
        let n = self.rows.len();
        if n == 0 {
            return None;
        }
        let w = window.clamp(1, n);
        let sum: f64 = self.rows[n - w..]
            .iter()
            .map(|r| r.gates[gate].equilibrium_residual)
            .sum();
        Some(sum / w as f64)
    }
}

/// Fraction of epochs, counted from the first epoch in which the series
/// drops, where it does not rise. Returns 1.0 for a series that never drops.
pub fn nonincreasing_fraction(series: &[usize]) -> f64 {
    let Some(start) = series.windows(2).position(|w| w[1] < w[0]) else {
        return 1.0;
    };
    let tail = &series[start..];
    if tail.len() < 2 {
        return 1.0;
    }
    let ok = tail.windows(2).filter(|w| w[1] <= w[0]).count();
    ok as f64 / (tail.len() - 1) as f64
}

/// Linear-interpolated quantile of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    /// Inter-quartile range of epoch-to-epoch changes.
    pub iqr: f64,
    /// Largest single-epoch increase.
    pub max_jump: f64,
    /// Epoch (1-based) at which `max_jump` occurred.
    pub at_epoch: usize,
    pub stable: bool,
}

/// Looks for sudden upward jumps in an objective series after `skip`
/// epochs: a jump is an epoch-to-epoch increase larger than `factor`
/// times the inter-quartile range of all changes in the same window.
pub fn stability(series: &[f64], skip: usize, factor: f64) -> StabilityReport {
    let tail = &series[skip.min(series.len())..];
    let diffs: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.len() < 4 {
        return StabilityReport {
            iqr: 0.0,
            max_jump: 0.0,
            at_epoch: 0,
            stable: true,
        };
    }
    let mut sorted = diffs.clone();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let (idx, max_jump) = diffs
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, d)| if d > best.1 { (i, d) } else { best });
    StabilityReport {
        iqr,
        max_jump,
        at_epoch: skip + idx + 2,
        stable: max_jump <= factor * iqr,
    }
}
