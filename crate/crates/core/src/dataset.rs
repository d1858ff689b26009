//! Multivariate time-series data: CSV loading, chronological splits,
//! per-variable normalization, rolling windows, missingness simulation and
//! a synthetic graph-diffusion generator.

use std::path::Path;

use crate::array::{Array, BoolArray};
use crate::error::{Error, Result};
use crate::graph::ExplicitGraph;
use crate::rng::Rng;
use crate::scalar::{lit, Scalar};

/// Variables x time matrix with an observation mask. Masked-out entries are
/// stored as exact zeros.
#[derive(Debug, Clone)]
pub struct MtsDataset<F> {
    /// n x T, original units.
    pub values: Array<F>,
    /// n x T; true = observed.
    pub mask: BoolArray,
    pub variable_names: Vec<String>,
    pub granularity: String,
}

impl<F: Scalar> MtsDataset<F> {
    pub fn n_variables(&self) -> usize {
        self.values.rows()
    }

    pub fn n_steps(&self) -> usize {
        self.values.cols()
    }
}

/// Per-variable mean/std fitted on the training split's observed entries.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats<F> {
    pub mean: Vec<F>,
    pub std: Vec<F>,
}

/// Chronological train/validation/test boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    /// Segment ends: train = [0, b0), val = [b0, b1), test = [b1, t_total).
    pub boundaries: [usize; 2],
    pub t_total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl SplitSpec {
    pub fn segment(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.boundaries[0],
            Split::Validation => self.boundaries[0]..self.boundaries[1],
            Split::Test => self.boundaries[1]..self.t_total,
        }
    }
}

/// A batch of rolling windows: inputs are the tau look-back steps, targets
/// the next upsilon steps, plus the matching observation masks.
#[derive(Debug, Clone)]
pub struct WindowBatch<F> {
    /// b x n x tau.
    pub inputs: Array<F>,
    /// b x n x upsilon.
    pub targets: Array<F>,
    pub input_mask: BoolArray,
    pub target_mask: BoolArray,
    /// Look-back start index of each window.
    pub window_start_times: Vec<usize>,
}

impl<F: Scalar> WindowBatch<F> {
    pub fn len(&self) -> usize {
        self.window_start_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_start_times.is_empty()
    }

    fn slice(src: &Array<F>, w: usize) -> Array<F> {
        let (n, c) = (src.shape()[1], src.shape()[2]);
        let start = w * n * c;
        Array::new(vec![n, c], src.data()[start..start + n * c].to_vec()).expect("slice shape")
    }

    fn slice_mask(src: &BoolArray, w: usize) -> BoolArray {
        let (n, c) = (src.shape()[1], src.shape()[2]);
        let start = w * n * c;
        BoolArray::new(vec![n, c], src.data()[start..start + n * c].to_vec()).expect("slice shape")
    }

    /// Window w's input as an n x tau matrix.
    pub fn input(&self, w: usize) -> Array<F> {
        Self::slice(&self.inputs, w)
    }

    /// Window w's target as an n x upsilon matrix.
    pub fn target(&self, w: usize) -> Array<F> {
        Self::slice(&self.targets, w)
    }

    pub fn input_mask_of(&self, w: usize) -> BoolArray {
        Self::slice_mask(&self.input_mask, w)
    }

    pub fn target_mask_of(&self, w: usize) -> BoolArray {
        Self::slice_mask(&self.target_mask, w)
    }
}

/// Load a CSV file: header row of variable names, then one row per time
/// step. Empty cells are missing observations.
pub fn load_csv<F: Scalar>(path: &Path) -> Result<MtsDataset<F>> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv<F: Scalar>(text: &str) -> Result<MtsDataset<F>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("empty file: no header row".into()))?;
    let variable_names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let n = variable_names.len();

    let mut columns: Vec<Vec<F>> = vec![Vec::new(); n];
    let mut mask_cols: Vec<Vec<bool>> = vec![Vec::new(); n];
    let mut t_count = 0usize;
    for (lineno, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n {
            return Err(Error::Parse(format!(
                "row {}: expected {n} cells, got {}",
                lineno + 1,
                cells.len()
            )));
        }
        for (v, cell) in cells.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                columns[v].push(F::zero());
                mask_cols[v].push(false);
            } else {
                let x: f64 = cell.parse().map_err(|_| {
                    Error::Parse(format!("row {}: non-numeric cell {cell:?}", lineno + 1))
                })?;
                columns[v].push(lit(x));
                mask_cols[v].push(true);
            }
        }
        t_count += 1;
    }
    if t_count == 0 {
        return Err(Error::Data("empty dataset: header only, no time steps".into()));
    }

    let values = Array::new(vec![n, t_count], columns.concat())?;
    let mask = BoolArray::new(vec![n, t_count], mask_cols.concat())?;
    Ok(MtsDataset { values, mask, variable_names, granularity: String::new() })
}

/// Write a dataset back out in the `load_csv` format (masked cells empty).
pub fn write_csv<F: Scalar>(ds: &MtsDataset<F>, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&ds.variable_names.join(","));
    out.push('\n');
    for t in 0..ds.n_steps() {
        for v in 0..ds.n_variables() {
            if v > 0 {
                out.push(',');
            }
            if ds.mask.at2(v, t) {
                out.push_str(&format!("{:?}", ds.values.at2(v, t).to_f64().unwrap()));
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Chronological split at floor(cumulative ratio x T).
pub fn chronological_split<F: Scalar>(ds: &MtsDataset<F>, ratios: [f64; 3]) -> Result<SplitSpec> {
    if ratios.iter().any(|&r| r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let t = ds.n_steps();
    let b0 = (ratios[0] * t as f64).floor() as usize;
    let b1 = ((ratios[0] + ratios[1]) * t as f64).floor() as usize;
    Ok(SplitSpec { ratios, boundaries: [b0, b1], t_total: t })
}

/// Fit per-variable mean/std on the training range, observed entries only.
/// Std is floored at 1e-8; a variable with no training observations gets
/// mean 0, std 1.
pub fn fit_normalizer<F: Scalar>(ds: &MtsDataset<F>, split: &SplitSpec) -> NormalizationStats<F> {
    let n = ds.n_variables();
    let range = split.segment(Split::Train);
    let mut mean = Vec::with_capacity(n);
    let mut std = Vec::with_capacity(n);
    for v in 0..n {
        let mut sum = F::zero();
        let mut count = 0usize;
        for t in range.clone() {
            if ds.mask.at2(v, t) {
                sum += ds.values.at2(v, t);
                count += 1;
            }
        }
        if count == 0 {
            mean.push(F::zero());
            std.push(F::one());
            continue;
        }
        let mu = sum / lit::<F>(count as f64);
        let mut var = F::zero();
        for t in range.clone() {
            if ds.mask.at2(v, t) {
                let d = ds.values.at2(v, t) - mu;
                var += d * d;
            }
        }
        var /= lit::<F>(count as f64);
        mean.push(mu);
        std.push(var.sqrt().max(lit::<F>(1e-8)));
    }
    NormalizationStats { mean, std }
}

/// Normalize to zero mean / unit variance per variable; masked entries are
/// re-zeroed on the normalized scale.
pub fn apply_normalizer<F: Scalar>(
    ds: &MtsDataset<F>,
    stats: &NormalizationStats<F>,
) -> Array<F> {
    let (n, t) = (ds.n_variables(), ds.n_steps());
    let mut out = Array::zeros(vec![n, t]);
    for v in 0..n {
        for s in 0..t {
            if ds.mask.at2(v, s) {
                out.set2(v, s, (ds.values.at2(v, s) - stats.mean[v]) / stats.std[v]);
            }
        }
    }
    out
}

/// Map a normalized n x c matrix back to original units (row = variable).
pub fn invert_normalizer<F: Scalar>(x: &Array<F>, stats: &NormalizationStats<F>) -> Array<F> {
    let (n, c) = (x.rows(), x.cols());
    let mut out = Array::zeros(vec![n, c]);
    for v in 0..n {
        for j in 0..c {
            out.set2(v, j, x.at2(v, j) * stats.std[v] + stats.mean[v]);
        }
    }
    out
}

/// Look-back start indices of every stride-1 window that fits inside the
/// segment: a segment of length L holds max(0, L - tau - upsilon + 1).
pub fn window_starts(segment: std::ops::Range<usize>, tau: usize, upsilon: usize) -> Vec<usize> {
    let len = segment.end.saturating_sub(segment.start);
    if len < tau + upsilon {
        return Vec::new();
    }
    (segment.start..=segment.end - tau - upsilon).collect()
}

/// Assemble a batch from explicit window starts over a normalized matrix.
pub fn gather_batch<F: Scalar>(
    values: &Array<F>,
    mask: &BoolArray,
    starts: &[usize],
    tau: usize,
    upsilon: usize,
) -> Result<WindowBatch<F>> {
    let n = values.rows();
    let b = starts.len();
    if b == 0 {
        return Err(Error::Data("empty window batch".into()));
    }
    let mut inputs = Array::zeros(vec![b, n, tau]);
    let mut targets = Array::zeros(vec![b, n, upsilon]);
    let mut in_mask = BoolArray::filled(vec![b, n, tau], false);
    let mut tg_mask = BoolArray::filled(vec![b, n, upsilon], false);
    for (w, &t0) in starts.iter().enumerate() {
        if t0 + tau + upsilon > values.cols() {
            return Err(Error::Data(format!("window at {t0} exceeds series length")));
        }
        for v in 0..n {
            for k in 0..tau {
                inputs.data_mut()[(w * n + v) * tau + k] = values.at2(v, t0 + k);
                in_mask.data_mut()[(w * n + v) * tau + k] = mask.at2(v, t0 + k);
            }
            for k in 0..upsilon {
                targets.data_mut()[(w * n + v) * upsilon + k] = values.at2(v, t0 + tau + k);
                tg_mask.data_mut()[(w * n + v) * upsilon + k] = mask.at2(v, t0 + tau + k);
            }
        }
    }
    Ok(WindowBatch {
        inputs,
        targets,
        input_mask: in_mask,
        target_mask: tg_mask,
        window_start_times: starts.to_vec(),
    })
}

/// Chronological batches over one split segment.
pub fn make_windows<F: Scalar>(
    values: &Array<F>,
    mask: &BoolArray,
    segment: std::ops::Range<usize>,
    tau: usize,
    upsilon: usize,
    batch_size: usize,
) -> Result<Vec<WindowBatch<F>>> {
    if tau == 0 || upsilon == 0 || batch_size == 0 {
        return Err(Error::Config("tau, upsilon and batch size must be at least 1".into()));
    }
    let starts = window_starts(segment, tau, upsilon);
    starts
        .chunks(batch_size)
        .map(|chunk| gather_batch(values, mask, chunk, tau, upsilon))
        .collect()
}

/// Independently drop each observed entry with probability `ratio`.
pub fn simulate_point_missing<F: Scalar>(
    ds: &MtsDataset<F>,
    ratio: f64,
    rng: &mut Rng,
) -> Result<MtsDataset<F>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("missing ratio {ratio} outside [0, 1]")));
    }
    let mut out = ds.clone();
    for i in 0..out.mask.numel() {
        if out.mask.data()[i] && rng.bernoulli(ratio) {
            out.mask.data_mut()[i] = false;
            out.values.data_mut()[i] = F::zero();
        }
    }
    Ok(out)
}

/// Simulate sensor failures as contiguous masked blocks (started per
/// variable/step with probability `failure_prob`, length uniform in
/// [upsilon/2, 2*upsilon]), then top up with point missingness until the
/// expected total masked fraction reaches `ratio`.
pub fn simulate_block_missing<F: Scalar>(
    ds: &MtsDataset<F>,
    ratio: f64,
    failure_prob: f64,
    upsilon: usize,
    rng: &mut Rng,
) -> Result<MtsDataset<F>> {
    if !(0.0..=1.0).contains(&ratio) || !(0.0..=1.0).contains(&failure_prob) {
        return Err(Error::Config("ratio and failure_prob must be in [0, 1]".into()));
    }
    let mut out = ds.clone();
    let (n, t) = (ds.n_variables(), ds.n_steps());
    let lo = (upsilon / 2).max(1);
    let hi = (2 * upsilon).max(lo);
    for v in 0..n {
        let mut s = 0;
        while s < t {
            if failure_prob > 0.0 && rng.bernoulli(failure_prob) {
                let len = lo + rng.index(hi - lo + 1);
                for k in s..(s + len).min(t) {
                    out.mask.set2(v, k, false);
                    out.values.set2(v, k, F::zero());
                }
                s += len;
            } else {
                s += 1;
            }
        }
    }
    let total = out.mask.numel();
    let masked = total - out.mask.count_true();
    let f0 = masked as f64 / total as f64;
    if f0 < ratio {
        let p_extra = (ratio - f0) / (1.0 - f0);
        for i in 0..out.mask.numel() {
            if out.mask.data()[i] && rng.bernoulli(p_extra) {
                out.mask.data_mut()[i] = false;
                out.values.data_mut()[i] = F::zero();
            }
        }
    }
    Ok(out)
}

/// Graph-diffusion autoregression with a daily seasonal term:
/// x_t = 0.5 x_{t-1} + 0.4 A_hat x_{t-1} + amp * sin(2 pi t / 288) + noise,
/// A_hat the row-normalized adjacency.
pub fn make_synthetic<F: Scalar>(
    n: usize,
    t_steps: usize,
    graph: &ExplicitGraph,
    noise_std: f64,
    seasonal_amplitude: f64,
    rng: &mut Rng,
) -> Result<MtsDataset<F>> {
    if graph.n_nodes != n {
        return Err(Error::Config(format!(
            "graph has {} nodes, dataset wants {n}",
            graph.n_nodes
        )));
    }
    if n == 0 || t_steps == 0 {
        return Err(Error::Config("need at least one variable and one step".into()));
    }
    // row-normalized adjacency (zero rows for isolated nodes)
    let adj = graph.adjacency();
    let mut a_hat = vec![0.0f64; n * n];
    for i in 0..n {
        let deg = (0..n).filter(|&j| adj.at2(i, j)).count();
        if deg > 0 {
            for j in 0..n {
                if adj.at2(i, j) {
                    a_hat[i * n + j] = 1.0 / deg as f64;
                }
            }
        }
    }

    let mut values = vec![0.0f64; n * t_steps];
    let mut prev = vec![0.0f64; n];
    for t in 0..t_steps {
        let seasonal =
            seasonal_amplitude * (2.0 * std::f64::consts::PI * t as f64 / 288.0).sin();
        let mut cur = vec![0.0f64; n];
        for i in 0..n {
            let mut diffused = 0.0;
            for j in 0..n {
                diffused += a_hat[i * n + j] * prev[j];
            }
            let noise = if noise_std > 0.0 { noise_std * rng.normal() } else { 0.0 };
            cur[i] = if t == 0 {
                seasonal + noise
            } else {
                0.5 * prev[i] + 0.4 * diffused + seasonal + noise
            };
            values[i * t_steps + t] = cur[i];
        }
        prev = cur;
    }

    let data: Vec<F> = values.into_iter().map(lit).collect();
    Ok(MtsDataset {
        values: Array::new(vec![n, t_steps], data)?,
        mask: BoolArray::filled(vec![n, t_steps], true),
        variable_names: (0..n).map(|i| format!("var_{i}")).collect(),
        granularity: "synthetic".into(),
    })
}
