//! Training and evaluation: masked losses, original-scale metrics, Adam
//! with gradient clipping, the plateau learning-rate schedule, early
//! stopping with best-parameter restore, and the historical-average
//! baseline.

use std::collections::BTreeMap;

use crate::array::{Array, BoolArray};
use crate::autodiff::{ParamMap, Tape, VarId};
use crate::dataset::{
    apply_normalizer, chronological_split, fit_normalizer, gather_batch, window_starts,
    MtsDataset, NormalizationStats, Split, SplitSpec, WindowBatch,
};
use crate::error::{Error, Result};
use crate::model::{LossKind, MkhNet, Mode};
use crate::rng::Rng;
use crate::scalar::{lit, Scalar};

// ---- losses -------------------------------------------------------------

/// Sum of |pred - target| over observed entries plus the observed count.
/// Callers divide by the total count to get the batch mean.
pub fn mae_terms<F: Scalar>(
    tape: &mut Tape<F>,
    pred: VarId,
    target: &Array<F>,
    mask: &BoolArray,
) -> Result<(VarId, usize)> {
    let count = mask.count_true();
    let t = tape.leaf(target.clone())?;
    let m = tape.leaf(mask.to_array())?;
    let diff = tape.sub(pred, t)?;
    let a = tape.abs(diff)?;
    let masked = tape.mul(a, m)?;
    let s = tape.sum(masked, None)?;
    Ok((s, count))
}

/// Mean absolute error over observed target entries.
pub fn mae_loss<F: Scalar>(
    tape: &mut Tape<F>,
    pred: VarId,
    target: &Array<F>,
    mask: &BoolArray,
) -> Result<VarId> {
    let (s, count) = mae_terms(tape, pred, target, mask)?;
    if count == 0 {
        return Err(Error::Data("MAE over zero observed entries is undefined".into()));
    }
    tape.scale(s, F::one() / lit(count as f64))
}

/// Sum of log(var)/2 + (x - mu)^2 / (2 var) over observed entries, plus
/// the count.
pub fn gaussian_nll_terms<F: Scalar>(
    tape: &mut Tape<F>,
    mu: VarId,
    var: VarId,
    target: &Array<F>,
    mask: &BoolArray,
) -> Result<(VarId, usize)> {
    let count = mask.count_true();
    let t = tape.leaf(target.clone())?;
    let m = tape.leaf(mask.to_array())?;
    let lv = tape.log(var)?;
    let half_lv = tape.scale(lv, lit(0.5))?;
    let resid = tape.sub(t, mu)?;
    let sq = tape.mul(resid, resid)?;
    let two_var = tape.scale(var, lit(2.0))?;
    let quad = tape.div(sq, two_var)?;
    let term = tape.add(half_lv, quad)?;
    let masked = tape.mul(term, m)?;
    let s = tape.sum(masked, None)?;
    Ok((s, count))
}

/// Mean heteroscedastic Gaussian negative log likelihood (constant
/// dropped) over observed entries.
pub fn gaussian_nll_loss<F: Scalar>(
    tape: &mut Tape<F>,
    mu: VarId,
    var: VarId,
    target: &Array<F>,
    mask: &BoolArray,
) -> Result<VarId> {
    let (s, count) = gaussian_nll_terms(tape, mu, var, target, mask)?;
    if count == 0 {
        return Err(Error::Data("NLL over zero observed entries is undefined".into()));
    }
    tape.scale(s, F::one() / lit(count as f64))
}

// ---- metrics ------------------------------------------------------------

/// Aggregate and per-horizon-step forecast errors on the original scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub rmse: f64,
    /// Percent; targets with |y| < 1e-3 excluded.
    pub mape: f64,
    pub per_step_mae: Vec<f64>,
    pub per_step_rmse: Vec<f64>,
    pub per_step_mape: Vec<f64>,
}

/// Streaming accumulator over denormalized (prediction, target) windows.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    upsilon: usize,
    abs_err: Vec<f64>,
    sq_err: Vec<f64>,
    count: Vec<usize>,
    ape: Vec<f64>,
    ape_count: Vec<usize>,
}

impl MetricsAccumulator {
    pub fn new(upsilon: usize) -> Self {
        MetricsAccumulator {
            upsilon,
            abs_err: vec![0.0; upsilon],
            sq_err: vec![0.0; upsilon],
            count: vec![0; upsilon],
            ape: vec![0.0; upsilon],
            ape_count: vec![0; upsilon],
        }
    }

    /// Add one window (n x upsilon, original scale).
    pub fn add<F: Scalar>(&mut self, pred: &Array<F>, target: &Array<F>, mask: &BoolArray) {
        debug_assert_eq!(pred.shape(), target.shape());
        let (n, u) = (pred.rows(), pred.cols());
        debug_assert_eq!(u, self.upsilon);
        for v in 0..n {
            for h in 0..u {
                if !mask.at2(v, h) {
                    continue;
                }
                let y = target.at2(v, h).to_f64().unwrap();
                let e = pred.at2(v, h).to_f64().unwrap() - y;
                self.abs_err[h] += e.abs();
                self.sq_err[h] += e * e;
                self.count[h] += 1;
                if y.abs() >= 1e-3 {
                    self.ape[h] += (e / y).abs();
                    self.ape_count[h] += 1;
                }
            }
        }
    }

    pub fn observed(&self) -> usize {
        self.count.iter().sum()
    }

    pub fn finalize(&self) -> Result<MetricsReport> {
        let total: usize = self.observed();
        if total == 0 {
            return Err(Error::Data("no observed targets to score".into()));
        }
        let sum_abs: f64 = self.abs_err.iter().sum();
        let sum_sq: f64 = self.sq_err.iter().sum();
        let sum_ape: f64 = self.ape.iter().sum();
        let ape_total: usize = self.ape_count.iter().sum();
        let per = |num: &[f64], den: &[usize], sqrt: bool, pct: bool| -> Vec<f64> {
            num.iter()
                .zip(den)
                .map(|(&s, &c)| {
                    if c == 0 {
                        0.0
                    } else {
                        let m = s / c as f64;
                        let m = if sqrt { m.sqrt() } else { m };
                        if pct {
                            100.0 * m
                        } else {
                            m
                        }
                    }
                })
                .collect()
        };
        Ok(MetricsReport {
            mae: sum_abs / total as f64,
            rmse: (sum_sq / total as f64).sqrt(),
            mape: if ape_total == 0 { 0.0 } else { 100.0 * sum_ape / ape_total as f64 },
            per_step_mae: per(&self.abs_err, &self.count, false, false),
            per_step_rmse: per(&self.sq_err, &self.count, true, false),
            per_step_mape: per(&self.ape, &self.ape_count, false, true),
        })
    }
}

// ---- optimizer ----------------------------------------------------------

/// Adam with bias correction; moments keyed by parameter name.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    m: BTreeMap<String, Array<F>>,
    v: BTreeMap<String, Array<F>>,
    step: u64,
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ParamMap<F>, lr: F) -> Self {
        let zero_like = |p: &ParamMap<F>| -> BTreeMap<String, Array<F>> {
            p.iter().map(|(k, a)| (k.clone(), Array::zeros(a.shape().to_vec()))).collect()
        };
        AdamState {
            m: zero_like(params),
            v: zero_like(params),
            step: 0,
            lr,
            beta1: lit(0.9),
            beta2: lit(0.999),
            eps: lit(1e-8),
        }
    }

    /// One bias-corrected update over every named gradient.
    pub fn step(&mut self, params: &mut ParamMap<F>, grads: &BTreeMap<String, Array<F>>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = F::one() - self.beta1.powi(t);
        let bc2 = F::one() - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("gradient for unknown parameter");
            let m = self.m.get_mut(name).expect("moment for unknown parameter");
            let v = self.v.get_mut(name).expect("moment for unknown parameter");
            for i in 0..p.numel() {
                let gi = g.data()[i];
                let mi = self.beta1 * m.data()[i] + (F::one() - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (F::one() - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                p.data_mut()[i] = p.data()[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Scale all gradients so their global L2 norm does not exceed `max_norm`.
pub fn clip_global_norm<F: Scalar>(grads: &mut BTreeMap<String, Array<F>>, max_norm: F) {
    let mut sq = F::zero();
    for g in grads.values() {
        for &x in g.data() {
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
}

// ---- schedule and stopping ----------------------------------------------

/// Halve the learning rate after `patience` consecutive epochs without an
/// improvement of at least `eps` over the best validation MAE.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub eps: f64,
    best: f64,
    stall: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64, eps: f64) -> Self {
        PlateauScheduler { patience, factor, eps, best: f64::INFINITY, stall: 0 }
    }

    /// Feed one validation value; returns the (possibly reduced) lr.
    pub fn observe(&mut self, val: f64, lr: f64) -> f64 {
        if self.best - val >= self.eps {
            self.best = val;
            self.stall = 0;
            lr
        } else {
            self.stall += 1;
            if self.stall >= self.patience {
                self.stall = 0;
                lr * self.factor
            } else {
                lr
            }
        }
    }
}

// ---- training loop --------------------------------------------------------

/// Protocol hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience_lr: usize,
    pub lr_factor: f64,
    pub patience_stop: usize,
    pub clip_norm: f64,
    pub improvement_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            patience_lr: 5,
            lr_factor: 0.5,
            patience_stop: 10,
            clip_norm: 5.0,
            improvement_eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub lr: f64,
}

/// Normalized series plus everything needed to train and score on it.
#[derive(Debug, Clone)]
pub struct PreparedData<F> {
    pub normalized: Array<F>,
    pub mask: BoolArray,
    pub split: SplitSpec,
    pub stats: NormalizationStats<F>,
    /// Original-scale values (masked entries zero).
    pub original: Array<F>,
}

/// Split, fit the normalizer on the training range, normalize.
pub fn prepare<F: Scalar>(ds: &MtsDataset<F>, ratios: [f64; 3]) -> Result<PreparedData<F>> {
    let split = chronological_split(ds, ratios)?;
    let stats = fit_normalizer(ds, &split);
    let normalized = apply_normalizer(ds, &stats);
    Ok(PreparedData {
        normalized,
        mask: ds.mask.clone(),
        split,
        stats,
        original: ds.values.clone(),
    })
}

/// Scores plus optional predicted standard deviations (original scale).
pub struct EvalOutput {
    pub metrics: MetricsReport,
    /// Every predicted sigma over the split (original scale), NLL models
    /// only.
    pub sigmas: Option<Vec<f64>>,
}

fn batch_loss<F: Scalar>(
    model: &MkhNet<F>,
    tape: &mut Tape<F>,
    batch: &WindowBatch<F>,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(VarId, usize, Vec<VarId>)> {
    let bound = model.bind(tape)?;
    let structure = model.sample_structure(tape, &bound, mode, rng)?;
    let mut total: Option<VarId> = None;
    let mut count = 0usize;
    let mut preds = Vec::with_capacity(batch.len());
    for w in 0..batch.len() {
        let window = batch.input(w);
        let out = model.forward_window(tape, &bound, &structure, &window, mode, rng)?;
        preds.push(out.point);
        let target = batch.target(w);
        let t_mask = batch.target_mask_of(w);
        let (s, c) = match model.cfg.loss_kind {
            LossKind::Mae => mae_terms(tape, out.point, &target, &t_mask)?,
            LossKind::GaussianNll => {
                let var = out.variance.expect("nll model has variance");
                gaussian_nll_terms(tape, out.point, var, &target, &t_mask)?
            }
        };
        count += c;
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    if count == 0 {
        return Err(Error::Data("batch has zero observed targets".into()));
    }
    let sum = total.expect("non-empty batch");
    let loss = tape.scale(sum, F::one() / lit(count as f64))?;
    Ok((loss, count, preds))
}

/// Mean training objective over a segment without updating parameters.
fn segment_loss<F: Scalar>(
    model: &MkhNet<F>,
    data: &PreparedData<F>,
    split: Split,
    batch_size: usize,
) -> Result<f64> {
    let starts = window_starts(
        data.split.segment(split),
        model.cfg.tau,
        model.cfg.upsilon,
    );
    if starts.is_empty() {
        return Err(Error::Data(format!("split {split:?} holds no complete window")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let mut rng = Rng::new(0); // eval mode consumes no randomness
    for chunk in starts.chunks(batch_size) {
        let batch = gather_batch(
            &data.normalized,
            &data.mask,
            chunk,
            model.cfg.tau,
            model.cfg.upsilon,
        )?;
        let mut tape = Tape::new();
        let (loss, c, _) = batch_loss(model, &mut tape, &batch, Mode::Eval, &mut rng)?;
        total += tape.value(loss).item()?.to_f64().unwrap() * c as f64;
        count += c;
    }
    Ok(total / count as f64)
}

/// Deterministic evaluation of a split: denormalized per-horizon metrics
/// and, for NLL models, the predicted sigmas.
pub fn evaluate<F: Scalar>(
    model: &MkhNet<F>,
    data: &PreparedData<F>,
    split: Split,
    batch_size: usize,
) -> Result<EvalOutput> {
    let starts = window_starts(
        data.split.segment(split),
        model.cfg.tau,
        model.cfg.upsilon,
    );
    if starts.is_empty() {
        return Err(Error::Data(format!("split {split:?} holds no complete window")));
    }
    let mut acc = MetricsAccumulator::new(model.cfg.upsilon);
    let mut sigmas: Option<Vec<f64>> =
        matches!(model.cfg.loss_kind, LossKind::GaussianNll).then(Vec::new);
    let mut rng = Rng::new(0);
    for chunk in starts.chunks(batch_size) {
        let batch = gather_batch(
            &data.normalized,
            &data.mask,
            chunk,
            model.cfg.tau,
            model.cfg.upsilon,
        )?;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape)?;
        let structure = model.sample_structure(&mut tape, &bound, Mode::Eval, &mut rng)?;
        for w in 0..batch.len() {
            let window = batch.input(w);
            let out =
                model.forward_window(&mut tape, &bound, &structure, &window, Mode::Eval, &mut rng)?;
            let pred_norm = tape.value(out.point).clone();
            let pred = crate::dataset::invert_normalizer(&pred_norm, &data.stats);
            // target on the original scale, from the raw values
            let t0 = batch.window_start_times[w] + model.cfg.tau;
            let n = model.cfg.n_nodes;
            let mut target = Array::zeros(vec![n, model.cfg.upsilon]);
            for v in 0..n {
                for h in 0..model.cfg.upsilon {
                    target.set2(v, h, data.original.at2(v, t0 + h));
                }
            }
            let t_mask = batch.target_mask_of(w);
            acc.add(&pred, &target, &t_mask);
            if let (Some(sig), Some(var)) = (sigmas.as_mut(), out.variance) {
                let var_v = tape.value(var);
                for v in 0..n {
                    let scale = data.stats.std[v].to_f64().unwrap();
                    for h in 0..model.cfg.upsilon {
                        sig.push(var_v.at2(v, h).to_f64().unwrap().sqrt() * scale);
                    }
                }
            }
        }
    }
    Ok(EvalOutput { metrics: acc.finalize()?, sigmas })
}

/// Everything a finished run leaves behind.
#[derive(Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_val_mae: f64,
}

/// Full protocol: shuffled mini-batches, Adam with clipping, plateau lr
/// halving, early stopping, best-parameter restore. Epoch 0 records the
/// untrained model.
pub fn train<F: Scalar>(
    model: &mut MkhNet<F>,
    data: &PreparedData<F>,
    tcfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    let train_starts = window_starts(
        data.split.segment(Split::Train),
        model.cfg.tau,
        model.cfg.upsilon,
    );
    if train_starts.is_empty() {
        return Err(Error::Data("training split holds no complete window".into()));
    }
    if tcfg.epochs == 0 {
        return Ok(TrainOutcome { history: Vec::new(), best_val_mae: f64::NAN });
    }
    // without validation windows there is nothing to schedule or stop on
    let has_val = !window_starts(
        data.split.segment(Split::Validation),
        model.cfg.tau,
        model.cfg.upsilon,
    )
    .is_empty();

    let mut adam = AdamState::new(&model.params, lit(tcfg.lr));
    let mut scheduler =
        PlateauScheduler::new(tcfg.patience_lr, tcfg.lr_factor, tcfg.improvement_eps);
    let mut history = Vec::new();

    let initial_val = if has_val {
        evaluate(model, data, Split::Validation, tcfg.batch_size)?.metrics.mae
    } else {
        f64::NAN
    };
    let initial_train = segment_loss(model, data, Split::Train, tcfg.batch_size)?;
    history.push(EpochRecord {
        epoch: 0,
        train_loss: initial_train,
        val_mae: initial_val,
        lr: tcfg.lr,
    });

    let mut best_val = initial_val;
    let mut best_params = model.params.clone();
    let mut stall = 0usize;
    let mut lr = tcfg.lr;

    for epoch in 1..=tcfg.epochs {
        let mut order = train_starts.clone();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for chunk in order.chunks(tcfg.batch_size) {
            let batch = gather_batch(
                &data.normalized,
                &data.mask,
                chunk,
                model.cfg.tau,
                model.cfg.upsilon,
            )?;
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape)?;
            let structure = model.sample_structure(&mut tape, &bound, Mode::Train, rng)?;
            let mut total: Option<VarId> = None;
            let mut count = 0usize;
            for w in 0..batch.len() {
                let window = batch.input(w);
                let out =
                    model.forward_window(&mut tape, &bound, &structure, &window, Mode::Train, rng)?;
                let target = batch.target(w);
                let t_mask = batch.target_mask_of(w);
                let (s, c) = match model.cfg.loss_kind {
                    LossKind::Mae => mae_terms(&mut tape, out.point, &target, &t_mask)?,
                    LossKind::GaussianNll => {
                        let var = out.variance.expect("nll model has variance");
                        gaussian_nll_terms(&mut tape, out.point, var, &target, &t_mask)?
                    }
                };
                count += c;
                total = Some(match total {
                    Some(acc) => tape.add(acc, s)?,
                    None => s,
                });
            }
            if count == 0 {
                continue; // every target in this batch is missing
            }
            let sum = total.expect("non-empty batch");
            let loss = tape.scale(sum, F::one() / lit(count as f64))?;
            let loss_v = tape.value(loss).item()?.to_f64().unwrap();
            if !loss_v.is_finite() {
                return Err(Error::NonFinite { op: "loss" });
            }
            epoch_loss += loss_v * count as f64;
            epoch_count += count;

            let grads = tape.backward(loss)?;
            let mut named: BTreeMap<String, Array<F>> = BTreeMap::new();
            for (name, id) in bound.ids() {
                named.insert(
                    name.clone(),
                    grads.get_or_zeros(*id, model.params[name].shape()),
                );
            }
            clip_global_norm(&mut named, lit(tcfg.clip_norm));
            adam.lr = lit(lr);
            adam.step(&mut model.params, &named);
        }

        let train_loss = if epoch_count == 0 { f64::NAN } else { epoch_loss / epoch_count as f64 };
        if !has_val {
            history.push(EpochRecord { epoch, train_loss, val_mae: f64::NAN, lr });
            continue;
        }
        let val_mae = evaluate(model, data, Split::Validation, tcfg.batch_size)?.metrics.mae;
        lr = scheduler.observe(val_mae, lr);
        history.push(EpochRecord { epoch, train_loss, val_mae, lr });

        if best_val.is_nan() || best_val - val_mae >= tcfg.improvement_eps {
            best_val = val_mae;
            best_params = model.params.clone();
            stall = 0;
        } else {
            stall += 1;
            if stall >= tcfg.patience_stop {
                break;
            }
        }
    }

    if has_val {
        model.params = best_params;
    }
    Ok(TrainOutcome { history, best_val_mae: best_val })
}

/// Forecast every horizon step as the mean of the look-back window (per
/// variable, observed entries, original scale); score like any model.
pub fn historical_average_baseline<F: Scalar>(
    data: &PreparedData<F>,
    split: Split,
    tau: usize,
    upsilon: usize,
) -> Result<MetricsReport> {
    let starts = window_starts(data.split.segment(split), tau, upsilon);
    if starts.is_empty() {
        return Err(Error::Data(format!("split {split:?} holds no complete window")));
    }
    let n = data.original.rows();
    let mut acc = MetricsAccumulator::new(upsilon);
    for &t0 in &starts {
        let mut pred = Array::<F>::zeros(vec![n, upsilon]);
        let mut target = Array::<F>::zeros(vec![n, upsilon]);
        let mut t_mask = BoolArray::filled(vec![n, upsilon], false);
        for v in 0..n {
            let mut sum = F::zero();
            let mut cnt = 0usize;
            for k in 0..tau {
                if data.mask.at2(v, t0 + k) {
                    sum += data.original.at2(v, t0 + k);
                    cnt += 1;
                }
            }
            let ha = if cnt > 0 { sum / lit(cnt as f64) } else { data.stats.mean[v] };
            for h in 0..upsilon {
                pred.set2(v, h, ha);
                target.set2(v, h, data.original.at2(v, t0 + tau + h));
                t_mask.set2(v, h, data.mask.at2(v, t0 + tau + h));
            }
        }
        acc.add(&pred, &target, &t_mask);
    }
    acc.finalize()
}
