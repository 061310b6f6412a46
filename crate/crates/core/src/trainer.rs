//! Subject-independent training: leave-one-subject-out folds, full-batch
//! descent on MSE plus an L1 weight penalty, plateau learning-rate decay and
//! early stopping with best-weight restoration.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::bp_model::{BpRegressor, ModelConfig, ParamVars, Target};
use crate::error::{Error, Result};
use crate::morpho_grid::MorphoTemporalGrid;

/// Mixes a master seed with a run and fold index (SplitMix64 finalizer
/// applied to each input in turn).
pub fn derive_seed(master: u64, run: u64, fold: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ run) ^ fold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain gradient descent at the scheduled rate.
    Gd,
    /// Adam with the scheduled rate as step size.
    Adam,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(Optimizer::Gd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::InvalidConfig(format!("unknown optimizer {s:?}"))),
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Gd => "gd",
            Optimizer::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub initial_lr: f64,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub early_stop_patience: usize,
    pub l1_lambda: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub target: Target,
    pub optimizer: Optimizer,
    /// Fit on labels standardized by the training-set mean and deviation.
    pub standardize_targets: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.001,
            lr_patience: 10,
            lr_factor: 0.1,
            early_stop_patience: 30,
            l1_lambda: 0.0001,
            max_epochs: 500,
            seed: 0,
            target: Target::Sbp,
            optimizer: Optimizer::Gd,
            standardize_targets: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be positive");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr_factor must lie in (0, 1)");
        }
        if self.lr_patience == 0 || self.early_stop_patience == 0 {
            return bad("patiences must be at least 1");
        }
        if !(self.l1_lambda >= 0.0 && self.l1_lambda.is_finite()) {
            return bad("l1_lambda must be non-negative");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        Ok(())
    }
}

/// One grid with its reference labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGrid {
    pub subject_id: String,
    pub record_id: String,
    pub sbp: f64,
    pub dbp: f64,
    pub grid: MorphoTemporalGrid,
}

impl LabeledGrid {
    pub fn reference(&self, target: Target) -> f64 {
        match target {
            Target::Sbp => self.sbp,
            Target::Dbp => self.dbp,
        }
    }

    pub fn key(&self) -> RecordKey {
        RecordKey {
            subject_id: self.subject_id.clone(),
            record_id: self.record_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub subject_id: String,
    pub record_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_id: usize,
    pub test_subject: String,
    pub test_records: Vec<RecordKey>,
    pub train_records: Vec<RecordKey>,
    pub validation_records: Vec<RecordKey>,
}

/// One fold per subject (subjects in sorted order). Each training subject
/// with at least two records gives one uniformly chosen record to
/// validation; single-record subjects train only.
pub fn loso_folds(records: &[RecordKey], seed: u64) -> Result<Vec<FoldPlan>> {
    let mut by_subject: BTreeMap<&str, Vec<&RecordKey>> = BTreeMap::new();
    for r in records {
        by_subject.entry(&r.subject_id).or_default().push(r);
    }
    if by_subject.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 subjects, found {}",
            by_subject.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = Vec::with_capacity(by_subject.len());
    for (fold_id, (&test, test_records)) in by_subject.iter().enumerate() {
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for (&subject, recs) in &by_subject {
            if subject == test {
                continue;
            }
            let held = if recs.len() >= 2 {
                recs.choose(&mut rng).copied()
            } else {
                None
            };
            for &r in recs {
                if held.is_some_and(|h| std::ptr::eq(h, r)) {
                    validation.push(r.clone());
                } else {
                    train.push(r.clone());
                }
            }
        }
        folds.push(FoldPlan {
            fold_id,
            test_subject: test.to_string(),
            test_records: test_records.iter().map(|&r| r.clone()).collect(),
            train_records: train,
            validation_records: validation,
        });
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_error: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl TrainingHistory {
    /// CSV with columns `epoch,train_loss,val_error,lr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,train_loss,val_error,lr")?;
        for e in &self.epochs {
            writeln!(w, "{},{:?},{:?},{:?}", e.epoch, e.train_loss, e.val_error, e.lr)?;
        }
        Ok(())
    }
}

/// Something [`train_loop`] can minimize. Parameters are a list of flat
/// buffers.
pub trait Objective {
    /// Training loss at `params` and its gradient, shaped like `params`.
    fn loss_and_grad(&mut self, params: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)>;

    /// Error monitored for the schedule and early stopping.
    fn validation_error(&mut self, params: &[Vec<f64>]) -> Result<f64>;

    /// Training loss as recorded in the history.
    fn reported_loss(&self, objective: f64) -> f64 {
        objective
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &[Vec<f64>]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Runs the epoch loop and returns the best-epoch parameters.
///
/// Each epoch takes one step on the full objective, then evaluates the
/// validation error. A new minimum resets both patience counters; without
/// one, the rate is multiplied by `lr_factor` once `lr_patience` epochs have
/// passed, and training stops once `early_stop_patience` epochs have passed.
pub fn train_loop<O: Objective>(
    objective: &mut O,
    mut params: Vec<Vec<f64>>,
    config: &TrainingConfig,
) -> Result<(Vec<Vec<f64>>, TrainingHistory)> {
    config.validate()?;
    let mut adam = match config.optimizer {
        Optimizer::Adam => Some(Adam::new(&params)),
        Optimizer::Gd => None,
    };
    let mut lr = config.initial_lr;
    let mut best = f64::INFINITY;
    let mut best_params = params.clone();
    let mut history = TrainingHistory::default();
    let (mut plateau, mut stall) = (0, 0);
    for epoch in 1..=config.max_epochs {
        let (loss, grads) = objective.loss_and_grad(&params)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        match adam.as_mut() {
            Some(a) => a.step(&mut params, &grads, lr),
            None => {
                for (p, g) in params.iter_mut().zip(&grads) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= lr * gi;
                    }
                }
            }
        }
        let val = objective.validation_error(&params)?;
        if !val.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: objective.reported_loss(loss),
            val_error: val,
            lr,
        });
        history.stopped_epoch = epoch;
        if val < best {
            best = val;
            history.best_epoch = epoch;
            best_params.clone_from(&params);
            plateau = 0;
            stall = 0;
            continue;
        }
        plateau += 1;
        stall += 1;
        if stall >= config.early_stop_patience {
            break;
        }
        if plateau >= config.lr_patience {
            lr *= config.lr_factor;
            plateau = 0;
        }
    }
    Ok((best_params, history))
}

fn load_params(model: &mut BpRegressor, params: &[Vec<f64>]) {
    for (t, p) in model.parameters_mut().into_iter().zip(params) {
        t.values_mut().copy_from_slice(p);
    }
}

fn param_buffers(model: &BpRegressor) -> Vec<Vec<f64>> {
    model
        .parameters()
        .into_iter()
        .map(|(_, t)| t.values().to_vec())
        .collect()
}

/// Builds the scalar training objective, [`total_loss`] divided by the
/// squared output scale: MSE between the raw network output and the labels
/// mapped through the inverse output affine, plus `l1_lambda / scale²` times
/// the summed |weights|.
fn loss_node(
    model: &BpRegressor,
    g: &mut Graph,
    vars: &ParamVars,
    batch: &[(&MorphoTemporalGrid, f64)],
    l1_lambda: f64,
) -> Result<crate::autodiff::Var> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut outs = Vec::with_capacity(batch.len());
    for (grid, _) in batch {
        let x = model.input(g, grid)?;
        outs.push(model.forward_graph(g, vars, x, None)?);
    }
    let pred = g.concat(&outs)?;
    let targets = batch
        .iter()
        .map(|(_, y)| (y - model.output_offset) / model.output_scale)
        .collect();
    let target = g.constant_from(vec![batch.len()], targets)?;
    let mse = g.mse(pred, target)?;
    let l1 = g.l1_penalty(&vars.weights());
    let l1 = g.scale(l1, l1_lambda / model.output_scale.powi(2));
    g.add(mse, l1)
}

/// Batch loss: mean squared error of the predictions in mmHg plus
/// `l1_lambda × Σ|weights|`, biases excluded.
pub fn total_loss(
    model: &BpRegressor,
    batch: &[(&MorphoTemporalGrid, f64)],
    l1_lambda: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let loss = loss_node(model, &mut g, &vars, batch, l1_lambda)?;
    Ok(g.value(loss)[0] * model.output_scale.powi(2))
}

/// Training objective and its per-parameter gradients, in
/// [`BpRegressor::parameters`] order. The objective is [`total_loss`]
/// divided by the squared output scale, so standardized targets keep the
/// balance between the error and the penalty.
pub fn loss_and_gradients(
    model: &BpRegressor,
    batch: &[(&MorphoTemporalGrid, f64)],
    l1_lambda: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let loss = loss_node(model, &mut g, &vars, batch, l1_lambda)?;
    g.backward(loss)?;
    let grads = vars
        .all()
        .into_iter()
        .map(|v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).len()]))
        .collect();
    Ok((g.value(loss)[0], grads))
}

/// Predictions in mmHg for a set of grids.
pub fn predict(model: &BpRegressor, grids: &[&MorphoTemporalGrid]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let mut out = Vec::with_capacity(grids.len());
    for grid in grids {
        let x = model.input(&mut g, grid)?;
        let y = model.forward_graph(&mut g, &vars, x, None)?;
        out.push(model.output_offset + model.output_scale * g.value(y)[0]);
    }
    Ok(out)
}

struct ModelObjective<'a> {
    model: BpRegressor,
    train: Vec<(&'a MorphoTemporalGrid, f64)>,
    validation: Vec<(&'a MorphoTemporalGrid, f64)>,
    l1_lambda: f64,
}

impl Objective for ModelObjective<'_> {
    fn loss_and_grad(&mut self, params: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        load_params(&mut self.model, params);
        loss_and_gradients(&self.model, &self.train, self.l1_lambda)
    }

    fn reported_loss(&self, objective: f64) -> f64 {
        objective * self.model.output_scale.powi(2)
    }

    fn validation_error(&mut self, params: &[Vec<f64>]) -> Result<f64> {
        load_params(&mut self.model, params);
        let grids: Vec<_> = self.validation.iter().map(|(g, _)| *g).collect();
        let pred = predict(&self.model, &grids)?;
        let n = pred.len() as f64;
        Ok(pred
            .iter()
            .zip(&self.validation)
            .map(|(p, (_, y))| (p - y).powi(2))
            .sum::<f64>()
            / n)
    }
}

fn lookup<'a>(
    index: &HashMap<RecordKey, &'a LabeledGrid>,
    keys: &[RecordKey],
    target: Target,
) -> Result<Vec<(&'a MorphoTemporalGrid, f64)>> {
    keys.iter()
        .map(|k| {
            index
                .get(k)
                .map(|s| (&s.grid, s.reference(target)))
                .ok_or_else(|| {
                    Error::InsufficientData(format!(
                        "record {}/{} not in data",
                        k.subject_id, k.record_id
                    ))
                })
        })
        .collect()
}

/// Trains a copy of `model` on one fold. The validation MSE (mmHg²) drives
/// the schedule; when the fold has no validation records the training loss
/// is monitored instead.
pub fn fit(
    model: &BpRegressor,
    fold: &FoldPlan,
    data: &[LabeledGrid],
    config: &TrainingConfig,
) -> Result<(BpRegressor, TrainingHistory)> {
    config.validate()?;
    let index: HashMap<RecordKey, &LabeledGrid> = data.iter().map(|s| (s.key(), s)).collect();
    let train = lookup(&index, &fold.train_records, config.target)?;
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut validation = lookup(&index, &fold.validation_records, config.target)?;
    if validation.is_empty() {
        validation = train.clone();
    }
    let mut model = model.clone();
    if config.standardize_targets {
        let ys: Vec<f64> = train.iter().map(|(_, y)| *y).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
        model.output_offset = mean;
        model.output_scale = if sd > 1e-9 { sd } else { 1.0 };
    }
    let start = param_buffers(&model);
    let mut objective = ModelObjective {
        model,
        train,
        validation,
        l1_lambda: config.l1_lambda,
    };
    let (best, history) = train_loop(&mut objective, start, config)?;
    let mut model = objective.model;
    load_params(&mut model, &best);
    Ok((model, history))
}

/// One test-set prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub run: usize,
    pub fold: usize,
    pub subject_id: String,
    pub record_id: String,
    pub target: Target,
    pub prediction_mmhg: f64,
    pub reference_mmhg: f64,
}

pub const PREDICTION_HEADER: &str =
    "run,fold,subject_id,record_id,target,prediction_mmHg,reference_mmHg";

pub fn write_predictions<W: Write>(mut w: W, rows: &[PredictionRow]) -> Result<()> {
    writeln!(w, "{PREDICTION_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{:?},{:?}",
            r.run, r.fold, r.subject_id, r.record_id, r.target, r.prediction_mmhg, r.reference_mmhg
        )?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(r: R) -> Result<Vec<PredictionRow>> {
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if n == 1 {
            if line.trim() != PREDICTION_HEADER {
                return Err(Error::Parse {
                    line: n,
                    message: "unexpected prediction table header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: &str| Error::Parse {
            line: n,
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(err("expected 7 fields"));
        }
        rows.push(PredictionRow {
            run: f[0].parse().map_err(|_| err("bad run"))?,
            fold: f[1].parse().map_err(|_| err("bad fold"))?,
            subject_id: f[2].to_string(),
            record_id: f[3].to_string(),
            target: f[4].parse().map_err(|_| err("bad target"))?,
            prediction_mmhg: f[5].parse().map_err(|_| err("bad prediction"))?,
            reference_mmhg: f[6].parse().map_err(|_| err("bad reference"))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub run: usize,
    pub fold: FoldPlan,
    pub target: Target,
    pub history: TrainingHistory,
    pub model: BpRegressor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub predictions: Vec<PredictionRow>,
    pub folds: Vec<FoldResult>,
}

/// LOSO training and testing for `n_runs` runs and every requested target.
/// Fold plans use `derive_seed(seed, run, u64::MAX)`; model initialization
/// for a fold uses `derive_seed(seed, run, fold)`, shared across targets.
pub fn run_experiment(
    data: &[LabeledGrid],
    model_config: &ModelConfig,
    config: &TrainingConfig,
    targets: &[Target],
    n_runs: usize,
) -> Result<Experiment> {
    model_config.validate()?;
    config.validate()?;
    if n_runs == 0 {
        return Err(Error::InvalidConfig("n_runs must be positive".into()));
    }
    let keys: Vec<RecordKey> = data.iter().map(LabeledGrid::key).collect();
    let index: HashMap<RecordKey, &LabeledGrid> = data.iter().map(|s| (s.key(), s)).collect();
    let mut out = Experiment {
        predictions: Vec::new(),
        folds: Vec::new(),
    };
    for run in 0..n_runs {
        let folds = loso_folds(&keys, derive_seed(config.seed, run as u64, u64::MAX))?;
        for fold in &folds {
            let init = BpRegressor::init(
                model_config,
                derive_seed(config.seed, run as u64, fold.fold_id as u64),
            )?;
            for &target in targets {
                let cfg = TrainingConfig {
                    target,
                    ..config.clone()
                };
                let (model, history) = fit(&init, fold, data, &cfg)?;
                let test = lookup(&index, &fold.test_records, target)?;
                let grids: Vec<_> = test.iter().map(|(g, _)| *g).collect();
                let preds = predict(&model, &grids)?;
                for ((key, (_, y)), p) in fold.test_records.iter().zip(&test).zip(preds) {
                    out.predictions.push(PredictionRow {
                        run,
                        fold: fold.fold_id,
                        subject_id: key.subject_id.clone(),
                        record_id: key.record_id.clone(),
                        target,
                        prediction_mmhg: p,
                        reference_mmhg: *y,
                    });
                }
                out.folds.push(FoldResult {
                    run,
                    fold: fold.clone(),
                    target,
                    history,
                    model,
                });
            }
        }
    }
    Ok(out)
}
