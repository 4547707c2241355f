//! Per-sample stochastic gradient descent with classical momentum.
//!
//! Every epoch visits the training set once in a freshly shuffled order and
//! updates the parameters after each instance:
//!
//! ```text
//! v <- mu v - alpha dE/dtheta
//! theta <- theta + v
//! ```

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split, Dataset};
use crate::error::{LdnnError, Result};
use crate::init::{initialize_ldnn, InitMode};
use crate::model::{argmax, ForwardTrace, Gradient, LdnnModel, LossKind, MulticlassModel};
use crate::seed::{derive_seed, derived_rng};

/// Seed tag for model initialization.
pub(crate) const INIT_TAG: u64 = 20;
/// Seed tag for the early-stopping validation split.
pub(crate) const SPLIT_TAG: u64 = 10;
/// Seed tag for the epoch shuffling stream. Modular baselines add the pair
/// index to it, so pair 0 shares the stream of an equivalent 1 x 1 LDNN.
pub(crate) const SHUFFLE_TAG: u64 = 1000;

/// Per-class initialization seeds start here.
const CLASS_INIT_TAG: u64 = 100;

pub const DEFAULT_PATIENCE: usize = 50;

fn default_patience() -> usize {
    DEFAULT_PATIENCE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    /// Fraction of the training data held out for validation.
    pub val_fraction: f64,
    /// Epochs without a new validation minimum before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            val_fraction: 0.1,
            patience: DEFAULT_PATIENCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealStage {
    pub epochs: usize,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Step size `alpha`.
    pub step: f64,
    /// Momentum weight `mu` in `[0, 1)`.
    pub momentum: f64,
    pub epochs: usize,
    pub loss: LossKind,
    pub early_stop: Option<EarlyStop>,
    pub seed: u64,
    /// When set, replaces `step`/`epochs` by consecutive stages with strictly
    /// decreasing steps.
    pub anneal: Option<Vec<AnnealStage>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            step: 0.3,
            momentum: 0.1,
            epochs: 500,
            loss: LossKind::Quadratic,
            early_stop: None,
            seed: 0,
            anneal: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(LdnnError::param(format!("step must be positive, got {}", self.step)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(LdnnError::param(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if let Some(es) = &self.early_stop {
            if !(es.val_fraction > 0.0 && es.val_fraction < 1.0) {
                return Err(LdnnError::param(format!(
                    "validation fraction must lie in (0, 1), got {}",
                    es.val_fraction
                )));
            }
        }
        if let Some(stages) = &self.anneal {
            if stages.is_empty() {
                return Err(LdnnError::param("annealing schedule has no stages"));
            }
            for s in stages {
                if !(s.step.is_finite() && s.step > 0.0) {
                    return Err(LdnnError::param(format!("anneal step must be positive, got {}", s.step)));
                }
            }
            if stages.windows(2).any(|w| w[1].step >= w[0].step) {
                return Err(LdnnError::param("anneal steps must be strictly decreasing"));
            }
        }
        Ok(())
    }

    /// Step size for every epoch of the run.
    pub fn schedule(&self) -> Vec<f64> {
        match &self.anneal {
            Some(stages) => stages
                .iter()
                .flat_map(|s| std::iter::repeat_n(s.step, s.epochs))
                .collect(),
            None => vec![self.step; self.epochs],
        }
    }
}

/// Momentum state, shaped like the parameters it updates.
pub type Velocity = Gradient;

/// Totals over one pass through the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean per-sample loss, measured before each sample's update.
    pub mean_loss: f64,
    /// Instances misclassified before their own update.
    pub errors: usize,
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: f64,
    pub train_loss: f64,
    /// Online training error (%), counted before each sample's update.
    pub train_error: f64,
    /// Validation error (%) after the epoch, when early stopping is active.
    pub val_error: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were returned; 0 means the initialization.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// A seeded random visiting order over `len` instances.
pub fn epoch_order(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
}

/// In-place momentum update of one model given unit sensitivities at `x`.
pub(crate) fn apply_update(
    model: &mut LdnnModel,
    velocity: &mut Velocity,
    x: &[f64],
    deltas: &[f64],
    step: f64,
    momentum: f64,
) {
    let n = model.inputs();
    {
        let biases = model.biases_mut();
        for ((b, v), &d) in biases.iter_mut().zip(velocity.biases.iter_mut()).zip(deltas) {
            *v = momentum * *v - step * d;
            *b += *v;
        }
    }
    let weights = model.weights_mut();
    for (u, &d) in deltas.iter().enumerate() {
        let w = &mut weights[u * n..(u + 1) * n];
        let v = &mut velocity.weights[u * n..(u + 1) * n];
        for ((w, v), &xk) in w.iter_mut().zip(v.iter_mut()).zip(x) {
            *v = momentum * *v - step * d * xk;
            *w += *v;
        }
    }
}

/// Reusable per-model buffers for the training loop.
struct Scratch {
    traces: Vec<ForwardTrace>,
    deltas: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

impl Scratch {
    fn new(models: &[LdnnModel]) -> Self {
        Scratch {
            traces: models.iter().map(ForwardTrace::for_model).collect(),
            deltas: models.iter().map(|m| vec![0.0; m.units()]).collect(),
            scores: vec![0.0; models.len()],
        }
    }
}

/// Target of head `c` for an instance labelled `label`. A lone head is a
/// binary model whose positive class is 1; otherwise head `c` is one-vs-rest.
#[inline]
fn head_target(heads: usize, c: usize, label: usize) -> f64 {
    let positive = if heads == 1 { 1 } else { c };
    if label == positive {
        1.0
    } else {
        0.0
    }
}

/// Predicted class from head outputs.
#[inline]
fn head_prediction(scores: &[f64]) -> usize {
    if scores.len() == 1 {
        usize::from(scores[0] >= 0.5)
    } else {
        argmax(scores)
    }
}

fn check_finite_model(model: &LdnnModel, epoch: usize, stage: &str) -> Result<()> {
    if model.is_finite() {
        Ok(())
    } else {
        Err(LdnnError::Divergence {
            epoch,
            stage: stage.to_string(),
            detail: "parameters became non-finite".into(),
        })
    }
}

/// One epoch over any number of heads trained on the same sample stream.
#[allow(clippy::too_many_arguments)]
fn heads_epoch(
    models: &mut [LdnnModel],
    velocities: &mut [Velocity],
    data: &Dataset,
    step: f64,
    momentum: f64,
    loss: LossKind,
    rng: &mut ChaCha8Rng,
    epoch: usize,
    scratch: &mut Scratch,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(LdnnError::EmptyInput("training data has no instances".into()));
    }
    let heads = models.len();
    let mut total_loss = 0.0;
    let mut errors = 0;
    for idx in epoch_order(data.len(), rng) {
        let x = data.row(idx);
        let label = data.label(idx);
        for c in 0..heads {
            let model = &models[c];
            let trace = &mut scratch.traces[c];
            model.forward_into(x, trace)?;
            let y = head_target(heads, c, label);
            let sample_loss = loss.loss(trace.f, y);
            if !sample_loss.is_finite() {
                return Err(LdnnError::Divergence {
                    epoch,
                    stage: "ldnn".into(),
                    detail: format!("non-finite loss on instance {idx}"),
                });
            }
            total_loss += sample_loss;
            scratch.scores[c] = trace.f;
            model.unit_sensitivities_into(trace, loss.derivative(trace.f, y), &mut scratch.deltas[c]);
            if scratch.deltas[c].iter().any(|d| !d.is_finite()) {
                return Err(LdnnError::Divergence {
                    epoch,
                    stage: "ldnn".into(),
                    detail: format!("non-finite gradient on instance {idx}"),
                });
            }
        }
        if head_prediction(&scratch.scores) != label {
            errors += 1;
        }
        for c in 0..heads {
            apply_update(&mut models[c], &mut velocities[c], x, &scratch.deltas[c], step, momentum);
        }
    }
    for m in models.iter() {
        check_finite_model(m, epoch, "ldnn")?;
    }
    Ok(EpochStats {
        mean_loss: total_loss / data.len() as f64,
        errors,
    })
}

/// One pass over binary data (labels 0/1) in a seeded random order.
///
/// `epoch` only labels divergence errors.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut LdnnModel,
    data: &Dataset,
    step: f64,
    momentum: f64,
    loss: LossKind,
    velocity: &mut Velocity,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<EpochStats> {
    if velocity.weights.len() != model.weights().len() || velocity.biases.len() != model.biases().len() {
        return Err(LdnnError::shape("velocity", model.weights().len(), velocity.weights.len()));
    }
    let models = std::slice::from_mut(model);
    let mut scratch = Scratch::new(models);
    heads_epoch(
        models,
        std::slice::from_mut(velocity),
        data,
        step,
        momentum,
        loss,
        rng,
        epoch,
        &mut scratch,
    )
}

fn percent(errors: usize, total: usize) -> f64 {
    100.0 * errors as f64 / total as f64
}

fn heads_error(models: &[LdnnModel], data: &Dataset) -> Result<f64> {
    let mut scratch = Scratch::new(models);
    let mut errors = 0;
    for (x, &label) in data.rows().zip(data.labels()) {
        for (c, m) in models.iter().enumerate() {
            m.forward_into(x, &mut scratch.traces[c])?;
            scratch.scores[c] = scratch.traces[c].f;
        }
        if head_prediction(&scratch.scores) != label {
            errors += 1;
        }
    }
    Ok(percent(errors, data.len()))
}

/// Trains `models` in place; with a validation set, keeps the best snapshot.
fn run_heads(
    models: &mut Vec<LdnnModel>,
    train: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    let mut velocities: Vec<Velocity> = models.iter().map(Gradient::zeros_like).collect();
    let mut rng = derived_rng(cfg.seed, SHUFFLE_TAG);
    let mut scratch = Scratch::new(models);
    let mut history = History::default();
    let patience = cfg.early_stop.map_or(DEFAULT_PATIENCE, |e| e.patience);
    let mut best: Option<(f64, Vec<LdnnModel>)> = None;
    if let Some(val) = validation {
        best = Some((heads_error(models, val)?, models.clone()));
    }
    for (e, step) in cfg.schedule().into_iter().enumerate() {
        let epoch = e + 1;
        let stats = heads_epoch(
            models,
            &mut velocities,
            train,
            step,
            cfg.momentum,
            cfg.loss,
            &mut rng,
            epoch,
            &mut scratch,
        )?;
        let val_error = validation.map(|v| heads_error(models, v)).transpose()?;
        history.epochs.push(EpochRecord {
            epoch,
            step,
            train_loss: stats.mean_loss,
            train_error: percent(stats.errors, train.len()),
            val_error,
        });
        if let (Some(err), Some((best_err, snapshot))) = (val_error, best.as_mut()) {
            if err < *best_err {
                *best_err = err;
                snapshot.clone_from(models);
                history.best_epoch = epoch;
            } else if epoch - history.best_epoch >= patience {
                history.stopped_early = true;
                break;
            }
        } else {
            history.best_epoch = epoch;
        }
    }
    if let Some((_, snapshot)) = best {
        *models = snapshot;
    }
    Ok(history)
}

/// Holds out a stratified validation part when early stopping is configured.
pub(crate) fn training_parts(data: &Dataset, cfg: &TrainConfig) -> Result<(Dataset, Option<Dataset>)> {
    match cfg.early_stop {
        Some(es) => {
            let mut parts = split(
                data,
                &[1.0 - es.val_fraction, es.val_fraction],
                derive_seed(cfg.seed, SPLIT_TAG),
                true,
            )?;
            let val = parts.pop().expect("two parts");
            let train = parts.pop().expect("two parts");
            Ok((train, Some(val)))
        }
        None => Ok((data.clone(), None)),
    }
}

/// Continues training an existing binary model.
pub fn train_model(model: LdnnModel, data: &Dataset, cfg: &TrainConfig) -> Result<(LdnnModel, History)> {
    data.require_binary()?;
    let (train, val) = training_parts(data, cfg)?;
    let mut models = vec![model];
    let history = run_heads(&mut models, &train, val.as_ref(), cfg)?;
    Ok((models.pop().expect("one model"), history))
}

/// Initializes per `init` (seeded from `cfg.seed`) and trains a binary LDNN.
/// Class 1 is the positive class.
pub fn fit(data: &Dataset, init: &InitMode, cfg: &TrainConfig) -> Result<(LdnnModel, History)> {
    data.require_binary()?;
    cfg.validate()?;
    let (train, val) = training_parts(data, cfg)?;
    let model = initialize_ldnn(
        &train.class_rows(1),
        &train.class_rows(0),
        init,
        derive_seed(cfg.seed, INIT_TAG),
    )?;
    let mut models = vec![model];
    let history = run_heads(&mut models, &train, val.as_ref(), cfg)?;
    Ok((models.pop().expect("one model"), history))
}

/// One-vs-rest initialization: class `c` against all other classes pooled.
pub fn initialize_multiclass(data: &Dataset, init: &InitMode, seed: u64) -> Result<MulticlassModel> {
    let counts = data.class_counts();
    if let Some(c) = counts.iter().position(|&k| k == 0) {
        return Err(LdnnError::param(format!("class {c} has no instances")));
    }
    let models = (0..data.classes())
        .map(|c| {
            initialize_ldnn(
                &data.class_rows(c),
                &data.other_rows(c),
                init,
                derive_seed(seed, CLASS_INIT_TAG + c as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MulticlassModel::new(models)
}

/// Trains one LDNN per class; every sample updates all class models.
pub fn fit_multiclass(
    data: &Dataset,
    init: &InitMode,
    cfg: &TrainConfig,
) -> Result<(MulticlassModel, History)> {
    cfg.validate()?;
    if data.classes() < 2 {
        return Err(LdnnError::param("multi-class training needs at least 2 classes"));
    }
    let (train, val) = training_parts(data, cfg)?;
    let mc = initialize_multiclass(&train, init, derive_seed(cfg.seed, INIT_TAG))?;
    let mut models = mc.models().to_vec();
    let history = run_heads(&mut models, &train, val.as_ref(), cfg)?;
    Ok((MulticlassModel::new(models)?, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use crate::seed::rng_from;

    fn one_sample() -> Dataset {
        Dataset::from_rows(&[vec![1.0]], vec![1]).unwrap()
    }

    fn blobs2() -> Dataset {
        let d = gen_blobs(&[vec![0.0, 0.0], vec![3.0, 3.0]], 1.0, 50, 11).unwrap();
        d
    }

    #[test]
    fn zero_step_leaves_model_unchanged() {
        let data = blobs2();
        let mut model = crate::init::initialize_random(2, 2, 2, 1).unwrap();
        let before = model.clone();
        let mut v = Gradient::zeros_like(&model);
        train_epoch(&mut model, &data, 0.0, 0.5, LossKind::Quadratic, &mut v, &mut rng_from(0), 1).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn single_step_by_hand() {
        let mut model = LdnnModel::zeros(1, 1, 1).unwrap();
        let mut v = Gradient::zeros_like(&model);
        train_epoch(&mut model, &one_sample(), 0.1, 0.0, LossKind::Quadratic, &mut v, &mut rng_from(0), 1)
            .unwrap();
        // dE/dw = 2 (0.5 - 1) * 0.5 * 0.5 * 1 = -0.25
        assert!((model.weights()[0] - 0.025).abs() < 1e-15);
        assert!((model.biases()[0] - 0.025).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let data = blobs2();
        let start = crate::init::initialize_random(2, 2, 3, 5).unwrap();
        let mut model = start.clone();
        let mut v = Gradient::zeros_like(&model);
        let step = 0.05;
        train_epoch(&mut model, &data, step, 0.0, LossKind::CrossEntropy, &mut v, &mut rng_from(3), 1).unwrap();

        let mut expected = start;
        for idx in epoch_order(data.len(), &mut rng_from(3)) {
            let x = data.row(idx);
            let y = data.label(idx) as f64;
            let trace = expected.forward(x).unwrap();
            let grad = expected.backward(&trace, x, y, LossKind::CrossEntropy).unwrap();
            for (w, g) in expected.weights_mut().iter_mut().zip(&grad.weights) {
                *w -= step * g;
            }
            for (b, g) in expected.biases_mut().iter_mut().zip(&grad.biases) {
                *b -= step * g;
            }
        }
        for (a, b) in model.weights().iter().zip(expected.weights()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn momentum_accumulates_velocity() {
        // Two identical samples: the second update is mu * v1 + the fresh step.
        let data = Dataset::from_rows(&[vec![0.0], vec![0.0]], vec![1, 1]).unwrap();
        let mut model = LdnnModel::zeros(1, 1, 1).unwrap();
        let mut v = Gradient::zeros_like(&model);
        train_epoch(&mut model, &data, 1.0, 0.5, LossKind::Quadratic, &mut v, &mut rng_from(0), 1).unwrap();
        let s = crate::model::sigmoid;
        let v1 = 2.0 * (1.0 - 0.5) * 0.5 * 0.5;
        let b1 = v1;
        let f = s(b1);
        let v2 = 0.5 * v1 + 2.0 * (1.0 - f) * f * (1.0 - f);
        assert!((model.biases()[0] - (b1 + v2)).abs() < 1e-12);
    }

    #[test]
    fn epoch_order_is_a_permutation() {
        let mut rng = rng_from(4);
        let mut order = epoch_order(100, &mut rng);
        order.sort_unstable();
        assert_eq!(order, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = blobs2();
        let init = InitMode::Kmeans {
            groups: 2,
            per_group: 2,
            restarts: 3,
        };
        let cfg = TrainConfig {
            epochs: 0,
            seed: 9,
            ..TrainConfig::default()
        };
        let (model, history) = fit(&data, &init, &cfg).unwrap();
        let expected = initialize_ldnn(
            &data.class_rows(1),
            &data.class_rows(0),
            &init,
            derive_seed(9, INIT_TAG),
        )
        .unwrap();
        assert_eq!(model, expected);
        assert!(history.epochs.is_empty());
    }

    #[test]
    fn fit_is_deterministic() {
        let data = blobs2();
        let init = InitMode::Random {
            groups: 2,
            per_group: 2,
        };
        let cfg = TrainConfig {
            epochs: 20,
            seed: 3,
            ..TrainConfig::default()
        };
        let a = fit(&data, &init, &cfg).unwrap();
        let b = fit(&data, &init, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_class_data_is_rejected() {
        let data = Dataset::new(vec![0.0, 1.0], 1, vec![1, 1], 2).unwrap();
        let init = InitMode::Random {
            groups: 1,
            per_group: 1,
        };
        assert!(matches!(fit(&data, &init, &TrainConfig::default()), Err(LdnnError::Parameter(_))));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { step: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..ok.clone() }.validate().is_err());
        let bad_es = TrainConfig {
            early_stop: Some(EarlyStop {
                val_fraction: 1.0,
                patience: 5,
            }),
            ..ok.clone()
        };
        assert!(bad_es.validate().is_err());
        let bad_anneal = TrainConfig {
            anneal: Some(vec![
                AnnealStage { epochs: 2, step: 0.1 },
                AnnealStage { epochs: 2, step: 0.1 },
            ]),
            ..ok.clone()
        };
        assert!(bad_anneal.validate().is_err());
        let anneal = TrainConfig {
            anneal: Some(vec![
                AnnealStage { epochs: 2, step: 0.1 },
                AnnealStage { epochs: 1, step: 0.01 },
            ]),
            ..ok
        };
        assert_eq!(anneal.schedule(), vec![0.1, 0.1, 0.01]);
    }

    #[test]
    fn early_stopping_returns_best_snapshot() {
        let data = gen_blobs(&[vec![0.0, 0.0], vec![1.5, 1.5]], 1.0, 100, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 60,
            step: 0.5,
            early_stop: Some(EarlyStop {
                val_fraction: 0.2,
                patience: 10,
            }),
            seed: 4,
            ..TrainConfig::default()
        };
        let init = InitMode::Random {
            groups: 3,
            per_group: 3,
        };
        let (model, history) = fit(&data, &init, &cfg).unwrap();
        let (_, Some(val)) = training_parts(&data, &cfg).unwrap() else {
            unreachable!()
        };
        let min = history
            .epochs
            .iter()
            .filter_map(|r| r.val_error)
            .fold(f64::INFINITY, f64::min);
        let err = heads_error(std::slice::from_ref(&model), &val).unwrap();
        if history.best_epoch > 0 {
            assert_eq!(history.epochs[history.best_epoch - 1].val_error, Some(min));
            assert_eq!(err, min);
        } else {
            assert!(err <= min);
        }
    }

    #[test]
    fn multiclass_blobs() {
        let centers = vec![vec![0.0, 0.0], vec![6.0, 0.0], vec![0.0, 6.0]];
        let train = gen_blobs(&centers, 1.0, 100, 1).unwrap();
        let test = gen_blobs(&centers, 1.0, 100, 2).unwrap();
        let init = InitMode::Kmeans {
            groups: 2,
            per_group: 2,
            restarts: 5,
        };
        let cfg = TrainConfig {
            epochs: 30,
            step: 0.1,
            seed: 1,
            ..TrainConfig::default()
        };
        let (mc, _) = fit_multiclass(&train, &init, &cfg).unwrap();
        let wrong = test
            .rows()
            .zip(test.labels())
            .filter(|(x, &l)| mc.predict(x).unwrap() != l)
            .count();
        assert!(wrong as f64 / test.len() as f64 <= 0.05, "{wrong} errors");
    }

    #[test]
    fn multiclass_missing_class() {
        let data = Dataset::new(vec![0.0, 1.0, 2.0], 1, vec![0, 2, 0], 3).unwrap();
        let init = InitMode::Random {
            groups: 1,
            per_group: 1,
        };
        assert!(fit_multiclass(&data, &init, &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_names_epoch() {
        let data = blobs2();
        let mut model = crate::init::initialize_random(2, 1, 1, 0).unwrap();
        let mut v = Gradient::zeros_like(&model);
        let err = train_epoch(&mut model, &data, f64::INFINITY, 0.0, LossKind::Quadratic, &mut v, &mut rng_from(0), 7)
            .unwrap_err();
        assert!(matches!(err, LdnnError::Divergence { epoch: 7, .. }), "{err}");
    }
}
