//! Adam, the mini-batch training loop, and k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::checkpoint::Checkpoint;
use crate::data::{normalize, pad_truncate, Cohort, NormStats, DEFAULT_T_MAX};
use crate::error::{Error, Result};
use crate::metrics::{macro_ovr, MacroReport, Metric, ScoredCohort};
use crate::model::{loss_and_gradient, predict_prepared, prepare, AblationConfig, ModelConfig, ModelParams, PreparedPatient};
use crate::men::{DEFAULT_DILATIONS, DEFAULT_KERNEL_WIDTH};
use crate::wavelet::symlet_filters;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    /// Zeroed moments shaped like `tensors`.
    pub fn new(config: AdamConfig, tensors: &[&Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    /// One bias-corrected update. Nothing is modified if any gradient is
    /// non-finite.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], names: &[String]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::LengthMismatch {
                context: "optimizer tensors",
                expected: self.first.len(),
                found: grads.len(),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).map_or("?", String::as_str);
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("in gradient of {name}[{j}]"),
                });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, (theta, grad)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * grad;
                v[j] = beta2 * v[j] + (1.0 - beta2) * grad * grad;
                *theta -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam step to every model tensor.
pub fn adam_step(params: &mut ModelParams, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    let names = params.names();
    state.update(&mut params.tensors_mut(), grads, &names)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 64,
            epochs: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Trains `params` in place on `data`; patient order is reshuffled each
/// epoch from `rng`.
pub fn train_from(
    mut params: ModelParams,
    data: &[PreparedPatient],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut state = {
        let named = params.named();
        let tensors: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
        AdamState::new(adam, &tensors)
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedPatient> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grads) = loss_and_gradient(&params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("in training loss at epoch {}", epoch + 1),
                });
            }
            total += loss * batch.len() as f64;
            adam_step(&mut params, &grads, &mut state)?;
        }
        epoch_losses.push(total / data.len() as f64);
    }
    Ok(TrainOutcome {
        params,
        epoch_losses,
        steps: state.step,
    })
}

/// Initializes from `config.seed` and trains.
pub fn train(model: &ModelConfig, data: &[PreparedPatient], config: &TrainConfig) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = ModelParams::init(model, &mut rng)?;
    train_from(params, data, config, &mut rng)
}

/// Settings for a full cross-validated experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub t_max: usize,
    pub order: usize,
    pub kernel_width: usize,
    pub dilations: [usize; 3],
    pub ablation: AblationConfig,
    pub train: TrainConfig,
    pub folds: usize,
    /// Train folds on separate threads.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            t_max: DEFAULT_T_MAX,
            order: 6,
            kernel_width: DEFAULT_KERNEL_WIDTH,
            dilations: DEFAULT_DILATIONS,
            ablation: AblationConfig::FULL,
            train: TrainConfig::default(),
            folds: 10,
            parallel: false,
        }
    }
}

impl ExperimentConfig {
    pub fn model_config(&self, cohort: &Cohort) -> ModelConfig {
        ModelConfig {
            t_max: self.t_max,
            dynamic: cohort.dynamic_names.len(),
            statics: cohort.static_names.len(),
            classes: cohort.classes,
            order: self.order,
            kernel_width: self.kernel_width,
            dilations: self.dilations,
            ablation: self.ablation,
        }
    }
}

/// Seed for fold `fold` derived from the experiment seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Test-index sets for `k` folds over `n` patients after a seeded shuffle.
/// Fold sizes differ by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Data(format!("{n} patients cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = order[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub auroc: MacroReport,
    pub auprc: MacroReport,
    pub epoch_losses: Vec<f64>,
    pub checkpoint: Checkpoint,
    pub scored: ScoredCohort,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub mean_auroc: f64,
    pub mean_auprc: f64,
}

/// Scores `indices` of an already padded cohort under a checkpoint.
pub fn score_patients(checkpoint: &Checkpoint, cohort: &Cohort, indices: &[usize]) -> Result<ScoredCohort> {
    let params = &checkpoint.params;
    let filters = symlet_filters(params.config.order)?;
    let mut scored = ScoredCohort {
        ids: Vec::with_capacity(indices.len()),
        probs: Vec::with_capacity(indices.len()),
        labels: Vec::with_capacity(indices.len()),
        classes: params.config.classes,
    };
    for &i in indices {
        let raw = &cohort.patients[i];
        let p = match &checkpoint.norm {
            Some(n) => n.apply(raw)?,
            None => raw.clone(),
        };
        let prepared = prepare(&p, &filters)?;
        scored.ids.push(p.patient_id.clone());
        scored.probs.push(predict_prepared(params, &prepared)?);
        scored.labels.push(p.label);
    }
    Ok(scored)
}

/// Trains on `train_idx` and evaluates on `test_idx` of a padded cohort.
/// Normalization statistics come from the training patients alone.
pub fn run_fold(
    cohort: &Cohort,
    train_idx: &[usize],
    test_idx: &[usize],
    experiment: &ExperimentConfig,
    fold: usize,
) -> Result<FoldReport> {
    if cohort.t_max != Some(experiment.t_max) {
        return Err(Error::Config("cohort must be padded to the experiment's visit count".into()));
    }
    let model = experiment.model_config(cohort);
    model.validate()?;
    let stats = NormStats::fit(cohort, train_idx)?;
    let filters = symlet_filters(model.order)?;
    let train_set = train_idx
        .iter()
        .map(|&i| prepare(&stats.apply(&cohort.patients[i])?, &filters))
        .collect::<Result<Vec<_>>>()?;
    let config = TrainConfig {
        seed: fold_seed(experiment.train.seed, fold),
        ..experiment.train.clone()
    };
    let outcome = train(&model, &train_set, &config)?;
    let checkpoint = Checkpoint {
        params: outcome.params,
        norm: Some(stats),
    };
    let scored = score_patients(&checkpoint, cohort, test_idx)?;
    Ok(FoldReport {
        fold,
        auroc: macro_ovr(&scored, Metric::Auroc)?,
        auprc: macro_ovr(&scored, Metric::Auprc)?,
        epoch_losses: outcome.epoch_losses,
        checkpoint,
        scored,
    })
}

/// Pads the cohort, splits it into folds, and trains/evaluates each fold.
pub fn cross_validate(cohort: &Cohort, experiment: &ExperimentConfig) -> Result<CvReport> {
    experiment.train.validate()?;
    let padded = pad_truncate(cohort, experiment.t_max)?;
    let test_sets = kfold_indices(padded.len(), experiment.folds, experiment.train.seed)?;
    let splits: Vec<(Vec<usize>, &Vec<usize>)> = test_sets
        .iter()
        .map(|test| {
            let train = (0..padded.len()).filter(|i| test.binary_search(i).is_err()).collect();
            (train, test)
        })
        .collect();
    let run = |f: usize| run_fold(&padded, &splits[f].0, splits[f].1, experiment, f);
    let folds = if experiment.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..splits.len()).map(|f| scope.spawn(move || run(f))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("fold thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        (0..splits.len()).map(run).collect::<Result<Vec<_>>>()?
    };
    let k = folds.len() as f64;
    Ok(CvReport {
        mean_auroc: folds.iter().map(|f| f.auroc.value).sum::<f64>() / k,
        mean_auprc: folds.iter().map(|f| f.auprc.value).sum::<f64>() / k,
        folds,
    })
}

/// Normalizes a padded cohort with the statistics stored in a checkpoint.
pub fn apply_checkpoint_norm(checkpoint: &Checkpoint, cohort: &Cohort) -> Result<Cohort> {
    match &checkpoint.norm {
        Some(n) => normalize(cohort, n),
        None => Ok(cohort.clone()),
    }
}
