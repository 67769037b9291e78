//! Training loop: per-epoch stochastic window sampling, micro-batches with
//! gradient accumulation, AdamW steps, plateau learning-rate scheduling,
//! early stopping, and best-checkpoint retention by validation loss.
//!
//! Validation windows are sampled once (from a reserved RNG lane) and reused
//! every epoch, so the early-stopping signal tracks the model rather than
//! the sampling noise.

use std::collections::HashMap;
use std::time::Instant;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VraError};
use crate::optim::{adamw_step, mean_gradients, AdamWConfig, OptimizerState};
use crate::pooling::pool_concat;
use crate::regressor::{
    backward, init_params, predict, DropoutMask, Gradients, RegressorParams,
    DEFAULT_DROPOUT_RATE, DEFAULT_HIDDEN_DIMS,
};
use crate::sampler::{make_rng, sample_sequence};
use crate::schedule::{Decision, EarlyStopper, PlateauScheduler, SchedulerConfig};
use crate::store::FeatureStore;

/// RNG lane reserved for the fixed validation windows; epoch lanes count up
/// from 1, so this never collides.
pub const VALIDATION_REPEAT_INDEX: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub accumulation_steps: usize,
    pub dropout_rate: f64,
    pub sequence_length: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub hidden_dims: Vec<usize>,
    pub scheduler: SchedulerConfig,
    pub adamw: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            batch_size: 2,
            accumulation_steps: 8,
            dropout_rate: DEFAULT_DROPOUT_RATE,
            sequence_length: 5,
            max_epochs: 33,
            early_stop_patience: 5,
            hidden_dims: DEFAULT_HIDDEN_DIMS.to_vec(),
            scheduler: SchedulerConfig::default(),
            adamw: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(VraError::InvalidConfig(format!(
                "learning rate {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(VraError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.accumulation_steps == 0 {
            return Err(VraError::InvalidConfig(
                "accumulation_steps must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(VraError::InvalidConfig(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.sequence_length < 2 {
            return Err(VraError::InvalidConfig(
                "sequence_length must be >= 2 (std pooling needs two frames)".into(),
            ));
        }
        if self.early_stop_patience == 0 {
            return Err(VraError::InvalidConfig(
                "early_stop_patience must be >= 1".into(),
            ));
        }
        if self.hidden_dims.contains(&0) {
            return Err(VraError::InvalidConfig("hidden dims must be >= 1".into()));
        }
        self.scheduler.validate()?;
        self.adamw.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
    /// Wall time is informational only; it is excluded from equality and
    /// from serialization so identical runs produce identical records.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl PartialEq for EpochRecord {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_loss == other.train_loss
            && self.val_loss == other.val_loss
            && self.learning_rate == other.learning_rate
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.epochs
            .iter()
            .map(|e| e.val_loss)
            .fold(None, |acc, v| match acc {
                Some(best) if best <= v => Some(best),
                _ => Some(v),
            })
    }

    pub fn best_epoch(&self) -> Option<usize> {
        let best = self.best_val_loss()?;
        self.epochs
            .iter()
            .find(|e| e.val_loss == best)
            .map(|e| e.epoch)
    }
}

/// A trained head: the best-validation parameters together with the
/// optimizer state captured at the same epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: RegressorParams,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    pub best_val_loss: f64,
    pub best_epoch: usize,
}

struct EpochSample {
    pooled: Array1<f64>,
    label: f64,
    mask: DropoutMask,
}

fn pooled_window(
    store_features: &HashMap<String, crate::store::FrameFeatureMatrix>,
    labels: &HashMap<String, f64>,
    id: &str,
    seed: u64,
    lane: u32,
    length: usize,
    dropout_rate: Option<f64>,
) -> Result<EpochSample> {
    let features = store_features
        .get(id)
        .ok_or_else(|| VraError::UnknownVideoId(id.to_owned()))?;
    let label = *labels
        .get(id)
        .ok_or_else(|| VraError::MissingLabel(id.to_owned()))?;
    let mut rng = make_rng(seed, lane, id);
    let sample = sample_sequence(features, label, length, &mut rng)?;
    let pooled = pool_concat(sample.features.view())?.into_concat();
    let mask = match dropout_rate {
        Some(rate) => DropoutMask::sample(pooled.len(), rate, &mut rng),
        None => DropoutMask::identity(pooled.len()),
    };
    Ok(EpochSample {
        pooled,
        label,
        mask,
    })
}

/// Train a fresh head on `train_ids`, monitoring `val_ids`. Returns the
/// best-validation checkpoint and the full per-epoch history.
pub fn train(
    config: &TrainConfig,
    store: &FeatureStore,
    train_ids: &[String],
    val_ids: &[String],
) -> Result<(TrainedModel, TrainHistory)> {
    config.validate()?;
    let input_dim = store.dim() * 2;
    let mut init_rng = make_rng(config.seed, 0, "regressor-init");
    let params = init_params(
        input_dim,
        &config.hidden_dims,
        config.dropout_rate,
        &mut init_rng,
    )?;
    let optimizer = OptimizerState::new(&params, config.learning_rate);
    train_loop(config.clone(), store, train_ids, val_ids, params, optimizer)
}

/// Resume a checkpoint (parameters plus optimizer moments) on a new id set,
/// keeping its configuration. Used for the second phase that folds the
/// held-out videos back into training.
pub fn finetune(
    model: &TrainedModel,
    store: &FeatureStore,
    train_ids: &[String],
    val_ids: &[String],
) -> Result<(TrainedModel, TrainHistory)> {
    model.config.validate()?;
    model.params.validate()?;
    train_loop(
        model.config.clone(),
        store,
        train_ids,
        val_ids,
        model.params.clone(),
        model.optimizer.clone(),
    )
}

fn train_loop(
    config: TrainConfig,
    store: &FeatureStore,
    train_ids: &[String],
    val_ids: &[String],
    mut params: RegressorParams,
    mut optimizer: OptimizerState,
) -> Result<(TrainedModel, TrainHistory)> {
    if train_ids.is_empty() {
        return Err(VraError::EmptyInput("training split has no videos"));
    }
    if val_ids.is_empty() {
        return Err(VraError::EmptyInput("validation split has no videos"));
    }

    let all_ids: Vec<String> = train_ids
        .iter()
        .chain(val_ids.iter())
        .cloned()
        .collect();
    let features = store.load_all(&all_ids)?;
    let labels: HashMap<String, f64> = all_ids
        .iter()
        .map(|id| Ok((id.clone(), store.entry(id)?.mos_label)))
        .collect::<Result<_>>()?;

    // Validation windows are fixed once, on a lane no epoch uses.
    let val_set: Vec<EpochSample> = val_ids
        .iter()
        .map(|id| {
            pooled_window(
                &features,
                &labels,
                id,
                config.seed,
                VALIDATION_REPEAT_INDEX,
                config.sequence_length,
                None,
            )
        })
        .collect::<Result<_>>()?;
    let val_labels: Vec<f64> = val_set.iter().map(|s| s.label).collect();

    let mut scheduler = PlateauScheduler::new(config.scheduler, optimizer.learning_rate)?;
    let mut stopper = EarlyStopper::new(config.early_stop_patience, config.scheduler.threshold)?;
    let mut history = TrainHistory::default();
    let mut best: Option<(RegressorParams, OptimizerState, usize, f64)> = None;
    let mut order: Vec<String> = train_ids.to_vec();

    for epoch in 1..=config.max_epochs {
        let with_context = |e: VraError| VraError::TrainingFailed {
            epoch,
            source: Box::new(e),
        };
        let started = Instant::now();

        let mut shuffle_rng = make_rng(config.seed, epoch as u32, "epoch-shuffle");
        shuffle_rng.shuffle(&mut order);

        let mut group: Vec<Gradients> = Vec::with_capacity(config.accumulation_steps);
        let mut sq_err_sum = 0.0;
        let mut n_preds = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let mut inputs = Vec::with_capacity(chunk.len());
            let mut chunk_labels = Vec::with_capacity(chunk.len());
            let mut masks = Vec::with_capacity(chunk.len());
            for id in chunk {
                let s = pooled_window(
                    &features,
                    &labels,
                    id,
                    config.seed,
                    epoch as u32,
                    config.sequence_length,
                    Some(config.dropout_rate),
                )
                .map_err(with_context)?;
                inputs.push(s.pooled);
                chunk_labels.push(s.label);
                masks.push(s.mask);
            }
            let (loss, grads) =
                backward(&params, &inputs, &chunk_labels, &masks).map_err(with_context)?;
            sq_err_sum += loss * loss * inputs.len() as f64;
            n_preds += inputs.len();
            group.push(grads);
            if group.len() == config.accumulation_steps {
                let g = mean_gradients(&group).map_err(with_context)?;
                adamw_step(&mut optimizer, &mut params, &g, &config.adamw)
                    .map_err(with_context)?;
                group.clear();
            }
        }
        if !group.is_empty() {
            let g = mean_gradients(&group).map_err(with_context)?;
            adamw_step(&mut optimizer, &mut params, &g, &config.adamw).map_err(with_context)?;
            group.clear();
        }
        let train_loss = (sq_err_sum / n_preds as f64).sqrt();

        let val_preds: Vec<f64> = val_set
            .iter()
            .map(|s| predict(&params, &s.pooled))
            .collect::<Result<_>>()
            .map_err(with_context)?;
        let val_loss =
            crate::regressor::loss_rmse(&val_preds, &val_labels).map_err(with_context)?;

        let lr_used = optimizer.learning_rate;
        if best.as_ref().is_none_or(|(_, _, _, b)| val_loss < *b) {
            best = Some((params.clone(), optimizer.clone(), epoch, val_loss));
        }
        optimizer.learning_rate = scheduler.update(val_loss);

        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            learning_rate: lr_used,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {}: train_rmse={:.6} val_rmse={:.6} lr={:.3e}",
            record.epoch,
            record.train_loss,
            record.val_loss,
            record.learning_rate
        );
        history.epochs.push(record);

        if stopper.update(val_loss) == Decision::Stop {
            log::info!("early stop after epoch {epoch}");
            break;
        }
    }

    let model = match best {
        Some((best_params, best_optimizer, best_epoch, best_val_loss)) => TrainedModel {
            params: best_params,
            optimizer: best_optimizer,
            config,
            best_val_loss,
            best_epoch,
        },
        None => TrainedModel {
            params,
            optimizer,
            config,
            best_val_loss: f64::INFINITY,
            best_epoch: 0,
        },
    };
    Ok((model, history))
}
