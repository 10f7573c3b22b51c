//! Minibatch training with Adam, seeded augmentation and periodic checkpoints.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, CheckpointConfig};
use crate::config::{NetworkConfig, TrainConfig};
use crate::data::{build_step_sample, derive_seed, draw_augmentation, rng_for, TrainingShape};
use crate::error::{NetError, Result};
use crate::loss::{sample_loss, LossBreakdown};
use crate::model::init_params;
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::tape::{Grads, Tape};

/// Counter tag separating the epoch shuffles from per-step streams.
const SHUFFLE_STREAM: u64 = u64::MAX;
const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone)]
pub struct Trainer {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub config_hash: String,
    pub params: ParamStore<f32>,
    pub adam: Adam,
    pub step: u64,
}

/// Whether a training run should keep going after a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for periodic checkpoints and non-finite diagnostics.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub steps: u64,
    pub epochs: u64,
    pub last: LossBreakdown,
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Serialize)]
struct NonFiniteDump<'a> {
    step: u64,
    shapes: Vec<&'a str>,
    losses: Vec<LossBreakdown>,
    gradient_norms: Vec<(String, f64)>,
    parameter_norms: Vec<(String, f64)>,
}

impl Trainer {
    pub fn new(network: NetworkConfig, train: TrainConfig, config_hash: String) -> Result<Self> {
        network.validate()?;
        train.validate()?;
        let params = init_params(&network, derive_seed(train.seed, &[0x1217]))?;
        let adam = Adam::new(&params, train.learning_rate, train.beta1, train.beta2, train.adam_epsilon);
        Ok(Self {
            network,
            train,
            config_hash,
            params,
            adam,
            step: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let adam = ck.optimizer.unwrap_or_else(|| {
            let t = &ck.config.train;
            Adam::new(&ck.params, t.learning_rate, t.beta1, t.beta2, t.adam_epsilon)
        });
        Ok(Self {
            network: ck.config.network,
            train: ck.config.train,
            config_hash: ck.config.config_hash,
            params: ck.params,
            adam,
            step: ck.step,
        })
    }

    pub fn checkpoint(&self, epoch: u64) -> Checkpoint {
        Checkpoint {
            config: CheckpointConfig {
                network: self.network.clone(),
                train: self.train.clone(),
                config_hash: self.config_hash.clone(),
            },
            step: self.step,
            epoch,
            params: self.params.clone(),
            optimizer: Some(self.adam.clone()),
        }
    }

    /// One Adam update on the mean loss of `batch`. Per-sample gradients are
    /// summed in batch order so results are bit-reproducible.
    pub fn step_on(&mut self, batch: &[&TrainingShape], dump_dir: Option<&PathBuf>) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(NetError::EmptyShape("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grads = Grads::zeros_like(&self.params);
        let mut mean = LossBreakdown::default();
        let mut losses = Vec::with_capacity(batch.len());
        for (b, shape) in batch.iter().enumerate() {
            let mut rng = rng_for(self.train.seed, &[self.step, b as u64]);
            let aug = draw_augmentation(shape, &self.train, &mut rng);
            let sample = build_step_sample::<f32>(shape, &self.network, &self.train, &aug, &mut rng)?;
            let noise = derive_seed(self.train.seed, &[self.step, b as u64, NOISE_STREAM]);
            let mut tape = Tape::new(&self.params);
            let (loss, parts) = sample_loss(&mut tape, &self.network, &self.train.loss_weights, &sample, Some(noise))?;
            let g = tape.backward(loss);
            grads.accumulate(&g, scale as f32);
            mean.accumulate(&parts, scale);
            losses.push(parts);
        }
        if !mean.is_finite() || !grads.all_finite() {
            let detail = format!("{mean:?}");
            if let Some(dir) = dump_dir {
                self.dump_nonfinite(dir, batch, &losses, &grads);
            }
            return Err(NetError::NonFinite {
                step: self.step as usize,
                detail,
            });
        }
        self.adam.step(&mut self.params, &grads);
        self.step += 1;
        Ok(mean)
    }

    fn dump_nonfinite(&self, dir: &PathBuf, batch: &[&TrainingShape], losses: &[LossBreakdown], grads: &Grads<f32>) {
        let norms = |ms: &[crate::mat::Mat<f32>]| -> Vec<(String, f64)> {
            ms.iter()
                .enumerate()
                .map(|(i, m)| {
                    let n = m.data.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                    (self.params.name(i).to_string(), n)
                })
                .collect()
        };
        let dump = NonFiniteDump {
            step: self.step,
            shapes: batch.iter().map(|s| s.id.as_str()).collect(),
            losses: losses.to_vec(),
            gradient_norms: norms(&grads.params),
            parameter_norms: norms(self.params.values()),
        };
        let path = dir.join(format!("nonfinite_step_{}.json", self.step));
        let body = serde_json::to_string_pretty(&dump).unwrap_or_default();
        if let Err(e) = xgen_core::write_atomic(&path, |w| std::io::Write::write_all(w, body.as_bytes())) {
            log::error!("could not write {}: {e}", path.display());
        } else {
            log::error!("non-finite loss; diagnostics in {}", path.display());
        }
    }

    /// Shape indices of the batch used at `step`: each epoch visits every
    /// shape once in a seeded order.
    pub fn batch_indices(&self, shape_count: usize, step: u64) -> (u64, Vec<usize>) {
        let b = self.train.batch_size.min(shape_count).max(1);
        let per_epoch = shape_count.div_ceil(b) as u64;
        let epoch = step / per_epoch;
        let k = (step % per_epoch) as usize;
        let mut order: Vec<usize> = (0..shape_count).collect();
        order.shuffle(&mut rng_for(self.train.seed, &[SHUFFLE_STREAM, epoch]));
        let end = ((k + 1) * b).min(shape_count);
        (epoch, order[k * b..end].to_vec())
    }

    /// Trains until `max_steps` or until `on_step` asks to stop. Writes a
    /// checkpoint every `checkpoint_every_epochs` completed epochs.
    pub fn run(
        &mut self,
        shapes: &[TrainingShape],
        opts: &RunOptions,
        mut on_step: impl FnMut(&Trainer, &LossBreakdown) -> Control,
    ) -> Result<RunSummary> {
        if shapes.is_empty() {
            return Err(NetError::EmptyShape("no training shapes".into()));
        }
        if let Some(dir) = &opts.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
        }
        let b = self.train.batch_size.min(shapes.len()).max(1);
        let per_epoch = shapes.len().div_ceil(b) as u64;
        let mut last = LossBreakdown::default();
        let mut checkpoints = Vec::new();
        while self.step < self.train.max_steps as u64 {
            let (epoch, idx) = self.batch_indices(shapes.len(), self.step);
            let batch: Vec<&TrainingShape> = idx.iter().map(|&i| &shapes[i]).collect();
            last = self.step_on(&batch, opts.checkpoint_dir.as_ref())?;
            let finished_epoch = self.step % per_epoch == 0;
            let k = self.train.checkpoint_every_epochs as u64;
            if finished_epoch && k > 0 && (epoch + 1) % k == 0 {
                if let Some(dir) = &opts.checkpoint_dir {
                    let path = dir.join(format!("epoch_{:05}.xgck", epoch + 1));
                    self.checkpoint(epoch + 1).write(&path)?;
                    checkpoints.push(path);
                }
            }
            if on_step(self, &last) == Control::Stop {
                break;
            }
        }
        Ok(RunSummary {
            steps: self.step,
            epochs: self.step / per_epoch,
            last,
            checkpoints,
        })
    }
}
