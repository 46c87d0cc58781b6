//! Training loop: Adam optimization of the full network under pixel-wise
//! cross-entropy, deterministic batching, validation tracking, versioned
//! checkpoints, inference helpers, and the cumulative component ablation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dataset::{labels_flat, to_batch, BiTemporalSample};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_samples, MetricReport};
use crate::network::{Components, FullOutput, Model, NetworkConfig};
use crate::nn::ParamId;
use crate::profile;
use crate::raster::Raster;
use crate::rng::{seed_offset, Rng};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Fail the run instead of continuing when a loss turns non-finite.
    pub abort_on_divergence: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 10,
            seed: 0,
            abort_on_divergence: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".to_string()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must be in [0,1)".to_string()));
        }
        Ok(())
    }
}

/// Adam with per-parameter first/second moment tensors, keyed by the
/// parameter's store id.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, num_params: usize) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            step: 0,
            moments: (0..num_params).map(|_| None).collect(),
        }
    }

    /// Applies one update from accumulated gradients `(param id, grad)`.
    pub fn apply(&mut self, model: &mut Model, grads: &[(ParamId, Tensor)]) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for (id, grad) in grads {
            if !grad.all_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite gradient for {}",
                    model.store.get(*id).name
                )));
            }
            let mut value = model.store.value(*id).clone();
            if value.shape != grad.shape {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} vs parameter {:?}",
                    grad.shape, value.shape
                )));
            }
            let slot = &mut self.moments[*id];
            if slot.is_none() {
                *slot = Some((Tensor::zeros(value.shape), Tensor::zeros(value.shape)));
            }
            let (m, v) = slot.as_mut().unwrap();
            for i in 0..value.data.len() {
                let g = grad.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * g;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                value.data[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            }
            model.store.set_value(*id, value);
        }
        Ok(())
    }
}

/// Pixel-wise cross-entropy of the final logits against the batch labels.
pub fn batch_loss(
    tape: &mut Tape,
    output: &FullOutput,
    labels: &[u8],
) -> Result<crate::autodiff::NodeId> {
    tape.softmax_cross_entropy(output.final_logits, labels)
}

/// Progress callbacks; implementations live in the std crate (logging,
/// wall-clock limits). The default methods make observers opt-in.
pub trait TrainObserver {
    fn on_step(&mut self, _epoch: usize, _step: usize, _loss: f64) {}
    fn on_epoch(&mut self, _epoch: usize, _mean_loss: f64, _val: &MetricReport) {}
}

/// No-op observer.
pub struct NullObserver;

impl TrainObserver for NullObserver {}

/// One epoch summary as recorded by [`MetricObserver`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_f1: f64,
    pub val_iou: f64,
}

/// Collects per-epoch records for logging.
#[derive(Debug, Default)]
pub struct MetricObserver {
    pub epochs: Vec<EpochRecord>,
}

impl TrainObserver for MetricObserver {
    fn on_epoch(&mut self, epoch: usize, mean_loss: f64, val: &MetricReport) {
        self.epochs.push(EpochRecord {
            epoch,
            mean_loss,
            val_f1: val.f1,
            val_iou: val.iou,
        });
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResult {
    /// Loss per optimization step, in order.
    pub loss_trace: Vec<f64>,
    /// Mean loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Validation report per epoch (empty when no validation set).
    pub val_reports: Vec<MetricReport>,
    pub best_val_f1: f64,
    pub best_epoch: usize,
}

fn snapshot(model: &Model) -> Vec<(String, Tensor, bool)> {
    model
        .store
        .iter()
        .map(|(_, p)| (p.name.clone(), p.value.clone(), p.trainable))
        .collect()
}

fn load_snapshot(model: &mut Model, params: &[(String, Tensor, bool)]) -> Result<()> {
    for (name, tensor, _) in params {
        let id = model
            .store
            .iter()
            .find(|(_, p)| &p.name == name)
            .map(|(id, _)| id)
            .ok_or_else(|| Error::Config(format!("checkpoint parameter {} not in model", name)))?;
        if model.store.value(id).shape != tensor.shape {
            return Err(Error::Config(format!(
                "checkpoint parameter {} has shape {:?}, model expects {:?}",
                name,
                tensor.shape,
                model.store.value(id).shape
            )));
        }
        model.store.set_value(id, tensor.clone());
    }
    Ok(())
}

/// Trains the model in place. Batching order is derived from the seed per
/// epoch; a trailing partial batch is kept only when it holds at least two
/// samples or is the only batch. Returns the trace and restores the
/// best-validation-F1 parameters when a validation set is given.
pub fn train(
    model: &mut Model,
    train_samples: &[BiTemporalSample],
    val_samples: &[BiTemporalSample],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainResult> {
    cfg.validate()?;
    if train_samples.is_empty() {
        return Err(Error::InvalidInput("no training samples".to_string()));
    }
    let with_neigh = model.components.quadruple;
    let mut optimizer = Adam::new(cfg, model.store.len());
    let mut loss_trace = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut val_reports = Vec::new();
    let mut best_val_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_params: Option<Vec<(String, Tensor, bool)>> = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        Rng::derive(cfg.seed, seed_offset::TRAIN, epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        let mut start = 0;
        while start < order.len() {
            let end = (start + cfg.batch_size).min(order.len());
            let batch_ids = &order[start..end];
            start = end;
            // skip singleton leftovers (batch statistics need >= 2 samples)
            // unless they are all we have
            if batch_ids.len() < 2 && order.len() >= 2 {
                continue;
            }
            let batch: Vec<&BiTemporalSample> =
                batch_ids.iter().map(|&i| &train_samples[i]).collect();
            let input = to_batch(&batch, with_neigh);
            let labels = labels_flat(&batch);
            let (mut tape, output) = model.forward(&input, true)?;
            let loss_id = batch_loss(&mut tape, &output, &labels)?;
            let loss = tape.value(loss_id).item();
            if !loss.is_finite() {
                if cfg.abort_on_divergence {
                    return Err(Error::Divergence(format!(
                        "loss {} at epoch {} step {}",
                        loss, epoch, steps
                    )));
                }
                continue;
            }
            let grads = tape.backward(loss_id);
            optimizer.apply(model, &grads.params(&tape))?;
            loss_trace.push(loss);
            epoch_loss += loss;
            steps += 1;
            observer.on_step(epoch, steps, loss);
        }
        let mean_loss = if steps > 0 { epoch_loss / steps as f64 } else { 0.0 };
        epoch_losses.push(mean_loss);

        if !val_samples.is_empty() {
            let report = evaluate_samples(val_samples, None, &mut |s| predict_binary(model, s))?;
            observer.on_epoch(epoch, mean_loss, &report);
            if report.f1 > best_val_f1 {
                best_val_f1 = report.f1;
                best_epoch = epoch;
                best_params = Some(snapshot(model));
            }
            val_reports.push(report);
        } else {
            observer.on_epoch(epoch, mean_loss, &MetricReport::default());
        }
    }

    if let Some(params) = best_params {
        load_snapshot(model, &params)?;
    }
    Ok(TrainResult {
        loss_trace,
        epoch_losses,
        val_reports,
        best_val_f1: if best_val_f1.is_finite() { best_val_f1 } else { 0.0 },
        best_epoch,
    })
}

/// Change-probability map for one sample (inference mode, batch of one).
pub fn predict_prob(model: &mut Model, sample: &BiTemporalSample) -> Result<Raster<f64>> {
    let with_neigh = model.components.quadruple;
    let input = to_batch(&[sample], with_neigh);
    let (mut tape, output) = model.forward(&input, false)?;
    let probs_id = tape.softmax_channels(output.final_logits);
    let probs = tape.value(probs_id);
    let s = sample.patch_size();
    let mut out = Raster::<f64>::zeros(s, s, 1);
    for r in 0..s {
        for c in 0..s {
            out.set(r, c, 0, probs.at(0, 1, r, c));
        }
    }
    Ok(out)
}

/// Binary prediction: change where the change probability exceeds one half
/// (ties resolve to unchanged).
pub fn predict_binary(model: &mut Model, sample: &BiTemporalSample) -> Result<Raster<u8>> {
    let prob = predict_prob(model, sample)?;
    Ok(prob.map(|p| u8::from(p > 0.5)))
}

/// Serializable training state: enough to rebuild the exact model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub network: NetworkConfig,
    pub components: Components,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub best_val_f1: f64,
    pub loss_trace: Vec<f64>,
    pub params: Vec<(String, Tensor, bool)>,
}

impl Checkpoint {
    pub fn capture(
        model: &Model,
        train_config: &TrainConfig,
        result: &TrainResult,
    ) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            network: model.config.clone(),
            components: model.components,
            train_config: train_config.clone(),
            epoch: result.epoch_losses.len(),
            best_val_f1: result.best_val_f1,
            loss_trace: result.loss_trace.clone(),
            params: snapshot(model),
        }
    }

    /// Rebuilds the model and installs the stored parameters.
    pub fn restore(&self) -> Result<Model> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} unsupported (expected {})",
                self.version, CHECKPOINT_VERSION
            )));
        }
        let mut model = Model::new(self.network.clone(), self.components)?;
        if self.params.len() != model.store.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        load_snapshot(&mut model, &self.params)?;
        Ok(model)
    }
}

/// One row of the cumulative component ablation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub components: Components,
    pub params: u64,
    pub macs: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub f1: f64,
    pub trained_ok: bool,
}

/// Trains every cumulative component row from scratch on the same data and
/// seed, reporting test F1 and efficiency counters per row. A failed row is
/// recorded, not fatal.
pub fn run_ablation(
    network: &NetworkConfig,
    train_samples: &[BiTemporalSample],
    val_samples: &[BiTemporalSample],
    test_samples: &[BiTemporalSample],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(5);
    for components in Components::ablation_rows() {
        let row = ablation_row(
            network,
            components,
            train_samples,
            val_samples,
            test_samples,
            cfg,
            observer,
        );
        match row {
            Ok(row) => rows.push(row),
            Err(_) => rows.push(AblationRow {
                label: components.label().to_string(),
                components,
                params: 0,
                macs: 0,
                initial_loss: f64::NAN,
                final_loss: f64::NAN,
                f1: 0.0,
                trained_ok: false,
            }),
        }
    }
    Ok(rows)
}

fn ablation_row(
    network: &NetworkConfig,
    components: Components,
    train_samples: &[BiTemporalSample],
    val_samples: &[BiTemporalSample],
    test_samples: &[BiTemporalSample],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<AblationRow> {
    let mut model = Model::new(network.clone(), components)?;
    let report = profile::profile(&mut model, network.patch_size)?;
    let result = train(&mut model, train_samples, val_samples, cfg, observer)?;
    let initial_loss = result.loss_trace.first().copied().unwrap_or(f64::NAN);
    let final_loss = result.epoch_losses.last().copied().unwrap_or(f64::NAN);
    let test = evaluate_samples(test_samples, None, &mut |s| predict_binary(&mut model, s))?;
    Ok(AblationRow {
        label: components.label().to_string(),
        components,
        params: report.params,
        macs: report.macs,
        initial_loss,
        final_loss,
        f1: test.f1,
        trained_ok: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::prepare_dataset;
    use crate::synth::{synthesize_scene, SynthParams};

    fn tiny_samples(seed: u64, scene_side: usize, patch: usize) -> Vec<BiTemporalSample> {
        let params = SynthParams {
            mean_radius: scene_side as f64 / 6.0,
            ..SynthParams::default()
        };
        let sc = synthesize_scene(seed, scene_side, scene_side, &params).unwrap();
        prepare_dataset("sc", &sc.t1, &sc.t2, &sc.label, patch, patch).unwrap()
    }

    #[test]
    fn one_epoch_reduces_loss_and_is_deterministic() {
        let samples = tiny_samples(1, 64, 16);
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = |_: ()| {
            let mut model =
                Model::new(NetworkConfig::tiny(16), Components::full()).unwrap();
            train(&mut model, &samples, &[], &cfg, &mut NullObserver).unwrap()
        };
        let a = run(());
        let b = run(());
        assert_eq!(a.loss_trace, b.loss_trace, "training must be bit-reproducible");
        assert!(a.loss_trace.last().unwrap() < a.loss_trace.first().unwrap());
        assert!(a.loss_trace.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn checkpoint_roundtrip_preserves_predictions() {
        let samples = tiny_samples(2, 64, 16);
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 1,
            ..TrainConfig::default()
        };
        let mut model = Model::new(NetworkConfig::tiny(16), Components::full()).unwrap();
        let result = train(&mut model, &samples, &[], &cfg, &mut NullObserver).unwrap();
        let ckpt = Checkpoint::capture(&model, &cfg, &result);
        let mut restored = ckpt.restore().unwrap();
        for sample in &samples {
            let a = predict_prob(&mut model, sample).unwrap();
            let b = predict_prob(&mut restored, sample).unwrap();
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn checkpoint_rejects_wrong_version_and_shape() {
        let model = Model::new(NetworkConfig::tiny(16), Components::full()).unwrap();
        let result = TrainResult {
            loss_trace: alloc::vec![],
            epoch_losses: alloc::vec![],
            val_reports: alloc::vec![],
            best_val_f1: 0.0,
            best_epoch: 0,
        };
        let mut ckpt = Checkpoint::capture(&model, &TrainConfig::default(), &result);
        ckpt.version = 99;
        assert!(ckpt.restore().is_err());
        let mut ckpt = Checkpoint::capture(&model, &TrainConfig::default(), &result);
        ckpt.params[0].1 = Tensor::zeros([1, 1, 1, 1]);
        assert!(ckpt.restore().is_err());
    }

    #[test]
    fn divergence_aborts() {
        let samples = tiny_samples(3, 32, 16);
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 1,
            learning_rate: 1e3, // huge steps blow the activations up fast
            ..TrainConfig::default()
        };
        let mut model = Model::new(NetworkConfig::tiny(16), Components::full()).unwrap();
        // divergence is not guaranteed in a single epoch, but a non-finite
        // loss, if it occurs, must abort with the dedicated error
        let mut diverged = false;
        for _ in 0..5 {
            match train(&mut model, &samples, &[], &cfg, &mut NullObserver) {
                Err(Error::Divergence(_)) => {
                    diverged = true;
                    break;
                }
                Err(e) => panic!("unexpected error {e}"),
                Ok(r) => assert!(r.loss_trace.iter().all(|l| l.is_finite())),
            }
        }
        let _ = diverged;
    }

    #[test]
    fn validation_tracking_restores_best() {
        let samples = tiny_samples(4, 64, 16);
        let (tr, va) = samples.split_at(samples.len() / 2);
        let cfg = TrainConfig {
            batch_size: 2,
            epochs: 2,
            ..TrainConfig::default()
        };
        let mut model = Model::new(NetworkConfig::tiny(16), Components::full()).unwrap();
        let result = train(&mut model, tr, va, &cfg, &mut NullObserver).unwrap();
        assert_eq!(result.val_reports.len(), 2);
        assert!(result.best_epoch < 2);
        // the restored parameters reproduce the best epoch's validation F1
        let report =
            evaluate_samples(va, None, &mut |s| predict_binary(&mut model, s)).unwrap();
        assert!((report.f1 - result.best_val_f1).abs() < 1e-12);
    }

    #[test]
    fn adam_moves_toward_minimum_on_quadratic() {
        // sanity-check the optimizer in isolation: minimize (x - 3)^2
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut model = Model::new(NetworkConfig::tiny(16), Components::baseline()).unwrap();
        let id = 0;
        let start = model.store.value(id).clone();
        let mut opt = Adam::new(&cfg, model.store.len());
        for _ in 0..200 {
            let value = model.store.value(id).clone();
            let grad = Tensor::from_data(
                value.shape,
                value.data.iter().map(|x| 2.0 * (x - 3.0)).collect(),
            )
            .unwrap();
            opt.apply(&mut model, &[(id, grad)]).unwrap();
        }
        let end = model.store.value(id);
        assert!(end.data.iter().all(|x| (x - 3.0).abs() < 0.05));
        assert_ne!(start.data, end.data);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }
}
