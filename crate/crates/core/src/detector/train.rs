use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{self, ModelInput};
use super::params::{HybridConfig, HybridParams, ParamGroup};
use super::{forward, gradients};
use crate::error::{Error, Result};
use crate::imaging::{self, ImageTensor, NormStats};
use crate::metrics::{auroc, ScoreSet};
use crate::transforms::{apply_condition, highpass_fft, Condition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_new: f64,
    pub lr_backbone: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lit_freeze_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_new: 2e-4,
            lr_backbone: 2e-5,
            weight_decay: 1e-4,
            max_epochs: 50,
            patience: 5,
            batch_size: 64,
            lit_freeze_epochs: 2,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.lr_new, self.lr_backbone, self.eps];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Contract("learning rates and eps must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Contract("weight_decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Contract("betas must lie in [0, 1)".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Contract("max_epochs and batch_size must be positive".into()));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::Contract(format!(
                "patience must be in 1..={} (max_epochs)",
                self.max_epochs
            )));
        }
        Ok(())
    }
}

/// AdamW with per-group step counters so a group that starts late (the
/// frozen trunk) gets its bias correction from its own first update.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: [u64; 2],
}

impl AdamW {
    pub fn new(n_params: usize, cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            steps: [0; 2],
        }
    }

    /// One update of the parameters in `ranges`, all sharing learning rate `lr`.
    pub fn step(
        &mut self,
        values: &mut [f64],
        grad: &[f64],
        ranges: &[std::ops::Range<usize>],
        group: ParamGroup,
        lr: f64,
    ) {
        let t = &mut self.steps[group as usize];
        *t += 1;
        let bc1 = 1.0 - self.beta1.powi(*t as i32);
        let bc2 = 1.0 - self.beta2.powi(*t as i32);
        for r in ranges {
            for i in r.clone() {
                let g = grad[i];
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let mhat = self.m[i] / bc1;
                let vhat = self.v[i] / bc2;
                values[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * values[i]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Stops once the metric has failed to strictly improve for `patience`
/// consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        let improved = self.best.is_none_or(|b| metric > b);
        if improved {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

/// Preprocessed model inputs with labels.
#[derive(Debug, Clone, Default)]
pub struct LabeledInputs {
    pub inputs: Vec<ModelInput>,
    pub labels: Vec<bool>,
}

impl LabeledInputs {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// A unit-range image with its id and label (`true` = AI).
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: String,
    pub label: bool,
    pub image: ImageTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
    pub trunk_frozen: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: HybridParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Resize to the model's input size, normalize and, when the frequency path
/// is on, high-pass filter.
pub fn prepare_input(img: &ImageTensor, cfg: &HybridConfig, stats: &NormStats) -> Result<ModelInput> {
    let sized;
    let img = if img.height == cfg.input_size && img.width == cfg.input_size {
        img
    } else {
        sized = imaging::resize_bicubic(img, cfg.input_size, cfg.input_size)?;
        &sized
    };
    let mut x = imaging::normalize(img, stats)?;
    if cfg.freq_enabled {
        x = highpass_fft(&x, cfg.freq_cutoff)?;
    }
    ModelInput::from_tensor(&x)
}

fn val_auroc(params: &HybridParams, val: &LabeledInputs) -> Result<f64> {
    let scores = val
        .inputs
        .iter()
        .map(|x| forward(x, params))
        .collect::<Result<Vec<_>>>()?;
    let set = ScoreSet::new(scores, val.labels.clone())?;
    auroc(&set).map_err(|e| Error::Training(format!("validation AUROC: {e}")))
}

/// Train from `HybridParams::init(cfg, tc.seed)` and return the checkpoint
/// with the best validation AUROC.
pub fn train(train: &LabeledInputs, val: &LabeledInputs, cfg: &HybridConfig, tc: &TrainConfig) -> Result<TrainOutcome> {
    tc.validate()?;
    let init = HybridParams::init(cfg, tc.seed)?;
    train_from(init, train, val, tc)
}

/// Train starting from given parameters.
pub fn train_from(
    mut params: HybridParams,
    train: &LabeledInputs,
    val: &LabeledInputs,
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    tc.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Training("train and validation splits must be non-empty".into()));
    }
    if train.labels.len() != train.len() || val.labels.len() != val.len() {
        return Err(Error::Training("inputs and labels differ in length".into()));
    }
    for x in train.inputs.iter().chain(&val.inputs) {
        x.check(&params.config)?;
    }

    let group_ranges = |g: ParamGroup| -> Vec<std::ops::Range<usize>> {
        params.layout.specs.iter().filter(|s| s.group == g).map(|s| s.range()).collect()
    };
    let trunk = group_ranges(ParamGroup::Trunk);
    let new = group_ranges(ParamGroup::New);

    let mut opt = AdamW::new(params.values.len(), tc);
    let mut stopper = EarlyStopping::new(tc.patience);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed_0f_ba7c4);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = params.clone();
    let mut history = Vec::new();

    for epoch in 1..=tc.max_epochs {
        let frozen = epoch <= tc.lit_freeze_epochs;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<(&ModelInput, bool)> =
                chunk.iter().map(|&i| (&train.inputs[i], train.labels[i])).collect();
            let (loss, grad) = gradients(&params, &batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!("non-finite loss or gradient in epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            opt.step(&mut params.values, &grad, &new, ParamGroup::New, tc.lr_new);
            if !frozen {
                opt.step(&mut params.values, &grad, &trunk, ParamGroup::Trunk, tc.lr_backbone);
            }
        }
        let metric = val_auroc(&params, val)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_auroc: metric,
            trunk_frozen: frozen,
        });
        let d = stopper.observe(epoch, metric);
        if d.improved {
            best = params.clone();
        }
        if d.stop {
            break;
        }
    }
    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch: stopper.best_epoch(),
    })
}

/// Score every image under every condition. Degradations act on the
/// unit-range image before preprocessing.
pub fn score_dataset(
    params: &HybridParams,
    images: &[LabeledImage],
    conditions: &[Condition],
    stats: &NormStats,
) -> Result<Vec<(Condition, ScoreSet)>> {
    let ids: Vec<String> = images.iter().map(|i| i.id.clone()).collect();
    let labels: Vec<bool> = images.iter().map(|i| i.label).collect();
    conditions
        .iter()
        .map(|cond| {
            let scores = images
                .iter()
                .map(|li| {
                    let degraded = apply_condition(&li.image, cond)?;
                    let x = prepare_input(&degraded, &params.config, stats)?;
                    Ok(super::sigmoid(model::trace_forward(params, &x)?.logit))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((*cond, ScoreSet::with_ids(scores, labels.clone(), ids.clone())?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_trace() {
        let seq = [0.7, 0.8, 0.8, 0.8, 0.8, 0.8, 0.8];
        let mut es = EarlyStopping::new(5);
        let mut stopped = None;
        for (i, &m) in seq.iter().enumerate() {
            if es.observe(i + 1, m).stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(7));
        assert_eq!(es.best_epoch(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { patience: 60, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { lr_new: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(2, &cfg);
        let mut v = vec![1.0, -1.0];
        opt.step(&mut v, &[0.5, -3.0], &[0..2], ParamGroup::New, 0.1);
        assert!((v[0] - 0.9).abs() < 1e-6);
        assert!((v[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let cfg = TrainConfig { weight_decay: 0.5, ..Default::default() };
        let mut opt = AdamW::new(1, &cfg);
        let mut v = vec![2.0];
        opt.step(&mut v, &[0.0], &[0..1], ParamGroup::New, 0.1);
        assert_eq!(v[0], 2.0 - 0.1 * 0.5 * 2.0);
    }
}
