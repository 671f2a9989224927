//! Gated dual-branch detector at desk scale.
//!
//! A small conv-ReLU-pool trunk and a small patch-attention trunk each produce
//! a feature vector; both are linearly projected into a shared `d`-wide space.
//! A two-layer MLP on the concatenated projections yields per-image softmax
//! weights `[w_cnn, w_vit]`, the fused embedding is their convex combination,
//! and a single-logit sigmoid head scores it. `cnn_only` and `vit_only` modes
//! bypass the gate and feed one projection straight to the head.

mod layers;
mod model;
mod params;
mod train;

pub use model::{fuse, gate_from_logits, project, GateOutput, ModelInput};
pub use params::{
    BranchMode, Checkpoint, HybridConfig, HybridParams, Init, Layout, ParamGroup, ParamSpec,
    CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use train::{
    prepare_input, score_dataset, train, train_from, AdamW, EarlyStopping, EpochRecord, LabeledImage,
    LabeledInputs, StopDecision, TrainConfig, TrainOutcome,
};

use crate::error::{Error, Result};

/// Pooled CNN-trunk features `h_cnn`.
pub fn cnn_branch(x: &ModelInput, params: &HybridParams) -> Result<Vec<f64>> {
    x.check(&params.config)?;
    if !params.config.branch_mode.uses_cnn() {
        return Err(Error::Model("model has no CNN branch".into()));
    }
    Ok(model::cnn_forward(params, &x.data).feat)
}

/// Token-mean-pooled attention-trunk features `h_vit`.
pub fn vit_branch(x: &ModelInput, params: &HybridParams) -> Result<Vec<f64>> {
    x.check(&params.config)?;
    if !params.config.branch_mode.uses_vit() {
        return Err(Error::Model("model has no attention branch".into()));
    }
    Ok(model::vit_forward(params, &x.data).feat)
}

/// Softmax gate on `[z_cnn; z_vit]` using the model's gate MLP.
pub fn gate(z_cnn: &[f64], z_vit: &[f64], params: &HybridParams) -> Result<GateOutput> {
    let d = params.config.embed_dim;
    if z_cnn.len() != d || z_vit.len() != d {
        return Err(Error::Model(format!("gate expects two {d}-wide embeddings")));
    }
    let g = params
        .layout
        .gate
        .as_ref()
        .ok_or_else(|| Error::Model("gate exists only in hybrid mode".into()))?;
    let input: Vec<f64> = z_cnn.iter().chain(z_vit).copied().collect();
    let hidden = layers::linear_forward(&input, 1, 2 * d, params.slot(g.w1), Some(params.slot(g.b1)), params.config.gate_hidden);
    let act: Vec<f64> = hidden.iter().map(|&v| layers::gelu(v)).collect();
    let logits = layers::linear_forward(&act, 1, params.config.gate_hidden, params.slot(g.w2), Some(params.slot(g.b2)), 2);
    Ok(gate_from_logits([logits[0], logits[1]]))
}

/// Pre-sigmoid classifier output.
pub fn forward_logit(x: &ModelInput, params: &HybridParams) -> Result<f64> {
    Ok(model::trace_forward(params, x)?.logit)
}

/// Probability that `x` is AI-generated.
pub fn forward(x: &ModelInput, params: &HybridParams) -> Result<f64> {
    Ok(sigmoid(forward_logit(x, params)?))
}

/// Gate weights the hybrid model assigns to `x` (`None` outside hybrid mode).
pub fn gate_weights(x: &ModelInput, params: &HybridParams) -> Result<Option<GateOutput>> {
    Ok(model::trace_forward(params, x)?.gate_weights())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy from logits.
pub fn bce_with_logits(logits: &[f64], labels: &[bool]) -> f64 {
    let n = logits.len().max(1) as f64;
    logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| softplus(z) - if y { z } else { 0.0 })
        .sum::<f64>()
        / n
}

/// Mean binary cross-entropy of probabilities in `(0, 1)`, evaluated through
/// their logits.
pub fn loss(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Model("loss needs equal, non-empty scores and labels".into()));
    }
    if scores.iter().any(|&s| !(s > 0.0 && s < 1.0)) {
        return Err(Error::Model("scores must lie strictly inside (0, 1)".into()));
    }
    let logits: Vec<f64> = scores.iter().map(|&s| s.ln() - (-s).ln_1p()).collect();
    Ok(bce_with_logits(&logits, labels))
}

/// Mean loss over `batch` and its exact gradient with respect to every
/// parameter, laid out like `params.values`.
pub fn gradients(params: &HybridParams, batch: &[(&ModelInput, bool)]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let mut grad = vec![0.0; params.values.len()];
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (x, y) in batch {
        let t = model::trace_forward(params, x)?;
        let target = if *y { 1.0 } else { 0.0 };
        total += softplus(t.logit) - target * t.logit;
        model::backward(params, &t, (sigmoid(t.logit) - target) * scale, &mut grad);
    }
    Ok((total * scale, grad))
}
