//! Forward pass with cached activations and the matching exact backward pass.

use super::layers::{self, AttnGrads, AttnWeights};
use super::params::{BlockSlots, BranchMode, HybridConfig, HybridParams, Slot};
use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, CHANNELS};

/// Model input as channel-major planes `[3, size, size]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub size: usize,
    pub data: Vec<f64>,
}

impl ModelInput {
    pub fn from_tensor(img: &ImageTensor) -> Result<Self> {
        if img.height != img.width {
            return Err(Error::Model(format!(
                "model input must be square, got {}x{}",
                img.height, img.width
            )));
        }
        let plane = img.height * img.width;
        let mut data = vec![0.0; CHANNELS * plane];
        for (i, px) in img.data.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                data[c * plane + i] = px[c];
            }
        }
        Ok(Self {
            size: img.height,
            data,
        })
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; CHANNELS * size * size],
        }
    }

    pub(crate) fn check(&self, cfg: &HybridConfig) -> Result<()> {
        if self.size != cfg.input_size || self.data.len() != cfg.input_len() {
            return Err(Error::Model(format!(
                "input is {}x{} but the model expects {}x{}",
                self.size, self.size, cfg.input_size, cfg.input_size
            )));
        }
        Ok(())
    }
}

/// Per-image fusion weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateOutput {
    pub w_cnn: f64,
    pub w_vit: f64,
}

struct StageTrace {
    input: Vec<f64>,
    pre: Vec<f64>,
    size: usize,
}

pub(crate) struct CnnTrace {
    stages: Vec<StageTrace>,
    last: Vec<f64>,
    last_size: usize,
    pub(crate) feat: Vec<f64>,
}

struct BlockTrace {
    x_in: Vec<f64>,
    ln1: (Vec<f64>, Vec<f64>, Vec<f64>),
    attn: layers::AttnCache,
    ln2: (Vec<f64>, Vec<f64>, Vec<f64>),
    mlp_pre: Vec<f64>,
    mlp_act: Vec<f64>,
}

pub(crate) struct VitTrace {
    patches: Vec<f64>,
    blocks: Vec<BlockTrace>,
    pub(crate) feat: Vec<f64>,
}

struct GateTrace {
    input: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    weights: GateOutput,
}

/// Everything the backward pass needs from one forward pass.
pub(crate) struct Trace {
    cnn: Option<CnnTrace>,
    vit: Option<VitTrace>,
    z_cnn: Option<Vec<f64>>,
    z_vit: Option<Vec<f64>>,
    gate: Option<GateTrace>,
    fused: Vec<f64>,
    pub(crate) logit: f64,
}

pub(crate) fn cnn_forward(p: &HybridParams, x: &[f64]) -> CnnTrace {
    let mut size = p.config.input_size;
    let mut cur = x.to_vec();
    let mut stages = Vec::with_capacity(p.layout.convs.len());
    for conv in &p.layout.convs {
        let pre = layers::conv3x3_forward(
            &cur,
            conv.cin,
            size,
            size,
            p.slot(conv.weight),
            p.slot(conv.bias),
            conv.cout,
        );
        let act = layers::relu_forward(&pre);
        let pooled = layers::avgpool2_forward(&act, conv.cout, size, size);
        stages.push(StageTrace {
            input: cur,
            pre,
            size,
        });
        cur = pooled;
        size /= 2;
    }
    let c = p.config.cnn_dim();
    let feat = layers::mean_pool(&cur, c, size * size);
    CnnTrace {
        stages,
        last: cur,
        last_size: size,
        feat,
    }
}

fn cnn_backward(p: &HybridParams, t: &CnnTrace, dfeat: &[f64], grad: &mut [f64]) {
    let c = p.config.cnn_dim();
    debug_assert_eq!(t.last.len(), c * t.last_size * t.last_size);
    let mut d = layers::mean_pool_backward(dfeat, c, t.last_size * t.last_size);
    for (i, (conv, st)) in p.layout.convs.iter().zip(&t.stages).enumerate().rev() {
        let dact = layers::avgpool2_backward(&d, conv.cout, st.size, st.size);
        let dpre = layers::relu_backward(&st.pre, &dact);
        let mut dinput = if i > 0 {
            Some(vec![0.0; st.input.len()])
        } else {
            None
        };
        let (dw, db) = two_mut(grad, conv.weight, conv.bias);
        layers::conv3x3_backward(
            &st.input,
            conv.cin,
            st.size,
            st.size,
            p.slot(conv.weight),
            conv.cout,
            &dpre,
            dinput.as_deref_mut(),
            dw,
            db,
        );
        if let Some(di) = dinput {
            d = di;
        }
    }
}

/// Split patches out of a `[3, s, s]` input; each patch is flattened
/// channel-major, patches ordered row-major over the grid.
pub(crate) fn patchify(x: &[f64], size: usize, patch: usize) -> Vec<f64> {
    let g = size / patch;
    let pd = CHANNELS * patch * patch;
    let mut out = vec![0.0; g * g * pd];
    for gy in 0..g {
        for gx in 0..g {
            let base = (gy * g + gx) * pd;
            for c in 0..CHANNELS {
                for py in 0..patch {
                    for px in 0..patch {
                        out[base + (c * patch + py) * patch + px] =
                            x[(c * size + gy * patch + py) * size + gx * patch + px];
                    }
                }
            }
        }
    }
    out
}

fn attn_weights<'a>(p: &'a HybridParams, b: &BlockSlots) -> AttnWeights<'a> {
    AttnWeights {
        wq: p.slot(b.wq),
        wk: p.slot(b.wk),
        wv: p.slot(b.wv),
        wo: p.slot(b.wo),
        bo: p.slot(b.bo),
    }
}

pub(crate) fn vit_forward(p: &HybridParams, x: &[f64]) -> VitTrace {
    let cfg = &p.config;
    let vs = p.layout.vit.as_ref().expect("vit branch present");
    let n = cfg.n_patches();
    let dv = cfg.vit_dim;
    let hid = cfg.mlp_hidden;
    let patches = patchify(x, cfg.input_size, cfg.patch_size);
    let mut t = layers::linear_forward(&patches, n, cfg.patch_dim(), p.slot(vs.embed_w), Some(p.slot(vs.embed_b)), dv);
    for (a, b) in t.iter_mut().zip(p.slot(vs.pos)) {
        *a += b;
    }
    let mut blocks = Vec::with_capacity(vs.blocks.len());
    for b in &vs.blocks {
        let ln1 = layers::layernorm_forward(&t, n, dv, p.slot(b.ln1_gamma), p.slot(b.ln1_beta));
        let (attn_out, attn) = layers::attention_forward(&ln1.0, n, dv, cfg.vit_heads, &attn_weights(p, b));
        let x_mid: Vec<f64> = t.iter().zip(&attn_out).map(|(a, b)| a + b).collect();
        let ln2 = layers::layernorm_forward(&x_mid, n, dv, p.slot(b.ln2_gamma), p.slot(b.ln2_beta));
        let mlp_pre = layers::linear_forward(&ln2.0, n, dv, p.slot(b.w1), Some(p.slot(b.b1)), hid);
        let mlp_act: Vec<f64> = mlp_pre.iter().map(|&v| layers::gelu(v)).collect();
        let mlp_out = layers::linear_forward(&mlp_act, n, hid, p.slot(b.w2), Some(p.slot(b.b2)), dv);
        let x_out: Vec<f64> = x_mid.iter().zip(&mlp_out).map(|(a, b)| a + b).collect();
        blocks.push(BlockTrace {
            x_in: std::mem::replace(&mut t, x_out),
            ln1,
            attn,
            ln2,
            mlp_pre,
            mlp_act,
        });
    }
    // Token mean-pool.
    let mut feat = vec![0.0; dv];
    for row in t.chunks_exact(dv) {
        for (f, v) in feat.iter_mut().zip(row) {
            *f += v;
        }
    }
    for f in &mut feat {
        *f /= n as f64;
    }
    VitTrace {
        patches,
        blocks,
        feat,
    }
}

fn vit_backward(p: &HybridParams, t: &VitTrace, dfeat: &[f64], grad: &mut [f64]) {
    let cfg = &p.config;
    let vs = p.layout.vit.as_ref().expect("vit branch present");
    let n = cfg.n_patches();
    let dv = cfg.vit_dim;
    let hid = cfg.mlp_hidden;
    let mut dt = vec![0.0; n * dv];
    for row in dt.chunks_exact_mut(dv) {
        for (d, g) in row.iter_mut().zip(dfeat) {
            *d = g / n as f64;
        }
    }
    for (b, bt) in vs.blocks.iter().zip(&t.blocks).rev() {
        // x_out = x_mid + mlp(ln2(x_mid))
        let mut dx_mid = dt.clone();
        let mut dact = vec![0.0; n * hid];
        {
            let (dw2, db2) = two_mut(grad, b.w2, b.b2);
            layers::linear_backward(&bt.mlp_act, n, hid, p.slot(b.w2), dv, &dt, Some(&mut dact), dw2, Some(db2));
        }
        let dpre: Vec<f64> = dact
            .iter()
            .zip(&bt.mlp_pre)
            .map(|(g, &x)| g * layers::gelu_grad(x))
            .collect();
        let mut dln2 = vec![0.0; n * dv];
        {
            let (dw1, db1) = two_mut(grad, b.w1, b.b1);
            layers::linear_backward(&bt.ln2.0, n, dv, p.slot(b.w1), hid, &dpre, Some(&mut dln2), dw1, Some(db1));
        }
        {
            let (dg, dbeta) = two_mut(grad, b.ln2_gamma, b.ln2_beta);
            layers::layernorm_backward(&bt.ln2.1, &bt.ln2.2, n, dv, p.slot(b.ln2_gamma), &dln2, &mut dx_mid, dg, dbeta);
        }
        // x_mid = x_in + attn(ln1(x_in))
        let mut dx_in = dx_mid.clone();
        let mut dln1 = vec![0.0; n * dv];
        {
            let [wq, wk, wv, wo, bo] = five_mut(grad, [b.wq, b.wk, b.wv, b.wo, b.bo]);
            layers::attention_backward(
                &bt.ln1.0,
                n,
                dv,
                cfg.vit_heads,
                &attn_weights(p, b),
                &bt.attn,
                &dx_mid,
                &mut dln1,
                AttnGrads { wq, wk, wv, wo, bo },
            );
        }
        {
            let (dg, dbeta) = two_mut(grad, b.ln1_gamma, b.ln1_beta);
            layers::layernorm_backward(&bt.ln1.1, &bt.ln1.2, n, dv, p.slot(b.ln1_gamma), &dln1, &mut dx_in, dg, dbeta);
        }
        debug_assert_eq!(bt.x_in.len(), dx_in.len());
        dt = dx_in;
    }
    for (g, d) in grad[vs.pos.range()].iter_mut().zip(&dt) {
        *g += d;
    }
    let (dw, db) = two_mut(grad, vs.embed_w, vs.embed_b);
    layers::linear_backward(&t.patches, n, cfg.patch_dim(), p.slot(vs.embed_w), dv, &dt, None, dw, Some(db));
}

/// Two disjoint mutable views into the flat gradient vector.
fn two_mut(buf: &mut [f64], a: Slot, b: Slot) -> (&mut [f64], &mut [f64]) {
    assert!(a.offset + a.len <= b.offset, "slots must be ordered and disjoint");
    let (left, right) = buf.split_at_mut(b.offset);
    (&mut left[a.range()], &mut right[..b.len])
}

fn five_mut(buf: &mut [f64], slots: [Slot; 5]) -> [&mut [f64]; 5] {
    let mut rest = buf;
    let mut consumed = 0;
    let mut out: Vec<&mut [f64]> = Vec::with_capacity(5);
    for s in slots {
        assert!(s.offset >= consumed, "slots must be ordered and disjoint");
        let tail = std::mem::take(&mut rest);
        let (_, tail) = tail.split_at_mut(s.offset - consumed);
        let (mine, tail) = tail.split_at_mut(s.len);
        out.push(mine);
        rest = tail;
        consumed = s.offset + s.len;
    }
    out.try_into().unwrap_or_else(|_| unreachable!())
}

/// `z = P h` for a row-major `rows x h.len()` matrix `P`.
pub fn project(h: &[f64], proj: &[f64], rows: usize) -> Result<Vec<f64>> {
    if rows == 0 || proj.len() != rows * h.len() {
        return Err(Error::Model(format!(
            "projection of {} values by a {}-element matrix with {rows} rows",
            h.len(),
            proj.len()
        )));
    }
    Ok(layers::linear_forward(h, 1, h.len(), proj, None, rows))
}

pub fn gate_from_logits(logits: [f64; 2]) -> GateOutput {
    let w = layers::softmax(&logits);
    GateOutput {
        w_cnn: w[0],
        w_vit: w[1],
    }
}

/// Convex combination `w_cnn z_cnn + w_vit z_vit`.
pub fn fuse(z_cnn: &[f64], z_vit: &[f64], w: GateOutput) -> Result<Vec<f64>> {
    if z_cnn.len() != z_vit.len() {
        return Err(Error::Model("fused embeddings must have equal width".into()));
    }
    Ok(z_cnn
        .iter()
        .zip(z_vit)
        .map(|(a, b)| w.w_cnn * a + w.w_vit * b)
        .collect())
}

fn gate_forward(p: &HybridParams, z_cnn: &[f64], z_vit: &[f64]) -> GateTrace {
    let g = p.layout.gate.as_ref().expect("gate present in hybrid mode");
    let gh = p.config.gate_hidden;
    let input: Vec<f64> = z_cnn.iter().chain(z_vit).copied().collect();
    let pre = layers::linear_forward(&input, 1, input.len(), p.slot(g.w1), Some(p.slot(g.b1)), gh);
    let act: Vec<f64> = pre.iter().map(|&v| layers::gelu(v)).collect();
    let logits = layers::linear_forward(&act, 1, gh, p.slot(g.w2), Some(p.slot(g.b2)), 2);
    GateTrace {
        input,
        pre,
        act,
        weights: gate_from_logits([logits[0], logits[1]]),
    }
}

pub(crate) fn trace_forward(p: &HybridParams, x: &ModelInput) -> Result<Trace> {
    x.check(&p.config)?;
    let mode = p.config.branch_mode;
    let d = p.config.embed_dim;
    let cnn = mode.uses_cnn().then(|| cnn_forward(p, &x.data));
    let vit = mode.uses_vit().then(|| vit_forward(p, &x.data));
    let z_cnn = match (&cnn, p.layout.proj_cnn) {
        (Some(t), Some(s)) => Some(project(&t.feat, p.slot(s), d)?),
        _ => None,
    };
    let z_vit = match (&vit, p.layout.proj_vit) {
        (Some(t), Some(s)) => Some(project(&t.feat, p.slot(s), d)?),
        _ => None,
    };
    let (gate, fused) = match mode {
        BranchMode::CnnOnly => (None, z_cnn.clone().expect("cnn path")),
        BranchMode::VitOnly => (None, z_vit.clone().expect("vit path")),
        BranchMode::Hybrid => {
            let (zc, zv) = (z_cnn.as_ref().expect("cnn"), z_vit.as_ref().expect("vit"));
            let g = gate_forward(p, zc, zv);
            let fused = fuse(zc, zv, g.weights)?;
            (Some(g), fused)
        }
    };
    let hw = p.slot(p.layout.head_w);
    let logit = p.slot(p.layout.head_b)[0] + hw.iter().zip(&fused).map(|(a, b)| a * b).sum::<f64>();
    Ok(Trace {
        cnn,
        vit,
        z_cnn,
        z_vit,
        gate,
        fused,
        logit,
    })
}

/// Accumulate `dlogit * d(logit)/d(params)` into `grad`.
pub(crate) fn backward(p: &HybridParams, t: &Trace, dlogit: f64, grad: &mut [f64]) {
    let d = p.config.embed_dim;
    let hw = p.slot(p.layout.head_w).to_vec();
    for (g, z) in grad[p.layout.head_w.range()].iter_mut().zip(&t.fused) {
        *g += dlogit * z;
    }
    grad[p.layout.head_b.offset] += dlogit;
    let dfused: Vec<f64> = hw.iter().map(|w| dlogit * w).collect();

    let (mut dz_cnn, mut dz_vit) = (vec![0.0; d], vec![0.0; d]);
    match (&t.gate, p.config.branch_mode) {
        (None, BranchMode::CnnOnly) => dz_cnn = dfused,
        (None, BranchMode::VitOnly) => dz_vit = dfused,
        (Some(gt), BranchMode::Hybrid) => {
            let gs = p.layout.gate.as_ref().expect("gate");
            let zc = t.z_cnn.as_ref().expect("cnn");
            let zv = t.z_vit.as_ref().expect("vit");
            let w = gt.weights;
            for i in 0..d {
                dz_cnn[i] = w.w_cnn * dfused[i];
                dz_vit[i] = w.w_vit * dfused[i];
            }
            let dw = [
                dfused.iter().zip(zc).map(|(a, b)| a * b).sum::<f64>(),
                dfused.iter().zip(zv).map(|(a, b)| a * b).sum::<f64>(),
            ];
            let wv = [w.w_cnn, w.w_vit];
            let dot = wv[0] * dw[0] + wv[1] * dw[1];
            let dlogits = [wv[0] * (dw[0] - dot), wv[1] * (dw[1] - dot)];
            let gh = p.config.gate_hidden;
            let mut dact = vec![0.0; gh];
            {
                let (dw2, db2) = two_mut(grad, gs.w2, gs.b2);
                layers::linear_backward(&gt.act, 1, gh, p.slot(gs.w2), 2, &dlogits, Some(&mut dact), dw2, Some(db2));
            }
            let dpre: Vec<f64> = dact
                .iter()
                .zip(&gt.pre)
                .map(|(g, &x)| g * layers::gelu_grad(x))
                .collect();
            let mut din = vec![0.0; 2 * d];
            {
                let (dw1, db1) = two_mut(grad, gs.w1, gs.b1);
                layers::linear_backward(&gt.input, 1, 2 * d, p.slot(gs.w1), gh, &dpre, Some(&mut din), dw1, Some(db1));
            }
            for i in 0..d {
                dz_cnn[i] += din[i];
                dz_vit[i] += din[d + i];
            }
        }
        _ => unreachable!("gate trace matches branch mode"),
    }

    if let (Some(ct), Some(slot)) = (&t.cnn, p.layout.proj_cnn) {
        let c = p.config.cnn_dim();
        let mut dh = vec![0.0; c];
        layers::linear_backward(&ct.feat, 1, c, p.slot(slot), d, &dz_cnn, Some(&mut dh), &mut grad[slot.range()], None);
        cnn_backward(p, ct, &dh, grad);
    }
    if let (Some(vt), Some(slot)) = (&t.vit, p.layout.proj_vit) {
        let c = p.config.vit_dim;
        let mut dh = vec![0.0; c];
        layers::linear_backward(&vt.feat, 1, c, p.slot(slot), d, &dz_vit, Some(&mut dh), &mut grad[slot.range()], None);
        vit_backward(p, vt, &dh, grad);
    }
}

impl Trace {
    pub(crate) fn gate_weights(&self) -> Option<GateOutput> {
        self.gate.as_ref().map(|g| g.weights)
    }
}
