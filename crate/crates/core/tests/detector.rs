//! Detector behaviour through the public API: hand-computed branch outputs,
//! an independent straight-line forward, finite-difference gradients, gate
//! invariants and the training contracts.

use fixthresh_core::detector::{
    self, cnn_branch, forward, forward_logit, gate, gate_weights, gradients, project, train, train_from, vit_branch,
    AdamW, BranchMode, HybridConfig, HybridParams, LabeledInputs, ModelInput, ParamGroup, TrainConfig,
};
use fixthresh_core::imaging::{ImageTensor, NormStats, RangeTag};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(mode: BranchMode) -> HybridConfig {
    HybridConfig {
        input_size: 8,
        embed_dim: 3,
        conv_channels: vec![2, 3],
        patch_size: 4,
        vit_dim: 4,
        vit_blocks: 1,
        vit_heads: 2,
        mlp_hidden: 5,
        gate_hidden: 3,
        freq_enabled: false,
        freq_cutoff: 0.06,
        branch_mode: mode,
    }
}

fn random_input(size: usize, rng: &mut ChaCha8Rng) -> ModelInput {
    ModelInput {
        size,
        data: (0..3 * size * size).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

/// Seeded params with every tensor (zero-initialized ones included) jittered.
fn jittered(cfg: &HybridConfig, seed: u64) -> HybridParams {
    let mut p = HybridParams::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for v in &mut p.values {
        *v += rng.random_range(-0.3..0.3);
    }
    p
}

fn set(p: &mut HybridParams, name: &str, f: impl Fn(usize) -> f64) {
    let n = p.get(name).unwrap_or_else(|| panic!("no tensor {name}")).len();
    let v: Vec<f64> = (0..n).map(f).collect();
    p.set(name, &v).unwrap();
}

#[test]
fn zero_input_zero_bias_cnn_is_zero() {
    let cfg = HybridConfig::desk(BranchMode::CnnOnly);
    let p = HybridParams::init(&cfg, 3).unwrap();
    let h = cnn_branch(&ModelInput::zeros(cfg.input_size), &p).unwrap();
    assert_eq!(h.len(), cfg.cnn_dim());
    assert!(h.iter().all(|&v| v == 0.0));
}

#[test]
fn single_filter_conv_pool_by_hand() {
    let cfg = HybridConfig {
        conv_channels: vec![1],
        ..tiny(BranchMode::CnnOnly)
    };
    let mut p = HybridParams::zeros(&cfg).unwrap();
    // One all-ones 3x3 filter reading channel 0 only.
    set(&mut p, "cnn.conv0.weight", |i| if i < 9 { 1.0 } else { 0.0 });
    let mut x = ModelInput::zeros(8);
    x.data[..64].fill(1.0);
    // Zero padding: 4 corners see 4 ones, 24 edge pixels see 6, 36 interior see 9.
    let expect = (4.0 * 4.0 + 24.0 * 6.0 + 36.0 * 9.0) / 64.0;
    assert_eq!(cnn_branch(&x, &p).unwrap(), vec![expect]);
    assert_eq!(expect, 7.5625);
}

#[test]
fn single_patch_identity_block_is_linear_embed() {
    let cfg = HybridConfig {
        patch_size: 8,
        ..tiny(BranchMode::VitOnly)
    };
    let mut p = jittered(&cfg, 5);
    for name in ["vit.pos", "vit.block0.attn.wo", "vit.block0.attn.bo", "vit.block0.mlp.w2", "vit.block0.mlp.b2"] {
        set(&mut p, name, |_| 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_input(8, &mut rng);
    let ew = p.get("vit.embed.weight").unwrap();
    let eb = p.get("vit.embed.bias").unwrap();
    // One patch covering the image; patch layout is channel-major like the input.
    let expect: Vec<f64> = (0..4).map(|o| eb[o] + (0..192).map(|i| ew[o * 192 + i] * x.data[i]).sum::<f64>()).collect();
    let got = vit_branch(&x, &p).unwrap();
    for (a, b) in got.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn swapping_identical_patches_keeps_pooled_output() {
    let cfg = tiny(BranchMode::VitOnly);
    let mut p = jittered(&cfg, 9);
    set(&mut p, "vit.pos", |_| 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base = random_input(8, &mut rng);
    // Make patch (0,0) equal patch (0,1), then swap (0,0) with (1,1).
    let mut x = base.clone();
    for c in 0..3 {
        for y in 0..4 {
            for xx in 0..4 {
                x.data[(c * 8 + y) * 8 + xx + 4] = x.data[(c * 8 + y) * 8 + xx];
            }
        }
    }
    let mut swapped = x.clone();
    for c in 0..3 {
        for y in 0..4 {
            for xx in 0..4 {
                let a = (c * 8 + y) * 8 + xx;
                let b = (c * 8 + y + 4) * 8 + xx + 4;
                swapped.data.swap(a, b);
            }
        }
    }
    let h1 = vit_branch(&x, &p).unwrap();
    let h2 = vit_branch(&swapped, &p).unwrap();
    for (a, b) in h1.iter().zip(&h2) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn projection_by_hand() {
    let z = project(&[1.0, 2.0], &[1.0, 0.0, 0.0, 1.0, 2.0, -1.0], 3).unwrap();
    assert_eq!(z, vec![1.0, 2.0, 0.0]);
    assert!(project(&[1.0, 2.0], &[1.0; 5], 3).is_err());
}

#[test]
fn zero_head_scores_one_half() {
    let cfg = tiny(BranchMode::Hybrid);
    let mut p = jittered(&cfg, 1);
    set(&mut p, "head.weight", |_| 0.0);
    set(&mut p, "head.bias", |_| 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(forward(&random_input(8, &mut rng), &p).unwrap(), 0.5);
}

// ---- straight-line oracle -------------------------------------------------

fn mat_vec(w: &[f64], b: Option<&[f64]>, x: &[f64], dout: usize) -> Vec<f64> {
    let din = x.len();
    (0..dout)
        .map(|o| b.map_or(0.0, |b| b[o]) + (0..din).map(|i| w[o * din + i] * x[i]).sum::<f64>())
        .collect()
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().enumerate().map(|(i, v)| g[i] * (v - mean) / (var + 1e-5).sqrt() + b[i]).collect()
}

fn gelu_tanh(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn oracle_cnn(p: &HybridParams, x: &ModelInput) -> Vec<f64> {
    let cfg = &p.config;
    let mut size = cfg.input_size;
    let mut cin = 3;
    let mut cur = x.data.clone();
    for (i, &cout) in cfg.conv_channels.iter().enumerate() {
        let w = p.get(&format!("cnn.conv{i}.weight")).unwrap();
        let b = p.get(&format!("cnn.conv{i}.bias")).unwrap();
        let half = size / 2;
        let mut next = vec![0.0; cout * half * half];
        for co in 0..cout {
            for y in 0..size {
                for xx in 0..size {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if sy >= 0 && sx >= 0 && (sy as usize) < size && (sx as usize) < size {
                                    acc += w[((co * cin + ci) * 3 + ky) * 3 + kx] * cur[(ci * size + sy as usize) * size + sx as usize];
                                }
                            }
                        }
                    }
                    next[(co * half + y / 2) * half + xx / 2] += acc.max(0.0) / 4.0;
                }
            }
        }
        cur = next;
        size = half;
        cin = cout;
    }
    let plane = size * size;
    (0..cin).map(|c| cur[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64).collect()
}

fn oracle_vit(p: &HybridParams, x: &ModelInput) -> Vec<f64> {
    let cfg = &p.config;
    let (s, ps, dv) = (cfg.input_size, cfg.patch_size, cfg.vit_dim);
    let g = s / ps;
    let pos = p.get("vit.pos").unwrap();
    let mut tokens: Vec<Vec<f64>> = Vec::new();
    for gy in 0..g {
        for gx in 0..g {
            let mut patch = Vec::new();
            for c in 0..3 {
                for py in 0..ps {
                    for px in 0..ps {
                        patch.push(x.data[(c * s + gy * ps + py) * s + gx * ps + px]);
                    }
                }
            }
            let mut t = mat_vec(p.get("vit.embed.weight").unwrap(), Some(p.get("vit.embed.bias").unwrap()), &patch, dv);
            let k = tokens.len();
            for (i, v) in t.iter_mut().enumerate() {
                *v += pos[k * dv + i];
            }
            tokens.push(t);
        }
    }
    let n = tokens.len();
    let heads = cfg.vit_heads;
    let dh = dv / heads;
    for b in 0..cfg.vit_blocks {
        let w = |s: &str| p.get(&format!("vit.block{b}.{s}")).unwrap();
        let ln: Vec<Vec<f64>> = tokens.iter().map(|t| layer_norm(t, w("ln1.gamma"), w("ln1.beta"))).collect();
        let q: Vec<Vec<f64>> = ln.iter().map(|t| mat_vec(w("attn.wq"), None, t, dv)).collect();
        let k: Vec<Vec<f64>> = ln.iter().map(|t| mat_vec(w("attn.wk"), None, t, dv)).collect();
        let v: Vec<Vec<f64>> = ln.iter().map(|t| mat_vec(w("attn.wv"), None, t, dv)).collect();
        let mut merged = vec![vec![0.0; dv]; n];
        for h in 0..heads {
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| (0..dh).map(|e| q[i][h * dh + e] * k[j][h * dh + e]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for j in 0..n {
                    let a = (scores[j] - m).exp() / z;
                    for e in 0..dh {
                        merged[i][h * dh + e] += a * v[j][h * dh + e];
                    }
                }
            }
        }
        for i in 0..n {
            let attn = mat_vec(w("attn.wo"), Some(w("attn.bo")), &merged[i], dv);
            let mid: Vec<f64> = tokens[i].iter().zip(&attn).map(|(a, b)| a + b).collect();
            let l2 = layer_norm(&mid, w("ln2.gamma"), w("ln2.beta"));
            let hid: Vec<f64> = mat_vec(w("mlp.w1"), Some(w("mlp.b1")), &l2, cfg.mlp_hidden).into_iter().map(gelu_tanh).collect();
            let out = mat_vec(w("mlp.w2"), Some(w("mlp.b2")), &hid, dv);
            tokens[i] = mid.iter().zip(&out).map(|(a, b)| a + b).collect();
        }
    }
    (0..dv).map(|e| tokens.iter().map(|t| t[e]).sum::<f64>() / n as f64).collect()
}

fn oracle_logit(p: &HybridParams, x: &ModelInput) -> f64 {
    let cfg = &p.config;
    let d = cfg.embed_dim;
    let zc = cfg.branch_mode.uses_cnn().then(|| mat_vec(p.get("proj.cnn").unwrap(), None, &oracle_cnn(p, x), d));
    let zv = cfg.branch_mode.uses_vit().then(|| mat_vec(p.get("proj.vit").unwrap(), None, &oracle_vit(p, x), d));
    let fused = match (zc, zv) {
        (Some(c), Some(v)) => {
            let cat: Vec<f64> = c.iter().chain(&v).copied().collect();
            let hid: Vec<f64> = mat_vec(p.get("gate.w1").unwrap(), Some(p.get("gate.b1").unwrap()), &cat, cfg.gate_hidden)
                .into_iter()
                .map(gelu_tanh)
                .collect();
            let l = mat_vec(p.get("gate.w2").unwrap(), Some(p.get("gate.b2").unwrap()), &hid, 2);
            let wc = 1.0 / (1.0 + (l[1] - l[0]).exp());
            c.iter().zip(&v).map(|(a, b)| wc * a + (1.0 - wc) * b).collect()
        }
        (Some(c), None) => c,
        (None, Some(v)) => v,
        (None, None) => unreachable!(),
    };
    p.get("head.bias").unwrap()[0] + p.get("head.weight").unwrap().iter().zip(&fused).map(|(a, b)| a * b).sum::<f64>()
}

#[test]
fn forward_matches_straight_line_recompute() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (k, mode) in [BranchMode::Hybrid, BranchMode::CnnOnly, BranchMode::VitOnly].into_iter().enumerate() {
        let cfg = tiny(mode);
        let p = jittered(&cfg, 40 + k as u64);
        for _ in 0..3 {
            let x = random_input(8, &mut rng);
            let a = forward_logit(&x, &p).unwrap();
            let b = oracle_logit(&p, &x);
            assert!((a - b).abs() < 1e-10, "{mode:?}: {a} vs {b}");
        }
    }
}

#[test]
fn score_dataset_matches_recompute_and_freq_sees_zero_for_flat_images() {
    let cfg = HybridConfig {
        freq_enabled: true,
        ..tiny(BranchMode::Hybrid)
    };
    let p = jittered(&cfg, 77);
    let stats = NormStats::IMAGENET;
    let flat = ImageTensor::filled(8, 8, 0.4, RangeTag::Unit);
    let images: Vec<detector::LabeledImage> = (0..3)
        .map(|i| detector::LabeledImage {
            id: format!("im{i}"),
            label: i % 2 == 0,
            image: if i == 0 {
                flat.clone()
            } else {
                ImageTensor::new(8, 8, (0..192).map(|j| ((j * (7 + i)) % 13) as f64 / 12.0).collect(), RangeTag::Unit).unwrap()
            },
        })
        .collect();
    let sets = detector::score_dataset(&p, &images, &[fixthresh_core::transforms::Condition::Clean], &stats).unwrap();
    let scores = sets[0].1.scores();
    for (im, &s) in images.iter().zip(scores) {
        let x = detector::prepare_input(&im.image, &cfg, &stats).unwrap();
        assert!((s - detector::sigmoid(oracle_logit(&p, &x))).abs() < 1e-10);
    }
    // A constant image is all DC, so the high-pass leaves zeros.
    let zero = ModelInput::zeros(8);
    assert!((scores[0] - forward(&zero, &p).unwrap()).abs() < 1e-6);
    let again = detector::score_dataset(&p, &images, &[fixthresh_core::transforms::Condition::Clean], &stats).unwrap();
    assert_eq!(sets, again);
}

// ---- gradients ------------------------------------------------------------

fn batch_loss(p: &HybridParams, batch: &[(&ModelInput, bool)]) -> f64 {
    let logits: Vec<f64> = batch.iter().map(|(x, _)| forward_logit(x, p).unwrap()).collect();
    let labels: Vec<bool> = batch.iter().map(|(_, y)| *y).collect();
    detector::bce_with_logits(&logits, &labels)
}

/// Worst relative error over all parameters. A coordinate that fails at the
/// default step is retried with a narrower stencil, and skipped when a ReLU
/// kink sits at the point itself.
fn grad_check(cfg: &HybridConfig, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = jittered(cfg, seed);
    let xs: Vec<ModelInput> = (0..2).map(|_| random_input(cfg.input_size, &mut rng)).collect();
    let batch: Vec<(&ModelInput, bool)> = vec![(&xs[0], true), (&xs[1], false)];
    let (_, g) = gradients(&p, &batch).unwrap();
    let eps = 1e-4;
    let f0 = batch_loss(&p, &batch);
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let mut q = p.clone();
    for i in 0..p.values.len() {
        let orig = q.values[i];
        q.values[i] = orig + eps;
        let fp = batch_loss(&q, &batch);
        q.values[i] = orig - eps;
        let fm = batch_loss(&q, &batch);
        q.values[i] = orig;
        let rel_of = |num: f64| (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-6);
        let rel = rel_of((fp - fm) / (2.0 * eps));
        if rel < 1e-3 {
            worst = worst.max(rel);
            continue;
        }
        // A kink inside the stencil: the one-sided gap of a smooth coordinate
        // scales with the step, a kink at the point keeps it.
        let h = eps / 8.0;
        q.values[i] = orig + h;
        let fph = batch_loss(&q, &batch);
        q.values[i] = orig - h;
        let fmh = batch_loss(&q, &batch);
        q.values[i] = orig;
        let gap = ((fp - f0) - (f0 - fm)).abs() / eps;
        let gap_h = ((fph - f0) - (f0 - fmh)).abs() / h;
        if gap_h > 0.5 * gap {
            skipped += 1;
            continue;
        }
        let rel = rel_of((fph - fmh) / (2.0 * h));
        worst = worst.max(rel);
    }
    (worst, skipped)
}

#[test]
fn gradients_match_central_differences_on_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let modes = [BranchMode::Hybrid, BranchMode::CnnOnly, BranchMode::VitOnly];
    let mut checked = 0;
    for k in 0..24 {
        let mode = modes[k % 3];
        let heads = [1, 2][rng.random_range(0..2)];
        let cfg = HybridConfig {
            input_size: 8,
            embed_dim: rng.random_range(2..5),
            conv_channels: (0..rng.random_range(1..3)).map(|_| rng.random_range(1..4)).collect(),
            patch_size: [2, 4][rng.random_range(0..2)],
            vit_dim: heads * rng.random_range(1..3) * 2,
            vit_blocks: rng.random_range(1..3),
            vit_heads: heads,
            mlp_hidden: rng.random_range(2..6),
            gate_hidden: rng.random_range(2..5),
            freq_enabled: false,
            freq_cutoff: 0.06,
            branch_mode: mode,
        };
        let (worst, skipped) = grad_check(&cfg, 100 + k as u64);
        assert!(worst < 1e-3, "config {k} ({mode:?}): max relative error {worst}");
        let n = HybridParams::init(&cfg, 0).unwrap().values.len();
        assert!(skipped * 20 < n, "config {k}: skipped {skipped} of {n}");
        checked += 1;
    }
    assert!(checked >= 20);
}

#[test]
fn zero_head_gradient_closed_form() {
    let cfg = tiny(BranchMode::Hybrid);
    let mut p = jittered(&cfg, 3);
    set(&mut p, "head.weight", |_| 0.0);
    set(&mut p, "head.bias", |_| 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xs: Vec<ModelInput> = (0..4).map(|_| random_input(8, &mut rng)).collect();
    let labels = [true, false, false, true];
    let batch: Vec<(&ModelInput, bool)> = xs.iter().zip(labels).collect();
    let (_, g) = gradients(&p, &batch).unwrap();
    let hw = p.layout.spec("head.weight").unwrap().range();
    let hb = p.layout.spec("head.bias").unwrap().offset;
    // With a zero head every score is 0.5; the label-balanced batch cancels in the bias.
    assert!(g[hb].abs() < 1e-15);
    let fused: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            let w = gate_weights(x, &p).unwrap().unwrap();
            let zc = project(&cnn_branch(x, &p).unwrap(), p.get("proj.cnn").unwrap(), 3).unwrap();
            let zv = project(&vit_branch(x, &p).unwrap(), p.get("proj.vit").unwrap(), 3).unwrap();
            detector::fuse(&zc, &zv, w).unwrap()
        })
        .collect();
    for (j, gi) in g[hw].iter().enumerate() {
        let expect = fused.iter().zip(labels).map(|(z, y)| (0.5 - f64::from(u8::from(y))) * z[j]).sum::<f64>() / 4.0;
        assert!((gi - expect).abs() < 1e-12);
    }
}

// ---- gate ---------------------------------------------------------------

#[test]
fn saturated_gate_equals_single_branch_models() {
    let hybrid_cfg = tiny(BranchMode::Hybrid);
    let mut hybrid = jittered(&hybrid_cfg, 21);
    set(&mut hybrid, "gate.w2", |_| 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs: Vec<ModelInput> = (0..4).map(|_| random_input(8, &mut rng)).collect();
    for (mode, bias) in [(BranchMode::CnnOnly, [40.0, -40.0]), (BranchMode::VitOnly, [-40.0, 40.0])] {
        hybrid.set("gate.b2", &bias).unwrap();
        let mut single = HybridParams::zeros(&tiny(mode)).unwrap();
        single.copy_shared_from(&hybrid);
        for x in &xs {
            let a = forward_logit(x, &hybrid).unwrap();
            let b = forward_logit(x, &single).unwrap();
            assert!((a - b).abs() <= 1e-6, "{mode:?}: {a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gate_weights_are_a_distribution(seed in any::<u64>(), scale in 0.0f64..50.0) {
        let cfg = tiny(BranchMode::Hybrid);
        let mut p = jittered(&cfg, seed);
        for v in &mut p.values {
            *v *= scale;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_input(8, &mut rng);
        let w = gate_weights(&x, &p).unwrap().unwrap();
        prop_assert!((w.w_cnn + w.w_vit - 1.0).abs() <= 1e-6);
        prop_assert!((0.0..=1.0).contains(&w.w_cnn) && (0.0..=1.0).contains(&w.w_vit));
        let zc: Vec<f64> = (0..3).map(|_| rng.random_range(-scale - 1.0..scale + 1.0)).collect();
        let zv: Vec<f64> = (0..3).map(|_| rng.random_range(-scale - 1.0..scale + 1.0)).collect();
        let g = gate(&zc, &zv, &p).unwrap();
        prop_assert!((g.w_cnn + g.w_vit - 1.0).abs() <= 1e-6);
    }
}

// ---- training -------------------------------------------------------------

/// Two linearly separable classes: bright-left vs bright-right images.
fn toy_set(n: usize, size: usize, seed: u64) -> LabeledInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let label = i % 2 == 0;
        let mut x = ModelInput::zeros(size);
        for c in 0..3 {
            for y in 0..size {
                for xx in 0..size {
                    let left = xx < size / 2;
                    let base = if left == label { 1.0 } else { -1.0 };
                    x.data[(c * size + y) * size + xx] = base + rng.random_range(-0.3..0.3);
                }
            }
        }
        inputs.push(x);
        labels.push(label);
    }
    LabeledInputs { inputs, labels }
}

#[test]
fn loss_falls_tenfold_on_separable_toy_set() {
    let cfg = tiny(BranchMode::Hybrid);
    let data = toy_set(8, 8, 1);
    let tc = TrainConfig {
        lr_new: 1e-2,
        lr_backbone: 1e-2,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let mut p = HybridParams::init(&cfg, 0).unwrap();
    let batch: Vec<(&ModelInput, bool)> = data.inputs.iter().zip(data.labels.iter().copied()).collect();
    let all: Vec<std::ops::Range<usize>> = vec![0..p.values.len()];
    let mut opt = AdamW::new(p.values.len(), &tc);
    let (initial, _) = gradients(&p, &batch).unwrap();
    let mut last = initial;
    for _ in 0..200 {
        let (l, g) = gradients(&p, &batch).unwrap();
        last = l;
        opt.step(&mut p.values, &g, &all, ParamGroup::New, tc.lr_new);
    }
    assert!(last < 0.1 * initial, "{last} vs {initial}");
}

fn quick_tc(epochs: usize, freeze: usize) -> TrainConfig {
    TrainConfig {
        lr_new: 1e-3,
        lr_backbone: 1e-3,
        max_epochs: epochs,
        patience: epochs,
        batch_size: 4,
        lit_freeze_epochs: freeze,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn frozen_trunk_is_bit_identical() {
    let cfg = tiny(BranchMode::Hybrid);
    let (tr, va) = (toy_set(12, 8, 2), toy_set(6, 8, 3));
    let init = HybridParams::init(&cfg, 9).unwrap();
    let out = train_from(init.clone(), &tr, &va, &quick_tc(3, 3)).unwrap();
    let mut new_moved = false;
    for spec in &init.layout.specs {
        let (a, b) = (&init.values[spec.range()], &out.params.values[spec.range()]);
        match spec.group {
            ParamGroup::Trunk => assert_eq!(a, b, "{} moved while frozen", spec.name),
            ParamGroup::New => new_moved |= a != b,
        }
    }
    assert!(new_moved);
    assert!(out.history.iter().all(|h| h.trunk_frozen));

    let partial = train_from(init, &tr, &va, &quick_tc(3, 1)).unwrap();
    let flags: Vec<bool> = partial.history.iter().map(|h| h.trunk_frozen).collect();
    assert_eq!(flags, vec![true, false, false]);
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny(BranchMode::Hybrid);
    let (tr, va) = (toy_set(12, 8, 4), toy_set(6, 8, 5));
    let a = train(&tr, &va, &cfg, &quick_tc(3, 1)).unwrap();
    let b = train(&tr, &va, &cfg, &quick_tc(3, 1)).unwrap();
    assert_eq!(a.params.values, b.params.values);
    assert_eq!(a.history, b.history);
    let c = train(&tr, &va, &cfg, &TrainConfig { seed: 10, ..quick_tc(3, 1) }).unwrap();
    assert_ne!(a.params.values, c.params.values);
}

#[test]
fn empty_split_is_training_error() {
    let cfg = tiny(BranchMode::CnnOnly);
    let empty = LabeledInputs {
        inputs: vec![],
        labels: vec![],
    };
    let err = train(&empty, &toy_set(4, 8, 1), &cfg, &quick_tc(1, 0)).unwrap_err();
    assert!(matches!(err, fixthresh_core::Error::Training(_)));
}
