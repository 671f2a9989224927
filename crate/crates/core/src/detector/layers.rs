//! Forward and backward passes of the primitive layers, on flat row-major
//! `f64` buffers. Backward functions accumulate (`+=`) into their gradient
//! outputs.

/// 3x3 convolution, stride 1, zero padding 1. `input` is `[cin, h, w]`,
/// `weight` is `[cout, cin, 3, 3]`, output `[cout, h, w]`.
pub fn conv3x3_forward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; cout * plane];
    for co in 0..cout {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.fill(bias[co]);
        for ci in 0..cin {
            let inp = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[((co * cin + ci) * 3 + ky) * 3 + kx];
                    let (x0, x1) = valid_range(kx, w);
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &inp[sy as usize * w..(sy as usize + 1) * w];
                        let orow = &mut o[y * w..(y + 1) * w];
                        let shift = kx as isize - 1;
                        for x in x0..x1 {
                            orow[x] += wv * srow[(x as isize + shift) as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output columns `x` for which `x + kx - 1` is inside `[0, w)`.
#[inline]
fn valid_range(kx: usize, w: usize) -> (usize, usize) {
    match kx {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w.saturating_sub(1)),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    dout: &[f64],
    dinput: Option<&mut [f64]>,
    dweight: &mut [f64],
    dbias: &mut [f64],
) {
    let plane = h * w;
    for co in 0..cout {
        dbias[co] += dout[co * plane..(co + 1) * plane].iter().sum::<f64>();
    }
    for co in 0..cout {
        let d = &dout[co * plane..(co + 1) * plane];
        for ci in 0..cin {
            let inp = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let (x0, x1) = valid_range(kx, w);
                    let shift = kx as isize - 1;
                    let mut acc = 0.0;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &inp[sy as usize * w..(sy as usize + 1) * w];
                        let drow = &d[y * w..(y + 1) * w];
                        for x in x0..x1 {
                            acc += drow[x] * srow[(x as isize + shift) as usize];
                        }
                    }
                    dweight[((co * cin + ci) * 3 + ky) * 3 + kx] += acc;
                }
            }
        }
    }
    let Some(dinput) = dinput else { return };
    for co in 0..cout {
        let d = &dout[co * plane..(co + 1) * plane];
        for ci in 0..cin {
            let di = &mut dinput[ci * plane..(ci + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[((co * cin + ci) * 3 + ky) * 3 + kx];
                    let (x0, x1) = valid_range(kx, w);
                    let shift = kx as isize - 1;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let drow = &d[y * w..(y + 1) * w];
                        let dirow = &mut di[sy as usize * w..(sy as usize + 1) * w];
                        for x in x0..x1 {
                            dirow[(x as isize + shift) as usize] += wv * drow[x];
                        }
                    }
                }
            }
        }
    }
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// `pre` is the pre-activation input.
pub fn relu_backward(pre: &[f64], dout: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(dout)
        .map(|(&p, &d)| if p > 0.0 { d } else { 0.0 })
        .collect()
}

/// 2x2 average pooling, `[c, h, w]` → `[c, h/2, w/2]`.
pub fn avgpool2_forward(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let base = ch * h * w;
                let s = x[base + 2 * y * w + 2 * xx]
                    + x[base + 2 * y * w + 2 * xx + 1]
                    + x[base + (2 * y + 1) * w + 2 * xx]
                    + x[base + (2 * y + 1) * w + 2 * xx + 1];
                out[(ch * oh + y) * ow + xx] = 0.25 * s;
            }
        }
    }
    out
}

pub fn avgpool2_backward(dout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let g = 0.25 * dout[(ch * oh + y) * ow + xx];
                let base = ch * h * w;
                dx[base + 2 * y * w + 2 * xx] += g;
                dx[base + 2 * y * w + 2 * xx + 1] += g;
                dx[base + (2 * y + 1) * w + 2 * xx] += g;
                dx[base + (2 * y + 1) * w + 2 * xx + 1] += g;
            }
        }
    }
    dx
}

/// Mean over each of `c` planes of length `plane`.
pub fn mean_pool(x: &[f64], c: usize, plane: usize) -> Vec<f64> {
    (0..c)
        .map(|ch| x[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect()
}

pub fn mean_pool_backward(dout: &[f64], c: usize, plane: usize) -> Vec<f64> {
    let mut dx = vec![0.0; c * plane];
    for ch in 0..c {
        let g = dout[ch] / plane as f64;
        dx[ch * plane..(ch + 1) * plane].fill(g);
    }
    dx
}

/// `y[n, o] = b[o] + sum_i W[o, i] x[n, i]` for `rows` input rows.
pub fn linear_forward(x: &[f64], rows: usize, din: usize, weight: &[f64], bias: Option<&[f64]>, dout: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * dout];
    for n in 0..rows {
        let xr = &x[n * din..(n + 1) * din];
        for o in 0..dout {
            let wr = &weight[o * din..(o + 1) * din];
            let mut acc = bias.map_or(0.0, |b| b[o]);
            for (a, b) in wr.iter().zip(xr) {
                acc += a * b;
            }
            y[n * dout + o] = acc;
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    rows: usize,
    din: usize,
    weight: &[f64],
    dout_dim: usize,
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dweight: &mut [f64],
    dbias: Option<&mut [f64]>,
) {
    for n in 0..rows {
        let xr = &x[n * din..(n + 1) * din];
        for o in 0..dout_dim {
            let g = dy[n * dout_dim + o];
            if g == 0.0 {
                continue;
            }
            let dw = &mut dweight[o * din..(o + 1) * din];
            for (d, xv) in dw.iter_mut().zip(xr) {
                *d += g * xv;
            }
        }
    }
    if let Some(db) = dbias {
        for n in 0..rows {
            for o in 0..dout_dim {
                db[o] += dy[n * dout_dim + o];
            }
        }
    }
    if let Some(dx) = dx {
        for n in 0..rows {
            let dxr = &mut dx[n * din..(n + 1) * din];
            for o in 0..dout_dim {
                let g = dy[n * dout_dim + o];
                if g == 0.0 {
                    continue;
                }
                let wr = &weight[o * din..(o + 1) * din];
                for (d, wv) in dxr.iter_mut().zip(wr) {
                    *d += g * wv;
                }
            }
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm. Returns `(y, xhat, inv_std)`.
pub fn layernorm_forward(x: &[f64], rows: usize, d: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv = vec![0.0; rows];
    for n in 0..rows {
        let r = &x[n * d..(n + 1) * d];
        let mean = r.iter().sum::<f64>() / d as f64;
        let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv[n] = is;
        for i in 0..d {
            let xh = (r[i] - mean) * is;
            xhat[n * d + i] = xh;
            y[n * d + i] = gamma[i] * xh + beta[i];
        }
    }
    (y, xhat, inv)
}

#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward(
    xhat: &[f64],
    inv: &[f64],
    rows: usize,
    d: usize,
    gamma: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) {
    let mut dxhat = vec![0.0; d];
    for n in 0..rows {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for i in 0..d {
            let g = dy[n * d + i];
            dgamma[i] += g * xhat[n * d + i];
            dbeta[i] += g;
            dxhat[i] = g * gamma[i];
            s1 += dxhat[i];
            s2 += dxhat[i] * xhat[n * d + i];
        }
        for i in 0..d {
            dx[n * d + i] += inv[n] / d as f64 * (d as f64 * dxhat[i] - s1 - xhat[n * d + i] * s2);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh-approximation GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cached values of one multi-head self-attention call.
pub struct AttnCache {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// `[heads, n, n]` attention probabilities.
    pub probs: Vec<f64>,
    /// Concatenated head outputs `[n, d]`, input of the output projection.
    pub merged: Vec<f64>,
}

pub struct AttnWeights<'a> {
    pub wq: &'a [f64],
    pub wk: &'a [f64],
    pub wv: &'a [f64],
    pub wo: &'a [f64],
    pub bo: &'a [f64],
}

pub struct AttnGrads<'a> {
    pub wq: &'a mut [f64],
    pub wk: &'a mut [f64],
    pub wv: &'a mut [f64],
    pub wo: &'a mut [f64],
    pub bo: &'a mut [f64],
}

/// Multi-head scaled dot-product self-attention over `n` tokens of width `d`.
pub fn attention_forward(x: &[f64], n: usize, d: usize, heads: usize, w: &AttnWeights<'_>) -> (Vec<f64>, AttnCache) {
    let q = linear_forward(x, n, d, w.wq, None, d);
    let k = linear_forward(x, n, d, w.wk, None, d);
    let v = linear_forward(x, n, d, w.wv, None, d);
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; heads * n * n];
    let mut merged = vec![0.0; n * d];
    let mut row = vec![0.0; n];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            let qi = &q[i * d + off..i * d + off + dh];
            for (j, r) in row.iter_mut().enumerate() {
                let kj = &k[j * d + off..j * d + off + dh];
                *r = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
            }
            let p = softmax(&row);
            let out = &mut merged[i * d + off..i * d + off + dh];
            for (j, &pj) in p.iter().enumerate() {
                let vj = &v[j * d + off..j * d + off + dh];
                for (o, vv) in out.iter_mut().zip(vj) {
                    *o += pj * vv;
                }
            }
            probs[(h * n + i) * n..(h * n + i + 1) * n].copy_from_slice(&p);
        }
    }
    let y = linear_forward(&merged, n, d, w.wo, Some(w.bo), d);
    (
        y,
        AttnCache {
            q,
            k,
            v,
            probs,
            merged,
        },
    )
}

#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    x: &[f64],
    n: usize,
    d: usize,
    heads: usize,
    w: &AttnWeights<'_>,
    cache: &AttnCache,
    dy: &[f64],
    dx: &mut [f64],
    g: AttnGrads<'_>,
) {
    let mut dmerged = vec![0.0; n * d];
    linear_backward(&cache.merged, n, d, w.wo, d, dy, Some(&mut dmerged), g.wo, Some(g.bo));

    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    let mut dp = vec![0.0; n];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            let p = &cache.probs[(h * n + i) * n..(h * n + i + 1) * n];
            let dout = &dmerged[i * d + off..i * d + off + dh];
            for j in 0..n {
                let vj = &cache.v[j * d + off..j * d + off + dh];
                dp[j] = dout.iter().zip(vj).map(|(a, b)| a * b).sum();
                let dvj = &mut dv[j * d + off..j * d + off + dh];
                for (t, o) in dvj.iter_mut().zip(dout) {
                    *t += p[j] * o;
                }
            }
            let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for j in 0..n {
                let ds = p[j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for t in 0..dh {
                    dq[i * d + off + t] += ds * cache.k[j * d + off + t];
                    dk[j * d + off + t] += ds * cache.q[i * d + off + t];
                }
            }
        }
    }
    linear_backward(x, n, d, w.wq, d, &dq, Some(dx), g.wq, None);
    linear_backward(x, n, d, w.wk, d, &dk, Some(dx), g.wk, None);
    linear_backward(x, n, d, w.wv, d, &dv, Some(dx), g.wv, None);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn conv_identity_kernel() {
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let x: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let y = conv3x3_forward(&x, 1, 3, 4, &w, &[0.5], 1);
        for (a, b) in x.iter().zip(&y) {
            assert_eq!(a + 0.5, *b);
        }
    }

    #[test]
    fn conv_zero_padding_sum_kernel() {
        // All-ones kernel on all-ones 3x3: corner sees 4, edge 6, center 9.
        let y = conv3x3_forward(&[1.0; 9], 1, 3, 3, &[1.0; 9], &[0.0], 1);
        assert_eq!(y, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn pool_and_mean() {
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let y = avgpool2_forward(&x, 1, 4, 4);
        assert_eq!(y, vec![2.5, 4.5, 10.5, 12.5]);
        assert_eq!(mean_pool(&y, 1, 4), vec![7.5]);
    }

    #[test]
    fn layernorm_output_is_standardized() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let (y, _, _) = layernorm_forward(&x, 1, 4, &[1.0; 4], &[0.0; 4]);
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(gelu_grad(x), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn softmax_saturates() {
        let p = softmax(&[30.0, 10.0]);
        assert!(p[0] > 0.9999);
        assert_abs_diff_eq!(p[0] + p[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn attention_two_tokens_by_hand() {
        let eye = [1.0, 0.0, 0.0, 1.0];
        let w = AttnWeights {
            wq: &eye,
            wk: &eye,
            wv: &eye,
            wo: &eye,
            bo: &[0.0, 0.0],
        };
        let (y, cache) = attention_forward(&eye, 2, 2, 1, &w);
        // Scores are [1/sqrt(2), 0] for token 0 and [0, 1/sqrt(2)] for token 1.
        let e = (1.0f64 / 2f64.sqrt()).exp();
        let p = e / (e + 1.0);
        assert_abs_diff_eq!(cache.probs[0], p, epsilon = 1e-12);
        assert_abs_diff_eq!(y[0], p, epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], 1.0 - p, epsilon = 1e-12);
        assert_abs_diff_eq!(y[2], 1.0 - p, epsilon = 1e-12);
        assert_abs_diff_eq!(y[3], p, epsilon = 1e-12);
        assert_abs_diff_eq!(p, 0.66976, epsilon = 1e-5);
    }
}
