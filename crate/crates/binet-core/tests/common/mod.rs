//! Shared f64 reference implementations ("shadow" oracles) used by the
//! integration tests. These stay independent of the library's compute path:
//! direct loops, no im2col, no shared helpers.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Relative error with a floor so near-zero references stay meaningful.
pub fn rel_err(actual: f64, reference: f64) -> f64 {
    (actual - reference).abs() / reference.abs().max(1e-3)
}

pub fn randu(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Direct 6-loop cross-correlation, NCHW × OIHW, zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv64(
    x: &[f64],
    w: &[f64],
    n: usize,
    c: usize,
    h: usize,
    wd: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Vec<f64> {
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (wd + 2 * pad.1 - kw) / stride.1 + 1;
    let mut out = vec![0f64; n * o * oh * ow];
    let mut idx = 0;
    for s in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0f64;
                    for ic in 0..c {
                        for ky in 0..kh {
                            let iy = (oy * stride.0 + ky) as isize - pad.0 as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride.1 + kx) as isize - pad.1 as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += x[((s * c + ic) * h + iy as usize) * wd + ix as usize]
                                    * w[((oc * c + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[idx] = acc;
                    idx += 1;
                }
            }
        }
    }
    out
}

/// x[n×f] · w[o×f]ᵀ
pub fn linear64(x: &[f64], w: &[f64], n: usize, f: usize, o: usize) -> Vec<f64> {
    let mut out = vec![0f64; n * o];
    for s in 0..n {
        for j in 0..o {
            let mut acc = 0f64;
            for i in 0..f {
                acc += x[s * f + i] * w[j * f + i];
            }
            out[s * o + j] = acc;
        }
    }
    out
}

/// Training-mode batch norm over [n, c, spatial] with population variance.
pub fn batch_norm64(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    n: usize,
    c: usize,
    spatial: usize,
    eps: f64,
) -> Vec<f64> {
    let count = (n * spatial) as f64;
    let mut out = vec![0f64; x.len()];
    for ch in 0..c {
        let mut sum = 0f64;
        for s in 0..n {
            for i in 0..spatial {
                sum += x[(s * c + ch) * spatial + i];
            }
        }
        let mu = sum / count;
        let mut var = 0f64;
        for s in 0..n {
            for i in 0..spatial {
                let d = x[(s * c + ch) * spatial + i] - mu;
                var += d * d;
            }
        }
        var /= count;
        let inv = 1.0 / (var + eps).sqrt();
        for s in 0..n {
            for i in 0..spatial {
                let idx = (s * c + ch) * spatial + i;
                out[idx] = (x[idx] - mu) * inv * gamma[ch] + beta[ch];
            }
        }
    }
    out
}

pub fn hardtanh64(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.clamp(-1.0, 1.0)).collect()
}

pub fn max_pool64(x: &[f64], n: usize, c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h / k, w / k);
    let mut out = vec![0f64; n * c * oh * ow];
    let mut oi = 0;
    for s in 0..n {
        for ch in 0..c {
            let plane = (s * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            best = best.max(x[plane + (oy * k + ky) * w + ox * k + kx]);
                        }
                    }
                    out[oi] = best;
                    oi += 1;
                }
            }
        }
    }
    out
}

pub fn global_avg_pool64(x: &[f64], n: usize, c: usize, spatial: usize) -> Vec<f64> {
    let mut out = vec![0f64; n * c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * spatial;
            out[s * c + ch] = x[base..base + spatial].iter().sum::<f64>() / spatial as f64;
        }
    }
    out
}

/// Mean softmax cross-entropy.
pub fn cross_entropy64(logits: &[f64], labels: &[usize], classes: usize) -> f64 {
    let n = labels.len();
    let mut loss = 0f64;
    for s in 0..n {
        let row = &logits[s * classes..(s + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        loss += denom.ln() + max - row[labels[s]];
    }
    loss / n as f64
}
