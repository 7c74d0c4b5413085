//! Brute-force reference implementations.

use amseg::nn::{Mhsa, ParamStore};
use amseg::{ConvGeom, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Direct seven-loop cross-correlation.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, g: ConvGeom) -> Tensor<f64> {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let [o, cpg, k, _] = w.shape().try_into().unwrap();
    let opg = o / g.groups;
    let ext = |len: usize| (len + 2 * g.padding - g.dilation * (k - 1) - 1) / g.stride + 1;
    let (oh, ow) = (ext(h), ext(wd));
    let mut out = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oc in 0..o {
            let grp = oc / opg;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[oc]);
                    for ci in 0..cpg {
                        let ic = grp * cpg + ci;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * g.stride + ky * g.dilation) as isize - g.padding as isize;
                                let ix = (xo * g.stride + kx * g.dilation) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * c + ic) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((oc * cpg + ci) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * o + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    Tensor::new(&[n, o, oh, ow], out).unwrap()
}

pub fn random_conv_case(rng: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>, Option<Tensor<f64>>, ConvGeom) {
    let groups = [1, 2, 3][rng.gen_range(0..3)];
    let cpg = rng.gen_range(1..=3);
    let opg = rng.gen_range(1..=3);
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let g = ConvGeom {
        stride: rng.gen_range(1..=2),
        padding: rng.gen_range(0..=3),
        dilation: rng.gen_range(1..=3),
        groups,
    };
    let min = g.dilation * (k - 1) + 1;
    let h = rng.gen_range(min.max(2)..min + 6);
    let w = rng.gen_range(min.max(2)..min + 6);
    let n = rng.gen_range(1..=2);
    let x = rand_t(&[n, groups * cpg, h, w], rng);
    let wt = rand_t(&[groups * opg, cpg, k, k], rng);
    let b = rng.gen_bool(0.5).then(|| rand_t(&[groups * opg], rng));
    (x, wt, b, g)
}

/// Triple-loop batched matrix product of `[B,M,K]` and `[B,K,P]`.
pub fn matmul_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let [batch, m, k] = a.shape().try_into().unwrap();
    let p = b.shape()[2];
    let mut out = vec![0.0; batch * m * p];
    for bi in 0..batch {
        for i in 0..m {
            for j in 0..p {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += a.at(&[bi, i, t]) * b.at(&[bi, t, j]);
                }
                out[(bi * m + i) * p + j] = acc;
            }
        }
    }
    Tensor::new(&[batch, m, p], out).unwrap()
}

/// Per-sample, per-channel mean of `dec · enc`, as `[N,C]`.
pub fn similarity_oracle(dec: &Tensor<f64>, enc: &Tensor<f64>) -> Vec<f64> {
    let [n, c, h, w] = dec.shape().try_into().unwrap();
    let mut out = Vec::with_capacity(n * c);
    for ni in 0..n {
        for ch in 0..c {
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    acc += dec.at(&[ni, ch, i, j]) * enc.at(&[ni, ch, i, j]);
                }
            }
            out.push(acc / (h * w) as f64);
        }
    }
    out
}

/// Direct two-loop attention from the parameter values.
pub fn attention_oracle(store: &ParamStore<f64>, m: &Mhsa, x: &Tensor<f64>) -> (Tensor<f64>, Vec<f64>) {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let l = h * w;
    let heads = m.spec.heads;
    let d = c / heads;
    let pos = store.get(m.pos);
    let lin = |lin: &amseg::nn::Linear, t: &[f64]| -> Vec<f64> {
        let (wt, b) = (store.get(lin.weight), store.get(lin.bias));
        (0..c)
            .map(|o| b.data()[o] + (0..c).map(|i| t[i] * wt.data()[i * c + o]).sum::<f64>())
            .collect()
    };
    let mut out = vec![0.0; n * c * l];
    let mut weights = vec![0.0; n * heads * l * l];
    for ni in 0..n {
        let tokens: Vec<Vec<f64>> = (0..l)
            .map(|p| (0..c).map(|ch| x.data()[(ni * c + ch) * l + p] + pos.data()[p * c + ch]).collect())
            .collect();
        let q: Vec<Vec<f64>> = tokens.iter().map(|t| lin(&m.q, t)).collect();
        let k: Vec<Vec<f64>> = tokens.iter().map(|t| lin(&m.k, t)).collect();
        let v: Vec<Vec<f64>> = tokens.iter().map(|t| lin(&m.v, t)).collect();
        let mut merged = vec![vec![0.0; c]; l];
        for hd in 0..heads {
            let r = hd * d..(hd + 1) * d;
            for i in 0..l {
                let scores: Vec<f64> = (0..l)
                    .map(|j| r.clone().map(|e| q[i][e] * k[j][e]).sum::<f64>() / (d as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
                for j in 0..l {
                    let a = (scores[j] - mx).exp() / z;
                    weights[((ni * heads + hd) * l + i) * l + j] = a;
                    for e in r.clone() {
                        merged[i][e] += a * v[j][e];
                    }
                }
            }
        }
        for (p, row) in merged.iter().enumerate() {
            let o = lin(&m.out, row);
            for ch in 0..c {
                out[(ni * c + ch) * l + p] = o[ch];
            }
        }
    }
    (Tensor::new(&[n, c, h, w], out).unwrap(), weights)
}

/// Pixel loop over explicit indices of `[N,1,H,W]` tensors.
pub fn confusion_oracle(pred: &Tensor<f64>, mask: &Tensor<f64>, thr: f64) -> amseg::metrics::ConfusionCounts {
    let s = pred.shape();
    let mut c = amseg::metrics::ConfusionCounts::default();
    for n in 0..s[0] {
        for i in 0..s[2] {
            for j in 0..s[3] {
                let p = pred.at(&[n, 0, i, j]) >= thr;
                let m = mask.at(&[n, 0, i, j]) == 1.0;
                match (p, m) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
        }
    }
    c
}
