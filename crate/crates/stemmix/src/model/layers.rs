//! Network layers with hand-written forward/backward passes.
//!
//! Layers cache what their backward pass needs during forward; a training
//! step is forward → backward → Adam update over every [`Param`].

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::tensor::Tensor;

/// A learnable parameter block with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub w: Vec<f64>,
    pub g: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Param {
    pub fn zeros(n: usize) -> Param {
        Param {
            w: vec![0.0; n],
            g: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Fan-in-scaled uniform init.
    pub fn uniform(n: usize, fan_in: usize, rng: &mut ChaCha20Rng) -> Param {
        let limit = (1.0 / fan_in.max(1) as f64).sqrt();
        let mut p = Param::zeros(n);
        for w in &mut p.w {
            *w = rng.gen_range(-limit..limit);
        }
        p.quantize();
        p
    }

    pub fn zero_grad(&mut self) {
        self.g.iter_mut().for_each(|g| *g = 0.0);
    }

    /// One Adam step (`t` counts from 1), then f32 quantization so a saved
    /// checkpoint reloads to bit-identical weights.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64, t: usize) {
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);
        for i in 0..self.w.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * self.g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * self.g[i] * self.g[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            self.w[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        self.quantize();
    }

    /// Round weights to f32 precision (checkpoints store f32).
    pub fn quantize(&mut self) {
        for w in &mut self.w {
            *w = *w as f32 as f64;
        }
    }
}

/// 2-D convolution over [batch, channel, freq, time] maps.
///
/// Time padding is always "same" (odd `kt`); frequency padding is "same"
/// when `pad_freq`, else "valid" (used by the frequency-collapsing kernel).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param, // [oc, ic, kf, kt]
    pub bias: Param,   // [oc]
    pub in_ch: usize,
    pub out_ch: usize,
    pub kf: usize,
    pub kt: usize,
    pub pad_freq: bool,
    cache_x: Option<Tensor>,
}

impl Conv2d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kf: usize,
        kt: usize,
        pad_freq: bool,
        rng: &mut ChaCha20Rng,
    ) -> Conv2d {
        let fan_in = in_ch * kf * kt;
        Conv2d {
            weight: Param::uniform(out_ch * in_ch * kf * kt, fan_in, rng),
            bias: Param::zeros(out_ch),
            in_ch,
            out_ch,
            kf,
            kt,
            pad_freq,
            cache_x: None,
        }
    }

    fn pads(&self) -> (usize, usize) {
        let pf = if self.pad_freq { (self.kf - 1) / 2 } else { 0 };
        (pf, (self.kt - 1) / 2)
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let (n, ic, f_in, t_in) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        debug_assert_eq!(ic, self.in_ch);
        let (pf, pt) = self.pads();
        let f_out = f_in + 2 * pf - self.kf + 1;
        let mut y = Tensor::zeros(&[n, self.out_ch, f_out, t_in]);
        let w = &self.weight.w;
        for b in 0..n {
            for oc in 0..self.out_ch {
                let bias = self.bias.w[oc];
                for of in 0..f_out {
                    let y0 = y.at4(b, oc, of, 0);
                    y.data[y0..y0 + t_in].iter_mut().for_each(|v| *v = bias);
                    for c in 0..ic {
                        for df in 0..self.kf {
                            let fi = (of + df).wrapping_sub(pf);
                            if fi >= f_in {
                                continue;
                            }
                            let x0 = x.at4(b, c, fi, 0);
                            for dt in 0..self.kt {
                                let wv = w[((oc * ic + c) * self.kf + df) * self.kt + dt];
                                if wv == 0.0 {
                                    continue;
                                }
                                // time range where ti = ot + dt - pt is valid
                                let ot_lo = pt.saturating_sub(dt);
                                let ot_hi = (t_in + pt - dt).min(t_in);
                                for ot in ot_lo..ot_hi {
                                    y.data[y0 + ot] += wv * x.data[x0 + ot + dt - pt];
                                }
                            }
                        }
                    }
                }
            }
        }
        self.cache_x = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let x = self.cache_x.as_ref().expect("forward before backward");
        let (n, ic, f_in, t_in) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (pf, pt) = self.pads();
        let f_out = gy.dim(2);
        let mut gx = Tensor::zeros(&[n, ic, f_in, t_in]);
        let w = &self.weight.w;
        let gw = &mut self.weight.g;
        for b in 0..n {
            for oc in 0..self.out_ch {
                for of in 0..f_out {
                    let y0 = gy.at4(b, oc, of, 0);
                    self.bias.g[oc] += gy.data[y0..y0 + t_in].iter().sum::<f64>();
                    for c in 0..ic {
                        for df in 0..self.kf {
                            let fi = (of + df).wrapping_sub(pf);
                            if fi >= f_in {
                                continue;
                            }
                            let x0 = x.at4(b, c, fi, 0);
                            for dt in 0..self.kt {
                                let wi = ((oc * ic + c) * self.kf + df) * self.kt + dt;
                                let wv = w[wi];
                                let ot_lo = pt.saturating_sub(dt);
                                let ot_hi = (t_in + pt - dt).min(t_in);
                                let mut acc = 0.0;
                                for ot in ot_lo..ot_hi {
                                    let g = gy.data[y0 + ot];
                                    acc += g * x.data[x0 + ot + dt - pt];
                                    gx.data[x0 + ot + dt - pt] += g * wv;
                                }
                                gw[wi] += acc;
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

/// Per-channel batch normalization over (batch, freq, time).
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    training: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> BatchNorm2d {
        let mut gamma = Param::zeros(channels);
        gamma.w.iter_mut().for_each(|w| *w = 1.0);
        BatchNorm2d {
            gamma,
            beta: Param::zeros(channels),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Tensor {
        let (n, c, f, t) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let count = (n * f * t) as f64;
        let mut y = Tensor::zeros(&[n, c, f, t]);
        let mut xhat = Tensor::zeros(&[n, c, f, t]);
        let mut inv_std = vec![0.0; c];
        for (ch, istd_slot) in inv_std.iter_mut().enumerate() {
            let (mean, var) = if training {
                let mut sum = 0.0;
                let mut sq = 0.0;
                for b in 0..n {
                    let i0 = x.at4(b, ch, 0, 0);
                    for v in &x.data[i0..i0 + f * t] {
                        sum += v;
                        sq += v * v;
                    }
                }
                let mean = sum / count;
                let var = (sq / count - mean * mean).max(0.0);
                self.running_mean[ch] =
                    (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean;
                self.running_var[ch] =
                    (1.0 - self.momentum) * self.running_var[ch] + self.momentum * var;
                (mean, var)
            } else {
                (self.running_mean[ch], self.running_var[ch])
            };
            let istd = 1.0 / (var + self.eps).sqrt();
            *istd_slot = istd;
            let (g, bta) = (self.gamma.w[ch], self.beta.w[ch]);
            for b in 0..n {
                let i0 = x.at4(b, ch, 0, 0);
                for i in i0..i0 + f * t {
                    let h = (x.data[i] - mean) * istd;
                    xhat.data[i] = h;
                    y.data[i] = g * h + bta;
                }
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            training,
        });
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let cache = self.cache.as_ref().expect("forward before backward");
        let (n, c, f, t) = (gy.dim(0), gy.dim(1), gy.dim(2), gy.dim(3));
        let count = (n * f * t) as f64;
        let mut gx = Tensor::zeros(&[n, c, f, t]);
        for ch in 0..c {
            let g = self.gamma.w[ch];
            let istd = cache.inv_std[ch];
            let mut sum_gy = 0.0;
            let mut sum_gy_xhat = 0.0;
            for b in 0..n {
                let i0 = gy.at4(b, ch, 0, 0);
                for i in i0..i0 + f * t {
                    sum_gy += gy.data[i];
                    sum_gy_xhat += gy.data[i] * cache.xhat.data[i];
                }
            }
            self.gamma.g[ch] += sum_gy_xhat;
            self.beta.g[ch] += sum_gy;
            for b in 0..n {
                let i0 = gy.at4(b, ch, 0, 0);
                for i in i0..i0 + f * t {
                    gx.data[i] = if cache.training {
                        // gradient through the batch statistics
                        g * istd
                            * (gy.data[i]
                                - sum_gy / count
                                - cache.xhat.data[i] * sum_gy_xhat / count)
                    } else {
                        // inference: running stats are constants
                        g * istd * gy.data[i]
                    };
                }
            }
        }
        gx
    }
}

/// ReLU with cached activation mask.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.mask = x.data.iter().map(|&v| v > 0.0).collect();
        Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        }
    }

    pub fn backward(&self, gy: &Tensor) -> Tensor {
        Tensor {
            shape: gy.shape.clone(),
            data: gy
                .data
                .iter()
                .zip(&self.mask)
                .map(|(&g, &m)| if m { g } else { 0.0 })
                .collect(),
        }
    }
}

/// Average pooling by 2 along the time axis (floor truncation).
pub fn avgpool_time2(x: &Tensor) -> Tensor {
    let (n, c, f, t) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let t_out = t / 2;
    let mut y = Tensor::zeros(&[n, c, f, t_out]);
    for b in 0..n {
        for ch in 0..c {
            for fr in 0..f {
                let x0 = x.at4(b, ch, fr, 0);
                let y0 = y.at4(b, ch, fr, 0);
                for ot in 0..t_out {
                    y.data[y0 + ot] = 0.5 * (x.data[x0 + 2 * ot] + x.data[x0 + 2 * ot + 1]);
                }
            }
        }
    }
    y
}

pub fn avgpool_time2_backward(gy: &Tensor, t_in: usize) -> Tensor {
    let (n, c, f, t_out) = (gy.dim(0), gy.dim(1), gy.dim(2), gy.dim(3));
    let mut gx = Tensor::zeros(&[n, c, f, t_in]);
    for b in 0..n {
        for ch in 0..c {
            for fr in 0..f {
                let y0 = gy.at4(b, ch, fr, 0);
                let x0 = gx.at4(b, ch, fr, 0);
                for ot in 0..t_out {
                    let g = 0.5 * gy.data[y0 + ot];
                    gx.data[x0 + 2 * ot] += g;
                    gx.data[x0 + 2 * ot + 1] += g;
                }
            }
        }
    }
    gx
}

/// Fully-connected layer over [batch, features].
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param, // [out, in]
    pub bias: Param,   // [out]
    pub in_dim: usize,
    pub out_dim: usize,
    cache_x: Option<Tensor>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha20Rng) -> Linear {
        Linear {
            weight: Param::uniform(out_dim * in_dim, in_dim, rng),
            bias: Param::zeros(out_dim),
            in_dim,
            out_dim,
            cache_x: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let n = x.dim(0);
        debug_assert_eq!(x.dim(1), self.in_dim);
        let mut y = Tensor::zeros(&[n, self.out_dim]);
        for b in 0..n {
            let x0 = b * self.in_dim;
            for o in 0..self.out_dim {
                let w0 = o * self.in_dim;
                let mut acc = self.bias.w[o];
                for i in 0..self.in_dim {
                    acc += self.weight.w[w0 + i] * x.data[x0 + i];
                }
                y.data[b * self.out_dim + o] = acc;
            }
        }
        self.cache_x = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let x = self.cache_x.as_ref().expect("forward before backward");
        let n = x.dim(0);
        let mut gx = Tensor::zeros(&[n, self.in_dim]);
        for b in 0..n {
            let x0 = b * self.in_dim;
            for o in 0..self.out_dim {
                let g = gy.data[b * self.out_dim + o];
                self.bias.g[o] += g;
                let w0 = o * self.in_dim;
                for i in 0..self.in_dim {
                    self.weight.g[w0 + i] += g * x.data[x0 + i];
                    gx.data[x0 + i] += g * self.weight.w[w0 + i];
                }
            }
        }
        gx
    }
}
