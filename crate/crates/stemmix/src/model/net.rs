//! The PreMixNet / PostMixNet architectures.
//!
//! Each input branch runs a SourceNet of two ConvBlock2D (conv-BN-ReLU twice,
//! then a (2,1) temporal average pool). Premix branch outputs are concatenated
//! along the channel axis; a ConvBlock1D (frequency-collapsing (3, n_mels)
//! kernel, then (3,1), then a (2,1) pool) feeds a temporal summary (mean over
//! time plus max over time, summed) into two fully-connected layers and a
//! 2-way softmax.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::layers::{
    avgpool_time2, avgpool_time2_backward, BatchNorm2d, Conv2d, Linear, Param, Relu,
};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Which architecture of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Three separate stem spectrograms in, branches unshared.
    Premix,
    /// One downmixed spectrogram in.
    Postmix,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Premix => "premix",
            Variant::Postmix => "postmix",
        }
    }

    pub fn n_inputs(self) -> usize {
        match self {
            Variant::Premix => 3,
            Variant::Postmix => 1,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "premix" => Ok(Variant::Premix),
            "postmix" => Ok(Variant::Postmix),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Architecture hyperparameters. `full()` is the production scale; `desk()` shrinks
/// everything so single-core training terminates quickly.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_mels: usize,
    /// Fixed input frame count T; mel specs are center-cropped or padded.
    pub input_frames: usize,
    pub sourcenet_filters: [usize; 4],
    pub conv2d_kernel: (usize, usize),
    pub pool2d: (usize, usize),
    pub convblock1d_filters: usize,
    pub fc_width: usize,
    pub n_classes: usize,
}

impl ModelConfig {
    pub fn full(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            n_mels: 128,
            input_frames: 512,
            sourcenet_filters: [64, 64, 128, 128],
            conv2d_kernel: (3, 3),
            pool2d: (2, 1),
            convblock1d_filters: 256,
            fc_width: 128,
            n_classes: 2,
        }
    }

    /// Desk-scale config for CPU runs.
    pub fn desk(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            n_mels: 32,
            input_frames: 96,
            sourcenet_filters: [4, 4, 8, 8],
            conv2d_kernel: (3, 3),
            pool2d: (2, 1),
            convblock1d_filters: 16,
            fc_width: 32,
            n_classes: 2,
        }
    }

    /// Tiny config for gradient checking.
    pub fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            n_mels: 6,
            input_frames: 8,
            sourcenet_filters: [2, 2, 3, 3],
            conv2d_kernel: (3, 3),
            pool2d: (2, 1),
            convblock1d_filters: 4,
            fc_width: 5,
            n_classes: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv2d_kernel != (3, 3) || self.pool2d != (2, 1) {
            return Err(Error::Config(
                "only (3,3) kernels with (2,1) pooling are implemented".into(),
            ));
        }
        if self.input_frames < 8 {
            return Err(Error::Config("input_frames must be at least 8".into()));
        }
        if self.n_classes != 2 {
            return Err(Error::Config("the head is a 2-way softmax".into()));
        }
        Ok(())
    }
}

/// conv-BN-ReLU, conv-BN-ReLU, temporal average pool.
#[derive(Debug, Clone)]
struct ConvBlock2d {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    relu2: Relu,
    t_in: usize,
}

impl ConvBlock2d {
    fn new(in_ch: usize, mid_ch: usize, out_ch: usize, rng: &mut ChaCha20Rng) -> ConvBlock2d {
        ConvBlock2d {
            conv1: Conv2d::new(in_ch, mid_ch, 3, 3, true, rng),
            bn1: BatchNorm2d::new(mid_ch),
            relu1: Relu::default(),
            conv2: Conv2d::new(mid_ch, out_ch, 3, 3, true, rng),
            bn2: BatchNorm2d::new(out_ch),
            relu2: Relu::default(),
            t_in: 0,
        }
    }

    fn forward(&mut self, x: &Tensor, training: bool) -> Tensor {
        let h = self
            .relu1
            .forward(&self.bn1.forward(&self.conv1.forward(x), training));
        let h = self
            .relu2
            .forward(&self.bn2.forward(&self.conv2.forward(&h), training));
        self.t_in = h.dim(3);
        avgpool_time2(&h)
    }

    fn backward(&mut self, gy: &Tensor) -> Tensor {
        let g = avgpool_time2_backward(gy, self.t_in);
        let g = self
            .conv2
            .backward(&self.bn2.backward(&self.relu2.backward(&g)));
        self.conv1
            .backward(&self.bn1.backward(&self.relu1.backward(&g)))
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
        ]
    }

    fn bns_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        vec![&mut self.bn1, &mut self.bn2]
    }
}

/// Per-stem feature extractor: two ConvBlock2D.
#[derive(Debug, Clone)]
struct SourceNet {
    block1: ConvBlock2d,
    block2: ConvBlock2d,
}

impl SourceNet {
    fn new(filters: &[usize; 4], rng: &mut ChaCha20Rng) -> SourceNet {
        SourceNet {
            block1: ConvBlock2d::new(1, filters[0], filters[1], rng),
            block2: ConvBlock2d::new(filters[1], filters[2], filters[3], rng),
        }
    }

    fn forward(&mut self, x: &Tensor, training: bool) -> Tensor {
        let h = self.block1.forward(x, training);
        self.block2.forward(&h, training)
    }

    fn backward(&mut self, gy: &Tensor) -> Tensor {
        let g = self.block2.backward(gy);
        self.block1.backward(&g)
    }
}

/// Full network: branches, trunk, head.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    branches: Vec<SourceNet>,
    conv1d_a: Conv2d, // (3, n_mels) frequency-collapsing
    bn_a: BatchNorm2d,
    relu_a: Relu,
    conv1d_b: Conv2d, // (3, 1)
    bn_b: BatchNorm2d,
    relu_b: Relu,
    fc1: Linear,
    relu_fc: Relu,
    fc2: Linear,
    // forward caches
    trunk_t_in: usize,
    summary_t: usize,
    argmax: Vec<usize>, // [n * channels] time index of the max
    probs: Tensor,
}

impl Network {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Network> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let branches: Vec<SourceNet> = (0..config.variant.n_inputs())
            .map(|_| SourceNet::new(&config.sourcenet_filters, &mut rng))
            .collect();
        let concat_ch = config.sourcenet_filters[3] * branches.len();
        let c1d = config.convblock1d_filters;
        Ok(Network {
            conv1d_a: Conv2d::new(concat_ch, c1d, config.n_mels, 3, false, &mut rng),
            bn_a: BatchNorm2d::new(c1d),
            relu_a: Relu::default(),
            conv1d_b: Conv2d::new(c1d, c1d, 1, 3, false, &mut rng),
            bn_b: BatchNorm2d::new(c1d),
            relu_b: Relu::default(),
            fc1: Linear::new(c1d, config.fc_width, &mut rng),
            relu_fc: Relu::default(),
            fc2: Linear::new(config.fc_width, config.n_classes, &mut rng),
            branches,
            config: config.clone(),
            trunk_t_in: 0,
            summary_t: 0,
            argmax: Vec::new(),
            probs: Tensor::zeros(&[0]),
        })
    }

    /// Forward pass; `inputs` holds one [n, 1, n_mels, T] tensor per branch.
    /// Returns [n, 2] class probabilities.
    pub fn forward(&mut self, inputs: &[Tensor], training: bool) -> Result<Tensor> {
        if inputs.len() != self.branches.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} expects {} inputs, got {}",
                self.config.variant.as_str(),
                self.branches.len(),
                inputs.len()
            )));
        }
        for x in inputs {
            if x.shape.len() != 4
                || x.dim(1) != 1
                || x.dim(2) != self.config.n_mels
                || x.dim(3) != self.config.input_frames
            {
                return Err(Error::ShapeMismatch(format!(
                    "branch input must be [n, 1, {}, {}], got {:?}",
                    self.config.n_mels, self.config.input_frames, x.shape
                )));
            }
        }
        let outs: Vec<Tensor> = self
            .branches
            .iter_mut()
            .zip(inputs)
            .map(|(b, x)| b.forward(x, training))
            .collect();
        let concat = concat_channels(&outs);

        let h = self.conv1d_a.forward(&concat);
        let h = self.relu_a.forward(&self.bn_a.forward(&h, training));
        let h2 = self.conv1d_b.forward(&h);
        let h2 = self.relu_b.forward(&self.bn_b.forward(&h2, training));
        self.trunk_t_in = h2.dim(3);
        let pooled = avgpool_time2(&h2); // [n, c, 1, T']

        // temporal summary: mean over time plus max over time
        let (n, c, t) = (pooled.dim(0), pooled.dim(1), pooled.dim(3));
        self.summary_t = t;
        let mut summary = Tensor::zeros(&[n, c]);
        self.argmax = vec![0; n * c];
        for b in 0..n {
            for ch in 0..c {
                let i0 = pooled.at4(b, ch, 0, 0);
                let row = &pooled.data[i0..i0 + t];
                let mean = row.iter().sum::<f64>() / t as f64;
                let (am, mx) =
                    row.iter()
                        .enumerate()
                        .fold(
                            (0, f64::NEG_INFINITY),
                            |(ai, m), (i, &v)| {
                                if v > m {
                                    (i, v)
                                } else {
                                    (ai, m)
                                }
                            },
                        );
                summary.data[b * c + ch] = mean + mx;
                self.argmax[b * c + ch] = am;
            }
        }

        let h = self.relu_fc.forward(&self.fc1.forward(&summary));
        let logits = self.fc2.forward(&h);
        let probs = softmax_rows(&logits);
        probs.assert_finite("network output")?;
        self.probs = probs.clone();
        Ok(probs)
    }

    /// Backward pass from per-example target distributions [n, 2], assuming
    /// the loss is the batch-mean LSRO cross-entropy of the last forward.
    pub fn backward(&mut self, targets: &Tensor) {
        let (n, k) = (self.probs.dim(0), self.probs.dim(1));
        // d(mean CE)/d(logits) = (probs - target) / n
        let mut glogits = Tensor::zeros(&[n, k]);
        for i in 0..n * k {
            glogits.data[i] = (self.probs.data[i] - targets.data[i]) / n as f64;
        }
        let g = self.fc2.backward(&glogits);
        let g = self.fc1.backward(&self.relu_fc.backward(&g));

        // summary backward: mean spreads 1/t, max routes to argmax
        let c = g.dim(1);
        let t = self.summary_t;
        let mut gpooled = Tensor::zeros(&[n, c, 1, t]);
        for b in 0..n {
            for ch in 0..c {
                let gv = g.data[b * c + ch];
                let i0 = gpooled.at4(b, ch, 0, 0);
                for i in 0..t {
                    gpooled.data[i0 + i] = gv / t as f64;
                }
                gpooled.data[i0 + self.argmax[b * c + ch]] += gv;
            }
        }

        let g = avgpool_time2_backward(&gpooled, self.trunk_t_in);
        let g = self
            .conv1d_b
            .backward(&self.bn_b.backward(&self.relu_b.backward(&g)));
        let g = self
            .conv1d_a
            .backward(&self.bn_a.backward(&self.relu_a.backward(&g)));

        let per_branch = self.config.sourcenet_filters[3];
        for (i, branch) in self.branches.iter_mut().enumerate() {
            let slice = slice_channels(&g, i * per_branch, per_branch);
            branch.backward(&slice);
        }
    }

    /// Every learnable parameter block, in declaration order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for b in &mut self.branches {
            out.extend(b.block1.params_mut());
            out.extend(b.block2.params_mut());
        }
        out.push(&mut self.conv1d_a.weight);
        out.push(&mut self.conv1d_a.bias);
        out.push(&mut self.bn_a.gamma);
        out.push(&mut self.bn_a.beta);
        out.push(&mut self.conv1d_b.weight);
        out.push(&mut self.conv1d_b.bias);
        out.push(&mut self.bn_b.gamma);
        out.push(&mut self.bn_b.beta);
        out.push(&mut self.fc1.weight);
        out.push(&mut self.fc1.bias);
        out.push(&mut self.fc2.weight);
        out.push(&mut self.fc2.bias);
        out
    }

    /// Every batch-norm layer, in declaration order (for running stats).
    pub fn bns_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        let mut out = Vec::new();
        for b in &mut self.branches {
            out.extend(b.block1.bns_mut());
            out.extend(b.block2.bns_mut());
        }
        out.push(&mut self.bn_a);
        out.push(&mut self.bn_b);
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

fn concat_channels(parts: &[Tensor]) -> Tensor {
    let (n, f, t) = (parts[0].dim(0), parts[0].dim(2), parts[0].dim(3));
    let c_total: usize = parts.iter().map(|p| p.dim(1)).sum();
    let mut y = Tensor::zeros(&[n, c_total, f, t]);
    for b in 0..n {
        let mut co = 0;
        for p in parts {
            for c in 0..p.dim(1) {
                let src = p.at4(b, c, 0, 0);
                let dst = y.at4(b, co + c, 0, 0);
                y.data[dst..dst + f * t].copy_from_slice(&p.data[src..src + f * t]);
            }
            co += p.dim(1);
        }
    }
    y
}

fn slice_channels(x: &Tensor, start: usize, count: usize) -> Tensor {
    let (n, f, t) = (x.dim(0), x.dim(2), x.dim(3));
    let mut y = Tensor::zeros(&[n, count, f, t]);
    for b in 0..n {
        for c in 0..count {
            let src = x.at4(b, start + c, 0, 0);
            let dst = y.at4(b, c, 0, 0);
            y.data[dst..dst + f * t].copy_from_slice(&x.data[src..src + f * t]);
        }
    }
    y
}

fn softmax_rows(logits: &Tensor) -> Tensor {
    let (n, k) = (logits.dim(0), logits.dim(1));
    let mut y = Tensor::zeros(&[n, k]);
    for b in 0..n {
        let row = &logits.data[b * k..(b + 1) * k];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - mx).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (i, e) in exps.iter().enumerate() {
            y.data[b * k + i] = e / sum;
        }
    }
    y
}
