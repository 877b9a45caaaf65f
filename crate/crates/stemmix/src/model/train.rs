//! Feature extraction, the Adam training loop, and checkpoint I/O.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::net::{ModelConfig, Network, Variant};
use super::tensor::Tensor;
use super::{lsro_loss, TargetDistribution};
use crate::generation::{DatasetExample, GenConfig, Label};
use crate::mashupdb::MashupDB;
use crate::signal::{mel_spectrogram_n, AudioClip};
use crate::{Error, Result};

/// Training hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct Hyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lr: 1e-4,
            batch_size: 16,
            epochs: 30,
            seed: 0,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One epoch's metrics line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

impl std::fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "epoch {}\ttrain_loss {:.6}\tval_loss {:.6}\tval_accuracy {:.4}",
            self.epoch, self.train_loss, self.val_loss, self.val_accuracy
        )
    }
}

/// A trained model plus its training record.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network state at the best validation accuracy.
    pub network: Network,
    pub metrics: Vec<EpochMetrics>,
    pub best_val_accuracy: f64,
}

/// Per-example model inputs: one standardized mel tensor per branch.
pub type Features = Vec<Tensor>;

/// Convert one clip to a standardized, T-cropped [1, 1, n_mels, T] tensor.
pub fn clip_features(clip: &AudioClip, config: &ModelConfig) -> Result<Tensor> {
    let mel = mel_spectrogram_n(clip, config.n_mels)?;
    let t_have = mel.n_frames();
    let t = config.input_frames;
    let mut x = Tensor::zeros(&[1, 1, config.n_mels, t]);
    // center crop; zero-pad (at the log floor) when short
    let floor = crate::signal::log_floor();
    x.data.iter_mut().for_each(|v| *v = floor);
    let (src0, dst0, n) = if t_have >= t {
        ((t_have - t) / 2, 0, t)
    } else {
        (0, (t - t_have) / 2, t_have)
    };
    for f in 0..config.n_mels {
        for i in 0..n {
            x.data[f * t + dst0 + i] = mel.values[src0 + i][f];
        }
    }
    // per-example standardization
    let mean = x.data.iter().sum::<f64>() / x.data.len() as f64;
    let var = x.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.data.len() as f64;
    let scale = 1.0 / var.sqrt().max(1e-8);
    x.data.iter_mut().for_each(|v| *v = (*v - mean) * scale);
    Ok(x)
}

/// Features for one candidate: three stem tensors (premix) or one mix tensor
/// (postmix).
pub fn candidate_features(
    db: &MashupDB,
    candidate: &crate::generation::MashupCandidate,
    config: &ModelConfig,
    gen_cfg: &GenConfig,
) -> Result<Features> {
    match config.variant {
        Variant::Premix => {
            let stems = crate::generation::render_stems_cfg(db, candidate, gen_cfg)?;
            stems.iter().map(|s| clip_features(s, config)).collect()
        }
        Variant::Postmix => {
            let mixdown = crate::generation::render_cfg(db, candidate, gen_cfg)?;
            Ok(vec![clip_features(&mixdown, config)?])
        }
    }
}

/// Stack per-example single-batch tensors into one batch per branch.
fn stack_batch(examples: &[&Features]) -> Vec<Tensor> {
    let n_branches = examples[0].len();
    (0..n_branches)
        .map(|br| {
            let one = &examples[0][br];
            let per = one.data.len();
            let mut shape = one.shape.clone();
            shape[0] = examples.len();
            let mut data = Vec::with_capacity(per * examples.len());
            for ex in examples {
                data.extend_from_slice(&ex[br].data);
            }
            Tensor { shape, data }
        })
        .collect()
}

fn label_target(label: Label) -> TargetDistribution {
    match label {
        Label::Positive => TargetDistribution::new(1.0, 0.0),
        Label::Negative => TargetDistribution::new(0.0, 1.0),
        Label::Unlabeled => TargetDistribution::new(0.5, 0.5),
    }
}

/// Deterministic 4:1 split of example indices into (train, validation).
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed ^ 0x51EA7));
    let n_val = n / 5;
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Train a network on pre-extracted features with mini-batch Adam and LSRO.
///
/// `examples` and `features` are parallel. Validation loss covers the whole
/// validation slice; validation accuracy covers its labeled (pos/neg) subset.
/// Returns the network state from the best-accuracy epoch.
pub fn train_on_features(
    examples: &[DatasetExample],
    features: &[Features],
    config: &ModelConfig,
    hyper: &Hyper,
) -> Result<TrainOutcome> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    assert_eq!(examples.len(), features.len());
    let (train_idx, val_idx) = split_indices(examples.len(), hyper.seed);
    let mut net = Network::new(config, hyper.seed)?;
    let mut rng = ChaCha20Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut metrics = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, Network)> = None;
    let mut adam_t = 0;
    for epoch in 1..=hyper.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        let mut n_batches = 0;
        for batch in order.chunks(hyper.batch_size) {
            let feats: Vec<&Features> = batch.iter().map(|&i| &features[i]).collect();
            let inputs = stack_batch(&feats);
            let probs = net.forward(&inputs, true)?;
            let mut targets = Tensor::zeros(&[batch.len(), 2]);
            let mut loss = 0.0;
            for (row, &i) in batch.iter().enumerate() {
                let t = label_target(examples[i].label);
                targets.data[2 * row] = t.p_pos;
                targets.data[2 * row + 1] = t.p_neg;
                loss += lsro_loss((probs.data[2 * row], probs.data[2 * row + 1]), &t);
            }
            loss /= batch.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged(adam_t));
            }
            train_loss += loss;
            n_batches += 1;
            net.zero_grad();
            net.backward(&targets);
            adam_t += 1;
            for p in net.params_mut() {
                p.adam_step(hyper.lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, adam_t);
            }
        }
        train_loss /= n_batches.max(1) as f64;

        let (val_loss, val_accuracy) = evaluate_split(&mut net, examples, features, &val_idx)?;
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, net.clone()));
        }
    }
    let (best_val_accuracy, network) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        network,
        metrics,
        best_val_accuracy,
    })
}

/// Mean LSRO loss over a slice plus binary accuracy on its labeled subset.
pub fn evaluate_split(
    net: &mut Network,
    examples: &[DatasetExample],
    features: &[Features],
    idx: &[usize],
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut labeled = 0usize;
    for batch in idx.chunks(16) {
        let feats: Vec<&Features> = batch.iter().map(|&i| &features[i]).collect();
        let inputs = stack_batch(&feats);
        let probs = net.forward(&inputs, false)?;
        for (row, &i) in batch.iter().enumerate() {
            let p_pos = probs.data[2 * row];
            let t = label_target(examples[i].label);
            loss += lsro_loss((p_pos, probs.data[2 * row + 1]), &t);
            match examples[i].label {
                Label::Positive => {
                    labeled += 1;
                    if p_pos > 0.5 {
                        correct += 1;
                    }
                }
                Label::Negative => {
                    labeled += 1;
                    if p_pos <= 0.5 {
                        correct += 1;
                    }
                }
                Label::Unlabeled => {}
            }
        }
    }
    let n = idx.len().max(1) as f64;
    Ok((loss / n, correct as f64 / labeled.max(1) as f64))
}

/// Mashability of pre-extracted features: the positive-class posterior.
pub fn mashability_features(net: &mut Network, features: &Features) -> Result<f64> {
    let inputs = stack_batch(&[features]);
    let probs = net.forward(&inputs, false)?;
    Ok(probs.data[0])
}

// ------------------------------- checkpoints -------------------------------

const CKPT_MAGIC: &[u8] = b"stemmix-ckpt-v1\n";

/// Save a network (weights as f32, Adam moments and BN statistics as f64).
pub fn save_checkpoint(net: &mut Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    let c = &net.config;
    out.extend_from_slice(
        format!(
            "{} {} {} {} {} {} {} {} {} {}\n",
            c.variant.as_str(),
            c.n_mels,
            c.input_frames,
            c.sourcenet_filters[0],
            c.sourcenet_filters[1],
            c.sourcenet_filters[2],
            c.sourcenet_filters[3],
            c.convblock1d_filters,
            c.fc_width,
            c.n_classes,
        )
        .as_bytes(),
    );
    for p in net.params_mut() {
        out.extend_from_slice(&(p.w.len() as u64).to_le_bytes());
        for &w in &p.w {
            out.extend_from_slice(&(w as f32).to_le_bytes());
        }
        for &m in p.m.iter().chain(&p.v) {
            out.extend_from_slice(&m.to_le_bytes());
        }
    }
    for bn in net.bns_mut() {
        for &s in bn.running_mean.iter().chain(&bn.running_var) {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reload a checkpoint; forward outputs are bit-identical to the saved net.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if !bytes.starts_with(CKPT_MAGIC) {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let rest = &bytes[CKPT_MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing config line".into()))?;
    let line = std::str::from_utf8(&rest[..nl])
        .map_err(|_| Error::Checkpoint("config line is not utf-8".into()))?;
    let f: Vec<&str> = line.split(' ').collect();
    if f.len() != 10 {
        return Err(Error::Checkpoint("config line wants 10 fields".into()));
    }
    let num = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Checkpoint(format!("bad number {s:?}")))
    };
    let config = ModelConfig {
        variant: f[0].parse()?,
        n_mels: num(f[1])?,
        input_frames: num(f[2])?,
        sourcenet_filters: [num(f[3])?, num(f[4])?, num(f[5])?, num(f[6])?],
        conv2d_kernel: (3, 3),
        pool2d: (2, 1),
        convblock1d_filters: num(f[7])?,
        fc_width: num(f[8])?,
        n_classes: num(f[9])?,
    };
    let mut net = Network::new(&config, 0)?;
    let mut cur = &rest[nl + 1..];
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(Error::Checkpoint("truncated parameter data".into()));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    for p in net.params_mut() {
        let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if len != p.w.len() {
            return Err(Error::Checkpoint(format!(
                "parameter block wants {} values, config implies {}",
                len,
                p.w.len()
            )));
        }
        for w in p.w.iter_mut() {
            *w = f32::from_le_bytes(take(4)?.try_into().unwrap()) as f64;
        }
        for m in p.m.iter_mut() {
            *m = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
        for v in p.v.iter_mut() {
            *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
    }
    for bn in net.bns_mut() {
        for s in bn.running_mean.iter_mut() {
            *s = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
        for s in bn.running_var.iter_mut() {
            *s = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
    }
    if !cur.is_empty() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(net)
}
