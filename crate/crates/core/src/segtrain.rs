//! Segmentor training on translated source images with source labels.
//!
//! The translator is only read: source patches are passed through it once
//! and the U-Net is fitted to `(translated patch, label patch)` pairs. Since
//! translators preserve geometry, labels stay pixel-aligned.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::gantrain::translate;
use crate::imagecore::{Image, ProbMap, SegMask};
use crate::networks::{Architecture, ForwardOutput, ModelBundle, UNetSpec};
use crate::ops::scalar;

/// Probability floor for [`seg_loss`].
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    #[default]
    Uniform,
    /// `w_k = N / (K * count_k)` over the training labels.
    InverseFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub class_weighting: ClassWeighting,
    pub threshold: f64,
    pub unet: UNetSpec,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 4,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            class_weighting: ClassWeighting::Uniform,
            threshold: 0.5,
            unet: UNetSpec::default(),
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Architecture::UNet(self.unet.clone()).validate()
    }
}

/// Weighted mean per-pixel cross-entropy `-sum w[y] log p[y] / sum w[y]`.
pub fn seg_loss(pred: &ProbMap, label: &SegMask, weights: [f64; 2]) -> Result<f64> {
    if pred.dims() != label.dims() {
        return Err(Error::DimMismatch(format!(
            "prediction {:?} vs label {:?}",
            pred.dims(),
            label.dims()
        )));
    }
    let (h, w) = pred.dims();
    let mut num = 0.0;
    let mut den = 0.0;
    for y in 0..h {
        for x in 0..w {
            let k = label.get(y, x) as usize;
            let p = (pred.get(y, x, k) as f64).clamp(PROB_EPS, 1.0);
            num -= weights[k] * p.ln();
            den += weights[k];
        }
    }
    Ok(num / den)
}

/// Differentiable [`seg_loss`] on logits `(N, K, H, W)` against one-hot targets.
pub fn seg_loss_logits(logits: &Tensor, one_hot: &Tensor, weights: [f64; 2]) -> Result<Tensor> {
    if logits.dims() != one_hot.dims() {
        return Err(Error::DimMismatch(format!("{:?} vs {:?}", logits.dims(), one_hot.dims())));
    }
    let logp = candle_nn::ops::log_softmax(logits, 1)?;
    let w = Tensor::new(&[weights[0], weights[1]], logits.device())?
        .to_dtype(logits.dtype())?
        .reshape((1, 2, 1, 1))?;
    let pixel_w = one_hot.broadcast_mul(&w)?;
    let num = (pixel_w.clone() * logp)?.sum_all()?.neg()?;
    Ok((num / pixel_w.sum_all()?)?)
}

fn one_hot(masks: &[&SegMask], dtype: DType) -> Result<Tensor> {
    let (h, w) = masks[0].dims();
    let mut v = Vec::with_capacity(masks.len() * 2 * h * w);
    for m in masks {
        v.extend(m.data().iter().map(|&l| (l == 0) as u8 as f32));
        v.extend(m.data().iter().map(|&l| l as f32));
    }
    Ok(Tensor::from_vec(v, (masks.len(), 2, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn class_weights(labels: &[SegMask], weighting: ClassWeighting) -> [f64; 2] {
    match weighting {
        ClassWeighting::Uniform => [1.0, 1.0],
        ClassWeighting::InverseFrequency => {
            let total: usize = labels.iter().map(|m| m.data().len()).sum();
            let fg: usize = labels.iter().map(|m| m.count_ones()).sum();
            let bg = total - fg;
            let w = |c: usize| if c == 0 { 0.0 } else { total as f64 / (2.0 * c as f64) };
            [w(bg), w(fg)]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegEpochRecord {
    pub epoch: usize,
    pub loss: f64,
}

pub struct SegOutcome {
    pub unet: ModelBundle,
    pub history: Vec<SegEpochRecord>,
}

fn check_pairs(images: &[Image], labels: &[SegMask]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::Empty("segmentation training set".into()));
    }
    if images.len() != labels.len() {
        return Err(Error::DimMismatch(format!("{} images but {} labels", images.len(), labels.len())));
    }
    for (i, (im, m)) in images.iter().zip(labels).enumerate() {
        if (im.height(), im.width()) != m.dims() {
            return Err(Error::DimMismatch(format!(
                "pair {i}: image {}x{} vs label {}x{}",
                im.height(),
                im.width(),
                m.height(),
                m.width()
            )));
        }
        if im.dims() != images[0].dims() {
            return Err(Error::DimMismatch(format!("pair {i}: patch dims differ from pair 0")));
        }
    }
    Ok(())
}

/// Fits a fresh U-Net to `(images, labels)`.
pub fn train_unet(
    images: &[Image],
    labels: &[SegMask],
    cfg: &SegConfig,
    output_dir: Option<&Path>,
) -> Result<SegOutcome> {
    cfg.validate()?;
    check_pairs(images, labels)?;
    if images[0].channels() != cfg.unet.input_channels {
        return Err(Error::DimMismatch(format!(
            "images have {} channels, U-Net expects {}",
            images[0].channels(),
            cfg.unet.input_channels
        )));
    }
    let mut unet = ModelBundle::build(Architecture::UNet(cfg.unet.clone()), derive_seed(cfg.seed, 11))?;
    let mut opt = AdamW::new(
        unet.vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;
    let weights = class_weights(labels, cfg.class_weighting);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 12));
    let xs: Vec<Tensor> = images.iter().map(|im| im.to_tensor(&Device::Cpu)).collect::<Result<_>>()?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = Tensor::cat(&chunk.iter().map(|&i| &xs[i]).collect::<Vec<_>>(), 0)?;
            let y = one_hot(&chunk.iter().map(|&i| &labels[i]).collect::<Vec<_>>(), DType::F32)?;
            let loss = seg_loss_logits(&unet.forward_raw(&x)?, &y, weights)?;
            let v = scalar(&loss)?;
            if !v.is_finite() {
                return Err(Error::NonFinite { term: "seg", epoch, step });
            }
            opt.backward_step(&loss)?;
            unet.step += 1;
            sum += v * chunk.len() as f64;
            count += chunk.len();
        }
        let loss = sum / count as f64;
        log::info!("seg epoch {}/{}: loss {loss:.5}", epoch + 1, cfg.epochs);
        history.push(SegEpochRecord { epoch: epoch + 1, loss });
    }
    if let Some(dir) = output_dir {
        fs::create_dir_all(dir)?;
        unet.save(dir.join("U"))?;
        write_seg_history_csv(&dir.join("history.csv"), &history)?;
    }
    Ok(SegOutcome { unet, history })
}

/// Translates the source patches with the frozen generator, then fits a U-Net.
pub fn train_segmentor(
    generator: &ModelBundle,
    images: &[Image],
    labels: &[SegMask],
    cfg: &SegConfig,
    output_dir: Option<&Path>,
) -> Result<SegOutcome> {
    check_pairs(images, labels)?;
    let translated = translate(generator, images)?;
    train_unet(&translated, labels, cfg, output_dir)
}

pub fn predict_probs(unet: &ModelBundle, images: &[Image]) -> Result<Vec<ProbMap>> {
    if !matches!(unet.architecture, Architecture::UNet(_)) {
        return Err(Error::Config("prediction needs a U-Net bundle".into()));
    }
    let mut out = Vec::with_capacity(images.len());
    for im in images {
        match unet.forward_images(std::slice::from_ref(im))? {
            ForwardOutput::Probabilities(mut p) => out.push(p.remove(0)),
            _ => unreachable!("U-Nets return probabilities"),
        }
    }
    Ok(out)
}

/// Binary mask from the vessel channel; see [`ProbMap::to_mask`].
pub fn predict_mask(unet: &ModelBundle, image: &Image, threshold: f64) -> Result<SegMask> {
    Ok(predict_probs(unet, std::slice::from_ref(image))?.remove(0).to_mask(threshold))
}

pub fn write_seg_history_csv(path: &Path, history: &[SegEpochRecord]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "epoch,loss")?;
    for r in history {
        writeln!(out, "{},{}", r.epoch, r.loss)?;
    }
    Ok(())
}

/// Default location of the U-Net inside a segmentation run directory.
pub fn unet_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("U")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pm(data: Vec<f32>) -> ProbMap {
        ProbMap::new(2, 2, 2, data).unwrap()
    }

    #[test]
    fn confident_prediction_has_near_zero_loss() {
        let eps = 1e-7f32;
        let label = SegMask::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let p = pm(vec![1.0 - eps, eps, eps, 1.0 - eps, eps, 1.0 - eps, 1.0 - eps, eps]);
        assert!(seg_loss(&p, &label, [1.0, 1.0]).unwrap() < 1e-6);
    }

    #[test]
    fn uniform_prediction_costs_ln2() {
        let label = SegMask::new(2, 2, vec![0, 1, 1, 1]).unwrap();
        let p = pm(vec![0.5; 8]);
        assert!((seg_loss(&p, &label, [1.0, 1.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_summed_cross_entropy() {
        let label = SegMask::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let p = pm(vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.5, 0.5]);
        let expect = -((0.9f64).ln() + (0.8f64).ln() + (0.4f64).ln() + (0.5f64).ln()) / 4.0;
        let got = seg_loss(&p, &label, [1.0, 1.0]).unwrap();
        assert!((got - expect).abs() < 1e-7, "{got} vs {expect}");
        // weighted: vessel pixels count double
        let expect_w = -((0.9f64).ln() + 2.0 * (0.8f64).ln() + 2.0 * (0.4f64).ln() + (0.5f64).ln()) / 6.0;
        assert!((seg_loss(&p, &label, [1.0, 2.0]).unwrap() - expect_w).abs() < 1e-7);
    }

    #[test]
    fn logits_loss_matches_probability_loss() {
        let logits = Tensor::new(&[[[[0.3f64, -1.0], [2.0, 0.0]], [[-0.2, 0.5], [0.1, 0.0]]]], &Device::Cpu).unwrap();
        let label = SegMask::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        let probs = ProbMap::from_tensor(&candle_nn::ops::softmax(&logits, 1).unwrap()).unwrap();
        let oh = one_hot(&[&label], DType::F64).unwrap();
        for w in [[1.0, 1.0], [0.5, 3.0]] {
            let a = scalar(&seg_loss_logits(&logits, &oh, w).unwrap()).unwrap();
            let b = seg_loss(&probs, &label, w).unwrap();
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mismatched_dims_fail() {
        let label = SegMask::zeros(3, 2).unwrap();
        assert!(seg_loss(&pm(vec![0.5; 8]), &label, [1.0, 1.0]).is_err());
        let img = Image::filled(4, 4, 3, 0.1).unwrap();
        let r = train_unet(&[img], &[SegMask::zeros(4, 2).unwrap()], &SegConfig::default(), None);
        assert!(matches!(r, Err(Error::DimMismatch(_))));
    }

    #[test]
    fn threshold_boundary() {
        let p = ProbMap::new(1, 1, 2, vec![0.51, 0.49]).unwrap();
        assert_eq!(p.to_mask(0.5).data(), &[0]);
        let p = ProbMap::new(1, 2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(p.to_mask(0.5).data(), &[1, 1]);
    }

    #[test]
    fn inverse_frequency_weights() {
        let m = SegMask::new(1, 4, vec![1, 0, 0, 0]).unwrap();
        let w = class_weights(&[m], ClassWeighting::InverseFrequency);
        assert!((w[0] - 4.0 / 6.0).abs() < 1e-12);
        assert!((w[1] - 2.0).abs() < 1e-12);
    }
}
