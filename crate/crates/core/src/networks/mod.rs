//! The five function approximators: translators `G` and `F`, patch
//! discriminators `D_A` and `D_B`, and the U-Net segmentor.
//!
//! Every network is a [`ModelBundle`]: an [`Architecture`] plus its named
//! parameters, a step counter and the seed that produced the initialization.
//! Forward passes look parameters up by name, so the bundle is the only state.

mod checkpoint;
mod discriminator;
mod generator;
mod unet;

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{Image, ProbMap};

pub use checkpoint::CHECKPOINT_FORMAT_VERSION;
pub use discriminator::DiscriminatorSpec;
pub use generator::GeneratorSpec;
pub use unet::{UNetNorm, UNetSpec};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;
pub(crate) const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Generator(GeneratorSpec),
    Discriminator(DiscriminatorSpec),
    #[serde(rename = "unet")]
    UNet(UNetSpec),
    /// Parameter-free generator that returns its input; used for baselines
    /// and wiring tests.
    Identity { channels: usize },
}

impl Architecture {
    pub fn is_generator(&self) -> bool {
        matches!(self, Architecture::Generator(_) | Architecture::Identity { .. })
    }

    pub fn input_channels(&self) -> usize {
        match self {
            Architecture::Generator(s) => s.input_channels,
            Architecture::Discriminator(s) => s.input_channels,
            Architecture::UNet(s) => s.input_channels,
            Architecture::Identity { channels } => *channels,
        }
    }

    fn declarations(&self) -> Vec<ParamDecl> {
        match self {
            Architecture::Generator(s) => s.declarations(),
            Architecture::Discriminator(s) => s.declarations(),
            Architecture::UNet(s) => s.declarations(),
            Architecture::Identity { .. } => Vec::new(),
        }
    }

    /// Number of scalar parameters implied by the architecture alone.
    pub fn parameter_count(&self) -> usize {
        self.declarations().iter().map(|d| d.dims.iter().product::<usize>()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Generator(s) => s.validate(),
            Architecture::Discriminator(s) => s.validate(),
            Architecture::UNet(s) => s.validate(),
            Architecture::Identity { channels } if *channels == 1 || *channels == 3 => Ok(()),
            Architecture::Identity { channels } => {
                Err(Error::Config(format!("identity generator with {channels} channels")))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Normal,
    Zeros,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamDecl {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
}

impl ParamDecl {
    pub fn weight(name: impl Into<String>, dims: &[usize]) -> Self {
        Self { name: name.into(), dims: dims.to_vec(), init: Init::Normal }
    }

    pub fn bias(name: impl Into<String>, len: usize) -> Self {
        Self { name: name.into(), dims: vec![len], init: Init::Zeros }
    }

    /// Weight and bias of a square convolution, `(out, in, k, k)`.
    pub fn conv(prefix: &str, cin: usize, cout: usize, k: usize) -> [Self; 2] {
        [
            Self::weight(format!("{prefix}.weight"), &[cout, cin, k, k]),
            Self::bias(format!("{prefix}.bias"), cout),
        ]
    }

    /// Weight and bias of a transposed convolution, `(in, out, k, k)`.
    pub fn conv_transpose(prefix: &str, cin: usize, cout: usize, k: usize) -> [Self; 2] {
        [
            Self::weight(format!("{prefix}.weight"), &[cin, cout, k, k]),
            Self::bias(format!("{prefix}.bias"), cout),
        ]
    }
}

/// Named parameters in declaration order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    order: Vec<String>,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    fn from_decls(decls: &[ParamDecl], seed: u64, device: &Device) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, INIT_STD as f32).expect("positive std");
        let mut store = ParamStore { order: Vec::new(), vars: BTreeMap::new() };
        for d in decls {
            let n: usize = d.dims.iter().product();
            let values: Vec<f32> = match d.init {
                Init::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                Init::Zeros => vec![0.0; n],
            };
            let t = Tensor::from_vec(values, d.dims.as_slice(), device)?;
            store.insert(d.name.clone(), Var::from_tensor(&t)?);
        }
        Ok(store)
    }

    fn insert(&mut self, name: String, var: Var) {
        if self.vars.insert(name.clone(), var).is_none() {
            self.order.push(name);
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.vars
            .get(name)
            .map(|v| v.as_tensor())
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn vars(&self) -> Vec<Var> {
        self.order.iter().map(|n| self.vars[n].clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Deep copy with fresh variables, detached from any optimizer.
    pub fn deep_clone(&self) -> Result<Self> {
        let mut out = ParamStore { order: Vec::new(), vars: BTreeMap::new() };
        for name in &self.order {
            let t = self.vars[name].as_tensor().copy()?;
            out.insert(name.clone(), Var::from_tensor(&t)?);
        }
        Ok(out)
    }

    pub(crate) fn conv(&self, x: &Tensor, prefix: &str, padding: usize, stride: usize) -> Result<Tensor> {
        let w = self.get(&format!("{prefix}.weight"))?;
        let b = self.get(&format!("{prefix}.bias"))?;
        let y = x.conv2d(w, padding, stride, 1, 1)?;
        Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?)
    }

    pub(crate) fn conv_transpose(
        &self,
        x: &Tensor,
        prefix: &str,
        padding: usize,
        output_padding: usize,
        stride: usize,
    ) -> Result<Tensor> {
        let w = self.get(&format!("{prefix}.weight"))?;
        let b = self.get(&format!("{prefix}.bias"))?;
        let y = x.conv_transpose2d(w, padding, output_padding, stride, 1)?;
        Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?)
    }
}

/// Output of [`ModelBundle::forward_images`].
#[derive(Debug, Clone)]
pub enum ForwardOutput {
    Images(Vec<Image>),
    Scores(Vec<ScoreMap>),
    Probabilities(Vec<ProbMap>),
}

/// Patch-level discriminator scores for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub architecture: Architecture,
    pub params: ParamStore,
    pub step: u64,
    pub seed: u64,
}

impl ModelBundle {
    pub fn build(architecture: Architecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let params = ParamStore::from_decls(&architecture.declarations(), seed, &Device::Cpu)?;
        Ok(Self { architecture, params, step: 0, seed })
    }

    pub fn identity(channels: usize) -> Result<Self> {
        Self::build(Architecture::Identity { channels }, 0)
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .names()
            .iter()
            .map(|n| self.params.get(n).map(|t| t.elem_count()).unwrap_or(0))
            .sum()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.params.vars()
    }

    pub fn deep_clone(&self) -> Result<Self> {
        Ok(Self {
            architecture: self.architecture.clone(),
            params: self.params.deep_clone()?,
            step: self.step,
            seed: self.seed,
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, _, _) = x.dims4()?;
        let want = self.architecture.input_channels();
        if c != want {
            return Err(Error::DimMismatch(format!("model expects {want} channels, got {c}")));
        }
        Ok(())
    }

    /// Raw network output for an `(N, C, H, W)` batch in `[-1, 1]`.
    ///
    /// Generators return images in `[-1, 1]`, discriminators `(N, 1, h, w)`
    /// score maps and the U-Net class logits `(N, K, H, W)`.
    pub fn forward_raw(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        match &self.architecture {
            Architecture::Generator(s) => s.forward(&self.params, x),
            Architecture::Discriminator(s) => s.forward(&self.params, x),
            Architecture::UNet(s) => s.forward(&self.params, x),
            Architecture::Identity { .. } => Ok(x.clone()),
        }
    }

    /// Like [`forward_raw`](Self::forward_raw), with softmax applied to U-Net logits.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.forward_raw(x)?;
        match self.architecture {
            Architecture::UNet(_) => Ok(candle_nn::ops::softmax(&y, 1)?),
            _ => Ok(y),
        }
    }

    /// Runs a batch of unit-range images; batch order is preserved.
    pub fn forward_images(&self, images: &[Image]) -> Result<ForwardOutput> {
        let refs: Vec<&Image> = images.iter().collect();
        let x = Image::batch_tensor(&refs, &Device::Cpu)?;
        let y = self.forward(&x)?.detach();
        let n = images.len();
        match self.architecture {
            Architecture::Generator(_) | Architecture::Identity { .. } => Ok(ForwardOutput::Images(
                (0..n).map(|i| Image::from_tensor(&y.get(i)?)).collect::<Result<_>>()?,
            )),
            Architecture::Discriminator(_) => {
                let (_, _, h, w) = y.dims4()?;
                let scores = (0..n)
                    .map(|i| {
                        let data: Vec<f32> = y.get(i)?.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
                        Ok(ScoreMap { height: h, width: w, data })
                    })
                    .collect::<Result<_>>()?;
                Ok(ForwardOutput::Scores(scores))
            }
            Architecture::UNet(_) => Ok(ForwardOutput::Probabilities(
                (0..n).map(|i| ProbMap::from_tensor(&y.get(i)?)).collect::<Result<_>>()?,
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_gen() -> GeneratorSpec {
        GeneratorSpec { input_channels: 3, base_filters: 4, residual_blocks: 1, downsamplings: 2 }
    }

    #[test]
    fn same_seed_same_parameters() {
        for arch in [
            Architecture::Generator(small_gen()),
            Architecture::Discriminator(DiscriminatorSpec { input_channels: 3, base_filters: 4, layers: 3 }),
            Architecture::UNet(UNetSpec { depth: 2, base_filters: 4, ..UNetSpec::default() }),
        ] {
            let a = ModelBundle::build(arch.clone(), 11).unwrap();
            let b = ModelBundle::build(arch.clone(), 11).unwrap();
            let c = ModelBundle::build(arch, 12).unwrap();
            assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
            assert_ne!(a.fingerprint().unwrap(), c.fingerprint().unwrap());
            assert_eq!(a.parameter_count(), a.architecture.parameter_count());
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let g = ModelBundle::build(Architecture::Generator(small_gen()), 0).unwrap();
        let x = Tensor::zeros((1, 1, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(g.forward(&x), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn identity_forward_returns_input() {
        let id = ModelBundle::identity(3).unwrap();
        let img = Image::from_fn(4, 4, 3, |y, x, c| ((y + x + c) % 5) as f32 / 4.0).unwrap();
        match id.forward_images(std::slice::from_ref(&img)).unwrap() {
            ForwardOutput::Images(out) => {
                for (a, b) in out[0].data().iter().zip(img.data()) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
