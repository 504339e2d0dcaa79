use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::{ParamDecl, ParamStore, NORM_EPS};
use crate::error::{Error, Result};
use crate::ops::{instance_norm, reflect_pad2d};

/// Residual encoder/decoder translator with instance normalization and a
/// `tanh` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub input_channels: usize,
    pub base_filters: usize,
    pub residual_blocks: usize,
    pub downsamplings: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self { input_channels: 3, base_filters: 64, residual_blocks: 9, downsamplings: 2 }
    }
}

impl GeneratorSpec {
    /// Nine residual blocks for patches of 256 px and up, six below.
    pub fn for_patch(input_channels: usize, patch_size: usize) -> Self {
        let residual_blocks = if patch_size >= 256 { 9 } else { 6 };
        Self { input_channels, residual_blocks, ..Self::default() }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.input_channels != 1 && self.input_channels != 3 {
            return Err(Error::Config(format!("generator with {} channels", self.input_channels)));
        }
        if self.residual_blocks == 0 || self.base_filters == 0 {
            return Err(Error::Config("generator needs filters and at least one residual block".into()));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_filters << level
    }

    pub(crate) fn declarations(&self) -> Vec<ParamDecl> {
        let c = self.input_channels;
        let mut d = Vec::new();
        d.extend(ParamDecl::conv("stem", c, self.width(0), 7));
        for i in 0..self.downsamplings {
            d.extend(ParamDecl::conv(&format!("down{i}"), self.width(i), self.width(i + 1), 3));
        }
        let inner = self.width(self.downsamplings);
        for r in 0..self.residual_blocks {
            d.extend(ParamDecl::conv(&format!("res{r}.conv1"), inner, inner, 3));
            d.extend(ParamDecl::conv(&format!("res{r}.conv2"), inner, inner, 3));
        }
        for i in (0..self.downsamplings).rev() {
            d.extend(ParamDecl::conv_transpose(&format!("up{i}"), self.width(i + 1), self.width(i), 3));
        }
        d.extend(ParamDecl::conv("head", self.width(0), c, 7));
        d
    }

    pub(crate) fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let m = 1usize << self.downsamplings;
        if h % m != 0 || w % m != 0 {
            return Err(Error::DimMismatch(format!(
                "generator input {h}x{w} must be divisible by {m}"
            )));
        }
        let mut y = p.conv(&reflect_pad2d(x, 3)?, "stem", 0, 1)?;
        y = instance_norm(&y, NORM_EPS)?.relu()?;
        for i in 0..self.downsamplings {
            y = p.conv(&y, &format!("down{i}"), 1, 2)?;
            y = instance_norm(&y, NORM_EPS)?.relu()?;
        }
        for r in 0..self.residual_blocks {
            let mut t = p.conv(&reflect_pad2d(&y, 1)?, &format!("res{r}.conv1"), 0, 1)?;
            t = instance_norm(&t, NORM_EPS)?.relu()?;
            t = p.conv(&reflect_pad2d(&t, 1)?, &format!("res{r}.conv2"), 0, 1)?;
            y = (y + instance_norm(&t, NORM_EPS)?)?;
        }
        for i in (0..self.downsamplings).rev() {
            y = p.conv_transpose(&y, &format!("up{i}"), 1, 1, 2)?;
            y = instance_norm(&y, NORM_EPS)?.relu()?;
        }
        Ok(p.conv(&reflect_pad2d(&y, 3)?, "head", 0, 1)?.tanh()?)
    }
}
