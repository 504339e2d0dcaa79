use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::{ParamDecl, ParamStore, NORM_EPS};
use crate::error::{Error, Result};
use crate::ops::{instance_norm, leaky_relu};

const SLOPE: f64 = 0.2;

/// Fully convolutional patch discriminator: `layers` stride-2 blocks, one
/// stride-1 block and a one-channel stride-1 head, all 4x4 kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorSpec {
    pub input_channels: usize,
    pub base_filters: usize,
    pub layers: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self { input_channels: 3, base_filters: 64, layers: 3 }
    }
}

impl DiscriminatorSpec {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.base_filters == 0 {
            return Err(Error::Config("discriminator needs filters and at least one layer".into()));
        }
        Ok(())
    }

    fn width(&self, n: usize) -> usize {
        self.base_filters * (1usize << n.min(3))
    }

    /// Score-map side length for an input side length.
    pub fn output_size(&self, input: usize) -> Option<usize> {
        let mut s = input as i64;
        for _ in 0..self.layers {
            s = (s + 2 - 4).div_euclid(2) + 1;
        }
        s = s - 1 - 1;
        (s >= 1).then_some(s as usize)
    }

    pub(crate) fn declarations(&self) -> Vec<ParamDecl> {
        let mut d = Vec::new();
        d.extend(ParamDecl::conv("block0", self.input_channels, self.width(0), 4));
        for n in 1..self.layers {
            d.extend(ParamDecl::conv(&format!("block{n}"), self.width(n - 1), self.width(n), 4));
        }
        let n = self.layers;
        d.extend(ParamDecl::conv(&format!("block{n}"), self.width(n - 1), self.width(n), 4));
        d.extend(ParamDecl::conv("head", self.width(n), 1, 4));
        d
    }

    pub(crate) fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        if self.output_size(h.min(w)).is_none() {
            return Err(Error::DimMismatch(format!("discriminator input {h}x{w} too small")));
        }
        let mut y = leaky_relu(&p.conv(x, "block0", 1, 2)?, SLOPE)?;
        for n in 1..self.layers {
            y = p.conv(&y, &format!("block{n}"), 1, 2)?;
            y = leaky_relu(&instance_norm(&y, NORM_EPS)?, SLOPE)?;
        }
        y = p.conv(&y, &format!("block{}", self.layers), 1, 1)?;
        y = leaky_relu(&instance_norm(&y, NORM_EPS)?, SLOPE)?;
        p.conv(&y, "head", 1, 1)
    }
}
