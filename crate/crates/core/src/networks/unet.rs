use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::{ParamDecl, ParamStore, NORM_EPS};
use crate::error::{Error, Result};
use crate::ops::{instance_norm, upsample_bilinear2x};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UNetNorm {
    #[default]
    Instance,
    None,
}

/// Encoder/decoder with a skip connection at every level. Decoding uses
/// bilinear 2x upsampling followed by a 3x3 convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetSpec {
    pub input_channels: usize,
    pub depth: usize,
    pub base_filters: usize,
    pub classes: usize,
    pub norm: UNetNorm,
}

impl Default for UNetSpec {
    fn default() -> Self {
        Self { input_channels: 3, depth: 4, base_filters: 64, classes: 2, norm: UNetNorm::Instance }
    }
}

impl UNetSpec {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_filters == 0 || self.classes < 2 {
            return Err(Error::Config("U-Net needs depth >= 1, filters and >= 2 classes".into()));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_filters << level
    }

    pub(crate) fn declarations(&self) -> Vec<ParamDecl> {
        let mut d = Vec::new();
        let mut cin = self.input_channels;
        for l in 0..=self.depth {
            d.extend(ParamDecl::conv(&format!("enc{l}.conv1"), cin, self.width(l), 3));
            d.extend(ParamDecl::conv(&format!("enc{l}.conv2"), self.width(l), self.width(l), 3));
            cin = self.width(l);
        }
        for l in (0..self.depth).rev() {
            d.extend(ParamDecl::conv(&format!("dec{l}.up"), self.width(l + 1), self.width(l), 3));
            d.extend(ParamDecl::conv(&format!("dec{l}.conv1"), 2 * self.width(l), self.width(l), 3));
            d.extend(ParamDecl::conv(&format!("dec{l}.conv2"), self.width(l), self.width(l), 3));
        }
        d.extend(ParamDecl::conv("head", self.width(0), self.classes, 1));
        d
    }

    fn act(&self, x: Tensor) -> Result<Tensor> {
        let x = match self.norm {
            UNetNorm::Instance => instance_norm(&x, NORM_EPS)?,
            UNetNorm::None => x,
        };
        Ok(x.relu()?)
    }

    fn double_conv(&self, p: &ParamStore, x: &Tensor, prefix: &str) -> Result<Tensor> {
        let y = self.act(p.conv(x, &format!("{prefix}.conv1"), 1, 1)?)?;
        self.act(p.conv(&y, &format!("{prefix}.conv2"), 1, 1)?)
    }

    /// Class logits `(N, K, H, W)`.
    pub(crate) fn forward(&self, p: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let m = 1usize << self.depth;
        if h % m != 0 || w % m != 0 {
            return Err(Error::DimMismatch(format!(
                "U-Net input {h}x{w} must be divisible by 2^{} = {m}",
                self.depth
            )));
        }
        let mut skips = Vec::with_capacity(self.depth);
        let mut y = self.double_conv(p, x, "enc0")?;
        for l in 1..=self.depth {
            skips.push(y.clone());
            y = self.double_conv(p, &y.max_pool2d(2)?, &format!("enc{l}"))?;
        }
        for l in (0..self.depth).rev() {
            let up = self.act(p.conv(&upsample_bilinear2x(&y)?, &format!("dec{l}.up"), 1, 1)?)?;
            let cat = Tensor::cat(&[&skips[l], &up], 1)?;
            y = self.double_conv(p, &cat, &format!("dec{l}"))?;
        }
        p.conv(&y, "head", 0, 1)
    }
}
