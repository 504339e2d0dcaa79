//! Raster types shared by every stage of the pipeline.
//!
//! Pixel values live in `[0, 1]` and are stored row-major with interleaved
//! channels (`H x W x C`). Networks see the `[-1, 1]` remapping produced by
//! [`Image::to_tensor`]; everything else works in the unit range.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Luminance weights applied by [`Image::to_grayscale`].
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Boundary policy for windows that leave the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Out-of-bounds windows are rejected.
    #[default]
    Error,
    /// Mirror about the border pixel without repeating it.
    Reflect,
}

/// Mirror an index into `0..n` (reflect-101).
pub fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as i64;
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!("empty raster {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("{channels} channels, expected 1 or 3")));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidImage(format!(
                "{} values for a {height}x{width}x{channels} raster",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidImage(format!("value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, channels, data })
    }

    /// Builds an image from `f(row, col, channel)`, clamping into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(clamp_unit(f(y, x, c)));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![clamp_unit(value); height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// One channel as a row-major plane.
    pub fn plane(&self, c: usize) -> Vec<f32> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    /// Luminance `0.299 R + 0.587 G + 0.114 B`; single-channel input is returned as is.
    pub fn to_grayscale(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| clamp_unit(LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]))
            .collect();
        Image { height: self.height, width: self.width, channels: 1, data }
    }

    /// Copies the `size x size` window whose top-left corner is `(top, left)`.
    pub fn extract_patch(&self, top: i64, left: i64, size: usize, padding: Padding) -> Result<Image> {
        let (h, w) = (self.height, self.width);
        let inside = top >= 0
            && left >= 0
            && size >= 1
            && top as usize + size <= h
            && left as usize + size <= w;
        if !inside && (padding == Padding::Error || size == 0) {
            return Err(Error::OutOfBounds { top, left, size, height: h, width: w });
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(size * size * c);
        for dy in 0..size {
            let sy = reflect_index(top + dy as i64, h);
            for dx in 0..size {
                let sx = reflect_index(left + dx as i64, w);
                let base = (sy * w + sx) * c;
                data.extend_from_slice(&self.data[base..base + c]);
            }
        }
        Ok(Image { height: size, width: size, channels: c, data })
    }

    /// Writes `patch` into a copy of `self` at `(top, left)`.
    pub fn embed(&self, patch: &Image, top: usize, left: usize) -> Result<Image> {
        if patch.channels != self.channels
            || top + patch.height > self.height
            || left + patch.width > self.width
        {
            return Err(Error::DimMismatch(format!(
                "cannot embed {:?} at ({top}, {left}) into {:?}",
                patch.dims(),
                self.dims()
            )));
        }
        let mut out = self.clone();
        let c = self.channels;
        for y in 0..patch.height {
            let dst = ((top + y) * self.width + left) * c;
            let src = y * patch.width * c;
            out.data[dst..dst + patch.width * c]
                .copy_from_slice(&patch.data[src..src + patch.width * c]);
        }
        Ok(out)
    }

    /// Bilinear resampling with half-pixel centers and clamped borders.
    pub fn resize(&self, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!("cannot resize to {height}x{width}")));
        }
        if (height, width) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let ys = bilinear_taps(self.height, height);
        let xs = bilinear_taps(self.width, width);
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                for ch in 0..c {
                    let top = self.get(y0, x0, ch) * (1.0 - wx) + self.get(y0, x1, ch) * wx;
                    let bot = self.get(y1, x0, ch) * (1.0 - wx) + self.get(y1, x1, ch) * wx;
                    data.push(clamp_unit(top * (1.0 - wy) + bot * wy));
                }
            }
        }
        Image::new(height, width, c, data)
    }

    pub fn flip_horizontal(&self) -> Image {
        self.remap(|y, x| (y, self.width - 1 - x))
    }

    pub fn flip_vertical(&self) -> Image {
        self.remap(|y, x| (self.height - 1 - y, x))
    }

    fn remap(&self, f: impl Fn(usize, usize) -> (usize, usize)) -> Image {
        let c = self.channels;
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let (sy, sx) = f(y, x);
                let base = (sy * self.width + sx) * c;
                data.extend_from_slice(&self.data[base..base + c]);
            }
        }
        Image { height: self.height, width: self.width, channels: c, data }
    }

    /// `(1, C, H, W)` tensor remapped to `[-1, 1]`.
    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_vec(self.data.clone(), (self.height, self.width, self.channels), device)?
            .permute((2, 0, 1))?
            .unsqueeze(0)?
            .affine(2.0, -1.0)?;
        Ok(t.contiguous()?)
    }

    /// `(1, C, H, W)` tensor in the unit range, in the requested float type.
    pub fn to_unit_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_vec(self.data.clone(), (self.height, self.width, self.channels), device)?
            .permute((2, 0, 1))?
            .unsqueeze(0)?
            .to_dtype(dtype)?;
        Ok(t.contiguous()?)
    }

    /// Inverse of [`Image::to_tensor`] for one `(C, H, W)` or `(1, C, H, W)` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        let t = match t.rank() {
            4 => t.squeeze(0)?,
            3 => t.clone(),
            r => return Err(Error::DimMismatch(format!("expected a CHW tensor, got rank {r}"))),
        };
        let (c, h, w) = t.dims3()?;
        let data: Vec<f32> = t
            .permute((1, 2, 0))?
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1()?;
        let data = data.into_iter().map(|v| clamp_unit((v + 1.0) * 0.5)).collect();
        Image::new(h, w, c, data)
    }

    /// Stacks images of equal dims into an `(N, C, H, W)` tensor in `[-1, 1]`.
    pub fn batch_tensor(images: &[&Image], device: &Device) -> Result<Tensor> {
        let first = images.first().ok_or_else(|| Error::Empty("image batch".into()))?;
        if let Some(bad) = images.iter().find(|im| im.dims() != first.dims()) {
            return Err(Error::DimMismatch(format!(
                "batch mixes {:?} and {:?}",
                first.dims(),
                bad.dims()
            )));
        }
        let ts = images.iter().map(|im| im.to_tensor(device)).collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&ts, 0)?)
    }

    /// Decodes PNG, TIFF, PPM/PGM or GIF, normalizing by the file's bit depth.
    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let decoded = image::open(path.as_ref())?;
        Ok(Self::from_dynamic(&decoded))
    }

    pub fn from_dynamic(decoded: &DynamicImage) -> Image {
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        let color = decoded.color();
        let (channels, data) = match (color.has_color(), color.bytes_per_pixel() / color.channel_count()) {
            (false, 1) => (1, decoded.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()),
            (false, 2) => (1, decoded.to_luma16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect()),
            (true, 1) => (3, decoded.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()),
            (true, 2) => (3, decoded.to_rgb16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect()),
            (false, _) => (1, decoded.to_luma32f().into_raw().into_iter().map(clamp_unit).collect()),
            (true, _) => (3, decoded.to_rgb32f().into_raw().into_iter().map(clamp_unit).collect()),
        };
        Image { height: h, width: w, channels, data }
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        let bytes: Vec<u8> = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        if self.channels == 1 {
            DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("raster size"))
        } else {
            DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("raster size"))
        }
    }

    /// Encodes at 8 bits per channel; the format follows the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_dynamic().save(path.as_ref())?;
        Ok(())
    }

    /// Concatenates images left to right, padding shorter ones with black.
    pub fn hstack(images: &[&Image]) -> Result<Image> {
        let first = images.first().ok_or_else(|| Error::Empty("hstack".into()))?;
        let h = images.iter().map(|i| i.height).max().unwrap_or(1);
        let w: usize = images.iter().map(|i| i.width).sum();
        let c = if images.iter().any(|i| i.channels == 3) { 3 } else { first.channels };
        let mut out = vec![0.0f32; h * w * c];
        let mut x0 = 0;
        for im in images {
            for y in 0..im.height {
                for x in 0..im.width {
                    for ch in 0..c {
                        let v = im.get(y, x, ch.min(im.channels - 1));
                        out[(y * w + x0 + x) * c + ch] = v;
                    }
                }
            }
            x0 += im.width;
        }
        Image::new(h, w, c, out)
    }
}

/// Per-output-index `(lo, hi, weight_of_hi)` for half-pixel bilinear resampling.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (pos - lo as f64) as f32)
        })
        .collect()
}

#[inline]
pub(crate) fn clamp_unit(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Binary vessel mask: `0` background, `1` vessel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SegMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl SegMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidImage(format!(
                "{} labels for a {height}x{width} mask",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidImage("mask labels must be 0 or 1".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self::new(height, width, data)
    }

    /// Pixels above one half of full scale are labelled vessel.
    pub fn from_image(img: &Image) -> SegMask {
        let gray = img.to_grayscale();
        let data = gray.data.iter().map(|&v| (v > 0.5) as u8).collect();
        SegMask { height: img.height, width: img.width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_image(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn extract_patch(&self, top: i64, left: i64, size: usize, padding: Padding) -> Result<SegMask> {
        let patch = self.to_image().extract_patch(top, left, size, padding)?;
        Ok(SegMask::from_image(&patch))
    }

    /// Nearest-neighbour resampling with half-pixel centers.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<SegMask> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!("cannot resize to {height}x{width}")));
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        SegMask::from_fn(height, width, |y, x| {
            let yy = (((y as f64 + 0.5) * sy).floor() as usize).min(self.height - 1);
            let xx = (((x as f64 + 0.5) * sx).floor() as usize).min(self.width - 1);
            self.get(yy, xx) == 1
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SegMask> {
        Ok(SegMask::from_image(&Image::load(path)?))
    }

    /// Writes a 0/255 grayscale raster.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| v * 255).collect(),
        )
        .expect("raster size");
        buf.save(path.as_ref())?;
        Ok(())
    }
}

/// Per-pixel class probabilities, `H x W x K` interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f32>,
}

impl ProbMap {
    pub const NORMALIZATION_TOL: f32 = 1e-5;

    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || classes < 2 || data.len() != height * width * classes {
            return Err(Error::InvalidImage(format!(
                "{} values for a {height}x{width}x{classes} probability map",
                data.len()
            )));
        }
        for px in data.chunks_exact(classes) {
            if px.iter().any(|p| !(p.is_finite() && (0.0..=1.0).contains(p))) {
                return Err(Error::InvalidImage(format!("probabilities {px:?} outside [0, 1]")));
            }
            let s: f32 = px.iter().sum();
            if (s - 1.0).abs() > Self::NORMALIZATION_TOL {
                return Err(Error::InvalidImage(format!("probabilities {px:?} sum to {s}")));
            }
        }
        Ok(Self { height, width, classes, data })
    }

    /// Converts a `(K, H, W)` softmax output.
    pub fn from_tensor(t: &Tensor) -> Result<ProbMap> {
        let t = if t.rank() == 4 { t.squeeze(0)? } else { t.clone() };
        let (k, h, w) = t.dims3()?;
        let data: Vec<f32> = t.permute((1, 2, 0))?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        ProbMap::new(h, w, k, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, k: usize) -> f32 {
        self.data[(y * self.width + x) * self.classes + k]
    }

    /// Vessel where `p[1] > threshold * (p[0] + p[1])`, evaluated in f64.
    ///
    /// At `threshold = 0.5` this is exactly the two-class argmax with ties
    /// going to background.
    pub fn to_mask(&self, threshold: f64) -> SegMask {
        let data = self
            .data
            .chunks_exact(self.classes)
            .map(|px| {
                let (bg, fg) = (px[0] as f64, px[1] as f64);
                (fg > threshold * (bg + fg)) as u8
            })
            .collect();
        SegMask { height: self.height, width: self.width, data }
    }

    pub fn argmax_mask(&self) -> SegMask {
        let data = self
            .data
            .chunks_exact(self.classes)
            .map(|px| {
                let mut best = 0;
                for (k, &p) in px.iter().enumerate() {
                    if p > px[best] {
                        best = k;
                    }
                }
                (best == 1) as u8
            })
            .collect();
        SegMask { height: self.height, width: self.width, data }
    }

    /// Vessel-channel probability as a grayscale image.
    pub fn vessel_image(&self) -> Image {
        let data = self.data.chunks_exact(self.classes).map(|px| clamp_unit(px[1])).collect();
        Image { height: self.height, width: self.width, channels: 1, data }
    }
}

/// Renders a two-valued map with the given color for set pixels.
pub(crate) fn save_binary_png(
    path: &Path,
    height: usize,
    width: usize,
    set: impl Fn(usize, usize) -> bool,
) -> Result<()> {
    let mut buf = RgbImage::new(width as u32, height as u32);
    for y in 0..height {
        for x in 0..width {
            let v = if set(y, x) { 255 } else { 0 };
            buf.put_pixel(x as u32, y as u32, Rgb([v, v, v]));
        }
    }
    buf.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp4() -> Image {
        Image::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f32 / 15.0).unwrap()
    }

    #[test]
    fn construction_rejects_out_of_range() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(Image::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn grayscale_white_and_red() {
        let white = Image::filled(4, 4, 3, 1.0).unwrap();
        let g = white.to_grayscale();
        assert_eq!(g.dims(), (4, 4, 1));
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));

        let red = Image::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((red.to_grayscale().get(0, 0, 0) - 0.299).abs() < 1e-7);

        let gray = ramp4();
        assert_eq!(gray.to_grayscale(), gray);
    }

    #[test]
    fn patch_full_and_interior() {
        let img = ramp4();
        assert_eq!(img.extract_patch(0, 0, 4, Padding::Error).unwrap(), img);
        let p = img.extract_patch(1, 1, 2, Padding::Error).unwrap();
        let expect: Vec<f32> = [5.0, 6.0, 9.0, 10.0].iter().map(|v| v / 15.0).collect();
        assert_eq!(p.data(), expect.as_slice());
    }

    #[test]
    fn patch_out_of_bounds() {
        let img = ramp4();
        assert!(matches!(
            img.extract_patch(3, 0, 2, Padding::Error),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(img.extract_patch(-1, 0, 2, Padding::Error).is_err());
        // reflect-101: row -1 mirrors row 1
        let p = img.extract_patch(-1, 0, 2, Padding::Reflect).unwrap();
        assert_eq!(p.get(0, 0, 0), img.get(1, 0, 0));
        assert_eq!(p.get(1, 1, 0), img.get(0, 1, 0));
    }

    #[test]
    fn embed_then_extract_is_identity() {
        let canvas = Image::filled(6, 6, 1, 0.2).unwrap();
        let patch = ramp4().extract_patch(0, 0, 3, Padding::Error).unwrap();
        let out = canvas.embed(&patch, 2, 1).unwrap();
        assert_eq!(out.extract_patch(2, 1, 3, Padding::Error).unwrap(), patch);
    }

    #[test]
    fn reflect_index_cases() {
        assert_eq!(reflect_index(-1, 4), 1);
        assert_eq!(reflect_index(-3, 4), 3);
        assert_eq!(reflect_index(4, 4), 2);
        assert_eq!(reflect_index(6, 4), 0);
        assert_eq!(reflect_index(7, 4), 1);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn resize_cases() {
        let img = ramp4();
        assert_eq!(img.resize(4, 4).unwrap(), img);

        let c = Image::filled(5, 7, 3, 0.37).unwrap();
        let r = c.resize(11, 3).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.37f32));

        let two = Image::new(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = two.resize(2, 3).unwrap();
        assert_eq!(r.get(0, 1, 0), 0.5);
        assert_eq!(r.get(1, 1, 0), 0.5);
        assert_eq!(r.get(0, 0, 0), 0.0);
        assert_eq!(r.get(0, 2, 0), 1.0);
    }

    #[test]
    fn tensor_round_trip() {
        let img = Image::from_fn(3, 5, 3, |y, x, c| ((y + 2 * x + 3 * c) % 7) as f32 / 6.0).unwrap();
        let t = img.to_tensor(&Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 3, 3, 5]);
        let back = Image::from_tensor(&t).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn png_round_trip_is_lossless_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 4, 3, |y, x, c| ((y * 31 + x * 17 + c * 5) % 256) as f32 / 255.0).unwrap();
        let path = dir.path().join("a.png");
        img.save(&path).unwrap();
        assert_eq!(Image::load(&path).unwrap(), img);

        let ppm = dir.path().join("a.ppm");
        img.save(&ppm).unwrap();
        assert_eq!(Image::load(&ppm).unwrap(), img);
    }

    #[test]
    fn sixteen_bit_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(2, 1, vec![0, 65535]).unwrap();
        let path = dir.path().join("g16.png");
        buf.save(&path).unwrap();
        let img = Image::load(&path).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn prob_map_threshold_matches_argmax() {
        let data = vec![0.5, 0.5, 0.51, 0.49, 0.2, 0.8, 0.0, 1.0];
        let pm = ProbMap::new(2, 2, 2, data).unwrap();
        assert_eq!(pm.to_mask(0.5), pm.argmax_mask());
        assert_eq!(pm.to_mask(0.5).data(), &[0, 0, 1, 1]);
        assert!(ProbMap::new(1, 1, 2, vec![0.3, 0.3]).is_err());
    }

    #[test]
    fn mask_nearest_resize_identity() {
        let m = SegMask::from_fn(4, 6, |y, x| (y + x) % 3 == 0).unwrap();
        assert_eq!(m.resize_nearest(4, 6).unwrap(), m);
        let up = m.resize_nearest(8, 12).unwrap();
        assert_eq!(up.get(1, 1), m.get(0, 0));
        assert_eq!(up.get(7, 11), m.get(3, 5));
    }
}
