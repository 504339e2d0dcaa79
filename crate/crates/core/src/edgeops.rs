//! Edge extraction in two forms.
//!
//! [`canny_edges`] is the classical pipeline (Gaussian smoothing, Sobel
//! gradients, non-maximum suppression, double-threshold hysteresis) and is
//! used for evaluation. [`soft_edges_tensor`] keeps the smoothing and the
//! gradient magnitude but replaces thinning and hysteresis with a logistic
//! threshold so the edge loss can backpropagate into the generators.
//!
//! Both forms share the same border handling (reflect-101) and gradient
//! scaling: Sobel responses are divided by 4, so each gradient component of
//! a unit-range image lies in `[-1, 1]`.

use std::collections::VecDeque;
use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::imagecore::{reflect_index, save_binary_png, Image};
use crate::ops::{reflect_pad2d, scalar};

/// Added under the square root of the soft magnitude so it is smooth at zero.
pub const SOFT_MAGNITUDE_EPS: f64 = 1e-6;

/// Relative tolerance under which two magnitudes tie during suppression.
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CannyParams {
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
    pub soft_temperature: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self { sigma: 1.0, low: 0.1, high: 0.2, soft_temperature: 50.0 }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(0.0 <= self.low && self.low < self.high) {
            return Err(Error::Config(format!(
                "thresholds must satisfy 0 <= low < high, got {} / {}",
                self.low, self.high
            )));
        }
        if !(self.soft_temperature > 0.0) {
            return Err(Error::Config("soft_temperature must be positive".into()));
        }
        Ok(())
    }

    /// Center of the logistic soft threshold.
    pub fn soft_center(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

/// Normalized 1-D Gaussian taps of radius `max(1, ceil(3 sigma))`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = ((3.0 * sigma).ceil() as usize).max(1);
    let taps: Vec<f64> = (-(radius as i64)..=radius as i64)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EdgeMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl EdgeMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width || data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidImage("edge map must be binary and sized H*W".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self { height, width, data }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Mean absolute difference between two binary maps.
    pub fn mean_abs_diff(&self, other: &EdgeMap) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::DimMismatch(format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        let diff = self.data.iter().zip(&other.data).filter(|(a, b)| a != b).count();
        Ok(diff as f64 / self.data.len() as f64)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        save_binary_png(path.as_ref(), self.height, self.width, |y, x| self.get(y, x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftEdgeMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SoftEdgeMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn to_image(&self) -> Image {
        Image::new(
            self.height,
            self.width,
            1,
            self.data.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect(),
        )
        .expect("soft edges lie in [0, 1]")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_image().save(path)
    }
}

/// Smoothed Sobel gradients of a grayscale plane.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub height: usize,
    pub width: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

fn plane_f64(img: &Image) -> Vec<f64> {
    img.to_grayscale().data().iter().map(|&v| v as f64).collect()
}

fn convolve_rows(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as i64;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * row[reflect_index(x as i64 + k as i64 - r, w)];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn convolve_cols(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as i64;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * src[reflect_index(y as i64 + k as i64 - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Separable Gaussian smoothing followed by 3x3 Sobel, both with reflect borders.
pub fn smoothed_gradients(img: &Image, sigma: f64) -> GradientField {
    let (h, w) = (img.height(), img.width());
    let taps = gaussian_kernel(sigma);
    let smooth = convolve_cols(&convolve_rows(&plane_f64(img), h, w, &taps), h, w, &taps);
    // Sobel = smoothing [1 2 1] across, difference [-1 0 1] along; /4 overall.
    let diff = [-1.0, 0.0, 1.0];
    let tri = [0.25, 0.5, 0.25];
    let gx = convolve_cols(&convolve_rows(&smooth, h, w, &diff), h, w, &tri);
    let gy = convolve_rows(&convolve_cols(&smooth, h, w, &diff), h, w, &tri);
    let magnitude = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    GradientField { height: h, width: w, gx, gy, magnitude }
}

/// Offsets `(before, after)` along the quantized gradient direction.
fn suppression_neighbours(gx: f64, gy: f64) -> [(i64, i64); 2] {
    const TAN_22_5: f64 = 0.414_213_562_373_095_03;
    const TAN_67_5: f64 = 2.414_213_562_373_095;
    let (ax, ay) = (gx.abs(), gy.abs());
    if ay <= TAN_22_5 * ax {
        [(0, -1), (0, 1)]
    } else if ay >= TAN_67_5 * ax {
        [(-1, 0), (1, 0)]
    } else if gx * gy > 0.0 {
        [(-1, -1), (1, 1)]
    } else {
        [(1, -1), (-1, 1)]
    }
}

#[inline]
fn tie_tol(a: f64, b: f64) -> f64 {
    TIE_TOL * a.abs().max(b.abs())
}

/// Canny edge map of a grayscale image (colour input is converted to luminance).
///
/// A pixel survives suppression when its magnitude is at least `low`, strictly
/// exceeds the neighbour before it along the gradient axis and is not below
/// the neighbour after it; magnitudes within a relative `1e-9` tie. Neighbours
/// outside the image count as zero. Survivors at or above `high` seed an
/// 8-connected flood fill through the remaining survivors.
pub fn canny_edges(img: &Image, p: &CannyParams) -> EdgeMap {
    let g = smoothed_gradients(img, p.sigma);
    let (h, w) = (g.height, g.width);
    let mag_at = |y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            g.magnitude[y as usize * w + x as usize]
        }
    };

    let mut candidate = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = g.magnitude[i];
            if m < p.low || m == 0.0 {
                continue;
            }
            let [(by, bx), (ay, ax)] = suppression_neighbours(g.gx[i], g.gy[i]);
            let before = mag_at(y as i64 + by, x as i64 + bx);
            let after = mag_at(y as i64 + ay, x as i64 + ax);
            if m > before + tie_tol(m, before) && m >= after - tie_tol(m, after) {
                candidate[i] = true;
            }
        }
    }

    let mut edges = vec![0u8; h * w];
    let mut queue = VecDeque::new();
    for i in 0..h * w {
        if candidate[i] && g.magnitude[i] >= p.high {
            edges[i] = 1;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as i64, (i % w) as i64);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if candidate[j] && edges[j] == 0 {
                    edges[j] = 1;
                    queue.push_back(j);
                }
            }
        }
    }
    EdgeMap { height: h, width: w, data: edges }
}

fn sobel_kernel(dtype: DType, device: &Device) -> Result<Tensor> {
    #[rustfmt::skip]
    let k = [
        -0.25, 0.0, 0.25,
        -0.5,  0.0, 0.5,
        -0.25, 0.0, 0.25,
        -0.25, -0.5, -0.25,
         0.0,   0.0,  0.0,
         0.25,  0.5,  0.25,
    ];
    Ok(Tensor::new(&k, device)?.reshape((2, 1, 3, 3))?.to_dtype(dtype)?)
}

/// Differentiable soft edge response of an `(N, 1, H, W)` unit-range tensor.
///
/// `sigmoid(T * (sqrt(gx^2 + gy^2 + eps) - (low + high) / 2))` where the
/// gradients are computed exactly as in [`smoothed_gradients`].
pub fn soft_edges_tensor(x: &Tensor, p: &CannyParams) -> Result<Tensor> {
    let (_, c, _, _) = x.dims4()?;
    if c != 1 {
        return Err(Error::DimMismatch(format!("soft edges expect one channel, got {c}")));
    }
    let (dtype, device) = (x.dtype(), x.device());
    let taps = gaussian_kernel(p.sigma);
    let k = taps.len();
    let radius = k / 2;
    let row_k = Tensor::new(taps.as_slice(), device)?.to_dtype(dtype)?.reshape((1, 1, 1, k))?;
    let col_k = row_k.reshape((1, 1, k, 1))?;
    let padded = reflect_pad2d(x, radius)?;
    let smooth = padded.conv2d(&row_k, 0, 1, 1, 1)?.conv2d(&col_k, 0, 1, 1, 1)?;
    let grads = reflect_pad2d(&smooth, 1)?.conv2d(&sobel_kernel(dtype, device)?, 0, 1, 1, 1)?;
    let mag = (grads.sqr()?.sum_keepdim(1)? + SOFT_MAGNITUDE_EPS)?.sqrt()?;
    let logits = mag.affine(p.soft_temperature, -p.soft_temperature * p.soft_center())?;
    Ok(candle_nn::ops::sigmoid(&logits)?)
}

/// Soft edges of one image, evaluated in f64.
pub fn soft_edges(img: &Image, p: &CannyParams) -> SoftEdgeMap {
    let gray = img.to_grayscale();
    let t = gray
        .to_unit_tensor(DType::F64, &Device::Cpu)
        .and_then(|t| soft_edges_tensor(&t, p))
        .expect("single-channel CPU tensor");
    let data: Vec<f64> = t.flatten_all().and_then(|t| t.to_vec1()).expect("f64 tensor");
    SoftEdgeMap { height: gray.height(), width: gray.width(), data }
}

/// Sum of the soft response, handy for scalar gradient checks.
pub fn soft_edge_sum(x: &Tensor, p: &CannyParams) -> Result<f64> {
    scalar(&soft_edges_tensor(x, p)?.sum_all()?)
}

/// Precision/recall F1 over edge pixels with Chebyshev matching radius `tol_px`.
///
/// Two empty maps score 1.0; exactly one empty map scores 0.0.
pub fn edge_f_measure(pred: &EdgeMap, reference: &EdgeMap, tol_px: usize) -> Result<f64> {
    if pred.dims() != reference.dims() {
        return Err(Error::DimMismatch(format!(
            "{:?} vs {:?}",
            pred.dims(),
            reference.dims()
        )));
    }
    let (np, nr) = (pred.count(), reference.count());
    if np == 0 && nr == 0 {
        return Ok(1.0);
    }
    if np == 0 || nr == 0 {
        return Ok(0.0);
    }
    let near = |map: &EdgeMap, y: usize, x: usize| -> bool {
        let (h, w) = map.dims();
        let t = tol_px;
        (y.saturating_sub(t)..(y + t + 1).min(h))
            .any(|yy| (x.saturating_sub(t)..(x + t + 1).min(w)).any(|xx| map.get(yy, xx)))
    };
    let (h, w) = pred.dims();
    let mut matched_pred = 0usize;
    let mut matched_ref = 0usize;
    for y in 0..h {
        for x in 0..w {
            if pred.get(y, x) && near(reference, y, x) {
                matched_pred += 1;
            }
            if reference.get(y, x) && near(pred, y, x) {
                matched_ref += 1;
            }
        }
    }
    let precision = matched_pred as f64 / np as f64;
    let recall = matched_ref as f64 / nr as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(h: usize, w: usize, col: usize, lo: f32, hi: f32) -> Image {
        Image::from_fn(h, w, 1, |_, x, _| if x < col { lo } else { hi }).unwrap()
    }

    #[test]
    fn default_params_are_valid() {
        let p = CannyParams::default();
        p.validate().unwrap();
        assert!(CannyParams { low: 0.3, ..p }.validate().is_err());
        assert!(CannyParams { sigma: 0.0, ..p }.validate().is_err());
    }

    #[test]
    fn gaussian_kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.4);
        assert_eq!(k.len(), 2 * 5 + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..k.len() {
            assert_eq!(k[i], k[k.len() - 1 - i]);
        }
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = Image::filled(16, 16, 1, 0.42).unwrap();
        assert!(canny_edges(&img, &CannyParams::default()).is_empty());
        let soft = soft_edges(&img, &CannyParams::default());
        let p = CannyParams::default();
        let expect = 1.0 / (1.0 + (p.soft_center() * p.soft_temperature).exp());
        for &v in soft.data() {
            assert!((v - expect).abs() < 1e-3, "{v} vs {expect}");
            assert!(v < 1e-3);
        }
    }

    #[test]
    fn vertical_step_gives_single_line() {
        let img = step(32, 32, 16, 0.0, 1.0);
        let p = CannyParams { sigma: 1.0, low: 0.05, high: 0.15, ..Default::default() };
        let e = canny_edges(&img, &p);
        for y in 0..32 {
            let cols: Vec<usize> = (0..32).filter(|&x| e.get(y, x)).collect();
            assert_eq!(cols, vec![15], "row {y}");
        }
    }

    #[test]
    fn soft_edges_peak_at_step() {
        let img = step(16, 16, 8, 0.1, 0.9);
        let s = soft_edges(&img, &CannyParams::default());
        assert!(s.get(8, 7) > 0.99);
        assert!(s.get(8, 1) < 0.01);
    }

    #[test]
    fn f_measure_cases() {
        let line = EdgeMap::from_fn(10, 10, |_, x| x == 4);
        let shifted = EdgeMap::from_fn(10, 10, |_, x| x == 5);
        let empty = EdgeMap::from_fn(10, 10, |_, _| false);
        assert_eq!(edge_f_measure(&line, &line, 0).unwrap(), 1.0);
        assert_eq!(edge_f_measure(&empty, &line, 2).unwrap(), 0.0);
        assert_eq!(edge_f_measure(&empty, &empty, 0).unwrap(), 1.0);
        assert_eq!(edge_f_measure(&shifted, &line, 1).unwrap(), 1.0);
        assert_eq!(edge_f_measure(&shifted, &line, 0).unwrap(), 0.0);
    }

    #[test]
    fn edge_map_png_dump() {
        let dir = tempfile::tempdir().unwrap();
        let e = EdgeMap::from_fn(4, 4, |y, x| y == x);
        e.save_png(dir.path().join("e.png")).unwrap();
        let back = crate::imagecore::SegMask::load(dir.path().join("e.png")).unwrap();
        assert_eq!(back.data(), e.data());
    }
}
