//! Differentiable tensor helpers missing from candle on the CPU backend.

use candle_core::{DType, Device, Tensor, D};

use crate::error::Result;
use crate::imagecore::{reflect_index, LUMA};

/// Reflect-101 padding of the last two dims of an `(N, C, H, W)` tensor.
pub fn reflect_pad2d(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    let rows = reflect_indices(h, pad, x.device())?;
    let cols = reflect_indices(w, pad, x.device())?;
    Ok(x.index_select(&rows, 2)?.index_select(&cols, 3)?)
}

fn reflect_indices(n: usize, pad: usize, device: &Device) -> Result<Tensor> {
    let idx: Vec<u32> = (-(pad as i64)..(n + pad) as i64)
        .map(|i| reflect_index(i, n) as u32)
        .collect();
    Ok(Tensor::new(idx, device)?)
}

/// Per-sample, per-channel normalization without affine parameters.
pub fn instance_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let flat = x.reshape((n, c, h * w))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(normed.reshape((n, c, h, w))?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Row-stochastic `(dst, src)` matrix for half-pixel bilinear resampling.
fn bilinear_matrix(src: usize, dst: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut m = vec![0f64; dst * src];
    let scale = src as f64 / dst as f64;
    for o in 0..dst {
        let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(src - 1);
        let t = pos - lo as f64;
        m[o * src + lo] += 1.0 - t;
        m[o * src + hi] += t;
    }
    Ok(Tensor::from_vec(m, (dst, src), device)?.to_dtype(dtype)?)
}

/// Bilinear 2x upsampling expressed as two matmuls so it backpropagates.
pub fn upsample_bilinear2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let mw = bilinear_matrix(w, 2 * w, x.dtype(), x.device())?.t()?;
    let mh = bilinear_matrix(h, 2 * h, x.dtype(), x.device())?.t()?;
    let x = x.reshape((n * c, h, w))?.broadcast_matmul(&mw)?; // (nc, h, 2w)
    let x = x.transpose(1, 2)?.broadcast_matmul(&mh)?; // (nc, 2w, 2h)
    Ok(x.transpose(1, 2)?.reshape((n, c, 2 * h, 2 * w))?)
}

/// Luminance of an `(N, C, H, W)` tensor; single-channel input passes through.
pub fn grayscale(x: &Tensor) -> Result<Tensor> {
    let (_, c, _, _) = x.dims4()?;
    if c == 1 {
        return Ok(x.clone());
    }
    let weights = Tensor::new(&LUMA, x.device())?
        .to_dtype(x.dtype())?
        .reshape((1, 3, 1, 1))?;
    Ok(x.broadcast_mul(&weights)?.sum_keepdim(1)?)
}

/// Mean absolute difference over all elements.
pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.abs()?.mean_all()?)
}

/// Mean of `(x - target)^2` over all elements.
pub fn mean_sq_to(x: &Tensor, target: f64) -> Result<Tensor> {
    Ok((x - target)?.sqr()?.mean_all()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_pad_matches_index_rule() {
        let x = Tensor::arange(0f32, 12., &Device::Cpu).unwrap().reshape((1, 1, 3, 4)).unwrap();
        let p = reflect_pad2d(&x, 2).unwrap();
        assert_eq!(p.dims(), &[1, 1, 7, 8]);
        let v: Vec<Vec<f32>> = p.squeeze(0).unwrap().squeeze(0).unwrap().to_vec2().unwrap();
        // row -2 -> 2, col -2 -> 2
        assert_eq!(v[0][0], 10.0);
        // row 0, col 0 at offset 2
        assert_eq!(v[2][2], 0.0);
        // row 3 -> 1, col 4 -> 2
        assert_eq!(v[5][6], 6.0);
    }

    #[test]
    fn bilinear_upsample_matches_image_resize() {
        use crate::imagecore::Image;
        let img = Image::from_fn(3, 5, 1, |y, x, _| ((y * 5 + x) % 4) as f32 / 3.0).unwrap();
        let t = img.to_unit_tensor(DType::F64, &Device::Cpu).unwrap();
        let up = upsample_bilinear2x(&t).unwrap();
        let expect = img.resize(6, 10).unwrap();
        let got: Vec<f64> = up.flatten_all().unwrap().to_vec1().unwrap();
        for (a, b) in got.iter().zip(expect.data()) {
            assert!((*a as f32 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let x = Tensor::arange(0f64, 32., &Device::Cpu).unwrap().reshape((1, 2, 4, 4)).unwrap();
        let y = instance_norm(&x, 1e-5).unwrap();
        let m: Vec<f64> = y.mean((2, 3)).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-12));
        let v: Vec<f64> = y.sqr().unwrap().mean((2, 3)).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|v| (v - 1.0).abs() < 1e-4));
    }
}
