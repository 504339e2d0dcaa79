//! Seeded rotation / shift / window augmentation into fixed-size patches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FundusDataset;
use crate::error::{Error, Result};
use crate::imagecore::{reflect_index, Image, Padding, SegMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub max_rotation_degrees: f64,
    pub max_shift_fraction: f64,
    pub patches_per_domain: usize,
    pub patch_size: usize,
    /// Side of a random square window cut from the transformed image before
    /// resizing. `None` resizes the whole frame.
    pub window: Option<usize>,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            max_rotation_degrees: 15.0,
            max_shift_fraction: 0.1,
            patches_per_domain: 400,
            patch_size: 512,
            window: None,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.patches_per_domain == 0 || self.patch_size == 0 {
            return Err(Error::Config("patches_per_domain and patch_size must be at least 1".into()));
        }
        if !(0.0..=45.0).contains(&self.max_rotation_degrees) {
            return Err(Error::Config(format!(
                "max_rotation_degrees {} outside [0, 45]",
                self.max_rotation_degrees
            )));
        }
        if !(0.0..=0.25).contains(&self.max_shift_fraction) {
            return Err(Error::Config(format!(
                "max_shift_fraction {} outside [0, 0.25]",
                self.max_shift_fraction
            )));
        }
        if self.window == Some(0) {
            return Err(Error::Config("window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parameters of one generated patch, enough to replay it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub source: usize,
    pub rotation_degrees: f64,
    /// Translation in pixels, applied after rotation about the image centre.
    pub shift_y: f64,
    pub shift_x: f64,
    pub window_top: usize,
    pub window_left: usize,
    pub window_height: usize,
    pub window_width: usize,
    pub patch_size: usize,
}

#[derive(Debug, Clone)]
pub struct PatchSet {
    pub dataset: FundusDataset,
    pub records: Vec<PatchRecord>,
}

/// Source coordinate sampled by output pixel `(y, x)`.
fn inverse_map(rec: &PatchRecord, h: usize, w: usize) -> impl Fn(f64, f64) -> (f64, f64) {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = rec.rotation_degrees.to_radians().sin_cos();
    let (ty, tx) = (rec.shift_y, rec.shift_x);
    move |y, x| {
        let (dy, dx) = (y - cy - ty, x - cx - tx);
        (cy + c * dy + s * dx, cx - s * dy + c * dx)
    }
}

fn warp_image(img: &Image, rec: &PatchRecord) -> Result<Image> {
    let (h, w, ch) = img.dims();
    let map = inverse_map(rec, h, w);
    let mut data = Vec::with_capacity(h * w * ch);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = map(y as f64, x as f64);
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = ((sy - y0) as f32, (sx - x0) as f32);
            let ry = [reflect_index(y0 as i64, h), reflect_index(y0 as i64 + 1, h)];
            let rx = [reflect_index(x0 as i64, w), reflect_index(x0 as i64 + 1, w)];
            for c in 0..ch {
                let top = img.get(ry[0], rx[0], c) * (1.0 - fx) + img.get(ry[0], rx[1], c) * fx;
                let bot = img.get(ry[1], rx[0], c) * (1.0 - fx) + img.get(ry[1], rx[1], c) * fx;
                data.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Image::new(h, w, ch, data)
}

fn warp_mask(mask: &SegMask, rec: &PatchRecord) -> Result<SegMask> {
    let (h, w) = mask.dims();
    let map = inverse_map(rec, h, w);
    SegMask::from_fn(h, w, |y, x| {
        let (sy, sx) = map(y as f64, x as f64);
        mask.get(reflect_index(sy.round() as i64, h), reflect_index(sx.round() as i64, w)) == 1
    })
}

fn window_of(rec: &PatchRecord) -> (i64, i64) {
    (rec.window_top as i64, rec.window_left as i64)
}

/// Regenerates the image patch described by `rec` from its source image.
pub fn replay_image(source: &Image, rec: &PatchRecord) -> Result<Image> {
    let warped = warp_image(source, rec)?;
    let (top, left) = window_of(rec);
    let win = if rec.window_height == warped.height() && rec.window_width == warped.width() {
        warped
    } else {
        crop(&warped, top, left, rec.window_height, rec.window_width)?
    };
    win.resize(rec.patch_size, rec.patch_size)
}

/// Label counterpart of [`replay_image`], nearest-neighbour throughout.
pub fn replay_mask(source: &SegMask, rec: &PatchRecord) -> Result<SegMask> {
    let warped = warp_mask(source, rec)?;
    let (top, left) = window_of(rec);
    let win = if rec.window_height == warped.height() && rec.window_width == warped.width() {
        warped
    } else if rec.window_height == rec.window_width {
        warped.extract_patch(top, left, rec.window_height, Padding::Error)?
    } else {
        return Err(Error::Config("non-square windows are only used for whole frames".into()));
    };
    win.resize_nearest(rec.patch_size, rec.patch_size)
}

fn crop(img: &Image, top: i64, left: i64, h: usize, w: usize) -> Result<Image> {
    if h != w {
        return Err(Error::Config("non-square windows are only used for whole frames".into()));
    }
    img.extract_patch(top, left, h, Padding::Error)
}

/// Draws `patches_per_domain` augmented patches, cycling through the sources.
pub fn make_patches(ds: &FundusDataset, spec: &AugmentSpec) -> Result<PatchSet> {
    spec.validate()?;
    ds.validate()?;
    if ds.is_empty() {
        return Err(Error::Empty(format!("dataset {}", ds.name)));
    }
    for (id, im) in ds.ids.iter().zip(&ds.images) {
        let short = im.height().min(im.width());
        let need = spec.window.unwrap_or(spec.patch_size);
        if need > short {
            return Err(Error::Config(format!(
                "image {id} is {}x{}, smaller than the requested {need} px",
                im.height(),
                im.width()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.patches_per_domain;
    let mut records = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    let mut labels = ds.labels.as_ref().map(|_| Vec::with_capacity(n));
    let mut fovs = ds.fov_masks.as_ref().map(|_| Vec::with_capacity(n));
    let sym = |rng: &mut ChaCha8Rng, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    for i in 0..n {
        let source = i % ds.len();
        let (h, w, _) = ds.images[source].dims();
        let rotation_degrees = sym(&mut rng, spec.max_rotation_degrees);
        let shift_y = sym(&mut rng, spec.max_shift_fraction * h as f64);
        let shift_x = sym(&mut rng, spec.max_shift_fraction * w as f64);
        let (window_top, window_left, window_height, window_width) = match spec.window {
            Some(win) => (rng.random_range(0..=h - win), rng.random_range(0..=w - win), win, win),
            None => (0, 0, h, w),
        };
        let rec = PatchRecord {
            source,
            rotation_degrees,
            shift_y,
            shift_x,
            window_top,
            window_left,
            window_height,
            window_width,
            patch_size: spec.patch_size,
        };
        images.push(replay_image(&ds.images[source], &rec)?);
        if let (Some(out), Some(src)) = (labels.as_mut(), ds.labels.as_ref()) {
            out.push(replay_mask(&src[source], &rec)?);
        }
        if let (Some(out), Some(src)) = (fovs.as_mut(), ds.fov_masks.as_ref()) {
            out.push(replay_mask(&src[source], &rec)?);
        }
        ids.push(format!("{}_p{i:04}", ds.ids[source]));
        records.push(rec);
    }
    let dataset = FundusDataset::new(format!("{}-patches", ds.name), ids, images, labels, fovs, ds.split)?;
    Ok(PatchSet { dataset, records })
}
