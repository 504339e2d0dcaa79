//! Procedural fundus-like images with exact vessel masks.
//!
//! Vessel trees grow as random walks from a disc near the image centre,
//! narrowing as they go and occasionally forking. Strokes are rendered as
//! capsules with a one-pixel linear coverage ramp; the label is the set of
//! pixels whose coverage reaches one half.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FundusDataset, Split};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::imagecore::{Image, SegMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VesselParams {
    /// Trees rooted at the disc.
    pub trees: usize,
    /// Stroke radius at the root and the radius below which a branch stops, in pixels.
    pub max_radius: f64,
    pub min_radius: f64,
    /// Per-step radius multiplier.
    pub taper: f64,
    /// Std of the heading change per step, radians.
    pub tortuosity: f64,
    /// Per-step probability of forking.
    pub branch_probability: f64,
    /// Step length as a fraction of the image side.
    pub step_fraction: f64,
}

impl Default for VesselParams {
    fn default() -> Self {
        Self {
            trees: 3,
            max_radius: 1.8,
            min_radius: 0.6,
            taper: 0.985,
            tortuosity: 0.18,
            branch_probability: 0.06,
            step_fraction: 0.015,
        }
    }
}

/// Rendering of one acquisition domain; vessels are darker than background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainStyle {
    /// Background intensity per RGB channel.
    pub background: [f32; 3],
    /// Vessel darkening per channel, `0 < contrast <= background`.
    pub contrast: [f32; 3],
    /// Relative darkening at the corners.
    pub vignette: f32,
    pub noise_std: f32,
}

impl Default for DomainStyle {
    fn default() -> Self {
        Self::warm()
    }
}

impl DomainStyle {
    /// Reddish frames whose vessels show almost only in green.
    pub fn warm() -> Self {
        Self { background: [0.80, 0.48, 0.22], contrast: [0.05, 0.40, 0.05], vignette: 0.25, noise_std: 0.02 }
    }

    /// Greyish frames with the vessel darkening carried by red and blue.
    pub fn pale() -> Self {
        Self { background: [0.60, 0.70, 0.62], contrast: [0.40, 0.03, 0.38], vignette: 0.1, noise_std: 0.03 }
    }

    pub fn validate(&self) -> Result<()> {
        for c in 0..3 {
            let (b, k) = (self.background[c], self.contrast[c]);
            if !(b > 0.0 && b <= 1.0) || !(k > 0.0 && k <= b) {
                return Err(Error::Config(format!(
                    "style channel {c}: need 0 < contrast ({k}) <= background ({b}) <= 1"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.vignette) || !(0.0..=0.5).contains(&self.noise_std) {
            return Err(Error::Config("vignette must be in [0, 1) and noise_std in [0, 0.5]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub count: usize,
    pub image_size: usize,
    pub vessels: VesselParams,
    pub style: DomainStyle,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { count: 20, image_size: 128, vessels: VesselParams::default(), style: DomainStyle::default(), seed: 0 }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let v = &self.vessels;
        if self.count == 0 || self.image_size < 8 {
            return Err(Error::Config("count must be at least 1 and image_size at least 8".into()));
        }
        if v.trees == 0 || !(v.min_radius > 0.0 && v.min_radius <= v.max_radius) {
            return Err(Error::Config("need trees >= 1 and 0 < min_radius <= max_radius".into()));
        }
        if !(v.taper > 0.0 && v.taper < 1.0) || !(0.0..=1.0).contains(&v.branch_probability) {
            return Err(Error::Config("taper must be in (0, 1) and branch_probability in [0, 1]".into()));
        }
        if !(v.step_fraction > 0.0 && v.step_fraction <= 0.25) || !(v.tortuosity >= 0.0) {
            return Err(Error::Config("step_fraction must be in (0, 0.25], tortuosity >= 0".into()));
        }
        self.style.validate()
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: (f64, f64),
    b: (f64, f64),
    radius: f64,
}

const MAX_SEGMENTS: usize = 4000;

fn grow_tree(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Segment> {
    let v = &spec.vessels;
    let n = spec.image_size as f64;
    let step = v.step_fraction * n;
    let turn = Normal::new(0.0, v.tortuosity.max(1e-12)).expect("finite std");
    let disc = (n * rng.random_range(0.4..0.6), n * rng.random_range(0.4..0.6));
    let mut stack: Vec<((f64, f64), f64, f64)> = (0..v.trees)
        .map(|t| {
            let heading = std::f64::consts::TAU * (t as f64 + rng.random_range(0.0..1.0)) / v.trees as f64;
            (disc, heading, v.max_radius)
        })
        .collect();
    let mut segments = Vec::new();
    let inside = |p: (f64, f64)| p.0 > -2.0 && p.1 > -2.0 && p.0 < n + 2.0 && p.1 < n + 2.0;
    while let Some((mut p, mut heading, mut radius)) = stack.pop() {
        while radius >= v.min_radius && inside(p) && segments.len() < MAX_SEGMENTS {
            heading += turn.sample(rng);
            let q = (p.0 + step * heading.sin(), p.1 + step * heading.cos());
            segments.push(Segment { a: p, b: q, radius });
            p = q;
            radius *= v.taper;
            if rng.random_bool(v.branch_probability) {
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let angle = side * rng.random_range(0.5..1.0);
                stack.push((p, heading + angle, radius * 0.75));
                heading -= 0.3 * angle;
            }
        }
    }
    segments
}

fn distance_to_segment(p: (f64, f64), s: &Segment) -> f64 {
    let (dy, dx) = (s.b.0 - s.a.0, s.b.1 - s.a.1);
    let len2 = dy * dy + dx * dx;
    let t = if len2 > 0.0 {
        (((p.0 - s.a.0) * dy + (p.1 - s.a.1) * dx) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ey, ex) = (p.0 - s.a.0 - t * dy, p.1 - s.a.1 - t * dx);
    (ey * ey + ex * ex).sqrt()
}

/// Per-pixel vessel coverage in `[0, 1]`.
fn coverage(size: usize, segments: &[Segment]) -> Vec<f64> {
    let mut cov = vec![0f64; size * size];
    for s in segments {
        let reach = s.radius + 0.5;
        let lo = |a: f64, b: f64| ((a.min(b) - reach).floor().max(0.0)) as usize;
        let hi = |a: f64, b: f64| ((a.max(b) + reach).ceil().min(size as f64 - 1.0)).max(-1.0) as i64;
        let (y1, x1) = (hi(s.a.0, s.b.0), hi(s.a.1, s.b.1));
        if y1 < 0 || x1 < 0 {
            continue;
        }
        for y in lo(s.a.0, s.b.0)..=y1 as usize {
            for x in lo(s.a.1, s.b.1)..=x1 as usize {
                let d = distance_to_segment((y as f64, x as f64), s);
                let c = (s.radius + 0.5 - d).clamp(0.0, 1.0);
                let slot = &mut cov[y * size + x];
                if c > *slot {
                    *slot = c;
                }
            }
        }
    }
    cov
}

fn render(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<(Image, SegMask)> {
    let n = spec.image_size;
    let segments = grow_tree(spec, rng);
    let cov = coverage(n, &segments);
    let st = &spec.style;
    let noise = Normal::new(0.0f32, st.noise_std.max(0.0)).expect("finite std");
    let centre = (n as f64 - 1.0) / 2.0;
    let corner2 = 2.0 * centre * centre;
    let mut data = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let r2 = ((y as f64 - centre).powi(2) + (x as f64 - centre).powi(2)) / corner2.max(1.0);
            let shade = 1.0 - st.vignette * r2 as f32;
            let c = cov[y * n + x] as f32;
            for ch in 0..3 {
                let v = (st.background[ch] - st.contrast[ch] * c) * shade;
                let v = if st.noise_std > 0.0 { v + noise.sample(rng) } else { v };
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    let mask = SegMask::from_fn(n, n, |y, x| cov[y * n + x] >= 0.5)?;
    Ok((Image::new(n, n, 3, data)?, mask))
}

/// Draws `spec.count` labelled images; identical specs give identical datasets.
pub fn synth_fundus(spec: &SynthSpec) -> Result<FundusDataset> {
    spec.validate()?;
    let mut images = Vec::with_capacity(spec.count);
    let mut labels = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, i as u64));
        let (im, m) = render(spec, &mut rng)?;
        images.push(im);
        labels.push(m);
    }
    let ids = (0..spec.count).map(|i| format!("synth{i:04}")).collect();
    FundusDataset::new(format!("synth-{}", spec.seed), ids, images, Some(labels), None, Split::All)
}

/// Two domains sharing the vessel distribution of `spec` but rendered in
/// different styles, with disjoint per-domain seeds.
pub fn two_domain_synth(
    style_a: &DomainStyle,
    style_b: &DomainStyle,
    spec: &SynthSpec,
) -> Result<(FundusDataset, FundusDataset)> {
    let a = SynthSpec { style: style_a.clone(), seed: derive_seed(spec.seed, 0xA), ..spec.clone() };
    let b = SynthSpec { style: style_b.clone(), seed: derive_seed(spec.seed, 0xB), ..spec.clone() };
    let (mut da, mut db) = (synth_fundus(&a)?, synth_fundus(&b)?);
    da.name = "synth-A".into();
    db.name = "synth-B".into();
    Ok((da, db))
}
