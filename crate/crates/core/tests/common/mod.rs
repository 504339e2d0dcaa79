//! Helpers shared by the integration tests.
#![allow(dead_code)]

use edgecyclegan::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force Canny written stage by stage without sharing code with the
/// library: full 2-D Gaussian, direct 3x3 Sobel, angle-binned suppression
/// and a fixed-point hysteresis sweep.
pub mod canny_oracle {
    fn reflect(i: i64, n: usize) -> usize {
        let n = n as i64;
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let mut j = i.rem_euclid(period);
        if j >= n {
            j = period - j;
        }
        j as usize
    }

    pub fn gaussian_2d(sigma: f64) -> (usize, Vec<Vec<f64>>) {
        let r = ((3.0 * sigma).ceil() as usize).max(1);
        let g1: Vec<f64> =
            (0..=2 * r).map(|k| (-((k as f64 - r as f64).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
        let s: f64 = g1.iter().sum();
        let g1: Vec<f64> = g1.iter().map(|v| v / s).collect();
        let k = g1.iter().map(|a| g1.iter().map(|b| a * b).collect()).collect();
        (r, k)
    }

    pub fn smooth(img: &[Vec<f64>], sigma: f64) -> Vec<Vec<f64>> {
        let (h, w) = (img.len(), img[0].len());
        let (r, k) = gaussian_2d(sigma);
        let r = r as i64;
        let mut out = vec![vec![0.0; w]; h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let v = img[reflect(y as i64 + dy, h)][reflect(x as i64 + dx, w)];
                        acc += k[(dy + r) as usize][(dx + r) as usize] * v;
                    }
                }
                out[y][x] = acc;
            }
        }
        out
    }

    const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

    /// Sobel responses divided by 4.
    pub fn sobel(s: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (h, w) = (s.len(), s[0].len());
        let mut gx = vec![vec![0.0; w]; h];
        let mut gy = vec![vec![0.0; w]; h];
        for y in 0..h {
            for x in 0..w {
                let (mut ax, mut ay) = (0.0, 0.0);
                for i in 0..3 {
                    for j in 0..3 {
                        let v = s[reflect(y as i64 + i as i64 - 1, h)][reflect(x as i64 + j as i64 - 1, w)];
                        ax += SOBEL_X[i][j] * v;
                        // transpose of SOBEL_X
                        ay += SOBEL_X[j][i] * v;
                    }
                }
                gx[y][x] = ax / 4.0;
                gy[y][x] = ay / 4.0;
            }
        }
        (gx, gy)
    }

    /// Neighbour offsets for a direction bin in degrees, row axis pointing down.
    fn offsets(angle_deg: f64) -> [(i64, i64); 2] {
        let a = angle_deg.rem_euclid(180.0);
        if !(22.5..157.5).contains(&a) {
            [(0, -1), (0, 1)]
        } else if a < 67.5 {
            [(-1, -1), (1, 1)]
        } else if a < 112.5 {
            [(-1, 0), (1, 0)]
        } else {
            [(1, -1), (-1, 1)]
        }
    }

    fn ties(a: f64, b: f64) -> f64 {
        1e-9 * a.abs().max(b.abs())
    }

    pub fn edges(img: &[Vec<f64>], sigma: f64, low: f64, high: f64) -> Vec<Vec<bool>> {
        let (h, w) = (img.len(), img[0].len());
        let (gx, gy) = sobel(&smooth(img, sigma));
        let mag: Vec<Vec<f64>> =
            (0..h).map(|y| (0..w).map(|x| (gx[y][x].powi(2) + gy[y][x].powi(2)).sqrt()).collect()).collect();
        let at = |y: i64, x: i64| {
            if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                0.0
            } else {
                mag[y as usize][x as usize]
            }
        };
        let mut thin = vec![vec![false; w]; h];
        for y in 0..h {
            for x in 0..w {
                let m = mag[y][x];
                if m == 0.0 || m < low {
                    continue;
                }
                let angle = gy[y][x].atan2(gx[y][x]).to_degrees();
                let [(by, bx), (ay, ax)] = offsets(angle);
                let before = at(y as i64 + by, x as i64 + bx);
                let after = at(y as i64 + ay, x as i64 + ax);
                thin[y][x] = m - before > ties(m, before) && after - m <= ties(m, after);
            }
        }
        let mut out: Vec<Vec<bool>> =
            (0..h).map(|y| (0..w).map(|x| thin[y][x] && mag[y][x] >= high).collect()).collect();
        loop {
            let mut changed = false;
            for y in 0..h {
                for x in 0..w {
                    if out[y][x] || !thin[y][x] {
                        continue;
                    }
                    let touches = (-1i64..=1).any(|dy| {
                        (-1i64..=1).any(|dx| {
                            let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                            ny >= 0 && nx >= 0 && ny < h as i64 && nx < w as i64 && out[ny as usize][nx as usize]
                        })
                    });
                    if touches {
                        out[y][x] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                return out;
            }
        }
    }
}

pub fn gray_rows(img: &Image) -> Vec<Vec<f64>> {
    let g = img.to_grayscale();
    (0..g.height()).map(|y| (0..g.width()).map(|x| g.get(y, x, 0) as f64).collect()).collect()
}

/// Piecewise-smooth test image: a few random discs and bars over noise.
pub fn random_scene(rng: &mut ChaCha8Rng, size: usize, channels: usize) -> Image {
    let shapes: Vec<(f64, f64, f64, f32)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.0..size as f64),
                rng.random_range(0.0..size as f64),
                rng.random_range(2.0..size as f64 / 3.0),
                rng.random_range(-0.5f32..0.5),
            )
        })
        .collect();
    let noise: Vec<f32> = (0..size * size * channels).map(|_| rng.random_range(-0.05f32..0.05)).collect();
    Image::from_fn(size, size, channels, |y, x, c| {
        let mut v = 0.5f32;
        for (k, &(cy, cx, r, a)) in shapes.iter().enumerate() {
            let inside = if k % 2 == 0 {
                (y as f64 - cy).hypot(x as f64 - cx) < r
            } else {
                (y as f64 - cy).abs() < r / 3.0 && (x as f64 - cx).abs() < r
            };
            if inside {
                v += a;
            }
        }
        v + noise[(y * size + x) * channels + c]
    })
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
