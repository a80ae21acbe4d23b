//! Procedural image pairs with exact ground truth, for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::evaluation::GroundTruth;
use crate::imageio::LabImage;
use crate::matcher::FlowField;

/// Two frames and the true flow of the first.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub img1: LabImage,
    pub img2: LabImage,
    pub gt: GroundTruth,
}

fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated random lattice values in `[0, 1]`.
pub fn value_noise(width: usize, height: usize, cell: f32, rng: &mut impl Rng) -> Vec<f32> {
    let gw = (width as f32 / cell).ceil() as usize + 2;
    let gh = (height as f32 / cell).ceil() as usize + 2;
    let grid: Vec<f32> = (0..gw * gh).map(|_| rng.random::<f32>()).collect();
    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let gy = y as f32 / cell;
        let y0 = gy.floor() as usize;
        let ty = smooth(gy - y0 as f32);
        for (x, v) in row.iter_mut().enumerate() {
            let gx = x as f32 / cell;
            let x0 = gx.floor() as usize;
            let tx = smooth(gx - x0 as f32);
            let g = |i: usize, j: usize| grid[j * gw + i];
            let top = g(x0, y0) + (g(x0 + 1, y0) - g(x0, y0)) * tx;
            let bot = g(x0, y0 + 1) + (g(x0 + 1, y0 + 1) - g(x0, y0 + 1)) * tx;
            *v = top + (bot - top) * ty;
        }
    });
    out
}

/// Multi-octave colored noise. `finest` is the smallest feature size in
/// pixels; raising it gives a low-texture image.
pub fn fractal_texture_with(width: usize, height: usize, seed: u64, finest: f32) -> LabImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planes = [vec![0.0f32; width * height], vec![0.0; width * height], vec![0.0; width * height]];
    let mut cell = 64.0f32;
    let mut total = 0.0;
    while cell >= finest {
        let amp = cell.powf(0.5);
        total += amp;
        for plane in planes.iter_mut() {
            let n = value_noise(width, height, cell, &mut rng);
            for (p, v) in plane.iter_mut().zip(n) {
                *p += amp * (v - 0.5);
            }
        }
        cell /= 2.0;
    }
    LabImage::from_fn(width, height, |x, y| {
        let i = y * width + x;
        [
            (50.0 + 110.0 * planes[0][i] / total).clamp(0.0, 100.0),
            90.0 * planes[1][i] / total,
            90.0 * planes[2][i] / total,
        ]
    })
}

/// Natural-looking texture with detail down to 2 px.
pub fn fractal_texture(width: usize, height: usize, seed: u64) -> LabImage {
    fractal_texture_with(width, height, seed, 2.0)
}

/// `img` moved by `t`: the result at `p + t` equals `img` at `p`. Positions
/// outside the source replicate its border.
pub fn translate(img: &LabImage, t: [f32; 2]) -> LabImage {
    LabImage::from_fn(img.width(), img.height(), |x, y| {
        img.sample_bilinear(x as f32 - t[0], y as f32 - t[1]).expect("finite position")
    })
}

/// Ground truth where every pixel moves by `t`. Pixels whose target leaves
/// the frame are marked occluded.
pub fn translation_truth(width: usize, height: usize, t: [f32; 2]) -> GroundTruth {
    let flow = FlowField::from_fn(width, height, |_, _| t);
    let nocc = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f32 + t[0], (i / width) as f32 + t[1]);
            x >= 0.0 && y >= 0.0 && x <= (width - 1) as f32 && y <= (height - 1) as f32
        })
        .collect();
    GroundTruth::new(flow, Some(nocc)).expect("mask matches flow")
}

/// Textured image and its copy shifted by `t`.
pub fn translation_pair(width: usize, height: usize, t: [f32; 2], seed: u64) -> SyntheticPair {
    let img1 = fractal_texture(width, height, seed);
    let img2 = translate(&img1, t);
    SyntheticPair {
        img1,
        img2,
        gt: translation_truth(width, height, t),
    }
}

/// A tile of period `period` repeated over a square region in the middle of
/// a textured canvas, with the whole canvas shifted by `t`. Inside the
/// region only patches reaching the surround disambiguate the shift.
pub fn periodic_pair(size: usize, period: usize, margin: usize, t: [f32; 2], seed: u64) -> SyntheticPair {
    let tile = fractal_texture_with(period, period, seed, 1.0);
    let canvas = fractal_texture(size, size, seed.wrapping_add(0x5eed));
    let img1 = LabImage::from_fn(size, size, |x, y| {
        let inside = x >= margin && y >= margin && x < size - margin && y < size - margin;
        if inside {
            tile.pixel(x % period, y % period)
        } else {
            canvas.pixel(x, y)
        }
    });
    let img2 = translate(&img1, t);
    SyntheticPair {
        img1,
        img2,
        gt: translation_truth(size, size, t),
    }
}

/// One moving layer: an ellipse with its own texture and translation.
#[derive(Debug, Clone)]
pub struct Layer {
    pub center: [f32; 2],
    pub radii: [f32; 2],
    pub motion: [f32; 2],
    pub texture: LabImage,
}

impl Layer {
    fn covers(&self, x: f32, y: f32, shifted: bool) -> bool {
        let (cx, cy) = if shifted {
            (self.center[0] + self.motion[0], self.center[1] + self.motion[1])
        } else {
            (self.center[0], self.center[1])
        };
        let dx = (x - cx) / self.radii[0];
        let dy = (y - cy) / self.radii[1];
        dx * dx + dy * dy <= 1.0
    }
}

/// Background with an affine motion `t + A (p - c)` and foreground layers
/// painted in order, later layers on top.
#[derive(Debug, Clone)]
pub struct LayeredScene {
    pub width: usize,
    pub height: usize,
    pub background: LabImage,
    pub bg_motion: [f32; 2],
    /// Row-major 2x2 matrix `A`.
    pub bg_affine: [f32; 4],
    pub layers: Vec<Layer>,
    /// Standard deviation of independent per-frame noise on L.
    pub noise: f32,
    pub seed: u64,
}

impl LayeredScene {
    fn bg_flow(&self, x: f32, y: f32) -> [f32; 2] {
        let (cx, cy) = (self.width as f32 / 2.0, self.height as f32 / 2.0);
        let a = self.bg_affine;
        let (dx, dy) = (x - cx, y - cy);
        [self.bg_motion[0] + a[0] * dx + a[1] * dy, self.bg_motion[1] + a[2] * dx + a[3] * dy]
    }

    /// Source position in the background texture of a second-frame pixel.
    fn bg_source(&self, qx: f32, qy: f32) -> (f32, f32) {
        let (cx, cy) = (self.width as f32 / 2.0, self.height as f32 / 2.0);
        let a = self.bg_affine;
        let (m00, m01, m10, m11) = (1.0 + a[0], a[1], a[2], 1.0 + a[3]);
        let det = m00 * m11 - m01 * m10;
        let (rx, ry) = (qx - cx - self.bg_motion[0], qy - cy - self.bg_motion[1]);
        (cx + (m11 * rx - m01 * ry) / det, cy + (-m10 * rx + m00 * ry) / det)
    }

    /// Index of the top layer at a pixel, `None` for background.
    fn top(&self, x: f32, y: f32, second: bool) -> Option<usize> {
        (0..self.layers.len()).rev().find(|&i| self.layers[i].covers(x, y, second))
    }

    fn render(&self, second: bool, rng_seed: u64) -> LabImage {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let noise: Vec<f32> = (0..self.width * self.height)
            .map(|_| {
                // Sum of uniforms, close enough to Gaussian for texture noise.
                let s: f32 = (0..4).map(|_| rng.random::<f32>() - 0.5).sum();
                s * self.noise * 1.732
            })
            .collect();
        LabImage::from_fn(self.width, self.height, |x, y| {
            let (fx, fy) = (x as f32, y as f32);
            let mut px = match self.top(fx, fy, second) {
                Some(i) => {
                    let l = &self.layers[i];
                    let (sx, sy) = if second { (fx - l.motion[0], fy - l.motion[1]) } else { (fx, fy) };
                    l.texture.sample_bilinear(sx, sy).expect("finite")
                }
                None => {
                    let (sx, sy) = if second { self.bg_source(fx, fy) } else { (fx, fy) };
                    self.background.sample_bilinear(sx, sy).expect("finite")
                }
            };
            px[0] = (px[0] + noise[y * self.width + x]).clamp(0.0, 100.0);
            px
        })
    }

    /// Render both frames with flow and visibility.
    pub fn render_pair(&self) -> SyntheticPair {
        let img1 = self.render(false, self.seed ^ 0x5151);
        let img2 = self.render(true, self.seed ^ 0xa2a2);
        let (w, h) = (self.width, self.height);
        let mut flow = FlowField::new(w, h);
        let mut nocc = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f32, y as f32);
                let layer = self.top(fx, fy, false);
                let f = match layer {
                    Some(i) => self.layers[i].motion,
                    None => self.bg_flow(fx, fy),
                };
                flow.set(x, y, f, 0.0);
                let (tx, ty) = (fx + f[0], fy + f[1]);
                let inside = tx >= 0.0 && ty >= 0.0 && tx <= (w - 1) as f32 && ty <= (h - 1) as f32;
                nocc[y * w + x] = inside && self.top(tx, ty, true) == layer;
            }
        }
        SyntheticPair {
            img1,
            img2,
            gt: GroundTruth::new(flow, Some(nocc)).expect("mask matches flow"),
        }
    }
}

/// Random layered scene with large object motions, low-texture and
/// repetitive layers, and sensor noise.
pub fn sintel_like_scene(width: usize, height: usize, seed: u64) -> LayeredScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = fractal_texture_with(width, height, rng.random(), 8.0);
    let bg_motion = [rng.random_range(-12.0..12.0), rng.random_range(-6.0..6.0)];
    let zoom = rng.random_range(-0.03..0.03);
    let rot = rng.random_range(-0.02..0.02);
    let bg_affine = [zoom, -rot, rot, zoom];
    let n_layers = rng.random_range(4..=7);
    let scale = width.min(height) as f32;
    let layers = (0..n_layers)
        .map(|i| {
            let texture = match i % 3 {
                0 => fractal_texture_with(width, height, rng.random(), 32.0),
                1 => {
                    let period = rng.random_range(6..=12);
                    let tile = fractal_texture_with(period, period, rng.random(), 1.0);
                    LabImage::from_fn(width, height, |x, y| tile.pixel(x % period, y % period))
                }
                _ => fractal_texture_with(width, height, rng.random(), 2.0),
            };
            Layer {
                center: [rng.random_range(0.0..width as f32), rng.random_range(0.0..height as f32)],
                radii: [rng.random_range(0.1..0.3) * scale, rng.random_range(0.1..0.3) * scale],
                motion: [rng.random_range(-50.0..50.0), rng.random_range(-25.0..25.0)],
                texture,
            }
        })
        .collect();
    LayeredScene {
        width,
        height,
        background,
        bg_motion,
        bg_affine,
        layers,
        noise: 3.0,
        seed,
    }
}

/// Textured background moving by `bg` with one textured disc moving by
/// `fg` on top; the disc hides and reveals background.
pub fn occlusion_scene(width: usize, height: usize, bg: [f32; 2], fg: [f32; 2], seed: u64) -> SyntheticPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = width.min(height) as f32 * 0.3;
    let scene = LayeredScene {
        width,
        height,
        background: fractal_texture(width, height, rng.random()),
        bg_motion: bg,
        bg_affine: [0.0; 4],
        layers: vec![Layer {
            center: [width as f32 * 0.45, height as f32 * 0.5],
            radii: [side, side],
            motion: fg,
            texture: fractal_texture(width, height, rng.random()),
        }],
        noise: 0.0,
        seed,
    };
    scene.render_pair()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translation_ground_truth_consistent() {
        let p = translation_pair(40, 30, [5.0, -3.0], 1);
        for y in 3..30 {
            for x in 0..35 {
                assert_eq!(p.img1.pixel(x, y), p.img2.pixel(x + 5, y - 3));
            }
        }
        assert!(!p.gt.evaluated(36, 10));
        assert!(p.gt.evaluated(10, 10));
    }

    #[test]
    fn texture_ranges() {
        let t = fractal_texture(64, 64, 3);
        for y in 0..64 {
            for x in 0..64 {
                let p = t.pixel(x, y);
                assert!((0.0..=100.0).contains(&p[0]));
                assert!(p[1].abs() <= 128.0 && p[2].abs() <= 128.0);
            }
        }
    }

    #[test]
    fn layered_scene_truth_matches_rendering() {
        let mut s = sintel_like_scene(80, 60, 4);
        s.noise = 0.0;
        s.bg_affine = [0.0; 4];
        s.bg_motion = [3.0, 2.0];
        for l in &mut s.layers {
            l.motion = [l.motion[0].round(), l.motion[1].round()];
        }
        let p = s.render_pair();
        let mut checked = 0;
        for y in 0..60 {
            for x in 0..80 {
                if p.gt.evaluated(x, y) {
                    let f = p.gt.flow.flow_at(x, y);
                    let (tx, ty) = ((x as f32 + f[0]) as usize, (y as f32 + f[1]) as usize);
                    let a = p.img1.pixel(x, y);
                    let b = p.img2.pixel(tx, ty);
                    assert!((a[0] - b[0]).abs() < 1e-3, "({x},{y})");
                    checked += 1;
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn occlusion_scene_has_occlusions() {
        let p = occlusion_scene(64, 64, [2.0, 0.0], [-8.0, 3.0], 9);
        let occluded = p.gt.nocc.as_ref().unwrap().iter().filter(|&&v| !v).count();
        assert!(occluded > 50);
    }
}
