//! Middlebury color-wheel rendering of flow fields.

use image::RgbImage;

use crate::matcher::FlowField;

// Segment lengths of the wheel: red-yellow, yellow-green, green-cyan,
// cyan-blue, blue-magenta, magenta-red.
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

fn color_wheel() -> Vec<[f32; 3]> {
    let mut wheel = Vec::with_capacity(SEGMENTS.iter().sum());
    let ramp = |i: usize, n: usize| 255.0 * i as f32 / n as f32;
    let [ry, yg, gc, cb, bm, mr] = SEGMENTS;
    wheel.extend((0..ry).map(|i| [255.0, ramp(i, ry), 0.0]));
    wheel.extend((0..yg).map(|i| [255.0 - ramp(i, yg), 255.0, 0.0]));
    wheel.extend((0..gc).map(|i| [0.0, 255.0, ramp(i, gc)]));
    wheel.extend((0..cb).map(|i| [0.0, 255.0 - ramp(i, cb), 255.0]));
    wheel.extend((0..bm).map(|i| [ramp(i, bm), 0.0, 255.0]));
    wheel.extend((0..mr).map(|i| [255.0, 0.0, 255.0 - ramp(i, mr)]));
    wheel
}

fn magnitude(f: [f32; 2]) -> f32 {
    (f[0] * f[0] + f[1] * f[1]).sqrt()
}

/// 99th percentile of valid flow magnitudes, 1 if there is no motion.
pub fn auto_max_magnitude(f: &FlowField) -> f32 {
    let (w, h) = f.dims();
    let mut mags: Vec<f32> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter_map(|(x, y)| f.get(x, y).map(magnitude))
        .filter(|m| m.is_finite())
        .collect();
    if mags.is_empty() {
        return 1.0;
    }
    let k = ((mags.len() - 1) as f64 * 0.99).round() as usize;
    let (_, m, _) = mags.select_nth_unstable_by(k, f32::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

/// Hue encodes direction, saturation magnitude relative to `max_mag`.
/// Magnitudes beyond it are darkened; invalid pixels are black.
pub fn flow_to_color(f: &FlowField, max_mag: Option<f32>) -> RgbImage {
    let wheel = color_wheel();
    let ncols = wheel.len();
    let max_mag = max_mag.filter(|m| *m > 0.0).unwrap_or_else(|| auto_max_magnitude(f));
    let (w, h) = f.dims();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let Some(v) = f.get(x as usize, y as usize) else {
            return image::Rgb([0, 0, 0]);
        };
        if !v[0].is_finite() || !v[1].is_finite() {
            return image::Rgb([0, 0, 0]);
        }
        let (u, v) = (v[0] / max_mag, v[1] / max_mag);
        let rad = (u * u + v * v).sqrt();
        let mut a = (-v).atan2(-u) / std::f32::consts::PI;
        if a >= 1.0 - 1e-7 {
            a = -1.0;
        }
        let fk = (a + 1.0) / 2.0 * (ncols - 1) as f32;
        let k0 = (fk.floor() as usize).min(ncols - 1);
        let k1 = (k0 + 1) % ncols;
        let t = fk - k0 as f32;
        let mut px = [0u8; 3];
        for c in 0..3 {
            let col = ((1.0 - t) * wheel[k0][c] + t * wheel[k1][c]) / 255.0;
            let col = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
            px[c] = (255.0 * col).round().clamp(0.0, 255.0) as u8;
        }
        image::Rgb(px)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wheel_center_edge_and_invalid() {
        let mut f = FlowField::from_fn(3, 1, |x, _| match x {
            0 => [0.0, 0.0],
            _ => [5.0, 0.0],
        });
        f.invalidate(2, 0);
        let img = flow_to_color(&f, Some(5.0));
        assert_eq!(img.get_pixel(0, 0).0, [255, 255, 255]);
        assert_eq!(img.get_pixel(1, 0).0, [255, 0, 0]);
        assert_eq!(img.get_pixel(2, 0).0, [0, 0, 0]);
        assert_eq!(color_wheel().len(), 55);
    }

    #[test]
    fn directions_differ_and_auto_scale() {
        let f = FlowField::from_fn(4, 1, |x, _| match x {
            0 => [0.0, 3.0],
            1 => [-3.0, 0.0],
            2 => [0.0, -3.0],
            _ => [3.0, 0.0],
        });
        assert_eq!(auto_max_magnitude(&f), 3.0);
        let img = flow_to_color(&f, None);
        let px: Vec<[u8; 3]> = (0..4).map(|x| img.get_pixel(x, 0).0).collect();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(px[i], px[j]);
            }
        }
        assert_eq!(auto_max_magnitude(&FlowField::new(2, 2)), 1.0);
    }
}
