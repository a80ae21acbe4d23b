//! Walsh-Hadamard patch signatures used to seed the matcher through the
//! kd-tree.
//!
//! A `(2r+1) x (2r+1)` patch cannot be halved evenly, so each 1D Walsh
//! function is built by recursively splitting its support into a first half
//! of `floor(len/2)` and a second half of `ceil(len/2)` samples. The 2D
//! bases are separable products taken in zigzag sequency order. Non-DC
//! projections are taken on the mean-removed patch so that flat patches
//! only excite the DC components.

use rayon::prelude::*;

use crate::error::{FlowError, Result};
use crate::imageio::LabImage;

/// Number of 2D bases kept per channel.
pub const WHT_BASES: usize = 9;
/// Signature length: 9 bases for each of the three Lab channels.
pub const WHT_DIM: usize = 3 * WHT_BASES;

/// `(horizontal, vertical)` sequency of each kept basis, DC first.
pub const ZIGZAG: [(usize, usize); WHT_BASES] = [
    (0, 0),
    (1, 0),
    (0, 1),
    (0, 2),
    (1, 1),
    (2, 0),
    (3, 0),
    (2, 1),
    (1, 2),
];

const MAX_SEQ: usize = 4;

/// 27-component patch signature, channel-major (L bases 0-8, a, b).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhtVector(pub [f32; WHT_DIM]);

impl WhtVector {
    #[inline]
    pub fn get(&self, i: usize) -> f32 {
        self.0[i]
    }
}

/// 1D Walsh function of sequency `k` on `len` samples, values in {-1, +1}.
pub fn walsh_1d(k: usize, len: usize) -> Vec<f32> {
    if len == 0 {
        return Vec::new();
    }
    if k == 0 {
        return vec![1.0; len];
    }
    let j = k / 2;
    let q = k % 2;
    let first = len / 2;
    let sign = if (j + q).is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut out = walsh_1d(j, first);
    out.extend(walsh_1d(j, len - first).into_iter().map(|v| v * sign));
    out
}

struct Kernels {
    radius: usize,
    w: [Vec<f32>; MAX_SEQ],
    sums: [f32; MAX_SEQ],
}

impl Kernels {
    fn new(radius: usize) -> Self {
        let len = 2 * radius + 1;
        let w: [Vec<f32>; MAX_SEQ] = std::array::from_fn(|k| walsh_1d(k, len));
        let sums = std::array::from_fn(|k| w[k].iter().sum());
        Kernels { radius, w, sums }
    }

    fn area(&self) -> f32 {
        let len = (2 * self.radius + 1) as f32;
        len * len
    }
}

fn check_radius(r: usize) -> Result<()> {
    if r < 1 {
        return Err(FlowError::param("WHT patch radius must be >= 1"));
    }
    Ok(())
}

/// Turn raw basis projections of one channel into signature components.
#[inline]
fn finish(raw: &[f32; WHT_BASES], k: &Kernels, out: &mut [f32]) {
    let mean = raw[0] / k.area();
    out[0] = raw[0];
    for b in 1..WHT_BASES {
        let (u, v) = ZIGZAG[b];
        out[b] = raw[b] - mean * k.sums[u] * k.sums[v];
    }
}

/// Signature of the patch centered at `(x, y)`, border replicated.
pub fn wht_signature(img: &LabImage, x: usize, y: usize, r: usize) -> Result<WhtVector> {
    check_radius(r)?;
    Ok(signature_with(img, x, y, &Kernels::new(r)))
}

fn signature_with(img: &LabImage, x: usize, y: usize, k: &Kernels) -> WhtVector {
    let r = k.radius as isize;
    let len = 2 * k.radius + 1;
    let mut out = [0.0f32; WHT_DIM];
    let mut rows = vec![[0.0f32; MAX_SEQ]; len];
    for c in 0..3 {
        let planes = img.planes();
        for (iy, row) in rows.iter_mut().enumerate() {
            let yy = y as isize + iy as isize - r;
            *row = [0.0; MAX_SEQ];
            for ix in 0..len {
                let v = planes.get_clamped(c, x as isize + ix as isize - r, yy);
                for (u, acc) in row.iter_mut().enumerate() {
                    *acc += k.w[u][ix] * v;
                }
            }
        }
        let mut raw = [0.0f32; WHT_BASES];
        for (b, &(u, v)) in ZIGZAG.iter().enumerate() {
            raw[b] = rows.iter().zip(&k.w[v]).map(|(row, wv)| row[u] * wv).sum();
        }
        finish(&raw, k, &mut out[c * WHT_BASES..(c + 1) * WHT_BASES]);
    }
    WhtVector(out)
}

/// Signatures for every pixel in row-major order, via separable passes.
pub fn wht_signatures(img: &LabImage, r: usize) -> Result<Vec<WhtVector>> {
    check_radius(r)?;
    let k = Kernels::new(r);
    let (w, h) = (img.width(), img.height());
    let ri = r as isize;
    let len = 2 * r + 1;

    // Horizontal projections per channel: [c][y*w + x][u].
    let horiz: Vec<Vec<[f32; MAX_SEQ]>> = (0..3)
        .map(|c| {
            let plane = img.plane(c);
            let mut hp = vec![[0.0f32; MAX_SEQ]; w * h];
            hp.par_chunks_mut(w).enumerate().for_each(|(y, out_row)| {
                let row = &plane[y * w..(y + 1) * w];
                for (x, acc) in out_row.iter_mut().enumerate() {
                    for ix in 0..len {
                        let xx = (x as isize + ix as isize - ri).clamp(0, w as isize - 1) as usize;
                        let v = row[xx];
                        for u in 0..MAX_SEQ {
                            acc[u] += k.w[u][ix] * v;
                        }
                    }
                }
            });
            hp
        })
        .collect();

    let mut sigs = vec![WhtVector([0.0; WHT_DIM]); w * h];
    sigs.par_chunks_mut(w).enumerate().for_each(|(y, out_row)| {
        for (x, sig) in out_row.iter_mut().enumerate() {
            for (c, hp) in horiz.iter().enumerate() {
                let mut raw = [0.0f32; WHT_BASES];
                for iy in 0..len {
                    let yy = (y as isize + iy as isize - ri).clamp(0, h as isize - 1) as usize;
                    let hv = &hp[yy * w + x];
                    for (b, &(u, v)) in ZIGZAG.iter().enumerate() {
                        raw[b] += hv[u] * k.w[v][iy];
                    }
                }
                finish(&raw, &k, &mut sig.0[c * WHT_BASES..(c + 1) * WHT_BASES]);
            }
        }
    });
    Ok(sigs)
}

/// Signatures for the given pixel positions only.
pub fn wht_signatures_at(img: &LabImage, positions: &[(usize, usize)], r: usize) -> Result<Vec<WhtVector>> {
    check_radius(r)?;
    let k = Kernels::new(r);
    Ok(positions
        .par_iter()
        .map(|&(x, y)| signature_with(img, x, y, &k))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walsh_functions_for_nine_samples() {
        let p = 1.0;
        let m = -1.0;
        assert_eq!(walsh_1d(0, 9), vec![p; 9]);
        assert_eq!(walsh_1d(1, 9), vec![p, p, p, p, m, m, m, m, m]);
        assert_eq!(walsh_1d(2, 9), vec![p, p, m, m, m, m, p, p, p]);
        assert_eq!(walsh_1d(3, 9), vec![p, p, m, m, p, p, m, m, m]);
    }

    #[test]
    fn walsh_power_of_two_matches_sequency_order() {
        // Sign changes equal the sequency index on power-of-two supports.
        for k in 0..8 {
            let w = walsh_1d(k, 8);
            let changes = w.windows(2).filter(|p| p[0] != p[1]).count();
            assert_eq!(changes, k);
        }
    }

    #[test]
    fn constant_patch_only_dc() {
        let img = LabImage::from_fn(12, 12, |_, _| [40.0, -5.0, 12.0]);
        let s = wht_signature(&img, 6, 6, 4).unwrap();
        for c in 0..3 {
            assert!(s.get(c * WHT_BASES).abs() > 1.0);
            for b in 1..WHT_BASES {
                assert!(s.get(c * WHT_BASES + b).abs() < 1e-3, "c{c} b{b} = {}", s.get(c * WHT_BASES + b));
            }
        }
        assert!((s.get(0) - 81.0 * 40.0).abs() < 1e-2);
    }

    #[test]
    fn separable_matches_direct() {
        let img = LabImage::from_fn(17, 13, |x, y| {
            let v = ((x * 7 + y * 13) % 11) as f32;
            [v * 3.0, (x as f32).sin() * 10.0, (y * x) as f32 * 0.1]
        });
        for r in [1, 2, 4] {
            let all = wht_signatures(&img, r).unwrap();
            for y in 0..13 {
                for x in 0..17 {
                    let d = wht_signature(&img, x, y, r).unwrap();
                    for i in 0..WHT_DIM {
                        let a = all[y * 17 + x].get(i);
                        assert!((a - d.get(i)).abs() <= 1e-3 * (1.0 + d.get(i).abs()), "r{r} ({x},{y}) i{i}");
                    }
                }
            }
        }
        assert!(wht_signatures(&img, 0).is_err());
    }
}
