//! Patch matching costs on stride-subsampled patches.
//!
//! A subsampled patch of radius `r` and stride `n` has `(2r+1)^2` members at
//! offsets `(i*n, j*n)` for `i, j` in `-r..=r`. Members are read from the
//! scale-space level for the same stride. The first image is always
//! addressed at integer positions, the second at subpixel positions through
//! bilinear interpolation with replicated borders.

use std::collections::BTreeMap;

use crate::error::{FlowError, Result};
use crate::imageio::{lerp, FeatureMap, LabImage, Planar, ScaleSpace};

/// Cost of matching a pixel of the first image to a subpixel position in
/// the second image, at one fixed scale.
pub trait PatchCost: Sync {
    fn cost(&self, x1: usize, y1: usize, x2: f32, y2: f32) -> f32;
    fn radius(&self) -> usize;
    fn stride(&self) -> usize;
}

/// Source of per-scale matching costs.
pub trait DataTerm: Sync {
    /// Cost at sub-scale `n_star` with patch radius `r`. `lattice` is the
    /// stride of the pixels that will be queried in the first image, which
    /// implementations may use to precompute per-pixel state.
    fn at_scale(&self, n_star: usize, r: usize, lattice: Option<usize>) -> Result<Box<dyn PatchCost + '_>>;

    /// `(width, height)` of the first and second image, which must agree.
    fn dims(&self) -> (usize, usize);
}

/// Non-center member offsets in row-major order.
pub fn member_offsets(r: usize, stride: usize) -> Vec<(isize, isize)> {
    let r = r as isize;
    let s = stride as isize;
    let mut out = Vec::with_capacity(((2 * r + 1) * (2 * r + 1) - 1) as usize);
    for j in -r..=r {
        for i in -r..=r {
            if i != 0 || j != 0 {
                out.push((i * s, j * s));
            }
        }
    }
    out
}

/// Largest possible census cost for radius `r` over three channels.
pub fn census_max_cost(r: usize) -> f32 {
    let side = 2 * r + 1;
    (3 * (side * side - 1)) as f32
}

/// Bilinear reader for one plane at a fixed subpixel phase.
struct Phase {
    bx: isize,
    by: isize,
    fx: f32,
    fy: f32,
    inside: bool,
}

impl Phase {
    #[inline]
    fn new(x: f32, y: f32, reach: isize, w: usize, h: usize) -> Self {
        let bxf = x.floor();
        let byf = y.floor();
        let bx = bxf as isize;
        let by = byf as isize;
        let inside = bx - reach >= 0
            && by - reach >= 0
            && bx + reach + 1 < w as isize
            && by + reach + 1 < h as isize;
        Phase {
            bx,
            by,
            fx: x - bxf,
            fy: y - byf,
            inside,
        }
    }

    #[inline(always)]
    fn sample(&self, plane: &[f32], w: usize, h: usize, dx: isize, dy: isize) -> f32 {
        let x = self.bx + dx;
        let y = self.by + dy;
        let (x0, x1, y0, y1) = if self.inside {
            (x as usize, x as usize + 1, y as usize, y as usize + 1)
        } else {
            let cx = |v: isize| v.clamp(0, w as isize - 1) as usize;
            let cy = |v: isize| v.clamp(0, h as isize - 1) as usize;
            (cx(x), cx(x + 1), cy(y), cy(y + 1))
        };
        let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], self.fx);
        let bot = lerp(plane[y1 * w + x0], plane[y1 * w + x1], self.fx);
        lerp(top, bot, self.fy)
    }
}

/// Census transform cost for one (radius, stride) pair.
pub struct CensusScale<'a> {
    img1: &'a LabImage,
    img2: &'a LabImage,
    r: usize,
    stride: usize,
    offsets: Vec<(isize, isize)>,
    words: usize,
    lattice: usize,
    lattice_w: usize,
    bits1: Vec<u64>,
}

impl<'a> CensusScale<'a> {
    pub fn new(img1: &'a LabImage, img2: &'a LabImage, r: usize, stride: usize, lattice: Option<usize>) -> Result<Self> {
        if r < 1 {
            return Err(FlowError::param("census radius must be >= 1"));
        }
        if stride < 1 {
            return Err(FlowError::param("census stride must be >= 1"));
        }
        let offsets = member_offsets(r, stride);
        let words = offsets.len().div_ceil(64);
        let mut s = CensusScale {
            img1,
            img2,
            r,
            stride,
            offsets,
            words,
            lattice: 0,
            lattice_w: 0,
            bits1: Vec::new(),
        };
        if let Some(lat) = lattice.filter(|&l| l >= 1) {
            s.precompute(lat);
        }
        Ok(s)
    }

    fn precompute(&mut self, lattice: usize) {
        use rayon::prelude::*;
        let (w, h) = (self.img1.width(), self.img1.height());
        let lw = w.div_ceil(lattice);
        let lh = h.div_ceil(lattice);
        let per = 3 * self.words;
        let mut bits = vec![0u64; lw * lh * per];
        bits.par_chunks_mut(lw * per).enumerate().for_each(|(ly, row)| {
            for lx in 0..lw {
                self.bits_at(lx * lattice, ly * lattice, &mut row[lx * per..(lx + 1) * per]);
            }
        });
        self.lattice = lattice;
        self.lattice_w = lw;
        self.bits1 = bits;
    }

    fn bits_at(&self, x: usize, y: usize, out: &mut [u64]) {
        let (w, h) = (self.img1.width(), self.img1.height());
        out.fill(0);
        for c in 0..3 {
            let p = self.img1.planes();
            let center = p.get(c, x, y);
            let dst = &mut out[c * self.words..(c + 1) * self.words];
            for (k, &(dx, dy)) in self.offsets.iter().enumerate() {
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                if p.get(c, xx, yy) > center {
                    dst[k / 64] |= 1 << (k % 64);
                }
            }
        }
    }

    /// Costs of one first-image pixel against many targets, sharing its bits.
    pub fn costs_from(&self, x1: usize, y1: usize, targets: &[(f32, f32)]) -> Vec<f32> {
        let mut bits = vec![0u64; 3 * self.words];
        self.bits_at(x1, y1, &mut bits);
        targets.iter().map(|&(x2, y2)| self.cost_with_bits(&bits, x2, y2)).collect()
    }

    fn cost_with_bits(&self, bits1: &[u64], x2: f32, y2: f32) -> f32 {
        let (w, h) = (self.img2.width(), self.img2.height());
        let reach = (self.r * self.stride) as isize;
        let ph = Phase::new(x2, y2, reach, w, h);
        let mut mismatches = 0u32;
        for c in 0..3 {
            let plane = self.img2.plane(c);
            let center = ph.sample(plane, w, h, 0, 0);
            let b = &bits1[c * self.words..(c + 1) * self.words];
            for (k, &(dx, dy)) in self.offsets.iter().enumerate() {
                let bit2 = ph.sample(plane, w, h, dx, dy) > center;
                let bit1 = (b[k / 64] >> (k % 64)) & 1 == 1;
                mismatches += (bit1 != bit2) as u32;
            }
        }
        mismatches as f32
    }
}

impl PatchCost for CensusScale<'_> {
    fn cost(&self, x1: usize, y1: usize, x2: f32, y2: f32) -> f32 {
        let per = 3 * self.words;
        if self.lattice > 0 && x1.is_multiple_of(self.lattice) && y1.is_multiple_of(self.lattice) {
            let i = (y1 / self.lattice) * self.lattice_w + x1 / self.lattice;
            return self.cost_with_bits(&self.bits1[i * per..(i + 1) * per], x2, y2);
        }
        let mut bits = vec![0u64; per];
        self.bits_at(x1, y1, &mut bits);
        self.cost_with_bits(&bits, x2, y2)
    }

    fn radius(&self) -> usize {
        self.r
    }

    fn stride(&self) -> usize {
        self.stride
    }
}

/// Census data term over a pair of scale spaces.
pub struct CensusTerm<'a> {
    pub ss1: &'a ScaleSpace,
    pub ss2: &'a ScaleSpace,
}

impl<'a> CensusTerm<'a> {
    pub fn new(ss1: &'a ScaleSpace, ss2: &'a ScaleSpace) -> Result<Self> {
        let a = (ss1.width(), ss1.height());
        let b = (ss2.width(), ss2.height());
        if a != b {
            return Err(FlowError::DimensionMismatch { expected: a, actual: b });
        }
        Ok(CensusTerm { ss1, ss2 })
    }
}

impl DataTerm for CensusTerm<'_> {
    fn at_scale(&self, n_star: usize, r: usize, lattice: Option<usize>) -> Result<Box<dyn PatchCost + '_>> {
        let l1 = self.ss1.level(n_star)?;
        let l2 = self.ss2.level(n_star)?;
        Ok(Box::new(CensusScale::new(l1, l2, r, n_star, lattice)?))
    }

    fn dims(&self) -> (usize, usize) {
        (self.ss1.width(), self.ss1.height())
    }
}

/// Census cost between the subsampled patch at integer `p1` and the one at
/// subpixel `p2`, computed directly (no precomputed bit patterns).
pub fn census_cost(
    ss1: &ScaleSpace,
    ss2: &ScaleSpace,
    p1: (usize, usize),
    p2: (f32, f32),
    r: usize,
    n: usize,
) -> Result<f32> {
    let l1 = ss1.level(n)?;
    let l2 = ss2.level(n)?;
    if r < 1 {
        return Err(FlowError::param("census radius must be >= 1"));
    }
    if !p2.0.is_finite() || !p2.1.is_finite() {
        return Err(FlowError::NonFinitePosition(p2.0, p2.1));
    }
    // All members share the subpixel phase of the center.
    let (bx, by) = (p2.0.floor(), p2.1.floor());
    let (fx, fy) = (p2.0 - bx, p2.1 - by);
    let (bx, by) = (bx as isize, by as isize);
    let mut total = 0u32;
    for c in 0..3 {
        let p = l2.planes();
        let at = |dx: isize, dy: isize| {
            let (x, y) = (bx + dx, by + dy);
            let top = lerp(p.get_clamped(c, x, y), p.get_clamped(c, x + 1, y), fx);
            let bot = lerp(p.get_clamped(c, x, y + 1), p.get_clamped(c, x + 1, y + 1), fx);
            lerp(top, bot, fy)
        };
        let c1 = l1.get(c, p1.0, p1.1);
        let c2 = at(0, 0);
        for (dx, dy) in member_offsets(r, n) {
            let s1 = l1.planes().get_clamped(c, p1.0 as isize + dx, p1.1 as isize + dy);
            total += ((s1 > c1) != (at(dx, dy) > c2)) as u32;
        }
    }
    Ok(total as f32)
}

/// Euclidean distance between the feature at `p1` in `fm1` and the
/// bilinearly interpolated feature at `p2` in `fm2`.
pub fn feature_cost(fm1: &FeatureMap, fm2: &FeatureMap, p1: (usize, usize), p2: (f32, f32)) -> Result<f32> {
    if fm1.dim() != fm2.dim() {
        return Err(FlowError::param(format!(
            "feature dimensions differ: {} vs {}",
            fm1.dim(),
            fm2.dim()
        )));
    }
    if !p2.0.is_finite() || !p2.1.is_finite() {
        return Err(FlowError::NonFinitePosition(p2.0, p2.1));
    }
    let x1 = p1.0.min(fm1.width() - 1);
    let y1 = p1.1.min(fm1.height() - 1);
    Ok(feature_distance(fm1.planes(), fm2.planes(), x1, y1, p2.0, p2.1))
}

#[inline]
fn feature_distance(a: &Planar, b: &Planar, x1: usize, y1: usize, x2: f32, y2: f32) -> f32 {
    let mut sum = 0.0f32;
    for c in 0..a.channels() {
        let d = a.get(c, x1, y1) - b.sample_clamped(c, x2, y2);
        sum += d * d;
    }
    sum.sqrt()
}

/// Feature-map cost at one scale: the sum of per-member L2 distances over
/// the subsampled patch (radius 0 compares single pixels).
pub struct FeatureScale<'a> {
    fm1: &'a FeatureMap,
    fm2: &'a FeatureMap,
    r: usize,
    stride: usize,
}

impl PatchCost for FeatureScale<'_> {
    fn cost(&self, x1: usize, y1: usize, x2: f32, y2: f32) -> f32 {
        let (w, h) = (self.fm1.width() as isize, self.fm1.height() as isize);
        let r = self.r as isize;
        let s = self.stride as isize;
        let mut total = 0.0;
        for j in -r..=r {
            for i in -r..=r {
                let xx = (x1 as isize + i * s).clamp(0, w - 1) as usize;
                let yy = (y1 as isize + j * s).clamp(0, h - 1) as usize;
                total += feature_distance(
                    self.fm1.planes(),
                    self.fm2.planes(),
                    xx,
                    yy,
                    x2 + (i * s) as f32,
                    y2 + (j * s) as f32,
                );
            }
        }
        total
    }

    fn radius(&self) -> usize {
        self.r
    }

    fn stride(&self) -> usize {
        self.stride
    }
}

/// Data term over precomputed feature maps, one pair per sub-scale.
pub struct FeatureTerm {
    levels: BTreeMap<usize, (FeatureMap, FeatureMap)>,
}

impl FeatureTerm {
    pub fn new() -> Self {
        FeatureTerm {
            levels: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, n_star: usize, fm1: FeatureMap, fm2: FeatureMap) -> Result<()> {
        if fm1.dim() != fm2.dim() {
            return Err(FlowError::param("feature dimensions differ"));
        }
        let a = (fm1.width(), fm1.height());
        let b = (fm2.width(), fm2.height());
        if a != b {
            return Err(FlowError::DimensionMismatch { expected: a, actual: b });
        }
        if let Some((f, _)) = self.levels.values().next() {
            let c = (f.width(), f.height());
            if c != a {
                return Err(FlowError::DimensionMismatch { expected: c, actual: a });
            }
        }
        self.levels.insert(n_star, (fm1, fm2));
        Ok(())
    }
}

impl Default for FeatureTerm {
    fn default() -> Self {
        Self::new()
    }
}

impl DataTerm for FeatureTerm {
    fn at_scale(&self, n_star: usize, r: usize, _lattice: Option<usize>) -> Result<Box<dyn PatchCost + '_>> {
        let (fm1, fm2) = self.levels.get(&n_star).ok_or(FlowError::MissingScale(n_star))?;
        Ok(Box::new(FeatureScale {
            fm1,
            fm2,
            r,
            stride: n_star,
        }))
    }

    fn dims(&self) -> (usize, usize) {
        self.levels
            .values()
            .next()
            .map(|(f, _)| (f.width(), f.height()))
            .unwrap_or((0, 0))
    }
}
