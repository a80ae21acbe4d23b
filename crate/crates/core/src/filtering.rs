//! Outlier removal on raw correspondence fields: forward/backward
//! consistency, a small-region filter and block sparsification.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::matcher::FlowField;

/// How the backward field is read at a subpixel target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lookup {
    /// Bilinear over the valid lattice nodes around the target, weights
    /// renormalised over the valid ones.
    #[default]
    Bilinear,
    /// Nearest lattice node only.
    Nearest,
}

impl FromStr for Lookup {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bilinear" => Ok(Lookup::Bilinear),
            "nearest" => Ok(Lookup::Nearest),
            other => Err(FlowError::param(format!("unknown lookup {other:?}"))),
        }
    }
}

/// Filter tunables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Consistency threshold in pixels.
    pub eps: f32,
    /// Regions below this many pixels may be removed.
    pub s: usize,
    /// Minimum survivors per block for sparsification.
    pub e: usize,
    /// Sparsification block size.
    pub q: usize,
    /// Neighbour flow difference that still connects a region.
    pub region_threshold: f32,
    pub lookup: Lookup,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            eps: 1.5,
            s: 100,
            e: 3,
            q: 3,
            region_threshold: 3.0,
            lookup: Lookup::Bilinear,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(FlowError::param("eps must be > 0"));
        }
        if self.q < 1 || self.e < 1 {
            return Err(FlowError::param("q and e must be >= 1"));
        }
        if !(self.region_threshold > 0.0) {
            return Err(FlowError::param("region threshold must be > 0"));
        }
        Ok(())
    }
}

/// Per-pixel outcome of the consistency check.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyResult {
    pub width: usize,
    pub height: usize,
    pub valid: Vec<bool>,
    /// Round-trip residual against the first backward field; infinite where
    /// it could not be computed.
    pub err1: Vec<f32>,
    /// Same for the second backward field; zero everywhere for a one-way check.
    pub err2: Vec<f32>,
}

impl ConsistencyResult {
    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Backward flow at subpixel `(x, y)`. Positions outside the pixel area of
/// the image have no backward flow.
pub fn lookup_flow(fb: &FlowField, x: f32, y: f32, mode: Lookup) -> Option<[f32; 2]> {
    let inside = |v: f32, len: usize| v >= -0.5 && v <= len as f32 - 0.5;
    if !inside(x, fb.width()) || !inside(y, fb.height()) {
        return None;
    }
    let l = fb.lattice();
    let lw = (fb.width() - 1) / l;
    let lh = (fb.height() - 1) / l;
    let gx = (x / l as f32).clamp(0.0, lw as f32);
    let gy = (y / l as f32).clamp(0.0, lh as f32);
    match mode {
        Lookup::Nearest => fb.get(gx.round() as usize * l, gy.round() as usize * l),
        Lookup::Bilinear => {
            let x0 = gx.floor() as usize;
            let y0 = gy.floor() as usize;
            let x1 = (x0 + 1).min(lw);
            let y1 = (y0 + 1).min(lh);
            let fx = gx - x0 as f32;
            let fy = gy - y0 as f32;
            let nodes = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x1, y0, fx * (1.0 - fy)),
                (x0, y1, (1.0 - fx) * fy),
                (x1, y1, fx * fy),
            ];
            let mut acc = [0.0f32; 2];
            let mut wsum = 0.0f32;
            let mut any = false;
            for (nx, ny, w) in nodes {
                if let Some(f) = fb.get(nx * l, ny * l) {
                    any = true;
                    acc[0] += w * f[0];
                    acc[1] += w * f[1];
                    wsum += w;
                }
            }
            if !any {
                None
            } else if wsum <= 0.0 {
                // Only zero-weight nodes are valid: fall back to their mean.
                let valid: Vec<[f32; 2]> = nodes.iter().filter_map(|&(nx, ny, _)| fb.get(nx * l, ny * l)).collect();
                let n = valid.len() as f32;
                Some([valid.iter().map(|f| f[0]).sum::<f32>() / n, valid.iter().map(|f| f[1]).sum::<f32>() / n])
            } else {
                Some([acc[0] / wsum, acc[1] / wsum])
            }
        }
    }
}

fn residual(f: [f32; 2], x: usize, y: usize, fb: &FlowField, mode: Lookup) -> f32 {
    match lookup_flow(fb, x as f32 + f[0], y as f32 + f[1], mode) {
        Some(b) => ((f[0] + b[0]).powi(2) + (f[1] + b[1]).powi(2)).sqrt(),
        None => f32::INFINITY,
    }
}

/// Keep a pixel only if the round trip through every backward field returns
/// within `eps` of the start. Pass `None` for `fb2` to check one way.
pub fn consistency_check(
    f: &FlowField,
    fb1: &FlowField,
    fb2: Option<&FlowField>,
    eps: f32,
    mode: Lookup,
) -> Result<ConsistencyResult> {
    for other in std::iter::once(fb1).chain(fb2) {
        if other.dims() != f.dims() {
            return Err(FlowError::DimensionMismatch {
                expected: f.dims(),
                actual: other.dims(),
            });
        }
    }
    let (w, h) = f.dims();
    let per_pixel: Vec<(f32, f32)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            match f.get(x, y) {
                None => (f32::INFINITY, f32::INFINITY),
                Some(fl) => {
                    let e1 = residual(fl, x, y, fb1, mode);
                    let e2 = fb2.map_or(0.0, |fb| residual(fl, x, y, fb, mode));
                    (e1, e2)
                }
            }
        })
        .collect();
    let valid = per_pixel.iter().map(|&(a, b)| a < eps && b < eps).collect();
    let (err1, err2) = per_pixel.into_iter().unzip();
    Ok(ConsistencyResult {
        width: w,
        height: h,
        valid,
        err1,
        err2,
    })
}

/// Connected regions of surviving pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRegionLabels {
    /// Region id per pixel, `None` where the pixel is not in the mask.
    pub label: Vec<Option<u32>>,
    /// Pixel count per region id.
    pub sizes: Vec<usize>,
}

fn find(parent: &mut [u32], mut i: u32) -> u32 {
    while parent[i as usize] != i {
        parent[i as usize] = parent[parent[i as usize] as usize];
        i = parent[i as usize];
    }
    i
}

fn flow_close(a: [f32; 2], b: [f32; 2], thr: f32) -> bool {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() < thr
}

/// Label 4-connected regions (at the field's lattice stride) of pixels in
/// `mask` whose neighbouring flows differ by less than `thr`.
pub fn label_regions(f: &FlowField, mask: &[bool], thr: f32) -> FlowRegionLabels {
    let (w, h) = f.dims();
    assert_eq!(mask.len(), w * h);
    let l = f.lattice();
    let mut parent: Vec<u32> = (0..(w * h) as u32).collect();
    for y in (0..h).step_by(l) {
        for x in (0..w).step_by(l) {
            let i = y * w + x;
            if !mask[i] {
                continue;
            }
            let fi = f.flow_at(x, y);
            for (nx, ny) in [(x + l, y), (x, y + l)] {
                if nx >= w || ny >= h {
                    continue;
                }
                let j = ny * w + nx;
                if mask[j] && flow_close(fi, f.flow_at(nx, ny), thr) {
                    let (a, b) = (find(&mut parent, i as u32), find(&mut parent, j as u32));
                    if a != b {
                        parent[a.max(b) as usize] = a.min(b);
                    }
                }
            }
        }
    }
    let mut ids = vec![u32::MAX; w * h];
    let mut label = vec![None; w * h];
    let mut sizes = Vec::new();
    for i in 0..w * h {
        if !mask[i] {
            continue;
        }
        let root = find(&mut parent, i as u32) as usize;
        if ids[root] == u32::MAX {
            ids[root] = sizes.len() as u32;
            sizes.push(0);
        }
        let id = ids[root];
        sizes[id as usize] += 1;
        label[i] = Some(id);
    }
    FlowRegionLabels { label, sizes }
}

/// Remove small regions that a consistency-removed pixel could have joined.
/// A region of fewer than `s` pixels is dropped when one of its pixels is
/// 4-adjacent to a removed pixel whose flow differs by less than `thr`.
/// Sizes count covered pixels, i.e. lattice points times `lattice^2`.
pub fn region_filter(f: &FlowField, cr: &ConsistencyResult, s: usize, thr: f32) -> Result<Vec<bool>> {
    if (cr.width, cr.height) != f.dims() {
        return Err(FlowError::DimensionMismatch {
            expected: f.dims(),
            actual: (cr.width, cr.height),
        });
    }
    let (w, h) = f.dims();
    let l = f.lattice();
    let labels = label_regions(f, &cr.valid, thr);
    let removed = |x: usize, y: usize| f.is_valid(x, y) && !cr.valid[y * w + x];
    let mut attachable = vec![false; labels.sizes.len()];
    for y in (0..h).step_by(l) {
        for x in (0..w).step_by(l) {
            let Some(id) = labels.label[y * w + x] else { continue };
            if attachable[id as usize] {
                continue;
            }
            let fi = f.flow_at(x, y);
            let neighbours = [
                (x.checked_sub(l), Some(y)),
                (Some(x + l).filter(|&v| v < w), Some(y)),
                (Some(x), y.checked_sub(l)),
                (Some(x), Some(y + l).filter(|&v| v < h)),
            ];
            for (nx, ny) in neighbours {
                if let (Some(nx), Some(ny)) = (nx, ny) {
                    if removed(nx, ny) && flow_close(fi, f.flow_at(nx, ny), thr) {
                        attachable[id as usize] = true;
                        break;
                    }
                }
            }
        }
    }
    let area = l * l;
    Ok(cr
        .valid
        .iter()
        .zip(&labels.label)
        .map(|(&v, lab)| match lab {
            Some(id) => v && !(labels.sizes[*id as usize] * area < s && attachable[*id as usize]),
            None => false,
        })
        .collect())
}

/// One retained correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub x: f32,
    pub y: f32,
    pub flow: [f32; 2],
    /// Sum of both consistency residuals.
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseMatches {
    pub matches: Vec<Match>,
}

impl SparseMatches {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

/// Keep at most one match per `q x q` block: the survivor with the smallest
/// residual sum, provided the block has at least `e` survivors.
pub fn sparsify(f: &FlowField, cr: &ConsistencyResult, mask: &[bool], q: usize, e: usize) -> Result<SparseMatches> {
    if q < 1 || e < 1 {
        return Err(FlowError::param("q and e must be >= 1"));
    }
    let (w, h) = f.dims();
    if (cr.width, cr.height) != (w, h) || mask.len() != w * h {
        return Err(FlowError::DimensionMismatch {
            expected: (w, h),
            actual: (cr.width, cr.height),
        });
    }
    let mut out = Vec::new();
    for by in (0..h).step_by(q) {
        for bx in (0..w).step_by(q) {
            let mut count = 0;
            let mut best: Option<(usize, usize, f32)> = None;
            for y in by..(by + q).min(h) {
                for x in bx..(bx + q).min(w) {
                    let i = y * w + x;
                    if !mask[i] || !f.is_valid(x, y) {
                        continue;
                    }
                    count += 1;
                    let score = cr.err1[i] + cr.err2[i];
                    let better = match best {
                        None => true,
                        Some((bx0, by0, s)) => score < s || (score == s && i < by0 * w + bx0),
                    };
                    if better {
                        best = Some((x, y, score));
                    }
                }
            }
            if count >= e {
                if let Some((x, y, score)) = best {
                    out.push(Match {
                        x: x as f32,
                        y: y as f32,
                        flow: f.flow_at(x, y),
                        score,
                    });
                }
            }
        }
    }
    Ok(SparseMatches { matches: out })
}

/// Everything the filter stage produces.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub consistency: ConsistencyResult,
    pub mask: Vec<bool>,
    pub matches: SparseMatches,
}

/// Consistency check, region filter and sparsification in sequence.
pub fn filter_flow(f: &FlowField, fb1: &FlowField, fb2: Option<&FlowField>, p: &FilterParams) -> Result<FilterOutput> {
    p.validate()?;
    let consistency = consistency_check(f, fb1, fb2, p.eps, p.lookup)?;
    let mask = region_filter(f, &consistency, p.s, p.region_threshold)?;
    let matches = sparsify(f, &consistency, &mask, p.q, p.e)?;
    Ok(FilterOutput {
        consistency,
        mask,
        matches,
    })
}

/// Write matches as `x1 y1 x2 y2` lines.
pub fn write_matches(path: impl AsRef<Path>, m: &SparseMatches) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| FlowError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for mt in &m.matches {
        writeln!(out, "{} {} {} {}", mt.x, mt.y, mt.x + mt.flow[0], mt.y + mt.flow[1]).map_err(|e| FlowError::io(path, e))?;
    }
    out.flush().map_err(|e| FlowError::io(path, e))
}

/// Read `x1 y1 x2 y2` lines. Blank lines and `#` comments are skipped.
pub fn read_matches(path: impl AsRef<Path>) -> Result<SparseMatches> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| FlowError::io(path, e))?;
    let mut matches = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FlowError::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f32> = line
            .split_whitespace()
            .map(|t| t.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| FlowError::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if vals.len() != 4 {
            return Err(FlowError::Format(format!(
                "{}:{}: expected 4 values, found {}",
                path.display(),
                n + 1,
                vals.len()
            )));
        }
        matches.push(Match {
            x: vals[0],
            y: vals[1],
            flow: [vals[2] - vals[0], vals[3] - vals[1]],
            score: 0.0,
        });
    }
    Ok(SparseMatches { matches })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(w: usize, h: usize, f: [f32; 2]) -> FlowField {
        FlowField::from_fn(w, h, |_, _| f)
    }

    #[test]
    fn exact_inverse_survives() {
        let f = constant(10, 8, [3.0, -2.0]);
        let b = constant(10, 8, [-3.0, 2.0]);
        let cr = consistency_check(&f, &b, Some(&b), 1.5, Lookup::Bilinear).unwrap();
        // Targets leaving the frame have nothing to check against.
        assert_eq!(cr.count_valid(), 7 * 6);
        for y in 0..8 {
            for x in 0..10 {
                let inside = x + 3 < 10 && y >= 2;
                let i = y * 10 + x;
                assert_eq!(cr.valid[i], inside);
                let want = if inside { 0.0 } else { f32::INFINITY };
                assert_eq!((cr.err1[i], cr.err2[i]), (want, want));
            }
        }
    }

    #[test]
    fn same_sign_removed() {
        let f = constant(10, 8, [4.0, 0.0]);
        let cr = consistency_check(&f, &f, Some(&f), 1.5, Lookup::Bilinear).unwrap();
        assert_eq!(cr.count_valid(), 0);
        for (i, &e) in cr.err1.iter().enumerate() {
            if i % 10 < 6 {
                assert!((e - 8.0).abs() < 1e-6);
            } else {
                assert!(e.is_infinite());
            }
        }
    }

    #[test]
    fn second_backward_field_matters() {
        let f = constant(6, 6, [1.0, 1.0]);
        let good = constant(6, 6, [-1.0, -1.0]);
        let bad = constant(6, 6, [5.0, 5.0]);
        assert_eq!(consistency_check(&f, &good, None, 1.5, Lookup::Bilinear).unwrap().count_valid(), 25);
        assert_eq!(consistency_check(&f, &good, Some(&bad), 1.5, Lookup::Bilinear).unwrap().count_valid(), 0);
        assert!(consistency_check(&f, &constant(5, 6, [0.0; 2]), None, 1.5, Lookup::Bilinear).is_err());
    }

    #[test]
    fn bilinear_lookup_skips_invalid_nodes() {
        let mut b = FlowField::new(2, 1);
        b.set(0, 0, [2.0, 0.0], 0.0);
        assert_eq!(lookup_flow(&b, 0.75, 0.0, Lookup::Bilinear), Some([2.0, 0.0]));
        b.set(1, 0, [4.0, 0.0], 0.0);
        assert_eq!(lookup_flow(&b, 0.25, 0.0, Lookup::Bilinear), Some([2.5, 0.0]));
        assert_eq!(lookup_flow(&b, 0.75, 0.0, Lookup::Nearest), Some([4.0, 0.0]));
        assert_eq!(lookup_flow(&FlowField::new(3, 3), 1.0, 1.0, Lookup::Bilinear), None);
        assert_eq!(lookup_flow(&b, -0.5, 0.0, Lookup::Bilinear), Some([2.0, 0.0]));
        assert_eq!(lookup_flow(&b, 1.6, 0.0, Lookup::Bilinear), None);
        assert_eq!(lookup_flow(&b, 0.0, -0.7, Lookup::Nearest), None);
    }

    #[test]
    fn epsilon_monotone() {
        let f = FlowField::from_fn(12, 12, |x, y| [(x % 5) as f32 * 0.4, (y % 3) as f32 * 0.3]);
        let b = constant(12, 12, [-0.5, -0.2]);
        let mut prev = 0;
        for eps in [0.1, 0.5, 1.0, 2.0, 4.0] {
            let c = consistency_check(&f, &b, None, eps, Lookup::Bilinear).unwrap();
            assert!(c.count_valid() >= prev);
            prev = c.count_valid();
        }
    }

    fn blob_scene(outlier_flow: [f32; 2]) -> (FlowField, ConsistencyResult) {
        // 20x20 field of flow (0,0); a 5-pixel plus-shaped blob with flow (10,0).
        let mut f = constant(20, 20, [0.0, 0.0]);
        let blob = [(10, 10), (9, 10), (11, 10), (10, 9), (10, 11)];
        for &(x, y) in &blob {
            f.set(x, y, [10.0, 0.0], 0.0);
        }
        let mut valid = vec![true; 400];
        // A removed outlier next to the blob.
        f.set(12, 10, outlier_flow, 0.0);
        valid[10 * 20 + 12] = false;
        let cr = ConsistencyResult {
            width: 20,
            height: 20,
            valid,
            err1: vec![0.0; 400],
            err2: vec![0.0; 400],
        };
        (f, cr)
    }

    #[test]
    fn region_filter_removes_attachable_blob() {
        let (f, cr) = blob_scene([10.5, 0.0]);
        let labels = label_regions(&f, &cr.valid, 3.0);
        assert_eq!(labels.sizes.len(), 2);
        let mask = region_filter(&f, &cr, 50, 3.0).unwrap();
        assert!(!mask[10 * 20 + 10]);
        assert!(mask[0]);
        assert_eq!(mask.iter().filter(|&&v| v).count(), 400 - 1 - 5);
    }

    #[test]
    fn region_filter_keeps_unattachable_blob() {
        let (f, cr) = blob_scene([0.0, 0.0]);
        let mask = region_filter(&f, &cr, 50, 3.0).unwrap();
        assert!(mask[10 * 20 + 10]);
        assert_eq!(mask.iter().filter(|&&v| v).count(), 399);
    }

    #[test]
    fn region_filter_no_removals_is_identity() {
        let f = FlowField::from_fn(15, 9, |x, _| [x as f32 * -0.5, 0.0]);
        let b = FlowField::from_fn(15, 9, |_, _| [0.0, 0.0]);
        let cr = consistency_check(&f, &b, None, 100.0, Lookup::Bilinear).unwrap();
        assert_eq!(label_regions(&f, &cr.valid, 3.0).sizes, vec![135]);
        assert_eq!(region_filter(&f, &cr, 100, 3.0).unwrap(), cr.valid);
    }

    #[test]
    fn sparsify_block_counts_and_minimum() {
        let f = constant(10, 7, [0.0, 0.0]);
        let mut cr = consistency_check(&f, &f, None, 1.5, Lookup::Bilinear).unwrap();
        for (i, e) in cr.err1.iter_mut().enumerate() {
            *e = ((i * 37) % 11) as f32;
        }
        let m = sparsify(&f, &cr, &cr.valid, 3, 1).unwrap();
        assert_eq!(m.len(), 4 * 3);
        for mt in &m.matches {
            let (bx, by) = ((mt.x as usize / 3) * 3, (mt.y as usize / 3) * 3);
            for y in by..(by + 3).min(7) {
                for x in bx..(bx + 3).min(10) {
                    assert!(mt.score <= cr.err1[y * 10 + x]);
                }
            }
        }
        // Only two survivors in the first block.
        let mut mask = cr.valid.clone();
        for y in 0..3 {
            for x in 0..3 {
                mask[y * 10 + x] = (x, y) == (0, 0) || (x, y) == (1, 1);
            }
        }
        // The 1x1 corner block is dropped as well.
        let m = sparsify(&f, &cr, &mask, 3, 3).unwrap();
        assert_eq!(m.len(), 10);
        assert!(m.matches.iter().all(|mt| mt.x >= 3.0 || mt.y >= 3.0));
    }

    #[test]
    fn match_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        let m = SparseMatches {
            matches: vec![
                Match {
                    x: 1.0,
                    y: 2.0,
                    flow: [0.5, -1.25],
                    score: 0.0,
                },
                Match {
                    x: 30.0,
                    y: 4.0,
                    flow: [-3.0, 7.0],
                    score: 0.0,
                },
            ],
        };
        write_matches(&p, &m).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "1 2 1.5 0.75\n30 4 27 11\n");
        assert_eq!(read_matches(&p).unwrap(), m);
        std::fs::write(&p, "1 2 3\n").unwrap();
        assert!(read_matches(&p).is_err());
    }
}
