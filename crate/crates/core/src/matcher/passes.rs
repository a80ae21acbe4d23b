use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::field::FlowField;
use crate::descriptors::{wht_signatures, wht_signatures_at, KdTree, PatchCost};
use crate::error::Result;
use crate::imageio::LabImage;

/// One of the four scan orders. Each pass pulls candidates from the two
/// lattice neighbours already visited in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PropagationDirection(u8);

impl PropagationDirection {
    /// Top-left to bottom-right, pulling from left and top.
    pub const DOWN_RIGHT: Self = PropagationDirection(0);
    /// Bottom-right to top-left, pulling from right and bottom.
    pub const UP_LEFT: Self = PropagationDirection(1);
    /// Top-right to bottom-left, pulling from right and top.
    pub const DOWN_LEFT: Self = PropagationDirection(2);
    /// Bottom-left to top-right, pulling from left and bottom.
    pub const UP_RIGHT: Self = PropagationDirection(3);

    /// Direction of the `i`-th propagation in a stage; cycles every 4.
    pub fn nth(i: usize) -> Self {
        PropagationDirection((i % 4) as u8)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    fn reversed_x(self) -> bool {
        matches!(self.0, 1 | 2)
    }

    fn reversed_y(self) -> bool {
        matches!(self.0, 1 | 3)
    }

    /// Neighbour offsets at lattice stride `n`, horizontal first.
    pub fn sources(self, n: usize) -> [(isize, isize); 2] {
        let n = n as isize;
        let sx = if self.reversed_x() { n } else { -n };
        let sy = if self.reversed_y() { n } else { -n };
        [(sx, 0), (0, sy)]
    }
}

/// Admissible region for matched positions in the second image: the image
/// extended by the patch reach on every side.
#[derive(Debug, Clone, Copy)]
pub struct SearchBounds {
    min: f32,
    max_x: f32,
    max_y: f32,
}

impl SearchBounds {
    pub fn new(width: usize, height: usize, reach: usize) -> Self {
        let reach = reach as f32;
        SearchBounds {
            min: -reach,
            max_x: (width - 1) as f32 + reach,
            max_y: (height - 1) as f32 + reach,
        }
    }

    #[inline]
    pub fn contains(&self, x: f32, y: f32) -> bool {
        x >= self.min && y >= self.min && x <= self.max_x && y <= self.max_y
    }
}

fn lattice_positions(width: usize, height: usize, n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(width.div_ceil(n) * height.div_ceil(n));
    for y in (0..height).step_by(n) {
        for x in (0..width).step_by(n) {
            out.push((x, y));
        }
    }
    out
}

/// kd-tree over WHT signatures of the second image, sampled every
/// `subsample` pixels in both directions (top-left of each block).
pub fn build_tree(img2: &LabImage, r: usize, leaf_size: usize, subsample: usize) -> Result<KdTree> {
    let (w, h) = (img2.width(), img2.height());
    let entries: Vec<((u32, u32), crate::descriptors::WhtVector)> = if subsample <= 1 {
        let sigs = wht_signatures(img2, r)?;
        sigs.into_iter()
            .enumerate()
            .map(|(i, s)| (((i % w) as u32, (i / w) as u32), s))
            .collect()
    } else {
        let pos = lattice_positions(w, h, subsample);
        let sigs = wht_signatures_at(img2, &pos, r)?;
        pos.into_iter().map(|(x, y)| (x as u32, y as u32)).zip(sigs).collect()
    };
    Ok(crate::descriptors::build_kdtree(&entries, leaf_size))
}

/// Initial field on lattice `n`: every lattice pixel of the first image is
/// matched to the cheapest entry of its kd-tree leaf.
pub fn seed_from_kdtree(img1: &LabImage, tree: &KdTree, cost: &dyn PatchCost, n: usize, r: usize) -> Result<FlowField> {
    let (w, h) = (img1.width(), img1.height());
    let pos = lattice_positions(w, h, n);
    let sigs = if n == 1 {
        wht_signatures(img1, r)?
    } else {
        wht_signatures_at(img1, &pos, r)?
    };
    let picks: Vec<([f32; 2], f32)> = pos
        .par_iter()
        .zip(sigs.par_iter())
        .map(|(&(x, y), sig)| {
            let mut best = ([0.0f32; 2], f32::INFINITY);
            for &(x2, y2) in tree.query_leaf(sig) {
                let c = cost.cost(x, y, x2 as f32, y2 as f32);
                if c < best.1 {
                    best = ([x2 as f32 - x as f32, y2 as f32 - y as f32], c);
                }
            }
            best
        })
        .collect();
    let mut ff = FlowField::new(w, h);
    ff.set_lattice(n);
    for (&(x, y), (f, c)) in pos.iter().zip(picks) {
        ff.set(x, y, f, c);
    }
    Ok(ff)
}

/// Re-evaluate the cost of every valid lattice pixel under `cost`.
/// Valid pixels off the lattice are dropped.
pub fn rescore(ff: &mut FlowField, cost: &dyn PatchCost, n: usize, bounds: &SearchBounds) {
    let w = ff.width();
    let (flow, costs, valid) = ff.channels_mut();
    flow.par_chunks(w)
        .zip(costs.par_chunks_mut(w))
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, ((frow, crow), vrow))| {
            for x in 0..w {
                if !vrow[x] {
                    continue;
                }
                let f = frow[x];
                let (tx, ty) = (x as f32 + f[0], y as f32 + f[1]);
                if x % n != 0 || y % n != 0 || !bounds.contains(tx, ty) {
                    vrow[x] = false;
                    crow[x] = f32::INFINITY;
                } else {
                    crow[x] = cost.cost(x, y, tx, ty);
                }
            }
        });
    ff.set_lattice(n);
}

/// One propagation pass over lattice `n`. A neighbour's flow replaces the
/// current one only if it is strictly cheaper; candidates equal to the
/// current flow are skipped without evaluation.
pub fn propagate_pass(
    ff: &mut FlowField,
    cost: &dyn PatchCost,
    n: usize,
    dir: PropagationDirection,
    bounds: &SearchBounds,
    visit: &mut dyn FnMut(usize, usize),
) {
    let (w, h) = ff.dims();
    let lw = w.div_ceil(n);
    let lh = h.div_ceil(n);
    let sources = dir.sources(n);
    for ly in 0..lh {
        let y = if dir.reversed_y() { (lh - 1 - ly) * n } else { ly * n };
        for lx in 0..lw {
            let x = if dir.reversed_x() { (lw - 1 - lx) * n } else { lx * n };
            visit(x, y);
            let i = ff.index(x, y);
            let mut best_valid = ff.valid_mask()[i];
            let mut best_flow = ff.flows()[i];
            let mut best_cost = if best_valid { ff.costs()[i] } else { f32::INFINITY };
            let mut changed = false;
            for &(dx, dy) in &sources {
                let qx = x as isize + dx;
                let qy = y as isize + dy;
                if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                    continue;
                }
                let j = ff.index(qx as usize, qy as usize);
                if !ff.valid_mask()[j] {
                    continue;
                }
                let cand = ff.flows()[j];
                if best_valid && cand == best_flow {
                    continue;
                }
                let (tx, ty) = (x as f32 + cand[0], y as f32 + cand[1]);
                if !bounds.contains(tx, ty) {
                    continue;
                }
                let c = cost.cost(x, y, tx, ty);
                if c < best_cost {
                    best_flow = cand;
                    best_cost = c;
                    best_valid = true;
                    changed = true;
                }
            }
            if changed {
                ff.set(x, y, best_flow, best_cost);
            }
        }
    }
}

/// Random stream for one row of one random-search pass.
pub fn row_rng(seed: u64, pass_key: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((pass_key << 24) ^ row as u64);
    rng
}

/// One random-search pass: every valid lattice pixel tries its flow plus a
/// uniform offset in `[-radius, radius]^2` and keeps it if strictly cheaper.
/// Rows run in parallel, each on its own deterministic random stream.
#[allow(clippy::too_many_arguments)]
pub fn random_search_pass(
    ff: &mut FlowField,
    cost: &dyn PatchCost,
    n: usize,
    radius: f32,
    bounds: &SearchBounds,
    seed: u64,
    pass_key: u64,
    integer: bool,
) {
    let w = ff.width();
    let (flow, costs, valid) = ff.channels_mut();
    flow.par_chunks_mut(w)
        .zip(costs.par_chunks_mut(w))
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .filter(|(y, _)| y % n == 0)
        .for_each(|(y, ((frow, crow), vrow))| {
            let mut rng = row_rng(seed, pass_key, y);
            for x in (0..w).step_by(n) {
                let mut ox: f32 = rng.random_range(-radius..=radius);
                let mut oy: f32 = rng.random_range(-radius..=radius);
                if !vrow[x] {
                    continue;
                }
                if integer {
                    ox = ox.round();
                    oy = oy.round();
                }
                if ox == 0.0 && oy == 0.0 {
                    continue;
                }
                let cand = [frow[x][0] + ox, frow[x][1] + oy];
                let (tx, ty) = (x as f32 + cand[0], y as f32 + cand[1]);
                if !bounds.contains(tx, ty) {
                    continue;
                }
                let c = cost.cost(x, y, tx, ty);
                if c < crow[x] {
                    frow[x] = cand;
                    crow[x] = c;
                }
            }
        });
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cost that only depends on the distance to a target flow.
    struct ToTarget(f32, f32);

    impl PatchCost for ToTarget {
        fn cost(&self, x1: usize, y1: usize, x2: f32, y2: f32) -> f32 {
            (x2 - x1 as f32 - self.0).abs() + (y2 - y1 as f32 - self.1).abs()
        }
        fn radius(&self) -> usize {
            1
        }
        fn stride(&self) -> usize {
            1
        }
    }

    #[test]
    fn direction_sources_and_cycle() {
        assert_eq!(PropagationDirection::DOWN_RIGHT.sources(2), [(-2, 0), (0, -2)]);
        assert_eq!(PropagationDirection::UP_LEFT.sources(1), [(1, 0), (0, 1)]);
        assert_eq!(PropagationDirection::DOWN_LEFT.sources(1), [(1, 0), (0, -1)]);
        assert_eq!(PropagationDirection::UP_RIGHT.sources(1), [(-1, 0), (0, 1)]);
        assert_eq!(PropagationDirection::nth(5), PropagationDirection::UP_LEFT);
    }

    #[test]
    fn propagation_fills_from_one_seed_in_scan_order() {
        let mut ff = FlowField::new(6, 5);
        ff.set(0, 0, [2.0, 1.0], 0.0);
        let cost = ToTarget(2.0, 1.0);
        let b = SearchBounds::new(6, 5, 1);
        let mut order = Vec::new();
        propagate_pass(&mut ff, &cost, 1, PropagationDirection::DOWN_RIGHT, &b, &mut |x, y| order.push((x, y)));
        assert_eq!(order[0], (0, 0));
        assert_eq!(order[6], (0, 1));
        // Targets outside the extended image are refused: (5+2, y) = 7 > 5 + 1 - 1 + 1.
        for y in 0..5 {
            for x in 0..6 {
                if x + 2 <= 6 && y < 5 {
                    assert_eq!(ff.get(x, y), Some([2.0, 1.0]), "({x},{y})");
                }
            }
        }
        assert_eq!(ff.get(5, 0), None);
    }

    #[test]
    fn propagation_is_strict() {
        let mut ff = FlowField::new(2, 1);
        ff.set(0, 0, [1.0, 0.0], 3.0);
        ff.set(1, 0, [0.0, 0.0], 3.0);
        struct Flat;
        impl PatchCost for Flat {
            fn cost(&self, _: usize, _: usize, _: f32, _: f32) -> f32 {
                3.0
            }
            fn radius(&self) -> usize {
                1
            }
            fn stride(&self) -> usize {
                1
            }
        }
        let b = SearchBounds::new(2, 1, 4);
        propagate_pass(&mut ff, &Flat, 1, PropagationDirection::DOWN_RIGHT, &b, &mut |_, _| {});
        assert_eq!(ff.get(1, 0), Some([0.0, 0.0]));
    }

    #[test]
    fn random_search_deterministic_and_improving() {
        let mut a = FlowField::from_fn(20, 10, |_, _| [0.0, 0.0]);
        let cost = ToTarget(0.7, -0.4);
        let b = SearchBounds::new(20, 10, 2);
        rescore(&mut a, &cost, 1, &b);
        let before: f32 = a.costs().iter().sum();
        let mut c = a.clone();
        random_search_pass(&mut a, &cost, 1, 1.0, &b, 7, 3, false);
        random_search_pass(&mut c, &cost, 1, 1.0, &b, 7, 3, false);
        assert_eq!(a, c);
        let after: f32 = a.costs().iter().sum();
        assert!(after < before);
        let mut d = FlowField::from_fn(20, 10, |_, _| [0.0, 0.0]);
        rescore(&mut d, &cost, 1, &b);
        random_search_pass(&mut d, &cost, 1, 1.0, &b, 8, 3, false);
        assert_ne!(a, d);
    }

    #[test]
    fn integer_search_keeps_integer_flows() {
        let mut a = FlowField::from_fn(9, 9, |_, _| [1.0, -2.0]);
        let cost = ToTarget(3.0, 1.0);
        let b = SearchBounds::new(9, 9, 20);
        rescore(&mut a, &cost, 1, &b);
        for p in 0..6 {
            random_search_pass(&mut a, &cost, 1, 4.0, &b, 1, p, true);
        }
        assert!(a.flows().iter().all(|f| f[0].fract() == 0.0 && f[1].fract() == 0.0));
    }

    #[test]
    fn rescore_drops_off_lattice_and_out_of_bounds() {
        let mut ff = FlowField::from_fn(4, 4, |_, _| [0.0, 0.0]);
        ff.set(2, 2, [10.0, 0.0], 0.0);
        let b = SearchBounds::new(4, 4, 1);
        rescore(&mut ff, &ToTarget(0.0, 0.0), 2, &b);
        assert_eq!(ff.count_valid(), 3);
        assert_eq!(ff.lattice(), 2);
        assert!(!ff.is_valid(1, 0));
        assert!(!ff.is_valid(2, 2));
    }
}
