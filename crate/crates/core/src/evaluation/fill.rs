//! Inverse-distance fill from sparse matches to a dense field.

use rayon::prelude::*;

use crate::error::{FlowError, Result};
use crate::filtering::SparseMatches;
use crate::matcher::FlowField;

/// Neighbours used per pixel.
pub const FILL_NEIGHBOURS: usize = 16;

struct Grid {
    cell: f32,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<u32>>,
}

impl Grid {
    fn new(points: &[(f32, f32)], width: usize, height: usize) -> Self {
        // About four points per cell.
        let area = (width * height) as f32;
        let cell = (area * 4.0 / points.len() as f32).sqrt().max(1.0);
        let cols = ((width as f32 / cell).ceil() as usize).max(1);
        let rows = ((height as f32 / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); cols * rows];
        for (i, &(x, y)) in points.iter().enumerate() {
            let (cx, cy) = Self::cell_of(cell, cols, rows, x, y);
            buckets[cy * cols + cx].push(i as u32);
        }
        Grid { cell, cols, rows, buckets }
    }

    fn cell_of(cell: f32, cols: usize, rows: usize, x: f32, y: f32) -> (usize, usize) {
        let cx = (x / cell).floor().clamp(0.0, (cols - 1) as f32) as usize;
        let cy = (y / cell).floor().clamp(0.0, (rows - 1) as f32) as usize;
        (cx, cy)
    }

    /// Up to `k` nearest points as `(squared distance, index)`, ascending.
    fn nearest(&self, points: &[(f32, f32)], x: f32, y: f32, k: usize, out: &mut Vec<(f32, u32)>) {
        out.clear();
        let (qx, qy) = Self::cell_of(self.cell, self.cols, self.rows, x, y);
        let max_ring = self.cols.max(self.rows);
        for ring in 0..=max_ring {
            let (x0, x1) = (qx as isize - ring as isize, qx as isize + ring as isize);
            let (y0, y1) = (qy as isize - ring as isize, qy as isize + ring as isize);
            for cy in y0..=y1 {
                if cy < 0 || cy >= self.rows as isize {
                    continue;
                }
                let edge_row = cy == y0 || cy == y1;
                let mut cx = x0;
                while cx <= x1 {
                    if cx >= 0 && cx < self.cols as isize {
                        for &i in &self.buckets[cy as usize * self.cols + cx as usize] {
                            let (px, py) = points[i as usize];
                            let d = (px - x) * (px - x) + (py - y) * (py - y);
                            if out.len() < k || d < out[k - 1].0 {
                                let pos = out.partition_point(|e| (e.0, e.1) < (d, i));
                                out.insert(pos, (d, i));
                                out.truncate(k);
                            }
                        }
                    }
                    // Interior rows only contribute their two edge cells.
                    cx = if edge_row || cx == x1 { cx + 1 } else { x1 };
                }
            }
            // Points outside this ring are at least `ring * cell` away.
            let reach = ring as f32 * self.cell;
            if out.len() >= k && out[k - 1].0 <= reach * reach {
                break;
            }
        }
    }
}

/// Dense field by inverse squared-distance weighting over the nearest
/// matches. Pixels on a match take its flow exactly.
pub fn fill_dense(matches: &SparseMatches, width: usize, height: usize) -> Result<FlowField> {
    fill_dense_k(matches, width, height, FILL_NEIGHBOURS)
}

pub fn fill_dense_k(matches: &SparseMatches, width: usize, height: usize, k: usize) -> Result<FlowField> {
    if matches.is_empty() {
        return Err(FlowError::Empty("no matches to interpolate".into()));
    }
    if k < 1 || width < 1 || height < 1 {
        return Err(FlowError::param("fill needs k >= 1 and a non-empty image"));
    }
    let points: Vec<(f32, f32)> = matches.matches.iter().map(|m| (m.x, m.y)).collect();
    let grid = Grid::new(&points, width, height);
    let rows: Vec<Vec<[f32; 2]>> = (0..height)
        .into_par_iter()
        .map_init(Vec::new, |near, y| {
            (0..width)
                .map(|x| {
                    grid.nearest(&points, x as f32, y as f32, k, near);
                    if near[0].0 == 0.0 {
                        return matches.matches[near[0].1 as usize].flow;
                    }
                    let mut acc = [0.0f64; 2];
                    let mut wsum = 0.0f64;
                    for &(d, i) in near.iter() {
                        let wgt = 1.0 / d as f64;
                        let f = matches.matches[i as usize].flow;
                        acc[0] += wgt * f[0] as f64;
                        acc[1] += wgt * f[1] as f64;
                        wsum += wgt;
                    }
                    [(acc[0] / wsum) as f32, (acc[1] / wsum) as f32]
                })
                .collect()
        })
        .collect();
    let mut ff = FlowField::new(width, height);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, f) in row.into_iter().enumerate() {
            ff.set(x, y, f, 0.0);
        }
    }
    Ok(ff)
}
