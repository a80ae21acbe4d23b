use rayon::prelude::*;

use crate::descriptors::DataTerm;
use crate::error::{FlowError, Result};
use crate::matcher::FlowField;

/// Default pixel budget for exhaustive search.
pub const NNF_GUARD: usize = 64 * 64;

/// Exact nearest-neighbour field: every pixel of the first image is matched
/// to the cheapest integer position of the second image extended by `r * n`
/// on every side, the same region the matcher may reach. Ties keep the
/// first candidate in row-major order. Refuses images above `limit` pixels.
pub fn brute_force_nnf(data: &dyn DataTerm, r: usize, n: usize, limit: usize) -> Result<FlowField> {
    let (w, h) = data.dims();
    if w * h > limit {
        return Err(FlowError::GuardExceeded { width: w, height: h, limit });
    }
    let cost = data.at_scale(n, r, Some(1))?;
    let reach = (r * n) as isize;
    let best: Vec<([f32; 2], f32)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let mut best = ([0.0f32; 2], f32::INFINITY);
            for y2 in -reach..h as isize + reach {
                for x2 in -reach..w as isize + reach {
                    let c = cost.cost(x, y, x2 as f32, y2 as f32);
                    if c < best.1 {
                        best = ([(x2 - x as isize) as f32, (y2 - y as isize) as f32], c);
                    }
                }
            }
            best
        })
        .collect();
    let mut ff = FlowField::new(w, h);
    for (i, (f, c)) in best.into_iter().enumerate() {
        ff.set(i % w, i / w, f, c);
    }
    Ok(ff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::CensusTerm;
    use crate::imageio::{build_scale_space, LabImage};

    #[test]
    fn identical_images_zero_cost_and_guard() {
        let img = LabImage::from_fn(12, 10, |x, y| [((x * 13 + y * 7) % 17) as f32 * 5.0, (x as f32).cos(), y as f32]);
        let ss = build_scale_space(&img, &[1]).unwrap();
        let term = CensusTerm::new(&ss, &ss).unwrap();
        let nnf = brute_force_nnf(&term, 2, 1, NNF_GUARD).unwrap();
        assert!(nnf.costs().iter().all(|&c| c == 0.0));
        assert!(matches!(brute_force_nnf(&term, 2, 1, 100), Err(FlowError::GuardExceeded { .. })));
    }
}
