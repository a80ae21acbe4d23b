use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::matcher::FlowField;

/// Reference flow with its validity and optional non-occlusion mask.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Valid pixels of this field are the annotated ones.
    pub flow: FlowField,
    /// Pixels visible in both frames; `None` means all of them.
    pub nocc: Option<Vec<bool>>,
}

impl GroundTruth {
    pub fn new(flow: FlowField, nocc: Option<Vec<bool>>) -> Result<Self> {
        if let Some(m) = &nocc {
            if m.len() != flow.width() * flow.height() {
                return Err(FlowError::Format(format!(
                    "occlusion mask has {} entries, flow has {}",
                    m.len(),
                    flow.width() * flow.height()
                )));
            }
        }
        Ok(GroundTruth { flow, nocc })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.flow.dims()
    }

    /// True where the pixel takes part in evaluation.
    pub fn evaluated(&self, x: usize, y: usize) -> bool {
        let i = self.flow.index(x, y);
        self.flow.is_valid(x, y) && self.nocc.as_ref().is_none_or(|m| m[i])
    }
}

/// Error statistics over the evaluated pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Fraction of evaluated pixels with EPE <= 3. Missing predictions fail.
    pub pct_le3: f64,
    /// Mean of min(EPE, 10); missing predictions count as 10.
    pub epe10: f64,
    /// Mean EPE over evaluated pixels that have a prediction. NaN if none.
    pub epe: f64,
    /// Fraction of evaluated pixels with EPE <= 1.
    pub pct_le1: f64,
    pub n_evaluated: usize,
    /// Evaluated pixels without a valid prediction.
    pub n_missing: usize,
}

/// Compare a prediction against ground truth.
pub fn compute_metrics(pred: &FlowField, gt: &GroundTruth) -> Result<MetricsReport> {
    if pred.dims() != gt.dims() {
        return Err(FlowError::DimensionMismatch {
            expected: gt.dims(),
            actual: pred.dims(),
        });
    }
    let (w, h) = pred.dims();
    let (mut n, mut missing, mut le3, mut le1) = (0usize, 0usize, 0usize, 0usize);
    let (mut sum, mut sum10) = (0.0f64, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            if !gt.evaluated(x, y) {
                continue;
            }
            n += 1;
            let Some(p) = pred.get(x, y) else {
                missing += 1;
                sum10 += 10.0;
                continue;
            };
            let g = gt.flow.flow_at(x, y);
            let epe = (((p[0] - g[0]) as f64).powi(2) + ((p[1] - g[1]) as f64).powi(2)).sqrt();
            sum += epe;
            sum10 += epe.min(10.0);
            le3 += (epe <= 3.0) as usize;
            le1 += (epe <= 1.0) as usize;
        }
    }
    if n == 0 {
        return Err(FlowError::Empty("no pixel is both valid and non-occluded".into()));
    }
    let predicted = n - missing;
    Ok(MetricsReport {
        pct_le3: le3 as f64 / n as f64,
        epe10: sum10 / n as f64,
        epe: if predicted == 0 { f64::NAN } else { sum / predicted as f64 },
        pct_le1: le1 as f64 / n as f64,
        n_evaluated: n,
        n_missing: missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(w: usize, h: usize) -> GroundTruth {
        GroundTruth::new(FlowField::from_fn(w, h, |x, y| [x as f32 * 0.1, -(y as f32)]), None).unwrap()
    }

    fn offset(g: &GroundTruth, d: [f32; 2]) -> FlowField {
        let (w, h) = g.dims();
        FlowField::from_fn(w, h, |x, y| {
            let f = g.flow.flow_at(x, y);
            [f[0] + d[0], f[1] + d[1]]
        })
    }

    #[test]
    fn perfect_prediction() {
        let g = gt(7, 5);
        let m = compute_metrics(&g.flow, &g).unwrap();
        assert_eq!((m.epe, m.epe10, m.pct_le3, m.pct_le1, m.n_evaluated), (0.0, 0.0, 1.0, 1.0, 35));
    }

    #[test]
    fn constant_errors_and_cap() {
        let g = gt(6, 6);
        let m = compute_metrics(&offset(&g, [3.0, 4.0]), &g).unwrap();
        assert!((m.epe - 5.0).abs() < 1e-5 && (m.epe10 - 5.0).abs() < 1e-5);
        assert_eq!(m.pct_le3, 0.0);
        let m = compute_metrics(&offset(&g, [30.0, 40.0]), &g).unwrap();
        assert!((m.epe - 50.0).abs() < 1e-4);
        assert!((m.epe10 - 10.0).abs() < 1e-9);
    }

    #[test]
    fn masks_and_missing() {
        let mut g = gt(4, 1);
        g.nocc = Some(vec![true, true, true, false]);
        let mut p = g.flow.clone();
        p.invalidate(0, 0);
        p.set(3, 0, [100.0, 0.0], 0.0);
        let m = compute_metrics(&p, &g).unwrap();
        assert_eq!((m.n_evaluated, m.n_missing), (3, 1));
        assert!((m.pct_le3 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.epe10 - 10.0 / 3.0).abs() < 1e-9);
        assert_eq!(m.epe, 0.0);

        g.nocc = Some(vec![false; 4]);
        assert!(matches!(compute_metrics(&p, &g), Err(FlowError::Empty(_))));
        assert!(compute_metrics(&FlowField::new(3, 1), &gt(4, 1)).is_err());
    }

    #[test]
    fn tiling_keeps_rates() {
        let g = gt(5, 4);
        let p = FlowField::from_fn(5, 4, |x, y| if (x + y) % 3 == 0 { [9.0, 9.0] } else { g.flow.flow_at(x, y) });
        let a = compute_metrics(&p, &g).unwrap();
        let g2 = GroundTruth::new(FlowField::from_fn(10, 4, |x, y| g.flow.flow_at(x % 5, y)), None).unwrap();
        let p2 = FlowField::from_fn(10, 4, |x, y| p.flow_at(x % 5, y));
        let b = compute_metrics(&p2, &g2).unwrap();
        assert!((a.pct_le3 - b.pct_le3).abs() < 1e-12 && (a.epe - b.epe).abs() < 1e-9);
    }
}
