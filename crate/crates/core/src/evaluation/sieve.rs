//! Resistant-outlier statistics per scale.
//!
//! For random pixels `p1` with a ground-truth match `p2*`, a position `p2`
//! at distance `d_f` is drawn on the circle around `p2*`. The outlier is
//! resistant on scale `x` when its census cost on `x` is strictly below
//! the cost of `p2*`. Configurations combine scales by conjunction (`1&2`),
//! by summed costs (`1+2`), or by the flow-fields approximation (`ff`),
//! which is the conjunction with coarse scales dropped whenever a finer
//! scale has a resistant position within its random search range of `p2*`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::metrics::GroundTruth;
use crate::descriptors::CensusScale;
use crate::error::{FlowError, Result};
use crate::imageio::ScaleSpace;
use crate::matcher::row_rng;

pub const DEFAULT_BINS: [f32; 8] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SieveConfig {
    Single(usize),
    /// Resistant on every listed scale.
    All(Vec<usize>),
    /// Resistant under the summed costs of the listed scales.
    Sum(Vec<usize>),
    /// Conjunction with coarse scales ignored where a finer scale could undo
    /// them; empty means all analysed scales.
    FlowFields(Vec<usize>),
}

impl SieveConfig {
    pub fn scales(&self) -> &[usize] {
        match self {
            SieveConfig::Single(s) => std::slice::from_ref(s),
            SieveConfig::All(v) | SieveConfig::Sum(v) | SieveConfig::FlowFields(v) => v,
        }
    }

    pub fn is_approximate(&self) -> bool {
        matches!(self, SieveConfig::FlowFields(_))
    }
}

fn join(v: &[usize], sep: &str) -> String {
    v.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(sep)
}

impl fmt::Display for SieveConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SieveConfig::Single(s) => write!(f, "{s}"),
            SieveConfig::All(v) => f.write_str(&join(v, "&")),
            SieveConfig::Sum(v) => f.write_str(&join(v, "+")),
            SieveConfig::FlowFields(v) if v.is_empty() => f.write_str("ff"),
            SieveConfig::FlowFields(v) => write!(f, "ff:{}", join(v, "&")),
        }
    }
}

fn parse_scales(s: &str, sep: char) -> Result<Vec<usize>> {
    s.split(sep)
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| FlowError::param(format!("bad scale {t:?} in sieve configuration")))
        })
        .collect()
}

impl FromStr for SieveConfig {
    type Err = FlowError;

    /// `4`, `1&2&4`, `1+2`, `ff` or `ff:1&2&4`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("ff") {
            return Ok(SieveConfig::FlowFields(Vec::new()));
        }
        if let Some(rest) = s.strip_prefix("ff:") {
            return Ok(SieveConfig::FlowFields(parse_scales(rest, '&')?));
        }
        if s.contains('&') && s.contains('+') {
            return Err(FlowError::param(format!("cannot mix & and + in {s:?}")));
        }
        if s.contains('&') {
            Ok(SieveConfig::All(parse_scales(s, '&')?))
        } else if s.contains('+') {
            Ok(SieveConfig::Sum(parse_scales(s, '+')?))
        } else {
            Ok(SieveConfig::Single(parse_scales(s, ',')?[0]))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SieveParams {
    /// Scales to analyse; must be present in both scale spaces.
    pub scales: Vec<usize>,
    /// Configurations to report. Empty selects singles, the full
    /// conjunction, the full sum and `ff`.
    pub configs: Vec<SieveConfig>,
    pub bins: Vec<f32>,
    pub samples: usize,
    pub seed: u64,
    /// Patch radius.
    pub r: usize,
    /// Base random search range; scale `n` uses `R n`.
    pub search_radius: f32,
}

impl Default for SieveParams {
    fn default() -> Self {
        SieveParams {
            scales: vec![1, 2, 4, 8],
            configs: Vec::new(),
            bins: DEFAULT_BINS.to_vec(),
            samples: 10_000,
            seed: 0,
            r: 4,
            search_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SieveBin {
    pub d_f: f32,
    /// Probability of resistance.
    pub p: f64,
    /// `p` divided by the single-scale-1 probability of the same bin.
    pub p_rel: f64,
    pub hits: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SieveCurve {
    pub config: String,
    pub approximate: bool,
    pub bins: Vec<SieveBin>,
}

fn default_configs(scales: &[usize]) -> Vec<SieveConfig> {
    let mut v: Vec<SieveConfig> = scales.iter().map(|&s| SieveConfig::Single(s)).collect();
    if scales.len() > 1 {
        v.push(SieveConfig::All(scales.to_vec()));
        v.push(SieveConfig::Sum(scales.to_vec()));
    }
    v.push(SieveConfig::FlowFields(Vec::new()));
    v
}

/// Outcome of one sample: per bin, per scale, (cost at p2, cost at p2*);
/// plus for each scale whether a resistant position lies within its
/// random search range of `p2*`.
struct Sample {
    costs: Vec<Vec<(f32, f32)>>,
    near_resistant: Vec<bool>,
}

/// Estimate resistance probabilities for every configuration and bin.
pub fn sieve_analysis(ss1: &ScaleSpace, ss2: &ScaleSpace, gt: &GroundTruth, p: &SieveParams) -> Result<Vec<SieveCurve>> {
    if p.samples < 1 {
        return Err(FlowError::param("sieve needs at least one sample per bin"));
    }
    if p.bins.is_empty() || p.bins.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(FlowError::param("sieve bins must be finite and non-negative"));
    }
    if p.r < 1 || !(p.search_radius > 0.0) {
        return Err(FlowError::param("sieve needs r >= 1 and R > 0"));
    }
    let dims = (ss1.width(), ss1.height());
    for d in [(ss2.width(), ss2.height()), gt.dims()] {
        if d != dims {
            return Err(FlowError::DimensionMismatch { expected: dims, actual: d });
        }
    }
    let mut scales = p.scales.clone();
    if !scales.contains(&1) {
        scales.push(1);
    }
    scales.sort_unstable();
    scales.dedup();
    let configs = if p.configs.is_empty() { default_configs(&p.scales) } else { p.configs.clone() };
    let configs: Vec<SieveConfig> = configs
        .into_iter()
        .map(|c| match c {
            SieveConfig::FlowFields(v) if v.is_empty() => SieveConfig::FlowFields(p.scales.clone()),
            other => other,
        })
        .collect();
    for c in &configs {
        if let Some(s) = c.scales().iter().find(|s| !scales.contains(s)) {
            return Err(FlowError::param(format!("configuration {c} uses scale {s} which is not analysed")));
        }
    }
    let cost: Vec<CensusScale> = scales
        .iter()
        .map(|&n| CensusScale::new(ss1.level(n)?, ss2.level(n)?, p.r, n, None))
        .collect::<Result<_>>()?;

    let (w, h) = dims;
    let candidates: Vec<(usize, usize, f32, f32)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| gt.evaluated(x, y))
        .filter_map(|(x, y)| {
            let g = gt.flow.flow_at(x, y);
            let (tx, ty) = ((x as f32 + g[0]).round(), (y as f32 + g[1]).round());
            (tx >= 0.0 && ty >= 0.0 && tx <= (w - 1) as f32 && ty <= (h - 1) as f32).then_some((x, y, tx, ty))
        })
        .collect();
    if candidates.is_empty() {
        return Err(FlowError::Empty("no evaluated pixel has a match inside the second image".into()));
    }
    let needs_ff = configs.iter().any(|c| c.is_approximate());

    let samples: Vec<Sample> = (0..p.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = row_rng(p.seed, u32::MAX as u64, i);
            let (x1, y1, sx, sy) = candidates[rng.random_range(0..candidates.len())];
            let theta: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            let mut targets: Vec<(f32, f32)> = vec![(sx, sy)];
            targets.extend(p.bins.iter().map(|&d| (sx + d * theta.cos(), sy + d * theta.sin())));
            let per_scale: Vec<Vec<f32>> = cost.iter().map(|c| c.costs_from(x1, y1, &targets)).collect();
            let costs = (0..p.bins.len())
                .map(|b| per_scale.iter().map(|c| (c[b + 1], c[0])).collect())
                .collect();
            let near_resistant = if needs_ff {
                scales
                    .iter()
                    .zip(&cost)
                    .zip(&per_scale)
                    .map(|((&n, c), pc)| {
                        let range = (p.search_radius * n as f32).floor() as isize;
                        let mut around = Vec::with_capacity(((2 * range + 1) * (2 * range + 1)) as usize);
                        for dy in -range..=range {
                            for dx in -range..=range {
                                if dx != 0 || dy != 0 {
                                    around.push((sx + dx as f32, sy + dy as f32));
                                }
                            }
                        }
                        c.costs_from(x1, y1, &around).iter().any(|&v| v < pc[0])
                    })
                    .collect()
            } else {
                Vec::new()
            };
            Sample { costs, near_resistant }
        })
        .collect();

    let idx = |s: usize| scales.iter().position(|&x| x == s).unwrap();
    let resistant = |sample: &Sample, b: usize, cfg: &SieveConfig| -> bool {
        let c = &sample.costs[b];
        match cfg {
            SieveConfig::Single(s) => {
                let (a, g) = c[idx(*s)];
                a < g
            }
            SieveConfig::All(v) => v.iter().all(|&s| c[idx(s)].0 < c[idx(s)].1),
            SieveConfig::Sum(v) => {
                let a: f32 = v.iter().map(|&s| c[idx(s)].0).sum();
                let g: f32 = v.iter().map(|&s| c[idx(s)].1).sum();
                a < g
            }
            SieveConfig::FlowFields(v) => v.iter().all(|&s| {
                let undone = v.iter().any(|&y| y < s && sample.near_resistant[idx(y)]);
                undone || c[idx(s)].0 < c[idx(s)].1
            }),
        }
    };
    let rate = |cfg: &SieveConfig, b: usize| samples.iter().filter(|s| resistant(s, b, cfg)).count();

    let base = SieveConfig::Single(1);
    let base_hits: Vec<usize> = (0..p.bins.len()).map(|b| rate(&base, b)).collect();
    let n = p.samples;
    Ok(configs
        .iter()
        .map(|cfg| SieveCurve {
            config: cfg.to_string(),
            approximate: cfg.is_approximate(),
            bins: p
                .bins
                .iter()
                .enumerate()
                .map(|(b, &d_f)| {
                    let hits = rate(cfg, b);
                    let prob = hits as f64 / n as f64;
                    let p1 = base_hits[b] as f64 / n as f64;
                    SieveBin {
                        d_f,
                        p: prob,
                        p_rel: if p1 > 0.0 { prob / p1 } else { f64::NAN },
                        hits,
                        samples: n,
                    }
                })
                .collect(),
        })
        .collect())
}

/// CSV with columns `d_f,config,P,P_rel,samples`. Approximate
/// configurations are listed in a leading comment line.
pub fn write_sieve_csv(mut out: impl Write, curves: &[SieveCurve]) -> std::io::Result<()> {
    let approx: Vec<&str> = curves.iter().filter(|c| c.approximate).map(|c| c.config.as_str()).collect();
    if !approx.is_empty() {
        writeln!(out, "# approximate: {}", approx.join(" "))?;
    }
    writeln!(out, "d_f,config,P,P_rel,samples")?;
    for c in curves {
        for b in &c.bins {
            writeln!(out, "{},{},{:.6},{:.6},{}", b.d_f, c.config, b.p, b.p_rel, b.samples)?;
        }
    }
    Ok(())
}
