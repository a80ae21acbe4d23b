use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;
use std::str::FromStr;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use flowfields::descriptors::CensusTerm;
use flowfields::evaluation::{
    brute_force_nnf, compute_metrics, fill_dense, flow_to_color, read_flow, sieve_analysis, write_flow, write_sieve_csv,
    FlowFormat, GroundTruth, MetricsReport, SieveConfig, SieveParams, NNF_GUARD,
};
use flowfields::filtering::{filter_flow, read_matches, write_matches};
use flowfields::imageio::{load_mask, save_mask, save_rgb};
use flowfields::matcher::{run_variant_with, MatchObserver};
use flowfields::{build_scale_space, load_lab, FlowField, LabImage, MatchParams, ScaleSpace};

use crate::config::{FileConfig, FilterArgs, MatchArgs};

/// Exit status when a metric gate fails.
const GATE_FAILED: u8 = 3;

/// Collects the engine's timing reports.
#[derive(Default)]
struct Timings(Vec<(String, Duration)>);

impl MatchObserver for Timings {
    fn timing(&mut self, label: &str, elapsed: Duration) {
        self.0.push((label.to_string(), elapsed));
    }
}

impl Timings {
    fn print(&self, title: &str) {
        let total: Duration = self.0.iter().map(|(_, d)| *d).sum();
        eprintln!("{title}: {:.3} s", total.as_secs_f64());
        for (label, d) in &self.0 {
            eprintln!("  {label:<24} {:9.3} s", d.as_secs_f64());
        }
    }
}

fn load_pair(img1: &Path, img2: &Path) -> Result<(LabImage, LabImage)> {
    let (a, b) = rayon::join(|| load_lab(img1), || load_lab(img2));
    let a = a.with_context(|| format!("loading {}", img1.display()))?;
    let b = b.with_context(|| format!("loading {}", img2.display()))?;
    ensure!(
        (a.width(), a.height()) == (b.width(), b.height()),
        "image sizes differ: {}x{} vs {}x{}",
        a.width(),
        a.height(),
        b.width(),
        b.height()
    );
    Ok((a, b))
}

fn scale_spaces(a: &LabImage, b: &LabImage, scales: &[usize]) -> Result<(ScaleSpace, ScaleSpace)> {
    let (s1, s2) = rayon::join(|| build_scale_space(a, scales), || build_scale_space(b, scales));
    Ok((s1?, s2?))
}

fn match_on(ss1: &ScaleSpace, ss2: &ScaleSpace, params: &MatchParams, timings: &mut Timings) -> Result<FlowField> {
    let term = CensusTerm::new(ss1, ss2)?;
    Ok(run_variant_with(ss1.base(), ss2.base(), &term, params, timings)?)
}

pub fn cmd_match(
    img1: &Path,
    img2: &Path,
    output: &Path,
    format: Option<FlowFormat>,
    viz: Option<&Path>,
    args: &MatchArgs,
) -> Result<ExitCode> {
    let file = FileConfig::load(args.config.as_deref())?;
    let params = args.resolve(&file.matching)?;
    let format = format.unwrap_or_else(|| FlowFormat::from_path(output));

    let start = Instant::now();
    let (a, b) = load_pair(img1, img2)?;
    let (ss1, ss2) = scale_spaces(&a, &b, &params.required_scales())?;
    let mut timings = Timings::default();
    timings.0.push(("load + scale space".into(), start.elapsed()));
    let flow = match_on(&ss1, &ss2, &params, &mut timings)?;
    timings.print(&format!("{} k={}", params.variant, params.k));

    write_flow(output, &flow, format).with_context(|| format!("writing {}", output.display()))?;
    if let Some(v) = viz {
        save_rgb(v, &flow_to_color(&flow, None))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub struct FilterJob<'a> {
    pub img1: &'a Path,
    pub img2: &'a Path,
    pub output: &'a Path,
    pub mask: Option<&'a Path>,
    pub flow: Option<&'a Path>,
    pub dense: Option<&'a Path>,
    pub one_way: bool,
    pub params: &'a MatchArgs,
    pub filter: &'a FilterArgs,
}

pub fn cmd_filter(job: FilterJob<'_>) -> Result<ExitCode> {
    let file = FileConfig::load(job.params.config.as_deref())?;
    let params = job.params.resolve(&file.matching)?;
    let fparams = job.filter.resolve(&file.filter, params.variant)?;

    let (a, b) = load_pair(job.img1, job.img2)?;
    let (ss1, ss2) = scale_spaces(&a, &b, &params.required_scales())?;

    // Backward flows use their own seeds; the second one a smaller patch.
    let back1 = params.clone().with_seed(params.seed.wrapping_add(1));
    let back2 = params.clone().with_seed(params.seed.wrapping_add(2)).with_radius(params.r2);
    let (mut t0, mut t1, mut t2) = (Timings::default(), Timings::default(), Timings::default());
    let (fwd, (fb1, fb2)) = rayon::join(
        || match_on(&ss1, &ss2, &params, &mut t0),
        || {
            rayon::join(
                || match_on(&ss2, &ss1, &back1, &mut t1),
                || if job.one_way { Ok(None) } else { match_on(&ss2, &ss1, &back2, &mut t2).map(Some) },
            )
        },
    );
    let (fwd, fb1, fb2) = (fwd?, fb1?, fb2?);
    t0.print("forward");
    t1.print("backward");
    if fb2.is_some() {
        t2.print("backward r2");
    }

    let out = filter_flow(&fwd, &fb1, fb2.as_ref(), &fparams)?;
    eprintln!(
        "consistent {} / {}, after region filter {}, matches {}",
        out.consistency.count_valid(),
        fwd.count_valid(),
        out.mask.iter().filter(|&&m| m).count(),
        out.matches.len()
    );
    write_matches(job.output, &out.matches)?;
    if let Some(p) = job.mask {
        save_mask(p, fwd.width(), fwd.height(), &out.mask)?;
    }
    if let Some(p) = job.flow {
        write_flow(p, &fwd, FlowFormat::from_path(p))?;
    }
    if let Some(p) = job.dense {
        ensure!(!out.matches.is_empty(), "no matches survived filtering; cannot densify");
        let d = fill_dense(&out.matches, fwd.width(), fwd.height())?;
        write_flow(p, &d, FlowFormat::from_path(p))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn read_truth(gt: &Path, nocc: Option<&Path>, invert: bool) -> Result<GroundTruth> {
    let flow = read_flow(gt).with_context(|| format!("reading {}", gt.display()))?;
    let mask = match nocc {
        Some(p) => {
            let (w, h, mut m) = load_mask(p)?;
            ensure!((w, h) == flow.dims(), "mask {}x{} does not match flow {}x{}", w, h, flow.width(), flow.height());
            if invert {
                m.iter_mut().for_each(|v| *v = !*v);
            }
            Some(m)
        }
        None => None,
    };
    Ok(GroundTruth::new(flow, mask)?)
}

fn format_report(r: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "pct<=3  {:8.3} %", 100.0 * r.pct_le3);
    let _ = writeln!(s, "EPE10   {:8.4}", r.epe10);
    let _ = writeln!(s, "EPE     {:8.4}", r.epe);
    let _ = writeln!(s, "pct<=1  {:8.3} %", 100.0 * r.pct_le1);
    let _ = writeln!(s, "pixels  {:8} ({} without prediction)", r.n_evaluated, r.n_missing);
    s
}

pub fn cmd_eval(
    pred: &Path,
    gt: &Path,
    nocc: Option<&Path>,
    invert: bool,
    json: Option<&Path>,
    fail_above: Option<f64>,
) -> Result<ExitCode> {
    if let Some(t) = fail_above {
        ensure!(t.is_finite() && t >= 0.0, "--fail-if-epe-above must be a non-negative number");
    }
    let truth = read_truth(gt, nocc, invert)?;
    let (w, h) = truth.dims();
    let is_txt = pred.extension().is_some_and(|e| e.eq_ignore_ascii_case("txt"));
    let pred_flow = if is_txt {
        let m = read_matches(pred)?;
        ensure!(!m.is_empty(), "{} holds no matches", pred.display());
        fill_dense(&m, w, h)?
    } else {
        read_flow(pred).with_context(|| format!("reading {}", pred.display()))?
    };
    let report = compute_metrics(&pred_flow, &truth)?;
    print!("{}", format_report(&report));
    if let Some(p) = json {
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(t) = fail_above {
        // A NaN EPE means nothing was predicted, which fails any gate.
        if !(report.epe <= t) {
            eprintln!("EPE {} above threshold {t}", report.epe);
            return Ok(ExitCode::from(GATE_FAILED));
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn parse_configs(s: &str) -> Result<Vec<SieveConfig>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| SieveConfig::from_str(t).map_err(Into::into))
        .collect()
}

pub fn cmd_sieve(
    img1: &Path,
    img2: &Path,
    gt: &Path,
    nocc: Option<&Path>,
    mut params: SieveParams,
    configs: Option<&str>,
    output: Option<&Path>,
) -> Result<ExitCode> {
    ensure!(params.samples >= 1, "--samples must be >= 1");
    ensure!(params.r >= 1, "--r must be >= 1");
    ensure!(params.search_radius > 0.0, "--R must be > 0");
    ensure!(!params.scales.is_empty() && params.scales.iter().all(|&s| s >= 1), "--scales must list positive integers");
    if let Some(c) = configs {
        params.configs = parse_configs(c)?;
        for cfg in &params.configs {
            for s in cfg.scales() {
                ensure!(params.scales.contains(s), "configuration {cfg} uses scale {s} not in --scales");
            }
        }
    }
    let truth = read_truth(gt, nocc, false)?;
    let (a, b) = load_pair(img1, img2)?;
    ensure!(truth.dims() == (a.width(), a.height()), "ground truth size does not match the images");
    let mut scales = params.scales.clone();
    scales.push(1);
    scales.sort_unstable();
    scales.dedup();
    let (ss1, ss2) = scale_spaces(&a, &b, &scales)?;
    let curves = sieve_analysis(&ss1, &ss2, &truth, &params)?;
    match output {
        Some(p) => {
            let f = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            write_sieve_csv(std::io::BufWriter::new(f), &curves)?;
        }
        None => write_sieve_csv(std::io::stdout().lock(), &curves)?,
    }
    Ok(ExitCode::SUCCESS)
}

/// Crop rectangle `WxH+X+Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub width: usize,
    pub height: usize,
    pub x: usize,
    pub y: usize,
}

impl FromStr for Crop {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+');
        let size = parts.next().unwrap_or("");
        let (w, h) = size.split_once(['x', 'X']).context("crop must look like WxH or WxH+X+Y")?;
        let num = |t: &str| t.trim().parse::<usize>().with_context(|| format!("bad number {t:?} in crop"));
        let (width, height) = (num(w)?, num(h)?);
        let offs: Vec<&str> = parts.collect();
        let (x, y) = match offs.as_slice() {
            [] => (0, 0),
            [x, y] => (num(x)?, num(y)?),
            _ => bail!("crop offset must be +X+Y"),
        };
        ensure!(width >= 1 && height >= 1, "crop must be non-empty");
        Ok(Crop { width, height, x, y })
    }
}

fn crop_flow(f: &FlowField, c: Crop) -> FlowField {
    let opts: Vec<Option<[f32; 2]>> = (0..c.width * c.height)
        .map(|i| f.get(c.x + i % c.width, c.y + i / c.width))
        .collect();
    FlowField::from_options(c.width, c.height, &opts)
}

pub fn cmd_bench_nnf(
    img1: &Path,
    img2: &Path,
    gt: Option<&Path>,
    crop: Crop,
    allow_large: bool,
    args: &MatchArgs,
) -> Result<ExitCode> {
    let file = FileConfig::load(args.config.as_deref())?;
    let params = args.resolve(&file.matching)?;
    let limit = if allow_large { usize::MAX } else { NNF_GUARD };
    ensure!(
        crop.width * crop.height <= limit,
        "crop {}x{} exceeds the exhaustive search guard of {limit} pixels; pass --allow-large",
        crop.width,
        crop.height
    );
    let (a, b) = load_pair(img1, img2)?;
    let a = a.crop(crop.x, crop.y, crop.width, crop.height)?;
    let b = b.crop(crop.x, crop.y, crop.width, crop.height)?;
    let truth = match gt {
        Some(p) => {
            let f = read_flow(p)?;
            ensure!(crop.x + crop.width <= f.width() && crop.y + crop.height <= f.height(), "crop outside ground truth");
            Some(GroundTruth::new(crop_flow(&f, crop), None)?)
        }
        None => None,
    };

    let (ss1, ss2) = scale_spaces(&a, &b, &params.required_scales())?;
    let term = CensusTerm::new(&ss1, &ss2)?;
    let n = params.stages.last().map_or(1, |s| s.sub_scale);

    let t = Instant::now();
    let nnf = brute_force_nnf(&term, params.r, n, limit)?;
    let t_nnf = t.elapsed();
    let t = Instant::now();
    let ff = run_variant_with(ss1.base(), ss2.base(), &term, &params, &mut Timings::default())?;
    let t_ff = t.elapsed();

    let mut dominated = 0;
    let mut compared = 0;
    for y in 0..crop.height {
        for x in 0..crop.width {
            if ff.is_valid(x, y) {
                compared += 1;
                if nnf.cost_at(x, y) <= ff.cost_at(x, y) {
                    dominated += 1;
                }
            }
        }
    }
    let mean_cost = |f: &FlowField| {
        let v: Vec<f32> = f.costs().iter().zip(f.valid_mask()).filter(|(_, &m)| m).map(|(c, _)| *c).collect();
        v.iter().map(|&c| c as f64).sum::<f64>() / v.len().max(1) as f64
    };
    println!("{:<12} {:>10} {:>10} {:>10} {:>10}", "field", "mean cost", "pct<=3", "EPE", "seconds");
    for (name, f, dt) in [("nnf", &nnf, t_nnf), (params.variant.name(), &ff, t_ff)] {
        let (rate, epe) = match &truth {
            Some(t) => {
                let m = compute_metrics(f, t)?;
                (format!("{:.2}", 100.0 * m.pct_le3), format!("{:.3}", m.epe))
            }
            None => ("-".into(), "-".into()),
        };
        println!("{name:<12} {:>10.3} {rate:>10} {epe:>10} {:>10.3}", mean_cost(f), dt.as_secs_f64());
    }
    println!("nnf cost <= matcher cost on {dominated} / {compared} pixels");
    Ok(ExitCode::SUCCESS)
}
