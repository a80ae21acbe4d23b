mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowfields::evaluation::FlowFormat;

use config::{FilterArgs, MatchArgs};

/// Dense optical flow by multi-scale patch matching.
#[derive(Debug, Parser)]
#[command(name = "flowfields", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the raw flow from IMG1 to IMG2.
    Match {
        img1: PathBuf,
        img2: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// flo or kitti; guessed from the extension when omitted
        #[arg(long)]
        format: Option<FlowFormat>,
        /// Also write a color-coded PNG
        #[arg(long)]
        viz: Option<PathBuf>,
        #[command(flatten)]
        params: MatchArgs,
    },
    /// Match both ways, filter outliers and write sparse matches.
    Filter {
        img1: PathBuf,
        img2: PathBuf,
        /// Sparse matches, one "x1 y1 x2 y2" per line
        #[arg(short, long)]
        output: PathBuf,
        /// Validity mask PNG
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Raw forward flow
        #[arg(long)]
        flow: Option<PathBuf>,
        /// Dense flow interpolated from the sparse matches
        #[arg(long)]
        dense: Option<PathBuf>,
        /// Check against a single backward flow
        #[arg(long)]
        one_way: bool,
        #[command(flatten)]
        params: MatchArgs,
        #[command(flatten)]
        filter: FilterArgs,
    },
    /// Compare a prediction against ground truth.
    Eval {
        /// .flo, KITTI .png, or a sparse .txt match file (densified first)
        pred: PathBuf,
        gt: PathBuf,
        /// Mask of evaluated pixels (nonzero = evaluated)
        #[arg(long)]
        nocc: Option<PathBuf>,
        /// Treat zero mask pixels as evaluated instead
        #[arg(long, requires = "nocc")]
        invert_mask: bool,
        /// Write the report as JSON
        #[arg(long)]
        json: Option<PathBuf>,
        /// Exit with status 3 when EPE exceeds this value
        #[arg(long)]
        fail_if_epe_above: Option<f64>,
    },
    /// Estimate outlier resistance per scale and scale combination.
    Sieve {
        img1: PathBuf,
        img2: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        nocc: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        scales: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Comma-separated configurations such as "1,2,1&2,1+2,ff"
        #[arg(long)]
        configs: Option<String>,
        /// CSV output; stdout when omitted
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        r: usize,
        #[arg(long = "R", default_value_t = 1.0)]
        search_radius: f32,
    },
    /// Compare the matcher against exhaustive search on a small crop.
    BenchNnf {
        img1: PathBuf,
        img2: PathBuf,
        /// Ground truth flow for rate columns
        #[arg(long)]
        gt: Option<PathBuf>,
        /// WxH or WxH+X+Y
        #[arg(long, default_value = "64x64")]
        crop: commands::Crop,
        /// Lift the exhaustive search size guard
        #[arg(long)]
        allow_large: bool,
        #[command(flatten)]
        params: MatchArgs,
    },
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("FLOWFIELDS_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("FLOWFIELDS_THREADS must be a positive integer, got {v:?}"))?;
        anyhow::ensure!(n >= 1, "FLOWFIELDS_THREADS must be >= 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = init_threads().and_then(|_| match cli.cmd {
        Command::Match {
            img1,
            img2,
            output,
            format,
            viz,
            params,
        } => commands::cmd_match(&img1, &img2, &output, format, viz.as_deref(), &params),
        Command::Filter {
            img1,
            img2,
            output,
            mask,
            flow,
            dense,
            one_way,
            params,
            filter,
        } => commands::cmd_filter(commands::FilterJob {
            img1: &img1,
            img2: &img2,
            output: &output,
            mask: mask.as_deref(),
            flow: flow.as_deref(),
            dense: dense.as_deref(),
            one_way,
            params: &params,
            filter: &filter,
        }),
        Command::Eval {
            pred,
            gt,
            nocc,
            invert_mask,
            json,
            fail_if_epe_above,
        } => commands::cmd_eval(&pred, &gt, nocc.as_deref(), invert_mask, json.as_deref(), fail_if_epe_above),
        Command::Sieve {
            img1,
            img2,
            gt,
            nocc,
            scales,
            samples,
            configs,
            output,
            seed,
            r,
            search_radius,
        } => {
            let p = flowfields::evaluation::SieveParams {
                scales,
                samples,
                seed,
                r,
                search_radius,
                ..Default::default()
            };
            commands::cmd_sieve(&img1, &img2, &gt, nocc.as_deref(), p, configs.as_deref(), output.as_deref())
        }
        Command::BenchNnf {
            img1,
            img2,
            gt,
            crop,
            allow_large,
            params,
        } => commands::cmd_bench_nnf(&img1, &img2, gt.as_deref(), crop, allow_large, &params),
    });
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
