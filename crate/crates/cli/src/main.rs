use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowfactory::evalmetrics::OutlierRule;
use flowfactory::pipeline::{self, PipelineConfig, ThresholdUpdate};

#[derive(Parser)]
#[command(name = "flowfactory", version, about = "Optical flow datasets from procedural radiance fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render pose pairs and write a filtered dataset.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-threshold stored raw masks without re-rendering.
    Refilter {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        th_conf: Option<f64>,
        #[arg(long)]
        th_ssim: Option<f64>,
        #[arg(long)]
        th_dc: Option<f64>,
        #[arg(long)]
        th_occ: Option<f64>,
    },
    /// Score predicted flow against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = OutlierRule::And)]
        fl_all_rule: OutlierRule,
    },
    /// Per-ray diagnostics for one pixel of a sample.
    Inspect {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        sample: String,
        /// Pixel as `u,v` (column, row).
        #[arg(long, value_parser = parse_pixel, allow_hyphen_values = true)]
        pixel: (i64, i64),
    },
}

fn parse_pixel(s: &str) -> Result<(i64, i64), String> {
    let (u, v) = s.split_once(',').ok_or_else(|| format!("expected u,v, got {s:?}"))?;
    let parse = |t: &str| t.trim().parse::<i64>().map_err(|e| format!("{t:?}: {e}"));
    Ok((parse(u)?, parse(v)?))
}

fn run(cli: Cli) -> flowfactory::Result<bool> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let report = pipeline::generate(&cfg, &out)?;
            println!("{report}");
            for (k, msg) in &report.failures {
                println!("failed pair {k}: {msg}");
            }
            Ok(report.failures.is_empty())
        }
        Command::Refilter {
            root,
            th_conf,
            th_ssim,
            th_dc,
            th_occ,
        } => {
            let update = ThresholdUpdate {
                th_conf,
                th_ssim,
                th_dc,
                th_occ,
            };
            println!("{}", pipeline::refilter(&root, &update)?);
            Ok(true)
        }
        Command::Eval { pred, gt, fl_all_rule } => {
            println!("{}", pipeline::eval(&pred, &gt, fl_all_rule)?);
            Ok(true)
        }
        Command::Inspect { root, sample, pixel } => {
            println!("{}", pipeline::inspect(&root, &sample, pixel.0, pixel.1)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
