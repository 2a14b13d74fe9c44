//! `mvrss`: simulate datasets, train and evaluate the segmentation networks,
//! check gradients and audit parameter counts.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
//! error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use mvrss::checks;
use mvrss::dataset::{simulate_dataset, DatasetIndex, SimConfig, Split};
use mvrss::error::Error;
use mvrss::metrics::{csv_report, text_report};
use mvrss::model::{Model, ModelConfig, Variant};
use mvrss::radar::RadarParams;
use mvrss::train::{evaluate_checkpoint, train_on_dataset, TrainConfig};

#[derive(Parser)]
#[command(name = "mvrss", version, about = "Multi-view radar semantic segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// 128 × 128 × 32 bins.
    Desk,
    /// 256 × 256 × 64 bins.
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset split 70/15/15 into train/val/test.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        /// Frames per sequence.
        #[arg(long, default_value_t = 20)]
        sequence_len: usize,
    },
    /// Train a network on a simulated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        variant: Variant,
        /// key=value file overriding the training defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint directory to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides the epoch budget of the config.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Write predicted RD and RA masks as PNG files under this directory.
        #[arg(long)]
        export_masks: Option<PathBuf>,
        /// Write per-class scores as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        /// 100 seeds for the operation suite and 3 end-to-end seeds.
        #[arg(long)]
        full: bool,
    },
    /// Per-layer parameter counts.
    Params {
        #[arg(long)]
        variant: Variant,
        #[arg(long, default_value_t = 1.0)]
        width: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 1,
        Some(Error::Numerical(_)) => 3,
        _ => 2,
    }
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Simulate { out, frames, seed, profile, sequence_len } => {
            let params = match profile {
                Profile::Desk => RadarParams::desk(),
                Profile::Full => RadarParams::full(),
            };
            let cfg = SimConfig { sequence_len, ..SimConfig::with_total(params, frames, seed) };
            let start = Instant::now();
            let index = simulate_dataset(&out, &cfg)?;
            println!(
                "wrote {} sequences ({} / {} / {} frames) to {} in {:.1}s",
                index.sequences.len(),
                cfg.train_frames,
                cfg.val_frames,
                cfg.test_frames,
                out.display(),
                start.elapsed().as_secs_f64()
            );
            println!("rd label counts {:?}", index.rd_counts);
            println!("ra label counts {:?}", index.ra_counts);
        }
        Command::Train { data, variant, config, out, resume, epochs } => {
            let index = DatasetIndex::load(&data)?;
            let mut cfg = match &config {
                Some(path) => TrainConfig::load(path, Some(variant))?,
                None => TrainConfig::new(variant),
            };
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let outcome = train_on_dataset(&index, cfg, &out, resume.as_deref())?;
            let last = outcome.history.last();
            println!(
                "trained {} epochs{}; checkpoints in {}",
                last.map_or(0, |l| l.epoch),
                if outcome.stopped_early { " (target reached)" } else { "" },
                out.display()
            );
        }
        Command::Eval { ckpt, data, split, export_masks, csv } => {
            let index = DatasetIndex::load(&data)?;
            let report = evaluate_checkpoint(&ckpt, &index, split, export_masks.as_deref())?;
            let views = [("RD", &report.rd), ("RA", &report.ra)];
            println!("{} frames of {split}", report.samples);
            print!("{}", text_report(&views));
            println!("coherence {:.6}", report.coherence);
            println!("identity residual {:.2e}", report.identity_residual);
            if let Some(path) = csv {
                std::fs::write(&path, csv_report(&views)).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Gradcheck { full } => return gradcheck(full),
        Command::Params { variant, width } => {
            if !(width > 0.0 && width.is_finite()) {
                bail!(Error::Config(format!("width must be positive, got {width}")));
            }
            let model = Model::<f32>::build(ModelConfig::new(variant).with_width(width), 0)?;
            for (layer, n) in model.audit() {
                println!("{layer:<14} {n:>12}");
            }
            println!("{:<14} {:>12}", "total", model.param_count());
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Worst relative error accepted for single operations and losses.
const OP_TOLERANCE: f64 = 1e-4;
/// Worst relative error accepted for the whole network.
const NETWORK_TOLERANCE: f64 = 1e-3;

fn gradcheck(full: bool) -> anyhow::Result<ExitCode> {
    let (op_seeds, net_seeds) = if full { (100, 3) } else { (10, 1) };
    let start = Instant::now();
    let mut worst: Vec<(String, f64, usize)> = Vec::new();
    for seed in 0..op_seeds {
        for c in checks::op_checks(seed)?.into_iter().chain(checks::loss_checks(seed)?) {
            match worst.iter_mut().find(|(n, ..)| *n == c.name) {
                Some(w) => {
                    if c.report.max_rel_error > w.1 {
                        (w.1, w.2) = (c.report.max_rel_error, seed as usize);
                    }
                }
                None => worst.push((c.name, c.report.max_rel_error, seed as usize)),
            }
        }
    }
    let mut ok = true;
    for (name, err, seed) in &worst {
        let pass = *err < OP_TOLERANCE;
        ok &= pass;
        println!("{} {name:<32} {err:.2e} (seed {seed})", if pass { "ok  " } else { "FAIL" });
    }
    info!("operation suite: {op_seeds} seeds in {:.1}s", start.elapsed().as_secs_f64());
    for seed in 0..net_seeds {
        let c = checks::network_check(Variant::TmvaNet, seed, 1)?;
        let pass = c.report.max_rel_error < NETWORK_TOLERANCE;
        ok &= pass;
        println!(
            "{} {} {:.2e} over {} coordinates (seed {seed})",
            if pass { "ok  " } else { "FAIL" },
            c.name,
            c.report.max_rel_error,
            c.report.checked
        );
    }
    println!("{} in {:.1}s", if ok { "all gradients agree" } else { "gradient mismatch" }, start.elapsed().as_secs_f64());
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(3) })
}
