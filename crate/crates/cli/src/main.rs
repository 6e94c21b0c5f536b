use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bridge_gan::explore::{decode_grid, montage_dir, screen_dir, GridSpec, Verdict};
use bridge_gan::geometry::{generate_corpus, Canvas, CorpusRequest};
use bridge_gan::train::{fit, Corpus, TrainConfig};
use bridge_gan_service::AppState;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "bridgegan",
    version,
    about = "Bridge facade corpus, WGAN-GP training and latent-space exploration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic three-span bridge corpus.
    Dataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1200)]
        per_subtype: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        /// Replace images and manifest already in OUT.
        #[arg(long)]
        overwrite: bool,
    },
    /// Train critic and generator on a corpus.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// State directory of an interrupted run (RUNDIR/state).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decode an n x n grid of latent points from a generator checkpoint.
    SampleGrid {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = -10.0, allow_negative_numbers = true)]
        min: f64,
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        max: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Screen every image of a decoded grid.
    Screen {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Structure intensity threshold.
        #[arg(long)]
        threshold: Option<u8>,
    },
    /// Tile a decoded grid into one image.
    Montage {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 50)]
        cols: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve checkpoints over HTTP.
    Serve {
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value = "tags.jsonl")]
        tags: PathBuf,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_vec_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dataset {
            out,
            per_subtype,
            seed,
            width,
            height,
            overwrite,
        } => {
            let req = CorpusRequest {
                root: out.clone(),
                per_subtype,
                seed,
                canvas: Canvas::new(width, height)?,
                overwrite,
            };
            let outcome = generate_corpus(&req)?;
            println!(
                "wrote {} images to {}",
                outcome.manifest.total,
                out.display()
            );
            if outcome.duplicate_images > 0 {
                println!(
                    "warning: {} images repeat an earlier one",
                    outcome.duplicate_images
                );
            }
        }
        Command::Train {
            data,
            config,
            out,
            resume,
        } => {
            let config = TrainConfig::load(&config)?;
            let corpus = Corpus::load(&data, config.profile.image_size())?;
            let report = fit(&corpus, &config, &out, resume.as_deref())?;
            println!(
                "{} epochs, {} steps; loss log {}",
                report.epochs_completed,
                report.steps,
                report.loss_log.display()
            );
            if let Some(last) = report.checkpoints.last() {
                println!("latest generator {}", last.display());
            }
        }
        Command::SampleGrid {
            model,
            n,
            min,
            max,
            out,
        } => {
            let spec = GridSpec::new(n, min, max)?;
            let manifest = decode_grid(&model, &spec, &out)?;
            println!(
                "decoded {} samples into {}",
                manifest.samples.len(),
                out.display()
            );
        }
        Command::Screen {
            input,
            report,
            threshold,
        } => {
            let entries = screen_dir(&input, threshold)?;
            write_json(&report, &entries)?;
            let feasible = entries
                .iter()
                .filter(|e| e.report.verdict == Verdict::Feasible)
                .count();
            println!("{feasible} of {} samples pass the screen", entries.len());
        }
        Command::Montage { input, cols, out } => {
            let img = montage_dir(&input, cols)?;
            img.save_png(&out)?;
            println!(
                "{}x{} montage at {}",
                img.width(),
                img.height(),
                out.display()
            );
        }
        Command::Serve { models, addr, tags } => {
            let (state, diagnostics) = AppState::open(&models, &tags)?;
            for d in &diagnostics {
                eprintln!("skipped {}: {}", d.path.display(), d.reason);
            }
            if !addr.ip().is_loopback() {
                log::warn!("listening on non-loopback address {addr}");
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr)
                    .await
                    .with_context(|| format!("binding {addr}"))?;
                println!("serving {} models on http://{addr}", state.registry().len());
                bridge_gan_service::serve(listener, state).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
