use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::geometry::CorpusManifest;
use crate::image::GrayImage;
use crate::nn::checkpoint::{self, write_dir_atomically, write_into};
use crate::nn::{
    decode, images_to_tensor, Checkpoint, CheckpointMeta, Network, NetworkConfig, SeedLineage,
    Shape, Tensor, LATENT_DIM,
};

use super::{
    critic_train_step, generator_train_step, sample_latent, Adam, LossRecord, TrainConfig,
    TrainError,
};

pub const LOSS_LOG: &str = "losses.jsonl";
pub const CONFIG_ECHO: &str = "train.json";
pub const REPORT_FILE: &str = "report.json";
pub const STATE_DIR: &str = "state";
pub const CHECKPOINT_DIR: &str = "checkpoints";
/// Decodes of [`PROBE_Z`] taken from the in-memory generator at every snapshot.
pub const PROBE_DIR: &str = "probes";
pub const PROBE_Z: [f32; LATENT_DIM] = [0.0, 0.0];
const PROGRESS_FILE: &str = "progress.json";

const CRITIC_SEED_TAG: u64 = 1;
const GENERATOR_SEED_TAG: u64 = 2;
const EPOCH_SEED_TAG: u64 = 0x1000;

/// Directory name of the generator snapshot taken after `epoch`.
pub fn checkpoint_name(epoch: u32) -> String {
    format!("generator-epoch-{epoch:04}")
}

/// Training images, normalized to [-1, 1] at the network input size.
#[derive(Debug, Clone)]
pub struct Corpus {
    images: Vec<Vec<f32>>,
    shape: Shape,
}

impl Corpus {
    /// Box-filters every image down to `(height, width)` when it is an
    /// integer multiple of it.
    pub fn from_images(images: &[GrayImage], size: (usize, usize)) -> Result<Self, TrainError> {
        let (h, w) = size;
        let shape = Shape::image(h, w, 1);
        let mut out = Vec::with_capacity(images.len());
        for img in images {
            let fitted = if img.width() == w && img.height() == h {
                img.clone()
            } else if img.width() % w == 0 && img.height() % h == 0 {
                img.downsample(img.width() / w, img.height() / h)
            } else {
                return Err(TrainError::Corpus(format!(
                    "image of {}x{} cannot be reduced to {w}x{h}",
                    img.width(),
                    img.height()
                )));
            };
            out.push(images_to_tensor(&[fitted], shape)?.data);
        }
        if out.is_empty() {
            return Err(TrainError::Corpus("corpus is empty".into()));
        }
        Ok(Corpus { images: out, shape })
    }

    /// Reads every image listed in a corpus manifest.
    pub fn load(dir: &Path, size: (usize, usize)) -> Result<Self, TrainError> {
        let manifest = CorpusManifest::load(dir).map_err(|e| TrainError::Corpus(e.to_string()))?;
        let images = manifest
            .image_paths(dir)
            .iter()
            .map(|p| GrayImage::load_png(p).map_err(|e| TrainError::Corpus(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Corpus::from_images(&images, size)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.shape.len());
        for &i in indices {
            data.extend_from_slice(&self.images[i]);
        }
        Tensor::from_vec(indices.len(), self.shape, data)
    }
}

/// Per-epoch means; the accumulators restart every epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u32,
    pub steps: u64,
    pub critic_wasserstein: f64,
    pub gradient_penalty: f64,
    pub critic_total: f64,
    pub generator_loss: f64,
    pub mean_grad_norm: f64,
}

#[derive(Debug, Default)]
struct EpochMeter {
    steps: u64,
    sums: [f64; 5],
}

impl EpochMeter {
    fn add(&mut self, r: &LossRecord) {
        self.steps += 1;
        let vals = [
            r.critic_wasserstein,
            r.gradient_penalty,
            r.critic_total,
            r.generator_loss,
            r.mean_grad_norm,
        ];
        for (s, v) in self.sums.iter_mut().zip(vals) {
            *s += v;
        }
    }

    fn summary(&self, epoch: u32) -> EpochSummary {
        let n = self.steps.max(1) as f64;
        EpochSummary {
            epoch,
            steps: self.steps,
            critic_wasserstein: self.sums[0] / n,
            gradient_penalty: self.sums[1] / n,
            critic_total: self.sums[2] / n,
            generator_loss: self.sums[3] / n,
            mean_grad_norm: self.sums[4] / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub epochs_completed: u32,
    pub steps: u64,
    pub loss_log: PathBuf,
    pub state_dir: PathBuf,
    /// Every generator snapshot in the run directory, oldest first.
    pub checkpoints: Vec<PathBuf>,
    /// Epochs trained by this invocation.
    pub epochs: Vec<EpochSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Progress {
    epochs_completed: u32,
    steps: u64,
    critic_optimizer_iterations: u64,
    generator_optimizer_iterations: u64,
    config: TrainConfig,
}

struct Session {
    critic: Network,
    generator: Network,
    critic_opt: Adam,
    generator_opt: Adam,
    epochs_completed: u32,
    steps: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |e| TrainError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn moments_bytes(adam: &Adam) -> Vec<u8> {
    adam.m
        .iter()
        .chain(&adam.v)
        .flatten()
        .flat_map(|v| v.to_le_bytes())
        .collect()
}

fn read_moments(path: &Path, adam: &mut Adam) -> Result<(), TrainError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let expected: usize = adam.m.iter().chain(&adam.v).map(|t| t.len() * 4).sum();
    if bytes.len() != expected {
        return Err(TrainError::Resume(format!(
            "{}: holds {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for t in adam.m.iter_mut().chain(adam.v.iter_mut()) {
        for x in t.iter_mut() {
            *x = values.next().expect("length checked");
        }
    }
    Ok(())
}

fn lineage(config: &TrainConfig, tag: u64, resumed_from: Option<&Path>) -> SeedLineage {
    SeedLineage {
        global_seed: config.seed,
        init_seed: derive_seed(config.seed, tag),
        resumed_from: resumed_from.map(|p| p.display().to_string()),
    }
}

fn save_state(dir: &Path, s: &Session, config: &TrainConfig) -> Result<(), TrainError> {
    write_dir_atomically(dir, |tmp| -> Result<(), TrainError> {
        for (name, net, tag) in [
            ("critic", &s.critic, CRITIC_SEED_TAG),
            ("generator", &s.generator, GENERATOR_SEED_TAG),
        ] {
            let sub = tmp.join(name);
            fs::create_dir(&sub).map_err(io_err(&sub))?;
            write_into(
                &sub,
                net,
                CheckpointMeta {
                    step: s.steps,
                    epoch: Some(s.epochs_completed),
                    seed: lineage(config, tag, None),
                    train_config: None,
                },
            )?;
        }
        for (name, adam) in [
            ("critic-adam.bin", &s.critic_opt),
            ("generator-adam.bin", &s.generator_opt),
        ] {
            let p = tmp.join(name);
            fs::write(&p, moments_bytes(adam)).map_err(io_err(&p))?;
        }
        let progress = Progress {
            epochs_completed: s.epochs_completed,
            steps: s.steps,
            critic_optimizer_iterations: s.critic_opt.iterations,
            generator_optimizer_iterations: s.generator_opt.iterations,
            config: config.clone(),
        };
        let p = tmp.join(PROGRESS_FILE);
        fs::write(
            &p,
            serde_json::to_vec_pretty(&progress).expect("progress serializes"),
        )
        .map_err(io_err(&p))?;
        Ok(())
    })
}

fn fresh_session(config: &TrainConfig) -> Result<Session, TrainError> {
    let critic = Network::build(
        NetworkConfig::critic(config.profile, config.block),
        derive_seed(config.seed, CRITIC_SEED_TAG),
    )?;
    let generator = Network::build(
        NetworkConfig::generator(config.profile, config.block),
        derive_seed(config.seed, GENERATOR_SEED_TAG),
    )?;
    Ok(Session {
        critic_opt: Adam::new(config.optimizer, critic.params()),
        generator_opt: Adam::new(config.optimizer, generator.params()),
        critic,
        generator,
        epochs_completed: 0,
        steps: 0,
    })
}

/// Settings that must not change between an interrupted run and its resumption.
fn same_run(a: &TrainConfig, b: &TrainConfig) -> bool {
    TrainConfig {
        epochs: 0,
        ..a.clone()
    } == TrainConfig {
        epochs: 0,
        ..b.clone()
    }
}

fn load_session(dir: &Path, config: &TrainConfig) -> Result<Session, TrainError> {
    let p = dir.join(PROGRESS_FILE);
    let text = fs::read(&p).map_err(io_err(&p))?;
    let progress: Progress = serde_json::from_slice(&text)
        .map_err(|e| TrainError::Resume(format!("{}: {e}", p.display())))?;
    if !same_run(&progress.config, config) {
        return Err(TrainError::Resume(
            "training settings differ from the interrupted run (only `epochs` may change)".into(),
        ));
    }
    let critic = Checkpoint::load(&dir.join("critic"))?.network;
    let generator = Checkpoint::load(&dir.join("generator"))?.network;
    let mut critic_opt = Adam::new(config.optimizer, critic.params());
    let mut generator_opt = Adam::new(config.optimizer, generator.params());
    read_moments(&dir.join("critic-adam.bin"), &mut critic_opt)?;
    read_moments(&dir.join("generator-adam.bin"), &mut generator_opt)?;
    critic_opt.iterations = progress.critic_optimizer_iterations;
    generator_opt.iterations = progress.generator_optimizer_iterations;
    Ok(Session {
        critic,
        generator,
        critic_opt,
        generator_opt,
        epochs_completed: progress.epochs_completed,
        steps: progress.steps,
    })
}

/// Keeps the first `lines` records of the loss log, dropping records written
/// after the last saved state.
fn truncate_log(path: &Path, lines: u64) -> Result<(), TrainError> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(io_err(path))?;
    let kept: Vec<String> = BufReader::new(file)
        .lines()
        .take(lines as usize)
        .collect::<Result<_, _>>()
        .map_err(io_err(path))?;
    if (kept.len() as u64) < lines {
        return Err(TrainError::Resume(format!(
            "{} holds {} records, state expects {lines}",
            path.display(),
            kept.len()
        )));
    }
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

fn list_checkpoints(dir: &Path) -> Result<Vec<PathBuf>, TrainError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("generator-epoch-"))
                && p.join(checkpoint::MANIFEST_FILE).exists()
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Alternating training: for every real batch, `critic_steps` critic updates
/// (fresh latent samples each time) and one generator update. Each epoch
/// shuffles the corpus with its own seed derived from the run seed, so a
/// resumed run reproduces an uninterrupted one.
///
/// The run directory receives the config echo, a JSON-lines loss log, a
/// generator snapshot every `checkpoint_every` epochs and a resumable state
/// directory refreshed after every epoch. All directories are written
/// atomically.
pub fn fit(
    corpus: &Corpus,
    config: &TrainConfig,
    out: &Path,
    resume: Option<&Path>,
) -> Result<RunReport, TrainError> {
    config.validate()?;
    let (h, w) = config.profile.image_size();
    if corpus.shape() != Shape::image(h, w, 1) {
        return Err(TrainError::Corpus(format!(
            "corpus images are {}, the {:?} profile needs {}",
            corpus.shape(),
            config.profile,
            Shape::image(h, w, 1)
        )));
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let log_path = out.join(LOSS_LOG);
    let state_dir = out.join(STATE_DIR);
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    let probe_dir = out.join(PROBE_DIR);

    let mut session = match resume {
        Some(dir) => {
            let s = load_session(dir, config)?;
            truncate_log(&log_path, s.steps)?;
            s
        }
        None => {
            if log_path.exists() || state_dir.exists() {
                return Err(TrainError::Config(format!(
                    "{} already holds a run; pass its state directory to resume",
                    out.display()
                )));
            }
            fresh_session(config)?
        }
    };
    let echo = out.join(CONFIG_ECHO);
    fs::write(
        &echo,
        serde_json::to_vec_pretty(config).expect("config serializes"),
    )
    .map_err(io_err(&echo))?;
    let train_echo = serde_json::to_value(config).expect("config serializes");

    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    let batch_size = config.batch_size();
    let mut summaries = Vec::new();

    for epoch in session.epochs_completed + 1..=config.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, EPOCH_SEED_TAG + epoch as u64));
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut rng);
        let mut meter = EpochMeter::default();
        for chunk in order.chunks(batch_size) {
            let real = corpus.batch(chunk);
            let mut last = None;
            for _ in 0..config.critic_steps {
                last = Some(critic_train_step(
                    &mut session.critic,
                    &mut session.critic_opt,
                    &session.generator,
                    &real,
                    &config.gp,
                    &mut rng,
                )?);
            }
            let c = last.expect("at least one critic step");
            let z = sample_latent(real.batch, session.generator.input_shape(), &mut rng);
            let g = generator_train_step(
                &mut session.generator,
                &mut session.generator_opt,
                &session.critic,
                &z,
                &mut rng,
            )?;
            session.steps += 1;
            let record = LossRecord {
                step: session.steps,
                epoch,
                critic_wasserstein: c.wasserstein,
                gradient_penalty: c.penalty,
                critic_total: c.total,
                generator_loss: g.loss,
                mean_grad_norm: c.mean_grad_norm,
            };
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            log.write_all(line.as_bytes()).map_err(io_err(&log_path))?;
            meter.add(&record);
        }
        log.flush().map_err(io_err(&log_path))?;
        session.epochs_completed = epoch;
        let summary = meter.summary(epoch);
        log::info!(
            "epoch {epoch}: {} steps, critic {:.4}, penalty {:.4}, generator {:.4}",
            summary.steps,
            summary.critic_total,
            summary.gradient_penalty,
            summary.generator_loss
        );
        summaries.push(summary);

        if epoch % config.checkpoint_every == 0 {
            checkpoint::save(
                &ckpt_dir.join(checkpoint_name(epoch)),
                &session.generator,
                CheckpointMeta {
                    step: session.steps,
                    epoch: Some(epoch),
                    seed: lineage(config, GENERATOR_SEED_TAG, resume),
                    train_config: Some(train_echo.clone()),
                },
            )?;
            fs::create_dir_all(&probe_dir).map_err(io_err(&probe_dir))?;
            decode(&session.generator, PROBE_Z)?
                .save_png(&probe_dir.join(format!("{}.png", checkpoint_name(epoch))))?;
        }
        save_state(&state_dir, &session, config)?;
    }

    let report = RunReport {
        epochs_completed: session.epochs_completed,
        steps: session.steps,
        loss_log: log_path,
        state_dir,
        checkpoints: list_checkpoints(&ckpt_dir)?,
        epochs: summaries,
    };
    let rpath = out.join(REPORT_FILE);
    fs::write(
        &rpath,
        serde_json::to_vec_pretty(&report).expect("report serializes"),
    )
    .map_err(io_err(&rpath))?;
    Ok(report)
}

/// Parses a JSON-lines loss log.
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>, TrainError> {
    let file = File::open(path).map_err(io_err(path))?;
    BufReader::new(file)
        .lines()
        .map(|line| {
            let line = line.map_err(io_err(path))?;
            serde_json::from_str(&line).map_err(|e| TrainError::Io {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        })
        .collect()
}
